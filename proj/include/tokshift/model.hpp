#pragma once

#include <functional>

#include "tokshift/shift.hpp"
#include "tokshift/tensor.hpp"

namespace tokshift {

// Architectural hyperparameters.
//   T frames, H x W pixels, P patch size, D embed dim, L encoders, M heads.
//   N = H*W / P^2 patches per frame, d = P^2 * 3 pixels per patch.
struct ModelConfig {
    int64_t frames = 8;
    int64_t height = 224;
    int64_t width = 224;
    int64_t patch = 16;
    int64_t embed_dim = 768;
    int64_t depth = 12;
    int64_t heads = 12;
    int64_t mlp_ratio = 4;
    int64_t classes = 400;
    ShiftSpec shift;
    // Literal reading of the encoder equations: the in-place layer-norm
    // overwrite puts the normalized tensor on the skip path. Off by default;
    // the standard pre-LN wiring carries the pre-normalization value.
    bool literal_eq23 = false;

    int64_t patches() const { return (height / patch) * (width / patch); }  // N
    int64_t words() const { return patches() + 1; }                         // N+1
    int64_t patch_dim() const { return patch * patch * 3; }                 // d
    int64_t head_dim() const { return embed_dim / heads; }

    void validate() const;

    // Base-16: 12 encoders, D=768, 12 heads. Large-16: 24 encoders, D=1024,
    // 16 heads. Both use 16x16 patches.
    static ModelConfig base16();
    static ModelConfig large16();
};

struct EncoderParams {
    Tensor ln1_gain, ln1_bias;
    Tensor wq, bq, wk, bk, wv, bv;  // [D,D] projections + [D] biases
    Tensor wo, bo;
    Tensor ln2_gain, ln2_bias;
    Tensor w1, b1;  // [D, mlp_ratio*D]
    Tensor w2, b2;  // [mlp_ratio*D, D]
};

// Named collection of learnable tensors. Checkpoint names follow the
// enc{l}.{component} convention (see README).
struct Parameters {
    Tensor patch_embed;  // E      [d, D]
    Tensor pos_embed;    // E_pos  [N+1, D], added to all frames identically
    Tensor class_token;  // c0     [D], broadcast over frames
    std::vector<EncoderParams> encoders;
    Tensor final_ln_gain, final_ln_bias;
    Tensor head_weight;  // [D, classes]
    Tensor head_bias;    // [classes]

    static Parameters zeros(const ModelConfig& cfg);
    static Parameters init(const ModelConfig& cfg, uint64_t seed);

    void for_each(const std::function<void(const std::string&, Tensor&)>& fn);
    void for_each(const std::function<void(const std::string&, const Tensor&)>& fn) const;

    int64_t scalar_count() const;
    void ensure_grads();
    void zero_grads();
};

// Multiply-accumulate counters filled by an instrumented forward pass,
// bucketed by call site. linear_total() is the set of sites the analytic
// cost model counts in its headline figure.
struct ForwardStats {
    long long patch_embed = 0;
    long long qkv = 0;
    long long attn_proj = 0;
    long long ffn = 0;
    long long attn_scores = 0;
    long long attn_context = 0;
    long long head = 0;

    long long linear_total() const { return patch_embed + qkv + attn_proj + ffn; }
};

// Intermediates retained for the backward pass. q/k/v are stored head-major
// so the per-head attention matrices are contiguous.
struct LayerCache {
    Tensor attn_ln_in;      // [T, N+1, D] input to LN1
    Tensor attn_branch_in;  // [T, N+1, D] input to the QKV projections
    Tensor q, k, v;         // [T, M, N+1, D/M]
    Tensor heads;           // [T, N+1, D] concatenated head outputs
    Tensor ffn_ln_in;       // [T, N+1, D]
    Tensor ffn_branch_in;   // [T, N+1, D]
    Tensor ffn_pre;         // [T, N+1, mlp_ratio*D] before GELU
    Tensor ffn_cdf;         // Phi(ffn_pre), reused by the backward
    Tensor ffn_act;         // [T, N+1, mlp_ratio*D] after GELU
};

struct Activations {
    ModelConfig config;
    std::vector<Tensor> layer_inputs;  // z_0 .. z_L
    std::vector<Tensor> layer_mid;     // attention-block output per layer
    std::vector<Tensor> attention;     // [T, M, N+1, N+1] per layer (empty if not retained)
    Tensor patch_matrix;               // [T*N, d] flattened patches
    Tensor final_normed;               // [T, N+1, D]
    Tensor frame_logits;               // [T, classes]
    Tensor logits;                     // [classes]
    bool has_cache = false;
    std::vector<LayerCache> cache;
};

enum class Retain {
    none,       // logits only
    attention,  // attention maps + final activations, no backward caches
    full,       // everything needed by model_backward
};

struct ForwardOptions {
    Retain retain = Retain::full;
    // With Retain::attention: keep only this layer's maps (-1 = all). Ignored
    // under Retain::full, where the backward needs every layer.
    int64_t attention_layer = -1;
    ForwardStats* stats = nullptr;
};

// Eq-1 style embedding: cut frames into P x P patches in row-major spatial
// order, flatten each (y, x, channel), project by E, add E_pos, prepend the
// class token at word 0 of every frame.
Tensor embed_video(const Tensor& video, const Parameters& p, const ModelConfig& cfg,
                   ForwardStats* stats = nullptr, Tensor* patch_matrix_out = nullptr);

struct MsaFrameCache {
    Tensor q, k, v;  // [N+1, D]
    Tensor probs;    // [M, N+1, N+1]
    Tensor heads;    // [N+1, D]
};

// Multi-head self-attention within one frame; strictly no cross-frame terms.
Tensor msa_frame(const Tensor& zt, const EncoderParams& ep, const ModelConfig& cfg,
                 MsaFrameCache* cache = nullptr, ForwardStats* stats = nullptr);

struct FfnCache {
    Tensor pre;  // before GELU
    Tensor cdf;  // Phi(pre)
    Tensor act;  // after GELU
};

// Position-wise two-layer projection with GELU, applied per word per frame.
Tensor ffn(const Tensor& z, const EncoderParams& ep, const ModelConfig& cfg,
           FfnCache* cache = nullptr, ForwardStats* stats = nullptr);

// The two residual sub-blocks of an encoder, exposed for composition tests
// and probes; encoder_forward is attention_block followed by ffn_block.
Tensor attention_block(const Tensor& z, const EncoderParams& ep, const ModelConfig& cfg,
                       Tensor* attention_out = nullptr);
Tensor ffn_block(const Tensor& z, const EncoderParams& ep, const ModelConfig& cfg);

struct EncoderResult {
    Tensor out;        // [T, N+1, D]
    Tensor attention;  // [T, M, N+1, N+1]
    Tensor mid;        // attention-block output (input of the FFN block)
};

// One encoder: attention residual block then FFN residual block, with the
// shift applied at the configured placement site of each block.
EncoderResult encoder_forward(const Tensor& z, const EncoderParams& ep, const ModelConfig& cfg,
                              LayerCache* cache = nullptr, ForwardStats* stats = nullptr);

Activations model_forward(const Tensor& video, const Parameters& p, const ModelConfig& cfg,
                          const ForwardOptions& opt = {});

// Accumulates gradients for every tensor in params (into their grad slots)
// given d(loss)/d(logits). Requires an Activations from a Retain::full
// forward pass.
void model_backward(const Tensor& dlogits, const Activations& acts, Parameters& params);

}  // namespace tokshift
