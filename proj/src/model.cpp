#include "tokshift/model.hpp"

#include <cmath>
#include <cstring>

namespace tokshift {

namespace {
constexpr double kLayerNormEps = 1e-6;
constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;
}  // namespace

void ModelConfig::validate() const {
    TS_CONFIG_CHECK(frames >= 1, "frames must be >= 1, got ", frames);
    TS_CONFIG_CHECK(height >= 1 && width >= 1 && patch >= 1, "bad spatial dims ", height, "x",
                    width, " patch ", patch);
    TS_CONFIG_CHECK(height % patch == 0, "height ", height, " not divisible by patch ", patch);
    TS_CONFIG_CHECK(width % patch == 0, "width ", width, " not divisible by patch ", patch);
    TS_CONFIG_CHECK(embed_dim >= 1 && depth >= 1 && heads >= 1, "bad embed_dim/depth/heads");
    TS_CONFIG_CHECK(embed_dim % heads == 0, "embed_dim ", embed_dim, " not divisible by heads ",
                    heads);
    TS_CONFIG_CHECK(mlp_ratio >= 1, "mlp_ratio must be >= 1, got ", mlp_ratio);
    TS_CONFIG_CHECK(classes >= 1, "classes must be >= 1, got ", classes);
    shift.validate();
}

ModelConfig ModelConfig::base16() {
    ModelConfig cfg;
    cfg.patch = 16;
    cfg.embed_dim = 768;
    cfg.depth = 12;
    cfg.heads = 12;
    return cfg;
}

ModelConfig ModelConfig::large16() {
    ModelConfig cfg;
    cfg.patch = 16;
    cfg.embed_dim = 1024;
    cfg.depth = 24;
    cfg.heads = 16;
    return cfg;
}

// ---------------------------------------------------------------------------
// Parameters

Parameters Parameters::zeros(const ModelConfig& cfg) {
    cfg.validate();
    const int64_t d = cfg.patch_dim();
    const int64_t dim = cfg.embed_dim;
    const int64_t hidden = cfg.mlp_ratio * dim;
    Parameters p;
    p.patch_embed = Tensor({d, dim});
    p.pos_embed = Tensor({cfg.words(), dim});
    p.class_token = Tensor({dim});
    p.encoders.resize(static_cast<size_t>(cfg.depth));
    for (auto& e : p.encoders) {
        e.ln1_gain = Tensor({dim});
        e.ln1_bias = Tensor({dim});
        e.wq = Tensor({dim, dim});
        e.bq = Tensor({dim});
        e.wk = Tensor({dim, dim});
        e.bk = Tensor({dim});
        e.wv = Tensor({dim, dim});
        e.bv = Tensor({dim});
        e.wo = Tensor({dim, dim});
        e.bo = Tensor({dim});
        e.ln2_gain = Tensor({dim});
        e.ln2_bias = Tensor({dim});
        e.w1 = Tensor({dim, hidden});
        e.b1 = Tensor({hidden});
        e.w2 = Tensor({hidden, dim});
        e.b2 = Tensor({dim});
    }
    p.final_ln_gain = Tensor({dim});
    p.final_ln_bias = Tensor({dim});
    p.head_weight = Tensor({dim, cfg.classes});
    p.head_bias = Tensor({cfg.classes});
    return p;
}

namespace {
void fill_normal(Tensor& t, Rng& rng, double stddev) {
    for (double& v : t.data) v = rng.normal(0.0, stddev);
}

// uniform in +-sqrt(6 / (fan_in + fan_out))
void fill_glorot(Tensor& t, Rng& rng) {
    const double bound = std::sqrt(6.0 / static_cast<double>(t.shape[0] + t.shape[1]));
    for (double& v : t.data) v = rng.uniform(-bound, bound);
}

void fill_ones(Tensor& t) { std::fill(t.data.begin(), t.data.end(), 1.0); }
}  // namespace

Parameters Parameters::init(const ModelConfig& cfg, uint64_t seed) {
    Parameters p = zeros(cfg);
    Rng rng(mix_seed(seed, 0x70617261u));
    fill_normal(p.patch_embed, rng, 0.02);
    fill_normal(p.pos_embed, rng, 0.02);
    fill_normal(p.class_token, rng, 0.02);
    for (auto& e : p.encoders) {
        fill_ones(e.ln1_gain);
        fill_glorot(e.wq, rng);
        fill_glorot(e.wk, rng);
        fill_glorot(e.wv, rng);
        fill_glorot(e.wo, rng);
        fill_ones(e.ln2_gain);
        fill_glorot(e.w1, rng);
        fill_glorot(e.w2, rng);
    }
    fill_ones(p.final_ln_gain);
    fill_glorot(p.head_weight, rng);
    return p;
}

void Parameters::for_each(const std::function<void(const std::string&, Tensor&)>& fn) {
    fn("embed.patch", patch_embed);
    fn("embed.pos", pos_embed);
    fn("embed.class", class_token);
    for (size_t l = 0; l < encoders.size(); ++l) {
        const std::string pre = "enc" + std::to_string(l) + ".";
        EncoderParams& e = encoders[l];
        fn(pre + "ln1.gain", e.ln1_gain);
        fn(pre + "ln1.bias", e.ln1_bias);
        fn(pre + "attn.wq", e.wq);
        fn(pre + "attn.bq", e.bq);
        fn(pre + "attn.wk", e.wk);
        fn(pre + "attn.bk", e.bk);
        fn(pre + "attn.wv", e.wv);
        fn(pre + "attn.bv", e.bv);
        fn(pre + "attn.wo", e.wo);
        fn(pre + "attn.bo", e.bo);
        fn(pre + "ln2.gain", e.ln2_gain);
        fn(pre + "ln2.bias", e.ln2_bias);
        fn(pre + "ffn.w1", e.w1);
        fn(pre + "ffn.b1", e.b1);
        fn(pre + "ffn.w2", e.w2);
        fn(pre + "ffn.b2", e.b2);
    }
    fn("final_ln.gain", final_ln_gain);
    fn("final_ln.bias", final_ln_bias);
    fn("head.weight", head_weight);
    fn("head.bias", head_bias);
}

void Parameters::for_each(const std::function<void(const std::string&, const Tensor&)>& fn) const {
    const_cast<Parameters*>(this)->for_each(
        [&](const std::string& name, Tensor& t) { fn(name, t); });
}

int64_t Parameters::scalar_count() const {
    int64_t n = 0;
    for_each([&](const std::string&, const Tensor& t) { n += t.numel(); });
    return n;
}

void Parameters::ensure_grads() {
    for_each([](const std::string&, Tensor& t) { t.ensure_grad(); });
}

void Parameters::zero_grads() {
    for_each([](const std::string&, Tensor& t) { t.zero_grad(); });
}

// ---------------------------------------------------------------------------
// forward building blocks

namespace {

// y = x W + b with x treated as [rows, Din]
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b, long long* macs) {
    const int64_t din = w.shape[0];
    const int64_t dout = w.shape[1];
    TS_CHECK(x.shape.back() == din, "linear input ", shape_str(x.shape),
             " does not match weight ", shape_str(w.shape));
    const int64_t rows = x.numel() / din;
    std::vector<int64_t> out_shape = x.shape;
    out_shape.back() = dout;
    Tensor out = Tensor::uninit(out_shape);
    kernels::gemm(x.data.data(), w.data.data(), out.data.data(), rows, din, dout);
    for (int64_t r = 0; r < rows; ++r) {
        double* row = out.data.data() + r * dout;
        for (int64_t j = 0; j < dout; ++j) row[j] += b.data[static_cast<size_t>(j)];
    }
    if (macs) *macs += static_cast<long long>(rows) * din * dout;
    return out;
}

// dx = upstream W^T; accumulates dW += x^T upstream and db += column sums
// into the grad slots of w and b.
Tensor linear_backward(const Tensor& x, Tensor& w, Tensor& b, const Tensor& upstream) {
    const int64_t din = w.shape[0];
    const int64_t dout = w.shape[1];
    const int64_t rows = x.numel() / din;
    Tensor dx = Tensor::uninit(x.shape);
    kernels::gemm_nt(upstream.data.data(), w.data.data(), dx.data.data(), rows, dout, din);
    kernels::gemm_tn(x.data.data(), upstream.data.data(), w.grad.data(), din, rows, dout,
                     /*accumulate=*/true);
    for (int64_t r = 0; r < rows; ++r) {
        const double* row = upstream.data.data() + r * dout;
        for (int64_t j = 0; j < dout; ++j) b.grad[static_cast<size_t>(j)] += row[j];
    }
    return dx;
}

// [T, W, D] -> [T, M, W, Dh] with contiguous per-head matrices
Tensor to_head_major(const Tensor& x, int64_t m, int64_t hd) {
    const int64_t t_count = x.shape[0];
    const int64_t words = x.shape[1];
    Tensor out = Tensor::uninit({t_count, m, words, hd});
    for (int64_t t = 0; t < t_count; ++t)
        for (int64_t w = 0; w < words; ++w) {
            const double* src = x.data.data() + (t * words + w) * m * hd;
            for (int64_t h = 0; h < m; ++h)
                std::memcpy(out.data.data() + (((t * m + h) * words) + w) * hd, src + h * hd,
                            sizeof(double) * static_cast<size_t>(hd));
        }
    return out;
}

// [T, M, W, Dh] -> [T, W, D]
Tensor from_head_major(const Tensor& x) {
    const int64_t t_count = x.shape[0];
    const int64_t m = x.shape[1];
    const int64_t words = x.shape[2];
    const int64_t hd = x.shape[3];
    Tensor out = Tensor::uninit({t_count, words, m * hd});
    for (int64_t t = 0; t < t_count; ++t)
        for (int64_t h = 0; h < m; ++h)
            for (int64_t w = 0; w < words; ++w)
                std::memcpy(out.data.data() + ((t * words + w) * m + h) * hd,
                            x.data.data() + (((t * m + h) * words) + w) * hd,
                            sizeof(double) * static_cast<size_t>(hd));
    return out;
}

// in-place row softmax with max subtraction
void softmax_rows_raw(double* x, int64_t rows, int64_t n) {
    for (int64_t r = 0; r < rows; ++r) {
        double* row = x + r * n;
        double mx = row[0];
        for (int64_t j = 1; j < n; ++j) mx = std::max(mx, row[j]);
        double sum = 0.0;
        for (int64_t j = 0; j < n; ++j) {
            row[j] = std::exp(row[j] - mx);
            sum += row[j];
        }
        for (int64_t j = 0; j < n; ++j) row[j] /= sum;
    }
}

// dx = p (g - <g,p>) per row
void softmax_rows_backward_raw(const double* p, const double* g, double* dx, int64_t rows,
                               int64_t n) {
    for (int64_t r = 0; r < rows; ++r) {
        const double* pr = p + r * n;
        const double* gr = g + r * n;
        double* dr = dx + r * n;
        double dot = 0.0;
        for (int64_t j = 0; j < n; ++j) dot += pr[j] * gr[j];
        for (int64_t j = 0; j < n; ++j) dr[j] = pr[j] * (gr[j] - dot);
    }
}

// act = pre * Phi(pre); Phi values retained for the backward
void gelu_forward_cached(const Tensor& pre, Tensor& act, Tensor& cdf) {
    act = Tensor::uninit(pre.shape);
    cdf = Tensor::uninit(pre.shape);
    for (size_t i = 0; i < pre.data.size(); ++i) {
        const double c = 0.5 * std::erfc(-pre.data[i] * kInvSqrt2);
        cdf.data[i] = c;
        act.data[i] = pre.data[i] * c;
    }
}

// contiguous copy of one head's columns: [rows, D] -> [rows, head_dim]
Tensor head_slice(const Tensor& m, int64_t head, int64_t head_dim) {
    const int64_t rows = m.shape[0];
    const int64_t dim = m.shape[1];
    Tensor s = Tensor::uninit({rows, head_dim});
    for (int64_t r = 0; r < rows; ++r)
        std::memcpy(s.data.data() + r * head_dim, m.data.data() + r * dim + head * head_dim,
                    sizeof(double) * static_cast<size_t>(head_dim));
    return s;
}

}  // namespace

Tensor embed_video(const Tensor& video, const Parameters& p, const ModelConfig& cfg,
                   ForwardStats* stats, Tensor* patch_matrix_out) {
    cfg.validate();
    TS_CHECK(video.rank() == 4 && video.shape[0] == cfg.frames && video.shape[1] == cfg.height &&
                 video.shape[2] == cfg.width && video.shape[3] == 3,
             "video shape ", shape_str(video.shape), " does not match config [", cfg.frames, ",",
             cfg.height, ",", cfg.width, ",3]");
    for (double v : video.data) TS_CHECK(std::isfinite(v), "video contains non-finite pixels");

    const int64_t t_count = cfg.frames;
    const int64_t grid_w = cfg.width / cfg.patch;
    const int64_t grid_h = cfg.height / cfg.patch;
    const int64_t n = cfg.patches();
    const int64_t d = cfg.patch_dim();
    const int64_t dim = cfg.embed_dim;

    // non-overlapping P x P patches in row-major spatial order, each
    // flattened (y, x, channel)
    Tensor patches = Tensor::uninit({t_count * n, d});
    for (int64_t t = 0; t < t_count; ++t) {
        for (int64_t py = 0; py < grid_h; ++py) {
            for (int64_t px = 0; px < grid_w; ++px) {
                double* row = patches.data.data() + (t * n + py * grid_w + px) * d;
                int64_t o = 0;
                for (int64_t dy = 0; dy < cfg.patch; ++dy) {
                    const double* src = video.data.data() +
                                        ((t * cfg.height + py * cfg.patch + dy) * cfg.width +
                                         px * cfg.patch) * 3;
                    std::memcpy(row + o, src, sizeof(double) * static_cast<size_t>(cfg.patch * 3));
                    o += cfg.patch * 3;
                }
            }
        }
    }

    Tensor projected = Tensor::uninit({t_count * n, dim});
    kernels::gemm(patches.data.data(), p.patch_embed.data.data(), projected.data.data(),
                  t_count * n, d, dim);
    if (stats) stats->patch_embed += static_cast<long long>(t_count) * n * d * dim;

    Tensor z = Tensor::uninit({t_count, n + 1, dim});
    for (int64_t t = 0; t < t_count; ++t) {
        // class token at word 0, same learned vector in every frame
        double* w0 = z.data.data() + t * (n + 1) * dim;
        for (int64_t j = 0; j < dim; ++j)
            w0[j] = p.class_token.data[static_cast<size_t>(j)] +
                    p.pos_embed.data[static_cast<size_t>(j)];
        for (int64_t i = 0; i < n; ++i) {
            double* w = z.data.data() + (t * (n + 1) + i + 1) * dim;
            const double* e = projected.data.data() + (t * n + i) * dim;
            const double* pos = p.pos_embed.data.data() + (i + 1) * dim;
            for (int64_t j = 0; j < dim; ++j) w[j] = e[j] + pos[j];
        }
    }
    if (patch_matrix_out) *patch_matrix_out = std::move(patches);
    return z;
}

Tensor msa_frame(const Tensor& zt, const EncoderParams& ep, const ModelConfig& cfg,
                 MsaFrameCache* cache, ForwardStats* stats) {
    const int64_t words = zt.shape[0];
    const int64_t dim = cfg.embed_dim;
    TS_CHECK(zt.rank() == 2 && zt.shape[1] == dim, "msa_frame expects [N+1,", dim, "], got ",
             shape_str(zt.shape));
    const int64_t m = cfg.heads;
    const int64_t hd = cfg.head_dim();
    const double inv_scale = 1.0 / std::sqrt(static_cast<double>(hd));

    long long* qkv_macs = stats ? &stats->qkv : nullptr;
    Tensor q = linear(zt, ep.wq, ep.bq, qkv_macs);
    Tensor k = linear(zt, ep.wk, ep.bk, qkv_macs);
    Tensor v = linear(zt, ep.wv, ep.bv, qkv_macs);

    Tensor probs = Tensor::uninit({m, words, words});
    Tensor heads = Tensor::uninit({words, dim});
    for (int64_t h = 0; h < m; ++h) {
        Tensor qh = head_slice(q, h, hd);
        Tensor kh = head_slice(k, h, hd);
        Tensor vh = head_slice(v, h, hd);
        Tensor scores = Tensor::uninit({words, words});
        kernels::gemm_nt(qh.data.data(), kh.data.data(), scores.data.data(), words, hd, words);
        if (stats) stats->attn_scores += static_cast<long long>(words) * words * hd;
        for (double& s : scores.data) s *= inv_scale;
        Tensor ph = softmax_lastdim(scores);
        Tensor ctx = Tensor::uninit({words, hd});
        kernels::gemm(ph.data.data(), vh.data.data(), ctx.data.data(), words, words, hd);
        if (stats) stats->attn_context += static_cast<long long>(words) * words * hd;
        for (int64_t r = 0; r < words; ++r)
            std::memcpy(heads.data.data() + r * dim + h * hd, ctx.data.data() + r * hd,
                        sizeof(double) * static_cast<size_t>(hd));
        std::memcpy(probs.data.data() + h * words * words, ph.data.data(),
                    sizeof(double) * static_cast<size_t>(words * words));
    }

    Tensor out = linear(heads, ep.wo, ep.bo, stats ? &stats->attn_proj : nullptr);
    if (cache) {
        cache->q = std::move(q);
        cache->k = std::move(k);
        cache->v = std::move(v);
        cache->probs = std::move(probs);
        cache->heads = std::move(heads);
    }
    return out;
}

Tensor ffn(const Tensor& z, const EncoderParams& ep, const ModelConfig& cfg, FfnCache* cache,
           ForwardStats* stats) {
    TS_CHECK(z.shape.back() == cfg.embed_dim, "ffn expects last dim ", cfg.embed_dim, ", got ",
             shape_str(z.shape));
    long long* macs = stats ? &stats->ffn : nullptr;
    Tensor pre = linear(z, ep.w1, ep.b1, macs);
    Tensor act, cdf;
    gelu_forward_cached(pre, act, cdf);
    Tensor out = linear(act, ep.w2, ep.b2, macs);
    if (cache) {
        cache->pre = std::move(pre);
        cache->cdf = std::move(cdf);
        cache->act = std::move(act);
    }
    return out;
}

namespace {

// Attention branch over all frames: QKV projected in one batched GEMM each,
// per-frame per-head attention on contiguous head-major matrices, then one
// batched output projection. Matches msa_frame applied frame by frame.
Tensor attn_branch_forward(const Tensor& branch_in, const EncoderParams& ep,
                           const ModelConfig& cfg, Tensor* probs_out, LayerCache* cache,
                           ForwardStats* stats) {
    const int64_t t_count = branch_in.shape[0];
    const int64_t words = branch_in.shape[1];
    const int64_t m = cfg.heads;
    const int64_t hd = cfg.head_dim();
    const double inv_scale = 1.0 / std::sqrt(static_cast<double>(hd));

    long long* qkv_macs = stats ? &stats->qkv : nullptr;
    Tensor q = to_head_major(linear(branch_in, ep.wq, ep.bq, qkv_macs), m, hd);
    Tensor k = to_head_major(linear(branch_in, ep.wk, ep.bk, qkv_macs), m, hd);
    Tensor v = to_head_major(linear(branch_in, ep.wv, ep.bv, qkv_macs), m, hd);

    Tensor probs = Tensor::uninit({t_count, m, words, words});
    Tensor ctx = Tensor::uninit({t_count, m, words, hd});
    for (int64_t th = 0; th < t_count * m; ++th) {
        const double* qh = q.data.data() + th * words * hd;
        const double* kh = k.data.data() + th * words * hd;
        const double* vh = v.data.data() + th * words * hd;
        double* ph = probs.data.data() + th * words * words;
        kernels::gemm_nt(qh, kh, ph, words, hd, words);
        for (int64_t i = 0; i < words * words; ++i) ph[i] *= inv_scale;
        softmax_rows_raw(ph, words, words);
        kernels::gemm(ph, vh, ctx.data.data() + th * words * hd, words, words, hd);
    }
    if (stats) {
        stats->attn_scores += static_cast<long long>(t_count) * m * words * words * hd;
        stats->attn_context += static_cast<long long>(t_count) * m * words * words * hd;
    }

    Tensor heads = from_head_major(ctx);
    Tensor out = linear(heads, ep.wo, ep.bo, stats ? &stats->attn_proj : nullptr);
    if (cache) {
        cache->q = std::move(q);
        cache->k = std::move(k);
        cache->v = std::move(v);
        cache->heads = std::move(heads);
    }
    if (probs_out) *probs_out = std::move(probs);
    return out;
}

// One residual block. The shift site is one of:
//   prior_residual:  main stream shifted before the block (skip sees it too)
//   prior_layernorm: branch only, before LN
//   prior_branch:    branch only, after LN
//   post_branch:     branch output, before the residual add
// literal_eq23 puts the layer-norm output on the skip path (the in-place
// overwrite reading of the encoder equations) instead of the block input.
template <typename BranchFn>
Tensor residual_block(const Tensor& z, const ModelConfig& cfg, const Tensor& ln_gain,
                      const Tensor& ln_bias, BranchFn branch_fn, Tensor* ln_in_out,
                      Tensor* branch_in_out) {
    const ShiftSpec& sp = cfg.shift;
    const bool shifting = sp.variant != ShiftVariant::none;
    const int64_t dim = cfg.embed_dim;

    const Tensor* x1 = &z;
    Tensor shifted_main;
    if (shifting && sp.placement == ShiftPlacement::prior_residual) {
        shifted_main = apply_shift(z, sp, dim);
        x1 = &shifted_main;
    }
    const Tensor* ln_in = x1;
    Tensor shifted_ln;
    if (shifting && sp.placement == ShiftPlacement::prior_layernorm) {
        shifted_ln = apply_shift(*x1, sp, dim);
        ln_in = &shifted_ln;
    }
    Tensor normed = layer_norm(*ln_in, ln_gain, ln_bias, kLayerNormEps);
    const Tensor* branch_in = &normed;
    Tensor shifted_branch;
    if (shifting && sp.placement == ShiftPlacement::prior_branch) {
        shifted_branch = apply_shift(normed, sp, dim);
        branch_in = &shifted_branch;
    }
    Tensor branch_out = branch_fn(*branch_in);
    if (shifting && sp.placement == ShiftPlacement::post_branch)
        branch_out = apply_shift(branch_out, sp, dim);
    // literal reading: the stream was overwritten in place, so the skip path
    // carries the value entering the branch rather than the block input
    const Tensor& skip = cfg.literal_eq23 ? *branch_in : *x1;
    Tensor out = add(branch_out, skip);
    if (ln_in_out) *ln_in_out = *ln_in;
    if (branch_in_out) *branch_in_out = *branch_in;
    return out;
}

}  // namespace

Tensor attention_block(const Tensor& z, const EncoderParams& ep, const ModelConfig& cfg,
                       Tensor* attention_out) {
    auto branch = [&](const Tensor& branch_in) {
        return attn_branch_forward(branch_in, ep, cfg, attention_out, nullptr, nullptr);
    };
    return residual_block(z, cfg, ep.ln1_gain, ep.ln1_bias, branch, nullptr, nullptr);
}

Tensor ffn_block(const Tensor& z, const EncoderParams& ep, const ModelConfig& cfg) {
    auto branch = [&](const Tensor& branch_in) { return ffn(branch_in, ep, cfg); };
    return residual_block(z, cfg, ep.ln2_gain, ep.ln2_bias, branch, nullptr, nullptr);
}

EncoderResult encoder_forward(const Tensor& z, const EncoderParams& ep, const ModelConfig& cfg,
                              LayerCache* cache, ForwardStats* stats) {
    TS_CHECK(z.rank() == 3 && z.shape[0] == cfg.frames && z.shape[1] == cfg.words() &&
                 z.shape[2] == cfg.embed_dim,
             "encoder expects [", cfg.frames, ",", cfg.words(), ",", cfg.embed_dim, "], got ",
             shape_str(z.shape));

    EncoderResult res;
    auto attn = [&](const Tensor& branch_in) {
        return attn_branch_forward(branch_in, ep, cfg, &res.attention, cache, stats);
    };
    Tensor mid = residual_block(z, cfg, ep.ln1_gain, ep.ln1_bias, attn,
                                cache ? &cache->attn_ln_in : nullptr,
                                cache ? &cache->attn_branch_in : nullptr);

    FfnCache fc;
    auto ffn_branch = [&](const Tensor& branch_in) {
        return ffn(branch_in, ep, cfg, cache ? &fc : nullptr, stats);
    };
    res.out = residual_block(mid, cfg, ep.ln2_gain, ep.ln2_bias, ffn_branch,
                             cache ? &cache->ffn_ln_in : nullptr,
                             cache ? &cache->ffn_branch_in : nullptr);
    if (cache) {
        cache->ffn_pre = std::move(fc.pre);
        cache->ffn_cdf = std::move(fc.cdf);
        cache->ffn_act = std::move(fc.act);
    }
    res.mid = std::move(mid);
    return res;
}

Activations model_forward(const Tensor& video, const Parameters& p, const ModelConfig& cfg,
                          const ForwardOptions& opt) {
    Activations acts;
    acts.config = cfg;
    const bool full = opt.retain == Retain::full;
    const bool keep_attn = opt.retain != Retain::none;

    Tensor z = embed_video(video, p, cfg, opt.stats, full ? &acts.patch_matrix : nullptr);
    if (full) {
        acts.layer_inputs.reserve(static_cast<size_t>(cfg.depth) + 1);
        acts.layer_inputs.push_back(z);
        acts.cache.resize(static_cast<size_t>(cfg.depth));
    }
    if (keep_attn) acts.attention.resize(static_cast<size_t>(cfg.depth));

    for (int64_t l = 0; l < cfg.depth; ++l) {
        EncoderResult res = encoder_forward(z, p.encoders[static_cast<size_t>(l)], cfg,
                                            full ? &acts.cache[static_cast<size_t>(l)] : nullptr,
                                            opt.stats);
        z = std::move(res.out);
        if (full) {
            acts.layer_mid.push_back(std::move(res.mid));
            acts.layer_inputs.push_back(z);
        }
        if (keep_attn && (full || opt.attention_layer < 0 || opt.attention_layer == l))
            acts.attention[static_cast<size_t>(l)] = std::move(res.attention);
    }

    acts.final_normed = layer_norm(z, p.final_ln_gain, p.final_ln_bias, kLayerNormEps);

    // per-frame head on the class token, then the mean over frames
    Tensor c_out = Tensor::uninit({cfg.frames, cfg.embed_dim});
    for (int64_t t = 0; t < cfg.frames; ++t)
        std::memcpy(c_out.data.data() + t * cfg.embed_dim,
                    acts.final_normed.data.data() + t * cfg.words() * cfg.embed_dim,
                    sizeof(double) * static_cast<size_t>(cfg.embed_dim));
    acts.frame_logits =
        linear(c_out, p.head_weight, p.head_bias, opt.stats ? &opt.stats->head : nullptr);
    acts.logits = Tensor({cfg.classes});
    for (int64_t t = 0; t < cfg.frames; ++t)
        for (int64_t c = 0; c < cfg.classes; ++c)
            acts.logits.data[static_cast<size_t>(c)] +=
                acts.frame_logits.data[static_cast<size_t>(t * cfg.classes + c)];
    for (double& v : acts.logits.data) v /= static_cast<double>(cfg.frames);

    acts.has_cache = full;
    return acts;
}

// ---------------------------------------------------------------------------
// backward

namespace {

// Batched mirror of attn_branch_forward.
Tensor attn_branch_backward(const Tensor& dout, const LayerCache& cache, const Tensor& probs,
                            EncoderParams& ep, const ModelConfig& cfg) {
    const int64_t t_count = dout.shape[0];
    const int64_t words = dout.shape[1];
    const int64_t m = cfg.heads;
    const int64_t hd = cfg.head_dim();
    const double inv_scale = 1.0 / std::sqrt(static_cast<double>(hd));

    Tensor dheads = linear_backward(cache.heads, ep.wo, ep.bo, dout);
    Tensor dctx = to_head_major(dheads, m, hd);

    Tensor dq = Tensor::uninit({t_count, m, words, hd});
    Tensor dk = Tensor::uninit({t_count, m, words, hd});
    Tensor dv = Tensor::uninit({t_count, m, words, hd});
    std::vector<double> dp(static_cast<size_t>(words * words));
    std::vector<double> ds(static_cast<size_t>(words * words));
    for (int64_t th = 0; th < t_count * m; ++th) {
        const double* qh = cache.q.data.data() + th * words * hd;
        const double* kh = cache.k.data.data() + th * words * hd;
        const double* vh = cache.v.data.data() + th * words * hd;
        const double* ph = probs.data.data() + th * words * words;
        const double* dc = dctx.data.data() + th * words * hd;

        kernels::gemm_nt(dc, vh, dp.data(), words, hd, words);
        kernels::gemm_tn(ph, dc, dv.data.data() + th * words * hd, words, words, hd);
        softmax_rows_backward_raw(ph, dp.data(), ds.data(), words, words);
        for (int64_t i = 0; i < words * words; ++i) ds[static_cast<size_t>(i)] *= inv_scale;
        kernels::gemm(ds.data(), kh, dq.data.data() + th * words * hd, words, words, hd);
        kernels::gemm_tn(ds.data(), qh, dk.data.data() + th * words * hd, words, words, hd);
    }

    Tensor dz = linear_backward(cache.attn_branch_in, ep.wq, ep.bq, from_head_major(dq));
    Tensor dzk = linear_backward(cache.attn_branch_in, ep.wk, ep.bk, from_head_major(dk));
    Tensor dzv = linear_backward(cache.attn_branch_in, ep.wv, ep.bv, from_head_major(dv));
    for (size_t i = 0; i < dz.data.size(); ++i) dz.data[i] += dzk.data[i] + dzv.data[i];
    return dz;
}

void accumulate(Tensor& into, const Tensor& g) {
    for (size_t i = 0; i < g.data.size(); ++i) into.grad[i] += g.data[i];
}

// Mirrors residual_block; returns d(block input).
template <typename BranchBwd>
Tensor residual_block_backward(const Tensor& dout, const ModelConfig& cfg, const Tensor& ln_in,
                               Tensor& ln_gain, Tensor& ln_bias, BranchBwd branch_bwd) {
    const ShiftSpec& sp = cfg.shift;
    const bool shifting = sp.variant != ShiftVariant::none;
    const int64_t dim = cfg.embed_dim;

    const Tensor* dbranch_out = &dout;
    Tensor dbranch_shifted;
    if (shifting && sp.placement == ShiftPlacement::post_branch) {
        dbranch_shifted = apply_shift_adjoint(dout, sp, dim);
        dbranch_out = &dbranch_shifted;
    }
    Tensor dbranch_in = branch_bwd(*dbranch_out);

    Tensor dnormed = (shifting && sp.placement == ShiftPlacement::prior_branch)
                         ? apply_shift_adjoint(dbranch_in, sp, dim)
                         : std::move(dbranch_in);
    if (cfg.literal_eq23) {
        // skip carried the branch input value
        if (shifting && sp.placement == ShiftPlacement::prior_branch) {
            Tensor dskip = apply_shift_adjoint(dout, sp, dim);
            for (size_t i = 0; i < dnormed.data.size(); ++i) dnormed.data[i] += dskip.data[i];
        } else {
            for (size_t i = 0; i < dnormed.data.size(); ++i) dnormed.data[i] += dout.data[i];
        }
    }

    LayerNormGrads lg = layer_norm_backward(ln_in, ln_gain, kLayerNormEps, dnormed);
    accumulate(ln_gain, lg.dgamma);
    accumulate(ln_bias, lg.dbeta);

    Tensor dx1 = (shifting && sp.placement == ShiftPlacement::prior_layernorm)
                     ? apply_shift_adjoint(lg.dx, sp, dim)
                     : std::move(lg.dx);
    if (!cfg.literal_eq23)
        for (size_t i = 0; i < dx1.data.size(); ++i) dx1.data[i] += dout.data[i];

    return (shifting && sp.placement == ShiftPlacement::prior_residual)
               ? apply_shift_adjoint(dx1, sp, dim)
               : std::move(dx1);
}

Tensor encoder_backward(const Tensor& dout, const LayerCache& cache, const Tensor& probs,
                        EncoderParams& ep, const ModelConfig& cfg) {
    auto ffn_bwd = [&](const Tensor& dbranch_out) {
        Tensor dact = linear_backward(cache.ffn_act, ep.w2, ep.b2, dbranch_out);
        // d(gelu)/dx = Phi(x) + x phi(x), with Phi cached by the forward
        Tensor dpre(dact.shape);
        for (size_t i = 0; i < dact.data.size(); ++i) {
            const double x = cache.ffn_pre.data[i];
            const double pdf = kInvSqrt2Pi * std::exp(-0.5 * x * x);
            dpre.data[i] = dact.data[i] * (cache.ffn_cdf.data[i] + x * pdf);
        }
        return linear_backward(cache.ffn_branch_in, ep.w1, ep.b1, dpre);
    };
    Tensor dmid =
        residual_block_backward(dout, cfg, cache.ffn_ln_in, ep.ln2_gain, ep.ln2_bias, ffn_bwd);

    auto attn_bwd = [&](const Tensor& dbranch_out) {
        return attn_branch_backward(dbranch_out, cache, probs, ep, cfg);
    };
    return residual_block_backward(dmid, cfg, cache.attn_ln_in, ep.ln1_gain, ep.ln1_bias,
                                   attn_bwd);
}

}  // namespace

void model_backward(const Tensor& dlogits, const Activations& acts, Parameters& params) {
    TS_CHECK(acts.has_cache, "model_backward requires activations retained with Retain::full");
    const ModelConfig& cfg = acts.config;
    TS_CHECK(dlogits.rank() == 1 && dlogits.shape[0] == cfg.classes, "dlogits shape ",
             shape_str(dlogits.shape), " does not match ", cfg.classes, " classes");
    if (!params.head_bias.has_grad()) params.ensure_grads();

    const int64_t t_count = cfg.frames;
    const int64_t words = cfg.words();
    const int64_t dim = cfg.embed_dim;

    // y = mean over frames of FC(c_L)
    Tensor dframe_logits = Tensor::uninit({t_count, cfg.classes});
    for (int64_t t = 0; t < t_count; ++t)
        for (int64_t c = 0; c < cfg.classes; ++c)
            dframe_logits.data[static_cast<size_t>(t * cfg.classes + c)] =
                dlogits.data[static_cast<size_t>(c)] / static_cast<double>(t_count);

    Tensor c_out = Tensor::uninit({t_count, dim});
    for (int64_t t = 0; t < t_count; ++t)
        std::memcpy(c_out.data.data() + t * dim,
                    acts.final_normed.data.data() + t * words * dim,
                    sizeof(double) * static_cast<size_t>(dim));
    Tensor dc_out = linear_backward(c_out, params.head_weight, params.head_bias, dframe_logits);

    Tensor dfinal({t_count, words, dim});
    for (int64_t t = 0; t < t_count; ++t)
        std::memcpy(dfinal.data.data() + t * words * dim, dc_out.data.data() + t * dim,
                    sizeof(double) * static_cast<size_t>(dim));

    LayerNormGrads fg = layer_norm_backward(acts.layer_inputs.back(), params.final_ln_gain,
                                            kLayerNormEps, dfinal);
    accumulate(params.final_ln_gain, fg.dgamma);
    accumulate(params.final_ln_bias, fg.dbeta);

    Tensor dz = std::move(fg.dx);
    for (int64_t l = cfg.depth - 1; l >= 0; --l) {
        TS_CHECK(acts.attention[static_cast<size_t>(l)].numel() > 0,
                 "attention weights for layer ", l, " missing from the activations");
        dz = encoder_backward(dz, acts.cache[static_cast<size_t>(l)],
                              acts.attention[static_cast<size_t>(l)],
                              params.encoders[static_cast<size_t>(l)], cfg);
    }

    // embedding backward
    const int64_t n = cfg.patches();
    Tensor demb = Tensor::uninit({t_count * n, dim});
    for (int64_t t = 0; t < t_count; ++t) {
        const double* w0 = dz.data.data() + t * words * dim;
        for (int64_t j = 0; j < dim; ++j) {
            params.class_token.grad[static_cast<size_t>(j)] += w0[j];
            params.pos_embed.grad[static_cast<size_t>(j)] += w0[j];
        }
        for (int64_t i = 0; i < n; ++i) {
            const double* w = dz.data.data() + (t * words + i + 1) * dim;
            double* pos = params.pos_embed.grad.data() + (i + 1) * dim;
            double* e = demb.data.data() + (t * n + i) * dim;
            for (int64_t j = 0; j < dim; ++j) {
                pos[j] += w[j];
                e[j] = w[j];
            }
        }
    }
    kernels::gemm_tn(acts.patch_matrix.data.data(), demb.data.data(),
                     params.patch_embed.grad.data(), cfg.patch_dim(), t_count * n, dim,
                     /*accumulate=*/true);
}

}  // namespace tokshift
