#include "tokshift/cost.hpp"

#include <cstdio>

namespace tokshift {

long long CostReport::total_params() const {
    long long n = 0;
    for (const auto& e : entries) n += e.params;
    return n;
}

long long CostReport::total_macs() const {
    long long n = 0;
    for (const auto& e : entries) n += e.macs;
    return n;
}

long long CostReport::full_macs() const {
    long long n = total_macs();
    for (const auto& e : informational)
        if (e.name == "attn.scores" || e.name == "attn.context") n += e.macs;
    return n;
}

namespace {

/*
 * Parameters per component (D = embed dim, d = P^2*3, N patches, L encoders):
 *   patch projection   d*D              (no bias; the embedding is x E)
 *   position table     (N+1)*D
 *   class token        D
 *   per encoder        2 layer-norms    2*2D
 *                      QKV projections  3*(D^2 + D)
 *                      output proj      D^2 + D
 *                      FFN              D*4D + 4D + 4D*D + D
 *   final layer-norm   2D
 *   head               D*classes + classes
 *
 * Headline MACs count the linear layers only, per frame, times T:
 *   patch projection   N*d*D
 *   QKV                3*(N+1)*D^2
 *   output proj        (N+1)*D^2
 *   FFN                8*(N+1)*D^2
 * Attention score/value matmuls, softmax, layer-norm, GELU and the head are
 * excluded from the headline and listed as informational entries (softmax,
 * layer-norm and GELU as scalar-evaluation counts, the rest as MACs). This
 * convention reproduces the published per-view GFLOPs figures.
 */
CostReport build(const ModelConfig& cfg) {
    cfg.validate();
    const long long t = cfg.frames;
    const long long n = cfg.patches();
    const long long w = n + 1;
    const long long d = cfg.patch_dim();
    const long long dim = cfg.embed_dim;
    const long long hidden = cfg.mlp_ratio * dim;
    const long long l = cfg.depth;

    CostReport r;
    r.entries.push_back({"embed.patch", d * dim, t * n * d * dim});
    r.entries.push_back({"embed.pos", w * dim, 0});
    r.entries.push_back({"embed.class", dim, 0});
    r.entries.push_back({"enc.ln", l * 4 * dim, 0});
    r.entries.push_back({"enc.qkv", l * 3 * (dim * dim + dim), t * l * 3 * w * dim * dim});
    r.entries.push_back({"enc.proj", l * (dim * dim + dim), t * l * w * dim * dim});
    r.entries.push_back(
        {"enc.ffn", l * (dim * hidden + hidden + hidden * dim + dim), t * l * 2 * w * dim * hidden});
    r.entries.push_back({"final_ln", 2 * dim, 0});
    r.entries.push_back({"head", dim * cfg.classes + cfg.classes, 0});
    r.entries.push_back({"shift", 0, 0});

    r.informational.push_back({"attn.scores", 0, t * l * w * w * dim});
    r.informational.push_back({"attn.context", 0, t * l * w * w * dim});
    r.informational.push_back({"softmax", 0, t * l * cfg.heads * w * w});
    r.informational.push_back({"layernorm", 0, t * (2 * l + 1) * w * dim});
    r.informational.push_back({"gelu", 0, t * l * w * hidden});
    r.informational.push_back({"head", 0, t * dim * cfg.classes});
    return r;
}

}  // namespace

CostReport count_params(const ModelConfig& cfg) { return build(cfg); }

CostReport count_flops(const ModelConfig& cfg) { return build(cfg); }

long long word_count(const ModelConfig& cfg) {
    cfg.validate();
    return static_cast<long long>(cfg.frames) * cfg.words();
}

std::string CostReport::table() const {
    char line[160];
    std::string out;
    std::snprintf(line, sizeof(line), "%-14s %14s %16s\n", "component", "params", "macs");
    out += line;
    for (const auto& e : entries) {
        std::snprintf(line, sizeof(line), "%-14s %14lld %16lld\n", e.name.c_str(), e.params,
                      e.macs);
        out += line;
    }
    std::snprintf(line, sizeof(line), "%-14s %14lld %16lld\n", "total", total_params(),
                  total_macs());
    out += line;
    std::snprintf(line, sizeof(line), "headline GFLOPs/view %.2f\n", gflops_per_view());
    out += line;
    std::snprintf(line, sizeof(line), "full GFLOPs/view     %.2f  (+ attention matmuls)\n",
                  full_gflops_per_view());
    out += line;
    out += "informational (excluded from headline):\n";
    for (const auto& e : informational) {
        std::snprintf(line, sizeof(line), "%-14s %14lld %16lld\n", e.name.c_str(), e.params,
                      e.macs);
        out += line;
    }
    return out;
}

std::string CostReport::machine_lines() const {
    std::string out;
    for (const auto& e : entries)
        out += e.name + "\t" + std::to_string(e.params) + "\t" + std::to_string(e.macs) + "\n";
    for (const auto& e : informational)
        out += "info." + e.name + "\t" + std::to_string(e.params) + "\t" +
               std::to_string(e.macs) + "\n";
    out += "total\t" + std::to_string(total_params()) + "\t" + std::to_string(total_macs()) + "\n";
    return out;
}

}  // namespace tokshift
