#include "tokshift/probes.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>

namespace tokshift {

AttentionDump attention_map(const Activations& acts, int64_t layer) {
    const ModelConfig& cfg = acts.config;
    TS_CHECK(layer >= 0 && layer < cfg.depth, "attention layer ", layer, " out of range [0,",
             cfg.depth, ")");
    TS_CHECK(static_cast<size_t>(layer) < acts.attention.size() &&
                 acts.attention[static_cast<size_t>(layer)].numel() > 0,
             "attention weights for layer ", layer, " were not retained");
    const Tensor& probs = acts.attention[static_cast<size_t>(layer)];  // [T, M, W, W]
    const int64_t t_count = probs.shape[0];
    const int64_t m = probs.shape[1];
    const int64_t words = probs.shape[2];
    const int64_t grid_h = cfg.height / cfg.patch;
    const int64_t grid_w = cfg.width / cfg.patch;

    AttentionDump dump;
    dump.layer = layer;
    dump.head_mean = Tensor({t_count, words, words});
    for (int64_t t = 0; t < t_count; ++t)
        for (int64_t h = 0; h < m; ++h) {
            const double* src = probs.data.data() + ((t * m + h) * words) * words;
            double* dst = dump.head_mean.data.data() + t * words * words;
            for (int64_t i = 0; i < words * words; ++i) dst[i] += src[i] / static_cast<double>(m);
        }

    // class-token query row, token->token weight dropped, renormalized
    dump.token_grid = Tensor({t_count, grid_h, grid_w});
    for (int64_t t = 0; t < t_count; ++t) {
        const double* row = dump.head_mean.data.data() + t * words * words;  // query word 0
        double sum = 0.0;
        for (int64_t j = 1; j < words; ++j) sum += row[j];
        TS_CHECK(sum > 0.0, "token attention row has no patch mass to renormalize");
        double* dst = dump.token_grid.data.data() + t * grid_h * grid_w;
        for (int64_t j = 1; j < words; ++j) dst[j - 1] = row[j] / sum;
    }
    return dump;
}

CosineReport temporal_cosine(const Tensor& features) {
    TS_CHECK(features.rank() == 3, "temporal_cosine expects [T,N+1,D], got ",
             shape_str(features.shape));
    const int64_t t_count = features.shape[0];
    const int64_t words = features.shape[1];
    const int64_t dim = features.shape[2];
    TS_CHECK(t_count >= 2, "temporal_cosine needs T >= 2, got ", t_count);

    CosineReport rep;
    double token_sum = 0.0, patch_sum = 0.0;
    int64_t token_pairs = 0, patch_pairs = 0;
    for (int64_t t = 0; t + 1 < t_count; ++t) {
        for (int64_t w = 0; w < words; ++w) {
            const double* a = features.data.data() + (t * words + w) * dim;
            const double* b = features.data.data() + ((t + 1) * words + w) * dim;
            double dot = 0.0, na = 0.0, nb = 0.0;
            for (int64_t j = 0; j < dim; ++j) {
                dot += a[j] * b[j];
                na += a[j] * a[j];
                nb += b[j] * b[j];
            }
            if (na == 0.0 || nb == 0.0) {
                ++rep.skipped_pairs;
                continue;
            }
            const double c = dot / (std::sqrt(na) * std::sqrt(nb));
            if (w == 0) {
                token_sum += c;
                ++token_pairs;
            } else {
                patch_sum += c;
                ++patch_pairs;
            }
        }
    }
    TS_CHECK(token_pairs + patch_pairs > 0, "temporal_cosine: all pairs degenerate");
    rep.token_mean = token_pairs ? token_sum / static_cast<double>(token_pairs) : 0.0;
    rep.patch_mean = patch_pairs ? patch_sum / static_cast<double>(patch_pairs) : 0.0;
    return rep;
}

void write_heatmap_ppms(const AttentionDump& dump, const std::string& dir,
                        const std::string& stem) {
    const Tensor& grid = dump.token_grid;
    const int64_t t_count = grid.shape[0];
    const int64_t rows = grid.shape[1];
    const int64_t cols = grid.shape[2];

    // min-max normalization over the whole clip
    double lo = grid.data[0], hi = grid.data[0];
    for (double v : grid.data) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    const double span = (hi > lo) ? (hi - lo) : 1.0;

    std::filesystem::create_directories(dir);
    for (int64_t t = 0; t < t_count; ++t) {
        const std::string path =
            dir + "/" + stem + "_frame" + std::to_string(t) + ".ppm";
        std::ofstream out(path, std::ios::binary);
        TS_CHECK(out.good(), "cannot open ", path, " for writing");
        out << "P6\n" << cols << " " << rows << "\n255\n";
        for (int64_t i = 0; i < rows * cols; ++i) {
            const double v = (grid.data[static_cast<size_t>(t * rows * cols + i)] - lo) / span;
            const auto byte = static_cast<unsigned char>(std::lround(v * 255.0));
            const unsigned char px[3] = {byte, byte, byte};
            out.write(reinterpret_cast<const char*>(px), 3);
        }
        TS_CHECK(out.good(), "write failed for ", path);
    }
}

}  // namespace tokshift
