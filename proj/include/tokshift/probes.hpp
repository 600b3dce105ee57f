#pragma once

#include <string>

#include "tokshift/model.hpp"

namespace tokshift {

// Head-averaged attention of one layer, plus the class-token query row
// (token -> patches, token->token weight dropped and the rest renormalized)
// reshaped to the patch grid for heatmap emission.
struct AttentionDump {
    int64_t layer = 0;
    Tensor head_mean;   // [T, N+1, N+1], rows sum to 1
    Tensor token_grid;  // [T, H/P, W/P], each frame sums to 1
};

AttentionDump attention_map(const Activations& acts, int64_t layer);

struct CosineReport {
    double token_mean = 0.0;
    double patch_mean = 0.0;
    int64_t skipped_pairs = 0;  // pairs with a zero vector on either side
};

// Mean cosine similarity between temporally adjacent features, computed
// separately for word 0 and words 1..N. features: [T, N+1, D], T >= 2.
CosineReport temporal_cosine(const Tensor& features);

// Binary PPM (P6) heatmap, one image per frame, grayscale values min-max
// normalized over the whole clip.
void write_heatmap_ppms(const AttentionDump& dump, const std::string& dir,
                        const std::string& stem);

}  // namespace tokshift
