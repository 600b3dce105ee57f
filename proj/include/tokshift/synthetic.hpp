#pragma once

#include "tokshift/tensor.hpp"

namespace tokshift {

enum class Direction { left = 0, right = 1, up = 2, down = 3 };
constexpr int kDirectionCount = 4;
const char* to_string(Direction d);

// Motion-direction task: a bright square on a dark background translating at
// `speed` pixels per frame, plus seeded Gaussian pixel noise clamped to
// [0,1]. Clips are rendered at source resolution (model input plus a crop
// margin on each side) so training can take random crops; make_clip returns
// the deterministic center crop.
struct SyntheticTask {
    uint64_t seed = 0;
    int64_t frames = 8;
    int64_t height = 32;  // model input dims
    int64_t width = 32;
    int64_t square = 8;  // side, pixels
    int64_t speed = 2;   // pixels per frame
    double noise_std = 0.0;
    int64_t crop_margin = 2;

    int64_t source_height() const { return height + 2 * crop_margin; }
    int64_t source_width() const { return width + 2 * crop_margin; }

    // Rejects tasks whose trajectory cannot stay inside the frame for all T
    // frames in every direction.
    void validate() const;
};

// Renders at source resolution with the square's top-left corner starting at
// (y0, x0). The trajectory must stay inside the source frame.
Tensor render_clip(const SyntheticTask& task, int64_t y0, int64_t x0, Direction dir,
                   uint64_t noise_seed);

// Deterministic for fixed (seed, label): seeded start position, seeded noise.
// Returns the full source render [T, sH, sW, 3] (training crops from this).
Tensor make_source_clip(const SyntheticTask& task, uint64_t clip_seed, Direction label);

// Center crop of make_source_clip to [T, H, W, 3].
Tensor make_clip(const SyntheticTask& task, uint64_t clip_seed, Direction label);

// Center crop of a [T, h, w, 3] clip to target dims, with optional crop
// offsets and horizontal flip (used by training augmentation).
Tensor crop_clip(const Tensor& clip, int64_t oy, int64_t ox, int64_t out_h, int64_t out_w,
                 bool hflip = false);

struct SamplingSpec {
    int64_t frames = 8;  // T
    int64_t step = 1;    // S
    int64_t views = 1;
    int64_t crops = 1;  // 1 = center; 2 = left+right; 3 = left+center+right

    void validate() const;
};

// Frames at indices start + i*S, i in [0, T).
Tensor sample_clip(const Tensor& source, const SamplingSpec& spec, int64_t start);

// Starts spread uniformly over the valid range: an arithmetic progression
// with step floor(range / (views-1)); a single view starts at the center.
std::vector<int64_t> view_starts(int64_t source_frames, const SamplingSpec& spec);

}  // namespace tokshift
