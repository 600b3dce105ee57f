#include "tokshift/synthetic.hpp"

#include <algorithm>
#include <cmath>

namespace tokshift {

const char* to_string(Direction d) {
    switch (d) {
        case Direction::left: return "left";
        case Direction::right: return "right";
        case Direction::up: return "up";
        case Direction::down: return "down";
    }
    return "?";
}

namespace {
void direction_delta(Direction d, int64_t* dy, int64_t* dx) {
    switch (d) {
        case Direction::left: *dy = 0; *dx = -1; return;
        case Direction::right: *dy = 0; *dx = 1; return;
        case Direction::up: *dy = -1; *dx = 0; return;
        case Direction::down: *dy = 1; *dx = 0; return;
    }
    *dy = 0;
    *dx = 0;
}
}  // namespace

void SyntheticTask::validate() const {
    TS_CONFIG_CHECK(frames >= 1, "task frames must be >= 1");
    TS_CONFIG_CHECK(height >= 1 && width >= 1, "task dims must be >= 1");
    TS_CONFIG_CHECK(square >= 1, "square size must be >= 1");
    TS_CONFIG_CHECK(speed >= 1, "speed must be >= 1 pixel/frame");
    TS_CONFIG_CHECK(noise_std >= 0.0, "noise_std must be >= 0");
    TS_CONFIG_CHECK(crop_margin >= 0, "crop_margin must be >= 0");
    // room for the full trajectory in both axes: travel + square must fit
    const int64_t travel = speed * (frames - 1);
    TS_CONFIG_CHECK(square + travel <= source_height() && square + travel <= source_width(),
                    "trajectory would exit frame: square ", square, " + travel ", travel,
                    " exceeds source ", source_height(), "x", source_width());
}

Tensor render_clip(const SyntheticTask& task, int64_t y0, int64_t x0, Direction dir,
                   uint64_t noise_seed) {
    task.validate();
    const int64_t sh = task.source_height();
    const int64_t sw = task.source_width();
    int64_t dy, dx;
    direction_delta(dir, &dy, &dx);
    const int64_t y_end = y0 + dy * task.speed * (task.frames - 1);
    const int64_t x_end = x0 + dx * task.speed * (task.frames - 1);
    TS_CHECK(y0 >= 0 && x0 >= 0 && y0 + task.square <= sh && x0 + task.square <= sw &&
                 y_end >= 0 && x_end >= 0 && y_end + task.square <= sh &&
                 x_end + task.square <= sw,
             "start (", y0, ",", x0, ") sends the ", to_string(dir),
             " trajectory outside the ", sh, "x", sw, " frame");

    constexpr double kBackground = 0.1;
    constexpr double kSquare = 0.9;
    Tensor clip({task.frames, sh, sw, 3});
    Rng noise(noise_seed);
    for (int64_t t = 0; t < task.frames; ++t) {
        const int64_t ty = y0 + dy * task.speed * t;
        const int64_t tx = x0 + dx * task.speed * t;
        for (int64_t y = 0; y < sh; ++y) {
            for (int64_t x = 0; x < sw; ++x) {
                const bool inside =
                    y >= ty && y < ty + task.square && x >= tx && x < tx + task.square;
                double* px = clip.data.data() + ((t * sh + y) * sw + x) * 3;
                for (int64_t c = 0; c < 3; ++c) {
                    double v = inside ? kSquare : kBackground;
                    if (task.noise_std > 0.0) v += noise.normal(0.0, task.noise_std);
                    px[c] = std::clamp(v, 0.0, 1.0);
                }
            }
        }
    }
    return clip;
}

Tensor crop_clip(const Tensor& clip, int64_t oy, int64_t ox, int64_t out_h, int64_t out_w,
                 bool hflip) {
    TS_CHECK(clip.rank() == 4 && clip.shape[3] == 3, "crop_clip expects [T,h,w,3], got ",
             shape_str(clip.shape));
    const int64_t t_count = clip.shape[0];
    const int64_t h = clip.shape[1];
    const int64_t w = clip.shape[2];
    TS_CHECK(oy >= 0 && ox >= 0 && oy + out_h <= h && ox + out_w <= w, "crop window (", oy, ",",
             ox, ")+", out_h, "x", out_w, " outside ", h, "x", w);
    Tensor out({t_count, out_h, out_w, 3});
    for (int64_t t = 0; t < t_count; ++t)
        for (int64_t y = 0; y < out_h; ++y)
            for (int64_t x = 0; x < out_w; ++x) {
                const int64_t sx = hflip ? (ox + out_w - 1 - x) : (ox + x);
                const double* src = clip.data.data() + ((t * h + oy + y) * w + sx) * 3;
                double* dst = out.data.data() + ((t * out_h + y) * out_w + x) * 3;
                dst[0] = src[0];
                dst[1] = src[1];
                dst[2] = src[2];
            }
    return out;
}

Tensor make_source_clip(const SyntheticTask& task, uint64_t clip_seed, Direction label) {
    task.validate();
    Rng rng(mix_seed(task.seed, clip_seed, static_cast<uint64_t>(label) + 101));
    const int64_t sh = task.source_height();
    const int64_t sw = task.source_width();
    const int64_t travel = task.speed * (task.frames - 1);
    int64_t dy, dx;
    direction_delta(label, &dy, &dx);

    // start uniformly inside the band that keeps the whole trajectory visible
    const int64_t y_lo = (dy < 0) ? travel : 0;
    const int64_t y_hi = sh - task.square - ((dy > 0) ? travel : 0);
    const int64_t x_lo = (dx < 0) ? travel : 0;
    const int64_t x_hi = sw - task.square - ((dx > 0) ? travel : 0);
    const int64_t y0 = rng.uniform_int(y_lo, y_hi);
    const int64_t x0 = rng.uniform_int(x_lo, x_hi);

    return render_clip(task, y0, x0, label, rng.next_u64());
}

Tensor make_clip(const SyntheticTask& task, uint64_t clip_seed, Direction label) {
    Tensor source = make_source_clip(task, clip_seed, label);
    return crop_clip(source, task.crop_margin, task.crop_margin, task.height, task.width);
}

void SamplingSpec::validate() const {
    TS_CONFIG_CHECK(frames >= 1, "sampling frames must be >= 1");
    TS_CONFIG_CHECK(step >= 1, "sampling step must be >= 1");
    TS_CONFIG_CHECK(views >= 1, "views must be >= 1");
    TS_CONFIG_CHECK(crops >= 1 && crops <= 3, "crops must be 1, 2 or 3");
}

Tensor sample_clip(const Tensor& source, const SamplingSpec& spec, int64_t start) {
    spec.validate();
    TS_CHECK(source.rank() == 4 && source.shape[3] == 3, "sample_clip expects [F,h,w,3], got ",
             shape_str(source.shape));
    const int64_t f = source.shape[0];
    const int64_t need = start + (spec.frames - 1) * spec.step;
    TS_CHECK(start >= 0 && need < f, "sampling start ", start, " with T=", spec.frames,
             " S=", spec.step, " needs frame ", need, " but source has ", f);
    const int64_t h = source.shape[1];
    const int64_t w = source.shape[2];
    Tensor out({spec.frames, h, w, 3});
    const int64_t frame_elems = h * w * 3;
    for (int64_t i = 0; i < spec.frames; ++i)
        std::copy_n(source.data.data() + (start + i * spec.step) * frame_elems, frame_elems,
                    out.data.data() + i * frame_elems);
    return out;
}

std::vector<int64_t> view_starts(int64_t source_frames, const SamplingSpec& spec) {
    spec.validate();
    const int64_t span = (spec.frames - 1) * spec.step + 1;
    TS_CHECK(span <= source_frames, "source of ", source_frames, " frames too short for T=",
             spec.frames, " S=", spec.step);
    const int64_t range = source_frames - span;
    std::vector<int64_t> starts;
    if (spec.views == 1) {
        starts.push_back(range / 2);
        return starts;
    }
    const int64_t stride = range / (spec.views - 1);
    for (int64_t i = 0; i < spec.views; ++i) starts.push_back(i * stride);
    return starts;
}

}  // namespace tokshift
