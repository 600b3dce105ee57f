#pragma once

#include <functional>
#include <iosfwd>
#include <optional>

#include "tokshift/model.hpp"
#include "tokshift/synthetic.hpp"

namespace tokshift {

struct TrainSchedule {
    int64_t epochs = 30;
    double base_lr = 0.01;
    double momentum = 0.9;
    double decay_factor = 0.1;
    std::vector<int64_t> milestones = {20, 25};  // strictly increasing, < epochs
    int64_t batch_size = 16;
    int64_t train_clips = 2048;
    int64_t val_clips = 512;

    void validate() const;
    double lr_at(int64_t epoch) const;  // base_lr * decay^(milestones passed)
};

// Stable softmax cross-entropy; optionally writes d(loss)/d(logits).
double cross_entropy(const Tensor& logits, int64_t label, Tensor* dlogits = nullptr);

struct LabeledClip {
    Tensor video;
    int64_t label = 0;
};

// Lazy clip source so datasets never need to be materialized.
struct ClipSource {
    int64_t size = 0;
    std::function<LabeledClip(int64_t)> get;
};

// Balanced (label = index mod 4) deterministic source over the task. The
// split tag separates train/val seed spaces.
ClipSource synthetic_source(const SyntheticTask& task, int64_t clips, uint64_t split_tag);

struct EpochMetrics {
    int64_t epoch = 0;
    double train_loss = 0.0;
    double train_top1 = 0.0;
    std::optional<double> val_loss;
    std::optional<double> val_top1;
};

struct TrainResult {
    Parameters params;
    std::vector<EpochMetrics> metrics;
};

// SGD with momentum on softmax cross-entropy. Deterministic for a fixed seed
// (fixed init, fixed shuffle order, fixed augmentation draws). Augmentation:
// random spatial crop + horizontal flip with left/right label remap. lr is
// multiplied by decay_factor at each milestone epoch. Throws NumericError if
// the loss diverges to NaN, naming the offending step. Metrics lines
// ("epoch<TAB>split<TAB>loss<TAB>top1") go to log when given.
TrainResult train(const ModelConfig& cfg, const SyntheticTask& task, const TrainSchedule& sched,
                  uint64_t seed, std::ostream* log = nullptr);

// Fraction of samples whose label is among the k largest logits; ties broken
// toward the lower class index.
double top_k_accuracy(const std::vector<Tensor>& logits, const std::vector<int64_t>& labels,
                      int64_t k);

struct EvalResult {
    double loss = 0.0;
    double top1 = 0.0;
    double topk = 0.0;
};

EvalResult evaluate(const Parameters& params, const ModelConfig& cfg, const ClipSource& data,
                    int64_t k);

// Mean of per-sub-clip logits over views x crops sub-clips of a long source
// clip [F, h, w, 3]; crops are {left, center, right} spatial windows.
Tensor multi_view_predict(const Parameters& params, const ModelConfig& cfg, const Tensor& source,
                          const SamplingSpec& spec);

}  // namespace tokshift
