#include "tokshift/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <ostream>

namespace tokshift {

namespace {
constexpr uint64_t kInitTag = 0x696e6974;
constexpr uint64_t kShuffleTag = 0x73687566;
constexpr uint64_t kAugTag = 0x61756721;
constexpr uint64_t kTrainTag = 0x7472;
constexpr uint64_t kValTag = 0x76616c;
}  // namespace

void TrainSchedule::validate() const {
    TS_CONFIG_CHECK(epochs >= 1, "epochs must be >= 1");
    TS_CONFIG_CHECK(base_lr >= 0.0, "base_lr must be >= 0");
    TS_CONFIG_CHECK(momentum >= 0.0 && momentum < 1.0, "momentum must be in [0,1)");
    TS_CONFIG_CHECK(decay_factor > 0.0, "decay_factor must be > 0");
    TS_CONFIG_CHECK(batch_size >= 1, "batch_size must be >= 1");
    TS_CONFIG_CHECK(train_clips >= 1 && val_clips >= 1, "dataset sizes must be >= 1");
    for (size_t i = 0; i < milestones.size(); ++i) {
        TS_CONFIG_CHECK(milestones[i] < epochs, "milestone ", milestones[i],
                        " must be < epochs ", epochs);
        TS_CONFIG_CHECK(i == 0 || milestones[i] > milestones[i - 1],
                        "milestones must be strictly increasing");
    }
}

double TrainSchedule::lr_at(int64_t epoch) const {
    double lr = base_lr;
    for (int64_t m : milestones)
        if (epoch >= m) lr *= decay_factor;
    return lr;
}

double cross_entropy(const Tensor& logits, int64_t label, Tensor* dlogits) {
    TS_CHECK(logits.rank() == 1, "cross_entropy expects rank-1 logits, got ",
             shape_str(logits.shape));
    const int64_t n = logits.shape[0];
    TS_CHECK(label >= 0 && label < n, "label ", label, " out of range for ", n, " classes");
    double mx = logits.data[0];
    for (double v : logits.data) mx = std::max(mx, v);
    double sum = 0.0;
    for (double v : logits.data) sum += std::exp(v - mx);
    const double lse = mx + std::log(sum);
    const double loss = lse - logits.data[static_cast<size_t>(label)];
    if (dlogits) {
        *dlogits = Tensor({n});
        for (int64_t i = 0; i < n; ++i)
            dlogits->data[static_cast<size_t>(i)] = std::exp(logits.data[static_cast<size_t>(i)] - lse);
        dlogits->data[static_cast<size_t>(label)] -= 1.0;
    }
    return loss;
}

ClipSource synthetic_source(const SyntheticTask& task, int64_t clips, uint64_t split_tag) {
    task.validate();
    TS_CONFIG_CHECK(clips >= 1, "clip count must be >= 1");
    ClipSource src;
    src.size = clips;
    src.get = [task, split_tag](int64_t idx) {
        LabeledClip lc;
        lc.label = idx % kDirectionCount;  // balanced by construction
        lc.video = make_clip(task, mix_seed(split_tag, static_cast<uint64_t>(idx)),
                             static_cast<Direction>(lc.label));
        return lc;
    };
    return src;
}

namespace {

// Fisher-Yates with the project Rng so the order is platform-stable.
void shuffle_indices(std::vector<int64_t>& idx, Rng& rng) {
    for (int64_t i = static_cast<int64_t>(idx.size()) - 1; i > 0; --i)
        std::swap(idx[static_cast<size_t>(i)],
                  idx[static_cast<size_t>(rng.uniform_int(0, i))]);
}

int64_t argmax(const Tensor& logits) {
    int64_t best = 0;
    for (int64_t i = 1; i < logits.numel(); ++i)
        if (logits.data[static_cast<size_t>(i)] > logits.data[static_cast<size_t>(best)]) best = i;
    return best;
}

// label rank under the documented tie-break (ties go to the lower index)
int64_t logit_rank(const Tensor& logits, int64_t label) {
    const double lv = logits.data[static_cast<size_t>(label)];
    int64_t rank = 0;
    for (int64_t i = 0; i < logits.numel(); ++i) {
        const double v = logits.data[static_cast<size_t>(i)];
        if (v > lv || (v == lv && i < label)) ++rank;
    }
    return rank;
}

// one augmented training example: random crop window + horizontal flip with
// the left/right label remap
LabeledClip train_example(const SyntheticTask& task, uint64_t seed, int64_t epoch, int64_t idx) {
    LabeledClip lc;
    lc.label = idx % kDirectionCount;
    Tensor source = make_source_clip(task,
                                     mix_seed(mix_seed(seed, kTrainTag),
                                              static_cast<uint64_t>(idx)),
                                     static_cast<Direction>(lc.label));
    Rng aug(mix_seed(mix_seed(seed, kAugTag), static_cast<uint64_t>(epoch),
                     static_cast<uint64_t>(idx)));
    const int64_t oy = aug.uniform_int(0, 2 * task.crop_margin);
    const int64_t ox = aug.uniform_int(0, 2 * task.crop_margin);
    const bool flip = aug.uniform() < 0.5;
    lc.video = crop_clip(source, oy, ox, task.height, task.width, flip);
    if (flip) {
        if (lc.label == static_cast<int64_t>(Direction::left))
            lc.label = static_cast<int64_t>(Direction::right);
        else if (lc.label == static_cast<int64_t>(Direction::right))
            lc.label = static_cast<int64_t>(Direction::left);
    }
    return lc;
}

void metrics_line(std::ostream* log, int64_t epoch, const char* split, double loss, double top1) {
    if (!log) return;
    char buf[96];
    std::snprintf(buf, sizeof(buf), "%lld\t%s\t%.6f\t%.6f\n", static_cast<long long>(epoch),
                  split, loss, top1);
    *log << buf;
    log->flush();
}

}  // namespace

double top_k_accuracy(const std::vector<Tensor>& logits, const std::vector<int64_t>& labels,
                      int64_t k) {
    TS_CHECK(!logits.empty(), "top_k_accuracy rejects an empty dataset");
    TS_CHECK(logits.size() == labels.size(), "logits/labels size mismatch");
    TS_CHECK(k >= 1 && k <= logits.front().numel(), "k=", k, " out of range for ",
             logits.front().numel(), " classes");
    int64_t correct = 0;
    for (size_t i = 0; i < logits.size(); ++i)
        if (logit_rank(logits[i], labels[i]) < k) ++correct;
    return static_cast<double>(correct) / static_cast<double>(logits.size());
}

EvalResult evaluate(const Parameters& params, const ModelConfig& cfg, const ClipSource& data,
                    int64_t k) {
    TS_CHECK(data.size >= 1, "evaluate rejects an empty dataset");
    TS_CHECK(k >= 1 && k <= cfg.classes, "k=", k, " out of range for ", cfg.classes, " classes");
    EvalResult res;
    int64_t top1 = 0, topk = 0;
    ForwardOptions opt;
    opt.retain = Retain::none;
    for (int64_t i = 0; i < data.size; ++i) {
        LabeledClip lc = data.get(i);
        Activations acts = model_forward(lc.video, params, cfg, opt);
        res.loss += cross_entropy(acts.logits, lc.label, nullptr);
        const int64_t rank = logit_rank(acts.logits, lc.label);
        if (rank < 1) ++top1;
        if (rank < k) ++topk;
    }
    res.loss /= static_cast<double>(data.size);
    res.top1 = static_cast<double>(top1) / static_cast<double>(data.size);
    res.topk = static_cast<double>(topk) / static_cast<double>(data.size);
    return res;
}

TrainResult train(const ModelConfig& cfg, const SyntheticTask& task, const TrainSchedule& sched,
                  uint64_t seed, std::ostream* log) {
    cfg.validate();
    task.validate();
    sched.validate();
    TS_CONFIG_CHECK(cfg.frames == task.frames && cfg.height == task.height &&
                        cfg.width == task.width,
                    "model dims [", cfg.frames, ",", cfg.height, ",", cfg.width,
                    "] do not match task dims [", task.frames, ",", task.height, ",", task.width,
                    "]");
    TS_CONFIG_CHECK(cfg.classes == kDirectionCount, "the synthetic task has ", kDirectionCount,
                    " classes, config has ", cfg.classes);

    TrainResult result;
    result.params = Parameters::init(cfg, mix_seed(seed, kInitTag));
    result.params.ensure_grads();
    Parameters velocity = Parameters::zeros(cfg);

    // aligned tensor lists (for_each enumerates both in the same order)
    std::vector<Tensor*> p_list, v_list;
    result.params.for_each([&](const std::string&, Tensor& t) { p_list.push_back(&t); });
    velocity.for_each([&](const std::string&, Tensor& t) { v_list.push_back(&t); });

    ClipSource val = synthetic_source(task, sched.val_clips, mix_seed(seed, kValTag));

    std::vector<int64_t> order(static_cast<size_t>(sched.train_clips));
    std::iota(order.begin(), order.end(), 0);

    for (int64_t epoch = 0; epoch < sched.epochs; ++epoch) {
        const double lr = sched.lr_at(epoch);
        Rng shuffle_rng(mix_seed(seed, kShuffleTag, static_cast<uint64_t>(epoch)));
        shuffle_indices(order, shuffle_rng);

        double epoch_loss = 0.0;
        int64_t epoch_correct = 0;
        int64_t step = 0;
        for (int64_t b = 0; b < sched.train_clips; b += sched.batch_size, ++step) {
            const int64_t batch = std::min(sched.batch_size, sched.train_clips - b);
            result.params.zero_grads();
            for (int64_t i = 0; i < batch; ++i) {
                LabeledClip lc = train_example(task, seed, epoch, order[static_cast<size_t>(b + i)]);
                Activations acts = model_forward(lc.video, result.params, cfg);
                Tensor dlogits;
                const double loss = cross_entropy(acts.logits, lc.label, &dlogits);
                if (!std::isfinite(loss))
                    throw NumericError(cat("loss diverged to non-finite at epoch ", epoch,
                                           ", step ", step, ", clip ", order[static_cast<size_t>(b + i)]));
                epoch_loss += loss;
                if (argmax(acts.logits) == lc.label) ++epoch_correct;
                model_backward(dlogits, acts, result.params);
            }

            // v <- momentum v + mean grad; p <- p - lr v
            const double inv_batch = 1.0 / static_cast<double>(batch);
            for (size_t ti = 0; ti < p_list.size(); ++ti) {
                Tensor& t = *p_list[ti];
                Tensor& v = *v_list[ti];
                for (size_t j = 0; j < t.data.size(); ++j) {
                    v.data[j] = sched.momentum * v.data[j] + t.grad[j] * inv_batch;
                    t.data[j] -= lr * v.data[j];
                }
            }
        }

        EpochMetrics em;
        em.epoch = epoch;
        em.train_loss = epoch_loss / static_cast<double>(sched.train_clips);
        em.train_top1 =
            static_cast<double>(epoch_correct) / static_cast<double>(sched.train_clips);
        metrics_line(log, epoch, "train", em.train_loss, em.train_top1);

        // held-out metrics every fifth epoch and always at the end
        if ((epoch + 1) % 5 == 0 || epoch == sched.epochs - 1) {
            EvalResult ev = evaluate(result.params, cfg, val, std::min<int64_t>(5, cfg.classes));
            em.val_loss = ev.loss;
            em.val_top1 = ev.top1;
            metrics_line(log, epoch, "val", ev.loss, ev.top1);
        }

        result.metrics.push_back(em);
    }
    return result;
}

Tensor multi_view_predict(const Parameters& params, const ModelConfig& cfg, const Tensor& source,
                          const SamplingSpec& spec) {
    spec.validate();
    TS_CHECK(source.rank() == 4 && source.shape[3] == 3, "multi_view expects [F,h,w,3], got ",
             shape_str(source.shape));
    TS_CHECK(spec.frames == cfg.frames, "sampling frames ", spec.frames,
             " do not match model frames ", cfg.frames);
    const int64_t h = source.shape[1];
    const int64_t w = source.shape[2];
    TS_CHECK(h >= cfg.height && w >= cfg.width, "source ", h, "x", w,
             " smaller than model input ", cfg.height, "x", cfg.width);

    std::vector<int64_t> xs;
    const int64_t slack = w - cfg.width;
    switch (spec.crops) {
        case 1: xs = {slack / 2}; break;
        case 2: xs = {0, slack}; break;
        default: xs = {0, slack / 2, slack}; break;
    }
    const int64_t oy = (h - cfg.height) / 2;

    ForwardOptions opt;
    opt.retain = Retain::none;
    Tensor mean({cfg.classes});
    int64_t count = 0;
    for (int64_t start : view_starts(source.shape[0], spec)) {
        Tensor view = sample_clip(source, spec, start);
        for (int64_t ox : xs) {
            Tensor sub = crop_clip(view, oy, ox, cfg.height, cfg.width);
            Activations acts = model_forward(sub, params, cfg, opt);
            for (int64_t c = 0; c < cfg.classes; ++c)
                mean.data[static_cast<size_t>(c)] += acts.logits.data[static_cast<size_t>(c)];
            ++count;
        }
    }
    for (double& v : mean.data) v /= static_cast<double>(count);
    return mean;
}

}  // namespace tokshift
