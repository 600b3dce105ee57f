// tokshift command-line tool: cost reports, toy training/eval, shift demo,
// attention dumps and gradient checks. Exit codes: 0 success, 1 usage/config
// error, 2 runtime numerical failure.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "tokshift/checkpoint.hpp"
#include "tokshift/cost.hpp"
#include "tokshift/gradcheck.hpp"
#include "tokshift/probes.hpp"
#include "tokshift/runconfig.hpp"
#include "tokshift/train.hpp"

namespace {

using namespace tokshift;

constexpr int kExitOk = 0;
constexpr int kExitConfig = 1;
constexpr int kExitNumeric = 2;

struct CommonArgs {
    std::string config_path;
    std::string checkpoint_path;
    int64_t seed = -1;  // -1: keep the config's seed
    std::string out_dir;
};

RunConfig load_config(const CommonArgs& args) {
    if (args.config_path.empty()) throw ConfigError("--config PATH is required");
    RunConfig rc = parse_run_config(args.config_path);
    if (args.seed >= 0) {
        rc.seed = static_cast<uint64_t>(args.seed);
        rc.task.seed = rc.seed;
    }
    if (!args.out_dir.empty()) rc.out_dir = args.out_dir;
    return rc;
}

void print_metrics_line(std::ostream& os, const char* tag, const EvalResult& ev) {
    char buf[96];
    std::snprintf(buf, sizeof(buf), "%s\tval\t%.6f\t%.6f\n", tag, ev.loss, ev.top1);
    os << buf;
}

int cmd_cost(const CommonArgs& args) {
    RunConfig rc = load_config(args);
    const CostReport report = count_flops(rc.model);
    std::cout << report.table();
    char buf[160];
    std::snprintf(buf, sizeof(buf), "words %lld\n", word_count(rc.model));
    std::cout << buf;
    std::snprintf(buf, sizeof(buf), "GFLOPs x views: %.2f x %lld\n", report.gflops_per_view(),
                  static_cast<long long>(rc.sampling.views * rc.sampling.crops));
    std::cout << buf;
    std::cout << "machine-readable:\n" << report.machine_lines();
    return kExitOk;
}

int cmd_train(const CommonArgs& args) {
    RunConfig rc = load_config(args);
    std::filesystem::create_directories(rc.out_dir);
    const std::string metrics_path = rc.out_dir + "/metrics.tsv";
    std::ofstream metrics(metrics_path, std::ios::app);
    TS_CONFIG_CHECK(metrics.good(), "cannot open ", metrics_path);

    struct Tee : std::ostream, std::streambuf {
        std::ostream *a, *b;
        Tee(std::ostream& x, std::ostream& y) : std::ostream(this), a(&x), b(&y) {}
        int overflow(int c) override {
            if (c != EOF) {
                a->put(static_cast<char>(c));
                b->put(static_cast<char>(c));
            }
            return c;
        }
        int sync() override {
            a->flush();
            b->flush();
            return 0;
        }
    } tee(std::cout, metrics);

    TrainResult result = train(rc.model, rc.task, rc.schedule, rc.seed, &tee);

    const std::string ckpt = rc.out_dir + "/model.tksf";
    save_checkpoint(ckpt, result.params);
    std::cout << "checkpoint " << ckpt << "\n";

    // the reported final metric comes from the saved (32-bit rounded)
    // weights so a later eval of the checkpoint reproduces it exactly
    Parameters reloaded = load_checkpoint(ckpt, rc.model);
    ClipSource val = synthetic_source(rc.task, rc.schedule.val_clips, mix_seed(rc.seed, 0x76616c));
    EvalResult ev = evaluate(reloaded, rc.model, val, std::min<int64_t>(5, rc.model.classes));
    print_metrics_line(std::cout, "final", ev);
    print_metrics_line(metrics, "final", ev);
    return kExitOk;
}

int cmd_eval(const CommonArgs& args) {
    RunConfig rc = load_config(args);
    Parameters params = args.checkpoint_path.empty()
                            ? Parameters::init(rc.model, mix_seed(rc.seed, 0x696e6974))
                            : load_checkpoint(args.checkpoint_path, rc.model);
    ClipSource val = synthetic_source(rc.task, rc.schedule.val_clips, mix_seed(rc.seed, 0x76616c));
    const int64_t k = std::min<int64_t>(5, rc.model.classes);
    EvalResult ev = evaluate(params, rc.model, val, k);
    print_metrics_line(std::cout, "final", ev);
    char buf[96];
    std::snprintf(buf, sizeof(buf), "top1 %.6f\ntop%lld %.6f\n", ev.top1,
                  static_cast<long long>(k), ev.topk);
    std::cout << buf;
    return kExitOk;
}

int cmd_shift_demo(int64_t frames, int64_t dim, int64_t n_back, int64_t n_forth) {
    Tensor c({frames, dim});
    for (int64_t i = 0; i < c.numel(); ++i) c.data[static_cast<size_t>(i)] = static_cast<double>(i + 1);
    Tensor shifted = token_shift(c, n_back, n_forth);

    auto print_matrix = [&](const char* title, const Tensor& m) {
        std::cout << title << "\n";
        for (int64_t t = 0; t < m.shape[0]; ++t) {
            for (int64_t j = 0; j < m.shape[1]; ++j)
                std::cout << (j ? " " : "  ") << m.at({t, j});
            std::cout << "\n";
        }
    };
    std::cout << "token shift: T=" << frames << " D=" << dim << " back=" << n_back
              << " forth=" << n_forth << "\n";
    print_matrix("before:", c);
    print_matrix("after:", shifted);
    std::cout << "(first " << n_back << " channels take row t-1, last " << n_forth
              << " take row t+1, zeros at the clip edges)\n";
    return kExitOk;
}

int cmd_attn(const CommonArgs& args, int64_t layer, int64_t clip_seed) {
    RunConfig rc = load_config(args);
    Parameters params = args.checkpoint_path.empty()
                            ? Parameters::init(rc.model, mix_seed(rc.seed, 0x696e6974))
                            : load_checkpoint(args.checkpoint_path, rc.model);
    if (layer < 0) layer = rc.model.depth - 1;

    LabeledClip clip = synthetic_source(rc.task, 4, mix_seed(rc.seed, 0x76616c))
                           .get(clip_seed % 4);
    ForwardOptions opt;
    opt.retain = Retain::attention;
    opt.attention_layer = layer;
    Activations acts = model_forward(clip.video, params, rc.model, opt);
    AttentionDump dump = attention_map(acts, layer);

    std::filesystem::create_directories(rc.out_dir);
    write_heatmap_ppms(dump, rc.out_dir, "attn_layer" + std::to_string(layer));

    // machine-readable raw map: frame<TAB>row<TAB>w0<TAB>w1...
    const std::string raw_path = rc.out_dir + "/attn_layer" + std::to_string(layer) + ".tsv";
    std::ofstream raw(raw_path);
    TS_CONFIG_CHECK(raw.good(), "cannot open ", raw_path);
    const int64_t words = dump.head_mean.shape[1];
    char num[32];
    for (int64_t t = 0; t < dump.head_mean.shape[0]; ++t)
        for (int64_t r = 0; r < words; ++r) {
            raw << t << "\t" << r;
            for (int64_t c = 0; c < words; ++c) {
                std::snprintf(num, sizeof(num), "%.12f", dump.head_mean.at({t, r, c}));
                raw << "\t" << num;
            }
            raw << "\n";
        }
    std::cout << "wrote " << dump.head_mean.shape[0] << " heatmaps ("
              << rc.model.height / rc.model.patch << "x" << rc.model.width / rc.model.patch
              << ") and " << raw_path << "\n";
    return kExitOk;
}

int cmd_gradcheck(bool inject_sign_bug) {
    const std::vector<GradCheckReport> reports = gradcheck_suite(inject_sign_bug);
    bool all_pass = true;
    std::printf("%-18s %-12s %s\n", "op", "max rel err", "status");
    for (const auto& r : reports) {
        const bool ok = r.pass(1e-5);
        all_pass = all_pass && ok;
        std::printf("%-18s %-12.3e %s%s\n", r.op.c_str(), r.max_rel_err, ok ? "pass" : "FAIL",
                    r.nondifferentiable ? " (oracle disagreement > 0.1)" : "");
    }
    if (!all_pass) {
        std::printf("gradient check FAILED\n");
        return kExitNumeric;
    }
    std::printf("all gradient checks passed\n");
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"TokShift video-transformer laboratory"};
    app.require_subcommand(1);

    CommonArgs args;
    int64_t demo_frames = 3, demo_dim = 4, demo_back = 1, demo_forth = 1;
    int64_t attn_layer = -1, attn_clip_seed = 0;
    bool inject_sign_bug = false;

    auto add_common = [&](CLI::App* cmd, bool with_checkpoint) {
        cmd->add_option("--config", args.config_path, "run configuration file");
        cmd->add_option("--seed", args.seed, "override the config seed");
        cmd->add_option("--out", args.out_dir, "override the output directory");
        if (with_checkpoint)
            cmd->add_option("--checkpoint", args.checkpoint_path, "TKSF checkpoint path");
    };

    CLI::App* cost = app.add_subcommand("cost", "analytic parameter/FLOP/word-count report");
    add_common(cost, false);
    CLI::App* train_cmd = app.add_subcommand("train", "train on the synthetic motion task");
    add_common(train_cmd, false);
    CLI::App* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on held-out clips");
    add_common(eval_cmd, true);
    CLI::App* demo = app.add_subcommand("shift-demo", "print a worked token-shift example");
    demo->add_option("--frames", demo_frames, "rows T");
    demo->add_option("--dim", demo_dim, "channels D");
    demo->add_option("--back", demo_back, "channels shifted back");
    demo->add_option("--forth", demo_forth, "channels shifted forth");
    CLI::App* attn = app.add_subcommand("attn", "emit attention heatmaps as PPM images");
    add_common(attn, true);
    attn->add_option("--layer", attn_layer, "encoder layer (default: last)");
    attn->add_option("--clip-seed", attn_clip_seed, "which held-out clip to probe");
    CLI::App* gc = app.add_subcommand("gradcheck", "finite-difference check of every backward");
    gc->add_flag("--inject-sign-bug", inject_sign_bug,
                 "testing fixture: flip one analytic gradient sign");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return e.get_exit_code() == 0 ? kExitOk : kExitConfig;
    }

    try {
        if (cost->parsed()) return cmd_cost(args);
        if (train_cmd->parsed()) return cmd_train(args);
        if (eval_cmd->parsed()) return cmd_eval(args);
        if (demo->parsed()) return cmd_shift_demo(demo_frames, demo_dim, demo_back, demo_forth);
        if (attn->parsed()) return cmd_attn(args, attn_layer, attn_clip_seed);
        if (gc->parsed()) return cmd_gradcheck(inject_sign_bug);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitNumeric;
    }
    return kExitConfig;
}
