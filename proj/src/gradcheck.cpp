#include "tokshift/gradcheck.hpp"

#include <cmath>

#include "tokshift/model.hpp"
#include "tokshift/shift.hpp"
#include "tokshift/train.hpp"

namespace tokshift {

GradCheckReport grad_check(const std::string& op, const ScalarFn& f, const GradFn& analytic,
                           const std::vector<Tensor>& inputs, double eps) {
    TS_CHECK(eps > 0.0 && eps <= 1e-2, "grad_check eps must be in (0, 1e-2], got ", eps);
    TS_CHECK(!inputs.empty(), "grad_check needs at least one input");

    GradCheckReport rep;
    rep.op = op;

    std::vector<Tensor> work = inputs;
    const std::vector<Tensor> grads = analytic(work);
    TS_CHECK(grads.size() == work.size(), "analytic gradient count ", grads.size(),
             " does not match input count ", work.size());

    int64_t flat_base = 0;
    for (size_t i = 0; i < work.size(); ++i) {
        TS_CHECK(grads[i].shape == work[i].shape, "analytic gradient shape ",
                 shape_str(grads[i].shape), " does not match input ", shape_str(work[i].shape));
        for (size_t j = 0; j < work[i].data.size(); ++j) {
            const double saved = work[i].data[j];
            work[i].data[j] = saved + eps;
            const double fp = f(work);
            work[i].data[j] = saved - eps;
            const double fm = f(work);
            work[i].data[j] = saved;
            const double numeric = (fp - fm) / (2.0 * eps);
            const double a = grads[i].data[j];
            const double rel =
                std::fabs(a - numeric) / std::max({1.0, std::fabs(a), std::fabs(numeric)});
            if (rel > rep.max_rel_err) {
                rep.max_rel_err = rel;
                rep.worst_index = flat_base + static_cast<int64_t>(j);
            }
        }
        flat_base += work[i].numel();
    }
    rep.nondifferentiable = rep.max_rel_err > 0.1;
    return rep;
}

namespace {

Tensor random_tensor(std::vector<int64_t> dims, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Tensor t(std::move(dims));
    for (double& v : t.data) v = rng.uniform(lo, hi);
    return t;
}

double weighted_sum(const Tensor& t, const Tensor& w) {
    double s = 0.0;
    for (size_t i = 0; i < t.data.size(); ++i) s += t.data[i] * w.data[i];
    return s;
}

// 0.5 * ||shifted||^2 puts a simple quadratic behind the (linear) shift
template <typename Fwd, typename Adj>
GradCheckReport check_shift(const std::string& name, Fwd fwd, Adj adj, const Tensor& input,
                            int64_t n_back, int64_t n_forth) {
    ScalarFn f = [&](const std::vector<Tensor>& xs) {
        Tensor s = fwd(xs[0], n_back, n_forth);
        double acc = 0.0;
        for (double v : s.data) acc += 0.5 * v * v;
        return acc;
    };
    GradFn g = [&](const std::vector<Tensor>& xs) {
        Tensor s = fwd(xs[0], n_back, n_forth);
        return std::vector<Tensor>{adj(s, n_back, n_forth)};
    };
    return grad_check(name, f, g, {input}, 1e-5);
}

ModelConfig tiny_config() {
    ModelConfig cfg;
    cfg.frames = 2;
    cfg.height = 8;
    cfg.width = 8;
    cfg.patch = 4;
    cfg.embed_dim = 8;
    cfg.depth = 1;
    cfg.heads = 2;
    cfg.classes = 3;
    cfg.shift.variant = ShiftVariant::token;
    cfg.shift.frac_back = 0.25;
    cfg.shift.frac_forth = 0.25;
    return cfg;
}

std::vector<Tensor> collect_params(const Parameters& p) {
    std::vector<Tensor> out;
    p.for_each([&](const std::string&, const Tensor& t) { out.push_back(t); });
    return out;
}

void assign_params(Parameters& p, const std::vector<Tensor>& values) {
    size_t i = 0;
    p.for_each([&](const std::string&, Tensor& t) { t.data = values[i++].data; });
}

GradCheckReport check_model_end_to_end() {
    const ModelConfig cfg = tiny_config();
    Rng rng(mix_seed(2024, 0xe2e));
    Tensor video = random_tensor({cfg.frames, cfg.height, cfg.width, 3}, rng, 0.0, 1.0);
    Parameters params = Parameters::init(cfg, 7);
    const std::vector<Tensor> inputs = collect_params(params);
    const int64_t label = 1;

    ScalarFn f = [&](const std::vector<Tensor>& xs) {
        Parameters p = Parameters::zeros(cfg);
        assign_params(p, xs);
        ForwardOptions opt;
        opt.retain = Retain::none;
        Activations acts = model_forward(video, p, cfg, opt);
        return cross_entropy(acts.logits, label, nullptr);
    };
    GradFn g = [&](const std::vector<Tensor>& xs) {
        Parameters p = Parameters::zeros(cfg);
        assign_params(p, xs);
        Activations acts = model_forward(video, p, cfg);
        Tensor dlogits;
        cross_entropy(acts.logits, label, &dlogits);
        model_backward(dlogits, acts, p);
        std::vector<Tensor> grads;
        p.for_each([&](const std::string&, Tensor& t) {
            Tensor gt(t.shape);
            gt.data = t.grad;
            grads.push_back(std::move(gt));
        });
        return grads;
    };
    return grad_check("model_end_to_end", f, g, inputs, 1e-5);
}

}  // namespace

std::vector<GradCheckReport> gradcheck_suite(bool inject_sign_bug) {
    std::vector<GradCheckReport> reports;
    Rng rng(mix_seed(2024, 0x6763));

    {
        Tensor a = random_tensor({3, 3}, rng);
        Tensor b = random_tensor({3, 3}, rng);
        Tensor w = random_tensor({3, 3}, rng);
        ScalarFn f = [&](const std::vector<Tensor>& xs) {
            return weighted_sum(matmul(xs[0], xs[1]), w);
        };
        GradFn g = [&](const std::vector<Tensor>& xs) {
            MatmulGrads mg = matmul_backward(xs[0], xs[1], w);
            return std::vector<Tensor>{mg.da, mg.db};
        };
        reports.push_back(grad_check("matmul", f, g, {a, b}, 1e-5));
    }
    {
        Tensor x = random_tensor({2, 5}, rng);
        Tensor w = random_tensor({2, 5}, rng);
        ScalarFn f = [&](const std::vector<Tensor>& xs) {
            return weighted_sum(softmax_lastdim(xs[0]), w);
        };
        GradFn g = [&](const std::vector<Tensor>& xs) {
            return std::vector<Tensor>{softmax_lastdim_backward(softmax_lastdim(xs[0]), w)};
        };
        reports.push_back(grad_check("softmax", f, g, {x}, 1e-5));
    }
    {
        Tensor x = random_tensor({3, 6}, rng);
        Tensor gamma = random_tensor({6}, rng, 0.5, 1.5);
        Tensor beta = random_tensor({6}, rng);
        Tensor w = random_tensor({3, 6}, rng);
        const double eps = 1e-6;
        ScalarFn f = [&](const std::vector<Tensor>& xs) {
            return weighted_sum(layer_norm(xs[0], xs[1], xs[2], eps), w);
        };
        GradFn g = [&](const std::vector<Tensor>& xs) {
            LayerNormGrads lg = layer_norm_backward(xs[0], xs[1], eps, w);
            return std::vector<Tensor>{lg.dx, lg.dgamma, lg.dbeta};
        };
        reports.push_back(grad_check("layer_norm", f, g, {x, gamma, beta}, 1e-5));
    }
    {
        Tensor x = random_tensor({10}, rng);
        Tensor w = random_tensor({10}, rng);
        const double sign = inject_sign_bug ? -1.0 : 1.0;
        ScalarFn f = [&](const std::vector<Tensor>& xs) { return weighted_sum(gelu(xs[0]), w); };
        GradFn g = [&, sign](const std::vector<Tensor>& xs) {
            return std::vector<Tensor>{scale(gelu_backward(xs[0], w), sign)};
        };
        reports.push_back(grad_check("gelu", f, g, {x}, 1e-5));
    }
    {
        Tensor a = random_tensor({7}, rng);
        Tensor b = random_tensor({7}, rng);
        Tensor w = random_tensor({7}, rng);
        ScalarFn f = [&](const std::vector<Tensor>& xs) {
            return weighted_sum(add(xs[0], xs[1]), w);
        };
        GradFn g = [&](const std::vector<Tensor>&) { return std::vector<Tensor>{w, w}; };
        reports.push_back(grad_check("add", f, g, {a, b}, 1e-5));
    }
    {
        Tensor x = random_tensor({7}, rng);
        Tensor w = random_tensor({7}, rng);
        const double s = 1.7;
        ScalarFn f = [&](const std::vector<Tensor>& xs) { return weighted_sum(scale(xs[0], s), w); };
        GradFn g = [&](const std::vector<Tensor>&) { return std::vector<Tensor>{scale(w, s)}; };
        reports.push_back(grad_check("scale", f, g, {x}, 1e-5));
    }
    {
        Tensor a = random_tensor({2, 3}, rng);
        Tensor b = random_tensor({2, 2}, rng);
        Tensor w = random_tensor({2, 5}, rng);
        ScalarFn f = [&](const std::vector<Tensor>& xs) {
            return weighted_sum(concat({xs[0], xs[1]}, 1), w);
        };
        GradFn g = [&](const std::vector<Tensor>&) {
            std::vector<Tensor> parts = concat_backward(w, 1, {3, 2});
            return parts;
        };
        reports.push_back(grad_check("concat", f, g, {a, b}, 1e-5));
    }
    {
        Tensor x = random_tensor({2, 5}, rng);
        Tensor w0 = random_tensor({2, 3}, rng);
        Tensor w1 = random_tensor({2, 2}, rng);
        ScalarFn f = [&](const std::vector<Tensor>& xs) {
            std::vector<Tensor> parts = split(xs[0], 1, {3, 2});
            return weighted_sum(parts[0], w0) + weighted_sum(parts[1], w1);
        };
        GradFn g = [&](const std::vector<Tensor>&) {
            return std::vector<Tensor>{split_backward({w0, w1}, 1)};
        };
        reports.push_back(grad_check("split", f, g, {x}, 1e-5));
    }
    {
        Tensor x = random_tensor({2, 6}, rng);
        Tensor w = random_tensor({3, 4}, rng);
        ScalarFn f = [&](const std::vector<Tensor>& xs) {
            return weighted_sum(reshape(xs[0], {3, 4}), w);
        };
        GradFn g = [&](const std::vector<Tensor>&) {
            return std::vector<Tensor>{reshape(w, {2, 6})};
        };
        reports.push_back(grad_check("reshape", f, g, {x}, 1e-5));
    }
    {
        Tensor x = random_tensor({3, 4}, rng);
        Tensor w = random_tensor({4, 3}, rng);
        ScalarFn f = [&](const std::vector<Tensor>& xs) {
            return weighted_sum(transpose_last2(xs[0]), w);
        };
        GradFn g = [&](const std::vector<Tensor>&) {
            return std::vector<Tensor>{transpose_last2(w)};
        };
        reports.push_back(grad_check("transpose", f, g, {x}, 1e-5));
    }

    reports.push_back(check_shift(
        "token_shift", [](const Tensor& c, int64_t nb, int64_t nf) { return token_shift(c, nb, nf); },
        [](const Tensor& g, int64_t nb, int64_t nf) { return token_shift_adjoint(g, nb, nf); },
        random_tensor({4, 6}, rng), 2, 1));
    reports.push_back(check_shift(
        "temporal_shift",
        [](const Tensor& z, int64_t nb, int64_t nf) { return temporal_shift(z, nb, nf); },
        [](const Tensor& g, int64_t nb, int64_t nf) { return temporal_shift_adjoint(g, nb, nf); },
        random_tensor({3, 2, 5}, rng), 1, 2));
    reports.push_back(check_shift(
        "patch_shift",
        [](const Tensor& z, int64_t nb, int64_t nf) { return patch_shift(z, nb, nf); },
        [](const Tensor& g, int64_t nb, int64_t nf) { return patch_shift_adjoint(g, nb, nf); },
        random_tensor({3, 3, 4}, rng), 1, 1));

    reports.push_back(check_model_end_to_end());
    return reports;
}

}  // namespace tokshift
