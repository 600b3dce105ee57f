#include <doctest.h>

#include <cmath>
#include <set>

#include "tokshift/gradcheck.hpp"
#include "tokshift/tensor.hpp"

using namespace tokshift;

namespace {
Tensor rand_tensor(std::vector<int64_t> dims, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Tensor t(std::move(dims));
    for (double& v : t.data) v = rng.uniform(lo, hi);
    return t;
}
}  // namespace

TEST_CASE("matmul: identity, annihilator and hand-expanded product") {
    Tensor eye({2, 2}, {1, 0, 0, 1});
    Tensor b({2, 2}, {3, 4, 5, 6});
    CHECK(matmul(eye, b).data == std::vector<double>{3, 4, 5, 6});

    Tensor z23({2, 3});
    Tensor b32({3, 2}, {1, 2, 3, 4, 5, 6});
    CHECK(matmul(z23, b32).data == std::vector<double>{0, 0, 0, 0});

    Tensor a({2, 2}, {1, 2, 3, 4});
    Tensor c({2, 2}, {5, 6, 7, 8});
    CHECK(matmul(a, c).data == std::vector<double>{19, 22, 43, 50});
}

TEST_CASE("matmul rejects mismatched shapes, naming both") {
    Tensor a({2, 3}), b({2, 3});
    CHECK_THROWS_WITH_AS(matmul(a, b), doctest::Contains("[2,3]"), Error);
}

TEST_CASE("softmax: symmetry, large-logit stability and closed form") {
    Tensor two({2}, {0, 0});
    auto p = softmax_lastdim(two);
    CHECK(p.data[0] == doctest::Approx(0.5).epsilon(1e-14));

    Tensor big({3}, {1000, 1000, 1000});
    auto pb = softmax_lastdim(big);
    for (double v : pb.data) CHECK(v == doctest::Approx(1.0 / 3).epsilon(1e-14));

    Tensor ln3({2}, {0.0, std::log(3.0)});
    auto pl = softmax_lastdim(ln3);
    CHECK(pl.data[0] == doctest::Approx(0.25).epsilon(1e-14));
    CHECK(pl.data[1] == doctest::Approx(0.75).epsilon(1e-14));
}

TEST_CASE("softmax slices sum to 1 and ignore constant offsets") {
    Rng rng(11);
    Tensor x = rand_tensor({4, 7}, rng, -5.0, 5.0);
    Tensor p = softmax_lastdim(x);
    for (int64_t s = 0; s < 4; ++s) {
        double sum = 0.0;
        for (int64_t j = 0; j < 7; ++j) sum += p.at({s, j});
        CHECK(std::fabs(sum - 1.0) < 1e-12);
    }
    Tensor shifted = x;
    for (int64_t s = 0; s < 4; ++s)
        for (int64_t j = 0; j < 7; ++j) shifted.at({s, j}) += 3.25 * static_cast<double>(s + 1);
    Tensor p2 = softmax_lastdim(shifted);
    for (size_t i = 0; i < p.data.size(); ++i) CHECK(std::fabs(p.data[i] - p2.data[i]) < 1e-12);
}

TEST_CASE("softmax rejects NaN input") {
    Tensor x({2}, {0.0, std::nan("")});
    CHECK_THROWS_AS(softmax_lastdim(x), Error);
}

TEST_CASE("layer_norm: constant slice, unit slice and affine shift") {
    Tensor gamma = Tensor::full({2}, 1.0);
    Tensor beta({2});

    Tensor constant({3, 2}, {4, 4, -1, -1, 0.5, 0.5});
    Tensor out = layer_norm(constant, gamma, beta, 1e-6);
    for (double v : out.data) CHECK(std::fabs(v) < 1e-5);

    Tensor pm({1, 2}, {1, -1});
    Tensor unit = layer_norm(pm, gamma, beta, 0.0);
    CHECK(unit.data[0] == doctest::Approx(1.0).epsilon(1e-14));
    CHECK(unit.data[1] == doctest::Approx(-1.0).epsilon(1e-14));

    Tensor beta5({2}, {5, 5});
    Tensor shifted = layer_norm(constant, gamma, beta5, 1e-6);
    for (double v : shifted.data) CHECK(v == doctest::Approx(5.0).epsilon(1e-9));
}

TEST_CASE("layer_norm is invariant to per-slice affine input rescaling at eps=0") {
    Rng rng(5);
    Tensor x = rand_tensor({5, 8}, rng);
    Tensor gamma = rand_tensor({8}, rng, 0.5, 1.5);
    Tensor beta = rand_tensor({8}, rng);
    Tensor base = layer_norm(x, gamma, beta, 0.0);
    Tensor rescaled = x;
    for (int64_t s = 0; s < 5; ++s) {
        const double alpha = 0.3 + 0.7 * static_cast<double>(s + 1);
        const double shift = rng.uniform(-2.0, 2.0);
        for (int64_t j = 0; j < 8; ++j) rescaled.at({s, j}) = alpha * x.at({s, j}) + shift;
    }
    Tensor again = layer_norm(rescaled, gamma, beta, 0.0);
    for (size_t i = 0; i < base.data.size(); ++i)
        CHECK(std::fabs(base.data[i] - again.data[i]) < 1e-10);
}

TEST_CASE("layer_norm rejects mismatched feature dim") {
    Tensor x({2, 3});
    Tensor g({4}), b({4});
    CHECK_THROWS_AS(layer_norm(x, g, b, 1e-6), Error);
}

TEST_CASE("gelu: zero, asymptote and the normal-CDF value at 1") {
    Tensor x({3}, {0.0, 20.0, 1.0});
    Tensor y = gelu(x);
    CHECK(y.data[0] == 0.0);
    CHECK(y.data[1] == doctest::Approx(20.0).epsilon(1e-12));
    CHECK(y.data[2] == doctest::Approx(0.8413447460685429).epsilon(1e-12));
}

TEST_CASE("elementwise suite round trips") {
    Rng rng(3);
    Tensor x = rand_tensor({3, 4, 5}, rng);

    CHECK(add(x, Tensor({3, 4, 5})).data == x.data);
    CHECK(scale(scale(x, 2.0), 0.5).data == x.data);

    for (int axis : {0, 1, 2}) {
        const int64_t extent = x.shape[static_cast<size_t>(axis)];
        std::vector<int64_t> sizes{1, extent - 1};
        auto parts = split(x, axis, sizes);
        Tensor back = concat(parts, axis);
        CHECK(back.shape == x.shape);
        CHECK(back.data == x.data);  // bit-exact
    }

    Tensor r = reshape(x, {12, 5});
    CHECK(reshape(r, {3, 4, 5}).data == x.data);
    CHECK_THROWS_AS(reshape(x, {7, 7}), Error);

    Tensor tt = transpose_last2(transpose_last2(x));
    CHECK(tt.data == x.data);
}

TEST_CASE("concat rejects off-axis mismatch") {
    Tensor a({2, 3}), b({3, 3});
    CHECK_THROWS_AS(concat({a, b}, 1), Error);
}

TEST_CASE("grad_check: matmul and layer_norm against central differences") {
    Rng rng(17);
    Tensor a = rand_tensor({3, 3}, rng), b = rand_tensor({3, 3}, rng), w = rand_tensor({3, 3}, rng);
    ScalarFn f = [&](const std::vector<Tensor>& xs) {
        const Tensor c = matmul(xs[0], xs[1]);
        double s = 0.0;
        for (size_t i = 0; i < c.data.size(); ++i) s += c.data[i] * w.data[i];
        return s;
    };
    GradFn g = [&](const std::vector<Tensor>& xs) {
        MatmulGrads mg = matmul_backward(xs[0], xs[1], w);
        return std::vector<Tensor>{mg.da, mg.db};
    };
    auto rep = grad_check("matmul", f, g, {a, b}, 1e-5);
    CHECK(rep.max_rel_err < 1e-6);

    Tensor x = rand_tensor({1, 6}, rng), gamma = rand_tensor({6}, rng, 0.5, 1.5),
           beta = rand_tensor({6}, rng), wl = rand_tensor({1, 6}, rng);
    ScalarFn fl = [&](const std::vector<Tensor>& xs) {
        const Tensor y = layer_norm(xs[0], xs[1], xs[2], 1e-6);
        double s = 0.0;
        for (size_t i = 0; i < y.data.size(); ++i) s += y.data[i] * wl.data[i];
        return s;
    };
    GradFn gl = [&](const std::vector<Tensor>& xs) {
        LayerNormGrads lg = layer_norm_backward(xs[0], xs[1], 1e-6, wl);
        return std::vector<Tensor>{lg.dx, lg.dgamma, lg.dbeta};
    };
    CHECK(grad_check("layer_norm", fl, gl, {x, gamma, beta}, 1e-5).max_rel_err < 1e-5);
}

TEST_CASE("grad_check: linear map matches the oracle to roundoff") {
    Tensor x({4}, {0.3, -0.7, 1.1, 0.0});
    ScalarFn f = [](const std::vector<Tensor>& xs) {
        double s = 0.0;
        for (double v : xs[0].data) s += 2.0 * v;
        return s;
    };
    GradFn g = [](const std::vector<Tensor>& xs) {
        return std::vector<Tensor>{Tensor::full(xs[0].shape, 2.0)};
    };
    auto rep = grad_check("linear", f, g, {x}, 1e-5);
    CHECK(rep.max_rel_err < 1e-9);
}

TEST_CASE("grad_check rejects eps outside (0, 1e-2]") {
    Tensor x({1}, {0.0});
    ScalarFn f = [](const std::vector<Tensor>& xs) { return xs[0].data[0]; };
    GradFn g = [](const std::vector<Tensor>& xs) {
        return std::vector<Tensor>{Tensor::full(xs[0].shape, 1.0)};
    };
    CHECK_THROWS_AS(grad_check("x", f, g, {x}, 0.0), Error);
    CHECK_THROWS_AS(grad_check("x", f, g, {x}, 0.5), Error);
}

TEST_CASE("grad_check flags oracle disagreement instead of passing silently") {
    Tensor x({2}, {0.4, -0.2});
    ScalarFn f = [](const std::vector<Tensor>& xs) {
        return xs[0].data[0] + xs[0].data[1];
    };
    GradFn wrong = [](const std::vector<Tensor>& xs) {
        return std::vector<Tensor>{Tensor::full(xs[0].shape, -1.0)};  // sign flipped
    };
    auto rep = grad_check("broken", f, wrong, {x}, 1e-5);
    CHECK(rep.nondifferentiable);
    CHECK_FALSE(rep.pass());
}

TEST_CASE("gradcheck suite passes and lists every op exactly once") {
    auto reports = gradcheck_suite();
    std::set<std::string> names;
    for (const auto& r : reports) {
        CHECK_MESSAGE(r.pass(1e-5), r.op, " rel err ", r.max_rel_err);
        CHECK(names.insert(r.op).second);
    }
    CHECK(names.count("model_end_to_end") == 1);
}

TEST_CASE("gradcheck suite catches an injected sign bug") {
    auto reports = gradcheck_suite(/*inject_sign_bug=*/true);
    bool any_fail = false;
    for (const auto& r : reports) any_fail = any_fail || !r.pass(1e-5);
    CHECK(any_fail);
}

TEST_CASE("tensor invariants are enforced") {
    CHECK_THROWS_AS(Tensor({0, 2}), Error);
    CHECK_THROWS_AS(Tensor({2}, {1.0, 2.0, 3.0}), Error);
    Tensor t({2, 2});
    t.ensure_grad();
    CHECK(t.grad.size() == 4);
}
