#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "shift_oracle.hpp"
#include "tokshift/shift.hpp"

using namespace tokshift;

namespace {

Tensor rand_tensor(std::vector<int64_t> dims, Rng& rng) {
    Tensor t(std::move(dims));
    for (double& v : t.data) v = rng.uniform(-1.0, 1.0);
    return t;
}

Tensor oracle_shift(const Tensor& z, int64_t nb, int64_t nf, int word_set) {
    return brute_force_shift(z, nb, nf, word_set);
}

}  // namespace

TEST_CASE("token_shift: zero counts are the identity, bit-exact") {
    Rng rng(1);
    Tensor c = rand_tensor({5, 7}, rng);
    CHECK(token_shift(c, 0, 0).data == c.data);
}

TEST_CASE("token_shift: single frame zeroes both shifted blocks") {
    Tensor c({1, 4}, {1, 2, 3, 4});
    Tensor s = token_shift(c, 1, 2);
    CHECK(s.data == std::vector<double>{0, 2, 0, 0});
}

TEST_CASE("token_shift: worked 3x4 example with zero padding") {
    Tensor c({3, 4}, {1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12});
    Tensor s = token_shift(c, 1, 1);
    CHECK(s.data == std::vector<double>{0, 2, 3, 8, 1, 6, 7, 12, 5, 10, 11, 0});
}

TEST_CASE("token_shift rejects overlapping blocks") {
    Tensor c({2, 4});
    CHECK_THROWS_AS(token_shift(c, 3, 2), Error);
}

TEST_CASE("temporal_shift applies token_shift at every word") {
    Rng rng(2);
    Tensor z = rand_tensor({4, 3, 6}, rng);
    CHECK(temporal_shift(z, 0, 0).data == z.data);

    Tensor s = temporal_shift(z, 2, 1);
    for (int64_t w = 0; w < 3; ++w) {
        Tensor col({4, 6});
        for (int64_t t = 0; t < 4; ++t)
            for (int64_t j = 0; j < 6; ++j) col.at({t, j}) = z.at({t, w, j});
        Tensor ref = token_shift(col, 2, 1);
        for (int64_t t = 0; t < 4; ++t)
            for (int64_t j = 0; j < 6; ++j) CHECK(s.at({t, w, j}) == ref.at({t, j}));
    }
}

TEST_CASE("temporal_shift: 2x2x2 hand indexing") {
    // every word's channel 0 at t=1 takes its own t=0 value; t=0 channel 0 is zero
    Tensor z({2, 2, 2}, {1, 2, 3, 4, 5, 6, 7, 8});
    Tensor s = temporal_shift(z, 1, 0);
    CHECK(s.data == std::vector<double>{0, 2, 0, 4, 1, 6, 3, 8});
}

TEST_CASE("patch_shift exempts word 0 and matches temporal_shift elsewhere") {
    Rng rng(3);
    Tensor z = rand_tensor({5, 4, 8}, rng);
    Tensor p = patch_shift(z, 3, 2);
    Tensor t = temporal_shift(z, 3, 2);
    for (int64_t f = 0; f < 5; ++f)
        for (int64_t j = 0; j < 8; ++j) CHECK(p.at({f, 0, j}) == z.at({f, 0, j}));
    for (int64_t f = 0; f < 5; ++f)
        for (int64_t w = 1; w < 4; ++w)
            for (int64_t j = 0; j < 8; ++j) CHECK(p.at({f, w, j}) == t.at({f, w, j}));
    CHECK(patch_shift(z, 0, 0).data == z.data);
}

TEST_CASE("apply_shift: none is bit-exact identity; channel counts floor the fractions") {
    Rng rng(4);
    Tensor z = rand_tensor({3, 4, 8}, rng);
    ShiftSpec spec;
    spec.variant = ShiftVariant::none;
    CHECK(apply_shift(z, spec, 8).data == z.data);

    ShiftSpec quarters;
    quarters.variant = ShiftVariant::token;
    quarters.frac_back = 0.25;
    quarters.frac_forth = 0.25;
    CHECK(quarters.channels_back(768) == 192);
    CHECK(quarters.channels_forth(768) == 192);
    CHECK(quarters.channels_back(6) == 1);  // floor(1.5)
}

TEST_CASE("apply_shift token variant leaves interior frames of a static clip unchanged") {
    Rng rng(5);
    Tensor frame = rand_tensor({1, 3, 8}, rng);
    Tensor z({4, 3, 8});
    for (int64_t t = 0; t < 4; ++t)
        for (int64_t i = 0; i < 24; ++i)
            z.data[static_cast<size_t>(t * 24 + i)] = frame.data[static_cast<size_t>(i)];
    ShiftSpec spec;
    spec.variant = ShiftVariant::token;
    spec.frac_back = 0.25;
    spec.frac_forth = 0.25;
    Tensor s = apply_shift(z, spec, 8);
    for (int64_t t = 1; t <= 2; ++t)  // neighbors equal self away from the edges
        for (int64_t w = 0; w < 3; ++w)
            for (int64_t j = 0; j < 8; ++j) CHECK(s.at({t, w, j}) == z.at({t, w, j}));
}

TEST_CASE("shift variants match the brute-force oracle on 100 random tensors, bit-exact") {
    Rng rng(2024);
    for (int trial = 0; trial < 100; ++trial) {
        const int64_t t_count = rng.uniform_int(1, 6);
        const int64_t words = rng.uniform_int(1, 10);
        const int64_t d = rng.uniform_int(1, 16);
        const int64_t nb = rng.uniform_int(0, d);
        const int64_t nf = rng.uniform_int(0, d - nb);
        Tensor z = rand_tensor({t_count, words, d}, rng);

        CHECK(temporal_shift(z, nb, nf).data == oracle_shift(z, nb, nf, 0).data);
        CHECK(patch_shift(z, nb, nf).data == oracle_shift(z, nb, nf, 1).data);

        ShiftSpec token_spec;
        token_spec.variant = ShiftVariant::token;
        token_spec.frac_back = static_cast<double>(nb) / static_cast<double>(d);
        token_spec.frac_forth = static_cast<double>(nf) / static_cast<double>(d);
        // guard against floor() dropping a channel through the division
        if (token_spec.channels_back(d) == nb && token_spec.channels_forth(d) == nf)
            CHECK(apply_shift(z, token_spec, d).data == oracle_shift(z, nb, nf, 2).data);

        Tensor c({t_count, d});
        for (int64_t t = 0; t < t_count; ++t)
            for (int64_t j = 0; j < d; ++j) c.at({t, j}) = z.at({t, 0, j});
        Tensor cs = token_shift(c, nb, nf);
        Tensor ref = oracle_shift(z, nb, nf, 0);
        for (int64_t t = 0; t < t_count; ++t)
            for (int64_t j = 0; j < d; ++j) CHECK(cs.at({t, j}) == ref.at({t, 0, j}));
    }
}

TEST_CASE("multiset conservation with boundary loss") {
    Rng rng(6);
    const int64_t t_count = 5, words = 3, d = 8, nb = 3, nf = 2;
    Tensor z = rand_tensor({t_count, words, d}, rng);
    Tensor s = temporal_shift(z, nb, nf);

    auto block_rows = [&](const Tensor& m, int64_t j0, int64_t j1, int64_t t0, int64_t t1) {
        std::vector<std::vector<double>> rows;
        for (int64_t t = t0; t < t1; ++t)
            for (int64_t w = 0; w < words; ++w) {
                std::vector<double> row;
                for (int64_t j = j0; j < j1; ++j) row.push_back(m.at({t, w, j}));
                rows.push_back(row);
            }
        std::sort(rows.begin(), rows.end());
        return rows;
    };
    // back block: output rows 1..T-1 are input rows 0..T-2
    CHECK(block_rows(s, 0, nb, 1, t_count) == block_rows(z, 0, nb, 0, t_count - 1));
    // forth block: output rows 0..T-2 are input rows 1..T-1
    CHECK(block_rows(s, d - nf, d, 0, t_count - 1) == block_rows(z, d - nf, d, 1, t_count));
}

TEST_CASE("middle channels are bit-identical for every variant") {
    Rng rng(7);
    const int64_t nb = 2, nf = 3, d = 9;
    Tensor z = rand_tensor({4, 3, d}, rng);
    for (int variant = 0; variant < 3; ++variant) {
        Tensor s = variant == 0   ? temporal_shift(z, nb, nf)
                   : variant == 1 ? patch_shift(z, nb, nf)
                                  : [&] {
                                        ShiftSpec sp;
                                        sp.variant = ShiftVariant::token;
                                        sp.frac_back = static_cast<double>(nb) / d;
                                        sp.frac_forth = static_cast<double>(nf) / d;
                                        return apply_shift(z, sp, d);
                                    }();
        for (int64_t t = 0; t < 4; ++t)
            for (int64_t w = 0; w < 3; ++w)
                for (int64_t j = nb; j < d - nf; ++j) CHECK(s.at({t, w, j}) == z.at({t, w, j}));
    }
}

TEST_CASE("adjoint shifts satisfy <S x, y> == <x, S^T y>") {
    Rng rng(8);
    for (int trial = 0; trial < 20; ++trial) {
        const int64_t t_count = rng.uniform_int(1, 5);
        const int64_t words = rng.uniform_int(1, 6);
        const int64_t d = rng.uniform_int(2, 10);
        const int64_t nb = rng.uniform_int(0, d / 2);
        const int64_t nf = rng.uniform_int(0, d - nb);
        Tensor x = rand_tensor({t_count, words, d}, rng);
        Tensor y = rand_tensor({t_count, words, d}, rng);

        auto dot = [](const Tensor& a, const Tensor& b) {
            double s = 0.0;
            for (size_t i = 0; i < a.data.size(); ++i) s += a.data[i] * b.data[i];
            return s;
        };
        CHECK(dot(temporal_shift(x, nb, nf), y) ==
              doctest::Approx(dot(x, temporal_shift_adjoint(y, nb, nf))).epsilon(1e-12));
        CHECK(dot(patch_shift(x, nb, nf), y) ==
              doctest::Approx(dot(x, patch_shift_adjoint(y, nb, nf))).epsilon(1e-12));
    }
}

TEST_CASE("shift spec validation") {
    ShiftSpec bad;
    bad.variant = ShiftVariant::token;
    bad.frac_back = 0.75;
    bad.frac_forth = 0.5;
    CHECK_THROWS_AS(bad.validate(), ConfigError);

    ShiftSpec none;
    none.variant = ShiftVariant::none;
    none.frac_back = 9.0;  // fractions ignored for the none variant
    CHECK_NOTHROW(none.validate());
}
