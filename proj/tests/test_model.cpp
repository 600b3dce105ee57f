#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "tokshift/model.hpp"

using namespace tokshift;

namespace {

ModelConfig tiny(int64_t frames = 2, ShiftVariant variant = ShiftVariant::none) {
    ModelConfig cfg;
    cfg.frames = frames;
    cfg.height = 8;
    cfg.width = 8;
    cfg.patch = 4;
    cfg.embed_dim = 8;
    cfg.depth = 1;
    cfg.heads = 2;
    cfg.classes = 3;
    cfg.shift.variant = variant;
    cfg.shift.frac_back = 0.25;
    cfg.shift.frac_forth = 0.25;
    return cfg;
}

Tensor rand_video(const ModelConfig& cfg, uint64_t seed) {
    Rng rng(seed);
    Tensor v({cfg.frames, cfg.height, cfg.width, 3});
    for (double& x : v.data) x = rng.uniform();
    return v;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
    double m = 0.0;
    for (size_t i = 0; i < a.data.size(); ++i)
        m = std::max(m, std::fabs(a.data[i] - b.data[i]));
    return m;
}

}  // namespace

TEST_CASE("embed_video: zero everything embeds to zero") {
    ModelConfig cfg = tiny();
    Parameters p = Parameters::zeros(cfg);
    Tensor video({cfg.frames, cfg.height, cfg.width, 3});
    Tensor z = embed_video(video, p, cfg);
    for (double v : z.data) CHECK(v == 0.0);
}

TEST_CASE("embed_video: identical frames embed identically") {
    ModelConfig cfg = tiny(3);
    Parameters p = Parameters::init(cfg, 5);
    Tensor one = rand_video(tiny(1), 9);
    Tensor video({3, cfg.height, cfg.width, 3});
    for (int64_t t = 0; t < 3; ++t)
        std::copy(one.data.begin(), one.data.end(),
                  video.data.begin() + static_cast<int64_t>(one.data.size()) * t);
    Tensor z = embed_video(video, p, cfg);
    const int64_t per_frame = cfg.words() * cfg.embed_dim;
    for (int64_t t = 1; t < 3; ++t)
        for (int64_t i = 0; i < per_frame; ++i)
            CHECK(z.data[static_cast<size_t>(i)] == z.data[static_cast<size_t>(t * per_frame + i)]);
}

TEST_CASE("embed_video: 32x32 with P=8 gives 17 words per frame") {
    ModelConfig cfg;
    cfg.frames = 8;
    cfg.height = 32;
    cfg.width = 32;
    cfg.patch = 8;
    cfg.embed_dim = 16;
    cfg.depth = 1;
    cfg.heads = 2;
    cfg.classes = 4;
    Parameters p = Parameters::init(cfg, 1);
    Tensor z = embed_video(rand_video(cfg, 2), p, cfg);
    CHECK(z.shape == std::vector<int64_t>{8, 17, 16});
}

TEST_CASE("embed_video rejects mismatched dims") {
    ModelConfig cfg = tiny();
    Parameters p = Parameters::zeros(cfg);
    Tensor wrong({cfg.frames, cfg.height, cfg.width + 1, 3});
    CHECK_THROWS_AS(embed_video(wrong, p, cfg), Error);
}

TEST_CASE("msa_frame: equal rows attend uniformly") {
    ModelConfig cfg = tiny();
    Parameters p = Parameters::init(cfg, 3);
    const int64_t words = 5;
    Tensor zt({words, cfg.embed_dim});
    Rng rng(4);
    for (int64_t j = 0; j < cfg.embed_dim; ++j) {
        const double v = rng.uniform(-1.0, 1.0);
        for (int64_t w = 0; w < words; ++w) zt.at({w, j}) = v;
    }
    MsaFrameCache cache;
    msa_frame(zt, p.encoders[0], cfg, &cache);
    for (double v : cache.probs.data)
        CHECK(v == doctest::Approx(1.0 / static_cast<double>(words)).epsilon(1e-12));
}

TEST_CASE("msa_frame: a single word attends to itself with weight 1") {
    ModelConfig cfg = tiny();
    Parameters p = Parameters::init(cfg, 3);
    Tensor zt({1, cfg.embed_dim});
    Rng rng(5);
    for (double& v : zt.data) v = rng.uniform(-1.0, 1.0);
    MsaFrameCache cache;
    msa_frame(zt, p.encoders[0], cfg, &cache);
    for (double v : cache.probs.data) CHECK(v == 1.0);
}

TEST_CASE("msa_frame with one head equals the direct single-head formula") {
    ModelConfig cfg = tiny();
    cfg.heads = 1;
    Parameters p = Parameters::init(cfg, 6);
    const EncoderParams& e = p.encoders[0];
    const int64_t words = 4;
    Rng rng(7);
    Tensor zt({words, cfg.embed_dim});
    for (double& v : zt.data) v = rng.uniform(-1.0, 1.0);

    Tensor out = msa_frame(zt, e, cfg);

    // direct formula with scale 1/sqrt(D)
    auto proj = [&](const Tensor& w, const Tensor& b) {
        Tensor r = matmul(zt, w);
        for (int64_t i = 0; i < words; ++i)
            for (int64_t j = 0; j < cfg.embed_dim; ++j)
                r.at({i, j}) += b.data[static_cast<size_t>(j)];
        return r;
    };
    Tensor q = proj(e.wq, e.bq), k = proj(e.wk, e.bk), v = proj(e.wv, e.bv);
    Tensor scores = matmul(q, transpose_last2(k));
    for (double& s : scores.data) s /= std::sqrt(static_cast<double>(cfg.embed_dim));
    Tensor probs = softmax_lastdim(scores);
    Tensor ctx = matmul(probs, v);
    Tensor expect = matmul(ctx, e.wo);
    for (int64_t i = 0; i < words; ++i)
        for (int64_t j = 0; j < cfg.embed_dim; ++j)
            expect.at({i, j}) += e.bo.data[static_cast<size_t>(j)];

    CHECK(max_abs_diff(out, expect) < 1e-12);
}

TEST_CASE("ffn: zero parameters give zeros; equal words map equally") {
    ModelConfig cfg = tiny();
    Parameters zero = Parameters::zeros(cfg);
    Rng rng(8);
    Tensor z({2, 3, cfg.embed_dim});
    for (double& v : z.data) v = rng.uniform(-1.0, 1.0);
    Tensor out = ffn(z, zero.encoders[0], cfg);
    for (double v : out.data) CHECK(v == 0.0);

    Parameters p = Parameters::init(cfg, 9);
    Tensor two({2, cfg.embed_dim});
    for (int64_t j = 0; j < cfg.embed_dim; ++j) {
        const double v = rng.uniform(-1.0, 1.0);
        two.at({0, j}) = v;
        two.at({1, j}) = v;
    }
    Tensor o2 = ffn(two, p.encoders[0], cfg);
    for (int64_t j = 0; j < cfg.embed_dim; ++j) CHECK(o2.at({0, j}) == o2.at({1, j}));
}

TEST_CASE("ffn: D=2 hand case with identity-padded W1 and summing W2") {
    ModelConfig cfg = tiny();
    cfg.embed_dim = 2;
    cfg.heads = 1;
    Parameters p = Parameters::zeros(cfg);
    EncoderParams& e = p.encoders[0];
    e.w1.at({0, 0}) = 1.0;  // [2, 8]: first two hidden units copy the input
    e.w1.at({1, 1}) = 1.0;
    for (int64_t h = 0; h < 8; ++h) {  // [8, 2]: both outputs sum all hidden units
        e.w2.at({h, 0}) = 1.0;
        e.w2.at({h, 1}) = 1.0;
    }
    Tensor x({1, 2}, {1.0, -0.5});
    Tensor out = ffn(x, e, cfg);
    const double expect = 1.0 * 0.5 * std::erfc(-1.0 / std::sqrt(2.0)) +
                          (-0.5) * 0.5 * std::erfc(0.5 / std::sqrt(2.0));
    CHECK(out.at({0, 0}) == doctest::Approx(expect).epsilon(1e-12));
    CHECK(out.at({0, 1}) == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("batched encoder attention equals per-frame msa_frame composition") {
    ModelConfig cfg = tiny(3);
    Parameters p = Parameters::init(cfg, 55);
    const EncoderParams& e = p.encoders[0];
    Tensor z = embed_video(rand_video(cfg, 56), p, cfg);

    Tensor normed = layer_norm(z, e.ln1_gain, e.ln1_bias, 1e-6);
    Tensor expected = z;
    const int64_t words = cfg.words();
    for (int64_t t = 0; t < cfg.frames; ++t) {
        Tensor zt({words, cfg.embed_dim});
        std::copy_n(normed.data.data() + t * words * cfg.embed_dim, words * cfg.embed_dim,
                    zt.data.data());
        Tensor ot = msa_frame(zt, e, cfg);
        for (int64_t i = 0; i < words * cfg.embed_dim; ++i)
            expected.data[static_cast<size_t>(t * words * cfg.embed_dim + i)] +=
                ot.data[static_cast<size_t>(i)];
    }
    Tensor actual = attention_block(z, e, cfg);
    CHECK(max_abs_diff(actual, expected) < 1e-12);
}

TEST_CASE("encoder: the none variant is placement-independent, bit-exact") {
    ModelConfig cfg = tiny(3);
    Parameters p = Parameters::init(cfg, 10);
    Tensor z = embed_video(rand_video(cfg, 11), p, cfg);
    std::vector<Tensor> outs;
    for (ShiftPlacement pl : {ShiftPlacement::prior_residual, ShiftPlacement::prior_layernorm,
                              ShiftPlacement::prior_branch, ShiftPlacement::post_branch}) {
        ModelConfig c = cfg;
        c.shift.placement = pl;
        outs.push_back(encoder_forward(z, p.encoders[0], c).out);
    }
    for (size_t i = 1; i < outs.size(); ++i) CHECK(outs[i].data == outs[0].data);
}

TEST_CASE("encoder keeps the [T,N+1,D] shape and normalized attention") {
    ModelConfig cfg = tiny(3, ShiftVariant::token);
    Parameters p = Parameters::init(cfg, 12);
    Tensor z = embed_video(rand_video(cfg, 13), p, cfg);
    EncoderResult res = encoder_forward(z, p.encoders[0], cfg);
    CHECK(res.out.shape == z.shape);
    const int64_t words = cfg.words();
    for (int64_t t = 0; t < cfg.frames; ++t)
        for (int64_t h = 0; h < cfg.heads; ++h)
            for (int64_t q = 0; q < words; ++q) {
                double sum = 0.0;
                for (int64_t j = 0; j < words; ++j) sum += res.attention.at({t, h, q, j});
                CHECK(std::fabs(sum - 1.0) < 1e-10);
            }
}

TEST_CASE("encoder at T=1 token shift equals a none encoder on zero-blocked tokens") {
    ModelConfig cfg = tiny(1, ShiftVariant::token);
    Parameters p = Parameters::init(cfg, 14);
    Tensor z = embed_video(rand_video(cfg, 15), p, cfg);

    ModelConfig none_cfg = cfg;
    none_cfg.shift.variant = ShiftVariant::none;
    const int64_t nb = cfg.shift.channels_back(cfg.embed_dim);
    const int64_t nf = cfg.shift.channels_forth(cfg.embed_dim);
    auto zero_block = [&](Tensor x) {
        for (int64_t j = 0; j < nb; ++j) x.at({0, 0, j}) = 0.0;
        for (int64_t j = cfg.embed_dim - nf; j < cfg.embed_dim; ++j) x.at({0, 0, j}) = 0.0;
        return x;
    };

    Tensor actual = encoder_forward(z, p.encoders[0], cfg).out;
    Tensor expected = ffn_block(zero_block(attention_block(zero_block(z), p.encoders[0], none_cfg)),
                                p.encoders[0], none_cfg);
    CHECK(actual.data == expected.data);
}

TEST_CASE("model_forward: none variant is frame-permutation invariant") {
    ModelConfig cfg = tiny(4);
    Parameters p = Parameters::init(cfg, 16);
    Tensor video = rand_video(cfg, 17);
    Tensor logits = model_forward(video, p, cfg).logits;

    const std::vector<int64_t> perm = {2, 0, 3, 1};
    Tensor permuted(video.shape);
    const int64_t fsz = cfg.height * cfg.width * 3;
    for (int64_t t = 0; t < 4; ++t)
        std::copy_n(video.data.data() + perm[static_cast<size_t>(t)] * fsz, fsz,
                    permuted.data.data() + t * fsz);
    Tensor plogits = model_forward(permuted, p, cfg).logits;
    CHECK(max_abs_diff(logits, plogits) < 1e-10);
}

TEST_CASE("model_forward: token variant breaks frame-reversal invariance on 10 seeds") {
    for (uint64_t seed = 1; seed <= 10; ++seed) {
        ModelConfig cfg = tiny(4, ShiftVariant::token);
        Parameters p = Parameters::init(cfg, seed);
        Tensor video = rand_video(cfg, 100 + seed);
        Tensor reversed(video.shape);
        const int64_t fsz = cfg.height * cfg.width * 3;
        for (int64_t t = 0; t < 4; ++t)
            std::copy_n(video.data.data() + (3 - t) * fsz, fsz,
                        reversed.data.data() + t * fsz);
        const double diff = max_abs_diff(model_forward(video, p, cfg).logits,
                                         model_forward(reversed, p, cfg).logits);
        CHECK(diff > 1e-6);
    }
}

TEST_CASE("model_forward: zero shift fractions equal the none variant bit-exactly") {
    ModelConfig cfg = tiny(3, ShiftVariant::token);
    cfg.shift.frac_back = 0.0;
    cfg.shift.frac_forth = 0.0;
    ModelConfig none_cfg = cfg;
    none_cfg.shift.variant = ShiftVariant::none;
    Parameters p = Parameters::init(cfg, 18);
    Tensor video = rand_video(cfg, 19);
    CHECK(model_forward(video, p, cfg).logits.data ==
          model_forward(video, p, none_cfg).logits.data);
}

TEST_CASE("model_forward: T=1 mean equals the single frame's logits") {
    ModelConfig cfg = tiny(1);
    Parameters p = Parameters::init(cfg, 20);
    Activations acts = model_forward(rand_video(cfg, 21), p, cfg);
    for (int64_t c = 0; c < cfg.classes; ++c)
        CHECK(acts.logits.at({c}) == acts.frame_logits.at({0, c}));
}

TEST_CASE("none variant equals running frames through a T=1 model and averaging") {
    ModelConfig cfg = tiny(4);
    Parameters p = Parameters::init(cfg, 22);
    Tensor video = rand_video(cfg, 23);
    Tensor full = model_forward(video, p, cfg).logits;

    ModelConfig cfg1 = cfg;
    cfg1.frames = 1;
    Tensor mean({cfg.classes});
    const int64_t fsz = cfg.height * cfg.width * 3;
    for (int64_t t = 0; t < cfg.frames; ++t) {
        Tensor frame({1, cfg.height, cfg.width, 3});
        std::copy_n(video.data.data() + t * fsz, fsz, frame.data.data());
        Tensor l = model_forward(frame, p, cfg1).logits;
        for (int64_t c = 0; c < cfg.classes; ++c) mean.at({c}) += l.at({c});
    }
    for (double& v : mean.data) v /= static_cast<double>(cfg.frames);
    CHECK(max_abs_diff(full, mean) < 1e-10);
}

TEST_CASE("literal equation wiring differs from standard pre-LN but keeps shape") {
    ModelConfig cfg = tiny(2, ShiftVariant::token);
    ModelConfig lit = cfg;
    lit.literal_eq23 = true;
    Parameters p = Parameters::init(cfg, 24);
    Tensor video = rand_video(cfg, 25);
    Tensor a = model_forward(video, p, cfg).logits;
    Tensor b = model_forward(video, p, lit).logits;
    CHECK(a.shape == b.shape);
    CHECK(max_abs_diff(a, b) > 0.0);
}

TEST_CASE("model_backward: zero upstream gives zero gradients") {
    ModelConfig cfg = tiny(2, ShiftVariant::token);
    Parameters p = Parameters::init(cfg, 26);
    Activations acts = model_forward(rand_video(cfg, 27), p, cfg);
    model_backward(Tensor({cfg.classes}), acts, p);
    p.for_each([](const std::string&, Tensor& t) {
        for (double g : t.grad) CHECK(g == 0.0);
    });
}

TEST_CASE("model_backward is linear in the upstream gradient") {
    ModelConfig cfg = tiny(2, ShiftVariant::token);
    Parameters p1 = Parameters::init(cfg, 28);
    Tensor video = rand_video(cfg, 29);
    Tensor dlogits({cfg.classes}, {0.3, -1.1, 0.8});

    Activations acts = model_forward(video, p1, cfg);
    model_backward(dlogits, acts, p1);

    Parameters p2 = Parameters::init(cfg, 28);
    Activations acts2 = model_forward(video, p2, cfg);
    model_backward(scale(dlogits, 2.0), acts2, p2);

    std::vector<Tensor*> g1, g2;
    p1.for_each([&](const std::string&, Tensor& t) { g1.push_back(&t); });
    p2.for_each([&](const std::string&, Tensor& t) { g2.push_back(&t); });
    for (size_t i = 0; i < g1.size(); ++i)
        for (size_t j = 0; j < g1[i]->grad.size(); ++j)
            CHECK(g2[i]->grad[j] == doctest::Approx(2.0 * g1[i]->grad[j]).epsilon(1e-13));
}

TEST_CASE("model_backward rejects inference-only activations") {
    ModelConfig cfg = tiny();
    Parameters p = Parameters::init(cfg, 30);
    ForwardOptions opt;
    opt.retain = Retain::none;
    Activations acts = model_forward(rand_video(cfg, 31), p, cfg, opt);
    Tensor dlogits({cfg.classes});
    CHECK_THROWS_AS(model_backward(dlogits, acts, p), Error);
}

TEST_CASE("parameter count matches the analytic total") {
    ModelConfig cfg = tiny(2);
    Parameters p = Parameters::zeros(cfg);
    // d*D + (N+1)*D + D + L*(4D + 4(D^2+D) + 8D^2+5D) + 2D + D*classes + classes
    const int64_t d = cfg.patch_dim(), D = cfg.embed_dim, L = cfg.depth;
    const int64_t expect = d * D + cfg.words() * D + D +
                           L * (4 * D + 4 * (D * D + D) + 8 * D * D + 5 * D) + 2 * D +
                           D * cfg.classes + cfg.classes;
    CHECK(p.scalar_count() == expect);
}

TEST_CASE("config validation rejects bad geometry") {
    ModelConfig cfg = tiny();
    cfg.height = 10;  // not divisible by patch 4
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    ModelConfig cfg2 = tiny();
    cfg2.heads = 3;  // 8 % 3 != 0
    CHECK_THROWS_AS(cfg2.validate(), ConfigError);
}
