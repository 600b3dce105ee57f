#include "tokshift/shift.hpp"

#include <cmath>
#include <cstring>

namespace tokshift {

const char* to_string(ShiftVariant v) {
    switch (v) {
        case ShiftVariant::none: return "none";
        case ShiftVariant::temporal: return "temporal";
        case ShiftVariant::patch: return "patch";
        case ShiftVariant::token: return "token";
    }
    return "?";
}

const char* to_string(ShiftPlacement p) {
    switch (p) {
        case ShiftPlacement::prior_residual: return "prior_residual";
        case ShiftPlacement::prior_layernorm: return "prior_layernorm";
        case ShiftPlacement::prior_branch: return "prior_branch";
        case ShiftPlacement::post_branch: return "post_branch";
    }
    return "?";
}

ShiftVariant shift_variant_from_string(const std::string& s) {
    if (s == "none") return ShiftVariant::none;
    if (s == "temporal") return ShiftVariant::temporal;
    if (s == "patch") return ShiftVariant::patch;
    if (s == "token") return ShiftVariant::token;
    throw ConfigError(cat("unknown shift variant '", s,
                          "' (expected none|temporal|patch|token)"));
}

ShiftPlacement shift_placement_from_string(const std::string& s) {
    if (s == "prior_residual") return ShiftPlacement::prior_residual;
    if (s == "prior_layernorm") return ShiftPlacement::prior_layernorm;
    if (s == "prior_branch") return ShiftPlacement::prior_branch;
    if (s == "post_branch") return ShiftPlacement::post_branch;
    throw ConfigError(cat("unknown shift placement '", s,
        "' (expected prior_residual|prior_layernorm|prior_branch|post_branch)"));
}

void ShiftSpec::validate() const {
    if (variant == ShiftVariant::none) return;  // fractions ignored
    TS_CONFIG_CHECK(frac_back >= 0.0 && frac_forth >= 0.0, "shift fractions must be >= 0, got ",
                    frac_back, " and ", frac_forth);
    TS_CONFIG_CHECK(frac_back + frac_forth <= 1.0, "shift fractions sum to ",
                    frac_back + frac_forth, ", must be <= 1");
}

int64_t ShiftSpec::channels_back(int64_t embed_dim) const {
    return static_cast<int64_t>(std::floor(frac_back * static_cast<double>(embed_dim)));
}

int64_t ShiftSpec::channels_forth(int64_t embed_dim) const {
    return static_cast<int64_t>(std::floor(frac_forth * static_cast<double>(embed_dim)));
}

namespace {

// Core mover shared by all variants and their adjoints. Treats z as
// [T, words, D] and rewrites channels of words in [word_begin, word_end):
// the low n_back block takes the row at t+dt_back, the high n_forth block the
// row at t+dt_forth, with zeros where the neighbor falls outside [0, T).
// Forward uses (dt_back, dt_forth) = (-1, +1); the adjoint swaps them.
void shift_words(const Tensor& src, Tensor& dst, int64_t t_count, int64_t words, int64_t d,
                 int64_t word_begin, int64_t word_end, int64_t n_back, int64_t n_forth,
                 int dt_back, int dt_forth) {
    for (int64_t t = 0; t < t_count; ++t) {
        const int64_t tb = t + dt_back;
        const int64_t tf = t + dt_forth;
        for (int64_t w = word_begin; w < word_end; ++w) {
            double* out = dst.data.data() + (t * words + w) * d;
            if (n_back > 0) {
                if (tb >= 0 && tb < t_count) {
                    const double* in = src.data.data() + (tb * words + w) * d;
                    std::memcpy(out, in, sizeof(double) * static_cast<size_t>(n_back));
                } else {
                    std::memset(out, 0, sizeof(double) * static_cast<size_t>(n_back));
                }
            }
            if (n_forth > 0) {
                if (tf >= 0 && tf < t_count) {
                    const double* in = src.data.data() + (tf * words + w) * d;
                    std::memcpy(out + (d - n_forth), in + (d - n_forth),
                                sizeof(double) * static_cast<size_t>(n_forth));
                } else {
                    std::memset(out + (d - n_forth), 0,
                                sizeof(double) * static_cast<size_t>(n_forth));
                }
            }
        }
    }
}

void check_counts(int64_t n_back, int64_t n_forth, int64_t d) {
    TS_CHECK(n_back >= 0 && n_forth >= 0, "shift channel counts must be >= 0");
    TS_CHECK(n_back + n_forth <= d, "shift channel counts ", n_back, "+", n_forth,
             " exceed channel dim ", d);
}

Tensor shift_2d(const Tensor& c, int64_t n_back, int64_t n_forth, int dt_back, int dt_forth) {
    TS_CHECK(c.rank() == 2, "token_shift expects [T,D], got ", shape_str(c.shape));
    check_counts(n_back, n_forth, c.shape[1]);
    Tensor out = c;  // middle channels copied unchanged
    shift_words(c, out, c.shape[0], 1, c.shape[1], 0, 1, n_back, n_forth, dt_back, dt_forth);
    return out;
}

Tensor shift_3d(const Tensor& z, int64_t n_back, int64_t n_forth, int64_t word_begin,
                int64_t word_end_excl, int dt_back, int dt_forth) {
    TS_CHECK(z.rank() == 3, "shift expects [T,N+1,D], got ", shape_str(z.shape));
    check_counts(n_back, n_forth, z.shape[2]);
    Tensor out = z;
    shift_words(z, out, z.shape[0], z.shape[1], z.shape[2], word_begin,
                word_end_excl < 0 ? z.shape[1] : word_end_excl, n_back, n_forth, dt_back,
                dt_forth);
    return out;
}

}  // namespace

Tensor token_shift(const Tensor& c, int64_t n_back, int64_t n_forth) {
    return shift_2d(c, n_back, n_forth, -1, +1);
}

Tensor token_shift_adjoint(const Tensor& g, int64_t n_back, int64_t n_forth) {
    return shift_2d(g, n_back, n_forth, +1, -1);
}

Tensor temporal_shift(const Tensor& z, int64_t n_back, int64_t n_forth) {
    return shift_3d(z, n_back, n_forth, 0, -1, -1, +1);
}

Tensor temporal_shift_adjoint(const Tensor& g, int64_t n_back, int64_t n_forth) {
    return shift_3d(g, n_back, n_forth, 0, -1, +1, -1);
}

Tensor patch_shift(const Tensor& z, int64_t n_back, int64_t n_forth) {
    return shift_3d(z, n_back, n_forth, 1, -1, -1, +1);  // word 0 exempt
}

Tensor patch_shift_adjoint(const Tensor& g, int64_t n_back, int64_t n_forth) {
    return shift_3d(g, n_back, n_forth, 1, -1, +1, -1);
}

Tensor apply_shift(const Tensor& z, const ShiftSpec& spec, int64_t embed_dim) {
    spec.validate();
    TS_CHECK(z.rank() == 3 && z.shape[2] == embed_dim, "apply_shift expects [T,N+1,", embed_dim,
             "], got ", shape_str(z.shape));
    const int64_t nb = spec.channels_back(embed_dim);
    const int64_t nf = spec.channels_forth(embed_dim);
    switch (spec.variant) {
        case ShiftVariant::none: return z;
        case ShiftVariant::temporal: return temporal_shift(z, nb, nf);
        case ShiftVariant::patch: return patch_shift(z, nb, nf);
        case ShiftVariant::token: return shift_3d(z, nb, nf, 0, 1, -1, +1);  // word 0 only
    }
    throw Error("unreachable shift variant");
}

Tensor apply_shift_adjoint(const Tensor& g, const ShiftSpec& spec, int64_t embed_dim) {
    spec.validate();
    TS_CHECK(g.rank() == 3 && g.shape[2] == embed_dim, "apply_shift_adjoint expects [T,N+1,",
             embed_dim, "], got ", shape_str(g.shape));
    const int64_t nb = spec.channels_back(embed_dim);
    const int64_t nf = spec.channels_forth(embed_dim);
    switch (spec.variant) {
        case ShiftVariant::none: return g;
        case ShiftVariant::temporal: return temporal_shift_adjoint(g, nb, nf);
        case ShiftVariant::patch: return patch_shift_adjoint(g, nb, nf);
        case ShiftVariant::token: return shift_3d(g, nb, nf, 0, 1, +1, -1);
    }
    throw Error("unreachable shift variant");
}

}  // namespace tokshift
