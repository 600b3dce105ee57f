#pragma once

#include "tokshift/tensor.hpp"

namespace tokshift {

enum class ShiftVariant { none, temporal, patch, token };

// Site inside an encoder's residual blocks where the shift is applied.
enum class ShiftPlacement { prior_residual, prior_layernorm, prior_branch, post_branch };

const char* to_string(ShiftVariant v);
const char* to_string(ShiftPlacement p);
ShiftVariant shift_variant_from_string(const std::string& s);
ShiftPlacement shift_placement_from_string(const std::string& s);

struct ShiftSpec {
    ShiftVariant variant = ShiftVariant::none;
    double frac_back = 0.0;   // a/D
    double frac_forth = 0.0;  // c/D
    ShiftPlacement placement = ShiftPlacement::prior_residual;

    void validate() const;
    int64_t channels_back(int64_t embed_dim) const;   // floor(frac_back * D)
    int64_t channels_forth(int64_t embed_dim) const;  // floor(frac_forth * D)
};

// Shift the first n_back channels one frame back in time (row t takes row
// t-1, zeros at t=0) and the last n_forth channels one frame forward (row t
// takes row t+1, zeros at t=T-1). Middle channels are copied unchanged.
// Pure data movement; no arithmetic on values.
Tensor token_shift(const Tensor& c, int64_t n_back, int64_t n_forth);  // [T, D]

// token_shift applied independently at every word position (class token and
// all patches).
Tensor temporal_shift(const Tensor& z, int64_t n_back, int64_t n_forth);  // [T, N+1, D]

// temporal_shift restricted to word indices 1..N; word 0 copied verbatim.
Tensor patch_shift(const Tensor& z, int64_t n_back, int64_t n_forth);

// Dispatch by spec; the token variant touches only word 0.
Tensor apply_shift(const Tensor& z, const ShiftSpec& spec, int64_t embed_dim);

// Adjoints (transposed shifts: back and forth directions exchanged on the
// same channel blocks). These are the backward passes.
Tensor token_shift_adjoint(const Tensor& g, int64_t n_back, int64_t n_forth);
Tensor temporal_shift_adjoint(const Tensor& g, int64_t n_back, int64_t n_forth);
Tensor patch_shift_adjoint(const Tensor& g, int64_t n_back, int64_t n_forth);
Tensor apply_shift_adjoint(const Tensor& g, const ShiftSpec& spec, int64_t embed_dim);

}  // namespace tokshift
