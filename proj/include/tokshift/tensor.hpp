#pragma once

#include "tokshift/common.hpp"

namespace tokshift {

// Dense row-major tensor of 64-bit reals with an optional gradient slot.
// Always contiguous; rank >= 1 and every dim >= 1.
struct Tensor {
    std::vector<int64_t> shape;
    DVec data;
    DVec grad;  // empty, or same length as data

    Tensor() = default;
    explicit Tensor(std::vector<int64_t> dims);  // zero-filled
    Tensor(std::vector<int64_t> dims, DVec values);

    static Tensor zeros(std::vector<int64_t> dims) { return Tensor(std::move(dims)); }
    static Tensor full(std::vector<int64_t> dims, double value);

    // Skips the zero fill; only for buffers every element of which is
    // written before being read.
    static Tensor uninit(std::vector<int64_t> dims);

    int64_t numel() const { return static_cast<int64_t>(data.size()); }
    int rank() const { return static_cast<int>(shape.size()); }
    int64_t dim(int i) const;

    double& at(std::initializer_list<int64_t> idx) { return data[offset(idx)]; }
    double at(std::initializer_list<int64_t> idx) const { return data[offset(idx)]; }

    bool has_grad() const { return !grad.empty(); }
    void ensure_grad();
    void zero_grad();

    void validate() const;

private:
    int64_t offset(std::initializer_list<int64_t> idx) const;
};

int64_t shape_numel(const std::vector<int64_t>& shape);

// ---- forward operations (pure functions; inputs untouched) ----

Tensor matmul(const Tensor& a, const Tensor& b);  // [m,k] x [k,n] -> [m,n]
Tensor softmax_lastdim(const Tensor& x);
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-6);
Tensor gelu(const Tensor& x);  // exact form x * Phi(x)

Tensor add(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double s);
Tensor concat(const std::vector<Tensor>& parts, int axis);
std::vector<Tensor> split(const Tensor& x, int axis, const std::vector<int64_t>& sizes);
Tensor reshape(const Tensor& x, std::vector<int64_t> dims);
Tensor transpose_last2(const Tensor& x);

// ---- analytic backward passes ----
// Each returns gradients of a scalar loss w.r.t. the op inputs given the
// gradient w.r.t. the op output ("upstream").

struct MatmulGrads {
    Tensor da, db;
};
MatmulGrads matmul_backward(const Tensor& a, const Tensor& b, const Tensor& upstream);

// probs is the softmax forward output
Tensor softmax_lastdim_backward(const Tensor& probs, const Tensor& upstream);

struct LayerNormGrads {
    Tensor dx, dgamma, dbeta;
};
LayerNormGrads layer_norm_backward(const Tensor& x, const Tensor& gamma, double eps,
                                   const Tensor& upstream);

Tensor gelu_backward(const Tensor& x, const Tensor& upstream);

std::vector<Tensor> concat_backward(const Tensor& upstream, int axis,
                                    const std::vector<int64_t>& sizes);
Tensor split_backward(const std::vector<Tensor>& upstream_parts, int axis);

// ---- raw kernels (row-major, no shape checks) ----

namespace kernels {
// C = A[m,k] * B[k,n] (+ bias broadcast over rows, when given)
void gemm(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n,
          bool accumulate = false, const double* bias = nullptr);
// C = A[m,k] * B[n,k]^T
void gemm_nt(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n,
             bool accumulate = false);
// C = A[k,m]^T * B[k,n]
void gemm_tn(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n,
             bool accumulate = false);
}  // namespace kernels

}  // namespace tokshift
