#include "tokshift/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace tokshift {

int64_t shape_numel(const std::vector<int64_t>& shape) {
    int64_t n = 1;
    for (int64_t d : shape) n *= d;
    return n;
}

Tensor::Tensor(std::vector<int64_t> dims) : shape(std::move(dims)) {
    TS_CHECK(!shape.empty(), "tensor rank must be >= 1");
    for (int64_t d : shape) TS_CHECK(d >= 1, "tensor dims must be >= 1, got ", shape_str(shape));
    data.assign(static_cast<size_t>(shape_numel(shape)), 0.0);
}

Tensor::Tensor(std::vector<int64_t> dims, DVec values)
    : shape(std::move(dims)), data(std::move(values)) {
    validate();
}

Tensor Tensor::full(std::vector<int64_t> dims, double value) {
    Tensor t(std::move(dims));
    std::fill(t.data.begin(), t.data.end(), value);
    return t;
}

Tensor Tensor::uninit(std::vector<int64_t> dims) {
    Tensor t;
    t.shape = std::move(dims);
    TS_CHECK(!t.shape.empty(), "tensor rank must be >= 1");
    for (int64_t d : t.shape)
        TS_CHECK(d >= 1, "tensor dims must be >= 1, got ", shape_str(t.shape));
    t.data.resize(static_cast<size_t>(shape_numel(t.shape)));
    return t;
}

int64_t Tensor::dim(int i) const {
    TS_CHECK(i >= 0 && i < rank(), "dim index ", i, " out of range for ", shape_str(shape));
    return shape[static_cast<size_t>(i)];
}

int64_t Tensor::offset(std::initializer_list<int64_t> idx) const {
    TS_CHECK(static_cast<int>(idx.size()) == rank(), "index rank ", idx.size(),
             " does not match tensor rank ", rank());
    int64_t off = 0;
    int i = 0;
    for (int64_t v : idx) {
        TS_CHECK(v >= 0 && v < shape[static_cast<size_t>(i)], "index ", v, " out of range for dim ",
                 i, " of ", shape_str(shape));
        off = off * shape[static_cast<size_t>(i)] + v;
        ++i;
    }
    return off;
}

void Tensor::ensure_grad() {
    if (grad.empty()) grad.assign(data.size(), 0.0);
}

void Tensor::zero_grad() {
    if (!grad.empty()) std::fill(grad.begin(), grad.end(), 0.0);
}

void Tensor::validate() const {
    TS_CHECK(!shape.empty(), "tensor rank must be >= 1");
    for (int64_t d : shape) TS_CHECK(d >= 1, "tensor dims must be >= 1, got ", shape_str(shape));
    TS_CHECK(static_cast<int64_t>(data.size()) == shape_numel(shape), "data length ", data.size(),
             " does not match shape ", shape_str(shape));
    TS_CHECK(grad.empty() || grad.size() == data.size(), "grad length ", grad.size(),
             " does not match data length ", data.size());
}

// ---------------------------------------------------------------------------
// kernels

namespace kernels {

namespace {

// Register-tiled kernel; the fixed-size accumulator tile keeps the inner
// loops vectorizable. Per output element the reduction runs over r in
// ascending order, so results do not depend on the tiling.
constexpr int kMr = 4;
constexpr int kNr = 32;

void gemm_tiled(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n,
                bool accumulate) {
    for (int64_t i0 = 0; i0 < m; i0 += kMr) {
        const int mr = static_cast<int>(std::min<int64_t>(kMr, m - i0));
        for (int64_t j0 = 0; j0 < n; j0 += kNr) {
            const int nr = static_cast<int>(std::min<int64_t>(kNr, n - j0));
            double acc[kMr][kNr];
            for (int i = 0; i < kMr; ++i)
                for (int j = 0; j < kNr; ++j) acc[i][j] = 0.0;
            if (mr == kMr && nr == kNr) {
                for (int64_t r = 0; r < k; ++r) {
                    const double* br = b + r * n + j0;
                    for (int i = 0; i < kMr; ++i) {
                        const double x = a[(i0 + i) * k + r];
                        for (int j = 0; j < kNr; ++j) acc[i][j] += x * br[j];
                    }
                }
            } else {
                for (int64_t r = 0; r < k; ++r) {
                    const double* br = b + r * n + j0;
                    for (int i = 0; i < mr; ++i) {
                        const double x = a[(i0 + i) * k + r];
                        for (int j = 0; j < nr; ++j) acc[i][j] += x * br[j];
                    }
                }
            }
            for (int i = 0; i < mr; ++i) {
                double* ci = c + (i0 + i) * n + j0;
                if (accumulate)
                    for (int j = 0; j < nr; ++j) ci[j] += acc[i][j];
                else
                    for (int j = 0; j < nr; ++j) ci[j] = acc[i][j];
            }
        }
    }
}

// rows x cols -> cols x rows into a reused per-thread scratch; cheap next
// to the O(mkn) product
const double* transposed(const double* src, int64_t rows, int64_t cols) {
    thread_local std::vector<double> scratch;
    const size_t need = static_cast<size_t>(rows * cols);
    if (scratch.size() < need) scratch.resize(need);
    for (int64_t i = 0; i < rows; ++i)
        for (int64_t j = 0; j < cols; ++j) scratch[static_cast<size_t>(j * rows + i)] = src[i * cols + j];
    return scratch.data();
}

}  // namespace

void gemm(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n,
          bool accumulate, const double* bias) {
    gemm_tiled(a, b, c, m, k, n, accumulate);
    if (bias)
        for (int64_t i = 0; i < m; ++i) {
            double* ci = c + i * n;
            for (int64_t j = 0; j < n; ++j) ci[j] += bias[j];
        }
}

void gemm_nt(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n,
             bool accumulate) {
    if (m * n * k <= 32768) {
        // direct dot products; both operands are row-contiguous over k
        for (int64_t i = 0; i < m; ++i) {
            const double* __restrict ai = a + i * k;
            double* __restrict ci = c + i * n;
            for (int64_t j = 0; j < n; ++j) {
                const double* __restrict bj = b + j * k;
                double acc = 0.0;
                for (int64_t r = 0; r < k; ++r) acc += ai[r] * bj[r];
                ci[j] = accumulate ? ci[j] + acc : acc;
            }
        }
        return;
    }
    gemm_tiled(a, transposed(b, n, k), c, m, k, n, accumulate);  // [n,k] -> [k,n]
}

void gemm_tn(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n,
             bool accumulate) {
    if (m * n * k <= 32768) {
        if (!accumulate) std::memset(c, 0, sizeof(double) * static_cast<size_t>(m * n));
        // r-outer axpy keeps the per-element reduction in ascending r order
        for (int64_t r = 0; r < k; ++r) {
            const double* __restrict ar = a + r * m;
            const double* __restrict br = b + r * n;
            for (int64_t i = 0; i < m; ++i) {
                const double x = ar[i];
                double* __restrict ci = c + i * n;
                for (int64_t j = 0; j < n; ++j) ci[j] += x * br[j];
            }
        }
        return;
    }
    gemm_tiled(transposed(a, k, m), b, c, m, k, n, accumulate);  // [k,m] -> [m,k]
}

}  // namespace kernels

namespace {
// 4-way partial sums; reassociation is part of this kernel's definition
double detail_sum(const double* x, int64_t n) {
    double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
    int64_t j = 0;
    for (; j + 4 <= n; j += 4) {
        s0 += x[j];
        s1 += x[j + 1];
        s2 += x[j + 2];
        s3 += x[j + 3];
    }
    for (; j < n; ++j) s0 += x[j];
    return (s0 + s1) + (s2 + s3);
}
}  // namespace

// ---------------------------------------------------------------------------
// forward ops

Tensor matmul(const Tensor& a, const Tensor& b) {
    TS_CHECK(a.rank() == 2 && b.rank() == 2 && a.shape[1] == b.shape[0],
             "matmul dimension mismatch: ", shape_str(a.shape), " x ", shape_str(b.shape));
    Tensor c = Tensor::uninit({a.shape[0], b.shape[1]});
    kernels::gemm(a.data.data(), b.data.data(), c.data.data(), a.shape[0], a.shape[1], b.shape[1]);
    return c;
}

MatmulGrads matmul_backward(const Tensor& a, const Tensor& b, const Tensor& upstream) {
    TS_CHECK(upstream.rank() == 2 && upstream.shape[0] == a.shape[0] &&
                 upstream.shape[1] == b.shape[1],
             "matmul upstream shape ", shape_str(upstream.shape), " does not match ",
             shape_str(a.shape), " x ", shape_str(b.shape));
    MatmulGrads g;
    g.da = Tensor::uninit(a.shape);
    g.db = Tensor::uninit(b.shape);
    // dA = dC * B^T, dB = A^T * dC
    kernels::gemm_nt(upstream.data.data(), b.data.data(), g.da.data.data(), a.shape[0], b.shape[1],
                     a.shape[1]);
    kernels::gemm_tn(a.data.data(), upstream.data.data(), g.db.data.data(), a.shape[1], a.shape[0],
                     b.shape[1]);
    return g;
}

Tensor softmax_lastdim(const Tensor& x) {
    const int64_t n = x.shape.back();
    const int64_t slices = x.numel() / n;
    Tensor out = Tensor::uninit(x.shape);
    for (int64_t s = 0; s < slices; ++s) {
        const double* xi = x.data.data() + s * n;
        double* oi = out.data.data() + s * n;
        double mx = xi[0];
        for (int64_t j = 0; j < n; ++j) {
            TS_CHECK(!std::isnan(xi[j]), "softmax rejects NaN input (slice ", s, ", entry ", j, ")");
            mx = std::max(mx, xi[j]);
        }
        double sum = 0.0;
        for (int64_t j = 0; j < n; ++j) {
            oi[j] = std::exp(xi[j] - mx);
            sum += oi[j];
        }
        for (int64_t j = 0; j < n; ++j) oi[j] /= sum;
    }
    return out;
}

Tensor softmax_lastdim_backward(const Tensor& probs, const Tensor& upstream) {
    TS_CHECK(probs.shape == upstream.shape, "softmax backward shape mismatch: ",
             shape_str(probs.shape), " vs ", shape_str(upstream.shape));
    const int64_t n = probs.shape.back();
    const int64_t slices = probs.numel() / n;
    Tensor dx = Tensor::uninit(probs.shape);
    // Jacobian diag(p) - p p^T applied to the upstream row
    for (int64_t s = 0; s < slices; ++s) {
        const double* p = probs.data.data() + s * n;
        const double* g = upstream.data.data() + s * n;
        double* d = dx.data.data() + s * n;
        double dot = 0.0;
        for (int64_t j = 0; j < n; ++j) dot += p[j] * g[j];
        for (int64_t j = 0; j < n; ++j) d[j] = p[j] * (g[j] - dot);
    }
    return dx;
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
    const int64_t d = x.shape.back();
    TS_CHECK(gamma.rank() == 1 && gamma.shape[0] == d && beta.rank() == 1 && beta.shape[0] == d,
             "layer_norm dimension mismatch: x ", shape_str(x.shape), ", gamma ",
             shape_str(gamma.shape), ", beta ", shape_str(beta.shape));
    const int64_t slices = x.numel() / d;
    Tensor out = Tensor::uninit(x.shape);
    for (int64_t s = 0; s < slices; ++s) {
        const double* xi = x.data.data() + s * d;
        double* oi = out.data.data() + s * d;
        const double mean = detail_sum(xi, d) / static_cast<double>(d);
        double var = 0.0;  // biased (divide-by-D) estimator
        {
            double v0 = 0.0, v1 = 0.0, v2 = 0.0, v3 = 0.0;
            int64_t j = 0;
            for (; j + 4 <= d; j += 4) {
                const double t0 = xi[j] - mean, t1 = xi[j + 1] - mean;
                const double t2 = xi[j + 2] - mean, t3 = xi[j + 3] - mean;
                v0 += t0 * t0;
                v1 += t1 * t1;
                v2 += t2 * t2;
                v3 += t3 * t3;
            }
            for (; j < d; ++j) {
                const double t = xi[j] - mean;
                v0 += t * t;
            }
            var = ((v0 + v1) + (v2 + v3));
        }
        var /= static_cast<double>(d);
        const double inv = 1.0 / std::sqrt(var + eps);
        for (int64_t j = 0; j < d; ++j)
            oi[j] = (xi[j] - mean) * inv * gamma.data[static_cast<size_t>(j)] +
                    beta.data[static_cast<size_t>(j)];
    }
    return out;
}

LayerNormGrads layer_norm_backward(const Tensor& x, const Tensor& gamma, double eps,
                                   const Tensor& upstream) {
    TS_CHECK(x.shape == upstream.shape, "layer_norm backward shape mismatch: ", shape_str(x.shape),
             " vs ", shape_str(upstream.shape));
    const int64_t d = x.shape.back();
    const int64_t slices = x.numel() / d;
    LayerNormGrads g;
    g.dx = Tensor::uninit(x.shape);
    g.dgamma = Tensor(gamma.shape);
    g.dbeta = Tensor(gamma.shape);
    const double* __restrict gm = gamma.data.data();
    double* __restrict dgm = g.dgamma.data.data();
    double* __restrict dbt = g.dbeta.data.data();
    thread_local std::vector<double> xhat_buf, h_buf;
    if (xhat_buf.size() < static_cast<size_t>(d)) {
        xhat_buf.resize(static_cast<size_t>(d));
        h_buf.resize(static_cast<size_t>(d));
    }
    double* __restrict xh = xhat_buf.data();
    double* __restrict hb = h_buf.data();
    for (int64_t s = 0; s < slices; ++s) {
        const double* __restrict xi = x.data.data() + s * d;
        const double* __restrict up = upstream.data.data() + s * d;
        double* __restrict dxi = g.dx.data.data() + s * d;
        const double mean = detail_sum(xi, d) / static_cast<double>(d);
        double var;
        {
            double v0 = 0.0, v1 = 0.0, v2 = 0.0, v3 = 0.0;
            int64_t j = 0;
            for (; j + 4 <= d; j += 4) {
                const double t0 = xi[j] - mean, t1 = xi[j + 1] - mean;
                const double t2 = xi[j + 2] - mean, t3 = xi[j + 3] - mean;
                v0 += t0 * t0;
                v1 += t1 * t1;
                v2 += t2 * t2;
                v3 += t3 * t3;
            }
            for (; j < d; ++j) {
                const double t = xi[j] - mean;
                v0 += t * t;
            }
            var = ((v0 + v1) + (v2 + v3));
        }
        var /= static_cast<double>(d);
        const double inv = 1.0 / std::sqrt(var + eps);
        // h = up * gamma; dx = inv * (h - mean(h) - xhat * mean(h * xhat))
        for (int64_t j = 0; j < d; ++j) {
            const double xhat = (xi[j] - mean) * inv;
            xh[j] = xhat;
            hb[j] = up[j] * gm[j];
            dgm[j] += up[j] * xhat;
            dbt[j] += up[j];
        }
        const double h_mean = detail_sum(hb, d) / static_cast<double>(d);
        double hx_sum;
        {
            double v0 = 0.0, v1 = 0.0, v2 = 0.0, v3 = 0.0;
            int64_t j = 0;
            for (; j + 4 <= d; j += 4) {
                v0 += hb[j] * xh[j];
                v1 += hb[j + 1] * xh[j + 1];
                v2 += hb[j + 2] * xh[j + 2];
                v3 += hb[j + 3] * xh[j + 3];
            }
            for (; j < d; ++j) v0 += hb[j] * xh[j];
            hx_sum = ((v0 + v1) + (v2 + v3));
        }
        const double hx_mean = hx_sum / static_cast<double>(d);
        for (int64_t j = 0; j < d; ++j) dxi[j] = inv * (hb[j] - h_mean - xh[j] * hx_mean);
    }
    return g;
}

namespace {
constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

inline double norm_cdf(double x) { return 0.5 * std::erfc(-x * kInvSqrt2); }
inline double norm_pdf(double x) { return kInvSqrt2Pi * std::exp(-0.5 * x * x); }
}  // namespace

Tensor gelu(const Tensor& x) {
    Tensor out = Tensor::uninit(x.shape);
    for (size_t i = 0; i < x.data.size(); ++i) out.data[i] = x.data[i] * norm_cdf(x.data[i]);
    return out;
}

Tensor gelu_backward(const Tensor& x, const Tensor& upstream) {
    TS_CHECK(x.shape == upstream.shape, "gelu backward shape mismatch: ", shape_str(x.shape),
             " vs ", shape_str(upstream.shape));
    Tensor dx = Tensor::uninit(x.shape);
    for (size_t i = 0; i < x.data.size(); ++i) {
        const double v = x.data[i];
        dx.data[i] = upstream.data[i] * (norm_cdf(v) + v * norm_pdf(v));
    }
    return dx;
}

Tensor add(const Tensor& a, const Tensor& b) {
    TS_CHECK(a.shape == b.shape, "add shape mismatch: ", shape_str(a.shape), " vs ",
             shape_str(b.shape));
    Tensor out = Tensor::uninit(a.shape);
    for (size_t i = 0; i < a.data.size(); ++i) out.data[i] = a.data[i] + b.data[i];
    return out;
}

Tensor scale(const Tensor& x, double s) {
    Tensor out = Tensor::uninit(x.shape);
    for (size_t i = 0; i < x.data.size(); ++i) out.data[i] = x.data[i] * s;
    return out;
}

namespace {
// outer elements before the axis, inner elements after it
void axis_extents(const std::vector<int64_t>& shape, int axis, int64_t* outer, int64_t* inner) {
    int64_t o = 1, in = 1;
    for (int i = 0; i < axis; ++i) o *= shape[static_cast<size_t>(i)];
    for (size_t i = static_cast<size_t>(axis) + 1; i < shape.size(); ++i) in *= shape[i];
    *outer = o;
    *inner = in;
}
}  // namespace

Tensor concat(const std::vector<Tensor>& parts, int axis) {
    TS_CHECK(!parts.empty(), "concat needs at least one part");
    const Tensor& first = parts.front();
    TS_CHECK(axis >= 0 && axis < first.rank(), "concat axis ", axis, " out of range for ",
             shape_str(first.shape));
    int64_t total_axis = 0;
    for (const Tensor& p : parts) {
        TS_CHECK(p.rank() == first.rank(), "concat rank mismatch: ", shape_str(first.shape),
                 " vs ", shape_str(p.shape));
        for (int i = 0; i < first.rank(); ++i)
            TS_CHECK(i == axis || p.shape[static_cast<size_t>(i)] ==
                                      first.shape[static_cast<size_t>(i)],
                     "concat shape mismatch off-axis: ", shape_str(first.shape), " vs ",
                     shape_str(p.shape));
        total_axis += p.shape[static_cast<size_t>(axis)];
    }
    std::vector<int64_t> out_shape = first.shape;
    out_shape[static_cast<size_t>(axis)] = total_axis;
    Tensor out = Tensor::uninit(out_shape);
    int64_t outer, inner;
    axis_extents(out_shape, axis, &outer, &inner);
    for (int64_t o = 0; o < outer; ++o) {
        int64_t written = 0;
        for (const Tensor& p : parts) {
            const int64_t pa = p.shape[static_cast<size_t>(axis)];
            std::memcpy(out.data.data() + (o * total_axis + written) * inner,
                        p.data.data() + o * pa * inner,
                        sizeof(double) * static_cast<size_t>(pa * inner));
            written += pa;
        }
    }
    return out;
}

std::vector<Tensor> split(const Tensor& x, int axis, const std::vector<int64_t>& sizes) {
    TS_CHECK(axis >= 0 && axis < x.rank(), "split axis ", axis, " out of range for ",
             shape_str(x.shape));
    int64_t total = 0;
    for (int64_t s : sizes) {
        TS_CHECK(s >= 1, "split sizes must be >= 1");
        total += s;
    }
    TS_CHECK(total == x.shape[static_cast<size_t>(axis)], "split sizes sum to ", total,
             " but axis ", axis, " of ", shape_str(x.shape), " has ",
             x.shape[static_cast<size_t>(axis)]);
    int64_t outer, inner;
    axis_extents(x.shape, axis, &outer, &inner);
    const int64_t xa = x.shape[static_cast<size_t>(axis)];
    std::vector<Tensor> parts;
    parts.reserve(sizes.size());
    int64_t start = 0;
    for (int64_t s : sizes) {
        std::vector<int64_t> ps = x.shape;
        ps[static_cast<size_t>(axis)] = s;
        Tensor p = Tensor::uninit(ps);
        for (int64_t o = 0; o < outer; ++o)
            std::memcpy(p.data.data() + o * s * inner,
                        x.data.data() + (o * xa + start) * inner,
                        sizeof(double) * static_cast<size_t>(s * inner));
        parts.push_back(std::move(p));
        start += s;
    }
    return parts;
}

std::vector<Tensor> concat_backward(const Tensor& upstream, int axis,
                                    const std::vector<int64_t>& sizes) {
    return split(upstream, axis, sizes);
}

Tensor split_backward(const std::vector<Tensor>& upstream_parts, int axis) {
    return concat(upstream_parts, axis);
}

Tensor reshape(const Tensor& x, std::vector<int64_t> dims) {
    TS_CHECK(shape_numel(dims) == x.numel(), "reshape ", shape_str(x.shape), " -> ",
             shape_str(dims), " changes the element count");
    Tensor out = x;
    out.shape = std::move(dims);
    out.grad.clear();
    return out;
}

Tensor transpose_last2(const Tensor& x) {
    TS_CHECK(x.rank() >= 2, "transpose needs rank >= 2, got ", shape_str(x.shape));
    std::vector<int64_t> out_shape = x.shape;
    std::swap(out_shape[out_shape.size() - 1], out_shape[out_shape.size() - 2]);
    Tensor out = Tensor::uninit(out_shape);
    const int64_t rows = x.shape[x.shape.size() - 2];
    const int64_t cols = x.shape[x.shape.size() - 1];
    const int64_t mats = x.numel() / (rows * cols);
    for (int64_t m = 0; m < mats; ++m) {
        const double* src = x.data.data() + m * rows * cols;
        double* dst = out.data.data() + m * rows * cols;
        for (int64_t i = 0; i < rows; ++i)
            for (int64_t j = 0; j < cols; ++j) dst[j * rows + i] = src[i * cols + j];
    }
    return out;
}

}  // namespace tokshift
