#pragma once

#include <cstddef>
#include <vector>

#include "sara/autodiff.hpp"

namespace sara {

// ---------------------------------------------------------------------------
// Differentiable ops. Every op records its result on the tape of its inputs
// and registers a gradient rule when any input requires a gradient.
// ---------------------------------------------------------------------------

// Elementwise binary ops. Broadcasting is over leading axes only: the shape
// of the smaller operand must be a suffix of the other's shape.
template <Scalar T> Var<T> add(Var<T> a, Var<T> b);
template <Scalar T> Var<T> sub(Var<T> a, Var<T> b);
template <Scalar T> Var<T> mul(Var<T> a, Var<T> b);
// Throws SingularityError when |b| is below the smallest normal value.
template <Scalar T> Var<T> div(Var<T> a, Var<T> b);

template <Scalar T> Var<T> scale(Var<T> a, T s);
template <Scalar T> Var<T> add_scalar(Var<T> a, T s);
template <Scalar T> Var<T> neg(Var<T> a) { return scale(a, T(-1)); }
template <Scalar T> Var<T> square(Var<T> a);

// [m,k] x [k,n] -> [m,n]
template <Scalar T> Var<T> matmul(Var<T> a, Var<T> b);
// [B,m,k] x [B,k,n] -> [B,m,n]; with transpose_b, b is [B,n,k].
template <Scalar T> Var<T> batched_matmul(Var<T> a, Var<T> b, bool transpose_b);
// x[..., in] * w[in, out] (+ bias[out]) over the last axis.
template <Scalar T> Var<T> linear(Var<T> x, Var<T> w, const Var<T>* bias);
template <Scalar T> Var<T> linear(Var<T> x, Var<T> w, Var<T> bias) { return linear(x, w, &bias); }

template <Scalar T> Var<T> transpose(Var<T> a);
template <Scalar T> Var<T> reshape(Var<T> a, Shape shape);
// Value copy with no gradient path.
template <Scalar T> Var<T> detach(Var<T> a);

// Reductions. The axis forms drop the reduced axis.
template <Scalar T> Var<T> sum(Var<T> a);
template <Scalar T> Var<T> mean(Var<T> a);
template <Scalar T> Var<T> sum(Var<T> a, int axis);
template <Scalar T> Var<T> mean(Var<T> a, int axis);
template <Scalar T> Var<T> max(Var<T> a, int axis);

// Activations.
template <Scalar T> Var<T> silu(Var<T> a);
// tanh approximation.
template <Scalar T> Var<T> gelu(Var<T> a);
template <Scalar T> Var<T> sigmoid(Var<T> a);
template <Scalar T> Var<T> softplus(Var<T> a);
// Throws DomainError on non-positive entries.
template <Scalar T> Var<T> log(Var<T> a);
// Over the last axis.
template <Scalar T> Var<T> softmax(Var<T> a);
// Over the last axis, no affine parameters; variance gets eps added.
template <Scalar T> Var<T> layernorm(Var<T> a, T eps = T(1e-5));
// Rows of the last axis divided by max(||row||, eps).
template <Scalar T> Var<T> normalize_rows(Var<T> a, T eps);

// Cross-correlation. x[b,c,h,w], kernel[o,c,kh,kw], optional bias[o].
template <Scalar T>
Var<T> conv2d(Var<T> x, Var<T> kernel, const Var<T>* bias, std::size_t stride, std::size_t padding);
template <Scalar T>
Var<T> conv2d(Var<T> x, Var<T> kernel, std::size_t stride, std::size_t padding) {
    return conv2d(x, kernel, static_cast<const Var<T>*>(nullptr), stride, padding);
}
// [b,c,h,w] -> [b,c]
template <Scalar T> Var<T> global_avg_pool(Var<T> x);

// Token-grid plumbing for patch-based transformers.
// [b,c,h,w] -> [b, (h/p)(w/p), c*p*p]
template <Scalar T> Var<T> patchify(Var<T> x, std::size_t patch);
// Inverse of patchify for the given channel count and spatial size.
template <Scalar T> Var<T> unpatchify(Var<T> tokens, std::size_t patch, std::size_t channels, std::size_t h, std::size_t w);
// [b,N,D] -> [b,D,s,s] with N = s*s.
template <Scalar T> Var<T> tokens_to_grid(Var<T> tokens);

// Columns [start, start+len) of the last axis.
template <Scalar T> Var<T> slice_last(Var<T> a, std::size_t start, std::size_t len);
// table[V,D] gathered at rows idx -> [idx.size(), D]
template <Scalar T> Var<T> gather_rows(Var<T> table, const std::vector<int>& idx);

// adaLN helpers over x[b,N,D] with per-sample vectors [b,D].
// x * (1 + scale) + shift
template <Scalar T> Var<T> modulate(Var<T> x, Var<T> shift, Var<T> scale);
// x * gate
template <Scalar T> Var<T> gate(Var<T> x, Var<T> g);

// Multi-head self-attention over a fused projection qkv[b,N,3D] -> [b,N,D].
template <Scalar T> Var<T> attention(Var<T> qkv, std::size_t heads);

// ---------------------------------------------------------------------------
// Non-differentiable linear algebra (accumulated in double).
// ---------------------------------------------------------------------------

// Singular values of a 2-D tensor, descending. One-sided Jacobi;
// throws NumericError if the sweep cap is reached before convergence.
template <Scalar T> std::vector<double> svd_values(const Tensor<T>& a);

struct SymmetricEigen {
    std::vector<double> values;   // ascending
    std::vector<double> vectors;  // row-major n x n, column j pairs with values[j]
};

// Cyclic Jacobi eigen-decomposition of a symmetric row-major n x n matrix.
SymmetricEigen symmetric_eigen(const std::vector<double>& a, std::size_t n, int max_sweeps = 100,
                               double tol = 1e-12);

// Raw GEMM on row-major buffers: C (+)= op(A) * op(B).
template <Scalar T>
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b,
          T* c, bool accumulate);

}  // namespace sara
