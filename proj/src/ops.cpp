#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>

#include "ops_detail.hpp"

namespace sara {

using detail::leading_rows;
using detail::require_rank;
using detail::require_same_shape;

template <Scalar T>
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b,
          T* c, bool accumulate) {
    using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    using CMap = Eigen::Map<const Mat>;
    const auto M = static_cast<Eigen::Index>(m);
    const auto N = static_cast<Eigen::Index>(n);
    const auto K = static_cast<Eigen::Index>(k);
    Eigen::Map<Mat> C(c, M, N);
    CMap A(a, trans_a ? K : M, trans_a ? M : K);
    CMap B(b, trans_b ? N : K, trans_b ? K : N);
    if (!accumulate) C.setZero();
    if (!trans_a && !trans_b) {
        C.noalias() += A * B;
    } else if (trans_a && !trans_b) {
        C.noalias() += A.transpose() * B;
    } else if (!trans_a && trans_b) {
        C.noalias() += A * B.transpose();
    } else {
        C.noalias() += A.transpose() * B.transpose();
    }
}

template void gemm<float>(bool, bool, std::size_t, std::size_t, std::size_t, const float*, const float*, float*,
                          bool);
template void gemm<double>(bool, bool, std::size_t, std::size_t, std::size_t, const double*, const double*,
                           double*, bool);

// ---------------------------------------------------------------------------
// Elementwise binary ops with leading-axis broadcasting
// ---------------------------------------------------------------------------

namespace {

bool is_suffix(const Shape& small, const Shape& big) {
    if (small.size() > big.size()) return false;
    return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

Shape broadcast_shape(const Shape& a, const Shape& b, const char* op) {
    if (is_suffix(b, a)) return a;
    if (is_suffix(a, b)) return b;
    throw DimensionError(std::string(op) + ": shapes " + shape_str(a) + " and " + shape_str(b) +
                         " do not broadcast over leading axes");
}

enum class BinOp { add, sub, mul, div };

template <Scalar T>
Var<T> binary(Var<T> a, Var<T> b, BinOp op, const char* name) {
    const Tensor<T>& av = a.value();
    const Tensor<T>& bv = b.value();
    Shape out_shape = broadcast_shape(av.shape(), bv.shape(), name);
    const std::size_t n = shape_numel(out_shape);
    const std::size_t na = av.size();
    const std::size_t nb = bv.size();
    if (op == BinOp::div) {
        for (T v : bv.data()) {
            if (!(std::abs(v) >= std::numeric_limits<T>::min())) {
                throw SingularityError("div: divisor entry below the smallest normal value");
            }
        }
    }
    Tensor<T> out(out_shape);
    T* o = out.ptr();
    const T* pa = av.ptr();
    const T* pb = bv.ptr();
    auto apply = [&](auto f) {
        if (na == n && nb == n) {
            for (std::size_t i = 0; i < n; ++i) o[i] = f(pa[i], pb[i]);
        } else if (na == n) {
            for (std::size_t i = 0; i < n; i += nb)
                for (std::size_t j = 0; j < nb; ++j) o[i + j] = f(pa[i + j], pb[j]);
        } else {
            for (std::size_t i = 0; i < n; i += na)
                for (std::size_t j = 0; j < na; ++j) o[i + j] = f(pa[j], pb[i + j]);
        }
    };
    switch (op) {
        case BinOp::add: apply([](T x, T y) { return x + y; }); break;
        case BinOp::sub: apply([](T x, T y) { return x - y; }); break;
        case BinOp::mul: apply([](T x, T y) { return x * y; }); break;
        case BinOp::div: apply([](T x, T y) { return x / y; }); break;
    }
    const std::uint32_t ia = a.id();
    const std::uint32_t ib = b.id();
    return a.tape().record(std::move(out), {a, b}, [ia, ib, na, nb, n, op](Tape<T>& tape, const Tensor<T>& g, const Tensor<T>&) {
        const T* pg = g.ptr();
        const T* pa = tape.value(ia).ptr();
        const T* pb = tape.value(ib).ptr();
        // Visits (i, ja, jb) in increasing i; the smaller operand repeats with
        // period equal to its size, so no modulo is needed.
        auto each = [&](auto f) {
            if (na == n && nb == n) {
                for (std::size_t i = 0; i < n; ++i) f(i, i, i);
            } else if (na == n) {
                for (std::size_t i = 0; i < n; i += nb)
                    for (std::size_t j = 0; j < nb; ++j) f(i + j, i + j, j);
            } else {
                for (std::size_t i = 0; i < n; i += na)
                    for (std::size_t j = 0; j < na; ++j) f(i + j, j, i + j);
            }
        };
        if (tape.requires_grad(ia)) {
            T* ga = tape.grad(ia).ptr();
            switch (op) {
                case BinOp::add:
                case BinOp::sub: each([&](std::size_t i, std::size_t ja, std::size_t) { ga[ja] += pg[i]; }); break;
                case BinOp::mul: each([&](std::size_t i, std::size_t ja, std::size_t jb) { ga[ja] += pg[i] * pb[jb]; }); break;
                case BinOp::div: each([&](std::size_t i, std::size_t ja, std::size_t jb) { ga[ja] += pg[i] / pb[jb]; }); break;
            }
        }
        if (tape.requires_grad(ib)) {
            T* gb = tape.grad(ib).ptr();
            switch (op) {
                case BinOp::add: each([&](std::size_t i, std::size_t, std::size_t jb) { gb[jb] += pg[i]; }); break;
                case BinOp::sub: each([&](std::size_t i, std::size_t, std::size_t jb) { gb[jb] -= pg[i]; }); break;
                case BinOp::mul: each([&](std::size_t i, std::size_t ja, std::size_t jb) { gb[jb] += pg[i] * pa[ja]; }); break;
                case BinOp::div:
                    each([&](std::size_t i, std::size_t ja, std::size_t jb) { gb[jb] -= pg[i] * pa[ja] / (pb[jb] * pb[jb]); });
                    break;
            }
        }
    });
}

}  // namespace

template <Scalar T>
Var<T> add(Var<T> a, Var<T> b) {
    return binary(a, b, BinOp::add, "add");
}
template <Scalar T>
Var<T> sub(Var<T> a, Var<T> b) {
    return binary(a, b, BinOp::sub, "sub");
}
template <Scalar T>
Var<T> mul(Var<T> a, Var<T> b) {
    return binary(a, b, BinOp::mul, "mul");
}
template <Scalar T>
Var<T> div(Var<T> a, Var<T> b) {
    return binary(a, b, BinOp::div, "div");
}

template <Scalar T>
Var<T> scale(Var<T> a, T s) {
    Tensor<T> out = a.value();
    out *= s;
    const std::uint32_t ia = a.id();
    return a.tape().record(std::move(out), {a}, [ia, s](Tape<T>& tape, const Tensor<T>& g, const Tensor<T>&) {
        T* ga = tape.grad(ia).ptr();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += s * g[i];
    });
}

template <Scalar T>
Var<T> add_scalar(Var<T> a, T s) {
    Tensor<T> out = a.value();
    for (T& v : out.data()) v += s;
    const std::uint32_t ia = a.id();
    return a.tape().record(std::move(out), {a}, [ia](Tape<T>& tape, const Tensor<T>& g, const Tensor<T>&) { tape.grad(ia) += g; });
}

template <Scalar T>
Var<T> square(Var<T> a) {
    Tensor<T> out = a.value();
    for (T& v : out.data()) v *= v;
    const std::uint32_t ia = a.id();
    return a.tape().record(std::move(out), {a}, [ia](Tape<T>& tape, const Tensor<T>& g, const Tensor<T>&) {
        const T* x = tape.value(ia).ptr();
        T* ga = tape.grad(ia).ptr();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += T(2) * x[i] * g[i];
    });
}

// ---------------------------------------------------------------------------
// Products
// ---------------------------------------------------------------------------

template <Scalar T>
Var<T> matmul(Var<T> a, Var<T> b) {
    const Tensor<T>& av = a.value();
    const Tensor<T>& bv = b.value();
    require_rank(av.shape(), 2, "matmul");
    require_rank(bv.shape(), 2, "matmul");
    const std::size_t m = av.dim(0), k = av.dim(1), n = bv.dim(1);
    if (bv.dim(0) != k) {
        throw DimensionError("matmul: inner extents differ " + shape_str(av.shape()) + " x " + shape_str(bv.shape()));
    }
    Tensor<T> out(Shape{m, n});
    gemm(false, false, m, n, k, av.ptr(), bv.ptr(), out.ptr(), false);
    const std::uint32_t ia = a.id(), ib = b.id();
    return a.tape().record(std::move(out), {a, b}, [ia, ib, m, n, k](Tape<T>& tape, const Tensor<T>& g, const Tensor<T>&) {
        if (tape.requires_grad(ia)) gemm(false, true, m, k, n, g.ptr(), tape.value(ib).ptr(), tape.grad(ia).ptr(), true);
        if (tape.requires_grad(ib)) gemm(true, false, k, n, m, tape.value(ia).ptr(), g.ptr(), tape.grad(ib).ptr(), true);
    });
}

template <Scalar T>
Var<T> batched_matmul(Var<T> a, Var<T> b, bool transpose_b) {
    const Tensor<T>& av = a.value();
    const Tensor<T>& bv = b.value();
    require_rank(av.shape(), 3, "batched_matmul");
    require_rank(bv.shape(), 3, "batched_matmul");
    const std::size_t batch = av.dim(0), m = av.dim(1), k = av.dim(2);
    const std::size_t n = transpose_b ? bv.dim(1) : bv.dim(2);
    const std::size_t kb = transpose_b ? bv.dim(2) : bv.dim(1);
    if (bv.dim(0) != batch || kb != k) {
        throw DimensionError("batched_matmul: incompatible " + shape_str(av.shape()) + " x " + shape_str(bv.shape()));
    }
    Tensor<T> out(Shape{batch, m, n});
    for (std::size_t i = 0; i < batch; ++i) {
        gemm(false, transpose_b, m, n, k, av.ptr() + i * m * k, bv.ptr() + i * k * n, out.ptr() + i * m * n, false);
    }
    const std::uint32_t ia = a.id(), ib = b.id();
    return a.tape().record(std::move(out), {a, b},
                           [ia, ib, batch, m, n, k, transpose_b](Tape<T>& tape, const Tensor<T>& g, const Tensor<T>&) {
        const T* pa = tape.value(ia).ptr();
        const T* pb = tape.value(ib).ptr();
        for (std::size_t i = 0; i < batch; ++i) {
            const T* gi = g.ptr() + i * m * n;
            if (tape.requires_grad(ia)) {
                // dA = dC * op(B)^T
                gemm(false, !transpose_b, m, k, n, gi, pb + i * k * n, tape.grad(ia).ptr() + i * m * k, true);
            }
            if (tape.requires_grad(ib)) {
                if (transpose_b) {
                    // B is [n,k]: dB = dC^T * A
                    gemm(true, false, n, k, m, gi, pa + i * m * k, tape.grad(ib).ptr() + i * k * n, true);
                } else {
                    gemm(true, false, k, n, m, pa + i * m * k, gi, tape.grad(ib).ptr() + i * k * n, true);
                }
            }
        }
    });
}

template <Scalar T>
Var<T> linear(Var<T> x, Var<T> w, const Var<T>* bias) {
    const Tensor<T>& xv = x.value();
    const Tensor<T>& wv = w.value();
    require_rank(wv.shape(), 2, "linear");
    if (xv.rank() == 0) throw DimensionError("linear: scalar input");
    const std::size_t in = wv.dim(0), out_dim = wv.dim(1);
    if (xv.dim(-1) != in) {
        throw DimensionError("linear: input " + shape_str(xv.shape()) + " vs weight " + shape_str(wv.shape()));
    }
    if (bias && (bias->value().rank() != 1 || bias->value().dim(0) != out_dim)) {
        throw DimensionError("linear: bias shape " + shape_str(bias->value().shape()));
    }
    const std::size_t rows = leading_rows(xv.shape());
    Shape out_shape = xv.shape();
    out_shape.back() = out_dim;
    Tensor<T> out(out_shape);
    if (bias) {
        const T* pb = bias->value().ptr();
        T* o = out.ptr();
        for (std::size_t r = 0; r < rows; ++r) std::copy(pb, pb + out_dim, o + r * out_dim);
    }
    gemm(false, false, rows, out_dim, in, xv.ptr(), wv.ptr(), out.ptr(), bias != nullptr);
    const std::uint32_t ix = x.id(), iw = w.id();
    const std::uint32_t ib = bias ? bias->id() : 0;
    const bool has_bias = bias != nullptr;
    auto fn = [ix, iw, ib, has_bias, rows, in, out_dim](Tape<T>& tape, const Tensor<T>& g, const Tensor<T>&) {
        if (tape.requires_grad(ix)) gemm(false, true, rows, in, out_dim, g.ptr(), tape.value(iw).ptr(), tape.grad(ix).ptr(), true);
        if (tape.requires_grad(iw)) gemm(true, false, in, out_dim, rows, tape.value(ix).ptr(), g.ptr(), tape.grad(iw).ptr(), true);
        if (has_bias && tape.requires_grad(ib)) {
            T* gb = tape.grad(ib).ptr();
            const T* pg = g.ptr();
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t j = 0; j < out_dim; ++j) gb[j] += pg[r * out_dim + j];
        }
    };
    if (bias) return x.tape().record(std::move(out), {x, w, *bias}, std::move(fn));
    return x.tape().record(std::move(out), {x, w}, std::move(fn));
}

template <Scalar T>
Var<T> transpose(Var<T> a) {
    const Tensor<T>& av = a.value();
    require_rank(av.shape(), 2, "transpose");
    const std::size_t m = av.dim(0), n = av.dim(1);
    Tensor<T> out(Shape{n, m});
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out[j * m + i] = av[i * n + j];
    const std::uint32_t ia = a.id();
    return a.tape().record(std::move(out), {a}, [ia, m, n](Tape<T>& tape, const Tensor<T>& g, const Tensor<T>&) {
        T* ga = tape.grad(ia).ptr();
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += g[j * m + i];
    });
}

template <Scalar T>
Var<T> reshape(Var<T> a, Shape shape) {
    Tensor<T> out = a.value().reshaped(std::move(shape));
    const std::uint32_t ia = a.id();
    return a.tape().record(std::move(out), {a}, [ia](Tape<T>& tape, const Tensor<T>& g, const Tensor<T>&) {
        Tensor<T>& ga = tape.grad(ia);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    });
}

template <Scalar T>
Var<T> detach(Var<T> a) {
    return a.tape().constant(a.value());
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

namespace {

struct AxisView {
    std::size_t outer = 1, len = 1, inner = 1;
    Shape reduced;
};

AxisView axis_view(const Shape& s, int axis, const char* op) {
    const int r = static_cast<int>(s.size());
    const int ax = axis < 0 ? axis + r : axis;
    if (ax < 0 || ax >= r) throw DimensionError(std::string(op) + ": axis out of range for " + shape_str(s));
    AxisView v;
    for (int i = 0; i < ax; ++i) v.outer *= s[static_cast<std::size_t>(i)];
    v.len = s[static_cast<std::size_t>(ax)];
    for (int i = ax + 1; i < r; ++i) v.inner *= s[static_cast<std::size_t>(i)];
    for (int i = 0; i < r; ++i)
        if (i != ax) v.reduced.push_back(s[static_cast<std::size_t>(i)]);
    return v;
}

}  // namespace

template <Scalar T>
Var<T> sum(Var<T> a) {
    T acc = 0;
    for (T v : a.value().data()) acc += v;
    const std::uint32_t ia = a.id();
    return a.tape().record(Tensor<T>::scalar(acc), {a}, [ia](Tape<T>& tape, const Tensor<T>& g, const Tensor<T>&) {
        const T gv = g[0];
        for (T& v : tape.grad(ia).data()) v += gv;
    });
}

template <Scalar T>
Var<T> mean(Var<T> a) {
    const std::size_t n = a.value().size();
    return scale(sum(a), T(1) / static_cast<T>(n));
}

template <Scalar T>
Var<T> sum(Var<T> a, int axis) {
    const Tensor<T>& av = a.value();
    AxisView v = axis_view(av.shape(), axis, "sum");
    Tensor<T> out(v.reduced);
    for (std::size_t o = 0; o < v.outer; ++o)
        for (std::size_t l = 0; l < v.len; ++l)
            for (std::size_t i = 0; i < v.inner; ++i) out[o * v.inner + i] += av[(o * v.len + l) * v.inner + i];
    const std::uint32_t ia = a.id();
    return a.tape().record(std::move(out), {a}, [ia, v](Tape<T>& tape, const Tensor<T>& g, const Tensor<T>&) {
        T* ga = tape.grad(ia).ptr();
        for (std::size_t o = 0; o < v.outer; ++o)
            for (std::size_t l = 0; l < v.len; ++l)
                for (std::size_t i = 0; i < v.inner; ++i) ga[(o * v.len + l) * v.inner + i] += g[o * v.inner + i];
    });
}

template <Scalar T>
Var<T> mean(Var<T> a, int axis) {
    const std::size_t len = a.value().dim(axis);
    return scale(sum(a, axis), T(1) / static_cast<T>(len));
}

template <Scalar T>
Var<T> max(Var<T> a, int axis) {
    const Tensor<T>& av = a.value();
    AxisView v = axis_view(av.shape(), axis, "max");
    if (v.len == 0) throw DimensionError("max: empty axis");
    Tensor<T> out(v.reduced);
    std::vector<std::size_t> arg(out.size());
    for (std::size_t o = 0; o < v.outer; ++o) {
        for (std::size_t i = 0; i < v.inner; ++i) {
            std::size_t best = 0;
            T bv = av[o * v.len * v.inner + i];
            for (std::size_t l = 1; l < v.len; ++l) {
                const T x = av[(o * v.len + l) * v.inner + i];
                if (x > bv) {
                    bv = x;
                    best = l;
                }
            }
            out[o * v.inner + i] = bv;
            arg[o * v.inner + i] = (o * v.len + best) * v.inner + i;
        }
    }
    const std::uint32_t ia = a.id();
    return a.tape().record(std::move(out), {a}, [ia, arg = std::move(arg)](Tape<T>& tape, const Tensor<T>& g, const Tensor<T>&) {
        T* ga = tape.grad(ia).ptr();
        for (std::size_t j = 0; j < arg.size(); ++j) ga[arg[j]] += g[j];
    });
}

// ---------------------------------------------------------------------------
// Activations
// ---------------------------------------------------------------------------

namespace {

template <Scalar T>
T sigmoid_scalar(T x) {
    if (x >= 0) return T(1) / (T(1) + std::exp(-x));
    const T e = std::exp(x);
    return e / (T(1) + e);
}

// Unary op with derivative computed from the saved input.
template <Scalar T, typename F, typename DF>
Var<T> unary(Var<T> a, F f, DF df) {
    const Tensor<T>& av = a.value();
    Tensor<T> out(av.shape());
    const std::size_t n = av.size();
    const T* x = av.ptr();
    T* o = out.ptr();
    for (std::size_t i = 0; i < n; ++i) o[i] = f(x[i]);
    const std::uint32_t ia = a.id();
    return a.tape().record(std::move(out), {a}, [ia, df](Tape<T>& tape, const Tensor<T>& g, const Tensor<T>&) {
        const T* x = tape.value(ia).ptr();
        T* ga = tape.grad(ia).ptr();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * df(x[i]);
    });
}

template <Scalar T>
constexpr T gelu_c() {
    return T(0.7978845608028654);  // sqrt(2/pi)
}

}  // namespace

// silu and gelu run on Eigen arrays so exp/tanh vectorize; the forward keeps
// the sigmoid / tanh values for the backward pass.
template <Scalar T>
Var<T> silu(Var<T> a) {
    using Arr = Eigen::Array<T, Eigen::Dynamic, 1>;
    using Map = Eigen::Map<const Arr>;
    const Tensor<T>& av = a.value();
    const Map x(av.ptr(), av.size());
    auto sig = std::make_shared<Arr>(x.logistic());
    Tensor<T> out(av.shape());
    Eigen::Map<Arr>(out.ptr(), out.size()) = x * *sig;
    const std::uint32_t ia = a.id();
    return a.tape().record(std::move(out), {a}, [ia, sig](Tape<T>& tape, const Tensor<T>& g, const Tensor<T>&) {
        const Map xs(tape.value(ia).ptr(), g.size());
        const Map gs(g.ptr(), g.size());
        Eigen::Map<Arr>(tape.grad(ia).ptr(), g.size()) += gs * (*sig * (T(1) + xs * (T(1) - *sig)));
    });
}

template <Scalar T>
Var<T> gelu(Var<T> a) {
    using Arr = Eigen::Array<T, Eigen::Dynamic, 1>;
    using Map = Eigen::Map<const Arr>;
    constexpr T k = T(0.044715);
    const Tensor<T>& av = a.value();
    const Map x(av.ptr(), av.size());
    auto th = std::make_shared<Arr>((gelu_c<T>() * (x + k * x.cube())).tanh());
    Tensor<T> out(av.shape());
    Eigen::Map<Arr>(out.ptr(), out.size()) = T(0.5) * x * (T(1) + *th);
    const std::uint32_t ia = a.id();
    return a.tape().record(std::move(out), {a}, [ia, th](Tape<T>& tape, const Tensor<T>& g, const Tensor<T>&) {
        const Map xs(tape.value(ia).ptr(), g.size());
        const Map gs(g.ptr(), g.size());
        const Arr du = gelu_c<T>() * (T(1) + T(3) * k * xs.square());
        Eigen::Map<Arr>(tape.grad(ia).ptr(), g.size()) +=
            gs * (T(0.5) * (T(1) + *th) + T(0.5) * xs * (T(1) - th->square()) * du);
    });
}

template <Scalar T>
Var<T> sigmoid(Var<T> a) {
    return unary(
        a, [](T x) { return sigmoid_scalar(x); },
        [](T x) {
            const T s = sigmoid_scalar(x);
            return s * (T(1) - s);
        });
}

template <Scalar T>
Var<T> softplus(Var<T> a) {
    return unary(
        a, [](T x) { return std::max(x, T(0)) + std::log1p(std::exp(-std::abs(x))); },
        [](T x) { return sigmoid_scalar(x); });
}

template <Scalar T>
Var<T> log(Var<T> a) {
    for (T v : a.value().data()) {
        if (!(v > T(0))) throw DomainError("log: non-positive entry");
    }
    return unary(
        a, [](T x) { return std::log(x); }, [](T x) { return T(1) / x; });
}

template <Scalar T>
Var<T> softmax(Var<T> a) {
    const Tensor<T>& av = a.value();
    if (av.rank() == 0) throw DimensionError("softmax: scalar input");
    const std::size_t d = av.dim(-1);
    const std::size_t rows = leading_rows(av.shape());
    Tensor<T> out(av.shape());
    for (std::size_t r = 0; r < rows; ++r) {
        const T* x = av.ptr() + r * d;
        T* y = out.ptr() + r * d;
        const T m = *std::max_element(x, x + d);
        T s = 0;
        for (std::size_t j = 0; j < d; ++j) {
            y[j] = std::exp(x[j] - m);
            s += y[j];
        }
        for (std::size_t j = 0; j < d; ++j) y[j] /= s;
    }
    const std::uint32_t ia = a.id();
    return a.tape().record(std::move(out), {a}, [ia, d, rows](Tape<T>& tape, const Tensor<T>& g, const Tensor<T>& y) {
        T* ga = tape.grad(ia).ptr();
        for (std::size_t r = 0; r < rows; ++r) {
            const T* yr = y.ptr() + r * d;
            const T* gr = g.ptr() + r * d;
            T dot = 0;
            for (std::size_t j = 0; j < d; ++j) dot += gr[j] * yr[j];
            for (std::size_t j = 0; j < d; ++j) ga[r * d + j] += yr[j] * (gr[j] - dot);
        }
    });
}

template <Scalar T>
Var<T> layernorm(Var<T> a, T eps) {
    const Tensor<T>& av = a.value();
    if (av.rank() == 0) throw DimensionError("layernorm: scalar input");
    const std::size_t d = av.dim(-1);
    const std::size_t rows = leading_rows(av.shape());
    Tensor<T> out(av.shape());
    std::vector<T, AlignedAllocator<T>> rstd(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const T* x = av.ptr() + r * d;
        T* y = out.ptr() + r * d;
        T mu = 0;
        for (std::size_t j = 0; j < d; ++j) mu += x[j];
        mu /= static_cast<T>(d);
        T var = 0;
        for (std::size_t j = 0; j < d; ++j) var += (x[j] - mu) * (x[j] - mu);
        var /= static_cast<T>(d);
        const T rs = T(1) / std::sqrt(var + eps);
        rstd[r] = rs;
        for (std::size_t j = 0; j < d; ++j) y[j] = (x[j] - mu) * rs;
    }
    const std::uint32_t ia = a.id();
    return a.tape().record(std::move(out), {a},
                           [ia, d, rows, rstd = std::move(rstd)](Tape<T>& tape, const Tensor<T>& g, const Tensor<T>& y) {
        T* ga = tape.grad(ia).ptr();
        const T inv_d = T(1) / static_cast<T>(d);
        for (std::size_t r = 0; r < rows; ++r) {
            const T* yr = y.ptr() + r * d;
            const T* gr = g.ptr() + r * d;
            T gm = 0, gy = 0;
            for (std::size_t j = 0; j < d; ++j) {
                gm += gr[j];
                gy += gr[j] * yr[j];
            }
            gm *= inv_d;
            gy *= inv_d;
            for (std::size_t j = 0; j < d; ++j) ga[r * d + j] += rstd[r] * (gr[j] - gm - yr[j] * gy);
        }
    });
}

template <Scalar T>
Var<T> normalize_rows(Var<T> a, T eps) {
    const Tensor<T>& av = a.value();
    if (av.rank() == 0) throw DimensionError("normalize_rows: scalar input");
    const std::size_t d = av.dim(-1);
    const std::size_t rows = leading_rows(av.shape());
    Tensor<T> out(av.shape());
    std::vector<T, AlignedAllocator<T>> norms(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const T* x = av.ptr() + r * d;
        T* y = out.ptr() + r * d;
        T s = 0;
        for (std::size_t j = 0; j < d; ++j) s += x[j] * x[j];
        const T nrm = std::max(std::sqrt(s), eps);
        norms[r] = std::sqrt(s);
        for (std::size_t j = 0; j < d; ++j) y[j] = x[j] / nrm;
    }
    const std::uint32_t ia = a.id();
    return a.tape().record(std::move(out), {a},
                           [ia, d, rows, eps, norms = std::move(norms)](Tape<T>& tape, const Tensor<T>& g, const Tensor<T>&) {
        const T* x = tape.value(ia).ptr();
        T* ga = tape.grad(ia).ptr();
        for (std::size_t r = 0; r < rows; ++r) {
            const T* xr = x + r * d;
            const T* gr = g.ptr() + r * d;
            T* out = ga + r * d;
            const T nrm = norms[r];
            if (nrm > eps) {
                T dot = 0;
                for (std::size_t j = 0; j < d; ++j) dot += xr[j] * gr[j];
                const T inv = T(1) / nrm;
                const T c = dot * inv * inv * inv;
                for (std::size_t j = 0; j < d; ++j) out[j] += gr[j] * inv - xr[j] * c;
            } else {
                for (std::size_t j = 0; j < d; ++j) out[j] += gr[j] / eps;
            }
        }
    });
}

SARA_INSTANTIATE_BINARY(add)
SARA_INSTANTIATE_BINARY(sub)
SARA_INSTANTIATE_BINARY(mul)
SARA_INSTANTIATE_BINARY(div)
SARA_INSTANTIATE_BINARY(matmul)
SARA_INSTANTIATE_UNARY(square)
SARA_INSTANTIATE_UNARY(transpose)
SARA_INSTANTIATE_UNARY(detach)
SARA_INSTANTIATE_UNARY(sum)
SARA_INSTANTIATE_UNARY(mean)
SARA_INSTANTIATE_UNARY(silu)
SARA_INSTANTIATE_UNARY(gelu)
SARA_INSTANTIATE_UNARY(sigmoid)
SARA_INSTANTIATE_UNARY(softplus)
SARA_INSTANTIATE_UNARY(log)
SARA_INSTANTIATE_UNARY(softmax)

template Var<float> scale(Var<float>, float);
template Var<double> scale(Var<double>, double);
template Var<float> add_scalar(Var<float>, float);
template Var<double> add_scalar(Var<double>, double);
template Var<float> batched_matmul(Var<float>, Var<float>, bool);
template Var<double> batched_matmul(Var<double>, Var<double>, bool);
template Var<float> linear(Var<float>, Var<float>, const Var<float>*);
template Var<double> linear(Var<double>, Var<double>, const Var<double>*);
template Var<float> reshape(Var<float>, Shape);
template Var<double> reshape(Var<double>, Shape);
template Var<float> sum(Var<float>, int);
template Var<double> sum(Var<double>, int);
template Var<float> mean(Var<float>, int);
template Var<double> mean(Var<double>, int);
template Var<float> max(Var<float>, int);
template Var<double> max(Var<double>, int);
template Var<float> layernorm(Var<float>, float);
template Var<double> layernorm(Var<double>, double);
template Var<float> normalize_rows(Var<float>, float);
template Var<double> normalize_rows(Var<double>, double);

}  // namespace sara
