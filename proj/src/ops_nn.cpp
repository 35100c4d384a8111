#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>

#include "ops_detail.hpp"

namespace sara {

using detail::require_rank;

// ---------------------------------------------------------------------------
// Convolution (im2col + GEMM)
// ---------------------------------------------------------------------------

namespace {

struct ConvGeom {
    std::size_t batch, cin, h, w, cout, kh, kw, stride, pad, oh, ow;
    std::size_t col_rows() const { return cin * kh * kw; }
    std::size_t col_cols() const { return oh * ow; }
};

template <Scalar T>
void im2col(const ConvGeom& g, const T* x, T* cols) {
    const std::size_t ncol = g.col_cols();
    for (std::size_t c = 0; c < g.cin; ++c)
        for (std::size_t ki = 0; ki < g.kh; ++ki)
            for (std::size_t kj = 0; kj < g.kw; ++kj) {
                const std::size_t row = (c * g.kh + ki) * g.kw + kj;
                for (std::size_t oi = 0; oi < g.oh; ++oi)
                    for (std::size_t oj = 0; oj < g.ow; ++oj) {
                        const long ii = static_cast<long>(oi * g.stride + ki) - static_cast<long>(g.pad);
                        const long jj = static_cast<long>(oj * g.stride + kj) - static_cast<long>(g.pad);
                        T v = 0;
                        if (ii >= 0 && jj >= 0 && ii < static_cast<long>(g.h) && jj < static_cast<long>(g.w)) {
                            v = x[(c * g.h + static_cast<std::size_t>(ii)) * g.w + static_cast<std::size_t>(jj)];
                        }
                        cols[row * ncol + oi * g.ow + oj] = v;
                    }
            }
}

template <Scalar T>
void col2im_add(const ConvGeom& g, const T* cols, T* dx) {
    const std::size_t ncol = g.col_cols();
    for (std::size_t c = 0; c < g.cin; ++c)
        for (std::size_t ki = 0; ki < g.kh; ++ki)
            for (std::size_t kj = 0; kj < g.kw; ++kj) {
                const std::size_t row = (c * g.kh + ki) * g.kw + kj;
                for (std::size_t oi = 0; oi < g.oh; ++oi)
                    for (std::size_t oj = 0; oj < g.ow; ++oj) {
                        const long ii = static_cast<long>(oi * g.stride + ki) - static_cast<long>(g.pad);
                        const long jj = static_cast<long>(oj * g.stride + kj) - static_cast<long>(g.pad);
                        if (ii >= 0 && jj >= 0 && ii < static_cast<long>(g.h) && jj < static_cast<long>(g.w)) {
                            dx[(c * g.h + static_cast<std::size_t>(ii)) * g.w + static_cast<std::size_t>(jj)] +=
                                cols[row * ncol + oi * g.ow + oj];
                        }
                    }
            }
}

}  // namespace

template <Scalar T>
Var<T> conv2d(Var<T> x, Var<T> kernel, const Var<T>* bias, std::size_t stride, std::size_t padding) {
    const Tensor<T>& xv = x.value();
    const Tensor<T>& kv = kernel.value();
    require_rank(xv.shape(), 4, "conv2d");
    require_rank(kv.shape(), 4, "conv2d");
    if (stride == 0) throw DimensionError("conv2d: stride must be positive");
    ConvGeom g{};
    g.batch = xv.dim(0);
    g.cin = xv.dim(1);
    g.h = xv.dim(2);
    g.w = xv.dim(3);
    g.cout = kv.dim(0);
    g.kh = kv.dim(2);
    g.kw = kv.dim(3);
    g.stride = stride;
    g.pad = padding;
    if (kv.dim(1) != g.cin) {
        throw DimensionError("conv2d: kernel " + shape_str(kv.shape()) + " vs input " + shape_str(xv.shape()));
    }
    if (g.kh > g.h + 2 * padding || g.kw > g.w + 2 * padding) {
        throw DimensionError("conv2d: kernel larger than padded input");
    }
    if (bias && (bias->value().rank() != 1 || bias->value().dim(0) != g.cout)) {
        throw DimensionError("conv2d: bias shape " + shape_str(bias->value().shape()));
    }
    g.oh = (g.h + 2 * padding - g.kh) / stride + 1;
    g.ow = (g.w + 2 * padding - g.kw) / stride + 1;

    const std::size_t rows = g.col_rows(), ncol = g.col_cols();
    Tensor<T> out(Shape{g.batch, g.cout, g.oh, g.ow});
    std::vector<T, AlignedAllocator<T>> cols(rows * ncol);
    for (std::size_t b = 0; b < g.batch; ++b) {
        im2col(g, xv.ptr() + b * g.cin * g.h * g.w, cols.data());
        T* ob = out.ptr() + b * g.cout * ncol;
        gemm(false, false, g.cout, ncol, rows, kv.ptr(), cols.data(), ob, false);
        if (bias) {
            const T* pb = bias->value().ptr();
            for (std::size_t o = 0; o < g.cout; ++o)
                for (std::size_t j = 0; j < ncol; ++j) ob[o * ncol + j] += pb[o];
        }
    }
    const std::uint32_t ix = x.id(), ik = kernel.id();
    const std::uint32_t ib = bias ? bias->id() : 0;
    const bool has_bias = bias != nullptr;
    auto fn = [g, ix, ik, ib, has_bias](Tape<T>& tape, const Tensor<T>& grad, const Tensor<T>&) {
        const std::size_t rows = g.col_rows(), ncol = g.col_cols();
        const T* xp = tape.value(ix).ptr();
        const T* kp = tape.value(ik).ptr();
        std::vector<T, AlignedAllocator<T>> cols(rows * ncol);
        std::vector<T, AlignedAllocator<T>> dcols(rows * ncol);
        for (std::size_t b = 0; b < g.batch; ++b) {
            const T* gb = grad.ptr() + b * g.cout * ncol;
            if (tape.requires_grad(ik)) {
                im2col(g, xp + b * g.cin * g.h * g.w, cols.data());
                gemm(false, true, g.cout, rows, ncol, gb, cols.data(), tape.grad(ik).ptr(), true);
            }
            if (tape.requires_grad(ix)) {
                gemm(true, false, rows, ncol, g.cout, kp, gb, dcols.data(), false);
                col2im_add(g, dcols.data(), tape.grad(ix).ptr() + b * g.cin * g.h * g.w);
            }
            if (has_bias && tape.requires_grad(ib)) {
                T* db = tape.grad(ib).ptr();
                for (std::size_t o = 0; o < g.cout; ++o)
                    for (std::size_t j = 0; j < ncol; ++j) db[o] += gb[o * ncol + j];
            }
        }
    };
    if (bias) return x.tape().record(std::move(out), {x, kernel, *bias}, std::move(fn));
    return x.tape().record(std::move(out), {x, kernel}, std::move(fn));
}

template <Scalar T>
Var<T> global_avg_pool(Var<T> x) {
    const Tensor<T>& xv = x.value();
    require_rank(xv.shape(), 4, "global_avg_pool");
    const std::size_t b = xv.dim(0), c = xv.dim(1), hw = xv.dim(2) * xv.dim(3);
    Tensor<T> out(Shape{b, c});
    for (std::size_t i = 0; i < b * c; ++i) {
        T s = 0;
        for (std::size_t j = 0; j < hw; ++j) s += xv[i * hw + j];
        out[i] = s / static_cast<T>(hw);
    }
    const std::uint32_t ix = x.id();
    return x.tape().record(std::move(out), {x}, [ix, b, c, hw](Tape<T>& tape, const Tensor<T>& g, const Tensor<T>&) {
        T* gx = tape.grad(ix).ptr();
        const T inv = T(1) / static_cast<T>(hw);
        for (std::size_t i = 0; i < b * c; ++i)
            for (std::size_t j = 0; j < hw; ++j) gx[i * hw + j] += g[i] * inv;
    });
}

// ---------------------------------------------------------------------------
// Token-grid plumbing
// ---------------------------------------------------------------------------

namespace {

// Flat index maps between an image [b,c,h,w] and tokens [b,N,c*p*p].
// Token n = (i/p)*(w/p) + j/p; feature = (c*p + i%p)*p + j%p.
std::vector<std::size_t> patch_index(std::size_t b, std::size_t c, std::size_t h, std::size_t w, std::size_t p) {
    const std::size_t gw = w / p;
    const std::size_t n_tok = (h / p) * gw;
    const std::size_t feat = c * p * p;
    std::vector<std::size_t> idx(b * c * h * w);
    for (std::size_t bi = 0; bi < b; ++bi)
        for (std::size_t ci = 0; ci < c; ++ci)
            for (std::size_t i = 0; i < h; ++i)
                for (std::size_t j = 0; j < w; ++j) {
                    const std::size_t tok = (i / p) * gw + j / p;
                    const std::size_t f = (ci * p + i % p) * p + j % p;
                    idx[((bi * c + ci) * h + i) * w + j] = (bi * n_tok + tok) * feat + f;
                }
    return idx;
}

// out[dst[i]] = in[i]; backward gathers.
template <Scalar T>
Var<T> scatter_permute(Var<T> a, Shape out_shape, std::vector<std::size_t> dst) {
    const Tensor<T>& av = a.value();
    Tensor<T> out(std::move(out_shape));
    for (std::size_t i = 0; i < dst.size(); ++i) out[dst[i]] = av[i];
    const std::uint32_t ia = a.id();
    return a.tape().record(std::move(out), {a}, [ia, dst = std::move(dst)](Tape<T>& tape, const Tensor<T>& g, const Tensor<T>&) {
        T* ga = tape.grad(ia).ptr();
        for (std::size_t i = 0; i < dst.size(); ++i) ga[i] += g[dst[i]];
    });
}

// out[i] = in[src[i]]; backward scatters.
template <Scalar T>
Var<T> gather_permute(Var<T> a, Shape out_shape, std::vector<std::size_t> src) {
    const Tensor<T>& av = a.value();
    Tensor<T> out(std::move(out_shape));
    for (std::size_t i = 0; i < src.size(); ++i) out[i] = av[src[i]];
    const std::uint32_t ia = a.id();
    return a.tape().record(std::move(out), {a}, [ia, src = std::move(src)](Tape<T>& tape, const Tensor<T>& g, const Tensor<T>&) {
        T* ga = tape.grad(ia).ptr();
        for (std::size_t i = 0; i < src.size(); ++i) ga[src[i]] += g[i];
    });
}

}  // namespace

template <Scalar T>
Var<T> patchify(Var<T> x, std::size_t patch) {
    const Tensor<T>& xv = x.value();
    require_rank(xv.shape(), 4, "patchify");
    const std::size_t b = xv.dim(0), c = xv.dim(1), h = xv.dim(2), w = xv.dim(3);
    if (patch == 0 || h % patch != 0 || w % patch != 0) {
        throw DimensionError("patchify: spatial size " + shape_str(xv.shape()) + " not divisible by patch " +
                             std::to_string(patch));
    }
    const std::size_t n_tok = (h / patch) * (w / patch);
    return scatter_permute(x, Shape{b, n_tok, c * patch * patch}, patch_index(b, c, h, w, patch));
}

template <Scalar T>
Var<T> unpatchify(Var<T> tokens, std::size_t patch, std::size_t channels, std::size_t h, std::size_t w) {
    const Tensor<T>& tv = tokens.value();
    require_rank(tv.shape(), 3, "unpatchify");
    if (patch == 0 || h % patch != 0 || w % patch != 0) throw DimensionError("unpatchify: bad patch size");
    const std::size_t b = tv.dim(0);
    if (tv.dim(1) != (h / patch) * (w / patch) || tv.dim(2) != channels * patch * patch) {
        throw DimensionError("unpatchify: tokens " + shape_str(tv.shape()) + " do not match the image geometry");
    }
    return gather_permute(tokens, Shape{b, channels, h, w}, patch_index(b, channels, h, w, patch));
}

template <Scalar T>
Var<T> tokens_to_grid(Var<T> tokens) {
    const Tensor<T>& tv = tokens.value();
    require_rank(tv.shape(), 3, "tokens_to_grid");
    const std::size_t b = tv.dim(0), n = tv.dim(1), d = tv.dim(2);
    const auto s = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(n))));
    if (s * s != n) throw DimensionError("tokens_to_grid: token count " + std::to_string(n) + " is not a perfect square");
    std::vector<std::size_t> dst(b * n * d);
    for (std::size_t bi = 0; bi < b; ++bi)
        for (std::size_t t = 0; t < n; ++t)
            for (std::size_t k = 0; k < d; ++k) dst[(bi * n + t) * d + k] = (bi * d + k) * n + t;
    return scatter_permute(tokens, Shape{b, d, s, s}, std::move(dst));
}

template <Scalar T>
Var<T> slice_last(Var<T> a, std::size_t start, std::size_t len) {
    const Tensor<T>& av = a.value();
    if (av.rank() == 0) throw DimensionError("slice_last: scalar input");
    const std::size_t d = av.dim(-1);
    if (start + len > d) throw DimensionError("slice_last: range exceeds last extent " + std::to_string(d));
    const std::size_t rows = detail::leading_rows(av.shape());
    Shape out_shape = av.shape();
    out_shape.back() = len;
    Tensor<T> out(out_shape);
    for (std::size_t r = 0; r < rows; ++r)
        std::copy(av.ptr() + r * d + start, av.ptr() + r * d + start + len, out.ptr() + r * len);
    const std::uint32_t ia = a.id();
    return a.tape().record(std::move(out), {a}, [ia, rows, d, start, len](Tape<T>& tape, const Tensor<T>& g, const Tensor<T>&) {
        T* ga = tape.grad(ia).ptr();
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < len; ++j) ga[r * d + start + j] += g[r * len + j];
    });
}

template <Scalar T>
Var<T> gather_rows(Var<T> table, const std::vector<int>& idx) {
    const Tensor<T>& tv = table.value();
    require_rank(tv.shape(), 2, "gather_rows");
    const std::size_t v = tv.dim(0), d = tv.dim(1);
    Tensor<T> out(Shape{idx.size(), d});
    for (std::size_t i = 0; i < idx.size(); ++i) {
        if (idx[i] < 0 || static_cast<std::size_t>(idx[i]) >= v) {
            throw DomainError("gather_rows: index " + std::to_string(idx[i]) + " outside [0, " + std::to_string(v) + ")");
        }
        std::copy(tv.ptr() + static_cast<std::size_t>(idx[i]) * d, tv.ptr() + (static_cast<std::size_t>(idx[i]) + 1) * d,
                  out.ptr() + i * d);
    }
    const std::uint32_t it = table.id();
    return table.tape().record(std::move(out), {table}, [it, d, idx](Tape<T>& tape, const Tensor<T>& g, const Tensor<T>&) {
        T* gt = tape.grad(it).ptr();
        for (std::size_t i = 0; i < idx.size(); ++i)
            for (std::size_t k = 0; k < d; ++k) gt[static_cast<std::size_t>(idx[i]) * d + k] += g[i * d + k];
    });
}

// ---------------------------------------------------------------------------
// adaLN helpers
// ---------------------------------------------------------------------------

namespace {

void check_cond(const Shape& x, const Shape& c, const char* op) {
    if (x.size() != 3 || c.size() != 2 || c[0] != x[0] || c[1] != x[2]) {
        throw DimensionError(std::string(op) + ": conditioning " + shape_str(c) + " incompatible with " + shape_str(x));
    }
}

}  // namespace

template <Scalar T>
Var<T> modulate(Var<T> x, Var<T> shift, Var<T> scale) {
    const Tensor<T>& xv = x.value();
    check_cond(xv.shape(), shift.shape(), "modulate");
    check_cond(xv.shape(), scale.shape(), "modulate");
    const std::size_t b = xv.dim(0), n = xv.dim(1), d = xv.dim(2);
    Tensor<T> out(xv.shape());
    const T* sh = shift.value().ptr();
    const T* sc = scale.value().ptr();
    for (std::size_t bi = 0; bi < b; ++bi)
        for (std::size_t t = 0; t < n; ++t) {
            const std::size_t o = (bi * n + t) * d;
            for (std::size_t k = 0; k < d; ++k) out[o + k] = xv[o + k] * (T(1) + sc[bi * d + k]) + sh[bi * d + k];
        }
    const std::uint32_t ix = x.id(), ish = shift.id(), isc = scale.id();
    return x.tape().record(std::move(out), {x, shift, scale},
                           [ix, ish, isc, b, n, d](Tape<T>& tape, const Tensor<T>& g, const Tensor<T>&) {
        const T* xp = tape.value(ix).ptr();
        const T* sc = tape.value(isc).ptr();
        const bool gx = tape.requires_grad(ix), gsh = tape.requires_grad(ish), gsc = tape.requires_grad(isc);
        T* dx = gx ? tape.grad(ix).ptr() : nullptr;
        T* dsh = gsh ? tape.grad(ish).ptr() : nullptr;
        T* dsc = gsc ? tape.grad(isc).ptr() : nullptr;
        for (std::size_t bi = 0; bi < b; ++bi)
            for (std::size_t t = 0; t < n; ++t) {
                const std::size_t o = (bi * n + t) * d;
                for (std::size_t k = 0; k < d; ++k) {
                    const T gv = g[o + k];
                    if (gx) dx[o + k] += gv * (T(1) + sc[bi * d + k]);
                    if (gsh) dsh[bi * d + k] += gv;
                    if (gsc) dsc[bi * d + k] += gv * xp[o + k];
                }
            }
    });
}

template <Scalar T>
Var<T> gate(Var<T> x, Var<T> gv) {
    const Tensor<T>& xv = x.value();
    check_cond(xv.shape(), gv.shape(), "gate");
    const std::size_t b = xv.dim(0), n = xv.dim(1), d = xv.dim(2);
    Tensor<T> out(xv.shape());
    const T* gp = gv.value().ptr();
    for (std::size_t bi = 0; bi < b; ++bi)
        for (std::size_t t = 0; t < n; ++t) {
            const std::size_t o = (bi * n + t) * d;
            for (std::size_t k = 0; k < d; ++k) out[o + k] = xv[o + k] * gp[bi * d + k];
        }
    const std::uint32_t ix = x.id(), ig = gv.id();
    return x.tape().record(std::move(out), {x, gv}, [ix, ig, b, n, d](Tape<T>& tape, const Tensor<T>& g, const Tensor<T>&) {
        const T* xp = tape.value(ix).ptr();
        const T* gp = tape.value(ig).ptr();
        const bool gx = tape.requires_grad(ix), gg = tape.requires_grad(ig);
        T* dx = gx ? tape.grad(ix).ptr() : nullptr;
        T* dg = gg ? tape.grad(ig).ptr() : nullptr;
        for (std::size_t bi = 0; bi < b; ++bi)
            for (std::size_t t = 0; t < n; ++t) {
                const std::size_t o = (bi * n + t) * d;
                for (std::size_t k = 0; k < d; ++k) {
                    if (gx) dx[o + k] += g[o + k] * gp[bi * d + k];
                    if (gg) dg[bi * d + k] += g[o + k] * xp[o + k];
                }
            }
    });
}

// ---------------------------------------------------------------------------
// Attention
// ---------------------------------------------------------------------------

template <Scalar T>
Var<T> attention(Var<T> qkv, std::size_t heads) {
    using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    using Strided = Eigen::Map<const Mat, 0, Eigen::OuterStride<>>;
    using StridedMut = Eigen::Map<Mat, 0, Eigen::OuterStride<>>;
    using Square = Eigen::Map<Mat>;
    const Tensor<T>& qv = qkv.value();
    require_rank(qv.shape(), 3, "attention");
    const std::size_t b = qv.dim(0), n = qv.dim(1), d3 = qv.dim(2);
    if (heads == 0 || d3 % 3 != 0 || (d3 / 3) % heads != 0) {
        throw DimensionError("attention: width " + std::to_string(d3) + " incompatible with " + std::to_string(heads) +
                             " heads");
    }
    const std::size_t d = d3 / 3, dh = d / heads;
    const Eigen::Index en = static_cast<Eigen::Index>(n), edh = static_cast<Eigen::Index>(dh);
    const Eigen::OuterStride<> s3(static_cast<Eigen::Index>(d3)), s1(static_cast<Eigen::Index>(d));
    const T sc = T(1) / std::sqrt(static_cast<T>(dh));
    Tensor<T> out(Shape{b, n, d});
    // Attention probabilities, saved for backward: [b, heads, n, n].
    auto probs = std::make_shared<std::vector<T, AlignedAllocator<T>>>(b * heads * n * n);
    for (std::size_t bi = 0; bi < b; ++bi) {
        const T* base = qv.ptr() + bi * n * d3;
        for (std::size_t h = 0; h < heads; ++h) {
            const Strided q(base + h * dh, en, edh, s3);
            const Strided k(base + d + h * dh, en, edh, s3);
            const Strided v(base + 2 * d + h * dh, en, edh, s3);
            Square p(probs->data() + (bi * heads + h) * n * n, en, en);
            p.noalias() = sc * (q * k.transpose());
            for (Eigen::Index i = 0; i < en; ++i) {
                auto row = p.row(i).array();
                row = (row - row.maxCoeff()).exp();
                row /= row.sum();
            }
            StridedMut o(out.ptr() + bi * n * d + h * dh, en, edh, s1);
            o.noalias() = p * v;
        }
    }
    const std::uint32_t iq = qkv.id();
    return qkv.tape().record(std::move(out), {qkv}, [=](Tape<T>& tape, const Tensor<T>& g, const Tensor<T>&) {
        const T* qp = tape.value(iq).ptr();
        T* gq = tape.grad(iq).ptr();
        Mat dp(en, en);
        for (std::size_t bi = 0; bi < b; ++bi) {
            const T* base = qp + bi * n * d3;
            T* gbase = gq + bi * n * d3;
            for (std::size_t h = 0; h < heads; ++h) {
                const Strided q(base + h * dh, en, edh, s3);
                const Strided k(base + d + h * dh, en, edh, s3);
                const Strided v(base + 2 * d + h * dh, en, edh, s3);
                const Strided go(g.ptr() + bi * n * d + h * dh, en, edh, s1);
                StridedMut gqh(gbase + h * dh, en, edh, s3);
                StridedMut gk(gbase + d + h * dh, en, edh, s3);
                StridedMut gv(gbase + 2 * d + h * dh, en, edh, s3);
                const Eigen::Map<const Mat> p(probs->data() + (bi * heads + h) * n * n, en, en);
                gv.noalias() += p.transpose() * go;
                dp.noalias() = go * v.transpose();
                // dS = P o (dP - rowsum(dP o P)), scaled
                const auto r = (dp.array() * p.array()).rowwise().sum().eval();
                dp = (p.array() * (dp.array().colwise() - r) * sc).matrix();
                gqh.noalias() += dp * k;
                gk.noalias() += dp.transpose() * q;
            }
        }
    });
}

template Var<float> conv2d(Var<float>, Var<float>, const Var<float>*, std::size_t, std::size_t);
template Var<double> conv2d(Var<double>, Var<double>, const Var<double>*, std::size_t, std::size_t);
SARA_INSTANTIATE_UNARY(global_avg_pool)
SARA_INSTANTIATE_UNARY(tokens_to_grid)
template Var<float> patchify(Var<float>, std::size_t);
template Var<double> patchify(Var<double>, std::size_t);
template Var<float> unpatchify(Var<float>, std::size_t, std::size_t, std::size_t, std::size_t);
template Var<double> unpatchify(Var<double>, std::size_t, std::size_t, std::size_t, std::size_t);
template Var<float> slice_last(Var<float>, std::size_t, std::size_t);
template Var<double> slice_last(Var<double>, std::size_t, std::size_t);
template Var<float> gather_rows(Var<float>, const std::vector<int>&);
template Var<double> gather_rows(Var<double>, const std::vector<int>&);
template Var<float> modulate(Var<float>, Var<float>, Var<float>);
template Var<double> modulate(Var<double>, Var<double>, Var<double>);
SARA_INSTANTIATE_BINARY(gate)
template Var<float> attention(Var<float>, std::size_t);
template Var<double> attention(Var<double>, std::size_t);

}  // namespace sara
