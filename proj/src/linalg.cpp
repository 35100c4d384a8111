#include <algorithm>
#include <cmath>
#include <functional>

#include "ops_detail.hpp"

namespace sara {

namespace {

constexpr int kSvdMaxSweeps = 100;
constexpr double kSvdTol = 1e-12;

}  // namespace

// Hestenes one-sided Jacobi: rotate column pairs until every pair is
// orthogonal to within kSvdTol; singular values are the column norms.
template <Scalar T>
std::vector<double> svd_values(const Tensor<T>& a) {
    detail::require_rank(a.shape(), 2, "svd_values");
    const std::size_t rows = a.dim(0), cols = a.dim(1);
    if (rows * cols > 1'000'000) throw DimensionError("svd_values: matrix exceeds 1e6 entries");
    // Work on the orientation with fewer columns; store columns contiguously.
    const bool flip = cols > rows;
    const std::size_t m = flip ? cols : rows;
    const std::size_t n = flip ? rows : cols;
    std::vector<double> u(m * n);
    for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < cols; ++j) {
            const double v = static_cast<double>(a[i * cols + j]);
            if (flip) {
                u[i * m + j] = v;
            } else {
                u[j * m + i] = v;
            }
        }

    bool converged = n < 2;
    for (int sweep = 0; sweep < kSvdMaxSweeps && !converged; ++sweep) {
        converged = true;
        for (std::size_t p = 0; p + 1 < n; ++p) {
            double* up = u.data() + p * m;
            for (std::size_t q = p + 1; q < n; ++q) {
                double* uq = u.data() + q * m;
                double alpha = 0, beta = 0, gamma = 0;
                for (std::size_t i = 0; i < m; ++i) {
                    alpha += up[i] * up[i];
                    beta += uq[i] * uq[i];
                    gamma += up[i] * uq[i];
                }
                if (alpha == 0.0 || beta == 0.0) continue;
                if (std::abs(gamma) <= kSvdTol * std::sqrt(alpha * beta)) continue;
                converged = false;
                const double zeta = (beta - alpha) / (2.0 * gamma);
                const double t = std::copysign(1.0, zeta) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
                const double c = 1.0 / std::sqrt(1.0 + t * t);
                const double s = c * t;
                for (std::size_t i = 0; i < m; ++i) {
                    const double x = up[i], y = uq[i];
                    up[i] = c * x - s * y;
                    uq[i] = s * x + c * y;
                }
            }
        }
    }
    if (!converged) throw NumericError("svd_values: Jacobi sweeps did not converge");

    std::vector<double> sv(n);
    for (std::size_t j = 0; j < n; ++j) {
        double s = 0;
        for (std::size_t i = 0; i < m; ++i) s += u[j * m + i] * u[j * m + i];
        sv[j] = std::sqrt(s);
    }
    std::sort(sv.begin(), sv.end(), std::greater<>());
    return sv;
}

template std::vector<double> svd_values(const Tensor<float>&);
template std::vector<double> svd_values(const Tensor<double>&);

SymmetricEigen symmetric_eigen(const std::vector<double>& a_in, std::size_t n, int max_sweeps, double tol) {
    if (a_in.size() != n * n) throw DimensionError("symmetric_eigen: buffer is not n x n");
    std::vector<double> a = a_in;
    std::vector<double> v(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i) v[i * n + i] = 1.0;

    double frob = 0;
    for (double x : a) frob += x * x;
    frob = std::sqrt(frob);
    auto off_norm = [&] {
        double s = 0;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j)
                if (i != j) s += a[i * n + j] * a[i * n + j];
        return std::sqrt(s);
    };

    bool converged = off_norm() <= tol * std::max(frob, 1e-300);
    for (int sweep = 0; sweep < max_sweeps && !converged; ++sweep) {
        for (std::size_t p = 0; p + 1 < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                const double apq = a[p * n + q];
                if (apq == 0.0) continue;
                const double theta = (a[q * n + q] - a[p * n + p]) / (2.0 * apq);
                const double t = std::copysign(1.0, theta) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                // A <- J^T A J with J the (p,q) rotation.
                for (std::size_t k = 0; k < n; ++k) {
                    const double akp = a[k * n + p], akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double apk = a[p * n + k], aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double vkp = v[k * n + p], vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
        converged = off_norm() <= tol * std::max(frob, 1e-300);
    }
    if (!converged) throw NumericError("symmetric_eigen: Jacobi sweeps did not converge");

    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) { return a[x * n + x] < a[y * n + y]; });
    SymmetricEigen out;
    out.values.resize(n);
    out.vectors.resize(n * n);
    for (std::size_t j = 0; j < n; ++j) {
        out.values[j] = a[order[j] * n + order[j]];
        for (std::size_t k = 0; k < n; ++k) out.vectors[k * n + j] = v[k * n + order[j]];
    }
    return out;
}

}  // namespace sara
