#pragma once

#include <vector>

#include "sara/ops.hpp"
#include "sara/rng.hpp"

// Linear stochastic interpolant x_t = (1 - t) x0 + t eps and the
// velocity-prediction objective built on it.
namespace sara::interpolant {

inline constexpr double kTimeMin = 1e-4;

struct Schedule {
    static constexpr double alpha(double t) { return 1.0 - t; }
    static constexpr double sigma(double t) { return t; }
    // SDE diffusion coefficient.
    static constexpr double w(double t) { return sigma(t); }
};

template <Scalar T>
struct NoisySample {
    Tensor<T> x_t;
    // One entry per batch element, or a single entry shared by all.
    std::vector<double> t;
    Tensor<T> eps;
    Tensor<T> x0;
};

// Uniform t over the whole tensor. Throws DomainError for t outside (0, 1].
template <Scalar T>
NoisySample<T> corrupt(const Tensor<T>& x0, const Tensor<T>& eps, double t);

// Per-sample t along axis 0.
template <Scalar T>
NoisySample<T> corrupt(const Tensor<T>& x0, const Tensor<T>& eps, const std::vector<double>& t);

// eps - x0: the closed form of (x_t - x0) / sigma_t, independent of t.
template <Scalar T>
Tensor<T> velocity_target(const Tensor<T>& x0, const Tensor<T>& eps);

// Batch mean of the per-sample squared L2 error (sum over all non-batch axes).
template <Scalar T>
Var<T> velocity_loss(Var<T> pred, Var<T> target);

// i.i.d. uniform on [kTimeMin, 1].
std::vector<double> sample_t(Rng& rng, std::size_t batch);

}  // namespace sara::interpolant
