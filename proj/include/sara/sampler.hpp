#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>

#include "sara/networks.hpp"

// Reverse-time SDE sampling for the linear interpolant x_t = (1-t) x0 + t eps.
//
// With w_t = t the reverse update from t to t - dt is
//   x <- x - dt [v(x,t) - (w_t/2) s(x,t)] + sqrt(w_t dt) xi,
// where the score follows from the velocity: eps_hat = x + (1-t) v and
// s = -eps_hat / t. See README for the derivation.
namespace sara::sampler {

inline constexpr double kScoreTimeMin = 1e-5;

struct SamplerConfig {
    std::size_t nfe = 250;
    double cfg_scale = 1.0;  // 1 disables guidance
    double interval_lo = 0.0;
    double interval_hi = 1.0;
    std::uint64_t seed = 0;
    bool deterministic_final_step = true;
    // Multiplies w_t; 0 turns the sampler into a probability-flow Euler solver.
    double diffusion_scale = 1.0;

    void validate() const;
    bool guided_at(double t) const { return cfg_scale != 1.0 && t >= interval_lo && t <= interval_hi; }
};

template <Scalar T>
using VelocityFn = std::function<Tensor<T>(const Tensor<T>& x, double t)>;

// -(x + (1-t) v) / t. Throws SingularityError for t < 1e-5 and DomainError for t > 1.
template <Scalar T>
Tensor<T> velocity_to_score(const Tensor<T>& v, const Tensor<T>& x, double t);

// One step from t to t - dt. `final_step` drops the score and noise terms.
template <Scalar T>
Tensor<T> em_step(const Tensor<T>& x, double t, double dt, const VelocityFn<T>& v_fn, Rng& rng,
                  const SamplerConfig& cfg, bool final_step = false);

// Integrates x (the t = 1 state) down to t = 0 over cfg.nfe uniform steps.
template <Scalar T>
Tensor<T> integrate(Tensor<T> x, const VelocityFn<T>& v_fn, const SamplerConfig& cfg, Rng& rng);

struct SampleStats {
    std::size_t cond_calls = 0;
    std::size_t null_calls = 0;
};

// Draws b samples of class y from pure noise seeded by cfg.seed, with
// classifier-free guidance v_null + w (v_cond - v_null) inside the interval.
template <Scalar T>
Tensor<T> sample(const DenoiserNet<T>& net, const SamplerConfig& cfg, int y, std::size_t b,
                 SampleStats* stats = nullptr);

// Writes one latent [c, h, w] as PGM (first channel) or PPM (first three
// channels), min-max scaled to 0..255 and upscaled by `zoom`.
template <Scalar T>
void write_image(const std::filesystem::path& path, const Tensor<T>& latent, bool color, std::size_t zoom = 8);

// Velocity field of the interpolant when x0 ~ N(mu, Sigma) with Sigma
// diagonal; used as an analytic oracle.
struct DiagonalGaussian {
    std::vector<double> mean;
    std::vector<double> var;

    template <Scalar T>
    Tensor<T> velocity(const Tensor<T>& x, double t) const;
};

}  // namespace sara::sampler
