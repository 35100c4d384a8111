#include "sara/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <string>

namespace sara::sampler {

void SamplerConfig::validate() const {
    if (nfe == 0) throw ConfigError("sampler: nfe must be at least 1");
    if (cfg_scale < 1.0) throw ConfigError("sampler: cfg_scale must be >= 1");
    if (!(interval_lo >= 0 && interval_lo <= interval_hi && interval_hi <= 1)) {
        throw ConfigError("sampler: guidance interval must satisfy 0 <= lo <= hi <= 1");
    }
    if (diffusion_scale < 0) throw ConfigError("sampler: diffusion_scale must be non-negative");
}

template <Scalar T>
Tensor<T> velocity_to_score(const Tensor<T>& v, const Tensor<T>& x, double t) {
    if (!v.same_shape(x)) throw DimensionError("velocity_to_score: shape mismatch");
    if (t < kScoreTimeMin) {
        throw SingularityError("velocity_to_score: t=" + std::to_string(t) + " too close to 0; use the final Euler step");
    }
    if (t > 1) throw DomainError("velocity_to_score: t must not exceed 1");
    Tensor<T> s(x.shape());
    const T a = static_cast<T>(1 - t);
    const T inv = static_cast<T>(1 / t);
    for (std::size_t i = 0; i < s.size(); ++i) s[i] = -(x[i] + a * v[i]) * inv;
    return s;
}

template <Scalar T>
Tensor<T> em_step(const Tensor<T>& x, double t, double dt, const VelocityFn<T>& v_fn, Rng& rng,
                  const SamplerConfig& cfg, bool final_step) {
    if (!(dt > 0) || t - dt < -1e-12) throw DomainError("em_step: need dt > 0 and t - dt >= 0");
    const Tensor<T> v = v_fn(x, t);
    if (!v.same_shape(x)) throw DimensionError("em_step: velocity shape differs from state");
    Tensor<T> out(x.shape());
    const double w = cfg.diffusion_scale * t;
    const T tdt = static_cast<T>(dt);
    if (final_step || w == 0) {
        for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] - tdt * v[i];
        return out;
    }
    const Tensor<T> s = velocity_to_score(v, x, t);
    const T half_w = static_cast<T>(w / 2);
    const T noise = static_cast<T>(std::sqrt(w * dt));
    for (std::size_t i = 0; i < x.size(); ++i) {
        out[i] = x[i] - tdt * (v[i] - half_w * s[i]) + noise * static_cast<T>(rng.normal());
    }
    return out;
}

template <Scalar T>
Tensor<T> integrate(Tensor<T> x, const VelocityFn<T>& v_fn, const SamplerConfig& cfg, Rng& rng) {
    cfg.validate();
    const double n = static_cast<double>(cfg.nfe);
    for (std::size_t i = 0; i < cfg.nfe; ++i) {
        const double t = 1.0 - static_cast<double>(i) / n;
        const double t_next = 1.0 - static_cast<double>(i + 1) / n;
        const bool last = i + 1 == cfg.nfe && cfg.deterministic_final_step;
        x = em_step(x, t, t - t_next, v_fn, rng, cfg, last);
    }
    return x;
}

template <Scalar T>
Tensor<T> sample(const DenoiserNet<T>& net, const SamplerConfig& cfg, int y, std::size_t b, SampleStats* stats) {
    cfg.validate();
    const DenoiserConfig& dc = net.config();
    if (y < 0 || static_cast<std::size_t>(y) > dc.num_classes) {
        throw DomainError("sample: class " + std::to_string(y) + " outside [0, " + std::to_string(dc.num_classes) + "]");
    }
    if (b == 0) throw ContractError("sample: batch must be positive");
    const std::vector<int> cond(b, y);
    const std::vector<int> null(b, static_cast<int>(dc.null_class()));
    auto run = [&](const Tensor<T>& x, double t, const std::vector<int>& labels) {
        Tape<T> tape;
        return net.forward(tape, x, std::vector<double>(b, t), labels, false).velocity.value();
    };
    SampleStats local;
    SampleStats& st = stats ? *stats : local;
    const VelocityFn<T> v_fn = [&](const Tensor<T>& x, double t) {
        ++st.cond_calls;
        Tensor<T> vc = run(x, t, cond);
        if (!cfg.guided_at(t)) return vc;
        ++st.null_calls;
        const Tensor<T> vn = run(x, t, null);
        const T w = static_cast<T>(cfg.cfg_scale);
        for (std::size_t i = 0; i < vc.size(); ++i) vc[i] = vn[i] + w * (vc[i] - vn[i]);
        return vc;
    };
    Rng rng(cfg.seed);
    Tensor<T> x = rng.template normal_tensor<T>({b, dc.channels, dc.height, dc.width});
    return integrate(std::move(x), v_fn, cfg, rng);
}

template <Scalar T>
void write_image(const std::filesystem::path& path, const Tensor<T>& latent, bool color, std::size_t zoom) {
    if (latent.rank() != 3) throw DimensionError("write_image: expected [c, h, w]");
    const std::size_t c = latent.dim(0), h = latent.dim(1), w = latent.dim(2);
    const std::size_t planes = color ? 3 : 1;
    if (c < planes) throw DimensionError("write_image: colour output needs at least 3 channels");
    zoom = std::max<std::size_t>(zoom, 1);
    const auto plane = std::span<const T>(latent.ptr(), planes * h * w);
    const auto [lo_it, hi_it] = std::minmax_element(plane.begin(), plane.end());
    const double lo = static_cast<double>(*lo_it);
    const double range = std::max(static_cast<double>(*hi_it) - lo, 1e-12);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path.string());
    out << (color ? "P6" : "P5") << '\n' << w * zoom << ' ' << h * zoom << "\n255\n";
    for (std::size_t i = 0; i < h * zoom; ++i) {
        for (std::size_t j = 0; j < w * zoom; ++j) {
            for (std::size_t p = 0; p < planes; ++p) {
                const double v = static_cast<double>(latent[(p * h + i / zoom) * w + j / zoom]);
                out.put(static_cast<char>(static_cast<unsigned char>(std::lround(255.0 * (v - lo) / range))));
            }
        }
    }
}

// x_t = (1-t) x0 + t eps with x0 ~ N(mu, S) has mean m = (1-t) mu and
// covariance C = (1-t)^2 S + t^2 I. v = E[eps - x0 | x_t]; with
// r = C^{-1}(x - m): E[eps|x] = t r, E[x0|x] = mu + (1-t) S r.
template <Scalar T>
Tensor<T> DiagonalGaussian::velocity(const Tensor<T>& x, double t) const {
    const std::size_t d = mean.size();
    if (var.size() != d || x.size() % d != 0) throw DimensionError("DiagonalGaussian: dimension mismatch");
    Tensor<T> v(x.shape());
    const double a = 1 - t;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const std::size_t k = i % d;
        const double c = a * a * var[k] + t * t;
        const double r = (static_cast<double>(x[i]) - a * mean[k]) / c;
        v[i] = static_cast<T>(t * r - mean[k] - a * var[k] * r);
    }
    return v;
}

#define SARA_SAMPLER_INST(T)                                                                                 \
    template Tensor<T> velocity_to_score(const Tensor<T>&, const Tensor<T>&, double);                        \
    template Tensor<T> em_step(const Tensor<T>&, double, double, const VelocityFn<T>&, Rng&,                 \
                               const SamplerConfig&, bool);                                                  \
    template Tensor<T> integrate(Tensor<T>, const VelocityFn<T>&, const SamplerConfig&, Rng&);               \
    template Tensor<T> sample(const DenoiserNet<T>&, const SamplerConfig&, int, std::size_t, SampleStats*);  \
    template void write_image(const std::filesystem::path&, const Tensor<T>&, bool, std::size_t);            \
    template Tensor<T> DiagonalGaussian::velocity(const Tensor<T>&, double) const;

SARA_SAMPLER_INST(float)
SARA_SAMPLER_INST(double)

}  // namespace sara::sampler
