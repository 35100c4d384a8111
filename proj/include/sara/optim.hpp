#pragma once

#include <cstdint>
#include <vector>

#include "sara/autodiff.hpp"

namespace sara {

struct AdamConfig {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0;

    void validate() const;
};

// AdamW over a fixed list of parameters. Parameters absent from the gradient
// map are left untouched and keep their moments.
template <Scalar T>
class Adam {
public:
    Adam(const AdamConfig& cfg, std::vector<Parameter<T>*> params);

    // Throws NonFiniteError (naming the parameter) before touching any state.
    void step(const GradMap<T>& grads);

    std::uint64_t steps() const { return steps_; }
    void set_steps(std::uint64_t s) { steps_ = s; }
    const AdamConfig& config() const { return cfg_; }
    const std::vector<Parameter<T>*>& params() const { return params_; }

    Tensor<T>& first_moment(std::size_t i) { return m_.at(i); }
    Tensor<T>& second_moment(std::size_t i) { return v_.at(i); }
    const Tensor<T>& first_moment(std::size_t i) const { return m_.at(i); }
    const Tensor<T>& second_moment(std::size_t i) const { return v_.at(i); }

private:
    AdamConfig cfg_;
    std::vector<Parameter<T>*> params_;
    std::vector<Tensor<T>> m_, v_;
    std::uint64_t steps_ = 0;
};

// L2 norm of the gradients of `params`, accumulated in list order so the
// result does not depend on hash-map iteration.
template <Scalar T>
double grad_norm(const GradMap<T>& grads, const std::vector<Parameter<T>*>& params);

}  // namespace sara
