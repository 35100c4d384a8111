#include "sara/optim.hpp"

#include <cmath>

namespace sara {

void AdamConfig::validate() const {
    if (!(lr > 0)) throw ConfigError("optimizer: lr must be positive");
    if (!(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1)) {
        throw ConfigError("optimizer: betas must lie in [0, 1)");
    }
    if (!(eps > 0)) throw ConfigError("optimizer: eps must be positive");
    if (weight_decay < 0) throw ConfigError("optimizer: weight_decay must be non-negative");
}

template <Scalar T>
Adam<T>::Adam(const AdamConfig& cfg, std::vector<Parameter<T>*> params) : cfg_(cfg), params_(std::move(params)) {
    cfg_.validate();
    m_.reserve(params_.size());
    v_.reserve(params_.size());
    for (const auto* p : params_) {
        m_.emplace_back(p->value.shape(), T(0));
        v_.emplace_back(p->value.shape(), T(0));
    }
}

template <Scalar T>
void Adam<T>::step(const GradMap<T>& grads) {
    for (const auto* p : params_) {
        if (grads.contains(p) && !grads.at(p).all_finite()) {
            throw NonFiniteError("non-finite gradient for parameter '" + p->name + "'");
        }
    }
    ++steps_;
    const T b1 = static_cast<T>(cfg_.beta1);
    const T b2 = static_cast<T>(cfg_.beta2);
    const T lr = static_cast<T>(cfg_.lr);
    const T eps = static_cast<T>(cfg_.eps);
    const T decay = static_cast<T>(cfg_.lr * cfg_.weight_decay);
    const T bc1 = static_cast<T>(1.0 - std::pow(cfg_.beta1, static_cast<double>(steps_)));
    const T bc2 = static_cast<T>(1.0 - std::pow(cfg_.beta2, static_cast<double>(steps_)));
    for (std::size_t i = 0; i < params_.size(); ++i) {
        Parameter<T>& p = *params_[i];
        if (!grads.contains(&p)) continue;
        const Tensor<T>& g = grads.at(&p);
        T* w = p.value.ptr();
        T* m = m_[i].ptr();
        T* v = v_[i].ptr();
        const T* gp = g.ptr();
        for (std::size_t k = 0; k < g.size(); ++k) {
            if (decay != T(0)) w[k] -= decay * w[k];
            m[k] = b1 * m[k] + (T(1) - b1) * gp[k];
            v[k] = b2 * v[k] + (T(1) - b2) * gp[k] * gp[k];
            const T mhat = m[k] / bc1;
            const T vhat = v[k] / bc2;
            w[k] -= lr * mhat / (std::sqrt(vhat) + eps);
        }
    }
}

template <Scalar T>
double grad_norm(const GradMap<T>& grads, const std::vector<Parameter<T>*>& params) {
    double acc = 0;
    for (const auto* p : params) {
        if (grads.contains(p)) acc += squared_norm(grads.at(p));
    }
    return std::sqrt(acc);
}

template class Adam<float>;
template class Adam<double>;
template double grad_norm(const GradMap<float>&, const std::vector<Parameter<float>*>&);
template double grad_norm(const GradMap<double>&, const std::vector<Parameter<double>*>&);

}  // namespace sara
