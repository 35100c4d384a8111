#include "sara/interpolant.hpp"

#include <string>

namespace sara::interpolant {

namespace {

void check_t(double t) {
    if (!(t > 0.0 && t <= 1.0)) throw DomainError("corrupt: t=" + std::to_string(t) + " outside (0, 1]");
}

}  // namespace

template <Scalar T>
NoisySample<T> corrupt(const Tensor<T>& x0, const Tensor<T>& eps, double t) {
    check_t(t);
    if (!x0.same_shape(eps)) throw DimensionError("corrupt: x0 and eps shapes differ");
    Tensor<T> xt(x0.shape());
    const T a = static_cast<T>(Schedule::alpha(t));
    const T s = static_cast<T>(Schedule::sigma(t));
    for (std::size_t i = 0; i < xt.size(); ++i) xt[i] = a * x0[i] + s * eps[i];
    return NoisySample<T>{std::move(xt), {t}, eps, x0};
}

template <Scalar T>
NoisySample<T> corrupt(const Tensor<T>& x0, const Tensor<T>& eps, const std::vector<double>& t) {
    if (!x0.same_shape(eps)) throw DimensionError("corrupt: x0 and eps shapes differ");
    if (x0.rank() == 0 || x0.dim(0) != t.size()) throw DimensionError("corrupt: need one t per batch element");
    const std::size_t per = x0.size() / t.size();
    Tensor<T> xt(x0.shape());
    for (std::size_t b = 0; b < t.size(); ++b) {
        check_t(t[b]);
        const T a = static_cast<T>(Schedule::alpha(t[b]));
        const T s = static_cast<T>(Schedule::sigma(t[b]));
        for (std::size_t i = b * per; i < (b + 1) * per; ++i) xt[i] = a * x0[i] + s * eps[i];
    }
    return NoisySample<T>{std::move(xt), t, eps, x0};
}

template <Scalar T>
Tensor<T> velocity_target(const Tensor<T>& x0, const Tensor<T>& eps) {
    if (!x0.same_shape(eps)) throw DimensionError("velocity_target: shapes differ");
    Tensor<T> v(x0.shape());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = eps[i] - x0[i];
    return v;
}

template <Scalar T>
Var<T> velocity_loss(Var<T> pred, Var<T> target) {
    if (pred.shape() != target.shape()) {
        throw DimensionError("velocity_loss: " + shape_str(pred.shape()) + " vs " + shape_str(target.shape()));
    }
    const std::size_t batch = pred.value().rank() == 0 ? 1 : pred.dim(0);
    return scale(sum(square(sub(pred, target))), T(1) / static_cast<T>(batch));
}

std::vector<double> sample_t(Rng& rng, std::size_t batch) {
    if (batch == 0) throw ContractError("sample_t: batch must be at least 1");
    std::vector<double> t(batch);
    for (double& v : t) v = kTimeMin + (1.0 - kTimeMin) * rng.uniform();
    return t;
}

template NoisySample<float> corrupt(const Tensor<float>&, const Tensor<float>&, double);
template NoisySample<double> corrupt(const Tensor<double>&, const Tensor<double>&, double);
template NoisySample<float> corrupt(const Tensor<float>&, const Tensor<float>&, const std::vector<double>&);
template NoisySample<double> corrupt(const Tensor<double>&, const Tensor<double>&, const std::vector<double>&);
template Tensor<float> velocity_target(const Tensor<float>&, const Tensor<float>&);
template Tensor<double> velocity_target(const Tensor<double>&, const Tensor<double>&);
template Var<float> velocity_loss(Var<float>, Var<float>);
template Var<double> velocity_loss(Var<double>, Var<double>);

}  // namespace sara::interpolant
