#include "sara/autodiff.hpp"

#include <numeric>

namespace sara {

template <Scalar T>
Parameter<T>* ParameterSet<T>::add(std::string name, Tensor<T> init) {
    if (find(name) != nullptr) throw ContractError("duplicate parameter name '" + name + "'");
    params_.push_back(std::make_unique<Parameter<T>>(Parameter<T>{std::move(name), std::move(init)}));
    return params_.back().get();
}

template <Scalar T>
std::vector<Parameter<T>*> ParameterSet<T>::all() const {
    std::vector<Parameter<T>*> out;
    out.reserve(params_.size());
    for (const auto& p : params_) out.push_back(p.get());
    return out;
}

template <Scalar T>
Parameter<T>* ParameterSet<T>::find(const std::string& name) const {
    for (const auto& p : params_) {
        if (p->name == name) return p.get();
    }
    return nullptr;
}

template <Scalar T>
std::size_t ParameterSet<T>::numel() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p->value.size();
    return n;
}

template <Scalar T>
const Tensor<T>& GradMap<T>::at(const Parameter<T>* p) const {
    auto it = grads_.find(p);
    if (it == grads_.end()) throw ContractError("no gradient recorded for parameter '" + p->name + "'");
    return it->second;
}

template <Scalar T>
Tensor<T> GradMap<T>::get_or_zero(const Parameter<T>& p) const {
    auto it = grads_.find(&p);
    if (it == grads_.end()) return Tensor<T>(p.value.shape());
    return it->second;
}

template <Scalar T>
void GradMap<T>::accumulate(const Parameter<T>* p, const Tensor<T>& g) {
    auto it = grads_.find(p);
    if (it == grads_.end()) {
        grads_.emplace(p, g);
    } else {
        it->second += g;
    }
}

template <Scalar T>
bool GradMap<T>::all_finite() const {
    for (const auto& [p, g] : grads_) {
        if (!g.all_finite()) return false;
    }
    return true;
}

template <Scalar T>
Var<T> Tape<T>::constant(Tensor<T> value) {
    Node n;
    n.owned = std::move(value);
    nodes_.push_back(std::move(n));
    return Var<T>(this, static_cast<std::uint32_t>(nodes_.size() - 1));
}

template <Scalar T>
Var<T> Tape<T>::constant_ref(const Tensor<T>& value) {
    Node n;
    n.ref = &value;
    nodes_.push_back(std::move(n));
    return Var<T>(this, static_cast<std::uint32_t>(nodes_.size() - 1));
}

template <Scalar T>
Var<T> Tape<T>::param(const Parameter<T>& p) {
    Node n;
    n.ref = &p.value;
    n.param = &p;
    n.requires_grad = true;
    nodes_.push_back(std::move(n));
    return Var<T>(this, static_cast<std::uint32_t>(nodes_.size() - 1));
}

template <Scalar T>
Var<T> Tape<T>::record(Tensor<T> value, std::initializer_list<Var<T>> inputs, BackwardFn fn) {
    Node n;
    n.owned = std::move(value);
    for (const Var<T>& in : inputs) {
        if (&in.tape() != this) throw ContractError("op inputs recorded on different tapes");
        if (nodes_[in.id()].requires_grad) n.requires_grad = true;
    }
    if (n.requires_grad) n.backward = std::move(fn);
    nodes_.push_back(std::move(n));
    return Var<T>(this, static_cast<std::uint32_t>(nodes_.size() - 1));
}

template <Scalar T>
const Tensor<T>& Tape<T>::value(std::uint32_t id) const {
    const Node& n = nodes_.at(id);
    return n.ref ? *n.ref : n.owned;
}

template <Scalar T>
Tensor<T>& Tape<T>::grad(std::uint32_t id) {
    Node& n = nodes_.at(id);
    if (!n.grad) n.grad = std::make_unique<Tensor<T>>(value(id).shape());
    return *n.grad;
}

template <Scalar T>
GradMap<T> Tape<T>::backward(Var<T> loss) {
    if (&loss.tape() != this) throw ContractError("backward: loss recorded on a different tape");
    if (loss.value().size() != 1) {
        throw ContractError("backward: loss must be scalar, got shape " + shape_str(loss.shape()));
    }
    if (nodes_.empty()) throw ContractError("backward: empty tape");

    GradMap<T> out;
    if (nodes_[loss.id()].requires_grad) {
        grad(loss.id()).fill(T(1));
        for (std::size_t i = loss.id() + 1; i-- > 0;) {
            Node& n = nodes_[i];
            if (!n.requires_grad || !n.grad) continue;
            if (n.param != nullptr) {
                out.accumulate(n.param, *n.grad);
            } else if (n.backward) {
                n.backward(*this, *n.grad, n.ref ? *n.ref : n.owned);
            }
            n.grad.reset();
        }
    }
    clear();
    return out;
}

template class ParameterSet<float>;
template class ParameterSet<double>;
template class GradMap<float>;
template class GradMap<double>;
template class Tape<float>;
template class Tape<double>;

}  // namespace sara
