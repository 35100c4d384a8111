#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "sara/tensor.hpp"

namespace sara {

// A named trainable value. Gradients never live on the parameter itself;
// they are returned by Tape::backward in a GradMap.
template <Scalar T>
struct Parameter {
    std::string name;
    Tensor<T> value;
};

// Owns parameters behind stable addresses so networks can hand out raw
// Parameter pointers that survive moves of the owning object.
template <Scalar T>
class ParameterSet {
public:
    ParameterSet() = default;
    ParameterSet(ParameterSet&&) noexcept = default;
    ParameterSet& operator=(ParameterSet&&) noexcept = default;
    ParameterSet(const ParameterSet&) = delete;
    ParameterSet& operator=(const ParameterSet&) = delete;

    Parameter<T>* add(std::string name, Tensor<T> init);

    std::vector<Parameter<T>*> all() const;
    Parameter<T>* find(const std::string& name) const;
    std::size_t size() const { return params_.size(); }
    // Total scalar count across all parameters.
    std::size_t numel() const;

private:
    std::vector<std::unique_ptr<Parameter<T>>> params_;
};

template <Scalar T>
class GradMap {
public:
    bool contains(const Parameter<T>* p) const { return grads_.count(p) != 0; }
    const Tensor<T>& at(const Parameter<T>* p) const;
    // Zero tensor of the right shape when p received no gradient.
    Tensor<T> get_or_zero(const Parameter<T>& p) const;
    void accumulate(const Parameter<T>* p, const Tensor<T>& g);
    std::size_t size() const { return grads_.size(); }
    bool empty() const { return grads_.empty(); }
    bool all_finite() const;

private:
    std::unordered_map<const Parameter<T>*, Tensor<T>> grads_;
};

template <Scalar T>
class Tape;

// Handle to a value recorded on a tape.
template <Scalar T>
class Var {
public:
    Var() = default;
    Var(Tape<T>* tape, std::uint32_t id) : tape_(tape), id_(id) {}

    Tape<T>& tape() const { return *tape_; }
    std::uint32_t id() const { return id_; }
    const Tensor<T>& value() const;
    const Shape& shape() const { return value().shape(); }
    std::size_t dim(int axis) const { return value().dim(axis); }
    bool requires_grad() const;
    bool valid() const { return tape_ != nullptr; }

private:
    Tape<T>* tape_ = nullptr;
    std::uint32_t id_ = 0;
};

// Reverse-mode recording of one computation. Nodes are appended in
// execution order, so the node list is already topologically sorted;
// backward walks it once in reverse. A tape is owned by a single thread.
template <Scalar T>
class Tape {
public:
    // Receives the gradient flowing into the node and the node's own value.
    using BackwardFn = std::function<void(Tape&, const Tensor<T>& grad, const Tensor<T>& out)>;

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var<T> constant(Tensor<T> value);
    // Records a constant that aliases caller-owned storage; the tensor must
    // outlive the tape.
    Var<T> constant_ref(const Tensor<T>& value);
    // Trainable leaf; gradient is reported for p after backward.
    Var<T> param(const Parameter<T>& p);
    // Parameter read as a constant (no gradient to p).
    Var<T> frozen(const Parameter<T>& p) { return constant_ref(p.value); }
    Var<T> bind(const Parameter<T>& p, bool trainable) { return trainable ? param(p) : frozen(p); }

    // Appends an op result. The backward closure is kept only when at least
    // one input requires a gradient.
    Var<T> record(Tensor<T> value, std::initializer_list<Var<T>> inputs, BackwardFn fn);

    const Tensor<T>& value(std::uint32_t id) const;
    bool requires_grad(std::uint32_t id) const { return nodes_.at(id).requires_grad; }
    // Gradient buffer of a node, zero-initialized on first access.
    Tensor<T>& grad(std::uint32_t id);

    // Accumulates d(loss)/d(leaf) for every trainable leaf, then clears the tape.
    GradMap<T> backward(Var<T> loss);

    std::size_t size() const { return nodes_.size(); }
    void clear() { nodes_.clear(); }

private:
    struct Node {
        Tensor<T> owned;
        const Tensor<T>* ref = nullptr;
        std::unique_ptr<Tensor<T>> grad;
        const Parameter<T>* param = nullptr;
        BackwardFn backward;
        bool requires_grad = false;
    };

    std::deque<Node> nodes_;
};

template <Scalar T>
const Tensor<T>& Var<T>::value() const {
    return tape_->value(id_);
}

template <Scalar T>
bool Var<T>::requires_grad() const {
    return tape_->requires_grad(id_);
}

}  // namespace sara
