#include "sara/tensor.hpp"

#include <cmath>
#include <numeric>
#include <sstream>

namespace sara {

std::string to_string(DType dt) {
    return dt == DType::f32 ? "f32" : "f64";
}

DType dtype_from_string(const std::string& s) {
    if (s == "f32") return DType::f32;
    if (s == "f64") return DType::f64;
    throw DomainError("unknown dtype '" + s + "'");
}

std::size_t dtype_size(DType dt) {
    return dt == DType::f32 ? 4 : 8;
}

std::size_t shape_numel(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ',';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

template <Scalar T>
Tensor<T>::Tensor(Shape shape, T fill) : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}

template <Scalar T>
Tensor<T>::Tensor(Shape shape, std::vector<T> data) : Tensor(std::move(shape), Storage(data.begin(), data.end()), Adopt{}) {}

template <Scalar T>
Tensor<T>::Tensor(Shape shape, Storage data, Adopt) : shape_(std::move(shape)), data_(std::move(data)) {
    if (shape_numel(shape_) != data_.size()) {
        throw DimensionError("tensor shape " + shape_str(shape_) + " does not match " +
                             std::to_string(data_.size()) + " values");
    }
}

template <Scalar T>
std::size_t Tensor<T>::dim(int axis) const {
    const int r = static_cast<int>(shape_.size());
    const int a = axis < 0 ? axis + r : axis;
    if (a < 0 || a >= r) {
        throw DimensionError("axis " + std::to_string(axis) + " out of range for shape " + shape_str(shape_));
    }
    return shape_[static_cast<std::size_t>(a)];
}

template <Scalar T>
std::size_t Tensor<T>::flat_index(std::initializer_list<std::size_t> idx) const {
    if (idx.size() != shape_.size()) {
        throw DimensionError("index rank mismatch for shape " + shape_str(shape_));
    }
    std::size_t flat = 0;
    std::size_t k = 0;
    for (std::size_t i : idx) {
        if (i >= shape_[k]) throw DimensionError("index out of range for shape " + shape_str(shape_));
        flat = flat * shape_[k] + i;
        ++k;
    }
    return flat;
}

template <Scalar T>
T Tensor<T>::at(std::initializer_list<std::size_t> idx) const {
    return data_[flat_index(idx)];
}

template <Scalar T>
T& Tensor<T>::at(std::initializer_list<std::size_t> idx) {
    return data_[flat_index(idx)];
}

template <Scalar T>
T Tensor<T>::item() const {
    if (data_.size() != 1) {
        throw ContractError("item() on tensor of shape " + shape_str(shape_));
    }
    return data_[0];
}

template <Scalar T>
Tensor<T> Tensor<T>::reshaped(Shape shape) const {
    if (shape_numel(shape) != data_.size()) {
        throw DimensionError("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
    }
    return Tensor(std::move(shape), data_, Adopt{});
}

template <Scalar T>
void Tensor<T>::fill(T v) {
    std::fill(data_.begin(), data_.end(), v);
}

template <Scalar T>
bool Tensor<T>::all_finite() const {
    for (T v : data_) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

template <Scalar T>
Tensor<T>& Tensor<T>::operator+=(const Tensor& other) {
    if (other.data_.size() != data_.size()) {
        throw DimensionError("accumulate " + shape_str(other.shape_) + " into " + shape_str(shape_));
    }
    T* d = data_.data();
    const T* s = other.data_.data();
    const std::size_t n = data_.size();
    for (std::size_t i = 0; i < n; ++i) d[i] += s[i];
    return *this;
}

template <Scalar T>
Tensor<T>& Tensor<T>::operator*=(T s) {
    for (T& v : data_) v *= s;
    return *this;
}

template <Scalar T>
T max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.size() != b.size()) throw DimensionError("max_abs_diff size mismatch");
    T m = 0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

template <Scalar T>
double squared_norm(const Tensor<T>& a) {
    double s = 0.0;
    for (T v : a.data()) s += static_cast<double>(v) * static_cast<double>(v);
    return s;
}

template class Tensor<float>;
template class Tensor<double>;
template float max_abs_diff(const Tensor<float>&, const Tensor<float>&);
template double max_abs_diff(const Tensor<double>&, const Tensor<double>&);
template double squared_norm(const Tensor<float>&);
template double squared_norm(const Tensor<double>&);

}  // namespace sara
