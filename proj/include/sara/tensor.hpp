#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <new>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

#include "sara/errors.hpp"

namespace sara {

enum class DType : std::uint8_t { f32, f64 };

std::string to_string(DType dt);
DType dtype_from_string(const std::string& s);
std::size_t dtype_size(DType dt);

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

template <typename T>
concept Scalar = std::is_same_v<T, float> || std::is_same_v<T, double>;

template <Scalar T>
constexpr DType dtype_of() {
    if constexpr (std::is_same_v<T, float>) {
        return DType::f32;
    } else {
        return DType::f64;
    }
}

// Dense row-major n-dimensional array. Rank-0 tensors hold one value.
// Storage starts on a 64-byte boundary, so vectorized kernels that peel
// unaligned heads sum in the same order regardless of heap layout.
template <typename T>
struct AlignedAllocator {
    using value_type = T;
    static constexpr std::align_val_t kAlign{64};

    AlignedAllocator() = default;
    template <typename U>
    AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

    T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
    void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlign); }

    template <typename U>
    bool operator==(const AlignedAllocator<U>&) const noexcept {
        return true;
    }
};

template <Scalar T>
class Tensor {
public:
    using value_type = T;
    using Storage = std::vector<T, AlignedAllocator<T>>;

    Tensor() : data_(1, T(0)) {}
    explicit Tensor(Shape shape, T fill = T(0));
    Tensor(Shape shape, std::vector<T> data);

    static Tensor scalar(T v) { return Tensor(Shape{}, std::vector<T>{v}); }
    static Tensor from(Shape shape, std::initializer_list<T> values) {
        return Tensor(std::move(shape), std::vector<T>(values));
    }

    static constexpr DType dtype() { return dtype_of<T>(); }

    const Shape& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t size() const { return data_.size(); }
    // Negative axes count from the back.
    std::size_t dim(int axis) const;

    std::span<T> data() { return data_; }
    std::span<const T> data() const { return data_; }
    T* ptr() { return data_.data(); }
    const T* ptr() const { return data_.data(); }
    Storage& storage() { return data_; }
    const Storage& storage() const { return data_; }

    T& operator[](std::size_t i) { return data_[i]; }
    T operator[](std::size_t i) const { return data_[i]; }

    // Multi-index element access for tests and small utilities.
    T at(std::initializer_list<std::size_t> idx) const;
    T& at(std::initializer_list<std::size_t> idx);

    // Value of a single-element tensor.
    T item() const;

    Tensor reshaped(Shape shape) const;
    void fill(T v);

    bool all_finite() const;
    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

    // In-place accumulation used by the backward pass.
    Tensor& operator+=(const Tensor& other);
    Tensor& operator*=(T s);

    bool operator==(const Tensor& other) const = default;

    template <Scalar U>
    Tensor<U> cast() const {
        std::vector<U> out(data_.begin(), data_.end());
        return Tensor<U>(shape_, std::move(out));
    }

private:
    struct Adopt {};
    Tensor(Shape shape, Storage data, Adopt);

    std::size_t flat_index(std::initializer_list<std::size_t> idx) const;

    Shape shape_;
    Storage data_;
};

template <Scalar T>
T max_abs_diff(const Tensor<T>& a, const Tensor<T>& b);

// Squared Frobenius norm accumulated in double.
template <Scalar T>
double squared_norm(const Tensor<T>& a);

}  // namespace sara
