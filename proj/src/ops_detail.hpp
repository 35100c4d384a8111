#pragma once

// Shared helpers for the op implementation files. Not installed.

#include <string>

#include "sara/ops.hpp"

namespace sara::detail {

inline void require_same_shape(const Shape& a, const Shape& b, const char* op) {
    if (a != b) {
        throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
    }
}

inline void require_rank(const Shape& s, std::size_t rank, const char* op) {
    if (s.size() != rank) {
        throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " + shape_str(s));
    }
}

// Number of rows when viewing a tensor as [rows, last].
inline std::size_t leading_rows(const Shape& s) {
    if (s.empty()) return 1;
    std::size_t r = 1;
    for (std::size_t i = 0; i + 1 < s.size(); ++i) r *= s[i];
    return r;
}

}  // namespace sara::detail

#define SARA_INSTANTIATE_UNARY(fn)                  \
    template Var<float> fn<float>(Var<float>);      \
    template Var<double> fn<double>(Var<double>);

#define SARA_INSTANTIATE_BINARY(fn)                             \
    template Var<float> fn<float>(Var<float>, Var<float>);      \
    template Var<double> fn<double>(Var<double>, Var<double>);
