#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "sara/autodiff.hpp"
#include "sara/rng.hpp"

namespace testing_util {

using sara::Parameter;
using sara::Shape;
using sara::Tape;
using sara::Tensor;
using sara::Var;

inline Tensor<double> uniform(sara::Rng& rng, const Shape& shape, double lo = -1.0, double hi = 1.0) {
    Tensor<double> t(shape);
    for (double& v : t.data()) v = rng.uniform(lo, hi);
    return t;
}

// Central differences of f over every coordinate of p, written against the
// raw value so it shares nothing with the reverse pass.
inline Tensor<double> numeric_grad(Parameter<double>& p, const std::function<double()>& f, double h = 1e-5) {
    Tensor<double> g(p.value.shape());
    for (std::size_t i = 0; i < p.value.size(); ++i) {
        const double x = p.value[i];
        p.value[i] = x + h;
        const double up = f();
        p.value[i] = x - h;
        const double dn = f();
        p.value[i] = x;
        g[i] = (up - dn) / (2 * h);
    }
    return g;
}

inline double max_rel_err(const Tensor<double>& a, const Tensor<double>& b) {
    double worst = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double den = std::max({std::abs(a[i]), std::abs(b[i]), 1e-8});
        worst = std::max(worst, std::abs(a[i] - b[i]) / den);
    }
    return worst;
}

}  // namespace testing_util
