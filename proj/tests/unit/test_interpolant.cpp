#include <cmath>

#include "doctest.h"
#include "helpers.hpp"
#include "sara/interpolant.hpp"

using namespace sara;
using namespace sara::interpolant;
using testing_util::uniform;

TEST_CASE("schedule boundaries") {
    CHECK(Schedule::alpha(0) == 1);
    CHECK(Schedule::alpha(1) == 0);
    CHECK(Schedule::sigma(0) == 0);
    CHECK(Schedule::sigma(1) == 1);
    for (double t : {0.1, 0.5, 0.9}) CHECK(Schedule::w(t) == Schedule::sigma(t));
}

TEST_CASE("corrupt plug-in values and inversion") {
    Rng rng(1);
    const Tensor<double> x0 = uniform(rng, {3, 4});
    const Tensor<double> eps = uniform(rng, {3, 4});
    CHECK(corrupt(x0, eps, 1.0).x_t == eps);

    const auto z = corrupt(Tensor<double>(Shape{3, 4}), eps, 0.3);
    for (std::size_t i = 0; i < eps.size(); ++i) CHECK(z.x_t[i] == doctest::Approx(0.3 * eps[i]).epsilon(1e-15));

    for (double t : {1e-3, 0.25, 0.7, 1.0}) {
        const auto s = corrupt(x0, eps, t);
        for (std::size_t i = 0; i < x0.size(); ++i) CHECK(std::abs((s.x_t[i] - (1 - t) * x0[i]) / t - eps[i]) < 1e-12);
    }
    CHECK_THROWS_AS(corrupt(x0, eps, 0.0), DomainError);
    CHECK_THROWS_AS(corrupt(x0, eps, 1.5), DomainError);
}

TEST_CASE("velocity target matches the difference quotient") {
    Rng rng(2);
    const Tensor<double> x0 = uniform(rng, {2, 5});
    const Tensor<double> eps = uniform(rng, {2, 5});
    CHECK(squared_norm(velocity_target(x0, x0)) == 0);
    CHECK(velocity_target(Tensor<double>(Shape{2, 5}), eps) == eps);
    const auto v = velocity_target(x0, eps);
    for (double t : {0.7, 0.05, 1.0}) {
        const auto s = corrupt(x0, eps, t);
        for (std::size_t i = 0; i < v.size(); ++i) CHECK(std::abs((s.x_t[i] - x0[i]) / t - v[i]) < 1e-10);
    }
}

TEST_CASE("per-sample corrupt uses one t per row") {
    Rng rng(3);
    const Tensor<double> x0 = uniform(rng, {2, 3});
    const Tensor<double> eps = uniform(rng, {2, 3});
    const auto s = corrupt(x0, eps, std::vector<double>{0.2, 0.9});
    for (std::size_t j = 0; j < 3; ++j) {
        CHECK(s.x_t.at({0, j}) == doctest::Approx(0.8 * x0.at({0, j}) + 0.2 * eps.at({0, j})).epsilon(1e-15));
        CHECK(s.x_t.at({1, j}) == doctest::Approx(0.1 * x0.at({1, j}) + 0.9 * eps.at({1, j})).epsilon(1e-15));
    }
}

TEST_CASE("velocity loss") {
    Rng rng(4);
    const Tensor<double> a = uniform(rng, {3, 2, 4});
    const Tensor<double> b = uniform(rng, {3, 2, 4});
    Tape<double> tape;
    CHECK(velocity_loss(tape.constant(a), tape.constant(a)).value().item() == 0);

    Tensor<double> shifted = a;
    for (double& v : shifted.data()) v += 1;
    CHECK(velocity_loss(tape.constant(shifted), tape.constant(a)).value().item() == doctest::Approx(8).epsilon(1e-14));

    double oracle = 0;
    for (std::size_t n = 0; n < 3; ++n) {
        double per = 0;
        for (std::size_t i = 0; i < 8; ++i) per += (a[n * 8 + i] - b[n * 8 + i]) * (a[n * 8 + i] - b[n * 8 + i]);
        oracle += per;
    }
    oracle /= 3;
    const double got = velocity_loss(tape.constant(a), tape.constant(b)).value().item();
    CHECK(got >= 0);
    CHECK(got == doctest::Approx(oracle).epsilon(1e-14));

    Parameter<double> pred{"pred", a};
    Tape<double> t2;
    const auto g = t2.backward(velocity_loss(t2.param(pred), t2.constant(b)));
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(g.at(&pred)[i] == doctest::Approx(2 * (a[i] - b[i]) / 3).epsilon(1e-14));
}

TEST_CASE("sample_t") {
    Rng a(10), b(10);
    CHECK(sample_t(a, 16) == sample_t(b, 16));
    Rng rng(12);
    const auto t = sample_t(rng, 100000);
    double m = 0;
    for (double v : t) {
        CHECK_FALSE(v < kTimeMin);
        CHECK_FALSE(v > 1.0);
        m += v;
    }
    m /= static_cast<double>(t.size());
    CHECK(m >= 0.495);
    CHECK(m <= 0.505);
    CHECK_THROWS_AS(sample_t(rng, 0), ContractError);
}
