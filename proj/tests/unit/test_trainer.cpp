#include <cmath>
#include <fstream>

#include "doctest.h"
#include "fixtures.hpp"
#include "helpers.hpp"
#include "sara/trainer.hpp"

using namespace sara;
using testing_util::tiny_config;
using testing_util::uniform;

TEST_CASE("adam single step from zero moments") {
    AdamConfig cfg;
    cfg.lr = 1e-2;
    Parameter<double> p{"p", Tensor<double>::from({3}, {0.5, -1.0, 2.0})};
    Parameter<double> q{"q", Tensor<double>::from({2}, {1.0, 1.0})};
    Adam<double> opt(cfg, {&p, &q});
    const Tensor<double> g = Tensor<double>::from({3}, {0.3, -2.0, 1e-9});
    GradMap<double> grads;
    grads.accumulate(&p, g);
    opt.step(grads);
    // m_hat = g and v_hat = g^2 after bias correction, so the step is lr * g / (|g| + eps).
    const double init[] = {0.5, -1.0, 2.0};
    for (std::size_t i = 0; i < 3; ++i) {
        const double expect = init[i] - cfg.lr * g[i] / (std::abs(g[i]) + cfg.eps);
        CHECK(p.value[i] == doctest::Approx(expect).epsilon(1e-12));
    }
    CHECK(q.value == Tensor<double>::from({2}, {1.0, 1.0}));
    CHECK(opt.steps() == 1);

    GradMap<double> zero;
    zero.accumulate(&q, Tensor<double>(Shape{2}));
    opt.step(zero);
    CHECK(q.value == Tensor<double>::from({2}, {1.0, 1.0}));
}

TEST_CASE("adam weight decay and non-finite guard") {
    AdamConfig cfg;
    cfg.lr = 0.1;
    cfg.weight_decay = 0.5;
    Parameter<double> p{"p", Tensor<double>::from({1}, {2.0})};
    Adam<double> opt(cfg, {&p});
    GradMap<double> grads;
    grads.accumulate(&p, Tensor<double>::from({1}, {0.0}));
    opt.step(grads);
    CHECK(p.value[0] == doctest::Approx(2.0 * (1 - 0.1 * 0.5)).epsilon(1e-15));

    GradMap<double> bad;
    bad.accumulate(&p, Tensor<double>::from({1}, {NAN}));
    const double before = p.value[0];
    CHECK_THROWS_AS(opt.step(bad), NonFiniteError);
    CHECK(p.value[0] == before);
    CHECK(opt.steps() == 1);
}

TEST_CASE("grad_norm follows the parameter list") {
    Parameter<double> a{"a", Tensor<double>(Shape{2})};
    Parameter<double> b{"b", Tensor<double>(Shape{1})};
    GradMap<double> g;
    g.accumulate(&a, Tensor<double>::from({2}, {3, 0}));
    g.accumulate(&b, Tensor<double>::from({1}, {4}));
    CHECK(grad_norm(g, {&a, &b}) == 5.0);
    CHECK(grad_norm(g, {&a}) == 3.0);
}

TEST_CASE("gaussian mixture class means recover from draws") {
    DatasetSpec spec;
    spec.mode = DatasetMode::gaussian_mixture;
    spec.channels = 1;
    spec.height = 2;
    spec.width = 2;
    spec.num_classes = 2;
    spec.seed = 3;
    const SyntheticDataset data(spec);
    Rng rng(4);
    const std::size_t n = 10000;
    for (std::size_t k = 0; k < 2; ++k) {
        const auto x = data.sample_class<double>(k, n, rng);
        for (std::size_t e = 0; e < 4; ++e) {
            double m = 0;
            for (std::size_t i = 0; i < n; ++i) m += x[i * 4 + e];
            m /= static_cast<double>(n);
            CHECK(std::abs(m - data.class_mean(k)[e]) < 3 * data.class_std(k)[e] / std::sqrt(double(n)));
        }
    }
}

TEST_CASE("structured grid class means, templates and determinism") {
    DatasetSpec spec;
    spec.seed = 9;
    const SyntheticDataset data(spec);
    for (std::size_t a = 0; a < spec.num_classes; ++a)
        for (std::size_t b = a + 1; b < spec.num_classes; ++b) {
            double d = 0;
            for (std::size_t i = 0; i < spec.numel(); ++i) {
                const double diff = data.class_mean(a)[i] - data.class_mean(b)[i];
                d += diff * diff;
            }
            CHECK(d > 0);
        }
    Rng rng(1);
    const std::size_t n = 10000;
    const auto x = data.sample_class<double>(2, n, rng);
    std::size_t bad = 0;
    for (std::size_t e = 0; e < spec.numel(); ++e) {
        double m = 0;
        for (std::size_t i = 0; i < n; ++i) m += x[i * spec.numel() + e];
        m /= static_cast<double>(n);
        if (std::abs(m - data.class_mean(2)[e]) >= 3 * data.class_std(2)[e] / std::sqrt(double(n))) ++bad;
    }
    // Each element lands outside 3 sigma with probability 0.27%.
    CHECK(bad <= 3);

    const SyntheticDataset again(spec);
    const auto b1 = data.batch<float>(7, 16);
    const auto b2 = again.batch<float>(7, 16);
    CHECK(b1.x0 == b2.x0);
    CHECK(b1.labels == b2.labels);
    CHECK_FALSE(data.batch<float>(8, 16).x0 == b1.x0);
    CHECK_FALSE(data.batch<float>(7, 16, SyntheticDataset::kEvalStream).x0 == b1.x0);
    CHECK(spec.hash() == DatasetSpec(spec).hash());
    DatasetSpec other = spec;
    other.seed = 10;
    CHECK(other.hash() != spec.hash());
}

TEST_CASE("identical seeds give identical loss streams") {
    const TrainConfig cfg = tiny_config();
    const SyntheticDataset data(cfg.dataset);
    TrainState<float> a(cfg), b(cfg);
    for (std::uint64_t i = 0; i < 6; ++i) {
        const auto batch = data.batch<float>(i, cfg.batch_size);
        const auto ma = train_step(a, batch);
        const auto mb = train_step(b, batch);
        CHECK(ma.loss.total == mb.loss.total);
        CHECK(ma.loss.disc == mb.loss.disc);
        CHECK(ma.grad_norm_gen == mb.grad_norm_gen);
    }
    CHECK(a.rng == b.rng);
}

TEST_CASE("discriminator schedule and disabled adversarial term") {
    TrainConfig cfg = tiny_config();
    const SyntheticDataset data(cfg.dataset);
    {
        TrainState<float> s(cfg);
        std::size_t updates = 0;
        for (std::uint64_t i = 0; i < 100; ++i) {
            if (train_step(s, data.batch<float>(i, cfg.batch_size)).disc_updated) ++updates;
            CHECK(s.disc_opt.steps() == s.step / 5);
        }
        CHECK(updates == 20);
    }
    cfg.alignment.gamma = 0;
    TrainState<float> s(cfg);
    std::vector<Tensor<float>> before;
    for (auto* p : s.discriminator_params()) before.push_back(p->value);
    for (std::uint64_t i = 0; i < 100; ++i) {
        const auto m = train_step(s, data.batch<float>(i, cfg.batch_size));
        CHECK(m.loss.adversarial == 0);
    }
    const auto after = s.discriminator_params();
    for (std::size_t i = 0; i < after.size(); ++i) CHECK(after[i]->value == before[i]);
    CHECK(s.disc_opt.steps() == 0);
}

TEST_CASE("plain configuration reports only the velocity term") {
    TrainConfig cfg = tiny_config();
    cfg.alignment = alignment::AlignmentConfig::ablation("none");
    const SyntheticDataset data(cfg.dataset);
    TrainState<double> s(cfg);
    std::vector<Tensor<double>> proj_before;
    for (auto* p : s.projection.params().all()) proj_before.push_back(p->value);
    for (std::uint64_t i = 0; i < 5; ++i) {
        const auto m = train_step(s, data.batch<double>(i, cfg.batch_size));
        CHECK(m.loss.patch == 0);
        CHECK(m.loss.structural == 0);
        CHECK(m.loss.adversarial == 0);
        CHECK(m.loss.total == m.loss.velocity);
    }
    const auto proj = s.projection.params().all();
    for (std::size_t i = 0; i < proj.size(); ++i) CHECK(proj[i]->value == proj_before[i]);
}

TEST_CASE("non-finite loss aborts with the term name") {
    const TrainConfig cfg = tiny_config();
    const SyntheticDataset data(cfg.dataset);
    TrainState<float> s(cfg);
    auto batch = data.batch<float>(0, cfg.batch_size);
    batch.x0[3] = std::numeric_limits<float>::infinity();
    try {
        train_step(s, batch);
        FAIL("expected NonFiniteError");
    } catch (const NonFiniteError& e) {
        CHECK(std::string(e.what()).find("velocity") != std::string::npos);
    }
}

TEST_CASE("step metrics serialize in a fixed key order") {
    StepMetrics m;
    m.step = 3;
    m.loss.total = 1.5;
    const std::string line = m.to_json_line();
    CHECK(line.rfind("{\"step\":3,\"loss_total\":1.5,\"loss_velocity\":", 0) == 0);
    CHECK(line.find("\"wall_ms\"") != std::string::npos);
}
