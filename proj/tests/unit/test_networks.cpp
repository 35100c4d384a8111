#include <cmath>
#include <numeric>

#include "doctest.h"
#include "helpers.hpp"
#include "sara/alignment.hpp"
#include "sara/networks.hpp"

using namespace sara;
using testing_util::uniform;

namespace {

DenoiserConfig small_grid() {
    DenoiserConfig c;
    c.layers = 2;
    c.hidden_dim = 16;
    c.heads = 2;
    c.patch_size = 2;
    c.num_classes = 3;
    c.alignment_depth = 1;
    c.channels = 2;
    c.height = 4;
    c.width = 4;
    c.freq_dim = 16;
    return c;
}

// Randomizes every parameter so the zero-initialized paths do not hide
// cross-sample mixing.
template <typename Net>
void scramble(Net& net, Rng& rng, double sd) {
    for (auto* p : net.params().all())
        for (double& v : p->value.data()) v = sd * rng.normal();
}

double silu_ref(double x) { return x / (1 + std::exp(-x)); }

}  // namespace

TEST_CASE("toy profile parameter counts") {
    const DenoiserConfig den;
    const EncoderConfig enc;
    Rng rng(0);
    // Totals for the default toy profile, summed by hand from the layer shapes.
    CHECK(denoiser_param_count(den) == 1868304);
    CHECK(encoder_param_count(den, enc) == 200000);
    CHECK(projection_param_count(128, 64, ProjectionConfig{}) == 115264);
    CHECK(discriminator_param_count(64, DiscriminatorConfig{}) == 20609);

    CHECK(DenoiserNet<float>(den, rng).params().numel() == denoiser_param_count(den));
    CHECK(FrozenEncoder<float>(den, enc).params().numel() == encoder_param_count(den, enc));
    CHECK(ProjectionMLP<float>(128, 64, ProjectionConfig{}, rng).params().numel() ==
          projection_param_count(128, 64, ProjectionConfig{}));
    CHECK(Discriminator<float>(64, DiscriminatorConfig{}, rng).params().numel() ==
          discriminator_param_count(64, DiscriminatorConfig{}));

    const DenoiserConfig g = small_grid();
    CHECK(DenoiserNet<double>(g, rng).params().numel() == denoiser_param_count(g));
}

TEST_CASE("denoiser outputs zero velocity at init and has the expected hidden shape") {
    Rng rng(1);
    const DenoiserConfig cfg = small_grid();
    const DenoiserNet<double> net(cfg, rng);
    Tape<double> tape;
    const Tensor<double> x = uniform(rng, {2, 2, 4, 4});
    const auto out = net.forward(tape, x, {0.3, 0.8}, {0, 3}, false);
    CHECK(out.velocity.shape() == x.shape());
    for (double v : out.velocity.value().data()) CHECK(v == 0.0);
    CHECK(out.hidden.shape() == Shape{2, 4, 16});

    CHECK_THROWS_AS(net.forward(tape, x, {0.3, 0.8}, {0, 4}, false), DomainError);
    CHECK_THROWS_AS(net.forward(tape, x, {0.3, 0.8}, {-1, 0}, false), DomainError);
    CHECK_THROWS_AS(net.forward(tape, uniform(rng, {2, 2, 4, 6}), {0.3, 0.8}, {0, 0}, false), DimensionError);
}

TEST_CASE("denoiser has no cross-sample mixing") {
    Rng rng(2);
    const DenoiserConfig cfg = small_grid();
    DenoiserNet<double> net(cfg, rng);
    scramble(net, rng, 0.3);
    const Tensor<double> x = uniform(rng, {3, 2, 4, 4});
    const std::vector<double> t{0.1, 0.5, 0.9};
    const std::vector<int> y{2, 0, 3};
    const std::vector<std::size_t> perm{2, 0, 1};
    Tensor<double> xp(x.shape());
    std::vector<double> tp(3);
    std::vector<int> yp(3);
    const std::size_t per = x.size() / 3;
    for (std::size_t i = 0; i < 3; ++i) {
        std::copy_n(x.ptr() + perm[i] * per, per, xp.ptr() + i * per);
        tp[i] = t[perm[i]];
        yp[i] = y[perm[i]];
    }
    Tape<double> tape;
    const auto a = net.forward(tape, x, t, y, false);
    const auto b = net.forward(tape, xp, tp, yp, false);
    const std::size_t hper = a.hidden.value().size() / 3;
    double worst = 0;
    for (std::size_t i = 0; i < 3; ++i) {
        for (std::size_t k = 0; k < per; ++k)
            worst = std::max(worst, std::abs(b.velocity.value()[i * per + k] - a.velocity.value()[perm[i] * per + k]));
        for (std::size_t k = 0; k < hper; ++k)
            worst = std::max(worst, std::abs(b.hidden.value()[i * hper + k] - a.hidden.value()[perm[i] * hper + k]));
    }
    CHECK(worst < 1e-12);
    CHECK(squared_norm(a.velocity.value()) > 0);
}

TEST_CASE("frozen encoder is deterministic and never receives gradients") {
    const DenoiserConfig grid = small_grid();
    EncoderConfig ecfg;
    ecfg.layers = 2;
    ecfg.dim = 8;
    ecfg.heads = 2;
    const FrozenEncoder<double> enc(grid, ecfg);
    const FrozenEncoder<double> again(grid, ecfg);
    Rng rng(3);
    const Tensor<double> x0 = uniform(rng, {2, 2, 4, 4});
    const auto z = enc.encode(x0);
    CHECK(z.shape() == Shape{2, 4, 8});
    CHECK(z == enc.encode(x0));
    CHECK(z == again.encode(x0));

    Rng init(4);
    const ProjectionMLP<double> proj(16, 8, ProjectionConfig{12}, init);
    Parameter<double> zden{"zden", uniform(rng, {2, 4, 16})};
    Tape<double> tape;
    auto h = proj.forward(tape.param(zden), true);
    auto zv = enc.encode(tape, x0);
    auto loss = add(alignment::patch_alignment_loss(zv, h), alignment::structural_loss(zv, h));
    const auto g = tape.backward(loss);
    for (const auto* p : enc.params().all()) CHECK_FALSE(g.contains(p));
    for (const auto* p : proj.params().all()) CHECK(g.contains(p));
    CHECK(g.contains(&zden));
}

TEST_CASE("projection closed form on zero input") {
    Rng rng(5);
    const ProjectionMLP<double> proj(6, 3, ProjectionConfig{5}, rng);
    const auto ps = proj.params().all();
    const auto& b1 = ps[1]->value;
    const auto& w2 = ps[2]->value;
    const auto& b2 = ps[3]->value;
    const auto& w3 = ps[4]->value;
    const auto& b3 = ps[5]->value;
    std::vector<double> h1(5), h2(5), out(3);
    for (std::size_t j = 0; j < 5; ++j) h1[j] = silu_ref(b1[j]);
    for (std::size_t j = 0; j < 5; ++j) {
        double a = b2[j];
        for (std::size_t i = 0; i < 5; ++i) a += h1[i] * w2.at({i, j});
        h2[j] = silu_ref(a);
    }
    for (std::size_t j = 0; j < 3; ++j) {
        out[j] = b3[j];
        for (std::size_t i = 0; i < 5; ++i) out[j] += h2[i] * w3.at({i, j});
    }
    Tape<double> tape;
    const auto y = proj.forward(tape.constant(Tensor<double>(Shape{2, 4, 6})), false).value();
    CHECK(y.shape() == Shape{2, 4, 3});
    for (std::size_t r = 0; r < 8; ++r)
        for (std::size_t j = 0; j < 3; ++j) CHECK(y[r * 3 + j] == doctest::Approx(out[j]).epsilon(1e-13));
    CHECK_THROWS_AS(proj.forward(tape.constant(Tensor<double>(Shape{2, 4, 5})), false), DimensionError);
}

TEST_CASE("discriminator") {
    Rng rng(6);
    const Discriminator<double> d(8, DiscriminatorConfig{4}, rng);
    Tape<double> tape;
    const auto logits = d.forward(tape.constant(Tensor<double>(Shape{3, 16, 8}, 0.7)), false).value();
    CHECK(logits.shape() == Shape{3, 1});
    CHECK(logits[0] == logits[1]);
    CHECK(logits[1] == logits[2]);

    Parameter<double> h{"h", uniform(rng, {2, 16, 8})};
    const auto g = tape.backward(sum(d.forward(tape.param(h), true)));
    CHECK(g.contains(&h));
    for (const auto* p : d.params().all()) CHECK(g.contains(p));

    Tape<double> t2;
    CHECK_THROWS_AS(d.forward(t2.constant(Tensor<double>(Shape{2, 15, 8})), false), DimensionError);
}
