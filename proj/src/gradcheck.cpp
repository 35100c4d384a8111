#include "sara/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

#include "sara/alignment.hpp"
#include "sara/interpolant.hpp"
#include "sara/networks.hpp"
#include "sara/ops.hpp"

namespace sara::gradcheck {

namespace {

using D = double;
using V = Var<D>;

double eval(const Functional& f) {
    Tape<D> tape;
    return f(tape).value().item();
}

Tensor<D> uniform_tensor(Rng& rng, const Shape& shape, double lo, double hi) {
    Tensor<D> t(shape);
    for (D& v : t.data()) v = rng.uniform(lo, hi);
    return t;
}

// One randomized instance: owned parameters and the scalar functional.
struct Instance {
    ParameterSet<D> params;
    std::vector<Parameter<D>*> checked;
    Functional f;
    // Keeps networks alive for the functional; set for network cases.
    std::shared_ptr<void> owner;
};

using Setup = std::function<Instance(Rng&)>;

struct Case {
    std::string name;
    Setup setup;
};

// Turns a tensor-valued op into a scalar by a fixed random weighting.
using OpFn = std::function<V(Tape<D>&, const std::vector<V>&)>;

struct InputSpec {
    Shape shape;
    double lo = -1, hi = 1;
    // Bound as a constant; used for stop-gradient inputs such as z_enc.
    bool constant = false;
};

Case op_case(std::string name, std::vector<InputSpec> inputs, OpFn op) {
    return {name, [inputs, op](Rng& rng) {
                Instance inst;
                std::vector<Parameter<D>*> params;
                for (std::size_t i = 0; i < inputs.size(); ++i) {
                    params.push_back(inst.params.add("in" + std::to_string(i),
                                                     uniform_tensor(rng, inputs[i].shape, inputs[i].lo, inputs[i].hi)));
                    if (!inputs[i].constant) inst.checked.push_back(params.back());
                }
                Shape out_shape;
                {
                    Tape<D> tape;
                    std::vector<V> vars;
                    for (auto* p : params) vars.push_back(tape.constant_ref(p->value));
                    out_shape = op(tape, vars).shape();
                }
                const Tensor<D> w = rng.normal_tensor<D>(out_shape);
                inst.f = [params, op, w, inputs](Tape<D>& tape) {
                    std::vector<V> vars;
                    for (std::size_t i = 0; i < params.size(); ++i) {
                        vars.push_back(inputs[i].constant ? tape.constant_ref(params[i]->value) : tape.param(*params[i]));
                    }
                    V y = op(tape, vars);
                    if (y.value().size() == 1 && y.value().rank() == 0) return y;
                    return sum(mul(y, tape.constant_ref(w)));
                };
                return inst;
            }};
}

// Perturbs every parameter of a freshly initialized network so that
// zero-initialized paths carry gradient too.
template <class Net>
void randomize(Net& net, Rng& rng, double scale) {
    for (auto* p : net.params().all()) {
        for (D& v : p->value.data()) v = scale * rng.normal();
    }
}

std::vector<Case> build_cases() {
    std::vector<Case> c;
    const auto unary = [&](std::string name, std::function<V(V)> fn, double lo = -1, double hi = 1) {
        c.push_back(op_case(name, {{{3, 5}, lo, hi}}, [fn](Tape<D>&, const std::vector<V>& v) { return fn(v[0]); }));
    };
    const auto binary = [&](std::string name, Shape a, Shape b, std::function<V(V, V)> fn, double blo = -1,
                            double bhi = 1) {
        c.push_back(op_case(name, {{a}, {b, blo, bhi}},
                            [fn](Tape<D>&, const std::vector<V>& v) { return fn(v[0], v[1]); }));
    };

    binary("add", {3, 4}, {3, 4}, [](V a, V b) { return add(a, b); });
    binary("add_broadcast", {2, 3, 4}, {4}, [](V a, V b) { return add(a, b); });
    binary("sub", {3, 4}, {3, 4}, [](V a, V b) { return sub(a, b); });
    binary("sub_broadcast", {2, 3}, {3}, [](V a, V b) { return sub(a, b); });
    binary("mul", {3, 4}, {3, 4}, [](V a, V b) { return mul(a, b); });
    binary("mul_broadcast", {2, 3, 4}, {3, 4}, [](V a, V b) { return mul(a, b); });
    binary("div", {3, 4}, {3, 4}, [](V a, V b) { return div(a, b); }, 0.5, 1.5);
    binary("div_broadcast", {2, 3}, {3}, [](V a, V b) { return div(a, b); }, 0.5, 1.5);
    unary("scale", [](V a) { return scale(a, 1.7); });
    unary("add_scalar", [](V a) { return add_scalar(a, -0.3); });
    unary("neg", [](V a) { return neg(a); });
    unary("square", [](V a) { return square(a); });
    binary("matmul", {3, 4}, {4, 5}, [](V a, V b) { return matmul(a, b); });
    binary("batched_matmul", {2, 3, 4}, {2, 4, 5}, [](V a, V b) { return batched_matmul(a, b, false); });
    binary("batched_matmul_tb", {2, 3, 4}, {2, 5, 4}, [](V a, V b) { return batched_matmul(a, b, true); });
    c.push_back(op_case("linear", {{{2, 3, 4}}, {{4, 5}}, {{5}}},
                        [](Tape<D>&, const std::vector<V>& v) { return linear(v[0], v[1], v[2]); }));
    unary("transpose", [](V a) { return transpose(a); });
    unary("reshape", [](V a) { return reshape(a, {5, 3}); });
    unary("sum", [](V a) { return sum(a); });
    unary("mean", [](V a) { return mean(a); });
    c.push_back(op_case("sum_axis", {{{2, 3, 4}}}, [](Tape<D>&, const std::vector<V>& v) { return sum(v[0], 1); }));
    c.push_back(op_case("mean_axis", {{{2, 3, 4}}}, [](Tape<D>&, const std::vector<V>& v) { return mean(v[0], -1); }));
    c.push_back(op_case("max_axis", {{{2, 3, 4}}}, [](Tape<D>&, const std::vector<V>& v) { return max(v[0], 1); }));
    unary("silu", [](V a) { return silu(a); }, -3, 3);
    unary("gelu", [](V a) { return gelu(a); }, -3, 3);
    unary("sigmoid", [](V a) { return sigmoid(a); }, -3, 3);
    unary("softplus", [](V a) { return softplus(a); }, -3, 3);
    unary("log", [](V a) { return log(a); }, 0.5, 2);
    unary("softmax", [](V a) { return softmax(a); }, -2, 2);
    unary("layernorm", [](V a) { return layernorm(a); });
    unary("normalize_rows", [](V a) { return normalize_rows(a, 1e-8); });
    c.push_back(op_case("conv2d_same", {{{2, 3, 5, 5}}, {{4, 3, 3, 3}}, {{4}}},
                        [](Tape<D>&, const std::vector<V>& v) { return conv2d(v[0], v[1], &v[2], 1, 1); }));
    c.push_back(op_case("conv2d_stride2", {{{1, 2, 6, 6}}, {{3, 2, 3, 3}}},
                        [](Tape<D>&, const std::vector<V>& v) { return conv2d(v[0], v[1], 2, 1); }));
    c.push_back(op_case("conv2d_1x1", {{{2, 4, 3, 3}}, {{2, 4, 1, 1}}, {{2}}},
                        [](Tape<D>&, const std::vector<V>& v) { return conv2d(v[0], v[1], &v[2], 1, 0); }));
    c.push_back(op_case("global_avg_pool", {{{2, 3, 4, 4}}},
                        [](Tape<D>&, const std::vector<V>& v) { return global_avg_pool(v[0]); }));
    c.push_back(op_case("patchify", {{{2, 3, 4, 4}}}, [](Tape<D>&, const std::vector<V>& v) { return patchify(v[0], 2); }));
    c.push_back(op_case("unpatchify", {{{2, 4, 12}}},
                        [](Tape<D>&, const std::vector<V>& v) { return unpatchify(v[0], 2, 3, 4, 4); }));
    c.push_back(op_case("tokens_to_grid", {{{2, 9, 3}}},
                        [](Tape<D>&, const std::vector<V>& v) { return tokens_to_grid(v[0]); }));
    c.push_back(op_case("slice_last", {{{2, 3, 6}}},
                        [](Tape<D>&, const std::vector<V>& v) { return slice_last(v[0], 2, 3); }));
    c.push_back(op_case("gather_rows", {{{5, 4}}},
                        [](Tape<D>&, const std::vector<V>& v) { return gather_rows(v[0], {4, 0, 2, 0}); }));
    c.push_back(op_case("modulate", {{{2, 3, 4}}, {{2, 4}}, {{2, 4}}},
                        [](Tape<D>&, const std::vector<V>& v) { return modulate(v[0], v[1], v[2]); }));
    c.push_back(op_case("gate", {{{2, 3, 4}}, {{2, 4}}}, [](Tape<D>&, const std::vector<V>& v) { return gate(v[0], v[1]); }));
    c.push_back(op_case("attention", {{{2, 4, 12}}}, [](Tape<D>&, const std::vector<V>& v) { return attention(v[0], 2); }));

    // Losses on 2x4x8 inputs.
    const Shape feat{2, 4, 8};
    c.push_back(op_case("velocity_loss", {{{2, 3, 2, 2}}, {{2, 3, 2, 2}}},
                        [](Tape<D>&, const std::vector<V>& v) { return interpolant::velocity_loss(v[0], v[1]); }));
    const InputSpec target{feat, -1, 1, true};
    c.push_back(op_case("patch_alignment_loss", {target, {feat}}, [](Tape<D>&, const std::vector<V>& v) {
        return alignment::patch_alignment_loss(v[0], v[1]);
    }));
    c.push_back(op_case("autocorrelation", {{feat}},
                        [](Tape<D>&, const std::vector<V>& v) { return alignment::autocorrelation(v[0]); }));
    c.push_back(op_case("structural_loss", {target, {feat}}, [](Tape<D>&, const std::vector<V>& v) {
        return alignment::structural_loss(v[0], v[1]);
    }));
    c.push_back(op_case("structural_loss_mixed_width", {{{2, 4, 8}, -1, 1, true}, {{2, 4, 5}}},
                        [](Tape<D>&, const std::vector<V>& v) { return alignment::structural_loss(v[0], v[1]); }));
    c.push_back(op_case("disc_loss_logits", {{{4, 1}, -3, 3}, {{4, 1}, -3, 3}}, [](Tape<D>&, const std::vector<V>& v) {
        return alignment::discriminator_loss_from_logits(v[0], v[1]);
    }));

    // Network-level cases over parameters and inputs.
    c.push_back({"discriminator_loss", [](Rng& rng) {
                     Instance inst;
                     auto d = std::make_shared<Discriminator<D>>(8, DiscriminatorConfig{4}, rng);
                     randomize(*d, rng, 0.4);
                     const Tensor<D> z = uniform_tensor(rng, {2, 4, 8}, -1, 1);
                     const Tensor<D> h = uniform_tensor(rng, {2, 4, 8}, -1, 1);
                     inst.checked = d->params().all();
                     inst.f = [d, z, h](Tape<D>& tape) {
                         return alignment::discriminator_loss(*d, tape.constant_ref(z), tape.constant_ref(h));
                     };
                     inst.owner = d;
                     return inst;
                 }});
    c.push_back({"adversarial_loss", [](Rng& rng) {
                     Instance inst;
                     auto d = std::make_shared<Discriminator<D>>(8, DiscriminatorConfig{4}, rng);
                     randomize(*d, rng, 0.4);
                     auto* h = inst.params.add("h", uniform_tensor(rng, {2, 4, 8}, -1, 1));
                     inst.checked = {h};
                     inst.f = [d, h](Tape<D>& tape) { return alignment::adversarial_loss(*d, tape.param(*h)); };
                     inst.owner = d;
                     return inst;
                 }});
    c.push_back({"projection_mlp", [](Rng& rng) {
                     Instance inst;
                     auto m = std::make_shared<ProjectionMLP<D>>(6, 5, ProjectionConfig{7}, rng);
                     auto* z = inst.params.add("z", uniform_tensor(rng, {2, 3, 6}, -1, 1));
                     const Tensor<D> w = rng.normal_tensor<D>({2, 3, 5});
                     inst.checked = m->params().all();
                     inst.checked.push_back(z);
                     inst.f = [m, z, w](Tape<D>& tape) {
                         return sum(mul(m->forward(tape.param(*z), true), tape.constant_ref(w)));
                     };
                     inst.owner = m;
                     return inst;
                 }});
    c.push_back({"denoiser", [](Rng& rng) {
                     Instance inst;
                     DenoiserConfig cfg;
                     cfg.layers = 2;
                     cfg.hidden_dim = 8;
                     cfg.heads = 2;
                     cfg.patch_size = 2;
                     cfg.num_classes = 3;
                     cfg.alignment_depth = 1;
                     cfg.channels = 2;
                     cfg.height = cfg.width = 4;
                     cfg.mlp_ratio = 2;
                     cfg.freq_dim = 8;
                     auto net = std::make_shared<DenoiserNet<D>>(cfg, rng);
                     randomize(*net, rng, 0.3);
                     const Tensor<D> x = uniform_tensor(rng, {2, 2, 4, 4}, -1, 1);
                     const std::vector<double> t{rng.uniform(0.1, 1.0), rng.uniform(0.1, 1.0)};
                     const std::vector<int> y{static_cast<int>(rng.index(4)), static_cast<int>(rng.index(4))};
                     // The attention key bias has an exactly zero gradient (softmax
                     // shift invariance); small weights keep the difference quotient's
                     // roundoff on it below the 1e-8 denominator floor.
                     Tensor<D> wv = rng.normal_tensor<D>({2, 2, 4, 4});
                     Tensor<D> wh = rng.normal_tensor<D>({2, 4, 8});
                     wv *= 1e-4;
                     wh *= 1e-4;
                     inst.checked = net->params().all();
                     inst.f = [net, x, t, y, wv, wh](Tape<D>& tape) {
                         const auto out = net->forward(tape, x, t, y, true);
                         return add(sum(mul(out.velocity, tape.constant_ref(wv))),
                                    sum(mul(out.hidden, tape.constant_ref(wh))));
                     };
                     inst.owner = net;
                     return inst;
                 }});
    c.push_back({"total_loss", [](Rng& rng) {
                     Instance inst;
                     auto d = std::make_shared<Discriminator<D>>(8, DiscriminatorConfig{4}, rng);
                     randomize(*d, rng, 0.4);
                     auto* pred = inst.params.add("pred", uniform_tensor(rng, {2, 3, 2, 2}, -1, 1));
                     auto* h = inst.params.add("h", uniform_tensor(rng, {2, 4, 8}, -1, 1));
                     const Tensor<D> target = uniform_tensor(rng, {2, 3, 2, 2}, -1, 1);
                     const Tensor<D> z = uniform_tensor(rng, {2, 4, 8}, -1, 1);
                     inst.checked = {pred, h};
                     inst.f = [d, pred, h, target, z](Tape<D>& tape) {
                         alignment::AlignmentConfig cfg;
                         alignment::LossTerms<D> terms;
                         V hv = tape.param(*h);
                         V zv = tape.constant_ref(z);
                         terms.velocity = interpolant::velocity_loss(tape.param(*pred), tape.constant_ref(target));
                         terms.patch = alignment::patch_alignment_loss(zv, hv);
                         terms.structural = alignment::structural_loss(zv, hv);
                         terms.adversarial = alignment::adversarial_loss(*d, hv);
                         return alignment::total_loss(cfg, terms).total;
                     };
                     inst.owner = d;
                     return inst;
                 }});
    return c;
}

const std::vector<Case>& cases() {
    static const std::vector<Case> all = build_cases();
    return all;
}

}  // namespace

double max_relative_error(const std::vector<Parameter<D>*>& params, const Functional& f, double h, std::size_t coords,
                          Rng* coord_rng) {
    GradMap<D> grads;
    {
        Tape<D> tape;
        grads = tape.backward(f(tape));
    }
    std::vector<std::pair<Parameter<D>*, std::size_t>> sel;
    for (auto* p : params) {
        for (std::size_t i = 0; i < p->value.size(); ++i) sel.emplace_back(p, i);
    }
    if (coords && coords < sel.size()) {
        if (!coord_rng) throw ContractError("max_relative_error: coordinate sampling needs an rng");
        for (std::size_t i = 0; i < coords; ++i) std::swap(sel[i], sel[i + coord_rng->index(sel.size() - i)]);
        sel.resize(coords);
    }
    double worst = 0;
    for (const auto& [p, i] : sel) {
        D& x = p->value[i];
        const D saved = x;
        x = saved + h;
        const double fp = eval(f);
        x = saved - h;
        const double fm = eval(f);
        x = saved;
        const double fd = (fp - fm) / (2 * h);
        const double ga = grads.contains(p) ? grads.at(p)[i] : 0.0;
        const double denom = std::max({std::abs(ga), std::abs(fd), 1e-8});
        worst = std::max(worst, std::abs(ga - fd) / denom);
    }
    return worst;
}

std::vector<std::string> case_names() {
    std::vector<std::string> out;
    for (const auto& c : cases()) out.push_back(c.name);
    return out;
}

std::vector<CaseResult> run_suite(const Options& opts, const std::string& filter) {
    std::vector<CaseResult> out;
    for (std::size_t ci = 0; ci < cases().size(); ++ci) {
        const Case& c = cases()[ci];
        if (!filter.empty() && c.name.find(filter) == std::string::npos) continue;
        CaseResult r;
        r.name = c.name;
        for (std::size_t k = 0; k < opts.instances; ++k) {
            Rng rng = Rng::derive(opts.seed, ci, k);
            Instance inst = c.setup(rng);
            const bool network = inst.owner != nullptr;
            std::size_t budget = network ? opts.network_coords : 0;
            std::size_t total = 0;
            for (auto* p : inst.checked) total += p->value.size();
            r.coordinates += budget && budget < total ? budget : total;
            r.max_rel_err = std::max(r.max_rel_err, max_relative_error(inst.checked, inst.f, opts.h, budget, &rng));
            ++r.instances;
        }
        r.passed = r.max_rel_err < opts.tolerance;
        out.push_back(std::move(r));
    }
    return out;
}

}  // namespace sara::gradcheck
