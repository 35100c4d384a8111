#include "sara/trainer.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include "json.hpp"
#include <sstream>

#include "sara/checkpoint.hpp"
#include "sara/interpolant.hpp"

namespace sara {

namespace {

constexpr std::uint64_t kInitStream = 0x1417;
constexpr std::uint64_t kTrainStream = 0x7a1e;

TrainConfig prepared(TrainConfig cfg) {
    cfg.sync();
    cfg.validate();
    return cfg;
}

template <Scalar T>
std::vector<Parameter<T>*> collect(std::initializer_list<ParameterSet<T>*> sets) {
    std::vector<Parameter<T>*> out;
    for (auto* s : sets) {
        for (auto* p : s->all()) out.push_back(p);
    }
    return out;
}

}  // namespace

void TrainConfig::sync() {
    denoiser.channels = dataset.channels;
    denoiser.height = dataset.height;
    denoiser.width = dataset.width;
    denoiser.num_classes = dataset.num_classes;
}

void TrainConfig::validate() const {
    dataset.validate();
    denoiser.validate();
    encoder.validate();
    alignment.validate();
    gen_optimizer.validate();
    disc_optimizer.validate();
    if (denoiser.channels != dataset.channels || denoiser.height != dataset.height ||
        denoiser.width != dataset.width || denoiser.num_classes != dataset.num_classes) {
        throw ConfigError("train: denoiser latent shape disagrees with the dataset");
    }
    if (batch_size == 0) throw ConfigError("train: batch_size must be positive");
    if (disc_every == 0) throw ConfigError("train: disc_every must be positive");
    if (label_dropout < 0 || label_dropout > 1) throw ConfigError("train: label_dropout must lie in [0, 1]");
    if (projection.hidden == 0 || discriminator.channels == 0) {
        throw ConfigError("train: projection.hidden and discriminator.channels must be positive");
    }
}

std::string StepMetrics::to_json_line() const {
    nlohmann::ordered_json j;
    j["step"] = step;
    j["loss_total"] = loss.total;
    j["loss_velocity"] = loss.velocity;
    j["loss_patch"] = loss.patch;
    j["loss_struc"] = loss.structural;
    j["loss_adv"] = loss.adversarial;
    j["loss_disc"] = loss.disc;
    j["grad_norm_gen"] = grad_norm_gen;
    j["grad_norm_disc"] = grad_norm_disc;
    j["wall_ms"] = wall_ms;
    return j.dump();
}

template <Scalar T>
TrainState<T>::TrainState(TrainConfig cfg) : TrainState(prepared(cfg), Rng::derive(cfg.seed, kInitStream, 0)) {}

template <Scalar T>
TrainState<T>::TrainState(const TrainConfig& cfg, Rng init)
    : denoiser(cfg.denoiser, init),
      encoder(cfg.denoiser, cfg.encoder),
      projection(cfg.denoiser.hidden_dim, cfg.encoder.dim, cfg.projection, init),
      discriminator(cfg.encoder.dim, cfg.discriminator, init),
      gen_opt(cfg.gen_optimizer, collect<T>({&denoiser.params(), &projection.params()})),
      disc_opt(cfg.disc_optimizer, collect<T>({&discriminator.params()})),
      rng(Rng::derive(cfg.seed, kTrainStream, 0)),
      cfg_(cfg) {}

template <Scalar T>
std::vector<Parameter<T>*> TrainState<T>::generator_params() {
    return gen_opt.params();
}

template <Scalar T>
std::vector<Parameter<T>*> TrainState<T>::discriminator_params() {
    return disc_opt.params();
}

template <Scalar T>
std::vector<std::pair<std::string, Tensor<T>*>> TrainState<T>::named_tensors() {
    std::vector<std::pair<std::string, Tensor<T>*>> out;
    for (auto* set : {&denoiser.params(), &projection.params(), &discriminator.params(), &encoder.params()}) {
        for (auto* p : set->all()) out.emplace_back(p->name, &p->value);
    }
    auto moments = [&](Adam<T>& opt, const std::string& tag) {
        for (std::size_t i = 0; i < opt.params().size(); ++i) {
            out.emplace_back("adam." + tag + ".m." + opt.params()[i]->name, &opt.first_moment(i));
            out.emplace_back("adam." + tag + ".v." + opt.params()[i]->name, &opt.second_moment(i));
        }
    };
    moments(gen_opt, "gen");
    moments(disc_opt, "disc");
    return out;
}

template <Scalar T>
StepMetrics train_step(TrainState<T>& state, const Batch<T>& batch) {
    using namespace alignment;
    const auto start = std::chrono::steady_clock::now();
    const TrainConfig& cfg = state.config();
    const AlignmentConfig& acfg = cfg.alignment;
    const std::size_t b = batch.labels.size();
    if (b == 0 || batch.x0.rank() != 4 || batch.x0.dim(0) != b) {
        throw ContractError("train_step: batch must be nonempty with one label per sample");
    }

    std::vector<int> labels = batch.labels;
    for (int& y : labels) {
        if (state.rng.uniform() < cfg.label_dropout) y = static_cast<int>(cfg.denoiser.null_class());
    }
    const std::vector<double> t = interpolant::sample_t(state.rng, b);
    const Tensor<T> eps = state.rng.template normal_tensor<T>(batch.x0.shape());
    const auto noisy = interpolant::corrupt(batch.x0, eps, t);

    StepMetrics m;
    m.step = state.step + 1;
    const bool need_align = acfg.any_active();
    Tensor<T> z_val, h_val;

    {
        Tape<T> tape;
        const auto out = state.denoiser.forward(tape, noisy.x_t, t, labels, true);
        LossTerms<T> terms;
        terms.velocity = interpolant::velocity_loss(out.velocity, tape.constant(interpolant::velocity_target(batch.x0, eps)));
        if (need_align) {
            Var<T> z = state.encoder.encode(tape, batch.x0);
            Var<T> h = state.projection.forward(out.hidden, true);
            const T ceps = static_cast<T>(acfg.cosine_eps);
            if (acfg.patch_active()) terms.patch = patch_alignment_loss(z, h, ceps);
            if (acfg.structural_active()) terms.structural = structural_loss(z, h, ceps);
            if (acfg.adversarial_active()) {
                terms.adversarial = adversarial_loss(state.discriminator, h);
                z_val = z.value();
                h_val = h.value();
            }
        }
        const Objective<T> obj = total_loss(acfg, terms);
        m.loss = obj.breakdown;
        const std::pair<const char*, double> reported[] = {{"velocity", m.loss.velocity},
                                                           {"patch", m.loss.patch},
                                                           {"structural", m.loss.structural},
                                                           {"adversarial", m.loss.adversarial},
                                                           {"total", m.loss.total}};
        for (const auto& [name, value] : reported) {
            if (!std::isfinite(value)) {
                std::ostringstream os;
                os << "non-finite loss term '" << name << "' at step " << m.step << " (velocity=" << m.loss.velocity
                   << ", patch=" << m.loss.patch << ", structural=" << m.loss.structural
                   << ", adversarial=" << m.loss.adversarial << ")";
                throw NonFiniteError(os.str());
            }
        }
        const GradMap<T> grads = tape.backward(obj.total);
        m.grad_norm_gen = grad_norm(grads, state.gen_opt.params());
        state.gen_opt.step(grads);
    }
    ++state.step;

    if (acfg.adversarial_active()) {
        Tape<T> tape;
        Var<T> z = tape.constant(std::move(z_val));
        Var<T> h = tape.constant(std::move(h_val));
        m.disc_updated = state.step % cfg.disc_every == 0;
        if (m.disc_updated) {
            Var<T> loss = discriminator_loss(state.discriminator, z, h);
            m.loss.disc = static_cast<double>(loss.value().item());
            if (!std::isfinite(m.loss.disc)) {
                throw NonFiniteError("non-finite loss term 'disc' at step " + std::to_string(m.step));
            }
            const GradMap<T> grads = tape.backward(loss);
            m.grad_norm_disc = grad_norm(grads, state.disc_opt.params());
            state.disc_opt.step(grads);
        } else {
            Var<T> loss = discriminator_loss_from_logits(state.discriminator.forward(z, false),
                                                         state.discriminator.forward(h, false));
            m.loss.disc = static_cast<double>(loss.value().item());
        }
    }

    if (!cfg.deterministic_metrics) {
        m.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    }
    return m;
}

std::filesystem::path checkpoint_dir_for(const std::filesystem::path& out_dir, std::uint64_t step) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "step_%08llu", static_cast<unsigned long long>(step));
    return out_dir / "checkpoints" / buf;
}

namespace {

// Keeps only metrics lines with step <= last_step so a resumed run continues
// the stream it was checkpointed from.
void truncate_metrics(const std::filesystem::path& path, std::uint64_t last_step) {
    if (!std::filesystem::exists(path)) return;
    std::ifstream in(path);
    std::string kept, line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto j = nlohmann::json::parse(line, nullptr, false);
        if (j.is_discarded() || !j.contains("step")) continue;
        if (j["step"].get<std::uint64_t>() <= last_step) kept += line + '\n';
    }
    in.close();
    std::ofstream out(path, std::ios::trunc);
    out << kept;
}

}  // namespace

template <Scalar T>
void run_training(TrainState<T>& state, const SyntheticDataset& data, const RunOptions& opts) {
    const TrainConfig& cfg = state.config();
    const std::uint64_t target = opts.until_step ? opts.until_step : cfg.steps;
    std::filesystem::create_directories(opts.out_dir);
    const auto metrics_path = opts.out_dir / "metrics.jsonl";
    truncate_metrics(metrics_path, state.step);
    std::ofstream metrics(metrics_path, std::ios::app);
    if (!metrics) throw Error("cannot open " + metrics_path.string());

    while (state.step < target) {
        const Batch<T> batch = data.template batch<T>(state.step, cfg.batch_size);
        const StepMetrics m = train_step(state, batch);
        metrics << m.to_json_line() << '\n';
        metrics.flush();
        if (opts.on_step) opts.on_step(m);
        if (cfg.checkpoint_every && state.step % cfg.checkpoint_every == 0 && state.step != target) {
            save_checkpoint(state, checkpoint_dir_for(opts.out_dir, state.step));
        }
    }
    save_checkpoint(state, checkpoint_dir_for(opts.out_dir, state.step));
}

template class TrainState<float>;
template class TrainState<double>;
template StepMetrics train_step(TrainState<float>&, const Batch<float>&);
template StepMetrics train_step(TrainState<double>&, const Batch<double>&);
template void run_training(TrainState<float>&, const SyntheticDataset&, const RunOptions&);
template void run_training(TrainState<double>&, const SyntheticDataset&, const RunOptions&);

}  // namespace sara
