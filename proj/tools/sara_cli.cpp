#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <malloc.h>

#include "CLI11.hpp"
#include "json.hpp"
#include "sara/checkpoint.hpp"
#include "sara/config.hpp"
#include "sara/gradcheck.hpp"

namespace fs = std::filesystem;
using namespace sara;

namespace {

enum ExitCode { kOk = 0, kFailure = 1, kConfig = 2, kNumeric = 3, kCheckpoint = 4 };

fs::path output_root(const Config& cfg) {
    if (!cfg.output_root.empty()) return cfg.output_root;
    if (const char* env = std::getenv("SARA_OUTPUT_ROOT"); env && *env) return env;
    return "runs";
}

Config base_config(const std::string& path, const std::vector<std::string>& overrides) {
    Config cfg = path.empty() ? Config{} : load_config(path);
    apply_overrides(cfg, overrides);
    return cfg;
}

void write_text(const fs::path& p, const std::string& text) {
    fs::create_directories(p.parent_path());
    std::ofstream out(p);
    if (!out) throw Error("cannot write " + p.string());
    out << text;
}

// ---------------------------------------------------------------- gen-data
int cmd_gen_data(const std::string& config_path, const std::vector<std::string>& overrides, std::string out) {
    Config cfg = base_config(config_path, overrides);
    if (!cfg.present.contains("dataset.seed")) throw ConfigError("missing required field dataset.seed");
    const DatasetSpec& spec = cfg.train.dataset;
    const SyntheticDataset data(spec);
    const fs::path dir = out.empty() ? output_root(cfg) / ("data_" + spec.hash()) : fs::path(out);

    nlohmann::ordered_json j;
    j["hash"] = spec.hash();
    j["mode"] = to_string(spec.mode);
    j["shape"] = {spec.channels, spec.height, spec.width};
    j["seed"] = spec.seed;
    nlohmann::ordered_json classes = nlohmann::ordered_json::array();
    for (std::size_t k = 0; k < spec.num_classes; ++k) {
        nlohmann::ordered_json c;
        c["class"] = k;
        c["mean"] = data.class_mean(k);
        c["std"] = data.class_std(k);
        if (spec.mode == DatasetMode::structured_grid) c["regions"] = data.region_map(k);
        classes.push_back(std::move(c));
    }
    j["classes"] = std::move(classes);
    write_text(dir / "dataset.ini", "[dataset]\n" + spec.canonical());
    write_text(dir / "dataset.json", j.dump(2) + "\n");
    std::cout << "dataset " << spec.hash() << " -> " << dir.string() << "\n";
    return kOk;
}

// ------------------------------------------------------------------- train
template <Scalar T>
int train_typed(const Config& cfg, const std::string& resume, std::uint64_t steps_override, const fs::path& out_dir,
                std::size_t log_every) {
    std::unique_ptr<TrainState<T>> state;
    if (!resume.empty()) {
        state = load_checkpoint<T>(resume);
    } else {
        state = std::make_unique<TrainState<T>>(cfg.train);
    }
    const TrainConfig& tc = state->config();
    const SyntheticDataset data(tc.dataset);
    Config echo = cfg;
    echo.train = tc;
    write_text(out_dir / "config.ini", to_config_text(echo));

    RunOptions opts;
    opts.out_dir = out_dir;
    opts.until_step = steps_override ? steps_override : tc.steps;
    const auto start = std::chrono::steady_clock::now();
    opts.on_step = [&](const StepMetrics& m) {
        if (log_every && (m.step % log_every == 0 || m.step == opts.until_step)) {
            const double sec = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
            std::fprintf(stderr, "step %llu  total %.5f  vel %.5f  patch %.4f  struc %.4f  adv %.4f  disc %.4f  (%.1fs)\n",
                         static_cast<unsigned long long>(m.step), m.loss.total, m.loss.velocity, m.loss.patch,
                         m.loss.structural, m.loss.adversarial, m.loss.disc, sec);
        }
    };
    run_training(*state, data, opts);
    std::cout << "checkpoint " << checkpoint_dir_for(out_dir, state->step).string() << "\n";
    return kOk;
}

int cmd_train(const std::string& config_path, const std::vector<std::string>& overrides, const std::string& resume,
              const std::string& ablate, std::uint64_t steps, std::string out, std::size_t log_every) {
    Config cfg;
    if (!resume.empty()) {
        for (const auto& [k, v] : checkpoint_config(resume)) apply_setting(cfg, k, v);
        apply_overrides(cfg, overrides);
    } else {
        cfg = base_config(config_path, overrides);
    }
    if (!ablate.empty()) {
        if (!resume.empty()) throw ConfigError("--ablate cannot change a resumed run");
        const auto a = alignment::AlignmentConfig::ablation(ablate);
        cfg.train.alignment.patch = a.patch;
        cfg.train.alignment.structural = a.structural;
        cfg.train.alignment.adversarial = a.adversarial;
        if (!a.structural) cfg.train.alignment.beta = 0;
        if (!a.adversarial) cfg.train.alignment.gamma = 0;
        if (!a.patch) cfg.train.alignment.lambda = 0;
    }
    cfg.train.sync();
    cfg.train.validate();
    fs::path dir;
    if (!out.empty()) {
        dir = out;
    } else if (!resume.empty()) {
        dir = fs::path(resume).parent_path().parent_path();
    } else {
        dir = output_root(cfg) / ("train_" + cfg.train.dataset.hash() + "_s" + std::to_string(cfg.train.seed));
    }
    return cfg.train.dtype == DType::f64 ? train_typed<double>(cfg, resume, steps, dir, log_every)
                                         : train_typed<float>(cfg, resume, steps, dir, log_every);
}

// ------------------------------------------------------------------ sample
struct SampleArgs {
    std::string checkpoint;
    int cls = 0;
    std::size_t nfe = 250;
    double cfg_scale = 1.0;
    double interval_lo = 0, interval_hi = 1;
    std::uint64_t seed = 0;
    std::size_t count = 16;
    std::string out;
    bool images = false;
};

template <Scalar T>
int sample_typed(const SampleArgs& a, const fs::path& dir) {
    const auto state = load_checkpoint<T>(a.checkpoint);
    const std::size_t classes = state->config().denoiser.num_classes;
    if (a.cls < 0 || static_cast<std::size_t>(a.cls) > classes) {
        throw ConfigError("--class " + std::to_string(a.cls) + " outside [0, " + std::to_string(classes) + "]");
    }
    sampler::SamplerConfig sc;
    sc.nfe = a.nfe;
    sc.cfg_scale = a.cfg_scale;
    sc.interval_lo = a.interval_lo;
    sc.interval_hi = a.interval_hi;
    sc.seed = a.seed;
    sc.validate();
    const Tensor<T> x = sampler::sample(state->denoiser, sc, a.cls, a.count);
    write_bundle<T>(dir, {{"samples", &x}}, {{"kind", "samples"}});

    nlohmann::ordered_json prov;
    prov["schema"] = "sara.sample.provenance/1";
    prov["checkpoint"] = fs::absolute(a.checkpoint).string();
    prov["checkpoint_hash"] = checkpoint_hash(a.checkpoint);
    prov["checkpoint_step"] = state->step;
    prov["class"] = a.cls;
    prov["count"] = a.count;
    prov["seed"] = a.seed;
    prov["sampler"] = {{"nfe", sc.nfe},
                       {"cfg_scale", sc.cfg_scale},
                       {"guidance_interval", {sc.interval_lo, sc.interval_hi}},
                       {"deterministic_final_step", sc.deterministic_final_step}};
    prov["shape"] = x.shape();
    prov["samples_hash"] = checkpoint_hash(dir).substr(0, 8);
    write_text(dir / "provenance.json", prov.dump(2) + "\n");

    if (a.images) {
        const auto& dc = state->config().denoiser;
        const std::size_t per = dc.channels * dc.height * dc.width;
        for (std::size_t i = 0; i < a.count; ++i) {
            Tensor<T> one({dc.channels, dc.height, dc.width}, std::vector<T>(x.ptr() + i * per, x.ptr() + (i + 1) * per));
            const bool color = dc.channels >= 3;
            char name[32];
            std::snprintf(name, sizeof name, "sample_%04zu.%s", i, color ? "ppm" : "pgm");
            sampler::write_image(dir / name, one, color);
        }
    }
    std::cout << "samples -> " << dir.string() << "\n";
    return kOk;
}

int cmd_sample(const SampleArgs& a) {
    const Bundle b = read_manifest(a.checkpoint);
    Config cfg;
    const fs::path dir = a.out.empty() ? output_root(cfg) / ("samples_c" + std::to_string(a.cls) + "_s" + std::to_string(a.seed))
                                       : fs::path(a.out);
    return b.dtype == DType::f64 ? sample_typed<double>(a, dir) : sample_typed<float>(a, dir);
}

// ---------------------------------------------------------------- diagnose
template <Scalar T>
int diagnose_typed(const std::string& checkpoint, const diagnostics::ReportConfig& rc, bool self, const fs::path& dir) {
    const auto state = load_checkpoint<T>(checkpoint);
    const SyntheticDataset data(state->config().dataset);
    diagnostics::AlignmentReport report;
    if (self) {
        const auto& dc = state->config().denoiser;
        Tensor<T> z({rc.eval_size, dc.num_tokens(), state->encoder.dim()});
        std::size_t done = 0;
        for (std::uint64_t bi = 0; done < rc.eval_size; ++bi) {
            const std::size_t b = std::min(rc.eval_batch, rc.eval_size - done);
            const auto batch = data.template batch<T>(rc.eval_seed + bi, b, SyntheticDataset::kEvalStream);
            const Tensor<T> zb = state->encoder.encode(batch.x0);
            std::copy(zb.data().begin(), zb.data().end(), z.ptr() + done * dc.num_tokens() * state->encoder.dim());
            done += b;
        }
        report = diagnostics::compare_representations(z, z, dc.height / dc.patch_size, dc.width / dc.patch_size, rc);
    } else {
        report = diagnostics::alignment_report(state->denoiser, state->encoder, state->projection, data, rc);
    }
    Config echo;
    echo.train = state->config();
    echo.report = rc;
    nlohmann::ordered_json extra;
    extra["checkpoint"] = fs::absolute(checkpoint).string();
    extra["checkpoint_step"] = state->step;
    extra["probe"] = self ? "encoder" : (rc.raw_hidden ? "z_den" : "h_den");
    extra["t_probe"] = rc.t_probe;
    extra["config"] = to_key_values(echo);
    report.write(dir, extra);
    std::cout << "images " << report.images << "  mean_cosine "
              << (report.mean_cosine ? std::to_string(*report.mean_cosine) : std::string("n/a")) << "  structural_loss "
              << report.structural << "\nreport -> " << dir.string() << "\n";
    return kOk;
}

int cmd_diagnose(const std::string& checkpoint, const std::string& config_path, const std::vector<std::string>& overrides,
                 bool self, std::string out) {
    Config cfg = base_config(config_path, overrides);
    cfg.report.validate();
    const Bundle b = read_manifest(checkpoint);
    const fs::path dir = out.empty() ? fs::path(checkpoint) / "report" : fs::path(out);
    return b.dtype == DType::f64 ? diagnose_typed<double>(checkpoint, cfg.report, self, dir)
                                 : diagnose_typed<float>(checkpoint, cfg.report, self, dir);
}

// --------------------------------------------------------------- gradcheck
int cmd_gradcheck(std::size_t instances, const std::string& filter, std::uint64_t seed) {
    gradcheck::Options opts;
    opts.instances = instances;
    opts.seed = seed;
    const auto results = gradcheck::run_suite(opts, filter);
    bool ok = !results.empty();
    std::printf("%-30s %9s %11s %14s  %s\n", "case", "instances", "coords", "max_rel_err", "status");
    for (const auto& r : results) {
        std::printf("%-30s %9zu %11zu %14.3e  %s\n", r.name.c_str(), r.instances, r.coordinates, r.max_rel_err,
                    r.passed ? "ok" : "FAIL");
        ok = ok && r.passed;
    }
    std::printf("%s (tolerance %.0e, h=%.0e)\n", ok ? "all cases passed" : "FAILED", opts.tolerance, opts.h);
    return ok ? kOk : kFailure;
}

}  // namespace

int main(int argc, char** argv) {
    // Training allocates the same large activation buffers every step; keep
    // them in the heap instead of mapping and faulting them in each time.
    mallopt(M_MMAP_THRESHOLD, 1 << 30);
    mallopt(M_TRIM_THRESHOLD, 1 << 30);
    CLI::App app{"Desk-scale multi-level representation alignment: data, training, sampling, diagnostics"};
    app.require_subcommand(1);

    std::string config_path, out, resume, ablate, checkpoint, filter;
    std::vector<std::string> overrides;
    std::uint64_t steps = 0, seed = 0;
    std::size_t log_every = 100, instances = 20;
    bool self = false;
    SampleArgs sa;

    auto* gen = app.add_subcommand("gen-data", "Register a synthetic dataset spec");
    gen->add_option("-c,--config", config_path, "Config file")->check(CLI::ExistingFile);
    gen->add_option("--set", overrides, "Override section.key=value (repeatable)");
    gen->add_option("-o,--out", out, "Output directory");

    auto* train = app.add_subcommand("train", "Train denoiser, projection and discriminator");
    train->add_option("-c,--config", config_path, "Config file")->check(CLI::ExistingFile);
    train->add_option("--set", overrides, "Override section.key=value (repeatable)");
    train->add_option("--resume", resume, "Checkpoint directory to resume from")->check(CLI::ExistingDirectory);
    train->add_option("--ablate", ablate, "Loss terms: none, patch, patch+struc, patch+adv, full");
    train->add_option("--steps", steps, "Train until this global step");
    train->add_option("-o,--out", out, "Run directory");
    train->add_option("--log-every", log_every, "Progress line cadence (0 disables)");

    auto* samp = app.add_subcommand("sample", "Draw samples with the SDE sampler");
    samp->add_option("--checkpoint", sa.checkpoint, "Checkpoint directory")->required()->check(CLI::ExistingDirectory);
    samp->add_option("--class", sa.cls, "Class label (num_classes = unconditional)");
    samp->add_option("--nfe", sa.nfe, "Number of sampler steps");
    samp->add_option("--cfg-scale", sa.cfg_scale, "Classifier-free guidance scale (1 = off)");
    samp->add_option("--interval-lo", sa.interval_lo, "Guidance interval lower t");
    samp->add_option("--interval-hi", sa.interval_hi, "Guidance interval upper t");
    samp->add_option("--seed", sa.seed, "Sampler seed");
    samp->add_option("--count", sa.count, "Number of samples");
    samp->add_option("-o,--out", sa.out, "Output directory");
    samp->add_flag("--images", sa.images, "Also write PGM/PPM previews");

    auto* diag = app.add_subcommand("diagnose", "Representation report for a checkpoint");
    diag->add_option("--checkpoint", checkpoint, "Checkpoint directory")->required()->check(CLI::ExistingDirectory);
    diag->add_option("-c,--config", config_path, "Config file with a [diagnostics] section")->check(CLI::ExistingFile);
    diag->add_option("--set", overrides, "Override section.key=value (repeatable)");
    diag->add_flag("--self", self, "Compare the frozen encoder against itself");
    diag->add_option("-o,--out", out, "Report directory");

    auto* grad = app.add_subcommand("gradcheck", "Finite-difference check of every op and loss");
    grad->add_option("--instances", instances, "Random instances per case");
    grad->add_option("--filter", filter, "Only cases whose name contains this");
    grad->add_option("--seed", seed, "Seed");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kConfig;
    }

    try {
        if (*gen) return cmd_gen_data(config_path, overrides, out);
        if (*train) return cmd_train(config_path, overrides, resume, ablate, steps, out, log_every);
        if (*samp) return cmd_sample(sa);
        if (*diag) return cmd_diagnose(checkpoint, config_path, overrides, self, out);
        if (*grad) return cmd_gradcheck(instances, filter, seed);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kConfig;
    } catch (const CheckpointError& e) {
        std::cerr << "checkpoint error: " << e.what() << "\n";
        return kCheckpoint;
    } catch (const NumericError& e) {
        std::cerr << "numeric abort: " << e.what() << "\n";
        return kNumeric;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kFailure;
    }
    return kFailure;
}
