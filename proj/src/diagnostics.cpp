#include "sara/diagnostics.hpp"

#include <cmath>
#include <fstream>
#include <numeric>

#include "sara/alignment.hpp"
#include "sara/interpolant.hpp"

namespace sara::diagnostics {

namespace {

// Cosine autocorrelation of one [N, D] slab, accumulated in double.
std::vector<double> autocorr(const double* h, std::size_t n, std::size_t d, double eps) {
    std::vector<double> norms(n);
    for (std::size_t i = 0; i < n; ++i) {
        double s = 0;
        for (std::size_t k = 0; k < d; ++k) s += h[i * d + k] * h[i * d + k];
        norms[i] = std::max(std::sqrt(s), eps);
    }
    std::vector<double> a(n * n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            double s = 0;
            for (std::size_t k = 0; k < d; ++k) s += h[i * d + k] * h[j * d + k];
            a[i * n + j] = s / (norms[i] * norms[j]);
        }
    }
    return a;
}

template <Scalar T>
std::vector<double> as_double(const Tensor<T>& t) {
    return std::vector<double>(t.data().begin(), t.data().end());
}

std::vector<double> sym_sqrt(const std::vector<double>& a, std::size_t n) {
    const SymmetricEigen e = symmetric_eigen(a, n);
    std::vector<double> out(n * n, 0.0);
    for (std::size_t k = 0; k < n; ++k) {
        const double s = std::sqrt(std::max(e.values[k], 0.0));
        for (std::size_t i = 0; i < n; ++i) {
            const double vi = e.vectors[i * n + k] * s;
            for (std::size_t j = 0; j < n; ++j) out[i * n + j] += vi * e.vectors[j * n + k];
        }
    }
    return out;
}

void write_csv_row(std::ofstream& out, const std::vector<double>& values) {
    for (std::size_t i = 0; i < values.size(); ++i) out << (i ? "," : "") << values[i];
    out << '\n';
}

}  // namespace

template <Scalar T>
std::vector<double> patch_correlation_map(const Tensor<T>& h, std::size_t ref, double eps) {
    if (h.rank() != 2) throw DimensionError("patch_correlation_map: expected [N, D], got " + shape_str(h.shape()));
    const std::size_t n = h.dim(0);
    if (ref >= n) throw DomainError("patch_correlation_map: reference patch " + std::to_string(ref) + " out of range");
    Tape<T> tape;
    const Var<T> a = alignment::autocorrelation(tape.constant(h.reshaped({1, n, h.dim(1)})), static_cast<T>(eps));
    std::vector<double> out(n);
    for (std::size_t j = 0; j < n; ++j) out[j] = static_cast<double>(a.value()[ref * n + j]);
    return out;
}

std::vector<double> energy_curve(const std::vector<double>& sv) {
    double total = 0;
    for (double s : sv) total += s * s;
    std::vector<double> out(sv.size());
    double acc = 0;
    for (std::size_t i = 0; i < sv.size(); ++i) {
        acc += sv[i] * sv[i];
        out[i] = total > 0 ? acc / total : 0.0;
    }
    if (!out.empty() && total > 0) out.back() = 1.0;
    return out;
}

template <Scalar T>
double svd_energy(const Tensor<T>& features, std::size_t k) {
    if (features.rank() != 2) throw DimensionError("svd_energy: expected [M, D], got " + shape_str(features.shape()));
    const std::size_t bound = std::min(features.dim(0), features.dim(1));
    if (k < 1 || k > bound) {
        throw DomainError("svd_energy: k=" + std::to_string(k) + " outside [1, " + std::to_string(bound) + "]");
    }
    return energy_curve(svd_values(features))[k - 1];
}

template <Scalar T>
GaussianMoments moments(const Tensor<T>& samples) {
    if (samples.rank() < 1 || samples.dim(0) < 2) throw ContractError("moments: need at least two samples");
    const std::size_t m = samples.dim(0);
    const std::size_t d = samples.size() / m;
    GaussianMoments g{d, std::vector<double>(d, 0.0), std::vector<double>(d * d, 0.0)};
    for (std::size_t s = 0; s < m; ++s) {
        for (std::size_t i = 0; i < d; ++i) g.mean[i] += static_cast<double>(samples[s * d + i]);
    }
    for (double& v : g.mean) v /= static_cast<double>(m);
    std::vector<double> c(d);
    for (std::size_t s = 0; s < m; ++s) {
        for (std::size_t i = 0; i < d; ++i) c[i] = static_cast<double>(samples[s * d + i]) - g.mean[i];
        for (std::size_t i = 0; i < d; ++i) {
            for (std::size_t j = i; j < d; ++j) g.cov[i * d + j] += c[i] * c[j];
        }
    }
    for (std::size_t i = 0; i < d; ++i) {
        for (std::size_t j = i; j < d; ++j) {
            g.cov[i * d + j] /= static_cast<double>(m - 1);
            g.cov[j * d + i] = g.cov[i * d + j];
        }
    }
    return g;
}

double frechet_gaussian(const std::vector<double>& mu_a, const std::vector<double>& cov_a,
                        const std::vector<double>& mu_b, const std::vector<double>& cov_b) {
    const std::size_t n = mu_a.size();
    if (mu_b.size() != n || cov_a.size() != n * n || cov_b.size() != n * n) {
        throw DimensionError("frechet_gaussian: moment dimensions disagree");
    }
    double mean_term = 0;
    for (std::size_t i = 0; i < n; ++i) mean_term += (mu_a[i] - mu_b[i]) * (mu_a[i] - mu_b[i]);
    double trace = 0;
    for (std::size_t i = 0; i < n; ++i) trace += cov_a[i * n + i] + cov_b[i * n + i];

    const std::vector<double> ra = sym_sqrt(cov_a, n);
    std::vector<double> tmp(n * n), mid(n * n);
    gemm(false, false, n, n, n, ra.data(), cov_b.data(), tmp.data(), false);
    gemm(false, false, n, n, n, tmp.data(), ra.data(), mid.data(), false);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            const double s = 0.5 * (mid[i * n + j] + mid[j * n + i]);
            mid[i * n + j] = mid[j * n + i] = s;
        }
    }
    double cross = 0;
    for (double l : symmetric_eigen(mid, n).values) cross += std::sqrt(std::max(l, 0.0));
    return std::max(mean_term + trace - 2 * cross, 0.0);
}

double frechet_gaussian(const GaussianMoments& a, const GaussianMoments& b) {
    return frechet_gaussian(a.mean, a.cov, b.mean, b.cov);
}

void ReportConfig::validate() const {
    if (!(t_probe > 0 && t_probe <= 1)) throw ConfigError("diagnostics: t_probe must lie in (0, 1]");
    if (eval_size == 0 || eval_batch == 0) throw ConfigError("diagnostics: eval_size and eval_batch must be positive");
}

template <Scalar T>
AlignmentReport compare_representations(const Tensor<T>& z, const Tensor<T>& h, std::size_t grid_h,
                                        std::size_t grid_w, const ReportConfig& cfg) {
    if (z.rank() != 3 || h.rank() != 3 || z.dim(0) != h.dim(0) || z.dim(1) != h.dim(1)) {
        throw DimensionError("compare_representations: expected [M, N, D] pairs with equal M and N, got " +
                             shape_str(z.shape()) + " and " + shape_str(h.shape()));
    }
    const std::size_t m = z.dim(0), n = z.dim(1), dz = z.dim(2), dh = h.dim(2);
    if (m == 0) throw ContractError("compare_representations: empty eval set");
    if (grid_h * grid_w != n) throw DimensionError("compare_representations: grid does not match patch count");
    constexpr double eps = alignment::kCosineEps;

    AlignmentReport r;
    r.images = m;
    r.grid_h = grid_h;
    r.grid_w = grid_w;
    const std::vector<double> zd = as_double(z), hd = as_double(h);
    if (dz == dh) {
        double cos_sum = 0;
        for (std::size_t p = 0; p < m * n; ++p) {
            const double* a = zd.data() + p * dz;
            const double* b = hd.data() + p * dh;
            double ab = 0, aa = 0, bb = 0;
            for (std::size_t k = 0; k < dz; ++k) {
                ab += a[k] * b[k];
                aa += a[k] * a[k];
                bb += b[k] * b[k];
            }
            cos_sum += ab / (std::max(std::sqrt(aa), eps) * std::max(std::sqrt(bb), eps));
        }
        r.mean_cosine = cos_sum / static_cast<double>(m * n);
    }
    double struc = 0;
    for (std::size_t s = 0; s < m; ++s) {
        const auto az = autocorr(zd.data() + s * n * dz, n, dz, eps);
        const auto ah = autocorr(hd.data() + s * n * dh, n, dh, eps);
        for (std::size_t i = 0; i < n * n; ++i) struc += (az[i] - ah[i]) * (az[i] - ah[i]);
    }
    r.structural = struc / static_cast<double>(m);
    r.energy_encoder = energy_curve(svd_values(z.reshaped({m * n, dz})));
    r.energy_probe = energy_curve(svd_values(h.reshaped({m * n, dh})));

    for (std::size_t img = 0; img < std::min(cfg.corrmap_images, m); ++img) {
        for (std::size_t ref : cfg.ref_patches) {
            if (ref >= n) throw DomainError("alignment_report: reference patch " + std::to_string(ref) + " out of range");
            Tensor<T> zi({n, dz}, std::vector<T>(z.ptr() + img * n * dz, z.ptr() + (img + 1) * n * dz));
            Tensor<T> hi({n, dh}, std::vector<T>(h.ptr() + img * n * dh, h.ptr() + (img + 1) * n * dh));
            r.encoder_maps.push_back({img, ref, patch_correlation_map(zi, ref)});
            r.probe_maps.push_back({img, ref, patch_correlation_map(hi, ref)});
        }
    }
    return r;
}

template <Scalar T>
AlignmentReport alignment_report(const DenoiserNet<T>& den, const FrozenEncoder<T>& enc,
                                 const ProjectionMLP<T>& proj, const SyntheticDataset& data,
                                 const ReportConfig& cfg) {
    cfg.validate();
    const DenoiserConfig& dc = den.config();
    const std::size_t n = dc.num_tokens();
    const std::size_t dz = enc.dim();
    const std::size_t dh = cfg.raw_hidden ? dc.hidden_dim : proj.out_dim();
    Tensor<T> z_all({cfg.eval_size, n, dz});
    Tensor<T> h_all({cfg.eval_size, n, dh});
    std::size_t done = 0;
    for (std::uint64_t bi = 0; done < cfg.eval_size; ++bi) {
        const std::size_t b = std::min(cfg.eval_batch, cfg.eval_size - done);
        const Batch<T> batch = data.template batch<T>(cfg.eval_seed + bi, b, SyntheticDataset::kEvalStream);
        Rng noise = Rng::derive(data.spec().seed, SyntheticDataset::kEvalStream + 0x100, cfg.eval_seed + bi);
        const Tensor<T> eps = noise.template normal_tensor<T>(batch.x0.shape());
        const auto noisy = interpolant::corrupt(batch.x0, eps, cfg.t_probe);
        Tape<T> tape;
        const auto out = den.forward(tape, noisy.x_t, std::vector<double>(b, cfg.t_probe), batch.labels, false);
        const Tensor<T> h = cfg.raw_hidden ? out.hidden.value() : proj.forward(out.hidden, false).value();
        const Tensor<T> z = enc.encode(batch.x0);
        std::copy(z.data().begin(), z.data().end(), z_all.ptr() + done * n * dz);
        std::copy(h.data().begin(), h.data().end(), h_all.ptr() + done * n * dh);
        done += b;
    }
    return compare_representations(z_all, h_all, dc.height / dc.patch_size, dc.width / dc.patch_size, cfg);
}

nlohmann::ordered_json AlignmentReport::to_json() const {
    nlohmann::ordered_json j;
    j["images"] = images;
    j["grid"] = {grid_h, grid_w};
    j["mean_cosine"] = mean_cosine ? nlohmann::ordered_json(*mean_cosine) : nlohmann::ordered_json(nullptr);
    j["structural_loss"] = structural;
    j["svd_rank_bound"] = energy_probe.size();
    j["energy_probe"] = energy_probe;
    j["energy_encoder"] = energy_encoder;
    return j;
}

void AlignmentReport::write(const std::filesystem::path& dir, const nlohmann::ordered_json& extra) const {
    std::filesystem::create_directories(dir);
    nlohmann::ordered_json j = to_json();
    for (const auto& [k, v] : extra.items()) j[k] = v;
    std::ofstream(dir / "report.json") << j.dump(2) << '\n';

    std::ofstream curve(dir / "energy_curve.csv");
    curve << "k,probe_cumulative,encoder_cumulative\n";
    const std::size_t rows = std::max(energy_probe.size(), energy_encoder.size());
    for (std::size_t k = 0; k < rows; ++k) {
        curve << k + 1 << ',';
        if (k < energy_probe.size()) curve << energy_probe[k];
        curve << ',';
        if (k < energy_encoder.size()) curve << energy_encoder[k];
        curve << '\n';
    }
    auto dump_maps = [&](const std::vector<CorrelationMap>& maps, const std::string& tag) {
        for (const auto& cm : maps) {
            std::ofstream out(dir / ("corrmap_" + std::to_string(cm.image) + "_" + std::to_string(cm.ref) +
                                     (tag.empty() ? "" : "_" + tag) + ".csv"));
            out << "# grid " << grid_h << ' ' << grid_w << '\n';
            for (std::size_t a = 0; a < grid_h; ++a) {
                write_csv_row(out, std::vector<double>(cm.values.begin() + a * grid_w,
                                                       cm.values.begin() + (a + 1) * grid_w));
            }
        }
    };
    dump_maps(probe_maps, "");
    dump_maps(encoder_maps, "encoder");
}

#define SARA_DIAG_INST(T)                                                                                         template std::vector<double> patch_correlation_map(const Tensor<T>&, std::size_t, double);                    template double svd_energy(const Tensor<T>&, std::size_t);                                                    template GaussianMoments moments(const Tensor<T>&);                                                           template AlignmentReport compare_representations(const Tensor<T>&, const Tensor<T>&, std::size_t,                                                              std::size_t, const ReportConfig&);                           template AlignmentReport alignment_report(const DenoiserNet<T>&, const FrozenEncoder<T>&,                                                               const ProjectionMLP<T>&, const SyntheticDataset&,                                                             const ReportConfig&);

SARA_DIAG_INST(float)
SARA_DIAG_INST(double)

}  // namespace sara::diagnostics
