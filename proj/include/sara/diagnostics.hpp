#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include "json.hpp"
#include "sara/dataset.hpp"
#include "sara/networks.hpp"

namespace sara::diagnostics {

// Row `ref` of the patch autocorrelation of h [N, D].
template <Scalar T>
std::vector<double> patch_correlation_map(const Tensor<T>& h, std::size_t ref, double eps = 1e-8);

// Cumulative squared-singular-value fractions; entry k-1 is the top-k energy.
std::vector<double> energy_curve(const std::vector<double>& singular_values);

// Fraction of squared singular-value mass in the top k of features [M, D].
template <Scalar T>
double svd_energy(const Tensor<T>& features, std::size_t k);

struct GaussianMoments {
    std::size_t dim = 0;
    std::vector<double> mean;
    std::vector<double> cov;  // row-major dim x dim, unbiased
};

// Moments of samples flattened to [M, d] (leading axis is the sample axis).
template <Scalar T>
GaussianMoments moments(const Tensor<T>& samples);

// |muA - muB|^2 + tr(A + B - 2 (A B)^{1/2}), with the cross term computed as
// tr((A^{1/2} B A^{1/2})^{1/2}) through symmetric eigendecompositions.
double frechet_gaussian(const std::vector<double>& mu_a, const std::vector<double>& cov_a,
                        const std::vector<double>& mu_b, const std::vector<double>& cov_b);
double frechet_gaussian(const GaussianMoments& a, const GaussianMoments& b);

struct ReportConfig {
    double t_probe = 0.5;
    std::size_t eval_size = 256;
    std::size_t eval_batch = 64;
    std::uint64_t eval_seed = 0;  // batch index offset within the eval stream
    std::vector<std::size_t> ref_patches = {0};
    std::size_t corrmap_images = 2;
    // Probe the raw block output z_den instead of the projected h_den.
    bool raw_hidden = false;

    void validate() const;
};

struct CorrelationMap {
    std::size_t image = 0;
    std::size_t ref = 0;
    std::vector<double> values;  // N entries, row-major over the token grid
};

struct AlignmentReport {
    std::size_t images = 0;
    std::size_t grid_h = 0, grid_w = 0;
    std::optional<double> mean_cosine;  // absent when widths differ
    double structural = 0;
    std::vector<double> energy_probe;
    std::vector<double> energy_encoder;
    std::vector<CorrelationMap> probe_maps;
    std::vector<CorrelationMap> encoder_maps;

    nlohmann::ordered_json to_json() const;
    // report.json, energy_curve.csv and corrmap_<image>_<patch>.csv.
    void write(const std::filesystem::path& dir, const nlohmann::ordered_json& extra = {}) const;
};

// Compares per-image features z [M, N, Dz] (target) and h [M, N, Dh] (probe).
template <Scalar T>
AlignmentReport compare_representations(const Tensor<T>& z, const Tensor<T>& h, std::size_t grid_h,
                                        std::size_t grid_w, const ReportConfig& cfg);

// Corrupts eval images at t_probe, runs the denoiser to the alignment depth,
// projects (unless raw_hidden) and compares against the frozen encoder.
template <Scalar T>
AlignmentReport alignment_report(const DenoiserNet<T>& den, const FrozenEncoder<T>& enc,
                                 const ProjectionMLP<T>& proj, const SyntheticDataset& data,
                                 const ReportConfig& cfg);

}  // namespace sara::diagnostics
