#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "sara/rng.hpp"
#include "sara/tensor.hpp"

namespace sara {

enum class DatasetMode { gaussian_mixture, structured_grid };

std::string to_string(DatasetMode m);
DatasetMode dataset_mode_from_string(const std::string& s);

struct DatasetSpec {
    DatasetMode mode = DatasetMode::structured_grid;
    std::size_t channels = 4;
    std::size_t height = 8;
    std::size_t width = 8;
    std::size_t num_classes = 4;
    // Patch size of the token grid the structured templates are laid out on.
    std::size_t patch_size = 2;
    std::uint64_t seed = 0;
    // gaussian-mixture: mean entries ~ N(0, mean_scale^2), stds ~ U[std_min, std_max].
    double mean_scale = 1.0;
    double std_min = 0.3;
    double std_max = 1.0;
    // structured-grid: x = a * template + noise_std * n, a ~ U[1 - amp_jitter, 1 + amp_jitter].
    double noise_std = 0.1;
    double amp_jitter = 0.2;

    void validate() const;
    std::size_t numel() const { return channels * height * width; }
    // Canonical "key = value" listing; the hash is computed over this text.
    std::string canonical() const;
    std::string hash() const;
};

template <Scalar T>
struct Batch {
    Tensor<T> x0;  // [b, c, h, w]
    std::vector<int> labels;
};

// Synthetic class-conditional latents. Class parameters are fixed at
// construction; batch(index, ...) depends only on (seed, stream, index).
class SyntheticDataset {
public:
    static constexpr std::uint64_t kTrainStream = 1;
    static constexpr std::uint64_t kEvalStream = 2;

    explicit SyntheticDataset(const DatasetSpec& spec);

    const DatasetSpec& spec() const { return spec_; }

    template <Scalar T>
    Batch<T> batch(std::uint64_t index, std::size_t size, std::uint64_t stream = kTrainStream) const;

    // Draws `size` samples of class k from rng.
    template <Scalar T>
    Tensor<T> sample_class(std::size_t k, std::size_t size, Rng& rng) const;

    // Exact per-class mean and per-element standard deviation, flattened [c*h*w].
    const std::vector<double>& class_mean(std::size_t k) const { return means_.at(k); }
    const std::vector<double>& class_std(std::size_t k) const { return stds_.at(k); }

    // structured-grid only: token-cell material assignment of class k.
    const std::vector<int>& region_map(std::size_t k) const { return regions_.at(k); }

private:
    void draw(std::size_t k, Rng& rng, double* out) const;

    DatasetSpec spec_;
    std::vector<std::vector<double>> means_;
    std::vector<std::vector<double>> stds_;
    std::vector<std::vector<int>> regions_;
};

}  // namespace sara
