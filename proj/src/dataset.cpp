#include "sara/dataset.hpp"

#include <zlib.h>

#include <cmath>
#include <cstdio>
#include <sstream>

#include "sara/errors.hpp"

namespace sara {

namespace {

constexpr std::size_t kMaterials = 4;

// Token-cell region id for the built-in class layouts.
int layout_region(std::size_t k, std::size_t a, std::size_t b, std::size_t gh, std::size_t gw) {
    switch (k % 4) {
        case 0:
            return b < gw / 2 ? 0 : 1;
        case 1:
            return a < gh / 2 ? 0 : 1;
        case 2:
            return ((a / std::max<std::size_t>(gh / 2, 1)) + (b / std::max<std::size_t>(gw / 2, 1))) % 2 == 0 ? 0 : 1;
        default: {
            const bool inner = a >= gh / 4 && a < gh - gh / 4 && b >= gw / 4 && b < gw - gw / 4;
            return inner ? 1 : 0;
        }
    }
}

}  // namespace

std::string to_string(DatasetMode m) {
    return m == DatasetMode::gaussian_mixture ? "gaussian-mixture" : "structured-grid";
}

DatasetMode dataset_mode_from_string(const std::string& s) {
    if (s == "gaussian-mixture") return DatasetMode::gaussian_mixture;
    if (s == "structured-grid") return DatasetMode::structured_grid;
    throw ConfigError("dataset: unknown mode '" + s + "' (expected gaussian-mixture or structured-grid)");
}

void DatasetSpec::validate() const {
    if (channels == 0 || height == 0 || width == 0) throw ConfigError("dataset: latent extents must be positive");
    if (num_classes == 0) throw ConfigError("dataset: num_classes must be positive");
    if (mode == DatasetMode::gaussian_mixture) {
        if (!(std_min > 0) || std_max < std_min) throw ConfigError("dataset: need 0 < std_min <= std_max");
        if (mean_scale < 0) throw ConfigError("dataset: mean_scale must be non-negative");
    } else {
        if (patch_size == 0 || height % patch_size || width % patch_size) {
            throw ConfigError("dataset: height and width must be divisible by patch_size");
        }
        if (noise_std < 0 || amp_jitter < 0 || amp_jitter >= 1) {
            throw ConfigError("dataset: need noise_std >= 0 and 0 <= amp_jitter < 1");
        }
    }
}

std::string DatasetSpec::canonical() const {
    std::ostringstream os;
    os.precision(17);
    os << "mode = " << to_string(mode) << "\nchannels = " << channels << "\nheight = " << height
       << "\nwidth = " << width << "\nnum_classes = " << num_classes << "\nseed = " << seed << '\n';
    if (mode == DatasetMode::gaussian_mixture) {
        os << "mean_scale = " << mean_scale << "\nstd_min = " << std_min << "\nstd_max = " << std_max << '\n';
    } else {
        os << "patch_size = " << patch_size << "\nnoise_std = " << noise_std << "\namp_jitter = " << amp_jitter
           << '\n';
    }
    return os.str();
}

std::string DatasetSpec::hash() const {
    const std::string text = canonical();
    const auto crc = crc32(0L, reinterpret_cast<const Bytef*>(text.data()), static_cast<uInt>(text.size()));
    char buf[9];
    std::snprintf(buf, sizeof buf, "%08lx", static_cast<unsigned long>(crc));
    return buf;
}

SyntheticDataset::SyntheticDataset(const DatasetSpec& spec) : spec_(spec) {
    spec_.validate();
    const std::size_t d = spec_.numel();
    means_.assign(spec_.num_classes, std::vector<double>(d));
    stds_.assign(spec_.num_classes, std::vector<double>(d));
    if (spec_.mode == DatasetMode::gaussian_mixture) {
        for (std::size_t k = 0; k < spec_.num_classes; ++k) {
            Rng rng = Rng::derive(spec_.seed, 0, k);
            for (std::size_t i = 0; i < d; ++i) means_[k][i] = spec_.mean_scale * rng.normal();
            for (std::size_t i = 0; i < d; ++i) stds_[k][i] = rng.uniform(spec_.std_min, spec_.std_max);
        }
        return;
    }

    const std::size_t p = spec_.patch_size;
    const std::size_t gh = spec_.height / p, gw = spec_.width / p;
    const std::size_t feat = spec_.channels * p * p;
    // Shared palette of patch contents laid out like patchify features.
    std::vector<std::vector<double>> palette(kMaterials, std::vector<double>(feat));
    Rng prng = Rng::derive(spec_.seed, 0, 0);
    for (auto& m : palette) {
        for (double& v : m) v = prng.normal();
    }
    regions_.assign(spec_.num_classes, std::vector<int>(gh * gw));
    const double a_var = spec_.amp_jitter * spec_.amp_jitter / 3.0;
    for (std::size_t k = 0; k < spec_.num_classes; ++k) {
        Rng rrng = Rng::derive(spec_.seed, 0, 1 + k);
        for (std::size_t a = 0; a < gh; ++a) {
            for (std::size_t b = 0; b < gw; ++b) {
                int r = k < 4 ? layout_region(k, a, b, gh, gw) : static_cast<int>(rrng.index(2));
                regions_[k][a * gw + b] = static_cast<int>((k + static_cast<std::size_t>(r)) % kMaterials);
            }
        }
        for (std::size_t c = 0; c < spec_.channels; ++c) {
            for (std::size_t i = 0; i < spec_.height; ++i) {
                for (std::size_t j = 0; j < spec_.width; ++j) {
                    const int mat = regions_[k][(i / p) * gw + j / p];
                    const double v = palette[mat][(c * p + i % p) * p + j % p];
                    const std::size_t idx = (c * spec_.height + i) * spec_.width + j;
                    means_[k][idx] = v;
                    stds_[k][idx] = std::sqrt(a_var * v * v + spec_.noise_std * spec_.noise_std);
                }
            }
        }
    }
}

void SyntheticDataset::draw(std::size_t k, Rng& rng, double* out) const {
    const std::size_t d = spec_.numel();
    const auto& mu = means_[k];
    if (spec_.mode == DatasetMode::gaussian_mixture) {
        const auto& sd = stds_[k];
        for (std::size_t i = 0; i < d; ++i) out[i] = mu[i] + sd[i] * rng.normal();
        return;
    }
    const double amp = rng.uniform(1.0 - spec_.amp_jitter, 1.0 + spec_.amp_jitter);
    for (std::size_t i = 0; i < d; ++i) out[i] = amp * mu[i] + spec_.noise_std * rng.normal();
}

template <Scalar T>
Batch<T> SyntheticDataset::batch(std::uint64_t index, std::size_t size, std::uint64_t stream) const {
    if (size == 0) throw ContractError("dataset: batch size must be positive");
    Rng rng = Rng::derive(spec_.seed, stream, index);
    const std::size_t d = spec_.numel();
    Batch<T> out{Tensor<T>({size, spec_.channels, spec_.height, spec_.width}), std::vector<int>(size)};
    std::vector<double> buf(d);
    for (std::size_t s = 0; s < size; ++s) {
        const std::size_t k = rng.index(spec_.num_classes);
        out.labels[s] = static_cast<int>(k);
        draw(k, rng, buf.data());
        T* dst = out.x0.ptr() + s * d;
        for (std::size_t i = 0; i < d; ++i) dst[i] = static_cast<T>(buf[i]);
    }
    return out;
}

template <Scalar T>
Tensor<T> SyntheticDataset::sample_class(std::size_t k, std::size_t size, Rng& rng) const {
    if (k >= spec_.num_classes) throw DomainError("dataset: class " + std::to_string(k) + " out of range");
    const std::size_t d = spec_.numel();
    Tensor<T> out({size, spec_.channels, spec_.height, spec_.width});
    std::vector<double> buf(d);
    for (std::size_t s = 0; s < size; ++s) {
        draw(k, rng, buf.data());
        for (std::size_t i = 0; i < d; ++i) out.ptr()[s * d + i] = static_cast<T>(buf[i]);
    }
    return out;
}

template Batch<float> SyntheticDataset::batch(std::uint64_t, std::size_t, std::uint64_t) const;
template Batch<double> SyntheticDataset::batch(std::uint64_t, std::size_t, std::uint64_t) const;
template Tensor<float> SyntheticDataset::sample_class(std::size_t, std::size_t, Rng&) const;
template Tensor<double> SyntheticDataset::sample_class(std::size_t, std::size_t, Rng&) const;

}  // namespace sara
