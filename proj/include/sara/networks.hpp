#pragma once

#include <cstdint>
#include <vector>

#include "sara/ops.hpp"
#include "sara/rng.hpp"

namespace sara {

inline constexpr std::uint64_t kDefaultEncoderSeed = 0x5A8A01;

struct DenoiserConfig {
    std::size_t layers = 6;
    std::size_t hidden_dim = 128;
    std::size_t heads = 4;
    std::size_t patch_size = 2;
    std::size_t num_classes = 4;
    // 1-indexed block whose output is exposed as the hidden state.
    std::size_t alignment_depth = 2;
    std::size_t channels = 4;
    std::size_t height = 8;
    std::size_t width = 8;
    std::size_t mlp_ratio = 4;
    std::size_t freq_dim = 256;

    void validate() const;
    std::size_t num_tokens() const { return (height / patch_size) * (width / patch_size); }
    std::size_t patch_dim() const { return channels * patch_size * patch_size; }
    std::size_t null_class() const { return num_classes; }
};

struct EncoderConfig {
    std::size_t layers = 4;
    std::size_t dim = 64;
    std::size_t heads = 4;
    std::size_t mlp_ratio = 4;
    std::uint64_t seed = kDefaultEncoderSeed;

    void validate() const;
};

struct ProjectionConfig {
    std::size_t hidden = 256;
};

struct DiscriminatorConfig {
    std::size_t channels = 32;
};

// Closed-form parameter counts derived from the configs.
std::size_t denoiser_param_count(const DenoiserConfig& cfg);
std::size_t encoder_param_count(const DenoiserConfig& grid, const EncoderConfig& cfg);
std::size_t projection_param_count(std::size_t in_dim, std::size_t out_dim, const ProjectionConfig& cfg);
std::size_t discriminator_param_count(std::size_t in_dim, const DiscriminatorConfig& cfg);

// Fixed 2-D sine-cosine position table [grid_h*grid_w, dim].
template <Scalar T>
Tensor<T> sincos_position_table(std::size_t grid_h, std::size_t grid_w, std::size_t dim);

// Sinusoidal timestep features [t.size(), dim]; t in [0,1] is scaled by 1000.
template <Scalar T>
Tensor<T> timestep_features(const std::vector<double>& t, std::size_t dim);

// Transformer denoiser with adaLN-zero conditioning on (t, class).
template <Scalar T>
class DenoiserNet {
public:
    struct Output {
        Var<T> velocity;  // same shape as the input latent
        Var<T> hidden;    // [b, N, hidden_dim] after block alignment_depth
    };

    DenoiserNet(const DenoiserConfig& cfg, Rng& init_rng);
    DenoiserNet(DenoiserNet&&) noexcept = default;
    DenoiserNet& operator=(DenoiserNet&&) noexcept = default;

    // Labels must lie in [0, num_classes]; num_classes is the null class.
    Output forward(Tape<T>& tape, const Tensor<T>& x_t, const std::vector<double>& t, const std::vector<int>& y,
                   bool trainable) const;

    const DenoiserConfig& config() const { return cfg_; }
    ParameterSet<T>& params() { return params_; }
    const ParameterSet<T>& params() const { return params_; }

private:
    struct Block {
        Parameter<T>*ada_w, *ada_b, *qkv_w, *qkv_b, *proj_w, *proj_b, *fc1_w, *fc1_b, *fc2_w, *fc2_b;
    };

    DenoiserConfig cfg_;
    ParameterSet<T> params_;
    Tensor<T> pos_;
    Parameter<T>*pe_w_, *pe_b_, *t1_w_, *t1_b_, *t2_w_, *t2_b_, *y_table_;
    std::vector<Block> blocks_;
    Parameter<T>*fin_ada_w_, *fin_ada_b_, *fin_w_, *fin_b_;
};

// Random-weight transformer over the same token grid. Its weights are drawn
// once from EncoderConfig::seed and never receive gradients.
template <Scalar T>
class FrozenEncoder {
public:
    FrozenEncoder(const DenoiserConfig& grid, const EncoderConfig& cfg);
    FrozenEncoder(FrozenEncoder&&) noexcept = default;
    FrozenEncoder& operator=(FrozenEncoder&&) noexcept = default;

    // Features [b, N, dim]; recorded on the tape as a constant.
    Var<T> encode(Tape<T>& tape, const Tensor<T>& x0) const;
    Tensor<T> encode(const Tensor<T>& x0) const;

    std::size_t dim() const { return cfg_.dim; }
    const EncoderConfig& config() const { return cfg_; }
    ParameterSet<T>& params() { return params_; }
    const ParameterSet<T>& params() const { return params_; }

private:
    struct Block {
        Parameter<T>*qkv_w, *qkv_b, *proj_w, *proj_b, *fc1_w, *fc1_b, *fc2_w, *fc2_b;
    };

    DenoiserConfig grid_;
    EncoderConfig cfg_;
    ParameterSet<T> params_;
    Tensor<T> pos_;
    Parameter<T>*pe_w_, *pe_b_;
    std::vector<Block> blocks_;
};

// Three affine layers with SiLU between them.
template <Scalar T>
class ProjectionMLP {
public:
    ProjectionMLP(std::size_t in_dim, std::size_t out_dim, const ProjectionConfig& cfg, Rng& init_rng);
    ProjectionMLP(ProjectionMLP&&) noexcept = default;
    ProjectionMLP& operator=(ProjectionMLP&&) noexcept = default;

    Var<T> forward(Var<T> z, bool trainable) const;

    std::size_t in_dim() const { return in_; }
    std::size_t out_dim() const { return out_; }
    ParameterSet<T>& params() { return params_; }
    const ParameterSet<T>& params() const { return params_; }

private:
    std::size_t in_, out_;
    ParameterSet<T> params_;
    Parameter<T>*w1_, *b1_, *w2_, *b2_, *w3_, *b3_;
};

// Token grid -> 1x1 conv adapter -> two 3x3 stride-2 conv blocks with SiLU
// -> global average pool -> affine head. Emits raw logits [b, 1].
template <Scalar T>
class Discriminator {
public:
    Discriminator(std::size_t in_dim, const DiscriminatorConfig& cfg, Rng& init_rng);
    Discriminator(Discriminator&&) noexcept = default;
    Discriminator& operator=(Discriminator&&) noexcept = default;

    Var<T> forward(Var<T> h, bool trainable) const;

    std::size_t in_dim() const { return in_; }
    ParameterSet<T>& params() { return params_; }
    const ParameterSet<T>& params() const { return params_; }

private:
    std::size_t in_;
    ParameterSet<T> params_;
    Parameter<T>*adapt_w_, *adapt_b_, *c1_w_, *c1_b_, *c2_w_, *c2_b_, *head_w_, *head_b_;
};

}  // namespace sara
