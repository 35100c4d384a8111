#include "sara/networks.hpp"

#include <cmath>
#include <string>

namespace sara {

// ---------------------------------------------------------------------------
// Configs and closed-form counts
// ---------------------------------------------------------------------------

void DenoiserConfig::validate() const {
    if (layers == 0 || hidden_dim == 0 || heads == 0 || patch_size == 0) {
        throw ConfigError("denoiser: layers, hidden_dim, heads and patch_size must be positive");
    }
    if (hidden_dim % heads != 0) throw ConfigError("denoiser: hidden_dim must be divisible by heads");
    if (alignment_depth < 1 || alignment_depth > layers) {
        throw ConfigError("denoiser: alignment_depth must lie in [1, layers]");
    }
    if (height % patch_size != 0 || width % patch_size != 0) {
        throw ConfigError("denoiser: latent height and width must be divisible by patch_size");
    }
    if (channels == 0 || num_classes == 0 || mlp_ratio == 0) {
        throw ConfigError("denoiser: channels, num_classes and mlp_ratio must be positive");
    }
    if (freq_dim == 0 || freq_dim % 2 != 0) throw ConfigError("denoiser: freq_dim must be even");
}

void EncoderConfig::validate() const {
    if (layers == 0 || dim == 0 || heads == 0 || dim % heads != 0 || mlp_ratio == 0) {
        throw ConfigError("encoder: invalid layers/dim/heads");
    }
    if (dim % 4 != 0) throw ConfigError("encoder: dim must be divisible by 4 for the position table");
}

std::size_t denoiser_param_count(const DenoiserConfig& c) {
    const std::size_t d = c.hidden_dim, p = c.patch_dim(), f = c.freq_dim, m = c.mlp_ratio * d;
    const std::size_t embed = p * d + d + f * d + d + d * d + d + (c.num_classes + 1) * d;
    const std::size_t block = d * 6 * d + 6 * d + d * 3 * d + 3 * d + d * d + d + d * m + m + m * d + d;
    const std::size_t final_layer = d * 2 * d + 2 * d + d * p + p;
    return embed + c.layers * block + final_layer;
}

std::size_t encoder_param_count(const DenoiserConfig& grid, const EncoderConfig& c) {
    const std::size_t e = c.dim, p = grid.patch_dim(), m = c.mlp_ratio * e;
    const std::size_t block = e * 3 * e + 3 * e + e * e + e + e * m + m + m * e + e;
    return p * e + e + c.layers * block;
}

std::size_t projection_param_count(std::size_t in_dim, std::size_t out_dim, const ProjectionConfig& c) {
    const std::size_t h = c.hidden;
    return in_dim * h + h + h * h + h + h * out_dim + out_dim;
}

std::size_t discriminator_param_count(std::size_t in_dim, const DiscriminatorConfig& c) {
    const std::size_t k = c.channels;
    return in_dim * k + k + 2 * (k * k * 9 + k) + k + 1;
}

// ---------------------------------------------------------------------------
// Fixed embeddings
// ---------------------------------------------------------------------------

namespace {

void sincos_1d(std::size_t dim, double pos, double* out) {
    const std::size_t half = dim / 2;
    for (std::size_t i = 0; i < half; ++i) {
        const double omega = 1.0 / std::pow(10000.0, static_cast<double>(i) / static_cast<double>(half));
        out[i] = std::sin(pos * omega);
        out[half + i] = std::cos(pos * omega);
    }
}

}  // namespace

template <Scalar T>
Tensor<T> sincos_position_table(std::size_t grid_h, std::size_t grid_w, std::size_t dim) {
    if (dim % 4 != 0) throw DimensionError("sincos_position_table: dim must be divisible by 4");
    Tensor<T> out(Shape{grid_h * grid_w, dim});
    std::vector<double> row(dim);
    for (std::size_t i = 0; i < grid_h; ++i)
        for (std::size_t j = 0; j < grid_w; ++j) {
            sincos_1d(dim / 2, static_cast<double>(i), row.data());
            sincos_1d(dim / 2, static_cast<double>(j), row.data() + dim / 2);
            for (std::size_t k = 0; k < dim; ++k) out[(i * grid_w + j) * dim + k] = static_cast<T>(row[k]);
        }
    return out;
}

template <Scalar T>
Tensor<T> timestep_features(const std::vector<double>& t, std::size_t dim) {
    const std::size_t half = dim / 2;
    Tensor<T> out(Shape{t.size(), dim});
    for (std::size_t b = 0; b < t.size(); ++b) {
        const double ts = 1000.0 * t[b];
        for (std::size_t i = 0; i < half; ++i) {
            const double freq = std::exp(-std::log(10000.0) * static_cast<double>(i) / static_cast<double>(half));
            out[b * dim + i] = static_cast<T>(std::cos(ts * freq));
            out[b * dim + half + i] = static_cast<T>(std::sin(ts * freq));
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Initializers
// ---------------------------------------------------------------------------

namespace {

template <Scalar T>
Tensor<T> xavier(Rng& rng, std::size_t fan_in, std::size_t fan_out, Shape shape) {
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    Tensor<T> t(std::move(shape));
    for (T& v : t.data()) v = static_cast<T>(rng.uniform(-limit, limit));
    return t;
}

// U(-1/sqrt(fan_in), 1/sqrt(fan_in)), the usual default for affine and conv layers.
template <Scalar T>
Tensor<T> fan_in_uniform(Rng& rng, std::size_t fan_in, Shape shape) {
    const double limit = 1.0 / std::sqrt(static_cast<double>(fan_in));
    Tensor<T> t(std::move(shape));
    for (T& v : t.data()) v = static_cast<T>(rng.uniform(-limit, limit));
    return t;
}

template <Scalar T>
Tensor<T> normal_init(Rng& rng, double stddev, Shape shape) {
    Tensor<T> t(std::move(shape));
    for (T& v : t.data()) v = static_cast<T>(stddev * rng.normal());
    return t;
}

template <Scalar T>
Tensor<T> zeros(Shape shape) {
    return Tensor<T>(std::move(shape));
}

}  // namespace

// ---------------------------------------------------------------------------
// Denoiser
// ---------------------------------------------------------------------------

template <Scalar T>
DenoiserNet<T>::DenoiserNet(const DenoiserConfig& cfg, Rng& rng) : cfg_(cfg) {
    cfg_.validate();
    const std::size_t d = cfg_.hidden_dim, p = cfg_.patch_dim(), f = cfg_.freq_dim, m = cfg_.mlp_ratio * d;
    pos_ = sincos_position_table<T>(cfg_.height / cfg_.patch_size, cfg_.width / cfg_.patch_size, d);
    pe_w_ = params_.add("den.patch_embed.w", xavier<T>(rng, p, d, {p, d}));
    pe_b_ = params_.add("den.patch_embed.b", zeros<T>({d}));
    t1_w_ = params_.add("den.t_embed.fc1.w", normal_init<T>(rng, 0.02, {f, d}));
    t1_b_ = params_.add("den.t_embed.fc1.b", zeros<T>({d}));
    t2_w_ = params_.add("den.t_embed.fc2.w", normal_init<T>(rng, 0.02, {d, d}));
    t2_b_ = params_.add("den.t_embed.fc2.b", zeros<T>({d}));
    y_table_ = params_.add("den.y_embed", normal_init<T>(rng, 0.02, {cfg_.num_classes + 1, d}));
    for (std::size_t l = 0; l < cfg_.layers; ++l) {
        const std::string pre = "den.blocks." + std::to_string(l) + ".";
        Block b{};
        b.ada_w = params_.add(pre + "adaln.w", zeros<T>({d, 6 * d}));
        b.ada_b = params_.add(pre + "adaln.b", zeros<T>({6 * d}));
        b.qkv_w = params_.add(pre + "attn.qkv.w", xavier<T>(rng, d, 3 * d, {d, 3 * d}));
        b.qkv_b = params_.add(pre + "attn.qkv.b", zeros<T>({3 * d}));
        b.proj_w = params_.add(pre + "attn.proj.w", xavier<T>(rng, d, d, {d, d}));
        b.proj_b = params_.add(pre + "attn.proj.b", zeros<T>({d}));
        b.fc1_w = params_.add(pre + "mlp.fc1.w", xavier<T>(rng, d, m, {d, m}));
        b.fc1_b = params_.add(pre + "mlp.fc1.b", zeros<T>({m}));
        b.fc2_w = params_.add(pre + "mlp.fc2.w", xavier<T>(rng, m, d, {m, d}));
        b.fc2_b = params_.add(pre + "mlp.fc2.b", zeros<T>({d}));
        blocks_.push_back(b);
    }
    fin_ada_w_ = params_.add("den.final.adaln.w", zeros<T>({d, 2 * d}));
    fin_ada_b_ = params_.add("den.final.adaln.b", zeros<T>({2 * d}));
    fin_w_ = params_.add("den.final.linear.w", zeros<T>({d, p}));
    fin_b_ = params_.add("den.final.linear.b", zeros<T>({p}));
}

template <Scalar T>
typename DenoiserNet<T>::Output DenoiserNet<T>::forward(Tape<T>& tape, const Tensor<T>& x_t,
                                                       const std::vector<double>& t, const std::vector<int>& y,
                                                       bool trainable) const {
    const Shape expect{x_t.rank() == 4 ? x_t.dim(0) : 0, cfg_.channels, cfg_.height, cfg_.width};
    if (x_t.shape() != expect) {
        throw DimensionError("denoiser: input " + shape_str(x_t.shape()) + " does not match configured latent");
    }
    const std::size_t batch = x_t.dim(0);
    if (t.size() != batch || y.size() != batch) throw DimensionError("denoiser: need one t and one label per sample");
    for (int label : y) {
        if (label < 0 || static_cast<std::size_t>(label) > cfg_.num_classes) {
            throw DomainError("denoiser: label " + std::to_string(label) + " outside [0, " +
                              std::to_string(cfg_.num_classes) + "]");
        }
    }
    const std::size_t d = cfg_.hidden_dim;
    auto P = [&](const Parameter<T>* p) { return tape.bind(*p, trainable); };

    Var<T> tok = linear(patchify(tape.constant_ref(x_t), cfg_.patch_size), P(pe_w_), P(pe_b_));
    tok = add(tok, tape.constant_ref(pos_));

    Var<T> temb = tape.constant(timestep_features<T>(t, cfg_.freq_dim));
    temb = linear(silu(linear(temb, P(t1_w_), P(t1_b_))), P(t2_w_), P(t2_b_));
    Var<T> cond = silu(add(temb, gather_rows(P(y_table_), y)));

    Output out;
    for (std::size_t l = 0; l < blocks_.size(); ++l) {
        const Block& b = blocks_[l];
        Var<T> mod = linear(cond, P(b.ada_w), P(b.ada_b));
        auto chunk = [&](std::size_t k) { return slice_last(mod, k * d, d); };

        Var<T> h = modulate(layernorm(tok), chunk(0), chunk(1));
        h = linear(attention(linear(h, P(b.qkv_w), P(b.qkv_b)), cfg_.heads), P(b.proj_w), P(b.proj_b));
        tok = add(tok, gate(h, chunk(2)));

        h = modulate(layernorm(tok), chunk(3), chunk(4));
        h = linear(gelu(linear(h, P(b.fc1_w), P(b.fc1_b))), P(b.fc2_w), P(b.fc2_b));
        tok = add(tok, gate(h, chunk(5)));

        if (l + 1 == cfg_.alignment_depth) out.hidden = tok;
    }
    Var<T> mod = linear(cond, P(fin_ada_w_), P(fin_ada_b_));
    Var<T> h = modulate(layernorm(tok), slice_last(mod, 0, d), slice_last(mod, d, d));
    h = linear(h, P(fin_w_), P(fin_b_));
    out.velocity = unpatchify(h, cfg_.patch_size, cfg_.channels, cfg_.height, cfg_.width);
    return out;
}

// ---------------------------------------------------------------------------
// Frozen encoder
// ---------------------------------------------------------------------------

template <Scalar T>
FrozenEncoder<T>::FrozenEncoder(const DenoiserConfig& grid, const EncoderConfig& cfg) : grid_(grid), cfg_(cfg) {
    grid_.validate();
    cfg_.validate();
    Rng rng(cfg_.seed);
    const std::size_t e = cfg_.dim, p = grid_.patch_dim(), m = cfg_.mlp_ratio * e;
    pos_ = sincos_position_table<T>(grid_.height / grid_.patch_size, grid_.width / grid_.patch_size, e);
    pe_w_ = params_.add("enc.patch_embed.w", xavier<T>(rng, p, e, {p, e}));
    pe_b_ = params_.add("enc.patch_embed.b", zeros<T>({e}));
    for (std::size_t l = 0; l < cfg_.layers; ++l) {
        const std::string pre = "enc.blocks." + std::to_string(l) + ".";
        Block b{};
        b.qkv_w = params_.add(pre + "attn.qkv.w", xavier<T>(rng, e, 3 * e, {e, 3 * e}));
        b.qkv_b = params_.add(pre + "attn.qkv.b", zeros<T>({3 * e}));
        b.proj_w = params_.add(pre + "attn.proj.w", xavier<T>(rng, e, e, {e, e}));
        b.proj_b = params_.add(pre + "attn.proj.b", zeros<T>({e}));
        b.fc1_w = params_.add(pre + "mlp.fc1.w", xavier<T>(rng, e, m, {e, m}));
        b.fc1_b = params_.add(pre + "mlp.fc1.b", zeros<T>({m}));
        b.fc2_w = params_.add(pre + "mlp.fc2.w", xavier<T>(rng, m, e, {m, e}));
        b.fc2_b = params_.add(pre + "mlp.fc2.b", zeros<T>({e}));
        blocks_.push_back(b);
    }
}

template <Scalar T>
Var<T> FrozenEncoder<T>::encode(Tape<T>& tape, const Tensor<T>& x0) const {
    Tensor<T> z = encode(x0);
    return tape.constant(std::move(z));
}

template <Scalar T>
Tensor<T> FrozenEncoder<T>::encode(const Tensor<T>& x0) const {
    const Shape expect{x0.rank() == 4 ? x0.dim(0) : 0, grid_.channels, grid_.height, grid_.width};
    if (x0.shape() != expect) throw DimensionError("encoder: input " + shape_str(x0.shape()) + " does not match grid");
    Tape<T> tape;
    auto P = [&](const Parameter<T>* p) { return tape.frozen(*p); };
    Var<T> tok = linear(patchify(tape.constant_ref(x0), grid_.patch_size), P(pe_w_), P(pe_b_));
    tok = add(tok, tape.constant_ref(pos_));
    for (const Block& b : blocks_) {
        Var<T> h = linear(attention(linear(layernorm(tok), P(b.qkv_w), P(b.qkv_b)), cfg_.heads), P(b.proj_w), P(b.proj_b));
        tok = add(tok, h);
        h = linear(gelu(linear(layernorm(tok), P(b.fc1_w), P(b.fc1_b))), P(b.fc2_w), P(b.fc2_b));
        tok = add(tok, h);
    }
    return layernorm(tok).value();
}

// ---------------------------------------------------------------------------
// Projection MLP
// ---------------------------------------------------------------------------

template <Scalar T>
ProjectionMLP<T>::ProjectionMLP(std::size_t in_dim, std::size_t out_dim, const ProjectionConfig& cfg, Rng& rng)
    : in_(in_dim), out_(out_dim) {
    const std::size_t h = cfg.hidden;
    if (in_dim == 0 || out_dim == 0 || h == 0) throw ConfigError("projection: dimensions must be positive");
    w1_ = params_.add("proj.fc1.w", fan_in_uniform<T>(rng, in_dim, {in_dim, h}));
    b1_ = params_.add("proj.fc1.b", fan_in_uniform<T>(rng, in_dim, {h}));
    w2_ = params_.add("proj.fc2.w", fan_in_uniform<T>(rng, h, {h, h}));
    b2_ = params_.add("proj.fc2.b", fan_in_uniform<T>(rng, h, {h}));
    w3_ = params_.add("proj.fc3.w", fan_in_uniform<T>(rng, h, {h, out_dim}));
    b3_ = params_.add("proj.fc3.b", fan_in_uniform<T>(rng, h, {out_dim}));
}

template <Scalar T>
Var<T> ProjectionMLP<T>::forward(Var<T> z, bool trainable) const {
    if (z.value().rank() == 0 || z.dim(-1) != in_) {
        throw DimensionError("projection: input " + shape_str(z.shape()) + " last extent must be " + std::to_string(in_));
    }
    Tape<T>& tape = z.tape();
    auto P = [&](const Parameter<T>* p) { return tape.bind(*p, trainable); };
    Var<T> h = silu(linear(z, P(w1_), P(b1_)));
    h = silu(linear(h, P(w2_), P(b2_)));
    return linear(h, P(w3_), P(b3_));
}

// ---------------------------------------------------------------------------
// Discriminator
// ---------------------------------------------------------------------------

template <Scalar T>
Discriminator<T>::Discriminator(std::size_t in_dim, const DiscriminatorConfig& cfg, Rng& rng) : in_(in_dim) {
    const std::size_t k = cfg.channels;
    if (in_dim == 0 || k == 0) throw ConfigError("discriminator: dimensions must be positive");
    adapt_w_ = params_.add("disc.adapter.w", fan_in_uniform<T>(rng, in_dim, {k, in_dim, 1, 1}));
    adapt_b_ = params_.add("disc.adapter.b", fan_in_uniform<T>(rng, in_dim, {k}));
    c1_w_ = params_.add("disc.conv1.w", fan_in_uniform<T>(rng, k * 9, {k, k, 3, 3}));
    c1_b_ = params_.add("disc.conv1.b", fan_in_uniform<T>(rng, k * 9, {k}));
    c2_w_ = params_.add("disc.conv2.w", fan_in_uniform<T>(rng, k * 9, {k, k, 3, 3}));
    c2_b_ = params_.add("disc.conv2.b", fan_in_uniform<T>(rng, k * 9, {k}));
    head_w_ = params_.add("disc.head.w", fan_in_uniform<T>(rng, k, {k, 1}));
    head_b_ = params_.add("disc.head.b", fan_in_uniform<T>(rng, k, {1}));
}

template <Scalar T>
Var<T> Discriminator<T>::forward(Var<T> h, bool trainable) const {
    if (h.value().rank() != 3 || h.dim(2) != in_) {
        throw DimensionError("discriminator: input " + shape_str(h.shape()) + " must be [b, N, " + std::to_string(in_) + "]");
    }
    Tape<T>& tape = h.tape();
    auto P = [&](const Parameter<T>* p) { return tape.bind(*p, trainable); };
    Var<T> bias;
    Var<T> x = tokens_to_grid(h);
    bias = P(adapt_b_);
    x = conv2d(x, P(adapt_w_), &bias, 1, 0);
    bias = P(c1_b_);
    x = silu(conv2d(x, P(c1_w_), &bias, 2, 1));
    bias = P(c2_b_);
    x = silu(conv2d(x, P(c2_w_), &bias, 2, 1));
    return linear(global_avg_pool(x), P(head_w_), P(head_b_));
}

template class DenoiserNet<float>;
template class DenoiserNet<double>;
template class FrozenEncoder<float>;
template class FrozenEncoder<double>;
template class ProjectionMLP<float>;
template class ProjectionMLP<double>;
template class Discriminator<float>;
template class Discriminator<double>;
template Tensor<float> sincos_position_table<float>(std::size_t, std::size_t, std::size_t);
template Tensor<double> sincos_position_table<double>(std::size_t, std::size_t, std::size_t);
template Tensor<float> timestep_features<float>(const std::vector<double>&, std::size_t);
template Tensor<double> timestep_features<double>(const std::vector<double>&, std::size_t);

}  // namespace sara
