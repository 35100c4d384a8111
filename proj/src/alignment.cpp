#include "sara/alignment.hpp"

#include <string>

namespace sara::alignment {

void AlignmentConfig::validate() const {
    if (lambda < 0 || beta < 0 || gamma < 0) {
        throw ConfigError("alignment: weights must be non-negative (lambda=" + std::to_string(lambda) +
                          ", beta=" + std::to_string(beta) + ", gamma=" + std::to_string(gamma) + ")");
    }
    if (!(cosine_eps > 0)) throw ConfigError("alignment: cosine_eps must be positive");
}

AlignmentConfig AlignmentConfig::ablation(const std::string& name) {
    AlignmentConfig c;
    if (name == "none") {
        c.patch = c.structural = c.adversarial = false;
    } else if (name == "patch") {
        c.structural = c.adversarial = false;
    } else if (name == "patch+struc") {
        c.adversarial = false;
    } else if (name == "patch+adv") {
        c.structural = false;
    } else if (name != "full") {
        throw ConfigError("unknown ablation '" + name + "' (expected none, patch, patch+struc, patch+adv, full)");
    }
    return c;
}

template <Scalar T>
Var<T> patch_alignment_loss(Var<T> z_enc, Var<T> h_den, T eps) {
    if (z_enc.shape() != h_den.shape() || z_enc.value().rank() != 3) {
        throw DimensionError("patch_alignment_loss: expected equal [b,N,D] shapes, got " + shape_str(z_enc.shape()) +
                             " and " + shape_str(h_den.shape()));
    }
    Var<T> zn = normalize_rows(detach(z_enc), eps);
    Var<T> hn = normalize_rows(h_den, eps);
    return neg(mean(sum(mul(zn, hn), -1)));
}

template <Scalar T>
Var<T> autocorrelation(Var<T> h, T eps) {
    if (h.value().rank() != 3 || h.dim(1) == 0) {
        throw DimensionError("autocorrelation: expected [b,N,D] with N >= 1, got " + shape_str(h.shape()));
    }
    Var<T> hn = normalize_rows(h, eps);
    return batched_matmul(hn, hn, true);
}

template <Scalar T>
Var<T> structural_loss(Var<T> z_enc, Var<T> h_den, T eps) {
    if (z_enc.value().rank() != 3 || h_den.value().rank() != 3 || z_enc.dim(0) != h_den.dim(0) ||
        z_enc.dim(1) != h_den.dim(1)) {
        throw DimensionError("structural_loss: batch and patch counts must match, got " + shape_str(z_enc.shape()) +
                             " and " + shape_str(h_den.shape()));
    }
    const std::size_t batch = z_enc.dim(0);
    Var<T> diff = sub(autocorrelation(detach(z_enc), eps), autocorrelation(h_den, eps));
    return scale(sum(square(diff)), T(1) / static_cast<T>(batch));
}

template <Scalar T>
Var<T> discriminator_loss_from_logits(Var<T> real_logits, Var<T> fake_logits) {
    return add(mean(softplus(neg(real_logits))), mean(softplus(fake_logits)));
}

template <Scalar T>
Var<T> discriminator_loss(const Discriminator<T>& d, Var<T> z_enc, Var<T> h_den) {
    Var<T> real = d.forward(detach(z_enc), true);
    Var<T> fake = d.forward(detach(h_den), true);
    return discriminator_loss_from_logits(real, fake);
}

template <Scalar T>
Var<T> adversarial_loss(const Discriminator<T>& d, Var<T> h_den) {
    return mean(softplus(neg(d.forward(h_den, false))));
}

template <Scalar T>
Objective<T> total_loss(const AlignmentConfig& cfg, const LossTerms<T>& terms) {
    cfg.validate();
    if (!terms.velocity.valid()) throw ContractError("total_loss: velocity term is required");
    Objective<T> out;
    out.total = terms.velocity;
    out.breakdown.velocity = static_cast<double>(terms.velocity.value().item());
    auto fold = [&](bool active, const Var<T>& term, double weight, double& slot, const char* name) {
        if (!active) return;
        if (!term.valid()) throw ContractError(std::string("total_loss: active term '") + name + "' was not computed");
        slot = static_cast<double>(term.value().item());
        out.total = add(out.total, scale(term, static_cast<T>(weight)));
    };
    fold(cfg.patch_active(), terms.patch, cfg.lambda, out.breakdown.patch, "patch");
    fold(cfg.structural_active(), terms.structural, cfg.beta, out.breakdown.structural, "structural");
    fold(cfg.adversarial_active(), terms.adversarial, cfg.gamma, out.breakdown.adversarial, "adversarial");
    out.breakdown.total = static_cast<double>(out.total.value().item());
    return out;
}

LossBreakdown combine(const AlignmentConfig& cfg, double velocity, double patch, double structural,
                      double adversarial) {
    cfg.validate();
    LossBreakdown b;
    b.velocity = velocity;
    b.total = velocity;
    if (cfg.patch_active()) {
        b.patch = patch;
        b.total += cfg.lambda * patch;
    }
    if (cfg.structural_active()) {
        b.structural = structural;
        b.total += cfg.beta * structural;
    }
    if (cfg.adversarial_active()) {
        b.adversarial = adversarial;
        b.total += cfg.gamma * adversarial;
    }
    return b;
}

#define SARA_ALIGN_INST(T)                                                             \
    template Var<T> patch_alignment_loss(Var<T>, Var<T>, T);                           \
    template Var<T> autocorrelation(Var<T>, T);                                        \
    template Var<T> structural_loss(Var<T>, Var<T>, T);                                \
    template Var<T> discriminator_loss(const Discriminator<T>&, Var<T>, Var<T>);       \
    template Var<T> discriminator_loss_from_logits(Var<T>, Var<T>);                    \
    template Var<T> adversarial_loss(const Discriminator<T>&, Var<T>);                 \
    template Objective<T> total_loss(const AlignmentConfig&, const LossTerms<T>&);

SARA_ALIGN_INST(float)
SARA_ALIGN_INST(double)

}  // namespace sara::alignment
