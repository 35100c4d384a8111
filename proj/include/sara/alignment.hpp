#pragma once

#include "sara/networks.hpp"
#include "sara/ops.hpp"

// Multi-level representation alignment: patch-wise cosine alignment,
// autocorrelation (structural) alignment, adversarial distribution
// alignment, and the weighted joint objective.
namespace sara::alignment {

inline constexpr double kCosineEps = 1e-8;

struct AlignmentConfig {
    double lambda = 0.5;  // patch
    double beta = 0.5;    // structural
    double gamma = 0.05;  // adversarial
    bool patch = true;
    bool structural = true;
    bool adversarial = true;
    double cosine_eps = kCosineEps;

    // Throws ConfigError on negative weights.
    void validate() const;

    // A term participates only when switched on with a positive weight.
    bool patch_active() const { return patch && lambda > 0; }
    bool structural_active() const { return structural && beta > 0; }
    bool adversarial_active() const { return adversarial && gamma > 0; }
    bool any_active() const { return patch_active() || structural_active() || adversarial_active(); }

    // Named presets mirroring the loss-term ablation: "none", "patch",
    // "patch+struc", "patch+adv", "full".
    static AlignmentConfig ablation(const std::string& name);
};

struct LossBreakdown {
    double velocity = 0;
    double patch = 0;
    double structural = 0;
    double adversarial = 0;
    double total = 0;
    double disc = 0;  // reported only, never part of total
};

// -mean over batch and patches of cos(z_enc[n], h_den[n]). z_enc carries no gradient.
template <Scalar T>
Var<T> patch_alignment_loss(Var<T> z_enc, Var<T> h_den, T eps = T(kCosineEps));

// Per-sample cosine self-similarity [b, N, N].
template <Scalar T>
Var<T> autocorrelation(Var<T> h, T eps = T(kCosineEps));

// Batch mean of ||A(z_enc) - A(h_den)||_F^2, not normalized by N^2.
template <Scalar T>
Var<T> structural_loss(Var<T> z_enc, Var<T> h_den, T eps = T(kCosineEps));

// softplus(-D(z_enc)) + softplus(D(h_den)), batch-meaned. h_den is detached,
// so only the discriminator parameters receive gradients.
template <Scalar T>
Var<T> discriminator_loss(const Discriminator<T>& d, Var<T> z_enc, Var<T> h_den);

// Same loss from precomputed logits.
template <Scalar T>
Var<T> discriminator_loss_from_logits(Var<T> real_logits, Var<T> fake_logits);

// Non-saturating generator loss mean softplus(-D(h_den)); the discriminator
// is read as constants.
template <Scalar T>
Var<T> adversarial_loss(const Discriminator<T>& d, Var<T> h_den);

// Terms computed on one minibatch; unset Vars mean "not computed".
template <Scalar T>
struct LossTerms {
    Var<T> velocity;
    Var<T> patch;
    Var<T> structural;
    Var<T> adversarial;
};

template <Scalar T>
struct Objective {
    Var<T> total;
    LossBreakdown breakdown;
};

// total = velocity + lambda*patch + beta*structural + gamma*adversarial.
// Inactive terms contribute nothing and are reported as 0.
template <Scalar T>
Objective<T> total_loss(const AlignmentConfig& cfg, const LossTerms<T>& terms);

// Scalar form of the same weighting.
LossBreakdown combine(const AlignmentConfig& cfg, double velocity, double patch, double structural,
                      double adversarial);

}  // namespace sara::alignment
