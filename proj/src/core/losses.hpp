#pragma once

#include <span>
#include <vector>

#include "autodiff.hpp"
#include "model.hpp"

namespace rlab::losses {

enum class ReconstructionKind { Mse, Bernoulli };

const char* reconstruction_kind_name(ReconstructionKind kind);

/// Per-sample reconstruction loss, shape [batch x 1]. Mse is the summed
/// squared error; Bernoulli is the summed negative log likelihood of the
/// targets under predicted probabilities (clipped to [1e-12, 1 - 1e-12]).
ad::Var reconstruction_per_sample(ad::Var prediction, ad::Var target, ReconstructionKind kind);
/// Batch mean of reconstruction_per_sample.
ad::Var reconstruction_loss(ad::Var prediction, ad::Var target, ReconstructionKind kind);

/// Closed-form KL(q || N(0, I)), averaged over the batch.
ad::Var kl_standard_normal(const model::LatentVars& latent);

/// Closed-form KL between each row's posterior and the prior mode of that
/// row's class, averaged over the batch.
ad::Var kl_class_modes(const model::LatentVars& latent, ad::Var prior_means,
                       ad::Var prior_logvars, std::span<const int> classes);

/// Log density of every row of z under every diagonal Gaussian
/// (means[k], exp(logvars[k])); result is [rows(z) x rows(means)].
ad::Var diag_gaussian_log_density(ad::Var z, ad::Var means, ad::Var logvars);

/// Log density of z under the posterior that generated it from standard
/// noise: z = mu + exp(logvar/2) * noise. Shape [batch x 1].
ad::Var posterior_log_density(ad::Var logvar, const ad::Tensor& noise);

/// log p(z) under the uniform mixture over `classes` of the prior modes,
/// shape [batch x 1].
ad::Var mixture_log_density(ad::Var z, ad::Var prior_means, ad::Var prior_logvars,
                            std::span<const int> classes);

/// Monte Carlo estimate of KL(q(z|x) || p(z)) with p the uniform mixture of
/// the prior modes of `seen_classes`, averaged over batch and samples.
ad::Var kl_mc_gmm(const model::LatentVars& latent, ad::Var prior_means, ad::Var prior_logvars,
                  std::span<const int> seen_classes, std::size_t n_samples, model::Rng& rng);

/// Same estimate for a prior held as plain tensors. Also reports the
/// standard error of the per-draw values.
struct MonteCarloEstimate {
    double mean = 0.0;
    double standard_error = 0.0;
};
MonteCarloEstimate kl_mc_gmm_estimate(const ad::Tensor& mu, const ad::Tensor& logvar,
                                      const model::GaussianMixturePrior& prior,
                                      std::size_t n_samples, model::Rng& rng);

/// Cross entropy restricted to the columns in `active_classes`.
ad::Var classification_loss(ad::Var logits, std::span<const int> labels,
                            std::span<const int> active_classes);

/// T^2-scaled cross entropy between teacher soft targets and the student's
/// temperature softmax. Teacher rows must sum to one within 1e-6.
ad::Var distillation_loss(ad::Var student_logits, const ad::Tensor& teacher_probs,
                          double temperature);

// --- Synaptic Intelligence -------------------------------------------------

/// Running path integral (omega), anchor values (theta tilde) and
/// consolidated importance (Omega) over a flattened parameter vector.
struct SIState {
    std::vector<double> omega;
    std::vector<double> anchor;
    std::vector<double> importance;
    double damping = 0.1;
    double strength = 1.0;
};

SIState si_init(std::span<const double> params, double damping, double strength);
/// omega_k += -g_k * delta_k. Call once per optimizer step with the
/// gradient used by that step and the realised parameter change.
void si_accumulate(SIState& state, std::span<const double> grads, std::span<const double> delta);
/// Omega_k += max(0, omega_k) / ((theta_k - anchor_k)^2 + damping); then
/// anchor <- theta and omega <- 0.
void si_consolidate(SIState& state, std::span<const double> current);
double si_penalty(const SIState& state, std::span<const double> current);
/// Tape version over parameter leaves whose concatenation matches the state.
ad::Var si_penalty(const SIState& state, std::span<const ad::Var> params);

std::vector<double> flatten(std::span<ad::Tensor* const> params);
std::vector<double> flatten_grads(std::span<ad::Tensor* const> params);

}  // namespace rlab::losses
