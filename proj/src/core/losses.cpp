#include "losses.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "error.hpp"

namespace rlab::losses {

using ad::Tensor;
using ad::Var;

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;  // ln(2*pi)
constexpr double kProbFloor = 1e-12;

Var constant_like(Var like, double value) {
    return like.tape->constant(Tensor(like.value().shape, value));
}

}  // namespace

const char* reconstruction_kind_name(ReconstructionKind kind) {
    return kind == ReconstructionKind::Mse ? "mse" : "bernoulli";
}

Var reconstruction_per_sample(Var prediction, Var target, ReconstructionKind kind) {
    require(prediction.shape() == target.shape(), ErrorKind::Dimension,
            "reconstruction: prediction " + prediction.value().shape_string() +
                " vs target " + target.value().shape_string());
    if (kind == ReconstructionKind::Mse) {
        return ad::row_sum(ad::square(ad::sub(prediction, target)));
    }
    for (double t : target.value().data) {
        require(t >= 0.0 && t <= 1.0, ErrorKind::Domain,
                "bernoulli reconstruction target " + std::to_string(t) + " outside [0, 1]");
    }
    const Var p = ad::clamp(prediction, kProbFloor, 1.0 - kProbFloor);
    const Var one = constant_like(prediction, 1.0);
    const Var log_p = ad::log(p);
    const Var log_q = ad::log(ad::sub(one, p));
    const Var ll = ad::add(ad::mul(target, log_p), ad::mul(ad::sub(one, target), log_q));
    return ad::scale(ad::row_sum(ll), -1.0);
}

Var reconstruction_loss(Var prediction, Var target, ReconstructionKind kind) {
    return ad::mean(reconstruction_per_sample(prediction, target, kind));
}

Var kl_standard_normal(const model::LatentVars& latent) {
    const Var& mu = latent.mu;
    const Var& lv = latent.logvar;
    require(mu.shape() == lv.shape(), ErrorKind::Dimension, "kl: mu/logvar shapes differ");
    // 0.5 * sum(mu^2 + exp(lv) - lv - 1)
    const Var terms = ad::add_scalar(ad::sub(ad::add(ad::square(mu), ad::exp(lv)), lv), -1.0);
    return ad::scale(ad::sum(terms), 0.5 / static_cast<double>(mu.rows()));
}

Var kl_class_modes(const model::LatentVars& latent, Var prior_means, Var prior_logvars,
                   std::span<const int> classes) {
    const Var& mu = latent.mu;
    const Var& lv = latent.logvar;
    require(classes.size() == mu.rows(), ErrorKind::Dimension,
            "kl_class_modes: one class per row required");
    const Var pm = ad::gather_rows(prior_means, classes);
    const Var plv = ad::gather_rows(prior_logvars, classes);
    // 0.5 * sum(plv - lv + (exp(lv) + (mu - pm)^2) / exp(plv) - 1)
    const Var ratio = ad::mul(ad::add(ad::exp(lv), ad::square(ad::sub(mu, pm))),
                              ad::exp(ad::scale(plv, -1.0)));
    const Var terms = ad::add_scalar(ad::add(ad::sub(plv, lv), ratio), -1.0);
    return ad::scale(ad::sum(terms), 0.5 / static_cast<double>(mu.rows()));
}

Var diag_gaussian_log_density(Var z, Var means, Var logvars) {
    const Tensor& Z = z.value();
    const Tensor& M = means.value();
    const Tensor& LV = logvars.value();
    require(Z.rank() == 2 && M.rank() == 2 && M.shape == LV.shape && Z.shape[1] == M.shape[1],
            ErrorKind::Dimension, "diag_gaussian_log_density: incompatible shapes");
    const std::size_t n = Z.shape[0], k = M.shape[0], d = Z.shape[1];
    std::vector<double> inv_var(LV.size());
    for (std::size_t i = 0; i < LV.size(); ++i) inv_var[i] = std::exp(-LV.data[i]);
    Tensor out({n, k});
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t c = 0; c < k; ++c) {
            double acc = 0.0;
            for (std::size_t j = 0; j < d; ++j) {
                const double diff = Z.data[i * d + j] - M.data[c * d + j];
                acc += kLog2Pi + LV.data[c * d + j] + diff * diff * inv_var[c * d + j];
            }
            out.data[i * k + c] = -0.5 * acc;
        }
    }
    const int iz = z.id, im = means.id, il = logvars.id;
    return z.tape->record(
        std::move(out), {iz, im, il},
        [iz, im, il, n, k, d, inv_var](ad::Tape& t, const std::vector<double>& g) {
            const auto& zv = t.value(iz).data;
            const auto& mv = t.value(im).data;
            const bool gz = t.needs_grad(iz), gm = t.needs_grad(im), gl = t.needs_grad(il);
            std::vector<double>* dz = gz ? &t.grad(iz) : nullptr;
            std::vector<double>* dm = gm ? &t.grad(im) : nullptr;
            std::vector<double>* dl = gl ? &t.grad(il) : nullptr;
            for (std::size_t i = 0; i < n; ++i) {
                for (std::size_t c = 0; c < k; ++c) {
                    const double up = g[i * k + c];
                    if (up == 0.0) continue;
                    for (std::size_t j = 0; j < d; ++j) {
                        const double diff = zv[i * d + j] - mv[c * d + j];
                        const double w = diff * inv_var[c * d + j];
                        if (dz) (*dz)[i * d + j] -= up * w;
                        if (dm) (*dm)[c * d + j] += up * w;
                        if (dl) (*dl)[c * d + j] += up * 0.5 * (diff * w - 1.0);
                    }
                }
            }
        });
}

Var posterior_log_density(Var logvar, const Tensor& noise) {
    require(noise.shape == logvar.shape(), ErrorKind::Dimension,
            "posterior_log_density: noise shape mismatch");
    Tensor offset(noise.shape);
    for (std::size_t i = 0; i < noise.size(); ++i)
        offset.data[i] = kLog2Pi + noise.data[i] * noise.data[i];
    const Var terms = ad::add(logvar, logvar.tape->constant(std::move(offset)));
    return ad::scale(ad::row_sum(terms), -0.5);
}

Var mixture_log_density(Var z, Var prior_means, Var prior_logvars, std::span<const int> classes) {
    require(!classes.empty(), ErrorKind::Contract, "mixture prior has no seen classes");
    const Var m = ad::gather_rows(prior_means, classes);
    const Var lv = ad::gather_rows(prior_logvars, classes);
    const Var comp = diag_gaussian_log_density(z, m, lv);
    return ad::add_scalar(ad::logsumexp_rows(comp), -std::log(static_cast<double>(classes.size())));
}

Var kl_mc_gmm(const model::LatentVars& latent, Var prior_means, Var prior_logvars,
              std::span<const int> seen_classes, std::size_t n_samples, model::Rng& rng) {
    require(!seen_classes.empty(), ErrorKind::Contract, "kl_mc_gmm: empty seen_classes");
    require(n_samples >= 1, ErrorKind::Contract, "kl_mc_gmm: n_samples must be >= 1");
    ad::Tape& tape = *latent.mu.tape;
    std::normal_distribution<double> normal(0.0, 1.0);
    Var total{};
    for (std::size_t s = 0; s < n_samples; ++s) {
        Tensor noise(latent.mu.value().shape);
        for (double& e : noise.data) e = normal(rng);
        const Var z = model::reparameterize(latent, tape.constant(noise));
        const Var diff = ad::sub(posterior_log_density(latent.logvar, noise),
                                 mixture_log_density(z, prior_means, prior_logvars, seen_classes));
        const Var draw = ad::sum(diff);
        total = s == 0 ? draw : ad::add(total, draw);
    }
    return ad::scale(total, 1.0 / static_cast<double>(n_samples * latent.mu.rows()));
}

MonteCarloEstimate kl_mc_gmm_estimate(const Tensor& mu, const Tensor& logvar,
                                      const model::GaussianMixturePrior& prior,
                                      std::size_t n_samples, model::Rng& rng) {
    require(!prior.seen_classes.empty(), ErrorKind::Contract, "kl_mc_gmm: empty seen_classes");
    require(n_samples >= 1, ErrorKind::Contract, "kl_mc_gmm: n_samples must be >= 1");
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<double> draws;
    draws.reserve(n_samples);
    for (std::size_t s = 0; s < n_samples; ++s) {
        ad::Tape tape;
        const Var m = tape.constant(Tensor(mu.shape, mu.data));
        const Var lv = tape.constant(Tensor(logvar.shape, logvar.data));
        const Var pm = tape.constant(Tensor(prior.means.shape, prior.means.data));
        const Var plv = tape.constant(Tensor(prior.logvars.shape, prior.logvars.data));
        Tensor noise(mu.shape);
        for (double& e : noise.data) e = normal(rng);
        const Var z = model::reparameterize({m, lv}, tape.constant(noise));
        const Var diff = ad::sub(posterior_log_density(lv, noise),
                                 mixture_log_density(z, pm, plv, prior.seen_classes));
        draws.push_back(ad::mean(diff).item());
    }
    MonteCarloEstimate est;
    for (double v : draws) est.mean += v;
    est.mean /= static_cast<double>(n_samples);
    if (n_samples > 1) {
        double ss = 0.0;
        for (double v : draws) ss += (v - est.mean) * (v - est.mean);
        est.standard_error = std::sqrt(ss / static_cast<double>(n_samples - 1)) /
                             std::sqrt(static_cast<double>(n_samples));
    }
    return est;
}

Var classification_loss(Var logits, std::span<const int> labels,
                        std::span<const int> active_classes) {
    const std::size_t m = logits.rows();
    require(labels.size() == m, ErrorKind::Dimension, "classification_loss: label count mismatch");
    require(!active_classes.empty(), ErrorKind::Contract, "classification_loss: no active classes");
    Tensor onehot({m, active_classes.size()});
    for (std::size_t r = 0; r < m; ++r) {
        const auto it = std::find(active_classes.begin(), active_classes.end(), labels[r]);
        require(it != active_classes.end(), ErrorKind::Contract,
                "label " + std::to_string(labels[r]) + " is not an active class");
        onehot.at(r, static_cast<std::size_t>(it - active_classes.begin())) = 1.0;
    }
    const Var logp = ad::log_softmax(ad::select_columns(logits, active_classes));
    return ad::scale(ad::sum(ad::mul(logp, logits.tape->constant(std::move(onehot)))),
                     -1.0 / static_cast<double>(m));
}

Var distillation_loss(Var student_logits, const Tensor& teacher_probs, double temperature) {
    require(temperature > 0.0, ErrorKind::Domain, "distillation temperature must be positive");
    require(student_logits.shape() == teacher_probs.shape, ErrorKind::Dimension,
            "distillation: student " + student_logits.value().shape_string() + " vs teacher " +
                teacher_probs.shape_string());
    const std::size_t m = teacher_probs.rows(), n = teacher_probs.cols();
    for (std::size_t r = 0; r < m; ++r) {
        double s = 0.0;
        for (std::size_t c = 0; c < n; ++c) s += teacher_probs.data[r * n + c];
        require(std::abs(s - 1.0) <= 1e-6, ErrorKind::Contract,
                "distillation: teacher row " + std::to_string(r) + " sums to " + std::to_string(s));
    }
    const Var logq = ad::log_softmax(student_logits, temperature);
    const Var p = student_logits.tape->constant(Tensor(teacher_probs.shape, teacher_probs.data));
    return ad::scale(ad::sum(ad::mul(p, logq)),
                     -temperature * temperature / static_cast<double>(m));
}

// --- Synaptic Intelligence -------------------------------------------------

SIState si_init(std::span<const double> params, double damping, double strength) {
    require(damping > 0.0, ErrorKind::Config, "SI damping must be positive");
    require(strength >= 0.0, ErrorKind::Config, "SI strength must be non-negative");
    SIState s;
    s.omega.assign(params.size(), 0.0);
    s.anchor.assign(params.begin(), params.end());
    s.importance.assign(params.size(), 0.0);
    s.damping = damping;
    s.strength = strength;
    return s;
}

void si_accumulate(SIState& state, std::span<const double> grads, std::span<const double> delta) {
    require(grads.size() == state.omega.size() && delta.size() == state.omega.size(),
            ErrorKind::Contract, "si_accumulate: length mismatch");
    for (std::size_t k = 0; k < grads.size(); ++k) state.omega[k] += -grads[k] * delta[k];
}

void si_consolidate(SIState& state, std::span<const double> current) {
    require(current.size() == state.omega.size(), ErrorKind::Contract,
            "si_consolidate: length mismatch");
    for (std::size_t k = 0; k < current.size(); ++k) {
        const double moved = current[k] - state.anchor[k];
        state.importance[k] += std::max(0.0, state.omega[k]) / (moved * moved + state.damping);
        state.anchor[k] = current[k];
        state.omega[k] = 0.0;
    }
}

double si_penalty(const SIState& state, std::span<const double> current) {
    require(current.size() == state.anchor.size(), ErrorKind::Contract,
            "si_penalty: length mismatch");
    double total = 0.0;
    for (std::size_t k = 0; k < current.size(); ++k) {
        const double d = current[k] - state.anchor[k];
        total += state.importance[k] * d * d;
    }
    return state.strength * total;
}

Var si_penalty(const SIState& state, std::span<const Var> params) {
    require(!params.empty(), ErrorKind::Contract, "si_penalty: no parameters");
    ad::Tape& tape = *params.front().tape;
    std::size_t offset = 0;
    Var total{};
    for (std::size_t i = 0; i < params.size(); ++i) {
        const Tensor& value = params[i].value();
        const std::size_t n = value.size();
        require(offset + n <= state.anchor.size(), ErrorKind::Contract,
                "si_penalty: parameters exceed state length");
        Tensor anchor(value.shape, std::vector<double>(state.anchor.begin() + offset,
                                                       state.anchor.begin() + offset + n));
        Tensor importance(value.shape, std::vector<double>(state.importance.begin() + offset,
                                                           state.importance.begin() + offset + n));
        offset += n;
        const Var d = ad::sub(params[i], tape.constant(std::move(anchor)));
        const Var term = ad::sum(ad::mul(tape.constant(std::move(importance)), ad::square(d)));
        total = i == 0 ? term : ad::add(total, term);
    }
    require(offset == state.anchor.size(), ErrorKind::Contract,
            "si_penalty: parameter count does not match state");
    return ad::scale(total, state.strength);
}

std::vector<double> flatten(std::span<Tensor* const> params) {
    std::vector<double> out;
    for (const Tensor* p : params) out.insert(out.end(), p->data.begin(), p->data.end());
    return out;
}

std::vector<double> flatten_grads(std::span<Tensor* const> params) {
    std::vector<double> out;
    for (const Tensor* p : params) {
        require(p->grad.has_value(), ErrorKind::Contract, "flatten_grads: missing gradient");
        out.insert(out.end(), p->grad->begin(), p->grad->end());
    }
    return out;
}

}  // namespace rlab::losses
