#pragma once

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "data.hpp"
#include "losses.hpp"
#include "model.hpp"

namespace rlab::metrics {

/// acc[t][e] = accuracy on task e after training task t, defined for e <= t.
class AccuracyMatrix {
  public:
    explicit AccuracyMatrix(std::size_t num_tasks = 0);

    std::size_t num_tasks() const noexcept { return rows_.size(); }
    void set(std::size_t trained, std::size_t evaluated, double accuracy);
    double at(std::size_t trained, std::size_t evaluated) const;
    bool defined(std::size_t trained, std::size_t evaluated) const;
    double initial(std::size_t task) const { return at(task, task); }
    double final(std::size_t task) const { return at(num_tasks() - 1, task); }

  private:
    std::vector<std::vector<std::optional<double>>> rows_;
};

/// Empty when initial accuracy is zero (ratio undefined).
std::optional<double> retention_ratio(double initial, double final);
double forgetting_score(double initial, double final);

struct TaskMetrics {
    std::size_t task = 0;  // 1-based
    double initial_accuracy = 0.0;
    double final_accuracy = 0.0;
    std::optional<double> retention;
    double forgetting = 0.0;
};

std::vector<TaskMetrics> task_metrics(const AccuracyMatrix& matrix);

struct Histogram {
    std::vector<double> edges;
    std::vector<std::size_t> counts;
};

struct DistributionSummary {
    std::vector<double> values;
    Histogram histogram;
    double mean = 0.0;
    double median = 0.0;
    double p5 = 0.0;
    double p95 = 0.0;
};

/// Freedman-Diaconis bin width, at most `max_bins` bins.
Histogram freedman_diaconis_histogram(std::span<const double> values, std::size_t max_bins = 50);
/// Linear-interpolated percentile of sorted values, q in [0, 100].
double percentile(std::span<const double> sorted, double q);
DistributionSummary summarize(std::vector<double> values);

/// Fraction of rows whose argmax over `active_classes` logits equals the
/// label; ties go to the lowest class index.
double accuracy_from_logits(const ad::Tensor& logits, std::span<const int> labels,
                            std::span<const int> active_classes);
double evaluate_accuracy(model::ReplayModel& model, const data::Dataset& test_set,
                         std::span<const int> active_classes);

/// How a model reconstructs a representation level: by decoding straight to
/// it, or (input-level replay models) by decoding to the input and pushing
/// the result back up through the encoder.
struct ReconstructionPath {
    std::size_t level = 0;
    bool via_input = false;
    losses::ReconstructionKind input_kind = losses::ReconstructionKind::Mse;
};

/// Reconstruction of z at path.level.
ad::Var reconstruct_at(const model::ReplayModel& model, const model::ReplayModel::Bound& bound,
                       ad::Var z, std::span<const int> task_ids, const ReconstructionPath& path);

/// log p(target | z) per row: unit-variance Gaussian above the input level,
/// Bernoulli or Gaussian at the input level depending on input_kind.
std::vector<double> observation_log_likelihood(const ad::Tensor& reconstruction,
                                               const ad::Tensor& target, std::size_t level,
                                               losses::ReconstructionKind input_kind);

/// Importance-sampled log marginal per row:
///   logsumexp_s[log_joint(z_s) - log q(z_s)] - log S,  z_s ~ N(mu, exp(logvar)).
/// `log_joint` returns log p(x|z) + log p(z) for each row of a latent batch.
using LogJointFn = std::function<std::vector<double>(const ad::Tensor& z)>;
std::vector<double> importance_log_likelihood(const ad::Tensor& mu, const ad::Tensor& logvar,
                                              const LogJointFn& log_joint, std::size_t samples,
                                              model::Rng& rng);

/// Per-sample log-likelihood estimate of `x` under the model, evaluated at
/// path.level, with the prior restricted to the model's seen classes.
std::vector<double> estimate_log_likelihood(model::ReplayModel& model, const ad::Tensor& x,
                                            std::span<const int> task_ids,
                                            const ReconstructionPath& path, std::size_t samples,
                                            model::Rng& rng);

/// Per-sample reconstruction error at path.level using the posterior mean.
std::vector<double> reconstruction_errors(model::ReplayModel& model, const ad::Tensor& x,
                                          std::span<const int> task_ids,
                                          const ReconstructionPath& path);
DistributionSummary reconstruction_error_distribution(model::ReplayModel& model,
                                                      const ad::Tensor& x,
                                                      std::span<const int> task_ids,
                                                      const ReconstructionPath& path);

struct EmbeddingDump {
    std::string layer;
    std::vector<int> tasks;
    std::vector<int> classes;
    ad::Tensor activations;  // [rows x width]

    std::size_t size() const noexcept { return classes.size(); }
    EmbeddingDump rows_for_task(int task) const;
};

/// Activations of fc layer `layer_index` for every row of `dataset`, in
/// dataset order. `class_task` maps class id to task id.
EmbeddingDump extract_embeddings(model::ReplayModel& model, const data::Dataset& dataset,
                                 std::size_t layer_index, std::span<const int> class_task);

enum class SilhouetteKey { Class, Task };

/// Per-sample silhouette values (Euclidean). Members of singleton clusters
/// get 0.
std::vector<double> silhouette_samples(const ad::Tensor& points, std::span<const int> labels);
double silhouette_score(const ad::Tensor& points, std::span<const int> labels);
double silhouette_score(const EmbeddingDump& dump, SilhouetteKey key = SilhouetteKey::Class);

struct Projection {
    std::vector<int> tasks;
    std::vector<int> classes;
    std::vector<double> x;
    std::vector<double> y;
    /// Variance captured by each of the two axes (eigenvalues of the
    /// sample covariance, divisor n - 1).
    double explained_variance[2] = {0.0, 0.0};
    bool rank_deficient = false;
};

/// Projection on the two leading principal directions, found by power
/// iteration with deflation.
Projection pca_project_2d(const EmbeddingDump& dump);

}  // namespace rlab::metrics
