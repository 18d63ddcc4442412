#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "data.hpp"
#include "losses.hpp"
#include "metrics.hpp"
#include "model.hpp"
#include "optim.hpp"

namespace rlab::trainer {

/// Which replay mechanisms are active. `replay` switches replay through
/// feedback as a whole; with it off the other replay flags have no effect
/// and training is plain sequential fine-tuning (plus SI when enabled).
struct AblationFlags {
    bool replay = true;
    bool internal_replay = true;
    bool synaptic_intelligence = false;
    bool context_gating = true;
    bool conditional_replay = true;
    bool distillation = true;

    bool operator==(const AblationFlags&) const = default;
};

/// Flags of the four named variants; nullopt for any other name.
std::optional<AblationFlags> named_variant(const std::string& name);
/// Lower-case directory name for a variant, e.g. "BIR+SI(w/ IR)" -> "bir-si-w-ir".
std::string variant_slug(const std::string& name);

struct LossWeights {
    double reconstruction = 1.0;
    double kl = 1.0;
    double classification = 1.0;
    double distillation = 1.0;
};

struct TrainerConfig {
    std::size_t num_tasks = 5;
    std::size_t classes_per_task = 2;
    std::size_t epochs_per_task = 5;
    std::size_t batch_size = 64;
    /// 0 means "same as batch_size".
    std::size_t replay_batch_size = 0;
    double learning_rate = 1e-3;
    std::uint64_t seed = 0;
    LossWeights weights;
    double si_strength = 1.0;
    double si_damping = 0.1;
    double distillation_temperature = 2.0;
    /// Weight of the current-data loss when mixing with replay; nullopt
    /// selects 1/t for task t.
    std::optional<double> current_weight;
    std::size_t pretrain_epochs = 5;
    std::optional<std::uint64_t> class_order_seed;
    /// Importance samples per test row for the log-likelihood estimate;
    /// 0 skips the generative diagnostics.
    std::size_t diagnostic_samples = 128;

    std::size_t effective_replay_batch() const noexcept {
        return replay_batch_size == 0 ? batch_size : replay_batch_size;
    }
};

/// Per-component loss values of one step (or averages over an epoch).
/// Current and replay terms are already mixed, so
/// total = reconstruction + kl + classification + distillation + si.
struct LossBreakdown {
    double reconstruction = 0.0;
    double kl = 0.0;
    double classification = 0.0;
    double distillation = 0.0;
    double si = 0.0;
    double replay = 0.0;  // unmixed replay loss, 0 without replay
    double total = 0.0;

    LossBreakdown& operator+=(const LossBreakdown& o);
    LossBreakdown scaled(double f) const;
};

struct ReplayBatch {
    ad::Tensor targets;      // [n x width(level)]
    ad::Tensor soft_labels;  // [n x num_classes], zero outside the teacher's classes
    ad::Tensor latents;      // [n x latent_dim]
    std::vector<int> source_classes;
    std::vector<int> task_ids;  // context used for gating
    std::size_t level = 0;
};

/// Samples a replay batch from a teacher. `class_task` maps class id to task
/// id and is used for the gating context; `previous_tasks` is the number of
/// tasks the teacher has learned.
ReplayBatch generate_replay_batch(model::ReplayModel& teacher, std::size_t n,
                                  std::span<const int> seen_classes,
                                  std::span<const int> class_task, std::size_t previous_tasks,
                                  const AblationFlags& flags, std::size_t replay_level,
                                  double temperature, model::Rng& rng);

/// (1/t)·current + (1 − 1/t)·replay for 1-based task index t, or a fixed
/// current weight when given.
ad::Var mix_losses(ad::Var current, ad::Var replay, std::size_t task_index,
                   std::optional<double> current_weight = std::nullopt);
double mix_losses(double current, double replay, std::size_t task_index,
                  std::optional<double> current_weight = std::nullopt);

struct PretrainReport {
    double heldout_loss_before = 0.0;
    double heldout_loss_after = 0.0;
};

/// Trains the perceptual block and its mirrored decoder layers as a plain
/// autoencoder on `train`, then freezes the block. Losses are measured on
/// `heldout` (or on `train` when heldout is empty).
PretrainReport pretrain_perceptual_block(model::ReplayModel& model, const data::Dataset& train,
                                         const data::Dataset& heldout, std::size_t epochs,
                                         std::size_t batch_size, double learning_rate,
                                         model::Rng& rng);

/// Loss used at the input level for a given network.
losses::ReconstructionKind input_reconstruction_kind(const model::NetworkConfig& config);

/// State carried across tasks by the live learner.
struct LearnerState {
    ad::OptimizerState optimizer;
    std::optional<losses::SIState> si;
    model::Rng rng;
};

struct TaskContext {
    std::size_t task = 0;  // 0-based
    const data::Dataset* train = nullptr;
    std::span<const int> active_classes;  // classes of tasks 0..task
    std::span<const int> class_task;
    std::size_t replay_level = 0;
};

/// Per-epoch averaged losses.
struct TaskHistory {
    std::vector<LossBreakdown> epochs;
};

/// Trains one task. `teacher` must be present iff ctx.task > 0 and replay
/// is on.
TaskHistory train_task(model::ReplayModel& model, const TaskContext& ctx,
                       model::ReplayModel* teacher, LearnerState& state,
                       const TrainerConfig& config, const AblationFlags& flags);

struct TaskSummary {
    int task = 0;  // 1-based
    double silhouette_class = 0.0;
    bool silhouette_defined = false;
    metrics::Projection projection;
};

struct RunResult {
    metrics::AccuracyMatrix accuracy;
    std::vector<metrics::TaskMetrics> task_metrics;
    std::vector<TaskHistory> loss_history;
    PretrainReport pretrain;
    std::optional<metrics::DistributionSummary> log_likelihood;
    std::optional<metrics::DistributionSummary> reconstruction_error;
    metrics::ReconstructionPath comparison_path;
    metrics::EmbeddingDump embeddings;
    std::vector<TaskSummary> tasks;
    std::vector<int> task_order;  // class ids in task order
    double train_seconds = 0.0;
    double diagnostics_seconds = 0.0;
};

struct RunHooks {
    /// Called after each task with the 0-based task index and the model.
    std::function<void(std::size_t, const model::ReplayModel&)> on_task_end;
    std::function<void(const std::string&)> log;
};

/// Network settings that follow from the flags and trainer config.
model::NetworkConfig resolve_network(const model::NetworkConfig& base, const TrainerConfig& config,
                                     const AblationFlags& flags);

RunResult run_experiment(const model::NetworkConfig& network, const TrainerConfig& config,
                         const AblationFlags& flags, const data::DatasetPair& data,
                         const RunHooks& hooks = {});

/// Independent RNG stream for a run seed.
model::Rng stream_rng(std::uint64_t seed, std::uint64_t stream);

}  // namespace rlab::trainer
