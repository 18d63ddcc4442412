#include "trainer.hpp"

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cmath>
#include <map>
#include <numeric>
#include <set>

#include "error.hpp"

namespace rlab::trainer {

using ad::Tensor;
using ad::Var;

namespace {

std::string strip_spaces(const std::string& s) {
    std::string out;
    for (char c : s)
        if (!std::isspace(static_cast<unsigned char>(c))) out.push_back(c);
    return out;
}

Tensor gather(const Tensor& x, std::span<const std::size_t> rows) {
    const std::size_t d = x.cols();
    Tensor out({rows.size(), d});
    for (std::size_t i = 0; i < rows.size(); ++i)
        std::copy_n(x.data.begin() + rows[i] * d, d, out.data.begin() + i * d);
    return out;
}

Tensor standard_normal(std::vector<std::size_t> shape, model::Rng& rng) {
    std::normal_distribution<double> normal(0.0, 1.0);
    Tensor t(std::move(shape));
    for (double& v : t.data) v = normal(rng);
    return t;
}

std::vector<double> difference(const std::vector<double>& after, const std::vector<double>& before) {
    std::vector<double> d(after.size());
    for (std::size_t i = 0; i < d.size(); ++i) d[i] = after[i] - before[i];
    return d;
}

double seconds_since(std::chrono::steady_clock::time_point start) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

struct ElboTerms {
    Var reconstruction;
    Var kl;
    Var logits;
};

// Weighted reconstruction and KL terms for a batch entering the encoder at
// `from_level` and reconstructed at `level`.
ElboTerms elbo_terms(const model::ReplayModel& model, const model::ReplayModel::Bound& b, Var input,
                     std::size_t from_level, std::size_t level, std::span<const int> kl_classes,
                     std::span<const int> task_ids, bool conditional, const LossWeights& w,
                     losses::ReconstructionKind kind, model::Rng& rng) {
    ad::Tape& tape = *b.tape;
    const auto enc = model.encode(b, input, from_level);
    const Var target = tape.constant(enc.levels[level].value());
    const Var noise = tape.constant(standard_normal(enc.latent.mu.shape(), rng));
    const Var z = model::reparameterize(enc.latent, noise);
    const Var recon = model.decode(b, z, task_ids, level);
    const double width = static_cast<double>(model.config().level_width(level));
    ElboTerms out;
    out.reconstruction =
        ad::scale(losses::reconstruction_loss(recon, target, kind), w.reconstruction / width);
    const Var kl = conditional
                       ? losses::kl_class_modes(enc.latent, b.prior_means, b.prior_logvars, kl_classes)
                       : losses::kl_standard_normal(enc.latent);
    out.kl = ad::scale(kl, w.kl / width);
    out.logits = enc.logits;
    return out;
}

}  // namespace

// --- flags -----------------------------------------------------------------

std::optional<AblationFlags> named_variant(const std::string& name) {
    const std::string key = strip_spaces(name);
    AblationFlags f;
    if (key == "BIR(w/IR)") return f;
    if (key == "BIR+SI(w/IR)") {
        f.synaptic_intelligence = true;
        return f;
    }
    if (key == "BIR(w/oIR)") {
        f.internal_replay = false;
        return f;
    }
    if (key == "BIR+SI(w/oIR)") {
        f.internal_replay = false;
        f.synaptic_intelligence = true;
        return f;
    }
    return std::nullopt;
}

std::string variant_slug(const std::string& name) {
    std::string out;
    bool dash = false;
    for (char c : name) {
        if (std::isalnum(static_cast<unsigned char>(c))) {
            if (dash && !out.empty()) out.push_back('-');
            out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
            dash = false;
        } else {
            dash = true;
        }
    }
    require(!out.empty(), ErrorKind::Config, "variant name '" + name + "' has no usable characters");
    return out;
}

LossBreakdown& LossBreakdown::operator+=(const LossBreakdown& o) {
    reconstruction += o.reconstruction;
    kl += o.kl;
    classification += o.classification;
    distillation += o.distillation;
    si += o.si;
    replay += o.replay;
    total += o.total;
    return *this;
}

LossBreakdown LossBreakdown::scaled(double f) const {
    LossBreakdown o = *this;
    o.reconstruction *= f;
    o.kl *= f;
    o.classification *= f;
    o.distillation *= f;
    o.si *= f;
    o.replay *= f;
    o.total *= f;
    return o;
}

model::Rng stream_rng(std::uint64_t seed, std::uint64_t stream) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
    return model::Rng(seq);
}

losses::ReconstructionKind input_reconstruction_kind(const model::NetworkConfig& config) {
    return config.output_activation == model::Activation::Sigmoid ? losses::ReconstructionKind::Bernoulli
                                                                   : losses::ReconstructionKind::Mse;
}

// --- mixing ----------------------------------------------------------------

namespace {

double current_share(std::size_t task_index, std::optional<double> current_weight) {
    require(task_index >= 1, ErrorKind::Contract, "mix_losses: task index is 1-based");
    if (task_index == 1) return 1.0;
    if (current_weight) {
        require(*current_weight >= 0.0 && *current_weight <= 1.0, ErrorKind::Config,
                "current-data weight must lie in [0, 1]");
        return *current_weight;
    }
    return 1.0 / static_cast<double>(task_index);
}

}  // namespace

Var mix_losses(Var current, Var replay, std::size_t task_index, std::optional<double> current_weight) {
    const double w = current_share(task_index, current_weight);
    if (task_index == 1) return current;
    return ad::add(ad::scale(current, w), ad::scale(replay, 1.0 - w));
}

double mix_losses(double current, double replay, std::size_t task_index,
                  std::optional<double> current_weight) {
    const double w = current_share(task_index, current_weight);
    if (task_index == 1) return current;
    return w * current + (1.0 - w) * replay;
}

// --- replay ----------------------------------------------------------------

ReplayBatch generate_replay_batch(model::ReplayModel& teacher, std::size_t n,
                                  std::span<const int> seen_classes,
                                  std::span<const int> class_task, std::size_t previous_tasks,
                                  const AblationFlags& flags, std::size_t replay_level,
                                  double temperature, model::Rng& rng) {
    require(!seen_classes.empty(), ErrorKind::Contract, "replay needs at least one seen class");
    require(n > 0, ErrorKind::Contract, "replay batch must be non-empty");
    const auto& cfg = teacher.config();
    std::vector<int> seen(seen_classes.begin(), seen_classes.end());
    std::sort(seen.begin(), seen.end());

    ReplayBatch batch;
    batch.level = replay_level;
    batch.latents = Tensor({n, cfg.latent_dim});
    batch.task_ids.resize(n);
    const bool conditional = flags.conditional_replay && cfg.conditional_prior;
    if (conditional) {
        std::uniform_int_distribution<std::size_t> pick(0, seen.size() - 1);
        batch.source_classes.resize(n);
        for (std::size_t r = 0; r < n; ++r) {
            const int c = seen[pick(rng)];
            const Tensor z = model::sample_conditional(teacher.prior(), c, 1, rng);
            std::copy(z.data.begin(), z.data.end(), batch.latents.data.begin() + r * cfg.latent_dim);
            batch.source_classes[r] = c;
            batch.task_ids[r] =
                static_cast<std::size_t>(c) < class_task.size() ? class_task[c] : 0;
        }
    } else {
        require(previous_tasks > 0, ErrorKind::Contract, "replay needs a previous task");
        batch.latents = standard_normal({n, cfg.latent_dim}, rng);
        std::uniform_int_distribution<std::size_t> pick(0, previous_tasks - 1);
        for (std::size_t r = 0; r < n; ++r) batch.task_ids[r] = static_cast<int>(pick(rng));
    }

    ad::Tape tape;
    auto bound = teacher.bind(tape, false);
    const Var decoded = teacher.decode(bound, tape.constant(batch.latents), batch.task_ids, replay_level);
    const auto enc = teacher.encode(bound, decoded, replay_level);
    const Tensor probs = ad::softmax_rows(ad::select_columns(enc.logits, seen).value(), temperature);

    batch.targets = decoded.value();
    batch.soft_labels = Tensor({n, cfg.num_classes});
    for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t j = 0; j < seen.size(); ++j)
            batch.soft_labels.data[r * cfg.num_classes + seen[j]] = probs.data[r * seen.size() + j];
    }
    if (!conditional) {
        batch.source_classes.resize(n);
        for (std::size_t r = 0; r < n; ++r) {
            const double* row = probs.data.data() + r * seen.size();
            batch.source_classes[r] = seen[std::max_element(row, row + seen.size()) - row];
        }
    }
    return batch;
}

// --- pretraining -----------------------------------------------------------

PretrainReport pretrain_perceptual_block(model::ReplayModel& model, const data::Dataset& train,
                                         const data::Dataset& heldout, std::size_t epochs,
                                         std::size_t batch_size, double learning_rate,
                                         model::Rng& rng) {
    require(train.size() > 0, ErrorKind::Data, "pretraining needs a non-empty dataset");
    require(batch_size > 0, ErrorKind::Config, "batch size must be positive");
    const auto& cfg = model.config();
    const std::size_t p = cfg.num_perceptual();
    PretrainReport report;
    if (p == 0) return report;
    const auto kind = input_reconstruction_kind(cfg);

    std::vector<Tensor*> params = model.perceptual_parameters();
    for (std::size_t l = 0; l < p; ++l) {
        params.push_back(&model.decoder_layers()[l].weight);
        params.push_back(&model.decoder_layers()[l].bias);
    }
    const auto loss_on = [&](ad::Tape& tape, const model::ReplayModel::Bound& b, const Tensor& x) {
        const Var input = tape.constant(x);
        const Var h = model.propagate_up(b, input, 0, p);
        const Var recon = model.decode_from(b, h, p, {}, 0);
        return losses::reconstruction_loss(recon, input, kind);
    };
    const data::Dataset& eval = heldout.size() > 0 ? heldout : train;
    const auto evaluate = [&] {
        ad::Tape tape;
        auto b = model.bind(tape, false);
        return loss_on(tape, b, eval.inputs).item();
    };

    report.heldout_loss_before = evaluate();
    model.set_perceptual_trainable(true);
    model.set_lower_decoder_trainable(p, true);
    ad::OptimizerState opt;
    opt.learning_rate = learning_rate;
    std::vector<std::size_t> order(train.size());
    for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::shuffle(order.begin(), order.end(), rng);
        for (std::size_t begin = 0; begin < order.size(); begin += batch_size) {
            const std::size_t end = std::min(order.size(), begin + batch_size);
            const std::span<const std::size_t> idx(order.data() + begin, end - begin);
            ad::Tape tape;
            auto b = model.bind(tape, true);
            tape.backward(loss_on(tape, b, gather(train.inputs, idx)));
            ad::optimizer_step(opt, params);
            ad::zero_grads(params);
        }
    }
    model.set_perceptual_trainable(false);
    for (Tensor* t : params) t->grad.reset();
    for (auto& np : model.named_parameters()) np.tensor->grad.reset();
    report.heldout_loss_after = evaluate();
    return report;
}

// --- training --------------------------------------------------------------

TaskHistory train_task(model::ReplayModel& model, const TaskContext& ctx,
                       model::ReplayModel* teacher, LearnerState& state,
                       const TrainerConfig& config, const AblationFlags& flags) {
    require(ctx.train != nullptr && ctx.train->size() > 0, ErrorKind::Data,
            "task " + std::to_string(ctx.task + 1) + " has no training data");
    require(config.batch_size > 0, ErrorKind::Config, "batch size must be positive");
    const bool replay_on = flags.replay && ctx.task > 0;
    if (replay_on) {
        require(teacher != nullptr, ErrorKind::Contract,
                "replay requested for task " + std::to_string(ctx.task + 1) + " without a snapshot");
    }
    const auto& cfg = model.config();
    const data::Dataset& train = *ctx.train;
    const std::size_t level = ctx.replay_level;
    const auto kind = level == 0 ? input_reconstruction_kind(cfg) : losses::ReconstructionKind::Mse;
    const bool conditional = cfg.conditional_prior;
    const LossWeights& w = config.weights;
    const double temperature = config.distillation_temperature;
    const std::size_t task_index = ctx.task + 1;
    const double share = mix_losses(1.0, 0.0, task_index, config.current_weight);
    std::vector<Tensor*> params = model.trainable_parameters();

    std::vector<int> teacher_seen;
    std::set<int> current_classes;
    if (replay_on) {
        teacher_seen = teacher->prior().seen_classes;
        require(!teacher_seen.empty(), ErrorKind::ReplayContract, "teacher has no seen classes");
        for (int c : ctx.active_classes)
            if (!std::binary_search(teacher_seen.begin(), teacher_seen.end(), c))
                current_classes.insert(c);
    }

    TaskHistory history;
    std::vector<std::size_t> order(train.size());
    for (std::size_t epoch = 0; epoch < config.epochs_per_task; ++epoch) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::shuffle(order.begin(), order.end(), state.rng);
        LossBreakdown epoch_sum;
        std::size_t batches = 0;
        for (std::size_t begin = 0; begin < order.size(); begin += config.batch_size) {
            const std::size_t end = std::min(order.size(), begin + config.batch_size);
            const std::span<const std::size_t> idx(order.data() + begin, end - begin);
            std::vector<int> labels(idx.size());
            for (std::size_t i = 0; i < idx.size(); ++i) labels[i] = train.labels[idx[i]];
            const std::vector<int> tasks(idx.size(), static_cast<int>(ctx.task));

            ad::Tape tape;
            auto b = model.bind(tape, true);
            const Var x = tape.constant(gather(train.inputs, idx));
            const ElboTerms cur = elbo_terms(model, b, x, 0, level, labels, tasks, conditional, w,
                                             kind, state.rng);
            const Var cls =
                ad::scale(losses::classification_loss(cur.logits, labels, ctx.active_classes),
                          w.classification);
            const Var current = ad::add(ad::add(cur.reconstruction, cur.kl), cls);

            LossBreakdown step;
            Var total = current;
            if (replay_on) {
                const ReplayBatch rb = generate_replay_batch(
                    *teacher, config.effective_replay_batch(), teacher_seen, ctx.class_task,
                    ctx.task, flags, level, temperature, state.rng);
                for (int c : rb.source_classes) {
                    require(std::binary_search(teacher_seen.begin(), teacher_seen.end(), c) &&
                                !current_classes.count(c),
                            ErrorKind::ReplayContract,
                            "replayed class " + std::to_string(c) + " was not seen before task " +
                                std::to_string(task_index));
                }
                const Var xr = tape.constant(rb.targets);
                const ElboTerms rep = elbo_terms(model, b, xr, level, level, rb.source_classes, rb.task_ids,
                                                 conditional, w, kind, state.rng);
                const std::size_t nr = rb.targets.rows();
                Var label_loss;
                // The student scores replay over every active class; the
                // teacher's targets are zero on the classes it has not seen.
                if (flags.distillation) {
                    const std::size_t k = ctx.active_classes.size();
                    Tensor soft({nr, k});
                    for (std::size_t r = 0; r < nr; ++r)
                        for (std::size_t j = 0; j < k; ++j)
                            soft.data[r * k + j] =
                                rb.soft_labels.data[r * cfg.num_classes + ctx.active_classes[j]];
                    label_loss = ad::scale(
                        losses::distillation_loss(ad::select_columns(rep.logits, ctx.active_classes),
                                                  soft, temperature),
                        w.distillation);
                } else {
                    std::vector<int> hard(nr);
                    for (std::size_t r = 0; r < nr; ++r) {
                        const double* row = rb.soft_labels.data.data() + r * cfg.num_classes;
                        hard[r] = static_cast<int>(std::max_element(row, row + cfg.num_classes) - row);
                    }
                    label_loss = ad::scale(
                        losses::classification_loss(rep.logits, hard, ctx.active_classes),
                        w.classification);
                }
                const Var replay = ad::add(ad::add(rep.reconstruction, rep.kl), label_loss);
                total = mix_losses(current, replay, task_index, config.current_weight);

                const double rs = 1.0 - share;
                step.reconstruction = share * cur.reconstruction.item() + rs * rep.reconstruction.item();
                step.kl = share * cur.kl.item() + rs * rep.kl.item();
                step.classification = share * cls.item();
                if (flags.distillation) step.distillation = rs * label_loss.item();
                else step.classification += rs * label_loss.item();
                step.replay = replay.item();
            } else {
                step.reconstruction = cur.reconstruction.item();
                step.kl = cur.kl.item();
                step.classification = cls.item();
            }
            if (flags.synaptic_intelligence) {
                require(state.si.has_value(), ErrorKind::Contract, "SI enabled without SI state");
                const Var penalty = losses::si_penalty(*state.si, b.trainable);
                total = ad::add(total, penalty);
                step.si = penalty.item();
            }
            step.total = total.item();
            require(std::isfinite(step.total), ErrorKind::Domain,
                    "non-finite loss in task " + std::to_string(task_index));

            tape.backward(total);
            if (flags.synaptic_intelligence) {
                const auto grads = losses::flatten_grads(params);
                const auto before = losses::flatten(params);
                ad::optimizer_step(state.optimizer, params);
                losses::si_accumulate(*state.si, grads, difference(losses::flatten(params), before));
            } else {
                ad::optimizer_step(state.optimizer, params);
            }
            ad::zero_grads(params);
            epoch_sum += step;
            ++batches;
        }
        history.epochs.push_back(epoch_sum.scaled(1.0 / static_cast<double>(batches)));
    }
    return history;
}

// --- experiment ------------------------------------------------------------

model::NetworkConfig resolve_network(const model::NetworkConfig& base, const TrainerConfig& config,
                                     const AblationFlags& flags) {
    model::NetworkConfig nc = base;
    nc.num_tasks = config.num_tasks;
    nc.context_gating = flags.replay && flags.context_gating;
    nc.conditional_prior = flags.conditional_replay;
    nc.seed = stream_rng(config.seed, 1)() ^ base.seed;
    nc.validate();
    return nc;
}

RunResult run_experiment(const model::NetworkConfig& network, const TrainerConfig& config,
                         const AblationFlags& flags, const data::DatasetPair& data,
                         const RunHooks& hooks) {
    const auto log = [&](const std::string& msg) {
        if (hooks.log) hooks.log(msg);
    };
    require(config.num_tasks >= 1 && config.classes_per_task >= 1, ErrorKind::Config,
            "num_tasks and classes_per_task must be positive");
    require(config.num_tasks * config.classes_per_task <= data.train.num_classes, ErrorKind::Config,
            "num_tasks x classes_per_task = " +
                std::to_string(config.num_tasks * config.classes_per_task) + " exceeds the " +
                std::to_string(data.train.num_classes) + " classes in the dataset");
    require(network.input_dim == data.train.dim(), ErrorKind::Config,
            "network.input_dim = " + std::to_string(network.input_dim) + " but the dataset has " +
                std::to_string(data.train.dim()) + " features");
    require(network.num_classes >= data.train.num_classes, ErrorKind::Config,
            "network.num_classes is smaller than the dataset's class count");

    const auto nc = resolve_network(network, config, flags);
    const auto split = data::split_into_tasks(data.train, data.test, config.num_tasks,
                                              config.classes_per_task, config.class_order_seed);
    std::vector<int> class_task(nc.num_classes, -1);
    for (std::size_t t = 0; t < split.num_tasks(); ++t)
        for (int c : split.task_classes[t]) class_task[c] = static_cast<int>(t);

    std::vector<data::Dataset> train_sets, test_sets;
    for (std::size_t t = 0; t < split.num_tasks(); ++t) {
        train_sets.push_back(data.train.subset(split.train_indices[t]));
        test_sets.push_back(data.test.subset(split.test_indices[t]));
    }

    RunResult result;
    result.accuracy = metrics::AccuracyMatrix(config.num_tasks);
    for (const auto& classes : split.task_classes)
        result.task_order.insert(result.task_order.end(), classes.begin(), classes.end());

    const auto train_start = std::chrono::steady_clock::now();
    model::ReplayModel model(nc);
    {
        model::Rng rng = stream_rng(config.seed, 2);
        result.pretrain = pretrain_perceptual_block(model, train_sets[0], test_sets[0],
                                                    config.pretrain_epochs, config.batch_size,
                                                    config.learning_rate, rng);
        log("pretrained perceptual block: held-out loss " +
            std::to_string(result.pretrain.heldout_loss_before) + " -> " +
            std::to_string(result.pretrain.heldout_loss_after));
    }
    const std::size_t level = flags.internal_replay ? nc.internal_replay_level : 0;
    model.set_lower_decoder_trainable(level, false);

    LearnerState state{ad::OptimizerState{}, std::nullopt, stream_rng(config.seed, 3)};
    state.optimizer.learning_rate = config.learning_rate;
    std::vector<Tensor*> params = model.trainable_parameters();
    if (flags.synaptic_intelligence)
        state.si = losses::si_init(losses::flatten(params), config.si_damping, config.si_strength);

    std::optional<model::ReplayModel> teacher;
    for (std::size_t t = 0; t < config.num_tasks; ++t) {
        model.prior().add_seen(split.task_classes[t]);
        const auto active = split.classes_up_to(t);
        TaskContext ctx{t, &train_sets[t], active, class_task, level};
        result.loss_history.push_back(train_task(model, ctx, teacher ? &*teacher : nullptr, state,
                                                 config, flags));
        if (state.si) losses::si_consolidate(*state.si, losses::flatten(params));
        for (std::size_t e = 0; e <= t; ++e)
            result.accuracy.set(t, e, metrics::evaluate_accuracy(model, test_sets[e], active));
        log("task " + std::to_string(t + 1) + " done, accuracy on it " +
            std::to_string(result.accuracy.at(t, t)));
        if (hooks.on_task_end) hooks.on_task_end(t, model);
        if (flags.replay) teacher.emplace(model);
    }
    result.train_seconds = seconds_since(train_start);
    result.task_metrics = metrics::task_metrics(result.accuracy);

    // Diagnostics on the test rows of every covered class, in task order.
    const auto diag_start = std::chrono::steady_clock::now();
    std::vector<std::size_t> covered;
    for (const auto& idx : split.test_indices) covered.insert(covered.end(), idx.begin(), idx.end());
    const data::Dataset test = data.test.subset(covered);
    std::vector<int> row_tasks(test.size());
    for (std::size_t i = 0; i < test.size(); ++i) row_tasks[i] = class_task[test.labels[i]];

    result.comparison_path.level = nc.internal_replay_level;
    result.comparison_path.via_input = !flags.internal_replay && nc.internal_replay_level > 0;
    result.comparison_path.input_kind = input_reconstruction_kind(nc);
    if (config.diagnostic_samples > 0) {
        model::Rng rng = stream_rng(config.seed, 4);
        result.log_likelihood = metrics::summarize(metrics::estimate_log_likelihood(
            model, test.inputs, row_tasks, result.comparison_path, config.diagnostic_samples, rng));
        result.reconstruction_error = metrics::reconstruction_error_distribution(
            model, test.inputs, row_tasks, result.comparison_path);
    }
    result.embeddings = metrics::extract_embeddings(model, test, nc.embedding_layer, class_task);
    for (std::size_t t = 0; t < config.num_tasks; ++t) {
        TaskSummary s;
        s.task = static_cast<int>(t + 1);
        const auto rows = result.embeddings.rows_for_task(static_cast<int>(t));
        if (std::set<int>(rows.classes.begin(), rows.classes.end()).size() >= 2) {
            s.silhouette_class = metrics::silhouette_score(rows, metrics::SilhouetteKey::Class);
            s.silhouette_defined = true;
        }
        if (rows.size() >= 2) s.projection = metrics::pca_project_2d(rows);
        result.tasks.push_back(std::move(s));
    }
    result.diagnostics_seconds = seconds_since(diag_start);
    return result;
}

}  // namespace rlab::trainer
