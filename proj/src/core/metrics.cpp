#include "metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>

#include "error.hpp"

namespace rlab::metrics {

using ad::Tensor;
using ad::Var;

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;
constexpr std::size_t kEvalChunk = 256;

Tensor rows_of(const Tensor& x, std::size_t begin, std::size_t end) {
    const std::size_t d = x.cols();
    return Tensor({end - begin, d}, std::vector<double>(x.data.begin() + begin * d,
                                                        x.data.begin() + end * d));
}

}  // namespace

// --- accuracy matrix -------------------------------------------------------

AccuracyMatrix::AccuracyMatrix(std::size_t num_tasks) : rows_(num_tasks) {
    for (std::size_t t = 0; t < num_tasks; ++t) rows_[t].resize(t + 1);
}

void AccuracyMatrix::set(std::size_t trained, std::size_t evaluated, double accuracy) {
    require(trained < rows_.size() && evaluated <= trained, ErrorKind::Contract,
            "accuracy entry (" + std::to_string(trained) + ", " + std::to_string(evaluated) +
                ") outside the lower triangle");
    require(accuracy >= 0.0 && accuracy <= 1.0, ErrorKind::Domain, "accuracy outside [0, 1]");
    rows_[trained][evaluated] = accuracy;
}

bool AccuracyMatrix::defined(std::size_t trained, std::size_t evaluated) const {
    return trained < rows_.size() && evaluated <= trained && rows_[trained][evaluated].has_value();
}

double AccuracyMatrix::at(std::size_t trained, std::size_t evaluated) const {
    require(defined(trained, evaluated), ErrorKind::Contract,
            "accuracy entry (" + std::to_string(trained) + ", " + std::to_string(evaluated) +
                ") is not defined");
    return *rows_[trained][evaluated];
}

std::optional<double> retention_ratio(double initial, double final) {
    if (initial == 0.0) return std::nullopt;
    return final / initial;
}

double forgetting_score(double initial, double final) { return initial - final; }

std::vector<TaskMetrics> task_metrics(const AccuracyMatrix& matrix) {
    std::vector<TaskMetrics> out;
    for (std::size_t e = 0; e < matrix.num_tasks(); ++e) {
        TaskMetrics m;
        m.task = e + 1;
        m.initial_accuracy = matrix.initial(e);
        m.final_accuracy = matrix.final(e);
        m.retention = retention_ratio(m.initial_accuracy, m.final_accuracy);
        m.forgetting = forgetting_score(m.initial_accuracy, m.final_accuracy);
        out.push_back(m);
    }
    return out;
}

// --- distributions ---------------------------------------------------------

double percentile(std::span<const double> sorted, double q) {
    require(!sorted.empty(), ErrorKind::Data, "percentile of empty sample");
    if (sorted.size() == 1) return sorted[0];
    const double pos = q / 100.0 * static_cast<double>(sorted.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

Histogram freedman_diaconis_histogram(std::span<const double> values, std::size_t max_bins) {
    require(!values.empty(), ErrorKind::Data, "histogram of empty sample");
    std::vector<double> sorted(values.begin(), values.end());
    std::sort(sorted.begin(), sorted.end());
    const double lo = sorted.front(), hi = sorted.back();
    Histogram h;
    std::size_t bins = 1;
    if (hi > lo) {
        const double iqr = percentile(sorted, 75.0) - percentile(sorted, 25.0);
        const double width = 2.0 * iqr / std::cbrt(static_cast<double>(sorted.size()));
        bins = width > 0.0 ? static_cast<std::size_t>(std::ceil((hi - lo) / width)) : max_bins;
        bins = std::clamp<std::size_t>(bins, 1, max_bins);
    }
    const double span = hi > lo ? hi - lo : 1.0;
    for (std::size_t b = 0; b <= bins; ++b)
        h.edges.push_back(lo + span * static_cast<double>(b) / static_cast<double>(bins));
    h.counts.assign(bins, 0);
    for (double v : sorted) {
        auto b = static_cast<std::size_t>((v - lo) / span * static_cast<double>(bins));
        h.counts[std::min(b, bins - 1)]++;
    }
    return h;
}

DistributionSummary summarize(std::vector<double> values) {
    require(!values.empty(), ErrorKind::Data, "cannot summarise an empty distribution");
    DistributionSummary s;
    std::vector<double> sorted = values;
    std::sort(sorted.begin(), sorted.end());
    // Sum in sorted order so the mean does not depend on row order.
    double total = 0.0;
    for (double v : sorted) total += v;
    s.mean = total / static_cast<double>(sorted.size());
    s.median = percentile(sorted, 50.0);
    s.p5 = percentile(sorted, 5.0);
    s.p95 = percentile(sorted, 95.0);
    s.histogram = freedman_diaconis_histogram(sorted);
    s.values = std::move(values);
    return s;
}

// --- accuracy --------------------------------------------------------------

double accuracy_from_logits(const Tensor& logits, std::span<const int> labels,
                            std::span<const int> active_classes) {
    require(!labels.empty(), ErrorKind::Data, "accuracy on an empty test set");
    require(logits.rows() == labels.size(), ErrorKind::Dimension, "logit/label count mismatch");
    require(!active_classes.empty(), ErrorKind::Contract, "no active classes");
    std::vector<int> active(active_classes.begin(), active_classes.end());
    std::sort(active.begin(), active.end());
    for (int l : labels) {
        require(std::binary_search(active.begin(), active.end(), l), ErrorKind::Contract,
                "test label " + std::to_string(l) + " is not an active class");
    }
    const std::size_t n = logits.cols();
    std::size_t correct = 0;
    for (std::size_t r = 0; r < labels.size(); ++r) {
        int best = active.front();
        double best_value = logits.data[r * n + best];
        for (int c : active) {
            const double v = logits.data[r * n + c];
            if (v > best_value) {
                best = c;
                best_value = v;
            }
        }
        if (best == labels[r]) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(labels.size());
}

double evaluate_accuracy(model::ReplayModel& model, const data::Dataset& test_set,
                         std::span<const int> active_classes) {
    require(test_set.size() > 0, ErrorKind::Data, "accuracy on an empty test set");
    const std::size_t n = test_set.size();
    Tensor logits({n, model.config().num_classes});
    for (std::size_t begin = 0; begin < n; begin += kEvalChunk) {
        const std::size_t end = std::min(n, begin + kEvalChunk);
        ad::Tape tape;
        auto bound = model.bind(tape, false);
        auto enc = model.encode(bound, tape.constant(rows_of(test_set.inputs, begin, end)));
        const auto& l = enc.logits.value().data;
        std::copy(l.begin(), l.end(), logits.data.begin() + begin * logits.cols());
    }
    return accuracy_from_logits(logits, test_set.labels, active_classes);
}

// --- generative diagnostics ------------------------------------------------

Var reconstruct_at(const model::ReplayModel& model, const model::ReplayModel::Bound& bound, Var z,
                   std::span<const int> task_ids, const ReconstructionPath& path) {
    if (!path.via_input || path.level == 0) return model.decode(bound, z, task_ids, path.level);
    const Var x = model.decode(bound, z, task_ids, 0);
    return model.propagate_up(bound, x, 0, path.level);
}

std::vector<double> observation_log_likelihood(const Tensor& reconstruction, const Tensor& target,
                                               std::size_t level,
                                               losses::ReconstructionKind input_kind) {
    require(reconstruction.shape == target.shape, ErrorKind::Dimension,
            "observation likelihood: shape mismatch");
    const std::size_t m = target.rows(), d = target.cols();
    std::vector<double> out(m, 0.0);
    const bool bernoulli = level == 0 && input_kind == losses::ReconstructionKind::Bernoulli;
    for (std::size_t r = 0; r < m; ++r) {
        double acc = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            const double y = reconstruction.data[r * d + j];
            const double t = target.data[r * d + j];
            if (bernoulli) {
                const double p = std::clamp(y, 1e-12, 1.0 - 1e-12);
                acc += t * std::log(p) + (1.0 - t) * std::log(1.0 - p);
            } else {
                acc += -0.5 * (kLog2Pi + (y - t) * (y - t));
            }
        }
        out[r] = acc;
    }
    return out;
}

std::vector<double> importance_log_likelihood(const Tensor& mu, const Tensor& logvar,
                                              const LogJointFn& log_joint, std::size_t samples,
                                              model::Rng& rng) {
    require(samples >= 1, ErrorKind::Contract, "importance sampling needs at least one sample");
    require(mu.shape == logvar.shape, ErrorKind::Dimension, "mu/logvar shapes differ");
    const std::size_t m = mu.rows(), d = mu.cols();
    std::normal_distribution<double> normal(0.0, 1.0);
    // Running log-sum-exp per row.
    std::vector<double> running_max(m, -std::numeric_limits<double>::infinity());
    std::vector<double> running_sum(m, 0.0);
    for (std::size_t s = 0; s < samples; ++s) {
        Tensor z(mu.shape);
        std::vector<double> log_q(m, 0.0);
        for (std::size_t r = 0; r < m; ++r) {
            for (std::size_t j = 0; j < d; ++j) {
                const double e = normal(rng);
                const double lv = logvar.data[r * d + j];
                z.data[r * d + j] = mu.data[r * d + j] + std::exp(0.5 * lv) * e;
                log_q[r] += -0.5 * (kLog2Pi + lv + e * e);
            }
        }
        const auto joint = log_joint(z);
        require(joint.size() == m, ErrorKind::Dimension, "log_joint returned wrong row count");
        for (std::size_t r = 0; r < m; ++r) {
            const double w = joint[r] - log_q[r];
            if (w > running_max[r]) {
                running_sum[r] = running_sum[r] * std::exp(running_max[r] - w) + 1.0;
                running_max[r] = w;
            } else {
                running_sum[r] += std::exp(w - running_max[r]);
            }
        }
    }
    std::vector<double> out(m);
    for (std::size_t r = 0; r < m; ++r)
        out[r] = running_max[r] + std::log(running_sum[r]) - std::log(static_cast<double>(samples));
    return out;
}

std::vector<double> estimate_log_likelihood(model::ReplayModel& model, const Tensor& x,
                                            std::span<const int> task_ids,
                                            const ReconstructionPath& path, std::size_t samples,
                                            model::Rng& rng) {
    require(!model.prior().seen_classes.empty(), ErrorKind::Contract,
            "log-likelihood needs a prior with seen classes");
    const std::size_t n = x.rows();
    require(task_ids.empty() || task_ids.size() == n, ErrorKind::Dimension,
            "task id count does not match rows");
    std::vector<double> out;
    out.reserve(n);
    for (std::size_t begin = 0; begin < n; begin += kEvalChunk) {
        const std::size_t end = std::min(n, begin + kEvalChunk);
        const auto chunk_tasks =
            task_ids.empty() ? std::span<const int>{} : task_ids.subspan(begin, end - begin);
        Tensor target, mu, logvar;
        {
            ad::Tape tape;
            auto bound = model.bind(tape, false);
            const Var input = tape.constant(rows_of(x, begin, end));
            auto enc = model.encode(bound, input);
            target = enc.levels[path.level].value();
            mu = enc.latent.mu.value();
            logvar = enc.latent.logvar.value();
        }
        auto log_joint = [&](const Tensor& z) {
            ad::Tape tape;
            auto bound = model.bind(tape, false);
            const Var zv = tape.constant(z);
            const Var recon = reconstruct_at(model, bound, zv, chunk_tasks, path);
            auto ll = observation_log_likelihood(recon.value(), target, path.level, path.input_kind);
            const Var lp = losses::mixture_log_density(zv, bound.prior_means, bound.prior_logvars,
                                                       model.prior().seen_classes);
            for (std::size_t r = 0; r < ll.size(); ++r) ll[r] += lp.value().data[r];
            return ll;
        };
        const auto chunk = importance_log_likelihood(mu, logvar, log_joint, samples, rng);
        out.insert(out.end(), chunk.begin(), chunk.end());
    }
    return out;
}

std::vector<double> reconstruction_errors(model::ReplayModel& model, const Tensor& x,
                                          std::span<const int> task_ids,
                                          const ReconstructionPath& path) {
    const std::size_t n = x.rows();
    require(task_ids.empty() || task_ids.size() == n, ErrorKind::Dimension,
            "task id count does not match rows");
    const auto kind = path.level == 0 ? path.input_kind : losses::ReconstructionKind::Mse;
    std::vector<double> out;
    out.reserve(n);
    for (std::size_t begin = 0; begin < n; begin += kEvalChunk) {
        const std::size_t end = std::min(n, begin + kEvalChunk);
        const auto chunk_tasks =
            task_ids.empty() ? std::span<const int>{} : task_ids.subspan(begin, end - begin);
        ad::Tape tape;
        auto bound = model.bind(tape, false);
        auto enc = model.encode(bound, tape.constant(rows_of(x, begin, end)));
        const Var recon = reconstruct_at(model, bound, enc.latent.mu, chunk_tasks, path);
        const Var err = losses::reconstruction_per_sample(recon, enc.levels[path.level], kind);
        out.insert(out.end(), err.value().data.begin(), err.value().data.end());
    }
    return out;
}

DistributionSummary reconstruction_error_distribution(model::ReplayModel& model, const Tensor& x,
                                                      std::span<const int> task_ids,
                                                      const ReconstructionPath& path) {
    return summarize(reconstruction_errors(model, x, task_ids, path));
}

// --- embeddings ------------------------------------------------------------

EmbeddingDump EmbeddingDump::rows_for_task(int task) const {
    EmbeddingDump out;
    out.layer = layer;
    const std::size_t d = activations.cols();
    std::vector<double> rows;
    for (std::size_t i = 0; i < size(); ++i) {
        if (tasks[i] != task) continue;
        out.tasks.push_back(tasks[i]);
        out.classes.push_back(classes[i]);
        rows.insert(rows.end(), activations.data.begin() + i * d,
                    activations.data.begin() + (i + 1) * d);
    }
    if (!out.classes.empty()) out.activations = Tensor({out.classes.size(), d}, std::move(rows));
    return out;
}

EmbeddingDump extract_embeddings(model::ReplayModel& model, const data::Dataset& dataset,
                                 std::size_t layer_index, std::span<const int> class_task) {
    const auto& cfg = model.config();
    require(layer_index < cfg.fc_dims.size(), ErrorKind::Contract,
            "embedding layer " + std::to_string(layer_index) + " does not exist");
    require(dataset.size() > 0, ErrorKind::Data, "embedding extraction on an empty dataset");
    const std::size_t n = dataset.size(), width = cfg.fc_dims[layer_index];
    EmbeddingDump dump;
    dump.layer = "fcE.fcLayer" + std::to_string(layer_index + 1) + ".linear";
    dump.activations = Tensor({n, width});
    for (std::size_t begin = 0; begin < n; begin += kEvalChunk) {
        const std::size_t end = std::min(n, begin + kEvalChunk);
        ad::Tape tape;
        auto bound = model.bind(tape, false);
        const Var h = model.propagate_up(bound, tape.constant(rows_of(dataset.inputs, begin, end)),
                                         0, cfg.fc_level(layer_index));
        std::copy(h.value().data.begin(), h.value().data.end(),
                  dump.activations.data.begin() + begin * width);
    }
    for (int label : dataset.labels) {
        dump.classes.push_back(label);
        const bool mapped = label >= 0 && static_cast<std::size_t>(label) < class_task.size();
        dump.tasks.push_back(mapped ? class_task[label] : -1);
    }
    return dump;
}

// --- silhouette ------------------------------------------------------------

std::vector<double> silhouette_samples(const Tensor& points, std::span<const int> labels) {
    const std::size_t n = points.rows(), d = points.cols();
    require(labels.size() == n, ErrorKind::Dimension, "silhouette: label count mismatch");
    std::map<int, std::size_t> cluster_size;
    for (int l : labels) cluster_size[l]++;
    require(cluster_size.size() >= 2, ErrorKind::Contract,
            "silhouette needs at least two distinct labels");
    std::map<int, std::size_t> cluster_index;
    for (auto& [label, _] : cluster_size) cluster_index.emplace(label, cluster_index.size());
    const std::size_t k = cluster_size.size();
    std::vector<std::size_t> sizes(k);
    for (auto& [label, idx] : cluster_index) sizes[idx] = cluster_size[label];

    std::vector<double> s(n, 0.0);
    std::vector<double> dist_sum(k);
    for (std::size_t i = 0; i < n; ++i) {
        std::fill(dist_sum.begin(), dist_sum.end(), 0.0);
        const double* pi = points.data.data() + i * d;
        for (std::size_t j = 0; j < n; ++j) {
            if (j == i) continue;
            const double* pj = points.data.data() + j * d;
            double acc = 0.0;
            for (std::size_t c = 0; c < d; ++c) acc += (pi[c] - pj[c]) * (pi[c] - pj[c]);
            dist_sum[cluster_index[labels[j]]] += std::sqrt(acc);
        }
        const std::size_t own = cluster_index[labels[i]];
        if (sizes[own] < 2) continue;
        const double a = dist_sum[own] / static_cast<double>(sizes[own] - 1);
        double b = std::numeric_limits<double>::infinity();
        for (std::size_t c = 0; c < k; ++c) {
            if (c != own) b = std::min(b, dist_sum[c] / static_cast<double>(sizes[c]));
        }
        const double denom = std::max(a, b);
        s[i] = denom > 0.0 ? (b - a) / denom : 0.0;
    }
    return s;
}

double silhouette_score(const Tensor& points, std::span<const int> labels) {
    auto s = silhouette_samples(points, labels);
    std::sort(s.begin(), s.end());
    double total = 0.0;
    for (double v : s) total += v;
    return total / static_cast<double>(s.size());
}

double silhouette_score(const EmbeddingDump& dump, SilhouetteKey key) {
    return silhouette_score(dump.activations, key == SilhouetteKey::Class ? dump.classes : dump.tasks);
}

// --- PCA -------------------------------------------------------------------

namespace {

// Dominant eigenvector of a symmetric matrix by power iteration, kept
// orthogonal to `against` when given.
std::vector<double> power_iteration(const std::vector<double>& cov, std::size_t d,
                                    const std::vector<double>* against) {
    auto orthogonalize = [&](std::vector<double>& v) {
        if (!against) return;
        double dot = 0.0;
        for (std::size_t j = 0; j < d; ++j) dot += v[j] * (*against)[j];
        for (std::size_t j = 0; j < d; ++j) v[j] -= dot * (*against)[j];
    };
    auto normalize = [&](std::vector<double>& v) {
        double norm = 0.0;
        for (double x : v) norm += x * x;
        norm = std::sqrt(norm);
        if (norm == 0.0) return false;
        for (double& x : v) x /= norm;
        return true;
    };
    // Start from the covariance row with the largest norm: it lies in the
    // matrix range, so it cannot be orthogonal to every leading direction.
    std::vector<double> v(d, 0.0);
    double best = -1.0;
    for (std::size_t r = 0; r < d; ++r) {
        std::vector<double> row(cov.begin() + r * d, cov.begin() + (r + 1) * d);
        orthogonalize(row);
        double norm = 0.0;
        for (double x : row) norm += x * x;
        if (norm > best) {
            best = norm;
            v = row;
        }
    }
    if (!normalize(v)) return std::vector<double>(d, 0.0);
    std::vector<double> next(d);
    for (int iter = 0; iter < 1000; ++iter) {
        for (std::size_t r = 0; r < d; ++r) {
            double acc = 0.0;
            for (std::size_t c = 0; c < d; ++c) acc += cov[r * d + c] * v[c];
            next[r] = acc;
        }
        orthogonalize(next);
        if (!normalize(next)) return std::vector<double>(d, 0.0);
        double diff = 0.0;
        for (std::size_t j = 0; j < d; ++j) diff += (next[j] - v[j]) * (next[j] - v[j]);
        v.swap(next);
        if (std::sqrt(diff) < 1e-9) break;
    }
    return v;
}

double rayleigh(const std::vector<double>& cov, const std::vector<double>& v, std::size_t d) {
    double acc = 0.0;
    for (std::size_t r = 0; r < d; ++r)
        for (std::size_t c = 0; c < d; ++c) acc += v[r] * cov[r * d + c] * v[c];
    return acc;
}

void fix_sign(std::vector<double>& v) {
    std::size_t arg = 0;
    for (std::size_t j = 1; j < v.size(); ++j)
        if (std::abs(v[j]) > std::abs(v[arg])) arg = j;
    if (v[arg] < 0.0)
        for (double& x : v) x = -x;
}

}  // namespace

Projection pca_project_2d(const EmbeddingDump& dump) {
    const std::size_t n = dump.size();
    require(n >= 2, ErrorKind::Contract, "PCA needs at least two samples");
    const std::size_t d = dump.activations.cols();
    require(d >= 2, ErrorKind::Contract, "PCA needs dimensionality >= 2");
    const auto& x = dump.activations.data;

    std::vector<double> mean(d, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) mean[j] += x[i * d + j];
    for (double& m : mean) m /= static_cast<double>(n);
    std::vector<double> centred(n * d);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) centred[i * d + j] = x[i * d + j] - mean[j];
    std::vector<double> cov(d * d, 0.0);
    ad::gemm_tn(centred.data(), centred.data(), cov.data(), d, n, d, false);
    for (double& c : cov) c /= static_cast<double>(n - 1);

    Projection proj;
    proj.tasks = dump.tasks;
    proj.classes = dump.classes;
    auto v1 = power_iteration(cov, d, nullptr);
    const double lambda1 = rayleigh(cov, v1, d);
    std::vector<double> deflated = cov;
    for (std::size_t r = 0; r < d; ++r)
        for (std::size_t c = 0; c < d; ++c) deflated[r * d + c] -= lambda1 * v1[r] * v1[c];
    auto v2 = power_iteration(deflated, d, &v1);
    double lambda2 = rayleigh(cov, v2, d);
    const double scale = std::max(lambda1, std::numeric_limits<double>::min());
    if (lambda1 <= 0.0 || lambda2 <= 1e-10 * scale) {
        proj.rank_deficient = true;
        std::fill(v2.begin(), v2.end(), 0.0);
        lambda2 = 0.0;
    }
    fix_sign(v1);
    if (!proj.rank_deficient) fix_sign(v2);
    proj.explained_variance[0] = std::max(lambda1, 0.0);
    proj.explained_variance[1] = lambda2;
    proj.x.resize(n);
    proj.y.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        double px = 0.0, py = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            px += centred[i * d + j] * v1[j];
            py += centred[i * d + j] * v2[j];
        }
        proj.x[i] = px;
        proj.y[i] = py;
    }
    return proj;
}

}  // namespace rlab::metrics
