// Acceptance suite. Prints one PASS/FAIL line per criterion; pass criterion
// numbers as arguments to run a subset.
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "checkpoint.hpp"
#include "config.hpp"
#include "data.hpp"
#include "fd_check.hpp"
#include "losses.hpp"
#include "metrics.hpp"
#include "reference_paths.hpp"
#include "runner.hpp"
#include "trainer.hpp"

using namespace rlab;
using ad::Tape;
using ad::Tensor;
using ad::Var;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = true;
    std::string detail;

    void require(bool ok, const std::string& what) {
        if (!ok) {
            pass = false;
            if (!detail.empty()) detail += "; ";
            detail += what;
        }
    }
};

std::string fmt(double v, int digits = 4) {
    std::ostringstream s;
    s.precision(digits);
    s << v;
    return s.str();
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

fs::path scratch(const std::string& name) {
    auto p = fs::temp_directory_path() / "rlab_acceptance" / name;
    fs::remove_all(p);
    return p;
}

std::size_t workers() { return std::max(1u, std::thread::hardware_concurrency()); }

config::ExperimentConfig default_config() {
    return config::load_config(fs::path(RLAB_SOURCE_DIR) / "configs" / "synthetic_blobs.json");
}

void progress(const std::string& m) { std::cerr << "  " << m << "\n"; }

// --- 1-3: ablation matrix over three seeds ----------------------------------

json& default_matrix() {
    static json summary;
    if (summary.is_null()) {
        auto cfg = default_config();
        cfg.seeds = {0, 1, 2};
        cfg.output_dir = scratch("matrix").string();
        cfg.checkpoints = false;
        cfg.workers = workers();
        runner::RunnerOptions opt;
        opt.log = [](const std::string& m) {
            if (m.find("finished") != std::string::npos || m.find("failed") != std::string::npos) progress(m);
        };
        auto report = runner::run_matrix(cfg, opt);
        summary = json::parse(slurp(fs::path(cfg.output_dir) / "summary.json"));
        summary["__all_ok"] = report.all_ok();
    }
    return summary;
}

double seed_metric(const json& s, const std::string& variant, int seed, const std::string& key) {
    const auto& v = s.at(variant).at("per_seed").at(std::to_string(seed)).at(key);
    return v.is_number() ? v.get<double>() : std::nan("");
}

Outcome ordering(const std::vector<std::tuple<std::string, std::string, std::string, bool>>& checks) {
    Outcome o;
    const json& s = default_matrix();
    o.require(s.at("__all_ok").get<bool>(), "some runs failed");
    for (const auto& [key, a, b, greater] : checks) {
        int holds = 0;
        std::string values;
        for (int seed = 0; seed < 3; ++seed) {
            const double va = seed_metric(s, a, seed, key), vb = seed_metric(s, b, seed, key);
            const bool ok = greater ? va > vb : va < vb;
            holds += ok;
            values += " " + fmt(va) + (greater ? ">" : "<") + fmt(vb) + (ok ? "" : "(x)");
        }
        const std::string line = key + " " + a + (greater ? " > " : " < ") + b + " in " + std::to_string(holds) + "/3:" + values;
        if (!o.detail.empty() && o.pass) o.detail += "; ";
        if (holds >= 2) {
            if (o.pass) o.detail += line;
        } else {
            o.require(false, line);
        }
    }
    return o;
}

Outcome criterion1() {
    return ordering({{"mean_retention_ratio", "BIR+SI(w/ IR)", "BIR(w/o IR)", true},
                     {"mean_forgetting_score", "BIR+SI(w/ IR)", "BIR(w/o IR)", false}});
}

Outcome criterion2() {
    Outcome o;
    const json& s = default_matrix();
    int holds = 0;
    for (int seed = 0; seed < 3; ++seed) {
        const double a = seed_metric(s, "BIR(w/o IR)", seed, "mean_initial_accuracy");
        const double b = seed_metric(s, "BIR+SI(w/ IR)", seed, "mean_initial_accuracy");
        holds += a >= b;
        o.detail += (seed ? " " : "") + fmt(a) + ">=" + fmt(b);
    }
    o.detail = "initial BIR(w/o IR) >= BIR+SI(w/ IR) in " + std::to_string(holds) + "/3: " + o.detail;
    o.pass = holds >= 2;
    return o;
}

Outcome criterion3() {
    return ordering({{"mean_log_likelihood", "BIR(w/ IR)", "BIR(w/o IR)", true},
                     {"mean_reconstruction_error", "BIR(w/ IR)", "BIR(w/o IR)", false}});
}

// --- 4: silhouette sanity ------------------------------------------------------

constexpr double kOverlapSpread = 1.0;

Outcome criterion4() {
    Outcome o;
    auto cfg = default_config();
    cfg.dataset.spread = kOverlapSpread;
    cfg.seeds = {0};
    cfg.output_dir = scratch("overlap").string();
    cfg.checkpoints = false;
    cfg.workers = workers();
    runner::RunnerOptions opt;
    opt.keep_results = true;
    auto report = runner::run_matrix(cfg, opt);
    double lo = 1.0, hi = -1.0;
    for (const auto& run : report.runs) {
        o.require(run.ok, run.variant + " failed: " + run.error);
        if (!run.ok) continue;
        for (const auto& t : run.result->tasks) {
            o.require(t.silhouette_defined, run.variant + " has an undefined task silhouette");
            lo = std::min(lo, t.silhouette_class);
            hi = std::max(hi, t.silhouette_class);
            o.require(t.silhouette_class >= -0.1 && t.silhouette_class <= 0.15,
                      run.variant + " task silhouette " + fmt(t.silhouette_class));
        }
    }
    auto blobs = data::make_synthetic_blobs(10, 64, 100, 0.01, 2);
    const double raw = metrics::silhouette_score(blobs.train.inputs, blobs.train.labels);
    o.require(raw > 0.9, "separated raw silhouette " + fmt(raw));
    if (o.pass)
        o.detail = "overlapping (spread " + fmt(kOverlapSpread) + ") task silhouettes in [" + fmt(lo) + ", " +
                   fmt(hi) + "]; separated raw " + fmt(raw);
    return o;
}

// --- 5: metric identities ----------------------------------------------------

Outcome criterion5() {
    Outcome o;
    const std::vector<std::vector<double>> a{
        {0.91}, {0.62, 0.88}, {0.40, 0.71, 0.93}, {0.33, 0.52, 0.64, 0.95}, {0.10, 0.47, 0.29, 0.81, 0.90}};
    metrics::AccuracyMatrix m(5);
    for (std::size_t t = 0; t < 5; ++t)
        for (std::size_t e = 0; e <= t; ++e) m.set(t, e, a[t][e]);
    const auto tm = metrics::task_metrics(m);
    o.require(tm.size() == 5, "wrong task count");
    double worst = 0.0;
    for (std::size_t k = 0; k < tm.size(); ++k) {
        const double init = a[k][k], fin = a[4][k];
        o.require(tm[k].initial_accuracy == init && tm[k].final_accuracy == fin, "initial/final mismatch");
        o.require(tm[k].retention.has_value(), "retention undefined");
        if (!tm[k].retention) continue;
        worst = std::max({worst, std::abs(*tm[k].retention - fin / init), std::abs(tm[k].forgetting - (init - fin)),
                          std::abs(tm[k].forgetting - init * (1.0 - *tm[k].retention))});
    }
    o.require(worst <= 1e-12, "identity error " + fmt(worst));
    o.require(!metrics::retention_ratio(0.0, 0.2).has_value(), "retention with zero initial accuracy");
    if (o.pass) o.detail = "max identity error " + fmt(worst, 3);
    return o;
}

// --- 6: gradient suite -------------------------------------------------------

Var weighted_sum(Tape& t, Var out) {
    const auto shape = out.value().shape;
    Tensor w(shape);
    for (std::size_t i = 0; i < w.size(); ++i) w.data[i] = std::sin(1.0 + static_cast<double>(i));
    return ad::sum(ad::mul(out, t.constant(w)));
}

Outcome criterion6() {
    Outcome o;
    std::mt19937_64 rng(2024);
    Tensor A = testing::random_tensor({6, 5}, rng), B = testing::random_tensor({6, 5}, rng);
    Tensor W = testing::random_tensor({5, 4}, rng), b4 = testing::random_tensor({4}, rng);
    Tensor b5 = testing::random_tensor({5}, rng), P = testing::random_tensor({6, 5}, rng, 0.5, 2.0);
    Tensor S = Tensor::scalar(0.7);
    Tensor C = testing::random_tensor({3, 5}, rng);
    const std::vector<int> cols{0, 2, 3}, rows{5, 0, 2, 2};

    struct Check {
        std::string name;
        testing::LossFn fn;
        std::vector<Tensor*> params;
    };
    std::vector<Check> checks{
        {"matmul", [&](Tape& t) { return weighted_sum(t, ad::matmul(t.leaf(A), t.leaf(W))); }, {&A, &W}},
        {"add_bias", [&](Tape& t) { return weighted_sum(t, ad::add_bias(t.leaf(A), t.leaf(b5))); }, {&A, &b5}},
        {"affine", [&](Tape& t) { return weighted_sum(t, ad::affine(t.leaf(A), t.leaf(W), t.leaf(b4))); }, {&A, &W, &b4}},
        {"add", [&](Tape& t) { return weighted_sum(t, ad::add(t.leaf(A), t.leaf(B))); }, {&A, &B}},
        {"sub", [&](Tape& t) { return weighted_sum(t, ad::sub(t.leaf(A), t.leaf(B))); }, {&A, &B}},
        {"mul", [&](Tape& t) { return weighted_sum(t, ad::mul(t.leaf(A), t.leaf(B))); }, {&A, &B}},
        {"mul scalar", [&](Tape& t) { return weighted_sum(t, ad::mul(t.leaf(A), t.leaf(S))); }, {&A, &S}},
        {"scale", [&](Tape& t) { return weighted_sum(t, ad::scale(t.leaf(A), -1.7)); }, {&A}},
        {"add_scalar", [&](Tape& t) { return weighted_sum(t, ad::square(ad::add_scalar(t.leaf(A), 0.3))); }, {&A}},
        {"relu", [&](Tape& t) { return weighted_sum(t, ad::relu(t.leaf(A))); }, {&A}},
        {"sigmoid", [&](Tape& t) { return weighted_sum(t, ad::sigmoid(t.leaf(A))); }, {&A}},
        {"exp", [&](Tape& t) { return weighted_sum(t, ad::exp(t.leaf(A))); }, {&A}},
        {"log", [&](Tape& t) { return weighted_sum(t, ad::log(t.leaf(P))); }, {&P}},
        {"square", [&](Tape& t) { return weighted_sum(t, ad::square(t.leaf(A))); }, {&A}},
        {"clamp", [&](Tape& t) { return weighted_sum(t, ad::clamp(t.leaf(A), -0.5, 0.5)); }, {&A}},
        {"sum", [&](Tape& t) { return ad::sum(ad::mul(t.leaf(A), t.leaf(B))); }, {&A, &B}},
        {"mean", [&](Tape& t) { return ad::mean(ad::square(t.leaf(A))); }, {&A}},
        {"row_sum", [&](Tape& t) { return weighted_sum(t, ad::row_sum(ad::square(t.leaf(A)))); }, {&A}},
        {"logsumexp_rows", [&](Tape& t) { return weighted_sum(t, ad::logsumexp_rows(t.leaf(A))); }, {&A}},
        {"softmax", [&](Tape& t) { return weighted_sum(t, ad::softmax(t.leaf(A))); }, {&A}},
        {"softmax T=3", [&](Tape& t) { return weighted_sum(t, ad::softmax(t.leaf(A), 3.0)); }, {&A}},
        {"log_softmax", [&](Tape& t) { return weighted_sum(t, ad::log_softmax(t.leaf(A), 2.0)); }, {&A}},
        {"select_columns", [&](Tape& t) { return weighted_sum(t, ad::square(ad::select_columns(t.leaf(A), cols))); }, {&A}},
        {"gather_rows", [&](Tape& t) { return weighted_sum(t, ad::square(ad::gather_rows(t.leaf(A), rows))); }, {&A}},
        {"concat_rows", [&](Tape& t) { return weighted_sum(t, ad::square(ad::concat_rows(t.leaf(A), t.leaf(C)))); }, {&A, &C}},
    };

    // Losses.
    Tensor mu = testing::random_tensor({6, 5}, rng), lv = testing::random_tensor({6, 5}, rng, -1.0, 0.5);
    Tensor pm = testing::random_tensor({4, 5}, rng), plv = testing::random_tensor({4, 5}, rng, -0.5, 0.5);
    Tensor prob = testing::random_tensor({6, 5}, rng, 0.05, 0.95), target = testing::random_tensor({6, 5}, rng, 0.0, 1.0);
    Tensor noise = testing::random_tensor({6, 5}, rng);
    const std::vector<int> labels{0, 1, 3, 3, 1, 0}, active{0, 1, 3}, seen{0, 1, 3};
    Tensor teacher = ad::softmax_rows(testing::random_tensor({6, 5}, rng, -2.0, 2.0));
    auto si = losses::si_init(std::vector<double>(30 + 20, 0.1), 0.1, 1.3);
    for (std::size_t k = 0; k < si.importance.size(); ++k) si.importance[k] = 0.5 + 0.1 * static_cast<double>(k % 7);
    checks.push_back({"reconstruction mse", [&](Tape& t) {
                          return losses::reconstruction_loss(t.leaf(A), t.constant(target), losses::ReconstructionKind::Mse);
                      }, {&A}});
    checks.push_back({"reconstruction bernoulli", [&](Tape& t) {
                          return losses::reconstruction_loss(t.leaf(prob), t.constant(target),
                                                             losses::ReconstructionKind::Bernoulli);
                      }, {&prob}});
    checks.push_back({"kl standard normal", [&](Tape& t) {
                          return losses::kl_standard_normal({t.leaf(mu), t.leaf(lv)});
                      }, {&mu, &lv}});
    checks.push_back({"kl class modes", [&](Tape& t) {
                          return losses::kl_class_modes({t.leaf(mu), t.leaf(lv)}, t.leaf(pm), t.leaf(plv), labels);
                      }, {&mu, &lv, &pm, &plv}});
    checks.push_back({"kl mc gmm", [&](Tape& t) {
                          model::Rng r(9);
                          return losses::kl_mc_gmm({t.leaf(mu), t.leaf(lv)}, t.leaf(pm), t.leaf(plv), seen, 3, r);
                      }, {&mu, &lv, &pm, &plv}});
    checks.push_back({"mixture log density", [&](Tape& t) {
                          return weighted_sum(t, losses::mixture_log_density(t.leaf(A), t.leaf(pm), t.leaf(plv), seen));
                      }, {&A, &pm, &plv}});
    checks.push_back({"posterior log density", [&](Tape& t) {
                          return weighted_sum(t, losses::posterior_log_density(t.leaf(lv), noise));
                      }, {&lv}});
    checks.push_back({"classification", [&](Tape& t) {
                          return losses::classification_loss(t.leaf(A), labels, active);
                      }, {&A}});
    checks.push_back({"distillation", [&](Tape& t) {
                          return losses::distillation_loss(t.leaf(A), teacher, 2.0);
                      }, {&A}});
    checks.push_back({"si penalty", [&](Tape& t) {
                          const std::vector<Var> leaves{t.leaf(A), t.leaf(W)};
                          return losses::si_penalty(si, leaves);
                      }, {&A, &W}});

    // Whole network, gated decoder, internal replay level and input level.
    model::NetworkConfig nc;
    nc.input_dim = 12;
    nc.perceptual_dims = {10};
    nc.fc_dims = {9, 8};
    nc.latent_dim = 4;
    nc.num_classes = 4;
    nc.num_tasks = 2;
    nc.seed = 3;
    model::ReplayModel net(nc);
    net.prior().add_seen(std::vector<int>{0, 1, 2, 3});
    Tensor x = testing::random_tensor({8, 12}, rng), eps = testing::random_tensor({8, 4}, rng);
    const std::vector<int> ylab{0, 1, 2, 3, 0, 1, 2, 3}, yact{0, 1, 2, 3}, tasks{0, 0, 1, 1, 0, 1, 0, 1};
    Tensor soft = ad::softmax_rows(testing::random_tensor({8, 4}, rng, -2.0, 2.0));
    for (std::size_t level : {std::size_t{0}, std::size_t{1}}) {
        checks.push_back({"network level " + std::to_string(level), [&, level](Tape& t) {
                              auto bound = net.bind(t, true);
                              auto enc = net.encode(bound, t.constant(x), 0);
                              Var z = model::reparameterize(enc.latent, t.constant(eps));
                              Var recon = net.decode(bound, z, tasks, level);
                              Var rec = losses::reconstruction_loss(recon, enc.levels[level], losses::ReconstructionKind::Mse);
                              Var kl = losses::kl_class_modes(enc.latent, bound.prior_means, bound.prior_logvars, ylab);
                              Var ce = losses::classification_loss(enc.logits, ylab, yact);
                              Var kd = losses::distillation_loss(enc.logits, soft, 2.0);
                              return ad::add(ad::add(rec, kl), ad::add(ce, kd));
                          }, net.trainable_parameters()});
    }

    double worst = 0.0;
    std::size_t fewest = SIZE_MAX;
    for (auto& c : checks) {
        auto r = testing::finite_difference_check(c.fn, c.params, 40, 99);
        worst = std::max(worst, r.max_rel_err);
        fewest = std::min(fewest, r.checked);
        o.require(r.checked >= 25, c.name + " had only " + std::to_string(r.checked) + " probes");
        o.require(r.max_rel_err < 1e-4, c.name + " rel err " + fmt(r.max_rel_err));
    }
    if (o.pass)
        o.detail = std::to_string(checks.size()) + " checks, >= " + std::to_string(fewest) + " probes each, max rel err " +
                   fmt(worst, 3);
    return o;
}

// --- 7: oracle equivalences --------------------------------------------------

std::vector<double> naive_silhouette(const Tensor& x, const std::vector<int>& labels) {
    const std::size_t n = x.rows();
    const auto dist = [&](std::size_t i, std::size_t j) {
        double s = 0;
        for (std::size_t c = 0; c < x.cols(); ++c) s += (x.at(i, c) - x.at(j, c)) * (x.at(i, c) - x.at(j, c));
        return std::sqrt(s);
    };
    std::set<int> ids(labels.begin(), labels.end());
    std::vector<double> out(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t own = 0;
        for (std::size_t j = 0; j < n; ++j) own += labels[j] == labels[i];
        if (own < 2) continue;
        double a = 0;
        for (std::size_t j = 0; j < n; ++j)
            if (j != i && labels[j] == labels[i]) a += dist(i, j);
        a /= static_cast<double>(own - 1);
        double b = INFINITY;
        for (int k : ids) {
            if (k == labels[i]) continue;
            double s = 0;
            std::size_t m = 0;
            for (std::size_t j = 0; j < n; ++j)
                if (labels[j] == k) s += dist(i, j), ++m;
            b = std::min(b, s / static_cast<double>(m));
        }
        out[i] = (b - a) / std::max(a, b);
    }
    return out;
}

Outcome criterion7() {
    Outcome o;
    std::mt19937_64 rng(5);
    {
        Tensor mu = testing::random_tensor({4, 3}, rng), lv = testing::random_tensor({4, 3}, rng, -1, 0.5);
        model::GaussianMixturePrior prior;
        prior.means = Tensor({2, 3}, 0.0);
        prior.logvars = Tensor({2, 3}, 0.0);
        prior.add_seen(std::vector<int>{1});
        model::Rng mc(77);
        auto est = losses::kl_mc_gmm_estimate(mu, lv, prior, 10000, mc);
        Tape t;
        const double exact = losses::kl_standard_normal({t.constant(mu), t.constant(lv)}).item();
        const double z = std::abs(est.mean - exact) / est.standard_error;
        o.require(z < 3.0, "MC KL off by " + fmt(z) + " SE");
        o.detail = "MC KL within " + fmt(z, 2) + " SE";
    }
    {
        Tensor x = testing::random_tensor({30, 4}, rng);
        std::vector<int> labels(30);
        for (std::size_t i = 0; i < 30; ++i) labels[i] = static_cast<int>(i % 3);
        labels[29] = 7;
        o.require(metrics::silhouette_samples(x, labels) == naive_silhouette(x, labels), "silhouette differs from naive loop");
    }
    {
        std::vector<double> theta{3.0, -1.0}, naive_theta = theta, naive_omega{0.0, 0.0};
        auto st = losses::si_init(theta, 0.1, 1.0);
        const double lr = 0.05;
        for (int step = 0; step < 100; ++step) {
            const std::vector<double> g{3.0 * (theta[0] - 1.0), 1.0 * (theta[1] + 2.0)};
            std::vector<double> delta(2);
            for (int k = 0; k < 2; ++k) {
                const double before = theta[k];
                theta[k] -= lr * g[k];
                delta[k] = theta[k] - before;
            }
            losses::si_accumulate(st, g, delta);
            for (int k = 0; k < 2; ++k) {
                const double gk = k == 0 ? 3.0 * (naive_theta[0] - 1.0) : 1.0 * (naive_theta[1] + 2.0);
                const double prev = naive_theta[k];
                naive_theta[k] = prev - lr * gk;
                naive_omega[k] -= gk * (naive_theta[k] - prev);
            }
        }
        o.require(st.omega == naive_omega, "SI path integral differs from naive recomputation");
    }
    {
        Tensor x = testing::random_tensor({50, 5}, rng);
        for (std::size_t i = 0; i < 50; ++i) x.at(i, 0) *= 3.0, x.at(i, 2) *= 2.0;
        Eigen::MatrixXd m(50, 5);
        for (std::size_t i = 0; i < 50; ++i)
            for (std::size_t j = 0; j < 5; ++j) m(i, j) = x.at(i, j);
        Eigen::MatrixXd centred = m.rowwise() - m.colwise().mean();
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(centred.transpose() * centred / 49.0);
        metrics::EmbeddingDump d;
        d.activations = x;
        d.classes.assign(50, 0);
        d.tasks.assign(50, 0);
        auto p = metrics::pca_project_2d(d);
        const double err = std::max(std::abs(p.explained_variance[0] - es.eigenvalues()(4)),
                                    std::abs(p.explained_variance[1] - es.eigenvalues()(3)));
        o.require(err < 1e-6, "PCA variance error " + fmt(err));
        if (o.pass) o.detail += "; silhouette and SI exact; PCA variance error " + fmt(err, 3);
    }
    return o;
}

// --- 8: determinism ------------------------------------------------------------

std::vector<fs::path> csv_files(const fs::path& root) {
    std::vector<fs::path> out;
    for (const auto& e : fs::recursive_directory_iterator(root))
        if (e.path().extension() == ".csv") out.push_back(fs::relative(e.path(), root));
    std::sort(out.begin(), out.end());
    return out;
}

config::ExperimentConfig reduced_default(const std::string& out) {
    auto cfg = default_config();
    cfg.dataset.samples_per_class = 250;
    cfg.seeds = {0};
    cfg.output_dir = scratch(out).string();
    cfg.checkpoints = false;
    cfg.workers = workers();
    return cfg;
}

Outcome criterion8() {
    Outcome o;
    auto a = reduced_default("det_a"), b = reduced_default("det_b");
    b.workers = 1;
    o.require(runner::run_matrix(a).all_ok() && runner::run_matrix(b).all_ok(), "a run failed");
    runner::export_plot_data(a.output_dir);
    runner::export_plot_data(b.output_dir);
    const auto fa = csv_files(a.output_dir), fb = csv_files(b.output_dir);
    o.require(fa == fb && !fa.empty(), "different CSV sets");
    std::size_t same = 0;
    for (const auto& f : fa) {
        const bool eq = slurp(fs::path(a.output_dir) / f) == slurp(fs::path(b.output_dir) / f);
        same += eq;
        o.require(eq, f.string() + " differs");
    }
    if (o.pass) o.detail = std::to_string(same) + " metric CSVs byte-identical across two full runs";
    return o;
}

// --- 9: format round-trips -----------------------------------------------------

void put_be32(std::vector<unsigned char>& b, std::uint32_t v) {
    for (int s = 24; s >= 0; s -= 8) b.push_back(static_cast<unsigned char>(v >> s));
}

void write_bytes(const fs::path& p, const std::vector<unsigned char>& bytes) {
    std::ofstream out(p, std::ios::binary);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

Outcome criterion9() {
    Outcome o;
    const auto dir = scratch("formats");
    fs::create_directories(dir);
    {
        auto cfg = reduced_default("unused");
        model::NetworkConfig nc = trainer::resolve_network(cfg.network, cfg.trainer, cfg.variants[0].flags);
        model::ReplayModel m(nc);
        m.prior().add_seen(std::vector<int>{0, 1, 4});
        std::mt19937_64 rng(8);
        for (auto& p : m.named_parameters())
            for (auto& v : p.tensor->data) v += std::uniform_real_distribution<double>(-0.01, 0.01)(rng);
        model::save_checkpoint(m, dir / "model.bin");
        auto back = model::load_checkpoint(dir / "model.bin");
        const auto pa = m.named_parameters();
        const auto pb = back.named_parameters();
        bool same = pa.size() == pb.size();
        for (std::size_t i = 0; same && i < pa.size(); ++i)
            same = pa[i].name == pb[i].name && pa[i].tensor->shape == pb[i].tensor->shape &&
                   std::memcmp(pa[i].tensor->data.data(), pb[i].tensor->data.data(), pa[i].tensor->size() * sizeof(double)) == 0;
        o.require(same, "checkpoint parameters differ");
        o.require(back.prior().seen_classes == m.prior().seen_classes, "checkpoint seen classes differ");
        o.require(model::encode_checkpoint(back) == model::encode_checkpoint(m), "re-encoded checkpoint differs");
    }
    {
        std::vector<unsigned char> img, lab;
        put_be32(img, 0x803), put_be32(img, 2), put_be32(img, 2), put_be32(img, 3);
        for (unsigned char v : {0, 51, 102, 153, 204, 255, 255, 0, 0, 0, 0, 102}) img.push_back(v);
        put_be32(lab, 0x801), put_be32(lab, 2), lab.push_back(7), lab.push_back(2);
        write_bytes(dir / "img.idx", img);
        write_bytes(dir / "lab.idx", lab);
        auto ds = data::load_idx(dir / "img.idx", dir / "lab.idx");
        const std::vector<double> expect{0.0, 0.2, 0.4, 0.6, 0.8, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.4};
        bool ok = ds.labels == std::vector<int>{7, 2} && ds.inputs.shape == std::vector<std::size_t>{2, 6};
        for (std::size_t i = 0; ok && i < expect.size(); ++i) ok = ds.inputs.data[i] == static_cast<double>(img[16 + i]) / 255.0;
        o.require(ok, "IDX fixture decoded wrongly");
    }
    {
        std::vector<unsigned char> bytes;
        for (int r = 0; r < 2; ++r) {
            bytes.push_back(static_cast<unsigned char>(r));
            bytes.push_back(static_cast<unsigned char>(r == 0 ? 42 : 99));
            for (int i = 0; i < 3072; ++i) bytes.push_back(static_cast<unsigned char>((r * 40 + i * 7) % 256));
        }
        auto ds = data::decode_cifar100(bytes);
        bool ok = ds.labels == std::vector<int>{42, 99} && ds.dim() == 3072;
        for (std::size_t r = 0; ok && r < 2; ++r)
            for (std::size_t i = 0; ok && i < 3072; ++i) ok = ds.inputs.at(r, i) == static_cast<double>((r * 40 + i * 7) % 256) / 255.0;
        o.require(ok, "CIFAR-100 fixture decoded wrongly");
    }
    {
        auto cfg = default_config();
        const std::string text = config::serialize_config(cfg);
        o.require(config::serialize_config(config::parse_config_text(text)) == text, "config echo is not a fixed point");
    }
    if (o.pass) o.detail = "checkpoint bit-exact; IDX and CIFAR-100 fixtures exact; config echo fixed point";
    return o;
}

// --- 10: ablation factorization -------------------------------------------------

testing::Trace traced(const model::NetworkConfig& nc, const trainer::TrainerConfig& tc, const trainer::AblationFlags& f,
                      const data::DatasetPair& data) {
    testing::Trace tr;
    trainer::RunHooks hooks;
    hooks.on_task_end = [&](std::size_t, const model::ReplayModel& m) { tr.params.push_back(testing::snapshot(m)); };
    tr.result = trainer::run_experiment(nc, tc, f, data, hooks);
    return tr;
}

bool same_accuracy(const metrics::AccuracyMatrix& a, const metrics::AccuracyMatrix& b) {
    for (std::size_t t = 0; t < a.num_tasks(); ++t)
        for (std::size_t e = 0; e <= t; ++e) {
            const double x = a.at(t, e), y = b.at(t, e);
            if (std::memcmp(&x, &y, sizeof x) != 0) return false;
        }
    return true;
}

Outcome criterion10() {
    Outcome o;
    auto cfg = reduced_default("factor");
    const auto data = config::load_dataset(cfg);
    trainer::TrainerConfig tc = cfg.trainer;
    tc.seed = 11;

    trainer::AblationFlags off;
    off.replay = off.internal_replay = off.synaptic_intelligence = false;
    off.context_gating = off.conditional_replay = off.distillation = false;
    auto lib = traced(cfg.network, tc, off, data);
    auto ref = testing::reference_finetune(cfg.network, tc, data);
    o.require(lib.params == ref.params, "flags-off parameters differ from the fine-tuning reference");
    o.require(same_accuracy(lib.result.accuracy, ref.result.accuracy), "flags-off accuracies differ from the reference");

    tc.si_strength = 0.0;
    for (const char* name : {"BIR(w/ IR)", "BIR(w/o IR)"}) {
        auto without = *trainer::named_variant(name);
        auto with = without;
        with.synaptic_intelligence = true;
        auto a = traced(cfg.network, tc, with, data);
        auto b = traced(cfg.network, tc, without, data);
        o.require(a.params == b.params && same_accuracy(a.result.accuracy, b.result.accuracy),
                  std::string("c=0 SI differs from SI off for ") + name);
    }
    if (o.pass) o.detail = "flags-off == fine-tuning reference; c=0 SI == SI off (w/ and w/o IR), bit for bit";
    return o;
}

}  // namespace

int main(int argc, char** argv) {
    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
        {"ablation ordering", criterion1},   {"stability-plasticity", criterion2},
        {"likelihood/reconstruction", criterion3}, {"silhouette sanity", criterion4},
        {"metric identities", criterion5},   {"gradient suite", criterion6},
        {"oracle equivalences", criterion7}, {"determinism", criterion8},
        {"format round-trips", criterion9},  {"ablation factorization", criterion10},
    };
    std::set<int> wanted;
    for (int i = 1; i < argc; ++i) wanted.insert(std::stoi(argv[i]));
    int failed = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        const int id = static_cast<int>(i + 1);
        if (!wanted.empty() && !wanted.count(id)) continue;
        std::cerr << "criterion " << id << ": " << criteria[i].first << "\n";
        Outcome o;
        try {
            o = criteria[i].second();
        } catch (const std::exception& e) {
            o.pass = false;
            o.detail = std::string("exception: ") + e.what();
        }
        failed += !o.pass;
        std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << id << " (" << criteria[i].first << "): " << o.detail
                  << std::endl;
    }
    return failed == 0 ? 0 : 1;
}
