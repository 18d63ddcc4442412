#include <cmath>
#include <numbers>
#include <numeric>
#include <random>
#include <set>

#include <Eigen/Dense>
#include <doctest.h>

#include "data.hpp"
#include "metrics.hpp"
#include "test_support.hpp"

using namespace rlab;
using ad::Tape;
using ad::Tensor;
using ad::Var;

namespace {

model::NetworkConfig small_config() {
    model::NetworkConfig nc;
    nc.input_dim = 8;
    nc.perceptual_dims = {7};
    nc.fc_dims = {6, 5};
    nc.latent_dim = 3;
    nc.num_classes = 4;
    nc.num_tasks = 2;
    nc.seed = 8;
    return nc;
}

// Every layer an identity map, so the network reconstructs non-negative
// inputs exactly at every level.
model::ReplayModel identity_model(std::size_t d) {
    model::NetworkConfig nc;
    nc.input_dim = d;
    nc.perceptual_dims = {d};
    nc.fc_dims = {d, d};
    nc.latent_dim = d;
    nc.num_classes = 2;
    nc.num_tasks = 2;
    nc.perceptual_activation = model::Activation::Linear;
    nc.output_activation = model::Activation::Linear;
    nc.context_gating = false;
    model::ReplayModel m(nc);
    for (auto& p : m.named_parameters()) {
        auto& t = *p.tensor;
        std::fill(t.data.begin(), t.data.end(), 0.0);
        if (t.rank() == 2 && t.shape[0] == t.shape[1] && p.name.find("weight") != std::string::npos &&
            p.name.find("classifier") == std::string::npos && p.name.find("logvar") == std::string::npos)
            for (std::size_t i = 0; i < d; ++i) t.at(i, i) = 1.0;
    }
    return m;
}

double log_normal(double x, double mean, double var) {
    return -0.5 * (std::log(2 * std::numbers::pi * var) + (x - mean) * (x - mean) / var);
}

std::vector<double> naive_silhouette(const Tensor& x, const std::vector<int>& labels) {
    const std::size_t n = x.rows(), d = x.cols();
    auto dist = [&](std::size_t i, std::size_t j) {
        double acc = 0;
        for (std::size_t c = 0; c < d; ++c) acc += (x.at(i, c) - x.at(j, c)) * (x.at(i, c) - x.at(j, c));
        return std::sqrt(acc);
    };
    std::set<int> ids(labels.begin(), labels.end());
    std::vector<double> s(n);
    for (std::size_t i = 0; i < n; ++i) {
        double a = 0;
        std::size_t own = 0;
        for (std::size_t j = 0; j < n; ++j)
            if (j != i && labels[j] == labels[i]) {
                a += dist(i, j);
                ++own;
            }
        if (own == 0) {
            s[i] = 0;
            continue;
        }
        a /= own;
        double b = std::numeric_limits<double>::infinity();
        for (int other : ids) {
            if (other == labels[i]) continue;
            double acc = 0;
            std::size_t cnt = 0;
            for (std::size_t j = 0; j < n; ++j)
                if (labels[j] == other) {
                    acc += dist(i, j);
                    ++cnt;
                }
            b = std::min(b, acc / cnt);
        }
        s[i] = (b - a) / std::max(a, b);
    }
    return s;
}

metrics::EmbeddingDump dump_of(const Tensor& x) {
    metrics::EmbeddingDump d;
    d.activations = x;
    d.classes.assign(x.rows(), 0);
    d.tasks.assign(x.rows(), 0);
    return d;
}

}  // namespace

TEST_CASE("accuracy from logits") {
    Tensor perfect = Tensor::matrix(3, 3, {5, 0, 0, 0, 5, 0, 0, 0, 5});
    const std::vector<int> labels{0, 1, 2}, active{0, 1, 2};
    CHECK(metrics::accuracy_from_logits(perfect, labels, active) == 1.0);

    Tensor constant = Tensor::matrix(4, 2, {1, 0, 1, 0, 1, 0, 1, 0});
    const std::vector<int> balanced{0, 1, 0, 1}, two{0, 1};
    CHECK(metrics::accuracy_from_logits(constant, balanced, two) == 0.5);

    // Ties resolve to the lowest class index; inactive columns are ignored.
    Tensor tied = Tensor::matrix(2, 3, {2, 2, 9, 1, 1, 9});
    const std::vector<int> tl{0, 1}, ta{0, 1};
    CHECK(metrics::accuracy_from_logits(tied, tl, ta) == 0.5);
}

TEST_CASE("evaluate_accuracy matches a naive per-row loop") {
    model::ReplayModel m(small_config());
    auto pair = data::make_synthetic_blobs(4, 8, 125, 1.0, 5);
    std::vector<std::size_t> idx(100);
    std::iota(idx.begin(), idx.end(), 0);
    auto test = pair.train.subset(idx);
    const std::vector<int> active{0, 1, 2, 3};
    std::size_t correct = 0;
    for (std::size_t r = 0; r < test.size(); ++r) {
        Tape t;
        auto b = m.bind(t, false);
        Tensor row = Tensor::matrix(1, 8, std::vector<double>(test.inputs.data.begin() + r * 8,
                                                              test.inputs.data.begin() + (r + 1) * 8));
        const Tensor logits = m.encode(b, t.constant(row)).logits.value();
        int best = active[0];
        for (int c : active)
            if (logits.data[c] > logits.data[best]) best = c;
        correct += best == test.labels[r];
    }
    CHECK(metrics::evaluate_accuracy(m, test, active) == static_cast<double>(correct) / 100.0);

    data::Dataset empty;
    CHECK(testing::error_kind_of([&] { metrics::evaluate_accuracy(m, empty, active); }) == ErrorKind::Data);
}

TEST_CASE("retention and forgetting formulas") {
    CHECK(metrics::retention_ratio(0.5, 0.25).value() == 0.5);
    CHECK(metrics::retention_ratio(0.7, 0.7).value() == 1.0);
    CHECK_FALSE(metrics::retention_ratio(0.0, 0.3).has_value());
    CHECK(metrics::forgetting_score(0.6, 0.2) == doctest::Approx(0.4).epsilon(1e-15));
    CHECK(metrics::forgetting_score(0.6, 0.6) == 0.0);
    CHECK(metrics::forgetting_score(0.3, 0.5) < 0.0);
}

TEST_CASE("task metrics over a ten-task matrix match elementwise formulas") {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(0, 1);
    metrics::AccuracyMatrix acc(10);
    for (std::size_t t = 0; t < 10; ++t)
        for (std::size_t e = 0; e <= t; ++e) acc.set(t, e, e == 3 ? 0.0 : u(rng));
    auto tm = metrics::task_metrics(acc);
    REQUIRE(tm.size() == 10);
    for (std::size_t e = 0; e < 10; ++e) {
        const double init = acc.at(e, e), fin = acc.at(9, e);
        CHECK(tm[e].task == e + 1);
        CHECK(tm[e].initial_accuracy == init);
        CHECK(tm[e].final_accuracy == fin);
        CHECK(tm[e].forgetting == init - fin);
        if (e == 3) {
            CHECK_FALSE(tm[e].retention.has_value());
        } else {
            CHECK(tm[e].retention.value() == fin / init);
            CHECK(std::abs(tm[e].forgetting - init * (1 - *tm[e].retention)) < 1e-12);
        }
    }
    CHECK_FALSE(acc.defined(2, 5));
    CHECK(testing::error_kind_of([&] { acc.set(1, 2, 0.5); }) == ErrorKind::Contract);
    CHECK(testing::error_kind_of([&] { acc.set(2, 1, 1.5); }) == ErrorKind::Domain);
}

TEST_CASE("histogram counts sum to the sample size and summaries ignore row order") {
    std::mt19937_64 rng(4);
    std::normal_distribution<double> n01;
    std::vector<double> v(777);
    for (auto& x : v) x = n01(rng) * 3 + 1;
    auto s = metrics::summarize(v);
    std::size_t total = 0;
    for (auto c : s.histogram.counts) total += c;
    CHECK(total == v.size());
    CHECK(s.histogram.counts.size() <= 50);
    CHECK(s.histogram.edges.size() == s.histogram.counts.size() + 1);
    CHECK(s.values == v);
    CHECK(s.p5 <= s.median);
    CHECK(s.median <= s.p95);

    auto shuffled = v;
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    auto t = metrics::summarize(shuffled);
    CHECK(t.mean == s.mean);
    CHECK(t.median == s.median);
    CHECK(t.p5 == s.p5);
    CHECK(t.p95 == s.p95);
    CHECK(t.histogram.counts == s.histogram.counts);
    CHECK(t.histogram.edges == s.histogram.edges);

    auto constant = metrics::summarize(std::vector<double>(5, 2.0));
    CHECK(constant.histogram.counts == std::vector<std::size_t>{5});
}

TEST_CASE("one importance sample is a single-sample ELBO term") {
    Tensor mu = Tensor::matrix(2, 2, {0.3, -0.2, 1.0, 0.5});
    Tensor lv = Tensor::matrix(2, 2, {-0.4, 0.2, 0.1, -1.0});
    auto joint = [](const Tensor& z) {
        std::vector<double> out(z.rows());
        for (std::size_t r = 0; r < z.rows(); ++r)
            for (std::size_t j = 0; j < z.cols(); ++j) out[r] += log_normal(z.at(r, j), 0.7, 2.0);
        return out;
    };
    model::Rng rng(10), mirror(10);
    auto est = metrics::importance_log_likelihood(mu, lv, joint, 1, rng);
    std::normal_distribution<double> n01;
    for (std::size_t r = 0; r < 2; ++r) {
        double elbo = 0;
        for (std::size_t j = 0; j < 2; ++j) {
            const double e = n01(mirror);
            const double var = std::exp(lv.at(r, j));
            const double z = mu.at(r, j) + std::sqrt(var) * e;
            elbo += log_normal(z, 0.7, 2.0) - log_normal(z, mu.at(r, j), var);
        }
        CHECK(est[r] == doctest::Approx(elbo).epsilon(1e-12));
    }
}

TEST_CASE("importance sampling recovers the analytic marginal of a linear Gaussian model") {
    const double w = 1.5, b = 0.3, noise_var = 0.5;
    const std::vector<double> xs{-2.0, 0.1, 1.7, 3.2};
    Tensor mu({4, 1}), lv({4, 1});
    for (std::size_t r = 0; r < 4; ++r) {
        // Deliberately imperfect proposal: shifted mean, inflated variance.
        const double post_var = 1.0 / (1.0 + w * w / noise_var);
        mu.data[r] = post_var * w * (xs[r] - b) / noise_var + 0.2;
        lv.data[r] = std::log(post_var * 1.8);
    }
    auto joint = [&](const Tensor& z) {
        std::vector<double> out(z.rows());
        for (std::size_t r = 0; r < z.rows(); ++r)
            out[r] = log_normal(xs[r], w * z.data[r] + b, noise_var) + log_normal(z.data[r], 0.0, 1.0);
        return out;
    };
    model::Rng rng(11);
    auto est = metrics::importance_log_likelihood(mu, lv, joint, 10000, rng);
    for (std::size_t r = 0; r < 4; ++r)
        CHECK(std::abs(est[r] - log_normal(xs[r], b, w * w + noise_var)) < 0.05);
}

TEST_CASE("more importance samples do not lower the model likelihood estimate") {
    model::ReplayModel m(small_config());
    m.prior().add_seen(std::vector<int>{0, 1, 2, 3});
    auto pair = data::make_synthetic_blobs(4, 8, 20, 0.5, 6);
    std::vector<std::size_t> idx(50);
    std::iota(idx.begin(), idx.end(), 0);
    auto x = pair.train.subset(idx).inputs;
    metrics::ReconstructionPath path{1, false, losses::ReconstructionKind::Mse};
    model::Rng r1(1), r2(2);
    auto one = metrics::estimate_log_likelihood(m, x, {}, path, 1, r1);
    auto many = metrics::estimate_log_likelihood(m, x, {}, path, 128, r2);
    REQUIRE(one.size() == 50);
    double mean_diff = 0;
    for (std::size_t i = 0; i < 50; ++i) mean_diff += (many[i] - one[i]) / 50;
    double var = 0;
    for (std::size_t i = 0; i < 50; ++i) var += std::pow(many[i] - one[i] - mean_diff, 2) / 49;
    CHECK(mean_diff >= -3 * std::sqrt(var / 50));
    for (double v : many) CHECK(std::isfinite(v));
}

TEST_CASE("identity autoencoder has zero reconstruction error") {
    auto m = identity_model(5);
    std::mt19937_64 rng(12);
    Tensor x = testing::random_tensor({30, 5}, rng, 0.0, 2.0);
    for (bool via_input : {false, true}) {
        metrics::ReconstructionPath path{1, via_input, losses::ReconstructionKind::Mse};
        auto d = metrics::reconstruction_error_distribution(m, x, {}, path);
        for (double v : d.values) CHECK(v == 0.0);
        std::size_t total = 0;
        for (auto c : d.histogram.counts) total += c;
        CHECK(total == 30);
    }
}

TEST_CASE("reconstruction errors match an independent encode-decode loop") {
    model::ReplayModel m(small_config());
    std::mt19937_64 rng(13);
    Tensor x = testing::random_tensor({300, 8}, rng);
    std::vector<int> tasks(300);
    for (std::size_t i = 0; i < 300; ++i) tasks[i] = static_cast<int>(i % 2);
    for (std::size_t level : {0u, 1u, 2u}) {
        metrics::ReconstructionPath path{level, false, losses::ReconstructionKind::Mse};
        auto errs = metrics::reconstruction_errors(m, x, tasks, path);
        REQUIRE(errs.size() == 300);
        for (std::size_t r = 0; r < 300; r += 17) {
            Tape t;
            auto b = m.bind(t, false);
            Tensor row = Tensor::matrix(1, 8, std::vector<double>(x.data.begin() + r * 8, x.data.begin() + (r + 1) * 8));
            auto enc = m.encode(b, t.constant(row));
            const std::vector<int> task{tasks[r]};
            const Tensor recon = m.decode(b, enc.latent.mu, task, level).value();
            const Tensor& target = enc.levels[level].value();
            double sse = 0;
            for (std::size_t j = 0; j < target.size(); ++j)
                sse += (recon.data[j] - target.data[j]) * (recon.data[j] - target.data[j]);
            CHECK(std::abs(errs[r] - sse) < 1e-12);
        }
    }
}

TEST_CASE("silhouette on separated and interleaved clusters") {
    std::mt19937_64 rng(14);
    std::normal_distribution<double> n01;
    Tensor tight({200, 3});
    std::vector<int> labels(200);
    for (std::size_t i = 0; i < 200; ++i) {
        labels[i] = i < 100 ? 0 : 1;
        for (std::size_t j = 0; j < 3; ++j) tight.at(i, j) = 0.05 * n01(rng) + (labels[i] ? 10.0 : 0.0);
    }
    CHECK(metrics::silhouette_score(tight, labels) > 0.9);

    Tensor mixed({1000, 2});
    std::vector<int> mixed_labels(1000);
    for (std::size_t i = 0; i < 1000; ++i) {
        mixed_labels[i] = static_cast<int>(i % 2);
        for (std::size_t j = 0; j < 2; ++j) mixed.at(i, j) = n01(rng);
    }
    CHECK(std::abs(metrics::silhouette_score(mixed, mixed_labels)) < 0.05);
}

TEST_CASE("silhouette matches a naive double loop") {
    std::mt19937_64 rng(15);
    Tensor x = testing::random_tensor({30, 4}, rng);
    std::vector<int> labels(30);
    for (std::size_t i = 0; i < 30; ++i) labels[i] = static_cast<int>(i % 3);
    labels[29] = 7;  // singleton
    auto fast = metrics::silhouette_samples(x, labels);
    auto slow = naive_silhouette(x, labels);
    CHECK(fast == slow);
    CHECK(fast[29] == 0.0);
    for (double v : fast) CHECK((v >= -1.0 && v <= 1.0));
    double mean = 0;
    for (double v : slow) mean += v;
    CHECK(metrics::silhouette_score(x, labels) == doctest::Approx(mean / 30).epsilon(1e-14));
}

TEST_CASE("silhouette is invariant to row order and needs two clusters") {
    std::mt19937_64 rng(16);
    Tensor x = testing::random_tensor({40, 3}, rng);
    std::vector<int> labels(40);
    for (std::size_t i = 0; i < 40; ++i) labels[i] = static_cast<int>((i * 7) % 4);
    const double base = metrics::silhouette_score(x, labels);
    std::vector<std::size_t> perm(40);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    Tensor px({40, 3});
    std::vector<int> pl(40);
    for (std::size_t i = 0; i < 40; ++i) {
        pl[i] = labels[perm[i]];
        for (std::size_t j = 0; j < 3; ++j) px.at(i, j) = x.at(perm[i], j);
    }
    // Distance sums change order under permutation; equal up to rounding.
    CHECK(std::abs(metrics::silhouette_score(px, pl) - base) < 1e-12);
    const std::vector<int> one(40, 1);
    CHECK(testing::error_kind_of([&] { metrics::silhouette_score(x, one); }) == ErrorKind::Contract);
}

TEST_CASE("task-keyed silhouette uses task ids") {
    metrics::EmbeddingDump d;
    d.activations = Tensor::matrix(4, 1, {0, 0.1, 5, 5.1});
    d.classes = {0, 1, 0, 1};
    d.tasks = {0, 0, 1, 1};
    CHECK(metrics::silhouette_score(d, metrics::SilhouetteKey::Task) > 0.9);
    CHECK(metrics::silhouette_score(d, metrics::SilhouetteKey::Class) < 0.0);
}

TEST_CASE("embedding extraction shape and determinism") {
    auto nc = small_config();
    model::ReplayModel m(nc);
    auto pair = data::make_synthetic_blobs(4, 8, 30, 0.5, 17);
    const std::vector<int> class_task{0, 0, 1, 1};
    auto a = metrics::extract_embeddings(m, pair.test, nc.embedding_layer, class_task);
    CHECK(a.size() == pair.test.size());
    CHECK(a.activations.cols() == nc.fc_dims[nc.embedding_layer]);
    CHECK(a.layer == "fcE.fcLayer2.linear");
    CHECK(a.classes == pair.test.labels);
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a.tasks[i] == class_task[a.classes[i]]);
    auto b = metrics::extract_embeddings(m, pair.test, nc.embedding_layer, class_task);
    CHECK(std::memcmp(a.activations.data.data(), b.activations.data.data(), a.activations.size() * 8) == 0);
    CHECK(testing::error_kind_of([&] { metrics::extract_embeddings(m, pair.test, 2, class_task); }) ==
          ErrorKind::Contract);
}

TEST_CASE("PCA of centred 2-D data is an isometry") {
    std::mt19937_64 rng(18);
    Tensor x = testing::random_tensor({25, 2}, rng, -3, 3);
    for (std::size_t j = 0; j < 2; ++j) {
        double mean = 0;
        for (std::size_t i = 0; i < 25; ++i) mean += x.at(i, j) / 25;
        for (std::size_t i = 0; i < 25; ++i) x.at(i, j) -= mean;
    }
    auto p = metrics::pca_project_2d(dump_of(x));
    CHECK_FALSE(p.rank_deficient);
    for (std::size_t i = 0; i < 25; ++i)
        for (std::size_t k = i + 1; k < 25; ++k) {
            const double orig = std::hypot(x.at(i, 0) - x.at(k, 0), x.at(i, 1) - x.at(k, 1));
            const double proj = std::hypot(p.x[i] - p.x[k], p.y[i] - p.y[k]);
            CHECK(std::abs(orig - proj) < 1e-9);
        }
}

TEST_CASE("PCA of points on a line has a zero second axis") {
    std::mt19937_64 rng(19);
    Tensor dir = testing::random_tensor({10}, rng);
    Tensor offset = testing::random_tensor({10}, rng);
    Tensor x({40, 10});
    std::uniform_real_distribution<double> u(-5, 5);
    for (std::size_t i = 0; i < 40; ++i) {
        const double t = u(rng);
        for (std::size_t j = 0; j < 10; ++j) x.at(i, j) = offset.data[j] + t * dir.data[j];
    }
    auto p = metrics::pca_project_2d(dump_of(x));
    for (double y : p.y) CHECK(std::abs(y) < 1e-6);
    CHECK(p.rank_deficient);
}

TEST_CASE("PCA explained variance matches a dense eigensolver") {
    std::mt19937_64 rng(20);
    Tensor x = testing::random_tensor({50, 5}, rng);
    for (std::size_t i = 0; i < 50; ++i) x.at(i, 0) *= 3.0, x.at(i, 2) *= 2.0;
    Eigen::MatrixXd m(50, 5);
    for (std::size_t i = 0; i < 50; ++i)
        for (std::size_t j = 0; j < 5; ++j) m(i, j) = x.at(i, j);
    Eigen::MatrixXd centred = m.rowwise() - m.colwise().mean();
    Eigen::MatrixXd cov = centred.transpose() * centred / 49.0;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
    const auto ev = es.eigenvalues();  // ascending
    auto p = metrics::pca_project_2d(dump_of(x));
    CHECK(std::abs(p.explained_variance[0] - ev(4)) < 1e-6);
    CHECK(std::abs(p.explained_variance[1] - ev(3)) < 1e-6);

    // Coordinates agree with the eigenvectors up to sign.
    for (int axis = 0; axis < 2; ++axis) {
        Eigen::VectorXd v = es.eigenvectors().col(4 - axis);
        Eigen::VectorXd proj = centred * v;
        const auto& got = axis == 0 ? p.x : p.y;
        const double sign = (proj(0) * got[0] >= 0) ? 1.0 : -1.0;
        for (std::size_t i = 0; i < 50; ++i) CHECK(std::abs(sign * proj(i) - got[i]) < 1e-5);
    }
}
