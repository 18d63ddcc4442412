#include <filesystem>
#include <fstream>
#include <sstream>

#include <doctest.h>

#include "config.hpp"
#include "runner.hpp"
#include "test_support.hpp"

using namespace rlab;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json tiny_doc(const fs::path& out) {
    auto doc = json::parse(R"J({
      "dataset": {"kind": "synthetic", "num_classes": 4, "dim": 8, "samples_per_class": 40, "spread": 0.3, "seed": 3},
      "network": {"perceptual_dims": [10], "fc_dims": [12, 10], "latent_dim": 3},
      "trainer": {"num_tasks": 2, "classes_per_task": 2, "epochs_per_task": 1, "pretrain_epochs": 1,
                  "batch_size": 16, "diagnostic_samples": 3},
      "variants": [{"name": "BIR(w/ IR)"}, {"name": "BIR+SI(w/o IR)"}],
      "seeds": [0, 1],
      "checkpoints": false
    })J");
    doc["output_dir"] = out.string();
    return doc;
}

fs::path scratch(const std::string& name) {
    auto p = fs::temp_directory_path() / "rlab_test_runner" / name;
    fs::remove_all(p);
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::vector<fs::path> csv_files(const fs::path& root) {
    std::vector<fs::path> out;
    for (const auto& e : fs::recursive_directory_iterator(root))
        if (e.path().extension() == ".csv") out.push_back(fs::relative(e.path(), root));
    std::sort(out.begin(), out.end());
    return out;
}

}  // namespace

TEST_CASE("config parse, serialise, parse is a fixed point") {
    for (auto doc : {tiny_doc("out"), json::parse(slurp(fs::path(RLAB_SOURCE_DIR) / "configs/synthetic_blobs.json"))}) {
        auto a = config::parse_config(doc);
        const std::string text = config::serialize_config(a);
        auto b = config::parse_config_text(text);
        CHECK(config::serialize_config(b) == text);
        CHECK(text.back() == '\n');
    }
}

TEST_CASE("derived network keys follow the dataset") {
    auto cfg = config::parse_config(tiny_doc("out"));
    CHECK(cfg.network.input_dim == 8);
    CHECK(cfg.network.num_classes == 4);
    CHECK(cfg.variants[1].flags.synaptic_intelligence);
    CHECK_FALSE(cfg.variants[1].flags.internal_replay);
}

TEST_CASE("bad configs name the offending key") {
    const auto message_of = [](json doc) {
        try {
            config::parse_config(doc);
        } catch (const Error& e) {
            CHECK(e.kind() == ErrorKind::Config);
            return std::string(e.what());
        }
        FAIL("expected a config error");
        return std::string();
    };
    auto doc = tiny_doc("out");
    doc["trainer"]["batchsize"] = 3;
    CHECK(message_of(doc).find("trainer.batchsize") != std::string::npos);

    doc = tiny_doc("out");
    doc["trainer"]["learning_rate"] = "fast";
    CHECK(message_of(doc).find("trainer.learning_rate") != std::string::npos);

    doc = tiny_doc("out");
    doc["variants"] = json::array({json{{"name", "EWC"}}});
    CHECK(message_of(doc).find("EWC") != std::string::npos);

    doc = tiny_doc("out");
    doc["trainer"]["num_tasks"] = 3;
    CHECK(testing::error_kind_of([&] { config::validate(config::parse_config(doc)); }) == ErrorKind::Config);

    doc = tiny_doc("out");
    doc["dataset"] = json{{"kind", "idx"}, {"train_images", "missing"}, {"train_labels", "missing"},
                          {"test_images", "missing"}, {"test_labels", "missing"}};
    CHECK(testing::error_kind_of([&] { config::validate(config::parse_config(doc)); }) == ErrorKind::Config);

    CHECK(testing::error_kind_of([] { config::parse_config_text("{not json"); }) == ErrorKind::Config);
}

TEST_CASE("run matrix writes the documented layout") {
    const auto out = scratch("layout");
    auto cfg = config::parse_config(tiny_doc(out));
    auto report = runner::run_matrix(cfg);
    REQUIRE(report.all_ok());
    REQUIRE(report.runs.size() == 4);
    CHECK(report.runs[0].variant == "BIR(w/ IR)");
    CHECK(report.runs[1].seed == 1);
    for (const char* f : {"accuracy_matrix.csv", "metrics.csv", "embeddings.csv", "projection.csv", "silhouette.csv",
                          "loss_history.csv", "log_likelihood.json", "reconstruction_error.json", "run.json",
                          "config.json"})
        CHECK(fs::exists(out / "bir-si-w-o-ir" / "1" / f));
    CHECK(fs::exists(out / "summary.json"));
    CHECK_FALSE(fs::exists(out / "failures.json"));
    CHECK(slurp(out / "config.json") == config::serialize_config(cfg));

    const json summary = json::parse(slurp(out / "summary.json"));
    for (const char* v : {"BIR(w/ IR)", "BIR+SI(w/o IR)"}) {
        const auto& m = summary.at(v).at("mean_over_seeds");
        const double r0 = summary.at(v).at("per_seed").at("0").at("mean_retention_ratio");
        const double r1 = summary.at(v).at("per_seed").at("1").at("mean_retention_ratio");
        CHECK(m.at("mean_retention_ratio").get<double>() == doctest::Approx((r0 + r1) / 2).epsilon(1e-12));
        CHECK(m.at("mean_log_likelihood").is_number());
    }

    auto files = runner::export_plot_data(out);
    CHECK(files.size() >= 8);
    for (const auto& f : files) CHECK(fs::file_size(f) > 0);
    const std::string retention = slurp(out / "plots" / "retention_per_task.csv");
    CHECK(retention.find("task") == 0);
    CHECK(retention.find("BIR(w/ IR)") != std::string::npos);
}

TEST_CASE("metric CSVs are byte-identical across runs and worker counts") {
    const auto a = scratch("det_a"), b = scratch("det_b");
    auto ca = config::parse_config(tiny_doc(a));
    auto cb = config::parse_config(tiny_doc(b));
    cb.workers = 3;
    REQUIRE(runner::run_matrix(ca).all_ok());
    REQUIRE(runner::run_matrix(cb).all_ok());
    runner::export_plot_data(a);
    runner::export_plot_data(b);
    const auto fa = csv_files(a), fb = csv_files(b);
    REQUIRE(fa == fb);
    CHECK(fa.size() >= 4 * 6);
    for (const auto& f : fa) {
        CAPTURE(f.string());
        CHECK(slurp(a / f) == slurp(b / f));
    }
}

TEST_CASE("a failing run is isolated and listed") {
    const auto out = scratch("fail");
    auto doc = tiny_doc(out);
    doc["trainer"]["learning_rate"] = 1e300;
    auto cfg = config::parse_config(doc);
    cfg.seeds = {0, 1};
    cfg.variants.resize(1);
    auto report = runner::run_matrix(cfg);
    CHECK_FALSE(report.all_ok());
    REQUIRE(fs::exists(out / "failures.json"));
    const json f = json::parse(slurp(out / "failures.json"));
    CHECK(f.at("failures").size() == 2);
    CHECK(f.at("failures")[0].at("kind") == "domain");
    CHECK(report.runs[0].error.find("non-finite") != std::string::npos);
    const json summary = json::parse(slurp(out / "summary.json"));
    CHECK(summary.at("BIR(w/ IR)").at("seeds_failed").size() == 2);
}

TEST_CASE("plot export rejects a directory without results") {
    const auto out = scratch("empty");
    fs::create_directories(out);
    CHECK(testing::error_kind_of([&] { runner::export_plot_data(out); }) == ErrorKind::Export);
}

TEST_CASE("numbers round-trip through their CSV form") {
    for (double v : {0.1, 1.0 / 3.0, -2.5e-300, 12345678.901234567, 0.0}) {
        const std::string s = runner::format_number(v);
        CHECK(std::stod(s) == v);
    }
}
