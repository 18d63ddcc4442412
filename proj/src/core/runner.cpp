#include "runner.hpp"

#include <atomic>
#include <charconv>
#include <fstream>
#include <map>
#include <mutex>
#include <sstream>
#include <thread>

#include "checkpoint.hpp"
#include "error.hpp"

namespace rlab::runner {

namespace fs = std::filesystem;
using nlohmann::json;

std::string format_number(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

namespace {

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    require(out.good(), ErrorKind::Io, "cannot write " + path.string());
    out << text;
    require(out.good(), ErrorKind::Io, "failed writing " + path.string());
}

std::string read_text(const fs::path& path, const std::string& what) {
    std::ifstream in(path, std::ios::binary);
    require(in.good(), ErrorKind::Export, "missing " + what + " (" + path.string() + ")");
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out.push_back('"');
        out.push_back(c);
    }
    return out + "\"";
}

std::string opt_number(const std::optional<double>& v) { return v ? format_number(*v) : ""; }

json summary_json(const metrics::DistributionSummary& d, const std::string& metric,
                  const std::string& variant, std::uint64_t seed, std::size_t level) {
    return json{{"metric", metric},
                {"model_variant", variant},
                {"seed", seed},
                {"level", level},
                {"values", d.values},
                {"histogram", {{"edges", d.histogram.edges}, {"counts", d.histogram.counts}}},
                {"summary", {{"mean", d.mean}, {"median", d.median}, {"p5", d.p5}, {"p95", d.p95}}}};
}

struct Csv {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    std::size_t column(const std::string& name, const std::string& what) const {
        for (std::size_t i = 0; i < header.size(); ++i)
            if (header[i] == name) return i;
        fail(ErrorKind::Export, "missing metric '" + name + "' in " + what);
    }
};

// Reads the unquoted numeric CSVs this module writes.
Csv read_csv(const fs::path& path, const std::string& what) {
    std::stringstream text(read_text(path, what));
    Csv csv;
    std::string line;
    bool first = true;
    while (std::getline(text, line)) {
        if (line.empty()) continue;
        std::vector<std::string> fields;
        std::stringstream ls(line);
        std::string f;
        while (std::getline(ls, f, ',')) fields.push_back(f);
        if (!line.empty() && line.back() == ',') fields.emplace_back();
        if (first) csv.header = std::move(fields);
        else csv.rows.push_back(std::move(fields));
        first = false;
    }
    require(!csv.header.empty(), ErrorKind::Export, what + " is empty");
    return csv;
}

std::optional<double> parse_cell(const std::string& s, const std::string& what) {
    if (s.empty()) return std::nullopt;
    double v = 0.0;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    require(res.ec == std::errc() && res.ptr == s.data() + s.size(), ErrorKind::Export,
            "malformed number '" + s + "' in " + what);
    return v;
}

std::optional<double> mean_of(const std::vector<std::optional<double>>& values) {
    double total = 0.0;
    std::size_t n = 0;
    for (const auto& v : values) {
        if (!v) continue;
        total += *v;
        ++n;
    }
    if (n == 0) return std::nullopt;
    return total / static_cast<double>(n);
}

json opt_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

struct RunAggregate {
    std::optional<double> initial, final, retention, forgetting, log_likelihood,
        reconstruction_error, silhouette;
};

json aggregate_json(const RunAggregate& a) {
    return json{{"mean_initial_accuracy", opt_json(a.initial)},
                {"mean_final_accuracy", opt_json(a.final)},
                {"mean_retention_ratio", opt_json(a.retention)},
                {"mean_forgetting_score", opt_json(a.forgetting)},
                {"mean_log_likelihood", opt_json(a.log_likelihood)},
                {"mean_reconstruction_error", opt_json(a.reconstruction_error)},
                {"mean_silhouette", opt_json(a.silhouette)}};
}

}  // namespace

bool MatrixReport::all_ok() const {
    for (const auto& r : runs)
        if (!r.ok) return false;
    return true;
}

void write_run_outputs(const fs::path& dir, const trainer::RunResult& r, const std::string& variant,
                       std::uint64_t seed, const trainer::AblationFlags& flags) {
    fs::create_directories(dir);
    const std::size_t tasks = r.accuracy.num_tasks();
    {
        std::string s = "trained_task,eval_task,accuracy\n";
        for (std::size_t t = 0; t < tasks; ++t)
            for (std::size_t e = 0; e <= t; ++e)
                s += std::to_string(t + 1) + "," + std::to_string(e + 1) + "," +
                     format_number(r.accuracy.at(t, e)) + "\n";
        write_text(dir / "accuracy_matrix.csv", s);
    }
    {
        std::string s = "task,initial_acc,final_acc,retention_ratio,forgetting_score\n";
        for (const auto& m : r.task_metrics)
            s += std::to_string(m.task) + "," + format_number(m.initial_accuracy) + "," +
                 format_number(m.final_accuracy) + "," + opt_number(m.retention) + "," +
                 format_number(m.forgetting) + "\n";
        write_text(dir / "metrics.csv", s);
    }
    if (r.log_likelihood)
        write_text(dir / "log_likelihood.json",
                   summary_json(*r.log_likelihood, "log_likelihood", variant, seed,
                                r.comparison_path.level)
                           .dump(2) +
                       "\n");
    if (r.reconstruction_error)
        write_text(dir / "reconstruction_error.json",
                   summary_json(*r.reconstruction_error, "reconstruction_error", variant, seed,
                                r.comparison_path.level)
                           .dump(2) +
                       "\n");
    {
        const auto& e = r.embeddings;
        const std::size_t width = e.size() > 0 ? e.activations.cols() : 0;
        std::string s = "task,class";
        for (std::size_t k = 0; k < width; ++k) s += ",d" + std::to_string(k);
        s += "\n";
        for (std::size_t i = 0; i < e.size(); ++i) {
            s += std::to_string(e.tasks[i] + 1) + "," + std::to_string(e.classes[i]);
            for (std::size_t k = 0; k < width; ++k) s += "," + format_number(e.activations.at(i, k));
            s += "\n";
        }
        write_text(dir / "embeddings.csv", s);
    }
    {
        std::string proj = "task,class,x,y\n";
        std::string sil = "task,silhouette\n";
        for (const auto& t : r.tasks) {
            for (std::size_t i = 0; i < t.projection.x.size(); ++i)
                proj += std::to_string(t.task) + "," + std::to_string(t.projection.classes[i]) + "," +
                        format_number(t.projection.x[i]) + "," + format_number(t.projection.y[i]) +
                        "\n";
            sil += std::to_string(t.task) + "," +
                   (t.silhouette_defined ? format_number(t.silhouette_class) : "") + "\n";
        }
        write_text(dir / "projection.csv", proj);
        write_text(dir / "silhouette.csv", sil);
    }
    {
        std::string s = "task,epoch,reconstruction,kl,classification,distillation,si,replay,total\n";
        for (std::size_t t = 0; t < r.loss_history.size(); ++t) {
            const auto& epochs = r.loss_history[t].epochs;
            for (std::size_t e = 0; e < epochs.size(); ++e) {
                const auto& l = epochs[e];
                s += std::to_string(t + 1) + "," + std::to_string(e + 1) + "," +
                     format_number(l.reconstruction) + "," + format_number(l.kl) + "," +
                     format_number(l.classification) + "," + format_number(l.distillation) + "," +
                     format_number(l.si) + "," + format_number(l.replay) + "," +
                     format_number(l.total) + "\n";
            }
        }
        write_text(dir / "loss_history.csv", s);
    }
    {
        json run{{"variant", variant},
                 {"seed", seed},
                 {"flags",
                  {{"replay", flags.replay},
                   {"internal_replay", flags.internal_replay},
                   {"synaptic_intelligence", flags.synaptic_intelligence},
                   {"context_gating", flags.context_gating},
                   {"conditional_replay", flags.conditional_replay},
                   {"distillation", flags.distillation}}},
                 {"class_order", r.task_order},
                 {"comparison_level", r.comparison_path.level},
                 {"comparison_via_input", r.comparison_path.via_input},
                 {"pretrain",
                  {{"heldout_loss_before", r.pretrain.heldout_loss_before},
                   {"heldout_loss_after", r.pretrain.heldout_loss_after}}}};
        write_text(dir / "run.json", run.dump(2) + "\n");
        json timings{{"train_seconds", r.train_seconds},
                     {"diagnostics_seconds", r.diagnostics_seconds}};
        write_text(dir / "timings.json", timings.dump(2) + "\n");
    }
}

MatrixReport run_matrix(const config::ExperimentConfig& config, const RunnerOptions& options) {
    config::validate(config);
    std::mutex log_mutex;
    const auto log = [&](const std::string& msg) {
        if (!options.log) return;
        std::lock_guard lock(log_mutex);
        options.log(msg);
    };

    MatrixReport report;
    report.output_dir = config.output_dir.empty() ? fs::path("results") : fs::path(config.output_dir);
    fs::create_directories(report.output_dir);
    write_text(report.output_dir / "config.json", config::serialize_config(config));

    const data::DatasetPair data = config::load_dataset(config);
    for (const auto& v : config.variants) {
        for (std::uint64_t seed : config.seeds) {
            RunRecord rec;
            rec.variant = v.name;
            rec.seed = seed;
            rec.directory = report.output_dir / trainer::variant_slug(v.name) / std::to_string(seed);
            report.runs.push_back(std::move(rec));
        }
    }

    std::atomic<std::size_t> next{0};
    const auto worker = [&] {
        for (std::size_t i = next++; i < report.runs.size(); i = next++) {
            RunRecord& rec = report.runs[i];
            const auto* variant = config.find_variant(rec.variant);
            try {
                fs::remove_all(rec.directory);
                fs::create_directories(rec.directory);
                trainer::TrainerConfig tc = config.trainer;
                tc.seed = rec.seed;
                trainer::RunHooks hooks;
                const std::string tag = rec.variant + " seed " + std::to_string(rec.seed);
                hooks.log = [&, tag](const std::string& m) { log("[" + tag + "] " + m); };
                if (config.checkpoints) {
                    hooks.on_task_end = [&rec](std::size_t t, const model::ReplayModel& m) {
                        model::save_checkpoint(
                            m, rec.directory / ("ckpt_task" + std::to_string(t + 1) + ".bin"));
                    };
                }
                auto result = trainer::run_experiment(config.network, tc, variant->flags, data, hooks);
                write_text(rec.directory / "config.json", config::serialize_config(config));
                write_run_outputs(rec.directory, result, rec.variant, rec.seed, variant->flags);
                rec.ok = true;
                if (options.keep_results) rec.result = std::move(result);
                log("[" + tag + "] finished");
            } catch (const Error& e) {
                rec.error_kind = error_kind_name(e.kind());
                rec.error = e.what();
            } catch (const std::exception& e) {
                rec.error_kind = "internal";
                rec.error = e.what();
            }
            if (!rec.ok) log("[" + rec.variant + " seed " + std::to_string(rec.seed) + "] failed: " + rec.error);
        }
    };
    const std::size_t n_workers = std::min(config.workers, report.runs.size());
    if (n_workers <= 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (std::size_t w = 0; w < n_workers; ++w) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }

    // Aggregate from the metric files just written, so the summary always
    // agrees with them.
    json summary = json::object();
    for (const auto& v : config.variants) {
        json entry{{"directory", trainer::variant_slug(v.name)}};
        json per_seed = json::object();
        std::vector<RunAggregate> done;
        json failed = json::array();
        for (const auto& rec : report.runs) {
            if (rec.variant != v.name) continue;
            if (!rec.ok) {
                failed.push_back(rec.seed);
                continue;
            }
            RunAggregate a;
            {
                const Csv m = read_csv(rec.directory / "metrics.csv", "metrics.csv");
                std::vector<std::optional<double>> cols[4];
                const char* names[4] = {"initial_acc", "final_acc", "retention_ratio", "forgetting_score"};
                for (int c = 0; c < 4; ++c) {
                    const std::size_t idx = m.column(names[c], "metrics.csv");
                    for (const auto& row : m.rows) cols[c].push_back(parse_cell(row.at(idx), "metrics.csv"));
                }
                a.initial = mean_of(cols[0]);
                a.final = mean_of(cols[1]);
                a.retention = mean_of(cols[2]);
                a.forgetting = mean_of(cols[3]);
                const Csv s = read_csv(rec.directory / "silhouette.csv", "silhouette.csv");
                std::vector<std::optional<double>> sil;
                for (const auto& row : s.rows) sil.push_back(parse_cell(row.at(1), "silhouette.csv"));
                a.silhouette = mean_of(sil);
                for (const char* f : {"log_likelihood", "reconstruction_error"}) {
                    const fs::path p = rec.directory / (std::string(f) + ".json");
                    if (!fs::exists(p)) continue;
                    const double mean = json::parse(read_text(p, f)).at("summary").at("mean").get<double>();
                    (std::string(f) == "log_likelihood" ? a.log_likelihood : a.reconstruction_error) = mean;
                }
            }
            per_seed[std::to_string(rec.seed)] = aggregate_json(a);
            done.push_back(a);
        }
        RunAggregate mean;
        const auto collect = [&](auto member) {
            std::vector<std::optional<double>> v;
            for (const auto& a : done) v.push_back(a.*member);
            return mean_of(v);
        };
        mean.initial = collect(&RunAggregate::initial);
        mean.final = collect(&RunAggregate::final);
        mean.retention = collect(&RunAggregate::retention);
        mean.forgetting = collect(&RunAggregate::forgetting);
        mean.log_likelihood = collect(&RunAggregate::log_likelihood);
        mean.reconstruction_error = collect(&RunAggregate::reconstruction_error);
        mean.silhouette = collect(&RunAggregate::silhouette);
        entry["mean_over_seeds"] = aggregate_json(mean);
        entry["per_seed"] = std::move(per_seed);
        entry["seeds_failed"] = std::move(failed);
        summary[v.name] = std::move(entry);
    }
    write_text(report.output_dir / "summary.json", summary.dump(2) + "\n");

    const fs::path manifest = report.output_dir / "failures.json";
    if (report.all_ok()) {
        fs::remove(manifest);
    } else {
        json failures = json::array();
        for (const auto& rec : report.runs) {
            if (rec.ok) continue;
            failures.push_back({{"variant", rec.variant},
                                {"seed", rec.seed},
                                {"directory", rec.directory.string()},
                                {"kind", rec.error_kind},
                                {"message", rec.error}});
        }
        write_text(manifest, json{{"failures", failures}}.dump(2) + "\n");
    }
    return report;
}

// --- plot export -----------------------------------------------------------

std::vector<fs::path> export_plot_data(const fs::path& results_dir) {
    const json cfg = [&] {
        try {
            return json::parse(read_text(results_dir / "config.json", "config.json"));
        } catch (const json::exception& e) {
            fail(ErrorKind::Export, std::string("config.json is not valid JSON: ") + e.what());
        }
    }();
    std::vector<std::string> variants;
    std::vector<std::uint64_t> seeds;
    std::size_t num_tasks = 0;
    try {
        for (const auto& v : cfg.at("variants")) variants.push_back(v.at("name").get<std::string>());
        seeds = cfg.at("seeds").get<std::vector<std::uint64_t>>();
        num_tasks = cfg.at("trainer").at("num_tasks").get<std::size_t>();
    } catch (const json::exception& e) {
        fail(ErrorKind::Export, std::string("config.json lacks variants, seeds or num_tasks: ") + e.what());
    }

    const fs::path plots = results_dir / "plots";
    fs::create_directories(plots);
    std::vector<fs::path> written;
    const auto run_dir = [&](const std::string& v, std::uint64_t seed) {
        return results_dir / trainer::variant_slug(v) / std::to_string(seed);
    };
    const auto label = [&](const std::string& v, std::uint64_t seed, const std::string& file) {
        return trainer::variant_slug(v) + "/" + std::to_string(seed) + "/" + file;
    };

    // task x variant tables, averaged over seeds.
    const auto per_task_table = [&](const std::string& file, const std::string& column,
                                    const std::string& out_name) {
        std::vector<std::vector<std::optional<double>>> table(
            num_tasks, std::vector<std::optional<double>>(variants.size()));
        for (std::size_t vi = 0; vi < variants.size(); ++vi) {
            std::vector<std::vector<std::optional<double>>> by_task(num_tasks);
            for (std::uint64_t seed : seeds) {
                const std::string what = label(variants[vi], seed, file);
                const Csv csv = read_csv(run_dir(variants[vi], seed) / file, what);
                const std::size_t tc = csv.column("task", what);
                const std::size_t vc = csv.column(column, what);
                require(csv.rows.size() == num_tasks, ErrorKind::Export,
                        what + " has " + std::to_string(csv.rows.size()) + " task rows, expected " +
                            std::to_string(num_tasks));
                for (const auto& row : csv.rows) {
                    const auto task = parse_cell(row.at(tc), what);
                    require(task && *task >= 1 && *task <= static_cast<double>(num_tasks),
                            ErrorKind::Export, "bad task id in " + what);
                    by_task[static_cast<std::size_t>(*task) - 1].push_back(parse_cell(row.at(vc), what));
                }
            }
            for (std::size_t t = 0; t < num_tasks; ++t) table[t][vi] = mean_of(by_task[t]);
        }
        std::string s = "task";
        for (const auto& v : variants) s += "," + csv_field(v);
        s += "\n";
        for (std::size_t t = 0; t < num_tasks; ++t) {
            s += std::to_string(t + 1);
            for (const auto& cell : table[t]) s += "," + opt_number(cell);
            s += "\n";
        }
        s += "mean";
        for (std::size_t vi = 0; vi < variants.size(); ++vi) {
            std::vector<std::optional<double>> col;
            for (std::size_t t = 0; t < num_tasks; ++t) col.push_back(table[t][vi]);
            s += "," + opt_number(mean_of(col));
        }
        s += "\n";
        write_text(plots / out_name, s);
        written.push_back(plots / out_name);
    };
    per_task_table("metrics.csv", "retention_ratio", "retention_per_task.csv");
    per_task_table("metrics.csv", "forgetting_score", "forgetting_per_task.csv");
    per_task_table("metrics.csv", "initial_acc", "initial_accuracy_per_task.csv");
    per_task_table("metrics.csv", "final_acc", "final_accuracy_per_task.csv");
    per_task_table("silhouette.csv", "silhouette", "silhouette_per_task.csv");

    for (const std::string metric : {"log_likelihood", "reconstruction_error"}) {
        std::string s = "variant,seed,bin_start,bin_end,count\n";
        for (const auto& v : variants) {
            for (std::uint64_t seed : seeds) {
                const std::string what = label(v, seed, metric + ".json");
                json doc;
                try {
                    doc = json::parse(read_text(run_dir(v, seed) / (metric + ".json"), what));
                    const auto edges = doc.at("histogram").at("edges").get<std::vector<double>>();
                    const auto counts = doc.at("histogram").at("counts").get<std::vector<std::size_t>>();
                    require(edges.size() == counts.size() + 1, ErrorKind::Export,
                            "histogram edges and counts disagree in " + what);
                    for (std::size_t b = 0; b < counts.size(); ++b)
                        s += csv_field(v) + "," + std::to_string(seed) + "," + format_number(edges[b]) +
                             "," + format_number(edges[b + 1]) + "," + std::to_string(counts[b]) + "\n";
                } catch (const json::exception& e) {
                    fail(ErrorKind::Export, "missing metric 'histogram' in " + what + ": " + e.what());
                }
            }
        }
        const fs::path out = plots / (metric + "_histogram.csv");
        write_text(out, s);
        written.push_back(out);
    }

    {
        std::string s = "variant,seed,task,class,x,y\n";
        for (const auto& v : variants) {
            for (std::uint64_t seed : seeds) {
                const std::string what = label(v, seed, "projection.csv");
                const Csv csv = read_csv(run_dir(v, seed) / "projection.csv", what);
                const std::size_t cols[4] = {csv.column("task", what), csv.column("class", what),
                                             csv.column("x", what), csv.column("y", what)};
                for (const auto& row : csv.rows) {
                    s += csv_field(v) + "," + std::to_string(seed);
                    for (std::size_t c : cols) s += "," + row.at(c);
                    s += "\n";
                }
            }
        }
        write_text(plots / "projections.csv", s);
        written.push_back(plots / "projections.csv");
    }
    return written;
}

}  // namespace rlab::runner
