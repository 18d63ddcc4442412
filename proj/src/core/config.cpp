#include "config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "error.hpp"

namespace rlab::config {

using nlohmann::json;

namespace {

std::string type_name(const json& j) { return j.type_name(); }

// Reads one JSON object, remembering which keys were consumed so leftovers
// can be reported as unknown.
class Section {
  public:
    Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
        require(j.is_object(), ErrorKind::Config,
                label() + " must be an object, got " + type_name(j));
    }

    std::string key_path(const std::string& key) const {
        return path_.empty() ? key : path_ + "." + key;
    }

    const json* find(const std::string& key) {
        used_.insert(key);
        auto it = j_.find(key);
        return it == j_.end() ? nullptr : &*it;
    }

    const json& need(const std::string& key) {
        const json* v = find(key);
        require(v != nullptr, ErrorKind::Config, "missing required key '" + key_path(key) + "'");
        return *v;
    }

    template <typename T>
    void get(const std::string& key, T& out) {
        if (const json* v = find(key)) out = convert<T>(*v, key_path(key));
    }

    template <typename T>
    void get_optional(const std::string& key, std::optional<T>& out) {
        if (const json* v = find(key)) {
            if (v->is_null()) out.reset();
            else out = convert<T>(*v, key_path(key));
        }
    }

    void finish() const {
        for (auto it = j_.begin(); it != j_.end(); ++it) {
            if (!used_.count(it.key()))
                fail(ErrorKind::Config, "unknown key '" + key_path(it.key()) + "'");
        }
    }

    template <typename T>
    static T convert(const json& v, const std::string& where) {
        const auto mismatch = [&](const char* want) {
            fail(ErrorKind::Config,
                 "key '" + where + "' must be " + want + ", got " + type_name(v));
        };
        if constexpr (std::is_same_v<T, bool>) {
            if (!v.is_boolean()) mismatch("a boolean");
            return v.get<bool>();
        } else if constexpr (std::is_same_v<T, std::string>) {
            if (!v.is_string()) mismatch("a string");
            return v.get<std::string>();
        } else if constexpr (std::is_same_v<T, double>) {
            if (!v.is_number()) mismatch("a number");
            return v.get<double>();
        } else if constexpr (std::is_same_v<T, std::size_t> || std::is_same_v<T, std::uint64_t>) {
            if (!v.is_number_unsigned()) mismatch("a non-negative integer");
            return v.get<T>();
        } else if constexpr (std::is_same_v<T, std::vector<std::size_t>>) {
            if (!v.is_array()) mismatch("an array of non-negative integers");
            T out;
            for (std::size_t i = 0; i < v.size(); ++i)
                out.push_back(convert<std::size_t>(v[i], where + "[" + std::to_string(i) + "]"));
            return out;
        } else {
            static_assert(sizeof(T) == 0, "unsupported config type");
        }
    }

  private:
    std::string label() const { return path_.empty() ? "config" : "'" + path_ + "'"; }

    const json& j_;
    std::string path_;
    std::set<std::string> used_;
};

model::NetworkConfig network_defaults(const DatasetSpec& ds) {
    model::NetworkConfig n;
    if (ds.kind == "synthetic") {
        n.input_dim = ds.dim;
        n.num_classes = ds.num_classes;
    } else if (ds.kind == "idx") {
        n.input_dim = 784;
        n.num_classes = 10;
        n.output_activation = model::Activation::Sigmoid;
    } else {
        n.input_dim = 3 * ds.resolution * ds.resolution;
        n.num_classes = 100;
        n.output_activation = model::Activation::Sigmoid;
    }
    return n;
}

std::size_t dataset_classes(const DatasetSpec& ds) {
    if (ds.kind == "synthetic") return ds.num_classes;
    if (ds.kind == "idx") return 10;
    return 100;
}

DatasetSpec parse_dataset(const json& j) {
    Section s(j, "dataset");
    DatasetSpec ds;
    ds.kind = Section::convert<std::string>(s.need("kind"), "dataset.kind");
    if (ds.kind == "synthetic") {
        s.get("num_classes", ds.num_classes);
        s.get("dim", ds.dim);
        s.get("samples_per_class", ds.samples_per_class);
        s.get("spread", ds.spread);
        s.get("seed", ds.seed);
    } else if (ds.kind == "idx") {
        ds.train_images = Section::convert<std::string>(s.need("train_images"), "dataset.train_images");
        ds.train_labels = Section::convert<std::string>(s.need("train_labels"), "dataset.train_labels");
        ds.test_images = Section::convert<std::string>(s.need("test_images"), "dataset.test_images");
        ds.test_labels = Section::convert<std::string>(s.need("test_labels"), "dataset.test_labels");
    } else if (ds.kind == "cifar100") {
        ds.train_file = Section::convert<std::string>(s.need("train_file"), "dataset.train_file");
        ds.test_file = Section::convert<std::string>(s.need("test_file"), "dataset.test_file");
        s.get("resolution", ds.resolution);
    } else {
        fail(ErrorKind::Config, "key 'dataset.kind' must be one of synthetic, idx, cifar100; got '" +
                                    ds.kind + "'");
    }
    s.finish();
    return ds;
}

json dataset_json(const DatasetSpec& ds) {
    json j{{"kind", ds.kind}};
    if (ds.kind == "synthetic") {
        j["num_classes"] = ds.num_classes;
        j["dim"] = ds.dim;
        j["samples_per_class"] = ds.samples_per_class;
        j["spread"] = ds.spread;
        j["seed"] = ds.seed;
    } else if (ds.kind == "idx") {
        j["train_images"] = ds.train_images;
        j["train_labels"] = ds.train_labels;
        j["test_images"] = ds.test_images;
        j["test_labels"] = ds.test_labels;
    } else {
        j["train_file"] = ds.train_file;
        j["test_file"] = ds.test_file;
        j["resolution"] = ds.resolution;
    }
    return j;
}

void parse_trainer(const json& j, trainer::TrainerConfig& t) {
    Section s(j, "trainer");
    s.get("num_tasks", t.num_tasks);
    s.get("classes_per_task", t.classes_per_task);
    s.get("epochs_per_task", t.epochs_per_task);
    s.get("batch_size", t.batch_size);
    s.get("replay_batch_size", t.replay_batch_size);
    s.get("learning_rate", t.learning_rate);
    s.get("distillation_temperature", t.distillation_temperature);
    s.get_optional("current_weight", t.current_weight);
    s.get("pretrain_epochs", t.pretrain_epochs);
    s.get_optional("class_order_seed", t.class_order_seed);
    s.get("diagnostic_samples", t.diagnostic_samples);
    if (const json* w = s.find("loss_weights")) {
        Section ws(*w, "trainer.loss_weights");
        ws.get("reconstruction", t.weights.reconstruction);
        ws.get("kl", t.weights.kl);
        ws.get("classification", t.weights.classification);
        ws.get("distillation", t.weights.distillation);
        ws.finish();
    }
    if (const json* si = s.find("si")) {
        Section ss(*si, "trainer.si");
        ss.get("strength", t.si_strength);
        ss.get("damping", t.si_damping);
        ss.finish();
    }
    s.finish();
}

json trainer_json(const trainer::TrainerConfig& t) {
    json j{
        {"num_tasks", t.num_tasks},
        {"classes_per_task", t.classes_per_task},
        {"epochs_per_task", t.epochs_per_task},
        {"batch_size", t.batch_size},
        {"replay_batch_size", t.replay_batch_size},
        {"learning_rate", t.learning_rate},
        {"distillation_temperature", t.distillation_temperature},
        {"pretrain_epochs", t.pretrain_epochs},
        {"diagnostic_samples", t.diagnostic_samples},
        {"loss_weights",
         {{"reconstruction", t.weights.reconstruction},
          {"kl", t.weights.kl},
          {"classification", t.weights.classification},
          {"distillation", t.weights.distillation}}},
        {"si", {{"strength", t.si_strength}, {"damping", t.si_damping}}},
    };
    if (t.current_weight) j["current_weight"] = *t.current_weight;
    if (t.class_order_seed) j["class_order_seed"] = *t.class_order_seed;
    return j;
}

void parse_network(const json& j, model::NetworkConfig& n) {
    Section s(j, "network");
    s.get("input_dim", n.input_dim);
    s.get("perceptual_dims", n.perceptual_dims);
    s.get("fc_dims", n.fc_dims);
    s.get("latent_dim", n.latent_dim);
    s.get("num_classes", n.num_classes);
    s.get("internal_replay_level", n.internal_replay_level);
    s.get("gate_fraction", n.gate_fraction);
    s.get("embedding_layer", n.embedding_layer);
    s.get("seed", n.seed);
    std::string act;
    if (const json* v = s.find("perceptual_activation")) {
        act = Section::convert<std::string>(*v, "network.perceptual_activation");
        n.perceptual_activation = model::parse_activation(act);
    }
    if (const json* v = s.find("output_activation")) {
        act = Section::convert<std::string>(*v, "network.output_activation");
        n.output_activation = model::parse_activation(act);
    }
    s.finish();
}

json network_json(const model::NetworkConfig& n) {
    json j = model::to_json(n);
    // Derived per run from the trainer settings and variant flags.
    j.erase("num_tasks");
    j.erase("context_gating");
    j.erase("conditional_prior");
    return j;
}

trainer::AblationFlags parse_flags(const json& j, const std::string& path,
                                   trainer::AblationFlags f) {
    Section s(j, path);
    s.get("replay", f.replay);
    s.get("internal_replay", f.internal_replay);
    s.get("synaptic_intelligence", f.synaptic_intelligence);
    s.get("context_gating", f.context_gating);
    s.get("conditional_replay", f.conditional_replay);
    s.get("distillation", f.distillation);
    s.finish();
    return f;
}

json flags_json(const trainer::AblationFlags& f) {
    return json{{"replay", f.replay},
                {"internal_replay", f.internal_replay},
                {"synaptic_intelligence", f.synaptic_intelligence},
                {"context_gating", f.context_gating},
                {"conditional_replay", f.conditional_replay},
                {"distillation", f.distillation}};
}

std::vector<VariantSpec> parse_variants(const json& j) {
    require(j.is_array(), ErrorKind::Config, "key 'variants' must be an array, got " + type_name(j));
    std::vector<VariantSpec> out;
    for (std::size_t i = 0; i < j.size(); ++i) {
        const std::string path = "variants[" + std::to_string(i) + "]";
        Section s(j[i], path);
        VariantSpec v;
        v.name = Section::convert<std::string>(s.need("name"), path + ".name");
        const auto named = trainer::named_variant(v.name);
        const json* flags = s.find("flags");
        require(named.has_value() || flags != nullptr, ErrorKind::Config,
                "variant '" + v.name + "' is not a known variant name, so " + path +
                    ".flags is required");
        v.flags = named.value_or(trainer::AblationFlags{});
        if (flags) v.flags = parse_flags(*flags, path + ".flags", v.flags);
        s.finish();
        out.push_back(std::move(v));
    }
    return out;
}

}  // namespace

const VariantSpec* ExperimentConfig::find_variant(const std::string& name) const {
    for (const auto& v : variants)
        if (v.name == name) return &v;
    return nullptr;
}

ExperimentConfig parse_config(const json& doc, const std::filesystem::path& base_dir) {
    Section s(doc, "");
    ExperimentConfig c;
    c.base_dir = base_dir;
    c.dataset = parse_dataset(s.need("dataset"));
    c.network = network_defaults(c.dataset);
    if (const json* t = s.find("trainer")) parse_trainer(*t, c.trainer);
    if (const json* n = s.find("network")) parse_network(*n, c.network);
    c.variants = parse_variants(s.need("variants"));
    if (const json* seeds = s.find("seeds")) {
        require(seeds->is_array(), ErrorKind::Config, "key 'seeds' must be an array");
        c.seeds.clear();
        for (std::size_t i = 0; i < seeds->size(); ++i)
            c.seeds.push_back(
                Section::convert<std::uint64_t>((*seeds)[i], "seeds[" + std::to_string(i) + "]"));
    } else {
        c.seeds = {0};
    }
    s.get("output_dir", c.output_dir);
    s.get("workers", c.workers);
    s.get("checkpoints", c.checkpoints);
    s.finish();
    validate(c);
    return c;
}

ExperimentConfig parse_config_text(const std::string& text, const std::filesystem::path& base_dir) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::parse_error& e) {
        fail(ErrorKind::Config, std::string("config is not valid JSON: ") + e.what());
    }
    return parse_config(doc, base_dir);
}

ExperimentConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    require(in.good(), ErrorKind::Io, "cannot open config file " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config_text(ss.str(), path.parent_path());
}

json to_json(const ExperimentConfig& c) {
    json variants = json::array();
    for (const auto& v : c.variants) variants.push_back({{"name", v.name}, {"flags", flags_json(v.flags)}});
    return json{
        {"dataset", dataset_json(c.dataset)},
        {"trainer", trainer_json(c.trainer)},
        {"network", network_json(c.network)},
        {"variants", std::move(variants)},
        {"seeds", c.seeds},
        {"output_dir", c.output_dir},
        {"workers", c.workers},
        {"checkpoints", c.checkpoints},
    };
}

std::string serialize_config(const ExperimentConfig& config) { return to_json(config).dump(2) + "\n"; }

void validate(const ExperimentConfig& c) {
    const auto& t = c.trainer;
    require(!c.seeds.empty(), ErrorKind::Config, "key 'seeds' must list at least one seed");
    require(std::set<std::uint64_t>(c.seeds.begin(), c.seeds.end()).size() == c.seeds.size(),
            ErrorKind::Config, "key 'seeds' contains duplicates");
    require(!c.variants.empty(), ErrorKind::Config, "key 'variants' must list at least one variant");
    std::set<std::string> names, slugs;
    for (const auto& v : c.variants) {
        require(names.insert(v.name).second, ErrorKind::Config,
                "variant name '" + v.name + "' is not unique");
        require(slugs.insert(trainer::variant_slug(v.name)).second, ErrorKind::Config,
                "variant '" + v.name + "' maps to the same directory as another variant");
    }
    require(c.workers >= 1, ErrorKind::Config, "key 'workers' must be at least 1");
    require(t.num_tasks >= 1, ErrorKind::Config, "key 'trainer.num_tasks' must be at least 1");
    require(t.classes_per_task >= 1, ErrorKind::Config,
            "key 'trainer.classes_per_task' must be at least 1");
    require(t.epochs_per_task >= 1, ErrorKind::Config, "key 'trainer.epochs_per_task' must be at least 1");
    require(t.batch_size >= 1, ErrorKind::Config, "key 'trainer.batch_size' must be at least 1");
    require(t.learning_rate > 0.0, ErrorKind::Config, "key 'trainer.learning_rate' must be positive");
    require(t.distillation_temperature > 0.0, ErrorKind::Config,
            "key 'trainer.distillation_temperature' must be positive");
    require(t.diagnostic_samples >= 1, ErrorKind::Config,
            "key 'trainer.diagnostic_samples' must be at least 1");
    require(t.si_damping > 0.0, ErrorKind::Config, "key 'trainer.si.damping' must be positive");
    require(t.si_strength >= 0.0, ErrorKind::Config, "key 'trainer.si.strength' must be non-negative");
    if (t.current_weight)
        require(*t.current_weight >= 0.0 && *t.current_weight <= 1.0, ErrorKind::Config,
                "key 'trainer.current_weight' must lie in [0, 1]");
    require(t.num_tasks * t.classes_per_task <= dataset_classes(c.dataset), ErrorKind::Config,
            "trainer.num_tasks x trainer.classes_per_task exceeds the dataset's " +
                std::to_string(dataset_classes(c.dataset)) + " classes");

    const auto& ds = c.dataset;
    if (ds.kind == "synthetic") {
        require(ds.num_classes >= 1 && ds.dim >= 1, ErrorKind::Config,
                "synthetic dataset needs positive num_classes and dim");
        require(ds.samples_per_class >= 5, ErrorKind::Config,
                "key 'dataset.samples_per_class' must be at least 5");
        require(ds.spread >= 0.0, ErrorKind::Config, "key 'dataset.spread' must be non-negative");
    } else if (ds.kind == "cifar100") {
        require(ds.resolution >= 1 && 32 % ds.resolution == 0, ErrorKind::Config,
                "key 'dataset.resolution' must divide 32");
    }
    for (const std::string* p : {&ds.train_images, &ds.train_labels, &ds.test_images, &ds.test_labels,
                                 &ds.train_file, &ds.test_file}) {
        if (p->empty()) continue;
        require(std::filesystem::exists(resolve_path(c, *p)), ErrorKind::Config,
                "dataset path '" + *p + "' does not exist");
    }

    model::NetworkConfig n = c.network;
    n.num_tasks = t.num_tasks;
    n.validate();
    require(n.num_classes >= dataset_classes(ds), ErrorKind::Config,
            "key 'network.num_classes' is smaller than the dataset's class count");
}

std::filesystem::path resolve_path(const ExperimentConfig& config, const std::string& path) {
    std::filesystem::path p(path);
    if (p.is_relative() && !config.base_dir.empty()) return config.base_dir / p;
    return p;
}

data::DatasetPair load_dataset(const ExperimentConfig& c) {
    const auto& ds = c.dataset;
    data::DatasetPair pair;
    if (ds.kind == "synthetic") {
        pair = data::make_synthetic_blobs(ds.num_classes, ds.dim, ds.samples_per_class, ds.spread,
                                          ds.seed);
    } else if (ds.kind == "idx") {
        pair.train = data::load_idx(resolve_path(c, ds.train_images), resolve_path(c, ds.train_labels));
        pair.test = data::load_idx(resolve_path(c, ds.test_images), resolve_path(c, ds.test_labels));
    } else {
        pair.train = data::load_cifar100_binary(resolve_path(c, ds.train_file), ds.resolution);
        pair.test = data::load_cifar100_binary(resolve_path(c, ds.test_file), ds.resolution);
    }
    pair.train.split = data::Split::Train;
    pair.test.split = data::Split::Test;
    require(pair.train.dim() == c.network.input_dim, ErrorKind::Config,
            "dataset has " + std::to_string(pair.train.dim()) + " features but network.input_dim is " +
                std::to_string(c.network.input_dim));
    return pair;
}

}  // namespace rlab::config
