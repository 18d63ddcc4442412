#include "model.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "error.hpp"

namespace rlab::model {

using ad::Tensor;
using ad::Var;

std::string activation_name(Activation a) {
    switch (a) {
        case Activation::Relu: return "relu";
        case Activation::Linear: return "linear";
        case Activation::Sigmoid: return "sigmoid";
    }
    return "relu";
}

Activation parse_activation(const std::string& name) {
    if (name == "relu") return Activation::Relu;
    if (name == "linear") return Activation::Linear;
    if (name == "sigmoid") return Activation::Sigmoid;
    fail(ErrorKind::Config, "unknown activation '" + name + "'");
}

std::size_t NetworkConfig::level_width(std::size_t level) const {
    require(level <= top_level(), ErrorKind::Contract,
            "level " + std::to_string(level) + " exceeds top level " + std::to_string(top_level()));
    if (level == 0) return input_dim;
    if (level <= num_perceptual()) return perceptual_dims[level - 1];
    return fc_dims[level - num_perceptual() - 1];
}

std::string NetworkConfig::embedding_layer_name() const {
    return "fcE.fcLayer" + std::to_string(embedding_layer + 1) + ".linear";
}

void NetworkConfig::validate() const {
    auto positive = [](std::size_t v, const char* what) {
        require(v > 0, ErrorKind::Config, std::string("network.") + what + " must be positive");
    };
    positive(input_dim, "input_dim");
    positive(latent_dim, "latent_dim");
    positive(num_classes, "num_classes");
    positive(num_tasks, "num_tasks");
    require(!perceptual_dims.empty(), ErrorKind::Config, "network.perceptual_dims must be non-empty");
    require(!fc_dims.empty(), ErrorKind::Config, "network.fc_dims must be non-empty");
    for (auto w : perceptual_dims) positive(w, "perceptual_dims[]");
    for (auto w : fc_dims) positive(w, "fc_dims[]");
    require(internal_replay_level < top_level(), ErrorKind::Config,
            "network.internal_replay_level must be below the number of encoder layers");
    require(gate_fraction >= 0.0 && gate_fraction <= 1.0, ErrorKind::Config,
            "network.gate_fraction must lie in [0, 1]");
    require(embedding_layer < fc_dims.size(), ErrorKind::Config,
            "network.embedding_layer must index fc_dims");
}

nlohmann::json to_json(const NetworkConfig& c) {
    return nlohmann::json{
        {"input_dim", c.input_dim},
        {"perceptual_dims", c.perceptual_dims},
        {"fc_dims", c.fc_dims},
        {"latent_dim", c.latent_dim},
        {"num_classes", c.num_classes},
        {"num_tasks", c.num_tasks},
        {"internal_replay_level", c.internal_replay_level},
        {"gate_fraction", c.gate_fraction},
        {"embedding_layer", c.embedding_layer},
        {"seed", c.seed},
        {"perceptual_activation", activation_name(c.perceptual_activation)},
        {"output_activation", activation_name(c.output_activation)},
        {"context_gating", c.context_gating},
        {"conditional_prior", c.conditional_prior},
    };
}

NetworkConfig network_config_from_json(const nlohmann::json& j) {
    NetworkConfig c;
    try {
        c.input_dim = j.at("input_dim").get<std::size_t>();
        c.perceptual_dims = j.at("perceptual_dims").get<std::vector<std::size_t>>();
        c.fc_dims = j.at("fc_dims").get<std::vector<std::size_t>>();
        c.latent_dim = j.at("latent_dim").get<std::size_t>();
        c.num_classes = j.at("num_classes").get<std::size_t>();
        c.num_tasks = j.at("num_tasks").get<std::size_t>();
        c.internal_replay_level = j.at("internal_replay_level").get<std::size_t>();
        c.gate_fraction = j.at("gate_fraction").get<double>();
        c.embedding_layer = j.at("embedding_layer").get<std::size_t>();
        c.seed = j.at("seed").get<std::uint64_t>();
        c.perceptual_activation = parse_activation(j.at("perceptual_activation").get<std::string>());
        c.output_activation = parse_activation(j.at("output_activation").get<std::string>());
        c.context_gating = j.at("context_gating").get<bool>();
        c.conditional_prior = j.at("conditional_prior").get<bool>();
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::Format, std::string("network config: ") + e.what());
    }
    c.validate();
    return c;
}

// --- prior -----------------------------------------------------------------

bool GaussianMixturePrior::has_seen(int class_id) const {
    return std::binary_search(seen_classes.begin(), seen_classes.end(), class_id);
}

void GaussianMixturePrior::add_seen(std::span<const int> classes) {
    for (int c : classes) {
        require(c >= 0 && static_cast<std::size_t>(c) < means.rows(), ErrorKind::Contract,
                "class id " + std::to_string(c) + " outside the prior");
        seen_classes.push_back(c);
    }
    std::sort(seen_classes.begin(), seen_classes.end());
    seen_classes.erase(std::unique(seen_classes.begin(), seen_classes.end()), seen_classes.end());
}

Tensor sample_conditional(const GaussianMixturePrior& prior, int class_id, std::size_t n,
                          Rng& rng) {
    require(prior.has_seen(class_id), ErrorKind::ReplayContract,
            "replay requested for unseen class " + std::to_string(class_id));
    require(n > 0, ErrorKind::Contract, "sample_conditional: n must be positive");
    const std::size_t d = prior.means.cols();
    Tensor out({n, d});
    std::normal_distribution<double> normal(0.0, 1.0);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t k = 0; k < d; ++k) {
            const double mu = prior.means.at(class_id, k);
            const double sd = std::exp(0.5 * prior.logvars.at(class_id, k));
            out.data[i * d + k] = mu + sd * normal(rng);
        }
    }
    return out;
}

// --- gates -----------------------------------------------------------------

std::span<const double> ContextGateSet::mask(std::size_t task, std::size_t layer) const {
    require(task < num_tasks, ErrorKind::Contract,
            "gate requested for task " + std::to_string(task) + " of " + std::to_string(num_tasks));
    require(layer < layer_widths.size(), ErrorKind::Contract, "gate layer out of range");
    const std::size_t total = masks.cols();
    return {masks.data.data() + task * total + layer_offsets[layer], layer_widths[layer]};
}

ContextGateSet make_context_gates(std::size_t num_tasks, std::vector<std::size_t> layer_widths,
                                  double gate_fraction, std::uint64_t seed) {
    require(gate_fraction >= 0.0 && gate_fraction <= 1.0, ErrorKind::Config,
            "gate_fraction must lie in [0, 1]");
    ContextGateSet gates;
    gates.num_tasks = num_tasks;
    gates.gate_fraction = gate_fraction;
    gates.seed = seed;
    std::size_t total = 0;
    for (auto w : layer_widths) {
        gates.layer_offsets.push_back(total);
        total += w;
    }
    gates.layer_widths = std::move(layer_widths);
    if (num_tasks == 0 || total == 0) return gates;
    gates.masks = Tensor({num_tasks, total}, 1.0);
    for (std::size_t task = 0; task < num_tasks; ++task) {
        for (std::size_t layer = 0; layer < gates.layer_widths.size(); ++layer) {
            const std::size_t width = gates.layer_widths[layer];
            const auto zeros = static_cast<std::size_t>(std::llround(gate_fraction * width));
            // Seeded per (seed, task, layer) so any mask can be regenerated alone.
            std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                              static_cast<std::uint32_t>(task), static_cast<std::uint32_t>(layer)};
            Rng rng(seq);
            std::vector<std::size_t> units(width);
            std::iota(units.begin(), units.end(), 0);
            std::shuffle(units.begin(), units.end(), rng);
            double* row = gates.masks.data.data() + task * total + gates.layer_offsets[layer];
            for (std::size_t i = 0; i < zeros; ++i) row[units[i]] = 0.0;
        }
    }
    return gates;
}

// --- network ---------------------------------------------------------------

Var reparameterize(const LatentVars& latent, Var noise) {
    require(noise.shape() == latent.mu.shape(), ErrorKind::Dimension,
            "reparameterize: noise " + noise.value().shape_string() + " does not match mu " +
                latent.mu.value().shape_string());
    return ad::add(latent.mu, ad::mul(ad::exp(ad::scale(latent.logvar, 0.5)), noise));
}

Var activate(Var x, Activation a) {
    switch (a) {
        case Activation::Relu: return ad::relu(x);
        case Activation::Sigmoid: return ad::sigmoid(x);
        case Activation::Linear: return x;
    }
    return x;
}

namespace {

Dense make_dense(std::size_t in, std::size_t out, Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    std::uniform_real_distribution<double> uniform(-bound, bound);
    Dense d{Tensor({in, out}), Tensor({out})};
    for (double& w : d.weight.data) w = uniform(rng);
    for (double& b : d.bias.data) b = uniform(rng);
    d.weight.requires_grad = true;
    d.bias.requires_grad = true;
    return d;
}

}  // namespace

ReplayModel::ReplayModel(NetworkConfig config) : config_(std::move(config)) {
    config_.validate();
    Rng rng(config_.seed);
    const std::size_t top = config_.top_level();
    for (std::size_t level = 1; level <= top; ++level) {
        encoder_.push_back(
            make_dense(config_.level_width(level - 1), config_.level_width(level), rng));
    }
    mu_head_ = make_dense(config_.level_width(top), config_.latent_dim, rng);
    logvar_head_ = make_dense(config_.level_width(top), config_.latent_dim, rng);
    class_head_ = make_dense(config_.level_width(top), config_.num_classes, rng);
    for (std::size_t level = 0; level <= top; ++level) {
        const std::size_t in = level == top ? config_.latent_dim : config_.level_width(level + 1);
        decoder_.push_back(make_dense(in, config_.level_width(level), rng));
    }

    prior_.means = Tensor({config_.num_classes, config_.latent_dim});
    prior_.logvars = Tensor({config_.num_classes, config_.latent_dim});
    prior_.trainable = config_.conditional_prior;
    if (config_.conditional_prior) {
        std::normal_distribution<double> normal(0.0, 1.0);
        for (double& m : prior_.means.data) m = normal(rng);
    }
    prior_.means.requires_grad = prior_.trainable;
    prior_.logvars.requires_grad = prior_.trainable;

    gates_ = make_context_gates(config_.num_tasks, config_.fc_dims, config_.gate_fraction,
                                config_.seed ^ 0x9e3779b97f4a7c15ULL);
    set_perceptual_trainable(false);
}

void ReplayModel::set_perceptual_trainable(bool trainable) {
    for (std::size_t i = 0; i < config_.num_perceptual(); ++i) {
        encoder_[i].weight.requires_grad = trainable;
        encoder_[i].bias.requires_grad = trainable;
    }
}

ReplayModel::Bound ReplayModel::bind(ad::Tape& tape, bool track_gradients) {
    Bound b;
    b.tape = &tape;
    std::map<const Tensor*, Var> lookup;
    for (auto& p : named_parameters()) {
        Tensor& t = *p.tensor;
        const Var v = track_gradients ? tape.leaf(t) : tape.constant(Tensor(t.shape, t.data));
        lookup[&t] = v;
        if (t.requires_grad) b.trainable.push_back(v);
    }
    for (Dense& d : encoder_) {
        b.enc_w.push_back(lookup.at(&d.weight));
        b.enc_b.push_back(lookup.at(&d.bias));
    }
    for (Dense& d : decoder_) {
        b.dec_w.push_back(lookup.at(&d.weight));
        b.dec_b.push_back(lookup.at(&d.bias));
    }
    b.mu_w = lookup.at(&mu_head_.weight);
    b.mu_b = lookup.at(&mu_head_.bias);
    b.logvar_w = lookup.at(&logvar_head_.weight);
    b.logvar_b = lookup.at(&logvar_head_.bias);
    b.cls_w = lookup.at(&class_head_.weight);
    b.cls_b = lookup.at(&class_head_.bias);
    b.prior_means = lookup.at(&prior_.means);
    b.prior_logvars = lookup.at(&prior_.logvars);
    return b;
}

Activation ReplayModel::level_activation(std::size_t level) const {
    if (level == 0) return config_.output_activation;
    if (level <= config_.num_perceptual()) return config_.perceptual_activation;
    return Activation::Relu;
}

Var ReplayModel::propagate_up(const Bound& bound, Var x, std::size_t from_level,
                              std::size_t to_level) const {
    require(to_level <= config_.top_level() && from_level <= to_level, ErrorKind::Contract,
            "propagate_up: invalid level range");
    require(x.cols() == config_.level_width(from_level), ErrorKind::Dimension,
            "input has " + std::to_string(x.cols()) + " columns, level " +
                std::to_string(from_level) + " expects " +
                std::to_string(config_.level_width(from_level)));
    Var h = x;
    for (std::size_t level = from_level + 1; level <= to_level; ++level) {
        h = activate(ad::affine(h, bound.enc_w[level - 1], bound.enc_b[level - 1]),
                     level <= config_.num_perceptual() ? config_.perceptual_activation
                                                       : Activation::Relu);
    }
    return h;
}

ReplayModel::Encoding ReplayModel::encode(const Bound& bound, Var x, std::size_t from_level) const {
    const std::size_t top = config_.top_level();
    require(from_level < top, ErrorKind::Contract, "encode: start level must be below the top");
    require(x.value().rank() == 2 && x.cols() == config_.level_width(from_level),
            ErrorKind::Dimension,
            "encode: input " + x.value().shape_string() + " does not match level width " +
                std::to_string(config_.level_width(from_level)));
    Encoding enc;
    enc.levels.assign(top + 1, x);
    for (std::size_t level = from_level + 1; level <= top; ++level) {
        enc.levels[level] = propagate_up(bound, enc.levels[level - 1], level - 1, level);
    }
    const Var h = enc.levels[top];
    enc.latent.mu = ad::affine(h, bound.mu_w, bound.mu_b);
    enc.latent.logvar = ad::affine(h, bound.logvar_w, bound.logvar_b);
    enc.logits = ad::affine(h, bound.cls_w, bound.cls_b);
    return enc;
}

Var ReplayModel::apply_gate(Var h, std::size_t level, std::span<const int> task_ids) const {
    if (!config_.context_gating || task_ids.empty() || level <= config_.num_perceptual()) return h;
    const std::size_t layer = level - config_.num_perceptual() - 1;
    const std::size_t rows = h.rows(), width = h.cols();
    require(task_ids.size() == rows, ErrorKind::Dimension,
            "decode: task id count does not match batch size");
    Tensor mask({rows, width});
    for (std::size_t r = 0; r < rows; ++r) {
        const auto m = gates_.mask(static_cast<std::size_t>(task_ids[r]), layer);
        std::copy(m.begin(), m.end(), mask.data.begin() + r * width);
    }
    return ad::mul(h, h.tape->constant(std::move(mask)));
}

Var ReplayModel::decode(const Bound& bound, Var z, std::span<const int> task_ids,
                        std::size_t stop_level) const {
    const std::size_t top = config_.top_level();
    require(stop_level < top, ErrorKind::Contract,
            "decode: stop level " + std::to_string(stop_level) + " is not below the decoder top " +
                std::to_string(top));
    require(z.value().rank() == 2 && z.cols() == config_.latent_dim, ErrorKind::Dimension,
            "decode: latent batch " + z.value().shape_string() + " does not match latent_dim");
    Var h = z;
    for (std::size_t level = top;; --level) {
        h = activate(ad::affine(h, bound.dec_w[level], bound.dec_b[level]), level_activation(level));
        h = apply_gate(h, level, task_ids);
        if (level == stop_level) break;
    }
    return h;
}

Var ReplayModel::decode_from(const Bound& bound, Var h, std::size_t from_level,
                             std::span<const int> task_ids, std::size_t stop_level) const {
    require(from_level <= config_.top_level() && stop_level < from_level, ErrorKind::Contract,
            "decode_from: invalid level range");
    require(h.cols() == config_.level_width(from_level), ErrorKind::Dimension,
            "decode_from: activation width does not match level " + std::to_string(from_level));
    for (std::size_t level = from_level; level-- > stop_level;) {
        h = activate(ad::affine(h, bound.dec_w[level], bound.dec_b[level]), level_activation(level));
        h = apply_gate(h, level, task_ids);
    }
    return h;
}

void ReplayModel::set_lower_decoder_trainable(std::size_t level, bool trainable) {
    for (std::size_t l = 0; l < level && l < decoder_.size(); ++l) {
        decoder_[l].weight.requires_grad = trainable;
        decoder_[l].bias.requires_grad = trainable;
    }
}

std::vector<ReplayModel::NamedParam> ReplayModel::named_parameters() {
    std::vector<NamedParam> out;
    const std::size_t p = config_.num_perceptual();
    for (std::size_t i = 0; i < encoder_.size(); ++i) {
        const std::string base = i < p ? "perceptual.layer" + std::to_string(i + 1)
                                       : "fcE.fcLayer" + std::to_string(i - p + 1) + ".linear";
        out.push_back({base + ".weight", &encoder_[i].weight});
        out.push_back({base + ".bias", &encoder_[i].bias});
    }
    out.push_back({"fcE.mu.weight", &mu_head_.weight});
    out.push_back({"fcE.mu.bias", &mu_head_.bias});
    out.push_back({"fcE.logvar.weight", &logvar_head_.weight});
    out.push_back({"fcE.logvar.bias", &logvar_head_.bias});
    out.push_back({"classifier.weight", &class_head_.weight});
    out.push_back({"classifier.bias", &class_head_.bias});
    for (std::size_t level = decoder_.size(); level-- > 0;) {
        const std::string base = "fcD.toLevel" + std::to_string(level);
        out.push_back({base + ".weight", &decoder_[level].weight});
        out.push_back({base + ".bias", &decoder_[level].bias});
    }
    out.push_back({"prior.means", &prior_.means});
    out.push_back({"prior.logvars", &prior_.logvars});
    return out;
}

std::vector<ReplayModel::ConstNamedParam> ReplayModel::named_parameters() const {
    std::vector<ConstNamedParam> out;
    for (auto& p : const_cast<ReplayModel*>(this)->named_parameters()) {
        out.push_back({p.name, p.tensor});
    }
    return out;
}

std::vector<Tensor*> ReplayModel::trainable_parameters() {
    std::vector<Tensor*> out;
    for (auto& p : named_parameters()) {
        if (p.tensor->requires_grad) out.push_back(p.tensor);
    }
    return out;
}

std::vector<Tensor*> ReplayModel::perceptual_parameters() {
    std::vector<Tensor*> out;
    for (std::size_t i = 0; i < config_.num_perceptual(); ++i) {
        out.push_back(&encoder_[i].weight);
        out.push_back(&encoder_[i].bias);
    }
    return out;
}

std::size_t ReplayModel::trainable_count() {
    std::size_t n = 0;
    for (Tensor* t : trainable_parameters()) n += t->size();
    return n;
}

}  // namespace rlab::model
