#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "autodiff.hpp"
#include "tensor.hpp"

namespace rlab::model {

using Rng = std::mt19937_64;

enum class Activation { Relu, Linear, Sigmoid };

std::string activation_name(Activation a);
Activation parse_activation(const std::string& name);

/// Architecture of the replay network.
///
/// Representation levels are numbered bottom-up: level 0 is the input,
/// levels 1..P are the frozen perceptual block, levels P+1..P+F are the
/// trainable fully connected encoder stack ("fcE"). The decoder mirrors
/// this: it maps the latent code to level P+F and walks back down to any
/// requested level.
struct NetworkConfig {
    std::size_t input_dim = 64;
    std::vector<std::size_t> perceptual_dims{256};
    std::vector<std::size_t> fc_dims{256, 256};
    std::size_t latent_dim = 32;
    std::size_t num_classes = 10;
    std::size_t num_tasks = 5;
    std::size_t internal_replay_level = 1;
    double gate_fraction = 0.8;
    /// Index into fc_dims of the layer exported for embedding analysis.
    std::size_t embedding_layer = 1;
    std::uint64_t seed = 0;
    Activation perceptual_activation = Activation::Relu;
    /// Activation of the input-level reconstruction.
    Activation output_activation = Activation::Linear;
    bool context_gating = true;
    /// Trainable class-conditional mixture prior; false pins the prior to N(0, I).
    bool conditional_prior = true;

    std::size_t num_perceptual() const noexcept { return perceptual_dims.size(); }
    /// Highest level index (P + F).
    std::size_t top_level() const noexcept { return perceptual_dims.size() + fc_dims.size(); }
    std::size_t level_width(std::size_t level) const;
    /// Level index of fc layer i.
    std::size_t fc_level(std::size_t i) const noexcept { return num_perceptual() + 1 + i; }
    std::string embedding_layer_name() const;

    void validate() const;
};

nlohmann::json to_json(const NetworkConfig& config);
NetworkConfig network_config_from_json(const nlohmann::json& j);

struct Dense {
    ad::Tensor weight;  // [in x out]
    ad::Tensor bias;    // [out]
};

struct LatentVars {
    ad::Var mu;
    ad::Var logvar;
};

struct GaussianMixturePrior {
    ad::Tensor means;    // [num_classes x latent_dim]
    ad::Tensor logvars;  // [num_classes x latent_dim]
    std::vector<int> seen_classes;  // sorted, unique
    bool trainable = true;

    bool has_seen(int class_id) const;
    void add_seen(std::span<const int> classes);
};

/// Draws n latents from the mode of `class_id`. Raises ReplayContract when
/// the class has not been seen.
ad::Tensor sample_conditional(const GaussianMixturePrior& prior, int class_id, std::size_t n,
                              Rng& rng);

/// Binary unit masks per (task, gated layer). Zero entries silence a unit.
struct ContextGateSet {
    std::vector<std::size_t> layer_widths;
    std::vector<std::size_t> layer_offsets;
    std::size_t num_tasks = 0;
    double gate_fraction = 0.0;
    std::uint64_t seed = 0;
    ad::Tensor masks;  // [num_tasks x sum(layer_widths)]

    std::span<const double> mask(std::size_t task, std::size_t layer) const;
};

ContextGateSet make_context_gates(std::size_t num_tasks, std::vector<std::size_t> layer_widths,
                                  double gate_fraction, std::uint64_t seed);

ad::Var reparameterize(const LatentVars& latent, ad::Var noise);

class ReplayModel {
  public:
    /// Parameter leaves of one model on one tape.
    struct Bound {
        ad::Tape* tape = nullptr;
        std::vector<ad::Var> enc_w, enc_b;  // per encoder layer (level l-1 -> l)
        std::vector<ad::Var> dec_w, dec_b;  // indexed by output level
        ad::Var mu_w, mu_b, logvar_w, logvar_b, cls_w, cls_b;
        ad::Var prior_means, prior_logvars;
        /// Leaves of trainable parameters, in trainable_parameters() order.
        std::vector<ad::Var> trainable;
    };

    struct Encoding {
        /// levels[l] is the activation at level l; entries below the start
        /// level hold the caller's input.
        std::vector<ad::Var> levels;
        LatentVars latent;
        ad::Var logits;
    };

    struct NamedParam {
        std::string name;
        ad::Tensor* tensor;
    };
    struct ConstNamedParam {
        std::string name;
        const ad::Tensor* tensor;
    };

    explicit ReplayModel(NetworkConfig config);

    const NetworkConfig& config() const noexcept { return config_; }
    GaussianMixturePrior& prior() noexcept { return prior_; }
    const GaussianMixturePrior& prior() const noexcept { return prior_; }
    const ContextGateSet& gates() const noexcept { return gates_; }

    /// Binds every parameter to `tape`. With `track_gradients` false the
    /// parameters enter the tape as constants.
    Bound bind(ad::Tape& tape, bool track_gradients);

    /// Runs the encoder from `from_level` (0 = raw input) to the top and
    /// evaluates the latent and class heads. Gating never applies here.
    Encoding encode(const Bound& bound, ad::Var x, std::size_t from_level = 0) const;

    /// Runs encoder layers from `from_level` up to `to_level` only.
    ad::Var propagate_up(const Bound& bound, ad::Var x, std::size_t from_level,
                         std::size_t to_level) const;

    /// Decodes latents down to `stop_level`. `task_ids` holds one task per
    /// row (or is empty); when non-empty and gating is enabled the matching
    /// task masks are applied to the fc-mirror decoder layers.
    ad::Var decode(const Bound& bound, ad::Var z, std::span<const int> task_ids,
                   std::size_t stop_level) const;
    /// Continues decoding from an activation `h` at `from_level`.
    ad::Var decode_from(const Bound& bound, ad::Var h, std::size_t from_level,
                        std::span<const int> task_ids, std::size_t stop_level) const;

    /// Marks perceptual encoder parameters as frozen (no gradient).
    void set_perceptual_trainable(bool trainable);
    /// Freezes or unfreezes the decoder layers that output levels below
    /// `level`.
    void set_lower_decoder_trainable(std::size_t level, bool trainable);

    std::vector<NamedParam> named_parameters();
    std::vector<ConstNamedParam> named_parameters() const;
    /// Parameters updated during continual training, in a fixed order.
    std::vector<ad::Tensor*> trainable_parameters();
    std::vector<ad::Tensor*> perceptual_parameters();
    std::size_t trainable_count();

    std::vector<Dense>& encoder_layers() noexcept { return encoder_; }
    std::vector<Dense>& decoder_layers() noexcept { return decoder_; }
    Dense& class_head() noexcept { return class_head_; }

  private:
    Activation level_activation(std::size_t level) const;
    ad::Var apply_gate(ad::Var h, std::size_t level, std::span<const int> task_ids) const;

    NetworkConfig config_;
    std::vector<Dense> encoder_;
    std::vector<Dense> decoder_;
    Dense mu_head_;
    Dense logvar_head_;
    Dense class_head_;
    GaussianMixturePrior prior_;
    ContextGateSet gates_;
};

ad::Var activate(ad::Var x, Activation a);

}  // namespace rlab::model
