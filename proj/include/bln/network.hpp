#pragma once

#include <array>
#include <cstdint>
#include <limits>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "bln/norm.hpp"
#include "bln/tensor.hpp"

namespace bln {

enum class NormKind { none, bn, brn, bin, binlog, bininv };

const char* to_string(NormKind k);
NormKind norm_kind_from_string(const std::string& s);
bool is_batchless(NormKind k);
SigmaMode sigma_mode_of(NormKind k);  // for bin/binlog/bininv

enum class Arch { spiral_mlp, cifar_cnn };
const char* to_string(Arch a);
Arch arch_from_string(const std::string& s);

enum class LayerKind { dense, conv, norm, isrlu_act, leaky_act, dropout, pool, flatten };

struct LayerSpec {
    LayerKind kind;
    std::size_t in = 0, out = 0;          // dense: features; conv: channels
    std::size_t ksize = 0;                // conv kernel edge
    double alpha = 0.0;                   // isrlu
    double slope = 0.0;                   // leaky relu
    double rate = 0.0;                    // dropout
    NormKind norm = NormKind::none;       // norm layers
    Sharing sharing = Sharing::per_feature;
    std::size_t units = 0;                // norm layer width
};

struct Param {
    std::string name;
    Shape shape;
    std::vector<double> value;
    bool decay = false;    // subject to L2 weight decay
    bool is_norm = false;  // mu/sigma/gamma/beta of a norm layer (never decayed)
    bool is_stat = false;  // mu or sigma_param (lambda lr-multiplier target)
};

constexpr std::size_t kNoParam = std::numeric_limits<std::size_t>::max();

struct Model {
    Arch arch;
    NormKind norm_kind;
    std::uint64_t seed = 0;
    std::vector<LayerSpec> layers;
    std::vector<Param> params;
    // Per layer: parameter indices. dense/conv: {W, b}; batchless norm:
    // {mu, sigma_param, gamma, beta}; bn/brn: {gamma, beta}.
    std::vector<std::array<std::size_t, 4>> layer_params;
    std::vector<std::size_t> bn_index;  // layer -> index into bn_states, or kNoParam
    std::vector<BatchNormState> bn_states;
    Shape input_shape;  // per instance
    std::size_t n_classes = 0;
    double weight_decay = 0.0;  // on dense/conv weight matrices
    double lambda = 0.1;
    bool narrow_init = false;

    std::size_t param_count() const;
    std::size_t find_param(const std::string& name) const;  // kNoParam if absent
};

struct BuildOptions {
    double dropout_rate = -1.0;  // <0: architecture default
    double lambda = 0.1;
    bool narrow_init = false;
};

// Appendix-style spiral classifier: dense 2->50, [norm], isrlu(4), dropout,
// twice {dense ->40, [norm], isrlu(4), dropout}, dense ->3. Dropout keep
// probability 0.9 (drop rate 0.1) by default; L2 decay 1e-6 on dense weights.
Model build_spiral_mlp(NormKind norm, std::uint64_t seed, BuildOptions opts = {});

// Conv stack for 3x32x32 inputs: leading per-channel [norm], conv 7/5/3 with
// 64 channels, leaky relu 0.3, per-channel [norm], dropout 0.25, 2x2 pools,
// flatten, dense 50/50/10 with per-feature [norm]. No BRN variant.
Model build_cifar_cnn(NormKind norm, std::uint64_t seed, BuildOptions opts = {});

struct ForwardOptions {
    Phase phase = Phase::train;
    std::mt19937_64* rng = nullptr;      // dropout masks (train only)
    bool update_moving = true;           // BN/BRN moving averages
    // Capture the input activation of these layer indices (values copied);
    // forward stops after the highest captured layer.
    std::vector<std::size_t> capture_inputs;
    bool capture_only = false;  // with capture_inputs: skip the remaining layers
};

struct ForwardResult {
    std::unique_ptr<Tape> tape;
    Tensor logits;                         // [N, classes]
    std::vector<Tensor> nll_per_instance;  // per batchless layer, each [N]
    std::vector<double> nll_value;         // per batchless layer (scalar mean)
    std::vector<double> gauge_metric;      // per batchless layer
    std::vector<double> gauge_mean;
    std::vector<std::size_t> norm_layer_of_nll;  // layer index per entry
    std::vector<std::size_t> param_nodes;        // node id per model param
    std::vector<std::vector<double>> captured;   // per capture point
    std::vector<Shape> captured_shape;
};

ForwardResult forward(Model& model, const std::vector<double>& inputs, std::size_t n,
                      const ForwardOptions& opts);

struct LossResult {
    Tensor total;         // scalar: mean over instances of (ce_i + sum_l nll_il)
    Tensor per_instance;  // [N]
    double task_loss;     // mean cross-entropy only (convergence signal)
};

// include_decay adds sum(decay * 1/2 ||W||^2) on the tape; training normally
// folds decay into gradients instead (see optim.hpp).
LossResult total_loss(const Model& model, ForwardResult& fw,
                      const std::vector<std::size_t>& labels, bool include_decay = false);

// Inverted dropout on the tape: train zeroes units with probability `rate`
// and scales survivors by 1/(1-rate); eval is the identity.
Tensor dropout(const Tensor& x, double rate, Phase phase, std::mt19937_64* rng);

}  // namespace bln
