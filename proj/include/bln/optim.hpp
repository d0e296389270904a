#pragma once

#include <map>
#include <string>
#include <vector>

#include "bln/network.hpp"

namespace bln {

struct AdamConfig {
    double lr = 0.001;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    bool amsgrad = false;
};

// Per-parameter moment state. t is shared by the owning Optimizer.
struct MomentState {
    std::vector<double> m, v, vmax;
    void init(std::size_t n, bool amsgrad);
};

// One bias-corrected update of a flat parameter vector. step_t counts from 1.
void adam_step(std::vector<double>& params, const std::vector<double>& grads,
               MomentState& state, const AdamConfig& cfg, std::size_t step_t,
               double lr_multiplier = 1.0);
void amsgrad_step(std::vector<double>& params, const std::vector<double>& grads,
                  MomentState& state, const AdamConfig& cfg, std::size_t step_t,
                  double lr_multiplier = 1.0);

// g <- g + decay * theta for the named parameters. Norm-layer parameters are
// never decayed, regardless of the map. Unknown names are a config error.
void apply_weight_decay(const Model& model, std::vector<std::vector<double>>& grads,
                        const std::map<std::string, double>& decay_map);
// Convenience: model.weight_decay on every decay-flagged parameter.
void apply_weight_decay(const Model& model, std::vector<std::vector<double>>& grads);

class Optimizer {
  public:
    Optimizer(const Model& model, AdamConfig cfg);

    // grads: one vector per model param, shaped like it. lambda_lr, when not
    // 1, multiplies the learning rate of the statistics parameters (the
    // lr-multiplier alternative to scaling the statistics loss).
    void step(Model& model, const std::vector<std::vector<double>>& grads,
              double stats_lr_multiplier = 1.0);

    std::size_t steps() const { return t_; }
    const AdamConfig& config() const { return cfg_; }

  private:
    AdamConfig cfg_;
    std::vector<MomentState> states_;
    std::size_t t_ = 0;
};

// Gradient accumulation support: grads_out += grads_in (same layout).
void accumulate_grads(std::vector<std::vector<double>>& acc,
                      const std::vector<std::vector<double>>& g);
std::vector<std::vector<double>> zero_grads_like(const Model& model);

// Extract per-parameter gradients from a backward pass.
std::vector<std::vector<double>> param_grads(const Model& model, const ForwardResult& fw,
                                             const GradientMap& gm);

}  // namespace bln
