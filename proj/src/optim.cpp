#include "bln/optim.hpp"

#include <algorithm>
#include <cmath>

namespace bln {

void MomentState::init(std::size_t n, bool amsgrad) {
    m.assign(n, 0.0);
    v.assign(n, 0.0);
    if (amsgrad) vmax.assign(n, 0.0);
}

namespace {

void moment_update(std::vector<double>& params, const std::vector<double>& grads,
                   MomentState& s, const AdamConfig& cfg, std::size_t t, double lr_mult,
                   bool amsgrad) {
    if (params.size() != grads.size()) throw ShapeError("optimizer: grad/param size mismatch");
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
    const double lr = cfg.lr * lr_mult;
    for (std::size_t i = 0; i < params.size(); ++i) {
        const double g = grads[i];
        s.m[i] = cfg.beta1 * s.m[i] + (1.0 - cfg.beta1) * g;
        s.v[i] = cfg.beta2 * s.v[i] + (1.0 - cfg.beta2) * g * g;
        double vhat = s.v[i] / bc2;
        if (amsgrad) {
            s.vmax[i] = std::max(s.vmax[i], vhat);
            vhat = s.vmax[i];
        }
        const double mhat = s.m[i] / bc1;
        params[i] -= lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
}

}  // namespace

void adam_step(std::vector<double>& params, const std::vector<double>& grads,
               MomentState& state, const AdamConfig& cfg, std::size_t step_t,
               double lr_multiplier) {
    moment_update(params, grads, state, cfg, step_t, lr_multiplier, false);
}

void amsgrad_step(std::vector<double>& params, const std::vector<double>& grads,
                  MomentState& state, const AdamConfig& cfg, std::size_t step_t,
                  double lr_multiplier) {
    moment_update(params, grads, state, cfg, step_t, lr_multiplier, true);
}

void apply_weight_decay(const Model& model, std::vector<std::vector<double>>& grads,
                        const std::map<std::string, double>& decay_map) {
    for (const auto& [name, decay] : decay_map) {
        const std::size_t idx = model.find_param(name);
        if (idx == kNoParam) throw ConfigError("weight decay on unknown parameter: " + name);
        if (model.params[idx].is_norm) continue;  // hard exclusion
        const std::vector<double>& theta = model.params[idx].value;
        std::vector<double>& g = grads[idx];
        for (std::size_t i = 0; i < theta.size(); ++i) g[i] += decay * theta[i];
    }
}

void apply_weight_decay(const Model& model, std::vector<std::vector<double>>& grads) {
    if (model.weight_decay <= 0.0) return;
    for (std::size_t p = 0; p < model.params.size(); ++p) {
        if (!model.params[p].decay || model.params[p].is_norm) continue;
        const std::vector<double>& theta = model.params[p].value;
        std::vector<double>& g = grads[p];
        for (std::size_t i = 0; i < theta.size(); ++i) g[i] += model.weight_decay * theta[i];
    }
}

Optimizer::Optimizer(const Model& model, AdamConfig cfg) : cfg_(cfg) {
    states_.resize(model.params.size());
    for (std::size_t i = 0; i < model.params.size(); ++i)
        states_[i].init(model.params[i].value.size(), cfg_.amsgrad);
}

void Optimizer::step(Model& model, const std::vector<std::vector<double>>& grads,
                     double stats_lr_multiplier) {
    if (grads.size() != model.params.size())
        throw ShapeError("optimizer: grads layout mismatch");
    ++t_;
    for (std::size_t i = 0; i < model.params.size(); ++i) {
        const double mult = model.params[i].is_stat ? stats_lr_multiplier : 1.0;
        moment_update(model.params[i].value, grads[i], states_[i], cfg_, t_, mult,
                      cfg_.amsgrad);
    }
}

void accumulate_grads(std::vector<std::vector<double>>& acc,
                      const std::vector<std::vector<double>>& g) {
    if (acc.size() != g.size()) throw ShapeError("accumulate_grads: layout mismatch");
    for (std::size_t p = 0; p < acc.size(); ++p)
        for (std::size_t i = 0; i < acc[p].size(); ++i) acc[p][i] += g[p][i];
}

std::vector<std::vector<double>> zero_grads_like(const Model& model) {
    std::vector<std::vector<double>> g(model.params.size());
    for (std::size_t i = 0; i < model.params.size(); ++i)
        g[i].assign(model.params[i].value.size(), 0.0);
    return g;
}

std::vector<std::vector<double>> param_grads(const Model& model, const ForwardResult& fw,
                                             const GradientMap& gm) {
    std::vector<std::vector<double>> g(model.params.size());
    for (std::size_t i = 0; i < model.params.size(); ++i)
        g[i] = gm.at(Tensor{fw.tape.get(), fw.param_nodes[i]});
    return g;
}

}  // namespace bln
