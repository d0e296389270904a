#pragma once

#include <vector>

#include "bln/tensor.hpp"

// Normalization layers. The batchless layer learns per-unit Gaussian
// statistics (mu, sigma) through a negative-log-likelihood loss whose
// stop-gradient placement keeps the statistics loss away from a_in and the
// normalized output away from mu/sigma. Batch normalization and batch
// renormalization are the baselines.

namespace bln {

inline constexpr double kSigmaFloor = 1e-12;

enum class SigmaMode { direct, log, inverse };
enum class Sharing { per_feature, per_channel };
enum class Phase { train, eval };

// sigma as a function of the learnable parameter (plain values).
// direct: sigma = p (sign preserved); log: sigma = exp(p); inverse: sigma = 1/p.
std::vector<double> sigma_from_param(const std::vector<double>& p, SigmaMode mode);
// Inverse map, used by sample initialization and migration.
std::vector<double> param_from_sigma(const std::vector<double>& sigma, SigmaMode mode);

// Same transform recorded on the tape so gradients reach the parameter.
Tensor sigma_from_param(const Tensor& p, SigmaMode mode);

struct BatchlessOut {
    Tensor a_out;
    Tensor nll_per_instance;  // [N]: lambda * mean over this instance's units
    Tensor nll;               // scalar: lambda * mean over all activation instances
    double gauge_mean;        // mean per-activation gauged loss (before squaring)
    double gauge_metric;      // mean of squared per-activation gauged losses
};

// a_in: [N,C] (per-feature) or [N,C,H,W] (per-channel); mu/sigma_param/
// gamma/beta: [C] leaves on a_in's tape. The 1/2 log 2pi constant is
// dropped from nll; exact_nll() restores it.
BatchlessOut batchless_forward(const Tensor& a_in, const Tensor& mu,
                               const Tensor& sigma_param, const Tensor& gamma,
                               const Tensor& beta, SigmaMode mode, Sharing sharing,
                               double lambda);

// nll with the 1/2 log(2 pi) constant restored.
double exact_nll(double nll, double lambda);

struct BatchNormState {
    std::vector<double> moving_mu, moving_var;
    std::vector<double> population_mu, population_var;
    bool finalized = false;
    double epsilon = 1e-5;
    double momentum = 0.99;
    // Renorm clip bounds. r is clipped to [1/r_max, r_max]; d is clipped to
    // [-(d_max-1), d_max-1] so that r_max = d_max = 1 degenerates to plain
    // batch normalization.
    double r_max = 3.0;
    double d_max = 5.0;

    void init(std::size_t units);
};

// Train phase normalizes by batch statistics (gradients flow through them)
// and updates the moving averages; eval normalizes by population statistics
// if finalized, else moving. Per-feature sharing requires batch size >= 2.
Tensor batchnorm_forward(const Tensor& a_in, const Tensor& gamma, const Tensor& beta,
                         BatchNormState& state, Phase phase, Sharing sharing,
                         bool update_moving = true);

// Renorm: xhat = ((x - mu_B)/sigma_B) * r + d with r, d clipped and treated
// as constants in the backward pass.
Tensor batchrenorm_forward(const Tensor& a_in, const Tensor& gamma, const Tensor& beta,
                           BatchNormState& state, Phase phase, Sharing sharing,
                           bool update_moving = true);

}  // namespace bln
