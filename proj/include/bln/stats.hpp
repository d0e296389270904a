#pragma once

#include "bln/data.hpp"
#include "bln/network.hpp"

namespace bln {

// Population statistics for BN/BRN layers from a full pass over the data,
// one layer at a time: layer k's input is observed with layers before it
// already running on their own finalized statistics.
void finalize_population_stats(Model& model, const Dataset& data, std::size_t chunk = 256);

// Initializes each batchless layer's mu/sigma from the observed statistics
// of its input on the sample, front to back (one pass per layer; earlier
// layers already initialized). gamma/beta untouched.
void init_from_sample(Model& model, const std::vector<double>& sample_inputs, std::size_t n,
                      std::size_t chunk = 256);

// BN/BRN model -> batchless model of the given kind: mu <- stored mean,
// sigma <- sqrt(stored var + eps), gamma/beta copied; all other weights
// copied. Uses population statistics when finalized, else moving.
Model migrate_from_batchnorm(const Model& src, NormKind target);

// Plain model -> batchless model: one statistics pass over the sample; at
// each insertion point mu/sigma from observed stats and beta <- mu,
// gamma <- sigma, so the migrated model computes the same function.
Model migrate_from_plain(const Model& src, NormKind target,
                         const std::vector<double>& sample_inputs, std::size_t n,
                         std::size_t chunk = 256);

// Max abs difference of eval-phase logits on the given probe inputs.
double max_output_difference(Model& a, Model& b, const std::vector<double>& inputs,
                             std::size_t n);

}  // namespace bln
