#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "bln/data.hpp"
#include "bln/network.hpp"
#include "bln/optim.hpp"

namespace bln {

// One experiment cell: a (norm kind, batch size) pair run `runs` times with
// derived seeds. Defaults are the reduced desk scale; the paper-scale values
// (100 runs, 50000 images, 60 epochs) are one config away.
struct RunConfig {
    NormKind norm = NormKind::binlog;
    std::size_t batch_size = 16;
    std::uint64_t seed = 1;
    std::size_t runs = 10;
    double lambda = 0.1;
    double lr = 0.01;  // spiral protocol value; CIFAR runs use 0.001
    bool lambda_as_lr = false;  // apply lambda as a stats-lr multiplier instead
    double dropout = -1.0;      // <0: architecture default

    std::size_t median_window = 15;
    std::size_t patience = 1000;
    std::size_t hard_cap = 20000;

    std::size_t fluct_batches = 1000;
    std::size_t fluct_grid = 8;

    SpiralParams spiral;

    std::size_t epochs = 5;
    std::size_t subset = 5000;
    std::size_t init_sample = 1000;
    std::size_t eval_chunk = 256;

    std::string checkpoint_dir;  // non-empty: save each run's final model there

    void validate() const;  // ConfigError on nonsense combinations
};

// Convergence rule: the median training loss of the last `window` batches
// has not reached a new low for `patience` batches. Batches counted from 0.
class ConvergenceDetector {
  public:
    explicit ConvergenceDetector(std::size_t window = 15, std::size_t patience = 1000);

    // Feed one per-batch task loss (cross-entropy only). Once triggered,
    // returns the number of batches seen.
    std::optional<std::size_t> push(double loss);
    std::size_t seen() const { return n_; }

  private:
    std::size_t window_, patience_;
    std::size_t n_ = 0, best_at_ = 0;
    bool has_best_ = false;
    double best_ = 0.0;
    std::vector<double> ring_;
};

// Average KL(snapshot || pointwise mean) over snapshots and sites.
// snapshots[t] holds n_sites * n_classes probabilities.
double fluctuation_score(const std::vector<std::vector<double>>& snapshots,
                         std::size_t n_sites, std::size_t n_classes, double floor = 1e-12);

// grid x grid measurement sites over the bounding box of a 2-d dataset,
// flattened (x, y) pairs.
std::vector<double> grid_sites(const Dataset& d, std::size_t grid);

// Deterministic per-run seed derivation (splitmix64 of the mixed inputs).
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream, std::uint64_t index);

// Eval-phase mean cross-entropy and top-1 accuracy, in chunks. BN/BRN models
// should be finalized against the training set first.
std::pair<double, double> evaluate_validation(Model& model, const Dataset& val,
                                              std::size_t chunk = 256);

struct SpiralRunResult {
    std::uint64_t run_seed = 0;
    bool diverged = false;
    bool converged = false;
    std::size_t batches = 0;  // batches until convergence (cap if not converged)
    double val_loss = 0.0, val_acc = 0.0, fluctuation = 0.0;
    std::vector<double> gauge_metric;  // per batchless layer, final batch
    std::vector<double> loss_trace;    // per-batch task loss
    std::string checkpoint_path;       // when RunConfig::checkpoint_dir is set
};

struct SpiralCell {
    NormKind norm = NormKind::none;
    std::size_t batch_size = 0;
    bool inapplicable = false;  // BN/BRN at batch size 1
    std::size_t n_diverged = 0;
    // Means over non-diverged runs (NaN when none).
    double mean_val_loss = 0.0, mean_fluctuation = 0.0, mean_batches = 0.0;
    std::vector<SpiralRunResult> runs;
};

SpiralRunResult run_spiral_single(const RunConfig& cfg, const Dataset& train,
                                  const Dataset& val, std::uint64_t run_seed,
                                  bool keep_trace = false);
SpiralCell run_spiral_cell(const RunConfig& cfg, const Dataset& train, const Dataset& val);

struct CifarEpoch {
    std::size_t epoch = 0;  // 1-based
    double val_loss = 0.0, val_acc = 0.0;
    std::vector<double> gauge_metric;  // per batchless layer, mean over the epoch
};

struct CifarRunResult {
    std::uint64_t run_seed = 0;
    bool inapplicable = false;  // BN at batch size 1 (per-feature layers)
    bool diverged = false;
    std::vector<CifarEpoch> trace;
    double max_acc = 0.0, min_loss = 0.0;
    std::string checkpoint_path;
};

// Trains on the first `subset` training images for `epochs` epochs; batchless
// models are initialized from the first min(init_sample, subset) samples.
CifarRunResult run_cifar(const RunConfig& cfg, const Dataset& train, const Dataset& val);

// Gradients of the full-batch objective, and the same objective accumulated
// one instance at a time (each per-instance backward seeded 1/N). Equal
// bitwise for none and the batchless kinds; provably unequal for BN/BRN.
std::vector<std::vector<double>> batch_grads(Model& model, const std::vector<double>& x,
                                             const std::vector<std::size_t>& y);
std::vector<std::vector<double>> accumulated_grads(Model& model,
                                                   const std::vector<double>& x,
                                                   const std::vector<std::size_t>& y,
                                                   std::size_t group = 1);

}  // namespace bln
