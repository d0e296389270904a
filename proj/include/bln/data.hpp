#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "bln/errors.hpp"
#include "bln/tensor.hpp"

namespace bln {

struct Dataset {
    std::vector<double> inputs;  // instance-major, row-major per instance
    std::vector<std::size_t> labels;
    Shape input_shape;  // per instance
    std::size_t n_classes = 0;
    std::string split;  // "train" | "val"
    std::uint64_t seed = 0;

    std::size_t size() const { return labels.size(); }
    std::size_t instance_size() const { return numel(input_shape); }

    // Copies the given instances into a contiguous batch.
    void gather(const std::vector<std::size_t>& idx, std::vector<double>& x,
                std::vector<std::size_t>& y) const;
};

struct SpiralParams {
    std::size_t n_train_per_class = 20000;
    std::size_t n_val_per_class = 4000;
    double r_max = 4.0;
    double turns = 1.2;
    double noise = 0.5;  // gaussian std at t=1, grows linearly with t
};

// Three intertwined diffused spirals, one per class; deterministic per seed.
std::pair<Dataset, Dataset> generate_spirals(std::uint64_t seed, SpiralParams p = {});

// Noiseless curve point for class k at parameter t.
std::pair<double, double> spiral_point(std::size_t k, double t, const SpiralParams& p);

void export_csv(const Dataset& d, const std::string& path);  // x,y,label

// ---- CIFAR-10 binary format (3073-byte records: label + 3072 pixel bytes,
// channel-major R,G,B planes of 32x32). Pixels scaled to [0,1].

struct Cifar10 {
    Dataset train;  // data_batch_1..5.bin, file order preserved
    Dataset val;    // test_batch.bin
};

Cifar10 load_cifar10(const std::string& dir);
Dataset load_cifar10_file(const std::string& path);

// Serializes instances back to the binary record format (round-trip exact
// for data that came from the loader).
void save_cifar10_file(const std::string& path, const Dataset& d,
                       std::size_t first, std::size_t count);

// Synthetic stand-in when the real dataset is unavailable: 10 classes of
// low-frequency class patterns plus per-instance distortion and noise,
// written as standard binary batches (5 train files + test_batch.bin).
void generate_synthetic_cifar(const std::string& dir, std::uint64_t seed,
                              std::size_t train_per_file = 1200,
                              std::size_t test_records = 1000);

// ---- batch sampling

class BatchSampler {
  public:
    enum class Mode { iid, epoch_shuffle };

    BatchSampler(const Dataset& data, std::size_t batch_size, std::uint64_t seed, Mode mode);

    // Indices of the next batch (always exactly batch_size instances).
    const std::vector<std::size_t>& next();
    void next_batch(const Dataset& d, std::vector<double>& x, std::vector<std::size_t>& y);

    std::size_t batches_per_epoch() const { return n_ / batch_; }

  private:
    std::size_t n_, batch_;
    Mode mode_;
    std::mt19937_64 rng_;
    std::vector<std::size_t> perm_;
    std::size_t pos_ = 0;
    std::vector<std::size_t> out_;
};

}  // namespace bln
