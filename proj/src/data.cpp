#include "bln/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <numeric>

namespace bln {

void Dataset::gather(const std::vector<std::size_t>& idx, std::vector<double>& x,
                     std::vector<std::size_t>& y) const {
    const std::size_t per = instance_size();
    x.resize(idx.size() * per);
    y.resize(idx.size());
    for (std::size_t i = 0; i < idx.size(); ++i) {
        std::copy_n(inputs.begin() + idx[i] * per, per, x.begin() + i * per);
        y[i] = labels[idx[i]];
    }
}

std::pair<double, double> spiral_point(std::size_t k, double t, const SpiralParams& p) {
    const double theta = p.turns * 2.0 * std::numbers::pi * t +
                         2.0 * std::numbers::pi * static_cast<double>(k) / 3.0;
    const double r = p.r_max * t;
    return {r * std::cos(theta), r * std::sin(theta)};
}

namespace {

Dataset make_spiral_split(std::mt19937_64& rng, std::size_t per_class, const SpiralParams& p,
                          const char* split, std::uint64_t seed) {
    Dataset d;
    d.input_shape = Shape{2};
    d.n_classes = 3;
    d.split = split;
    d.seed = seed;
    std::uniform_real_distribution<double> ut(0.0, 1.0);
    std::normal_distribution<double> gauss(0.0, 1.0);
    for (std::size_t k = 0; k < 3; ++k) {
        for (std::size_t i = 0; i < per_class; ++i) {
            const double t = ut(rng);
            auto [x, y] = spiral_point(k, t, p);
            const double s = p.noise * t;  // diffusion grows outward
            x += s * gauss(rng);
            y += s * gauss(rng);
            d.inputs.push_back(x);
            d.inputs.push_back(y);
            d.labels.push_back(k);
        }
    }
    return d;
}

}  // namespace

std::pair<Dataset, Dataset> generate_spirals(std::uint64_t seed, SpiralParams p) {
    if (p.n_train_per_class == 0 || p.n_val_per_class == 0)
        throw ConfigError("spiral counts must be positive");
    std::mt19937_64 rng(seed);
    Dataset train = make_spiral_split(rng, p.n_train_per_class, p, "train", seed);
    Dataset val = make_spiral_split(rng, p.n_val_per_class, p, "val", seed);
    return {std::move(train), std::move(val)};
}

void export_csv(const Dataset& d, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IngestError("cannot write " + path);
    out << "x,y,label\n";
    char buf[80];
    for (std::size_t i = 0; i < d.size(); ++i) {
        std::snprintf(buf, sizeof buf, "%.9g,%.9g,%zu\n", d.inputs[2 * i],
                      d.inputs[2 * i + 1], d.labels[i]);
        out << buf;
    }
}

// ---- CIFAR-10 --------------------------------------------------------------

namespace {
constexpr std::size_t kRecord = 3073;
constexpr std::size_t kPixels = 3072;
}  // namespace

Dataset load_cifar10_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IngestError("cannot open " + path);
    in.seekg(0, std::ios::end);
    const std::size_t bytes = static_cast<std::size_t>(in.tellg());
    in.seekg(0);
    if (bytes == 0 || bytes % kRecord != 0)
        throw IngestError(path + ": size " + std::to_string(bytes) +
                          " is not a multiple of 3073-byte records");
    const std::size_t n = bytes / kRecord;
    Dataset d;
    d.input_shape = Shape{3, 32, 32};
    d.n_classes = 10;
    d.inputs.resize(n * kPixels);
    d.labels.resize(n);
    std::vector<unsigned char> rec(kRecord);
    for (std::size_t i = 0; i < n; ++i) {
        if (!in.read(reinterpret_cast<char*>(rec.data()), kRecord))
            throw IngestError(path + ": short read at byte offset " +
                              std::to_string(i * kRecord));
        if (rec[0] > 9)
            throw IngestError(path + ": label byte " + std::to_string(int(rec[0])) +
                              " out of range at record " + std::to_string(i));
        d.labels[i] = rec[0];
        double* px = d.inputs.data() + i * kPixels;
        for (std::size_t j = 0; j < kPixels; ++j) px[j] = rec[1 + j] / 255.0;
    }
    return d;
}

Cifar10 load_cifar10(const std::string& dir) {
    Cifar10 c;
    c.train.input_shape = Shape{3, 32, 32};
    c.train.n_classes = 10;
    c.train.split = "train";
    for (int b = 1; b <= 5; ++b) {
        Dataset part = load_cifar10_file(dir + "/data_batch_" + std::to_string(b) + ".bin");
        c.train.inputs.insert(c.train.inputs.end(), part.inputs.begin(), part.inputs.end());
        c.train.labels.insert(c.train.labels.end(), part.labels.begin(), part.labels.end());
    }
    c.val = load_cifar10_file(dir + "/test_batch.bin");
    c.val.split = "val";
    return c;
}

void save_cifar10_file(const std::string& path, const Dataset& d, std::size_t first,
                       std::size_t count) {
    if (numel(d.input_shape) != kPixels) throw ShapeError("save_cifar10_file: not 3x32x32 data");
    if (first + count > d.size()) throw ContractError("save_cifar10_file: range out of bounds");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IngestError("cannot write " + path);
    std::vector<unsigned char> rec(kRecord);
    for (std::size_t i = first; i < first + count; ++i) {
        rec[0] = static_cast<unsigned char>(d.labels[i]);
        const double* px = d.inputs.data() + i * kPixels;
        for (std::size_t j = 0; j < kPixels; ++j) {
            const double v = std::round(px[j] * 255.0);
            rec[1 + j] = static_cast<unsigned char>(std::clamp(v, 0.0, 255.0));
        }
        out.write(reinterpret_cast<const char*>(rec.data()), kRecord);
    }
}

namespace {

// Low-frequency random field on a 32x32 grid.
struct Field {
    double a[4], fx[4], fy[4], ph[4];

    static Field random(std::mt19937_64& rng, double amp) {
        std::uniform_real_distribution<double> uf(0.5, 3.0);
        std::uniform_real_distribution<double> up(0.0, 2.0 * std::numbers::pi);
        std::normal_distribution<double> ga(0.0, amp);
        Field f;
        for (int j = 0; j < 4; ++j) {
            f.a[j] = ga(rng);
            f.fx[j] = uf(rng);
            f.fy[j] = uf(rng);
            f.ph[j] = up(rng);
        }
        return f;
    }

    double at(double x, double y) const {
        double s = 0.0;
        for (int j = 0; j < 4; ++j)
            s += a[j] * std::sin(2.0 * std::numbers::pi * (fx[j] * x + fy[j] * y) / 32.0 + ph[j]);
        return s;
    }
};

Dataset synth_cifar_split(std::mt19937_64& rng, const std::vector<std::array<Field, 3>>& bases,
                          std::size_t n) {
    Dataset d;
    d.input_shape = Shape{3, 32, 32};
    d.n_classes = 10;
    d.inputs.resize(n * kPixels);
    d.labels.resize(n);
    std::uniform_int_distribution<std::size_t> uc(0, 9);
    std::normal_distribution<double> gn(0.0, 1.0);
    std::uniform_real_distribution<double> ub(-30.0, 30.0);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t k = uc(rng);
        d.labels[i] = k;
        const double brightness = ub(rng);
        std::array<Field, 3> distort = {Field::random(rng, 0.5), Field::random(rng, 0.5),
                                        Field::random(rng, 0.5)};
        double* px = d.inputs.data() + i * kPixels;
        for (std::size_t c = 0; c < 3; ++c) {
            for (std::size_t y = 0; y < 32; ++y) {
                for (std::size_t x = 0; x < 32; ++x) {
                    double v = 128.0 + brightness + 55.0 * bases[k][c].at(double(x), double(y)) +
                               45.0 * distort[c].at(double(x), double(y)) + 18.0 * gn(rng);
                    v = std::round(std::clamp(v, 0.0, 255.0));
                    px[(c * 32 + y) * 32 + x] = v / 255.0;
                }
            }
        }
    }
    return d;
}

}  // namespace

void generate_synthetic_cifar(const std::string& dir, std::uint64_t seed,
                              std::size_t train_per_file, std::size_t test_records) {
    std::filesystem::create_directories(dir);
    std::mt19937_64 rng(seed);
    std::vector<std::array<Field, 3>> bases(10);
    for (auto& b : bases)
        b = {Field::random(rng, 0.55), Field::random(rng, 0.55), Field::random(rng, 0.55)};
    for (int b = 1; b <= 5; ++b) {
        Dataset part = synth_cifar_split(rng, bases, train_per_file);
        save_cifar10_file(dir + "/data_batch_" + std::to_string(b) + ".bin", part, 0,
                          part.size());
    }
    Dataset test = synth_cifar_split(rng, bases, test_records);
    save_cifar10_file(dir + "/test_batch.bin", test, 0, test.size());
}

// ---- sampling --------------------------------------------------------------

BatchSampler::BatchSampler(const Dataset& data, std::size_t batch_size, std::uint64_t seed,
                           Mode mode)
    : n_(data.size()), batch_(batch_size), mode_(mode), rng_(seed) {
    if (batch_ == 0 || batch_ > n_) throw ConfigError("batch size must be in [1, dataset size]");
    if (mode_ == Mode::epoch_shuffle) {
        perm_.resize(n_);
        std::iota(perm_.begin(), perm_.end(), 0);
        std::shuffle(perm_.begin(), perm_.end(), rng_);
    }
}

const std::vector<std::size_t>& BatchSampler::next() {
    out_.resize(batch_);
    if (mode_ == Mode::iid) {
        // uniform subset without replacement within the batch
        if (batch_ * 2 >= n_) {
            std::vector<std::size_t> all(n_);
            std::iota(all.begin(), all.end(), 0);
            for (std::size_t i = 0; i < batch_; ++i) {
                const std::size_t j =
                    std::uniform_int_distribution<std::size_t>(i, n_ - 1)(rng_);
                std::swap(all[i], all[j]);
                out_[i] = all[i];
            }
        } else {
            for (std::size_t i = 0; i < batch_; ++i) {
                std::size_t cand;
                bool dup;
                do {
                    cand = std::uniform_int_distribution<std::size_t>(0, n_ - 1)(rng_);
                    dup = std::find(out_.begin(), out_.begin() + i, cand) !=
                          out_.begin() + i;
                } while (dup);
                out_[i] = cand;
            }
        }
    } else {
        for (std::size_t i = 0; i < batch_; ++i) {
            if (pos_ == n_ || n_ - pos_ < batch_ - i) {
                std::shuffle(perm_.begin(), perm_.end(), rng_);
                pos_ = 0;
            }
            out_[i] = perm_[pos_++];
        }
    }
    return out_;
}

void BatchSampler::next_batch(const Dataset& d, std::vector<double>& x,
                              std::vector<std::size_t>& y) {
    d.gather(next(), x, y);
}

}  // namespace bln
