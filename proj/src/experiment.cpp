#include "bln/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <limits>

#include "bln/checkpoint.hpp"
#include "bln/stats.hpp"

namespace bln {

void RunConfig::validate() const {
    if (batch_size == 0) throw ConfigError("batch size must be >= 1");
    if (runs == 0) throw ConfigError("run count must be >= 1");
    if (median_window == 0) throw ConfigError("median window must be >= 1");
    if (patience < median_window) throw ConfigError("patience must be >= median window");
    if (fluct_grid < 2) throw ConfigError("fluctuation grid must be >= 2");
    if (lambda < 0.0) throw ConfigError("lambda must be >= 0");
    if (lr <= 0.0) throw ConfigError("learning rate must be > 0");
}

// ---- convergence -----------------------------------------------------------

ConvergenceDetector::ConvergenceDetector(std::size_t window, std::size_t patience)
    : window_(window), patience_(patience) {
    if (window_ == 0) throw ConfigError("median window must be >= 1");
    if (patience_ < window_) throw ConfigError("patience must be >= median window");
    ring_.resize(window_);
}

std::optional<std::size_t> ConvergenceDetector::push(double loss) {
    ring_[n_ % window_] = loss;
    ++n_;
    if (n_ < window_) return std::nullopt;
    std::vector<double> w = ring_;
    std::nth_element(w.begin(), w.begin() + w.size() / 2, w.end());
    double med = w[w.size() / 2];
    if (window_ % 2 == 0) {
        // lower-half max completes the conventional even-window median
        const double lo = *std::max_element(w.begin(), w.begin() + w.size() / 2);
        med = 0.5 * (med + lo);
    }
    if (!has_best_ || med < best_) {
        has_best_ = true;
        best_ = med;
        best_at_ = n_;
        return std::nullopt;
    }
    if (n_ - best_at_ >= patience_) return n_;
    return std::nullopt;
}

// ---- fluctuation -----------------------------------------------------------

double fluctuation_score(const std::vector<std::vector<double>>& snapshots,
                         std::size_t n_sites, std::size_t n_classes, double floor) {
    if (snapshots.empty()) throw ContractError("fluctuation needs at least one snapshot");
    const std::size_t width = n_sites * n_classes;
    std::vector<double> mean(width, 0.0);
    for (const auto& s : snapshots) {
        if (s.size() != width) throw ShapeError("fluctuation: snapshot width mismatch");
        for (std::size_t i = 0; i < width; ++i) mean[i] += s[i];
    }
    for (double& v : mean) v /= static_cast<double>(snapshots.size());

    double total = 0.0;
    for (const auto& s : snapshots) {
        for (std::size_t i = 0; i < width; ++i) {
            const double p = s[i];
            if (p <= 0.0) continue;  // p log p -> 0
            total += p * (std::log(std::max(p, floor)) - std::log(std::max(mean[i], floor)));
        }
    }
    return total / (static_cast<double>(snapshots.size()) * static_cast<double>(n_sites));
}

std::vector<double> grid_sites(const Dataset& d, std::size_t grid) {
    if (numel(d.input_shape) != 2) throw ShapeError("grid sites need 2-d inputs");
    if (d.size() == 0) throw ContractError("grid sites need a non-empty dataset");
    double xmin = d.inputs[0], xmax = d.inputs[0], ymin = d.inputs[1], ymax = d.inputs[1];
    for (std::size_t i = 0; i < d.size(); ++i) {
        xmin = std::min(xmin, d.inputs[2 * i]);
        xmax = std::max(xmax, d.inputs[2 * i]);
        ymin = std::min(ymin, d.inputs[2 * i + 1]);
        ymax = std::max(ymax, d.inputs[2 * i + 1]);
    }
    std::vector<double> sites;
    sites.reserve(grid * grid * 2);
    for (std::size_t iy = 0; iy < grid; ++iy) {
        for (std::size_t ix = 0; ix < grid; ++ix) {
            const double fx = static_cast<double>(ix) / static_cast<double>(grid - 1);
            const double fy = static_cast<double>(iy) / static_cast<double>(grid - 1);
            sites.push_back(xmin + (xmax - xmin) * fx);
            sites.push_back(ymin + (ymax - ymin) * fy);
        }
    }
    return sites;
}

// ---- seeds -----------------------------------------------------------------

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

}  // namespace

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream, std::uint64_t index) {
    return splitmix64(splitmix64(base + 0x1000 * stream) + index);
}

// ---- evaluation ------------------------------------------------------------

std::pair<double, double> evaluate_validation(Model& model, const Dataset& val,
                                              std::size_t chunk) {
    if (val.size() == 0) throw ContractError("validation set is empty");
    if (chunk == 0) chunk = 1;
    const std::size_t per = val.instance_size();
    const std::size_t classes = model.n_classes;
    ForwardOptions fo;
    fo.phase = Phase::eval;
    fo.update_moving = false;
    double ce_sum = 0.0;
    std::size_t correct = 0;
    std::vector<double> buf;
    for (std::size_t at = 0; at < val.size(); at += chunk) {
        const std::size_t take = std::min(chunk, val.size() - at);
        buf.assign(val.inputs.begin() + at * per, val.inputs.begin() + (at + take) * per);
        ForwardResult fw = forward(model, buf, take, fo);
        const std::vector<double>& logits = fw.logits.values();
        for (std::size_t i = 0; i < take; ++i) {
            const double* row = logits.data() + i * classes;
            std::size_t arg = 0;
            double mx = row[0];
            for (std::size_t c = 1; c < classes; ++c)
                if (row[c] > mx) {
                    mx = row[c];
                    arg = c;
                }
            double se = 0.0;
            for (std::size_t c = 0; c < classes; ++c) se += std::exp(row[c] - mx);
            const std::size_t y = val.labels[at + i];
            ce_sum += mx + std::log(se) - row[y];
            if (arg == y) ++correct;
        }
    }
    const double n = static_cast<double>(val.size());
    return {ce_sum / n, static_cast<double>(correct) / n};
}

// ---- spiral protocol -------------------------------------------------------

namespace {

struct Trainer {
    Model& model;
    Optimizer opt;
    BatchSampler sampler;
    std::mt19937_64 dropout_rng;
    const Dataset& train;
    double stats_lr_mult;
    std::vector<double> x;
    std::vector<std::size_t> y;
    std::vector<double> last_gauge;

    Trainer(Model& m, const Dataset& tr, const AdamConfig& acfg, std::size_t batch,
            std::uint64_t run_seed, BatchSampler::Mode mode, double stats_mult)
        : model(m),
          opt(m, acfg),
          sampler(tr, batch, derive_seed(run_seed, 2, 0), mode),
          dropout_rng(derive_seed(run_seed, 3, 0)),
          train(tr),
          stats_lr_mult(stats_mult) {}

    // One optimizer step; returns the task loss (NaN-safe: caller checks).
    double step() {
        sampler.next_batch(train, x, y);
        ForwardOptions fo;
        fo.phase = Phase::train;
        fo.rng = &dropout_rng;
        ForwardResult fw = forward(model, x, y.size(), fo);
        LossResult L = total_loss(model, fw, y);
        GradientMap gm = fw.tape->backward(L.total);
        std::vector<std::vector<double>> grads = param_grads(model, fw, gm);
        apply_weight_decay(model, grads);
        opt.step(model, grads, stats_lr_mult);
        last_gauge = fw.gauge_metric;
        double check = L.task_loss;
        for (double v : fw.nll_value) check += v;
        return std::isfinite(check) ? L.task_loss
                                    : std::numeric_limits<double>::quiet_NaN();
    }
};

std::vector<double> snapshot_probs(Model& model, const std::vector<double>& sites,
                                   std::size_t n_sites) {
    ForwardOptions fo;
    fo.phase = Phase::eval;
    fo.update_moving = false;
    ForwardResult fw = forward(model, sites, n_sites, fo);
    return softmax_rows(fw.logits.values(), n_sites, model.n_classes);
}

}  // namespace

SpiralRunResult run_spiral_single(const RunConfig& cfg, const Dataset& train,
                                  const Dataset& val, std::uint64_t run_seed,
                                  bool keep_trace) {
    cfg.validate();
    SpiralRunResult r;
    r.run_seed = run_seed;

    BuildOptions bo;
    bo.dropout_rate = cfg.dropout;
    bo.lambda = cfg.lambda_as_lr ? 1.0 : cfg.lambda;
    Model model = build_spiral_mlp(cfg.norm, derive_seed(run_seed, 1, 0), bo);
    if (is_batchless(cfg.norm) && cfg.init_sample > 0)
        init_from_sample(model, train.inputs, std::min(cfg.init_sample, train.size()),
                         cfg.eval_chunk);

    AdamConfig acfg;
    acfg.lr = cfg.lr;
    acfg.amsgrad = true;
    Trainer tr(model, train, acfg, cfg.batch_size, run_seed, BatchSampler::Mode::iid,
               cfg.lambda_as_lr ? cfg.lambda : 1.0);

    ConvergenceDetector det(cfg.median_window, cfg.patience);
    while (tr.opt.steps() < cfg.hard_cap) {
        const double task = tr.step();
        if (!std::isfinite(task)) {
            r.diverged = true;
            r.batches = tr.opt.steps();
            return r;
        }
        if (keep_trace) r.loss_trace.push_back(task);
        if (auto at = det.push(task)) {
            r.converged = true;
            r.batches = *at;
            break;
        }
    }
    if (!r.converged) r.batches = tr.opt.steps();

    // Fluctuation: keep training, snapshot the eval outputs after each step.
    const std::vector<double> sites = grid_sites(train, cfg.fluct_grid);
    const std::size_t n_sites = cfg.fluct_grid * cfg.fluct_grid;
    std::vector<std::vector<double>> snaps;
    snaps.reserve(cfg.fluct_batches);
    for (std::size_t b = 0; b < cfg.fluct_batches; ++b) {
        const double task = tr.step();
        if (!std::isfinite(task)) {
            r.diverged = true;
            return r;
        }
        snaps.push_back(snapshot_probs(model, sites, n_sites));
    }
    r.fluctuation = fluctuation_score(snaps, n_sites, model.n_classes);
    r.gauge_metric = tr.last_gauge;

    if (model.norm_kind == NormKind::bn || model.norm_kind == NormKind::brn)
        finalize_population_stats(model, train, cfg.eval_chunk);
    std::tie(r.val_loss, r.val_acc) = evaluate_validation(model, val, cfg.eval_chunk);
    if (!cfg.checkpoint_dir.empty()) {
        std::filesystem::create_directories(cfg.checkpoint_dir);
        r.checkpoint_path = cfg.checkpoint_dir + "/spiral_" +
                            std::string(to_string(cfg.norm)) + "_b" +
                            std::to_string(cfg.batch_size) + "_s" +
                            std::to_string(run_seed) + ".ckpt";
        save_checkpoint(model, r.checkpoint_path);
    }
    return r;
}

SpiralCell run_spiral_cell(const RunConfig& cfg, const Dataset& train, const Dataset& val) {
    cfg.validate();
    SpiralCell cell;
    cell.norm = cfg.norm;
    cell.batch_size = cfg.batch_size;
    const bool batch_stats = cfg.norm == NormKind::bn || cfg.norm == NormKind::brn;
    if (batch_stats && cfg.batch_size < 2) {
        cell.inapplicable = true;
        return cell;
    }
    double loss = 0.0, fluct = 0.0, batches = 0.0;
    std::size_t ok = 0;
    for (std::size_t run = 0; run < cfg.runs; ++run) {
        const std::uint64_t rs =
            derive_seed(cfg.seed, 10 + static_cast<std::uint64_t>(cfg.norm),
                        cfg.batch_size * 1000 + run);
        SpiralRunResult r = run_spiral_single(cfg, train, val, rs, run == 0);
        if (r.diverged) {
            ++cell.n_diverged;
        } else {
            loss += r.val_loss;
            fluct += r.fluctuation;
            batches += static_cast<double>(r.batches);
            ++ok;
        }
        cell.runs.push_back(std::move(r));
    }
    const double denom =
        ok ? static_cast<double>(ok) : std::numeric_limits<double>::quiet_NaN();
    cell.mean_val_loss = loss / denom;
    cell.mean_fluctuation = fluct / denom;
    cell.mean_batches = batches / denom;
    return cell;
}

// ---- CIFAR protocol --------------------------------------------------------

CifarRunResult run_cifar(const RunConfig& cfg, const Dataset& train, const Dataset& val) {
    cfg.validate();
    if (cfg.epochs == 0) throw ConfigError("epoch count must be >= 1");
    CifarRunResult r;
    r.run_seed = derive_seed(cfg.seed, 20 + static_cast<std::uint64_t>(cfg.norm),
                             cfg.batch_size);
    r.min_loss = std::numeric_limits<double>::infinity();

    const bool batch_stats = cfg.norm == NormKind::bn || cfg.norm == NormKind::brn;
    if (batch_stats && cfg.batch_size < 2) {
        // the dense-stage per-feature layers need at least two instances
        r.inapplicable = true;
        return r;
    }

    Dataset sub;
    sub.input_shape = train.input_shape;
    sub.n_classes = train.n_classes;
    sub.split = "train";
    const std::size_t n = std::min(cfg.subset, train.size());
    if (n == 0) throw ConfigError("empty training subset");
    sub.inputs.assign(train.inputs.begin(),
                      train.inputs.begin() + n * train.instance_size());
    sub.labels.assign(train.labels.begin(), train.labels.begin() + n);

    BuildOptions bo;
    bo.dropout_rate = cfg.dropout;
    bo.lambda = cfg.lambda_as_lr ? 1.0 : cfg.lambda;
    Model model = build_cifar_cnn(cfg.norm, derive_seed(r.run_seed, 1, 0), bo);
    if (is_batchless(cfg.norm))
        init_from_sample(model, sub.inputs, std::min(cfg.init_sample, n), cfg.eval_chunk);

    AdamConfig acfg;
    acfg.lr = cfg.lr;
    Trainer tr(model, sub, acfg, cfg.batch_size, r.run_seed,
               BatchSampler::Mode::epoch_shuffle, cfg.lambda_as_lr ? cfg.lambda : 1.0);

    const std::size_t per_epoch = std::max<std::size_t>(1, n / cfg.batch_size);
    const std::size_t n_gauge = model.norm_kind == NormKind::none ? 0 : [&] {
        std::size_t c = 0;
        for (const LayerSpec& l : model.layers)
            if (l.kind == LayerKind::norm && is_batchless(l.norm)) ++c;
        return c;
    }();

    for (std::size_t e = 1; e <= cfg.epochs; ++e) {
        std::vector<double> gauge(n_gauge, 0.0);
        for (std::size_t b = 0; b < per_epoch; ++b) {
            const double task = tr.step();
            if (!std::isfinite(task)) {
                r.diverged = true;
                return r;
            }
            for (std::size_t g = 0; g < n_gauge; ++g) gauge[g] += tr.last_gauge[g];
        }
        for (double& g : gauge) g /= static_cast<double>(per_epoch);
        if (batch_stats) finalize_population_stats(model, sub, cfg.eval_chunk);
        CifarEpoch pt;
        pt.epoch = e;
        std::tie(pt.val_loss, pt.val_acc) = evaluate_validation(model, val, cfg.eval_chunk);
        pt.gauge_metric = std::move(gauge);
        r.max_acc = std::max(r.max_acc, pt.val_acc);
        r.min_loss = std::min(r.min_loss, pt.val_loss);
        r.trace.push_back(std::move(pt));
    }
    if (!cfg.checkpoint_dir.empty()) {
        std::filesystem::create_directories(cfg.checkpoint_dir);
        r.checkpoint_path = cfg.checkpoint_dir + "/cifar_" +
                            std::string(to_string(cfg.norm)) + "_b" +
                            std::to_string(cfg.batch_size) + ".ckpt";
        save_checkpoint(model, r.checkpoint_path);
    }
    return r;
}

// ---- gradient-protocol equivalence -----------------------------------------

std::vector<std::vector<double>> batch_grads(Model& model, const std::vector<double>& x,
                                             const std::vector<std::size_t>& y) {
    ForwardOptions fo;
    fo.phase = Phase::train;
    fo.update_moving = false;
    ForwardResult fw = forward(model, x, y.size(), fo);
    LossResult L = total_loss(model, fw, y);
    GradientMap gm = fw.tape->backward(L.total);
    return param_grads(model, fw, gm);
}

std::vector<std::vector<double>> accumulated_grads(Model& model,
                                                   const std::vector<double>& x,
                                                   const std::vector<std::size_t>& y,
                                                   std::size_t group) {
    if (group == 0) throw ConfigError("accumulation group must be >= 1");
    const std::size_t n = y.size();
    const std::size_t per = numel(model.input_shape);
    ForwardOptions fo;
    fo.phase = Phase::train;
    fo.update_moving = false;
    std::vector<std::vector<double>> acc = zero_grads_like(model);
    std::vector<double> xs;
    std::vector<std::size_t> ys;
    for (std::size_t at = 0; at < n; at += group) {
        const std::size_t take = std::min(group, n - at);
        xs.assign(x.begin() + at * per, x.begin() + (at + take) * per);
        ys.assign(y.begin() + at, y.begin() + at + take);
        ForwardResult fw = forward(model, xs, take, fo);
        LossResult L = total_loss(model, fw, ys);
        GradientMap gm =
            fw.tape->backward(L.total, static_cast<double>(take) / static_cast<double>(n));
        accumulate_grads(acc, param_grads(model, fw, gm));
    }
    return acc;
}

}  // namespace bln
