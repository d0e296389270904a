// Command-line front end: experiment suites, dataset generation, checkpoint
// utilities, and report rendering. Exit codes: 0 success, 1 contract or
// divergence failure (artifacts still written), 2 usage/ingestion error.

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <random>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "bln/checkpoint.hpp"
#include "bln/data.hpp"
#include "bln/experiment.hpp"
#include "bln/kernels.hpp"
#include "bln/report.hpp"
#include "bln/stats.hpp"

namespace {

using namespace bln;

std::uint64_t resolve_seed(std::uint64_t seed, bool seeded) {
    if (!seeded) {
        std::random_device rd;
        seed = (static_cast<std::uint64_t>(rd()) << 32) ^ rd();
    }
    std::cout << "seed: " << seed << "\n";
    return seed;
}

std::vector<NormKind> parse_norms(const std::vector<std::string>& names) {
    std::vector<NormKind> out;
    for (const std::string& n : names) out.push_back(norm_kind_from_string(n));
    return out;
}

// Sample inputs for checkpoint commands: spiral models draw a fresh seeded
// dataset, CIFAR models read the binary batches.
std::vector<double> make_sample(const Model& m, std::size_t n, std::uint64_t seed,
                                const std::string& data_dir) {
    Dataset src;
    if (m.arch == Arch::spiral_mlp) {
        SpiralParams p;
        p.n_train_per_class = (n + 2) / 3;
        p.n_val_per_class = 1;
        src = generate_spirals(seed, p).first;
    } else {
        if (data_dir.empty())
            throw ConfigError("--data-dir is required for CIFAR-architecture checkpoints");
        src = load_cifar10(data_dir).train;
    }
    if (src.size() < n) throw ConfigError("sample larger than available data");
    return {src.inputs.begin(), src.inputs.begin() + n * src.instance_size()};
}

std::vector<double> mean_gauge(Model& m, const std::vector<double>& inputs, std::size_t n,
                               std::size_t chunk = 256) {
    ForwardOptions fo;
    fo.phase = Phase::eval;
    fo.update_moving = false;
    const std::size_t per = numel(m.input_shape);
    std::vector<double> acc;
    double weight = 0.0;
    std::vector<double> buf;
    for (std::size_t at = 0; at < n; at += chunk) {
        const std::size_t take = std::min(chunk, n - at);
        buf.assign(inputs.begin() + at * per, inputs.begin() + (at + take) * per);
        ForwardResult fw = forward(m, buf, take, fo);
        if (acc.empty()) acc.assign(fw.gauge_metric.size(), 0.0);
        for (std::size_t i = 0; i < acc.size(); ++i)
            acc[i] += fw.gauge_metric[i] * static_cast<double>(take);
        weight += static_cast<double>(take);
    }
    for (double& v : acc) v /= weight;
    return acc;
}

std::vector<std::string> base_meta(const std::string& cmd, std::uint64_t seed) {
    return {"command: " + cmd, "seed: " + std::to_string(seed),
            "kernel backend: " + std::string(kernels::backend_name())};
}

// ---- spiral ----------------------------------------------------------------

struct SpiralArgs {
    std::vector<std::string> norms = {"binlog"};
    std::vector<std::size_t> batches = {16};
    RunConfig cfg;
    std::uint64_t seed = 0;
    bool seeded = false;
    std::string out = "out";
};

int cmd_spiral(SpiralArgs& a) {
    a.cfg.seed = resolve_seed(a.seed, a.seeded);
    std::filesystem::create_directories(a.out);
    auto [train, val] = generate_spirals(derive_seed(a.cfg.seed, 0, 0), a.cfg.spiral);

    std::vector<SpiralCell> cells;
    for (std::size_t b : a.batches) {
        for (NormKind n : parse_norms(a.norms)) {
            RunConfig cfg = a.cfg;
            cfg.norm = n;
            cfg.batch_size = b;
            std::cout << "cell " << to_string(n) << " batch " << b << "..." << std::flush;
            cells.push_back(run_spiral_cell(cfg, train, val));
            const SpiralCell& c = cells.back();
            if (c.inapplicable)
                std::cout << " inapplicable\n";
            else
                std::cout << " mean val loss " << fmt9(c.mean_val_loss) << " ("
                          << c.n_diverged << " diverged)\n";
        }
    }

    std::vector<std::string> meta = base_meta("spiral", a.cfg.seed);
    meta.push_back("runs per cell: " + std::to_string(a.cfg.runs));
    meta.push_back("lambda: " + fmt9(a.cfg.lambda));
    meta.push_back("lr: " + fmt9(a.cfg.lr));
    meta.push_back("median window: " + std::to_string(a.cfg.median_window));
    meta.push_back("patience: " + std::to_string(a.cfg.patience));
    meta.push_back("hard cap: " + std::to_string(a.cfg.hard_cap));
    meta.push_back("fluctuation batches: " + std::to_string(a.cfg.fluct_batches));
    meta.push_back("fluctuation grid: " + std::to_string(a.cfg.fluct_grid));
    meta.push_back("batch counts from batch 0 (median warm-up included)");
    meta.push_back("spiral: r_max " + fmt9(a.cfg.spiral.r_max) + ", turns " +
                   fmt9(a.cfg.spiral.turns) + ", noise " + fmt9(a.cfg.spiral.noise) +
                   ", train/class " + std::to_string(a.cfg.spiral.n_train_per_class) +
                   ", val/class " + std::to_string(a.cfg.spiral.n_val_per_class));

    Csv runs = spiral_runs_table(cells, meta);
    write_csv(a.out + "/spiral_runs.csv", runs);
    std::vector<AggRow> agg = aggregate_spiral_runs(runs);
    for (const char* metric : {"val_loss", "fluctuation", "batches"}) {
        Csv piv = pivot_table(agg, metric);
        piv.meta.insert(piv.meta.end(), meta.begin(), meta.end());
        write_csv(a.out + "/spiral_table_" + metric + ".csv", piv);
    }
    write_loss_trace_tsv(a.out + "/spiral_loss_trace.tsv", cells, meta);

    std::vector<Series> traces;
    for (const SpiralCell& c : cells) {
        if (c.runs.empty() || c.runs[0].loss_trace.empty()) continue;
        Series s;
        s.name = std::string(to_string(c.norm)) + " b" + std::to_string(c.batch_size);
        for (std::size_t i = 0; i < c.runs[0].loss_trace.size(); ++i) {
            s.x.push_back(static_cast<double>(i));
            s.y.push_back(c.runs[0].loss_trace[i]);
        }
        traces.push_back(std::move(s));
    }
    if (!traces.empty())
        write_svg_chart(a.out + "/spiral_loss_trace.svg", "Training loss (first run)",
                        "batch", "task loss", traces);

    for (const SpiralCell& c : cells)
        if (!c.inapplicable && c.n_diverged == c.runs.size()) {
            std::cerr << "cell " << to_string(c.norm) << " batch " << c.batch_size
                      << ": all runs diverged\n";
            return 1;
        }
    return 0;
}

// ---- cifar -----------------------------------------------------------------

struct CifarArgs {
    std::vector<std::string> norms = {"binlog"};
    std::vector<std::size_t> batches = {4};
    RunConfig cfg;
    std::uint64_t seed = 0;
    bool seeded = false;
    std::string data_dir;
    std::string out = "out";
};

int cmd_cifar(CifarArgs& a) {
    a.cfg.seed = resolve_seed(a.seed, a.seeded);
    std::filesystem::create_directories(a.out);
    Cifar10 data = load_cifar10(a.data_dir);

    std::vector<CifarOutcome> outcomes;
    for (std::size_t b : a.batches) {
        for (NormKind n : parse_norms(a.norms)) {
            RunConfig cfg = a.cfg;
            cfg.norm = n;
            cfg.batch_size = b;
            std::cout << "run " << to_string(n) << " batch " << b << "..." << std::flush;
            if (is_batchless(n))
                std::cout << " (init pass over "
                          << std::min(cfg.init_sample, std::min(cfg.subset, data.train.size()))
                          << " samples)" << std::flush;
            CifarRunResult r = run_cifar(cfg, data.train, data.val);
            if (r.inapplicable)
                std::cout << " inapplicable\n";
            else if (r.diverged)
                std::cout << " diverged\n";
            else
                std::cout << " max acc " << fmt9(r.max_acc) << "\n";
            outcomes.emplace_back(cfg, std::move(r));
        }
    }

    std::vector<std::string> meta = base_meta("cifar", a.cfg.seed);
    meta.push_back("data dir: " + a.data_dir);
    meta.push_back("subset: " + std::to_string(a.cfg.subset));
    meta.push_back("epochs: " + std::to_string(a.cfg.epochs));
    meta.push_back("init sample: " + std::to_string(a.cfg.init_sample));
    meta.push_back("lambda: " + fmt9(a.cfg.lambda));
    meta.push_back("lr: " + fmt9(a.cfg.lr));
    write_csv(a.out + "/cifar_trace.csv", cifar_trace_table(outcomes, meta));
    write_csv(a.out + "/cifar_summary.csv", cifar_summary_table(outcomes, meta));

    std::vector<Series> acc, loss;
    for (const CifarOutcome& o : outcomes) {
        if (o.second.trace.empty()) continue;
        Series sa, sl;
        sa.name = sl.name =
            std::string(to_string(o.first.norm)) + " b" + std::to_string(o.first.batch_size);
        for (const CifarEpoch& e : o.second.trace) {
            sa.x.push_back(static_cast<double>(e.epoch));
            sa.y.push_back(e.val_acc);
            sl.x.push_back(static_cast<double>(e.epoch));
            sl.y.push_back(e.val_loss);
        }
        acc.push_back(std::move(sa));
        loss.push_back(std::move(sl));
    }
    if (!acc.empty()) {
        write_svg_chart(a.out + "/cifar_val_acc.svg", "Validation accuracy", "epoch",
                        "accuracy", acc);
        write_svg_chart(a.out + "/cifar_val_loss.svg", "Validation loss", "epoch",
                        "cross-entropy", loss);
    }

    bool any_ok = false, any_applicable = false;
    for (const CifarOutcome& o : outcomes)
        if (!o.second.inapplicable) {
            any_applicable = true;
            if (!o.second.diverged) any_ok = true;
        }
    return (any_applicable && !any_ok) ? 1 : 0;
}

// ---- checkpoint utilities --------------------------------------------------

struct InitStatsArgs {
    std::string checkpoint, out_checkpoint, data_dir;
    std::size_t sample = 1000;
    std::uint64_t sample_seed = 1;
};

int cmd_init_stats(InitStatsArgs& a) {
    Model m = load_checkpoint(a.checkpoint);
    const std::vector<double> sample = make_sample(m, a.sample, a.sample_seed, a.data_dir);
    const std::vector<double> before = mean_gauge(m, sample, a.sample);
    init_from_sample(m, sample, a.sample);
    const std::vector<double> after = mean_gauge(m, sample, a.sample);
    for (std::size_t i = 0; i < before.size(); ++i)
        std::cout << "layer " << i << ": gauged metric " << fmt9(before[i]) << " -> "
                  << fmt9(after[i]) << "\n";
    save_checkpoint(m, a.out_checkpoint);
    std::cout << "wrote " << a.out_checkpoint << "\n";
    return 0;
}

struct MigrateArgs {
    std::string checkpoint, out_checkpoint, mode = "bn", target = "binlog", data_dir;
    std::size_t sample = 1000;
    std::uint64_t sample_seed = 1;
    double tolerance = 1e-6;
};

int cmd_migrate(MigrateArgs& a) {
    Model src = load_checkpoint(a.checkpoint);
    const NormKind target = norm_kind_from_string(a.target);
    const std::vector<double> sample = make_sample(src, a.sample, a.sample_seed, a.data_dir);
    Model dst = a.mode == "bn" ? migrate_from_batchnorm(src, target)
                               : migrate_from_plain(src, target, sample, a.sample);
    const std::size_t per = numel(src.input_shape);
    const std::size_t probe = std::min<std::size_t>(100, a.sample);
    const std::vector<double> probe_x(sample.begin(), sample.begin() + probe * per);
    const double diff = max_output_difference(src, dst, probe_x, probe);
    std::cout << "max abs output difference on " << probe << " probes: " << fmt9(diff)
              << "\n";
    save_checkpoint(dst, a.out_checkpoint);
    std::cout << "wrote " << a.out_checkpoint << "\n";
    if (diff > a.tolerance) {
        std::cerr << "migration verification failed: difference exceeds "
                  << fmt9(a.tolerance) << "\n";
        return 1;
    }
    return 0;
}

// ---- report ----------------------------------------------------------------

struct ReportArgs {
    std::string runs_csv, out = "out";
};

int cmd_report(ReportArgs& a) {
    std::filesystem::create_directories(a.out);
    Csv runs = read_csv(a.runs_csv);
    std::vector<AggRow> agg = aggregate_spiral_runs(runs);
    for (const char* metric : {"val_loss", "fluctuation", "batches"})
        write_csv(a.out + "/table_" + metric + ".csv", pivot_table(agg, metric));

    std::vector<NormKind> norms;
    for (const AggRow& r : agg)
        if (std::find(norms.begin(), norms.end(), r.norm) == norms.end())
            norms.push_back(r.norm);
    std::sort(norms.begin(), norms.end());
    auto chart = [&](const char* metric, auto pick) {
        std::vector<Series> series;
        for (NormKind n : norms) {
            Series s;
            s.name = to_string(n);
            for (const AggRow& r : agg) {
                if (r.norm != n || r.inapplicable || r.runs == r.diverged) continue;
                s.x.push_back(static_cast<double>(r.batch));
                s.y.push_back(pick(r));
            }
            if (!s.x.empty()) series.push_back(std::move(s));
        }
        if (!series.empty())
            write_svg_chart(a.out + "/" + metric + ".svg", metric, "batch size", metric,
                            series);
    };
    chart("val_loss", [](const AggRow& r) { return r.val_loss; });
    chart("fluctuation", [](const AggRow& r) { return r.fluctuation; });
    chart("batches", [](const AggRow& r) { return r.batches; });
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Batchless normalization training harness"};
    app.require_subcommand(1);
    app.set_config("--config")->configurable(false);

    SpiralArgs sp;
    CLI::App* spiral = app.add_subcommand("spiral", "Spiral convergence/stability suite");
    spiral->add_option("--norm", sp.norms, "Norm kinds (none|bn|brn|bin|binlog|bininv)")
        ->delimiter(',');
    spiral->add_option("--batch-size", sp.batches, "Batch sizes")->delimiter(',');
    spiral->add_option("--runs", sp.cfg.runs, "Runs per cell");
    spiral->add_option("--seed", sp.seed, "Base seed (omitted: drawn from entropy)")
        ->each([&](const std::string&) { sp.seeded = true; });
    spiral->add_option("--lambda", sp.cfg.lambda, "Statistics loss strength");
    spiral->add_flag("--lambda-as-lr", sp.cfg.lambda_as_lr,
                     "Apply lambda as a statistics learning-rate multiplier");
    spiral->add_option("--lr", sp.cfg.lr, "Learning rate");
    spiral->add_option("--dropout", sp.cfg.dropout, "Dropout rate (<0: default)");
    spiral->add_option("--median-window", sp.cfg.median_window, "Convergence median window");
    spiral->add_option("--patience", sp.cfg.patience, "Convergence patience (batches)");
    spiral->add_option("--hard-cap", sp.cfg.hard_cap, "Max training batches");
    spiral->add_option("--fluct-batches", sp.cfg.fluct_batches, "Fluctuation batches");
    spiral->add_option("--grid", sp.cfg.fluct_grid, "Fluctuation grid edge");
    spiral->add_option("--train-per-class", sp.cfg.spiral.n_train_per_class,
                       "Training points per class");
    spiral->add_option("--val-per-class", sp.cfg.spiral.n_val_per_class,
                       "Validation points per class");
    spiral->add_option("--turns", sp.cfg.spiral.turns, "Spiral turns");
    spiral->add_option("--r-max", sp.cfg.spiral.r_max, "Spiral outer radius");
    spiral->add_option("--init-sample", sp.cfg.init_sample,
                       "Samples for batchless statistics init (0: skip)");
    spiral->add_option("--noise", sp.cfg.spiral.noise, "Spiral noise at t=1");
    spiral->add_option("--checkpoint-dir", sp.cfg.checkpoint_dir,
                       "Save each run's final model here");
    spiral->add_option("--out", sp.out, "Output directory")->envname("BLN_OUT");

    CifarArgs cf;
    cf.cfg.lr = 0.001;
    cf.cfg.dropout = 0.25;
    CLI::App* cifar = app.add_subcommand("cifar", "Reduced-scale CIFAR-10 runs");
    cifar->add_option("--data-dir", cf.data_dir, "Directory with CIFAR-10 binary batches")
        ->required();
    cifar->add_option("--norm", cf.norms, "Norm kinds (none|bn|bin|binlog|bininv)")
        ->delimiter(',');
    cifar->add_option("--batch-size", cf.batches, "Batch sizes")->delimiter(',');
    cifar->add_option("--epochs", cf.cfg.epochs, "Training epochs");
    cifar->add_option("--subset", cf.cfg.subset, "Training images used");
    cifar->add_option("--init-sample", cf.cfg.init_sample,
                      "Samples for batchless initialization");
    cifar->add_option("--seed", cf.seed, "Base seed (omitted: drawn from entropy)")
        ->each([&](const std::string&) { cf.seeded = true; });
    cifar->add_option("--lambda", cf.cfg.lambda, "Statistics loss strength");
    cifar->add_option("--lr", cf.cfg.lr, "Learning rate");
    cifar->add_option("--dropout", cf.cfg.dropout, "Dropout rate (<0: default)");
    cifar->add_option("--checkpoint-dir", cf.cfg.checkpoint_dir,
                      "Save each run's final model here");
    cifar->add_option("--out", cf.out, "Output directory")->envname("BLN_OUT");

    InitStatsArgs is;
    CLI::App* init = app.add_subcommand("init-stats", "Fit batchless layers to a sample");
    init->add_option("--checkpoint", is.checkpoint, "Source checkpoint")->required();
    init->add_option("--out-checkpoint", is.out_checkpoint, "Destination checkpoint")
        ->required();
    init->add_option("--sample-size", is.sample, "Sample instances")
        ->check(CLI::PositiveNumber);
    init->add_option("--sample-seed", is.sample_seed, "Spiral sample seed");
    init->add_option("--data-dir", is.data_dir, "CIFAR data (CIFAR checkpoints only)");

    MigrateArgs mg;
    CLI::App* migrate = app.add_subcommand("migrate", "Convert a model to batchless form");
    migrate->add_option("--checkpoint", mg.checkpoint, "Source checkpoint")->required();
    migrate->add_option("--out-checkpoint", mg.out_checkpoint, "Destination checkpoint")
        ->required();
    migrate->add_option("--mode", mg.mode, "Source kind")
        ->check(CLI::IsMember({"bn", "plain"}));
    migrate->add_option("--target", mg.target, "Batchless kind (bin|binlog|bininv)");
    migrate->add_option("--sample-size", mg.sample, "Sample instances")
        ->check(CLI::PositiveNumber);
    migrate->add_option("--sample-seed", mg.sample_seed, "Spiral sample seed");
    migrate->add_option("--data-dir", mg.data_dir, "CIFAR data (CIFAR checkpoints only)");
    migrate->add_option("--tolerance", mg.tolerance, "Max allowed output difference");

    ReportArgs rp;
    CLI::App* report = app.add_subcommand("report", "Aggregate a per-run results CSV");
    report->add_option("--runs", rp.runs_csv, "spiral_runs.csv path")->required();
    report->add_option("--out", rp.out, "Output directory")->envname("BLN_OUT");

    struct GenSpiralArgs {
        std::uint64_t seed = 1;
        std::string out = "out";
        SpiralParams p;
    } gs;
    CLI::App* gen_spiral = app.add_subcommand("gen-spiral", "Write spiral datasets as CSV");
    gen_spiral->add_option("--seed", gs.seed, "Generator seed");
    gen_spiral->add_option("--train-per-class", gs.p.n_train_per_class, "Train points/class");
    gen_spiral->add_option("--val-per-class", gs.p.n_val_per_class, "Val points/class");
    gen_spiral->add_option("--out", gs.out, "Output directory")->envname("BLN_OUT");

    struct GenCifarArgs {
        std::uint64_t seed = 1;
        std::string out = "out/cifar";
        std::size_t per_file = 1200, test = 1000;
    } gc;
    CLI::App* gen_cifar = app.add_subcommand(
        "gen-cifar", "Write a synthetic stand-in dataset in CIFAR-10 binary format");
    gen_cifar->add_option("--seed", gc.seed, "Generator seed");
    gen_cifar->add_option("--train-per-file", gc.per_file, "Records per training file");
    gen_cifar->add_option("--test-records", gc.test, "Records in the test file");
    gen_cifar->add_option("--out", gc.out, "Output directory")->envname("BLN_OUT");

    try {
        app.parse(argc, argv);
        if (spiral->parsed()) return cmd_spiral(sp);
        if (cifar->parsed()) return cmd_cifar(cf);
        if (init->parsed()) return cmd_init_stats(is);
        if (migrate->parsed()) return cmd_migrate(mg);
        if (report->parsed()) return cmd_report(rp);
        if (gen_spiral->parsed()) {
            std::filesystem::create_directories(gs.out);
            auto [train, val] = generate_spirals(gs.seed, gs.p);
            export_csv(train, gs.out + "/spiral_train.csv");
            export_csv(val, gs.out + "/spiral_val.csv");
            std::cout << "wrote " << gs.out << "/spiral_{train,val}.csv\n";
            return 0;
        }
        if (gen_cifar->parsed()) {
            generate_synthetic_cifar(gc.out, gc.seed, gc.per_file, gc.test);
            std::cout << "wrote synthetic batches to " << gc.out << "\n";
            return 0;
        }
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const IngestError& e) {
        std::cerr << "ingestion error: " << e.what() << "\n";
        return 2;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}
