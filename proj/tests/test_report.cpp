#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "bln/report.hpp"

using namespace bln;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() / "bln-test-report";
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string file(const char* name) const { return (path / name).string(); }
};

SpiralCell make_cell(NormKind k, std::size_t batch, std::vector<double> losses) {
    SpiralCell c;
    c.norm = k;
    c.batch_size = batch;
    double sum = 0.0;
    for (std::size_t i = 0; i < losses.size(); ++i) {
        SpiralRunResult r;
        r.run_seed = 100 + i;
        r.converged = true;
        r.batches = 1500 + 10 * i;
        r.val_loss = losses[i];
        r.val_acc = 0.8;
        r.fluctuation = 0.05 + 0.01 * static_cast<double>(i);
        if (i == 0) r.loss_trace = {1.0, 0.9, 0.8};
        sum += r.val_loss;
        c.runs.push_back(std::move(r));
    }
    c.mean_val_loss = sum / static_cast<double>(losses.size());
    c.mean_fluctuation = 0.05;
    c.mean_batches = 1500;
    return c;
}

}  // namespace

TEST_CASE("fmt9 renders nine significant digits") {
    CHECK(fmt9(0.5) == "0.5");
    CHECK(fmt9(1.0 / 3.0) == "0.333333333");
    CHECK(fmt9(123456789.0) == "123456789");
}

TEST_CASE("csv write/read round trip with metadata") {
    TempDir tmp;
    Csv t;
    t.meta = {"suite: demo", "seed: 42"};
    t.columns = {"a", "b"};
    t.rows = {{"1", "x"}, {"2.5", "y"}};
    const std::string path = tmp.file("t.csv");
    write_csv(path, t);
    Csv back = read_csv(path);
    CHECK(back.meta == t.meta);
    CHECK(back.columns == t.columns);
    CHECK(back.rows == t.rows);
    CHECK(back.num(1, "a") == doctest::Approx(2.5));
    CHECK(back.cell(0, "b") == "x");
    CHECK_THROWS_AS((void)back.col("missing"), IngestError);
    CHECK_THROWS_AS(back.require({"a", "zz", "qq"}), IngestError);
    CHECK_NOTHROW(back.require({"a", "b"}));
}

TEST_CASE("read_csv rejects missing files and ragged rows") {
    TempDir tmp;
    CHECK_THROWS_AS((void)read_csv(tmp.file("missing.csv")), IngestError);
    const std::string ragged = tmp.file("ragged.csv");
    {
        std::ofstream out(ragged);
        out << "a,b\n1\n";
    }
    CHECK_THROWS_AS((void)read_csv(ragged), IngestError);
}

TEST_CASE("spiral runs table: one row per run, marker row for inapplicable cells") {
    std::vector<SpiralCell> cells;
    cells.push_back(make_cell(NormKind::binlog, 1, {0.4, 0.5}));
    SpiralCell bn;
    bn.norm = NormKind::bn;
    bn.batch_size = 1;
    bn.inapplicable = true;
    cells.push_back(bn);

    Csv t = spiral_runs_table(cells, {"suite: spiral"});
    t.require({"norm", "batch_size", "run", "seed", "status", "batches", "val_loss",
               "val_acc", "fluctuation"});
    REQUIRE(t.rows.size() == 3);
    CHECK(t.cell(0, "norm") == "binlog");
    CHECK(t.cell(0, "status") == "ok");
    CHECK(t.num(1, "val_loss") == doctest::Approx(0.5));
    CHECK(t.cell(2, "norm") == "bn");
    CHECK(t.cell(2, "status") == "inapplicable");
}

TEST_CASE("aggregation and pivot layout") {
    std::vector<SpiralCell> cells;
    cells.push_back(make_cell(NormKind::binlog, 1, {0.4, 0.6}));
    cells.push_back(make_cell(NormKind::none, 1, {1.0, 1.2}));
    cells.push_back(make_cell(NormKind::binlog, 16, {0.2}));
    SpiralCell bn;
    bn.norm = NormKind::bn;
    bn.batch_size = 1;
    bn.inapplicable = true;
    cells.push_back(bn);

    Csv runs = spiral_runs_table(cells, {});
    std::vector<AggRow> agg = aggregate_spiral_runs(runs);
    REQUIRE(agg.size() == 4);
    // Ordered by batch size, then norm kind.
    CHECK(agg[0].batch == 1);
    CHECK(agg.back().batch == 16);
    bool found = false;
    for (const AggRow& r : agg)
        if (r.norm == NormKind::binlog && r.batch == 1) {
            found = true;
            CHECK(r.runs == 2);
            CHECK(r.val_loss == doctest::Approx(0.5));
        }
    CHECK(found);

    Csv piv = pivot_table(agg, "val_loss");
    REQUIRE(piv.rows.size() == 2);  // batch sizes 1 and 16
    CHECK(piv.cell(0, "batch_size") == "1");
    CHECK(piv.num(0, "binlog") == doctest::Approx(0.5));
    CHECK(piv.cell(0, "bn") == "-");      // inapplicable marker
    CHECK(piv.cell(1, "none") == "-");    // cell absent at batch 16
    CHECK_THROWS_AS((void)pivot_table(agg, "nonsense"), ConfigError);
}

TEST_CASE("aggregation excludes diverged runs from the means") {
    SpiralCell c = make_cell(NormKind::bin, 4, {0.4, 0.6});
    SpiralRunResult bad;
    bad.run_seed = 999;
    bad.diverged = true;
    c.runs.push_back(bad);
    Csv runs = spiral_runs_table({c}, {});
    std::vector<AggRow> agg = aggregate_spiral_runs(runs);
    REQUIRE(agg.size() == 1);
    CHECK(agg[0].runs == 3);
    CHECK(agg[0].diverged == 1);
    CHECK(agg[0].val_loss == doctest::Approx(0.5));  // mean over the two ok runs
}

TEST_CASE("loss trace TSV holds the first run of each cell") {
    TempDir tmp;
    std::vector<SpiralCell> cells;
    cells.push_back(make_cell(NormKind::binlog, 1, {0.4, 0.5}));
    const std::string path = tmp.file("trace.tsv");
    write_loss_trace_tsv(path, cells, {"suite: spiral"});
    std::ifstream in(path);
    std::string line;
    std::size_t data_rows = 0;
    bool header_seen = false;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        if (!header_seen) {
            header_seen = true;
            CHECK(line.find("batch") != std::string::npos);
            continue;
        }
        ++data_rows;
    }
    CHECK(data_rows == 3);  // the three trace points
}

TEST_CASE("cifar tables summarize traces") {
    RunConfig cfg;
    cfg.norm = NormKind::binlog;
    cfg.batch_size = 4;
    CifarRunResult r;
    r.run_seed = 5;
    CifarEpoch e1{1, 2.0, 0.2, {0.5}};
    CifarEpoch e2{2, 1.5, 0.35, {0.3}};
    r.trace = {e1, e2};
    r.max_acc = 0.35;
    r.min_loss = 1.5;

    Csv trace = cifar_trace_table({{cfg, r}}, {});
    trace.require({"norm", "batch_size", "epoch", "val_loss", "val_acc"});
    REQUIRE(trace.rows.size() == 2);
    CHECK(trace.num(1, "val_acc") == doctest::Approx(0.35));

    Csv sum = cifar_summary_table({{cfg, r}}, {});
    REQUIRE(sum.rows.size() == 1);
    CHECK(sum.num(0, "max_acc") == doctest::Approx(0.35));
    CHECK(sum.num(0, "min_loss") == doctest::Approx(1.5));
}

TEST_CASE("svg chart is a well-formed standalone file") {
    TempDir tmp;
    Series s1{"binlog", {0, 1, 2, 3}, {1.0, 0.8, 0.6, 0.5}};
    Series s2{"none", {0, 1, 2, 3}, {1.0, 1.0, 0.95, 0.9}};
    const std::string path = tmp.file("chart.svg");
    write_svg_chart(path, "Training loss", "batch", "loss", {s1, s2});
    std::ifstream in(path);
    std::string all((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    CHECK(all.find("<svg") != std::string::npos);
    CHECK(all.find("</svg>") != std::string::npos);
    CHECK(all.find("polyline") != std::string::npos);
    CHECK(all.find("binlog") != std::string::npos);
    CHECK(all.find("Training loss") != std::string::npos);
}
