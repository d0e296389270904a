#pragma once

#include <string>
#include <utility>
#include <vector>

#include "bln/experiment.hpp"

namespace bln {

// Comma-separated tables with '#'-prefixed metadata lines before the header.
// Report doubles carry 9 significant digits; '.' is the decimal separator.
struct Csv {
    std::vector<std::string> meta;  // without the leading '#'
    std::vector<std::string> columns;
    std::vector<std::vector<std::string>> rows;

    std::size_t col(const std::string& name) const;  // IngestError when missing
    const std::string& cell(std::size_t row, const std::string& name) const;
    double num(std::size_t row, const std::string& name) const;
    void require(const std::vector<std::string>& names) const;  // lists all missing
};

Csv read_csv(const std::string& path);
void write_csv(const std::string& path, const Csv& table);

std::string fmt9(double v);

// ---- experiment artifacts --------------------------------------------------

// One row per run; inapplicable cells contribute a single marker row.
Csv spiral_runs_table(const std::vector<SpiralCell>& cells,
                      const std::vector<std::string>& meta);

struct AggRow {
    NormKind norm = NormKind::none;
    std::size_t batch = 0;
    bool inapplicable = false;
    std::size_t runs = 0, diverged = 0;
    double val_loss = 0.0, fluctuation = 0.0, batches = 0.0;
};

// Groups a per-run table by (batch size, norm kind); means exclude diverged
// runs. Rows ordered by batch size ascending, then norm kind.
std::vector<AggRow> aggregate_spiral_runs(const Csv& runs);

// Paper-style layout: one row per batch size, one column per norm kind;
// inapplicable cells rendered as "-". metric: val_loss|fluctuation|batches.
Csv pivot_table(const std::vector<AggRow>& agg, const std::string& metric);

// Tab-separated per-batch loss trace of each cell's first run.
void write_loss_trace_tsv(const std::string& path, const std::vector<SpiralCell>& cells,
                          const std::vector<std::string>& meta);

using CifarOutcome = std::pair<RunConfig, CifarRunResult>;

Csv cifar_trace_table(const std::vector<CifarOutcome>& outcomes,
                      const std::vector<std::string>& meta);
Csv cifar_summary_table(const std::vector<CifarOutcome>& outcomes,
                        const std::vector<std::string>& meta);

// ---- plots -----------------------------------------------------------------

struct Series {
    std::string name;
    std::vector<double> x, y;
};

// Minimal self-contained SVG line chart: axes, ticks, legend, polylines.
void write_svg_chart(const std::string& path, const std::string& title,
                     const std::string& xlabel, const std::string& ylabel,
                     const std::vector<Series>& series);

}  // namespace bln
