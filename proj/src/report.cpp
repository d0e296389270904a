#include "bln/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "bln/errors.hpp"

namespace bln {

std::string fmt9(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.9g", v);
    return buf;
}

std::size_t Csv::col(const std::string& name) const {
    for (std::size_t i = 0; i < columns.size(); ++i)
        if (columns[i] == name) return i;
    throw IngestError("missing column: " + name);
}

const std::string& Csv::cell(std::size_t row, const std::string& name) const {
    return rows.at(row).at(col(name));
}

double Csv::num(std::size_t row, const std::string& name) const {
    const std::string& s = cell(row, name);
    try {
        std::size_t used = 0;
        const double v = std::stod(s, &used);
        if (used == s.size()) return v;
    } catch (const std::exception&) {
    }
    throw IngestError("column " + name + ", row " + std::to_string(row) +
                      ": not a number: '" + s + "'");
}

void Csv::require(const std::vector<std::string>& names) const {
    std::string missing;
    for (const std::string& n : names)
        if (std::find(columns.begin(), columns.end(), n) == columns.end())
            missing += missing.empty() ? n : ", " + n;
    if (!missing.empty()) throw IngestError("missing columns: " + missing);
}

namespace {

std::vector<std::string> split(const std::string& line, char sep) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == sep) {
            out.push_back(cur);
            cur.clear();
        } else {
            cur += c;
        }
    }
    out.push_back(cur);
    return out;
}

}  // namespace

Csv read_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IngestError("cannot open " + path);
    Csv t;
    std::string line;
    bool have_header = false;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        if (line[0] == '#') {
            std::size_t at = 1;
            if (at < line.size() && line[at] == ' ') ++at;
            t.meta.push_back(line.substr(at));
            continue;
        }
        if (!have_header) {
            t.columns = split(line, ',');
            have_header = true;
            continue;
        }
        std::vector<std::string> row = split(line, ',');
        if (row.size() != t.columns.size())
            throw IngestError(path + ": row with " + std::to_string(row.size()) +
                              " fields, header has " + std::to_string(t.columns.size()));
        t.rows.push_back(std::move(row));
    }
    if (!have_header) throw IngestError(path + ": no header row");
    return t;
}

void write_csv(const std::string& path, const Csv& table) {
    std::ofstream out(path);
    if (!out) throw IngestError("cannot write " + path);
    for (const std::string& m : table.meta) out << "# " << m << '\n';
    for (std::size_t i = 0; i < table.columns.size(); ++i)
        out << (i ? "," : "") << table.columns[i];
    out << '\n';
    for (const auto& row : table.rows) {
        for (std::size_t i = 0; i < row.size(); ++i) out << (i ? "," : "") << row[i];
        out << '\n';
    }
    if (!out) throw IngestError("write failure on " + path);
}

// ---- experiment artifacts --------------------------------------------------

Csv spiral_runs_table(const std::vector<SpiralCell>& cells,
                      const std::vector<std::string>& meta) {
    Csv t;
    t.meta = meta;
    t.columns = {"norm",    "batch_size", "run",     "seed",        "status",
                 "batches", "val_loss",   "val_acc", "fluctuation"};
    for (const SpiralCell& c : cells) {
        if (c.inapplicable) {
            t.rows.push_back({to_string(c.norm), std::to_string(c.batch_size), "0", "0",
                              "inapplicable", "-", "-", "-", "-"});
            continue;
        }
        for (std::size_t i = 0; i < c.runs.size(); ++i) {
            const SpiralRunResult& r = c.runs[i];
            if (r.diverged) {
                t.rows.push_back({to_string(c.norm), std::to_string(c.batch_size),
                                  std::to_string(i), std::to_string(r.run_seed), "diverged",
                                  std::to_string(r.batches), "-", "-", "-"});
            } else {
                t.rows.push_back({to_string(c.norm), std::to_string(c.batch_size),
                                  std::to_string(i), std::to_string(r.run_seed), "ok",
                                  std::to_string(r.batches), fmt9(r.val_loss),
                                  fmt9(r.val_acc), fmt9(r.fluctuation)});
            }
        }
    }
    return t;
}

std::vector<AggRow> aggregate_spiral_runs(const Csv& runs) {
    runs.require({"norm", "batch_size", "status", "batches", "val_loss", "fluctuation"});
    std::map<std::pair<std::size_t, int>, AggRow> agg;
    for (std::size_t i = 0; i < runs.rows.size(); ++i) {
        const NormKind norm = norm_kind_from_string(runs.cell(i, "norm"));
        const std::size_t batch =
            static_cast<std::size_t>(runs.num(i, "batch_size") + 0.5);
        AggRow& a = agg[{batch, static_cast<int>(norm)}];
        a.norm = norm;
        a.batch = batch;
        const std::string& status = runs.cell(i, "status");
        if (status == "inapplicable") {
            a.inapplicable = true;
        } else if (status == "diverged") {
            ++a.runs;
            ++a.diverged;
        } else {
            ++a.runs;
            a.val_loss += runs.num(i, "val_loss");
            a.fluctuation += runs.num(i, "fluctuation");
            a.batches += runs.num(i, "batches");
        }
    }
    std::vector<AggRow> out;
    for (auto& [key, a] : agg) {
        const std::size_t ok = a.runs - a.diverged;
        if (ok > 0) {
            a.val_loss /= static_cast<double>(ok);
            a.fluctuation /= static_cast<double>(ok);
            a.batches /= static_cast<double>(ok);
        }
        out.push_back(a);
    }
    return out;  // map order = batch ascending, then norm kind
}

Csv pivot_table(const std::vector<AggRow>& agg, const std::string& metric) {
    std::vector<std::size_t> batches;
    std::vector<NormKind> norms;
    for (const AggRow& a : agg) {
        if (std::find(batches.begin(), batches.end(), a.batch) == batches.end())
            batches.push_back(a.batch);
        if (std::find(norms.begin(), norms.end(), a.norm) == norms.end())
            norms.push_back(a.norm);
    }
    std::sort(batches.begin(), batches.end());
    std::sort(norms.begin(), norms.end());

    Csv t;
    t.meta = {"metric: " + metric};
    t.columns = {"batch_size"};
    for (NormKind n : norms) t.columns.push_back(to_string(n));
    for (std::size_t b : batches) {
        std::vector<std::string> row = {std::to_string(b)};
        for (NormKind n : norms) {
            std::string cell = "-";
            for (const AggRow& a : agg) {
                if (a.batch != b || a.norm != n) continue;
                if (a.inapplicable) cell = "-";
                else if (a.runs == a.diverged) cell = "diverged";
                else if (metric == "val_loss") cell = fmt9(a.val_loss);
                else if (metric == "fluctuation") cell = fmt9(a.fluctuation);
                else if (metric == "batches") cell = fmt9(a.batches);
                else throw ConfigError("unknown pivot metric: " + metric);
            }
            row.push_back(cell);
        }
        t.rows.push_back(std::move(row));
    }
    return t;
}

void write_loss_trace_tsv(const std::string& path, const std::vector<SpiralCell>& cells,
                          const std::vector<std::string>& meta) {
    std::ofstream out(path);
    if (!out) throw IngestError("cannot write " + path);
    for (const std::string& m : meta) out << "# " << m << '\n';
    out << "batch_index";
    std::size_t longest = 0;
    for (const SpiralCell& c : cells) {
        out << '\t' << to_string(c.norm) << "_b" << c.batch_size;
        if (!c.runs.empty()) longest = std::max(longest, c.runs[0].loss_trace.size());
    }
    out << '\n';
    for (std::size_t i = 0; i < longest; ++i) {
        out << i;
        for (const SpiralCell& c : cells) {
            out << '\t';
            if (!c.runs.empty() && i < c.runs[0].loss_trace.size())
                out << fmt9(c.runs[0].loss_trace[i]);
        }
        out << '\n';
    }
    if (!out) throw IngestError("write failure on " + path);
}

Csv cifar_trace_table(const std::vector<CifarOutcome>& outcomes,
                      const std::vector<std::string>& meta) {
    std::size_t n_gauge = 0;
    for (const CifarOutcome& o : outcomes)
        for (const CifarEpoch& e : o.second.trace)
            n_gauge = std::max(n_gauge, e.gauge_metric.size());
    Csv t;
    t.meta = meta;
    t.columns = {"norm", "batch_size", "seed", "epoch", "val_loss", "val_acc"};
    for (std::size_t g = 0; g < n_gauge; ++g)
        t.columns.push_back("mean_gauged_metric_" + std::to_string(g));
    for (const CifarOutcome& o : outcomes) {
        for (const CifarEpoch& e : o.second.trace) {
            std::vector<std::string> row = {
                to_string(o.first.norm),          std::to_string(o.first.batch_size),
                std::to_string(o.second.run_seed), std::to_string(e.epoch),
                fmt9(e.val_loss),                 fmt9(e.val_acc)};
            for (std::size_t g = 0; g < n_gauge; ++g)
                row.push_back(g < e.gauge_metric.size() ? fmt9(e.gauge_metric[g]) : "-");
            t.rows.push_back(std::move(row));
        }
    }
    return t;
}

Csv cifar_summary_table(const std::vector<CifarOutcome>& outcomes,
                        const std::vector<std::string>& meta) {
    Csv t;
    t.meta = meta;
    t.columns = {"norm", "batch_size", "seed", "status", "epochs", "max_acc", "min_loss"};
    for (const CifarOutcome& o : outcomes) {
        const CifarRunResult& r = o.second;
        std::string status = r.inapplicable ? "inapplicable"
                             : r.diverged   ? "diverged"
                                            : "ok";
        t.rows.push_back({to_string(o.first.norm), std::to_string(o.first.batch_size),
                          std::to_string(r.run_seed), status,
                          std::to_string(r.trace.size()),
                          status == "ok" ? fmt9(r.max_acc) : "-",
                          status == "ok" ? fmt9(r.min_loss) : "-"});
    }
    return t;
}

// ---- SVG -------------------------------------------------------------------

namespace {

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                          "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f"};

std::string fmt2(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return buf;
}

std::string fmt3g(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3g", v);
    return buf;
}

}  // namespace

void write_svg_chart(const std::string& path, const std::string& title,
                     const std::string& xlabel, const std::string& ylabel,
                     const std::vector<Series>& series) {
    const double W = 640, H = 420, L = 70, R = 150, T = 40, B = 50;
    double xmin = 0, xmax = 1, ymin = 0, ymax = 1;
    bool any = false;
    for (const Series& s : series) {
        for (std::size_t i = 0; i < s.x.size() && i < s.y.size(); ++i) {
            if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
            if (!any) {
                xmin = xmax = s.x[i];
                ymin = ymax = s.y[i];
                any = true;
            } else {
                xmin = std::min(xmin, s.x[i]);
                xmax = std::max(xmax, s.x[i]);
                ymin = std::min(ymin, s.y[i]);
                ymax = std::max(ymax, s.y[i]);
            }
        }
    }
    if (xmax - xmin < 1e-300) xmax = xmin + 1.0;
    if (ymax - ymin < 1e-300) ymax = ymin + 1.0;
    auto px = [&](double x) { return L + (x - xmin) / (xmax - xmin) * (W - L - R); };
    auto py = [&](double y) { return H - B - (y - ymin) / (ymax - ymin) * (H - T - B); };

    std::ofstream out(path);
    if (!out) throw IngestError("cannot write " + path);
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
        << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
    out << "<rect width=\"" << W << "\" height=\"" << H << "\" fill=\"white\"/>\n";
    out << "<text x=\"" << W / 2 << "\" y=\"20\" text-anchor=\"middle\" font-size=\"15\">"
        << title << "</text>\n";
    // axes
    out << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << H - B
        << "\" stroke=\"black\"/>\n";
    out << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R << "\" y2=\""
        << H - B << "\" stroke=\"black\"/>\n";
    for (int i = 0; i <= 4; ++i) {
        const double fx = xmin + (xmax - xmin) * i / 4.0;
        const double fy = ymin + (ymax - ymin) * i / 4.0;
        out << "<line x1=\"" << fmt2(px(fx)) << "\" y1=\"" << H - B << "\" x2=\""
            << fmt2(px(fx)) << "\" y2=\"" << H - B + 5 << "\" stroke=\"black\"/>\n";
        out << "<text x=\"" << fmt2(px(fx)) << "\" y=\"" << H - B + 18
            << "\" text-anchor=\"middle\">" << fmt3g(fx) << "</text>\n";
        out << "<line x1=\"" << L - 5 << "\" y1=\"" << fmt2(py(fy)) << "\" x2=\"" << L
            << "\" y2=\"" << fmt2(py(fy)) << "\" stroke=\"black\"/>\n";
        out << "<text x=\"" << L - 8 << "\" y=\"" << fmt2(py(fy) + 4)
            << "\" text-anchor=\"end\">" << fmt3g(fy) << "</text>\n";
    }
    out << "<text x=\"" << (L + W - R) / 2 << "\" y=\"" << H - 12
        << "\" text-anchor=\"middle\">" << xlabel << "</text>\n";
    out << "<text x=\"16\" y=\"" << (T + H - B) / 2
        << "\" text-anchor=\"middle\" transform=\"rotate(-90 16 " << (T + H - B) / 2 << ")\">"
        << ylabel << "</text>\n";
    // series
    for (std::size_t si = 0; si < series.size(); ++si) {
        const Series& s = series[si];
        const char* color = kPalette[si % (sizeof kPalette / sizeof *kPalette)];
        out << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" "
            << "points=\"";
        for (std::size_t i = 0; i < s.x.size() && i < s.y.size(); ++i) {
            if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
            out << fmt2(px(s.x[i])) << ',' << fmt2(py(s.y[i])) << ' ';
        }
        out << "\"/>\n";
        const double ly = T + 16.0 * static_cast<double>(si);
        out << "<line x1=\"" << W - R + 10 << "\" y1=\"" << ly << "\" x2=\"" << W - R + 34
            << "\" y2=\"" << ly << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
        out << "<text x=\"" << W - R + 40 << "\" y=\"" << ly + 4 << "\">" << s.name
            << "</text>\n";
    }
    out << "</svg>\n";
    if (!out) throw IngestError("write failure on " + path);
}

}  // namespace bln
