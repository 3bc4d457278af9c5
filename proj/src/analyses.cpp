// Run-level analyses: ccr grid, source proportions, per-sample statistics,
// correlations and density curves, each rendered as CSV.

#include <algorithm>
#include <cstdio>
#include <map>
#include <set>
#include <sstream>

#include "tracvc/pipeline.hpp"

namespace tracvc {

namespace {

constexpr std::string_view kAllDatasets = "All";
constexpr double kSignificance = 0.05;

struct Scoped {
    std::string dataset;
    std::vector<InfluenceRecord> records;
};

// Records per dataset, followed by the pooled "All" entry.
std::vector<Scoped> scope_records(const AnalysisInput& in) {
    std::map<std::string, std::string, std::less<>> dataset_of;
    for (const auto& inst : in.instances) dataset_of[inst.instance_id] = inst.dataset;
    std::map<std::string, std::vector<InfluenceRecord>> per;
    for (const auto& inst : in.instances) per[inst.dataset];
    for (const auto& r : in.records) {
        auto it = dataset_of.find(r.instance_id);
        if (it == dataset_of.end()) throw InputError("record for unknown instance '" + r.instance_id + "'");
        per[it->second].push_back(r);
    }
    std::vector<Scoped> out;
    for (auto& [name, recs] : per) out.push_back({name, std::move(recs)});
    out.push_back({std::string(kAllDatasets), in.records});
    return out;
}

std::string opt_real(const std::optional<double>& v) { return v ? format_real(*v) : "NA"; }

struct CcrCell {
    std::string dataset;
    Aggregation aggregation{};
    bool has_records = false;
    CcrReport report;
    std::optional<double> p_psi;
    std::optional<double> p_neg_c;
};

std::optional<double> cell_p_value(std::span<const InfluenceRecord> records, Aggregation agg, ScoreVariant v,
                                   const AnalysisInput& in) {
    std::vector<double> t, f;
    for (const auto& r : records) {
        if (!admits(agg, r.source)) continue;
        (r.set == SetTag::kT ? t : f).push_back(score_of(r, v));
    }
    if (t.empty() || f.empty()) return std::nullopt;
    return mean_diff_significance(t, f, in.permutations, in.stats_seed);
}

std::vector<CcrCell> ccr_cells(const AnalysisInput& in) {
    std::vector<CcrCell> cells;
    for (const auto& scope : scope_records(in)) {
        for (auto agg : in.aggregations) {
            CcrCell c;
            c.dataset = scope.dataset;
            c.aggregation = agg;
            c.has_records = std::any_of(scope.records.begin(), scope.records.end(),
                                        [&](const InfluenceRecord& r) { return admits(agg, r.source); });
            if (c.has_records) {
                c.report = ccr_report(scope.records, agg);
                c.p_psi = cell_p_value(scope.records, agg, ScoreVariant::kPsi, in);
                c.p_neg_c = cell_p_value(scope.records, agg, ScoreVariant::kPsiNegC, in);
            }
            cells.push_back(std::move(c));
        }
    }
    return cells;
}

std::string grid_value(const CcrValue& v, const std::optional<double>& p, bool has_records) {
    if (!has_records || !v.ratio) return "NA";
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.3f", *v.ratio);
    std::string s(buf);
    if (p && *p > kSignificance) s = "(" + s + ")";
    return s;
}

std::string render_ccr_table(const AnalysisInput& in) {
    const auto cells = ccr_cells(in);
    std::vector<std::string> datasets;
    for (const auto& c : cells)
        if (datasets.empty() || datasets.back() != c.dataset) datasets.push_back(c.dataset);
    std::ostringstream out;
    out << "source";
    for (const auto& d : datasets) out << ',' << d << ":ccr," << d << ":ccr_neg_c";
    out << '\n';
    for (auto agg : in.aggregations) {
        out << to_string(agg);
        for (const auto& d : datasets) {
            for (const auto& c : cells) {
                if (c.dataset != d || c.aggregation != agg) continue;
                out << ',' << grid_value(c.report.ccr, c.p_psi, c.has_records) << ','
                    << grid_value(c.report.ccr_neg_c, c.p_neg_c, c.has_records);
            }
        }
        out << '\n';
    }
    return out.str();
}

std::string render_ccr_detail(const AnalysisInput& in) {
    std::ostringstream out;
    out << "dataset,aggregation,variant,n_instances,wins_t,wins_f,ties,ccr,label,p_value,significant\n";
    for (const auto& c : ccr_cells(in)) {
        auto row = [&](std::string_view variant, const CcrValue& v, const std::optional<double>& p) {
            out << c.dataset << ',' << to_string(c.aggregation) << ',' << variant << ',';
            if (!c.has_records) {
                out << "0,0,0,0,NA,no-records,NA,NA\n";
                return;
            }
            out << c.report.n_instances << ',' << v.counts.wins_t << ',' << v.counts.wins_f << ','
                << v.counts.ties << ',' << opt_real(v.ratio) << ',' << v.label() << ',' << opt_real(p) << ','
                << (p ? (*p <= kSignificance ? "yes" : "no") : "NA") << '\n';
        };
        row("ccr", c.report.ccr, c.p_psi);
        row("ccr_neg_c", c.report.ccr_neg_c, c.p_neg_c);
    }
    return out.str();
}

std::string render_sources(const AnalysisInput& in) {
    std::ostringstream out;
    out << "dataset,category,count,proportion,n_instances,ties\n";
    for (const auto& scope : scope_records(in)) {
        const auto sp = source_proportions(scope.records);
        for (auto cat : kAllSourceCategories) {
            out << scope.dataset << ',' << to_string(cat) << ',' << sp.counts[static_cast<int>(cat)] << ','
                << format_real(sp.proportion(cat)) << ',' << sp.n_instances << ',' << sp.ties << '\n';
        }
    }
    return out.str();
}

std::string render_sample_stats(const AnalysisInput& in) {
    std::map<std::string, std::string, std::less<>> dataset_of;
    for (const auto& inst : in.instances) dataset_of[inst.instance_id] = inst.dataset;
    std::ostringstream out;
    out << "instance,dataset,set,source,n,mean_psi,std_psi,mean_psi_neg_c,std_psi_neg_c\n";
    for (const auto& s : per_sample_stats(in.records)) {
        out << s.instance_id << ',' << dataset_of[s.instance_id] << ',' << to_string(s.set) << ','
            << to_string(s.source) << ',' << s.n << ',' << format_real(s.mean_psi) << ',' << format_real(s.std_psi)
            << ',' << format_real(s.mean_psi_neg_c) << ',' << format_real(s.std_psi_neg_c) << '\n';
    }
    return out.str();
}

struct Point {
    std::string label;
    double x = 0.0;
    double y = 0.0;
};

struct Correlation {
    std::string analysis;
    std::vector<Point> points;
    std::size_t excluded = 0;
    std::optional<CorrelationReport> report;
    std::string status = "ok";
};

Aggregation correctness_aggregation(const AnalysisInput& in) {
    const auto& a = in.aggregations;
    if (std::find(a.begin(), a.end(), Aggregation::kPrePost) != a.end()) return Aggregation::kPrePost;
    return a.back();
}

std::vector<Correlation> correlations(const AnalysisInput& in) {
    std::vector<Correlation> out;

    // Dataset accuracy against each (dataset, aggregation) ccr.
    std::map<std::string, std::pair<std::size_t, std::size_t>> acc;  // correct, graded
    for (const auto& inst : in.instances) {
        if (!inst.correct) continue;
        auto& a = acc[inst.dataset];
        a.first += *inst.correct ? 1 : 0;
        ++a.second;
    }
    const auto cells = ccr_cells(in);
    for (bool neg : {false, true}) {
        Correlation c;
        c.analysis = neg ? "accuracy_vs_ccr_neg_c" : "accuracy_vs_ccr";
        std::vector<double> xs, ys;
        for (const auto& cell : cells) {
            if (cell.dataset == kAllDatasets) continue;
            auto it = acc.find(cell.dataset);
            const auto& v = neg ? cell.report.ccr_neg_c : cell.report.ccr;
            if (!cell.has_records || !v.ratio || it == acc.end() || it->second.second == 0) {
                ++c.excluded;
                continue;
            }
            const double accuracy =
                static_cast<double>(it->second.first) / static_cast<double>(it->second.second);
            c.points.push_back({cell.dataset + ":" + std::string(to_string(cell.aggregation)), accuracy, *v.ratio});
            xs.push_back(accuracy);
            ys.push_back(*v.ratio);
        }
        try {
            c.report = pearson(xs, ys, in.permutations, in.stats_seed);
        } catch (const ComputeError& e) {
            c.status = std::string("undefined: ") + e.what();
        }
        out.push_back(std::move(c));
    }

    // Correct / incorrect split of every dataset.
    const auto agg = correctness_aggregation(in);
    std::map<std::pair<std::string, bool>, std::vector<InfluenceRecord>> groups;
    std::map<std::string, const TestInstance*, std::less<>> by_id;
    for (const auto& inst : in.instances) by_id[inst.instance_id] = &inst;
    for (const auto& r : in.records) {
        const auto* inst = by_id.at(r.instance_id);
        if (!inst->correct) continue;
        groups[{inst->dataset, *inst->correct}].push_back(r);
    }
    for (bool neg : {false, true}) {
        Correlation c;
        c.analysis = neg ? "correctness_vs_ccr_neg_c" : "correctness_vs_ccr";
        std::vector<CcrGroup> cg;
        for (const auto& [key, recs] : groups) {
            CcrGroup g;
            g.label = key.first + (key.second ? ":correct" : ":incorrect");
            g.correct = key.second;
            if (std::any_of(recs.begin(), recs.end(), [&](const InfluenceRecord& r) { return admits(agg, r.source); }))
                g.ccr = ccr(recs, agg, neg).ratio;
            if (g.ccr) c.points.push_back({g.label, g.correct ? 1.0 : 0.0, *g.ccr});
            cg.push_back(std::move(g));
        }
        try {
            auto cc = correctness_correlation(cg, in.permutations, in.stats_seed);
            c.report = cc.report;
            c.excluded = cc.excluded_undefined;
        } catch (const ComputeError& e) {
            c.excluded = static_cast<std::size_t>(
                std::count_if(cg.begin(), cg.end(), [](const CcrGroup& g) { return !g.ccr.has_value(); }));
            c.status = std::string("undefined: ") + e.what();
        }
        out.push_back(std::move(c));
    }
    return out;
}

std::string csv_field(std::string_view s) {
    if (s.find_first_of(",\"\n") == std::string_view::npos) return std::string(s);
    std::string q = "\"";
    for (char ch : s) {
        if (ch == '"') q += '"';
        q += ch;
    }
    return q + "\"";
}

std::string render_correlations(const AnalysisInput& in) {
    std::ostringstream out;
    out << "analysis,n_points,r,p_value,permutations,excluded,method,status\n";
    for (const auto& c : correlations(in)) {
        out << c.analysis << ',' << c.points.size() << ',';
        if (c.report) {
            out << format_real(c.report->r) << ',' << format_real(c.report->p_value) << ',' << c.report->permutations
                << ',';
        } else {
            out << "NA,NA," << in.permutations << ',';
        }
        out << c.excluded << ",permutation," << csv_field(c.status) << '\n';
    }
    return out.str();
}

std::string render_correlation_points(const AnalysisInput& in) {
    std::ostringstream out;
    out << "analysis,label,x,y\n";
    for (const auto& c : correlations(in))
        for (const auto& p : c.points)
            out << c.analysis << ',' << csv_field(p.label) << ',' << format_real(p.x) << ',' << format_real(p.y)
                << '\n';
    return out.str();
}

std::string render_kde(const AnalysisInput& in) {
    std::vector<std::pair<std::string, std::vector<double>>> samples;
    for (auto agg : in.aggregations) {
        for (auto set : {SetTag::kT, SetTag::kF}) {
            std::vector<double> v;
            for (const auto& r : in.records)
                if (admits(agg, r.source) && r.set == set) v.push_back(r.psi);
            samples.emplace_back("psi:" + std::string(to_string(agg)) + ":" + std::string(to_string(set)),
                                 std::move(v));
        }
    }
    std::vector<double> correct, incorrect;
    for (const auto& c : correlations(in)) {
        if (c.analysis != "correctness_vs_ccr") continue;
        for (const auto& p : c.points) (p.x > 0.5 ? correct : incorrect).push_back(p.y);
    }
    samples.emplace_back("ccr:correct", std::move(correct));
    samples.emplace_back("ccr:incorrect", std::move(incorrect));

    std::ostringstream out;
    out << "curve,status,bandwidth,x,density\n";
    for (const auto& [name, values] : samples) {
        try {
            const auto curve = kde(values, in.kde_grid);
            const auto bw = format_real(curve.bandwidth);
            for (std::size_t i = 0; i < curve.grid.size(); ++i)
                out << name << ",ok," << bw << ',' << format_real(curve.grid[i]) << ','
                    << format_real(curve.density[i]) << '\n';
        } catch (const ComputeError& e) {
            out << name << ',' << csv_field(std::string("skipped: ") + e.what()) << ",NA,NA,NA\n";
        }
    }
    return out.str();
}

}  // namespace

const std::vector<std::pair<std::string, std::string>>& analysis_files() {
    static const std::vector<std::pair<std::string, std::string>> kFiles = {
        {"ccr", "ccr_table.csv"},
        {"ccr_detail", "ccr_detail.csv"},
        {"sources", "sources.csv"},
        {"sample_stats", "sample_stats.csv"},
        {"correlations", "correlations.csv"},
        {"correlation_points", "correlation_points.csv"},
        {"kde", "kde.csv"},
    };
    return kFiles;
}

AnalysisInput effective_input(const AnalysisInput& input) {
    AnalysisInput out = input;
    if (input.exclude_overlap) out.records = drop_overlaps(input.records);
    return out;
}

std::string render_analysis(const AnalysisInput& all, std::string_view analysis) {
    const auto input = effective_input(all);
    if (analysis == "ccr") return render_ccr_table(input);
    if (analysis == "ccr_detail") return render_ccr_detail(input);
    if (analysis == "sources") return render_sources(input);
    if (analysis == "sample_stats") return render_sample_stats(input);
    if (analysis == "correlations") return render_correlations(input);
    if (analysis == "correlation_points") return render_correlation_points(input);
    if (analysis == "kde") return render_kde(input);
    throw InputError("unknown analysis '" + std::string(analysis) + "'");
}

std::string render_ccr_grid(const AnalysisInput& all) {
    const auto input = effective_input(all);
    // Re-lay the CSV as aligned columns.
    std::vector<std::vector<std::string>> rows;
    std::istringstream in(render_ccr_table(input));
    for (std::string line; std::getline(in, line);) {
        std::vector<std::string> cols;
        std::stringstream ls(line);
        for (std::string col; std::getline(ls, col, ',');) cols.push_back(col);
        rows.push_back(std::move(cols));
    }
    std::vector<std::size_t> width;
    for (const auto& r : rows)
        for (std::size_t i = 0; i < r.size(); ++i) {
            if (width.size() <= i) width.push_back(0);
            width[i] = std::max(width[i], r[i].size());
        }
    std::ostringstream out;
    for (const auto& r : rows) {
        for (std::size_t i = 0; i < r.size(); ++i) {
            out << r[i];
            if (i + 1 < r.size()) out << std::string(width[i] - r[i].size() + 2, ' ');
        }
        out << '\n';
    }
    out << "values in parentheses: mean influence difference not significant (p > 0.05)\n";
    return out.str();
}

}  // namespace tracvc
