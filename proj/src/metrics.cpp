#include "tracvc/metrics.hpp"

#include <algorithm>
#include <set>
#include <cmath>
#include <map>
#include <numbers>
#include <tuple>

namespace tracvc {

namespace {

// Permutation statistics at least as extreme as the observed one, allowing
// for rounding in the recomputed statistic.
bool at_least_as_extreme(double perm, double observed) {
    return perm >= observed - 1e-12 * std::max(1.0, observed);
}

std::map<std::string_view, std::vector<const InfluenceRecord*>> by_instance(std::span<const InfluenceRecord> records,
                                                                           Aggregation aggregation) {
    std::map<std::string_view, std::vector<const InfluenceRecord*>> groups;
    for (const auto& r : records)
        if (admits(aggregation, r.source)) groups[r.instance_id].push_back(&r);
    return groups;
}

}  // namespace

std::string_view to_string(Aggregation a) {
    switch (a) {
        case Aggregation::kPre: return "pre";
        case Aggregation::kPost: return "post";
        case Aggregation::kPrePost: return "pre+post";
    }
    return "?";
}

Aggregation parse_aggregation(std::string_view s) {
    if (s == "pre") return Aggregation::kPre;
    if (s == "post") return Aggregation::kPost;
    if (s == "pre+post") return Aggregation::kPrePost;
    throw InputError("unknown aggregation '" + std::string(s) + "' (expected pre|post|pre+post)");
}

bool admits(Aggregation a, SourceTag s) {
    switch (a) {
        case Aggregation::kPre: return s == SourceTag::kPre;
        case Aggregation::kPost: return s == SourceTag::kPost;
        case Aggregation::kPrePost: return true;
    }
    return false;
}

double score_of(const InfluenceRecord& r, ScoreVariant v) { return v == ScoreVariant::kPsi ? r.psi : r.psi_neg_c; }

PairwiseWinCounts& PairwiseWinCounts::operator+=(const PairwiseWinCounts& o) {
    wins_t += o.wins_t;
    wins_f += o.wins_f;
    ties += o.ties;
    return *this;
}

CcrValue CcrValue::from_counts(const PairwiseWinCounts& counts) {
    CcrValue v;
    v.counts = counts;
    if (counts.wins_f > 0) v.ratio = static_cast<double>(counts.wins_t) / static_cast<double>(counts.wins_f);
    return v;
}

std::string_view CcrValue::label() const {
    if (!ratio) return "undefined";
    if (*ratio > 1.0) return "content-grounded";
    if (*ratio < 1.0) return "confidence-grounded";
    return "balanced";
}

PairwiseWinCounts count_wins(std::span<const InfluenceRecord> records, Aggregation aggregation,
                             ScoreVariant variant) {
    PairwiseWinCounts counts;
    for (const auto& [id, group] : by_instance(records, aggregation)) {
        for (const auto* t : group) {
            if (t->set != SetTag::kT) continue;
            const double st = score_of(*t, variant);
            for (const auto* f : group) {
                if (f->set != SetTag::kF) continue;
                const double sf = score_of(*f, variant);
                if (st > sf) {
                    ++counts.wins_t;
                } else if (st < sf) {
                    ++counts.wins_f;
                } else {
                    ++counts.ties;
                }
            }
        }
    }
    return counts;
}

CcrValue ccr(std::span<const InfluenceRecord> records, Aggregation aggregation, bool use_neg_c) {
    const bool any = std::any_of(records.begin(), records.end(),
                                 [&](const InfluenceRecord& r) { return admits(aggregation, r.source); });
    if (!any) throw ComputeError("ccr: no records for aggregation " + std::string(to_string(aggregation)));
    return CcrValue::from_counts(
        count_wins(records, aggregation, use_neg_c ? ScoreVariant::kPsiNegC : ScoreVariant::kPsi));
}

CcrReport ccr_report(std::span<const InfluenceRecord> records, Aggregation aggregation) {
    CcrReport rep;
    rep.aggregation = aggregation;
    rep.ccr = ccr(records, aggregation, false);
    rep.ccr_neg_c = ccr(records, aggregation, true);
    rep.n_instances = by_instance(records, aggregation).size();
    return rep;
}

namespace {

using OverlapKey = std::tuple<std::string_view, SourceTag, std::string_view>;

std::set<OverlapKey> overlap_keys(std::span<const InfluenceRecord> records) {
    std::set<OverlapKey> t, both;
    for (const auto& r : records)
        if (r.set == SetTag::kT) t.emplace(r.instance_id, r.source, r.doc_id);
    for (const auto& r : records)
        if (r.set == SetTag::kF && t.count({r.instance_id, r.source, r.doc_id})) both.emplace(r.instance_id, r.source, r.doc_id);
    return both;
}

}  // namespace

std::size_t count_overlaps(std::span<const InfluenceRecord> records) {
    const auto both = overlap_keys(records);
    std::size_t n = 0;
    for (const auto& r : records) n += both.count({r.instance_id, r.source, r.doc_id});
    return n;
}

std::vector<InfluenceRecord> drop_overlaps(std::span<const InfluenceRecord> records) {
    const auto both = overlap_keys(records);
    std::vector<InfluenceRecord> out;
    for (const auto& r : records)
        if (!both.count({r.instance_id, r.source, r.doc_id})) out.push_back(r);
    return out;
}

std::string_view to_string(SourceCategory c) {
    switch (c) {
        case SourceCategory::kPreContent: return "pre-content";
        case SourceCategory::kPreConfidence: return "pre-confidence";
        case SourceCategory::kPostContent: return "post-content";
        case SourceCategory::kPostConfidence: return "post-confidence";
    }
    return "?";
}

SourceCategory category_of(SourceTag source, SetTag set) {
    return static_cast<SourceCategory>(static_cast<int>(source) * 2 + static_cast<int>(set));
}

MostInfluential most_influential_source(std::span<const InfluenceRecord> instance_records, ScoreVariant variant) {
    if (instance_records.empty()) throw InputError("most_influential_source: no records");
    auto key = [](const InfluenceRecord& r) { return std::tie(r.source, r.set, r.doc_id); };
    const InfluenceRecord* best = &instance_records.front();
    bool tie = false;
    for (const auto& r : instance_records.subspan(1)) {
        const double s = score_of(r, variant), b = score_of(*best, variant);
        if (s > b) {
            best = &r;
            tie = false;
        } else if (s == b) {
            tie = true;
            if (key(r) < key(*best)) best = &r;
        }
    }
    return {category_of(best->source, best->set), best->doc_id, score_of(*best, variant), tie};
}

double SourceProportions::proportion(SourceCategory c) const {
    if (n_instances == 0) return 0.0;
    return static_cast<double>(counts[static_cast<int>(c)]) / static_cast<double>(n_instances);
}

SourceProportions source_proportions(std::span<const InfluenceRecord> records, ScoreVariant variant) {
    SourceProportions out;
    for (const auto& [id, group] : by_instance(records, Aggregation::kPrePost)) {
        std::vector<InfluenceRecord> copy;
        copy.reserve(group.size());
        for (const auto* r : group) copy.push_back(*r);
        const auto m = most_influential_source(copy, variant);
        ++out.counts[static_cast<int>(m.category)];
        if (m.tie) ++out.ties;
        ++out.n_instances;
    }
    return out;
}

std::vector<SampleStats> per_sample_stats(std::span<const InfluenceRecord> records) {
    using Key = std::tuple<std::string_view, SetTag, SourceTag>;
    std::map<Key, std::vector<const InfluenceRecord*>> groups;
    for (const auto& r : records) groups[{r.instance_id, r.set, r.source}].push_back(&r);

    auto mean_std = [](const std::vector<const InfluenceRecord*>& g, ScoreVariant v) {
        double sum = 0.0;
        for (const auto* r : g) sum += score_of(*r, v);
        const double mean = sum / static_cast<double>(g.size());
        double ss = 0.0;
        for (const auto* r : g) {
            const double d = score_of(*r, v) - mean;
            ss += d * d;
        }
        return std::pair{mean, std::sqrt(ss / static_cast<double>(g.size()))};
    };

    std::vector<SampleStats> out;
    out.reserve(groups.size());
    for (const auto& [key, g] : groups) {
        SampleStats s;
        s.instance_id = std::string(std::get<0>(key));
        s.set = std::get<1>(key);
        s.source = std::get<2>(key);
        s.n = g.size();
        std::tie(s.mean_psi, s.std_psi) = mean_std(g, ScoreVariant::kPsi);
        std::tie(s.mean_psi_neg_c, s.std_psi_neg_c) = mean_std(g, ScoreVariant::kPsiNegC);
        out.push_back(std::move(s));
    }
    return out;
}

double pearson_r(std::span<const double> xs, std::span<const double> ys) {
    if (xs.size() != ys.size()) throw ComputeError("pearson: length mismatch");
    if (xs.size() < 3) throw ComputeError("pearson: need at least 3 points");
    const double n = static_cast<double>(xs.size());
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        mx += xs[i];
        my += ys[i];
    }
    mx /= n;
    my /= n;
    double sxx = 0.0, syy = 0.0, sxy = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        const double dx = xs[i] - mx, dy = ys[i] - my;
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    if (!(sxx > 0.0) || !(syy > 0.0)) throw ComputeError("correlation undefined: constant input");
    return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

CorrelationReport pearson(std::span<const double> xs, std::span<const double> ys, std::size_t permutations,
                          std::uint64_t seed) {
    CorrelationReport rep;
    rep.r = pearson_r(xs, ys);
    rep.n_points = xs.size();
    rep.permutations = permutations;
    const double observed = std::abs(rep.r);
    std::vector<double> shuffled(ys.begin(), ys.end());
    Rng rng(seed);
    std::size_t extreme = 0;
    for (std::size_t m = 0; m < permutations; ++m) {
        rng.shuffle(shuffled);
        if (at_least_as_extreme(std::abs(pearson_r(xs, shuffled)), observed)) ++extreme;
    }
    rep.p_value = static_cast<double>(extreme + 1) / static_cast<double>(permutations + 1);
    return rep;
}

double mean_diff_significance(std::span<const double> group_a, std::span<const double> group_b,
                              std::size_t permutations, std::uint64_t seed) {
    if (group_a.empty() || group_b.empty()) throw ComputeError("mean_diff_significance: empty group");
    std::vector<double> pooled(group_a.begin(), group_a.end());
    pooled.insert(pooled.end(), group_b.begin(), group_b.end());
    const std::size_t na = group_a.size();
    auto abs_diff = [&](const std::vector<double>& v) {
        double sa = 0.0, sb = 0.0;
        for (std::size_t i = 0; i < v.size(); ++i) (i < na ? sa : sb) += v[i];
        return std::abs(sa / static_cast<double>(na) - sb / static_cast<double>(v.size() - na));
    };
    const double observed = abs_diff(pooled);
    Rng rng(seed);
    std::size_t extreme = 0;
    for (std::size_t m = 0; m < permutations; ++m) {
        rng.shuffle(pooled);
        if (at_least_as_extreme(abs_diff(pooled), observed)) ++extreme;
    }
    return static_cast<double>(extreme + 1) / static_cast<double>(permutations + 1);
}

DensityCurve kde(std::span<const double> values, std::size_t grid_points) {
    if (values.size() < 2) throw ComputeError("kde: need at least 2 values");
    if (grid_points < 2) throw ComputeError("kde: need at least 2 grid points");
    const double n = static_cast<double>(values.size());
    double mean = 0.0;
    for (double v : values) mean += v;
    mean /= n;
    double ss = 0.0;
    for (double v : values) ss += (v - mean) * (v - mean);
    const double sigma = std::sqrt(ss / (n - 1.0));
    // Constant input can leave rounding residue in ss; test the values directly.
    const auto [mn, mx] = std::minmax_element(values.begin(), values.end());
    if (*mn == *mx || !(sigma > 0.0)) throw ComputeError("kde: zero-variance sample");

    DensityCurve c;
    c.bandwidth = sigma * std::pow(n, -0.2);
    const auto [lo_it, hi_it] = std::minmax_element(values.begin(), values.end());
    const double lo = *lo_it - 3.0 * c.bandwidth;
    const double hi = *hi_it + 3.0 * c.bandwidth;
    const double step = (hi - lo) / static_cast<double>(grid_points - 1);
    const double norm = 1.0 / (n * c.bandwidth * std::sqrt(2.0 * std::numbers::pi));
    c.grid.resize(grid_points);
    c.density.resize(grid_points);
    for (std::size_t i = 0; i < grid_points; ++i) {
        const double x = i + 1 == grid_points ? hi : lo + step * static_cast<double>(i);
        double s = 0.0;
        for (double v : values) {
            const double u = (x - v) / c.bandwidth;
            s += std::exp(-0.5 * u * u);
        }
        c.grid[i] = x;
        c.density[i] = s * norm;
    }
    return c;
}

double trapezoid_integral(const DensityCurve& curve) {
    double area = 0.0;
    for (std::size_t i = 1; i < curve.grid.size(); ++i)
        area += 0.5 * (curve.density[i] + curve.density[i - 1]) * (curve.grid[i] - curve.grid[i - 1]);
    return area;
}

CorrectnessCorrelation correctness_correlation(std::span<const CcrGroup> groups, std::size_t permutations,
                                               std::uint64_t seed) {
    CorrectnessCorrelation out;
    std::vector<double> xs, ys;
    for (const auto& g : groups) {
        if (!g.ccr) {
            ++out.excluded_undefined;
            continue;
        }
        xs.push_back(g.correct ? 1.0 : 0.0);
        ys.push_back(*g.ccr);
    }
    if (xs.size() < 3)
        throw ComputeError("correctness correlation: " + std::to_string(xs.size()) +
                           " usable groups, need at least 3");
    out.report = pearson(xs, ys, permutations, seed);
    return out;
}

}  // namespace tracvc
