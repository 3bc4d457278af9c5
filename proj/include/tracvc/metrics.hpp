#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "tracvc/influence.hpp"

namespace tracvc {

enum class Aggregation : std::uint8_t { kPre = 0, kPost = 1, kPrePost = 2 };
inline constexpr Aggregation kAllAggregations[] = {Aggregation::kPre, Aggregation::kPost, Aggregation::kPrePost};

std::string_view to_string(Aggregation a);
Aggregation parse_aggregation(std::string_view s);
bool admits(Aggregation a, SourceTag s);

// Which influence score a metric reads.
enum class ScoreVariant : std::uint8_t { kPsi, kPsiNegC };
double score_of(const InfluenceRecord& r, ScoreVariant v);

struct PairwiseWinCounts {
    std::uint64_t wins_t = 0;
    std::uint64_t wins_f = 0;
    std::uint64_t ties = 0;

    std::uint64_t total() const { return wins_t + wins_f + ties; }
    PairwiseWinCounts& operator+=(const PairwiseWinCounts& o);
    bool operator==(const PairwiseWinCounts&) const = default;
};

struct CcrValue {
    PairwiseWinCounts counts;
    std::optional<double> ratio;  // empty when wins_f == 0

    static CcrValue from_counts(const PairwiseWinCounts& counts);
    // "content-grounded" (> 1), "confidence-grounded" (< 1), "balanced", or "undefined".
    std::string_view label() const;
};

struct CcrReport {
    Aggregation aggregation = Aggregation::kPrePost;
    CcrValue ccr;
    CcrValue ccr_neg_c;
    std::size_t n_instances = 0;
};

// Counts every (d_t, d_f) pair within each instance, over the records the
// aggregation admits. Equal scores are ties and enter neither side.
PairwiseWinCounts count_wins(std::span<const InfluenceRecord> records, Aggregation aggregation, ScoreVariant variant);

// Throws ComputeError when the aggregation leaves no records.
CcrValue ccr(std::span<const InfluenceRecord> records, Aggregation aggregation, bool use_neg_c);
CcrReport ccr_report(std::span<const InfluenceRecord> records, Aggregation aggregation);

// Records whose document was retrieved into both T and F for the same
// instance and source.
std::size_t count_overlaps(std::span<const InfluenceRecord> records);
std::vector<InfluenceRecord> drop_overlaps(std::span<const InfluenceRecord> records);

enum class SourceCategory : std::uint8_t { kPreContent = 0, kPreConfidence = 1, kPostContent = 2, kPostConfidence = 3 };
inline constexpr SourceCategory kAllSourceCategories[] = {SourceCategory::kPreContent, SourceCategory::kPreConfidence,
                                                          SourceCategory::kPostContent, SourceCategory::kPostConfidence};
std::string_view to_string(SourceCategory c);
SourceCategory category_of(SourceTag source, SetTag set);

struct MostInfluential {
    SourceCategory category = SourceCategory::kPreContent;
    std::string doc_id;
    double score = 0.0;
    bool tie = false;  // another record shared the top score
};

// Argmax of psi over one instance's records; ties resolved by
// (source, set, doc_id) ascending. Throws InputError on an empty span.
MostInfluential most_influential_source(std::span<const InfluenceRecord> instance_records,
                                        ScoreVariant variant = ScoreVariant::kPsi);

struct SourceProportions {
    std::uint64_t counts[4] = {0, 0, 0, 0};  // indexed by SourceCategory
    std::uint64_t ties = 0;
    std::uint64_t n_instances = 0;
    double proportion(SourceCategory c) const;
};

// One most_influential_source per instance over every record it has.
SourceProportions source_proportions(std::span<const InfluenceRecord> records,
                                     ScoreVariant variant = ScoreVariant::kPsi);

struct SampleStats {
    std::string instance_id;
    SetTag set = SetTag::kT;
    SourceTag source = SourceTag::kPre;
    std::size_t n = 0;
    double mean_psi = 0.0;
    double std_psi = 0.0;  // population
    double mean_psi_neg_c = 0.0;
    double std_psi_neg_c = 0.0;
};

// Grouped by (instance, set, source), sorted by that key.
std::vector<SampleStats> per_sample_stats(std::span<const InfluenceRecord> records);

struct CorrelationReport {
    double r = 0.0;
    double p_value = 1.0;
    std::size_t n_points = 0;
    std::size_t permutations = 0;
    std::string method = "permutation";
};

inline constexpr std::size_t kDefaultPermutations = 10000;

// Pearson r with a two-sided permutation p-value (k + 1) / (m + 1), where k
// counts shuffles of ys with |r_perm| >= |r|. Throws ComputeError for n < 3
// or constant input ("correlation undefined").
CorrelationReport pearson(std::span<const double> xs, std::span<const double> ys,
                          std::size_t permutations = kDefaultPermutations, std::uint64_t seed = 0);
double pearson_r(std::span<const double> xs, std::span<const double> ys);

// Two-sided permutation test on the difference of means; labels shuffled
// with the given seed. Throws ComputeError when a group is empty.
double mean_diff_significance(std::span<const double> group_a, std::span<const double> group_b,
                              std::size_t permutations = kDefaultPermutations, std::uint64_t seed = 0);

struct DensityCurve {
    std::vector<double> grid;
    std::vector<double> density;
    double bandwidth = 0.0;
};

// Gaussian KDE with Scott's bandwidth sigma * n^(-1/5) (sample sigma) on an
// even grid over [min - 3h, max + 3h]. Throws ComputeError for n < 2 or zero
// variance.
DensityCurve kde(std::span<const double> values, std::size_t grid_points = 256);
double trapezoid_integral(const DensityCurve& curve);

struct CcrGroup {
    std::string label;
    bool correct = false;
    std::optional<double> ccr;
};

struct CorrectnessCorrelation {
    CorrelationReport report;
    std::size_t excluded_undefined = 0;
};

// Pearson between the correctness indicator and each group's ccr. Groups
// with undefined ccr are skipped and counted. Needs >= 3 usable groups.
CorrectnessCorrelation correctness_correlation(std::span<const CcrGroup> groups,
                                               std::size_t permutations = kDefaultPermutations,
                                               std::uint64_t seed = 0);

}  // namespace tracvc
