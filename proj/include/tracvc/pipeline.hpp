#pragma once

#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "tracvc/corpus.hpp"
#include "tracvc/desklm.hpp"
#include "tracvc/influence.hpp"
#include "tracvc/metrics.hpp"
#include "tracvc/prompts.hpp"

namespace tracvc {

inline constexpr std::size_t kMaxAnswerTokens = 32;
inline constexpr std::size_t kMaxConfidenceTokens = 8;

struct TestInstance {
    std::string instance_id;
    std::string dataset = "default";
    std::string question;
    std::vector<std::string> gold_answers;
    std::optional<std::string> answer;          // ingested or generated
    std::optional<std::string> confidence_raw;  // verbalized text
    std::optional<double> confidence_value;     // empty == UNPARSED
    std::optional<bool> correct;                // empty == UNKNOWN
    bool answer_generated = false;
    bool confidence_generated = false;

    bool scorable() const { return answer.has_value() && confidence_value.has_value(); }
};

// {"id", "question", "gold": [...], optional "answer", "confidence", "dataset"} per line.
std::vector<TestInstance> parse_test_instances_jsonl(std::string_view contents, std::string_view origin = "test set");
std::vector<TestInstance> read_test_instances_jsonl(const std::string& path);

// First maximal run matching \d+(\.\d+)? read as a real; kept iff in [0, 1].
std::optional<double> parse_confidence(std::string_view confidence_raw);

// Lowercase, punctuation stripped, articles a/an/the dropped, whitespace collapsed.
std::string normalize_answer(std::string_view text);

// Normalized equality with any gold answer, or a normalized gold answer as a
// contiguous token run inside the normalized answer. Throws InputError on an
// empty gold list.
bool evaluate_correctness(std::string_view answer, std::span<const std::string> gold_answers);

// The desk model emits "0 85" for "0.85" since '.' never survives
// tokenization; rejoin the first pair of adjacent digit-only tokens.
std::string render_generated_confidence(std::string_view generated);

// Fills a missing answer from the stage-one prompt (32 tokens max) and a
// missing confidence from the stage-two context (8 tokens max), then parses
// the confidence and grades the answer.
TestInstance generate_answer_and_confidence(const Model& model, TestInstance instance);

// Parse and grade without touching a model.
void finalize_instance(TestInstance& instance);

// Flat key=value settings. Unknown keys are rejected.
struct RunConfig {
    std::string pre_corpus;
    std::string post_corpus;
    std::string test_set;
    std::string checkpoint;  // empty: train from the corpora
    TrainConfig train;
    bool train_seed_set = false;
    std::size_t k = 10;
    std::vector<Aggregation> aggregations{Aggregation::kPre, Aggregation::kPost, Aggregation::kPrePost};
    std::size_t permutations = kDefaultPermutations;
    std::uint64_t stats_seed = 0;
    std::size_t jobs = 1;
    std::size_t kde_grid = 256;
    bool exclude_overlap = false;  // drop documents retrieved into both T and F
    Bm25Params bm25;
    std::string out_dir;
    // Relative paths in the settings above are taken against this directory
    // (the config file's). Kept out of to_pairs() so artifacts stay portable.
    std::string base_dir;

    // Every key with its current value, in registry order.
    std::vector<std::pair<std::string, std::string>> to_pairs() const;
    void set(std::string_view key, std::string_view value);
    std::string resolve(const std::string& path) const;
    // Throws InputError on unusable settings or unreadable inputs.
    void validate() const;
    // key=value lines of every setting that can change results (jobs and
    // out_dir excluded).
    std::string canonical_text() const;

    static const std::vector<std::pair<std::string, std::string>>& key_help();
    static RunConfig parse(std::string_view text, std::string_view origin = "config");
    static RunConfig load(const std::string& path);
};

// Summary of one scored or skipped instance, as stored in instances.jsonl.
std::string instances_to_jsonl(std::span<const TestInstance> instances);
std::vector<TestInstance> instances_from_jsonl(std::string_view contents, std::string_view origin = "instances");

// Everything the analyses read. The run directory stores enough to rebuild it.
struct AnalysisInput {
    std::vector<TestInstance> instances;
    std::vector<InfluenceRecord> records;
    std::vector<Aggregation> aggregations;
    std::size_t permutations = kDefaultPermutations;
    std::uint64_t stats_seed = 0;
    std::size_t kde_grid = 256;
    bool exclude_overlap = false;
};

// The input the analyses actually read: overlaps dropped when requested.
AnalysisInput effective_input(const AnalysisInput& input);

// Analysis name -> output file. Order is the order files are written.
const std::vector<std::pair<std::string, std::string>>& analysis_files();

// CSV text for one analysis. Throws InputError for an unknown name.
std::string render_analysis(const AnalysisInput& input, std::string_view analysis);

// Aligned ccr grid (aggregation rows, dataset x variant columns) for the terminal.
std::string render_ccr_grid(const AnalysisInput& input);

struct RunSummary {
    std::size_t n_instances = 0;
    std::size_t n_scored = 0;
    std::size_t n_unparsed = 0;
    std::size_t n_records = 0;
    std::string manifest_hash;
    std::string out_dir;
};

// Stage name carried by pipeline failures, e.g. "retrieval".
class StageError : public std::runtime_error {
  public:
    StageError(std::string stage, std::string instance, const std::string& what);
    const std::string& stage() const { return stage_; }
    const std::string& instance() const { return instance_; }

  private:
    std::string stage_;
    std::string instance_;
};

// Full run: index both corpora, obtain the model, generate/parse/grade,
// retrieve T and F per source, score influence, write every artifact into
// config.out_dir atomically. `log` receives progress lines.
RunSummary run_trace(const RunConfig& config, std::ostream* log = nullptr);

AnalysisInput load_run(const std::string& run_dir);

}  // namespace tracvc
