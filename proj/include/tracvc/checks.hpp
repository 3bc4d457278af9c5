#pragma once

// Reference computations used by `tracvc selftest` and the test suites.
// Nothing here calls into the code paths it is meant to check.

#include <optional>
#include <string>
#include <vector>

#include "tracvc/corpus.hpp"
#include "tracvc/desklm.hpp"

namespace tracvc::checks {

// BM25 recomputed from the raw documents by linear scans.
double bm25_bruteforce(const std::vector<Document>& docs, const Bm25Params& params, const std::string& field,
                       const std::vector<std::string>& query_terms, const std::string& doc_id);

// Every document scored on every field, best field kept, sorted.
std::vector<RetrievalResult> retrieve_bruteforce(const std::vector<Document>& docs, const Bm25Params& params,
                                                 const std::string& query_text, std::size_t k);

struct GradCheck {
    double max_rel_error = 0.0;
    std::size_t entries = 0;
};

// Central differences on `entries` random (row, column) cells of the
// embedding table, rows drawn from the analytic gradient's support.
// Relative error is |a - n| / max(|a|, |n|, floor).
GradCheck finite_difference_check(const ModelParams& params, const TokenSequence& seq, std::size_t entries,
                                  double step, std::uint64_t seed, double floor = 1e-7);

// A random model shape and a random sequence for it.
struct RandomCase {
    ModelParams params;
    TokenSequence seq;
};
RandomCase random_case(std::uint64_t seed, std::uint32_t max_vocab = 50, std::uint32_t max_dim = 8,
                       std::uint32_t max_hidden = 8, std::uint32_t max_window = 3);

// Documents with random words from a small Zipf-ish vocabulary over one to
// three fields.
std::vector<Document> random_corpus(std::uint64_t seed, std::size_t n_docs);

struct CheckResult {
    std::string name;
    bool passed = false;
    std::string detail;
};

// Gradient, BM25 and ccr checks; with a checkpoint, also loads it and
// gradient-checks the stored model.
std::vector<CheckResult> run_selftest(const std::optional<std::string>& checkpoint = std::nullopt);

}  // namespace tracvc::checks
