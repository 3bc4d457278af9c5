#pragma once

#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "tracvc/corpus.hpp"
#include "tracvc/desklm.hpp"
#include "tracvc/prompts.hpp"

namespace tracvc {

// q a p [c], single spaces at the joins.
std::string completion_text(const CompletionRecord& record, bool include_confidence);

// Throws InputError when the record is invalid or c is requested but absent.
TokenSequence completion_sequence(const CompletionRecord& record, bool include_confidence, const Vocabulary& vocab);

// (g1 . g2) / (|g1| |g2|) over the shared support, clamped to [-1, 1].
// Throws ComputeError("degenerate gradient") for a zero-norm operand.
double cosine(const GradientVector& g1, const GradientVector& g2);

// Gradient of the document's joined text under the frozen model.
GradientVector document_gradient(const Model& model, const Document& doc);

// psi(d | c): cosine between the document gradient and the gradient of the
// full (q, a, p, c) completion.
double psi(const Model& model, const Document& doc, const CompletionRecord& record);
// Same with the (q, a, p) completion.
double psi_neg_c(const Model& model, const Document& doc, const CompletionRecord& record);

struct InfluenceRecord {
    std::string instance_id;
    std::string doc_id;
    SetTag set = SetTag::kT;
    SourceTag source = SourceTag::kPre;
    int bm25_rank = 0;
    double psi = 0.0;
    double psi_neg_c = 0.0;

    bool operator==(const InfluenceRecord&) const = default;
};

struct RetrievedDocument {
    const Document* doc = nullptr;
    SetTag set = SetTag::kT;
    int rank = 0;
};

// One record per retrieved document, in input order. With `cache_completion`
// the two completion gradients are computed once and shared; without it they
// are recomputed per document (same results, used to check the cache).
// A degenerate gradient throws ComputeError naming the document.
std::vector<InfluenceRecord> score_instance(const Model& model, std::string_view instance_id,
                                            const CompletionRecord& record,
                                            std::span<const RetrievedDocument> retrieved,
                                            bool cache_completion = true);

// {"instance", "doc", "set", "source", "rank", "psi", "psi_neg_c"} per line.
std::string influence_records_to_jsonl(std::span<const InfluenceRecord> records);
std::vector<InfluenceRecord> influence_records_from_jsonl(std::string_view contents, std::string_view origin = "records");

}  // namespace tracvc
