#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "tracvc/common.hpp"
#include "tracvc/prompts.hpp"

namespace tracvc {

// Lowercased alphanumeric runs; everything else separates tokens.
std::vector<std::string> tokenize(std::string_view text);

struct Document {
    std::string doc_id;
    SourceTag source = SourceTag::kPre;
    // Field name -> raw text, in declaration order.
    std::vector<std::pair<std::string, std::string>> fields;

    // Fields joined with single spaces, in declaration order.
    std::string joined_text() const;
};

// One JSON object per line: {"id": str, "source": "pre"|"post", "fields": {name: text}}.
// Errors carry the 1-based line number.
std::vector<Document> parse_documents_jsonl(std::string_view contents, std::string_view origin = "corpus");
std::vector<Document> read_documents_jsonl(const std::string& path);

struct Bm25Params {
    double k1 = 1.2;
    double b = 0.75;
};

struct RetrievalResult {
    std::string doc_id;
    double score = 0.0;
    int rank = 0;
    std::string matched_field;
};

struct RetrievalResults {
    std::vector<RetrievalResult> hits;
    // Set when the query tokenized to nothing.
    bool empty_query = false;
};

// Immutable inverted index over named fields. Scoring is classic Okapi BM25
// with the (k1 + 1) numerator and idf = ln(1 + (N - n + 0.5) / (n + 0.5));
// multi-field queries take the best field's score.
class InvertedIndex {
  public:
    struct Posting {
        std::uint32_t doc = 0;  // position in documents()
        std::uint32_t tf = 0;
    };

    struct FieldStats {
        std::map<std::string, std::vector<Posting>, std::less<>> postings;  // sorted by doc
        std::vector<std::uint32_t> lengths;  // per document; 0 when the field is absent
        std::vector<bool> present;
        std::uint64_t total_length = 0;
        std::uint32_t docs_with_field = 0;
        double avg_length = 0.0;  // over documents carrying the field
    };

    // Throws InputError on a duplicate doc_id or an empty field value.
    static InvertedIndex build(std::vector<Document> documents, Bm25Params params = {});

    std::size_t doc_count() const { return docs_.size(); }
    const Bm25Params& params() const { return params_; }
    const std::vector<Document>& documents() const { return docs_; }
    const Document& document(std::string_view doc_id) const;
    const std::map<std::string, FieldStats, std::less<>>& fields() const { return fields_; }

    std::size_t document_frequency(std::string_view field, std::string_view term) const;
    double avg_field_length(std::string_view field) const;
    std::size_t vocabulary_size() const;

    // Sum over distinct query terms. Unknown field or doc_id throws InputError.
    double bm25_field_score(std::string_view field, const std::vector<std::string>& query_terms,
                            std::string_view doc_id) const;

    // Best-fields top-k; zero-score documents are dropped, ties go to the
    // smaller doc_id.
    RetrievalResults retrieve_top_k(std::string_view query_text, std::size_t k) const;

    // Binary artifact with a magic and format version.
    std::string serialize() const;
    static InvertedIndex deserialize(std::string_view bytes);
    void save(const std::string& path) const;
    static InvertedIndex load(const std::string& path);

    static constexpr std::uint32_t kFormatVersion = 1;

  private:
    std::size_t doc_position(std::string_view doc_id) const;
    double idf(std::size_t df) const;
    double term_weight(std::uint32_t tf, std::uint32_t dl, double avgdl, double idf_value) const;
    void finalize();

    Bm25Params params_;
    std::vector<Document> docs_;
    std::map<std::string, std::size_t, std::less<>> by_id_;
    std::map<std::string, FieldStats, std::less<>> fields_;
};

struct RetrievalSets {
    RetrievalResults content;     // T: question + answer
    RetrievalResults confidence;  // F: confidence prompt + verbalized confidence
};

// T and F may share documents; overlaps are kept.
RetrievalSets retrieve_sets(const InvertedIndex& index, const CompletionRecord& record, std::size_t k = 10);

}  // namespace tracvc
