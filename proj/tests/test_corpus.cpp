#include <algorithm>
#include <cmath>

#include <gtest/gtest.h>

#include "test_util.hpp"
#include "tracvc/checks.hpp"
#include "tracvc/corpus.hpp"

using namespace tracvc;
using tracvc::testing::make_doc;

namespace {

InvertedIndex two_docs() {
    return InvertedIndex::build({make_doc("d1", SourceTag::kPre, "the cat sat"),
                                 make_doc("d2", SourceTag::kPre, "a dog")});
}

}  // namespace

TEST(Tokenize, LowercasesAndSplitsOnNonAlphanumerics) {
    EXPECT_EQ(tokenize("The Cat, sat!"), (std::vector<std::string>{"the", "cat", "sat"}));
    EXPECT_EQ(tokenize("0.85"), (std::vector<std::string>{"0", "85"}));
    EXPECT_EQ(tokenize("  --  "), std::vector<std::string>{});
    EXPECT_EQ(tokenize("x1y2 Z"), (std::vector<std::string>{"x1y2", "z"}));
}

TEST(Tokenize, KeepsNonAsciiBytesInsideTokens) {
    EXPECT_EQ(tokenize("caf\xc3\xa9 bar"), (std::vector<std::string>{"caf\xc3\xa9", "bar"}));
}

TEST(ParseDocuments, ReadsFieldsInOrder) {
    const auto docs = parse_documents_jsonl(
        R"({"id":"a","source":"post","fields":{"question":"Q?","answer":"A"}})"
        "\n\n"
        R"({"id":"b","source":"pre","fields":{"text":"hello"}})"
        "\n");
    ASSERT_EQ(docs.size(), 2u);
    EXPECT_EQ(docs[0].source, SourceTag::kPost);
    ASSERT_EQ(docs[0].fields.size(), 2u);
    EXPECT_EQ(docs[0].fields[0].first, "question");
    EXPECT_EQ(docs[0].joined_text(), "Q? A");
}

TEST(ParseDocuments, ErrorsCarryLineNumber) {
    try {
        parse_documents_jsonl("{\"id\":\"a\",\"source\":\"pre\",\"fields\":{\"text\":\"x\"}}\n{oops\n", "c.jsonl");
        FAIL() << "expected InputError";
    } catch (const InputError& e) {
        EXPECT_NE(std::string(e.what()).find("c.jsonl:2"), std::string::npos) << e.what();
    }
    EXPECT_THROW(parse_documents_jsonl(R"({"id":"a","source":"mid","fields":{"text":"x"}})"), InputError);
    EXPECT_THROW(parse_documents_jsonl(R"({"id":"a","source":"pre","fields":{}})"), InputError);
}

TEST(Index, TwoDocStatistics) {
    const auto index = two_docs();
    EXPECT_EQ(index.doc_count(), 2u);
    EXPECT_DOUBLE_EQ(index.avg_field_length("text"), 2.5);
    EXPECT_EQ(index.document_frequency("text", "cat"), 1u);
    EXPECT_EQ(index.document_frequency("text", "bird"), 0u);
    EXPECT_EQ(index.vocabulary_size(), 5u);
}

TEST(Index, HandComputedBm25) {
    const auto index = two_docs();
    // idf = ln(1 + (2 - 1 + 0.5) / (1 + 0.5)) = ln 2, tf = 1, dl = 3, avgdl = 2.5
    const double expected = std::log(2.0) * 1.0 * 2.2 / (1.0 + 1.2 * (1.0 - 0.75 + 0.75 * 3.0 / 2.5));
    const double got = index.bm25_field_score("text", {"cat"}, "d1");
    EXPECT_NEAR(got, expected, 1e-12);
    EXPECT_NEAR(got, 0.641, 5e-4);
    EXPECT_EQ(index.bm25_field_score("text", {"cat"}, "d2"), 0.0);
    // repeated query terms count once
    EXPECT_EQ(index.bm25_field_score("text", {"cat", "cat"}, "d1"), got);
}

TEST(Index, RejectsDuplicatesAndEmptyFields) {
    EXPECT_THROW(InvertedIndex::build({make_doc("x", SourceTag::kPre, "a"), make_doc("x", SourceTag::kPre, "b")}),
                 InputError);
    EXPECT_THROW(InvertedIndex::build({make_doc("x", SourceTag::kPre, "")}), InputError);
    EXPECT_THROW(two_docs().bm25_field_score("title", {"cat"}, "d1"), InputError);
    EXPECT_THROW(two_docs().bm25_field_score("text", {"cat"}, "zz"), InputError);
}

TEST(Index, StatisticsMatchLinearRecount) {
    const auto docs = checks::random_corpus(42, 1000);
    const auto index = InvertedIndex::build(docs);
    ASSERT_EQ(index.doc_count(), 1000u);
    for (const auto& [field, stats] : index.fields()) {
        double total = 0.0, carrying = 0.0;
        std::map<std::string, std::size_t> df;
        for (const auto& d : docs)
            for (const auto& [name, text] : d.fields)
                if (name == field) {
                    auto toks = tokenize(text);
                    total += static_cast<double>(toks.size());
                    carrying += 1.0;
                    std::sort(toks.begin(), toks.end());
                    toks.erase(std::unique(toks.begin(), toks.end()), toks.end());
                    for (const auto& t : toks) ++df[t];
                }
        EXPECT_DOUBLE_EQ(index.avg_field_length(field), total / carrying) << field;
        EXPECT_EQ(stats.postings.size(), df.size()) << field;
        for (const auto& [term, n] : df) EXPECT_EQ(index.document_frequency(field, term), n) << field << " " << term;
    }
}

TEST(Index, FieldOrderDoesNotMatter) {
    Document a;
    a.doc_id = "a";
    a.fields = {{"question", "red apple"}, {"answer", "green pear"}};
    Document b = a;
    std::reverse(b.fields.begin(), b.fields.end());
    const auto other = make_doc("o", SourceTag::kPre, "blue pear tree");
    const auto i1 = InvertedIndex::build({a, other});
    const auto i2 = InvertedIndex::build({b, other});
    for (const auto* q : {"apple", "pear", "green pear tree"}) {
        const auto r1 = i1.retrieve_top_k(q, 5).hits;
        const auto r2 = i2.retrieve_top_k(q, 5).hits;
        ASSERT_EQ(r1.size(), r2.size());
        for (std::size_t i = 0; i < r1.size(); ++i) {
            EXPECT_EQ(r1[i].doc_id, r2[i].doc_id);
            EXPECT_EQ(r1[i].score, r2[i].score);
            EXPECT_EQ(r1[i].matched_field, r2[i].matched_field);
        }
    }
}

TEST(Index, BuildIsIdempotent) {
    const auto docs = checks::random_corpus(3, 200);
    EXPECT_EQ(InvertedIndex::build(docs).serialize(), InvertedIndex::build(docs).serialize());
}

TEST(Retrieve, MatchesExhaustiveScoring) {
    const auto docs = checks::random_corpus(9, 50);
    const auto index = InvertedIndex::build(docs);
    for (const auto* q : {"the river", "probability of answer correct", "gold", "paris paris capital zebra"}) {
        const auto got = index.retrieve_top_k(q, 10).hits;
        const auto want = checks::retrieve_bruteforce(docs, index.params(), q, 10);
        ASSERT_EQ(got.size(), want.size()) << q;
        for (std::size_t i = 0; i < got.size(); ++i) {
            EXPECT_EQ(got[i].doc_id, want[i].doc_id) << q;
            EXPECT_NEAR(got[i].score, want[i].score, 1e-9);
            EXPECT_EQ(got[i].matched_field, want[i].matched_field);
            EXPECT_EQ(got[i].rank, static_cast<int>(i + 1));
        }
    }
}

TEST(Retrieve, EmptyQueryAndFewMatches) {
    const auto index = two_docs();
    const auto empty = index.retrieve_top_k("?!", 10);
    EXPECT_TRUE(empty.empty_query);
    EXPECT_TRUE(empty.hits.empty());
    const auto one = index.retrieve_top_k("cat", 10);
    EXPECT_FALSE(one.empty_query);
    ASSERT_EQ(one.hits.size(), 1u);
    EXPECT_EQ(one.hits[0].doc_id, "d1");
    EXPECT_THROW(index.retrieve_top_k("cat", 0), InputError);
}

TEST(Retrieve, TiesBreakOnDocId) {
    const auto index = InvertedIndex::build({make_doc("b", SourceTag::kPre, "same words"),
                                             make_doc("a", SourceTag::kPre, "same words"),
                                             make_doc("c", SourceTag::kPre, "other")});
    const auto hits = index.retrieve_top_k("same", 10).hits;
    ASSERT_EQ(hits.size(), 2u);
    EXPECT_EQ(hits[0].doc_id, "a");
    EXPECT_EQ(hits[1].doc_id, "b");
    EXPECT_EQ(hits[0].score, hits[1].score);
}

TEST(Retrieve, MoreOccurrencesScoreHigher) {
    // same length, tf 1 vs 2
    const auto index = InvertedIndex::build({make_doc("one", SourceTag::kPre, "fox a b c"),
                                             make_doc("two", SourceTag::kPre, "fox fox b c"),
                                             make_doc("none", SourceTag::kPre, "d e f g")});
    EXPECT_GT(index.bm25_field_score("text", {"fox"}, "two"), index.bm25_field_score("text", {"fox"}, "one"));
}

TEST(RetrieveSets, InstructionDocumentLandsInF) {
    std::vector<Document> docs;
    for (int i = 0; i < 8; ++i)
        docs.push_back(make_doc("u" + std::to_string(i), SourceTag::kPost, "rivers and mountains " + std::to_string(i)));
    Document instr;
    instr.doc_id = "instr";
    instr.source = SourceTag::kPost;
    instr.fields = {{"question", std::string(kConfidencePrompt)}, {"answer", "0.8"}};
    docs.push_back(instr);
    docs.push_back(make_doc("paris", SourceTag::kPost, "Paris is the capital of France"));
    const auto index = InvertedIndex::build(docs);
    CompletionRecord rec{"What is the capital of France?", "Paris", std::string(kConfidencePrompt), "0.9"};
    const auto sets = retrieve_sets(index, rec, 3);
    ASSERT_FALSE(sets.confidence.hits.empty());
    EXPECT_EQ(sets.confidence.hits[0].doc_id, "instr");
    ASSERT_FALSE(sets.content.hits.empty());
    EXPECT_EQ(sets.content.hits[0].doc_id, "paris");
}

TEST(IndexArtifact, RoundTripsAndRejectsOtherVersions) {
    tracvc::testing::TempDir dir("index");
    const auto docs = checks::random_corpus(5, 120);
    const auto index = InvertedIndex::build(docs, {1.5, 0.5});
    index.save(dir.file("i.bin"));
    const auto back = InvertedIndex::load(dir.file("i.bin"));
    EXPECT_EQ(back.serialize(), index.serialize());
    EXPECT_EQ(back.params().k1, 1.5);
    const auto a = index.retrieve_top_k("river city", 10).hits;
    const auto b = back.retrieve_top_k("river city", 10).hits;
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i].score, b[i].score);

    auto bytes = index.serialize();
    bytes[8] = static_cast<char>(bytes[8] + 1);  // version field follows the 8-byte magic
    EXPECT_THROW(InvertedIndex::deserialize(bytes), InputError);
    EXPECT_THROW(InvertedIndex::deserialize(bytes.substr(0, bytes.size() / 2)), InputError);
    EXPECT_THROW(InvertedIndex::deserialize("not an index"), InputError);
}
