#include "tracvc/checks.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "tracvc/metrics.hpp"

namespace tracvc::checks {

namespace {

const std::string* field_text(const Document& d, const std::string& field) {
    for (const auto& [name, text] : d.fields)
        if (name == field) return &text;
    return nullptr;
}

}  // namespace

double bm25_bruteforce(const std::vector<Document>& docs, const Bm25Params& params, const std::string& field,
                       const std::vector<std::string>& query_terms, const std::string& doc_id) {
    const double n = static_cast<double>(docs.size());
    double total_len = 0.0;
    double with_field = 0.0;
    for (const auto& d : docs)
        if (const auto* t = field_text(d, field)) {
            total_len += static_cast<double>(tokenize(*t).size());
            with_field += 1.0;
        }
    const auto target = std::find_if(docs.begin(), docs.end(), [&](const Document& d) { return d.doc_id == doc_id; });
    if (target == docs.end()) throw InputError("bruteforce: unknown doc");
    const auto* text = field_text(*target, field);
    if (text == nullptr) return 0.0;
    const auto tokens = tokenize(*text);
    const double dl = static_cast<double>(tokens.size());
    const double avgdl = total_len / with_field;

    double score = 0.0;
    for (const auto& term : std::set<std::string>(query_terms.begin(), query_terms.end())) {
        const double tf = static_cast<double>(std::count(tokens.begin(), tokens.end(), term));
        if (tf == 0.0) continue;
        double df = 0.0;
        for (const auto& d : docs) {
            const auto* t = field_text(d, field);
            if (t == nullptr) continue;
            const auto toks = tokenize(*t);
            if (std::find(toks.begin(), toks.end(), term) != toks.end()) df += 1.0;
        }
        const double idf = std::log(1.0 + (n - df + 0.5) / (df + 0.5));
        score += idf * tf * (params.k1 + 1.0) / (tf + params.k1 * (1.0 - params.b + params.b * dl / avgdl));
    }
    return score;
}

std::vector<RetrievalResult> retrieve_bruteforce(const std::vector<Document>& docs, const Bm25Params& params,
                                                 const std::string& query_text, std::size_t k) {
    const auto raw_terms = tokenize(query_text);
    const std::set<std::string> terms(raw_terms.begin(), raw_terms.end());
    std::set<std::string> field_names;
    for (const auto& d : docs)
        for (const auto& [name, text] : d.fields) field_names.insert(name);

    // Tokenize once; statistics are then recounted by scanning every document.
    std::vector<std::map<std::string, std::vector<std::string>>> toks(docs.size());
    for (std::size_t i = 0; i < docs.size(); ++i)
        for (const auto& [name, text] : docs[i].fields) toks[i][name] = tokenize(text);

    const double n = static_cast<double>(docs.size());
    std::vector<RetrievalResult> all(docs.size());
    for (std::size_t i = 0; i < docs.size(); ++i) all[i].doc_id = docs[i].doc_id;
    for (const auto& f : field_names) {
        double total_len = 0.0, with_field = 0.0;
        for (const auto& t : toks)
            if (auto it = t.find(f); it != t.end()) {
                total_len += static_cast<double>(it->second.size());
                with_field += 1.0;
            }
        const double avgdl = total_len / with_field;
        std::map<std::string, double> idf;
        for (const auto& term : terms) {
            double df = 0.0;
            for (const auto& t : toks)
                if (auto it = t.find(f); it != t.end())
                    if (std::find(it->second.begin(), it->second.end(), term) != it->second.end()) df += 1.0;
            idf[term] = std::log(1.0 + (n - df + 0.5) / (df + 0.5));
        }
        for (std::size_t i = 0; i < docs.size(); ++i) {
            auto it = toks[i].find(f);
            if (it == toks[i].end()) continue;
            const double dl = static_cast<double>(it->second.size());
            double score = 0.0;
            for (const auto& term : terms) {
                const double tf = static_cast<double>(std::count(it->second.begin(), it->second.end(), term));
                if (tf == 0.0) continue;
                score += idf[term] * tf * (params.k1 + 1.0) /
                         (tf + params.k1 * (1.0 - params.b + params.b * dl / avgdl));
            }
            // field_names is ordered, so a strict > keeps the smallest name on ties
            if (score > all[i].score) {
                all[i].score = score;
                all[i].matched_field = f;
            }
        }
    }
    std::erase_if(all, [](const RetrievalResult& r) { return !(r.score > 0.0); });
    std::sort(all.begin(), all.end(), [](const RetrievalResult& a, const RetrievalResult& b) {
        return a.score != b.score ? a.score > b.score : a.doc_id < b.doc_id;
    });
    if (all.size() > k) all.resize(k);
    for (std::size_t i = 0; i < all.size(); ++i) all[i].rank = static_cast<int>(i + 1);
    return all;
}

GradCheck finite_difference_check(const ModelParams& params, const TokenSequence& seq, std::size_t entries,
                                  double step, std::uint64_t seed, double floor) {
    const auto analytic = grad_embeddings(params, seq);
    GradCheck out;
    if (analytic.ids().empty()) return out;
    Rng rng(seed);
    ModelParams probe = params;
    const std::size_t d = params.shape.dim;
    for (std::size_t e = 0; e < entries; ++e) {
        const auto slot = static_cast<std::size_t>(rng.below(analytic.ids().size()));
        const auto col = static_cast<std::size_t>(rng.below(d));
        const auto row = analytic.ids()[slot];
        const auto cell = std::size_t{row} * d + col;
        const double saved = probe.embeddings[cell];
        probe.embeddings[cell] = saved + step;
        const double up = forward_loss(probe, seq);
        probe.embeddings[cell] = saved - step;
        const double down = forward_loss(probe, seq);
        probe.embeddings[cell] = saved;
        const double numeric = (up - down) / (2.0 * step);
        const double a = analytic.row_at(slot)[col];
        const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), floor});
        out.max_rel_error = std::max(out.max_rel_error, rel);
        ++out.entries;
    }
    return out;
}

RandomCase random_case(std::uint64_t seed, std::uint32_t max_vocab, std::uint32_t max_dim, std::uint32_t max_hidden,
                       std::uint32_t max_window) {
    Rng rng(seed);
    ModelShape shape;
    shape.vocab = static_cast<std::uint32_t>(Vocabulary::kReserved + 2 + rng.below(max_vocab - Vocabulary::kReserved - 1));
    shape.dim = static_cast<std::uint32_t>(1 + rng.below(max_dim));
    shape.hidden = static_cast<std::uint32_t>(1 + rng.below(max_hidden));
    shape.window = static_cast<std::uint32_t>(1 + rng.below(max_window));
    RandomCase c{ModelParams::init(shape, rng.next_u64()), {}};
    // Larger weights than the init range so tanh leaves its linear regime.
    for (auto* block : {&c.params.w1, &c.params.w2})
        for (auto& w : *block) w *= 8.0;
    for (auto& e : c.params.embeddings) e *= 4.0;
    const auto len = 2 + rng.below(10);
    c.seq.ids.push_back(Vocabulary::kBos);
    for (std::uint64_t i = 1; i < len; ++i) c.seq.ids.push_back(static_cast<TokenId>(rng.below(shape.vocab)));
    return c;
}

std::vector<Document> random_corpus(std::uint64_t seed, std::size_t n_docs) {
    static const std::vector<std::string> kWords = {
        "the", "of", "and", "probability", "answer", "correct", "river", "capital", "city", "paris",
        "energy", "atom", "planet", "king", "war", "year", "river", "ocean", "music", "novel",
        "author", "0", "5", "9", "confidence", "sure", "light", "speed", "gold", "iron"};
    static const std::vector<std::string> kFields = {"text", "question", "answer"};
    Rng rng(seed);
    std::vector<Document> docs;
    for (std::size_t i = 0; i < n_docs; ++i) {
        Document d;
        d.doc_id = "d" + std::to_string(1000 + i);
        d.source = rng.below(2) == 0 ? SourceTag::kPre : SourceTag::kPost;
        const auto nf = 1 + rng.below(3);
        for (std::uint64_t f = 0; f < nf; ++f) {
            std::string text;
            const auto len = 1 + rng.below(12);
            for (std::uint64_t w = 0; w < len; ++w) {
                // Squared uniform skews toward the front of the list.
                const double u = rng.uniform01();
                const auto idx = static_cast<std::size_t>(u * u * static_cast<double>(kWords.size()));
                if (!text.empty()) text += rng.below(4) == 0 ? ", " : " ";
                text += kWords[idx];
            }
            d.fields.emplace_back(kFields[f], text);
        }
        docs.push_back(std::move(d));
    }
    return docs;
}

std::vector<CheckResult> run_selftest(const std::optional<std::string>& checkpoint) {
    std::vector<CheckResult> out;
    auto guarded = [&](std::string name, auto&& fn) {
        CheckResult r;
        r.name = std::move(name);
        try {
            fn(r);
        } catch (const std::exception& e) {
            r.passed = false;
            r.detail = std::string("error: ") + e.what();
        }
        out.push_back(std::move(r));
    };

    guarded("gradient finite differences (20 random configs)", [](CheckResult& r) {
        double worst = 0.0;
        for (std::uint64_t s = 0; s < 20; ++s) {
            const auto c = random_case(1000 + s);
            worst = std::max(worst, finite_difference_check(c.params, c.seq, 20, 1e-4, s).max_rel_error);
        }
        r.passed = worst <= 1e-4;
        r.detail = "max relative error " + format_real(worst);
    });

    guarded("bm25 top-k vs exhaustive scoring", [](CheckResult& r) {
        double worst = 0.0;
        bool order_ok = true;
        for (std::uint64_t s = 0; s < 3; ++s) {
            const auto docs = random_corpus(77 + s, 120);
            const auto index = InvertedIndex::build(docs);
            for (const char* q : {"capital city of paris", "probability answer correct 0 9", "the river of iron"}) {
                const auto got = index.retrieve_top_k(q, 10).hits;
                const auto want = retrieve_bruteforce(docs, index.params(), q, 10);
                if (got.size() != want.size()) order_ok = false;
                for (std::size_t i = 0; i < std::min(got.size(), want.size()); ++i) {
                    if (got[i].doc_id != want[i].doc_id) order_ok = false;
                    worst = std::max(worst, std::abs(got[i].score - want[i].score));
                }
            }
        }
        r.passed = order_ok && worst <= 1e-9;
        r.detail = std::string(order_ok ? "order identical" : "order differs") + ", max score diff " +
                   format_real(worst);
    });

    guarded("ccr hand examples", [](CheckResult& r) {
        auto rec = [](SetTag set, double psi) {
            InfluenceRecord x;
            x.instance_id = "q";
            x.doc_id = "d" + format_real(psi);
            x.set = set;
            x.psi = psi;
            x.psi_neg_c = psi;
            return x;
        };
        const std::vector<InfluenceRecord> a = {rec(SetTag::kT, 0.3), rec(SetTag::kT, 0.1), rec(SetTag::kF, 0.2),
                                                rec(SetTag::kF, 0.0)};
        const std::vector<InfluenceRecord> b = {rec(SetTag::kT, 0.1), rec(SetTag::kT, 0.2), rec(SetTag::kF, 0.1),
                                                rec(SetTag::kF, 0.2)};
        const auto va = ccr(a, Aggregation::kPre, false);
        const auto vb = ccr(b, Aggregation::kPre, false);
        r.passed = va.counts.wins_t == 3 && va.counts.wins_f == 1 && va.ratio == 3.0 && vb.ratio == 1.0 &&
                   vb.counts.ties == 2;
        r.detail = "ccr " + format_real(va.ratio.value_or(-1)) + " and " + format_real(vb.ratio.value_or(-1));
    });

    if (checkpoint) {
        guarded("checkpoint " + *checkpoint, [&](CheckResult& r) {
            const auto model = Model::load(*checkpoint);
            auto seq = encode(std::string(kConfidencePrompt), model.vocab);
            const auto g = finite_difference_check(model.params, seq, 20, 1e-4, 5);
            r.passed = g.max_rel_error <= 1e-4;
            r.detail = "vocab " + std::to_string(model.vocab.size()) + ", max relative error " +
                       format_real(g.max_rel_error);
        });
    }
    return out;
}

}  // namespace tracvc::checks
