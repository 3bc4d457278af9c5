// Runs every acceptance criterion and prints one PASS/FAIL line each.
// Exit status is nonzero when any criterion fails.

#include <chrono>
#include <cmath>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include <json.hpp>

#include "test_util.hpp"
#include "tracvc/checks.hpp"
#include "tracvc/influence.hpp"
#include "tracvc/metrics.hpp"
#include "tracvc/pipeline.hpp"

using namespace tracvc;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = true;
    std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(double x) {
    std::ostringstream s;
    s.precision(3);
    s << x;
    return s.str();
}

std::string source_dir() { return TRACVC_SOURCE_DIR; }

// 1 -------------------------------------------------------------------------
Outcome gradient_correctness() {
    const auto t0 = Clock::now();
    double worst = 0.0;
    std::size_t configs = 0, entries = 0;
    for (std::uint64_t seed = 0; seed < 30; ++seed) {
        const auto c = checks::random_case(1000 + seed);
        const auto r = checks::finite_difference_check(c.params, c.seq, 20, 1e-4, seed);
        worst = std::max(worst, r.max_rel_error);
        entries += r.entries;
        ++configs;
    }
    const double secs = seconds_since(t0);
    Outcome o;
    o.pass = configs >= 20 && worst <= 1e-4 && secs < 10.0;
    o.detail = std::to_string(configs) + " configs, " + std::to_string(entries) + " entries, max relative error " +
               fmt(worst) + ", " + fmt(secs) + " s";
    return o;
}

// 2 -------------------------------------------------------------------------
Outcome bm25_oracle() {
    const auto t0 = Clock::now();
    static const std::vector<std::string> kQueryWords = {"the", "probability", "answer", "correct", "river",
                                                         "capital", "paris", "atom", "novel", "0",
                                                         "9", "confidence", "gold", "iron", "unseen"};
    std::size_t corpora = 0, queries = 0;
    double worst = 0.0;
    bool order_ok = true;
    for (std::size_t n : {200, 400, 600, 800, 1000}) {
        const auto docs = checks::random_corpus(77 + n, n);
        const auto index = InvertedIndex::build(docs);
        Rng rng(n);
        for (int q = 0; q < 20; ++q) {
            std::string query;
            const auto len = 1 + rng.below(5);
            for (std::uint64_t i = 0; i < len; ++i) query += kQueryWords[rng.below(kQueryWords.size())] + " ";
            const auto got = index.retrieve_top_k(query, 25).hits;
            const auto want = checks::retrieve_bruteforce(docs, index.params(), query, 25);
            if (got.size() != want.size()) order_ok = false;
            for (std::size_t i = 0; i < std::min(got.size(), want.size()); ++i) {
                if (got[i].doc_id != want[i].doc_id || got[i].rank != want[i].rank) order_ok = false;
                worst = std::max(worst, std::abs(got[i].score - want[i].score));
            }
            ++queries;
        }
        ++corpora;
    }
    const double secs = seconds_since(t0);
    return {order_ok && worst <= 1e-9 && secs < 30.0,
            std::to_string(corpora) + " corpora, " + std::to_string(queries) + " queries, order " +
                (order_ok ? "identical" : "DIFFERS") + ", max score diff " + fmt(worst) + ", " + fmt(secs) + " s"};
}

// 3 -------------------------------------------------------------------------
Outcome psi_contracts() {
    const auto pre = read_documents_jsonl(source_dir() + "/data/toy/pre.jsonl");
    const auto post = read_documents_jsonl(source_dir() + "/data/toy/post.jsonl");
    const auto tests = read_test_instances_jsonl(source_dir() + "/data/toy/test.jsonl");
    std::vector<Document> all = pre;
    all.insert(all.end(), post.begin(), post.end());
    TrainConfig cfg;
    cfg.epochs = 3;
    cfg.seed = 5;
    const auto model = train(all, cfg);

    Rng rng(99);
    const std::vector<std::string> confs = {"0.9", "0.75", "0.1", "1", "0.33"};
    std::size_t pairs = 0, out_of_range = 0;
    double scale_worst = 0.0;
    for (; pairs < 1000; ++pairs) {
        const auto& d = all[rng.below(all.size())];
        const auto& t = tests[rng.below(tests.size())];
        CompletionRecord rec{t.question, t.gold_answers.front(), std::string(kConfidencePrompt),
                             confs[rng.below(confs.size())]};
        const double a = psi(model, d, rec), b = psi_neg_c(model, d, rec);
        if (!(a >= -1.0 && a <= 1.0) || !(b >= -1.0 && b <= 1.0)) ++out_of_range;
        const auto gd = document_gradient(model, d);
        const auto gc = grad_embeddings(model.params, completion_sequence(rec, true, model.vocab));
        const double alpha = std::exp(rng.uniform(-7.0, 7.0));
        scale_worst = std::max(scale_worst, std::abs(cosine(gd.scaled(alpha), gc) - cosine(gd, gc)));
    }
    std::size_t identical_ok = 0;
    for (const auto& t : tests) {
        CompletionRecord rec{t.question, t.gold_answers.front(), std::string(kConfidencePrompt), "0.8"};
        const auto d = testing::make_doc("self", SourceTag::kPre, completion_text(rec, true));
        if (psi(model, d, rec) == 1.0) ++identical_ok;
    }
    return {out_of_range == 0 && scale_worst <= 1e-12 && identical_ok == tests.size(),
            std::to_string(pairs) + " pairs, " + std::to_string(out_of_range) + " outside [-1,1], scale drift " +
                fmt(scale_worst) + ", identical-text psi == 1 for " + std::to_string(identical_ok) + "/" +
                std::to_string(tests.size())};
}

// 4 -------------------------------------------------------------------------
Outcome ccr_contracts() {
    int n = 0;
    auto r = [&](std::string inst, SetTag s, double v) {
        return InfluenceRecord{std::move(inst), "d" + std::to_string(n++), s, SourceTag::kPre, 1, v, v};
    };
    std::vector<std::string> failures;
    const std::vector<InfluenceRecord> hand = {r("q", SetTag::kT, 0.3), r("q", SetTag::kT, 0.1),
                                               r("q", SetTag::kF, 0.2), r("q", SetTag::kF, 0.0)};
    const auto h = ccr(hand, Aggregation::kPre, false);
    if (!(h.counts == PairwiseWinCounts{3, 1, 0}) || h.ratio != 3.0) failures.push_back("hand example");
    const std::vector<InfluenceRecord> sym = {r("q", SetTag::kT, 0.4), r("q", SetTag::kT, 0.1),
                                              r("q", SetTag::kF, 0.3), r("q", SetTag::kF, 0.2)};
    if (ccr(sym, Aggregation::kPre, false).ratio != 1.0) failures.push_back("symmetric example");

    Rng rng(4);
    std::vector<InfluenceRecord> many;
    for (int i = 0; i < 40; ++i)
        for (auto set : {SetTag::kT, SetTag::kF})
            for (auto src : {SourceTag::kPre, SourceTag::kPost})
                for (int k = 0; k < 10; ++k)
                    many.push_back({"i" + std::to_string(i), "d" + std::to_string(n++), set, src, k + 1,
                                    std::round(rng.uniform(-1.0, 1.0) * 50.0) / 50.0, rng.uniform(-1.0, 1.0)});
    auto swapped = many;
    for (auto& x : swapped) x.set = x.set == SetTag::kT ? SetTag::kF : SetTag::kT;
    auto transformed = many;
    for (auto& x : transformed) {
        x.psi = std::exp(5.0 * x.psi);
        x.psi_neg_c = x.psi_neg_c * x.psi_neg_c * x.psi_neg_c + 2.0 * x.psi_neg_c;
    }
    for (auto agg : kAllAggregations)
        for (auto v : {ScoreVariant::kPsi, ScoreVariant::kPsiNegC}) {
            const auto a = count_wins(many, agg, v);
            const auto b = count_wins(swapped, agg, v);
            if (a.wins_t != b.wins_f || a.wins_f != b.wins_t || a.ties != b.ties) failures.push_back("swap counts");
            const auto ra = CcrValue::from_counts(a).ratio, rb = CcrValue::from_counts(b).ratio;
            if (!ra || !rb || *ra != static_cast<double>(a.wins_t) / static_cast<double>(a.wins_f) ||
                *rb != static_cast<double>(a.wins_f) / static_cast<double>(a.wins_t))
                failures.push_back("swap reciprocal");
            if (!(count_wins(transformed, agg, v) == a)) failures.push_back("monotone transform");
        }
    std::string detail = "hand ccr " + fmt(h.ratio.value_or(-1)) + ", symmetric, swap and transform checks over " +
                         std::to_string(many.size()) + " records";
    if (!failures.empty()) detail += "; failed: " + failures.front();
    return {failures.empty(), detail};
}

// 5 -------------------------------------------------------------------------
Outcome memorization() {
    const auto t0 = Clock::now();
    const std::vector<std::vector<std::string>> texts = {
        {"alpha bravo charlie delta", "echo foxtrot golf"},
        {"hotel india juliet kilo", "lima mike november"},
        {"oscar papa quebec romeo", "sierra tango uniform"},
        {"victor whiskey xray yankee", "zulu amber basil"},
        {"cedar dune ember fjord", "grove harbor island"}};
    std::vector<Document> docs;
    for (std::size_t i = 0; i < texts.size(); ++i)
        docs.push_back(testing::make_doc("m" + std::to_string(i), SourceTag::kPre, texts[i][0] + " " + texts[i][1]));
    int wins = 0;
    std::string margins;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        TrainConfig cfg;
        cfg.epochs = 500;
        cfg.seed = seed;
        const auto model = train(docs, cfg);
        const auto star = static_cast<std::size_t>(seed - 1);
        CompletionRecord rec{texts[star][0], texts[star][1], std::string(kConfidencePrompt), "0.9"};
        const double own = psi(model, docs[star], rec);
        double best_other = -2.0;
        for (std::size_t j = 0; j < docs.size(); ++j)
            if (j != star) best_other = std::max(best_other, psi(model, docs[j], rec));
        if (own > best_other) ++wins;
        margins += (margins.empty() ? "" : " ") + fmt(own - best_other);
    }
    const double secs = seconds_since(t0);
    return {wins >= 4 && secs < 60.0,
            std::to_string(wins) + "/5 seeds, psi(d*) - max psi(other): " + margins + ", " + fmt(secs) + " s"};
}

// 6 -------------------------------------------------------------------------
std::map<std::string, std::string> read_dir(const fs::path& dir) {
    std::map<std::string, std::string> out;
    for (const auto& e : fs::directory_iterator(dir)) out[e.path().filename().string()] = read_file(e.path().string());
    return out;
}

double csv_kde_worst(const std::string& kde_csv, std::size_t& curves) {
    // curve,status,bandwidth,x,density
    std::map<std::string, std::vector<std::pair<double, double>>> pts;
    std::istringstream in(kde_csv);
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line)) {
        std::vector<std::string> cols;
        std::stringstream ss(line);
        for (std::string c; std::getline(ss, c, ',');) cols.push_back(c);
        if (cols.size() < 5 || cols[1] != "ok") continue;
        pts[cols[0]].emplace_back(std::stod(cols[3]), std::stod(cols[4]));
    }
    double worst = 0.0;
    for (const auto& [name, p] : pts) {
        double area = 0.0;
        for (std::size_t i = 1; i < p.size(); ++i) area += 0.5 * (p[i].second + p[i - 1].second) * (p[i].first - p[i - 1].first);
        worst = std::max(worst, std::abs(area - 1.0));
    }
    curves = pts.size();
    return worst;
}

Outcome golden_run() {
    const fs::path golden = source_dir() + "/tests/golden/toy";
    if (!fs::is_directory(golden)) return {false, "missing " + golden.string()};
    const auto want = read_dir(golden);
    testing::TempDir dir("golden");
    std::vector<std::string> problems;
    double slowest = 0.0;
    for (const auto& [name, jobs] : std::vector<std::pair<std::string, std::string>>{{"j1", "1"}, {"j4", "4"}, {"j1b", "1"}}) {
        auto cfg = RunConfig::load(source_dir() + "/data/toy/toy.cfg");
        cfg.set("jobs", jobs);
        cfg.set("out_dir", dir.file(name));
        const auto t0 = Clock::now();
        run_trace(cfg);
        slowest = std::max(slowest, seconds_since(t0));
        const auto got = read_dir(dir.path() / name);
        if (got.size() != want.size()) problems.push_back(name + ": file set differs");
        for (const auto& [file, bytes] : want) {
            auto it = got.find(file);
            if (it == got.end() || it->second != bytes) problems.push_back(name + ": " + file + " differs");
        }
    }
    const auto summary = nlohmann::json::parse(want.at("summary.json"));
    double total = 0.0;
    for (const auto& [k, v] : summary.at("most_influential_source").items()) total += v.get<double>();
    if (std::abs(total - 1.0) > 1e-12) problems.push_back("source proportions sum to " + fmt(total));
    if (summary.at("ccr_all_datasets").size() != 3) problems.push_back("ccr grid lacks a row");
    for (const auto& row : summary.at("ccr_all_datasets"))
        if (!row.contains("ccr") || !row.contains("ccr_neg_c")) problems.push_back("ccr grid lacks a cell");
    for (const auto* f : {"influence.jsonl", "ccr_table.csv", "sources.csv", "sample_stats.csv", "correlations.csv", "kde.csv"})
        if (!want.count(f) || want.at(f).empty()) problems.push_back(std::string("golden lacks ") + f);
    if (slowest >= 60.0) problems.push_back("slow run");
    std::string detail = "3 runs (jobs 1, 4, 1) vs " + std::to_string(want.size()) + " golden files, slowest " +
                         fmt(slowest) + " s, proportions sum " + fmt(total);
    if (!problems.empty()) detail += "; " + problems.front() + (problems.size() > 1 ? " (+" + std::to_string(problems.size() - 1) + " more)" : "");
    return {problems.empty(), detail};
}

// 7 -------------------------------------------------------------------------
Outcome statistics() {
    std::vector<double> x;
    Rng rng(8);
    for (int i = 0; i < 50; ++i) x.push_back(rng.uniform01());
    const auto pr = pearson(x, x, 10000, 3);
    const bool pearson_ok = pr.r == 1.0 && pr.p_value == 1.0 / 10001.0;
    const double p_same = mean_diff_significance(x, x, 10000, 3);

    std::size_t curves = 0;
    double worst = 0.0;
    const auto golden_kde = source_dir() + "/tests/golden/toy/kde.csv";
    if (fs::exists(golden_kde)) worst = csv_kde_worst(read_file(golden_kde), curves);
    for (int s = 0; s < 20; ++s) {
        std::vector<double> v(5 + s * 7);
        for (auto& e : v) e = std::pow(rng.uniform01(), 1.0 + s * 0.2) * (s % 2 ? -1.0 : 1.0);
        worst = std::max(worst, std::abs(trapezoid_integral(kde(v)) - 1.0));
        ++curves;
    }
    return {pearson_ok && p_same == 1.0 && worst <= 1e-2 && curves > 20,
            "pearson(x,x) r=" + fmt(pr.r) + " p=" + fmt(pr.p_value) + ", identical groups p=" + fmt(p_same) + ", " +
                std::to_string(curves) + " KDE curves, worst |integral-1| " + fmt(worst)};
}

// 8 -------------------------------------------------------------------------
Outcome templates() {
    const bool a = kAnswerTemplate == "Answer the question, give ONLY the answer, no other words or explanation: <q>";
    const bool p = kConfidencePrompt ==
                   "Provide the probability that your answer is correct. Give ONLY the probability between 0.0 and "
                   "1.0, no other words or explanation";
    const bool c1 = parse_confidence("0.9") == 0.9;
    const bool c2 = parse_confidence("The probability is 0.75.") == 0.75;
    const bool c3 = !parse_confidence("very confident").has_value();
    return {a && p && c1 && c2 && c3, std::string("answer template ") + (a ? "ok" : "DIFFERS") + ", confidence prompt " +
                                          (p ? "ok" : "DIFFERS") + ", parse classes " + (c1 && c2 && c3 ? "ok" : "FAIL")};
}

}  // namespace

int main() {
    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
        {"gradient correctness", gradient_correctness},
        {"BM25 oracle equivalence", bm25_oracle},
        {"influence score contracts", psi_contracts},
        {"ccr contracts", ccr_contracts},
        {"memorization influence", memorization},
        {"end-to-end golden run", golden_run},
        {"statistics contracts", statistics},
        {"template fidelity", templates},
    };
    int failed = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        Outcome o;
        try {
            o = criteria[i].second();
        } catch (const std::exception& e) {
            o = {false, std::string("threw: ") + e.what()};
        }
        if (!o.pass) ++failed;
        std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << (i + 1) << " (" << criteria[i].first
                  << "): " << o.detail << std::endl;
    }
    std::cout << (criteria.size() - failed) << "/" << criteria.size() << " criteria passed" << std::endl;
    return failed == 0 ? 0 : 1;
}
