#include "tracvc/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <charconv>
#include <exception>
#include <filesystem>
#include <set>
#include <sstream>
#include <thread>

#include <json.hpp>

namespace tracvc {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

namespace {

bool blank(std::string_view s) { return s.find_first_not_of(" \t\r\n") == std::string_view::npos; }

template <typename Fn>
void for_each_line(std::string_view contents, Fn&& fn) {
    std::size_t line_no = 0, start = 0;
    while (start < contents.size()) {
        auto end = contents.find('\n', start);
        if (end == std::string_view::npos) end = contents.size();
        const auto line = contents.substr(start, end - start);
        start = end + 1;
        ++line_no;
        if (!blank(line)) fn(line, line_no);
    }
}

std::uint64_t parse_uint(std::string_view key, std::string_view v) {
    std::uint64_t out = 0;
    auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc{} || p != v.data() + v.size())
        throw InputError("setting '" + std::string(key) + "': expected a non-negative integer, got '" +
                         std::string(v) + "'");
    return out;
}

double parse_double(std::string_view key, std::string_view v) {
    double out = 0.0;
    auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc{} || p != v.data() + v.size())
        throw InputError("setting '" + std::string(key) + "': expected a number, got '" + std::string(v) + "'");
    return out;
}

std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return std::string(s.substr(b, e - b + 1));
}

bool is_digit(char c) { return c >= '0' && c <= '9'; }

}  // namespace

std::vector<TestInstance> parse_test_instances_jsonl(std::string_view contents, std::string_view origin) {
    std::vector<TestInstance> out;
    for_each_line(contents, [&](std::string_view line, std::size_t line_no) {
        auto fail = [&](const std::string& msg) {
            return InputError(std::string(origin) + ":" + std::to_string(line_no) + ": " + msg);
        };
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::parse_error& e) {
            throw fail(std::string("malformed JSON: ") + e.what());
        }
        if (!j.is_object()) throw fail("expected an object");
        TestInstance t;
        try {
            t.instance_id = j.at("id").get<std::string>();
            t.question = j.at("question").get<std::string>();
            if (j.contains("gold")) t.gold_answers = j.at("gold").get<std::vector<std::string>>();
            if (j.contains("answer") && !j["answer"].is_null()) t.answer = j["answer"].get<std::string>();
            if (j.contains("confidence") && !j["confidence"].is_null()) {
                const auto& c = j["confidence"];
                t.confidence_raw = c.is_string() ? c.get<std::string>() : c.dump();
            }
            if (j.contains("dataset")) t.dataset = j["dataset"].get<std::string>();
        } catch (const nlohmann::json::exception& e) {
            throw fail(e.what());
        }
        if (t.instance_id.empty()) throw fail("empty \"id\"");
        if (blank(t.question)) throw fail("empty \"question\"");
        if (t.answer && blank(*t.answer)) throw fail("empty \"answer\"");
        if (t.dataset.empty()) throw fail("empty \"dataset\"");
        out.push_back(std::move(t));
    });
    std::set<std::string_view> seen;
    for (const auto& t : out)
        if (!seen.insert(t.instance_id).second) throw InputError(std::string(origin) + ": duplicate id '" + t.instance_id + "'");
    return out;
}

std::vector<TestInstance> read_test_instances_jsonl(const std::string& path) {
    return parse_test_instances_jsonl(read_file(path), path);
}

std::optional<double> parse_confidence(std::string_view raw) {
    std::size_t i = 0;
    while (i < raw.size() && !is_digit(raw[i])) ++i;
    if (i == raw.size()) return std::nullopt;
    std::size_t end = i;
    while (end < raw.size() && is_digit(raw[end])) ++end;
    if (end + 1 < raw.size() && raw[end] == '.' && is_digit(raw[end + 1])) {
        end += 1;
        while (end < raw.size() && is_digit(raw[end])) ++end;
    }
    double value = 0.0;
    auto [p, ec] = std::from_chars(raw.data() + i, raw.data() + end, value);
    if (ec != std::errc{} || p != raw.data() + end) return std::nullopt;
    if (value < 0.0 || value > 1.0) return std::nullopt;
    return value;
}

std::string normalize_answer(std::string_view text) {
    std::string cleaned;
    cleaned.reserve(text.size());
    for (char ch : text) {
        const auto c = static_cast<unsigned char>(ch);
        if (std::ispunct(c)) continue;
        cleaned.push_back(std::isspace(c) ? ' ' : static_cast<char>(std::tolower(c)));
    }
    std::istringstream words(cleaned);
    std::string out;
    for (std::string w; words >> w;) {
        if (w == "a" || w == "an" || w == "the") continue;
        if (!out.empty()) out += ' ';
        out += w;
    }
    return out;
}

bool evaluate_correctness(std::string_view answer, std::span<const std::string> gold_answers) {
    if (gold_answers.empty()) throw InputError("evaluate_correctness: empty gold answer set");
    const auto a = normalize_answer(answer);
    const auto padded = " " + a + " ";
    for (const auto& g : gold_answers) {
        const auto ng = normalize_answer(g);
        if (ng == a) return true;
        if (!ng.empty() && padded.find(" " + ng + " ") != std::string::npos) return true;
    }
    return false;
}

std::string render_generated_confidence(std::string_view generated) {
    std::vector<std::string> toks;
    std::istringstream in{std::string(generated)};
    for (std::string t; in >> t;) toks.push_back(t);
    auto numeric = [](const std::string& t) { return !t.empty() && std::all_of(t.begin(), t.end(), is_digit); };
    std::string out;
    bool joined = false;
    for (std::size_t i = 0; i < toks.size(); ++i) {
        if (!out.empty()) out += ' ';
        if (!joined && i + 1 < toks.size() && numeric(toks[i]) && numeric(toks[i + 1])) {
            out += toks[i] + "." + toks[i + 1];
            ++i;
            joined = true;
        } else {
            out += toks[i];
        }
    }
    return out;
}

void finalize_instance(TestInstance& t) {
    t.confidence_value.reset();
    if (t.answer && t.confidence_raw) t.confidence_value = parse_confidence(*t.confidence_raw);
    t.correct.reset();
    if (!t.gold_answers.empty() && t.answer) t.correct = evaluate_correctness(*t.answer, t.gold_answers);
    else if (!t.gold_answers.empty()) t.correct = false;
}

TestInstance generate_answer_and_confidence(const Model& model, TestInstance t) {
    if (!t.answer) {
        auto a = generate_greedy(model, build_answer_prompt(t.question), kMaxAnswerTokens);
        t.answer_generated = true;
        if (!blank(a)) t.answer = std::move(a);
    }
    if (!t.confidence_raw && t.answer) {
        t.confidence_raw = render_generated_confidence(
            generate_greedy(model, build_confidence_context(t.question, *t.answer), kMaxConfidenceTokens));
        t.confidence_generated = true;
    }
    finalize_instance(t);
    return t;
}

// ---------------------------------------------------------------- RunConfig

const std::vector<std::pair<std::string, std::string>>& RunConfig::key_help() {
    static const std::vector<std::pair<std::string, std::string>> kKeys = {
        {"pre_corpus", "pre-training corpus (JSON-Lines documents)"},
        {"post_corpus", "post-training corpus (JSON-Lines documents)"},
        {"test_set", "test instances (JSON-Lines)"},
        {"checkpoint", "model checkpoint; empty trains one from both corpora"},
        {"train_epochs", "SGD epochs when training"},
        {"train_learning_rate", "SGD learning rate"},
        {"train_seed", "training seed (required when training)"},
        {"model_dim", "embedding width"},
        {"model_hidden", "hidden layer width"},
        {"model_window", "context window in tokens"},
        {"k", "documents retrieved per set and source"},
        {"aggregations", "comma-separated subset of pre,post,pre+post"},
        {"permutations", "permutations per significance test"},
        {"stats_seed", "seed for permutation tests"},
        {"jobs", "worker threads for instance scoring"},
        {"kde_grid", "grid points per density curve"},
        {"exclude_overlap", "drop documents found in both T and F from the analyses (true|false)"},
        {"bm25_k1", "BM25 term saturation"},
        {"bm25_b", "BM25 length normalization"},
        {"out_dir", "run output directory"},
    };
    return kKeys;
}

std::vector<std::pair<std::string, std::string>> RunConfig::to_pairs() const {
    std::string aggs;
    for (auto a : aggregations) {
        if (!aggs.empty()) aggs += ',';
        aggs += to_string(a);
    }
    return {
        {"pre_corpus", pre_corpus},
        {"post_corpus", post_corpus},
        {"test_set", test_set},
        {"checkpoint", checkpoint},
        {"train_epochs", std::to_string(train.epochs)},
        {"train_learning_rate", format_real(train.learning_rate)},
        {"train_seed", train_seed_set ? std::to_string(train.seed) : std::string()},
        {"model_dim", std::to_string(train.dim)},
        {"model_hidden", std::to_string(train.hidden)},
        {"model_window", std::to_string(train.window)},
        {"k", std::to_string(k)},
        {"aggregations", aggs},
        {"permutations", std::to_string(permutations)},
        {"stats_seed", std::to_string(stats_seed)},
        {"jobs", std::to_string(jobs)},
        {"kde_grid", std::to_string(kde_grid)},
        {"exclude_overlap", exclude_overlap ? "true" : "false"},
        {"bm25_k1", format_real(bm25.k1)},
        {"bm25_b", format_real(bm25.b)},
        {"out_dir", out_dir},
    };
}

void RunConfig::set(std::string_view key, std::string_view raw) {
    const auto v = trim(raw);
    auto u32 = [&](std::uint32_t& dst) {
        const auto x = parse_uint(key, v);
        if (x > 0xffffffffULL) throw InputError("setting '" + std::string(key) + "' out of range");
        dst = static_cast<std::uint32_t>(x);
    };
    if (key == "pre_corpus") pre_corpus = v;
    else if (key == "post_corpus") post_corpus = v;
    else if (key == "test_set") test_set = v;
    else if (key == "checkpoint") checkpoint = v;
    else if (key == "train_epochs") u32(train.epochs);
    else if (key == "train_learning_rate") train.learning_rate = parse_double(key, v);
    else if (key == "train_seed") {
        train_seed_set = !v.empty();
        if (train_seed_set) train.seed = parse_uint(key, v);
    } else if (key == "model_dim") u32(train.dim);
    else if (key == "model_hidden") u32(train.hidden);
    else if (key == "model_window") u32(train.window);
    else if (key == "k") k = parse_uint(key, v);
    else if (key == "aggregations") {
        aggregations.clear();
        std::stringstream ss(v);
        for (std::string part; std::getline(ss, part, ',');) {
            const auto a = parse_aggregation(trim(part));
            if (std::find(aggregations.begin(), aggregations.end(), a) == aggregations.end())
                aggregations.push_back(a);
        }
    } else if (key == "permutations") permutations = parse_uint(key, v);
    else if (key == "stats_seed") stats_seed = parse_uint(key, v);
    else if (key == "jobs") jobs = parse_uint(key, v);
    else if (key == "kde_grid") kde_grid = parse_uint(key, v);
    else if (key == "exclude_overlap") {
        if (v != "true" && v != "false") throw InputError("setting 'exclude_overlap': expected true or false");
        exclude_overlap = v == "true";
    }
    else if (key == "bm25_k1") bm25.k1 = parse_double(key, v);
    else if (key == "bm25_b") bm25.b = parse_double(key, v);
    else if (key == "out_dir") out_dir = v;
    else throw InputError("unknown setting '" + std::string(key) + "'");
}

std::string RunConfig::resolve(const std::string& path) const {
    if (path.empty() || base_dir.empty() || fs::path(path).is_absolute()) return path;
    return (fs::path(base_dir) / path).lexically_normal().string();
}

void RunConfig::validate() const {
    if (k == 0) throw InputError("k must be >= 1");
    if (aggregations.empty()) throw InputError("aggregations must not be empty");
    if (jobs == 0) throw InputError("jobs must be >= 1");
    if (kde_grid < 2) throw InputError("kde_grid must be >= 2");
    if (!(bm25.k1 >= 0.0) || !(bm25.b >= 0.0 && bm25.b <= 1.0)) throw InputError("bm25 parameters out of range");
    if (out_dir.empty()) throw InputError("out_dir is required");
    auto readable = [&](std::string_view key, const std::string& p) {
        if (p.empty()) throw InputError(std::string(key) + " is required");
        if (!fs::is_regular_file(resolve(p))) throw InputError(std::string(key) + ": cannot read '" + resolve(p) + "'");
    };
    readable("pre_corpus", pre_corpus);
    readable("post_corpus", post_corpus);
    readable("test_set", test_set);
    if (!checkpoint.empty()) {
        readable("checkpoint", checkpoint);
    } else {
        if (!train_seed_set) throw InputError("train_seed is required when no checkpoint is given");
        if (train.epochs == 0 || train.dim == 0 || train.hidden == 0 || train.window == 0)
            throw InputError("training settings must be positive");
        if (!(train.learning_rate > 0.0)) throw InputError("train_learning_rate must be positive");
    }
}

std::string RunConfig::canonical_text() const {
    std::string out;
    for (const auto& [key, value] : to_pairs()) {
        if (key == "jobs" || key == "out_dir") continue;
        out += key + "=" + value + "\n";
    }
    return out;
}

RunConfig RunConfig::parse(std::string_view text, std::string_view origin) {
    RunConfig cfg;
    std::set<std::string> seen;
    std::size_t line_no = 0, start = 0;
    while (start <= text.size()) {
        auto end = text.find('\n', start);
        if (end == std::string_view::npos) end = text.size();
        auto line = trim(text.substr(start, end - start));
        start = end + 1;
        ++line_no;
        if (line.empty() || line[0] == '#') continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw InputError(std::string(origin) + ":" + std::to_string(line_no) + ": expected key=value");
        const auto key = trim(std::string_view(line).substr(0, eq));
        if (!seen.insert(key).second)
            throw InputError(std::string(origin) + ":" + std::to_string(line_no) + ": repeated key '" + key + "'");
        try {
            cfg.set(key, std::string_view(line).substr(eq + 1));
        } catch (const InputError& e) {
            throw InputError(std::string(origin) + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }
    return cfg;
}

RunConfig RunConfig::load(const std::string& path) {
    auto cfg = parse(read_file(path), path);
    cfg.base_dir = fs::absolute(fs::path(path)).parent_path().string();
    return cfg;
}

// --------------------------------------------------------------- instances

std::string instances_to_jsonl(std::span<const TestInstance> instances) {
    std::string out;
    for (const auto& t : instances) {
        ojson j;
        j["id"] = t.instance_id;
        j["dataset"] = t.dataset;
        j["question"] = t.question;
        j["gold"] = t.gold_answers;
        j["answer"] = t.answer ? ojson(*t.answer) : ojson(nullptr);
        j["confidence_raw"] = t.confidence_raw ? ojson(*t.confidence_raw) : ojson(nullptr);
        j["confidence"] = t.confidence_value ? ojson(*t.confidence_value) : ojson(nullptr);
        j["correct"] = t.correct ? ojson(*t.correct) : ojson(nullptr);
        j["answer_generated"] = t.answer_generated;
        j["confidence_generated"] = t.confidence_generated;
        j["status"] = t.scorable() ? "scored" : "unparsed";
        out += j.dump() + "\n";
    }
    return out;
}

std::vector<TestInstance> instances_from_jsonl(std::string_view contents, std::string_view origin) {
    std::vector<TestInstance> out;
    for_each_line(contents, [&](std::string_view line, std::size_t line_no) {
        try {
            const auto j = nlohmann::json::parse(line);
            TestInstance t;
            t.instance_id = j.at("id").get<std::string>();
            t.dataset = j.at("dataset").get<std::string>();
            t.question = j.at("question").get<std::string>();
            t.gold_answers = j.at("gold").get<std::vector<std::string>>();
            if (!j.at("answer").is_null()) t.answer = j["answer"].get<std::string>();
            if (!j.at("confidence_raw").is_null()) t.confidence_raw = j["confidence_raw"].get<std::string>();
            if (!j.at("confidence").is_null()) t.confidence_value = j["confidence"].get<double>();
            if (!j.at("correct").is_null()) t.correct = j["correct"].get<bool>();
            t.answer_generated = j.at("answer_generated").get<bool>();
            t.confidence_generated = j.at("confidence_generated").get<bool>();
            out.push_back(std::move(t));
        } catch (const nlohmann::json::exception& e) {
            throw InputError(std::string(origin) + ":" + std::to_string(line_no) + ": " + e.what());
        }
    });
    return out;
}

// --------------------------------------------------------------------- run

StageError::StageError(std::string stage, std::string instance, const std::string& what)
    : std::runtime_error("stage '" + stage + "'" + (instance.empty() ? "" : ", instance '" + instance + "'") +
                         ": " + what),
      stage_(std::move(stage)),
      instance_(std::move(instance)) {}

namespace {

class RunLog {
  public:
    explicit RunLog(std::ostream* echo) : echo_(echo) {}
    void line(const std::string& s) {
        text_ += s + "\n";
        if (echo_ != nullptr) *echo_ << s << '\n';
    }
    const std::string& text() const { return text_; }

  private:
    std::ostream* echo_;
    std::string text_;
};

template <typename Fn>
auto stage(std::string_view name, std::string_view instance, Fn&& fn) {
    try {
        return fn();
    } catch (const StageError&) {
        throw;
    } catch (const InputError& e) {
        // Bad inputs found while loading stay input errors (exit 2); anything
        // later is a mid-run failure.
        if (name == "corpus" || name == "model" || name == "instances")
            throw InputError("stage '" + std::string(name) + "': " + e.what());
        throw StageError(std::string(name), std::string(instance), e.what());
    } catch (const std::exception& e) {
        throw StageError(std::string(name), std::string(instance), e.what());
    }
}

std::vector<Document> load_corpus(const std::string& path, SourceTag expected) {
    auto docs = read_documents_jsonl(path);
    for (const auto& d : docs)
        if (d.source != expected)
            throw InputError(path + ": document '" + d.doc_id + "' tagged '" + std::string(to_string(d.source)) +
                             "' in the " + std::string(to_string(expected)) + " corpus");
    return docs;
}

void append_hits(const InvertedIndex& index, const RetrievalResults& res, SetTag set,
                 std::vector<RetrievedDocument>& out) {
    for (const auto& h : res.hits) out.push_back({&index.document(h.doc_id), set, h.rank});
}

std::string loss_curve_csv(const Model& m) {
    std::string out = "epoch,loss\n";
    for (std::size_t i = 0; i < m.loss_curve.size(); ++i) out += std::to_string(i) + "," + format_real(m.loss_curve[i]) + "\n";
    return out;
}

std::string summary_json(const AnalysisInput& all, const RunSummary& s) {
    const auto in = effective_input(all);
    ojson j;
    j["instances"] = s.n_instances;
    j["scored"] = s.n_scored;
    j["unparsed"] = s.n_unparsed;
    j["records"] = s.n_records;
    j["overlap_records"] = count_overlaps(all.records);
    j["overlaps_excluded"] = all.exclude_overlap;
    j["correctness"] = "match-based correctness";
    ojson table = ojson::array();
    for (auto agg : in.aggregations) {
        ojson row;
        row["aggregation"] = to_string(agg);
        const bool any = std::any_of(in.records.begin(), in.records.end(),
                                     [&](const InfluenceRecord& r) { return admits(agg, r.source); });
        if (any) {
            const auto rep = ccr_report(in.records, agg);
            auto cell = [](const CcrValue& v) {
                ojson c;
                c["wins_t"] = v.counts.wins_t;
                c["wins_f"] = v.counts.wins_f;
                c["ties"] = v.counts.ties;
                c["value"] = v.ratio ? ojson(*v.ratio) : ojson(nullptr);
                c["label"] = v.label();
                return c;
            };
            row["n_instances"] = rep.n_instances;
            row["ccr"] = cell(rep.ccr);
            row["ccr_neg_c"] = cell(rep.ccr_neg_c);
        } else {
            row["n_instances"] = 0;
        }
        table.push_back(row);
    }
    j["ccr_all_datasets"] = table;
    const auto sp = source_proportions(in.records);
    ojson props;
    for (auto c : kAllSourceCategories) props[std::string(to_string(c))] = sp.proportion(c);
    j["most_influential_source"] = props;
    // How often dropping c from the completion raises or lowers psi.
    ojson signs;
    for (auto src : {SourceTag::kPre, SourceTag::kPost}) {
        std::uint64_t pos = 0, neg = 0, zero = 0;
        for (const auto& r : in.records) {
            if (r.source != src) continue;
            const double d = r.psi - r.psi_neg_c;
            (d > 0.0 ? pos : d < 0.0 ? neg : zero) += 1;
        }
        signs[std::string(to_string(src))] = ojson{{"positive", pos}, {"negative", neg}, {"zero", zero}};
    }
    j["psi_minus_psi_neg_c"] = signs;
    return j.dump(2) + "\n";
}

}  // namespace

RunSummary run_trace(const RunConfig& cfg, std::ostream* echo) {
    cfg.validate();
    RunLog log(echo);
    log.line("tracvc " + std::string(kLibraryVersion) + " trace");

    const auto pre_path = cfg.resolve(cfg.pre_corpus);
    const auto post_path = cfg.resolve(cfg.post_corpus);
    const auto test_path = cfg.resolve(cfg.test_set);

    auto [pre_index, post_index] = stage("corpus", "", [&] {
        auto pre = InvertedIndex::build(load_corpus(pre_path, SourceTag::kPre), cfg.bm25);
        auto post = InvertedIndex::build(load_corpus(post_path, SourceTag::kPost), cfg.bm25);
        return std::pair{std::move(pre), std::move(post)};
    });
    log.line("indexed pre: " + std::to_string(pre_index.doc_count()) +
             " documents, post: " + std::to_string(post_index.doc_count()) + " documents");

    const bool trained = cfg.checkpoint.empty();
    const Model model = stage("model", "", [&] {
        if (!trained) return Model::load(cfg.resolve(cfg.checkpoint));
        std::vector<Document> all = pre_index.documents();
        all.insert(all.end(), post_index.documents().begin(), post_index.documents().end());
        return train(all, cfg.train);
    });
    log.line("model: vocab " + std::to_string(model.params.shape.vocab) + ", dim " +
             std::to_string(model.params.shape.dim) + ", hidden " + std::to_string(model.params.shape.hidden) +
             ", window " + std::to_string(model.params.shape.window) +
             (trained ? ", trained " + std::to_string(cfg.train.epochs) + " epochs, final loss " +
                            format_real(model.loss_curve.back())
                      : ", loaded"));

    auto instances = stage("instances", "", [&] { return read_test_instances_jsonl(test_path); });
    std::sort(instances.begin(), instances.end(),
              [](const TestInstance& a, const TestInstance& b) { return a.instance_id < b.instance_id; });
    for (auto& t : instances)
        t = stage("generation", t.instance_id, [&] { return generate_answer_and_confidence(model, t); });

    std::vector<std::size_t> scorable;
    for (std::size_t i = 0; i < instances.size(); ++i)
        if (instances[i].scorable()) scorable.push_back(i);
    log.line("instances: " + std::to_string(instances.size()) + ", scored: " + std::to_string(scorable.size()) +
             ", unparsed: " + std::to_string(instances.size() - scorable.size()));

    std::vector<std::vector<InfluenceRecord>> per_instance(scorable.size());
    std::vector<std::exception_ptr> errors(scorable.size());
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t slot; (slot = next.fetch_add(1)) < scorable.size();) {
            const auto& t = instances[scorable[slot]];
            try {
                CompletionRecord rec{t.question, *t.answer, std::string(kConfidencePrompt), t.confidence_raw};
                std::vector<RetrievedDocument> docs;
                stage("retrieval", t.instance_id, [&] {
                    for (const auto* index : {&pre_index, &post_index}) {
                        const auto sets = retrieve_sets(*index, rec, cfg.k);
                        append_hits(*index, sets.content, SetTag::kT, docs);
                        append_hits(*index, sets.confidence, SetTag::kF, docs);
                    }
                    return 0;
                });
                per_instance[slot] =
                    stage("influence", t.instance_id, [&] { return score_instance(model, t.instance_id, rec, docs); });
            } catch (...) {
                errors[slot] = std::current_exception();
            }
        }
    };
    {
        std::vector<std::jthread> pool;
        const auto n = std::min(cfg.jobs, std::max<std::size_t>(scorable.size(), 1));
        for (std::size_t i = 1; i < n; ++i) pool.emplace_back(worker);
        worker();
    }
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);

    AnalysisInput analysis;
    analysis.instances = instances;
    for (auto& recs : per_instance)
        for (auto& r : recs) analysis.records.push_back(std::move(r));
    analysis.aggregations = cfg.aggregations;
    analysis.permutations = cfg.permutations;
    analysis.stats_seed = cfg.stats_seed;
    analysis.kde_grid = cfg.kde_grid;
    analysis.exclude_overlap = cfg.exclude_overlap;
    log.line("influence records: " + std::to_string(analysis.records.size()));

    RunSummary summary;
    summary.n_instances = instances.size();
    summary.n_scored = scorable.size();
    summary.n_unparsed = instances.size() - scorable.size();
    summary.n_records = analysis.records.size();
    summary.out_dir = cfg.out_dir;

    std::vector<std::pair<std::string, std::string>> files;
    stage("metrics", "", [&] {
        files.emplace_back("instances.jsonl", instances_to_jsonl(analysis.instances));
        files.emplace_back("influence.jsonl", influence_records_to_jsonl(analysis.records));
        for (const auto& [name, file] : analysis_files()) files.emplace_back(file, render_analysis(analysis, name));
        files.emplace_back("summary.json", summary_json(analysis, summary));
        if (trained) files.emplace_back("loss_curve.csv", loss_curve_csv(model));
        return 0;
    });
    for (const auto& [name, contents] : files)
        if (name == "ccr_table.csv") log.line("ccr grid:\n" + render_ccr_grid(analysis));

    ojson manifest;
    manifest["tool"] = "tracvc";
    manifest["version"] = kLibraryVersion;
    ojson settings;
    for (const auto& [key, value] : cfg.to_pairs())
        if (key != "jobs" && key != "out_dir") settings[key] = value;
    manifest["config"] = settings;
    manifest["config_hash"] = hex64(fnv1a64(cfg.canonical_text()));
    manifest["seeds"] = {{"train_seed", trained ? ojson(cfg.train.seed) : ojson(model.train_config.seed)},
                         {"stats_seed", cfg.stats_seed}};
    ojson inputs;
    inputs["pre_corpus"] = hex64(fnv1a64(read_file(pre_path)));
    inputs["post_corpus"] = hex64(fnv1a64(read_file(post_path)));
    inputs["test_set"] = hex64(fnv1a64(read_file(test_path)));
    if (!trained) inputs["checkpoint"] = hex64(fnv1a64(read_file(cfg.resolve(cfg.checkpoint))));
    manifest["inputs"] = inputs;
    manifest["counts"] = {{"instances", summary.n_instances},
                          {"scored", summary.n_scored},
                          {"unparsed", summary.n_unparsed},
                          {"records", summary.n_records}};
    log.line("done");
    files.emplace_back("run.log", log.text());
    ojson outputs;
    std::string digest_input;
    for (const auto& [name, contents] : files) {
        const auto h = hex64(fnv1a64(contents));
        outputs[name] = h;
        digest_input += name + ":" + h + "\n";
    }
    manifest["outputs"] = outputs;
    summary.manifest_hash = hex64(fnv1a64(cfg.canonical_text() + digest_input));
    manifest["run_hash"] = summary.manifest_hash;
    files.emplace_back("manifest.json", manifest.dump(2) + "\n");

    // Write everything into a sibling staging directory, then swap it in.
    const fs::path target = fs::absolute(cfg.resolve(cfg.out_dir));
    fs::path staging = target;
    staging += ".staging";
    try {
        fs::remove_all(staging);
        fs::create_directories(staging);
        for (const auto& [name, contents] : files) write_file_atomic((staging / name).string(), contents);
        fs::remove_all(target);
        fs::rename(staging, target);
    } catch (const std::exception& e) {
        std::error_code ec;
        fs::remove_all(staging, ec);
        throw StageError("output", "", e.what());
    }
    return summary;
}

AnalysisInput load_run(const std::string& run_dir) {
    const fs::path dir(run_dir);
    if (!fs::is_directory(dir)) throw InputError("run directory '" + run_dir + "' does not exist");
    AnalysisInput in;
    nlohmann::json manifest;
    try {
        manifest = nlohmann::json::parse(read_file((dir / "manifest.json").string()));
        RunConfig cfg;
        for (const auto& [key, value] : manifest.at("config").items()) cfg.set(key, value.get<std::string>());
        in.aggregations = cfg.aggregations;
        in.permutations = cfg.permutations;
        in.stats_seed = cfg.stats_seed;
        in.kde_grid = cfg.kde_grid;
        in.exclude_overlap = cfg.exclude_overlap;
    } catch (const nlohmann::json::exception& e) {
        throw InputError(run_dir + "/manifest.json: " + e.what());
    }
    in.instances = instances_from_jsonl(read_file((dir / "instances.jsonl").string()), "instances.jsonl");
    in.records = influence_records_from_jsonl(read_file((dir / "influence.jsonl").string()), "influence.jsonl");
    return in;
}

}  // namespace tracvc
