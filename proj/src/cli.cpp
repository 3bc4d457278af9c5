#include "tracvc/cli.hpp"

#include <cstdlib>
#include <filesystem>
#include <map>
#include <optional>

#include <CLI11.hpp>

#include "tracvc/checks.hpp"
#include "tracvc/corpus.hpp"
#include "tracvc/desklm.hpp"
#include "tracvc/pipeline.hpp"

namespace tracvc {

std::string config_flag(const std::string& key) {
    std::string flag = "--" + key;
    for (auto& c : flag)
        if (c == '_') c = '-';
    return flag;
}

namespace {

struct IndexArgs {
    std::string corpus, out;
    double k1 = 1.2, b = 0.75;
};

struct TrainArgs {
    std::vector<std::string> corpora;
    std::string out, loss_curve;
    std::optional<std::uint64_t> seed;
    TrainConfig config;
};

struct GenerateArgs {
    std::string checkpoint, prompt, question;
    std::size_t max_tokens = kMaxAnswerTokens;
};

struct TraceArgs {
    std::string config;
    std::map<std::string, std::string> overrides;
};

struct ReportArgs {
    std::string run, analysis, out;
};

int cmd_index(const IndexArgs& a, std::ostream& out, std::ostream& err) {
    auto docs = read_documents_jsonl(a.corpus);
    if (docs.empty()) err << "warning: " << a.corpus << " holds no documents; writing an empty index\n";
    const auto index = InvertedIndex::build(std::move(docs), {a.k1, a.b});
    index.save(a.out);
    out << "documents: " << index.doc_count() << '\n';
    out << "vocabulary: " << index.vocabulary_size() << '\n';
    for (const auto& [name, fs] : index.fields())
        out << "avg_length[" << name << "]: " << format_real(fs.avg_length) << '\n';
    out << "wrote " << a.out << '\n';
    return kExitOk;
}

int cmd_train(TrainArgs a, std::ostream& out) {
    std::vector<Document> docs;
    for (const auto& path : a.corpora) {
        auto part = read_documents_jsonl(path);
        docs.insert(docs.end(), part.begin(), part.end());
    }
    a.config.seed = *a.seed;
    const auto model = train(docs, a.config);
    model.save(a.out);
    const auto curve_path = a.loss_curve.empty() ? a.out + ".loss.csv" : a.loss_curve;
    std::string csv = "epoch,loss\n";
    for (std::size_t i = 0; i < model.loss_curve.size(); ++i)
        csv += std::to_string(i) + "," + format_real(model.loss_curve[i]) + "\n";
    write_file_atomic(curve_path, csv);
    out << "vocabulary: " << model.vocab.size() << '\n';
    out << "loss: " << format_real(model.loss_curve.front()) << " -> " << format_real(model.loss_curve.back()) << '\n';
    out << "wrote " << a.out << " and " << curve_path << '\n';
    return kExitOk;
}

int cmd_generate(const GenerateArgs& a, std::ostream& out) {
    const auto model = Model::load(a.checkpoint);
    if (!a.question.empty()) {
        TestInstance t;
        t.instance_id = "cli";
        t.question = a.question;
        t = generate_answer_and_confidence(model, t);
        out << "answer: " << t.answer.value_or("") << '\n';
        out << "confidence: " << t.confidence_raw.value_or("") << '\n';
        out << "parsed: " << (t.confidence_value ? format_real(*t.confidence_value) : "UNPARSED") << '\n';
        return kExitOk;
    }
    out << generate_greedy(model, a.prompt, a.max_tokens) << '\n';
    return kExitOk;
}

int cmd_trace(const TraceArgs& a, std::ostream& out) {
    auto cfg = RunConfig::load(a.config);
    // Paths given on the command line are relative to the working directory,
    // paths in the file to the file.
    auto cwd_path = [](const std::string& p) {
        return p.empty() ? p : std::filesystem::absolute(p).lexically_normal().string();
    };
    for (const auto& [key, value] : a.overrides) {
        const bool is_path = key == "pre_corpus" || key == "post_corpus" || key == "test_set" ||
                             key == "checkpoint" || key == "out_dir";
        cfg.set(key, is_path ? cwd_path(value) : value);
    }
    if (cfg.out_dir.empty())
        if (const char* env = std::getenv(kOutDirEnv)) cfg.out_dir = cwd_path(env);
    const auto summary = run_trace(cfg, &out);
    out << "run hash: " << summary.manifest_hash << '\n';
    return kExitOk;
}

int cmd_report(const ReportArgs& a, std::ostream& out) {
    const auto input = load_run(a.run);
    const auto csv = render_analysis(input, a.analysis);
    if (!a.out.empty()) write_file_atomic(a.out, csv);
    out << (a.analysis == "ccr" ? render_ccr_grid(input) : csv);
    return kExitOk;
}

int cmd_selftest(const std::string& checkpoint, std::ostream& out) {
    const auto results =
        checks::run_selftest(checkpoint.empty() ? std::nullopt : std::optional<std::string>(checkpoint));
    bool ok = true;
    for (const auto& r : results) {
        out << (r.passed ? "PASS " : "FAIL ") << r.name << ": " << r.detail << '\n';
        ok = ok && r.passed;
    }
    return ok ? kExitOk : kExitRuntime;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Trace verbalized confidence back to training data"};
    app.name(args.empty() ? "tracvc" : args[0]);
    app.require_subcommand(1);

    IndexArgs ia;
    auto* index = app.add_subcommand("index", "Build and persist a BM25 index over a JSON-Lines corpus");
    index->add_option("--corpus", ia.corpus, "corpus file")->required();
    index->add_option("--out", ia.out, "index artifact path")->required();
    index->add_option("--k1", ia.k1, "BM25 term saturation")->capture_default_str();
    index->add_option("--b", ia.b, "BM25 length normalization")->capture_default_str();

    TrainArgs ta;
    auto* trainc = app.add_subcommand("train", "Train the desk language model");
    trainc->add_option("--corpus", ta.corpora, "corpus file (repeatable)")->required();
    trainc->add_option("--out", ta.out, "checkpoint path")->required();
    trainc->add_option("--seed", ta.seed, "training seed")->required();
    trainc->add_option("--epochs", ta.config.epochs, "SGD epochs")->capture_default_str();
    trainc->add_option("--lr", ta.config.learning_rate, "learning rate")->capture_default_str();
    trainc->add_option("--dim", ta.config.dim, "embedding width")->capture_default_str();
    trainc->add_option("--hidden", ta.config.hidden, "hidden width")->capture_default_str();
    trainc->add_option("--window", ta.config.window, "context window")->capture_default_str();
    trainc->add_option("--loss-curve", ta.loss_curve, "loss curve CSV (default <out>.loss.csv)");

    GenerateArgs ga;
    auto* gen = app.add_subcommand("generate", "Greedy generation from a checkpoint");
    gen->add_option("--checkpoint", ga.checkpoint, "checkpoint path")->required();
    auto* prompt = gen->add_option("--prompt", ga.prompt, "raw prompt text");
    auto* question = gen->add_option("--question", ga.question, "run both prompt stages for a question");
    prompt->excludes(question);
    gen->add_option("--max-tokens", ga.max_tokens, "token budget for --prompt")->capture_default_str();

    TraceArgs tra;
    auto* trace = app.add_subcommand("trace", "Run retrieval, influence scoring and every analysis");
    trace->add_option("--config", tra.config, "key=value run configuration")->required();
    const RunConfig defaults;
    std::map<std::string, std::string> default_values;
    for (const auto& [key, value] : defaults.to_pairs()) default_values[key] = value;
    std::map<std::string, std::string> override_values;
    for (const auto& [key, help] : RunConfig::key_help()) {
        auto* opt = trace->add_option(config_flag(key), override_values[key], help + " (overrides the config)");
        opt->default_str(default_values[key]);
    }

    ReportArgs ra;
    auto* report = app.add_subcommand("report", "Re-derive one analysis from a finished run");
    report->add_option("--run", ra.run, "run directory")->required();
    std::vector<std::string> names;
    for (const auto& [name, file] : analysis_files()) names.push_back(name);
    report->add_option("--analysis", ra.analysis, "analysis name")->required()->check(CLI::IsMember(names));
    report->add_option("--out", ra.out, "also write the CSV here");

    std::string selftest_ckpt;
    auto* selftest = app.add_subcommand("selftest", "Gradient, BM25 and ccr self-checks");
    selftest->add_option("--checkpoint", selftest_ckpt, "also verify this checkpoint");

    const auto footer = std::string("Exit codes: 0 success, 2 usage or input error, 3 runtime failure.");
    app.footer(footer);
    for (auto* sc : {index, trainc, gen, trace, report, selftest}) sc->footer(footer);

    try {
        // CLI11 takes the arguments reversed, without the program name.
        std::vector<std::string> rev(args.rbegin(), args.rend());
        if (!rev.empty()) rev.pop_back();
        app.parse(rev);
    } catch (const CLI::ParseError& e) {
        return app.exit(e, out, err) == 0 ? kExitOk : kExitUsage;
    }

    try {
        if (*index) return cmd_index(ia, out, err);
        if (*trainc) return cmd_train(ta, out);
        if (*gen) {
            if (ga.prompt.empty() && ga.question.empty()) throw InputError("generate: --prompt or --question required");
            return cmd_generate(ga, out);
        }
        if (*trace) {
            for (const auto& [key, help] : RunConfig::key_help())
                if (trace->count(config_flag(key)) > 0) tra.overrides[key] = override_values[key];
            return cmd_trace(tra, out);
        }
        if (*report) return cmd_report(ra, out);
        if (*selftest) return cmd_selftest(selftest_ckpt, out);
    } catch (const InputError& e) {
        err << "error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const StageError& e) {
        err << "error: " << e.what() << '\n';
        return kExitRuntime;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kExitRuntime;
    }
    return kExitUsage;
}

}  // namespace tracvc
