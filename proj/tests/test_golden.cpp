#include <set>
#include <sstream>

#include <gtest/gtest.h>
#include <json.hpp>

#include "test_util.hpp"
#include "tracvc/cli.hpp"
#include "tracvc/pipeline.hpp"

using namespace tracvc;

namespace {

std::string golden(const std::string& name = "") {
    return std::string(TRACVC_SOURCE_DIR) + "/tests/golden/toy" + (name.empty() ? "" : "/" + name);
}

}  // namespace

TEST(Golden, LossCurveTrendsDown) {
    std::istringstream in(read_file(golden("loss_curve.csv")));
    std::string line;
    std::getline(in, line);
    std::vector<double> loss;
    while (std::getline(in, line)) loss.push_back(std::stod(line.substr(line.find(',') + 1)));
    ASSERT_EQ(loss.size(), 31u);
    int rises = 0;
    for (std::size_t i = 1; i < loss.size(); ++i) rises += loss[i] > loss[i - 1];
    EXPECT_LE(rises, 3);
    EXPECT_LT(loss.back(), 0.25 * loss.front());
}

TEST(Golden, EveryAnalysisRederivesFromStoredRecords) {
    const auto in = load_run(golden());
    EXPECT_EQ(in.records.size(), 680u);
    for (const auto& [name, file] : analysis_files()) EXPECT_EQ(render_analysis(in, name), read_file(golden(file))) << name;
}

TEST(Golden, ReportReprintsTheCcrGrid) {
    std::ostringstream out, err;
    ASSERT_EQ(run_cli({"tracvc", "report", "--run", golden(), "--analysis", "ccr"}, out, err), kExitOk) << err.str();
    const auto log = read_file(golden("run.log"));
    EXPECT_NE(log.find("ccr grid:\n" + out.str()), std::string::npos) << out.str();
}

TEST(Golden, SummaryRecordsSignPatternAndProportions) {
    const auto s = nlohmann::json::parse(read_file(golden("summary.json")));
    for (const auto* src : {"pre", "post"}) {
        const auto& sp = s.at("psi_minus_psi_neg_c").at(src);
        EXPECT_EQ(sp.at("positive").get<int>() + sp.at("negative").get<int>() + sp.at("zero").get<int>(), 340) << src;
    }
    double total = 0.0;
    for (const auto& [k, v] : s.at("most_influential_source").items()) total += v.get<double>();
    EXPECT_NEAR(total, 1.0, 1e-12);
}

TEST(Golden, PerDatasetSignificanceIsRecorded) {
    std::istringstream in(read_file(golden("ccr_detail.csv")));
    std::string line;
    std::getline(in, line);
    std::set<std::string> datasets;
    std::size_t rows = 0;
    while (std::getline(in, line)) {
        datasets.insert(line.substr(0, line.find(',')));
        ++rows;
    }
    EXPECT_EQ(datasets, (std::set<std::string>{"All", "authors", "capitals", "elements"}));
    EXPECT_EQ(rows, 4u * 3u * 2u);
}

TEST(Golden, IndexOfWholeToyCorpusHas200Documents) {
    tracvc::testing::TempDir dir("toy-index");
    const std::string toy = std::string(TRACVC_SOURCE_DIR) + "/data/toy/";
    write_file_atomic(dir.file("all.jsonl"), read_file(toy + "pre.jsonl") + read_file(toy + "post.jsonl"));
    std::ostringstream out, err;
    ASSERT_EQ(run_cli({"tracvc", "index", "--corpus", dir.file("all.jsonl"), "--out", dir.file("all.idx")}, out, err),
              kExitOk);
    EXPECT_NE(out.str().find("documents: 200\n"), std::string::npos) << out.str();
}
