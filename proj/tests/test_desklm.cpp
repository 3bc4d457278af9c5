#include <algorithm>
#include <cmath>

#include <gtest/gtest.h>

#include "test_util.hpp"
#include "tracvc/checks.hpp"
#include "tracvc/desklm.hpp"

using namespace tracvc;
using tracvc::testing::make_doc;

namespace {

// V = 3, W = 1, D = H = 2, hand-set weights.
ModelParams tiny_model() {
    ModelParams p;
    p.shape = {3, 2, 2, 1};
    p.embeddings = {0.1, -0.2, 0.3, 0.05, -0.15, 0.2};
    p.w1 = {0.5, -0.4, 0.25, 0.6};
    p.b1 = {0.1, -0.1};
    p.w2 = {0.7, -0.3, 0.2, -0.5, 0.4, 0.1};
    p.b2 = {0.0, 0.1, -0.2};
    return p;
}

std::vector<Document> five_docs() {
    return {make_doc("a", SourceTag::kPre, "alpha bravo charlie delta echo"),
            make_doc("b", SourceTag::kPre, "foxtrot golf hotel india juliet"),
            make_doc("c", SourceTag::kPre, "kilo lima mike november oscar"),
            make_doc("d", SourceTag::kPre, "papa quebec romeo sierra tango"),
            make_doc("e", SourceTag::kPre, "uniform victor whiskey xray yankee")};
}

}  // namespace

TEST(Vocabulary, ReservedIdsAndSortedTokens) {
    const std::vector<std::string> texts = {"b a", "c a"};
    const auto v = Vocabulary::build(texts);
    ASSERT_EQ(v.size(), 7u);
    EXPECT_EQ(v.token(Vocabulary::kBos), "<bos>");
    EXPECT_EQ(v.token(Vocabulary::kPad), "<pad>");
    EXPECT_EQ(v.id("a"), 4u);
    EXPECT_EQ(v.id("c"), 6u);
    EXPECT_EQ(v.id("zzz"), Vocabulary::kUnk);
}

TEST(Encode, PrependsBosAndMapsUnknown) {
    const std::vector<std::string> texts = {"hello world"};
    const auto v = Vocabulary::build(texts);
    EXPECT_EQ(encode("Hello, WORLD", v).ids, (std::vector<TokenId>{Vocabulary::kBos, v.id("hello"), v.id("world")}));
    EXPECT_EQ(encode("hello mars", v).ids.back(), Vocabulary::kUnk);
    EXPECT_EQ(encode("", v).ids, std::vector<TokenId>{Vocabulary::kBos});
}

TEST(ForwardLoss, HandComputedSoftmax) {
    // Two predictions: ctx 0 -> 1 and ctx 1 -> 2, averaged.
    EXPECT_NEAR(forward_loss(tiny_model(), {{0, 1, 2}}), 1.216220317187344, 1e-12);
}

TEST(ForwardLoss, UniformInitIsNearLogV) {
    const ModelShape shape{60, 16, 32, 3};
    const auto p = ModelParams::init(shape, 1);
    TokenSequence seq{{0, 10, 20, 30, 40, 50, 5, 6}};
    EXPECT_NEAR(forward_loss(p, seq), std::log(60.0), 0.05 * std::log(60.0));
}

TEST(ForwardLoss, RejectsShortOrOutOfRange) {
    const auto p = tiny_model();
    try {
        forward_loss(p, {{0}});
        FAIL();
    } catch (const InputError& e) {
        EXPECT_NE(std::string(e.what()).find("nothing to predict"), std::string::npos);
    }
    EXPECT_THROW(forward_loss(p, {{0, 7}}), InputError);
    EXPECT_THROW(grad_embeddings(p, {{0}}), InputError);
}

TEST(GradEmbeddings, ClosedFormForOneStep) {
    const auto p = tiny_model();
    const TokenId x = 1, y = 2;
    // loss = -log softmax(W2^T tanh(W1^T e_x + b1) + b2)[y]
    double h[2], z[3];
    for (int j = 0; j < 2; ++j)
        h[j] = std::tanh(p.embeddings[x * 2 + 0] * p.w1[0 * 2 + j] + p.embeddings[x * 2 + 1] * p.w1[1 * 2 + j] +
                         p.b1[j]);
    for (int v = 0; v < 3; ++v) z[v] = h[0] * p.w2[0 * 3 + v] + h[1] * p.w2[1 * 3 + v] + p.b2[v];
    const double m = std::max({z[0], z[1], z[2]});
    double s = 0.0;
    for (double zi : z) s += std::exp(zi - m);
    double delta[3];
    for (int v = 0; v < 3; ++v) delta[v] = std::exp(z[v] - m) / s - (v == static_cast<int>(y) ? 1.0 : 0.0);
    double dh[2];
    for (int j = 0; j < 2; ++j) {
        double acc = 0.0;
        for (int v = 0; v < 3; ++v) acc += p.w2[j * 3 + v] * delta[v];
        dh[j] = acc * (1.0 - h[j] * h[j]);
    }
    double de[2];
    for (int i = 0; i < 2; ++i) de[i] = p.w1[i * 2 + 0] * dh[0] + p.w1[i * 2 + 1] * dh[1];

    const auto g = grad_embeddings(p, {{x, y}});
    ASSERT_EQ(g.ids(), std::vector<TokenId>{x});
    EXPECT_NEAR(g.row_at(0)[0], de[0], 1e-14);
    EXPECT_NEAR(g.row_at(0)[1], de[1], 1e-14);
}

TEST(GradEmbeddings, MatchesFiniteDifferences) {
    for (std::uint64_t seed = 0; seed < 25; ++seed) {
        const auto c = checks::random_case(seed);
        const auto r = checks::finite_difference_check(c.params, c.seq, 20, 1e-4, seed + 100);
        EXPECT_LE(r.max_rel_error, 1e-4) << "seed " << seed;
        EXPECT_GT(r.entries, 0u);
    }
}

TEST(GradEmbeddings, SupportIsContextTokensOnly) {
    const auto c = checks::random_case(17);
    const auto g = grad_embeddings(c.params, c.seq);
    // Rows appear only for tokens that served as context: every token but the
    // last, plus <pad> whenever the window reaches before <bos>.
    std::vector<TokenId> ctx(c.seq.ids.begin(), c.seq.ids.end() - 1);
    if (c.params.shape.window > 1) ctx.push_back(Vocabulary::kPad);
    std::sort(ctx.begin(), ctx.end());
    ctx.erase(std::unique(ctx.begin(), ctx.end()), ctx.end());
    for (auto id : g.ids()) EXPECT_TRUE(std::binary_search(ctx.begin(), ctx.end(), id)) << id;
    EXPECT_TRUE(std::is_sorted(g.ids().begin(), g.ids().end()));
    EXPECT_NEAR(g.norm(), g.recompute_norm(), 1e-12 * g.norm());
}

TEST(GradEmbeddings, DeterministicAndAgreesWithFullGradient) {
    const auto c = checks::random_case(5);
    const auto g1 = grad_embeddings(c.params, c.seq);
    const auto g2 = grad_embeddings(c.params, c.seq);
    EXPECT_EQ(g1.ids(), g2.ids());
    EXPECT_EQ(g1.norm(), g2.norm());
    FullGradient full;
    const double loss = loss_and_full_gradient(c.params, c.seq, full);
    EXPECT_EQ(loss, forward_loss(c.params, c.seq));
    const auto d = c.params.shape.dim;
    for (std::size_t i = 0; i < g1.ids().size(); ++i)
        for (std::size_t k = 0; k < d; ++k)
            EXPECT_NEAR(g1.row_at(i)[k], full.embeddings[g1.ids()[i] * d + k], 1e-15);
}

TEST(Train, LossDecreasesAndIsDeterministic) {
    TrainConfig cfg;
    cfg.epochs = 10;
    cfg.seed = 3;
    const auto m1 = train(five_docs(), cfg);
    const auto m2 = train(five_docs(), cfg);
    ASSERT_EQ(m1.loss_curve.size(), 11u);
    EXPECT_LT(m1.loss_curve.back(), m1.loss_curve.front());
    EXPECT_EQ(m1.serialize(), m2.serialize());
    cfg.seed = 4;
    EXPECT_NE(train(five_docs(), cfg).serialize(), m1.serialize());
}

TEST(Train, RejectsBadInput) {
    EXPECT_THROW(train({}, TrainConfig{}), InputError);
    TrainConfig cfg;
    cfg.epochs = 0;
    EXPECT_THROW(train(five_docs(), cfg), InputError);
}

TEST(Train, MemorizesSmallCorpus) {
    TrainConfig cfg;
    cfg.epochs = 500;
    cfg.seed = 1;
    const auto model = train(five_docs(), cfg);
    EXPECT_EQ(generate_greedy(model, "foxtrot golf", 10), "hotel india juliet");
    EXPECT_EQ(generate_greedy(model, "papa quebec", 10), "romeo sierra tango");
}

TEST(Generate, ZeroBudgetIsEmpty) {
    TrainConfig cfg;
    cfg.epochs = 1;
    const auto model = train(five_docs(), cfg);
    EXPECT_EQ(generate_greedy(model, "alpha", 0), "");
}

TEST(Checkpoint, ByteStableRoundTrip) {
    tracvc::testing::TempDir dir("ckpt");
    TrainConfig cfg;
    cfg.epochs = 3;
    cfg.seed = 9;
    const auto model = train(five_docs(), cfg);
    model.save(dir.file("m.bin"));
    const auto back = Model::load(dir.file("m.bin"));
    EXPECT_EQ(back.serialize(), model.serialize());
    EXPECT_EQ(back.loss_curve, model.loss_curve);
    EXPECT_EQ(back.vocab.tokens(), model.vocab.tokens());
    EXPECT_EQ(generate_greedy(back, "alpha bravo", 5), generate_greedy(model, "alpha bravo", 5));
}

TEST(Checkpoint, CorruptionIsDetected) {
    TrainConfig cfg;
    cfg.epochs = 1;
    const auto bytes = train(five_docs(), cfg).serialize();
    auto flipped = bytes;
    flipped[bytes.size() / 2] ^= 0x01;
    EXPECT_THROW(Model::deserialize(flipped), InputError);
    EXPECT_THROW(Model::deserialize(bytes.substr(0, bytes.size() - 3)), InputError);
    EXPECT_THROW(Model::deserialize("TVCLM"), InputError);
}
