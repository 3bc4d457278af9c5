#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "tracvc/common.hpp"
#include "tracvc/corpus.hpp"

namespace tracvc {

using TokenId = std::uint32_t;

class Vocabulary {
  public:
    static constexpr TokenId kBos = 0;
    static constexpr TokenId kEos = 1;
    static constexpr TokenId kUnk = 2;
    static constexpr TokenId kPad = 3;
    static constexpr std::size_t kReserved = 4;

    Vocabulary();

    // Reserved ids first, then every distinct token of `texts` in byte order.
    static Vocabulary build(std::span<const std::string> texts);
    static Vocabulary from_tokens(std::vector<std::string> tokens);  // reserved entries included

    std::size_t size() const { return tokens_.size(); }
    TokenId id(std::string_view token) const;  // kUnk when absent
    bool contains(std::string_view token) const;
    const std::string& token(TokenId id) const;
    const std::vector<std::string>& tokens() const { return tokens_; }

  private:
    std::vector<std::string> tokens_;
    std::map<std::string, TokenId, std::less<>> ids_;
};

// <bos>-prefixed token ids.
struct TokenSequence {
    std::vector<TokenId> ids;
};

TokenSequence encode(std::string_view text, const Vocabulary& vocab);

struct ModelShape {
    std::uint32_t vocab = 0;
    std::uint32_t dim = 16;     // embedding width D
    std::uint32_t hidden = 32;  // H
    std::uint32_t window = 3;   // W previous tokens of context
};

// Fixed-window feedforward LM: context embeddings -> tanh layer -> softmax.
//   embeddings: V x D          w1: (W*D) x H, b1: H
//   w2: H x V,  b2: V          all row-major
struct ModelParams {
    ModelShape shape;
    std::vector<double> embeddings;
    std::vector<double> w1;
    std::vector<double> b1;
    std::vector<double> w2;
    std::vector<double> b2;

    // Uniform in [-0.1, 0.1], filled in the field order above.
    static ModelParams init(const ModelShape& shape, std::uint64_t seed);
    void check_shape() const;
    bool all_finite() const;
};

// Sparse d(loss)/d(embedding table): one D-wide row per touched token id.
class GradientVector {
  public:
    GradientVector() = default;
    GradientVector(std::uint32_t dim, std::vector<TokenId> ids, std::vector<double> rows);

    std::uint32_t dim() const { return dim_; }
    const std::vector<TokenId>& ids() const { return ids_; }  // ascending
    std::span<const double> row_at(std::size_t i) const { return {rows_.data() + i * dim_, dim_}; }
    // Zero row when `id` is outside the support.
    std::vector<double> row(TokenId id) const;
    double norm() const { return norm_; }
    double squared_norm() const { return squared_norm_; }
    double recompute_norm() const;

    GradientVector scaled(double alpha) const;

  private:
    std::uint32_t dim_ = 0;
    std::vector<TokenId> ids_;
    std::vector<double> rows_;
    double squared_norm_ = 0.0;
    double norm_ = 0.0;
};

// Mean next-token cross-entropy. Throws InputError for sequences shorter than
// two tokens ("nothing to predict") or with out-of-range ids.
double forward_loss(const ModelParams& params, const TokenSequence& seq);

// Exact gradient of forward_loss with respect to the embedding table only.
GradientVector grad_embeddings(const ModelParams& params, const TokenSequence& seq);

// Dense gradients of every parameter block, same layout as ModelParams.
struct FullGradient {
    std::vector<double> embeddings, w1, b1, w2, b2;
};
double loss_and_full_gradient(const ModelParams& params, const TokenSequence& seq, FullGradient& grad);

struct TrainConfig {
    std::uint32_t epochs = 20;
    double learning_rate = 0.1;
    std::uint64_t seed = 0;
    std::uint32_t window = 3;
    std::uint32_t dim = 16;
    std::uint32_t hidden = 32;
};

struct Model {
    Vocabulary vocab;
    ModelParams params;
    TrainConfig train_config;
    // Mean corpus loss before training (index 0) and after each epoch.
    std::vector<double> loss_curve;

    std::string serialize() const;
    static Model deserialize(std::string_view bytes);
    void save(const std::string& path) const;
    static Model load(const std::string& path);

    static constexpr std::uint32_t kFormatVersion = 1;
};

// Training text of a document: its joined fields followed by <eos>.
TokenSequence training_sequence(const Document& doc, const Vocabulary& vocab);

// Plain per-sequence SGD over a seeded shuffle. The vocabulary covers the
// corpus plus the prompt templates. Throws InputError on an empty corpus.
Model train(const std::vector<Document>& corpus, const TrainConfig& config);

// Argmax decoding, lowest id wins ties, stops at <eos>. Tokens are joined
// with single spaces.
std::string generate_greedy(const Model& model, std::string_view prompt, std::size_t max_tokens);

}  // namespace tracvc
