#include "tracvc/desklm.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "tracvc/prompts.hpp"

namespace tracvc {

namespace {

constexpr std::string_view kCheckpointMagic = "TVCLM\x00\x00\x01";

const std::vector<std::string>& reserved_tokens() {
    static const std::vector<std::string> kTokens = {"<bos>", "<eos>", "<unk>", "<pad>"};
    return kTokens;
}

// Per-call scratch; never shared between threads.
struct Scratch {
    std::vector<TokenId> ctx;
    std::vector<double> x, h, probs, dh, dz, dx;

    explicit Scratch(const ModelShape& s)
        : ctx(s.window), x(std::size_t{s.window} * s.dim), h(s.hidden), probs(s.vocab), dh(s.hidden),
          dz(s.hidden), dx(std::size_t{s.window} * s.dim) {}
};

void check_sequence(const ModelParams& params, const TokenSequence& seq) {
    if (seq.ids.size() < 2) throw InputError("nothing to predict: sequence needs at least two tokens");
    for (auto id : seq.ids)
        if (id >= params.shape.vocab) throw InputError("token id " + std::to_string(id) + " outside vocabulary");
}

// Context of the token predicted at `t`: the W ids before it, left-padded.
void fill_context(std::span<const TokenId> ids, std::size_t t, Scratch& s) {
    const std::size_t w = s.ctx.size();
    for (std::size_t j = 0; j < w; ++j) {
        const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t) - static_cast<std::ptrdiff_t>(w - j);
        s.ctx[j] = src < 0 ? Vocabulary::kPad : ids[static_cast<std::size_t>(src)];
    }
}

// Fills x, h and probs (softmax) for the current context.
void forward_position(const ModelParams& p, Scratch& s) {
    const auto& sh = p.shape;
    const std::size_t d = sh.dim, hdim = sh.hidden, v = sh.vocab;
    for (std::size_t j = 0; j < s.ctx.size(); ++j)
        std::copy_n(p.embeddings.begin() + static_cast<std::ptrdiff_t>(s.ctx[j] * d), d,
                    s.x.begin() + static_cast<std::ptrdiff_t>(j * d));
    for (std::size_t k = 0; k < hdim; ++k) s.h[k] = p.b1[k];
    for (std::size_t i = 0; i < s.x.size(); ++i) {
        const double xi = s.x[i];
        const double* row = p.w1.data() + i * hdim;
        for (std::size_t k = 0; k < hdim; ++k) s.h[k] += xi * row[k];
    }
    for (auto& hk : s.h) hk = std::tanh(hk);
    for (std::size_t c = 0; c < v; ++c) s.probs[c] = p.b2[c];
    for (std::size_t k = 0; k < hdim; ++k) {
        const double hk = s.h[k];
        const double* row = p.w2.data() + k * v;
        for (std::size_t c = 0; c < v; ++c) s.probs[c] += hk * row[c];
    }
}

// Converts logits in s.probs to probabilities; returns -log p[target].
double softmax_nll(Scratch& s, TokenId target) {
    const double m = *std::max_element(s.probs.begin(), s.probs.end());
    double z = 0.0;
    for (auto& l : s.probs) {
        l = std::exp(l - m);
        z += l;
    }
    const double nll = std::log(z) - std::log(s.probs[target]);
    for (auto& q : s.probs) q /= z;
    return nll;
}

// Backprop of `scale * nll` at one position. Leaves dx (context-embedding
// gradient, W*D) in the scratch; accumulates weight gradients when `full`.
void backward_position(const ModelParams& p, Scratch& s, TokenId target, double scale, FullGradient* full) {
    const auto& sh = p.shape;
    const std::size_t hdim = sh.hidden, v = sh.vocab;
    s.probs[target] -= 1.0;
    for (auto& g : s.probs) g *= scale;  // now d(loss)/d(logits)
    for (std::size_t k = 0; k < hdim; ++k) {
        const double* row = p.w2.data() + k * v;
        double acc = 0.0;
        for (std::size_t c = 0; c < v; ++c) acc += row[c] * s.probs[c];
        s.dh[k] = acc;
        s.dz[k] = acc * (1.0 - s.h[k] * s.h[k]);
    }
    for (std::size_t i = 0; i < s.x.size(); ++i) {
        const double* row = p.w1.data() + i * hdim;
        double acc = 0.0;
        for (std::size_t k = 0; k < hdim; ++k) acc += row[k] * s.dz[k];
        s.dx[i] = acc;
    }
    if (full == nullptr) return;
    for (std::size_t c = 0; c < v; ++c) full->b2[c] += s.probs[c];
    for (std::size_t k = 0; k < hdim; ++k) {
        double* row = full->w2.data() + k * v;
        const double hk = s.h[k];
        for (std::size_t c = 0; c < v; ++c) row[c] += hk * s.probs[c];
    }
    for (std::size_t k = 0; k < hdim; ++k) full->b1[k] += s.dz[k];
    for (std::size_t i = 0; i < s.x.size(); ++i) {
        double* row = full->w1.data() + i * hdim;
        const double xi = s.x[i];
        for (std::size_t k = 0; k < hdim; ++k) row[k] += xi * s.dz[k];
    }
}

void write_block(BinaryWriter& w, const std::vector<double>& block) {
    w.u64(block.size());
    for (double x : block) w.f64(x);
}

std::vector<double> read_block(BinaryReader& r, std::size_t expected, std::string_view name) {
    const auto n = r.u64();
    if (n != expected) throw InputError("checkpoint: block '" + std::string(name) + "' has wrong size");
    std::vector<double> out(expected);
    for (auto& x : out) x = r.f64();
    return out;
}

}  // namespace

Vocabulary::Vocabulary() : tokens_(reserved_tokens()) {
    for (std::size_t i = 0; i < tokens_.size(); ++i) ids_.emplace(tokens_[i], static_cast<TokenId>(i));
}

Vocabulary Vocabulary::from_tokens(std::vector<std::string> tokens) {
    if (tokens.size() < kReserved || !std::equal(reserved_tokens().begin(), reserved_tokens().end(), tokens.begin()))
        throw InputError("vocabulary: reserved tokens missing");
    Vocabulary v;
    v.tokens_ = std::move(tokens);
    v.ids_.clear();
    for (std::size_t i = 0; i < v.tokens_.size(); ++i)
        if (!v.ids_.emplace(v.tokens_[i], static_cast<TokenId>(i)).second)
            throw InputError("vocabulary: duplicate token '" + v.tokens_[i] + "'");
    return v;
}

Vocabulary Vocabulary::build(std::span<const std::string> texts) {
    std::set<std::string> distinct;
    for (const auto& t : texts)
        for (auto& tok : tokenize(t)) distinct.insert(std::move(tok));
    std::vector<std::string> tokens = reserved_tokens();
    tokens.insert(tokens.end(), distinct.begin(), distinct.end());
    return from_tokens(std::move(tokens));
}

TokenId Vocabulary::id(std::string_view token) const {
    auto it = ids_.find(token);
    return it == ids_.end() ? kUnk : it->second;
}

bool Vocabulary::contains(std::string_view token) const { return ids_.find(token) != ids_.end(); }

const std::string& Vocabulary::token(TokenId id) const {
    if (id >= tokens_.size()) throw InputError("token id " + std::to_string(id) + " outside vocabulary");
    return tokens_[id];
}

TokenSequence encode(std::string_view text, const Vocabulary& vocab) {
    TokenSequence seq;
    seq.ids.push_back(Vocabulary::kBos);
    for (const auto& tok : tokenize(text)) seq.ids.push_back(vocab.id(tok));
    return seq;
}

ModelParams ModelParams::init(const ModelShape& shape, std::uint64_t seed) {
    if (shape.vocab < Vocabulary::kReserved || shape.dim == 0 || shape.hidden == 0 || shape.window == 0)
        throw InputError("model shape must have positive dimensions");
    ModelParams p;
    p.shape = shape;
    Rng rng(seed);
    auto fill = [&](std::vector<double>& block, std::size_t n) {
        block.resize(n);
        for (auto& x : block) x = rng.uniform(-0.1, 0.1);
    };
    const std::size_t v = shape.vocab, d = shape.dim, h = shape.hidden, w = shape.window;
    fill(p.embeddings, v * d);
    fill(p.w1, w * d * h);
    fill(p.b1, h);
    fill(p.w2, h * v);
    fill(p.b2, v);
    return p;
}

void ModelParams::check_shape() const {
    const std::size_t v = shape.vocab, d = shape.dim, h = shape.hidden, w = shape.window;
    if (embeddings.size() != v * d || w1.size() != w * d * h || b1.size() != h || w2.size() != h * v ||
        b2.size() != v)
        throw InputError("model parameters do not match their shape");
}

bool ModelParams::all_finite() const {
    auto ok = [](const std::vector<double>& b) {
        return std::all_of(b.begin(), b.end(), [](double x) { return std::isfinite(x); });
    };
    return ok(embeddings) && ok(w1) && ok(b1) && ok(w2) && ok(b2);
}

GradientVector::GradientVector(std::uint32_t dim, std::vector<TokenId> ids, std::vector<double> rows)
    : dim_(dim), ids_(std::move(ids)), rows_(std::move(rows)) {
    if (rows_.size() != ids_.size() * dim_) throw std::invalid_argument("GradientVector: rows/ids mismatch");
    if (!std::is_sorted(ids_.begin(), ids_.end()) ||
        std::adjacent_find(ids_.begin(), ids_.end()) != ids_.end())
        throw std::invalid_argument("GradientVector: ids must be strictly ascending");
    for (double x : rows_) squared_norm_ += x * x;
    norm_ = std::sqrt(squared_norm_);
}

std::vector<double> GradientVector::row(TokenId id) const {
    auto it = std::lower_bound(ids_.begin(), ids_.end(), id);
    if (it == ids_.end() || *it != id) return std::vector<double>(dim_, 0.0);
    auto r = row_at(static_cast<std::size_t>(it - ids_.begin()));
    return {r.begin(), r.end()};
}

double GradientVector::recompute_norm() const {
    double s = 0.0;
    for (double x : rows_) s += x * x;
    return std::sqrt(s);
}

GradientVector GradientVector::scaled(double alpha) const {
    auto rows = rows_;
    for (auto& x : rows) x *= alpha;
    return GradientVector(dim_, ids_, std::move(rows));
}

double forward_loss(const ModelParams& params, const TokenSequence& seq) {
    check_sequence(params, seq);
    Scratch s(params.shape);
    double total = 0.0;
    for (std::size_t t = 1; t < seq.ids.size(); ++t) {
        fill_context(seq.ids, t, s);
        forward_position(params, s);
        total += softmax_nll(s, seq.ids[t]);
    }
    return total / static_cast<double>(seq.ids.size() - 1);
}

GradientVector grad_embeddings(const ModelParams& params, const TokenSequence& seq) {
    check_sequence(params, seq);
    const std::size_t d = params.shape.dim;
    Scratch s(params.shape);
    const double scale = 1.0 / static_cast<double>(seq.ids.size() - 1);
    std::map<TokenId, std::vector<double>> rows;
    for (std::size_t t = 1; t < seq.ids.size(); ++t) {
        fill_context(seq.ids, t, s);
        forward_position(params, s);
        softmax_nll(s, seq.ids[t]);
        backward_position(params, s, seq.ids[t], scale, nullptr);
        for (std::size_t j = 0; j < s.ctx.size(); ++j) {
            auto& row = rows[s.ctx[j]];
            row.resize(d, 0.0);
            for (std::size_t c = 0; c < d; ++c) row[c] += s.dx[j * d + c];
        }
    }
    std::vector<TokenId> ids;
    std::vector<double> flat;
    ids.reserve(rows.size());
    flat.reserve(rows.size() * d);
    for (auto& [id, row] : rows) {
        ids.push_back(id);
        flat.insert(flat.end(), row.begin(), row.end());
    }
    return GradientVector(static_cast<std::uint32_t>(d), std::move(ids), std::move(flat));
}

double loss_and_full_gradient(const ModelParams& params, const TokenSequence& seq, FullGradient& grad) {
    check_sequence(params, seq);
    grad.embeddings.assign(params.embeddings.size(), 0.0);
    grad.w1.assign(params.w1.size(), 0.0);
    grad.b1.assign(params.b1.size(), 0.0);
    grad.w2.assign(params.w2.size(), 0.0);
    grad.b2.assign(params.b2.size(), 0.0);
    const std::size_t d = params.shape.dim;
    Scratch s(params.shape);
    const double scale = 1.0 / static_cast<double>(seq.ids.size() - 1);
    double total = 0.0;
    for (std::size_t t = 1; t < seq.ids.size(); ++t) {
        fill_context(seq.ids, t, s);
        forward_position(params, s);
        total += softmax_nll(s, seq.ids[t]);
        backward_position(params, s, seq.ids[t], scale, &grad);
        for (std::size_t j = 0; j < s.ctx.size(); ++j)
            for (std::size_t c = 0; c < d; ++c) grad.embeddings[s.ctx[j] * d + c] += s.dx[j * d + c];
    }
    return total * scale;
}

TokenSequence training_sequence(const Document& doc, const Vocabulary& vocab) {
    auto seq = encode(doc.joined_text(), vocab);
    seq.ids.push_back(Vocabulary::kEos);
    return seq;
}

Model train(const std::vector<Document>& corpus, const TrainConfig& config) {
    if (corpus.empty()) throw InputError("train: empty corpus");
    if (config.epochs == 0) throw InputError("train: epochs must be >= 1");
    if (!(config.learning_rate > 0.0)) throw InputError("train: learning rate must be positive");

    std::vector<std::string> texts;
    texts.reserve(corpus.size() + 2);
    for (const auto& d : corpus) texts.push_back(d.joined_text());
    texts.emplace_back(kAnswerTemplate);
    texts.emplace_back(kConfidencePrompt);

    Model model;
    model.train_config = config;
    model.vocab = Vocabulary::build(texts);
    ModelShape shape{static_cast<std::uint32_t>(model.vocab.size()), config.dim, config.hidden, config.window};
    model.params = ModelParams::init(shape, config.seed);

    std::vector<TokenSequence> seqs;
    seqs.reserve(corpus.size());
    for (const auto& d : corpus) seqs.push_back(training_sequence(d, model.vocab));

    auto mean_loss = [&] {
        double s = 0.0;
        for (const auto& q : seqs) s += forward_loss(model.params, q);
        return s / static_cast<double>(seqs.size());
    };
    model.loss_curve.push_back(mean_loss());

    Rng rng(config.seed ^ 0x9e3779b97f4a7c15ULL);
    std::vector<std::size_t> order(seqs.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    FullGradient g;
    auto step = [lr = config.learning_rate](std::vector<double>& w, const std::vector<double>& dw) {
        for (std::size_t i = 0; i < w.size(); ++i) w[i] -= lr * dw[i];
    };
    for (std::uint32_t epoch = 0; epoch < config.epochs; ++epoch) {
        rng.shuffle(order);
        for (auto i : order) {
            loss_and_full_gradient(model.params, seqs[i], g);
            step(model.params.embeddings, g.embeddings);
            step(model.params.w1, g.w1);
            step(model.params.b1, g.b1);
            step(model.params.w2, g.w2);
            step(model.params.b2, g.b2);
        }
        model.loss_curve.push_back(mean_loss());
    }
    if (!model.params.all_finite()) throw ComputeError("train: parameters diverged (non-finite)");
    return model;
}

std::string generate_greedy(const Model& model, std::string_view prompt, std::size_t max_tokens) {
    const auto& p = model.params;
    std::vector<TokenId> ids = encode(prompt, model.vocab).ids;
    Scratch s(p.shape);
    std::string out;
    for (std::size_t step = 0; step < max_tokens; ++step) {
        fill_context(ids, ids.size(), s);
        forward_position(p, s);
        TokenId best = 0;
        for (TokenId c = 1; c < p.shape.vocab; ++c)
            if (s.probs[c] > s.probs[best]) best = c;
        if (best == Vocabulary::kEos) break;
        ids.push_back(best);
        if (!out.empty()) out += ' ';
        out += model.vocab.token(best);
    }
    return out;
}

std::string Model::serialize() const {
    params.check_shape();
    BinaryWriter w;
    w.raw(kCheckpointMagic);
    w.u32(kFormatVersion);
    w.u32(params.shape.vocab);
    w.u32(params.shape.dim);
    w.u32(params.shape.hidden);
    w.u32(params.shape.window);
    w.u64(train_config.seed);
    w.u32(train_config.epochs);
    w.f64(train_config.learning_rate);
    w.u64(vocab.size());
    for (const auto& t : vocab.tokens()) w.str(t);
    write_block(w, params.embeddings);
    write_block(w, params.w1);
    write_block(w, params.b1);
    write_block(w, params.w2);
    write_block(w, params.b2);
    write_block(w, loss_curve);
    const auto checksum = fnv1a64(w.bytes());
    w.u64(checksum);
    return w.bytes();
}

Model Model::deserialize(std::string_view bytes) {
    if (bytes.size() < kCheckpointMagic.size() + 8) throw InputError("checkpoint: truncated file");
    if (bytes.substr(0, kCheckpointMagic.size()) != kCheckpointMagic) throw InputError("checkpoint: bad magic");
    const auto body = bytes.substr(0, bytes.size() - 8);
    BinaryReader tail(bytes.substr(bytes.size() - 8), "checkpoint");
    if (tail.u64() != fnv1a64(body)) throw InputError("checkpoint: checksum mismatch (corrupted file)");

    BinaryReader r(body, "checkpoint");
    r.raw(kCheckpointMagic.size());
    const auto version = r.u32();
    if (version != kFormatVersion) throw InputError("checkpoint: unsupported format version " + std::to_string(version));
    Model m;
    auto& sh = m.params.shape;
    sh.vocab = r.u32();
    sh.dim = r.u32();
    sh.hidden = r.u32();
    sh.window = r.u32();
    m.train_config.seed = r.u64();
    m.train_config.epochs = r.u32();
    m.train_config.learning_rate = r.f64();
    m.train_config.dim = sh.dim;
    m.train_config.hidden = sh.hidden;
    m.train_config.window = sh.window;
    const auto nv = r.u64();
    if (nv != sh.vocab) throw InputError("checkpoint: vocabulary size mismatch");
    std::vector<std::string> tokens(nv);
    for (auto& t : tokens) t = r.str();
    m.vocab = Vocabulary::from_tokens(std::move(tokens));
    const std::size_t v = sh.vocab, d = sh.dim, h = sh.hidden, w = sh.window;
    m.params.embeddings = read_block(r, v * d, "embeddings");
    m.params.w1 = read_block(r, w * d * h, "w1");
    m.params.b1 = read_block(r, h, "b1");
    m.params.w2 = read_block(r, h * v, "w2");
    m.params.b2 = read_block(r, v, "b2");
    const auto ncurve = r.u64();
    m.loss_curve.resize(ncurve);
    for (auto& x : m.loss_curve) x = r.f64();
    if (!r.at_end()) throw InputError("checkpoint: trailing bytes");
    if (!m.params.all_finite()) throw InputError("checkpoint: non-finite parameters");
    return m;
}

void Model::save(const std::string& path) const { write_file_atomic(path, serialize()); }

Model Model::load(const std::string& path) { return deserialize(read_file(path)); }

}  // namespace tracvc
