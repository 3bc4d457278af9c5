#include "tracvc/influence.hpp"

#include <algorithm>
#include <cmath>

#include <json.hpp>

namespace tracvc {

std::string completion_text(const CompletionRecord& record, bool include_confidence) {
    record.validate();
    if (include_confidence && !record.confidence) throw InputError("completion: verbalized confidence absent");
    std::string text = record.question + " " + record.answer + " " + record.prompt;
    if (include_confidence) text += " " + *record.confidence;
    return text;
}

TokenSequence completion_sequence(const CompletionRecord& record, bool include_confidence, const Vocabulary& vocab) {
    return encode(completion_text(record, include_confidence), vocab);
}

double cosine(const GradientVector& g1, const GradientVector& g2) {
    if (g1.dim() != g2.dim()) throw ComputeError("cosine: gradient widths differ");
    if (!(g1.norm() > 0.0) || !(g2.norm() > 0.0)) throw ComputeError("degenerate gradient");
    const auto& a = g1.ids();
    const auto& b = g2.ids();
    double dot = 0.0;
    std::size_t i = 0, j = 0;
    while (i < a.size() && j < b.size()) {
        if (a[i] < b[j]) {
            ++i;
        } else if (b[j] < a[i]) {
            ++j;
        } else {
            const auto ra = g1.row_at(i);
            const auto rb = g2.row_at(j);
            for (std::size_t c = 0; c < ra.size(); ++c) dot += ra[c] * rb[c];
            ++i;
            ++j;
        }
    }
    // sqrt(a * b) rather than sqrt(a) * sqrt(b): for g1 == g2 the dot product
    // and the squared norm are the same sum, so the result is exactly 1.
    return std::clamp(dot / std::sqrt(g1.squared_norm() * g2.squared_norm()), -1.0, 1.0);
}

GradientVector document_gradient(const Model& model, const Document& doc) {
    return grad_embeddings(model.params, encode(doc.joined_text(), model.vocab));
}

namespace {

double psi_variant(const Model& model, const Document& doc, const CompletionRecord& record, bool with_c) {
    const auto gc = grad_embeddings(model.params, completion_sequence(record, with_c, model.vocab));
    return cosine(document_gradient(model, doc), gc);
}

}  // namespace

double psi(const Model& model, const Document& doc, const CompletionRecord& record) {
    return psi_variant(model, doc, record, true);
}

double psi_neg_c(const Model& model, const Document& doc, const CompletionRecord& record) {
    return psi_variant(model, doc, record, false);
}

std::vector<InfluenceRecord> score_instance(const Model& model, std::string_view instance_id,
                                            const CompletionRecord& record,
                                            std::span<const RetrievedDocument> retrieved, bool cache_completion) {
    const auto seq_c = completion_sequence(record, true, model.vocab);
    const auto seq_neg = completion_sequence(record, false, model.vocab);
    GradientVector cached_c, cached_neg;
    if (cache_completion) {
        cached_c = grad_embeddings(model.params, seq_c);
        cached_neg = grad_embeddings(model.params, seq_neg);
    }

    std::vector<InfluenceRecord> out;
    out.reserve(retrieved.size());
    for (const auto& r : retrieved) {
        if (r.doc == nullptr) throw InputError("score_instance: null document");
        InfluenceRecord rec;
        rec.instance_id = std::string(instance_id);
        rec.doc_id = r.doc->doc_id;
        rec.set = r.set;
        rec.source = r.doc->source;
        rec.bm25_rank = r.rank;
        try {
            const auto gd = document_gradient(model, *r.doc);
            if (cache_completion) {
                rec.psi = cosine(gd, cached_c);
                rec.psi_neg_c = cosine(gd, cached_neg);
            } else {
                rec.psi = cosine(gd, grad_embeddings(model.params, seq_c));
                rec.psi_neg_c = cosine(gd, grad_embeddings(model.params, seq_neg));
            }
        } catch (const ComputeError& e) {
            throw ComputeError("instance '" + rec.instance_id + "', document '" + rec.doc_id + "': " + e.what());
        }
        if (!std::isfinite(rec.psi) || !std::isfinite(rec.psi_neg_c))
            throw ComputeError("instance '" + rec.instance_id + "', document '" + rec.doc_id + "': non-finite score");
        out.push_back(std::move(rec));
    }
    return out;
}

std::string influence_records_to_jsonl(std::span<const InfluenceRecord> records) {
    std::string out;
    for (const auto& r : records) {
        nlohmann::ordered_json j;
        j["instance"] = r.instance_id;
        j["doc"] = r.doc_id;
        j["set"] = to_string(r.set);
        j["source"] = to_string(r.source);
        j["rank"] = r.bm25_rank;
        j["psi"] = r.psi;
        j["psi_neg_c"] = r.psi_neg_c;
        out += j.dump();
        out += '\n';
    }
    return out;
}

std::vector<InfluenceRecord> influence_records_from_jsonl(std::string_view contents, std::string_view origin) {
    std::vector<InfluenceRecord> out;
    std::size_t line_no = 0, start = 0;
    while (start < contents.size()) {
        auto end = contents.find('\n', start);
        if (end == std::string_view::npos) end = contents.size();
        const auto line = contents.substr(start, end - start);
        start = end + 1;
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string_view::npos) continue;
        try {
            const auto j = nlohmann::json::parse(line);
            InfluenceRecord r;
            r.instance_id = j.at("instance").get<std::string>();
            r.doc_id = j.at("doc").get<std::string>();
            r.set = parse_set_tag(j.at("set").get<std::string>());
            r.source = parse_source_tag(j.at("source").get<std::string>());
            r.bm25_rank = j.at("rank").get<int>();
            r.psi = j.at("psi").get<double>();
            r.psi_neg_c = j.at("psi_neg_c").get<double>();
            out.push_back(std::move(r));
        } catch (const nlohmann::json::exception& e) {
            throw InputError(std::string(origin) + ":" + std::to_string(line_no) + ": " + e.what());
        } catch (const InputError& e) {
            throw InputError(std::string(origin) + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }
    return out;
}

}  // namespace tracvc
