#include "tracvc/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include <json.hpp>

namespace tracvc {

namespace {

// Bytes >= 0x80 belong to multi-byte UTF-8 sequences and stay inside tokens.
bool is_token_byte(unsigned char c) { return std::isalnum(c) != 0 || c >= 0x80; }

bool blank(std::string_view s) { return s.find_first_not_of(" \t\r\n") == std::string_view::npos; }

constexpr std::string_view kIndexMagic = "TVCIDX\x00\x01";

}  // namespace

std::vector<std::string> tokenize(std::string_view text) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : text) {
        const auto c = static_cast<unsigned char>(ch);
        if (is_token_byte(c)) {
            cur.push_back(c < 0x80 ? static_cast<char>(std::tolower(c)) : ch);
        } else if (!cur.empty()) {
            out.push_back(std::move(cur));
            cur.clear();
        }
    }
    if (!cur.empty()) out.push_back(std::move(cur));
    return out;
}

std::string Document::joined_text() const {
    std::string out;
    for (const auto& [name, text] : fields) {
        if (!out.empty()) out += ' ';
        out += text;
    }
    return out;
}

std::vector<Document> parse_documents_jsonl(std::string_view contents, std::string_view origin) {
    std::vector<Document> docs;
    std::size_t line_no = 0;
    std::size_t start = 0;
    while (start < contents.size()) {
        auto end = contents.find('\n', start);
        if (end == std::string_view::npos) end = contents.size();
        auto line = contents.substr(start, end - start);
        start = end + 1;
        ++line_no;
        if (blank(line)) continue;
        auto fail = [&](const std::string& msg) {
            return InputError(std::string(origin) + ":" + std::to_string(line_no) + ": " + msg);
        };
        nlohmann::ordered_json j;
        try {
            j = nlohmann::ordered_json::parse(line);
        } catch (const nlohmann::json::parse_error& e) {
            throw fail(std::string("malformed JSON: ") + e.what());
        }
        if (!j.is_object() || !j.contains("id") || !j["id"].is_string()) throw fail("missing string \"id\"");
        if (!j.contains("source") || !j["source"].is_string()) throw fail("missing string \"source\"");
        if (!j.contains("fields") || !j["fields"].is_object() || j["fields"].empty())
            throw fail("\"fields\" must be a non-empty object");
        Document d;
        d.doc_id = j["id"].get<std::string>();
        if (d.doc_id.empty()) throw fail("empty \"id\"");
        try {
            d.source = parse_source_tag(j["source"].get<std::string>());
        } catch (const InputError& e) {
            throw fail(e.what());
        }
        for (const auto& [name, value] : j["fields"].items()) {
            if (!value.is_string()) throw fail("field \"" + name + "\" is not a string");
            auto text = value.get<std::string>();
            if (blank(text)) throw fail("field \"" + name + "\" is empty");
            d.fields.emplace_back(name, std::move(text));
        }
        docs.push_back(std::move(d));
    }
    return docs;
}

std::vector<Document> read_documents_jsonl(const std::string& path) {
    return parse_documents_jsonl(read_file(path), path);
}

InvertedIndex InvertedIndex::build(std::vector<Document> documents, Bm25Params params) {
    InvertedIndex idx;
    idx.params_ = params;
    idx.docs_ = std::move(documents);
    for (std::size_t i = 0; i < idx.docs_.size(); ++i) {
        const auto& d = idx.docs_[i];
        if (!idx.by_id_.emplace(d.doc_id, i).second) throw InputError("duplicate doc_id '" + d.doc_id + "'");
        if (d.fields.empty()) throw InputError("document '" + d.doc_id + "' has no fields");
        for (const auto& [name, text] : d.fields)
            if (blank(text)) throw InputError("document '" + d.doc_id + "': field '" + name + "' is empty");
    }

    const auto n = idx.docs_.size();
    for (std::size_t i = 0; i < n; ++i) {
        for (const auto& [name, text] : idx.docs_[i].fields) {
            auto& fs = idx.fields_[name];
            if (fs.lengths.empty()) {
                fs.lengths.assign(n, 0);
                fs.present.assign(n, false);
            }
            if (fs.present[i]) throw InputError("document '" + idx.docs_[i].doc_id + "': repeated field '" + name + "'");
            const auto tokens = tokenize(text);
            fs.present[i] = true;
            fs.lengths[i] = static_cast<std::uint32_t>(tokens.size());
            std::map<std::string_view, std::uint32_t> tf;
            for (const auto& t : tokens) ++tf[t];
            for (const auto& [term, count] : tf) {
                auto it = fs.postings.find(term);
                if (it == fs.postings.end()) it = fs.postings.emplace(std::string(term), std::vector<Posting>{}).first;
                it->second.push_back({static_cast<std::uint32_t>(i), count});
            }
        }
    }
    idx.finalize();
    return idx;
}

void InvertedIndex::finalize() {
    for (auto& [name, fs] : fields_) {
        fs.total_length = 0;
        fs.docs_with_field = 0;
        for (std::size_t i = 0; i < fs.lengths.size(); ++i) {
            if (!fs.present[i]) continue;
            fs.total_length += fs.lengths[i];
            ++fs.docs_with_field;
        }
        fs.avg_length = fs.docs_with_field == 0
                            ? 0.0
                            : static_cast<double>(fs.total_length) / static_cast<double>(fs.docs_with_field);
    }
}

std::size_t InvertedIndex::doc_position(std::string_view doc_id) const {
    auto it = by_id_.find(doc_id);
    if (it == by_id_.end()) throw InputError("unknown doc_id '" + std::string(doc_id) + "'");
    return it->second;
}

const Document& InvertedIndex::document(std::string_view doc_id) const { return docs_[doc_position(doc_id)]; }

std::size_t InvertedIndex::document_frequency(std::string_view field, std::string_view term) const {
    auto f = fields_.find(field);
    if (f == fields_.end()) return 0;
    auto p = f->second.postings.find(term);
    return p == f->second.postings.end() ? 0 : p->second.size();
}

double InvertedIndex::avg_field_length(std::string_view field) const {
    auto f = fields_.find(field);
    if (f == fields_.end()) throw InputError("unknown field '" + std::string(field) + "'");
    return f->second.avg_length;
}

std::size_t InvertedIndex::vocabulary_size() const {
    std::set<std::string_view> vocab;
    for (const auto& [name, fs] : fields_)
        for (const auto& [term, plist] : fs.postings) vocab.insert(term);
    return vocab.size();
}

double InvertedIndex::idf(std::size_t df) const {
    const double n = static_cast<double>(docs_.size());
    const double d = static_cast<double>(df);
    return std::log(1.0 + (n - d + 0.5) / (d + 0.5));
}

double InvertedIndex::term_weight(std::uint32_t tf, std::uint32_t dl, double avgdl, double idf_value) const {
    const double f = static_cast<double>(tf);
    const double norm = params_.k1 * (1.0 - params_.b + params_.b * static_cast<double>(dl) / avgdl);
    return idf_value * f * (params_.k1 + 1.0) / (f + norm);
}

double InvertedIndex::bm25_field_score(std::string_view field, const std::vector<std::string>& query_terms,
                                       std::string_view doc_id) const {
    auto f = fields_.find(field);
    if (f == fields_.end()) throw InputError("unknown field '" + std::string(field) + "'");
    const auto pos = doc_position(doc_id);
    const auto& fs = f->second;
    if (!fs.present[pos]) return 0.0;
    std::set<std::string_view> distinct(query_terms.begin(), query_terms.end());
    double score = 0.0;
    for (auto term : distinct) {
        auto p = fs.postings.find(term);
        if (p == fs.postings.end()) continue;
        const auto& plist = p->second;
        auto hit = std::lower_bound(plist.begin(), plist.end(), pos,
                                    [](const Posting& a, std::size_t d) { return a.doc < d; });
        if (hit == plist.end() || hit->doc != pos) continue;
        score += term_weight(hit->tf, fs.lengths[pos], fs.avg_length, idf(plist.size()));
    }
    return score;
}

RetrievalResults InvertedIndex::retrieve_top_k(std::string_view query_text, std::size_t k) const {
    if (k == 0) throw InputError("retrieve_top_k: k must be >= 1");
    RetrievalResults out;
    const auto tokens = tokenize(query_text);
    if (tokens.empty()) {
        out.empty_query = true;
        return out;
    }
    const std::set<std::string_view> distinct(tokens.begin(), tokens.end());
    const auto n = docs_.size();
    std::vector<double> best(n, 0.0);
    std::vector<const std::string*> best_field(n, nullptr);
    std::vector<double> acc(n);

    // fields_ iterates in name order, so strict '>' keeps the smallest field
    // name on equal scores.
    for (const auto& [name, fs] : fields_) {
        std::fill(acc.begin(), acc.end(), 0.0);
        for (auto term : distinct) {
            auto p = fs.postings.find(term);
            if (p == fs.postings.end()) continue;
            const double w_idf = idf(p->second.size());
            for (const auto& post : p->second)
                acc[post.doc] += term_weight(post.tf, fs.lengths[post.doc], fs.avg_length, w_idf);
        }
        for (std::size_t i = 0; i < n; ++i) {
            if (acc[i] > best[i]) {
                best[i] = acc[i];
                best_field[i] = &name;
            }
        }
    }

    std::vector<std::size_t> order;
    for (std::size_t i = 0; i < n; ++i)
        if (best[i] > 0.0) order.push_back(i);
    auto better = [&](std::size_t a, std::size_t b) {
        if (best[a] != best[b]) return best[a] > best[b];
        return docs_[a].doc_id < docs_[b].doc_id;
    };
    const auto keep = std::min(k, order.size());
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(keep), order.end(), better);
    order.resize(keep);
    for (std::size_t r = 0; r < order.size(); ++r) {
        const auto i = order[r];
        out.hits.push_back({docs_[i].doc_id, best[i], static_cast<int>(r + 1), *best_field[i]});
    }
    return out;
}

std::string InvertedIndex::serialize() const {
    BinaryWriter w;
    w.raw(kIndexMagic);
    w.u32(kFormatVersion);
    w.f64(params_.k1);
    w.f64(params_.b);
    w.u64(docs_.size());
    for (const auto& d : docs_) {
        w.str(d.doc_id);
        w.u8(static_cast<std::uint8_t>(d.source));
        w.u64(d.fields.size());
        for (const auto& [name, text] : d.fields) {
            w.str(name);
            w.str(text);
        }
    }
    w.u64(fields_.size());
    for (const auto& [name, fs] : fields_) {
        w.str(name);
        for (std::size_t i = 0; i < docs_.size(); ++i) {
            w.u8(fs.present[i] ? 1 : 0);
            w.u32(fs.lengths[i]);
        }
        w.u64(fs.postings.size());
        for (const auto& [term, plist] : fs.postings) {
            w.str(term);
            w.u64(plist.size());
            for (const auto& p : plist) {
                w.u32(p.doc);
                w.u32(p.tf);
            }
        }
    }
    return w.bytes();
}

InvertedIndex InvertedIndex::deserialize(std::string_view bytes) {
    BinaryReader r(bytes, "index");
    if (r.raw(kIndexMagic.size()) != kIndexMagic) throw InputError("index: bad magic");
    const auto version = r.u32();
    if (version != kFormatVersion)
        throw InputError("index: format version " + std::to_string(version) + ", expected " +
                         std::to_string(kFormatVersion));
    InvertedIndex idx;
    idx.params_.k1 = r.f64();
    idx.params_.b = r.f64();
    const auto n = r.u64();
    for (std::uint64_t i = 0; i < n; ++i) {
        Document d;
        d.doc_id = r.str();
        const auto tag = r.u8();
        if (tag > 1) throw InputError("index: bad source tag");
        d.source = static_cast<SourceTag>(tag);
        const auto nf = r.u64();
        for (std::uint64_t f = 0; f < nf; ++f) {
            auto name = r.str();
            auto text = r.str();
            d.fields.emplace_back(std::move(name), std::move(text));
        }
        if (!idx.by_id_.emplace(d.doc_id, idx.docs_.size()).second) throw InputError("index: duplicate doc_id");
        idx.docs_.push_back(std::move(d));
    }
    const auto nfields = r.u64();
    for (std::uint64_t f = 0; f < nfields; ++f) {
        auto name = r.str();
        FieldStats fs;
        fs.lengths.resize(n);
        fs.present.resize(n);
        for (std::uint64_t i = 0; i < n; ++i) {
            fs.present[i] = r.u8() != 0;
            fs.lengths[i] = r.u32();
        }
        const auto nterms = r.u64();
        for (std::uint64_t t = 0; t < nterms; ++t) {
            auto term = r.str();
            std::vector<Posting> plist(r.u64());
            for (auto& p : plist) {
                p.doc = r.u32();
                p.tf = r.u32();
                if (p.doc >= n) throw InputError("index: posting out of range");
            }
            fs.postings.emplace(std::move(term), std::move(plist));
        }
        idx.fields_.emplace(std::move(name), std::move(fs));
    }
    if (!r.at_end()) throw InputError("index: trailing bytes");
    idx.finalize();
    return idx;
}

void InvertedIndex::save(const std::string& path) const { write_file_atomic(path, serialize()); }

InvertedIndex InvertedIndex::load(const std::string& path) { return deserialize(read_file(path)); }

RetrievalSets retrieve_sets(const InvertedIndex& index, const CompletionRecord& record, std::size_t k) {
    record.validate();
    if (!record.confidence) throw InputError("retrieve_sets: verbalized confidence required");
    RetrievalSets sets;
    sets.content = index.retrieve_top_k(record.question + " " + record.answer, k);
    sets.confidence = index.retrieve_top_k(record.prompt + " " + *record.confidence, k);
    return sets;
}

}  // namespace tracvc
