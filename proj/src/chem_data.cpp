#include "molembed/chem_data.hpp"

#include <algorithm>
#include <cstdio>
#include <set>
#include <unordered_set>

#include <json.hpp>

#include "molembed/csv.hpp"
#include "molembed/errors.hpp"

namespace molembed::chem {

std::vector<std::string> tokenize(const std::string& smiles) {
    if (smiles.empty()) throw InvalidSmiles("empty string");
    std::vector<std::string> out;
    out.reserve(smiles.size());
    for (char c : smiles) {
        unsigned char u = static_cast<unsigned char>(c);
        if (u < 0x21 || u > 0x7e)
            throw InvalidSmiles("non-printable or non-ASCII character (code " +
                                std::to_string(int(u)) + ")");
        out.emplace_back(1, c);
    }
    return out;
}

TokenVocab build_vocab(const std::vector<std::string>& corpus) {
    if (corpus.empty()) throw EmptyCorpus("no strings to build a vocabulary from");
    std::map<std::string, int64_t> counts;
    for (const auto& s : corpus)
        for (const auto& tok : tokenize(s)) counts[tok] += 1;

    std::vector<std::pair<std::string, int64_t>> items(counts.begin(), counts.end());
    std::sort(items.begin(), items.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });

    TokenVocab v;
    for (const auto& [tok, n] : items) {
        v.index_of[tok] = static_cast<int>(v.tokens.size());
        v.tokens.push_back(tok);
        v.counts.push_back(n);
    }
    for (const char* special : {kPadToken, kStartToken, kEndToken}) {
        v.index_of[special] = static_cast<int>(v.tokens.size());
        v.tokens.push_back(special);
        v.counts.push_back(0);
    }
    v.pad_id = v.index_of[kPadToken];
    v.start_id = v.index_of[kStartToken];
    v.end_id = v.index_of[kEndToken];
    return v;
}

std::string TokenVocab::to_json() const {
    nlohmann::json j;
    j["tokens"] = tokens;
    j["counts"] = counts;
    return j.dump(2);
}

TokenVocab TokenVocab::from_json(const std::string& text) {
    nlohmann::json j = nlohmann::json::parse(text);
    TokenVocab v;
    v.tokens = j.at("tokens").get<std::vector<std::string>>();
    v.counts = j.at("counts").get<std::vector<int64_t>>();
    if (v.tokens.size() != v.counts.size())
        throw SchemaError("vocab tokens/counts length mismatch");
    for (size_t i = 0; i < v.tokens.size(); ++i) v.index_of[v.tokens[i]] = static_cast<int>(i);
    auto find = [&](const char* t) {
        auto it = v.index_of.find(t);
        if (it == v.index_of.end()) throw SchemaError(std::string("vocab missing marker ") + t);
        return it->second;
    };
    v.pad_id = find(kPadToken);
    v.start_id = find(kStartToken);
    v.end_id = find(kEndToken);
    return v;
}

EncodedMolecule encode(const std::string& smiles, const TokenVocab& vocab, int l_max) {
    auto toks = tokenize(smiles);
    if (static_cast<int>(toks.size()) + 1 > l_max)
        throw Overlength("token count " + std::to_string(toks.size()) + " + end marker exceeds L_max " +
                         std::to_string(l_max));
    EncodedMolecule m;
    m.smiles = smiles;
    m.token_ids.assign(l_max, vocab.pad_id);
    for (size_t i = 0; i < toks.size(); ++i) {
        auto it = vocab.index_of.find(toks[i]);
        if (it == vocab.index_of.end()) throw UnknownToken("'" + toks[i] + "' not in vocabulary");
        m.token_ids[i] = it->second;
    }
    m.token_ids[toks.size()] = vocab.end_id;
    m.valid_len = static_cast<int>(toks.size()) + 1;
    return m;
}

std::string decode(const std::vector<int>& token_ids, const TokenVocab& vocab) {
    std::string out;
    for (int id : token_ids) {
        if (id == vocab.end_id || id == vocab.pad_id) break;
        if (id == vocab.start_id) continue;
        if (id < 0 || id >= vocab.size()) throw UnknownToken("id " + std::to_string(id));
        out += vocab.tokens[id];
    }
    return out;
}

int scan_l_max(const std::vector<std::string>& corpus) {
    if (corpus.empty()) throw EmptyCorpus("no strings to scan");
    size_t longest = 0;
    for (const auto& s : corpus) longest = std::max(longest, tokenize(s).size());
    return static_cast<int>(longest) + 1;
}

std::vector<std::string> Dataset::smiles_list() const {
    std::vector<std::string> out;
    out.reserve(records.size());
    for (const auto& r : records) out.push_back(r.smiles);
    return out;
}

std::vector<double> Dataset::targets() const {
    std::vector<double> out;
    out.reserve(records.size());
    for (const auto& r : records) out.push_back(r.target.value_or(0.0));
    return out;
}

std::vector<double> Dataset::descriptor_column(const std::string& name) const {
    auto it = std::find(descriptor_names.begin(), descriptor_names.end(), name);
    if (it == descriptor_names.end()) throw SchemaError("no descriptor column '" + name + "'");
    size_t k = static_cast<size_t>(it - descriptor_names.begin());
    std::vector<double> out;
    out.reserve(records.size());
    for (const auto& r : records) out.push_back(r.descriptors[k]);
    return out;
}

Dataset load_dataset(const std::string& path, const LoadOptions& opts) {
    csv::Table t = csv::read_file(path);
    int smiles_col = t.require_column("smiles");
    int target_col = t.column("target");
    int label_col = t.column("label");
    if (target_col >= 0 && label_col >= 0)
        throw SchemaError("file has both 'target' and 'label' columns");

    Dataset ds;
    ds.task_kind = label_col >= 0 ? TaskKind::Classification : TaskKind::Regression;
    if (opts.classify_threshold && target_col >= 0) ds.task_kind = TaskKind::Classification;

    std::vector<int> desc_cols;
    for (size_t c = 0; c < t.header.size(); ++c) {
        int ci = static_cast<int>(c);
        if (ci == smiles_col || ci == target_col || ci == label_col) continue;
        desc_cols.push_back(ci);
        ds.descriptor_names.push_back(t.header[c]);
    }

    std::unordered_set<std::string> seen;
    size_t dropped_dup = 0, dropped_missing = 0;
    for (size_t r = 0; r < t.rows.size(); ++r) {
        const auto& row = t.rows[r];
        const std::string& smi = row[smiles_col];
        if (smi.empty()) throw InvalidSmiles("empty smiles at row " + std::to_string(r));
        if (!seen.insert(smi).second) {
            ++dropped_dup;
            continue;
        }
        DataRecord rec;
        rec.smiles = smi;
        bool missing = false;
        if (target_col >= 0 || label_col >= 0) {
            const std::string& cell = row[target_col >= 0 ? target_col : label_col];
            if (cell.empty()) {
                missing = true;
            } else {
                double v = csv::parse_double(cell, static_cast<long>(r));
                if (label_col >= 0) {
                    if (v != 0.0 && v != 1.0)
                        throw ParseError("label must be 0 or 1, got '" + cell + "'",
                                         static_cast<long>(r));
                } else if (opts.classify_threshold) {
                    v = v >= *opts.classify_threshold ? 1.0 : 0.0;
                }
                rec.target = v;
            }
        }
        for (int c : desc_cols) {
            const std::string& cell = row[c];
            if (cell.empty()) {
                missing = true;
                break;
            }
            rec.descriptors.push_back(csv::parse_double(cell, static_cast<long>(r)));
        }
        if (missing) {
            ++dropped_missing;
            seen.erase(smi);  // a later complete row with the same smiles may be kept
            continue;
        }
        ds.records.push_back(std::move(rec));
    }
    if (opts.verbose)
        std::fprintf(stderr, "loaded %zu records from %s (%zu duplicate, %zu incomplete dropped)\n",
                     ds.records.size(), path.c_str(), dropped_dup, dropped_missing);
    return ds;
}

void save_dataset(const std::string& path, const Dataset& ds) {
    csv::Table t;
    t.header.push_back("smiles");
    bool has_target = false;
    for (const auto& r : ds.records)
        if (r.target) has_target = true;
    if (has_target)
        t.header.push_back(ds.task_kind == TaskKind::Classification ? "label" : "target");
    for (const auto& n : ds.descriptor_names) t.header.push_back(n);
    for (const auto& r : ds.records) {
        std::vector<std::string> row;
        row.push_back(r.smiles);
        if (has_target) row.push_back(csv::format_double(r.target.value_or(0.0)));
        for (double d : r.descriptors) row.push_back(csv::format_double(d));
        t.rows.push_back(std::move(row));
    }
    csv::write_file(path, t);
}

}  // namespace molembed::chem
