#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace molembed::chem {

/// Character-level SMILES alphabet. Regular tokens are sorted by descending
/// corpus count (ties by codepoint); pad/start/end markers are appended last.
struct TokenVocab {
    std::vector<std::string> tokens;
    std::map<std::string, int> index_of;
    std::vector<int64_t> counts;  // aligned with tokens; specials may be 0
    int pad_id = -1;
    int start_id = -1;
    int end_id = -1;

    int size() const { return static_cast<int>(tokens.size()); }
    bool is_special(int id) const { return id == pad_id || id == start_id || id == end_id; }

    std::string to_json() const;
    static TokenVocab from_json(const std::string& text);
};

inline constexpr const char* kPadToken = "<pad>";
inline constexpr const char* kStartToken = "<s>";
inline constexpr const char* kEndToken = "</s>";

struct EncodedMolecule {
    std::string smiles;
    std::vector<int> token_ids;  // [chars..., end, pad...] of length L_max
    int valid_len = 0;           // tokens before padding, including the end marker
};

/// Splits a SMILES string into single-character tokens.
std::vector<std::string> tokenize(const std::string& smiles);

TokenVocab build_vocab(const std::vector<std::string>& corpus);

EncodedMolecule encode(const std::string& smiles, const TokenVocab& vocab, int l_max);

/// Inverse of encode over the valid prefix (markers stripped).
std::string decode(const std::vector<int>& token_ids, const TokenVocab& vocab);

/// Longest tokenized length over the corpus, plus one slot for the end marker.
int scan_l_max(const std::vector<std::string>& corpus);

enum class TaskKind { Regression, Classification };

struct DataRecord {
    std::string smiles;
    std::optional<double> target;  // real target or 0/1 class label
    std::vector<double> descriptors;
};

struct Dataset {
    std::vector<DataRecord> records;
    std::vector<std::string> descriptor_names;
    TaskKind task_kind = TaskKind::Regression;

    size_t size() const { return records.size(); }
    std::vector<std::string> smiles_list() const;
    std::vector<double> targets() const;
    /// One descriptor column by name; throws SchemaError when absent.
    std::vector<double> descriptor_column(const std::string& name) const;
};

struct LoadOptions {
    /// When set, a real-valued `target` column is binarized as
    /// 1 if target >= threshold else 0 and the task becomes classification.
    std::optional<double> classify_threshold;
    bool verbose = false;
};

/// Loads a curated CSV: required `smiles`, optional `target` (real) or
/// `label` (0/1), remaining numeric columns become descriptors. Duplicate
/// smiles keep the first row; rows with missing values are dropped.
Dataset load_dataset(const std::string& path, const LoadOptions& opts = {});

/// Serialization used by the idempotence check and intermediate artifacts.
void save_dataset(const std::string& path, const Dataset& ds);

}  // namespace molembed::chem
