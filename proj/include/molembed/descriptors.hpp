#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "molembed/mol_graph.hpp"

namespace molembed::desc {

/// Descriptor values for N molecules, column-major by name.
struct DescriptorMatrix {
    std::vector<std::string> names;
    std::vector<std::vector<double>> columns;  // columns[k][row]

    size_t n_rows() const { return columns.empty() ? 0 : columns[0].size(); }
    size_t n_cols() const { return columns.size(); }
    int column_index(const std::string& name) const;
    const std::vector<double>& column(const std::string& name) const;
};

double mol_weight(const MolGraph& g);

struct GraphCounts {
    int ring_count = 0;
    int aromatic_ring_count = 0;
    int heteroatoms = 0;
    int h_acceptors = 0;
};

GraphCounts graph_counts(const MolGraph& g);

/// Names computable from the native parser. Everything else (MolLogP,
/// TPSA, PEOE_VSA6, ...) must be ingested from dataset columns.
bool is_native_descriptor(const std::string& name);

/// Computes one native descriptor column; throws UnsupportedDescriptor for
/// ingestion-only names.
std::vector<double> compute_native(const std::string& name,
                                   const std::vector<std::string>& smiles);

double sample_variance(const std::vector<double>& x);

/// Keeps columns with sample variance strictly above the threshold.
DescriptorMatrix variance_filter(const DescriptorMatrix& m, double threshold = 0.5);

double pearson(const std::vector<double>& x, const std::vector<double>& y);

struct SelectionEntry {
    std::string name;
    double r = 0.0;       // correlation with the target
    bool kept = false;
    std::string reason;   // "selected", "intercorrelated with <name>", "below top-k"
};

struct SelectionReport {
    std::vector<SelectionEntry> entries;   // in scan (rank) order
    std::vector<std::string> selected;     // kept names, best first
    bool underfull = false;                // fewer than k survived
    std::string to_json() const;
};

/// Ranks columns by |r| against the target, then greedily drops any column
/// whose |pairwise r| with an already-kept column exceeds intercorr_cut.
SelectionReport select_descriptors(const DescriptorMatrix& m, const std::vector<double>& target,
                                   int k = 3, double intercorr_cut = 0.9);

struct NoisyColumn {
    std::vector<double> values;
    double noise_scale = 0.0;
    double achieved_r = 0.0;
    int attempts = 1;
};

/// Adds zero-mean Gaussian noise to d so that pearson(d + eps, y) lands
/// within 0.03 of r_target (resampling up to 10 times).
NoisyColumn noisy_descriptor(const std::vector<double>& d, const std::vector<double>& y,
                             double r_target, uint64_t rng_seed);

/// Row indices whose value in any column lies beyond 5 interquartile ranges
/// from that column's median.
std::vector<size_t> outlier_rows(const DescriptorMatrix& m, double iqr_multiple = 5.0);

}  // namespace molembed::desc
