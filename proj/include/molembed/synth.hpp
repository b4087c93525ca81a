#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "molembed/descriptors.hpp"
#include "molembed/rng.hpp"

namespace molembed::synth {

/// Random-molecule generator options. "Exotic" draws produce larger
/// molecules with rarer atoms (P, I, triple bonds) to give datasets an
/// out-of-distribution tail.
struct GenOptions {
    uint64_t seed = 7;
    int count = 1000;
    int max_chars = 34;
    int min_chars = 4;
    double exotic_fraction = 0.10;
};

/// One random SMILES string that parses under the library grammar.
std::string random_smiles(Rng& rng, const GenOptions& opts, bool exotic);

/// Unique corpus of `count` strings (deterministic in the seed).
std::vector<std::string> generate_corpus(const GenOptions& opts);

/// Structure-derived descriptor columns for a molecule list. Native columns
/// (MolWt, RingCount, ...) come from the graph; surrogate columns (MolLogP,
/// TPSA, PEOE_VSA6, ...) are deterministic atom-contribution sums plus a
/// small seeded noise term, standing in for the ingested RDKit values.
desc::DescriptorMatrix synth_descriptors(const std::vector<std::string>& smiles, uint64_t seed);

struct TargetSpec {
    /// (descriptor name, desired Pearson r against the target).
    std::vector<std::pair<std::string, double>> desired_r;
    double out_mean = 0.0;
    double out_sd = 1.0;
};

struct TargetResult {
    std::vector<double> values;
    std::vector<std::pair<std::string, double>> achieved_r;  // for every column
};

/// Builds a target column whose correlations with the named descriptor
/// columns match desired_r (population-exact; sample values drift by
/// O(1/sqrt(N))). Throws if the request is infeasible for the given matrix.
TargetResult synth_target(const desc::DescriptorMatrix& m, const TargetSpec& spec, uint64_t seed);

}  // namespace molembed::synth
