#pragma once

#include <optional>
#include <string>
#include <vector>

#include "molembed/chem_data.hpp"
#include "molembed/qsar.hpp"
#include "molembed/vae.hpp"

namespace molembed::pipe {

/// One experiment description; every command consumes the fields it needs.
/// All randomness descends from `seed` through named substreams.
struct ExperimentConfig {
    std::string name = "experiment";
    uint64_t seed = 1;
    std::string outdir = "out";

    std::string source_path;
    double source_fraction = 1.0;
    std::string target_path;
    std::optional<double> classify_threshold;

    vae::VaeConfig vae;  // l_max and per-replicate seeds are filled at run time
    vae::TrainOptions train;

    std::string descriptor_mode = "auto";  // auto | explicit | noisy
    int descriptor_k = 1;
    double intercorr_cut = 0.9;
    double variance_threshold = 0.5;
    std::vector<std::string> descriptor_names;  // explicit mode
    std::string noise_base = "MolLogP";
    std::vector<double> noise_r_targets;

    std::vector<qsar::QsarSpec> qsar_specs;
    int folds = 10;
    std::string embed_mode = "sampled";
    std::vector<uint64_t> replicates = {1};

    std::vector<double> subset_fractions = {0.02, 0.1, 0.5, 1.0};
    int subset_eval_n = 2000;
    int size_matched_n = 0;
    int cluster_k = 10;
    std::vector<int> cluster_k_sweep = {5, 8, 10, 12};
    int variance_models = 5;
    int variance_embeddings = 5;

    int jobs = 1;
    bool resume = true;
    bool quiet = false;

    std::string to_json() const;
    static ExperimentConfig from_json(const std::string& text);
    static ExperimentConfig from_json_file(const std::string& path);

    std::string exp_dir() const { return outdir + "/" + name; }
};

/// Pre-train a VAE on the source corpus and write a model bundle plus the
/// training log. Returns the report JSON text.
std::string cmd_train_vae(const ExperimentConfig& cfg);

/// select-descriptors -> train joint and baseline VAEs -> embed -> k-fold CV
/// per QSAR spec, with per-replicate and aggregate deltas.
std::string cmd_pipeline(const ExperimentConfig& cfg);

/// Trains on seeded source subsets; reports reconstruction accuracy and
/// downstream metrics per subset size.
std::string cmd_subset_sweep(const ExperimentConfig& cfg);

/// Joint pre-training with noisy copies of a base descriptor at descending
/// target correlations.
std::string cmd_noise_sweep(const ExperimentConfig& cfg);

/// Baseline-vs-joint comparison with the downstream training set subsampled
/// to a fixed size.
std::string cmd_size_matched(const ExperimentConfig& cfg);

/// K-Means over embeddings with per-cluster distance/error profiles and a
/// 2-D PCA plot bundle.
std::string cmd_cluster_analysis(const ExperimentConfig& cfg);

/// Variance decomposition: several embeddings of one model vs several
/// independently trained models.
std::string cmd_variance_study(const ExperimentConfig& cfg);

// ---- thin verbs ----

std::string cmd_embed(const std::string& bundle_dir, const std::string& data_path,
                      const std::string& out_csv, const std::string& mode, uint64_t seed);
std::string cmd_select_descriptors(const std::string& data_path, int k, double variance_threshold,
                                   double intercorr_cut, const std::string& out_json);
std::string cmd_train_qsar(const std::string& embeddings_csv, const std::string& data_path,
                           const qsar::QsarSpec& spec, int folds, uint64_t seed,
                           const std::string& out_json, int jobs = 1);

}  // namespace molembed::pipe
