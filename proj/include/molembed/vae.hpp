#pragma once

#include <optional>
#include <string>
#include <vector>

#include "molembed/aligned.hpp"
#include "molembed/chem_data.hpp"
#include "molembed/optim.hpp"
#include "molembed/rng.hpp"
#include "molembed/tensor.hpp"

namespace molembed::vae {

enum class Arch { CVAE, PVAE };

std::string arch_name(Arch a);
Arch arch_from_name(const std::string& s);

struct ConvSpec {
    int channels = 16;
    int kernel = 5;
};

struct PredictorSpec {
    std::vector<std::string> descriptor_names;
    /// Hidden widths of the MLP head (CVAE); empty means a single linear
    /// layer (PVAE).
    std::vector<int> hidden;
};

struct VaeConfig {
    Arch arch = Arch::PVAE;
    int latent_dim = 196;
    int hidden_dim = 512;
    std::vector<ConvSpec> conv = {{16, 5}, {16, 5}, {16, 5}};  // CVAE encoder stack
    int decoder_layers = 1;
    std::optional<PredictorSpec> predictor;
    double beta = 1.0;
    double lambda_pred = 1.0;
    bool penalized = false;  // PVAE: reconstruction weighted by character prevalence
    int l_max = 0;
    uint64_t seed = 0;

    std::string to_json() const;
    static VaeConfig from_json(const std::string& text);
    /// Reduced preset for laptop-scale experiments: latent 64, hidden 128.
    static VaeConfig desk_preset(Arch arch);
};

struct TrainOptions {
    int epochs = 10;
    int batch_size = 128;
    double lr = 1e-3;
    double clip_norm = 5.0;
    double val_fraction = 0.05;
    double kl_warmup_frac = 0.1;  // linear KL warm-up over the first 10% of steps
    int log_every = 0;            // batches; 0 = epoch level only
    bool quiet = false;
};

struct EpochStats {
    int epoch = 0;
    double total = 0, recon = 0, kl = 0, pred = 0;
    double val_recon = 0;
};

struct TrainLog {
    std::vector<EpochStats> epochs;
    int64_t steps = 0;
    int64_t skipped_batches = 0;
    int best_epoch = -1;
    double best_val_recon = 0;
    std::string to_json() const;
};

struct VaeModel {
    VaeConfig config;
    chem::TokenVocab vocab;
    nn::ParamStore params;
    /// Per-descriptor (mean, sd) computed on the training split; present iff
    /// the predictor is enabled.
    std::vector<std::pair<double, double>> descriptor_normalizers;

    void save_bundle(const std::string& dir) const;
    static VaeModel load_bundle(const std::string& dir);
};

/// Builds a model with seed-deterministic parameters.
VaeModel build_model(const VaeConfig& config, const chem::TokenVocab& vocab);

/// Class weights over the alphabet: median(count)/count clipped to
/// [0.01, 100]; zero-count specials get weight 1.
std::vector<double> penalized_weights(const chem::TokenVocab& vocab);

struct LossParts {
    double total = 0, recon = 0, kl = 0, pred = 0;
};

struct TrainItem {
    chem::EncodedMolecule mol;
    std::vector<double> descriptors;  // raw values for predictor targets; may be empty
};

/// Single differentiable loss evaluation on a batch (used by the training
/// loop and by gradient tests). Gradients accumulate into model.params when
/// backward is set.
LossParts loss(VaeModel& model, const std::vector<const TrainItem*>& batch, Rng& rng,
               double beta_effective, bool backward);

/// Trains in place; corpus rows carry descriptor targets when the predictor
/// is enabled. Restores the best-validation-reconstruction checkpoint.
TrainLog train(VaeModel& model, const std::vector<TrainItem>& corpus, const TrainOptions& opts);

/// Convenience: encodes a corpus (skipping over-length rows with a warning)
/// and pairs it with descriptor columns by name.
std::vector<TrainItem> prepare_corpus(const chem::Dataset& ds, const chem::TokenVocab& vocab,
                                      int l_max, const std::vector<std::string>& descriptor_names,
                                      bool quiet = true);

struct EmbeddingSet {
    int dim = 0;
    std::vector<std::string> keys;                          // smiles per kept row
    AVec mu, logvar, z;                                     // row-major N x dim
    std::string mode = "sampled";
    uint64_t seed = 0;
    std::vector<std::pair<size_t, std::string>> excluded;   // input index -> reason

    size_t size() const { return keys.size(); }
    const double* mu_row(size_t i) const { return mu.data() + i * dim; }
    const double* logvar_row(size_t i) const { return logvar.data() + i * dim; }
    const double* z_row(size_t i) const { return z.data() + i * dim; }

    void save_csv(const std::string& path) const;
    static EmbeddingSet load_csv(const std::string& path);
};

enum class EmbedMode { Mean, Sampled };

EmbeddingSet embed(const VaeModel& model, const std::vector<std::string>& smiles, EmbedMode mode,
                   uint64_t seed);

/// Fraction of molecules whose free-running greedy decode from z = mu
/// reproduces the input string exactly.
double reconstruction_accuracy(const VaeModel& model, const std::vector<std::string>& smiles);

/// 10-fold CV RMSE of a ridge probe predicting the standardized descriptor
/// column from embeddings.
double descriptor_probe(const EmbeddingSet& es, const std::vector<double>& column,
                        uint64_t seed = 17, double ridge_lambda = 1e-3);

}  // namespace molembed::vae
