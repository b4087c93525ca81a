#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "molembed/aligned.hpp"
#include "molembed/vae.hpp"

namespace molembed::latent {

/// KL(N(mu, diag exp(logvar)) || N(0, I)) for one row.
double row_kl_to_prior(const double* mu, const double* logvar, int dim);

/// Mean expected KL over all rows of an embedding set (distance to prior).
double dataset_prior_kl(const vae::EmbeddingSet& es);
double dataset_prior_kl(const AVec& mu, const AVec& logvar, int n, int dim);

struct KmeansResult {
    int k = 0;
    std::vector<int> assignments;         // per row
    std::vector<double> centroids;        // row-major k x dim
    double inertia = 0.0;
    std::vector<double> inertia_history;  // per Lloyd iteration, non-increasing
    int iterations = 0;
};

/// Lloyd's algorithm with seeded k-means++ initialization. When fewer than k
/// distinct points exist, k is reduced with a warning on stderr.
KmeansResult kmeans(const double* points, int n, int dim, int k, uint64_t seed,
                    int max_iter = 300);

struct Pca2Result {
    std::vector<double> scores;  // row-major n x 2
    double explained[2] = {0.0, 0.0};
};

/// Centers columns and projects onto the top-2 principal directions.
Pca2Result pca2(const double* points, int n, int dim);

struct ClusterProfile {
    int cluster_id = 0;
    int size = 0;
    double kl_to_prior = 0.0;  // mean expected KL of member Gaussians
    double metric = 0.0;       // mean RMSE (regression) or error rate (classification)
    std::vector<double> centroid;
};

/// Per-cluster distance-to-prior and out-of-fold error, sorted by
/// kl_to_prior ascending. Every row must carry an out-of-fold prediction.
std::vector<ClusterProfile> cluster_error_profile(const vae::EmbeddingSet& es,
                                                  const std::vector<int>& assignments,
                                                  const std::vector<double>& y_true,
                                                  const std::vector<double>& oof_pred,
                                                  bool classification);

/// Spearman rank correlation with average ranks on ties.
double spearman(const std::vector<double>& a, const std::vector<double>& b);

/// Column-standardized copy of a row-major matrix (zero mean, unit sd).
AVec standardize_columns(const AVec& x, int n, int dim);

}  // namespace molembed::latent
