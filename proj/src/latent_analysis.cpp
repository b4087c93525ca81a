#include "molembed/latent_analysis.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>

#include "molembed/errors.hpp"
#include "molembed/rng.hpp"

namespace molembed::latent {

double row_kl_to_prior(const double* mu, const double* logvar, int dim) {
    double acc = 0.0;
    for (int j = 0; j < dim; ++j)
        acc += mu[j] * mu[j] + std::exp(logvar[j]) - 1.0 - logvar[j];
    return 0.5 * acc;
}

double dataset_prior_kl(const AVec& mu, const AVec& logvar, int n, int dim) {
    if (n <= 0) throw EmptySet("dataset_prior_kl over an empty set");
    double acc = 0.0;
    for (int i = 0; i < n; ++i)
        acc += row_kl_to_prior(mu.data() + static_cast<size_t>(i) * dim,
                               logvar.data() + static_cast<size_t>(i) * dim, dim);
    return acc / static_cast<double>(n);
}

double dataset_prior_kl(const vae::EmbeddingSet& es) {
    return dataset_prior_kl(es.mu, es.logvar, static_cast<int>(es.size()), es.dim);
}

KmeansResult kmeans(const double* points, int n, int dim, int k, uint64_t seed, int max_iter) {
    if (n < k) throw CvError("kmeans: fewer points than clusters");
    if (k < 1) throw ConfigError("kmeans: k must be >= 1");

    // count distinct points; reduce k if degenerate
    {
        std::vector<int> order(n);
        std::iota(order.begin(), order.end(), 0);
        std::sort(order.begin(), order.end(), [&](int a, int b) {
            return std::lexicographical_compare(points + static_cast<size_t>(a) * dim,
                                                points + static_cast<size_t>(a + 1) * dim,
                                                points + static_cast<size_t>(b) * dim,
                                                points + static_cast<size_t>(b + 1) * dim);
        });
        int distinct = n == 0 ? 0 : 1;
        for (int i = 1; i < n; ++i) {
            const double* a = points + static_cast<size_t>(order[i - 1]) * dim;
            const double* b = points + static_cast<size_t>(order[i]) * dim;
            if (!std::equal(a, a + dim, b)) ++distinct;
        }
        if (distinct < k) {
            std::fprintf(stderr, "kmeans: only %d distinct points; reducing k from %d\n", distinct,
                         k);
            k = distinct;
        }
    }

    KmeansResult res;
    res.k = k;
    Rng rng(substream_seed(seed, "kmeans"));

    auto sq_dist = [&](const double* a, const double* b) {
        double acc = 0.0;
        for (int j = 0; j < dim; ++j) acc += (a[j] - b[j]) * (a[j] - b[j]);
        return acc;
    };

    // k-means++ seeding
    std::vector<double> centroids(static_cast<size_t>(k) * dim);
    std::vector<double> d2(n, std::numeric_limits<double>::infinity());
    int first = static_cast<int>(rng.below(n));
    std::copy_n(points + static_cast<size_t>(first) * dim, dim, centroids.data());
    for (int c = 1; c < k; ++c) {
        double total = 0.0;
        for (int i = 0; i < n; ++i) {
            double d = sq_dist(points + static_cast<size_t>(i) * dim,
                               centroids.data() + static_cast<size_t>(c - 1) * dim);
            d2[i] = std::min(d2[i], d);
            total += d2[i];
        }
        int chosen = 0;
        if (total > 0.0) {
            double u = rng.uniform() * total;
            double run = 0.0;
            for (int i = 0; i < n; ++i) {
                run += d2[i];
                if (run >= u) {
                    chosen = i;
                    break;
                }
            }
        } else {
            chosen = static_cast<int>(rng.below(n));
        }
        std::copy_n(points + static_cast<size_t>(chosen) * dim, dim,
                    centroids.data() + static_cast<size_t>(c) * dim);
    }

    res.assignments.assign(n, -1);
    std::vector<int> counts(k, 0);
    for (int iter = 0; iter < max_iter; ++iter) {
        bool changed = false;
        double inertia = 0.0;
        for (int i = 0; i < n; ++i) {
            const double* p = points + static_cast<size_t>(i) * dim;
            int best = 0;
            double bestd = sq_dist(p, centroids.data());
            for (int c = 1; c < k; ++c) {
                double d = sq_dist(p, centroids.data() + static_cast<size_t>(c) * dim);
                if (d < bestd) {
                    bestd = d;
                    best = c;
                }
            }
            inertia += bestd;
            if (res.assignments[i] != best) {
                res.assignments[i] = best;
                changed = true;
            }
        }
        res.inertia_history.push_back(inertia);
        res.inertia = inertia;
        res.iterations = iter + 1;
        if (!changed) break;

        std::fill(centroids.begin(), centroids.end(), 0.0);
        std::fill(counts.begin(), counts.end(), 0);
        for (int i = 0; i < n; ++i) {
            int c = res.assignments[i];
            ++counts[c];
            const double* p = points + static_cast<size_t>(i) * dim;
            double* cen = centroids.data() + static_cast<size_t>(c) * dim;
            for (int j = 0; j < dim; ++j) cen[j] += p[j];
        }
        for (int c = 0; c < k; ++c) {
            if (counts[c] == 0) continue;  // empty cluster keeps its zero vector
            double* cen = centroids.data() + static_cast<size_t>(c) * dim;
            for (int j = 0; j < dim; ++j) cen[j] /= counts[c];
        }
    }
    res.centroids = std::move(centroids);
    return res;
}

Pca2Result pca2(const double* points, int n, int dim) {
    if (n < 3) throw RankError("pca2 needs at least 3 points");
    if (dim < 2) throw RankError("pca2 needs at least 2 input dimensions");
    using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    Eigen::Map<const Mat> X(points, n, dim);
    Eigen::RowVectorXd mean = X.colwise().mean();
    Mat centered = X.rowwise() - mean;
    Eigen::MatrixXd cov =
        (centered.transpose() * centered) / static_cast<double>(n - 1);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
    if (eig.info() != Eigen::Success) throw NumericError("pca2: eigendecomposition failed");
    // eigenvalues ascending; take the last two
    double total = std::max(eig.eigenvalues().sum(), 0.0);
    Eigen::VectorXd v1 = eig.eigenvectors().col(dim - 1);
    Eigen::VectorXd v2 = eig.eigenvectors().col(dim - 2);
    auto canonical_sign = [](Eigen::VectorXd& v) {
        int arg = 0;
        double best = 0.0;
        for (int i = 0; i < v.size(); ++i)
            if (std::fabs(v[i]) > best) {
                best = std::fabs(v[i]);
                arg = i;
            }
        if (v[arg] < 0) v = -v;
    };
    canonical_sign(v1);
    canonical_sign(v2);

    Pca2Result res;
    res.scores.resize(static_cast<size_t>(n) * 2);
    Eigen::VectorXd s1 = centered * v1;
    Eigen::VectorXd s2 = centered * v2;
    for (int i = 0; i < n; ++i) {
        res.scores[2 * static_cast<size_t>(i)] = s1[i];
        res.scores[2 * static_cast<size_t>(i) + 1] = s2[i];
    }
    double l1 = std::max(eig.eigenvalues()[dim - 1], 0.0);
    double l2 = std::max(eig.eigenvalues()[dim - 2], 0.0);
    res.explained[0] = total > 0 ? l1 / total : 0.0;
    res.explained[1] = total > 0 ? l2 / total : 0.0;
    return res;
}

std::vector<ClusterProfile> cluster_error_profile(const vae::EmbeddingSet& es,
                                                  const std::vector<int>& assignments,
                                                  const std::vector<double>& y_true,
                                                  const std::vector<double>& oof_pred,
                                                  bool classification) {
    const size_t n = es.size();
    if (assignments.size() != n || y_true.size() != n)
        throw ShapeError("cluster_error_profile: length mismatch");
    if (oof_pred.size() != n)
        throw IncompleteOOF("out-of-fold predictions must cover every row");
    int k = 0;
    for (int a : assignments) k = std::max(k, a + 1);

    std::vector<ClusterProfile> profiles(k);
    std::vector<std::vector<size_t>> members(k);
    for (size_t i = 0; i < n; ++i) members[assignments[i]].push_back(i);

    for (int c = 0; c < k; ++c) {
        ClusterProfile& p = profiles[c];
        p.cluster_id = c;
        p.size = static_cast<int>(members[c].size());
        if (p.size == 0) continue;
        double kl = 0.0;
        p.centroid.assign(es.dim, 0.0);
        for (size_t i : members[c]) {
            kl += row_kl_to_prior(es.mu_row(i), es.logvar_row(i), es.dim);
            for (int j = 0; j < es.dim; ++j) p.centroid[j] += es.z_row(i)[j];
        }
        p.kl_to_prior = kl / p.size;
        for (int j = 0; j < es.dim; ++j) p.centroid[j] /= p.size;
        if (classification) {
            double errors = 0.0;
            for (size_t i : members[c]) {
                double label = oof_pred[i] >= 0.5 ? 1.0 : 0.0;
                if (label != y_true[i]) errors += 1.0;
            }
            p.metric = errors / p.size;
        } else {
            double ss = 0.0;
            for (size_t i : members[c]) {
                double d = y_true[i] - oof_pred[i];
                ss += d * d;
            }
            p.metric = std::sqrt(ss / p.size);
        }
    }
    std::sort(profiles.begin(), profiles.end(),
              [](const ClusterProfile& a, const ClusterProfile& b) {
                  return a.kl_to_prior < b.kl_to_prior;
              });
    return profiles;
}

namespace {

std::vector<double> ranks_with_ties(const std::vector<double>& v) {
    const size_t n = v.size();
    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](size_t a, size_t b) { return v[a] < v[b]; });
    std::vector<double> ranks(n);
    size_t i = 0;
    while (i < n) {
        size_t j = i;
        while (j + 1 < n && v[order[j + 1]] == v[order[i]]) ++j;
        double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
        for (size_t t = i; t <= j; ++t) ranks[order[t]] = avg;
        i = j + 1;
    }
    return ranks;
}

}  // namespace

double spearman(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size()) throw ShapeError("spearman: length mismatch");
    if (a.size() < 2) throw DegenerateColumn("spearman needs at least 2 values");
    std::vector<double> ra = ranks_with_ties(a);
    std::vector<double> rb = ranks_with_ties(b);
    double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / ra.size();
    double mb = std::accumulate(rb.begin(), rb.end(), 0.0) / rb.size();
    double sab = 0, saa = 0, sbb = 0;
    for (size_t i = 0; i < ra.size(); ++i) {
        double da = ra[i] - ma, db = rb[i] - mb;
        sab += da * db;
        saa += da * da;
        sbb += db * db;
    }
    if (saa == 0.0 || sbb == 0.0) throw DegenerateColumn("spearman over constant ranks");
    return sab / std::sqrt(saa * sbb);
}

AVec standardize_columns(const AVec& x, int n, int dim) {
    AVec out(x.size());
    for (int j = 0; j < dim; ++j) {
        double mean = 0.0;
        for (int i = 0; i < n; ++i) mean += x[static_cast<size_t>(i) * dim + j];
        mean /= n;
        double ss = 0.0;
        for (int i = 0; i < n; ++i) {
            double d = x[static_cast<size_t>(i) * dim + j] - mean;
            ss += d * d;
        }
        double sd = std::sqrt(ss / std::max(1, n - 1));
        if (sd < 1e-12) sd = 1.0;
        for (int i = 0; i < n; ++i)
            out[static_cast<size_t>(i) * dim + j] = (x[static_cast<size_t>(i) * dim + j] - mean) / sd;
    }
    return out;
}

}  // namespace molembed::latent
