#include <doctest.h>

#include <cmath>
#include <numeric>
#include <set>

#include "molembed/errors.hpp"
#include "molembed/latent_analysis.hpp"
#include "molembed/rng.hpp"

using namespace molembed;
using namespace molembed::latent;

namespace {

vae::EmbeddingSet make_es(const std::vector<double>& mu, const std::vector<double>& logvar,
                          int dim) {
    vae::EmbeddingSet es;
    es.dim = dim;
    es.mu.assign(mu.begin(), mu.end());
    es.logvar.assign(logvar.begin(), logvar.end());
    es.z = es.mu;
    es.mode = "mean";
    for (size_t i = 0; i < mu.size() / dim; ++i) es.keys.push_back("m" + std::to_string(i));
    return es;
}

}  // namespace

TEST_CASE("dataset_prior_kl reference values") {
    // all rows at the prior
    auto es0 = make_es(std::vector<double>(6, 0.0), std::vector<double>(6, 0.0), 3);
    CHECK(dataset_prior_kl(es0) == doctest::Approx(0.0));

    // single row mu = (1,0,...,0), logvar = 0 gives 0.5
    std::vector<double> mu(4, 0.0);
    mu[0] = 1.0;
    auto es1 = make_es(mu, std::vector<double>(4, 0.0), 4);
    CHECK(dataset_prior_kl(es1) == doctest::Approx(0.5));

    vae::EmbeddingSet empty;
    empty.dim = 4;
    CHECK_THROWS_AS(dataset_prior_kl(empty), EmptySet);
}

TEST_CASE("dataset_prior_kl is the size-weighted mean of parts") {
    Rng rng(3);
    const int dim = 5, na = 7, nb = 13;
    AVec mu_a(na * dim), lv_a(na * dim), mu_b(nb * dim), lv_b(nb * dim);
    for (auto* v : {&mu_a, &lv_a, &mu_b, &lv_b})
        for (double& x : *v) x = 0.5 * rng.normal();
    double kl_a = dataset_prior_kl(mu_a, lv_a, na, dim);
    double kl_b = dataset_prior_kl(mu_b, lv_b, nb, dim);
    AVec mu_u = mu_a, lv_u = lv_a;
    mu_u.insert(mu_u.end(), mu_b.begin(), mu_b.end());
    lv_u.insert(lv_u.end(), lv_b.begin(), lv_b.end());
    double kl_u = dataset_prior_kl(mu_u, lv_u, na + nb, dim);
    CHECK(kl_u == doctest::Approx((na * kl_a + nb * kl_b) / (na + nb)));
}

TEST_CASE("kmeans separates two blobs and is deterministic") {
    Rng rng(7);
    const int dim = 3;
    std::vector<double> pts;
    std::vector<int> truth;
    for (int i = 0; i < 60; ++i) {
        bool second = i >= 30;
        truth.push_back(second ? 1 : 0);
        for (int j = 0; j < dim; ++j)
            pts.push_back((second ? 10.0 : -10.0) + 0.5 * rng.normal());
    }
    KmeansResult km = kmeans(pts.data(), 60, dim, 2, 17);
    CHECK(km.k == 2);
    // perfect separation up to label swap
    std::set<int> labels_a, labels_b;
    for (int i = 0; i < 60; ++i) (truth[i] ? labels_a : labels_b).insert(km.assignments[i]);
    CHECK(labels_a.size() == 1);
    CHECK(labels_b.size() == 1);
    CHECK(*labels_a.begin() != *labels_b.begin());

    KmeansResult again = kmeans(pts.data(), 60, dim, 2, 17);
    CHECK(again.assignments == km.assignments);

    // inertia is non-increasing across Lloyd iterations
    for (size_t i = 1; i < km.inertia_history.size(); ++i)
        CHECK(km.inertia_history[i] <= km.inertia_history[i - 1] + 1e-9);
}

TEST_CASE("kmeans k=1 gives the mean and total scatter") {
    Rng rng(11);
    const int n = 40, dim = 2;
    std::vector<double> pts(n * dim);
    for (double& v : pts) v = rng.normal();
    KmeansResult km = kmeans(pts.data(), n, dim, 1, 5);
    std::vector<double> mean(dim, 0.0);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < dim; ++j) mean[j] += pts[static_cast<size_t>(i) * dim + j];
    for (double& v : mean) v /= n;
    for (int j = 0; j < dim; ++j) CHECK(km.centroids[j] == doctest::Approx(mean[j]));
    double scatter = 0;
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < dim; ++j) {
            double d = pts[static_cast<size_t>(i) * dim + j] - mean[j];
            scatter += d * d;
        }
    CHECK(km.inertia == doctest::Approx(scatter));
}

TEST_CASE("kmeans reduces k when points are degenerate") {
    std::vector<double> pts = {1, 1, 1, 1, 1, 1, 2, 2};  // 4 points, 2 distinct
    KmeansResult km = kmeans(pts.data(), 4, 2, 3, 1);
    CHECK(km.k == 2);
}

TEST_CASE("pca2 basics: line degenerates, rotation invariance, decorrelation") {
    // points on a line: second explained fraction is 0
    std::vector<double> line;
    for (int i = 0; i < 10; ++i) {
        line.push_back(i * 2.0);
        line.push_back(i * -1.0);
        line.push_back(i * 0.5);
    }
    Pca2Result lr = pca2(line.data(), 10, 3);
    CHECK(lr.explained[0] == doctest::Approx(1.0));
    CHECK(lr.explained[1] == doctest::Approx(0.0).epsilon(1e-9));

    Rng rng(13);
    const int n = 100, d = 10;
    std::vector<double> pts(n * d);
    for (double& v : pts) v = rng.normal();
    // stretch a few directions so the spectrum is interesting
    for (int i = 0; i < n; ++i) {
        pts[static_cast<size_t>(i) * d] *= 5.0;
        pts[static_cast<size_t>(i) * d + 1] *= 2.0;
    }
    Pca2Result base = pca2(pts.data(), n, d);

    // scores are centered and decorrelated
    double m1 = 0, m2 = 0;
    for (int i = 0; i < n; ++i) {
        m1 += base.scores[2 * static_cast<size_t>(i)];
        m2 += base.scores[2 * static_cast<size_t>(i) + 1];
    }
    CHECK(std::fabs(m1 / n) < 1e-10);
    CHECK(std::fabs(m2 / n) < 1e-10);
    double cross = 0;
    for (int i = 0; i < n; ++i)
        cross += base.scores[2 * static_cast<size_t>(i)] * base.scores[2 * static_cast<size_t>(i) + 1];
    CHECK(std::fabs(cross) / n < 1e-8);

    // rotating the input leaves explained fractions unchanged (Givens rotation)
    std::vector<double> rotated = pts;
    const double ct = std::cos(0.7), st = std::sin(0.7);
    for (int i = 0; i < n; ++i) {
        double a = pts[static_cast<size_t>(i) * d + 2];
        double b = pts[static_cast<size_t>(i) * d + 3];
        rotated[static_cast<size_t>(i) * d + 2] = ct * a - st * b;
        rotated[static_cast<size_t>(i) * d + 3] = st * a + ct * b;
    }
    Pca2Result rot = pca2(rotated.data(), n, d);
    CHECK(rot.explained[0] == doctest::Approx(base.explained[0]));
    CHECK(rot.explained[1] == doctest::Approx(base.explained[1]));

    CHECK_THROWS_AS(pca2(pts.data(), 2, d), RankError);
    CHECK_THROWS_AS(pca2(pts.data(), n, 1), RankError);
}

TEST_CASE("cluster_error_profile single cluster equals whole-dataset values") {
    Rng rng(17);
    const int n = 50, dim = 4;
    std::vector<double> mu(n * dim), lv(n * dim), y(n), pred(n);
    for (double& v : mu) v = rng.normal();
    for (double& v : lv) v = 0.3 * rng.normal();
    for (int i = 0; i < n; ++i) {
        y[i] = rng.normal();
        pred[i] = y[i] + 0.5 * rng.normal();
    }
    auto es = make_es(mu, lv, dim);
    std::vector<int> one(n, 0);
    auto profiles = cluster_error_profile(es, one, y, pred, false);
    REQUIRE(profiles.size() == 1);
    CHECK(profiles[0].size == n);
    CHECK(profiles[0].kl_to_prior == doctest::Approx(dataset_prior_kl(es)));
    double ss = 0;
    for (int i = 0; i < n; ++i) ss += (y[i] - pred[i]) * (y[i] - pred[i]);
    CHECK(profiles[0].metric == doctest::Approx(std::sqrt(ss / n)));

    // permuting rows leaves the profile unchanged
    std::vector<size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    rng.shuffle(perm);
    std::vector<double> mu_p(n * dim), lv_p(n * dim), y_p(n), pred_p(n);
    for (int i = 0; i < n; ++i) {
        y_p[i] = y[perm[i]];
        pred_p[i] = pred[perm[i]];
        for (int j = 0; j < dim; ++j) {
            mu_p[static_cast<size_t>(i) * dim + j] = mu[perm[i] * dim + j];
            lv_p[static_cast<size_t>(i) * dim + j] = lv[perm[i] * dim + j];
        }
    }
    auto es_p = make_es(mu_p, lv_p, dim);
    auto profiles_p = cluster_error_profile(es_p, one, y_p, pred_p, false);
    CHECK(profiles_p[0].kl_to_prior == doctest::Approx(profiles[0].kl_to_prior));
    CHECK(profiles_p[0].metric == doctest::Approx(profiles[0].metric));

    std::vector<double> short_pred(n - 1);
    CHECK_THROWS_AS(cluster_error_profile(es, one, y, short_pred, false), IncompleteOOF);
}

TEST_CASE("cluster_error_profile sorts by distance and sizes sum to N") {
    Rng rng(19);
    const int n = 60, dim = 3;
    std::vector<double> mu(n * dim), lv(n * dim, 0.0), y(n), pred(n);
    std::vector<int> assign(n);
    for (int i = 0; i < n; ++i) {
        int c = i % 3;
        assign[i] = c;
        for (int j = 0; j < dim; ++j)
            mu[static_cast<size_t>(i) * dim + j] = c * 1.0 + 0.05 * rng.normal();
        y[i] = rng.normal();
        pred[i] = y[i] + (c + 1) * 0.2 * rng.normal();
    }
    auto es = make_es(mu, lv, dim);
    auto profiles = cluster_error_profile(es, assign, y, pred, false);
    REQUIRE(profiles.size() == 3);
    int total = 0;
    for (const auto& p : profiles) {
        total += p.size;
        CHECK(p.kl_to_prior >= 0.0);
    }
    CHECK(total == n);
    for (size_t i = 1; i < profiles.size(); ++i)
        CHECK(profiles[i].kl_to_prior >= profiles[i - 1].kl_to_prior);
}

TEST_CASE("spearman handles ties and monotone transforms") {
    CHECK(spearman({1, 2, 3, 4}, {10, 20, 30, 40}) == doctest::Approx(1.0));
    CHECK(spearman({1, 2, 3, 4}, {40, 30, 20, 10}) == doctest::Approx(-1.0));
    // monotone nonlinear transform preserves rho = 1
    CHECK(spearman({1, 2, 3, 4}, {1, 8, 27, 64}) == doctest::Approx(1.0));
    // one tie pair
    double rho = spearman({1, 1, 2, 3}, {1, 2, 3, 4});
    CHECK(rho > 0.8);
    CHECK(rho < 1.0);
    CHECK_THROWS_AS(spearman({1, 1, 1}, {1, 2, 3}), DegenerateColumn);
}

TEST_CASE("standardize_columns yields zero mean unit sd") {
    Rng rng(23);
    const int n = 200, d = 4;
    AVec x(n * d);
    for (double& v : x) v = 3.0 + 10.0 * rng.normal();
    auto z = standardize_columns(x, n, d);
    for (int j = 0; j < d; ++j) {
        double mean = 0;
        for (int i = 0; i < n; ++i) mean += z[static_cast<size_t>(i) * d + j];
        mean /= n;
        double ss = 0;
        for (int i = 0; i < n; ++i) {
            double v = z[static_cast<size_t>(i) * d + j] - mean;
            ss += v * v;
        }
        CHECK(std::fabs(mean) < 1e-10);
        CHECK(std::sqrt(ss / (n - 1)) == doctest::Approx(1.0));
    }
}
