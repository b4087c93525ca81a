#pragma once

#include <map>
#include <string>
#include <vector>

#include "molembed/aligned.hpp"
#include "molembed/optim.hpp"

namespace molembed::qsar {

enum class ModelKind { LR, MLP, ResNet1D };
enum class Task { Regression, Classification };

std::string kind_name(ModelKind k);
ModelKind kind_from_name(const std::string& s);

struct QsarSpec {
    ModelKind kind = ModelKind::LR;
    Task task = Task::Regression;
    // LR
    double ridge_lambda = 1e-3;
    // MLP
    std::vector<int> mlp_hidden = {512, 512};
    int mlp_epochs = 40;
    // ResNet1D
    int resnet_blocks = 4;
    int resnet_channels = 32;
    int resnet_kernel = 3;
    int resnet_epochs = 30;
    // shared neural-net knobs
    int batch_size = 64;
    double lr = 1e-3;
    bool standardize_x = true;
    uint64_t seed = 0;

    std::string to_json() const;
    static QsarSpec from_json(const std::string& text);
};

// ---- metrics ----

double r2(const std::vector<double>& y, const std::vector<double>& yhat);
double rmse(const std::vector<double>& y, const std::vector<double>& yhat);
/// Classification metrics take probabilities and threshold at 0.5.
double accuracy(const std::vector<double>& y, const std::vector<double>& prob);
double f1(const std::vector<double>& y, const std::vector<double>& prob);

// ---- linear regression (closed form) ----

struct RidgeModel {
    std::vector<double> weights;
    double bias = 0.0;
};

/// Minimizes ||Xw + b - y||^2 + lambda ||w||^2 with an unpenalized intercept.
RidgeModel ridge_fit(const double* x, int n, int d, const std::vector<double>& y,
                     double lambda = 1e-3);
std::vector<double> ridge_predict(const RidgeModel& m, const double* x, int n, int d);

// ---- trained downstream model (any kind) ----

struct QsarModel {
    QsarSpec spec;
    int input_dim = 0;
    std::vector<double> x_mean, x_sd;  // train-fold statistics (when standardize_x)
    double y_mean = 0.0, y_sd = 1.0;   // regression target standardization
    RidgeModel ridge;                  // LR
    nn::ParamStore params;             // MLP / ResNet1D
};

QsarModel qsar_train(const QsarSpec& spec, const double* x, int n, int d,
                     const std::vector<double>& y);
/// Regression: de-standardized predictions. Classification: probabilities.
std::vector<double> qsar_predict(const QsarModel& m, const double* x, int n);

QsarModel mlp_train(const QsarSpec& spec, const double* x, int n, int d,
                    const std::vector<double>& y);
std::vector<double> mlp_predict(const QsarModel& m, const double* x, int n);
QsarModel resnet1d_train(const QsarSpec& spec, const double* x, int n, int d,
                         const std::vector<double>& y);
std::vector<double> resnet1d_predict(const QsarModel& m, const double* x, int n);

// ---- cross validation ----

struct CvReport {
    int k = 0;
    uint64_t seed = 0;
    bool stratified = false;
    std::vector<std::map<std::string, double>> per_fold;
    std::map<std::string, double> mean, sd;
    std::vector<int> fold_of;        // per row
    std::vector<double> oof_pred;    // per row, out-of-fold prediction
    std::string to_json() const;
};

/// Seeded shuffled k-fold CV (stratified for classification). Out-of-fold
/// predictions cover every row exactly once.
CvReport kfold_cv(const double* x_rowmajor, int n, int d, const std::vector<double>& y,
                  const QsarSpec& spec, int k = 10, uint64_t seed = 0, int jobs = 1);

/// Small declared grid (ridge lambda / MLP width) for fidelity runs; returns
/// the spec with the best CV primary metric.
QsarSpec grid_search(const QsarSpec& base, const double* x_rowmajor, int n, int d,
                     const std::vector<double>& y, int k = 10, uint64_t seed = 0);

}  // namespace molembed::qsar
