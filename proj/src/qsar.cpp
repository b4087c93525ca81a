#include "molembed/qsar.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <atomic>
#include <cmath>
#include <numeric>
#include <thread>

#include <json.hpp>

#include "molembed/errors.hpp"
#include "molembed/rng.hpp"
#include "molembed/tensor.hpp"

namespace molembed::qsar {

namespace {

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using CMapM = Eigen::Map<const Mat>;

void require_finite(const double* x, int64_t count, const char* who) {
    for (int64_t i = 0; i < count; ++i)
        if (!std::isfinite(x[i])) throw NumericError(std::string(who) + ": non-finite input");
}

}  // namespace

std::string kind_name(ModelKind k) {
    switch (k) {
        case ModelKind::LR: return "lr";
        case ModelKind::MLP: return "mlp";
        case ModelKind::ResNet1D: return "resnet1d";
    }
    return "lr";
}

ModelKind kind_from_name(const std::string& s) {
    if (s == "lr" || s == "LR") return ModelKind::LR;
    if (s == "mlp" || s == "MLP") return ModelKind::MLP;
    if (s == "resnet1d" || s == "ResNet1D" || s == "resnet") return ModelKind::ResNet1D;
    throw ConfigError("unknown QSAR model kind '" + s + "'");
}

std::string QsarSpec::to_json() const {
    nlohmann::json j;
    j["kind"] = kind_name(kind);
    j["task"] = task == Task::Regression ? "regression" : "classification";
    j["ridge_lambda"] = ridge_lambda;
    j["mlp_hidden"] = mlp_hidden;
    j["mlp_epochs"] = mlp_epochs;
    j["resnet_blocks"] = resnet_blocks;
    j["resnet_channels"] = resnet_channels;
    j["resnet_kernel"] = resnet_kernel;
    j["resnet_epochs"] = resnet_epochs;
    j["batch_size"] = batch_size;
    j["lr"] = lr;
    j["standardize_x"] = standardize_x;
    j["seed"] = seed;
    return j.dump(2);
}

QsarSpec QsarSpec::from_json(const std::string& text) {
    nlohmann::json j = nlohmann::json::parse(text);
    QsarSpec s;
    s.kind = kind_from_name(j.value("kind", "lr"));
    s.task = j.value("task", "regression") == "classification" ? Task::Classification
                                                               : Task::Regression;
    s.ridge_lambda = j.value("ridge_lambda", 1e-3);
    s.mlp_hidden = j.value("mlp_hidden", std::vector<int>{512, 512});
    s.mlp_epochs = j.value("mlp_epochs", 40);
    s.resnet_blocks = j.value("resnet_blocks", 4);
    s.resnet_channels = j.value("resnet_channels", 32);
    s.resnet_kernel = j.value("resnet_kernel", 3);
    s.resnet_epochs = j.value("resnet_epochs", 30);
    s.batch_size = j.value("batch_size", 64);
    s.lr = j.value("lr", 1e-3);
    s.standardize_x = j.value("standardize_x", true);
    s.seed = j.value("seed", uint64_t{0});
    return s;
}

// ---- metrics ----

double r2(const std::vector<double>& y, const std::vector<double>& yhat) {
    if (y.size() != yhat.size()) throw ShapeError("r2: length mismatch");
    if (y.empty()) throw EmptySet("r2 over empty vectors");
    double mean = std::accumulate(y.begin(), y.end(), 0.0) / y.size();
    double ss_res = 0.0, ss_tot = 0.0;
    for (size_t i = 0; i < y.size(); ++i) {
        ss_res += (y[i] - yhat[i]) * (y[i] - yhat[i]);
        ss_tot += (y[i] - mean) * (y[i] - mean);
    }
    if (ss_tot == 0.0) throw DegenerateTarget("R^2 undefined for a constant target");
    return 1.0 - ss_res / ss_tot;
}

double rmse(const std::vector<double>& y, const std::vector<double>& yhat) {
    if (y.size() != yhat.size()) throw ShapeError("rmse: length mismatch");
    if (y.empty()) throw EmptySet("rmse over empty vectors");
    double ss = 0.0;
    for (size_t i = 0; i < y.size(); ++i) ss += (y[i] - yhat[i]) * (y[i] - yhat[i]);
    return std::sqrt(ss / static_cast<double>(y.size()));
}

double accuracy(const std::vector<double>& y, const std::vector<double>& prob) {
    if (y.size() != prob.size()) throw ShapeError("accuracy: length mismatch");
    if (y.empty()) throw EmptySet("accuracy over empty vectors");
    size_t hits = 0;
    for (size_t i = 0; i < y.size(); ++i) {
        double label = prob[i] >= 0.5 ? 1.0 : 0.0;
        if (label == y[i]) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(y.size());
}

double f1(const std::vector<double>& y, const std::vector<double>& prob) {
    if (y.size() != prob.size()) throw ShapeError("f1: length mismatch");
    if (y.empty()) throw EmptySet("f1 over empty vectors");
    double tp = 0, fp = 0, fn = 0;
    for (size_t i = 0; i < y.size(); ++i) {
        bool pred = prob[i] >= 0.5;
        bool truth = y[i] != 0.0;
        if (pred && truth) ++tp;
        else if (pred && !truth) ++fp;
        else if (!pred && truth) ++fn;
    }
    double precision = tp + fp > 0 ? tp / (tp + fp) : 0.0;
    double recall = tp + fn > 0 ? tp / (tp + fn) : 0.0;
    return precision + recall > 0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
}

// ---- ridge ----

RidgeModel ridge_fit(const double* x, int n, int d, const std::vector<double>& y, double lambda) {
    if (static_cast<int>(y.size()) != n) throw ShapeError("ridge_fit: y length != rows");
    require_finite(x, static_cast<int64_t>(n) * d, "ridge_fit");
    require_finite(y.data(), n, "ridge_fit");
    CMapM X(x, n, d);
    Eigen::Map<const Eigen::VectorXd> yv(y.data(), n);

    // center so the intercept stays unpenalized
    Eigen::RowVectorXd x_mean = X.colwise().mean();
    double y_mean = yv.mean();
    Mat xc = X.rowwise() - x_mean;
    Eigen::VectorXd yc = yv.array() - y_mean;

    Eigen::MatrixXd gram = xc.transpose() * xc;
    gram.diagonal().array() += lambda;
    Eigen::VectorXd w = gram.ldlt().solve(xc.transpose() * yc);

    RidgeModel m;
    m.weights.assign(w.data(), w.data() + d);
    m.bias = y_mean - x_mean * w;
    return m;
}

std::vector<double> ridge_predict(const RidgeModel& m, const double* x, int n, int d) {
    if (static_cast<int>(m.weights.size()) != d) throw ShapeError("ridge_predict: width mismatch");
    CMapM X(x, n, d);
    Eigen::Map<const Eigen::VectorXd> w(m.weights.data(), d);
    Eigen::VectorXd pred = X * w;
    pred.array() += m.bias;
    return std::vector<double>(pred.data(), pred.data() + n);
}

// ---- neural downstream models ----

namespace {

using nn::Tape;
using nn::Tensor;
using nn::Var;

struct NormInfo {
    std::vector<double> mean, sd;
};

NormInfo column_stats(const double* x, int n, int d) {
    NormInfo info;
    info.mean.assign(d, 0.0);
    info.sd.assign(d, 1.0);
    for (int j = 0; j < d; ++j) {
        double m = 0.0;
        for (int i = 0; i < n; ++i) m += x[static_cast<size_t>(i) * d + j];
        m /= n;
        double ss = 0.0;
        for (int i = 0; i < n; ++i) {
            double v = x[static_cast<size_t>(i) * d + j] - m;
            ss += v * v;
        }
        double sd = std::sqrt(ss / std::max(1, n - 1));
        info.mean[j] = m;
        info.sd[j] = sd > 1e-12 ? sd : 1.0;
    }
    return info;
}

AVec apply_standardize(const QsarModel& m, const double* x, int n) {
    AVec out(static_cast<size_t>(n) * m.input_dim);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < m.input_dim; ++j) {
            size_t idx = static_cast<size_t>(i) * m.input_dim + j;
            out[idx] = m.spec.standardize_x ? (x[idx] - m.x_mean[j]) / m.x_sd[j] : x[idx];
        }
    return out;
}

/// Forward pass for MLP on a tape; params indexed as l0.w,l0.b,l1.w,...
Var mlp_forward(Tape& tape, QsarModel& m, std::vector<Var>& pv, Var x) {
    size_t layers = m.params.size() / 2;
    Var h = x;
    for (size_t i = 0; i < layers; ++i) {
        h = linear(h, pv[2 * i], pv[2 * i + 1]);
        if (i + 1 < layers) h = relu(h);
    }
    return h;
}

struct ResnetLayout {
    int stem_w, stem_b;
    struct Block {
        int c1w, c1b, n1g, n1b, c2w, c2b, n2g, n2b;
    };
    std::vector<Block> blocks;
    int head_w, head_b;
};

ResnetLayout resnet_build(QsarModel& m, Rng& rng, int d) {
    ResnetLayout lay{};
    auto& ps = m.params;
    const int c = m.spec.resnet_channels;
    const int k = m.spec.resnet_kernel;
    lay.stem_w = ps.add("stem.w", {c, 1, k}, rng, k);
    lay.stem_b = ps.add("stem.b", {c}, rng, k);
    for (int b = 0; b < m.spec.resnet_blocks; ++b) {
        ResnetLayout::Block blk{};
        std::string p = "block" + std::to_string(b) + ".";
        blk.c1w = ps.add(p + "c1.w", {c, c, k}, rng, c * k);
        blk.c1b = ps.add(p + "c1.b", {c}, rng, c * k);
        blk.n1g = ps.add_zeros(p + "n1.g", {c});
        blk.n1b = ps.add_zeros(p + "n1.b", {c});
        blk.c2w = ps.add(p + "c2.w", {c, c, k}, rng, c * k);
        blk.c2b = ps.add(p + "c2.b", {c}, rng, c * k);
        blk.n2g = ps.add_zeros(p + "n2.g", {c});
        blk.n2b = ps.add_zeros(p + "n2.b", {c});
        for (double& g : ps.at(blk.n1g).value.data) g = 1.0;
        for (double& g : ps.at(blk.n2g).value.data) g = 1.0;
        lay.blocks.push_back(blk);
    }
    lay.head_w = ps.add("head.w", {c, 1}, rng);
    lay.head_b = ps.add("head.b", {1}, rng, c);
    (void)d;
    return lay;
}

ResnetLayout resnet_layout_of(const QsarModel& m) {
    ResnetLayout lay{};
    auto find = [&](const std::string& name) {
        for (size_t i = 0; i < m.params.size(); ++i)
            if (m.params.at(static_cast<int>(i)).name == name) return static_cast<int>(i);
        throw ConfigError("resnet parameter missing: " + name);
    };
    lay.stem_w = find("stem.w");
    lay.stem_b = find("stem.b");
    for (int b = 0; b < m.spec.resnet_blocks; ++b) {
        std::string p = "block" + std::to_string(b) + ".";
        lay.blocks.push_back({find(p + "c1.w"), find(p + "c1.b"), find(p + "n1.g"),
                              find(p + "n1.b"), find(p + "c2.w"), find(p + "c2.b"),
                              find(p + "n2.g"), find(p + "n2.b")});
    }
    lay.head_w = find("head.w");
    lay.head_b = find("head.b");
    return lay;
}

Var resnet_forward(Tape& tape, QsarModel& m, const ResnetLayout& lay, std::vector<Var>& pv,
                   Var x2d) {
    const int n = x2d.val().rows();
    const int d = x2d.val().cols();
    const int k = m.spec.resnet_kernel;
    const int pl = (k - 1) / 2, pr = k - 1 - pl;
    Var x = reshape(x2d, {n, 1, d});
    x = relu(conv1d(pad1d(x, pl, pr), pv[lay.stem_w], pv[lay.stem_b]));
    for (const auto& blk : lay.blocks) {
        Var f = conv1d(pad1d(x, pl, pr), pv[blk.c1w], pv[blk.c1b]);
        f = relu(norm_rows(f, pv[blk.n1g], pv[blk.n1b]));
        f = conv1d(pad1d(f, pl, pr), pv[blk.c2w], pv[blk.c2b]);
        f = norm_rows(f, pv[blk.n2g], pv[blk.n2b]);
        x = relu(add(x, f));
    }
    Var pooled = global_avg_pool(x);
    return linear(pooled, pv[lay.head_w], pv[lay.head_b]);
}

void train_neural(QsarModel& m, const AVec& xs, int n,
                  const std::vector<double>& ys, int epochs) {
    const int d = m.input_dim;
    nn::AdamState adam;
    adam.lr = m.spec.lr;
    adam.init(m.params);
    ResnetLayout rlay{};
    if (m.spec.kind == ModelKind::ResNet1D) rlay = resnet_layout_of(m);

    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    int64_t skipped = 0, steps = 0;
    for (int epoch = 0; epoch < epochs; ++epoch) {
        Rng rng(substream_seed(m.spec.seed, "qsar/shuffle/" + std::to_string(epoch)));
        rng.shuffle(order);
        for (size_t b0 = 0; b0 < order.size(); b0 += m.spec.batch_size) {
            size_t b1 = std::min(order.size(), b0 + m.spec.batch_size);
            const int bn = static_cast<int>(b1 - b0);
            Tensor xb({bn, d});
            Tensor yb({bn, 1});
            for (int i = 0; i < bn; ++i) {
                size_t row = order[b0 + i];
                std::copy_n(xs.data() + row * d, d, xb.data.data() + static_cast<size_t>(i) * d);
                yb.data[i] = ys[row];
            }
            Tape tape;
            std::vector<Var> pv;
            for (size_t i = 0; i < m.params.size(); ++i) {
                auto& p = m.params.at(static_cast<int>(i));
                pv.push_back(tape.param(&p.value, &p.grad));
            }
            Var xv = tape.constant(std::move(xb));
            Var out = m.spec.kind == ModelKind::MLP ? mlp_forward(tape, m, pv, xv)
                                                    : resnet_forward(tape, m, rlay, pv, xv);
            Var lossv = m.spec.task == Task::Classification
                            ? bce_with_logits(out, std::move(yb))
                            : mse_loss(out, std::move(yb));
            m.params.zero_grad();
            ++steps;
            try {
                if (!std::isfinite(lossv.val().item()))
                    throw NonFiniteGradient("qsar loss not finite");
                tape.backward(lossv);
                m.params.clip_global_norm(5.0);
                nn::adam_step(m.params, adam);
            } catch (const NonFiniteGradient&) {
                ++skipped;
                m.params.zero_grad();
            }
        }
    }
    if (steps > 0 && static_cast<double>(skipped) > 0.01 * static_cast<double>(steps))
        throw TrainingUnstable("qsar training skipped " + std::to_string(skipped) + " batches");
}

std::vector<double> predict_neural(const QsarModel& m, const AVec& xs, int n) {
    const int d = m.input_dim;
    QsarModel& mm = const_cast<QsarModel&>(m);  // forward pass only; no mutation
    ResnetLayout rlay{};
    if (m.spec.kind == ModelKind::ResNet1D) rlay = resnet_layout_of(m);
    std::vector<double> preds;
    preds.reserve(n);
    constexpr int chunk = 1024;
    for (int c0 = 0; c0 < n; c0 += chunk) {
        int cn = std::min(n - c0, chunk);
        Tensor xb({cn, d});
        std::copy_n(xs.data() + static_cast<size_t>(c0) * d, static_cast<size_t>(cn) * d,
                    xb.data.data());
        Tape tape;
        std::vector<Var> pv;
        for (size_t i = 0; i < mm.params.size(); ++i) {
            auto& p = mm.params.at(static_cast<int>(i));
            pv.push_back(tape.param(&p.value, &p.grad));
        }
        Var xv = tape.constant(std::move(xb));
        Var out = m.spec.kind == ModelKind::MLP ? mlp_forward(tape, mm, pv, xv)
                                                : resnet_forward(tape, mm, rlay, pv, xv);
        for (int i = 0; i < cn; ++i) preds.push_back(out.val().data[i]);
    }
    return preds;
}

}  // namespace

QsarModel qsar_train(const QsarSpec& spec, const double* x, int n, int d,
                     const std::vector<double>& y) {
    if (static_cast<int>(y.size()) != n) throw ShapeError("qsar_train: y length != rows");
    require_finite(x, static_cast<int64_t>(n) * d, "qsar_train");
    QsarModel m;
    m.spec = spec;
    m.input_dim = d;
    if (spec.standardize_x) {
        NormInfo info = column_stats(x, n, d);
        m.x_mean = info.mean;
        m.x_sd = info.sd;
    }
    AVec xs = apply_standardize(m, x, n);

    std::vector<double> ys = y;
    if (spec.task == Task::Regression) {
        double mean = std::accumulate(ys.begin(), ys.end(), 0.0) / ys.size();
        double ss = 0.0;
        for (double v : ys) ss += (v - mean) * (v - mean);
        double sd = std::sqrt(ss / std::max<size_t>(1, ys.size() - 1));
        m.y_mean = mean;
        m.y_sd = sd > 1e-12 ? sd : 1.0;
        for (double& v : ys) v = (v - m.y_mean) / m.y_sd;
    }

    if (spec.kind == ModelKind::LR) {
        m.ridge = ridge_fit(xs.data(), n, d, ys, spec.ridge_lambda);
        return m;
    }
    Rng rng(substream_seed(spec.seed, "qsar/init"));
    if (spec.kind == ModelKind::MLP) {
        int in = d;
        for (size_t i = 0; i < spec.mlp_hidden.size(); ++i) {
            m.params.add("l" + std::to_string(i) + ".w", {in, spec.mlp_hidden[i]}, rng);
            m.params.add("l" + std::to_string(i) + ".b", {spec.mlp_hidden[i]}, rng, in);
            in = spec.mlp_hidden[i];
        }
        m.params.add("l" + std::to_string(spec.mlp_hidden.size()) + ".w", {in, 1}, rng);
        m.params.add("l" + std::to_string(spec.mlp_hidden.size()) + ".b", {1}, rng, in);
        train_neural(m, xs, n, ys, spec.mlp_epochs);
    } else {
        resnet_build(m, rng, d);
        train_neural(m, xs, n, ys, spec.resnet_epochs);
    }
    return m;
}

std::vector<double> qsar_predict(const QsarModel& m, const double* x, int n) {
    AVec xs = apply_standardize(m, x, n);
    std::vector<double> raw;
    if (m.spec.kind == ModelKind::LR)
        raw = ridge_predict(m.ridge, xs.data(), n, m.input_dim);
    else
        raw = predict_neural(m, xs, n);
    if (m.spec.task == Task::Classification) {
        for (double& v : raw) v = 1.0 / (1.0 + std::exp(-v));
    } else {
        for (double& v : raw) v = v * m.y_sd + m.y_mean;
    }
    return raw;
}

QsarModel mlp_train(const QsarSpec& spec, const double* x, int n, int d,
                    const std::vector<double>& y) {
    if (spec.kind != ModelKind::MLP) throw ConfigError("mlp_train: spec.kind must be MLP");
    return qsar_train(spec, x, n, d, y);
}
std::vector<double> mlp_predict(const QsarModel& m, const double* x, int n) {
    return qsar_predict(m, x, n);
}
QsarModel resnet1d_train(const QsarSpec& spec, const double* x, int n, int d,
                         const std::vector<double>& y) {
    if (spec.kind != ModelKind::ResNet1D)
        throw ConfigError("resnet1d_train: spec.kind must be ResNet1D");
    return qsar_train(spec, x, n, d, y);
}
std::vector<double> resnet1d_predict(const QsarModel& m, const double* x, int n) {
    return qsar_predict(m, x, n);
}

// ---- cross validation ----

std::string CvReport::to_json() const {
    nlohmann::json j;
    j["k"] = k;
    j["seed"] = seed;
    j["stratified"] = stratified;
    j["mean"] = mean;
    j["sd"] = sd;
    auto& folds = j["per_fold"] = nlohmann::json::array();
    for (const auto& f : per_fold) folds.push_back(f);
    return j.dump(2);
}

CvReport kfold_cv(const double* x_rowmajor, int n, int d, const std::vector<double>& y,
                  const QsarSpec& spec, int k, uint64_t seed, int jobs) {
    if (n < k) throw CvError("fewer rows than folds");
    if (static_cast<int>(y.size()) != n) throw ShapeError("kfold_cv: y length != rows");

    CvReport rep;
    rep.k = k;
    rep.seed = seed;
    rep.stratified = spec.task == Task::Classification;
    rep.fold_of.assign(n, -1);
    rep.oof_pred.assign(n, 0.0);

    Rng rng(substream_seed(seed, "folds"));
    if (rep.stratified) {
        std::vector<size_t> pos, neg;
        for (int i = 0; i < n; ++i) (y[i] != 0.0 ? pos : neg).push_back(i);
        rng.shuffle(pos);
        rng.shuffle(neg);
        int c = 0;
        for (size_t i : pos) rep.fold_of[i] = c++ % k;
        for (size_t i : neg) rep.fold_of[i] = c++ % k;
    } else {
        std::vector<size_t> order(n);
        std::iota(order.begin(), order.end(), 0);
        rng.shuffle(order);
        for (int i = 0; i < n; ++i) rep.fold_of[order[i]] = i % k;
    }

    auto run_fold = [&](int fold) {
        AVec xtr, xte;
        std::vector<double> ytr;
        std::vector<int> te_rows;
        for (int i = 0; i < n; ++i) {
            const double* row = x_rowmajor + static_cast<size_t>(i) * d;
            if (rep.fold_of[i] == fold) {
                xte.insert(xte.end(), row, row + d);
                te_rows.push_back(i);
            } else {
                xtr.insert(xtr.end(), row, row + d);
                ytr.push_back(y[i]);
            }
        }
        QsarSpec fold_spec = spec;
        fold_spec.seed = substream_seed(seed, "fold/" + std::to_string(fold));
        QsarModel model =
            qsar_train(fold_spec, xtr.data(), static_cast<int>(ytr.size()), d, ytr);
        std::vector<double> pred =
            qsar_predict(model, xte.data(), static_cast<int>(te_rows.size()));
        return std::pair(te_rows, pred);
    };

    std::vector<std::pair<std::vector<int>, std::vector<double>>> results(k);
    if (jobs > 1) {
        std::vector<std::thread> pool;
        std::atomic<int> next{0};
        for (int w = 0; w < std::min(jobs, k); ++w)
            pool.emplace_back([&]() {
                for (int f = next.fetch_add(1); f < k; f = next.fetch_add(1))
                    results[f] = run_fold(f);
            });
        for (auto& th : pool) th.join();
    } else {
        for (int f = 0; f < k; ++f) results[f] = run_fold(f);
    }

    std::vector<std::string> metric_names = spec.task == Task::Regression
                                                ? std::vector<std::string>{"r2", "rmse"}
                                                : std::vector<std::string>{"accuracy", "f1"};
    for (int f = 0; f < k; ++f) {
        const auto& [rows, pred] = results[f];
        std::vector<double> yt;
        yt.reserve(rows.size());
        for (int i : rows) yt.push_back(y[i]);
        for (size_t i = 0; i < rows.size(); ++i) rep.oof_pred[rows[i]] = pred[i];
        std::map<std::string, double> metrics;
        if (spec.task == Task::Regression) {
            // degenerate folds (single row / constant target) report r2 = 0
            double fold_r2 = 0.0;
            if (yt.size() >= 2) {
                try {
                    fold_r2 = r2(yt, pred);
                } catch (const DegenerateTarget&) {
                }
            }
            metrics["r2"] = fold_r2;
            metrics["rmse"] = rmse(yt, pred);
        } else {
            metrics["accuracy"] = accuracy(yt, pred);
            metrics["f1"] = f1(yt, pred);
        }
        rep.per_fold.push_back(std::move(metrics));
    }
    for (const auto& name : metric_names) {
        double mean = 0.0;
        for (const auto& f : rep.per_fold) mean += f.at(name);
        mean /= k;
        double ss = 0.0;
        for (const auto& f : rep.per_fold) ss += (f.at(name) - mean) * (f.at(name) - mean);
        rep.mean[name] = mean;
        rep.sd[name] = std::sqrt(ss / std::max(1, k - 1));
    }
    return rep;
}

QsarSpec grid_search(const QsarSpec& base, const double* x_rowmajor, int n, int d,
                     const std::vector<double>& y, int k, uint64_t seed) {
    std::vector<QsarSpec> candidates;
    if (base.kind == ModelKind::LR) {
        for (double lam : {1e-4, 1e-3, 1e-2, 1e-1, 1.0}) {
            QsarSpec s = base;
            s.ridge_lambda = lam;
            candidates.push_back(s);
        }
    } else if (base.kind == ModelKind::MLP) {
        for (int width : {128, 512}) {
            QsarSpec s = base;
            s.mlp_hidden = {width, width};
            candidates.push_back(s);
        }
    } else {
        candidates.push_back(base);
    }
    std::string primary = base.task == Task::Regression ? "r2" : "accuracy";
    QsarSpec best = candidates.front();
    double best_score = -1e300;
    for (const auto& cand : candidates) {
        CvReport rep = kfold_cv(x_rowmajor, n, d, y, cand, k, seed);
        if (rep.mean.at(primary) > best_score) {
            best_score = rep.mean.at(primary);
            best = cand;
        }
    }
    return best;
}

}  // namespace molembed::qsar
