#include "molembed/vae.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>

#include <json.hpp>

#include "molembed/csv.hpp"
#include "molembed/errors.hpp"
#include "molembed/qsar.hpp"

namespace molembed::vae {

namespace {

using nn::Tape;
using nn::Tensor;
using nn::Var;
using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using CMapM = Eigen::Map<const Mat>;

CMapM pmat(const nn::Parameter& p) { return CMapM(p.value.data.data(), p.value.shape[0], p.value.shape[1]); }

}  // namespace

std::string arch_name(Arch a) { return a == Arch::CVAE ? "cvae" : "pvae"; }

Arch arch_from_name(const std::string& s) {
    if (s == "cvae" || s == "CVAE") return Arch::CVAE;
    if (s == "pvae" || s == "PVAE") return Arch::PVAE;
    throw ConfigError("unknown architecture '" + s + "'");
}

std::string VaeConfig::to_json() const {
    nlohmann::json j;
    j["arch"] = arch_name(arch);
    j["latent_dim"] = latent_dim;
    j["hidden_dim"] = hidden_dim;
    auto& conv_arr = j["conv"] = nlohmann::json::array();
    for (const auto& c : conv) conv_arr.push_back({{"channels", c.channels}, {"kernel", c.kernel}});
    j["decoder_layers"] = decoder_layers;
    if (predictor) {
        j["predictor"] = {{"descriptor_names", predictor->descriptor_names},
                          {"hidden", predictor->hidden}};
    } else {
        j["predictor"] = nullptr;
    }
    j["beta"] = beta;
    j["lambda_pred"] = lambda_pred;
    j["penalized"] = penalized;
    j["l_max"] = l_max;
    j["seed"] = seed;
    return j.dump(2);
}

VaeConfig VaeConfig::from_json(const std::string& text) {
    nlohmann::json j = nlohmann::json::parse(text);
    VaeConfig c;
    c.arch = arch_from_name(j.at("arch").get<std::string>());
    c.latent_dim = j.at("latent_dim").get<int>();
    c.hidden_dim = j.at("hidden_dim").get<int>();
    c.conv.clear();
    for (const auto& e : j.at("conv"))
        c.conv.push_back({e.at("channels").get<int>(), e.at("kernel").get<int>()});
    c.decoder_layers = j.value("decoder_layers", 1);
    if (j.contains("predictor") && !j["predictor"].is_null()) {
        PredictorSpec p;
        p.descriptor_names = j["predictor"].at("descriptor_names").get<std::vector<std::string>>();
        p.hidden = j["predictor"].value("hidden", std::vector<int>{});
        c.predictor = std::move(p);
    }
    c.beta = j.at("beta").get<double>();
    c.lambda_pred = j.at("lambda_pred").get<double>();
    c.penalized = j.at("penalized").get<bool>();
    c.l_max = j.at("l_max").get<int>();
    c.seed = j.at("seed").get<uint64_t>();
    return c;
}

VaeConfig VaeConfig::desk_preset(Arch arch) {
    VaeConfig c;
    c.arch = arch;
    c.latent_dim = 64;
    c.hidden_dim = 128;
    c.conv = {{12, 5}, {12, 5}, {12, 5}};
    c.penalized = arch == Arch::PVAE;
    return c;
}

std::vector<double> penalized_weights(const chem::TokenVocab& vocab) {
    std::vector<int64_t> positive;
    for (int64_t c : vocab.counts)
        if (c > 0) positive.push_back(c);
    std::vector<double> w(vocab.tokens.size(), 1.0);
    if (positive.empty()) return w;
    std::sort(positive.begin(), positive.end());
    double median;
    size_t n = positive.size();
    if (n % 2 == 1)
        median = static_cast<double>(positive[n / 2]);
    else
        median = 0.5 * (static_cast<double>(positive[n / 2 - 1]) + static_cast<double>(positive[n / 2]));
    for (size_t i = 0; i < vocab.counts.size(); ++i) {
        if (vocab.counts[i] > 0)
            w[i] = std::clamp(median / static_cast<double>(vocab.counts[i]), 0.01, 100.0);
    }
    return w;
}

// ---- parameter layout ----

namespace {

struct Layout {
    // PVAE encoder GRU
    int enc_wx_zr = -1, enc_uh_zr = -1, enc_b_zr = -1;
    int enc_wx_h = -1, enc_uh_h = -1, enc_b_h = -1;
    // CVAE encoder conv stack + dense
    std::vector<std::pair<int, int>> enc_conv;  // (w, b)
    int enc_fc_w = -1, enc_fc_b = -1;
    // heads
    int mu_w = -1, mu_b = -1, lv_w = -1, lv_b = -1;
    // decoder
    int dec_h0_w = -1, dec_h0_b = -1;
    int dec_wx_zr = -1, dec_wz_zr = -1, dec_b_zr = -1;
    int dec_wx_h = -1, dec_wz_h = -1, dec_b_h = -1;
    int dec_uh_zr = -1, dec_uh_h = -1;
    int out_w = -1, out_b = -1;
    // predictor
    std::vector<std::pair<int, int>> pred;  // linear layers (w, b)
    int conv_flat = 0;                      // flattened width after the conv stack
};

int find_id(const nn::ParamStore& ps, const std::string& name) {
    for (size_t i = 0; i < ps.size(); ++i)
        if (ps.at(static_cast<int>(i)).name == name) return static_cast<int>(i);
    throw ConfigError("parameter missing from checkpoint: " + name);
}

Layout resolve_layout(const VaeModel& m) {
    const auto& ps = m.params;
    const auto& c = m.config;
    Layout l;
    if (c.arch == Arch::PVAE) {
        l.enc_wx_zr = find_id(ps, "enc.wx_zr");
        l.enc_uh_zr = find_id(ps, "enc.uh_zr");
        l.enc_b_zr = find_id(ps, "enc.b_zr");
        l.enc_wx_h = find_id(ps, "enc.wx_h");
        l.enc_uh_h = find_id(ps, "enc.uh_h");
        l.enc_b_h = find_id(ps, "enc.b_h");
    } else {
        int len = c.l_max;
        for (size_t i = 0; i < c.conv.size(); ++i) {
            l.enc_conv.emplace_back(find_id(ps, "enc.conv" + std::to_string(i) + ".w"),
                                    find_id(ps, "enc.conv" + std::to_string(i) + ".b"));
            len = len - c.conv[i].kernel + 1;
        }
        l.conv_flat = len * c.conv.back().channels;
        l.enc_fc_w = find_id(ps, "enc.fc.w");
        l.enc_fc_b = find_id(ps, "enc.fc.b");
    }
    l.mu_w = find_id(ps, "enc.mu.w");
    l.mu_b = find_id(ps, "enc.mu.b");
    l.lv_w = find_id(ps, "enc.lv.w");
    l.lv_b = find_id(ps, "enc.lv.b");
    l.dec_h0_w = find_id(ps, "dec.h0.w");
    l.dec_h0_b = find_id(ps, "dec.h0.b");
    l.dec_wx_zr = find_id(ps, "dec.wx_zr");
    l.dec_wz_zr = find_id(ps, "dec.wz_zr");
    l.dec_b_zr = find_id(ps, "dec.b_zr");
    l.dec_wx_h = find_id(ps, "dec.wx_h");
    l.dec_wz_h = find_id(ps, "dec.wz_h");
    l.dec_b_h = find_id(ps, "dec.b_h");
    l.dec_uh_zr = find_id(ps, "dec.uh_zr");
    l.dec_uh_h = find_id(ps, "dec.uh_h");
    l.out_w = find_id(ps, "dec.out.w");
    l.out_b = find_id(ps, "dec.out.b");
    if (m.config.predictor) {
        for (size_t i = 0;; ++i) {
            std::string base = "pred.l" + std::to_string(i);
            bool found = false;
            for (size_t k = 0; k < ps.size(); ++k)
                if (ps.at(static_cast<int>(k)).name == base + ".w") found = true;
            if (!found) break;
            l.pred.emplace_back(find_id(ps, base + ".w"), find_id(ps, base + ".b"));
        }
    }
    return l;
}

}  // namespace

VaeModel build_model(const VaeConfig& config, const chem::TokenVocab& vocab) {
    if (config.latent_dim < 2) throw ConfigError("latent_dim must be >= 2");
    if (config.lambda_pred < 0) throw ConfigError("lambda_pred must be >= 0");
    if (config.l_max < 2) throw ConfigError("l_max must be >= 2 (set it from the corpus scan)");
    if (config.hidden_dim < 1) throw ConfigError("hidden_dim must be >= 1");
    if (config.arch == Arch::CVAE && config.conv.empty())
        throw ConfigError("CVAE needs a conv encoder stack");
    if (config.decoder_layers != 1)
        throw ConfigError("only single-layer decoders are supported");

    VaeModel m;
    m.config = config;
    m.vocab = vocab;
    if (m.config.arch == Arch::CVAE && m.config.predictor && m.config.predictor->hidden.empty())
        m.config.predictor->hidden = {1000, 1000, 1000};  // 3-hidden-layer MLP head

    Rng rng(substream_seed(config.seed, "init"));
    const int v = vocab.size();
    const int h = config.hidden_dim;
    const int d = config.latent_dim;
    auto& ps = m.params;

    if (config.arch == Arch::PVAE) {
        ps.add("enc.wx_zr", {v, 2 * h}, rng);
        ps.add("enc.uh_zr", {h, 2 * h}, rng);
        ps.add("enc.b_zr", {2 * h}, rng, h);
        ps.add("enc.wx_h", {v, h}, rng);
        ps.add("enc.uh_h", {h, h}, rng);
        ps.add("enc.b_h", {h}, rng, h);
        ps.add("enc.mu.w", {h, d}, rng);
        ps.add("enc.mu.b", {d}, rng, h);
        ps.add("enc.lv.w", {h, d}, rng);
        ps.add("enc.lv.b", {d}, rng, h);
    } else {
        int cin = v;
        int len = config.l_max;
        for (size_t i = 0; i < config.conv.size(); ++i) {
            const auto& spec = config.conv[i];
            if (len < spec.kernel) throw ConfigError("conv stack consumes the whole sequence");
            ps.add("enc.conv" + std::to_string(i) + ".w", {spec.channels, cin, spec.kernel}, rng,
                   cin * spec.kernel);
            ps.add("enc.conv" + std::to_string(i) + ".b", {spec.channels}, rng, cin * spec.kernel);
            cin = spec.channels;
            len = len - spec.kernel + 1;
        }
        ps.add("enc.fc.w", {len * cin, h}, rng);
        ps.add("enc.fc.b", {h}, rng, len * cin);
        ps.add("enc.mu.w", {h, d}, rng);
        ps.add("enc.mu.b", {d}, rng, h);
        ps.add("enc.lv.w", {h, d}, rng);
        ps.add("enc.lv.b", {d}, rng, h);
    }

    ps.add("dec.h0.w", {d, h}, rng);
    ps.add("dec.h0.b", {h}, rng, d);
    ps.add("dec.wx_zr", {v, 2 * h}, rng);
    ps.add("dec.wz_zr", {d, 2 * h}, rng);
    ps.add("dec.b_zr", {2 * h}, rng, h);
    ps.add("dec.wx_h", {v, h}, rng);
    ps.add("dec.wz_h", {d, h}, rng);
    ps.add("dec.b_h", {h}, rng, h);
    ps.add("dec.uh_zr", {h, 2 * h}, rng);
    ps.add("dec.uh_h", {h, h}, rng);
    ps.add("dec.out.w", {h, v}, rng);
    ps.add("dec.out.b", {v}, rng, h);

    if (m.config.predictor) {
        const auto& spec = *m.config.predictor;
        if (spec.descriptor_names.empty())
            throw ConfigError("predictor enabled with no descriptor names");
        int in = d;
        int k = static_cast<int>(spec.descriptor_names.size());
        for (size_t i = 0; i < spec.hidden.size(); ++i) {
            ps.add("pred.l" + std::to_string(i) + ".w", {in, spec.hidden[i]}, rng);
            ps.add("pred.l" + std::to_string(i) + ".b", {spec.hidden[i]}, rng, in);
            in = spec.hidden[i];
        }
        ps.add("pred.l" + std::to_string(spec.hidden.size()) + ".w", {in, k}, rng);
        ps.add("pred.l" + std::to_string(spec.hidden.size()) + ".b", {k}, rng, in);
    }
    return m;
}

// ---- batched tape forward ----

namespace {

struct BatchView {
    std::vector<const TrainItem*> items;
    int n = 0;
    int max_len = 0;

    std::vector<int> enc_ids(int t) const {
        std::vector<int> ids(n);
        for (int i = 0; i < n; ++i) ids[i] = items[i]->mol.token_ids[t];
        return ids;
    }
    std::vector<int> dec_ids(int t, int start_id) const {
        std::vector<int> ids(n);
        for (int i = 0; i < n; ++i)
            ids[i] = t == 0 ? start_id : items[i]->mol.token_ids[t - 1];
        return ids;
    }
    std::vector<int> target_ids(int t) const { return enc_ids(t); }
    std::vector<uint8_t> mask(int t) const {
        std::vector<uint8_t> m(n);
        for (int i = 0; i < n; ++i) m[i] = t < items[i]->mol.valid_len ? 1 : 0;
        return m;
    }
    Tensor mask_col(int t) const {
        Tensor m({n, 1});
        for (int i = 0; i < n; ++i) m.data[i] = t < items[i]->mol.valid_len ? 1.0 : 0.0;
        return m;
    }
};

BatchView make_view(const std::vector<const TrainItem*>& batch) {
    BatchView v;
    v.items = batch;
    v.n = static_cast<int>(batch.size());
    for (const auto* it : batch) v.max_len = std::max(v.max_len, it->mol.valid_len);
    return v;
}

struct TapeModel {
    Tape& tape;
    VaeModel& m;
    Layout lay;
    std::vector<Var> pv;  // one Var per parameter

    TapeModel(Tape& t, VaeModel& model) : tape(t), m(model), lay(resolve_layout(model)) {
        for (size_t i = 0; i < m.params.size(); ++i) {
            auto& p = m.params.at(static_cast<int>(i));
            pv.push_back(tape.param(&p.value, &p.grad));
        }
    }
    Var operator[](int id) const { return pv[id]; }
};

std::pair<Var, Var> encoder_forward(TapeModel& tm, const BatchView& b) {
    Tape& T = tm.tape;
    const VaeConfig& cfg = tm.m.config;
    const int h = cfg.hidden_dim;
    Var mu, logvar;
    if (cfg.arch == Arch::PVAE) {
        Var hs = T.constant(Tensor({b.n, h}));
        for (int t = 0; t < b.max_len; ++t) {
            Var pre_zr = add_rowvec(embed_rows(tm[tm.lay.enc_wx_zr], b.enc_ids(t)),
                                    tm[tm.lay.enc_b_zr]);
            Var pre_h = add_rowvec(embed_rows(tm[tm.lay.enc_wx_h], b.enc_ids(t)),
                                   tm[tm.lay.enc_b_h]);
            Var h_new = gru_step_pre(pre_zr, pre_h, hs, tm[tm.lay.enc_uh_zr], tm[tm.lay.enc_uh_h]);
            // rows past their valid length keep the previous state
            hs = add(hs, mul_colvec(sub(h_new, hs), T.constant(b.mask_col(t))));
        }
        mu = linear(hs, tm[tm.lay.mu_w], tm[tm.lay.mu_b]);
        logvar = linear(hs, tm[tm.lay.lv_w], tm[tm.lay.lv_b]);
    } else {
        const int v = tm.m.vocab.size();
        const int l = cfg.l_max;
        Tensor onehot({b.n, v, l});
        for (int i = 0; i < b.n; ++i)
            for (int t = 0; t < l; ++t) {
                int id = t < static_cast<int>(b.items[i]->mol.token_ids.size())
                             ? b.items[i]->mol.token_ids[t]
                             : tm.m.vocab.pad_id;
                onehot.data[(static_cast<size_t>(i) * v + id) * l + t] = 1.0;
            }
        Var x = T.constant(std::move(onehot));
        for (auto [w, bi] : tm.lay.enc_conv) x = tanh_op(conv1d(x, tm[w], tm[bi]));
        x = reshape(x, {b.n, tm.lay.conv_flat});
        Var fc = tanh_op(linear(x, tm[tm.lay.enc_fc_w], tm[tm.lay.enc_fc_b]));
        mu = linear(fc, tm[tm.lay.mu_w], tm[tm.lay.mu_b]);
        logvar = linear(fc, tm[tm.lay.lv_w], tm[tm.lay.lv_b]);
    }
    return {mu, logvar};
}

/// Teacher-forced decoder negative log likelihood (sum over masked positions),
/// plus the weight normalizer.
std::pair<Var, double> decoder_nll(TapeModel& tm, const BatchView& b, Var z,
                                   const std::vector<double>& class_weights) {
    Var hs = tanh_op(linear(z, tm[tm.lay.dec_h0_w], tm[tm.lay.dec_h0_b]));
    Var base_zr = add_rowvec(matmul(z, tm[tm.lay.dec_wz_zr]), tm[tm.lay.dec_b_zr]);
    Var base_h = add_rowvec(matmul(z, tm[tm.lay.dec_wz_h]), tm[tm.lay.dec_b_h]);
    const int start_id = tm.m.vocab.start_id;

    Var total;
    double denom = 0.0;
    for (int t = 0; t < b.max_len; ++t) {
        Var pre_zr = add(embed_rows(tm[tm.lay.dec_wx_zr], b.dec_ids(t, start_id)), base_zr);
        Var pre_h = add(embed_rows(tm[tm.lay.dec_wx_h], b.dec_ids(t, start_id)), base_h);
        hs = gru_step_pre(pre_zr, pre_h, hs, tm[tm.lay.dec_uh_zr], tm[tm.lay.dec_uh_h]);
        Var logits = linear(hs, tm[tm.lay.out_w], tm[tm.lay.out_b]);
        auto targets = b.target_ids(t);
        auto mask = b.mask(t);
        for (int i = 0; i < b.n; ++i)
            if (mask[i]) denom += class_weights[targets[i]];
        Var nll = weighted_nll(logits, std::move(targets), class_weights, std::move(mask));
        total = total.valid() ? add(total, nll) : nll;
    }
    return {total, denom};
}

Var predictor_forward(TapeModel& tm, Var z) {
    Var x = z;
    for (size_t i = 0; i < tm.lay.pred.size(); ++i) {
        auto [w, b] = tm.lay.pred[i];
        x = linear(x, tm[w], tm[b]);
        if (i + 1 < tm.lay.pred.size()) x = tanh_op(x);
    }
    return x;
}

Tensor normalized_descriptor_targets(const VaeModel& m, const BatchView& b) {
    const int k = static_cast<int>(m.config.predictor->descriptor_names.size());
    Tensor t({b.n, k});
    for (int i = 0; i < b.n; ++i) {
        if (static_cast<int>(b.items[i]->descriptors.size()) != k)
            throw ShapeError("batch row lacks descriptor targets for the predictor");
        for (int j = 0; j < k; ++j) {
            auto [mean, sd] = m.descriptor_normalizers[j];
            t.data[static_cast<size_t>(i) * k + j] = (b.items[i]->descriptors[j] - mean) / sd;
        }
    }
    return t;
}

struct LossVars {
    Var total, recon, kl_mean, pred;
};

LossVars loss_forward(TapeModel& tm, const BatchView& b, Rng& rng, double beta_eff) {
    Tape& T = tm.tape;
    VaeModel& m = tm.m;
    auto [mu, logvar] = encoder_forward(tm, b);

    Tensor eps({b.n, m.config.latent_dim});
    for (double& e : eps.data) e = rng.normal();
    Var z = add(mu, mul(exp_scaled(logvar, 0.5), T.constant(std::move(eps))));

    std::vector<double> weights = m.config.penalized
                                      ? penalized_weights(m.vocab)
                                      : std::vector<double>(m.vocab.tokens.size(), 1.0);
    auto [nll_sum, denom] = decoder_nll(tm, b, z, weights);
    Var recon = affine(nll_sum, 1.0 / denom, 0.0);

    Var kl_mean = mean_all(kl_gaussian(mu, logvar));

    LossVars lv;
    lv.recon = recon;
    lv.kl_mean = kl_mean;
    lv.total = add(recon, affine(kl_mean, beta_eff, 0.0));
    if (m.config.predictor) {
        Var pred_out = predictor_forward(tm, z);
        lv.pred = mse_loss(pred_out, normalized_descriptor_targets(m, b));
        lv.total = add(lv.total, affine(lv.pred, m.config.lambda_pred, 0.0));
    }
    return lv;
}

}  // namespace

LossParts loss(VaeModel& model, const std::vector<const TrainItem*>& batch, Rng& rng,
               double beta_effective, bool backward) {
    if (batch.empty()) throw EmptySet("loss over an empty batch");
    if (model.config.predictor && model.descriptor_normalizers.empty())
        throw ConfigError("predictor enabled but descriptor normalizers are missing");
    Tape tape;
    TapeModel tm(tape, model);
    BatchView view = make_view(batch);
    LossVars lv = loss_forward(tm, view, rng, beta_effective);
    LossParts parts;
    parts.total = lv.total.val().item();
    parts.recon = lv.recon.val().item();
    parts.kl = lv.kl_mean.val().item();
    parts.pred = lv.pred.valid() ? lv.pred.val().item() : 0.0;
    if (!std::isfinite(parts.total)) throw NonFiniteGradient("loss is not finite");
    if (backward) tape.backward(lv.total);
    return parts;
}

std::vector<TrainItem> prepare_corpus(const chem::Dataset& ds, const chem::TokenVocab& vocab,
                                      int l_max, const std::vector<std::string>& descriptor_names,
                                      bool quiet) {
    std::vector<const std::vector<double>*> cols;
    std::vector<std::vector<double>> col_storage;
    col_storage.reserve(descriptor_names.size());
    for (const auto& name : descriptor_names) col_storage.push_back(ds.descriptor_column(name));
    for (const auto& c : col_storage) cols.push_back(&c);

    std::vector<TrainItem> items;
    items.reserve(ds.size());
    size_t skipped = 0;
    for (size_t i = 0; i < ds.records.size(); ++i) {
        TrainItem item;
        try {
            item.mol = chem::encode(ds.records[i].smiles, vocab, l_max);
        } catch (const Overlength&) {
            ++skipped;
            if (!quiet)
                std::fprintf(stderr, "warning: skipping over-length smiles at row %zu\n", i);
            continue;
        } catch (const UnknownToken&) {
            ++skipped;
            if (!quiet)
                std::fprintf(stderr, "warning: skipping smiles with unknown token at row %zu\n", i);
            continue;
        }
        for (const auto* c : cols) item.descriptors.push_back((*c)[i]);
        items.push_back(std::move(item));
    }
    if (!quiet && skipped > 0)
        std::fprintf(stderr, "prepare_corpus: skipped %zu of %zu records\n", skipped, ds.size());
    return items;
}

// ---- forward-only math (no tape) for embedding extraction and decoding ----

namespace {

struct FwdModel {
    const VaeModel& m;
    Layout lay;
    explicit FwdModel(const VaeModel& model) : m(model), lay(resolve_layout(model)) {}
    CMapM mat(int id) const { return pmat(m.params.at(id)); }
    const AVec& raw(int id) const { return m.params.at(id).value.data; }
};

/// One forward GRU step over rows of `h` (modified in place).
/// pre_zr/pre_h are the input contributions including biases.
void gru_forward_step(Mat& h, const Mat& pre_zr, const Mat& pre_h, CMapM uh_zr, CMapM uh_h) {
    const int hdim = static_cast<int>(h.cols());
    Mat gates = pre_zr + h * uh_zr;
    gates = (1.0 + (-gates.array()).exp()).inverse().matrix();
    auto z = gates.leftCols(hdim).array();
    auto r = gates.rightCols(hdim).array();
    Mat rh = (r * h.array()).matrix();
    Mat cand = (pre_h + rh * uh_h).array().tanh().matrix();
    h = (h.array() + z * (cand.array() - h.array())).matrix();
}

Mat rows_from_table(CMapM table, const std::vector<int>& ids) {
    Mat out(ids.size(), table.cols());
    for (size_t i = 0; i < ids.size(); ++i) out.row(static_cast<long>(i)) = table.row(ids[i]);
    return out;
}

/// Encoder forward over already-encoded molecules; returns (mu, logvar).
std::pair<Mat, Mat> encode_rows(const FwdModel& fm, const std::vector<chem::EncodedMolecule>& mols) {
    const VaeConfig& cfg = fm.m.config;
    const int n = static_cast<int>(mols.size());
    const int hdim = cfg.hidden_dim;
    Mat h = Mat::Zero(n, hdim);
    if (cfg.arch == Arch::PVAE) {
        int max_len = 0;
        for (const auto& mo : mols) max_len = std::max(max_len, mo.valid_len);
        CMapM wx_zr = fm.mat(fm.lay.enc_wx_zr), wx_h = fm.mat(fm.lay.enc_wx_h);
        CMapM uh_zr = fm.mat(fm.lay.enc_uh_zr), uh_h = fm.mat(fm.lay.enc_uh_h);
        const auto& b_zr = fm.raw(fm.lay.enc_b_zr);
        const auto& b_h = fm.raw(fm.lay.enc_b_h);
        Eigen::Map<const Eigen::RowVectorXd> bzr(b_zr.data(), b_zr.size());
        Eigen::Map<const Eigen::RowVectorXd> bh(b_h.data(), b_h.size());
        for (int t = 0; t < max_len; ++t) {
            std::vector<int> ids(n);
            for (int i = 0; i < n; ++i) ids[i] = mols[i].token_ids[t];
            Mat pre_zr = rows_from_table(wx_zr, ids);
            pre_zr.rowwise() += bzr;
            Mat pre_h = rows_from_table(wx_h, ids);
            pre_h.rowwise() += bh;
            Mat h_new = h;
            gru_forward_step(h_new, pre_zr, pre_h, uh_zr, uh_h);
            for (int i = 0; i < n; ++i)
                if (t < mols[i].valid_len) h.row(i) = h_new.row(i);
        }
    } else {
        const int v = fm.m.vocab.size();
        const int l = cfg.l_max;
        // conv stack over one-hot input, direct loops (channels are small)
        std::vector<double> cur(static_cast<size_t>(n) * v * l, 0.0);
        for (int i = 0; i < n; ++i)
            for (int t = 0; t < l; ++t)
                cur[(static_cast<size_t>(i) * v + mols[i].token_ids[t]) * l + t] = 1.0;
        int cin = v, len = l;
        for (size_t layer = 0; layer < fm.lay.enc_conv.size(); ++layer) {
            auto [wid, bid] = fm.lay.enc_conv[layer];
            const auto& w = fm.raw(wid);
            const auto& b = fm.raw(bid);
            const int cout = fm.m.params.at(wid).value.shape[0];
            const int k = fm.m.params.at(wid).value.shape[2];
            const int lo = len - k + 1;
            std::vector<double> next(static_cast<size_t>(n) * cout * lo, 0.0);
            for (int i = 0; i < n; ++i)
                for (int co = 0; co < cout; ++co) {
                    double* dst = next.data() + (static_cast<size_t>(i) * cout + co) * lo;
                    const double* wrow = w.data() + static_cast<size_t>(co) * cin * k;
                    for (int to = 0; to < lo; ++to) {
                        double acc = b[co];
                        for (int ci = 0; ci < cin; ++ci) {
                            const double* src =
                                cur.data() + (static_cast<size_t>(i) * cin + ci) * len + to;
                            const double* wk = wrow + static_cast<size_t>(ci) * k;
                            for (int j = 0; j < k; ++j) acc += src[j] * wk[j];
                        }
                        dst[to] = std::tanh(acc);
                    }
                }
            cur = std::move(next);
            cin = cout;
            len = lo;
        }
        CMapM flat(cur.data(), n, cin * len);
        const auto& fcw = fm.m.params.at(fm.lay.enc_fc_w).value;
        CMapM fw(fcw.data.data(), fcw.shape[0], fcw.shape[1]);
        const auto& fcb = fm.raw(fm.lay.enc_fc_b);
        h = (flat * fw).rowwise() + Eigen::Map<const Eigen::RowVectorXd>(fcb.data(), fcb.size());
        h = h.array().tanh().matrix();
    }
    const auto& mub = fm.raw(fm.lay.mu_b);
    const auto& lvb = fm.raw(fm.lay.lv_b);
    Mat mu = (h * fm.mat(fm.lay.mu_w)).rowwise() +
             Eigen::Map<const Eigen::RowVectorXd>(mub.data(), mub.size());
    Mat logvar = (h * fm.mat(fm.lay.lv_w)).rowwise() +
                 Eigen::Map<const Eigen::RowVectorXd>(lvb.data(), lvb.size());
    return {mu, logvar};
}

/// Free-running greedy decode from latent rows; returns decoded strings.
std::vector<std::string> greedy_decode(const FwdModel& fm, const Mat& z) {
    const VaeConfig& cfg = fm.m.config;
    const chem::TokenVocab& vocab = fm.m.vocab;
    const int n = static_cast<int>(z.rows());
    const int v = vocab.size();

    const auto& h0b = fm.raw(fm.lay.dec_h0_b);
    Mat h = ((z * fm.mat(fm.lay.dec_h0_w)).rowwise() +
             Eigen::Map<const Eigen::RowVectorXd>(h0b.data(), h0b.size()))
                .array()
                .tanh()
                .matrix();
    const auto& bzr = fm.raw(fm.lay.dec_b_zr);
    const auto& bh = fm.raw(fm.lay.dec_b_h);
    Mat base_zr = (z * fm.mat(fm.lay.dec_wz_zr)).rowwise() +
                  Eigen::Map<const Eigen::RowVectorXd>(bzr.data(), bzr.size());
    Mat base_h = (z * fm.mat(fm.lay.dec_wz_h)).rowwise() +
                 Eigen::Map<const Eigen::RowVectorXd>(bh.data(), bh.size());
    CMapM wx_zr = fm.mat(fm.lay.dec_wx_zr), wx_h = fm.mat(fm.lay.dec_wx_h);
    CMapM uh_zr = fm.mat(fm.lay.dec_uh_zr), uh_h = fm.mat(fm.lay.dec_uh_h);
    CMapM out_w = fm.mat(fm.lay.out_w);
    const auto& out_b = fm.raw(fm.lay.out_b);

    std::vector<int> cur(n, vocab.start_id);
    std::vector<uint8_t> alive(n, 1);
    std::vector<std::string> decoded(n);
    for (int t = 0; t < cfg.l_max; ++t) {
        Mat pre_zr = rows_from_table(wx_zr, cur) + base_zr;
        Mat pre_h = rows_from_table(wx_h, cur) + base_h;
        gru_forward_step(h, pre_zr, pre_h, uh_zr, uh_h);
        Mat logits = (h * out_w).rowwise() +
                     Eigen::Map<const Eigen::RowVectorXd>(out_b.data(), out_b.size());
        bool any_alive = false;
        for (int i = 0; i < n; ++i) {
            if (!alive[i]) continue;
            int best = 0;
            double bestv = logits(i, 0);
            for (int j = 1; j < v; ++j)
                if (logits(i, j) > bestv) {
                    bestv = logits(i, j);
                    best = j;
                }
            if (best == vocab.end_id || best == vocab.pad_id) {
                alive[i] = 0;
            } else if (best == vocab.start_id) {
                cur[i] = best;  // emitted marker carries no characters
            } else {
                decoded[i] += vocab.tokens[best];
                cur[i] = best;
            }
            if (alive[i]) any_alive = true;
        }
        if (!any_alive) break;
    }
    return decoded;
}

constexpr size_t kForwardChunk = 512;

}  // namespace

EmbeddingSet embed(const VaeModel& model, const std::vector<std::string>& smiles, EmbedMode mode,
                   uint64_t seed) {
    FwdModel fm(model);
    EmbeddingSet es;
    es.dim = model.config.latent_dim;
    es.mode = mode == EmbedMode::Mean ? "mean" : "sampled";
    es.seed = seed;

    std::vector<chem::EncodedMolecule> pending;
    std::vector<size_t> pending_index;
    auto flush = [&]() {
        if (pending.empty()) return;
        auto [mu, logvar] = encode_rows(fm, pending);
        for (size_t r = 0; r < pending.size(); ++r) {
            es.keys.push_back(pending[r].smiles);
            for (int j = 0; j < es.dim; ++j) {
                es.mu.push_back(mu(static_cast<long>(r), j));
                es.logvar.push_back(logvar(static_cast<long>(r), j));
            }
            if (mode == EmbedMode::Mean) {
                for (int j = 0; j < es.dim; ++j) es.z.push_back(mu(static_cast<long>(r), j));
            } else {
                Rng row_rng(substream_seed(seed, "embed/row/" + std::to_string(pending_index[r])));
                for (int j = 0; j < es.dim; ++j) {
                    double sd = std::exp(0.5 * logvar(static_cast<long>(r), j));
                    es.z.push_back(mu(static_cast<long>(r), j) + sd * row_rng.normal());
                }
            }
        }
        pending.clear();
        pending_index.clear();
    };

    for (size_t i = 0; i < smiles.size(); ++i) {
        try {
            pending.push_back(chem::encode(smiles[i], model.vocab, model.config.l_max));
            pending_index.push_back(i);
        } catch (const UnknownToken& e) {
            es.excluded.emplace_back(i, e.what());
            continue;
        } catch (const Overlength& e) {
            es.excluded.emplace_back(i, e.what());
            continue;
        }
        if (pending.size() >= kForwardChunk) flush();
    }
    flush();
    return es;
}

double reconstruction_accuracy(const VaeModel& model, const std::vector<std::string>& smiles) {
    if (smiles.empty()) return 0.0;
    FwdModel fm(model);
    size_t matches = 0;
    std::vector<chem::EncodedMolecule> pending;
    auto flush = [&]() {
        if (pending.empty()) return;
        auto [mu, logvar] = encode_rows(fm, pending);
        (void)logvar;
        auto decoded = greedy_decode(fm, mu);
        for (size_t r = 0; r < pending.size(); ++r)
            if (decoded[r] == pending[r].smiles) ++matches;
        pending.clear();
    };
    for (const auto& s : smiles) {
        try {
            pending.push_back(chem::encode(s, model.vocab, model.config.l_max));
        } catch (const Error&) {
            continue;  // unencodable row counts as a mismatch
        }
        if (pending.size() >= kForwardChunk) flush();
    }
    flush();
    return static_cast<double>(matches) / static_cast<double>(smiles.size());
}

// ---- training ----

std::string TrainLog::to_json() const {
    nlohmann::json j;
    j["steps"] = steps;
    j["skipped_batches"] = skipped_batches;
    j["best_epoch"] = best_epoch;
    j["best_val_recon"] = best_val_recon;
    auto& arr = j["epochs"] = nlohmann::json::array();
    for (const auto& e : epochs)
        arr.push_back({{"epoch", e.epoch},
                       {"total", e.total},
                       {"recon", e.recon},
                       {"kl", e.kl},
                       {"pred", e.pred},
                       {"val_recon", e.val_recon}});
    return j.dump(2);
}

TrainLog train(VaeModel& model, const std::vector<TrainItem>& corpus, const TrainOptions& opts) {
    TrainLog log;
    if (opts.epochs <= 0) return log;
    if (corpus.empty()) throw EmptyCorpus("train over an empty corpus");

    const uint64_t seed = model.config.seed;
    std::vector<size_t> order(corpus.size());
    std::iota(order.begin(), order.end(), 0);
    Rng split_rng(substream_seed(seed, "val_split"));
    split_rng.shuffle(order);
    size_t val_n = static_cast<size_t>(std::lround(opts.val_fraction * corpus.size()));
    val_n = std::min(val_n, corpus.size() > 1 ? corpus.size() - 1 : size_t{0});
    std::vector<size_t> val_idx(order.begin(), order.begin() + val_n);
    std::vector<size_t> train_idx(order.begin() + val_n, order.end());

    if (model.config.predictor) {
        const int k = static_cast<int>(model.config.predictor->descriptor_names.size());
        model.descriptor_normalizers.assign(k, {0.0, 1.0});
        for (int j = 0; j < k; ++j) {
            double mean = 0.0;
            for (size_t i : train_idx) mean += corpus[i].descriptors.at(j);
            mean /= static_cast<double>(train_idx.size());
            double ss = 0.0;
            for (size_t i : train_idx) {
                double d = corpus[i].descriptors.at(j) - mean;
                ss += d * d;
            }
            double sd = std::sqrt(ss / std::max<size_t>(1, train_idx.size() - 1));
            if (sd <= 0.0)
                throw DegenerateColumn("constant descriptor target '" +
                                       model.config.predictor->descriptor_names[j] + "'");
            model.descriptor_normalizers[j] = {mean, sd};
        }
    }

    std::vector<std::string> val_smiles;
    val_smiles.reserve(val_idx.size());
    for (size_t i : val_idx) val_smiles.push_back(corpus[i].mol.smiles);

    nn::AdamState adam;
    adam.lr = opts.lr;
    adam.init(model.params);

    const int64_t batches_per_epoch =
        (static_cast<int64_t>(train_idx.size()) + opts.batch_size - 1) / opts.batch_size;
    const int64_t total_steps = batches_per_epoch * opts.epochs;
    const int64_t warmup_steps =
        std::max<int64_t>(1, static_cast<int64_t>(opts.kl_warmup_frac * total_steps));

    std::vector<Tensor> best_params;
    int64_t global_step = 0;

    for (int epoch = 0; epoch < opts.epochs; ++epoch) {
        Rng shuffle_rng(substream_seed(seed, "shuffle/epoch" + std::to_string(epoch)));
        std::vector<size_t> idx = train_idx;
        shuffle_rng.shuffle(idx);

        // bucket windows: keep shuffling's signature but batch similar lengths
        const size_t window = static_cast<size_t>(opts.batch_size) * 8;
        for (size_t w = 0; w < idx.size(); w += window) {
            size_t hi = std::min(idx.size(), w + window);
            std::stable_sort(idx.begin() + w, idx.begin() + hi, [&](size_t a, size_t b) {
                return corpus[a].mol.valid_len < corpus[b].mol.valid_len;
            });
        }

        EpochStats stats;
        stats.epoch = epoch;
        double weight_sum = 0.0;
        for (size_t b0 = 0; b0 < idx.size(); b0 += opts.batch_size) {
            size_t b1 = std::min(idx.size(), b0 + opts.batch_size);
            std::vector<const TrainItem*> batch;
            batch.reserve(b1 - b0);
            for (size_t i = b0; i < b1; ++i) batch.push_back(&corpus[idx[i]]);

            double beta_eff = model.config.beta *
                              std::min(1.0, static_cast<double>(global_step + 1) /
                                                static_cast<double>(warmup_steps));
            Rng eps_rng(substream_seed(seed, "eps/step" + std::to_string(global_step)));
            model.params.zero_grad();
            try {
                LossParts parts = loss(model, batch, eps_rng, beta_eff, true);
                model.params.clip_global_norm(opts.clip_norm);
                nn::adam_step(model.params, adam);
                double wgt = static_cast<double>(batch.size());
                stats.total += parts.total * wgt;
                stats.recon += parts.recon * wgt;
                stats.kl += parts.kl * wgt;
                stats.pred += parts.pred * wgt;
                weight_sum += wgt;
            } catch (const NonFiniteGradient&) {
                ++log.skipped_batches;
                model.params.zero_grad();
            }
            ++global_step;
            ++log.steps;
            if (opts.log_every > 0 && global_step % opts.log_every == 0 && !opts.quiet)
                std::fprintf(stderr, "  step %lld/%lld\n", static_cast<long long>(global_step),
                             static_cast<long long>(total_steps));
        }
        if (weight_sum > 0) {
            stats.total /= weight_sum;
            stats.recon /= weight_sum;
            stats.kl /= weight_sum;
            stats.pred /= weight_sum;
        }
        stats.val_recon = val_smiles.empty() ? 0.0 : reconstruction_accuracy(model, val_smiles);
        // ties prefer the later epoch (more training at equal validation score)
        if (log.best_epoch < 0 || stats.val_recon >= log.best_val_recon) {
            log.best_epoch = epoch;
            log.best_val_recon = stats.val_recon;
            best_params.clear();
            for (const auto& p : model.params.all()) best_params.push_back(p.value);
        }
        log.epochs.push_back(stats);
        if (!opts.quiet)
            std::fprintf(stderr,
                         "epoch %d: total %.4f recon %.4f kl %.4f pred %.4f val_recon %.3f\n",
                         epoch, stats.total, stats.recon, stats.kl, stats.pred, stats.val_recon);
    }

    if (log.steps > 0 &&
        static_cast<double>(log.skipped_batches) > 0.01 * static_cast<double>(log.steps))
        throw TrainingUnstable(std::to_string(log.skipped_batches) + " of " +
                               std::to_string(log.steps) + " batches skipped");

    if (!best_params.empty() && !val_smiles.empty()) {
        for (size_t i = 0; i < model.params.size(); ++i)
            model.params.at(static_cast<int>(i)).value = best_params[i];
    }
    return log;
}

// ---- persistence ----

void VaeModel::save_bundle(const std::string& dir) const {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    {
        std::ofstream f(dir + "/config.json");
        f << config.to_json() << "\n";
    }
    {
        std::ofstream f(dir + "/vocab.json");
        f << vocab.to_json() << "\n";
    }
    params.save(dir + "/params.bin", dir + "/params.json");
    nlohmann::json norms = nlohmann::json::array();
    if (config.predictor) {
        for (size_t i = 0; i < descriptor_normalizers.size(); ++i)
            norms.push_back({{"name", config.predictor->descriptor_names[i]},
                             {"mean", descriptor_normalizers[i].first},
                             {"sd", descriptor_normalizers[i].second}});
    }
    std::ofstream f(dir + "/normalizers.json");
    f << norms.dump(2) << "\n";
}

VaeModel VaeModel::load_bundle(const std::string& dir) {
    auto slurp = [](const std::string& path) {
        std::ifstream f(path);
        if (!f) throw IoError("cannot read " + path);
        return std::string(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>());
    };
    VaeModel m;
    m.config = VaeConfig::from_json(slurp(dir + "/config.json"));
    m.vocab = chem::TokenVocab::from_json(slurp(dir + "/vocab.json"));
    m.params.load(dir + "/params.bin", dir + "/params.json");
    nlohmann::json norms = nlohmann::json::parse(slurp(dir + "/normalizers.json"));
    for (const auto& e : norms)
        m.descriptor_normalizers.emplace_back(e.at("mean").get<double>(), e.at("sd").get<double>());
    return m;
}

void EmbeddingSet::save_csv(const std::string& path) const {
    csv::Table t;
    t.header.push_back("smiles");
    for (int j = 0; j < dim; ++j) t.header.push_back("mu_" + std::to_string(j));
    for (int j = 0; j < dim; ++j) t.header.push_back("logvar_" + std::to_string(j));
    for (int j = 0; j < dim; ++j) t.header.push_back("z_" + std::to_string(j));
    for (size_t i = 0; i < size(); ++i) {
        std::vector<std::string> row;
        row.push_back(keys[i]);
        for (int j = 0; j < dim; ++j) row.push_back(csv::format_double(mu_row(i)[j]));
        for (int j = 0; j < dim; ++j) row.push_back(csv::format_double(logvar_row(i)[j]));
        for (int j = 0; j < dim; ++j) row.push_back(csv::format_double(z_row(i)[j]));
        t.rows.push_back(std::move(row));
    }
    csv::write_file(path, t);
}

EmbeddingSet EmbeddingSet::load_csv(const std::string& path) {
    csv::Table t = csv::read_file(path);
    EmbeddingSet es;
    int dim = 0;
    while (t.column("mu_" + std::to_string(dim)) >= 0) ++dim;
    if (dim == 0) throw SchemaError("no mu_* columns in " + path);
    es.dim = dim;
    int smi = t.require_column("smiles");
    int mu0 = t.require_column("mu_0");
    int lv0 = t.require_column("logvar_0");
    int z0 = t.require_column("z_0");
    for (size_t r = 0; r < t.rows.size(); ++r) {
        es.keys.push_back(t.rows[r][smi]);
        for (int j = 0; j < dim; ++j)
            es.mu.push_back(csv::parse_double(t.rows[r][mu0 + j], static_cast<long>(r)));
        for (int j = 0; j < dim; ++j)
            es.logvar.push_back(csv::parse_double(t.rows[r][lv0 + j], static_cast<long>(r)));
        for (int j = 0; j < dim; ++j)
            es.z.push_back(csv::parse_double(t.rows[r][z0 + j], static_cast<long>(r)));
    }
    return es;
}

double descriptor_probe(const EmbeddingSet& es, const std::vector<double>& column, uint64_t seed,
                        double ridge_lambda) {
    if (es.size() != column.size()) throw ShapeError("embedding/descriptor length mismatch");
    double mean = std::accumulate(column.begin(), column.end(), 0.0) / column.size();
    double ss = 0.0;
    for (double v : column) ss += (v - mean) * (v - mean);
    double sd = std::sqrt(ss / std::max<size_t>(1, column.size() - 1));
    if (sd <= 0.0) throw DegenerateColumn("constant probe target");
    std::vector<double> y(column.size());
    for (size_t i = 0; i < column.size(); ++i) y[i] = (column[i] - mean) / sd;

    qsar::QsarSpec spec;
    spec.kind = qsar::ModelKind::LR;
    spec.task = qsar::Task::Regression;
    spec.ridge_lambda = ridge_lambda;
    spec.seed = seed;
    qsar::CvReport rep =
        qsar::kfold_cv(es.z.data(), static_cast<int>(es.size()), es.dim, y, spec, 10, seed);
    return rep.mean.at("rmse");
}

}  // namespace molembed::vae
