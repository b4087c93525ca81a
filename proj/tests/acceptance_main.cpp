// Acceptance suite: runs every acceptance criterion at its stated tolerance
// and prints one pass/fail line per criterion.
//
// Heavy criteria cache trained model bundles under the work directory, so a
// rerun after an interruption resumes instead of retraining (results are
// bit-identical either way). Use --fresh to force retraining.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "../tests/fd_check.hpp"
#include "molembed/chem_data.hpp"
#include "molembed/errors.hpp"
#include "molembed/descriptors.hpp"
#include "molembed/latent_analysis.hpp"
#include "molembed/pipelines.hpp"
#include "molembed/qsar.hpp"
#include "molembed/synth.hpp"
#include "molembed/vae.hpp"

using namespace molembed;
namespace fs = std::filesystem;

namespace {

struct Options {
    std::string data_dir = MOLEMBED_DATA_DIR;
    std::string work_dir = "acceptance_work";
    std::set<int> only;
    bool fresh = false;
    int jobs = 2;
};

// pinned desk-scale experiment constants
constexpr int kLatent = 64;
constexpr int kHidden = 128;
constexpr int kBatch = 128;
constexpr double kBeta = 0.003;
constexpr double kLambdaPred = 1.0;
constexpr double kLr = 2e-3;
constexpr int kEpochs = 30;
constexpr int kSeeds = 3;       // replicate pre-trainings for criteria 4/8
constexpr int kEmbeddings = 5;  // sampled embeddings for criterion 8
constexpr uint64_t kRoot = 90210;

struct SharedData {
    chem::Dataset source;
    chem::Dataset logs;
    chem::TokenVocab vocab;
    int l_max = 0;
    std::vector<vae::TrainItem> items_joint;   // with MolLogP targets
    std::vector<vae::TrainItem> items_plain;
    std::vector<std::string> logs_smiles;
    std::vector<double> logs_y;
};

struct HeavyResults {
    // per seed: mean R2 and per-fold sd for joint/plain PVAE (criterion 4, 8)
    std::vector<double> joint_r2, plain_r2;
    std::vector<double> joint_fold_sd;
    bool ready = false;
};

Options g_opts;
SharedData g_data;
HeavyResults g_heavy;

void load_shared() {
    if (!g_data.source.records.empty()) return;
    g_data.source = chem::load_dataset(g_opts.data_dir + "/source_25k.csv");
    g_data.logs = chem::load_dataset(g_opts.data_dir + "/logs.csv");
    auto smiles = g_data.source.smiles_list();
    g_data.vocab = chem::build_vocab(smiles);
    g_data.l_max = chem::scan_l_max(smiles);
    g_data.items_joint = vae::prepare_corpus(g_data.source, g_data.vocab, g_data.l_max, {"MolLogP"});
    g_data.items_plain = vae::prepare_corpus(g_data.source, g_data.vocab, g_data.l_max, {});
    g_data.logs_smiles = g_data.logs.smiles_list();
    g_data.logs_y = g_data.logs.targets();
}

vae::VaeConfig desk_config(vae::Arch arch, bool joint, uint64_t seed) {
    vae::VaeConfig c = vae::VaeConfig::desk_preset(arch);
    c.latent_dim = kLatent;
    c.hidden_dim = kHidden;
    c.beta = kBeta;
    c.lambda_pred = kLambdaPred;
    c.l_max = g_data.l_max;
    c.seed = seed;
    if (joint) {
        vae::PredictorSpec p;
        p.descriptor_names = {"MolLogP"};
        if (arch == vae::Arch::CVAE) p.hidden = {128, 128, 128};
        c.predictor = std::move(p);
    }
    return c;
}

vae::TrainOptions desk_train_options() {
    vae::TrainOptions t;
    t.epochs = kEpochs;
    t.batch_size = kBatch;
    t.lr = kLr;
    t.val_fraction = 0.05;
    t.quiet = true;
    return t;
}

/// Train with bundle caching under the work dir.
vae::VaeModel train_cached(const std::string& tag, const vae::VaeConfig& cfg,
                           const std::vector<vae::TrainItem>& items,
                           const vae::TrainOptions& topts) {
    const std::string dir = g_opts.work_dir + "/models/" + tag;
    if (!g_opts.fresh && fs::exists(dir + "/config.json")) {
        return vae::VaeModel::load_bundle(dir);
    }
    std::printf("    training %s (%zu rows, %d epochs)...\n", tag.c_str(), items.size(),
                topts.epochs);
    std::fflush(stdout);
    vae::VaeModel m = vae::build_model(cfg, g_data.vocab);
    vae::train(m, items, topts);
    m.save_bundle(dir);
    return m;
}

void run_parallel(std::vector<std::function<void()>> tasks, int jobs) {
    std::atomic<size_t> next{0};
    std::vector<std::thread> pool;
    for (int w = 0; w < std::max(1, jobs); ++w)
        pool.emplace_back([&]() {
            for (size_t i = next.fetch_add(1); i < tasks.size(); i = next.fetch_add(1)) tasks[i]();
        });
    for (auto& th : pool) th.join();
}

/// 10-fold LR CV of logS targets on an embedding set.
qsar::CvReport logs_lr_cv(const vae::EmbeddingSet& es, uint64_t cv_seed, int jobs = 1) {
    std::set<size_t> excluded;
    for (const auto& [idx, why] : es.excluded) excluded.insert(idx);
    AVec x = es.z;
    std::vector<double> y;
    for (size_t i = 0; i < g_data.logs_y.size(); ++i)
        if (!excluded.count(i)) y.push_back(g_data.logs_y[i]);
    qsar::QsarSpec spec;
    spec.kind = qsar::ModelKind::LR;
    spec.task = qsar::Task::Regression;
    return qsar::kfold_cv(x.data(), static_cast<int>(y.size()), es.dim, y, spec, 10, cv_seed,
                          jobs);
}

bool report(int n, bool pass, const std::string& what, const std::string& detail) {
    std::printf("[%s] criterion %2d: %s  (%s)\n", pass ? "PASS" : "FAIL", n, what.c_str(),
                detail.c_str());
    std::fflush(stdout);
    return pass;
}

std::string fmt(double v) {
    char buf[64];
    snprintf(buf, sizeof(buf), "%.4g", v);
    return buf;
}

// ---------------------------------------------------------------------------
// criterion 1: gradient correctness of every differentiable op
// ---------------------------------------------------------------------------

bool criterion1() {
    Rng rng(11);
    double worst = 0.0;
    int instances = 0;
    auto randn = [&rng](std::vector<int> shape, double scale = 0.7) {
        nn::Tensor t(shape);
        for (double& v : t.data) v = scale * rng.normal();
        return t;
    };

    // linear
    for (int trial = 0; trial < 20; ++trial) {
        nn::ParamStore ps;
        int n = 1 + int(rng.below(4)), in = 1 + int(rng.below(5)), out = 1 + int(rng.below(4));
        ps.add("w", {in, out}, rng);
        ps.add("b", {out}, rng);
        nn::Tensor x = randn({n, in});
        auto fn = [&](bool bw) {
            nn::Tape t;
            nn::Var y = nn::linear(t.constant(x), t.param(&ps.at(0).value, &ps.at(0).grad),
                                   t.param(&ps.at(1).value, &ps.at(1).grad));
            nn::Var l = nn::mean_all(nn::tanh_op(y));
            if (bw) t.backward(l);
            return l.val().item();
        };
        worst = std::max(worst, fdcheck::max_rel_grad_error(ps, fn));
        ++instances;
    }

    // gru_step
    for (int trial = 0; trial < 20; ++trial) {
        nn::ParamStore ps;
        int n = 1 + int(rng.below(3)), in = 1 + int(rng.below(4)), h = 2 + int(rng.below(4));
        ps.add("wx_zr", {in, 2 * h}, rng);
        ps.add("uh_zr", {h, 2 * h}, rng);
        ps.add("b_zr", {2 * h}, rng);
        ps.add("wx_h", {in, h}, rng);
        ps.add("uh_h", {h, h}, rng);
        ps.add("b_h", {h}, rng);
        nn::Tensor x = randn({n, in}), h0 = randn({n, h});
        auto fn = [&](bool bw) {
            nn::Tape t;
            nn::GruVars g;
            g.wx_zr = t.param(&ps.at(0).value, &ps.at(0).grad);
            g.uh_zr = t.param(&ps.at(1).value, &ps.at(1).grad);
            g.b_zr = t.param(&ps.at(2).value, &ps.at(2).grad);
            g.wx_h = t.param(&ps.at(3).value, &ps.at(3).grad);
            g.uh_h = t.param(&ps.at(4).value, &ps.at(4).grad);
            g.b_h = t.param(&ps.at(5).value, &ps.at(5).grad);
            nn::Var l = nn::mean_all(nn::gru_step(t.constant(x), t.constant(h0), g));
            if (bw) t.backward(l);
            return l.val().item();
        };
        worst = std::max(worst, fdcheck::max_rel_grad_error(ps, fn));
        ++instances;
    }

    // conv1d
    for (int trial = 0; trial < 20; ++trial) {
        nn::ParamStore ps;
        int n = 1 + int(rng.below(3)), cin = 1 + int(rng.below(3)), cout = 1 + int(rng.below(3));
        int k = 1 + int(rng.below(3));
        int l = k + int(rng.below(5));
        int stride = 1 + int(rng.below(2));
        ps.add("w", {cout, cin, k}, rng, cin * k);
        ps.add("b", {cout}, rng, cin * k);
        nn::Tensor x = randn({n, cin, l});
        auto fn = [&](bool bw) {
            nn::Tape t;
            nn::Var y = nn::conv1d(t.constant(x), t.param(&ps.at(0).value, &ps.at(0).grad),
                                   t.param(&ps.at(1).value, &ps.at(1).grad), stride);
            nn::Var loss = nn::mean_all(nn::tanh_op(y));
            if (bw) t.backward(loss);
            return loss.val().item();
        };
        worst = std::max(worst, fdcheck::max_rel_grad_error(ps, fn));
        ++instances;
    }

    // weighted cross entropy (through the fused nll path)
    for (int trial = 0; trial < 20; ++trial) {
        nn::ParamStore ps;
        int n = 2 + int(rng.below(4)), v = 2 + int(rng.below(5));
        ps.add("logits", {n, v}, rng);
        std::vector<int> targets(n);
        std::vector<uint8_t> mask(n);
        std::vector<double> weights(v);
        for (int i = 0; i < n; ++i) {
            targets[i] = int(rng.below(v));
            mask[i] = rng.uniform() < 0.8 ? 1 : 0;
        }
        mask[0] = 1;  // never fully masked
        for (double& w : weights) w = 0.2 + rng.uniform();
        auto fn = [&](bool bw) {
            nn::Tape t;
            nn::Var nll = nn::weighted_nll(t.param(&ps.at(0).value, &ps.at(0).grad), targets,
                                           weights, mask);
            nn::Var l = nn::affine(nll, 0.31, 0.0);
            if (bw) t.backward(l);
            return l.val().item();
        };
        worst = std::max(worst, fdcheck::max_rel_grad_error(ps, fn));
        ++instances;
    }

    // kl_gaussian
    for (int trial = 0; trial < 20; ++trial) {
        nn::ParamStore ps;
        int n = 1 + int(rng.below(4)), d = 1 + int(rng.below(5));
        ps.add("mu", {n, d}, rng);
        ps.add("lv", {n, d}, rng);
        auto fn = [&](bool bw) {
            nn::Tape t;
            nn::Var l = nn::mean_all(nn::kl_gaussian(t.param(&ps.at(0).value, &ps.at(0).grad),
                                                     t.param(&ps.at(1).value, &ps.at(1).grad)));
            if (bw) t.backward(l);
            return l.val().item();
        };
        worst = std::max(worst, fdcheck::max_rel_grad_error(ps, fn));
        ++instances;
    }

    // full VAE loss on tiny models of both architectures
    {
        synth::GenOptions opts;
        opts.count = 8;
        opts.seed = 5;
        opts.max_chars = 10;
        opts.min_chars = 3;
        auto corpus = synth::generate_corpus(opts);
        auto vocab = chem::build_vocab(corpus);
        int l_max = chem::scan_l_max(corpus);
        auto dm = synth::synth_descriptors(corpus, 6);
        const auto& logp = dm.column("MolLogP");
        std::vector<vae::TrainItem> items;
        for (size_t i = 0; i < corpus.size(); ++i) {
            vae::TrainItem it;
            it.mol = chem::encode(corpus[i], vocab, l_max);
            it.descriptors = {logp[i]};
            items.push_back(std::move(it));
        }
        for (int trial = 0; trial < 20; ++trial) {
            vae::VaeConfig c = vae::VaeConfig::desk_preset(trial % 2 ? vae::Arch::CVAE
                                                                     : vae::Arch::PVAE);
            c.latent_dim = 3;
            c.hidden_dim = 4;
            c.conv = {{3, 3}};
            c.l_max = l_max;
            c.seed = 100 + trial;
            c.beta = 0.4;
            if (trial % 3 != 0) {
                vae::PredictorSpec p;
                p.descriptor_names = {"MolLogP"};
                if (c.arch == vae::Arch::CVAE) p.hidden = {4};
                c.predictor = std::move(p);
            }
            vae::VaeModel m = vae::build_model(c, vocab);
            if (c.predictor) m.descriptor_normalizers = {{0.0, 1.5}};
            std::vector<const vae::TrainItem*> batch;
            for (size_t i = 0; i < 3; ++i) batch.push_back(&items[(trial + i) % items.size()]);
            auto fn = [&](bool bw) {
                Rng eps(777);  // identical draw on every evaluation
                return vae::loss(m, batch, eps, c.beta, bw).total;
            };
            worst = std::max(worst, fdcheck::max_rel_grad_error(m.params, fn));
            ++instances;
        }
    }

    return report(1, worst < 1e-4, "gradient correctness of all differentiable ops",
                  "max rel err " + fmt(worst) + " over " + std::to_string(instances) +
                      " instances, tolerance 1e-4");
}

// ---------------------------------------------------------------------------
// criterion 2: metric oracles
// ---------------------------------------------------------------------------

bool criterion2() {
    bool ok = true;
    auto near = [&](double a, double b) { return std::fabs(a - b) <= 1e-10; };

    ok &= near(qsar::r2({1, 2, 3}, {1, 2, 3}), 1.0);
    ok &= near(qsar::rmse({1, 2, 3}, {1, 2, 3}), 0.0);
    ok &= near(qsar::r2({1, 2, 3}, {1, 2, 4}), 0.5);
    ok &= near(qsar::rmse({1, 2, 3}, {1, 2, 4}), std::sqrt(1.0 / 3.0));
    ok &= near(qsar::accuracy({1, 1, 0, 0}, {0.9, 0.2, 0.8, 0.1}), 0.5);
    ok &= near(qsar::f1({1, 1, 0, 0}, {0.9, 0.2, 0.8, 0.1}), 0.5);
    ok &= near(qsar::f1({1, 1, 0, 0}, {0.1, 0.1, 0.1, 0.1}), 0.0);
    ok &= near(desc::pearson({1, 2, 3}, {2, 4, 6}), 1.0);
    ok &= near(desc::pearson({1, 2, 3}, {6, 4, 2}), -1.0);
    ok &= near(desc::pearson({1, 2, 3, 4}, {1, 3, 2, 4}), 0.8);

    Rng rng(21);
    int checked = 0;
    for (int trial = 0; trial < 1000 && ok; ++trial) {
        size_t n = 3 + rng.below(40);
        std::vector<double> y(n), yh(n);
        for (size_t i = 0; i < n; ++i) {
            y[i] = rng.normal();
            yh[i] = rng.normal();
        }
        double mean = std::accumulate(y.begin(), y.end(), 0.0) / n;
        ok &= std::fabs(qsar::r2(y, std::vector<double>(n, mean))) <= 1e-9;
        ok &= qsar::r2(y, yh) <= 1.0;
        double mse = 0;
        for (size_t i = 0; i < n; ++i) mse += (y[i] - yh[i]) * (y[i] - yh[i]);
        mse /= n;
        ok &= std::fabs(qsar::rmse(y, yh) * qsar::rmse(y, yh) - mse) <= 1e-10;
        // F1 edge cases: no positive predictions and perfect predictions
        std::vector<double> lab(n);
        for (auto& v : lab) v = rng.uniform() < 0.5 ? 1.0 : 0.0;
        lab[0] = 1.0;
        ok &= near(qsar::f1(lab, std::vector<double>(n, 0.0)), 0.0);
        ok &= near(qsar::f1(lab, lab), 1.0);
        ++checked;
    }
    return report(2, ok, "metric oracles match hand-derived values and properties",
                  std::to_string(checked) + " random instances, tolerance 1e-10");
}

// ---------------------------------------------------------------------------
// criterion 3: descriptor selection fidelity on the shipped logS CSV
// ---------------------------------------------------------------------------

bool criterion3() {
    load_shared();
    desc::DescriptorMatrix m;
    m.names = g_data.logs.descriptor_names;
    m.columns.assign(m.names.size(), {});
    for (const auto& r : g_data.logs.records)
        for (size_t c = 0; c < r.descriptors.size(); ++c) m.columns[c].push_back(r.descriptors[c]);
    desc::DescriptorMatrix filtered = desc::variance_filter(m, 0.5);
    auto sel = desc::select_descriptors(filtered, g_data.logs_y, 3, 0.9);

    bool first_is_mollogp = !sel.selected.empty() && sel.selected[0] == "MolLogP";
    double r = 0.0;
    for (const auto& e : sel.entries)
        if (e.name == "MolLogP") r = e.r;
    bool r_ok = std::fabs(r - (-0.8)) <= 0.05;

    std::set<std::string> got(sel.selected.begin(), sel.selected.end());
    bool names_match = got == std::set<std::string>{"MolLogP", "PEOE_VSA6", "MolWt"};
    std::string names;
    for (const auto& s : sel.selected) names += s + " ";

    // shipped CSVs are synthetic stand-ins, so the r tolerance is binding and
    // the name-set comparison is reported
    return report(3, first_is_mollogp && r_ok, "descriptor selection picks MolLogP first",
                  "r = " + fmt(r) + " (target -0.8 +- 0.05); top-3 = " + names +
                      (names_match ? "[matches reference set]" : "[differs from reference set]"));
}

// ---------------------------------------------------------------------------
// criterion 4: joint-training effect (trend at desk scale)
// ---------------------------------------------------------------------------

void run_heavy_pvae() {
    if (g_heavy.ready) return;
    load_shared();
    g_heavy.joint_r2.assign(kSeeds, 0.0);
    g_heavy.plain_r2.assign(kSeeds, 0.0);
    g_heavy.joint_fold_sd.assign(kSeeds, 0.0);

    std::vector<std::function<void()>> tasks;
    for (int s = 0; s < kSeeds; ++s) {
        for (bool joint : {true, false}) {
            tasks.push_back([s, joint]() {
                std::string tag = std::string("pvae-") + (joint ? "joint" : "plain") + "-s" +
                                  std::to_string(s);
                vae::VaeConfig cfg = desk_config(vae::Arch::PVAE, joint,
                                                 substream_seed(kRoot, "vae/" + tag));
                vae::VaeModel m = train_cached(tag, cfg,
                                               joint ? g_data.items_joint : g_data.items_plain,
                                               desk_train_options());
                vae::EmbeddingSet es =
                    vae::embed(m, g_data.logs_smiles, vae::EmbedMode::Sampled,
                               substream_seed(kRoot, "embed/" + tag));
                qsar::CvReport rep = logs_lr_cv(es, substream_seed(kRoot, "cv/" + tag));
                if (joint) {
                    g_heavy.joint_r2[s] = rep.mean.at("r2");
                    g_heavy.joint_fold_sd[s] = rep.sd.at("r2");
                } else {
                    g_heavy.plain_r2[s] = rep.mean.at("r2");
                }
            });
        }
    }
    run_parallel(std::move(tasks), g_opts.jobs);
    g_heavy.ready = true;
}

double mean_of(const std::vector<double>& v) {
    return std::accumulate(v.begin(), v.end(), 0.0) / v.size();
}

double sd_of(const std::vector<double>& v) {
    double m = mean_of(v);
    double ss = 0;
    for (double x : v) ss += (x - m) * (x - m);
    return v.size() > 1 ? std::sqrt(ss / (v.size() - 1)) : 0.0;
}

bool criterion4() {
    run_heavy_pvae();
    double joint = mean_of(g_heavy.joint_r2);
    double plain = mean_of(g_heavy.plain_r2);
    double delta = joint - plain;
    return report(4, delta >= 0.03, "joint pre-training lifts downstream LR R2 on logS",
                  "joint " + fmt(joint) + " vs plain " + fmt(plain) + ", delta " + fmt(delta) +
                      " >= 0.03 over " + std::to_string(kSeeds) + " seeds");
}

// ---------------------------------------------------------------------------
// criterion 5: descriptor-information probe
// ---------------------------------------------------------------------------

bool criterion5() {
    load_shared();
    std::vector<double> logp = g_data.logs.descriptor_column("MolLogP");

    auto probe = [&](const vae::VaeModel& m, const std::string& label) {
        vae::EmbeddingSet es = vae::embed(m, g_data.logs_smiles, vae::EmbedMode::Sampled,
                                          substream_seed(kRoot, "probe/" + label));
        std::set<size_t> excluded;
        for (const auto& [idx, why] : es.excluded) excluded.insert(idx);
        std::vector<double> col;
        for (size_t i = 0; i < logp.size(); ++i)
            if (!excluded.count(i)) col.push_back(logp[i]);
        return vae::descriptor_probe(es, col, substream_seed(kRoot, "probe_cv/" + label));
    };

    // PVAE pair comes from the criterion-4 cache
    run_heavy_pvae();
    vae::VaeModel pvae_joint = vae::VaeModel::load_bundle(g_opts.work_dir + "/models/pvae-joint-s0");
    vae::VaeModel pvae_plain = vae::VaeModel::load_bundle(g_opts.work_dir + "/models/pvae-plain-s0");

    // CVAE pair is trained here (one seed)
    vae::VaeModel cvae_joint, cvae_plain;
    std::vector<std::function<void()>> tasks;
    tasks.push_back([&]() {
        cvae_joint = train_cached("cvae-joint-s0",
                                  desk_config(vae::Arch::CVAE, true,
                                              substream_seed(kRoot, "vae/cvae-joint-s0")),
                                  g_data.items_joint, desk_train_options());
    });
    tasks.push_back([&]() {
        cvae_plain = train_cached("cvae-plain-s0",
                                  desk_config(vae::Arch::CVAE, false,
                                              substream_seed(kRoot, "vae/cvae-plain-s0")),
                                  g_data.items_plain, desk_train_options());
    });
    run_parallel(std::move(tasks), g_opts.jobs);

    double pj = probe(pvae_joint, "pvae-joint");
    double pp = probe(pvae_plain, "pvae-plain");
    double cj = probe(cvae_joint, "cvae-joint");
    double cp = probe(cvae_plain, "cvae-plain");
    bool ok = pj < pp && cj < cp;
    return report(5, ok, "joint models keep more descriptor information (probe RMSE)",
                  "pvae " + fmt(pj) + " < " + fmt(pp) + "; cvae " + fmt(cj) + " < " + fmt(cp));
}

// ---------------------------------------------------------------------------
// criterion 6: noise matching
// ---------------------------------------------------------------------------

bool criterion6() {
    Rng rng(31);
    const int n = 5000;
    std::vector<double> y(n), d(n);
    for (int i = 0; i < n; ++i) {
        y[i] = rng.normal();
        d[i] = y[i] + 0.45 * rng.normal();  // base correlation ~0.91
    }
    int hits = 0;
    std::vector<double> targets = {0.85, 0.80, 0.75, 0.70, 0.65, 0.60, 0.55, 0.50, 0.45, 0.40};
    double worst = 0.0;
    for (size_t i = 0; i < targets.size(); ++i) {
        desc::NoisyColumn nc = desc::noisy_descriptor(d, y, targets[i], 1000 + i);
        double err = std::fabs(nc.achieved_r - targets[i]);
        worst = std::max(worst, err);
        if (err <= 0.03) ++hits;
    }
    return report(6, hits == 10, "noisy descriptors hit requested correlations",
                  std::to_string(hits) + "/10 within 0.03 (worst err " + fmt(worst) + ")");
}

// ---------------------------------------------------------------------------
// criterion 7: subset-sweep reconstruction trend
// ---------------------------------------------------------------------------

bool criterion7() {
    load_shared();
    Rng eval_rng(substream_seed(kRoot, "sweep/eval"));
    std::vector<size_t> order(g_data.items_plain.size());
    std::iota(order.begin(), order.end(), 0);
    eval_rng.shuffle(order);
    const size_t eval_n = 2000;
    std::vector<std::string> eval_smiles;
    for (size_t i = 0; i < eval_n; ++i)
        eval_smiles.push_back(g_data.items_plain[order[i]].mol.smiles);
    std::vector<size_t> pool(order.begin() + eval_n, order.end());

    std::vector<double> fractions = {0.02, 0.10, 0.50, 1.00};
    std::vector<double> recon(fractions.size(), 0.0);
    std::vector<std::function<void()>> tasks;
    for (size_t fi = 0; fi < fractions.size(); ++fi) {
        tasks.push_back([&, fi]() {
            double frac = fractions[fi];
            size_t n = static_cast<size_t>(std::lround(frac * pool.size()));
            Rng sub_rng(substream_seed(kRoot, "sweep/subset/" + std::to_string(frac)));
            std::vector<size_t> shuffled = pool;
            sub_rng.shuffle(shuffled);
            std::vector<vae::TrainItem> items;
            items.reserve(n);
            for (size_t i = 0; i < n; ++i) items.push_back(g_data.items_plain[shuffled[i]]);
            std::string tag = "sweep-" + std::to_string(frac);
            vae::VaeConfig cfg = desk_config(vae::Arch::PVAE, false,
                                             substream_seed(kRoot, "vae/" + tag));
            vae::VaeModel m = train_cached(tag, cfg, items, desk_train_options());
            recon[fi] = vae::reconstruction_accuracy(m, eval_smiles);
        });
    }
    run_parallel(std::move(tasks), g_opts.jobs);

    double rho = 0.0;
    bool computable = true;
    try {
        rho = latent::spearman(fractions, recon);
    } catch (const DegenerateColumn&) {
        computable = false;
    }
    std::string detail = "accuracy:";
    for (size_t i = 0; i < fractions.size(); ++i)
        detail += " " + fmt(fractions[i]) + "->" + fmt(recon[i]);
    detail += "; spearman " + (computable ? fmt(rho) : std::string("undefined"));
    return report(7, computable && rho > 0.8,
                  "reconstruction accuracy increases with source-subset size", detail);
}

// ---------------------------------------------------------------------------
// criterion 8: variance decomposition
// ---------------------------------------------------------------------------

bool criterion8() {
    run_heavy_pvae();
    vae::VaeModel model = vae::VaeModel::load_bundle(g_opts.work_dir + "/models/pvae-joint-s0");

    std::vector<double> embed_means(kEmbeddings, 0.0), fold_sds(kEmbeddings, 0.0);
    std::vector<std::function<void()>> tasks;
    for (int e = 0; e < kEmbeddings; ++e) {
        tasks.push_back([&, e]() {
            vae::EmbeddingSet es =
                vae::embed(model, g_data.logs_smiles, vae::EmbedMode::Sampled,
                           substream_seed(kRoot, "var/embed/" + std::to_string(e)));
            qsar::CvReport rep = logs_lr_cv(es, substream_seed(kRoot, "var/cv"));
            embed_means[e] = rep.mean.at("r2");
            fold_sds[e] = rep.sd.at("r2");
        });
    }
    run_parallel(std::move(tasks), g_opts.jobs);

    double across_embedding_sd = sd_of(embed_means);
    double mean_fold_sd = mean_of(fold_sds);
    double across_model_sd = sd_of(g_heavy.joint_r2);

    bool cond1 = across_embedding_sd <= 0.2 * mean_fold_sd;
    bool cond2 = across_model_sd > across_embedding_sd;
    return report(8, cond1 && cond2, "variance: encoder noise << fold noise < model noise",
                  "embedding sd " + fmt(across_embedding_sd) + " <= 0.2*fold sd (" +
                      fmt(0.2 * mean_fold_sd) + "); model sd " + fmt(across_model_sd) + " > " +
                      fmt(across_embedding_sd));
}

// ---------------------------------------------------------------------------
// criterion 9: cluster distance vs error
// ---------------------------------------------------------------------------

bool criterion9() {
    run_heavy_pvae();
    vae::VaeModel model = vae::VaeModel::load_bundle(g_opts.work_dir + "/models/pvae-joint-s0");
    vae::EmbeddingSet es = vae::embed(model, g_data.logs_smiles, vae::EmbedMode::Sampled,
                                      substream_seed(kRoot, "cluster/embed"));
    std::set<size_t> excluded;
    for (const auto& [idx, why] : es.excluded) excluded.insert(idx);
    std::vector<double> y;
    for (size_t i = 0; i < g_data.logs_y.size(); ++i)
        if (!excluded.count(i)) y.push_back(g_data.logs_y[i]);
    qsar::CvReport rep = logs_lr_cv(es, substream_seed(kRoot, "cluster/cv"), g_opts.jobs);

    AVec points = latent::standardize_columns(es.mu, static_cast<int>(es.size()), es.dim);
    bool all_ok = true;
    std::string detail;
    for (int k : {5, 10}) {
        auto km = latent::kmeans(points.data(), static_cast<int>(es.size()), es.dim, k,
                                 substream_seed(kRoot, "cluster/kmeans/" + std::to_string(k)));
        auto profiles = latent::cluster_error_profile(es, km.assignments, y, rep.oof_pred, false);
        std::vector<double> kl, err;
        for (const auto& p : profiles) {
            kl.push_back(p.kl_to_prior);
            err.push_back(p.metric);
        }
        // drop the single highest-KL cluster (outlier slot)
        kl.pop_back();
        err.pop_back();
        double rho = latent::spearman(kl, err);
        detail += "k=" + std::to_string(k) + " rho=" + fmt(rho) + "  ";
        all_ok &= rho > 0.0;
    }
    return report(9, all_ok, "cluster KL-to-prior correlates with cluster error", detail);
}

// ---------------------------------------------------------------------------
// criterion 10: determinism of pipeline reports
// ---------------------------------------------------------------------------

bool criterion10() {
    load_shared();
    pipe::ExperimentConfig cfg;
    cfg.name = "determinism_a";
    cfg.seed = 51;
    cfg.outdir = g_opts.work_dir + "/determinism";
    cfg.source_path = g_opts.data_dir + "/source_25k.csv";
    cfg.source_fraction = 0.04;  // 1000 molecules keep the double run cheap
    cfg.target_path = g_opts.data_dir + "/logs.csv";
    cfg.vae = desk_config(vae::Arch::PVAE, false, 0);
    cfg.vae.latent_dim = 16;
    cfg.vae.hidden_dim = 32;
    cfg.train.epochs = 2;
    cfg.train.batch_size = kBatch;
    cfg.descriptor_mode = "auto";
    cfg.descriptor_k = 1;
    cfg.folds = 5;
    cfg.replicates = {1};
    cfg.jobs = g_opts.jobs;
    cfg.quiet = true;
    cfg.resume = false;

    fs::remove_all(cfg.exp_dir());
    std::string first = pipe::cmd_pipeline(cfg);
    fs::remove_all(cfg.exp_dir());
    std::string second = pipe::cmd_pipeline(cfg);
    bool identical = first == second;
    return report(10, identical, "identical config and seeds give byte-identical reports",
                  identical ? std::to_string(first.size()) + " bytes equal"
                            : "reports differ");
}

}  // namespace

int main(int argc, char** argv) {
    for (int i = 1; i < argc; ++i) {
        std::string a = argv[i];
        if (a == "--only" && i + 1 < argc) {
            std::string list = argv[++i];
            size_t pos = 0;
            while (pos < list.size()) {
                size_t comma = list.find(',', pos);
                if (comma == std::string::npos) comma = list.size();
                g_opts.only.insert(std::stoi(list.substr(pos, comma - pos)));
                pos = comma + 1;
            }
        } else if (a == "--workdir" && i + 1 < argc) {
            g_opts.work_dir = argv[++i];
        } else if (a == "--data" && i + 1 < argc) {
            g_opts.data_dir = argv[++i];
        } else if (a == "--fresh") {
            g_opts.fresh = true;
        } else if (a == "--jobs" && i + 1 < argc) {
            g_opts.jobs = std::stoi(argv[++i]);
        } else {
            std::fprintf(stderr,
                         "usage: acceptance [--only N,M,...] [--workdir DIR] [--data DIR] "
                         "[--fresh] [--jobs N]\n");
            return 2;
        }
    }
    fs::create_directories(g_opts.work_dir);

    using Criterion = bool (*)();
    std::vector<std::pair<int, Criterion>> criteria = {
        {1, criterion1}, {2, criterion2}, {3, criterion3}, {6, criterion6},
        {4, criterion4}, {5, criterion5}, {7, criterion7}, {8, criterion8},
        {9, criterion9}, {10, criterion10}};

    int failures = 0;
    for (auto [num, fn] : criteria) {
        if (!g_opts.only.empty() && !g_opts.only.count(num)) continue;
        try {
            if (!fn()) ++failures;
        } catch (const std::exception& e) {
            report(num, false, "criterion raised an exception", e.what());
            ++failures;
        }
    }
    if (failures == 0) {
        std::printf("acceptance: all criteria passed\n");
        return 0;
    }
    std::printf("acceptance: %d criterion(s) failed\n", failures);
    return 1;
}
