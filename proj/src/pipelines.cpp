#include "molembed/pipelines.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>
#include <thread>

#include <json.hpp>

#include "molembed/csv.hpp"
#include "molembed/descriptors.hpp"
#include "molembed/digest.hpp"
#include "molembed/errors.hpp"
#include "molembed/latent_analysis.hpp"

namespace molembed::pipe {

namespace fs = std::filesystem;
using nlohmann::json;

// ---- config ----

std::string ExperimentConfig::to_json() const {
    json j;
    j["name"] = name;
    j["seed"] = seed;
    j["outdir"] = outdir;
    j["source"] = {{"path", source_path}, {"fraction", source_fraction}};
    j["target"] = {{"path", target_path}};
    if (classify_threshold) j["target"]["classify_threshold"] = *classify_threshold;
    j["vae"] = json::parse(vae.to_json());
    j["train"] = {{"epochs", train.epochs},       {"batch_size", train.batch_size},
                  {"lr", train.lr},               {"clip_norm", train.clip_norm},
                  {"val_fraction", train.val_fraction}, {"kl_warmup_frac", train.kl_warmup_frac}};
    j["descriptors"] = {{"mode", descriptor_mode},
                        {"k", descriptor_k},
                        {"intercorr_cut", intercorr_cut},
                        {"variance_threshold", variance_threshold},
                        {"names", descriptor_names},
                        {"noise_base", noise_base},
                        {"noise_r_targets", noise_r_targets}};
    auto& specs = j["qsar"] = json::array();
    for (const auto& s : qsar_specs) specs.push_back(json::parse(s.to_json()));
    j["folds"] = folds;
    j["embed_mode"] = embed_mode;
    j["replicates"] = replicates;
    j["subset_fractions"] = subset_fractions;
    j["subset_eval_n"] = subset_eval_n;
    j["size_matched_n"] = size_matched_n;
    j["clusters"] = {{"k", cluster_k}, {"sweep", cluster_k_sweep}};
    j["variance"] = {{"models", variance_models}, {"embeddings", variance_embeddings}};
    j["jobs"] = jobs;
    j["resume"] = resume;
    return j.dump(2);
}

ExperimentConfig ExperimentConfig::from_json(const std::string& text) {
    json j = json::parse(text);
    ExperimentConfig c;
    c.name = j.value("name", c.name);
    c.seed = j.value("seed", c.seed);
    c.outdir = j.value("outdir", c.outdir);
    if (j.contains("source")) {
        c.source_path = j["source"].value("path", "");
        c.source_fraction = j["source"].value("fraction", 1.0);
    }
    if (j.contains("target")) {
        c.target_path = j["target"].value("path", "");
        if (j["target"].contains("classify_threshold"))
            c.classify_threshold = j["target"]["classify_threshold"].get<double>();
    }
    if (j.contains("vae")) c.vae = vae::VaeConfig::from_json(j["vae"].dump());
    if (j.contains("train")) {
        const auto& t = j["train"];
        c.train.epochs = t.value("epochs", c.train.epochs);
        c.train.batch_size = t.value("batch_size", c.train.batch_size);
        c.train.lr = t.value("lr", c.train.lr);
        c.train.clip_norm = t.value("clip_norm", c.train.clip_norm);
        c.train.val_fraction = t.value("val_fraction", c.train.val_fraction);
        c.train.kl_warmup_frac = t.value("kl_warmup_frac", c.train.kl_warmup_frac);
    }
    if (j.contains("descriptors")) {
        const auto& d = j["descriptors"];
        c.descriptor_mode = d.value("mode", c.descriptor_mode);
        c.descriptor_k = d.value("k", c.descriptor_k);
        c.intercorr_cut = d.value("intercorr_cut", c.intercorr_cut);
        c.variance_threshold = d.value("variance_threshold", c.variance_threshold);
        c.descriptor_names = d.value("names", c.descriptor_names);
        c.noise_base = d.value("noise_base", c.noise_base);
        c.noise_r_targets = d.value("noise_r_targets", c.noise_r_targets);
    }
    if (j.contains("qsar")) {
        c.qsar_specs.clear();
        for (const auto& s : j["qsar"]) c.qsar_specs.push_back(qsar::QsarSpec::from_json(s.dump()));
    }
    c.folds = j.value("folds", c.folds);
    c.embed_mode = j.value("embed_mode", c.embed_mode);
    c.replicates = j.value("replicates", c.replicates);
    c.subset_fractions = j.value("subset_fractions", c.subset_fractions);
    c.subset_eval_n = j.value("subset_eval_n", c.subset_eval_n);
    c.size_matched_n = j.value("size_matched_n", c.size_matched_n);
    if (j.contains("clusters")) {
        c.cluster_k = j["clusters"].value("k", c.cluster_k);
        c.cluster_k_sweep = j["clusters"].value("sweep", c.cluster_k_sweep);
    }
    if (j.contains("variance")) {
        c.variance_models = j["variance"].value("models", c.variance_models);
        c.variance_embeddings = j["variance"].value("embeddings", c.variance_embeddings);
    }
    c.jobs = j.value("jobs", c.jobs);
    c.resume = j.value("resume", c.resume);
    return c;
}

ExperimentConfig ExperimentConfig::from_json_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open config file: " + path);
    std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return from_json(text);
}

// ---- shared helpers ----

namespace {

struct SourceData {
    chem::Dataset ds;
    chem::TokenVocab vocab;
    int l_max = 0;
};

SourceData load_source(const ExperimentConfig& cfg) {
    if (cfg.source_path.empty()) throw ConfigError("source.path is required");
    SourceData s;
    s.ds = chem::load_dataset(cfg.source_path);
    auto smiles = s.ds.smiles_list();
    s.vocab = chem::build_vocab(smiles);
    s.l_max = chem::scan_l_max(smiles);
    if (cfg.source_fraction < 1.0) {
        size_t keep = static_cast<size_t>(std::lround(cfg.source_fraction * s.ds.size()));
        keep = std::max<size_t>(keep, 1);
        Rng rng(substream_seed(cfg.seed, "source_subset"));
        auto idx = rng.sample_indices(s.ds.size(), keep);
        std::sort(idx.begin(), idx.end());
        chem::Dataset sub;
        sub.descriptor_names = s.ds.descriptor_names;
        sub.task_kind = s.ds.task_kind;
        for (size_t i : idx) sub.records.push_back(s.ds.records[i]);
        s.ds = std::move(sub);
    }
    return s;
}

chem::Dataset load_target(const ExperimentConfig& cfg) {
    if (cfg.target_path.empty()) throw ConfigError("target.path is required");
    chem::LoadOptions opts;
    opts.classify_threshold = cfg.classify_threshold;
    chem::Dataset ds = chem::load_dataset(cfg.target_path, opts);
    // outlier rows (beyond 5 IQR on any descriptor) are dropped up front
    if (!ds.descriptor_names.empty() && ds.size() >= 8) {
        desc::DescriptorMatrix m;
        m.names = ds.descriptor_names;
        m.columns.assign(m.names.size(), {});
        for (const auto& r : ds.records)
            for (size_t c = 0; c < r.descriptors.size(); ++c)
                m.columns[c].push_back(r.descriptors[c]);
        auto outliers = desc::outlier_rows(m);
        if (!outliers.empty()) {
            std::set<size_t> drop(outliers.begin(), outliers.end());
            chem::Dataset kept;
            kept.descriptor_names = ds.descriptor_names;
            kept.task_kind = ds.task_kind;
            for (size_t i = 0; i < ds.records.size(); ++i)
                if (!drop.count(i)) kept.records.push_back(ds.records[i]);
            ds = std::move(kept);
        }
    }
    return ds;
}

desc::DescriptorMatrix matrix_of(const chem::Dataset& ds) {
    desc::DescriptorMatrix m;
    m.names = ds.descriptor_names;
    m.columns.assign(m.names.size(), {});
    for (const auto& r : ds.records)
        for (size_t c = 0; c < r.descriptors.size(); ++c) m.columns[c].push_back(r.descriptors[c]);
    return m;
}

/// Resolves the descriptor list for joint pre-training per config mode.
std::pair<std::vector<std::string>, json> resolve_descriptors(const ExperimentConfig& cfg,
                                                              const chem::Dataset& target) {
    json report;
    if (cfg.descriptor_mode == "none") return {{}, report};
    if (cfg.descriptor_mode == "explicit") {
        report["mode"] = "explicit";
        report["selected"] = cfg.descriptor_names;
        return {cfg.descriptor_names, report};
    }
    if (cfg.descriptor_mode != "auto")
        throw ConfigError("descriptors.mode must be auto|explicit|none for this command");
    desc::DescriptorMatrix filtered =
        desc::variance_filter(matrix_of(target), cfg.variance_threshold);
    auto sel = desc::select_descriptors(filtered, target.targets(), cfg.descriptor_k,
                                        cfg.intercorr_cut);
    report = json::parse(sel.to_json());
    report["mode"] = "auto";
    return {sel.selected, report};
}

json input_digests(std::initializer_list<std::string> paths) {
    json j;
    for (const auto& p : paths)
        if (!p.empty()) j[p] = sha256_file(p);
    return j;
}

std::string write_report(const ExperimentConfig& cfg, const std::string& filename, json j) {
    fs::create_directories(cfg.exp_dir());
    std::string text = j.dump(2) + "\n";
    std::ofstream f(cfg.exp_dir() + "/" + filename);
    if (!f) throw IoError("cannot write report: " + cfg.exp_dir() + "/" + filename);
    f << text;
    return text;
}

std::string model_tag(vae::Arch arch, bool joint, size_t replicate) {
    return arch_name(arch) + std::string(joint ? "-joint" : "-plain") + "-r" +
           std::to_string(replicate);
}

/// Trains (or resumes) one VAE; bundles live under <exp_dir>/models/<tag>.
vae::VaeModel train_or_load(const ExperimentConfig& cfg, const SourceData& src,
                            const std::vector<vae::TrainItem>& items,
                            const std::vector<std::string>& descriptor_names, vae::Arch arch,
                            size_t replicate) {
    const bool joint = !descriptor_names.empty();
    const std::string tag = model_tag(arch, joint, replicate);
    const std::string dir = cfg.exp_dir() + "/models/" + tag;
    if (cfg.resume && fs::exists(dir + "/config.json")) {
        if (!cfg.quiet) std::fprintf(stderr, "[%s] reusing bundle %s\n", tag.c_str(), dir.c_str());
        return vae::VaeModel::load_bundle(dir);
    }
    vae::VaeConfig vc = cfg.vae;
    vc.arch = arch;
    vc.penalized = arch == vae::Arch::PVAE ? cfg.vae.penalized : false;
    vc.l_max = src.l_max;
    vc.seed = substream_seed(cfg.seed, "vae/" + tag);
    if (joint) {
        vae::PredictorSpec p;
        p.descriptor_names = descriptor_names;
        if (arch == vae::Arch::CVAE)
            p.hidden = cfg.vae.predictor ? cfg.vae.predictor->hidden : std::vector<int>{};
        vc.predictor = std::move(p);
    } else {
        vc.predictor.reset();
    }
    vae::VaeModel model = vae::build_model(vc, src.vocab);
    vae::TrainOptions topts = cfg.train;
    topts.quiet = cfg.quiet;
    if (!cfg.quiet) std::fprintf(stderr, "[%s] training (%zu rows)\n", tag.c_str(), items.size());
    vae::TrainLog log = vae::train(model, items, topts);
    model.save_bundle(dir);
    {
        std::ofstream f(dir + "/trainlog.json");
        f << log.to_json() << "\n";
    }
    return model;
}

/// Triplet of aligned CV inputs after dropping rows the encoder excluded.
struct CvInputs {
    AVec x;
    std::vector<double> y;
    std::vector<std::string> keys;
    int n = 0, d = 0;
};

CvInputs cv_inputs(const vae::EmbeddingSet& es, const chem::Dataset& target) {
    std::set<size_t> excluded;
    for (const auto& [idx, why] : es.excluded) excluded.insert(idx);
    CvInputs in;
    in.d = es.dim;
    in.x = es.z;
    in.keys = es.keys;
    size_t row = 0;
    for (size_t i = 0; i < target.records.size(); ++i) {
        if (excluded.count(i)) continue;
        in.y.push_back(target.records[i].target.value_or(0.0));
        ++row;
    }
    if (row != es.size()) throw ShapeError("embedding rows do not align with the dataset");
    in.n = static_cast<int>(row);
    return in;
}

qsar::Task task_of(const chem::Dataset& ds) {
    return ds.task_kind == chem::TaskKind::Classification ? qsar::Task::Classification
                                                          : qsar::Task::Regression;
}

void write_oof_csv(const ExperimentConfig& cfg, const std::string& filename, const CvInputs& in,
                   const qsar::CvReport& rep) {
    csv::Table t;
    t.header = {"smiles", "y_true", "y_pred", "fold"};
    for (int i = 0; i < in.n; ++i)
        t.rows.push_back({in.keys[i], csv::format_double(in.y[i]),
                          csv::format_double(rep.oof_pred[i]), std::to_string(rep.fold_of[i])});
    csv::write_file(cfg.exp_dir() + "/" + filename, t);
}

std::vector<qsar::QsarSpec> specs_or_default(const ExperimentConfig& cfg, qsar::Task task) {
    std::vector<qsar::QsarSpec> specs = cfg.qsar_specs;
    if (specs.empty()) {
        qsar::QsarSpec s;
        s.kind = qsar::ModelKind::LR;
        specs.push_back(s);
    }
    for (auto& s : specs) s.task = task;
    return specs;
}

std::string primary_metric(qsar::Task task) {
    return task == qsar::Task::Regression ? "r2" : "accuracy";
}

json run_specs(const ExperimentConfig& cfg, const CvInputs& in,
               const std::vector<qsar::QsarSpec>& specs, uint64_t cv_seed,
               const std::string& oof_prefix) {
    json out;
    for (const auto& spec : specs) {
        qsar::CvReport rep =
            qsar::kfold_cv(in.x.data(), in.n, in.d, in.y, spec, cfg.folds, cv_seed, cfg.jobs);
        json jr = json::parse(rep.to_json());
        out[qsar::kind_name(spec.kind)] = jr;
        if (!oof_prefix.empty())
            write_oof_csv(cfg, oof_prefix + "_" + qsar::kind_name(spec.kind) + ".csv", in, rep);
    }
    return out;
}

vae::EmbedMode embed_mode_of(const std::string& s) {
    if (s == "mean") return vae::EmbedMode::Mean;
    if (s == "sampled") return vae::EmbedMode::Sampled;
    throw ConfigError("embed_mode must be mean|sampled");
}

}  // namespace

// ---- commands ----

std::string cmd_train_vae(const ExperimentConfig& cfg) {
    SourceData src = load_source(cfg);
    std::vector<std::string> names;
    json sel_report;
    if (cfg.descriptor_mode != "none") {
        if (cfg.descriptor_mode == "auto") {
            chem::Dataset target = load_target(cfg);
            std::tie(names, sel_report) = resolve_descriptors(cfg, target);
        } else {
            names = cfg.descriptor_names;
        }
    }
    auto items = vae::prepare_corpus(src.ds, src.vocab, src.l_max, names, cfg.quiet);
    vae::VaeModel model =
        train_or_load(cfg, src, items, names, cfg.vae.arch, cfg.replicates.empty() ? 0 : 0);

    json j;
    j["command"] = "train-vae";
    j["config"] = json::parse(cfg.to_json());
    j["inputs"] = input_digests({cfg.source_path, cfg.target_path});
    j["descriptors"] = names;
    if (!sel_report.is_null()) j["selection"] = sel_report;
    j["l_max"] = src.l_max;
    j["vocab_size"] = src.vocab.size();
    j["bundle"] = cfg.exp_dir() + "/models/" + model_tag(cfg.vae.arch, !names.empty(), 0);
    return write_report(cfg, "train_vae_report.json", j);
}

std::string cmd_pipeline(const ExperimentConfig& cfg) {
    SourceData src = load_source(cfg);
    chem::Dataset target = load_target(cfg);
    auto [names, sel_report] = resolve_descriptors(cfg, target);
    if (names.empty()) throw ConfigError("pipeline needs at least one descriptor (mode auto/explicit)");

    auto joint_items = vae::prepare_corpus(src.ds, src.vocab, src.l_max, names, cfg.quiet);
    auto plain_items = vae::prepare_corpus(src.ds, src.vocab, src.l_max, {}, cfg.quiet);
    qsar::Task task = task_of(target);
    auto specs = specs_or_default(cfg, task);
    const std::string metric = primary_metric(task);
    auto target_smiles = target.smiles_list();

    json reps = json::array();
    std::map<std::string, std::vector<double>> joint_scores, plain_scores;  // per spec kind
    for (size_t r = 0; r < cfg.replicates.size(); ++r) {
        json jr;
        jr["replicate"] = cfg.replicates[r];
        for (bool joint : {true, false}) {
            vae::VaeModel model = train_or_load(cfg, src, joint ? joint_items : plain_items,
                                                joint ? names : std::vector<std::string>{},
                                                cfg.vae.arch, r);
            uint64_t es_seed = substream_seed(cfg.seed, "embed/" + std::to_string(r) +
                                                            (joint ? "/joint" : "/plain"));
            vae::EmbeddingSet es =
                vae::embed(model, target_smiles, embed_mode_of(cfg.embed_mode), es_seed);
            CvInputs in = cv_inputs(es, target);
            std::string oof_prefix =
                "oof_" + model_tag(cfg.vae.arch, joint, r);
            json res = run_specs(cfg, in, specs, substream_seed(cfg.seed, "cv/" + std::to_string(r)),
                                 oof_prefix);
            jr[joint ? "joint" : "plain"] = res;
            for (const auto& spec : specs) {
                double v = res[qsar::kind_name(spec.kind)]["mean"][metric].get<double>();
                (joint ? joint_scores : plain_scores)[qsar::kind_name(spec.kind)].push_back(v);
            }
        }
        json delta;
        for (const auto& spec : specs) {
            const std::string kn = qsar::kind_name(spec.kind);
            delta[kn] = joint_scores[kn].back() - plain_scores[kn].back();
        }
        jr["delta_" + metric] = delta;
        reps.push_back(std::move(jr));
    }

    auto agg = [](const std::vector<double>& v) {
        double mean = std::accumulate(v.begin(), v.end(), 0.0) / v.size();
        double ss = 0;
        for (double x : v) ss += (x - mean) * (x - mean);
        return json{{"mean", mean},
                    {"sd", v.size() > 1 ? std::sqrt(ss / (v.size() - 1)) : 0.0}};
    };
    json aggregate;
    for (const auto& spec : specs) {
        const std::string kn = qsar::kind_name(spec.kind);
        aggregate[kn] = {{"joint", agg(joint_scores[kn])},
                         {"plain", agg(plain_scores[kn])},
                         {"delta_mean", agg(joint_scores[kn])["mean"].get<double>() -
                                            agg(plain_scores[kn])["mean"].get<double>()}};
    }

    json j;
    j["command"] = "pipeline";
    j["config"] = json::parse(cfg.to_json());
    j["inputs"] = input_digests({cfg.source_path, cfg.target_path});
    j["selection"] = sel_report;
    j["descriptors"] = names;
    j["task"] = task == qsar::Task::Regression ? "regression" : "classification";
    j["primary_metric"] = metric;
    j["replicates"] = reps;
    j["aggregate"] = aggregate;
    return write_report(cfg, "pipeline_report.json", j);
}

std::string cmd_subset_sweep(const ExperimentConfig& cfg) {
    SourceData src = load_source(cfg);
    chem::Dataset target = load_target(cfg);
    std::vector<std::string> names;
    json sel_report;
    if (cfg.descriptor_mode != "none") std::tie(names, sel_report) = resolve_descriptors(cfg, target);

    auto all_items = vae::prepare_corpus(src.ds, src.vocab, src.l_max, names, cfg.quiet);
    Rng eval_rng(substream_seed(cfg.seed, "sweep/eval"));
    std::vector<size_t> order(all_items.size());
    std::iota(order.begin(), order.end(), 0);
    eval_rng.shuffle(order);
    size_t eval_n = std::min<size_t>(cfg.subset_eval_n, all_items.size() / 5);
    std::vector<std::string> eval_smiles;
    for (size_t i = 0; i < eval_n; ++i) eval_smiles.push_back(all_items[order[i]].mol.smiles);
    std::vector<size_t> pool(order.begin() + eval_n, order.end());

    qsar::Task task = task_of(target);
    auto specs = specs_or_default(cfg, task);
    specs.resize(1);  // sweep uses the first configured downstream model
    const std::string metric = primary_metric(task);
    auto target_smiles = target.smiles_list();

    json rows = json::array();
    std::vector<double> recon_by_size, metric_by_size, fractions;
    for (double frac : cfg.subset_fractions) {
        size_t n = std::max<size_t>(8, static_cast<size_t>(std::lround(frac * pool.size())));
        n = std::min(n, pool.size());
        Rng sub_rng(substream_seed(cfg.seed, "sweep/subset/" + std::to_string(frac)));
        std::vector<size_t> shuffled = pool;
        sub_rng.shuffle(shuffled);
        std::vector<vae::TrainItem> items;
        items.reserve(n);
        for (size_t i = 0; i < n; ++i) items.push_back(all_items[shuffled[i]]);

        vae::VaeConfig vc = cfg.vae;
        vc.l_max = src.l_max;
        vc.seed = substream_seed(cfg.seed, "sweep/vae/" + std::to_string(frac));
        if (!names.empty()) {
            vae::PredictorSpec p;
            p.descriptor_names = names;
            if (vc.arch == vae::Arch::CVAE && cfg.vae.predictor) p.hidden = cfg.vae.predictor->hidden;
            vc.predictor = std::move(p);
        } else {
            vc.predictor.reset();
        }
        const std::string dir = cfg.exp_dir() + "/models/sweep-" + std::to_string(frac);
        vae::VaeModel model = [&] {
            if (cfg.resume && fs::exists(dir + "/config.json"))
                return vae::VaeModel::load_bundle(dir);
            vae::VaeModel m = vae::build_model(vc, src.vocab);
            vae::TrainOptions topts = cfg.train;
            topts.quiet = cfg.quiet;
            if (!cfg.quiet)
                std::fprintf(stderr, "[sweep %.3f] training on %zu rows\n", frac, items.size());
            vae::TrainLog log = vae::train(m, items, topts);
            m.save_bundle(dir);
            std::ofstream f(dir + "/trainlog.json");
            f << log.to_json() << "\n";
            return m;
        }();

        double recon = vae::reconstruction_accuracy(model, eval_smiles);
        vae::EmbeddingSet es = vae::embed(model, target_smiles, embed_mode_of(cfg.embed_mode),
                                          substream_seed(cfg.seed, "sweep/embed/" + std::to_string(frac)));
        CvInputs in = cv_inputs(es, target);
        qsar::CvReport rep = qsar::kfold_cv(in.x.data(), in.n, in.d, in.y, specs[0], cfg.folds,
                                            substream_seed(cfg.seed, "sweep/cv"), cfg.jobs);
        double score = rep.mean.at(metric);
        rows.push_back({{"fraction", frac},
                        {"n_rows", n},
                        {"reconstruction_accuracy", recon},
                        {metric, score}});
        fractions.push_back(frac);
        recon_by_size.push_back(recon);
        metric_by_size.push_back(score);
    }

    json j;
    j["command"] = "subset-sweep";
    j["config"] = json::parse(cfg.to_json());
    j["inputs"] = input_digests({cfg.source_path, cfg.target_path});
    j["descriptors"] = names;
    j["rows"] = rows;
    if (fractions.size() >= 2) {
        // degenerate sweeps (all values identical) carry no rank signal
        try {
            j["spearman_recon_vs_size"] = latent::spearman(fractions, recon_by_size);
        } catch (const DegenerateColumn&) {
            j["spearman_recon_vs_size"] = nullptr;
        }
        try {
            j["spearman_metric_vs_size"] = latent::spearman(fractions, metric_by_size);
        } catch (const DegenerateColumn&) {
            j["spearman_metric_vs_size"] = nullptr;
        }
    }
    return write_report(cfg, "subset_sweep_report.json", j);
}

std::string cmd_noise_sweep(const ExperimentConfig& cfg) {
    SourceData src = load_source(cfg);
    chem::Dataset target = load_target(cfg);
    qsar::Task task = task_of(target);
    auto specs = specs_or_default(cfg, task);
    specs.resize(1);
    const std::string metric = primary_metric(task);
    auto target_smiles = target.smiles_list();

    std::vector<double> base_target_col = target.descriptor_column(cfg.noise_base);
    std::vector<double> y = target.targets();
    std::vector<double> base_source_col = src.ds.descriptor_column(cfg.noise_base);
    double r_base = desc::pearson(base_target_col, y);

    auto evaluate_with_column = [&](const std::vector<double>& source_col,
                                    const std::string& tag) {
        std::vector<vae::TrainItem> items;
        auto base_items = vae::prepare_corpus(src.ds, src.vocab, src.l_max, {}, cfg.quiet);
        // attach the synthetic column by source row order (prepare_corpus skips rows,
        // so rebuild with explicit bookkeeping)
        items.reserve(base_items.size());
        size_t src_row = 0;
        for (size_t i = 0; i < src.ds.records.size() && src_row < base_items.size(); ++i) {
            if (base_items[src_row].mol.smiles != src.ds.records[i].smiles) continue;
            vae::TrainItem item = base_items[src_row];
            item.descriptors = {source_col[i]};
            items.push_back(std::move(item));
            ++src_row;
        }
        vae::VaeConfig vc = cfg.vae;
        vc.l_max = src.l_max;
        vc.seed = substream_seed(cfg.seed, "noise/vae/" + tag);
        vae::PredictorSpec p;
        p.descriptor_names = {cfg.noise_base + "_" + tag};
        if (vc.arch == vae::Arch::CVAE && cfg.vae.predictor) p.hidden = cfg.vae.predictor->hidden;
        vc.predictor = std::move(p);
        const std::string dir = cfg.exp_dir() + "/models/noise-" + tag;
        vae::VaeModel model = [&] {
            if (cfg.resume && fs::exists(dir + "/config.json"))
                return vae::VaeModel::load_bundle(dir);
            vae::VaeModel m = vae::build_model(vc, src.vocab);
            vae::TrainOptions topts = cfg.train;
            topts.quiet = cfg.quiet;
            if (!cfg.quiet) std::fprintf(stderr, "[noise %s] training\n", tag.c_str());
            vae::TrainLog log = vae::train(m, items, topts);
            m.save_bundle(dir);
            std::ofstream f(dir + "/trainlog.json");
            f << log.to_json() << "\n";
            return m;
        }();
        vae::EmbeddingSet es = vae::embed(model, target_smiles, embed_mode_of(cfg.embed_mode),
                                          substream_seed(cfg.seed, "noise/embed/" + tag));
        CvInputs in = cv_inputs(es, target);
        qsar::CvReport rep = qsar::kfold_cv(in.x.data(), in.n, in.d, in.y, specs[0], cfg.folds,
                                            substream_seed(cfg.seed, "noise/cv"), cfg.jobs);
        return rep.mean.at(metric);
    };

    json rows = json::array();
    std::vector<double> achieved, scores;
    // reference point: the un-noised base descriptor
    {
        double score = evaluate_with_column(base_source_col, "base");
        rows.push_back({{"r_target", r_base}, {"r_achieved", r_base}, {"noise_scale", 0.0},
                        {metric, score}, {"base", true}});
        achieved.push_back(std::fabs(r_base));
        scores.push_back(score);
    }
    for (double rt : cfg.noise_r_targets) {
        std::string tag = csv::format_double(rt);
        try {
            desc::NoisyColumn nc = desc::noisy_descriptor(base_target_col, y, rt,
                                                          substream_seed(cfg.seed, "noise/fit/" + tag));
            Rng src_noise(substream_seed(cfg.seed, "noise/source/" + tag));
            std::vector<double> src_col = base_source_col;
            for (double& v : src_col) v += src_noise.normal(0.0, nc.noise_scale);
            double score = evaluate_with_column(src_col, tag);
            rows.push_back({{"r_target", rt},
                            {"r_achieved", nc.achieved_r},
                            {"noise_scale", nc.noise_scale},
                            {metric, score},
                            {"base", false}});
            achieved.push_back(std::fabs(nc.achieved_r));
            scores.push_back(score);
        } catch (const InvalidTargetCorrelation& e) {
            rows.push_back({{"r_target", rt}, {"error", e.what()}});
        }
    }

    json j;
    j["command"] = "noise-sweep";
    j["config"] = json::parse(cfg.to_json());
    j["inputs"] = input_digests({cfg.source_path, cfg.target_path});
    j["base_descriptor"] = cfg.noise_base;
    j["r_base"] = r_base;
    j["rows"] = rows;
    if (achieved.size() >= 2) {
        try {
            j["spearman_abs_r_vs_" + metric] = latent::spearman(achieved, scores);
        } catch (const DegenerateColumn&) {
            j["spearman_abs_r_vs_" + metric] = nullptr;
        }
    }
    return write_report(cfg, "noise_sweep_report.json", j);
}

std::string cmd_size_matched(const ExperimentConfig& cfg) {
    if (cfg.size_matched_n <= 0) throw ConfigError("size_matched_n must be positive");
    SourceData src = load_source(cfg);
    chem::Dataset target = load_target(cfg);
    if (static_cast<size_t>(cfg.size_matched_n) > target.size())
        throw ConfigError("size_matched_n exceeds the dataset size");
    auto [names, sel_report] = resolve_descriptors(cfg, target);
    if (names.empty()) throw ConfigError("size-matched needs descriptors (mode auto/explicit)");

    Rng rng(substream_seed(cfg.seed, "size_matched"));
    auto idx = rng.sample_indices(target.size(), cfg.size_matched_n);
    std::sort(idx.begin(), idx.end());
    chem::Dataset sub;
    sub.descriptor_names = target.descriptor_names;
    sub.task_kind = target.task_kind;
    for (size_t i : idx) sub.records.push_back(target.records[i]);

    auto joint_items = vae::prepare_corpus(src.ds, src.vocab, src.l_max, names, cfg.quiet);
    auto plain_items = vae::prepare_corpus(src.ds, src.vocab, src.l_max, {}, cfg.quiet);
    qsar::Task task = task_of(sub);
    auto specs = specs_or_default(cfg, task);
    const std::string metric = primary_metric(task);
    auto sub_smiles = sub.smiles_list();

    json results;
    for (bool joint : {true, false}) {
        vae::VaeModel model = train_or_load(cfg, src, joint ? joint_items : plain_items,
                                            joint ? names : std::vector<std::string>{},
                                            cfg.vae.arch, 0);
        vae::EmbeddingSet es =
            vae::embed(model, sub_smiles, embed_mode_of(cfg.embed_mode),
                       substream_seed(cfg.seed, std::string("size_matched/embed/") +
                                                    (joint ? "joint" : "plain")));
        CvInputs in = cv_inputs(es, sub);
        results[joint ? "joint" : "plain"] =
            run_specs(cfg, in, specs, substream_seed(cfg.seed, "size_matched/cv"), "");
    }
    json j;
    j["command"] = "size-matched";
    j["config"] = json::parse(cfg.to_json());
    j["inputs"] = input_digests({cfg.source_path, cfg.target_path});
    j["n"] = cfg.size_matched_n;
    j["descriptors"] = names;
    j["results"] = results;
    for (const auto& spec : specs) {
        const std::string kn = qsar::kind_name(spec.kind);
        j["delta_" + metric][kn] = results["joint"][kn]["mean"][metric].get<double>() -
                                   results["plain"][kn]["mean"][metric].get<double>();
    }
    return write_report(cfg, "size_matched_report.json", j);
}

std::string cmd_cluster_analysis(const ExperimentConfig& cfg) {
    SourceData src = load_source(cfg);
    chem::Dataset target = load_target(cfg);
    auto [names, sel_report] = resolve_descriptors(cfg, target);

    auto items = vae::prepare_corpus(src.ds, src.vocab, src.l_max, names, cfg.quiet);
    vae::VaeModel model = train_or_load(cfg, src, items, names, cfg.vae.arch, 0);

    auto target_smiles = target.smiles_list();
    vae::EmbeddingSet es = vae::embed(model, target_smiles, embed_mode_of(cfg.embed_mode),
                                      substream_seed(cfg.seed, "cluster/embed"));
    CvInputs in = cv_inputs(es, target);
    qsar::Task task = task_of(target);
    auto specs = specs_or_default(cfg, task);
    qsar::CvReport rep = qsar::kfold_cv(in.x.data(), in.n, in.d, in.y, specs[0], cfg.folds,
                                        substream_seed(cfg.seed, "cluster/cv"), cfg.jobs);
    write_oof_csv(cfg, "cluster_oof.csv", in, rep);

    // K-Means runs on standardized mean vectors
    AVec points = latent::standardize_columns(es.mu, static_cast<int>(es.size()), es.dim);
    std::set<int> ks(cfg.cluster_k_sweep.begin(), cfg.cluster_k_sweep.end());
    ks.insert(cfg.cluster_k);

    json by_k;
    for (int k : ks) {
        auto km = latent::kmeans(points.data(), static_cast<int>(es.size()), es.dim, k,
                                 substream_seed(cfg.seed, "cluster/kmeans/" + std::to_string(k)));
        auto profiles = latent::cluster_error_profile(es, km.assignments, in.y, rep.oof_pred,
                                                      task == qsar::Task::Classification);
        json jk;
        jk["k"] = km.k;
        jk["inertia"] = km.inertia;
        auto& arr = jk["profiles"] = json::array();
        std::vector<double> kl, err;
        for (const auto& p : profiles) {
            arr.push_back({{"cluster_id", p.cluster_id},
                           {"size", p.size},
                           {"kl_to_prior", p.kl_to_prior},
                           {"metric", p.metric}});
            kl.push_back(p.kl_to_prior);
            err.push_back(p.metric);
        }
        // profiles are sorted by kl_to_prior; the single highest-KL cluster is
        // treated as an outlier and dropped before the rank correlation
        if (kl.size() >= 3) {
            std::vector<double> kl2(kl.begin(), kl.end() - 1), err2(err.begin(), err.end() - 1);
            jk["spearman_kl_vs_error_excl_max"] = latent::spearman(kl2, err2);
            jk["spearman_kl_vs_error_all"] = latent::spearman(kl, err);
        }
        if (k == cfg.cluster_k) {
            csv::Table t;
            t.header = {"cluster_id", "size", "kl_to_prior", "metric"};
            for (const auto& p : profiles)
                t.rows.push_back({std::to_string(p.cluster_id), std::to_string(p.size),
                                  csv::format_double(p.kl_to_prior), csv::format_double(p.metric)});
            csv::write_file(cfg.exp_dir() + "/cluster_profiles.csv", t);
        }
        by_k[std::to_string(k)] = std::move(jk);
    }

    // distance of the target set and a source sample to the prior
    Rng src_rng(substream_seed(cfg.seed, "cluster/source_sample"));
    auto src_smiles_all = src.ds.smiles_list();
    auto pick = src_rng.sample_indices(src_smiles_all.size(),
                                       std::min<size_t>(2000, src_smiles_all.size()));
    std::vector<std::string> src_sample;
    for (size_t i : pick) src_sample.push_back(src_smiles_all[i]);
    vae::EmbeddingSet src_es = vae::embed(model, src_sample, embed_mode_of(cfg.embed_mode),
                                          substream_seed(cfg.seed, "cluster/source_embed"));

    // 2-D PCA plot bundle fit on the union of source and target embeddings
    {
        AVec all_mu = src_es.mu;
        all_mu.insert(all_mu.end(), es.mu.begin(), es.mu.end());
        int total = static_cast<int>(src_es.size() + es.size());
        auto pca = latent::pca2(all_mu.data(), total, es.dim);
        auto km_main =
            latent::kmeans(points.data(), static_cast<int>(es.size()), es.dim, cfg.cluster_k,
                           substream_seed(cfg.seed, "cluster/kmeans/" + std::to_string(cfg.cluster_k)));
        csv::Table t;
        t.header = {"pc1", "pc2", "dataset", "cluster", "target"};
        for (size_t i = 0; i < src_es.size(); ++i)
            t.rows.push_back({csv::format_double(pca.scores[2 * i]),
                              csv::format_double(pca.scores[2 * i + 1]), "source", "-1", ""});
        for (size_t i = 0; i < es.size(); ++i) {
            size_t row = src_es.size() + i;
            t.rows.push_back({csv::format_double(pca.scores[2 * row]),
                              csv::format_double(pca.scores[2 * row + 1]), "target",
                              std::to_string(km_main.assignments[i]),
                              csv::format_double(in.y[i])});
        }
        csv::write_file(cfg.exp_dir() + "/pca_plot_bundle.csv", t);
        json meta;
        meta["explained"] = {pca.explained[0], pca.explained[1]};
        meta["fit_on"] = "union(source_sample, target)";
        meta["source_rows"] = src_es.size();
        meta["target_rows"] = es.size();
        std::ofstream f(cfg.exp_dir() + "/pca_plot_bundle.json");
        f << meta.dump(2) << "\n";
    }

    json j;
    j["command"] = "cluster-analysis";
    j["config"] = json::parse(cfg.to_json());
    j["inputs"] = input_digests({cfg.source_path, cfg.target_path});
    j["descriptors"] = names;
    j["by_k"] = by_k;
    j["target_prior_kl"] = latent::dataset_prior_kl(es);
    j["source_prior_kl"] = latent::dataset_prior_kl(src_es);
    return write_report(cfg, "cluster_report.json", j);
}

std::string cmd_variance_study(const ExperimentConfig& cfg) {
    SourceData src = load_source(cfg);
    chem::Dataset target = load_target(cfg);
    auto [names, sel_report] = resolve_descriptors(cfg, target);
    auto items = vae::prepare_corpus(src.ds, src.vocab, src.l_max, names, cfg.quiet);

    qsar::Task task = task_of(target);
    auto specs = specs_or_default(cfg, task);
    const std::string metric = primary_metric(task);
    auto target_smiles = target.smiles_list();

    auto evaluate = [&](const vae::VaeModel& model, uint64_t embed_seed,
                        std::vector<double>* fold_sd) {
        vae::EmbeddingSet es =
            vae::embed(model, target_smiles, vae::EmbedMode::Sampled, embed_seed);
        CvInputs in = cv_inputs(es, target);
        qsar::CvReport rep = qsar::kfold_cv(in.x.data(), in.n, in.d, in.y, specs[0], cfg.folds,
                                            substream_seed(cfg.seed, "var/cv"), cfg.jobs);
        if (fold_sd) fold_sd->push_back(rep.sd.at(metric));
        return rep.mean.at(metric);
    };

    // several embeddings from one pre-trained model
    vae::VaeModel model0 = train_or_load(cfg, src, items, names, cfg.vae.arch, 0);
    std::vector<double> embed_means, embed_fold_sds;
    for (int e = 0; e < cfg.variance_embeddings; ++e)
        embed_means.push_back(evaluate(model0, substream_seed(cfg.seed, "var/embed/" + std::to_string(e)),
                                       &embed_fold_sds));

    // several independently trained models, one embedding each
    std::vector<double> model_means;
    for (int r = 0; r < cfg.variance_models; ++r) {
        vae::VaeModel m = train_or_load(cfg, src, items, names, cfg.vae.arch, r);
        model_means.push_back(
            evaluate(m, substream_seed(cfg.seed, "var/model_embed/" + std::to_string(r)), nullptr));
    }

    auto sd_of = [](const std::vector<double>& v) {
        double mean = std::accumulate(v.begin(), v.end(), 0.0) / v.size();
        double ss = 0;
        for (double x : v) ss += (x - mean) * (x - mean);
        return v.size() > 1 ? std::sqrt(ss / (v.size() - 1)) : 0.0;
    };

    json j;
    j["command"] = "variance-study";
    j["config"] = json::parse(cfg.to_json());
    j["inputs"] = input_digests({cfg.source_path, cfg.target_path});
    j["descriptors"] = names;
    j["metric"] = metric;
    j["per_embedding_mean"] = embed_means;
    j["per_embedding_fold_sd"] = embed_fold_sds;
    j["across_embedding_sd"] = sd_of(embed_means);
    j["mean_fold_sd"] = std::accumulate(embed_fold_sds.begin(), embed_fold_sds.end(), 0.0) /
                        std::max<size_t>(1, embed_fold_sds.size());
    j["per_model_mean"] = model_means;
    j["across_model_sd"] = sd_of(model_means);
    return write_report(cfg, "variance_report.json", j);
}

// ---- thin verbs ----

std::string cmd_embed(const std::string& bundle_dir, const std::string& data_path,
                      const std::string& out_csv, const std::string& mode, uint64_t seed) {
    vae::VaeModel model = vae::VaeModel::load_bundle(bundle_dir);
    chem::Dataset ds = chem::load_dataset(data_path);
    vae::EmbeddingSet es = vae::embed(model, ds.smiles_list(), embed_mode_of(mode), seed);
    es.save_csv(out_csv);
    json j;
    j["command"] = "embed";
    j["bundle"] = bundle_dir;
    j["inputs"] = input_digests({data_path});
    j["rows"] = es.size();
    j["excluded"] = json::array();
    for (const auto& [idx, why] : es.excluded)
        j["excluded"].push_back({{"row", idx}, {"reason", why}});
    j["out"] = out_csv;
    return j.dump(2) + "\n";
}

std::string cmd_select_descriptors(const std::string& data_path, int k, double variance_threshold,
                                   double intercorr_cut, const std::string& out_json) {
    chem::Dataset ds = chem::load_dataset(data_path);
    desc::DescriptorMatrix filtered = desc::variance_filter(matrix_of(ds), variance_threshold);
    auto sel = desc::select_descriptors(filtered, ds.targets(), k, intercorr_cut);
    std::string text = sel.to_json() + "\n";
    if (!out_json.empty()) {
        std::ofstream f(out_json);
        if (!f) throw IoError("cannot write " + out_json);
        f << text;
    }
    return text;
}

std::string cmd_train_qsar(const std::string& embeddings_csv, const std::string& data_path,
                           const qsar::QsarSpec& spec, int folds, uint64_t seed,
                           const std::string& out_json, int jobs) {
    vae::EmbeddingSet es = vae::EmbeddingSet::load_csv(embeddings_csv);
    chem::Dataset ds = chem::load_dataset(data_path);
    std::map<std::string, double> target_of;
    for (const auto& r : ds.records) target_of[r.smiles] = r.target.value_or(0.0);
    AVec x;
    std::vector<double> y;
    for (size_t i = 0; i < es.size(); ++i) {
        auto it = target_of.find(es.keys[i]);
        if (it == target_of.end()) continue;
        x.insert(x.end(), es.z_row(i), es.z_row(i) + es.dim);
        y.push_back(it->second);
    }
    if (y.empty()) throw EmptySet("no embedding rows matched the dataset");
    qsar::QsarSpec s = spec;
    s.task = ds.task_kind == chem::TaskKind::Classification ? qsar::Task::Classification
                                                            : qsar::Task::Regression;
    qsar::CvReport rep =
        qsar::kfold_cv(x.data(), static_cast<int>(y.size()), es.dim, y, s, folds, seed, jobs);
    json j = json::parse(rep.to_json());
    j["command"] = "train-qsar";
    j["inputs"] = input_digests({embeddings_csv, data_path});
    j["spec"] = json::parse(s.to_json());
    std::string text = j.dump(2) + "\n";
    if (!out_json.empty()) {
        std::ofstream f(out_json);
        if (!f) throw IoError("cannot write " + out_json);
        f << text;
    }
    return text;
}

}  // namespace molembed::pipe
