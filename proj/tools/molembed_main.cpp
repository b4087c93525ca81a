#include <cstdio>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "molembed/errors.hpp"
#include "molembed/pipelines.hpp"

using molembed::pipe::ExperimentConfig;

namespace {

struct CommonFlags {
    std::string config_path;
    std::string name, outdir, source, target;
    uint64_t seed = 0;
    bool seed_set = false;
    int jobs = 0;
    int epochs = 0;
    bool quiet = false;
    bool no_resume = false;
};

void add_common(CLI::App* cmd, CommonFlags& f) {
    cmd->add_option("-c,--config", f.config_path, "experiment config JSON")->required();
    cmd->add_option("--name", f.name, "override experiment name");
    cmd->add_option("--outdir", f.outdir, "override output directory");
    cmd->add_option("--source", f.source, "override source dataset path");
    cmd->add_option("--target", f.target, "override target dataset path");
    cmd->add_option("--seed", f.seed, "override root seed")->each([&](const std::string&) {
        f.seed_set = true;
    });
    cmd->add_option("--jobs", f.jobs, "worker pool size");
    cmd->add_option("--epochs", f.epochs, "override training epochs");
    cmd->add_flag("--quiet", f.quiet, "suppress progress output");
    cmd->add_flag("--no-resume", f.no_resume, "retrain even when a bundle exists");
}

ExperimentConfig resolve(const CommonFlags& f) {
    ExperimentConfig cfg = ExperimentConfig::from_json_file(f.config_path);
    // flag > config > default
    if (!f.name.empty()) cfg.name = f.name;
    if (!f.outdir.empty()) cfg.outdir = f.outdir;
    if (!f.source.empty()) cfg.source_path = f.source;
    if (!f.target.empty()) cfg.target_path = f.target;
    if (f.seed_set) cfg.seed = f.seed;
    if (f.jobs > 0) cfg.jobs = f.jobs;
    if (f.epochs > 0) cfg.train.epochs = f.epochs;
    if (f.quiet) cfg.quiet = true;
    if (f.no_resume) cfg.resume = false;
    return cfg;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"SMILES VAE pre-training, descriptor selection, and downstream QSAR pipelines"};
    app.require_subcommand(1);

    CommonFlags train_f, pipe_f, sweep_f, noise_f, size_f, cluster_f, var_f;
    auto* c_train = app.add_subcommand("train-vae", "pre-train a VAE on the source corpus");
    add_common(c_train, train_f);
    auto* c_pipe = app.add_subcommand("pipeline", "joint-vs-baseline experiment end to end");
    add_common(c_pipe, pipe_f);
    auto* c_sweep = app.add_subcommand("subset-sweep", "source-size sweep");
    add_common(c_sweep, sweep_f);
    auto* c_noise = app.add_subcommand("noise-sweep", "noisy-descriptor correlation sweep");
    add_common(c_noise, noise_f);
    auto* c_size = app.add_subcommand("size-matched", "size-matched target comparison");
    add_common(c_size, size_f);
    int size_n = 0;
    c_size->add_option("--n", size_n, "downstream training-set size");
    auto* c_cluster = app.add_subcommand("cluster-analysis", "latent clusters vs error profile");
    add_common(c_cluster, cluster_f);
    auto* c_var = app.add_subcommand("variance-study", "embedding vs pre-training variance");
    add_common(c_var, var_f);

    // thin verbs
    std::string em_bundle, em_data, em_out, em_mode = "sampled";
    uint64_t em_seed = 0;
    auto* c_embed = app.add_subcommand("embed", "extract latent embeddings for a dataset");
    c_embed->add_option("--bundle", em_bundle, "model bundle directory")->required();
    c_embed->add_option("--data", em_data, "dataset CSV")->required();
    c_embed->add_option("--out", em_out, "output embeddings CSV")->required();
    c_embed->add_option("--mode", em_mode, "mean|sampled");
    c_embed->add_option("--seed", em_seed, "sampling seed");

    std::string sel_data, sel_out;
    int sel_k = 3;
    double sel_var = 0.5, sel_cut = 0.9;
    auto* c_sel = app.add_subcommand("select-descriptors", "variance + correlation selection");
    c_sel->add_option("--data", sel_data, "dataset CSV")->required();
    c_sel->add_option("--k", sel_k, "descriptors to keep");
    c_sel->add_option("--variance-threshold", sel_var, "variance filter threshold");
    c_sel->add_option("--intercorr-cut", sel_cut, "pairwise |r| cut");
    c_sel->add_option("--out", sel_out, "report JSON path");

    std::string q_embeddings, q_data, q_out, q_kind = "lr";
    int q_folds = 10, q_jobs = 1;
    uint64_t q_seed = 0;
    auto* c_qsar = app.add_subcommand("train-qsar", "k-fold CV on stored embeddings");
    c_qsar->add_option("--embeddings", q_embeddings, "embeddings CSV")->required();
    c_qsar->add_option("--data", q_data, "dataset CSV with targets")->required();
    c_qsar->add_option("--kind", q_kind, "lr|mlp|resnet1d");
    c_qsar->add_option("--folds", q_folds, "folds");
    c_qsar->add_option("--seed", q_seed, "CV seed");
    c_qsar->add_option("--jobs", q_jobs, "parallel folds");
    c_qsar->add_option("--out", q_out, "report JSON path");

    CLI11_PARSE(app, argc, argv);

    try {
        std::string report;
        if (c_train->parsed()) report = molembed::pipe::cmd_train_vae(resolve(train_f));
        else if (c_pipe->parsed()) report = molembed::pipe::cmd_pipeline(resolve(pipe_f));
        else if (c_sweep->parsed()) report = molembed::pipe::cmd_subset_sweep(resolve(sweep_f));
        else if (c_noise->parsed()) report = molembed::pipe::cmd_noise_sweep(resolve(noise_f));
        else if (c_size->parsed()) {
            ExperimentConfig cfg = resolve(size_f);
            if (size_n > 0) cfg.size_matched_n = size_n;
            report = molembed::pipe::cmd_size_matched(cfg);
        } else if (c_cluster->parsed()) {
            report = molembed::pipe::cmd_cluster_analysis(resolve(cluster_f));
        } else if (c_var->parsed()) {
            report = molembed::pipe::cmd_variance_study(resolve(var_f));
        } else if (c_embed->parsed()) {
            report = molembed::pipe::cmd_embed(em_bundle, em_data, em_out, em_mode, em_seed);
        } else if (c_sel->parsed()) {
            report = molembed::pipe::cmd_select_descriptors(sel_data, sel_k, sel_var, sel_cut,
                                                            sel_out);
        } else if (c_qsar->parsed()) {
            molembed::qsar::QsarSpec spec;
            spec.kind = molembed::qsar::kind_from_name(q_kind);
            report = molembed::pipe::cmd_train_qsar(q_embeddings, q_data, spec, q_folds, q_seed,
                                                    q_out, q_jobs);
        }
        std::cout << report;
        return 0;
    } catch (const molembed::ConfigError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const molembed::SchemaError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const molembed::IoError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const molembed::ParseError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const molembed::Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
}
