// Generates the shipped desk-scale datasets: a 25K source corpus and three
// downstream target sets (logS/logD regression, logBB classification) whose
// descriptor-target correlation structure mirrors the reference tasks.

#include <cstdio>
#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "molembed/csv.hpp"
#include "molembed/descriptors.hpp"
#include "molembed/errors.hpp"
#include "molembed/rng.hpp"
#include "molembed/synth.hpp"

using namespace molembed;

namespace {

void write_csv(const std::string& path, const std::vector<std::string>& smiles,
               const desc::DescriptorMatrix& m, const std::vector<double>* target,
               const std::vector<int>* label) {
    csv::Table t;
    t.header.push_back("smiles");
    if (target) t.header.push_back("target");
    if (label) t.header.push_back("label");
    for (const auto& n : m.names) t.header.push_back(n);
    for (size_t i = 0; i < smiles.size(); ++i) {
        std::vector<std::string> row;
        row.push_back(smiles[i]);
        if (target) row.push_back(csv::format_double((*target)[i]));
        if (label) row.push_back(std::to_string((*label)[i]));
        for (const auto& col : m.columns) row.push_back(csv::format_double(col[i]));
        t.rows.push_back(std::move(row));
    }
    csv::write_file(path, t);
    std::printf("wrote %s (%zu rows)\n", path.c_str(), smiles.size());
}

/// Tries the requested correlations; if infeasible for this molecule sample,
/// relaxes all but the leading one in 0.02 steps.
synth::TargetResult make_target(const desc::DescriptorMatrix& m, synth::TargetSpec spec,
                                uint64_t seed) {
    for (int attempt = 0; attempt < 12; ++attempt) {
        try {
            return synth::synth_target(m, spec, seed);
        } catch (const Error& e) {
            for (size_t j = 1; j < spec.desired_r.size(); ++j)
                spec.desired_r[j].second *= 0.95;
            std::printf("  relaxing secondary correlations (%s)\n", e.what());
        }
    }
    throw Error("could not build a feasible target");
}

void report_r(const synth::TargetResult& res, const std::vector<std::string>& want) {
    std::printf("  achieved correlations:\n");
    for (const auto& [name, r] : res.achieved_r) std::printf("    %-18s %+.3f\n", name.c_str(), r);
    // what the selection pipeline would pick
    std::printf("  expected top names: ");
    for (const auto& n : want) std::printf("%s ", n.c_str());
    std::printf("\n");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"synthetic dataset generator"};
    std::string outdir = "data";
    uint64_t seed = 2026;
    int source_count = 25000;
    int logs_count = 6668, logd_count = 6217, logbb_count = 2906;
    app.add_option("--outdir", outdir, "output directory");
    app.add_option("--seed", seed, "root seed");
    app.add_option("--source-count", source_count, "source corpus size");
    app.add_option("--logs-count", logs_count, "logS rows");
    app.add_option("--logd-count", logd_count, "logD rows");
    app.add_option("--logbb-count", logbb_count, "logBB rows");
    CLI11_PARSE(app, argc, argv);

    try {
        std::filesystem::create_directories(outdir);

        synth::GenOptions src_opts;
        src_opts.seed = substream_seed(seed, "source");
        src_opts.count = source_count;
        src_opts.max_chars = 28;
        src_opts.exotic_fraction = 0.10;
        std::printf("generating source corpus (%d)...\n", source_count);
        auto source = synth::generate_corpus(src_opts);
        auto source_desc = synth::synth_descriptors(source, substream_seed(seed, "source/desc"));
        write_csv(outdir + "/source_25k.csv", source, source_desc, nullptr, nullptr);

        std::set<char> source_chars;
        for (const auto& s : source)
            for (char c : s) source_chars.insert(c);

        auto check_coverage = [&](const std::vector<std::string>& smiles, const char* name) {
            for (const auto& s : smiles)
                for (char c : s)
                    if (!source_chars.count(c))
                        throw Error(std::string("character '") + c + "' in " + name +
                                    " is absent from the source corpus");
        };

        // --- logS (regression) ---
        {
            synth::GenOptions o;
            o.seed = substream_seed(seed, "logs");
            o.count = logs_count;
            o.max_chars = 28;
            o.exotic_fraction = 0.15;
            std::printf("generating logS set (%d)...\n", logs_count);
            auto smiles = synth::generate_corpus(o);
            check_coverage(smiles, "logS");
            auto m = synth::synth_descriptors(smiles, substream_seed(seed, "logs/desc"));
            synth::TargetSpec spec;
            // the trailing pins keep collinear size descriptors out of the top three
            spec.desired_r = {{"MolLogP", -0.80},        {"PEOE_VSA6", -0.61},
                              {"MolWt", -0.59},          {"HeavyAtomCount", -0.54},
                              {"RingCount", -0.50}};
            spec.out_mean = -3.0;
            spec.out_sd = 2.0;
            auto res = make_target(m, spec, substream_seed(seed, "logs/y"));
            report_r(res, {"MolLogP", "PEOE_VSA6", "MolWt"});
            write_csv(outdir + "/logs.csv", smiles, m, &res.values, nullptr);

            auto filtered = desc::variance_filter(m, 0.5);
            auto sel = desc::select_descriptors(filtered, res.values, 3, 0.9);
            std::printf("  selection on shipped logS: ");
            for (const auto& n : sel.selected) std::printf("%s ", n.c_str());
            std::printf("\n");
        }

        // --- logD (regression) ---
        {
            synth::GenOptions o;
            o.seed = substream_seed(seed, "logd");
            o.count = logd_count;
            o.max_chars = 28;
            o.exotic_fraction = 0.12;
            std::printf("generating logD set (%d)...\n", logd_count);
            auto smiles = synth::generate_corpus(o);
            check_coverage(smiles, "logD");
            auto m = synth::synth_descriptors(smiles, substream_seed(seed, "logd/desc"));
            synth::TargetSpec spec;
            spec.desired_r = {{"MolLogP", 0.43},   {"NumAromaticRings", 0.29},
                              {"RingCount", 0.26}, {"PEOE_VSA6", 0.20},
                              {"TPSA", -0.18},     {"NumHAcceptors", -0.18}};
            spec.out_mean = 1.6;
            spec.out_sd = 1.2;
            auto res = make_target(m, spec, substream_seed(seed, "logd/y"));
            report_r(res, {"MolLogP", "NumAromaticRings", "RingCount"});
            write_csv(outdir + "/logd.csv", smiles, m, &res.values, nullptr);
        }

        // --- logBB (classification, threshold raw >= -1) ---
        {
            synth::GenOptions o;
            o.seed = substream_seed(seed, "logbb");
            o.count = logbb_count;
            o.max_chars = 28;
            o.exotic_fraction = 0.12;
            std::printf("generating logBB set (%d)...\n", logbb_count);
            auto smiles = synth::generate_corpus(o);
            check_coverage(smiles, "logBB");
            auto m = synth::synth_descriptors(smiles, substream_seed(seed, "logbb/desc"));
            synth::TargetSpec spec;
            spec.desired_r = {{"TPSA", -0.57},          {"NumHAcceptors", -0.43},
                              {"NumHeteroatoms", -0.43}, {"NumHDonors", -0.30}};
            spec.out_mean = -0.4;
            spec.out_sd = 0.8;
            auto res = make_target(m, spec, substream_seed(seed, "logbb/y"));
            report_r(res, {"TPSA", "NumHAcceptors", "NumHeteroatoms"});
            std::vector<int> labels;
            int positive = 0;
            for (double v : res.values) {
                labels.push_back(v >= -1.0 ? 1 : 0);
                positive += labels.back();
            }
            std::printf("  class balance: %.1f%% positive\n", 100.0 * positive / labels.size());
            write_csv(outdir + "/logbb.csv", smiles, m, nullptr, &labels);
        }
        return 0;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
}
