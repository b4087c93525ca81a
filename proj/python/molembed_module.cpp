#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "molembed/chem_data.hpp"
#include "molembed/errors.hpp"
#include "molembed/descriptors.hpp"
#include "molembed/latent_analysis.hpp"
#include "molembed/mol_graph.hpp"
#include "molembed/qsar.hpp"
#include "molembed/synth.hpp"
#include "molembed/vae.hpp"

namespace py = pybind11;
using namespace molembed;

namespace {

using Arr = py::array_t<double, py::array::c_style | py::array::forcecast>;

std::vector<double> to_vec(const Arr& a) {
    return std::vector<double>(a.data(), a.data() + a.size());
}

std::pair<int, int> mat_shape(const Arr& a) {
    if (a.ndim() != 2) throw ShapeError("expected a 2-D array");
    return {static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1))};
}

template <typename Container>
py::array_t<double> make_mat(const Container& data, int n, int d) {
    py::array_t<double> out({n, d});
    std::copy(data.begin(), data.end(), out.mutable_data());
    return out;
}

template <typename Container>
py::array_t<double> make_vec(const Container& data) {
    py::array_t<double> out({static_cast<py::ssize_t>(data.size())});
    std::copy(data.begin(), data.end(), out.mutable_data());
    return out;
}

}  // namespace

PYBIND11_MODULE(_molembed, m) {
    m.doc() = "SMILES VAE embeddings, molecular descriptors, and downstream QSAR models";

    // ---- chem ----
    py::class_<chem::TokenVocab>(m, "TokenVocab")
        .def_readonly("tokens", &chem::TokenVocab::tokens)
        .def_readonly("counts", &chem::TokenVocab::counts)
        .def_readonly("pad_id", &chem::TokenVocab::pad_id)
        .def_readonly("start_id", &chem::TokenVocab::start_id)
        .def_readonly("end_id", &chem::TokenVocab::end_id)
        .def("__len__", &chem::TokenVocab::size)
        .def("to_json", &chem::TokenVocab::to_json)
        .def_static("from_json", &chem::TokenVocab::from_json);

    m.def("tokenize", &chem::tokenize, py::arg("smiles"));
    m.def("build_vocab", &chem::build_vocab, py::arg("corpus"));
    m.def("scan_l_max", &chem::scan_l_max, py::arg("corpus"));
    m.def(
        "encode",
        [](const std::string& smiles, const chem::TokenVocab& vocab, int l_max) {
            chem::EncodedMolecule e = chem::encode(smiles, vocab, l_max);
            return py::make_tuple(e.token_ids, e.valid_len);
        },
        py::arg("smiles"), py::arg("vocab"), py::arg("l_max"));
    m.def("decode", &chem::decode, py::arg("token_ids"), py::arg("vocab"));

    // ---- descriptors ----
    m.def("mol_weight",
          [](const std::string& smiles) { return desc::mol_weight(desc::parse_graph(smiles)); });
    m.def("graph_counts", [](const std::string& smiles) {
        auto c = desc::graph_counts(desc::parse_graph(smiles));
        py::dict d;
        d["ring_count"] = c.ring_count;
        d["aromatic_ring_count"] = c.aromatic_ring_count;
        d["heteroatoms"] = c.heteroatoms;
        d["h_acceptors"] = c.h_acceptors;
        return d;
    });
    m.def("pearson", [](const Arr& x, const Arr& y) { return desc::pearson(to_vec(x), to_vec(y)); });
    m.def(
        "select_descriptors",
        [](const std::vector<std::string>& names, const Arr& x, const Arr& y, int k,
           double intercorr_cut, double variance_threshold) {
            auto [n, d] = mat_shape(x);
            if (static_cast<size_t>(d) != names.size())
                throw ShapeError("names length must match columns");
            desc::DescriptorMatrix mtx;
            mtx.names = names;
            mtx.columns.assign(d, std::vector<double>(n));
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < d; ++j) mtx.columns[j][i] = x.data()[i * d + j];
            mtx = desc::variance_filter(mtx, variance_threshold);
            auto rep = desc::select_descriptors(mtx, to_vec(y), k, intercorr_cut);
            py::list entries;
            for (const auto& e : rep.entries) {
                py::dict d2;
                d2["name"] = e.name;
                d2["r"] = e.r;
                d2["kept"] = e.kept;
                d2["reason"] = e.reason;
                entries.append(d2);
            }
            return py::make_tuple(rep.selected, entries);
        },
        py::arg("names"), py::arg("x"), py::arg("y"), py::arg("k") = 3,
        py::arg("intercorr_cut") = 0.9, py::arg("variance_threshold") = 0.5);
    m.def(
        "noisy_descriptor",
        [](const Arr& d, const Arr& y, double r_target, uint64_t seed) {
            auto nc = desc::noisy_descriptor(to_vec(d), to_vec(y), r_target, seed);
            return py::make_tuple(make_vec(nc.values), nc.noise_scale, nc.achieved_r);
        },
        py::arg("column"), py::arg("target"), py::arg("r_target"), py::arg("seed") = 0);

    // ---- metrics / qsar ----
    m.def("r2", [](const Arr& y, const Arr& p) { return qsar::r2(to_vec(y), to_vec(p)); });
    m.def("rmse", [](const Arr& y, const Arr& p) { return qsar::rmse(to_vec(y), to_vec(p)); });
    m.def("accuracy",
          [](const Arr& y, const Arr& p) { return qsar::accuracy(to_vec(y), to_vec(p)); });
    m.def("f1", [](const Arr& y, const Arr& p) { return qsar::f1(to_vec(y), to_vec(p)); });
    m.def(
        "ridge_fit",
        [](const Arr& x, const Arr& y, double lam) {
            auto [n, d] = mat_shape(x);
            auto model = qsar::ridge_fit(x.data(), n, d, to_vec(y), lam);
            return py::make_tuple(make_vec(model.weights), model.bias);
        },
        py::arg("x"), py::arg("y"), py::arg("lambda") = 1e-3);
    m.def(
        "kfold_cv",
        [](const Arr& x, const Arr& y, const std::string& kind, const std::string& task, int k,
           uint64_t seed) {
            auto [n, d] = mat_shape(x);
            qsar::QsarSpec spec;
            spec.kind = qsar::kind_from_name(kind);
            spec.task = task == "classification" ? qsar::Task::Classification
                                                 : qsar::Task::Regression;
            spec.seed = seed;
            auto rep = qsar::kfold_cv(x.data(), n, d, to_vec(y), spec, k, seed);
            py::dict out;
            for (const auto& [name, v] : rep.mean) out[("mean_" + name).c_str()] = v;
            for (const auto& [name, v] : rep.sd) out[("sd_" + name).c_str()] = v;
            out["oof_pred"] = make_vec(rep.oof_pred);
            out["fold_of"] = rep.fold_of;
            return out;
        },
        py::arg("x"), py::arg("y"), py::arg("kind") = "lr", py::arg("task") = "regression",
        py::arg("k") = 10, py::arg("seed") = 0);

    // ---- latent analysis ----
    m.def(
        "kmeans",
        [](const Arr& x, int k, uint64_t seed, int max_iter) {
            auto [n, d] = mat_shape(x);
            auto res = latent::kmeans(x.data(), n, d, k, seed, max_iter);
            return py::make_tuple(res.assignments, make_mat(res.centroids, res.k, d), res.inertia);
        },
        py::arg("x"), py::arg("k"), py::arg("seed") = 0, py::arg("max_iter") = 300);
    m.def(
        "pca2",
        [](const Arr& x) {
            auto [n, d] = mat_shape(x);
            auto res = latent::pca2(x.data(), n, d);
            return py::make_tuple(make_mat(res.scores, n, 2),
                                  py::make_tuple(res.explained[0], res.explained[1]));
        },
        py::arg("x"));
    m.def(
        "kl_to_prior",
        [](const Arr& mu, const Arr& logvar) {
            auto [n, d] = mat_shape(mu);
            AVec m2(mu.data(), mu.data() + mu.size());
            AVec l2(logvar.data(), logvar.data() + logvar.size());
            return latent::dataset_prior_kl(m2, l2, n, d);
        },
        py::arg("mu"), py::arg("logvar"));
    m.def("spearman",
          [](const Arr& a, const Arr& b) { return latent::spearman(to_vec(a), to_vec(b)); });

    // ---- vae ----
    py::class_<vae::EmbeddingSet>(m, "EmbeddingSet")
        .def_readonly("keys", &vae::EmbeddingSet::keys)
        .def_readonly("mode", &vae::EmbeddingSet::mode)
        .def_property_readonly("mu",
                               [](const vae::EmbeddingSet& es) {
                                   return make_mat(es.mu, static_cast<int>(es.size()), es.dim);
                               })
        .def_property_readonly("logvar",
                               [](const vae::EmbeddingSet& es) {
                                   return make_mat(es.logvar, static_cast<int>(es.size()), es.dim);
                               })
        .def_property_readonly("z",
                               [](const vae::EmbeddingSet& es) {
                                   return make_mat(es.z, static_cast<int>(es.size()), es.dim);
                               })
        .def_readonly("excluded", &vae::EmbeddingSet::excluded)
        .def("save_csv", &vae::EmbeddingSet::save_csv)
        .def("__len__", &vae::EmbeddingSet::size);

    py::class_<vae::VaeModel>(m, "VaeModel")
        .def_static(
            "train",
            [](const std::vector<std::string>& corpus, const std::string& config_json, int epochs,
               int batch_size, double lr, py::object descriptors) {
                auto vocab = chem::build_vocab(corpus);
                vae::VaeConfig cfg = vae::VaeConfig::from_json(config_json);
                if (cfg.l_max <= 0) cfg.l_max = chem::scan_l_max(corpus);
                vae::VaeModel model = vae::build_model(cfg, vocab);
                std::vector<vae::TrainItem> items;
                std::vector<double> desc_col;
                if (!descriptors.is_none()) desc_col = to_vec(descriptors.cast<Arr>());
                for (size_t i = 0; i < corpus.size(); ++i) {
                    vae::TrainItem item;
                    item.mol = chem::encode(corpus[i], vocab, cfg.l_max);
                    if (!desc_col.empty()) item.descriptors = {desc_col[i]};
                    items.push_back(std::move(item));
                }
                vae::TrainOptions opts;
                opts.epochs = epochs;
                opts.batch_size = batch_size;
                opts.lr = lr;
                opts.quiet = true;
                vae::train(model, items, opts);
                return model;
            },
            py::arg("corpus"), py::arg("config_json"), py::arg("epochs") = 5,
            py::arg("batch_size") = 64, py::arg("lr") = 1e-3, py::arg("descriptors") = py::none())
        .def_static("load_bundle", &vae::VaeModel::load_bundle)
        .def("save_bundle", &vae::VaeModel::save_bundle)
        .def("config_json", [](const vae::VaeModel& m2) { return m2.config.to_json(); })
        .def(
            "embed",
            [](const vae::VaeModel& model, const std::vector<std::string>& smiles,
               const std::string& mode, uint64_t seed) {
                return vae::embed(model, smiles,
                                  mode == "mean" ? vae::EmbedMode::Mean : vae::EmbedMode::Sampled,
                                  seed);
            },
            py::arg("smiles"), py::arg("mode") = "sampled", py::arg("seed") = 0)
        .def("reconstruction_accuracy",
             [](const vae::VaeModel& model, const std::vector<std::string>& smiles) {
                 return vae::reconstruction_accuracy(model, smiles);
             });

    m.def("default_config_json",
          [](const std::string& arch, int latent_dim, int hidden_dim, double beta,
             const std::vector<std::string>& predictor_names) {
              vae::VaeConfig cfg = vae::VaeConfig::desk_preset(vae::arch_from_name(arch));
              if (latent_dim > 0) cfg.latent_dim = latent_dim;
              if (hidden_dim > 0) cfg.hidden_dim = hidden_dim;
              cfg.beta = beta;
              if (!predictor_names.empty()) {
                  vae::PredictorSpec p;
                  p.descriptor_names = predictor_names;
                  cfg.predictor = p;
              }
              return cfg.to_json();
          },
          py::arg("arch") = "pvae", py::arg("latent_dim") = 0, py::arg("hidden_dim") = 0,
          py::arg("beta") = 0.05, py::arg("predictor_names") = std::vector<std::string>{});

    // ---- synthetic data (test support) ----
    m.def(
        "generate_corpus",
        [](int count, uint64_t seed, int max_chars) {
            synth::GenOptions opts;
            opts.count = count;
            opts.seed = seed;
            opts.max_chars = max_chars;
            return synth::generate_corpus(opts);
        },
        py::arg("count"), py::arg("seed") = 7, py::arg("max_chars") = 34);






    py::register_exception<Error>(m, "MolembedError");
}
