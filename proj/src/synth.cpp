#include "molembed/synth.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "molembed/errors.hpp"
#include "molembed/mol_graph.hpp"

namespace molembed::synth {

namespace {

const char* kRings[] = {
    "c1ccccc1",        // benzene
    "c1ccccc1",
    "c1ccccc1",
    "c1ccncc1",        // pyridine
    "c1ccncc1",
    "c1cncnc1",        // pyrimidine
    "c1ccoc1",         // furan
    "c1ccsc1",         // thiophene
    "c1cc[nH]c1",      // pyrrole
    "c1ccc2ccccc2c1",  // naphthalene
    "C1CCCCC1",        // cyclohexane
    "C1CCCCC1",
    "C1CCCC1",         // cyclopentane
    "C1CCNCC1",        // piperidine
    "C1CCOC1",         // oxolane
    "C1CC1",           // cyclopropane
};

char pick_chain_atom(Rng& rng, bool exotic) {
    double u = rng.uniform();
    if (exotic) {
        if (u < 0.52) return 'C';
        if (u < 0.64) return 'N';
        if (u < 0.76) return 'O';
        if (u < 0.86) return 'S';
        return 'P';
    }
    if (u < 0.62) return 'C';
    if (u < 0.78) return 'N';
    if (u < 0.94) return 'O';
    return 'S';
}

std::string halogen(Rng& rng, bool exotic) {
    double u = rng.uniform();
    if (exotic) {
        if (u < 0.35) return "Cl";
        if (u < 0.6) return "F";
        if (u < 0.85) return "Br";
        return "I";
    }
    if (u < 0.5) return "Cl";
    if (u < 0.85) return "F";
    return "Br";
}

std::string random_chain(Rng& rng, int len, bool exotic) {
    std::string out;
    for (int i = 0; i < len; ++i) {
        if (i > 0) {
            double u = rng.uniform();
            if (u < 0.07) out += '=';
            else if (exotic && u < 0.12) out += '#';
        }
        out += pick_chain_atom(rng, exotic);
        double u = rng.uniform();
        if (u < 0.12) {
            out += "(=O)";
        } else if (u < 0.24) {
            out += "(" + halogen(rng, exotic) + ")";
        } else if (u < 0.34 && len > 2) {
            out += "(";
            out += pick_chain_atom(rng, exotic);
            if (rng.uniform() < 0.4) out += pick_chain_atom(rng, exotic);
            out += ")";
        }
    }
    return out;
}

}  // namespace

std::string random_smiles(Rng& rng, const GenOptions& opts, bool exotic) {
    for (int attempt = 0; attempt < 64; ++attempt) {
        int units = 1 + static_cast<int>(rng.below(exotic ? 4 : 3));
        std::string s;
        for (int u = 0; u < units; ++u) {
            if (rng.uniform() < 0.42) {
                s += kRings[rng.below(std::size(kRings))];
            } else {
                int len = 1 + static_cast<int>(rng.below(exotic ? 7 : 5));
                s += random_chain(rng, len, exotic);
            }
            if (static_cast<int>(s.size()) > opts.max_chars) break;
        }
        if (static_cast<int>(s.size()) < opts.min_chars ||
            static_cast<int>(s.size()) > opts.max_chars)
            continue;
        try {
            desc::parse_graph(s);
        } catch (const Error&) {
            continue;
        }
        return s;
    }
    throw Error("random_smiles failed to produce a valid string");
}

std::vector<std::string> generate_corpus(const GenOptions& opts) {
    Rng rng(substream_seed(opts.seed, "corpus"));
    std::set<std::string> seen;
    std::vector<std::string> out;
    out.reserve(opts.count);
    while (static_cast<int>(out.size()) < opts.count) {
        bool exotic = rng.uniform() < opts.exotic_fraction;
        std::string s = random_smiles(rng, opts, exotic);
        if (seen.insert(s).second) out.push_back(std::move(s));
    }
    return out;
}

namespace {

struct GraphFeatures {
    double mol_wt = 0;
    int ring_count = 0, aromatic_rings = 0, heteroatoms = 0, h_acceptors = 0;
    int heavy = 0, bonds = 0;
    int aliph_c = 0, arom_c = 0, n_count = 0, arom_n = 0, o_count = 0, arom_o = 0;
    int s_count = 0, p_count = 0, f_count = 0, cl_count = 0, br_count = 0, i_count = 0;
    int h_donors = 0, rotatable = 0;
    int triple = 0, dbl = 0;
};

/// Bridges (non-ring bonds) via DFS low-link.
std::vector<bool> bridge_bonds(const desc::MolGraph& g) {
    const int n = static_cast<int>(g.atoms.size());
    std::vector<std::vector<std::pair<int, int>>> adj(n);  // (neighbor, bond index)
    for (size_t b = 0; b < g.bonds.size(); ++b) {
        adj[g.bonds[b].a].push_back({g.bonds[b].b, static_cast<int>(b)});
        adj[g.bonds[b].b].push_back({g.bonds[b].a, static_cast<int>(b)});
    }
    std::vector<bool> is_bridge(g.bonds.size(), false);
    std::vector<int> disc(n, -1), low(n, 0);
    int timer = 0;
    // iterative DFS
    struct Frame {
        int v, parent_edge;
        size_t next = 0;
    };
    for (int root = 0; root < n; ++root) {
        if (disc[root] != -1) continue;
        std::vector<Frame> stack{{root, -1}};
        disc[root] = low[root] = timer++;
        while (!stack.empty()) {
            Frame& f = stack.back();
            if (f.next < adj[f.v].size()) {
                auto [to, edge] = adj[f.v][f.next++];
                if (edge == f.parent_edge) continue;
                if (disc[to] == -1) {
                    disc[to] = low[to] = timer++;
                    stack.push_back({to, edge});
                } else {
                    low[f.v] = std::min(low[f.v], disc[to]);
                }
            } else {
                int v = f.v, pe = f.parent_edge;
                stack.pop_back();
                if (!stack.empty()) {
                    int u = stack.back().v;
                    low[u] = std::min(low[u], low[v]);
                    if (low[v] > disc[u]) is_bridge[pe] = true;
                }
            }
        }
    }
    return is_bridge;
}

GraphFeatures features_of(const std::string& smiles) {
    desc::MolGraph g = desc::parse_graph(smiles);
    GraphFeatures f;
    f.mol_wt = desc::mol_weight(g);
    auto counts = desc::graph_counts(g);
    f.ring_count = counts.ring_count;
    f.aromatic_rings = counts.aromatic_ring_count;
    f.heteroatoms = counts.heteroatoms;
    f.h_acceptors = counts.h_acceptors;
    f.heavy = static_cast<int>(g.atoms.size());
    f.bonds = static_cast<int>(g.bonds.size());
    for (size_t i = 0; i < g.atoms.size(); ++i) {
        const auto& a = g.atoms[i];
        int total_h = a.explicit_h + g.implicit_h[i];
        if (a.element == "C") (a.aromatic ? f.arom_c : f.aliph_c)++;
        else if (a.element == "N") {
            ++f.n_count;
            if (a.aromatic) ++f.arom_n;
            if (total_h > 0) ++f.h_donors;
        } else if (a.element == "O") {
            ++f.o_count;
            if (a.aromatic) ++f.arom_o;
            if (total_h > 0) ++f.h_donors;
        } else if (a.element == "S") ++f.s_count;
        else if (a.element == "P") ++f.p_count;
        else if (a.element == "F") ++f.f_count;
        else if (a.element == "Cl") ++f.cl_count;
        else if (a.element == "Br") ++f.br_count;
        else if (a.element == "I") ++f.i_count;
    }
    for (const auto& b : g.bonds) {
        if (b.order == desc::BondOrder::Double) ++f.dbl;
        if (b.order == desc::BondOrder::Triple) ++f.triple;
    }
    auto bridges = bridge_bonds(g);
    for (size_t b = 0; b < g.bonds.size(); ++b) {
        if (g.bonds[b].order != desc::BondOrder::Single) continue;
        if (!bridges[b]) continue;  // ring bonds never rotate
        if (g.degree(g.bonds[b].a) >= 2 && g.degree(g.bonds[b].b) >= 2) ++f.rotatable;
    }
    return f;
}

}  // namespace

desc::DescriptorMatrix synth_descriptors(const std::vector<std::string>& smiles, uint64_t seed) {
    desc::DescriptorMatrix m;
    m.names = {"MolLogP",       "PEOE_VSA6",      "MolWt",          "TPSA",
               "RingCount",     "NumAromaticRings", "NumHeteroatoms", "NumHAcceptors",
               "NumRotatableBonds", "HeavyAtomCount", "FractionCSP3",   "LabuteASA",
               "BertzCT",       "NumHDonors"};
    m.columns.assign(m.names.size(), {});
    for (auto& c : m.columns) c.reserve(smiles.size());

    for (size_t i = 0; i < smiles.size(); ++i) {
        GraphFeatures f = features_of(smiles[i]);
        Rng noise(substream_seed(seed, "desc/" + std::to_string(i)));
        double halo = f.f_count + f.cl_count + f.br_count + f.i_count;

        double mol_logp = 0.36 * f.aliph_c + 0.30 * f.arom_c - 0.62 * (f.n_count - f.arom_n) -
                          0.32 * f.arom_n - 0.55 * (f.o_count - f.arom_o) - 0.28 * f.arom_o +
                          0.18 * f.s_count - 0.25 * f.p_count + 0.20 * f.f_count +
                          0.68 * f.cl_count + 0.89 * f.br_count + 1.12 * f.i_count -
                          0.08 * f.rotatable + noise.normal(0.0, 0.85);
        double tpsa = 20.3 * (f.n_count - f.arom_n) + 12.9 * f.arom_n +
                      17.1 * (f.o_count - f.arom_o) + 13.1 * f.arom_o + 9.2 * f.h_donors +
                      noise.normal(0.0, 5.0);
        double peoe_vsa6 = 4.3 * f.arom_c + 5.6 * halo + 1.2 * f.aliph_c + 2.1 * f.s_count +
                           noise.normal(0.0, 4.5);
        double labute = 6.4 * f.heavy + 1.9 * f.heteroatoms + noise.normal(0.0, 9.0);
        double bertz = 2.1 * f.bonds + 3.5 * f.ring_count + 1.2 * f.heteroatoms + 2.0 * f.dbl +
                       3.0 * f.triple + noise.normal(0.0, 7.0);
        double frac_csp3 =
            (f.aliph_c + f.arom_c) > 0
                ? static_cast<double>(f.aliph_c) / static_cast<double>(f.aliph_c + f.arom_c)
                : 0.0;

        size_t c = 0;
        m.columns[c++].push_back(mol_logp);
        m.columns[c++].push_back(peoe_vsa6);
        m.columns[c++].push_back(f.mol_wt);
        m.columns[c++].push_back(tpsa);
        m.columns[c++].push_back(f.ring_count);
        m.columns[c++].push_back(f.aromatic_rings);
        m.columns[c++].push_back(f.heteroatoms);
        m.columns[c++].push_back(f.h_acceptors);
        m.columns[c++].push_back(f.rotatable);
        m.columns[c++].push_back(f.heavy);
        m.columns[c++].push_back(frac_csp3);
        m.columns[c++].push_back(labute);
        m.columns[c++].push_back(bertz);
        m.columns[c++].push_back(f.h_donors);
    }
    return m;
}

TargetResult synth_target(const desc::DescriptorMatrix& m, const TargetSpec& spec, uint64_t seed) {
    const int n = static_cast<int>(m.n_rows());
    const int s = static_cast<int>(spec.desired_r.size());
    if (n < 3) throw EmptySet("synth_target needs rows");

    // standardize the requested columns
    Eigen::MatrixXd z(n, s);
    for (int j = 0; j < s; ++j) {
        const auto& col = m.column(spec.desired_r[j].first);
        double mean = 0;
        for (double v : col) mean += v;
        mean /= n;
        double ss = 0;
        for (double v : col) ss += (v - mean) * (v - mean);
        double sd = std::sqrt(ss / (n - 1));
        if (sd <= 0) throw DegenerateColumn(spec.desired_r[j].first);
        for (int i = 0; i < n; ++i) z(i, j) = (col[i] - mean) / sd;
    }
    Eigen::MatrixXd corr = z.transpose() * z / static_cast<double>(n - 1);
    Eigen::VectorXd rho(s);
    for (int j = 0; j < s; ++j) rho[j] = spec.desired_r[j].second;
    Eigen::VectorXd u = corr.ldlt().solve(rho);
    double q = rho.dot(u);
    if (q >= 0.98)
        throw Error("synth_target: requested correlations are infeasible (rho' R^-1 rho = " +
                    std::to_string(q) + ")");

    Rng rng(substream_seed(seed, "target"));
    Eigen::VectorXd y = z * u;
    double noise_sd = std::sqrt(1.0 - q);
    for (int i = 0; i < n; ++i) y[i] += noise_sd * rng.normal();

    TargetResult out;
    out.values.resize(n);
    for (int i = 0; i < n; ++i) out.values[i] = spec.out_mean + spec.out_sd * y[i];
    for (size_t c = 0; c < m.names.size(); ++c)
        out.achieved_r.emplace_back(m.names[c], desc::pearson(m.columns[c], out.values));
    return out;
}

}  // namespace molembed::synth
