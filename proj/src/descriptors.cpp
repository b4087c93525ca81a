#include "molembed/descriptors.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <set>

#include <json.hpp>

#include "molembed/errors.hpp"
#include "molembed/rng.hpp"

namespace molembed::desc {

namespace {

double atomic_mass(const std::string& element) {
    static const std::map<std::string, double> kMass = {
        {"H", 1.008},   {"B", 10.811},  {"C", 12.011}, {"N", 14.007}, {"O", 15.999},
        {"F", 18.998},  {"P", 30.974},  {"S", 32.06},  {"Cl", 35.45}, {"Br", 79.904},
        {"I", 126.904}};
    auto it = kMass.find(element);
    if (it == kMass.end()) throw UnsupportedAtom(element);
    return it->second;
}

}  // namespace

int DescriptorMatrix::column_index(const std::string& name) const {
    for (size_t i = 0; i < names.size(); ++i)
        if (names[i] == name) return static_cast<int>(i);
    return -1;
}

const std::vector<double>& DescriptorMatrix::column(const std::string& name) const {
    int i = column_index(name);
    if (i < 0) throw SchemaError("no descriptor column '" + name + "'");
    return columns[i];
}

double mol_weight(const MolGraph& g) {
    double w = 0.0;
    for (const auto& a : g.atoms) w += atomic_mass(a.element);
    w += 1.008 * g.total_h();
    return w;
}

GraphCounts graph_counts(const MolGraph& g) {
    GraphCounts c;
    c.ring_count = static_cast<int>(g.bonds.size()) - static_cast<int>(g.atoms.size()) +
                   g.components();

    // cycle rank of the aromatic-bond subgraph
    std::set<int> arom_atoms;
    int arom_bonds = 0;
    for (const auto& b : g.bonds)
        if (b.order == BondOrder::Aromatic) {
            ++arom_bonds;
            arom_atoms.insert(b.a);
            arom_atoms.insert(b.b);
        }
    if (arom_bonds > 0) {
        std::map<int, int> parent;
        for (int a : arom_atoms) parent[a] = a;
        std::function<int(int)> find = [&](int x) {
            while (parent[x] != x) x = parent[x] = parent[parent[x]];
            return x;
        };
        int comps = static_cast<int>(arom_atoms.size());
        for (const auto& b : g.bonds)
            if (b.order == BondOrder::Aromatic) {
                int ra = find(b.a), rb = find(b.b);
                if (ra != rb) {
                    parent[ra] = rb;
                    --comps;
                }
            }
        c.aromatic_ring_count = arom_bonds - static_cast<int>(arom_atoms.size()) + comps;
    }

    for (const auto& a : g.atoms) {
        if (a.element != "C") ++c.heteroatoms;
        if (a.element == "N" || a.element == "O") ++c.h_acceptors;
    }
    return c;
}

bool is_native_descriptor(const std::string& name) {
    return name == "MolWt" || name == "RingCount" || name == "NumAromaticRings" ||
           name == "NumHeteroatoms" || name == "NumHAcceptors";
}

std::vector<double> compute_native(const std::string& name,
                                   const std::vector<std::string>& smiles) {
    if (!is_native_descriptor(name))
        throw UnsupportedDescriptor(name + " is ingestion-only (requires SMARTS atom typing)");
    std::vector<double> out;
    out.reserve(smiles.size());
    for (const auto& s : smiles) {
        MolGraph g = parse_graph(s);
        if (name == "MolWt") {
            out.push_back(mol_weight(g));
        } else {
            GraphCounts c = graph_counts(g);
            if (name == "RingCount") out.push_back(c.ring_count);
            else if (name == "NumAromaticRings") out.push_back(c.aromatic_ring_count);
            else if (name == "NumHeteroatoms") out.push_back(c.heteroatoms);
            else out.push_back(c.h_acceptors);
        }
    }
    return out;
}

double sample_variance(const std::vector<double>& x) {
    if (x.size() < 2) throw DegenerateColumn("variance needs at least 2 values");
    double mean = std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
    double ss = 0.0;
    for (double v : x) ss += (v - mean) * (v - mean);
    return ss / static_cast<double>(x.size() - 1);
}

DescriptorMatrix variance_filter(const DescriptorMatrix& m, double threshold) {
    if (m.n_rows() < 2) throw DegenerateColumn("variance filter needs N >= 2");
    DescriptorMatrix out;
    for (size_t k = 0; k < m.n_cols(); ++k) {
        if (sample_variance(m.columns[k]) > threshold) {
            out.names.push_back(m.names[k]);
            out.columns.push_back(m.columns[k]);
        }
    }
    if (out.n_cols() == 0) throw EmptySelection("variance filter removed every column");
    return out;
}

double pearson(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size()) throw ShapeError("pearson inputs differ in length");
    const size_t n = x.size();
    if (n < 2) throw DegenerateColumn("pearson needs at least 2 values");
    double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
    double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
    double sxx = 0.0, syy = 0.0, sxy = 0.0;
    for (size_t i = 0; i < n; ++i) {
        double dx = x[i] - mx, dy = y[i] - my;
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    if (sxx == 0.0 || syy == 0.0) throw DegenerateColumn("pearson over a constant input");
    double r = sxy / std::sqrt(sxx * syy);
    return std::clamp(r, -1.0, 1.0);
}

std::string SelectionReport::to_json() const {
    nlohmann::json j;
    j["selected"] = selected;
    j["underfull"] = underfull;
    auto& arr = j["entries"] = nlohmann::json::array();
    for (const auto& e : entries)
        arr.push_back({{"name", e.name}, {"r", e.r}, {"kept", e.kept}, {"reason", e.reason}});
    return j.dump(2);
}

SelectionReport select_descriptors(const DescriptorMatrix& m, const std::vector<double>& target,
                                   int k, double intercorr_cut) {
    if (m.n_rows() != target.size()) throw ShapeError("target length != descriptor rows");
    if (sample_variance(target) == 0.0) throw DegenerateColumn("constant target");

    struct Ranked {
        size_t col;
        double r;
    };
    std::vector<Ranked> ranked;
    for (size_t c = 0; c < m.n_cols(); ++c)
        ranked.push_back({c, pearson(m.columns[c], target)});
    std::stable_sort(ranked.begin(), ranked.end(),
                     [](const Ranked& a, const Ranked& b) { return std::fabs(a.r) > std::fabs(b.r); });

    SelectionReport rep;
    std::vector<size_t> kept_cols;
    for (const auto& cand : ranked) {
        SelectionEntry e;
        e.name = m.names[cand.col];
        e.r = cand.r;
        if (static_cast<int>(kept_cols.size()) >= k) {
            e.kept = false;
            e.reason = "below top-k";
            rep.entries.push_back(std::move(e));
            continue;
        }
        std::string clash;
        if (k > 1) {  // k=1 takes the single best column regardless of intercorrelation
            for (size_t kc : kept_cols) {
                double rr = pearson(m.columns[cand.col], m.columns[kc]);
                if (std::fabs(rr) > intercorr_cut) {
                    clash = m.names[kc];
                    break;
                }
            }
        }
        if (clash.empty()) {
            e.kept = true;
            e.reason = "selected";
            kept_cols.push_back(cand.col);
            rep.selected.push_back(e.name);
        } else {
            e.kept = false;
            e.reason = "intercorrelated with " + clash;
        }
        rep.entries.push_back(std::move(e));
    }
    rep.underfull = static_cast<int>(rep.selected.size()) < k;
    return rep;
}

NoisyColumn noisy_descriptor(const std::vector<double>& d, const std::vector<double>& y,
                             double r_target, uint64_t rng_seed) {
    double r0 = pearson(d, y);
    if (r_target * r0 < 0.0)
        throw InvalidTargetCorrelation("r_target sign differs from the base correlation");
    if (std::fabs(r_target) >= std::fabs(r0))
        throw InvalidTargetCorrelation("|r_target| must be below the base |r| " +
                                       std::to_string(r0));
    if (r_target == 0.0) throw InvalidTargetCorrelation("r_target must be nonzero");

    double sd_d = std::sqrt(sample_variance(d));
    // corr(d + eps, y) = r0 * sd_d / sqrt(sd_d^2 + s^2)  =>  s = sd_d * sqrt((r0/rt)^2 - 1)
    double scale = sd_d * std::sqrt((r0 / r_target) * (r0 / r_target) - 1.0);

    NoisyColumn out;
    out.noise_scale = scale;
    for (int attempt = 0; attempt < 10; ++attempt) {
        Rng rng(substream_seed(rng_seed, "noisy_descriptor/" + std::to_string(attempt)));
        std::vector<double> noisy(d.size());
        for (size_t i = 0; i < d.size(); ++i) noisy[i] = d[i] + rng.normal(0.0, scale);
        double r = pearson(noisy, y);
        out.attempts = attempt + 1;
        if (std::fabs(r - r_target) <= 0.03) {
            out.values = std::move(noisy);
            out.achieved_r = r;
            return out;
        }
        if (attempt == 9) {
            out.values = std::move(noisy);
            out.achieved_r = r;
        }
    }
    return out;  // closest final attempt; callers may inspect achieved_r
}

std::vector<size_t> outlier_rows(const DescriptorMatrix& m, double iqr_multiple) {
    std::vector<size_t> out;
    if (m.n_rows() == 0) return out;
    std::vector<std::pair<double, double>> fences;  // per column (lo, hi)
    for (const auto& col : m.columns) {
        std::vector<double> sorted = col;
        std::sort(sorted.begin(), sorted.end());
        auto quantile = [&](double q) {
            double pos = q * static_cast<double>(sorted.size() - 1);
            size_t lo = static_cast<size_t>(pos);
            size_t hi = std::min(lo + 1, sorted.size() - 1);
            double frac = pos - static_cast<double>(lo);
            return sorted[lo] * (1.0 - frac) + sorted[hi] * frac;
        };
        double median = quantile(0.5);
        double iqr = quantile(0.75) - quantile(0.25);
        fences.emplace_back(median - iqr_multiple * iqr, median + iqr_multiple * iqr);
    }
    for (size_t r = 0; r < m.n_rows(); ++r) {
        for (size_t c = 0; c < m.n_cols(); ++c) {
            double v = m.columns[c][r];
            if (v < fences[c].first || v > fences[c].second) {
                out.push_back(r);
                break;
            }
        }
    }
    return out;
}

}  // namespace molembed::desc
