#pragma once

#include <string>
#include <vector>

namespace molembed::desc {

enum class BondOrder : int { Single = 1, Double = 2, Triple = 3, Aromatic = 4 };

struct Atom {
    std::string element;  // canonical symbol: C, N, O, ... (uppercase even for aromatic atoms)
    bool aromatic = false;
    int formal_charge = 0;
    int explicit_h = 0;
};

struct Bond {
    int a = 0;
    int b = 0;
    BondOrder order = BondOrder::Single;
};

/// Molecular graph parsed from a SMILES string. Implicit hydrogens are
/// filled at parse time: per atom, the bond-order sum (aromatic = 1.5) is
/// floored and implicit H = default valence - floored sum - explicit H,
/// clamped at 0. Default valences: B3 C4 N3 O2 P3 S2, halogens 1.
struct MolGraph {
    std::vector<Atom> atoms;
    std::vector<Bond> bonds;
    std::vector<int> implicit_h;

    int heavy_atom_count() const { return static_cast<int>(atoms.size()); }
    int total_h() const;
    int components() const;
    int degree(int atom) const;
};

/// Supported grammar: organic-subset atoms B C N O P S F Cl Br I, aromatic
/// b c n o p s, bracket atoms with H-count and charge, bonds - = # :,
/// branches (), ring closures 1-9 and %nn.
MolGraph parse_graph(const std::string& smiles);

}  // namespace molembed::desc
