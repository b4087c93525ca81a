#include "molembed/mol_graph.hpp"

#include <array>
#include <cctype>
#include <cmath>
#include <map>
#include <optional>

#include "molembed/errors.hpp"

namespace molembed::desc {

namespace {

int default_valence(const std::string& element) {
    if (element == "B") return 3;
    if (element == "C") return 4;
    if (element == "N") return 3;
    if (element == "O") return 2;
    if (element == "P") return 3;
    if (element == "S") return 2;
    if (element == "F" || element == "Cl" || element == "Br" || element == "I") return 1;
    throw UnsupportedAtom(element);
}

bool is_organic_aromatic(char c) {
    return c == 'b' || c == 'c' || c == 'n' || c == 'o' || c == 'p' || c == 's';
}

struct RingBond {
    int atom;
    std::optional<BondOrder> order;
};

}  // namespace

int MolGraph::total_h() const {
    int h = 0;
    for (size_t i = 0; i < atoms.size(); ++i) h += atoms[i].explicit_h + implicit_h[i];
    return h;
}

int MolGraph::degree(int atom) const {
    int d = 0;
    for (const auto& b : bonds)
        if (b.a == atom || b.b == atom) ++d;
    return d;
}

int MolGraph::components() const {
    const int n = static_cast<int>(atoms.size());
    std::vector<int> parent(n);
    for (int i = 0; i < n; ++i) parent[i] = i;
    auto find = [&](int x) {
        while (parent[x] != x) x = parent[x] = parent[parent[x]];
        return x;
    };
    for (const auto& b : bonds) {
        int ra = find(b.a), rb = find(b.b);
        if (ra != rb) parent[ra] = rb;
    }
    int comps = 0;
    for (int i = 0; i < n; ++i)
        if (find(i) == i) ++comps;
    return comps;
}

MolGraph parse_graph(const std::string& smiles) {
    if (smiles.empty()) throw InvalidSmiles("empty string");
    MolGraph g;
    std::vector<int> branch_stack;
    std::map<int, RingBond> open_rings;
    int prev_atom = -1;
    std::optional<BondOrder> pending_bond;

    size_t i = 0;
    const size_t n = smiles.size();

    auto add_atom = [&](Atom atom) {
        int id = static_cast<int>(g.atoms.size());
        g.atoms.push_back(std::move(atom));
        if (prev_atom >= 0) {
            BondOrder order = pending_bond.value_or(
                g.atoms[prev_atom].aromatic && g.atoms[id].aromatic ? BondOrder::Aromatic
                                                                    : BondOrder::Single);
            g.bonds.push_back({prev_atom, id, order});
        }
        pending_bond.reset();
        prev_atom = id;
    };

    auto ring_closure = [&](int label) {
        if (prev_atom < 0) throw ParseError("ring closure before any atom", static_cast<long>(i));
        auto it = open_rings.find(label);
        if (it == open_rings.end()) {
            open_rings[label] = {prev_atom, pending_bond};
            pending_bond.reset();
            return;
        }
        RingBond open = it->second;
        open_rings.erase(it);
        if (open.atom == prev_atom)
            throw ParseError("ring closure to the same atom", static_cast<long>(i));
        BondOrder order;
        if (pending_bond)
            order = *pending_bond;
        else if (open.order)
            order = *open.order;
        else
            order = g.atoms[open.atom].aromatic && g.atoms[prev_atom].aromatic
                        ? BondOrder::Aromatic
                        : BondOrder::Single;
        g.bonds.push_back({open.atom, prev_atom, order});
        pending_bond.reset();
    };

    while (i < n) {
        char c = smiles[i];
        switch (c) {
            case '-': pending_bond = BondOrder::Single;   ++i; continue;
            case '=': pending_bond = BondOrder::Double;   ++i; continue;
            case '#': pending_bond = BondOrder::Triple;   ++i; continue;
            case ':': pending_bond = BondOrder::Aromatic; ++i; continue;
            case '(':
                if (prev_atom < 0) throw ParseError("branch before any atom", static_cast<long>(i));
                branch_stack.push_back(prev_atom);
                ++i;
                continue;
            case ')':
                if (branch_stack.empty())
                    throw ParseError("unbalanced ')'", static_cast<long>(i));
                prev_atom = branch_stack.back();
                branch_stack.pop_back();
                ++i;
                continue;
            case '%': {
                if (i + 2 >= n || !std::isdigit((unsigned char)smiles[i + 1]) ||
                    !std::isdigit((unsigned char)smiles[i + 2]))
                    throw ParseError("'%' needs two digits", static_cast<long>(i));
                int label = (smiles[i + 1] - '0') * 10 + (smiles[i + 2] - '0');
                i += 3;
                ring_closure(label);
                continue;
            }
            case '[': {
                size_t close = smiles.find(']', i);
                if (close == std::string::npos)
                    throw ParseError("unbalanced '['", static_cast<long>(i));
                std::string body = smiles.substr(i + 1, close - i - 1);
                if (body.empty()) throw ParseError("empty bracket atom", static_cast<long>(i));
                Atom atom;
                size_t j = 0;
                if (std::isupper((unsigned char)body[0])) {
                    atom.element = body.substr(0, 1);
                    if (body.size() > 1 && std::islower((unsigned char)body[1]) && body[1] != 'h') {
                        atom.element += body[1];
                        j = 2;
                    } else {
                        j = 1;
                    }
                } else if (is_organic_aromatic(body[0])) {
                    atom.aromatic = true;
                    atom.element = std::string(1, std::toupper((unsigned char)body[0]));
                    j = 1;
                } else {
                    throw UnsupportedAtom(std::string("bracket atom '") + body + "'");
                }
                default_valence(atom.element);  // validates the symbol
                while (j < body.size()) {
                    char bc = body[j];
                    if (bc == 'H') {
                        ++j;
                        int count = 1;
                        if (j < body.size() && std::isdigit((unsigned char)body[j])) {
                            count = body[j] - '0';
                            ++j;
                        }
                        atom.explicit_h = count;
                    } else if (bc == '+' || bc == '-') {
                        int sign = bc == '+' ? 1 : -1;
                        int mag = 0;
                        while (j < body.size() && body[j] == bc) {
                            ++mag;
                            ++j;
                        }
                        if (j < body.size() && std::isdigit((unsigned char)body[j])) {
                            mag = body[j] - '0';
                            ++j;
                        }
                        atom.formal_charge = sign * mag;
                    } else {
                        throw ParseError(std::string("unsupported bracket content '") + bc + "'",
                                         static_cast<long>(i + 1 + j));
                    }
                }
                i = close + 1;
                add_atom(std::move(atom));
                continue;
            }
            case ']':
                throw ParseError("unbalanced ']'", static_cast<long>(i));
            default:
                break;
        }
        if (std::isdigit((unsigned char)c)) {
            ring_closure(c - '0');
            ++i;
            continue;
        }
        if (std::isupper((unsigned char)c)) {
            Atom atom;
            atom.element = std::string(1, c);
            // two-letter organic-subset symbols
            if (i + 1 < n && ((c == 'C' && smiles[i + 1] == 'l') || (c == 'B' && smiles[i + 1] == 'r'))) {
                atom.element += smiles[i + 1];
                ++i;
            }
            default_valence(atom.element);
            ++i;
            add_atom(std::move(atom));
            continue;
        }
        if (is_organic_aromatic(c)) {
            Atom atom;
            atom.aromatic = true;
            atom.element = std::string(1, std::toupper((unsigned char)c));
            ++i;
            add_atom(std::move(atom));
            continue;
        }
        if (std::islower((unsigned char)c)) throw UnsupportedAtom(std::string(1, c));
        throw ParseError(std::string("unexpected character '") + c + "'", static_cast<long>(i));
    }

    if (!branch_stack.empty()) throw ParseError("unbalanced '('", static_cast<long>(n));
    if (!open_rings.empty())
        throw ParseError("unpaired ring closure " + std::to_string(open_rings.begin()->first),
                         static_cast<long>(n));
    if (pending_bond) throw ParseError("dangling bond symbol", static_cast<long>(n));
    if (g.atoms.empty()) throw InvalidSmiles("no atoms parsed");

    // implicit hydrogen fill
    g.implicit_h.assign(g.atoms.size(), 0);
    std::vector<double> order_sum(g.atoms.size(), 0.0);
    for (const auto& b : g.bonds) {
        double o = b.order == BondOrder::Aromatic ? 1.5 : static_cast<double>(int(b.order));
        order_sum[b.a] += o;
        order_sum[b.b] += o;
    }
    for (size_t a = 0; a < g.atoms.size(); ++a) {
        int floored = static_cast<int>(std::floor(order_sum[a]));
        int h = default_valence(g.atoms[a].element) - floored - g.atoms[a].explicit_h;
        g.implicit_h[a] = h > 0 ? h : 0;
    }
    return g;
}

}  // namespace molembed::desc
