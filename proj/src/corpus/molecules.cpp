#include <fstream>
#include <map>
#include <set>

#include "isflab/corpus.hpp"
#include "isflab/error.hpp"
#include "isflab/rng.hpp"

namespace isflab {

std::vector<MoleculeRecord> read_molecules(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open molecule file " + path.string());
  std::vector<MoleculeRecord> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      MoleculeRecord m;
      m.atoms = j.at("atoms").get<std::vector<std::string>>();
      for (const auto& b : j.at("bonds")) {
        if (!b.is_array() || b.size() != 2) throw ValidationError("bond must be a [u,v] pair");
        m.bonds.emplace_back(b[0].get<int>(), b[1].get<int>());
      }
      out.push_back(std::move(m));
    } catch (const std::exception& e) {
      throw ValidationError(path.string() + " line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

void write_molecules(const std::filesystem::path& path, const std::vector<MoleculeRecord>& mols) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write molecule file " + path.string());
  for (const auto& m : mols) {
    nlohmann::json bonds = nlohmann::json::array();
    for (const auto& [u, v] : m.bonds) bonds.push_back({u, v});
    out << nlohmann::json{{"atoms", m.atoms}, {"bonds", bonds}}.dump() << '\n';
  }
  if (!out) throw IoError("write failed for " + path.string());
}

Graph molecule_graph(const MoleculeRecord& m) {
  std::set<std::pair<int, int>> seen;
  std::vector<Edge> edges;
  for (auto [u, v] : m.bonds) {
    if (u == v) throw ValidationError("bond from atom " + std::to_string(u) + " to itself");
    if (!seen.insert({std::min(u, v), std::max(u, v)}).second) continue;
    edges.push_back({u, v});
    edges.push_back({v, u});
  }
  return Graph(static_cast<int>(m.atoms.size()), std::move(edges), m.atoms);
}

std::vector<MoleculeRecord> generate_molecules(std::size_t count, IntRange atoms, std::uint64_t seed) {
  if (atoms.lo < 2 || atoms.lo > atoms.hi) throw ConfigError("molecule size range must start at 2 or more");
  static const std::map<std::string, int> valence{{"C", 4}, {"N", 3}, {"O", 2}};
  std::vector<MoleculeRecord> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    CounterRng rng(derive_seed(seed, i));
    const int target = static_cast<int>(rng.between(atoms.lo, atoms.hi));
    MoleculeRecord m;
    std::vector<int> free;
    auto add_atom = [&](const std::string& a, int parent) {
      m.atoms.push_back(a);
      free.push_back(valence.at(a));
      const int id = static_cast<int>(m.atoms.size()) - 1;
      if (parent >= 0) {
        m.bonds.emplace_back(parent, id);
        --free[static_cast<std::size_t>(parent)];
        --free[static_cast<std::size_t>(id)];
      }
      return id;
    };
    add_atom("C", -1);
    if (target >= 6 && rng.uniform() < 0.35) {  // six-carbon ring
      for (int a = 1; a < 6; ++a) add_atom("C", a - 1);
      m.bonds.emplace_back(0, 5);
      --free[0];
      --free[5];
    }
    while (static_cast<int>(m.atoms.size()) < target) {
      std::vector<int> open;
      for (int a = 0; a < static_cast<int>(m.atoms.size()); ++a) {
        if (free[static_cast<std::size_t>(a)] > 0) open.push_back(a);
      }
      if (open.empty()) break;
      const int parent = open[rng.below(open.size())];
      const double r = rng.uniform();
      const bool carbon_parent = m.atoms[static_cast<std::size_t>(parent)] == "C";
      if (carbon_parent && free[static_cast<std::size_t>(parent)] >= 2 && r < 0.12 &&
          static_cast<int>(m.atoms.size()) + 2 <= target) {
        add_atom("O", parent);  // carboxyl-like pair
        add_atom("O", parent);
      } else {
        add_atom(r < 0.62 ? "C" : r < 0.88 ? "O" : "N", parent);
      }
    }
    // Occasional ring closure between atoms at distance >= 2.
    const int closures = static_cast<int>(rng.below(3));
    for (int c = 0; c < closures; ++c) {
      const int n = static_cast<int>(m.atoms.size());
      if (n < 4) break;
      const int u = static_cast<int>(rng.below(static_cast<std::uint64_t>(n)));
      const int v = static_cast<int>(rng.below(static_cast<std::uint64_t>(n)));
      if (u == v || free[static_cast<std::size_t>(u)] < 1 || free[static_cast<std::size_t>(v)] < 1) continue;
      bool bonded = false;
      for (auto [a, b] : m.bonds) bonded |= (a == u && b == v) || (a == v && b == u);
      if (bonded) continue;
      m.bonds.emplace_back(std::min(u, v), std::max(u, v));
      --free[static_cast<std::size_t>(u)];
      --free[static_cast<std::size_t>(v)];
    }
    out.push_back(std::move(m));
  }
  return out;
}

}  // namespace isflab
