#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "isflab/encoding.hpp"
#include "isflab/graph.hpp"
#include "isflab/oracle.hpp"
#include "isflab/pattern.hpp"
#include "isflab/vocab.hpp"
#include "json.hpp"

namespace isflab {

enum class TaskKind { Single, MultiNum, MultiShape, PromptMixture, Tins, Molecular };
std::string_view to_string(TaskKind k);
TaskKind task_kind_from_string(std::string_view s);

// Prompt variant: "term", "topo1", "topo2", ...
struct PromptChoice {
  PromptMode mode = PromptMode::Term;
  int naming = 0;
  std::string label() const;
  static PromptChoice parse(std::string_view s);
};

struct TaskSpec {
  TaskKind kind = TaskKind::Single;
  std::vector<std::string> patterns;
  std::vector<double> ratios;  // per pattern, MultiShape only; empty = equal
  std::size_t train = 0;       // train + val; val takes val_fraction of it
  std::size_t test = 0;
  double val_fraction = 0.1;
  IntRange n{4, 16};
  IntRange edges{3, 120};
  int max_matches = 1;  // MultiNum cap (<= 5), Tins final cap, Molecular cap
  PromptChoice prompt;
  Representation representation = Representation::AL;
  MatchOptions match;
  std::size_t max_len = 0;  // whole-sequence limit, 0 = none
  std::size_t c_max = 16;
  bool plant = false;  // plant-then-perturb instead of plain rejection
  std::uint64_t seed = 0;
  std::vector<std::string> perturb_tokens{"C", "D"};
  std::vector<std::string> atoms{"C", "N", "O", "F", "S", "P", "Cl", "Br", "I"};
  std::string molecules;  // JSONL path for Molecular
  int max_nodes = 16;
  std::size_t probe_batch = 20000;
  double min_acceptance = 0.001;

  void validate() const;
};

nlohmann::json task_spec_to_json(const TaskSpec& s);
// Unknown keys are rejected so config typos surface as ConfigError.
TaskSpec task_spec_from_json(const nlohmann::json& j);

struct SplitSizes {
  std::size_t train, val, test;
};
SplitSizes split_sizes(const TaskSpec& s);

VocabConfig vocab_config_for(const TaskSpec& s, const PatternLibrary& lib);

// Key used for cross-split disjointness: the canonical certificate for
// n <= 16, otherwise the refinement hash (conservative).
std::string split_key(const Graph& g);

struct Dataset {
  Vocab vocab;
  nlohmann::json manifest;
  std::map<std::string, std::vector<Sample>> splits;  // train, val, test, eval_perturbed

  const std::vector<Sample>& split(const std::string& name) const;
};

struct BuildOptions {
  int workers = 1;
};

Dataset build_single(const TaskSpec& s, const PatternLibrary& lib, BuildOptions opt = {});
Dataset build_multinum(const TaskSpec& s, const PatternLibrary& lib, BuildOptions opt = {});
Dataset build_multishape(const TaskSpec& s, const PatternLibrary& lib, BuildOptions opt = {});
Dataset build_prompt_mixture(const TaskSpec& s, const PatternLibrary& lib, BuildOptions opt = {});

struct TinsDatasets {
  Dataset tins;
  Dataset control;  // same graphs, direct answers
};
TinsDatasets build_tins(const TaskSpec& s, const PatternLibrary& lib, BuildOptions opt = {});

struct MoleculeRecord {
  std::vector<std::string> atoms;
  std::vector<std::pair<int, int>> bonds;
};
std::vector<MoleculeRecord> read_molecules(const std::filesystem::path& path);
void write_molecules(const std::filesystem::path& path, const std::vector<MoleculeRecord>& mols);
// Bonds become a pair of opposite directed edges.
Graph molecule_graph(const MoleculeRecord& m);
// Small organic-looking graphs: a random tree of heavy atoms, sometimes grown
// from a six-carbon ring, plus a few ring closures, with hydroxyl and
// carboxyl groups sprinkled in.
std::vector<MoleculeRecord> generate_molecules(std::size_t count, IntRange atoms, std::uint64_t seed);

Dataset ingest_molecules(const std::filesystem::path& path, const TaskSpec& s, const PatternLibrary& lib,
                         BuildOptions opt = {});

// Dispatch on spec.kind; Tins returns its paired control in `control`.
struct BuildResult {
  Dataset data;
  std::optional<Dataset> control;
};
BuildResult build_dataset(const TaskSpec& s, const PatternLibrary& lib, BuildOptions opt = {});

// Layout: manifest.json, vocab.json, <split>.jsonl.
void write_dataset(const Dataset& d, const std::filesystem::path& dir);
Dataset read_dataset(const std::filesystem::path& dir);

struct AuditReport {
  std::size_t samples = 0;
  std::size_t verified = 0;
  std::size_t collisions = 0;
  std::vector<std::string> failures;  // first few, "split:index: reason"

  bool ok() const { return collisions == 0 && verified == samples && failures.empty(); }
  nlohmann::json to_json() const;
};

// Recomputes every answer with the oracle from the stored graph record and the
// patterns embedded in the manifest, and checks split disjointness.
AuditReport audit_dataset(const Dataset& d, BuildOptions opt = {});

}  // namespace isflab
