#include <cmath>
#include <set>

#include "isflab/corpus.hpp"
#include "isflab/error.hpp"

namespace isflab {

std::string_view to_string(TaskKind k) {
  switch (k) {
    case TaskKind::Single: return "single";
    case TaskKind::MultiNum: return "multinum";
    case TaskKind::MultiShape: return "multishape";
    case TaskKind::PromptMixture: return "prompt-mixture";
    case TaskKind::Tins: return "tins";
    case TaskKind::Molecular: return "molecular";
  }
  return "?";
}

TaskKind task_kind_from_string(std::string_view s) {
  for (TaskKind k : {TaskKind::Single, TaskKind::MultiNum, TaskKind::MultiShape, TaskKind::PromptMixture, TaskKind::Tins,
                     TaskKind::Molecular}) {
    if (to_string(k) == s) return k;
  }
  throw ConfigError("unknown task kind '" + std::string(s) + "'");
}

std::string PromptChoice::label() const {
  return mode == PromptMode::Term ? "term" : "topo" + std::to_string(naming + 1);
}

PromptChoice PromptChoice::parse(std::string_view s) {
  if (s == "term") return {PromptMode::Term, 0};
  if (s.size() > 4 && s.substr(0, 4) == "topo") {
    try {
      const int idx = std::stoi(std::string(s.substr(4)));
      if (idx >= 1) return {PromptMode::Topo, idx - 1};
    } catch (const std::exception&) {
    }
  }
  throw ConfigError("unknown prompt '" + std::string(s) + "' (expected term, topo1, topo2, ...)");
}

void TaskSpec::validate() const {
  if (patterns.empty()) throw ConfigError("task needs at least one pattern");
  if (train == 0 && test == 0) throw ConfigError("task produces no samples");
  if (val_fraction < 0.0 || val_fraction >= 1.0) throw ConfigError("val_fraction must be in [0,1)");
  if (n.lo < 1 || n.lo > n.hi) throw ConfigError("empty vertex-count range");
  if (edges.lo < 0 || edges.lo > edges.hi) throw ConfigError("empty edge-count range");
  if (max_nodes < 1) throw ConfigError("max_nodes must be >= 1");
  if (kind != TaskKind::Molecular && n.hi > max_nodes) throw ConfigError("vertex range exceeds max_nodes");
  if (max_matches < 1) throw ConfigError("max_matches must be >= 1");
  if (kind == TaskKind::MultiNum && max_matches > 5) throw ConfigError("MultiNum cap must be <= 5");
  if (kind == TaskKind::Single && max_matches != 1) throw ConfigError("Single tasks need unique-instance filtering (max_matches = 1)");
  if (!ratios.empty()) {
    if (ratios.size() != patterns.size()) throw ConfigError("one ratio per pattern is required");
    double sum = 0.0;
    for (double r : ratios) {
      if (!(r >= 0.0)) throw ConfigError("ratios must be non-negative");
      sum += r;
    }
    if (std::fabs(sum - 1.0) > 1e-9) throw ConfigError("ratios must sum to 1");
  }
  if ((kind == TaskKind::Single || kind == TaskKind::MultiNum || kind == TaskKind::Tins) && patterns.size() != 1) {
    throw ConfigError(std::string(to_string(kind)) + " tasks take exactly one pattern");
  }
  if (kind == TaskKind::Molecular && molecules.empty()) throw ConfigError("molecular task needs a molecules path");
  if (kind == TaskKind::Molecular && representation != Representation::AL_f) {
    throw ConfigError("molecular tasks use the AL_f representation");
  }
  if (min_acceptance < 0.0 || min_acceptance >= 1.0) throw ConfigError("min_acceptance must be in [0,1)");
}

SplitSizes split_sizes(const TaskSpec& s) {
  const auto val = static_cast<std::size_t>(std::llround(static_cast<double>(s.train) * s.val_fraction));
  return {s.train - val, val, s.test};
}

VocabConfig vocab_config_for(const TaskSpec& s, const PatternLibrary& lib) {
  VocabConfig c;
  c.max_nodes = s.max_nodes;
  c.terms = lib.names();
  if (s.kind == TaskKind::Molecular) c.features = s.atoms;
  return c;
}

std::string split_key(const Graph& g) {
  if (g.size() <= kMaxCertificateVertices) return "c" + canonical_certificate(g).bytes;
  const std::uint64_t h = refinement_hash(g);
  std::string out = "h";
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((h >> (8 * i)) & 0xFF));
  return out;
}

nlohmann::json task_spec_to_json(const TaskSpec& s) {
  nlohmann::json j;
  j["kind"] = to_string(s.kind);
  j["patterns"] = s.patterns;
  j["ratios"] = s.ratios;
  j["train"] = s.train;
  j["test"] = s.test;
  j["val_fraction"] = s.val_fraction;
  j["n"] = {s.n.lo, s.n.hi};
  j["edges"] = {s.edges.lo, s.edges.hi};
  j["max_matches"] = s.max_matches;
  j["prompt"] = s.prompt.label();
  j["representation"] = to_string(s.representation);
  j["match_mode"] = to_string(s.match.mode);
  j["dedup"] = to_string(s.match.dedup);
  j["max_len"] = s.max_len;
  j["c_max"] = s.c_max;
  j["generation"] = s.plant ? "plant" : "rejection";
  j["seed"] = s.seed;
  j["perturb_tokens"] = s.perturb_tokens;
  j["atoms"] = s.atoms;
  j["molecules"] = s.molecules;
  j["max_nodes"] = s.max_nodes;
  j["probe_batch"] = s.probe_batch;
  j["min_acceptance"] = s.min_acceptance;
  return j;
}

TaskSpec task_spec_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("task spec must be a JSON object");
  static const std::set<std::string> known{"kind",     "patterns",   "ratios",         "train",     "test",      "val_fraction",
                                           "n",        "edges",      "max_matches",    "prompt",    "representation",
                                           "match_mode", "dedup",    "max_len",        "c_max",     "generation",
                                           "seed",     "perturb_tokens", "atoms",      "molecules", "max_nodes",
                                           "probe_batch", "min_acceptance"};
  for (const auto& [k, v] : j.items()) {
    if (!known.count(k)) throw ConfigError("unknown task key '" + k + "'");
  }
  TaskSpec s;
  try {
    auto range = [](const nlohmann::json& r) {
      if (!r.is_array() || r.size() != 2) throw ConfigError("ranges are [lo, hi] pairs");
      return IntRange{r[0].get<int>(), r[1].get<int>()};
    };
    if (j.contains("kind")) s.kind = task_kind_from_string(j["kind"].get<std::string>());
    if (j.contains("patterns")) s.patterns = j["patterns"].get<std::vector<std::string>>();
    if (j.contains("ratios")) s.ratios = j["ratios"].get<std::vector<double>>();
    if (j.contains("train")) s.train = j["train"].get<std::size_t>();
    if (j.contains("test")) s.test = j["test"].get<std::size_t>();
    if (j.contains("val_fraction")) s.val_fraction = j["val_fraction"].get<double>();
    if (j.contains("n")) s.n = range(j["n"]);
    if (j.contains("edges")) s.edges = range(j["edges"]);
    if (j.contains("max_matches")) s.max_matches = j["max_matches"].get<int>();
    if (j.contains("prompt")) s.prompt = PromptChoice::parse(j["prompt"].get<std::string>());
    if (j.contains("representation")) s.representation = representation_from_string(j["representation"].get<std::string>());
    if (j.contains("match_mode")) s.match.mode = match_mode_from_string(j["match_mode"].get<std::string>());
    if (j.contains("dedup")) s.match.dedup = dedup_from_string(j["dedup"].get<std::string>());
    if (j.contains("max_len")) s.max_len = j["max_len"].get<std::size_t>();
    if (j.contains("c_max")) s.c_max = j["c_max"].get<std::size_t>();
    if (j.contains("generation")) {
      const auto g = j["generation"].get<std::string>();
      if (g != "plant" && g != "rejection") throw ConfigError("generation must be 'rejection' or 'plant'");
      s.plant = g == "plant";
    }
    if (j.contains("seed")) s.seed = j["seed"].get<std::uint64_t>();
    if (j.contains("perturb_tokens")) s.perturb_tokens = j["perturb_tokens"].get<std::vector<std::string>>();
    if (j.contains("atoms")) s.atoms = j["atoms"].get<std::vector<std::string>>();
    if (j.contains("molecules")) s.molecules = j["molecules"].get<std::string>();
    if (j.contains("max_nodes")) s.max_nodes = j["max_nodes"].get<int>();
    if (j.contains("probe_batch")) s.probe_batch = j["probe_batch"].get<std::size_t>();
    if (j.contains("min_acceptance")) s.min_acceptance = j["min_acceptance"].get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad task spec: ") + e.what());
  }
  return s;
}

const std::vector<Sample>& Dataset::split(const std::string& name) const {
  static const std::vector<Sample> empty;
  auto it = splits.find(name);
  return it == splits.end() ? empty : it->second;
}

}  // namespace isflab
