#include "isflab/run.hpp"

#include <cstdio>
#include <fstream>
#include <map>

#include "isflab/error.hpp"
#include "isflab/rng.hpp"

namespace isflab {
namespace {

using nlohmann::json;

void reject_unknown(const json& j, std::initializer_list<const char*> known, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be a JSON object");
  for (const auto& [k, v] : j.items()) {
    if (std::find_if(known.begin(), known.end(), [&](const char* s) { return k == s; }) == known.end()) {
      throw ConfigError("unknown " + where + " key '" + k + "'");
    }
  }
}

json toy(const std::string& pattern, std::size_t train, int n, int emin, int emax, const std::string& repr) {
  return {{"task",
           {{"kind", "single"},
            {"patterns", {pattern}},
            {"train", train},
            {"test", 1000},
            {"n", {n, n}},
            {"edges", {emin, emax}},
            {"representation", repr}}},
          {"model", {{"layers", 3}, {"heads", 12}, {"width", 192}, {"dropout", 0.0}}},
          {"train",
           {{"micro_batch", 32},
            {"lr", 1e-3},
            {"weight_decay", 0.1},
            {"max_steps", 12000},
            {"warmup", 200},
            {"schedule", "cosine"},
            {"eval_every", 500},
            {"eval_samples", 200}}}};
}

// Full scale: width 384, 12 heads, dropout 0.2, batch 2048 as 64 x 32.
json full_model(int layers) { return {{"layers", layers}, {"heads", 12}, {"width", 384}, {"dropout", 0.2}}; }
json full_train() {
  return {{"micro_batch", 64}, {"accumulation", 32}, {"lr", 1e-3}, {"max_steps", 40000}, {"warmup", 500}, {"schedule", "cosine"},
          {"eval_every", 500}};
}

const std::map<std::string, json>& presets() {
  static const std::map<std::string, json> all = [] {
    std::map<std::string, json> p;
    for (const char* repr : {"AL", "EL"}) {
      const std::string suffix = std::string(repr) == "AL" ? "" : "-el";
      p["toy-triangle" + suffix] = toy("triangle", 5000, 5, 3, 10, repr);
      p["toy-square" + suffix] = toy("square", 15000, 8, 4, 16, repr);
      p["toy-pentagon" + suffix] = toy("pentagon", 35000, 8, 5, 16, repr);
      p["toy-pentagon" + suffix]["task"]["generation"] = "plant";
    }
    for (const char* pat : {"triangle", "path", "square", "diagonal", "T_triangle", "F_triangle", "diamond", "pentagon", "house"}) {
      for (int layers : {2, 3}) {
        json c{{"task", {{"kind", "single"}, {"patterns", {pat}}, {"train", 100000}, {"test", 30000}, {"n", {4, 16}}, {"edges", {3, 40}}}},
               {"model", full_model(layers)},
               {"train", full_train()}};
        const std::string name(pat);
        if (name == "pentagon" || name == "house") c["task"]["generation"] = "plant";
        p["table1-" + name + "-" + std::to_string(layers) + "L-100K"] = c;
      }
    }
    p["multinum-triangle"] = {{"task", {{"kind", "multinum"}, {"patterns", {"triangle"}}, {"max_matches", 5}, {"train", 50000}, {"test", 5000}, {"n", {4, 16}}, {"edges", {3, 40}}}},
                              {"model", full_model(4)},
                              {"train", full_train()}};
    const std::vector<std::pair<std::string, std::vector<std::string>>> pairs{
        {"triangle-square", {"triangle", "square"}}, {"square-diamond", {"square", "diamond"}},
        {"ftri-ttri", {"F_triangle", "T_triangle"}},  {"square-path", {"square", "path"}}};
    for (const auto& [tag, pats] : pairs) {
      json t{{"kind", "multishape"}, {"patterns", pats}, {"train", 60000}, {"test", 6000}, {"n", {4, 16}}, {"edges", {3, 40}}};
      if (tag == "triangle-square") t["ratios"] = {1.0 / 7, 6.0 / 7};
      p["multishape-" + tag + "-60K"] = {{"task", t}, {"model", full_model(4)}, {"train", full_train()}};
    }
    p["table2-group1"] = {{"task", {{"kind", "prompt-mixture"}, {"patterns", {"triangle", "square"}}, {"train", 60000}, {"test", 6000}, {"n", {4, 16}}, {"edges", {3, 40}}}},
                          {"model", full_model(4)},
                          {"train", full_train()}};
    p["table2-group2"] = p["table2-group1"];
    p["table2-group2"]["task"]["patterns"] = {"diagonal", "square"};
    const std::map<std::string, int> tins_len{{"diagonal", 150}, {"diamond", 150}, {"house", 190}, {"complex", 290}};
    for (const auto& [pat, len] : tins_len) {
      json t{{"kind", "tins"}, {"patterns", {pat}}, {"train", 100000}, {"test", 5000}, {"n", {5, 10}}, {"edges", {5, 20}}, {"max_len", len},
             {"max_matches", 3}};
      if (pat != "diagonal") t["generation"] = "plant";
      p["table5-" + pat + "-tins"] = {{"task", t}, {"model", full_model(3)}, {"train", full_train()}};
    }
    // Desk-scale Tins comparison on the diagonal composite.
    p["tins-diagonal-20K"] = p["table5-diagonal-tins"];
    p["tins-diagonal-20K"]["task"]["train"] = 20000;
    p["tins-diagonal-20K"]["task"]["test"] = 1000;
    p["tins-diagonal-20K"]["model"] = {{"layers", 3}, {"heads", 12}, {"width", 192}, {"dropout", 0.0}};
    p["tins-diagonal-20K"]["train"] = {{"micro_batch", 32}, {"lr", 1e-3}, {"max_steps", 6000}, {"warmup", 200}, {"schedule", "cosine"},
                                       {"eval_every", 500}, {"eval_samples", 200}};
    auto mol = [&](std::vector<std::string> pats, std::size_t train, std::size_t test, std::size_t count, int max_atoms, std::size_t max_len) {
      return json{{"task",
                   {{"kind", "molecular"}, {"patterns", pats}, {"train", train}, {"test", test}, {"representation", "AL_f"},
                    {"max_matches", 4}, {"max_nodes", 128}, {"max_len", max_len}, {"n", {2, max_atoms}}}},
                  {"molecules", {{"count", count}, {"atoms", {2, max_atoms}}}},
                  {"model", full_model(4)},
                  {"train", full_train()}};
    };
    p["table6-hydroxyl"] = mol({"hydroxyl"}, 30000, 3000, 90000, 9, 100);
    p["table6-carboxyl"] = mol({"carboxyl"}, 10000, 3000, 90000, 121, 1000);
    p["table6-benzene"] = mol({"benzene"}, 30000, 3000, 150000, 121, 1000);
    p["table6-mix"] = mol({"hydroxyl", "carboxyl"}, 20000, 3000, 400000, 121, 1000);
    return p;
  }();
  return all;
}

std::string fnv_hex(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace

nlohmann::json run_config_to_json(const RunConfig& c) {
  return {{"task", task_spec_to_json(c.task)},
          {"model", model_config_to_json(c.model)},
          {"train", train_config_to_json(c.train)},
          {"probe",
           {{"position", c.probe.position}, {"layers", c.probe.layers}, {"split", c.probe.split}, {"limit", c.probe.limit},
            {"restarts", c.probe.restarts}}},
          {"molecules", {{"count", c.molecules.count}, {"atoms", {c.molecules.atoms.lo, c.molecules.atoms.hi}}}},
          {"seed", c.seed},
          {"workers", c.workers},
          {"out", c.out}};
}

RunConfig run_config_from_json(const nlohmann::json& j) {
  reject_unknown(j, {"task", "model", "train", "probe", "molecules", "seed", "workers", "out"}, "config");
  RunConfig c;
  try {
    c.seed = j.value("seed", c.seed);
    c.workers = j.value("workers", c.workers);
    c.out = j.value("out", c.out);
    if (j.contains("task")) c.task = task_spec_from_json(j["task"]);
    if (j.contains("model")) c.model = model_config_from_json(j["model"]);
    if (j.contains("train")) c.train = train_config_from_json(j["train"]);
    if (j.contains("probe")) {
      const auto& p = j["probe"];
      reject_unknown(p, {"position", "layers", "split", "limit", "restarts"}, "probe");
      c.probe.position = p.value("position", c.probe.position);
      if (p.contains("layers")) {
        if (p["layers"].is_string()) {
          if (p["layers"] != "all") throw ConfigError("probe.layers must be \"all\" or a list of layer numbers");
        } else {
          c.probe.layers = p["layers"].get<std::vector<int>>();
        }
      }
      c.probe.split = p.value("split", c.probe.split);
      c.probe.limit = p.value("limit", c.probe.limit);
      c.probe.restarts = p.value("restarts", c.probe.restarts);
    }
    if (j.contains("molecules")) {
      const auto& m = j["molecules"];
      reject_unknown(m, {"count", "atoms"}, "molecules");
      c.molecules.count = m.value("count", c.molecules.count);
      if (m.contains("atoms")) c.molecules.atoms = {m["atoms"].at(0).get<int>(), m["atoms"].at(1).get<int>()};
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad config value: ") + e.what());
  }
  c.task.seed = c.seed;
  c.train.seed = c.seed;
  if (c.workers < 1) throw ConfigError("workers must be at least 1");
  parse_probe_position(c.probe.position);
  if (j.contains("task")) {
    TaskSpec check = c.task;
    if (check.kind == TaskKind::Molecular && check.molecules.empty() && c.molecules.count) check.molecules = "synthetic";
    check.validate();
  }
  c.model.validate();
  c.train.validate();
  return c;
}

std::vector<std::string> preset_names() {
  std::vector<std::string> out;
  for (const auto& [k, v] : presets()) out.push_back(k);
  return out;
}

nlohmann::json preset_json(std::string_view name) {
  const auto it = presets().find(std::string(name));
  if (it == presets().end()) throw ConfigError("unknown preset '" + std::string(name) + "'");
  return it->second;
}

void apply_override(nlohmann::json& doc, std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos || eq == 0) throw ConfigError("override '" + std::string(assignment) + "' is not key=value");
  const std::string path(assignment.substr(0, eq));
  const std::string text(assignment.substr(eq + 1));
  json value;
  try {
    value = json::parse(text);
  } catch (const json::exception&) {
    value = text;
  }
  json* node = &doc;
  std::size_t start = 0;
  while (true) {
    const auto dot = path.find('.', start);
    const std::string key = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (key.empty()) throw ConfigError("override path '" + path + "' has an empty component");
    if (!node->is_object()) *node = json::object();
    node = &(*node)[key];
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  *node = std::move(value);
}

nlohmann::json layered_config(const ConfigLayers& layers) {
  json doc = json::object();
  if (layers.preset) doc.merge_patch(preset_json(*layers.preset));
  if (layers.file) {
    std::ifstream in(*layers.file);
    if (!in) throw ConfigError("cannot open config " + layers.file->string());
    try {
      doc.merge_patch(json::parse(in));
    } catch (const json::exception& e) {
      throw ConfigError(layers.file->string() + ": " + e.what());
    }
  }
  for (const auto& o : layers.overrides) apply_override(doc, o);
  return doc;
}

std::string dataset_key(const RunConfig& c) {
  json k{{"task", task_spec_to_json(c.task)}};
  if (c.task.kind == TaskKind::Molecular && c.task.molecules.empty()) {
    k["molecules"] = {{"count", c.molecules.count}, {"atoms", {c.molecules.atoms.lo, c.molecules.atoms.hi}}};
  }
  return fnv_hex(k.dump());
}

BuildResult obtain_dataset(const RunConfig& c, const std::optional<std::filesystem::path>& cache) {
  const PatternLibrary lib = PatternLibrary::load_default();
  const BuildOptions opt{c.workers};
  std::optional<std::filesystem::path> slot;
  if (cache) {
    slot = *cache / dataset_key(c);
    if (std::filesystem::exists(*slot / "data" / "manifest.json")) {
      BuildResult r{read_dataset(*slot / "data"), std::nullopt};
      if (std::filesystem::exists(*slot / "control" / "manifest.json")) r.control = read_dataset(*slot / "control");
      return r;
    }
  }
  TaskSpec task = c.task;
  if (task.kind == TaskKind::Molecular && task.molecules.empty()) {
    if (c.molecules.count == 0) throw ConfigError("molecular task needs task.molecules or molecules.count");
    const auto dir = slot ? *slot : std::filesystem::temp_directory_path() / ("isflab-molecules-" + dataset_key(c));
    std::filesystem::create_directories(dir);
    const auto file = dir / "molecules.synthetic.jsonl";
    write_molecules(file, generate_molecules(c.molecules.count, c.molecules.atoms, derive_seed(c.seed, 0x6d6f6cULL)));
    task.molecules = file.string();
  }
  BuildResult r = build_dataset(task, lib, opt);
  if (slot) {
    write_dataset(r.data, *slot / "data");
    if (r.control) write_dataset(*r.control, *slot / "control");
  }
  return r;
}

}  // namespace isflab
