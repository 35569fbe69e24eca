#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "isflab/error.hpp"
#include "isflab/run.hpp"

using namespace isflab;
using nlohmann::json;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitAudit = 3;
constexpr int kExitDivergence = 4;

struct Common {
  std::string preset;
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<int> workers;
  std::string out;
  std::vector<std::string> sets;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--preset", c.preset, "named preset (see `isflab presets`)");
  cmd->add_option("--config", c.config, "JSON config file merged over the preset");
  cmd->add_option("--seed", c.seed, "master seed");
  cmd->add_option("--workers", c.workers, "worker threads");
  cmd->add_option("--out", c.out, "output directory");
  cmd->add_option("--set", c.sets, "override a config field, e.g. model.layers=3");
}

void write_json(const std::filesystem::path& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << j.dump(2) << '\n';
  if (!out) throw IoError("write failed for " + path.string());
}

struct Run {
  RunConfig cfg;
  std::filesystem::path out;
};

// Resolves the layered config, creates the output directory and echoes the
// resolved config before any work.
Run resolve(const Common& c, const std::string& command, std::vector<std::string> extra = {}) {
  ConfigLayers layers;
  if (!c.preset.empty()) layers.preset = c.preset;
  if (!c.config.empty()) layers.file = c.config;
  layers.overrides = std::move(extra);
  layers.overrides.insert(layers.overrides.end(), c.sets.begin(), c.sets.end());
  json doc = layered_config(layers);
  if (c.seed) doc["seed"] = *c.seed;
  if (c.workers) doc["workers"] = *c.workers;
  if (!c.out.empty()) doc["out"] = c.out;
  if (!doc.contains("out") || doc["out"].get<std::string>().empty()) doc["out"] = "runs/" + command;
  Run r{run_config_from_json(doc), {}};
  r.out = r.cfg.out;
  std::error_code ec;
  std::filesystem::create_directories(r.out, ec);
  if (ec) throw IoError("cannot create " + r.out.string() + ": " + ec.message());
  json echo = run_config_to_json(r.cfg);
  echo["command"] = command;
  if (!c.preset.empty()) echo["preset"] = c.preset;
  write_json(r.out / "config.resolved.json", echo);
  return r;
}

std::optional<std::filesystem::path> cache_dir() {
  if (const char* e = std::getenv("ISFLAB_CACHE"); e && *e) return std::filesystem::path(e);
  return std::nullopt;
}

json split_sizes_json(const Dataset& d) {
  json j = json::object();
  for (const auto& [name, samples] : d.splits) j[name] = samples.size();
  return j;
}

Dataset load_data(const Run& r, const std::string& data_dir, bool control) {
  if (!data_dir.empty()) {
    if (control) throw ConfigError("--control builds from the config; pass the control directory to --data instead");
    return read_dataset(data_dir);
  }
  BuildResult b = obtain_dataset(r.cfg, cache_dir());
  if (control) {
    if (!b.control) throw ConfigError("--control needs a Tins task");
    return std::move(*b.control);
  }
  return std::move(b.data);
}

void print_report(const EvalReport& rep, std::ostream& os) {
  auto row = [&](const std::string& label, const Tally& t) {
    os << std::left << std::setw(28) << label << std::right << std::setw(8) << t.n << std::setw(9) << t.correct << std::setw(10)
       << std::fixed << std::setprecision(4) << t.accuracy() << '\n';
  };
  os << std::left << std::setw(28) << "group" << std::right << std::setw(8) << "n" << std::setw(9) << "correct" << std::setw(10)
     << "accuracy" << '\n';
  row("overall", rep.overall);
  for (const auto& [key, rows] : rep.breakdown) {
    for (const auto& [label, t] : rows) row(key + "=" + label, t);
  }
  os << "full-sequence accuracy " << std::fixed << std::setprecision(4) << rep.full_sequence.accuracy() << ", truncated "
     << rep.truncated << '\n';
}

int cmd_gen(const Common& c, const std::string& task, const std::vector<std::string>& patterns) {
  std::vector<std::string> extra;
  Common cc = c;
  if (!cc.preset.empty() && patterns.size() == 1) {
    // "--preset toy --pattern triangle" names the toy-triangle preset.
    const auto names = preset_names();
    if (std::ranges::find(names, cc.preset) == names.end()) cc.preset += "-" + patterns[0];
  }
  if (!task.empty()) extra.push_back("task.kind=" + task);
  if (!patterns.empty()) extra.push_back("task.patterns=" + json(patterns).dump());
  const Run r = resolve(cc, "gen", extra);
  BuildResult b = obtain_dataset(r.cfg, cache_dir());
  write_dataset(b.data, r.out / "data");
  json summary{{"command", "gen"}, {"dataset_key", dataset_key(r.cfg)}, {"vocab_hash", b.data.vocab.hash()}, {"splits", split_sizes_json(b.data)}};
  const AuditReport audit = audit_dataset(b.data, {r.cfg.workers});
  summary["audit"] = audit.to_json();
  bool ok = audit.ok();
  if (b.control) {
    write_dataset(*b.control, r.out / "control");
    const AuditReport ca = audit_dataset(*b.control, {r.cfg.workers});
    summary["control"] = {{"splits", split_sizes_json(*b.control)}, {"audit", ca.to_json()}};
    ok = ok && ca.ok();
  }
  write_json(r.out / "summary.json", summary);
  std::cout << "dataset written to " << (r.out / "data").string() << '\n' << summary["splits"].dump() << '\n';
  if (!ok) {
    std::cerr << "audit failed: " << summary["audit"].dump() << '\n';
    return kExitAudit;
  }
  return 0;
}

int cmd_train(const Common& c, const std::string& data_dir, bool control) {
  const Run r = resolve(c, "train");
  const Dataset data = load_data(r, data_dir, control);
  TrainOptions opt;
  opt.out = r.out / "checkpoint";
  opt.on_eval = [](const LogRow& row) {
    std::cerr << "step " << row.step << " train " << row.train_loss << " val " << row.val_loss << " acc " << row.val_acc << '\n';
  };
  const TrainResult res = train(data, r.cfg.model, r.cfg.train, opt);
  const EvalReport rep = evaluate(res.checkpoint.model, data.vocab, data.split("test"), {0, 0, r.cfg.workers});
  print_report(rep, std::cout);
  json summary{{"command", "train"},
               {"steps_run", res.steps_run},
               {"checkpoint_step", res.checkpoint.meta.step},
               {"best_val_loss", std::isfinite(res.checkpoint.meta.best_val_loss) ? json(res.checkpoint.meta.best_val_loss) : json(nullptr)},
               {"model_hash", model_hash(res.checkpoint.model)},
               {"parameters", res.checkpoint.model.parameter_count()},
               {"test", rep.to_json()}};
  write_json(r.out / "summary.json", summary);
  return 0;
}

int cmd_eval(const Common& c, const std::string& ckpt, const std::string& data_dir, const std::string& split, std::size_t limit,
             bool control) {
  const Run r = resolve(c, "eval");
  const Checkpoint cp = load_checkpoint(ckpt);
  const Dataset data = load_data(r, data_dir, control);
  if (data.vocab.hash() != cp.vocab.hash()) throw ConfigError("checkpoint and dataset vocabularies differ");
  const EvalReport rep = evaluate(cp.model, cp.vocab, data.split(split), {0, limit, r.cfg.workers});
  print_report(rep, std::cout);
  std::ofstream preds(r.out / "predictions.jsonl");
  for (std::size_t i = 0; i < rep.predictions.size(); ++i) {
    preds << json{{"index", i}, {"prediction", cp.vocab.render(rep.predictions[i].tokens)}, {"truncated", rep.predictions[i].truncated}}.dump()
          << '\n';
  }
  json summary{{"command", "eval"}, {"split", split}, {"model_hash", model_hash(cp.model)}, {"report", rep.to_json()}};
  write_json(r.out / "summary.json", summary);
  return 0;
}

std::vector<std::string> probe_overrides(const std::string& position, const std::string& layers, const std::string& split,
                                         std::optional<std::size_t> limit) {
  std::vector<std::string> o;
  if (!position.empty()) o.push_back("probe.position=" + position);
  if (!split.empty()) o.push_back("probe.split=" + split);
  if (limit) o.push_back("probe.limit=" + std::to_string(*limit));
  if (!layers.empty()) {
    if (layers == "all") {
      o.push_back("probe.layers=\"all\"");
    } else {
      json list = json::array();
      std::stringstream ss(layers);
      std::string item;
      while (std::getline(ss, item, ',')) {
        try {
          list.push_back(std::stoi(item));
        } catch (const std::exception&) {
          throw ConfigError("--layers expects 'all' or a comma-separated list of integers");
        }
      }
      o.push_back("probe.layers=" + list.dump());
    }
  }
  return o;
}

int cmd_probe(const Common& c, const std::string& ckpt, const std::string& data_dir, const std::vector<std::string>& extra) {
  const Run r = resolve(c, "probe", extra);
  const Checkpoint cp = load_checkpoint(ckpt);
  const Dataset data = load_data(r, data_dir, false);
  if (data.vocab.hash() != cp.vocab.hash()) throw ConfigError("checkpoint and dataset vocabularies differ");
  auto samples = std::span<const Sample>(data.split(r.cfg.probe.split));
  if (r.cfg.probe.limit && samples.size() > r.cfg.probe.limit) samples = samples.first(r.cfg.probe.limit);
  CaptureOptions copt;
  copt.layers = r.cfg.probe.layers;
  copt.workers = r.cfg.workers;
  const ProbeDump dump = capture(cp.model, cp.vocab, samples, parse_probe_position(r.cfg.probe.position), copt);
  const auto metrics = cluster_metrics(dump, {r.cfg.seed, r.cfg.probe.restarts});
  export_dump(dump, metrics, r.out / "probe");
  json rows = json::array();
  for (const auto& m : metrics) {
    rows.push_back({{"layer", m.layer}, {"ari", m.ari}, {"nmi", m.nmi}});
    std::cout << "layer " << m.layer << "  ARI " << std::fixed << std::setprecision(4) << m.ari << "  NMI " << m.nmi << '\n';
  }
  json summary{{"command", "probe"}, {"checkpoint_hash", dump.checkpoint_hash}, {"samples", dump.labels.size()}, {"metrics", rows}};
  write_json(r.out / "summary.json", summary);
  return 0;
}

Pattern resolve_pattern(const std::string& ref) {
  if (std::filesystem::exists(ref)) return load_pattern(ref);
  return PatternLibrary::load_default().at(ref);
}

Graph read_graph(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  std::string line;
  std::stringstream all;
  all << in.rdbuf();
  try {
    return graph_from_json(json::parse(all.str()));
  } catch (const json::exception& e) {
    throw ValidationError(path + ": " + e.what());
  }
}

int cmd_oracle(const Common& c, const std::string& verb, const std::string& graph_path, const std::string& pattern_ref,
               const std::string& mode, const std::string& dedup, std::size_t c_max) {
  const Run r = resolve(c, "oracle");
  const Graph g = read_graph(graph_path);
  const Pattern p = resolve_pattern(pattern_ref);
  MatchOptions mo{match_mode_from_string(mode), dedup_from_string(dedup)};
  VocabConfig vc;
  vc.max_nodes = std::max(16, g.size());
  const Vocab vocab(vc);
  json summary{{"command", "oracle"}, {"verb", verb}, {"pattern", p.name().value_or(pattern_ref)}};
  if (verb == "match" || verb == "unique") {
    const MatchSet ms = p.has_features() ? match_attributed(g, p, mo) : enumerate_matches(g, p, mo);
    const std::string answer = vocab.render(encode_answer(ms, vocab));
    summary["matches"] = ms.size();
    summary["answer"] = answer;
    if (verb == "unique") {
      const bool unique = check_unique(g, p, mo);
      summary["unique"] = unique;
      std::cout << (unique ? "unique" : "not unique") << '\n';
    }
    std::cout << answer << '\n';
  } else if (verb == "filtrate") {
    const auto stages = filtration_tensors(g, p, mo.mode);
    json rows = json::array();
    for (std::size_t i = 0; i < stages.size(); ++i) {
      std::vector<Tuple> tuples = stages[i].positives;
      const MatchSet ms = make_match_set(tuples, {mo.mode, Dedup::ByTuple});
      const std::string answer = vocab.render(encode_answer(ms, vocab));
      rows.push_back({{"stage", i + 1}, {"vertices", stages[i].vertices}, {"positives", stages[i].positives.size()}, {"answer", answer}});
      std::cout << "stage " << i + 1 << " (" << stages[i].positives.size() << "): " << answer << '\n';
    }
    summary["stages"] = rows;
  } else if (verb == "tins") {
    const TinsResult t = match_via_tins(g, p, {mo, c_max});
    const std::string answer = vocab.render(encode_answer_tins(t.parts, t.final, vocab));
    summary["answer"] = answer;
    summary["matches"] = t.final.size();
    std::cout << answer << '\n';
  } else {
    throw ConfigError("unknown oracle verb '" + verb + "'");
  }
  write_json(r.out / "summary.json", summary);
  return 0;
}

int cmd_audit(const Common& c, const std::string& data_dir) {
  const Run r = resolve(c, "audit");
  const Dataset d = data_dir.empty() ? obtain_dataset(r.cfg, cache_dir()).data : read_dataset(data_dir);
  const AuditReport a = audit_dataset(d, {r.cfg.workers});
  write_json(r.out / "summary.json", {{"command", "audit"}, {"audit", a.to_json()}});
  std::cout << a.to_json().dump(2) << '\n';
  return a.ok() ? 0 : kExitAudit;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"isflab: substructure extraction laboratory"};
  app.require_subcommand(1);

  Common common;
  std::string task, data_dir, ckpt, split = "test", position, layers, probe_split;
  std::vector<std::string> patterns;
  std::size_t limit = 0;
  std::optional<std::size_t> probe_limit;
  bool control = false;

  auto* gen = app.add_subcommand("gen", "generate and audit a dataset");
  add_common(gen, common);
  gen->add_option("--task", task, "single | multinum | multishape | prompt-mixture | tins | molecular");
  gen->add_option("--pattern", patterns, "pattern name (repeatable)");

  auto* tr = app.add_subcommand("train", "train a model and evaluate it on the test split");
  add_common(tr, common);
  tr->add_option("--data", data_dir, "dataset directory (default: build from the config)");
  tr->add_flag("--control", control, "use the direct-answer control of a Tins task");

  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint");
  add_common(ev, common);
  ev->add_option("--checkpoint", ckpt, "checkpoint directory")->required();
  ev->add_option("--data", data_dir, "dataset directory (default: build from the config)");
  ev->add_option("--split", split, "split to evaluate");
  ev->add_option("--limit", limit, "evaluate the first N samples only");
  ev->add_flag("--control", control, "use the direct-answer control of a Tins task");

  auto* pr = app.add_subcommand("probe", "capture hidden states and compute ARI / NMI per layer");
  add_common(pr, common);
  pr->add_option("--checkpoint", ckpt, "checkpoint directory")->required();
  pr->add_option("--data", data_dir, "dataset directory (default: build from the config)");
  pr->add_option("--position", position, "last-graph | last-query");
  pr->add_option("--layers", layers, "all | comma-separated block numbers");
  pr->add_option("--split", probe_split, "split to probe");
  pr->add_option("--limit", probe_limit, "probe the first N samples only");

  std::string verb, graph_path, pattern_ref, mode = "monomorphism", dedup = "by-vertex-set";
  std::size_t c_max = 16;
  auto* orc = app.add_subcommand("oracle", "run the matching oracle on one graph");
  add_common(orc, common);
  orc->add_option("verb", verb, "match | unique | filtrate | tins")->required()->check(CLI::IsMember({"match", "unique", "filtrate", "tins"}));
  orc->add_option("--graph", graph_path, "graph JSON record")->required();
  orc->add_option("--pattern", pattern_ref, "pattern name or pattern JSON file")->required();
  orc->add_option("--mode", mode, "monomorphism | induced");
  orc->add_option("--dedup", dedup, "by-vertex-set | by-tuple");
  orc->add_option("--c-max", c_max, "Tins per-part capacity");

  auto* au = app.add_subcommand("audit", "re-verify every stored answer and split disjointness");
  add_common(au, common);
  au->add_option("--data", data_dir, "dataset directory (default: build from the config)");

  auto* ps = app.add_subcommand("presets", "list preset names");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    if (gen->parsed()) return cmd_gen(common, task, patterns);
    if (tr->parsed()) return cmd_train(common, data_dir, control);
    if (ev->parsed()) return cmd_eval(common, ckpt, data_dir, split, limit, control);
    if (pr->parsed()) return cmd_probe(common, ckpt, data_dir, probe_overrides(position, layers, probe_split, probe_limit));
    if (orc->parsed()) return cmd_oracle(common, verb, graph_path, pattern_ref, mode, dedup, c_max);
    if (au->parsed()) return cmd_audit(common, data_dir);
    if (ps->parsed()) {
      for (const auto& n : preset_names()) std::cout << n << '\n';
      return 0;
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const AuditError& e) {
    std::cerr << "audit error: " << e.what() << '\n';
    return kExitAudit;
  } catch (const DivergenceError& e) {
    std::cerr << "training diverged: " << e.what() << '\n';
    return kExitDivergence;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}
