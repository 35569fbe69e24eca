#include <map>
#include <mutex>
#include <set>
#include <thread>

#include "isflab/corpus.hpp"
#include "isflab/error.hpp"

namespace isflab {
namespace {

struct AuditContext {
  TaskSpec spec;
  std::map<std::string, Pattern> patterns;
  const Vocab* vocab;
};

// Empty string when the sample checks out, otherwise the reason.
std::string check_sample(const AuditContext& ctx, const Sample& s) {
  const auto& meta = s.meta;
  const Graph g = graph_from_json(meta.at("graph"));
  const std::string kind = meta.at("kind").get<std::string>();
  auto pit = ctx.patterns.find(meta.at("pattern").get<std::string>());
  if (pit == ctx.patterns.end()) return "pattern missing from manifest";
  const Pattern& p = pit->second;
  const Vocab& v = *ctx.vocab;
  const TaskSpec& spec = ctx.spec;

  if (s.graph_tokens != encode_graph(g, spec.representation, v)) return "graph tokens do not encode the stored graph";
  const PromptChoice pc = PromptChoice::parse(meta.at("prompt").get<std::string>());
  TokenSeq prompt = encode_prompt(p, pc.mode, v, pc.naming);
  if (meta.contains("perturb")) {
    const std::string pert = meta["perturb"].get<std::string>();
    if (pert == "structure") prompt = perturb_prompt(prompt, PerturbKind::StructureOnly, v);
    else if (pert == "pad") prompt = perturb_prompt(prompt, PerturbKind::Pad, v);
    else if (pert.rfind("token:", 0) == 0) prompt = perturb_prompt(prompt, PerturbKind::Token, v, pert.substr(6));
    else return "unknown perturbation";
  }
  if (s.prompt_tokens != prompt) return "prompt tokens differ from the pattern prompt";

  int cap = 1;
  if (kind == "multinum" || kind == "tins" || kind == "tins-control" || kind == "molecular") cap = spec.max_matches;
  MatchSet ms = kind == "molecular" ? match_attributed(g, p, spec.match) : enumerate_matches(g, p, spec.match);
  const int c = static_cast<int>(ms.size());
  if (c < 1 || c > cap) return "oracle finds " + std::to_string(c) + " matches, allowed 1.." + std::to_string(cap);

  TokenSeq expected;
  if (kind == "tins") {
    const TinsResult r = match_via_tins(g, p, {spec.match, spec.c_max});
    if (!(r.final == ms)) return "Tins final differs from direct enumeration";
    expected = encode_answer_tins(r.parts, r.final, v);
  } else {
    expected = encode_answer(ms, v);
    if (!(decode_answer(s.answer_tokens, v) == ms)) return "decoded answer differs from oracle";
  }
  if (s.answer_tokens != expected) return "answer tokens differ from oracle encoding";
  if (spec.max_len && sequence_length(s) > spec.max_len) return "sequence exceeds max_len";
  return {};
}

}  // namespace

nlohmann::json AuditReport::to_json() const {
  return {{"samples", samples}, {"verified", verified}, {"collisions", collisions}, {"failures", failures}, {"ok", ok()}};
}

AuditReport audit_dataset(const Dataset& d, BuildOptions opt) {
  AuditContext ctx;
  try {
    ctx.spec = task_spec_from_json(d.manifest.at("task"));
    for (const auto& [name, pj] : d.manifest.at("patterns").items()) ctx.patterns.emplace(name, pattern_from_json(pj));
  } catch (const nlohmann::json::exception& e) {
    throw AuditError(std::string("manifest incomplete: ") + e.what());
  }
  ctx.vocab = &d.vocab;

  struct Item {
    std::string split;
    std::size_t index;
    const Sample* sample;
  };
  std::vector<Item> items;
  for (const auto& [name, samples] : d.splits) {
    for (std::size_t i = 0; i < samples.size(); ++i) items.push_back({name, i, &samples[i]});
  }

  AuditReport rep;
  rep.samples = items.size();
  std::vector<std::string> reasons(items.size());
  std::vector<std::string> keys(items.size());
  const int workers = std::max(1, opt.workers);
  auto work = [&](int w) {
    for (std::size_t i = static_cast<std::size_t>(w); i < items.size(); i += static_cast<std::size_t>(workers)) {
      try {
        reasons[i] = check_sample(ctx, *items[i].sample);
        keys[i] = split_key(graph_from_json(items[i].sample->meta.at("graph")));
      } catch (const std::exception& e) {
        reasons[i] = std::string("exception: ") + e.what();
      }
    }
  };
  if (workers == 1) {
    work(0);
  } else {
    std::vector<std::thread> threads;
    for (int w = 0; w < workers; ++w) threads.emplace_back(work, w);
    for (auto& t : threads) t.join();
  }

  // Perturbed evaluation prompts reuse test graphs, so they count as test.
  std::map<std::string, std::set<std::string>> owners;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (reasons[i].empty()) {
      ++rep.verified;
    } else if (rep.failures.size() < 50) {
      rep.failures.push_back(items[i].split + ":" + std::to_string(items[i].index) + ": " + reasons[i]);
    }
    if (!keys[i].empty()) owners[keys[i]].insert(items[i].split == "eval_perturbed" ? "test" : items[i].split);
  }
  for (const auto& [k, splits] : owners) rep.collisions += splits.size() > 1;
  return rep;
}

}  // namespace isflab
