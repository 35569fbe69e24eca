#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "isflab/graph.hpp"
#include "isflab/oracle.hpp"
#include "isflab/pattern.hpp"
#include "isflab/vocab.hpp"
#include "json.hpp"

namespace isflab {

using TokenSeq = std::vector<int>;

// "0 : 1 2 , 1 : 2 , 2 :". Empty blocks are kept so n survives decoding.
TokenSeq encode_al(const Graph& g, const Vocab& vocab);
Graph decode_al(std::span<const int> tokens, const Vocab& vocab);

// "0 1 | 0 2 | 1 2". Needs at least one edge.
TokenSeq encode_el(const Graph& g, const Vocab& vocab);
Graph decode_el(std::span<const int> tokens, int n, const Vocab& vocab);

// "0 C : 1 O , 1 O :". Every vertex occurrence carries its feature token.
TokenSeq encode_al_f(const Graph& g, const Vocab& vocab);
Graph decode_al_f(std::span<const int> tokens, const Vocab& vocab);

enum class Representation { AL, EL, AL_f };
std::string_view to_string(Representation r);
Representation representation_from_string(std::string_view s);
TokenSeq encode_graph(const Graph& g, Representation r, const Vocab& vocab);

enum class PromptMode { Term, Topo };

// Topo prompts use letter names from pattern.topo_names()[naming] (identity
// naming when the pattern has none), blocks in pattern-vertex order, blocks
// without out-neighbours omitted.
TokenSeq encode_prompt(const Pattern& p, PromptMode mode, const Vocab& vocab, int naming = 0);
int topo_naming_count(const Pattern& p);

enum class PerturbKind {
  StructureOnly,  // ": , :" keeps only separators
  Pad,            // every vertex letter becomes "p"
  Token,          // whole prompt replaced by one token
};
TokenSeq perturb_prompt(std::span<const int> topo, PerturbKind kind, const Vocab& vocab, std::string_view token = {});

// Tuples sorted lexicographically, ids in pattern-vertex order, joined by ",".
TokenSeq encode_answer(const MatchSet& ms, const Vocab& vocab);
MatchSet decode_answer(std::span<const int> tokens, const Vocab& vocab);

// <S1> P1 <S2> P2 ... <St> Pt <ANS> final. Exceeding max_len raises LengthError.
TokenSeq encode_answer_tins(std::span<const MatchSet> parts, const MatchSet& final, const Vocab& vocab,
                            std::optional<std::size_t> max_len = std::nullopt);
struct TinsAnswer {
  std::vector<MatchSet> parts;
  MatchSet final;
};
TinsAnswer decode_answer_tins(std::span<const int> tokens, const Vocab& vocab);
// Tokens after the last <ANS>; nullopt when the marker is missing.
std::optional<std::span<const int>> final_answer_region(std::span<const int> tokens, const Vocab& vocab);

struct Sample {
  TokenSeq graph_tokens;
  TokenSeq prompt_tokens;
  TokenSeq answer_tokens;
  nlohmann::json meta = nlohmann::json::object();

  friend bool operator==(const Sample&, const Sample&) = default;
};

// <s> G <q> P <a> A </s>; mask is 1 exactly on A and the closing </s>.
struct TrainingSequence {
  TokenSeq tokens;
  std::vector<std::uint8_t> loss_mask;
};
TrainingSequence assemble(const Sample& s, std::optional<std::size_t> pad_to = std::nullopt);
// Everything up to and including <a>, the generation prompt.
TokenSeq generation_prefix(const Sample& s);
std::size_t sequence_length(const Sample& s);

// {"graph": [...], "prompt": [...], "answer": [...], "meta": {...}}
nlohmann::json sample_to_json(const Sample& s);
Sample sample_from_json(const nlohmann::json& j);

}  // namespace isflab
