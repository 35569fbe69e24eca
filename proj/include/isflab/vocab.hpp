#pragma once

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "json.hpp"

namespace isflab {

struct VocabConfig {
  int max_nodes = 16;
  std::vector<std::string> terms;     // one terminology token per named pattern
  std::vector<std::string> features;  // atom symbols; duplicates of existing tokens are shared

  friend bool operator==(const VocabConfig&, const VocabConfig&) = default;
};

inline constexpr int kPatternLetters = 8;  // A..H
inline constexpr int kMaxTinsParts = 8;    // <S1>..<S8>

// Token order: reserved, node ids 0..max_nodes-1, letters A..H, terms,
// features. Ids depend only on the config.
class Vocab {
 public:
  static constexpr int kPad = 0;
  static constexpr int kBos = 1;
  static constexpr int kQuery = 2;
  static constexpr int kAnswer = 3;
  static constexpr int kEos = 4;
  static constexpr int kColon = 5;
  static constexpr int kComma = 6;
  static constexpr int kBar = 7;
  static constexpr int kAns = 8;
  static constexpr int kPart1 = 9;
  static constexpr int kReserved = kPart1 + kMaxTinsParts;

  explicit Vocab(VocabConfig cfg = {});

  int size() const noexcept { return static_cast<int>(tokens_.size()); }
  const VocabConfig& config() const noexcept { return cfg_; }
  int max_nodes() const noexcept { return cfg_.max_nodes; }

  std::optional<int> find(std::string_view token) const;
  int id(std::string_view token) const;  // ValidationError on unknown token
  const std::string& token(int id) const;

  int part(int j) const;  // <Sj>, 1-based
  std::optional<int> part_index(int id) const;
  int node(int v) const;  // ValidationError when v >= max_nodes
  std::optional<int> node_value(int id) const;
  int letter(int i) const;
  std::optional<int> letter_value(int id) const;

  std::string render(std::span<const int> ids) const;  // space separated
  std::vector<int> parse(std::string_view text) const;

  // {"tokens": [...], "reserved": {...}, "config": {...}}
  nlohmann::json to_json() const;
  static Vocab from_json(const nlohmann::json& j);
  // FNV-1a over the token list, hex encoded.
  std::string hash() const;

  friend bool operator==(const Vocab& a, const Vocab& b) { return a.tokens_ == b.tokens_; }

 private:
  VocabConfig cfg_;
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
  int first_node_ = 0;
  int first_letter_ = 0;
};

}  // namespace isflab
