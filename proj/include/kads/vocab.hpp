#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "kads/corpus.hpp"

namespace kads {

// Whitespace tokenization. A trailing ';', ',' or ':' is split off as its own
// token so action targets decompose into b-slot words and delimiters; other
// punctuation stays attached ("hello!", "name@mail.com").
std::vector<std::string> tokenize(std::string_view text);
// Inverse of tokenize on normalized text: delimiters re-attach to the
// preceding word.
std::string detokenize(std::span<const std::string> tokens);

class Vocab {
 public:
  enum Special : int { kPad = 0, kBos, kEos, kMask, kSep, kAgent, kCustomer, kAction, kDoc, kUnk };
  static constexpr int kNumSpecial = 10;

  Vocab();  // specials only
  explicit Vocab(std::vector<std::string> tokens);  // first kNumSpecial must be the specials in order

  // Word-level vocabulary over every train-split serialization and target,
  // plus every document rendering so b-slots absent from training targets
  // remain producible.
  static Vocab build(const CorpusSplit& split, const KnowledgeBase& kb, ActionStyle style);

  std::size_t size() const { return tokens_.size(); }
  int id(std::string_view token) const;  // kUnk when absent
  bool contains(std::string_view token) const;
  const std::string& token(int id) const;  // throws VocabError when out of range
  int add(const std::string& token);

  std::vector<int> encode(std::string_view text) const;
  // Skips [PAD], [BOS] and [EOS].
  std::string decode(std::span<const int> ids) const;

  std::uint64_t hash() const;
  nlohmann::json to_json() const;
  static Vocab from_json(const nlohmann::json& j);

  const std::vector<std::string>& tokens() const { return tokens_; }
  bool operator==(const Vocab& o) const { return tokens_ == o.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

}  // namespace kads
