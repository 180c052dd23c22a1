#include "kads/vocab.hpp"

#include <cctype>
#include <set>

#include "kads/error.hpp"

namespace kads {
namespace {

constexpr const char* kSpecials[Vocab::kNumSpecial] = {"[PAD]", "[BOS]",      "[EOS]",    "[MASK]", "[SEP]",
                                                       "[agent]", "[customer]", "[action]", "[DOC]",  "[UNK]"};

bool is_delimiter(std::string_view t) { return t == ";" || t == "," || t == ":"; }

}  // namespace

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    std::size_t j = i;
    while (j < text.size() && !std::isspace(static_cast<unsigned char>(text[j]))) ++j;
    if (j > i) {
      std::string_view word = text.substr(i, j - i);
      if (word.size() > 1 && is_delimiter(word.substr(word.size() - 1))) {
        out.emplace_back(word.substr(0, word.size() - 1));
        out.emplace_back(word.substr(word.size() - 1));
      } else {
        out.emplace_back(word);
      }
    }
    i = j;
  }
  return out;
}

std::string detokenize(std::span<const std::string> tokens) {
  std::string out;
  for (const auto& t : tokens) {
    if (!out.empty() && !is_delimiter(t)) out += ' ';
    out += t;
  }
  return out;
}

Vocab::Vocab() {
  for (const char* s : kSpecials) add(s);
}

Vocab::Vocab(std::vector<std::string> tokens) {
  if (tokens.size() < kNumSpecial) throw VocabError("vocabulary lacks the special tokens");
  for (int i = 0; i < kNumSpecial; ++i)
    if (tokens[i] != kSpecials[i])
      throw VocabError("vocabulary entry " + std::to_string(i) + " is '" + tokens[i] + "', expected '" + kSpecials[i] +
                       "'");
  for (auto& t : tokens)
    if (index_.count(t) == 0) {
      index_.emplace(t, static_cast<int>(tokens_.size()));
      tokens_.push_back(std::move(t));
    } else {
      throw VocabError("duplicate vocabulary entry '" + t + "'");
    }
}

Vocab Vocab::build(const CorpusSplit& split, const KnowledgeBase& kb, ActionStyle style) {
  std::set<std::string> words;
  auto take = [&words](std::string_view text) {
    for (auto& t : tokenize(text)) words.insert(std::move(t));
  };
  for (const auto& d : split.train) {
    if (d.turns.empty()) continue;
    take(serialize_context(d, static_cast<std::ptrdiff_t>(d.turns.size()) - 1, Task::AST, style));
    take(render_action_target(d.actions(), style));
  }
  for (const auto& doc : kb.documents()) take(render_document(doc));
  Vocab v;
  for (const auto& w : words)
    if (!v.contains(w)) v.add(w);
  return v;
}

int Vocab::id(std::string_view token) const {
  const auto it = index_.find(std::string(token));
  return it == index_.end() ? kUnk : it->second;
}

bool Vocab::contains(std::string_view token) const { return index_.count(std::string(token)) > 0; }

const std::string& Vocab::token(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size())
    throw VocabError("token id " + std::to_string(id) + " outside vocabulary of " + std::to_string(tokens_.size()));
  return tokens_[static_cast<std::size_t>(id)];
}

int Vocab::add(const std::string& token) {
  const auto it = index_.find(token);
  if (it != index_.end()) return it->second;
  const int id = static_cast<int>(tokens_.size());
  tokens_.push_back(token);
  index_.emplace(token, id);
  return id;
}

std::vector<int> Vocab::encode(std::string_view text) const {
  std::vector<int> ids;
  for (const auto& t : tokenize(text)) ids.push_back(id(t));
  return ids;
}

std::string Vocab::decode(std::span<const int> ids) const {
  std::vector<std::string> words;
  for (int i : ids) {
    if (i == kPad || i == kBos || i == kEos) continue;
    words.push_back(token(i));
  }
  return detokenize(words);
}

std::uint64_t Vocab::hash() const {
  std::uint64_t h = fnv1a("vocab");
  for (const auto& t : tokens_) {
    h = fnv1a(t, h);
    h = fnv1a(std::string_view("\0", 1), h);
  }
  return h;
}

nlohmann::json Vocab::to_json() const { return tokens_; }

Vocab Vocab::from_json(const nlohmann::json& j) {
  try {
    return Vocab(j.get<std::vector<std::string>>());
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("malformed vocabulary: ") + e.what());
  }
}

}  // namespace kads
