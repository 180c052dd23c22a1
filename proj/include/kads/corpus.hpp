#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "kads/rng.hpp"

namespace kads {

// An agent action: a b-slot ("button") plus ordered slot values.
struct Action {
  std::string bslot;
  std::vector<std::string> values;

  bool operator==(const Action&) const = default;
};

enum class Speaker { Agent, Customer, ActionTurn };

struct Turn {
  Speaker speaker = Speaker::Agent;
  std::string text;  // Agent/Customer only
  Action action;     // ActionTurn only

  static Turn agent(std::string text) { return {Speaker::Agent, std::move(text), {}}; }
  static Turn customer(std::string text) { return {Speaker::Customer, std::move(text), {}}; }
  static Turn act(Action a) { return {Speaker::ActionTurn, {}, std::move(a)}; }

  bool operator==(const Turn&) const = default;
};

struct IntentLabel {
  std::size_t turn_index = 0;
  std::string document_id;

  bool operator==(const IntentLabel&) const = default;
};

struct Dialogue {
  std::string id;
  std::vector<Turn> turns;
  std::vector<IntentLabel> intent_labels;

  std::vector<Action> actions() const;
  std::set<std::string> bslot_set() const;
  std::size_t action_count() const;

  bool operator==(const Dialogue&) const = default;
};

struct Document {
  std::string id;
  std::string intent_text;
  std::vector<std::string> bslots;
  std::vector<std::string> required_values;
  std::vector<std::string> optional_values;
  std::vector<std::string> result_values;

  bool operator==(const Document&) const = default;
};

// Ordered, id-unique document collection. The order defines the softmax
// index order used by the retriever.
class KnowledgeBase {
 public:
  KnowledgeBase() = default;
  explicit KnowledgeBase(std::vector<Document> docs);  // throws IntegrityError on duplicate ids

  const std::vector<Document>& documents() const { return docs_; }
  std::size_t size() const { return docs_.size(); }
  bool empty() const { return docs_.empty(); }
  const Document& operator[](std::size_t i) const { return docs_[i]; }
  std::optional<std::size_t> index_of(std::string_view id) const;
  const Document& by_id(std::string_view id) const;  // throws BoundsError

 private:
  std::vector<Document> docs_;
  std::map<std::string, std::size_t, std::less<>> index_;
};

struct CorpusSplit {
  std::vector<Dialogue> train, dev, test;
  std::set<std::string> held_out_bslots;
};

enum class CorpusSchema { Abcd, Sgd, Synthetic };
enum class Task { AST, WD };
// Colon: "b: v1, v2" (ABCD and synthetic). Space: "b v" per value (SGD).
enum class ActionStyle { Colon, Space };
enum class DocStyle { Abcd, Sgd };

struct Corpus {
  std::string dataset;
  CorpusSplit split;
  KnowledgeBase kb;
};

CorpusSchema parse_schema(std::string_view name);
std::string_view schema_name(CorpusSchema schema);
ActionStyle action_style_for(std::string_view dataset);
DocStyle doc_style_for(std::string_view dataset);

// --- ingestion -------------------------------------------------------------

Corpus load_corpus(const std::filesystem::path& path, CorpusSchema schema);
Corpus parse_corpus(std::string_view json_text, CorpusSchema schema);
std::string corpus_to_json(const Corpus& corpus);
void save_corpus(const Corpus& corpus, const std::filesystem::path& path);
std::uint64_t corpus_hash(const Corpus& corpus);

// Lowercases and collapses whitespace; punctuation stays attached.
std::string normalize_text(std::string_view text);

// --- rendering ---------------------------------------------------------------

std::string render_action_target(const std::vector<Action>& actions, ActionStyle style);
std::string render_document(const Document& doc);
std::string serialize_context(const Dialogue& d, std::ptrdiff_t upto_turn, Task task,
                              ActionStyle style = ActionStyle::Colon);

// Inverse of render_action_target. Returns nullopt for malformed text; the
// empty string parses to an empty list.
std::optional<std::vector<Action>> parse_action_target(std::string_view text,
                                                       ActionStyle style = ActionStyle::Colon);

// --- example construction ----------------------------------------------------

struct TextExample {
  std::string input;
  std::string target;
  std::string dialogue_id;
  std::size_t turn_index = 0;
};

std::vector<TextExample> make_ast_examples(const Dialogue& d, ActionStyle style = ActionStyle::Colon);
TextExample make_wd_example(const Dialogue& d, ActionStyle style = ActionStyle::Colon);
TextExample mask_actions(const Dialogue& d, double mask_rate, Rng& rng,
                         ActionStyle style = ActionStyle::Colon);

// --- splits and labels -------------------------------------------------------

struct HoldoutResult {
  CorpusSplit split;
  std::size_t removed = 0;
  bool train_emptied = false;  // degenerate case: every train dialogue removed
};

HoldoutResult holdout_split(const CorpusSplit& split, double fraction, std::uint64_t seed);

// Document maximizing b-slot overlap with the dialogue's actions (lowest index
// wins ties). An explicit intent label takes precedence.
std::string overlap_label(const Dialogue& d, const KnowledgeBase& kb);

// Intent label in force at the given turn (last label with turn_index <= turn).
std::optional<std::string> intent_at(const Dialogue& d, std::size_t turn);

// --- synthetic corpus --------------------------------------------------------

Corpus synth_corpus(std::size_t n_docs, std::size_t n_dialogues, std::size_t bslot_vocab_size,
                    std::uint64_t seed);

}  // namespace kads
