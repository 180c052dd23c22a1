#include "kads/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <sstream>

#include "kads/error.hpp"
#include "kads/log.hpp"

namespace kads {
namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> parts;
  std::size_t start = 0;
  for (std::size_t i = 0; i <= s.size(); ++i) {
    if (i == s.size() || s[i] == sep) {
      parts.push_back(s.substr(start, i - start));
      start = i + 1;
    }
  }
  return parts;
}

std::string join(const std::vector<std::string>& items, std::string_view sep) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (i) out += sep;
    out += items[i];
  }
  return out;
}

std::string render_one(const Action& a, ActionStyle style) {
  if (a.values.empty()) return a.bslot;
  if (style == ActionStyle::Colon) return a.bslot + ": " + join(a.values, ", ");
  std::vector<std::string> pairs;
  pairs.reserve(a.values.size());
  for (const auto& v : a.values) pairs.push_back(a.bslot + " " + v);
  return join(pairs, "; ");
}

void append_turn(std::string& out, std::string_view prefix, std::string_view body) {
  if (!out.empty()) out += ' ';
  out += prefix;
  if (!body.empty()) {
    out += ' ';
    out += body;
  }
}

}  // namespace

std::vector<Action> Dialogue::actions() const {
  std::vector<Action> out;
  for (const auto& t : turns)
    if (t.speaker == Speaker::ActionTurn) out.push_back(t.action);
  return out;
}

std::set<std::string> Dialogue::bslot_set() const {
  std::set<std::string> out;
  for (const auto& t : turns)
    if (t.speaker == Speaker::ActionTurn) out.insert(t.action.bslot);
  return out;
}

std::size_t Dialogue::action_count() const {
  return static_cast<std::size_t>(std::count_if(turns.begin(), turns.end(), [](const Turn& t) {
    return t.speaker == Speaker::ActionTurn;
  }));
}

KnowledgeBase::KnowledgeBase(std::vector<Document> docs) : docs_(std::move(docs)) {
  for (std::size_t i = 0; i < docs_.size(); ++i) {
    if (!index_.emplace(docs_[i].id, i).second)
      throw IntegrityError("duplicate document id '" + docs_[i].id + "'");
  }
}

std::optional<std::size_t> KnowledgeBase::index_of(std::string_view id) const {
  auto it = index_.find(id);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

const Document& KnowledgeBase::by_id(std::string_view id) const {
  auto idx = index_of(id);
  if (!idx) throw BoundsError("unknown document id '" + std::string(id) + "'");
  return docs_[*idx];
}

CorpusSchema parse_schema(std::string_view name) {
  if (name == "abcd") return CorpusSchema::Abcd;
  if (name == "sgd") return CorpusSchema::Sgd;
  if (name == "synthetic") return CorpusSchema::Synthetic;
  throw ConfigError("unknown corpus schema '" + std::string(name) + "'");
}

std::string_view schema_name(CorpusSchema schema) {
  switch (schema) {
    case CorpusSchema::Abcd: return "abcd";
    case CorpusSchema::Sgd: return "sgd";
    case CorpusSchema::Synthetic: return "synthetic";
  }
  return "synthetic";
}

ActionStyle action_style_for(std::string_view dataset) {
  return dataset == "sgd" ? ActionStyle::Space : ActionStyle::Colon;
}

DocStyle doc_style_for(std::string_view dataset) {
  return dataset == "sgd" ? DocStyle::Sgd : DocStyle::Abcd;
}

std::string normalize_text(std::string_view text) {
  std::string out;
  out.reserve(text.size());
  bool pending_space = false;
  for (char c : text) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) out += ' ';
    pending_space = false;
    out += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  }
  return out;
}

std::string render_action_target(const std::vector<Action>& actions, ActionStyle style) {
  std::vector<std::string> parts;
  parts.reserve(actions.size());
  for (const auto& a : actions) parts.push_back(render_one(a, style));
  return join(parts, "; ");
}

std::string render_document(const Document& doc) {
  std::string out = doc.intent_text + " [SEP]";
  if (!doc.bslots.empty()) {
    out += ' ';
    out += join(doc.bslots, "; ");
    return out;
  }
  auto section = [&out](std::string_view tag, const std::vector<std::string>& items) {
    if (items.empty()) return;
    out += ' ';
    out += tag;
    out += ' ';
    out += join(items, "; ");
  };
  section("[required]", doc.required_values);
  section("[optional]", doc.optional_values);
  section("[result]", doc.result_values);
  return out;
}

std::string serialize_context(const Dialogue& d, std::ptrdiff_t upto_turn, Task task,
                              ActionStyle style) {
  if (upto_turn < 0 || static_cast<std::size_t>(upto_turn) >= d.turns.size())
    throw BoundsError("serialize_context: turn " + std::to_string(upto_turn) + " out of range for dialogue '" +
                      d.id + "' with " + std::to_string(d.turns.size()) + " turns");
  std::string out;
  for (std::ptrdiff_t i = 0; i <= upto_turn; ++i) {
    const Turn& t = d.turns[static_cast<std::size_t>(i)];
    switch (t.speaker) {
      case Speaker::Agent: append_turn(out, "[agent]", t.text); break;
      case Speaker::Customer: append_turn(out, "[customer]", t.text); break;
      case Speaker::ActionTurn:
        if (task == Task::AST) append_turn(out, "[action]", render_one(t.action, style));
        break;
    }
  }
  return out;
}

std::optional<std::vector<Action>> parse_action_target(std::string_view text, ActionStyle style) {
  std::vector<Action> out;
  text = trim(text);
  if (text.empty()) return out;
  auto collapse = [](std::string_view s) {
    std::string r;
    std::istringstream in{std::string(s)};
    std::string w;
    while (in >> w) {
      if (!r.empty()) r += ' ';
      r += w;
    }
    return r;
  };
  for (std::string_view piece : split(text, ';')) {
    piece = trim(piece);
    if (piece.empty()) return std::nullopt;
    Action a;
    if (style == ActionStyle::Colon) {
      const auto colon = piece.find(':');
      if (colon == std::string_view::npos) {
        a.bslot = collapse(piece);
      } else {
        a.bslot = collapse(piece.substr(0, colon));
        std::string_view rest = trim(piece.substr(colon + 1));
        if (rest.empty()) return std::nullopt;
        for (std::string_view v : split(rest, ',')) {
          v = trim(v);
          if (v.empty()) return std::nullopt;
          a.values.emplace_back(collapse(v));
        }
      }
      if (a.bslot.find(',') != std::string::npos) return std::nullopt;
    } else {
      const auto space = piece.find(' ');
      a.bslot = std::string(piece.substr(0, space));
      if (space != std::string_view::npos) a.values.emplace_back(collapse(piece.substr(space + 1)));
    }
    if (a.bslot.empty()) return std::nullopt;
    out.push_back(std::move(a));
  }
  return out;
}

std::vector<TextExample> make_ast_examples(const Dialogue& d, ActionStyle style) {
  std::vector<TextExample> out;
  for (std::size_t i = 0; i < d.turns.size(); ++i) {
    if (d.turns[i].speaker != Speaker::ActionTurn) continue;
    TextExample ex;
    ex.input = i == 0 ? std::string() : serialize_context(d, static_cast<std::ptrdiff_t>(i) - 1, Task::AST, style);
    ex.target = render_action_target({d.turns[i].action}, style);
    ex.dialogue_id = d.id;
    ex.turn_index = i;
    out.push_back(std::move(ex));
  }
  return out;
}

TextExample make_wd_example(const Dialogue& d, ActionStyle style) {
  TextExample ex;
  ex.input = d.turns.empty() ? std::string()
                             : serialize_context(d, static_cast<std::ptrdiff_t>(d.turns.size()) - 1, Task::WD, style);
  ex.target = render_action_target(d.actions(), style);
  ex.dialogue_id = d.id;
  ex.turn_index = d.turns.empty() ? 0 : d.turns.size() - 1;
  return ex;
}

TextExample mask_actions(const Dialogue& d, double mask_rate, Rng& rng, ActionStyle style) {
  if (!(mask_rate > 0.0 && mask_rate <= 1.0))
    throw ConfigError("mask_rate must lie in (0, 1], got " + std::to_string(mask_rate));
  const std::size_t n_actions = d.action_count();
  if (n_actions == 0) throw InputError("mask_actions: dialogue '" + d.id + "' has no action turns");

  std::vector<bool> masked(n_actions, false);
  bool any = false;
  while (!any) {
    for (std::size_t i = 0; i < n_actions; ++i) {
      masked[i] = rng.bernoulli(mask_rate);
      any = any || masked[i];
    }
  }

  TextExample ex;
  ex.dialogue_id = d.id;
  std::vector<Action> targets;
  std::size_t action_idx = 0;
  for (const Turn& t : d.turns) {
    switch (t.speaker) {
      case Speaker::Agent: append_turn(ex.input, "[agent]", t.text); break;
      case Speaker::Customer: append_turn(ex.input, "[customer]", t.text); break;
      case Speaker::ActionTurn:
        if (masked[action_idx]) {
          append_turn(ex.input, "[action]", "[MASK]");
          targets.push_back(t.action);
        } else {
          append_turn(ex.input, "[action]", render_one(t.action, style));
        }
        ++action_idx;
        break;
    }
  }
  ex.target = render_action_target(targets, style);
  ex.turn_index = d.turns.size() - 1;
  return ex;
}

HoldoutResult holdout_split(const CorpusSplit& split, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction < 1.0))
    throw ConfigError("holdout fraction must lie in (0, 1), got " + std::to_string(fraction));
  std::set<std::string> all;
  for (const auto* part : {&split.train, &split.dev, &split.test})
    for (const auto& d : *part)
      for (const auto& b : d.bslot_set()) all.insert(b);
  if (all.size() < 2) throw ConfigError("holdout_split needs at least 2 distinct b-slots, found " + std::to_string(all.size()));

  std::vector<std::string> candidates(all.begin(), all.end());
  Rng rng(seed);
  rng.shuffle(std::span<std::string>(candidates));
  // Small epsilon so that e.g. 0.1 * 30 selects 3 rather than ceil(3.0000000000000004).
  const auto n_hold = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(candidates.size()) - 1e-9));

  HoldoutResult res;
  res.split.dev = split.dev;
  res.split.test = split.test;
  res.split.held_out_bslots.insert(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(n_hold));
  for (const auto& d : split.train) {
    const auto bs = d.bslot_set();
    const bool hit = std::any_of(bs.begin(), bs.end(), [&](const std::string& b) {
      return res.split.held_out_bslots.count(b) > 0;
    });
    if (hit)
      ++res.removed;
    else
      res.split.train.push_back(d);
  }
  res.train_emptied = res.split.train.empty() && !split.train.empty();
  if (res.train_emptied) log::warn("holdout_split: every train dialogue contains a held-out b-slot; train set is empty");
  return res;
}

std::optional<std::string> intent_at(const Dialogue& d, std::size_t turn) {
  std::optional<std::string> out;
  for (const auto& l : d.intent_labels) {
    if (l.turn_index <= turn) out = l.document_id;
  }
  return out;
}

std::string overlap_label(const Dialogue& d, const KnowledgeBase& kb) {
  if (kb.empty()) throw ConfigError("overlap_label: empty knowledge base");
  if (!d.intent_labels.empty()) return d.intent_labels.front().document_id;
  const auto actions = d.bslot_set();
  if (actions.empty()) throw LabelError("overlap_label: dialogue '" + d.id + "' has no actions and no intent label");
  std::size_t best = 0;
  std::size_t best_overlap = 0;
  for (std::size_t i = 0; i < kb.size(); ++i) {
    std::set<std::string> doc(kb[i].bslots.begin(), kb[i].bslots.end());
    std::size_t overlap = 0;
    for (const auto& b : actions) overlap += doc.count(b);
    if (overlap > best_overlap) {
      best_overlap = overlap;
      best = i;
    }
  }
  return kb[best].id;
}

}  // namespace kads
