#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "kads/corpus.hpp"
#include "kads/error.hpp"
#include "kads/log.hpp"

namespace kads {
namespace {

using nlohmann::json;

[[noreturn]] void fail(const std::string& where, const std::string& field, const std::string& what) {
  throw ParseError(where + ": field '" + field + "' " + what);
}

std::string get_string(const json& obj, const std::string& key, const std::string& where) {
  auto it = obj.find(key);
  if (it == obj.end()) fail(where, key, "is missing");
  if (!it->is_string()) fail(where, key, "must be a string");
  return it->get<std::string>();
}

std::vector<std::string> get_string_list(const json& obj, const std::string& key, const std::string& where,
                                         bool required) {
  std::vector<std::string> out;
  auto it = obj.find(key);
  if (it == obj.end() || it->is_null()) {
    if (required) fail(where, key, "is missing");
    return out;
  }
  if (!it->is_array()) fail(where, key, "must be an array of strings");
  for (const auto& v : *it) {
    if (!v.is_string()) fail(where, key, "must be an array of strings");
    std::string s = normalize_text(v.get<std::string>());
    if (s.empty()) fail(where, key, "contains an empty string");
    out.push_back(std::move(s));
  }
  return out;
}

Document parse_document(const json& j, std::size_t index) {
  const std::string where = "document #" + std::to_string(index);
  if (!j.is_object()) throw ParseError(where + ": expected an object");
  Document doc;
  doc.id = get_string(j, "id", where);
  const std::string named = "document '" + doc.id + "'";
  if (doc.id.empty()) fail(where, "id", "is empty");
  doc.intent_text = normalize_text(get_string(j, "intent_text", named));
  doc.bslots = get_string_list(j, "bslots", named, false);
  doc.required_values = get_string_list(j, "required_values", named, false);
  doc.optional_values = get_string_list(j, "optional_values", named, false);
  doc.result_values = get_string_list(j, "result_values", named, false);
  if (doc.bslots.empty() && doc.result_values.empty())
    fail(named, "bslots", "and result_values are both empty");
  return doc;
}

Turn parse_turn(const json& j, const std::string& where) {
  if (!j.is_object()) throw ParseError(where + ": expected an object");
  const std::string speaker = get_string(j, "speaker", where);
  if (speaker == "agent" || speaker == "customer") {
    std::string text = normalize_text(get_string(j, "text", where));
    return speaker == "agent" ? Turn::agent(std::move(text)) : Turn::customer(std::move(text));
  }
  if (speaker == "action") {
    Action a;
    a.bslot = normalize_text(get_string(j, "bslot", where));
    if (a.bslot.empty()) fail(where, "bslot", "is empty");
    a.values = get_string_list(j, "values", where, false);
    return Turn::act(std::move(a));
  }
  fail(where, "speaker", "must be one of agent/customer/action, got '" + speaker + "'");
}

json turn_to_json(const Turn& t) {
  switch (t.speaker) {
    case Speaker::Agent: return {{"speaker", "agent"}, {"text", t.text}};
    case Speaker::Customer: return {{"speaker", "customer"}, {"text", t.text}};
    case Speaker::ActionTurn:
      return {{"speaker", "action"}, {"bslot", t.action.bslot}, {"values", t.action.values}};
  }
  return {};
}

}  // namespace

Corpus parse_corpus(std::string_view json_text, CorpusSchema schema) {
  json root;
  try {
    root = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("corpus is not valid JSON: ") + e.what());
  }
  if (!root.is_object()) throw ParseError("corpus root must be an object");

  Corpus corpus;
  corpus.dataset = std::string(schema_name(schema));
  if (auto it = root.find("dataset"); it != root.end() && it->is_string() && it->get<std::string>() != corpus.dataset)
    log::warn("corpus declares dataset '" + it->get<std::string>() + "' but is loaded with schema '" + corpus.dataset + "'");

  auto docs_it = root.find("documents");
  if (docs_it == root.end() || !docs_it->is_array()) throw ParseError("corpus: field 'documents' must be an array");
  std::vector<Document> docs;
  for (std::size_t i = 0; i < docs_it->size(); ++i) docs.push_back(parse_document((*docs_it)[i], i));
  corpus.kb = KnowledgeBase(std::move(docs));

  auto dlg_it = root.find("dialogues");
  if (dlg_it == root.end() || !dlg_it->is_array()) throw ParseError("corpus: field 'dialogues' must be an array");
  std::set<std::string> seen;
  for (std::size_t i = 0; i < dlg_it->size(); ++i) {
    const json& j = (*dlg_it)[i];
    std::string where = "dialogue #" + std::to_string(i);
    if (!j.is_object()) throw ParseError(where + ": expected an object");
    Dialogue d;
    d.id = get_string(j, "id", where);
    where = "dialogue '" + d.id + "'";
    if (!seen.insert(d.id).second) throw IntegrityError("duplicate dialogue id '" + d.id + "'");
    const std::string split = get_string(j, "split", where);
    auto turns = j.find("turns");
    if (turns == j.end() || !turns->is_array() || turns->empty()) fail(where, "turns", "must be a non-empty array");
    for (std::size_t t = 0; t < turns->size(); ++t)
      d.turns.push_back(parse_turn((*turns)[t], where + " turn " + std::to_string(t)));

    if (auto labels = j.find("intent_labels"); labels != j.end() && !labels->is_null()) {
      if (!labels->is_array()) fail(where, "intent_labels", "must be an array");
      for (const auto& l : *labels) {
        if (!l.is_object() || !l.contains("turn_index") || !l["turn_index"].is_number_integer())
          fail(where, "intent_labels", "entries need an integer turn_index");
        const auto idx = l["turn_index"].get<long long>();
        if (idx < 0 || static_cast<std::size_t>(idx) >= d.turns.size())
          fail(where, "intent_labels", "turn_index " + std::to_string(idx) + " out of range");
        if (!d.intent_labels.empty() && static_cast<std::size_t>(idx) <= d.intent_labels.back().turn_index)
          fail(where, "intent_labels", "turn indices must be strictly increasing");
        std::string doc_id = get_string(l, "document_id", where + " intent_labels");
        if (!corpus.kb.index_of(doc_id))
          throw IntegrityError(where + ": intent label references unknown document '" + doc_id + "'");
        d.intent_labels.push_back({static_cast<std::size_t>(idx), std::move(doc_id)});
      }
    }

    if (split == "train")
      corpus.split.train.push_back(std::move(d));
    else if (split == "dev")
      corpus.split.dev.push_back(std::move(d));
    else if (split == "test")
      corpus.split.test.push_back(std::move(d));
    else
      fail(where, "split", "must be train/dev/test, got '" + split + "'");
  }
  return corpus;
}

Corpus load_corpus(const std::filesystem::path& path, CorpusSchema schema) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open corpus file '" + path.string() + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  Corpus c = parse_corpus(buf.str(), schema);
  log::info("loaded corpus '" + path.string() + "': train/dev/test = " + std::to_string(c.split.train.size()) + "/" +
            std::to_string(c.split.dev.size()) + "/" + std::to_string(c.split.test.size()) + ", " +
            std::to_string(c.kb.size()) + " documents");
  return c;
}

std::string corpus_to_json(const Corpus& corpus) {
  json root;
  root["dataset"] = corpus.dataset;
  json docs = json::array();
  for (const auto& d : corpus.kb.documents()) {
    docs.push_back({{"id", d.id},
                    {"intent_text", d.intent_text},
                    {"bslots", d.bslots},
                    {"required_values", d.required_values},
                    {"optional_values", d.optional_values},
                    {"result_values", d.result_values}});
  }
  root["documents"] = std::move(docs);
  json dialogues = json::array();
  auto emit = [&dialogues](const std::vector<Dialogue>& part, const char* split) {
    for (const auto& d : part) {
      json jd{{"id", d.id}, {"split", split}};
      json turns = json::array();
      for (const auto& t : d.turns) turns.push_back(turn_to_json(t));
      jd["turns"] = std::move(turns);
      if (!d.intent_labels.empty()) {
        json labels = json::array();
        for (const auto& l : d.intent_labels) labels.push_back({{"turn_index", l.turn_index}, {"document_id", l.document_id}});
        jd["intent_labels"] = std::move(labels);
      }
      dialogues.push_back(std::move(jd));
    }
  };
  emit(corpus.split.train, "train");
  emit(corpus.split.dev, "dev");
  emit(corpus.split.test, "test");
  root["dialogues"] = std::move(dialogues);
  return root.dump();
}

void save_corpus(const Corpus& corpus, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write corpus file '" + path.string() + "'");
  out << corpus_to_json(corpus) << '\n';
}

std::uint64_t corpus_hash(const Corpus& corpus) { return fnv1a(corpus_to_json(corpus)); }

}  // namespace kads
