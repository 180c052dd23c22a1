#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include <json.hpp>

#include "kads/corpus.hpp"
#include "kads/error.hpp"

using namespace kads;

namespace {

std::string fixture(const std::string& name) {
  std::ifstream in(std::string(KADS_FIXTURE_DIR) + "/" + name, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

Corpus worked_abcd() { return load_corpus(std::string(KADS_FIXTURE_DIR) + "/worked_abcd.json", CorpusSchema::Abcd); }
Corpus worked_sgd() { return load_corpus(std::string(KADS_FIXTURE_DIR) + "/worked_sgd.json", CorpusSchema::Sgd); }

Dialogue with_actions(const std::vector<std::string>& bslots) {
  Dialogue d;
  d.id = "d";
  d.turns.push_back(Turn::customer("hello"));
  for (const auto& b : bslots) {
    d.turns.push_back(Turn::agent("one moment"));
    d.turns.push_back(Turn::act({b, {}}));
  }
  return d;
}

// Writes a corpus with the requested split sizes (tiny dialogues) to a temp file.
std::filesystem::path shaped_corpus(const std::string& dataset, std::size_t train, std::size_t dev, std::size_t test) {
  nlohmann::json root;
  root["dataset"] = dataset;
  root["documents"] = nlohmann::json::array(
      {{{"id", "d0"}, {"intent_text", "x"}, {"bslots", {"a"}}, {"required_values", nlohmann::json::array()},
        {"optional_values", nlohmann::json::array()}, {"result_values", {"r"}}}});
  auto& dialogues = root["dialogues"] = nlohmann::json::array();
  std::size_t id = 0;
  for (auto [split, n] : {std::pair<const char*, std::size_t>{"train", train}, {"dev", dev}, {"test", test}}) {
    for (std::size_t i = 0; i < n; ++i) {
      dialogues.push_back({{"id", "x" + std::to_string(id++)},
                           {"split", split},
                           {"turns", {{{"speaker", "customer"}, {"text", "hi"}}, {{"speaker", "action"}, {"bslot", "a"}}}}});
    }
  }
  auto path = std::filesystem::temp_directory_path() / ("kads_shaped_" + dataset + ".json");
  std::ofstream(path) << root.dump();
  return path;
}

}  // namespace

TEST_CASE("golden worked-example renderings are byte-exact") {
  const Corpus abcd = worked_abcd();
  const Dialogue& d = abcd.split.test.at(0);

  const auto examples = make_ast_examples(d);
  REQUIRE(examples.size() == 2);
  CHECK(examples.back().input == fixture("golden/abcd_ast_input.txt"));
  CHECK(examples.back().target == fixture("golden/abcd_ast_output.txt"));
  CHECK(render_document(abcd.kb.by_id("shirt-info")) == fixture("golden/abcd_document.txt"));

  const std::string full = serialize_context(d, 8, Task::AST);
  CHECK(full.rfind("[agent] hello! how can i help you today? [customer] i'm thinking about buying an item", 0) == 0);
  CHECK(full.ends_with("[action] search faq"));

  const Corpus sgd = worked_sgd();
  const Dialogue& s = sgd.split.test.at(0);
  const auto sgd_ex = make_ast_examples(s, ActionStyle::Space);
  REQUIRE(sgd_ex.size() == 1);
  CHECK(sgd_ex[0].input == fixture("golden/sgd_ast_input.txt"));
  CHECK(sgd_ex[0].target == fixture("golden/sgd_ast_output.txt"));
  CHECK(make_wd_example(s, ActionStyle::Space).target == "offer temperature; offer precipitation");
  CHECK(render_document(sgd.kb[0]) == fixture("golden/sgd_document.txt"));
}

TEST_CASE("render_action_target styles") {
  CHECK(render_action_target({{"search shirt", {}}}, ActionStyle::Colon) == "search shirt");
  CHECK(render_action_target({{"offer", {"temperature"}}, {"offer", {"precipitation"}}}, ActionStyle::Space) ==
        "offer temperature; offer precipitation");
  CHECK(render_action_target({{"pull up account", {"johndoe@gmail.com"}}}, ActionStyle::Colon) ==
        "pull up account: johndoe@gmail.com");
  CHECK(render_action_target({{"b", {"v1", "v2"}}}, ActionStyle::Colon) == "b: v1, v2");
  CHECK(render_action_target({}, ActionStyle::Colon).empty());
}

TEST_CASE("render_document single b-slot") {
  Document doc{"x", "intent", {"reset"}, {}, {}, {}};
  CHECK(render_document(doc) == "intent [SEP] reset");
}

TEST_CASE("serialize_context basics") {
  Dialogue d;
  d.id = "one";
  d.turns.push_back(Turn::customer("hi"));
  CHECK(serialize_context(d, 0, Task::AST) == "[customer] hi");
  CHECK_THROWS_AS(serialize_context(d, 1, Task::AST), BoundsError);
  CHECK_THROWS_AS(serialize_context(d, -1, Task::AST), BoundsError);

  d.turns.push_back(Turn::act({"search faq", {}}));
  d.turns.push_back(Turn::agent("done"));
  CHECK(serialize_context(d, 2, Task::WD) == "[customer] hi [agent] done");
  CHECK(serialize_context(d, 2, Task::AST) == "[customer] hi [action] search faq [agent] done");
}

TEST_CASE("serialize_context is prefix-stable in AST mode") {
  const Corpus c = synth_corpus(5, 20, 12, 3);
  for (const auto& d : c.split.train) {
    for (std::size_t t = 0; t + 1 < d.turns.size(); ++t) {
      const auto a = serialize_context(d, static_cast<std::ptrdiff_t>(t), Task::AST);
      const auto b = serialize_context(d, static_cast<std::ptrdiff_t>(t) + 1, Task::AST);
      REQUIRE(b.rfind(a, 0) == 0);
    }
  }
}

TEST_CASE("action target parse round trip (property)") {
  Rng rng(11);
  const std::vector<std::string> words = {"search", "faq", "pull", "up", "account", "verify", "x1", "j@m.com"};
  for (int trial = 0; trial < 500; ++trial) {
    std::vector<Action> actions(rng.below(5));
    for (auto& a : actions) {
      const auto n_words = 1 + rng.below(3);
      for (std::size_t i = 0; i < n_words; ++i) a.bslot += (i ? " " : "") + words[rng.below(words.size())];
      a.values.resize(rng.below(3));
      for (auto& v : a.values) v = words[rng.below(words.size())];
    }
    const auto text = render_action_target(actions, ActionStyle::Colon);
    const auto parsed = parse_action_target(text, ActionStyle::Colon);
    REQUIRE(parsed.has_value());
    REQUIRE(*parsed == actions);
  }
}

TEST_CASE("parse_action_target rejects malformed text without throwing") {
  CHECK_FALSE(parse_action_target("a;;b").has_value());
  CHECK_FALSE(parse_action_target("a: ").has_value());
  CHECK_FALSE(parse_action_target(": v").has_value());
  CHECK_FALSE(parse_action_target("a: v,").has_value());
  CHECK(parse_action_target("").value().empty());
  const auto sp = parse_action_target("offer temperature; inform", ActionStyle::Space);
  REQUIRE(sp.has_value());
  CHECK(sp->at(0) == Action{"offer", {"temperature"}});
  CHECK(sp->at(1) == Action{"inform", {}});
}

TEST_CASE("make_ast_examples boundaries") {
  Dialogue d;
  d.id = "first-action";
  d.turns.push_back(Turn::act({"pull up account", {"johndoe@gmail.com"}}));
  d.turns.push_back(Turn::customer("thanks"));
  const auto ex = make_ast_examples(d);
  REQUIRE(ex.size() == 1);
  CHECK(ex[0].input.empty());
  CHECK(ex[0].target == "pull up account: johndoe@gmail.com");

  CHECK(make_ast_examples(with_actions({"a", "b", "c", "d"})).size() == 4);
  CHECK(make_ast_examples(with_actions({})).empty());
}

TEST_CASE("make_wd_example") {
  const auto ex = make_wd_example(with_actions({"a", "b", "c"}));
  CHECK(ex.target == "a; b; c");
  CHECK(ex.input.find("[action]") == std::string::npos);
  CHECK(make_wd_example(with_actions({})).target.empty());
}

TEST_CASE("mask_actions") {
  Rng rng(5);
  SUBCASE("forced masking") {
    const auto ex = mask_actions(with_actions({"a", "b"}), 1.0, rng);
    CHECK(ex.target == "a; b");
    std::size_t n = 0;
    for (auto pos = ex.input.find("[MASK]"); pos != std::string::npos; pos = ex.input.find("[MASK]", pos + 1)) ++n;
    CHECK(n == 2);
  }
  SUBCASE("worked abcd dialogue") {
    const Corpus abcd = worked_abcd();
    const auto ex = mask_actions(abcd.split.test[0], 1.0, rng);
    CHECK(ex.input.find("[action] search faq") == std::string::npos);
    CHECK(ex.input.find("[customer] ok [action] [MASK]") != std::string::npos);
    CHECK(ex.target == "search faq; search shirt");
  }
  SUBCASE("rate 0.5 over 1000 action turns") {
    std::vector<std::string> bs(1000, "act");
    const auto ex = mask_actions(with_actions(bs), 0.5, rng);
    const auto parsed = parse_action_target(ex.target).value();
    const double frac = static_cast<double>(parsed.size()) / 1000.0;
    CHECK(frac >= 0.45);
    CHECK(frac <= 0.55);
  }
  SUBCASE("at least one mask even at a tiny rate") {
    for (int i = 0; i < 50; ++i) CHECK_FALSE(mask_actions(with_actions({"a", "b"}), 1e-3, rng).target.empty());
  }
  CHECK_THROWS_AS(mask_actions(with_actions({}), 0.5, rng), InputError);
  CHECK_THROWS_AS(mask_actions(with_actions({"a"}), 0.0, rng), ConfigError);
}

TEST_CASE("overlap_label") {
  const Corpus abcd = worked_abcd();
  const Dialogue d = with_actions({"search faq", "search shirt"});
  CHECK(overlap_label(d, abcd.kb) == "shirt-info");

  KnowledgeBase single({Document{"only", "x", {"zzz"}, {}, {}, {}}});
  CHECK(overlap_label(d, single) == "only");

  Dialogue labeled = d;
  labeled.intent_labels.push_back({0, "manage-account"});
  CHECK(overlap_label(labeled, abcd.kb) == "manage-account");

  CHECK_THROWS_AS(overlap_label(with_actions({}), abcd.kb), LabelError);

  SUBCASE("invariant to utterance text") {
    Dialogue other = d;
    for (auto& t : other.turns)
      if (t.speaker != Speaker::ActionTurn) t.text = "completely different words";
    CHECK(overlap_label(other, abcd.kb) == overlap_label(d, abcd.kb));
  }
  SUBCASE("ties go to the lowest index") {
    KnowledgeBase kb({Document{"first", "x", {"a", "q"}, {}, {}, {}}, Document{"second", "y", {"a", "r"}, {}, {}, {}}});
    CHECK(overlap_label(with_actions({"a"}), kb) == "first");
  }
}

TEST_CASE("holdout_split") {
  CorpusSplit split;
  for (int i = 0; i < 30; ++i) {
    auto d = with_actions({"b" + std::to_string(i)});
    d.id = "t" + std::to_string(i);
    split.train.push_back(d);
  }
  const auto res = holdout_split(split, 0.10, 4);
  CHECK(res.split.held_out_bslots.size() == 3);
  CHECK(res.split.train.size() == 27);
  for (const auto& d : res.split.train)
    for (const auto& b : d.bslot_set()) CHECK(res.split.held_out_bslots.count(b) == 0);
  CHECK(holdout_split(split, 0.10, 4).split.held_out_bslots == res.split.held_out_bslots);

  SUBCASE("every dialogue uses every b-slot") {
    CorpusSplit dense;
    std::vector<std::string> all;
    for (int i = 0; i < 10; ++i) all.push_back("b" + std::to_string(i));
    for (int i = 0; i < 5; ++i) dense.train.push_back(with_actions(all));
    const auto r = holdout_split(dense, 0.10, 1);
    CHECK(r.split.train.empty());
    CHECK(r.train_emptied);
  }
  SUBCASE("dev and test untouched") {
    CorpusSplit s = split;
    s.dev.push_back(with_actions({"b0", "b1"}));
    const auto r = holdout_split(s, 0.5, 9);
    CHECK(r.split.dev.size() == 1);
  }
  CorpusSplit tiny;
  tiny.train.push_back(with_actions({"only"}));
  CHECK_THROWS_AS(holdout_split(tiny, 0.1, 1), ConfigError);
  CHECK_THROWS_AS(holdout_split(split, 1.0, 1), ConfigError);
}

TEST_CASE("synth_corpus") {
  SUBCASE("two documents") {
    const Corpus c = synth_corpus(2, 2, 10, 7);
    CHECK(c.kb.size() == 2);
    std::size_t n = 0;
    for (const auto* part : {&c.split.train, &c.split.dev, &c.split.test})
      for (const auto& d : *part) {
        CHECK(overlap_label(d, c.kb) == d.intent_labels.at(0).document_id);
        ++n;
      }
    CHECK(n == 2);
  }
  SUBCASE("determinism") { CHECK(corpus_to_json(synth_corpus(20, 2000, 40, 1)) == corpus_to_json(synth_corpus(20, 2000, 40, 1))); }
  SUBCASE("long-tailed b-slot frequencies") {
    const Corpus c = synth_corpus(20, 2000, 40, 1);
    std::map<std::string, std::size_t> freq;
    for (const auto* part : {&c.split.train, &c.split.dev, &c.split.test})
      for (const auto& d : *part)
        for (const auto& a : d.actions()) ++freq[a.bslot];
    std::size_t lo = SIZE_MAX, hi = 0;
    for (const auto& [b, n] : freq) {
      lo = std::min(lo, n);
      hi = std::max(hi, n);
    }
    CHECK(static_cast<double>(hi) / static_cast<double>(lo) >= 5.0);
  }
  SUBCASE("brute-force overlap recovers the generating document") {
    const Corpus c = synth_corpus(20, 2000, 40, 1);
    std::size_t agree = 0, total = 0;
    for (const auto* part : {&c.split.train, &c.split.dev, &c.split.test})
      for (Dialogue d : *part) {
        const std::string truth = d.intent_labels.at(0).document_id;
        d.intent_labels.clear();
        // Independent brute force: count shared b-slots for every document.
        std::size_t best = 0, best_n = 0;
        for (std::size_t i = 0; i < c.kb.size(); ++i) {
          std::size_t n = 0;
          for (const auto& a : d.bslot_set())
            n += static_cast<std::size_t>(std::count(c.kb[i].bslots.begin(), c.kb[i].bslots.end(), a));
          if (n > best_n) best_n = n, best = i;
        }
        agree += c.kb[best].id == truth && overlap_label(d, c.kb) == truth;
        ++total;
      }
    CHECK(static_cast<double>(agree) / static_cast<double>(total) >= 0.99);
  }
  CHECK_THROWS_AS(synth_corpus(20, 100, 3, 1), ConfigError);
  CHECK_THROWS_AS(synth_corpus(1, 100, 40, 1), ConfigError);
}

TEST_CASE("load_corpus") {
  SUBCASE("ABCD-shaped split sizes") {
    const auto c = load_corpus(shaped_corpus("abcd", 8034, 1004, 1004), CorpusSchema::Abcd);
    CHECK(c.split.train.size() == 8034);
    CHECK(c.split.dev.size() == 1004);
    CHECK(c.split.test.size() == 1004);
  }
  SUBCASE("SGD-shaped split sizes") {
    const auto c = load_corpus(shaped_corpus("sgd", 16142, 2482, 4201), CorpusSchema::Sgd);
    CHECK(c.split.train.size() == 16142);
    CHECK(c.split.dev.size() == 2482);
    CHECK(c.split.test.size() == 4201);
  }
  SUBCASE("singleton") {
    const auto c = load_corpus(shaped_corpus("abcd", 0, 1, 0), CorpusSchema::Abcd);
    CHECK(c.split.dev.size() == 1);
    CHECK(c.kb.size() == 1);
  }
  SUBCASE("round trip is content-identical") {
    const std::string original = fixture("worked_abcd.json");
    const auto c = parse_corpus(original, CorpusSchema::Abcd);
    CHECK(nlohmann::json::parse(corpus_to_json(c)) == nlohmann::json::parse(original));
  }
  SUBCASE("errors") {
    const std::string bad_turn =
        R"({"dataset":"abcd","documents":[{"id":"a","intent_text":"x","bslots":["b"]}],
            "dialogues":[{"id":"dlg-7","split":"train","turns":[{"speaker":"action"}]}]})";
    try {
      parse_corpus(bad_turn, CorpusSchema::Abcd);
      FAIL("expected a parse error");
    } catch (const ParseError& e) {
      const std::string msg = e.what();
      CHECK(msg.find("dlg-7") != std::string::npos);
      CHECK(msg.find("bslot") != std::string::npos);
    }
    const std::string dup_doc =
        R"({"dataset":"abcd","documents":[{"id":"a","intent_text":"x","bslots":["b"]},{"id":"a","intent_text":"y","bslots":["c"]}],
            "dialogues":[]})";
    CHECK_THROWS_AS(parse_corpus(dup_doc, CorpusSchema::Abcd), IntegrityError);
    CHECK_THROWS_AS(parse_corpus("{not json", CorpusSchema::Abcd), ParseError);
    CHECK_THROWS_AS(load_corpus("/nonexistent/corpus.json", CorpusSchema::Abcd), ParseError);
  }
}
