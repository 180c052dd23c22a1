#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>

#include "kads/error.hpp"
#include "kads/grad_check.hpp"
#include "kads/layers.hpp"
#include "kads/model.hpp"
#include "kads/training.hpp"

using namespace kads;
using ag::Graph;
using ag::Var;

namespace {

Corpus worked_abcd() { return load_corpus(std::string(KADS_FIXTURE_DIR) + "/worked_abcd.json", CorpusSchema::Abcd); }

Vocab vocab_over(std::initializer_list<std::string_view> texts) {
  Vocab v;
  for (auto t : texts)
    for (const auto& tok : tokenize(t))
      if (!v.contains(tok)) v.add(tok);
  return v;
}

Tensor random_tensor(std::vector<std::size_t> shape, Rng& rng) {
  Tensor t(std::move(shape));
  for (double& x : t.data()) x = rng.normal();
  return t;
}

EncoderConfig tiny_encoder(std::size_t vocab) { return {1, 8, 2, 32, vocab}; }

GenConfig tiny_generator(std::size_t vocab) {
  GenConfig c;
  c.n_layers = 1;
  c.hidden_dim = 8;
  c.n_heads = 2;
  c.max_input_len = 48;
  c.max_target_len = 8;
  c.vocab_size = vocab;
  return c;
}

std::filesystem::path temp_path(const std::string& name) { return std::filesystem::temp_directory_path() / name; }

}  // namespace

// --- tokenizer and vocabulary ------------------------------------------------------

TEST_CASE("tokenize splits trailing delimiters only") {
  CHECK(tokenize("search faq; search shirt") == std::vector<std::string>{"search", "faq", ";", "search", "shirt"});
  CHECK(tokenize("pull up account: a@b.com, c@d.com") ==
        std::vector<std::string>{"pull", "up", "account", ":", "a@b.com", ",", "c@d.com"});
  CHECK(tokenize("hello! how are you?") == std::vector<std::string>{"hello!", "how", "are", "you?"});
  CHECK(tokenize("").empty());
  for (std::string s : {"search faq; search shirt", "pull up account: a@b.com, c@d.com", "offer temperature"}) {
    const auto toks = tokenize(s);
    CHECK(detokenize(toks) == s);
  }
}

TEST_CASE("vocab specials, encode/decode and serialization") {
  Vocab v;
  CHECK(v.size() == static_cast<std::size_t>(Vocab::kNumSpecial));
  CHECK(v.token(Vocab::kMask) == "[MASK]");
  CHECK(v.id("[SEP]") == Vocab::kSep);
  const auto h0 = v.hash();
  v.add("search");
  v.add("faq");
  CHECK(v.hash() != h0);
  CHECK(v.id("unseen") == Vocab::kUnk);
  CHECK_THROWS_AS(v.token(999), VocabError);
  const auto ids = v.encode("search faq");
  CHECK(v.decode(ids) == "search faq");
  std::vector<int> framed = {Vocab::kBos};
  framed.insert(framed.end(), ids.begin(), ids.end());
  framed.push_back(Vocab::kEos);
  CHECK(v.decode(framed) == "search faq");
  CHECK(Vocab::from_json(v.to_json()) == v);
}

TEST_CASE("vocab build covers document-only b-slots") {
  const Corpus c = synth_corpus(6, 120, 20, 3);
  const HoldoutResult held = holdout_split(c.split, 0.2, 5);
  REQUIRE(!held.split.held_out_bslots.empty());
  const Vocab v = Vocab::build(held.split, c.kb, ActionStyle::Colon);
  for (const auto& b : held.split.held_out_bslots)
    for (const auto& tok : tokenize(b)) CHECK(v.contains(tok));
}

// --- layers ------------------------------------------------------------------------

TEST_CASE("transformer blocks pass grad_check") {
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    Rng rng(seed);
    ParamStore store;
    nn::init_encoder_block(store, "enc", 8, rng);
    nn::init_decoder_block(store, "dec", 8, rng);
    const Tensor x = random_tensor({3, 8}, rng), y = random_tensor({2, 8}, rng), w = random_tensor({2, 8}, rng);
    auto loss = [&](Graph& g) {
      nn::Binder p{g, store};
      Var mem = nn::encoder_block(p, "enc", g.constant(x), 2);
      Var out = nn::decoder_block(p, "dec", g.constant(y), mem, 2);
      return ag::sum(ag::mul(out, g.constant(w)));
    };
    CHECK(grad_check(loss, store, 1e-5, seed, 200).max_rel_error < 1e-5);
  }
}

// --- retriever ---------------------------------------------------------------------

TEST_CASE("relevance is the inner product") {
  CHECK(relevance(Tensor::row({1, 0}), Tensor::row({0, 1})) == 0.0);
  CHECK(relevance(Tensor::row({1, 2}), Tensor::row({3, 4})) == 11.0);
  const Tensor v = Tensor::row({0.5, -2.0, 3.0});
  CHECK(relevance(v, v) == doctest::Approx(0.25 + 4.0 + 9.0));
}

TEST_CASE("retrieval distributions") {
  const Corpus c = synth_corpus(8, 40, 12, 1);
  const KnowledgeBase one({c.kb[0]});
  const std::vector<double> s1 = {3.7};
  CHECK(distribution_from_scores(s1, one).probs == std::vector<double>{1.0});

  const KnowledgeBase two({c.kb[0], c.kb[1]});
  const std::vector<double> s2 = {0.0, std::log(2.0)};
  const auto d2 = distribution_from_scores(s2, two);
  CHECK(d2.probs[0] == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
  CHECK(d2.probs[1] == doctest::Approx(2.0 / 3.0).epsilon(1e-12));

  Rng rng(9);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> scores(c.kb.size());
    for (double& x : scores) x = rng.normal() * 3.0;
    const auto full = distribution_from_scores(scores, c.kb);

    // Exhaustive sort oracle for the top-k selection.
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    for (std::size_t k = 1; k <= c.kb.size(); ++k) {
      const auto top = top_k_from_scores(scores, c.kb, k);
      CHECK(top.indices == std::vector<std::size_t>(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k)));
      double mass = 0.0;
      for (auto i : top.indices) mass += full.probs[i];
      for (std::size_t r = 0; r < k; ++r) CHECK(std::abs(top.probs[r] - full.probs[top.indices[r]] / mass) < 1e-9);
      if (k < c.kb.size()) {
        const auto next = top_k_indices(scores, k + 1);
        for (auto i : top.indices) CHECK(std::find(next.begin(), next.end(), i) != next.end());
      }
    }
    CHECK(top_k_from_scores(scores, c.kb, 1).probs == std::vector<double>{1.0});
    const auto all = top_k_from_scores(scores, c.kb, c.kb.size());
    for (std::size_t r = 0; r < all.indices.size(); ++r)
      CHECK(std::abs(all.probs[r] - full.probs[all.indices[r]]) < 1e-12);

    std::vector<double> shifted = scores;
    for (double& x : shifted) x += 123.25;
    const auto sh = distribution_from_scores(shifted, c.kb);
    for (std::size_t i = 0; i < scores.size(); ++i) CHECK(std::abs(sh.probs[i] - full.probs[i]) < 1e-9);
    CHECK(top_k_indices(shifted, 3) == top_k_indices(scores, 3));
  }
  const std::vector<double> s8(c.kb.size(), 0.0);
  CHECK_THROWS_AS(top_k_indices(s8, 0), ConfigError);
  CHECK_THROWS_AS(top_k_indices(s8, c.kb.size() + 1), ConfigError);
}

TEST_CASE("encoder towers") {
  const Vocab v = vocab_over({"[agent] hello there [customer] hi search faq"});
  const EncoderConfig cfg = tiny_encoder(v.size());
  ParamStore store;
  init_encoder(store, cfg, 4);
  const auto ids = v.encode("[agent] hello there [customer] hi");
  const Tensor a = embed_text(store, cfg, ids, Tower::Dialogue);
  CHECK(a == embed_text(store, cfg, ids, Tower::Dialogue));
  CHECK(a.rows() == 1);
  CHECK(a.cols() == 8);
  const std::vector<int> one = {v.id("hi")};
  for (double x : embed_text(store, cfg, one, Tower::Dialogue).data()) CHECK(std::isfinite(x));
  CHECK_THROWS_AS(embed_text(store, cfg, std::vector<int>{}, Tower::Dialogue), InputError);

  const std::vector<int> seq = {11, 12, 13, 14, 15};
  CHECK(truncate_for(seq, 3, Tower::Dialogue) == std::vector<int>{13, 14, 15});
  CHECK(truncate_for(seq, 3, Tower::Document) == std::vector<int>{11, 12, 13});

  auto loss = [&](Graph& g) {
    Var e = encode_text(g, store, cfg, ids, Tower::Dialogue);
    return ag::sum(ag::mul(e, e));
  };
  CHECK(grad_check(loss, store, 1e-5, 2, 200).max_rel_error < 1e-5);
}

TEST_CASE("retriever cache is transparent") {
  const Corpus c = synth_corpus(6, 60, 14, 2);
  const Vocab v = Vocab::build(c.split, c.kb, ActionStyle::Colon);
  const EncoderConfig cfg = tiny_encoder(v.size());
  ParamStore dlg, doc;
  init_encoder(dlg, cfg, 1);
  init_encoder(doc, cfg, 2);
  Retriever cached(cfg, dlg, doc, v, c.kb, true), fresh(cfg, dlg, doc, v, c.kb, false);
  const auto ids = dialogue_tokens(serialize_context(c.split.train[0], 3, Task::AST), v);
  CHECK(cached.scores(ids) == fresh.scores(ids));
  doc.mutable_value(doc.params().begin()->first).data()[0] += 0.5;
  CHECK(cached.scores(ids) == fresh.scores(ids));
  const auto dist = cached.retrieval_distribution(ids);
  CHECK(std::accumulate(dist.probs.begin(), dist.probs.end(), 0.0) == doctest::Approx(1.0).epsilon(1e-12));

  // Documents with identical content embed identically.
  Document twin = c.kb[0];
  twin.id = "twin";
  const KnowledgeBase pair({c.kb[0], twin});
  Retriever r(cfg, dlg, doc, v, pair);
  const auto p = r.retrieval_distribution(ids).probs;
  CHECK(std::abs(p[0] - 0.5) < 1e-9);
  CHECK(std::abs(p[1] - 0.5) < 1e-9);
}

// --- generator ---------------------------------------------------------------------

TEST_CASE("conditioned input construction") {
  const Corpus c = worked_abcd();
  const Dialogue& d = c.split.test.at(0);
  const std::string ctx = serialize_context(d, 8, Task::AST);
  Vocab v = vocab_over({ctx, render_document(c.kb[0]), render_document(c.kb[1])});
  GenConfig cfg = tiny_generator(v.size());
  cfg.max_input_len = 200;
  const auto in = build_conditioned_input(ctx, &c.kb.by_id("shirt-info"), InputMode::Retrieved, c.kb, v, cfg);
  CHECK(v.decode(in).rfind("[DOC] get shirt info [SEP] search faq; search shirt; select faq [SEP] [agent] hello!", 0) ==
        0);
  CHECK(build_conditioned_input(ctx, nullptr, InputMode::None, c.kb, v, cfg) == v.encode(ctx));
  const auto guide = build_conditioned_input(ctx, nullptr, InputMode::StaticGuide, c.kb, v, cfg);
  CHECK(v.decode(guide).find("[DOC] update account details [SEP]") != std::string::npos);
  cfg.max_input_len = 40;
  CHECK_THROWS_AS(build_conditioned_input(ctx, nullptr, InputMode::StaticGuide, c.kb, v, cfg), LengthError);
  // The retrieved mode keeps the document and trims the dialogue's oldest tokens.
  const auto cut = build_conditioned_input(ctx, &c.kb[0], InputMode::Retrieved, c.kb, v, cfg);
  CHECK(cut.size() <= 40);
  CHECK(v.decode(cut).rfind("[DOC] get shirt info", 0) == 0);
  CHECK(v.decode(cut).ends_with("[action] search faq"));
}

TEST_CASE("untrained likelihood is near uniform") {
  Vocab v;
  for (int i = 0; i < 190; ++i) v.add("w" + std::to_string(i));
  GenConfig cfg = tiny_generator(v.size());
  cfg.hidden_dim = 16;
  cfg.max_target_len = 16;
  ParamStore store;
  init_generator(store, cfg, 7);
  const auto input = v.encode("w1 w2 w3 w4 w5 w6");
  const auto target = target_ids("w100 w101 w102 w103 w104", v, cfg);
  const double ll = cond_loglik_value(store, cfg, input, target);
  const double uniform = -static_cast<double>(target.size()) * std::log(static_cast<double>(v.size()));
  CHECK(ll < 0.0);
  CHECK(std::exp(ll) <= 1.0);
  CHECK(ll == doctest::Approx(uniform).epsilon(0.2));
  CHECK_THROWS_AS(target_ids("w1 w2 w3 w4 w5 w6 w7 w8 w9 w10 w11 w12 w13 w14 w15 w16 w17", v, cfg), LengthError);
}

TEST_CASE("short-target probabilities sum to at most one") {
  Vocab v;
  for (std::string w : {"a", "b", "c", "d", "e"}) v.add(w);
  for (bool copy : {false, true}) {
    GenConfig cfg = tiny_generator(v.size());
    cfg.copy_head = copy;
    ParamStore store;
    init_generator(store, cfg, 11);
    const auto input = v.encode("a b c");
    double total = 0.0;
    const int n = static_cast<int>(v.size());
    total += std::exp(cond_loglik_value(store, cfg, input, std::vector<int>{Vocab::kEos}));
    for (int t1 = 0; t1 < n; ++t1) {
      if (t1 == Vocab::kEos) continue;
      total += std::exp(cond_loglik_value(store, cfg, input, std::vector<int>{t1, Vocab::kEos}));
    }
    CHECK(total <= 1.0 + 1e-6);
    CHECK(total > 0.0);

    const std::vector<int> target = {v.id("b"), v.id("d"), Vocab::kEos};
    const Tensor probs = teacher_forced_probs(store, cfg, input, target);
    REQUIRE(probs.rows() == target.size());
    for (std::size_t r = 0; r < probs.rows(); ++r) {
      double s = 0.0;
      for (std::size_t j = 0; j < probs.cols(); ++j) s += probs.at(r, j);
      CHECK(std::abs(s - 1.0) < 1e-9);
    }
    CHECK_THROWS_AS(cond_loglik_value(store, cfg, input, std::vector<int>{999, Vocab::kEos}), VocabError);
  }
}

TEST_CASE("generator grad_check with copy head and neighbour embeddings") {
  Vocab v;
  for (std::string w : {"a", "b", "c", "d", "e"}) v.add(w);
  for (std::size_t window : {std::size_t{0}, std::size_t{2}}) {
    GenConfig cfg = tiny_generator(v.size());
    cfg.local_window = window;
    ParamStore store;
    init_generator(store, cfg, 21 + window);
    const auto input = v.encode("a b c d");
    const std::vector<int> target = {v.id("c"), v.id("e"), Vocab::kEos};
    auto loss = [&](Graph& g) { return cond_loglik(g, store, cfg, input, target); };
    CHECK(grad_check(loss, store, 1e-5, 3, 300).max_rel_error < 1e-5);
  }
}

TEST_CASE("decoding is deterministic and an overfit model emits its target") {
  Vocab v;
  for (std::string w : {"search", "faq", "shirt", "select", "hello", "there", ";", ":", "x@y.com"}) v.add(w);
  GenConfig cfg = tiny_generator(v.size());
  cfg.hidden_dim = 16;
  ParamStore store;
  init_generator(store, cfg, 5);
  const auto input = v.encode("hello there search faq");
  const auto target = target_ids("search shirt; select faq", v, cfg);
  CHECK(generate(store, cfg, input) == generate(store, cfg, input));
  CHECK(generate(store, cfg, input).size() <= cfg.max_target_len);

  OptimConfig opt;
  opt.learning_rate = 1e-2;
  opt.weight_decay = 0.0;
  for (int step = 0; step < 200; ++step) {
    Graph g;
    Var loss = ag::scale(cond_loglik(g, store, cfg, input, target), -1.0);
    g.backward(loss);
    adamw_step(store, g.param_grads(store), opt, static_cast<std::uint64_t>(step) + 1);
  }
  const auto out = generate(store, cfg, input);
  CHECK(v.decode(out) == "search shirt; select faq");
  CHECK(parse_action_target(v.decode(out)).has_value());

  cfg.decode = DecodeMode::Beam;
  CHECK(v.decode(generate(store, cfg, input)) == "search shirt; select faq");
}

// --- bundle ------------------------------------------------------------------------

TEST_CASE("bundle checkpoint round trip and single-document prediction") {
  const Corpus c = synth_corpus(5, 40, 12, 4);
  Vocab v = Vocab::build(c.split, c.kb, ActionStyle::Colon);
  const ModelBundle b = make_bundle(v, tiny_encoder(v.size()), tiny_generator(v.size()), InputMode::Retrieved,
                                    ActionStyle::Colon, 3);
  const auto path = temp_path("kads_bundle_roundtrip.ckpt");
  save_bundle(b, path);
  const ModelBundle r = load_bundle(path);
  CHECK(r.vocab == b.vocab);
  CHECK(r.dialogue_encoder == b.dialogue_encoder);
  CHECK(r.document_encoder == b.document_encoder);
  CHECK(r.generator == b.generator);
  CHECK(r.config_hash() == b.config_hash());
  std::filesystem::remove(path);

  const KnowledgeBase one({c.kb[2]});
  Predictor pred(b, one);
  const std::string ctx = serialize_context(c.split.train[0], 2, Task::AST);
  const Prediction p = pred.predict(ctx, 1);
  const auto input = build_conditioned_input(ctx, &one[0], InputMode::Retrieved, one, b.vocab, b.generator_cfg);
  CHECK(p.tokens == generate(b.generator, b.generator_cfg, input));
  CHECK(p.provenance.doc_ids == std::vector<std::string>{c.kb[2].id});
  CHECK(p.provenance.probs == std::vector<double>{1.0});
}
