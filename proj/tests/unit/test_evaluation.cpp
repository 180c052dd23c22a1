#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "kads/error.hpp"
#include "kads/evaluation.hpp"
#include "kads/metrics.hpp"

using namespace kads;

namespace {

Corpus worked_sgd() { return load_corpus(std::string(KADS_FIXTURE_DIR) + "/worked_sgd.json", CorpusSchema::Sgd); }

ExperimentConfig tiny_config() {
  ExperimentConfig c = ExperimentConfig::desk_scale();
  c.encoder = {1, 8, 2, 64, 0};
  c.generator.n_layers = 1;
  c.generator.hidden_dim = 8;
  c.generator.n_heads = 2;
  c.generator.max_input_len = 96;
  c.generator.max_target_len = 16;
  c.top_k = 2;
  c.ddm_steps = 3;
  c.ddm_stop_acc.reset();
  c.mlm_steps = 3;
  c.task_steps = 3;
  c.eval_every = 3;
  c.eval_limit = 10;
  return c;
}

EvalReport report_with(std::vector<std::pair<std::size_t, std::optional<double>>> rows) {
  EvalReport r;
  for (std::size_t i = 0; i < rows.size(); ++i)
    r.per_bslot.push_back({"b" + std::to_string(i), rows[i].first, 1, rows[i].second});
  return r;
}

}  // namespace

TEST_CASE("score_actions") {
  SUBCASE("exact match") {
    const auto s = score_actions("pull up account: alice", "pull up account: alice", Task::AST, ActionStyle::Colon);
    CHECK(s.bslot == 1.0);
    CHECK(s.value_hits == 1);
    CHECK(s.value_positions == 1);
  }
  SUBCASE("wrong b-slot earns nothing") {
    const auto s = score_actions("verify identity: alice", "pull up account: alice", Task::AST, ActionStyle::Colon);
    CHECK(s.bslot == 0.0);
    CHECK(s.value_positions == 0);
  }
  SUBCASE("AST needs the whole sequence") {
    const auto s = score_actions("a; b", "a; c", Task::AST, ActionStyle::Colon);
    CHECK(s.bslot == 0.0);
    CHECK(s.value_positions == 0);
  }
  SUBCASE("WD scores per position over the longer sequence") {
    const auto s = score_actions("a: x; b: y; c: z", "a: x; b: w", Task::WD, ActionStyle::Colon);
    CHECK(s.bslot == doctest::Approx(2.0 / 3.0));
    CHECK(s.value_hits == 1);
    CHECK(s.value_positions == 2);
    CHECK(score_actions("", "", Task::WD, ActionStyle::Colon).bslot == 1.0);
  }
  SUBCASE("space style values") {
    const auto s = score_actions("offer temperature", "offer precipitation", Task::AST, ActionStyle::Space);
    CHECK(s.bslot == 1.0);
    CHECK(s.value_hits == 0);
    CHECK(s.value_positions == 1);
  }
  SUBCASE("malformed prediction") {
    const auto s = score_actions("a;;b", "a", Task::AST, ActionStyle::Colon);
    CHECK(s.malformed);
    CHECK(s.bslot == 0.0);
    CHECK(s.value_positions == 0);
  }
  SUBCASE("malformed gold is an input error") {
    CHECK_THROWS_AS(score_actions("a", "a: ", Task::AST, ActionStyle::Colon), InputError);
  }
}

TEST_CASE("summarize micro-averages value accuracy") {
  const std::string gold = "pull up account: alice";
  const std::vector<ActionScore> scores = {
      score_actions(gold, gold, Task::AST, ActionStyle::Colon),
      score_actions("pull up account: bob", gold, Task::AST, ActionStyle::Colon),
      score_actions("verify identity: alice", gold, Task::AST, ActionStyle::Colon),
      score_actions("pull up account:", gold, Task::AST, ActionStyle::Colon),
  };
  const AccuracySummary s = summarize(scores);
  CHECK(s.n == 4);
  CHECK(s.bslot_acc == doctest::Approx(0.5));
  CHECK(s.value_acc == doctest::Approx(0.5));

  std::vector<ActionScore> shuffled = {scores[2], scores[0], scores[3], scores[1]};
  const AccuracySummary t = summarize(shuffled);
  CHECK(t.bslot_acc == s.bslot_acc);
  CHECK(t.value_acc == s.value_acc);

  CHECK(summarize({}).n == 0);
  CHECK(summarize({}).value_acc == 0.0);
}

TEST_CASE("gold scored against itself is perfect") {
  const Corpus c = synth_corpus(6, 60, 16, 3);
  std::vector<ActionScore> scores;
  for (Task task : {Task::AST, Task::WD})
    for (const auto& e : examples_for(c.split.train, task, ActionStyle::Colon))
      scores.push_back(score_actions(e.target, e.target, task, ActionStyle::Colon));
  REQUIRE_FALSE(scores.empty());
  const AccuracySummary s = summarize(scores);
  CHECK(s.bslot_acc == 1.0);
  CHECK(s.value_acc == 1.0);
}

TEST_CASE("freq_acc_correlation") {
  CHECK(freq_acc_correlation(report_with({{1, 0.1}, {2, 0.2}, {3, 0.3}})).value() == doctest::Approx(1.0));
  CHECK(freq_acc_correlation(report_with({{1, 0.9}, {2, 0.5}, {3, 0.1}})).value() == doctest::Approx(-1.0));
  // Hand-computed: f = (1, 2, 3, 4), a = (0, 1, 0, 1) gives r = 1 / sqrt(5).
  CHECK(freq_acc_correlation(report_with({{1, 0.0}, {2, 1.0}, {3, 0.0}, {4, 1.0}})).value() ==
        doctest::Approx(1.0 / std::sqrt(5.0)));
  CHECK_FALSE(freq_acc_correlation(report_with({{1, 0.1}, {2, 0.2}})).has_value());
  CHECK_FALSE(freq_acc_correlation(report_with({{1, 0.5}, {2, 0.5}, {3, 0.5}})).has_value());
  CHECK_FALSE(freq_acc_correlation(report_with({{1, 0.1}, {2, 0.2}, {3, std::nullopt}})).has_value());
}

TEST_CASE("mean_ci95 matches the closed-form t quantile") {
  // Student-t with 2 degrees of freedom: t_p = (2p - 1) / sqrt(2 p (1 - p)).
  const double p = 0.975;
  const double t2 = (2.0 * p - 1.0) / std::sqrt(2.0 * p * (1.0 - p));
  const std::vector<double> xs = {1.0, 2.0, 3.0};
  const MeanCi ci = mean_ci95(xs);
  CHECK(ci.mean == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(ci.halfwidth == doctest::Approx(t2 / std::sqrt(3.0)).epsilon(1e-10));

  const std::vector<double> same = {0.4, 0.4, 0.4, 0.4};
  CHECK(mean_ci95(same).halfwidth == 0.0);
  const std::vector<double> one = {0.5};
  CHECK_THROWS_AS(mean_ci95(one), ConfigError);
}

TEST_CASE("eval_doc_selection with constructed selectors") {
  const Corpus c = synth_corpus(20, 2000, 60, 1);
  const auto& dialogues = c.split.train;
  // Context -> overlap label, built the same way the scorer builds its references.
  std::map<std::string, std::size_t> oracle;
  for (const auto& d : dialogues) {
    if (d.action_count() == 0) continue;
    Dialogue u = d;
    u.intent_labels.clear();
    const auto ctx = serialize_context(d, static_cast<std::ptrdiff_t>(d.turns.size()) - 1, Task::AST);
    oracle[ctx] = *c.kb.index_of(overlap_label(u, c.kb));
  }
  const DocSelector right = [&](const std::string& ctx) { return oracle.at(ctx); };
  const DocSelector wrong = [&](const std::string& ctx) { return (oracle.at(ctx) + 1) % c.kb.size(); };
  Rng rng(77);
  const DocSelector random = [&](const std::string&) { return static_cast<std::size_t>(rng.below(c.kb.size())); };

  CHECK(eval_doc_selection(right, dialogues, c.kb, DocStyle::Abcd, ActionStyle::Colon) == 1.0);
  CHECK(eval_doc_selection(wrong, dialogues, c.kb, DocStyle::Abcd, ActionStyle::Colon) == 0.0);
  CHECK(eval_doc_selection(random, dialogues, c.kb, DocStyle::Abcd, ActionStyle::Colon) ==
        doctest::Approx(0.05).epsilon(0.4));

  std::size_t calls = 0;
  const DocSelector counting = [&](const std::string& ctx) {
    ++calls;
    return oracle.at(ctx);
  };
  eval_doc_selection(counting, dialogues, c.kb, DocStyle::Abcd, ActionStyle::Colon, 25);
  CHECK(calls == 25);
}

TEST_CASE("eval_doc_selection in labeled-intent style") {
  const Corpus c = worked_sgd();
  std::vector<Dialogue> dialogues = c.split.train;
  dialogues.insert(dialogues.end(), c.split.dev.begin(), c.split.dev.end());
  dialogues.insert(dialogues.end(), c.split.test.begin(), c.split.test.end());
  REQUIRE_FALSE(dialogues.empty());
  // One decision per intent segment on the context up to the segment's end.
  std::map<std::string, std::size_t> oracle;
  std::size_t segments = 0;
  for (const auto& d : dialogues)
    for (std::size_t i = 0; i < d.intent_labels.size(); ++i) {
      const std::size_t end = i + 1 < d.intent_labels.size() ? d.intent_labels[i + 1].turn_index : d.turns.size();
      oracle[serialize_context(d, static_cast<std::ptrdiff_t>(end) - 1, Task::AST, ActionStyle::Space)] =
          *c.kb.index_of(d.intent_labels[i].document_id);
      ++segments;
    }
  REQUIRE(segments > 0);
  const DocSelector right = [&](const std::string& ctx) { return oracle.at(ctx); };
  CHECK(eval_doc_selection(right, dialogues, c.kb, DocStyle::Sgd, ActionStyle::Space) == 1.0);

  dialogues.front().intent_labels.clear();
  CHECK_THROWS_AS(eval_doc_selection(right, dialogues, c.kb, DocStyle::Sgd, ActionStyle::Space), LabelError);
}

TEST_CASE("eval_action_accuracy and eval_ood on an untrained bundle") {
  const Corpus c = synth_corpus(4, 60, 12, 5);
  const ExperimentConfig cfg = tiny_config();
  const ModelBundle b = make_bundle(Vocab::build(c.split, c.kb, ActionStyle::Colon), cfg.encoder, cfg.generator,
                                    InputMode::Retrieved, ActionStyle::Colon, 1);
  const auto freq = bslot_frequencies(c.split.train);
  const auto examples = examples_for(c.split.test, Task::AST, ActionStyle::Colon);
  REQUIRE_FALSE(examples.empty());

  const EvalReport r = eval_action_accuracy(b, c.kb, examples, Task::AST, freq, 2);
  CHECK(r.n_examples == examples.size());
  CHECK(r.bslot_acc >= 0.0);
  CHECK(r.bslot_acc <= 1.0);
  std::size_t gold_actions = 0;
  for (const auto& e : examples) gold_actions += parse_action_target(e.target)->size();
  std::size_t counted = 0;
  for (const auto& row : r.per_bslot) {
    counted += row.test_count;
    CHECK(row.accuracy.has_value() == (row.test_count > 0));
    const auto it = freq.find(row.bslot);
    CHECK(row.train_freq == (it == freq.end() ? 0 : it->second));
  }
  CHECK(counted == gold_actions);
  CHECK(std::is_sorted(r.per_bslot.begin(), r.per_bslot.end(),
                       [](const BslotRow& a, const BslotRow& b) { return a.bslot < b.bslot; }));
  CHECK_THROWS_AS(eval_action_accuracy(b, c.kb, std::span<const TextExample>{}, Task::AST, freq), ConfigError);

  SUBCASE("no held-out b-slots leaves the OOD partition empty") {
    const OodReport o = eval_ood(b, c.kb, c.split.test, {}, freq, Task::AST, 2);
    CHECK(o.out_of_distribution.partial);
    CHECK_FALSE(o.in_distribution.partial);
    CHECK(o.in_distribution.n_examples == examples.size());
    CHECK(o.in_distribution.bslot_acc == r.bslot_acc);
  }
  SUBCASE("partitions cover every example once") {
    const std::set<std::string> held = {c.kb[0].bslots.front()};
    const OodReport o = eval_ood(b, c.kb, c.split.test, held, freq, Task::AST, 2);
    CHECK(o.in_distribution.n_examples + o.out_of_distribution.n_examples == examples.size());
  }
}

TEST_CASE("merge_reports averages over seeds") {
  EvalReport a, b;
  a.bslot_acc = 0.2;
  a.value_acc = 0.6;
  a.seeds = {1};
  a.doc_selection_acc = 0.5;
  a.per_bslot = {{"x", 3, 2, 1.0}, {"y", 1, 0, std::nullopt}};
  b = a;
  b.bslot_acc = 0.4;
  b.value_acc = 0.8;
  b.seeds = {2};
  b.doc_selection_acc = 0.7;
  b.per_bslot = {{"x", 3, 2, 0.0}, {"y", 1, 1, 1.0}};
  const std::vector<EvalReport> both = {a, b};
  const EvalReport m = merge_reports(both);
  CHECK(m.bslot_acc == doctest::Approx(0.3));
  CHECK(m.value_acc == doctest::Approx(0.7));
  CHECK(m.doc_selection_acc.value() == doctest::Approx(0.6));
  CHECK(m.seeds == std::vector<std::uint64_t>{1, 2});
  CHECK(m.per_bslot[0].accuracy.value() == doctest::Approx(0.5));
  CHECK(m.per_bslot[1].accuracy.value() == doctest::Approx(1.0));

  b.doc_selection_acc.reset();
  const std::vector<EvalReport> mixed = {a, b};
  CHECK_FALSE(merge_reports(mixed).doc_selection_acc.has_value());
  CHECK_THROWS_AS(merge_reports({}), ConfigError);
}

TEST_CASE("report formats") {
  EvalReport r;
  r.dataset = "synthetic";
  r.model = "kads";
  r.bslot_acc = 0.25;
  r.seeds = {1, 2};
  r.per_bslot = {{"x", 3, 2, 0.5}};
  CHECK(EvalReport::csv_header() == "task,dataset,model,bslot_acc,value_acc,doc_selection_acc,n_examples,seeds,partial");
  CHECK(r.csv_row() == "ast,synthetic,kads,0.250000,0.000000,,0,1 2,0");
  const auto j = r.to_json();
  CHECK(j.at("value_acc_definition") == std::string(kValueAccDefinition));
  CHECK(j.at("doc_selection_acc").is_null());
  CHECK(j.at("per_bslot").at(0).at("accuracy") == 0.5);
  CHECK(per_bslot_csv(r).find("x,3,2,0.500000") != std::string::npos);

  CHECK(parse_task("AST") == Task::AST);
  CHECK(parse_task("wd") == Task::WD);
  CHECK_THROWS_AS(parse_task("dst"), ConfigError);
  CHECK(pretraining_label(Pretraining::None) == "none");
  CHECK(pretraining_label(Pretraining::MlmOnly) == "MLM only");
  CHECK(pretraining_label(Pretraining::DdmOnly) == "DDM only");
  CHECK(pretraining_label(Pretraining::Full) == "full");
}

TEST_CASE("ExperimentConfig JSON") {
  ExperimentConfig c = tiny_config();
  c.task = Task::WD;
  c.ddm_stop_acc = 0.9;
  const ExperimentConfig back = ExperimentConfig::from_json(c.to_json());
  CHECK(back.to_json() == c.to_json());
  CHECK(back.task == Task::WD);

  CHECK(ExperimentConfig::from_json(nlohmann::json::object()).to_json() == ExperimentConfig::desk_scale().to_json());
  CHECK_THROWS_AS(ExperimentConfig::from_json({{"topk", 3}}), ConfigError);
  CHECK_THROWS_AS(ExperimentConfig::from_json({{"top_k", "three"}}), ConfigError);
  CHECK_THROWS_AS(ExperimentConfig::from_json({{"freeze_prob", 1.5}}), ConfigError);
  CHECK_THROWS_AS(ExperimentConfig::from_json({{"holdout_fraction", 0.0}}), ConfigError);
  CHECK_THROWS_AS(ExperimentConfig::from_json(nlohmann::json::array()), ConfigError);
}

TEST_CASE("data-efficiency sweep rejects bad designs before training") {
  const Corpus c = synth_corpus(4, 60, 12, 5);
  const ExperimentConfig cfg = tiny_config();
  const std::vector<std::uint64_t> three = {1, 2, 3}, two = {1, 2};
  const std::vector<std::size_t> ok = {5, 10}, flat = {10, 10}, huge = {5, 100000}, zero = {0, 5};
  CHECK_THROWS_AS(data_efficiency_sweep(c, cfg, ok, two), ConfigError);
  CHECK_THROWS_AS(data_efficiency_sweep(c, cfg, flat, three), ConfigError);
  CHECK_THROWS_AS(data_efficiency_sweep(c, cfg, huge, three), ConfigError);
  CHECK_THROWS_AS(data_efficiency_sweep(c, cfg, zero, three), ConfigError);
  CHECK_THROWS_AS(data_efficiency_sweep(c, cfg, std::span<const std::size_t>{}, three), ConfigError);
}

TEST_CASE("pipelines run only the selected stages") {
  const Corpus c = synth_corpus(4, 60, 12, 5);
  const ExperimentConfig cfg = tiny_config();
  const auto stages = [&](Pretraining p) {
    return run_pipeline(c.split, c.kb, cfg, p, ActionStyle::Colon, 1).bundle.stages;
  };
  CHECK(stages(Pretraining::None) == std::vector<std::string>{"AST"});
  CHECK(stages(Pretraining::MlmOnly) == std::vector<std::string>{"MLM", "AST"});
  CHECK(stages(Pretraining::DdmOnly) == std::vector<std::string>{"DDM", "AST"});
  CHECK(stages(Pretraining::Full) == std::vector<std::string>{"DDM", "MLM", "AST"});

  const RunResult base = run_baseline(c.split, c.kb, cfg, ActionStyle::Colon, 1);
  CHECK_FALSE(base.bundle.uses_retrieval());
  CHECK(base.bundle.stages == std::vector<std::string>{"AST"});

  const std::vector<std::uint64_t> seeds = {1};
  const auto rows = ablation_suite(c, cfg, seeds);
  REQUIRE(rows.size() == 4);
  CHECK(rows[0].pretraining == Pretraining::None);
  CHECK(rows[3].pretraining == Pretraining::Full);
  const std::string csv = ablation_csv(rows);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 5);
  CHECK(csv.find("\nMLM only,") != std::string::npos);
  for (const auto& r : rows) CHECK(r.report.doc_selection_acc.has_value());
}

TEST_CASE("run manifest") {
  const Corpus c = synth_corpus(4, 60, 12, 5);
  const std::vector<std::uint64_t> seeds = {4, 5};
  const auto m = make_manifest(tiny_config().to_json(), seeds, c);
  CHECK(m.at("seeds") == nlohmann::json({4, 5}));
  CHECK(m.at("dataset") == c.dataset);
  CHECK(m.at("corpus_hash").get<std::string>().size() == 16);
  CHECK(m.at("build") == std::string(build_description()));
  CHECK(m.at("config").at("top_k") == 2);
}
