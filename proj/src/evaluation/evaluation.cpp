#include "kads/evaluation.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <set>
#include <sstream>

#include <boost/math/distributions/students_t.hpp>

#include "kads/error.hpp"
#include "kads/log.hpp"

#ifndef KADS_BUILD_DESCRIBE
#define KADS_BUILD_DESCRIBE "unknown"
#endif

namespace kads {
namespace {

std::string fmt(double x) {
  std::ostringstream os;
  os << std::setprecision(6) << std::fixed << x;
  return os.str();
}

std::string opt_fmt(const std::optional<double>& x) { return x ? fmt(*x) : std::string(); }

std::string join_seeds(std::span<const std::uint64_t> seeds, char sep) {
  std::string out;
  for (std::size_t i = 0; i < seeds.size(); ++i) {
    if (i) out += sep;
    out += std::to_string(seeds[i]);
  }
  return out;
}

std::string lower(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

// Deterministic per-stage seeds derived from the run seed.
std::uint64_t stage_seed(std::uint64_t seed, std::string_view stage) { return Rng::stream(seed, stage).next_u64(); }

TrainConfig stage_config(const ExperimentConfig& cfg, Stage stage, std::uint64_t seed) {
  TrainConfig t;
  t.stage = stage;
  t.optim = cfg.optim;
  t.top_k = cfg.top_k;
  t.freeze_prob = cfg.freeze_prob;
  t.mask_rate = cfg.mask_rate;
  t.eval_every = cfg.eval_every;
  t.eval_limit = cfg.eval_limit;
  t.seed = stage_seed(seed, stage_name(stage));
  return t;
}

ModelBundle fresh_bundle(const CorpusSplit& split, const KnowledgeBase& kb, const ExperimentConfig& cfg,
                         InputMode mode, ActionStyle style, std::uint64_t seed) {
  return make_bundle(Vocab::build(split, kb, style), cfg.encoder, cfg.generator, mode, style, seed);
}

Stage task_stage(Task task) { return task == Task::AST ? Stage::AST : Stage::WD; }

EvalReport score_test(const RunResult& run, const Corpus& corpus, const CorpusSplit& split, const ExperimentConfig& cfg,
                      std::string model, std::uint64_t seed) {
  const ActionStyle style = run.bundle.style;
  const auto examples = examples_for(corpus.split.test, cfg.task, style);
  EvalReport r = eval_action_accuracy(run.bundle, corpus.kb, examples, cfg.task, bslot_frequencies(split.train),
                                      cfg.top_k);
  r.dataset = corpus.dataset;
  r.model = std::move(model);
  r.seeds = {seed};
  if (run.bundle.uses_retrieval())
    r.doc_selection_acc = eval_doc_selection(run.bundle, corpus.split.test, corpus.kb, doc_style_for(corpus.dataset));
  return r;
}

}  // namespace

nlohmann::json EvalReport::to_json() const {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : per_bslot) {
    nlohmann::json row = {{"bslot", r.bslot}, {"train_freq", r.train_freq}, {"test_count", r.test_count}};
    row["accuracy"] = r.accuracy ? nlohmann::json(*r.accuracy) : nlohmann::json(nullptr);
    rows.push_back(std::move(row));
  }
  return {{"task", task_name(task)},
          {"dataset", dataset},
          {"model", model},
          {"bslot_acc", bslot_acc},
          {"value_acc", value_acc},
          {"value_acc_definition", kValueAccDefinition},
          {"doc_selection_acc", doc_selection_acc ? nlohmann::json(*doc_selection_acc) : nlohmann::json(nullptr)},
          {"n_examples", n_examples},
          {"seeds", seeds},
          {"partial", partial},
          {"per_bslot", rows}};
}

std::string EvalReport::csv_header() {
  return "task,dataset,model,bslot_acc,value_acc,doc_selection_acc,n_examples,seeds,partial";
}

std::string EvalReport::csv_row() const {
  return std::string(task_name(task)) + "," + dataset + "," + model + "," + fmt(bslot_acc) + "," + fmt(value_acc) +
         "," + opt_fmt(doc_selection_acc) + "," + std::to_string(n_examples) + "," + join_seeds(seeds, ' ') + "," +
         (partial ? "1" : "0");
}

std::string_view task_name(Task task) { return task == Task::AST ? "ast" : "wd"; }

Task parse_task(std::string_view name) {
  const std::string n = lower(name);
  if (n == "ast") return Task::AST;
  if (n == "wd") return Task::WD;
  throw ConfigError("unknown task '" + std::string(name) + "' (expected ast or wd)");
}

std::map<std::string, std::size_t> bslot_frequencies(std::span<const Dialogue> dialogues) {
  std::map<std::string, std::size_t> freq;
  for (const auto& d : dialogues)
    for (const auto& a : d.actions()) ++freq[a.bslot];
  return freq;
}

std::vector<TextExample> examples_for(std::span<const Dialogue> dialogues, Task task, ActionStyle style) {
  std::vector<TextExample> out;
  for (const auto& d : dialogues) {
    if (task == Task::AST) {
      for (auto& e : make_ast_examples(d, style)) out.push_back(std::move(e));
    } else if (d.action_count() > 0) {
      out.push_back(make_wd_example(d, style));
    }
  }
  return out;
}

EvalReport eval_action_accuracy(const ModelBundle& bundle, const KnowledgeBase& kb,
                                std::span<const TextExample> examples, Task task,
                                const std::map<std::string, std::size_t>& train_freq, std::size_t top_k) {
  if (examples.empty()) throw ConfigError("eval_action_accuracy: empty example set");
  Predictor pred(bundle, kb);
  std::vector<ActionScore> scores;
  std::map<std::string, std::pair<double, std::size_t>> per;  // credit, count
  for (const auto& e : examples) {
    const std::string text = pred.predict(e.input, top_k).text;
    const ActionScore s = score_actions(text, e.target, task, bundle.style);
    scores.push_back(s);
    const auto gold = parse_action_target(e.target, bundle.style);
    const auto got = parse_action_target(text, bundle.style);
    for (std::size_t i = 0; i < gold->size(); ++i) {
      auto& slot = per[(*gold)[i].bslot];
      ++slot.second;
      if (task == Task::AST)
        slot.first += s.bslot;
      else if (got && i < got->size() && (*got)[i].bslot == (*gold)[i].bslot)
        slot.first += 1.0;
    }
  }
  const AccuracySummary sum = summarize(scores);
  EvalReport r;
  r.task = task;
  r.bslot_acc = sum.bslot_acc;
  r.value_acc = sum.value_acc;
  r.n_examples = sum.n;
  std::set<std::string> names;
  for (const auto& [b, n] : train_freq) names.insert(b);
  for (const auto& [b, c] : per) names.insert(b);
  for (const auto& b : names) {
    BslotRow row{b, 0, 0, std::nullopt};
    if (auto it = train_freq.find(b); it != train_freq.end()) row.train_freq = it->second;
    if (auto it = per.find(b); it != per.end()) {
      row.test_count = it->second.second;
      row.accuracy = it->second.first / static_cast<double>(it->second.second);
    }
    r.per_bslot.push_back(std::move(row));
  }
  return r;
}

double eval_doc_selection(const ModelBundle& bundle, std::span<const Dialogue> dialogues, const KnowledgeBase& kb,
                          DocStyle style, std::size_t limit) {
  if (!bundle.uses_retrieval()) throw ConfigError("eval_doc_selection needs a retrieving bundle");
  Predictor pred(bundle, kb);
  return eval_doc_selection([&pred](const std::string& ctx) { return pred.select_document(ctx); }, dialogues, kb,
                            style, bundle.style, limit);
}

double eval_doc_selection(const DocSelector& select, std::span<const Dialogue> dialogues, const KnowledgeBase& kb,
                          DocStyle style, ActionStyle action_style, std::size_t limit) {
  std::size_t n = 0, hits = 0;
  for (const auto& d : dialogues) {
    if (limit > 0 && n >= limit) break;
    if (style == DocStyle::Abcd) {
      if (d.action_count() == 0) continue;  // no overlap label exists
      Dialogue unlabeled = d;
      unlabeled.intent_labels.clear();
      const std::string label = overlap_label(unlabeled, kb);
      const auto ctx = serialize_context(d, static_cast<std::ptrdiff_t>(d.turns.size()) - 1, Task::AST, action_style);
      hits += kb[select(ctx)].id == label;
      ++n;
      continue;
    }
    if (d.intent_labels.empty()) throw LabelError("dialogue '" + d.id + "' has no intent label");
    // One decision per intent segment, on the context up to the segment's end.
    for (std::size_t i = 0; i < d.intent_labels.size(); ++i) {
      const std::size_t end = i + 1 < d.intent_labels.size() ? d.intent_labels[i + 1].turn_index : d.turns.size();
      if (end == 0) continue;
      const auto ctx = serialize_context(d, static_cast<std::ptrdiff_t>(end) - 1, Task::AST, action_style);
      hits += kb[select(ctx)].id == d.intent_labels[i].document_id;
      ++n;
    }
  }
  return n == 0 ? 0.0 : static_cast<double>(hits) / static_cast<double>(n);
}

OodReport eval_ood(const ModelBundle& bundle, const KnowledgeBase& kb, std::span<const Dialogue> test,
                   const std::set<std::string>& held_out, const std::map<std::string, std::size_t>& train_freq,
                   Task task, std::size_t top_k) {
  std::vector<TextExample> in, out;
  for (auto& e : examples_for(test, task, bundle.style)) {
    const auto gold = parse_action_target(e.target, bundle.style);
    const bool ood = std::any_of(gold->begin(), gold->end(), [&](const Action& a) { return held_out.count(a.bslot) > 0; });
    (ood ? out : in).push_back(std::move(e));
  }
  OodReport r;
  auto score = [&](const std::vector<TextExample>& part, EvalReport& dst) {
    if (part.empty()) {
      dst.task = task;
      dst.partial = true;
      return;
    }
    dst = eval_action_accuracy(bundle, kb, part, task, train_freq, top_k);
  };
  score(in, r.in_distribution);
  score(out, r.out_of_distribution);
  if (out.empty()) log::warn("eval_ood: no test example uses a held-out b-slot; report marked partial");
  return r;
}

std::optional<double> freq_acc_correlation(const EvalReport& report) {
  std::vector<double> f, a;
  for (const auto& r : report.per_bslot) {
    if (!r.accuracy) continue;
    f.push_back(static_cast<double>(r.train_freq));
    a.push_back(*r.accuracy);
  }
  if (f.size() < 3) return std::nullopt;
  const double n = static_cast<double>(f.size());
  const double mf = std::accumulate(f.begin(), f.end(), 0.0) / n;
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
  double sff = 0.0, saa = 0.0, sfa = 0.0;
  for (std::size_t i = 0; i < f.size(); ++i) {
    sff += (f[i] - mf) * (f[i] - mf);
    saa += (a[i] - ma) * (a[i] - ma);
    sfa += (f[i] - mf) * (a[i] - ma);
  }
  if (sff == 0.0 || saa == 0.0) return std::nullopt;
  return sfa / std::sqrt(sff * saa);
}

MeanCi mean_ci95(std::span<const double> samples) {
  if (samples.size() < 2) throw ConfigError("a confidence interval needs at least 2 samples");
  const double n = static_cast<double>(samples.size());
  MeanCi out;
  out.mean = std::accumulate(samples.begin(), samples.end(), 0.0) / n;
  double ss = 0.0;
  for (double x : samples) ss += (x - out.mean) * (x - out.mean);
  const double sd = std::sqrt(ss / (n - 1.0));
  const boost::math::students_t dist(n - 1.0);
  out.halfwidth = boost::math::quantile(dist, 0.975) * sd / std::sqrt(n);
  return out;
}

// --- experiment pipelines ------------------------------------------------------

std::string_view pretraining_label(Pretraining p) {
  switch (p) {
    case Pretraining::None:
      return "none";
    case Pretraining::MlmOnly:
      return "MLM only";
    case Pretraining::DdmOnly:
      return "DDM only";
    case Pretraining::Full:
      return "full";
  }
  return "none";
}

void ExperimentConfig::validate() const {
  optim.validate();
  if (top_k == 0) throw ConfigError("top_k must be >= 1");
  if (task_steps == 0) throw ConfigError("task_steps must be >= 1");
  if (eval_every == 0) throw ConfigError("eval_every must be >= 1");
  if (!(freeze_prob >= 0.0 && freeze_prob <= 1.0)) throw ConfigError("freeze_prob must lie in [0, 1]");
  if (!(mask_rate > 0.0 && mask_rate <= 1.0)) throw ConfigError("mask_rate must lie in (0, 1]");
  if (!(holdout_fraction > 0.0 && holdout_fraction < 1.0)) throw ConfigError("holdout_fraction must lie in (0, 1)");
  if (ddm_stop_acc && !(*ddm_stop_acc > 0.0 && *ddm_stop_acc <= 1.0))
    throw ConfigError("ddm_stop_acc must lie in (0, 1]");
}

ExperimentConfig ExperimentConfig::desk_scale() {
  ExperimentConfig c;
  c.encoder.n_layers = 2;
  c.encoder.hidden_dim = 32;
  c.encoder.n_heads = 4;
  c.encoder.max_seq_len = 128;
  c.generator.n_layers = 2;
  c.generator.hidden_dim = 32;
  c.generator.n_heads = 4;
  c.generator.max_input_len = 160;
  c.generator.max_target_len = 32;
  c.optim.learning_rate = 1e-3;
  c.optim.batch_size = 8;
  c.top_k = 3;
  c.ddm_steps = 1000;
  c.ddm_stop_acc = 0.97;
  c.mlm_steps = 500;
  c.task_steps = 2000;
  c.eval_every = 100;
  c.eval_limit = 150;
  return c;
}

nlohmann::json ExperimentConfig::to_json() const {
  nlohmann::json optim_j = {{"learning_rate", optim.learning_rate}, {"beta1", optim.beta1},
                            {"beta2", optim.beta2},                 {"epsilon", optim.epsilon},
                            {"weight_decay", optim.weight_decay},   {"batch_size", optim.batch_size}};
  nlohmann::json encoder_j = encoder.to_json();
  encoder_j.erase("vocab_size");
  nlohmann::json generator_j = generator.to_json();
  generator_j.erase("vocab_size");
  return {{"encoder", encoder_j},
          {"generator", generator_j},
          {"optim", optim_j},
          {"task", task_name(task)},
          {"top_k", top_k},
          {"ddm_steps", ddm_steps},
          {"ddm_stop_acc", ddm_stop_acc ? nlohmann::json(*ddm_stop_acc) : nlohmann::json(nullptr)},
          {"mlm_steps", mlm_steps},
          {"freeze_prob", freeze_prob},
          {"mask_rate", mask_rate},
          {"task_steps", task_steps},
          {"eval_every", eval_every},
          {"eval_limit", eval_limit},
          {"holdout_fraction", holdout_fraction}};
}

ExperimentConfig ExperimentConfig::from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("experiment config must be a JSON object");
  static const std::set<std::string> known = {"encoder",   "generator",   "optim",     "task",
                                              "top_k",     "ddm_steps",   "ddm_stop_acc", "mlm_steps",
                                              "freeze_prob", "mask_rate", "task_steps", "eval_every",
                                              "eval_limit", "holdout_fraction"};
  for (const auto& [key, value] : j.items())
    if (!known.count(key)) throw ConfigError("unknown experiment config key '" + key + "'");
  ExperimentConfig c = desk_scale();
  try {
    if (j.contains("encoder")) {
      nlohmann::json e = c.encoder.to_json();
      e.update(j.at("encoder"));
      c.encoder = EncoderConfig::from_json(e);
    }
    if (j.contains("generator")) {
      nlohmann::json g = c.generator.to_json();
      g.update(j.at("generator"));
      c.generator = GenConfig::from_json(g);
    }
    if (j.contains("optim")) {
      const auto& o = j.at("optim");
      c.optim.learning_rate = o.value("learning_rate", c.optim.learning_rate);
      c.optim.beta1 = o.value("beta1", c.optim.beta1);
      c.optim.beta2 = o.value("beta2", c.optim.beta2);
      c.optim.epsilon = o.value("epsilon", c.optim.epsilon);
      c.optim.weight_decay = o.value("weight_decay", c.optim.weight_decay);
      c.optim.batch_size = o.value("batch_size", c.optim.batch_size);
    }
    if (j.contains("task")) c.task = parse_task(j.at("task").get<std::string>());
    c.top_k = j.value("top_k", c.top_k);
    c.ddm_steps = j.value("ddm_steps", c.ddm_steps);
    if (j.contains("ddm_stop_acc"))
      c.ddm_stop_acc = j.at("ddm_stop_acc").is_null() ? std::nullopt
                                                      : std::optional<double>(j.at("ddm_stop_acc").get<double>());
    c.mlm_steps = j.value("mlm_steps", c.mlm_steps);
    c.freeze_prob = j.value("freeze_prob", c.freeze_prob);
    c.mask_rate = j.value("mask_rate", c.mask_rate);
    c.task_steps = j.value("task_steps", c.task_steps);
    c.eval_every = j.value("eval_every", c.eval_every);
    c.eval_limit = j.value("eval_limit", c.eval_limit);
    c.holdout_fraction = j.value("holdout_fraction", c.holdout_fraction);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed experiment config: ") + e.what());
  }
  c.validate();
  return c;
}

RunResult run_pipeline(const CorpusSplit& split, const KnowledgeBase& kb, const ExperimentConfig& cfg,
                       Pretraining pretraining, ActionStyle style, std::uint64_t seed) {
  cfg.validate();
  RunResult run{fresh_bundle(split, kb, cfg, InputMode::Retrieved, style, seed), {}, {}};
  const bool ddm = pretraining == Pretraining::DdmOnly || pretraining == Pretraining::Full;
  const bool mlm = pretraining == Pretraining::MlmOnly || pretraining == Pretraining::Full;
  if (ddm && cfg.ddm_steps > 0) {
    TrainConfig t = stage_config(cfg, Stage::DDM, seed);
    t.max_steps = cfg.ddm_steps;
    t.stop_doc_acc = cfg.ddm_stop_acc;
    const StageResult r = train_ddm(run.bundle, split, kb, t);
    run.log.extend(r.log);
    run.doc_acc_after["DDM"] = r.final_doc_acc.value_or(0.0);
  }
  if (mlm && cfg.mlm_steps > 0) {
    TrainConfig t = stage_config(cfg, Stage::MLM, seed);
    t.max_steps = cfg.mlm_steps;
    t.require_warmup = ddm;
    const StageResult r = train_mlm(run.bundle, split, kb, t);
    run.log.extend(r.log);
    run.doc_acc_after["MLM"] = r.final_doc_acc.value_or(0.0);
  }
  TrainConfig t = stage_config(cfg, task_stage(cfg.task), seed);
  t.max_steps = cfg.task_steps;
  const StageResult r = train_task(run.bundle, split, kb, t);
  run.log.extend(r.log);
  run.doc_acc_after[std::string(stage_name(t.stage))] = r.final_doc_acc.value_or(0.0);
  return run;
}

RunResult run_baseline(const CorpusSplit& split, const KnowledgeBase& kb, const ExperimentConfig& cfg,
                       ActionStyle style, std::uint64_t seed) {
  cfg.validate();
  RunResult run{fresh_bundle(split, kb, cfg, InputMode::None, style, seed), {}, {}};
  TrainConfig t = stage_config(cfg, task_stage(cfg.task), seed);
  t.max_steps = cfg.task_steps;
  run.log.extend(train_task(run.bundle, split, kb, t).log);
  return run;
}

EvalReport merge_reports(std::span<const EvalReport> reports) {
  if (reports.empty()) throw ConfigError("merge_reports: no reports");
  EvalReport out = reports.front();
  out.seeds.clear();
  out.bslot_acc = out.value_acc = 0.0;
  std::map<std::string, std::pair<double, std::size_t>> acc;
  bool all_doc = true;
  double doc = 0.0;
  for (const auto& r : reports) {
    out.bslot_acc += r.bslot_acc;
    out.value_acc += r.value_acc;
    out.partial = out.partial || r.partial;
    out.seeds.insert(out.seeds.end(), r.seeds.begin(), r.seeds.end());
    if (r.doc_selection_acc)
      doc += *r.doc_selection_acc;
    else
      all_doc = false;
    for (const auto& row : r.per_bslot)
      if (row.accuracy) {
        acc[row.bslot].first += *row.accuracy;
        ++acc[row.bslot].second;
      }
  }
  const double n = static_cast<double>(reports.size());
  out.bslot_acc /= n;
  out.value_acc /= n;
  out.doc_selection_acc = all_doc ? std::optional<double>(doc / n) : std::nullopt;
  for (auto& row : out.per_bslot) {
    auto it = acc.find(row.bslot);
    row.accuracy = it == acc.end() ? std::nullopt
                                   : std::optional<double>(it->second.first / static_cast<double>(it->second.second));
  }
  return out;
}

std::string SweepResult::to_csv() const {
  std::string out = "train_size,seeds,kads_bslot_acc,kads_ci95,baseline_bslot_acc,baseline_ci95,gap\n";
  for (const auto& r : rows)
    out += std::to_string(r.train_size) + "," + join_seeds(r.seeds, ' ') + "," + fmt(r.kads.mean) + "," +
           fmt(r.kads.halfwidth) + "," + fmt(r.baseline.mean) + "," + fmt(r.baseline.halfwidth) + "," +
           fmt(r.kads.mean - r.baseline.mean) + "\n";
  return out;
}

SweepResult data_efficiency_sweep(const Corpus& corpus, const ExperimentConfig& cfg, std::span<const std::size_t> sizes,
                                  std::span<const std::uint64_t> seeds) {
  cfg.validate();
  if (seeds.size() < 3) throw ConfigError("data-efficiency sweep needs at least 3 seeds for its intervals");
  if (sizes.empty()) throw ConfigError("data-efficiency sweep needs at least one train size");
  for (std::size_t i = 0; i < sizes.size(); ++i) {
    if (sizes[i] == 0 || sizes[i] > corpus.split.train.size())
      throw ConfigError("train size " + std::to_string(sizes[i]) + " outside 1.." +
                        std::to_string(corpus.split.train.size()));
    if (i > 0 && sizes[i] <= sizes[i - 1]) throw ConfigError("train sizes must be strictly increasing");
  }
  const ActionStyle style = action_style_for(corpus.dataset);
  SweepResult result;
  for (std::size_t size : sizes) {
    SweepRow row;
    row.train_size = size;
    std::vector<double> kads, base;
    for (std::uint64_t seed : seeds) {
      CorpusSplit sub = corpus.split;
      Rng rng = Rng::stream(seed, "subsample");
      rng.shuffle(std::span<Dialogue>(sub.train));
      sub.train.resize(size);
      log::info("sweep: size " + std::to_string(size) + " seed " + std::to_string(seed));
      const RunResult k = run_pipeline(sub, corpus.kb, cfg, Pretraining::Full, style, seed);
      kads.push_back(score_test(k, corpus, sub, cfg, "kads", seed).bslot_acc);
      const RunResult b = run_baseline(sub, corpus.kb, cfg, style, seed);
      base.push_back(score_test(b, corpus, sub, cfg, "baseline", seed).bslot_acc);
      row.seeds.push_back(seed);
    }
    row.kads = mean_ci95(kads);
    row.baseline = mean_ci95(base);
    result.rows.push_back(std::move(row));
  }
  return result;
}

std::vector<AblationRow> ablation_suite(const Corpus& corpus, const ExperimentConfig& cfg,
                                        std::span<const std::uint64_t> seeds) {
  cfg.validate();
  if (seeds.empty()) throw ConfigError("ablation suite needs at least one seed");
  const ActionStyle style = action_style_for(corpus.dataset);
  std::vector<AblationRow> rows;
  for (Pretraining p : {Pretraining::None, Pretraining::MlmOnly, Pretraining::DdmOnly, Pretraining::Full}) {
    std::vector<EvalReport> reports;
    for (std::uint64_t seed : seeds) {
      log::info("ablation: " + std::string(pretraining_label(p)) + " seed " + std::to_string(seed));
      const RunResult run = run_pipeline(corpus.split, corpus.kb, cfg, p, style, seed);
      reports.push_back(score_test(run, corpus, corpus.split, cfg, std::string(pretraining_label(p)), seed));
    }
    rows.push_back({p, merge_reports(reports)});
  }
  return rows;
}

std::string ablation_csv(std::span<const AblationRow> rows) {
  std::string out = "pretraining,bslot_acc,value_acc,doc_selection_acc,n_examples,seeds\n";
  for (const auto& r : rows)
    out += std::string(pretraining_label(r.pretraining)) + "," + fmt(r.report.bslot_acc) + "," +
           fmt(r.report.value_acc) + "," + opt_fmt(r.report.doc_selection_acc) + "," +
           std::to_string(r.report.n_examples) + "," + join_seeds(r.report.seeds, ' ') + "\n";
  return out;
}

std::vector<OodRow> ood_experiment(const Corpus& corpus, const ExperimentConfig& cfg,
                                   std::span<const std::uint64_t> seeds) {
  cfg.validate();
  const ActionStyle style = action_style_for(corpus.dataset);
  std::vector<OodRow> rows;
  for (std::uint64_t seed : seeds) {
    const HoldoutResult held = holdout_split(corpus.split, cfg.holdout_fraction, seed);
    const auto freq = bslot_frequencies(held.split.train);
    log::info("ood: seed " + std::to_string(seed) + ", " + std::to_string(held.split.held_out_bslots.size()) +
              " held-out b-slots, " + std::to_string(held.removed) + " train dialogues removed");
    auto tag = [&](OodReport r, const std::string& model) {
      for (EvalReport* e : {&r.in_distribution, &r.out_of_distribution}) {
        e->dataset = corpus.dataset;
        e->model = model;
        e->seeds = {seed};
      }
      return OodRow{model, seed, std::move(r)};
    };
    const RunResult k = run_pipeline(held.split, corpus.kb, cfg, Pretraining::Full, style, seed);
    rows.push_back(tag(eval_ood(k.bundle, corpus.kb, corpus.split.test, held.split.held_out_bslots, freq, cfg.task,
                                cfg.top_k),
                       "kads"));
    const RunResult b = run_baseline(held.split, corpus.kb, cfg, style, seed);
    rows.push_back(tag(eval_ood(b.bundle, corpus.kb, corpus.split.test, held.split.held_out_bslots, freq, cfg.task,
                                cfg.top_k),
                       "baseline"));
  }
  return rows;
}

std::string ood_csv(std::span<const OodRow> rows) {
  std::string out = "model,seed,partition,bslot_acc,value_acc,n_examples,partial\n";
  for (const auto& r : rows)
    for (const auto& [name, rep] : {std::pair<const char*, const EvalReport*>{"in", &r.report.in_distribution},
                                    std::pair<const char*, const EvalReport*>{"ood", &r.report.out_of_distribution}})
      out += r.model + "," + std::to_string(r.seed) + "," + name + "," + fmt(rep->bslot_acc) + "," +
             fmt(rep->value_acc) + "," + std::to_string(rep->n_examples) + "," + (rep->partial ? "1" : "0") + "\n";
  return out;
}

// --- reports -------------------------------------------------------------------

std::string per_bslot_csv(const EvalReport& report) {
  std::string out = "bslot,train_freq,test_count,accuracy\n";
  for (const auto& r : report.per_bslot)
    out += r.bslot + "," + std::to_string(r.train_freq) + "," + std::to_string(r.test_count) + "," +
           opt_fmt(r.accuracy) + "\n";
  return out;
}

void write_text(const std::filesystem::path& path, std::string_view text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write '" + path.string() + "'");
  out << text;
  if (!out) throw InputError("short write to '" + path.string() + "'");
}

nlohmann::json make_manifest(const nlohmann::json& config, std::span<const std::uint64_t> seeds,
                             const Corpus& corpus) {
  std::ostringstream hash;
  hash << std::hex << std::setw(16) << std::setfill('0') << corpus_hash(corpus);
  return {{"config", config},
          {"seeds", std::vector<std::uint64_t>(seeds.begin(), seeds.end())},
          {"build", build_description()},
          {"corpus_hash", hash.str()},
          {"dataset", corpus.dataset},
          {"value_acc_definition", kValueAccDefinition}};
}

std::string_view build_description() { return KADS_BUILD_DESCRIBE; }

}  // namespace kads
