#include "kads/training.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

#include "kads/error.hpp"
#include "kads/log.hpp"
#include "kads/metrics.hpp"

namespace kads {

using ag::Var;

std::string_view stage_name(Stage stage) {
  switch (stage) {
    case Stage::DDM:
      return "DDM";
    case Stage::MLM:
      return "MLM";
    case Stage::AST:
      return "AST";
    case Stage::WD:
      return "WD";
  }
  return "AST";
}

Stage parse_stage(std::string_view name) {
  std::string up(name);
  for (char& c : up) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  for (Stage s : {Stage::DDM, Stage::MLM, Stage::AST, Stage::WD})
    if (stage_name(s) == up) return s;
  throw ConfigError("unknown stage '" + std::string(name) + "' (expected ddm, mlm, ast or wd)");
}

// --- config -----------------------------------------------------------------

void TrainConfig::validate() const {
  optim.validate();
  if (top_k < 1) throw ConfigError("top_k must be >= 1");
  if (!(freeze_prob >= 0.0 && freeze_prob <= 1.0)) throw ConfigError("freeze_prob must lie in [0, 1]");
  if (!(mask_rate > 0.0 && mask_rate <= 1.0)) throw ConfigError("mask_rate must lie in (0, 1]");
  if (max_steps < 1) throw ConfigError("max_steps must be >= 1");
  if (eval_every < 1) throw ConfigError("eval_every must be >= 1");
  if (stop_doc_acc && !(*stop_doc_acc > 0.0 && *stop_doc_acc <= 1.0))
    throw ConfigError("stop_doc_acc must lie in (0, 1]");
}

TrainConfig TrainConfig::desk_scale(Stage stage) {
  TrainConfig c;
  c.stage = stage;
  c.optim = OptimConfig::desk_scale();
  return c;
}

TrainConfig TrainConfig::reference_scale(Stage stage) {
  TrainConfig c = desk_scale(stage);
  c.optim = OptimConfig::reference_scale();
  return c;
}

nlohmann::json TrainConfig::to_json() const {
  nlohmann::json j = {{"stage", stage_name(stage)},
                      {"top_k", top_k},
                      {"freeze_prob", freeze_prob},
                      {"mask_rate", mask_rate},
                      {"optim",
                       {{"learning_rate", optim.learning_rate},
                        {"beta1", optim.beta1},
                        {"beta2", optim.beta2},
                        {"epsilon", optim.epsilon},
                        {"weight_decay", optim.weight_decay},
                        {"batch_size", optim.batch_size}}},
                      {"max_steps", max_steps},
                      {"eval_every", eval_every},
                      {"seed", seed},
                      {"require_warmup", require_warmup},
                      {"eval_limit", eval_limit}};
  if (stop_doc_acc) j["stop_doc_acc"] = *stop_doc_acc;
  return j;
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  static const std::set<std::string> kKeys = {"preset",    "stage",     "top_k", "freeze_prob",    "mask_rate",
                                              "optim",     "max_steps", "eval_every", "seed",      "require_warmup",
                                              "eval_limit", "stop_doc_acc"};
  static const std::set<std::string> kOptimKeys = {"learning_rate", "beta1",        "beta2",
                                                   "epsilon",       "weight_decay", "batch_size"};
  if (!j.is_object()) throw ConfigError("train config must be a JSON object");
  for (const auto& [key, _] : j.items())
    if (!kKeys.count(key)) throw ConfigError("unknown train config key '" + key + "'");
  try {
    const Stage stage = parse_stage(j.value("stage", std::string("AST")));
    const std::string preset = j.value("preset", std::string("desk-scale"));
    TrainConfig c;
    if (preset == "desk-scale")
      c = desk_scale(stage);
    else if (preset == "reference-scale")
      c = reference_scale(stage);
    else
      throw ConfigError("unknown preset '" + preset + "' (expected desk-scale or reference-scale)");
    c.top_k = j.value("top_k", c.top_k);
    c.freeze_prob = j.value("freeze_prob", c.freeze_prob);
    c.mask_rate = j.value("mask_rate", c.mask_rate);
    c.max_steps = j.value("max_steps", c.max_steps);
    c.eval_every = j.value("eval_every", c.eval_every);
    c.seed = j.value("seed", c.seed);
    c.require_warmup = j.value("require_warmup", c.require_warmup);
    c.eval_limit = j.value("eval_limit", c.eval_limit);
    if (j.contains("stop_doc_acc")) c.stop_doc_acc = j.at("stop_doc_acc").get<double>();
    if (j.contains("optim")) {
      const auto& o = j.at("optim");
      for (const auto& [key, _] : o.items())
        if (!kOptimKeys.count(key)) throw ConfigError("unknown optim key '" + key + "'");
      c.optim.learning_rate = o.value("learning_rate", c.optim.learning_rate);
      c.optim.beta1 = o.value("beta1", c.optim.beta1);
      c.optim.beta2 = o.value("beta2", c.optim.beta2);
      c.optim.epsilon = o.value("epsilon", c.optim.epsilon);
      c.optim.weight_decay = o.value("weight_decay", c.optim.weight_decay);
      c.optim.batch_size = o.value("batch_size", c.optim.batch_size);
    }
    c.validate();
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed train config: ") + e.what());
  }
}

// --- log --------------------------------------------------------------------

void TrainLog::append(TrainRecord r) {
  if (!records_.empty() && r.step <= records_.back().step)
    throw InternalError("train log steps must strictly increase (" + std::to_string(r.step) + " after " +
                        std::to_string(records_.back().step) + ")");
  records_.push_back(std::move(r));
}

void TrainLog::extend(const TrainLog& other) {
  const std::size_t offset = records_.empty() ? 0 : records_.back().step;
  for (TrainRecord r : other.records_) {
    r.step += offset;
    append(std::move(r));
  }
}

bool TrainLog::contains_stage(Stage stage) const {
  return std::any_of(records_.begin(), records_.end(), [&](const TrainRecord& r) { return r.stage == stage; });
}

std::string TrainLog::to_csv() const {
  std::ostringstream out;
  out << std::setprecision(10);
  out << "step,stage,loss,frozen,doc_acc,bslot_acc,value_acc\n";
  auto opt = [&out](const std::optional<double>& v) {
    if (v) out << *v;
  };
  for (const auto& r : records_) {
    out << r.step << ',' << stage_name(r.stage) << ',' << r.loss << ',' << (r.frozen ? 1 : 0) << ',';
    opt(r.doc_acc);
    out << ',';
    opt(r.bslot_acc);
    out << ',';
    opt(r.value_acc);
    out << '\n';
  }
  return out.str();
}

void TrainLog::write_csv(const std::filesystem::path& path) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw InputError("cannot write train log '" + path.string() + "'");
  out << to_csv();
}

// --- primitives -------------------------------------------------------------

bool freeze_mask_sample(Rng& rng, double freeze_prob) {
  const bool draw = rng.bernoulli(freeze_prob);
  if (freeze_prob >= 1.0) return true;
  if (freeze_prob <= 0.0) return false;
  return draw;
}

std::vector<Dialogue> filter_mlm_dialogues(std::span<const Dialogue> dialogues, const KnowledgeBase& kb) {
  std::vector<std::set<std::string>> doc_sets;
  for (const auto& doc : kb.documents()) doc_sets.emplace_back(doc.bslots.begin(), doc.bslots.end());
  std::vector<Dialogue> kept;
  for (const auto& d : dialogues) {
    const auto mine = d.bslot_set();
    if (mine.empty()) continue;
    const bool covered = std::any_of(doc_sets.begin(), doc_sets.end(), [&](const std::set<std::string>& s) {
      return std::includes(s.begin(), s.end(), mine.begin(), mine.end());
    });
    if (covered) kept.push_back(d);
  }
  if (kept.empty() && !dialogues.empty()) log::warn("MLM filter kept none of " + std::to_string(dialogues.size()) + " dialogues");
  return kept;
}

Var marginal_loss(ag::Graph& g, const ModelBundle& b, const KnowledgeBase& kb, Var doc_emb, std::string_view context,
                  std::string_view target, std::size_t k, LossOptions opt) {
  const std::vector<int> y = target_ids(target, b.vocab, b.generator_cfg);
  if (!b.uses_retrieval()) {
    const auto input = build_conditioned_input(context, nullptr, b.mode, kb, b.vocab, b.generator_cfg);
    return ag::neg(cond_loglik(g, b.generator, b.generator_cfg, input, y, opt.train_generator));
  }
  if (kb.empty()) throw ConfigError("marginal loss over an empty knowledge base");
  Var q = encode_text(g, b.dialogue_encoder, b.encoder, dialogue_tokens(context, b.vocab), Tower::Dialogue,
                      opt.train_retriever);
  Var scores = ag::matmul(q, doc_emb, true);
  const std::vector<std::size_t> idx = top_k_indices(scores.value().data(), k);
  Var log_prior = ag::log_softmax(ag::gather(scores, idx));
  std::vector<Var> terms;
  terms.reserve(k);
  for (std::size_t j = 0; j < idx.size(); ++j) {
    const auto input = build_conditioned_input(context, &kb[idx[j]], b.mode, kb, b.vocab, b.generator_cfg);
    terms.push_back(
        ag::add(ag::element(log_prior, j), cond_loglik(g, b.generator, b.generator_cfg, input, y, opt.train_generator)));
  }
  return ag::neg(ag::logsumexp(ag::stack(terms)));
}

Var marginal_loss(ag::Graph& g, const ModelBundle& b, const KnowledgeBase& kb, std::string_view context,
                  std::string_view target, std::size_t k) {
  Var doc_emb;
  if (b.uses_retrieval())
    doc_emb = encode_documents(g, b.document_encoder, b.encoder, document_tokens(kb, b.vocab, b.encoder));
  return marginal_loss(g, b, kb, doc_emb, context, target, k);
}

double marginal_loss_value(const ModelBundle& b, const KnowledgeBase& kb, std::string_view context,
                           std::string_view target, std::size_t k) {
  ag::Graph g(false);
  return marginal_loss(g, b, kb, context, target, k).item();
}

namespace {

std::string full_context(const Dialogue& d, ActionStyle style) {
  return serialize_context(d, static_cast<std::ptrdiff_t>(d.turns.size()) - 1, Task::AST, style);
}

}  // namespace

double doc_selection_accuracy(const ModelBundle& b, std::span<const Dialogue> dialogues, const KnowledgeBase& kb,
                              std::size_t limit) {
  if (!b.uses_retrieval()) throw ConfigError("doc selection accuracy needs a retrieving bundle");
  Predictor pred(b, kb);
  std::size_t n = 0, hits = 0;
  for (const auto& d : dialogues) {
    if (limit > 0 && n >= limit) break;
    std::string label;
    try {
      label = overlap_label(d, kb);
    } catch (const LabelError&) {
      continue;
    }
    ++n;
    if (kb[pred.select_document(full_context(d, b.style))].id == label) ++hits;
  }
  return n == 0 ? 0.0 : static_cast<double>(hits) / static_cast<double>(n);
}

namespace {

struct Example {
  std::string context;
  std::string target;
  std::string id;
  std::size_t label = 0;  // DDM only
};

struct BatchGrads {
  GradMap dialogue, document, generator;
  double loss = 0.0;
};

using ExampleLoss = std::function<Var(ag::Graph&, Var doc_emb, const Example&)>;

// Sums per-example gradients in example order. Document embeddings are built
// once on a shared graph; each example sees them as a leaf and the summed
// leaf gradient is pushed back through the document tower in one sweep.
BatchGrads batch_gradients(const ModelBundle& b, const std::vector<std::vector<int>>& doc_tokens,
                           std::span<const Example* const> batch, const ExampleLoss& loss_fn, LossOptions opt) {
  BatchGrads out;
  ag::Graph doc_graph(b.uses_retrieval() && opt.train_retriever);
  Var doc_emb;
  if (b.uses_retrieval()) doc_emb = encode_documents(doc_graph, b.document_encoder, b.encoder, doc_tokens, opt.train_retriever);
  Tensor doc_grad;
  if (b.uses_retrieval()) doc_grad = Tensor::zeros_like(doc_emb.value());

  for (const Example* ex : batch) {
    ag::Graph g;
    Var leaf;
    if (b.uses_retrieval()) leaf = opt.train_retriever ? g.leaf(doc_emb.value()) : g.constant(doc_emb.value());
    Var loss = loss_fn(g, leaf, *ex);
    const double v = loss.item();
    if (!std::isfinite(v)) throw NumericError("non-finite loss on example '" + ex->id + "'");
    out.loss += v;
    g.backward(loss);
    accumulate(out.generator, g.param_grads(b.generator));
    accumulate(out.dialogue, g.param_grads(b.dialogue_encoder));
    if (b.uses_retrieval() && opt.train_retriever)
      if (const Tensor* dg = g.grad(leaf)) doc_grad.add_inplace(*dg);
  }
  if (b.uses_retrieval() && opt.train_retriever) {
    doc_graph.backward(doc_emb, doc_grad);
    out.document = doc_graph.param_grads(b.document_encoder);
  }
  const double inv = 1.0 / static_cast<double>(batch.size());
  scale(out.dialogue, inv);
  scale(out.document, inv);
  scale(out.generator, inv);
  out.loss *= inv;
  return out;
}

void apply(ParamStore& store, const GradMap& grads, const OptimConfig& optim) {
  if (grads.empty()) return;
  adamw_step(store, grads, optim, store.steps() + 1);
}

std::vector<const Example*> sample_batch(const std::vector<Example>& pool, std::size_t batch_size, std::uint64_t seed,
                                         std::size_t step) {
  Rng rng = Rng::stream(seed, "batch", step);
  std::vector<const Example*> batch;
  for (std::size_t i = 0; i < batch_size; ++i) batch.push_back(&pool[rng.below(pool.size())]);
  return batch;
}

std::vector<Example> task_examples(std::span<const Dialogue> dialogues, Stage stage, ActionStyle style) {
  std::vector<Example> out;
  for (const auto& d : dialogues) {
    if (stage == Stage::AST) {
      for (auto& e : make_ast_examples(d, style)) out.push_back({std::move(e.input), std::move(e.target), d.id, 0});
    } else if (d.action_count() > 0) {
      auto e = make_wd_example(d, style);
      out.push_back({std::move(e.input), std::move(e.target), d.id, 0});
    }
  }
  return out;
}

AccuracySummary task_accuracy(const ModelBundle& b, const KnowledgeBase& kb, std::span<const Example> examples,
                              Task task, std::size_t k, std::size_t limit) {
  Predictor pred(b, kb);
  std::vector<ActionScore> scores;
  for (const auto& e : examples) {
    if (limit > 0 && scores.size() >= limit) break;
    scores.push_back(score_actions(pred.predict(e.context, k).text, e.target, task, b.style));
  }
  return summarize(scores);
}

struct Snapshot {
  ParamStore dialogue, document, generator;
};

}  // namespace

StageResult train_ddm(ModelBundle& b, const CorpusSplit& split, const KnowledgeBase& kb, const TrainConfig& cfg) {
  cfg.validate();
  if (cfg.stage != Stage::DDM) throw ConfigError("train_ddm called with stage " + std::string(stage_name(cfg.stage)));
  if (!b.uses_retrieval()) throw ConfigError("DDM needs a retrieving bundle");
  StageResult res;
  std::vector<Example> pool;
  for (const auto& d : split.train) {
    std::string label;
    try {
      label = overlap_label(d, kb);
    } catch (const LabelError&) {
      ++res.skipped;
      continue;
    }
    // The full dialogue plus every prefix ending before an action, which is
    // what retrieval sees during action prediction.
    pool.push_back({full_context(d, b.style), {}, d.id, *kb.index_of(label)});
    for (auto& e : make_ast_examples(d, b.style)) {
      if (e.input.empty()) continue;
      const auto at = intent_at(d, e.turn_index);
      const auto index = kb.index_of(at ? *at : label);
      if (index) pool.push_back({std::move(e.input), {}, d.id, *index});
    }
  }
  if (res.skipped > 0) log::warn("DDM skipped " + std::to_string(res.skipped) + " unlabeled dialogues");
  if (pool.empty()) throw ConfigError("DDM has no labeled training dialogues");

  const auto doc_tokens = document_tokens(kb, b.vocab, b.encoder);
  const ExampleLoss loss_fn = [&](ag::Graph& g, Var doc_emb, const Example& ex) {
    Var q = encode_text(g, b.dialogue_encoder, b.encoder, dialogue_tokens(ex.context, b.vocab), Tower::Dialogue);
    const int label = static_cast<int>(ex.label);
    return ag::cross_entropy(ag::matmul(q, doc_emb, true), std::span<const int>(&label, 1));
  };
  const LossOptions opt{true, false};

  res.initial_doc_acc = doc_selection_accuracy(b, split.dev, kb, cfg.eval_limit);
  for (std::size_t step = 1; step <= cfg.max_steps; ++step) {
    const auto batch = sample_batch(pool, static_cast<std::size_t>(cfg.optim.batch_size), cfg.seed, step);
    BatchGrads grads = batch_gradients(b, doc_tokens, batch, loss_fn, opt);
    apply(b.dialogue_encoder, grads.dialogue, cfg.optim);
    apply(b.document_encoder, grads.document, cfg.optim);
    TrainRecord rec{step, Stage::DDM, grads.loss, false, {}, {}, {}};
    res.steps_run = step;
    const bool tick = step % cfg.eval_every == 0 || step == cfg.max_steps;
    if (tick) {
      rec.doc_acc = doc_selection_accuracy(b, split.dev, kb, cfg.eval_limit);
      res.final_doc_acc = rec.doc_acc;
      log::debug("DDM step " + std::to_string(step) + " loss " + std::to_string(grads.loss) + " dev doc acc " +
                 std::to_string(*rec.doc_acc));
    }
    res.log.append(rec);
    if (tick && cfg.stop_doc_acc && *rec.doc_acc >= *cfg.stop_doc_acc) break;
  }
  if (!res.final_doc_acc) res.final_doc_acc = doc_selection_accuracy(b, split.dev, kb, cfg.eval_limit);
  b.stages.emplace_back("DDM");
  return res;
}

StageResult train_mlm(ModelBundle& b, const CorpusSplit& split, const KnowledgeBase& kb, const TrainConfig& cfg) {
  cfg.validate();
  if (cfg.stage != Stage::MLM) throw ConfigError("train_mlm called with stage " + std::string(stage_name(cfg.stage)));
  if (cfg.require_warmup && b.uses_retrieval() && !b.has_stage("DDM"))
    throw ConfigError("MLM requires a DDM-warmed bundle (clear require_warmup to override)");
  StageResult res;
  const std::vector<Dialogue> kept = filter_mlm_dialogues(split.train, kb);
  res.skipped = split.train.size() - kept.size();
  if (kept.empty()) throw ConfigError("MLM filter left no training dialogues");

  std::vector<Example> pool;
  for (const auto& d : kept) pool.push_back({{}, {}, d.id, 0});
  const auto doc_tokens = document_tokens(kb, b.vocab, b.encoder);
  const std::size_t k = std::min(cfg.top_k, kb.size());
  const std::size_t batch_size = static_cast<std::size_t>(cfg.optim.batch_size);
  Rng freeze_rng = Rng::stream(cfg.seed, "freeze");

  if (b.uses_retrieval()) res.initial_doc_acc = doc_selection_accuracy(b, split.dev, kb, cfg.eval_limit);
  for (std::size_t step = 1; step <= cfg.max_steps; ++step) {
    const bool frozen = freeze_mask_sample(freeze_rng, cfg.freeze_prob);
    Rng pick = Rng::stream(cfg.seed, "batch", step);
    std::vector<Example> masked;
    for (std::size_t i = 0; i < batch_size; ++i) {
      const Dialogue& d = kept[pick.below(kept.size())];
      Rng mask_rng = Rng::stream(cfg.seed, "mask", step * batch_size + i);
      TextExample m = mask_actions(d, cfg.mask_rate, mask_rng, b.style);
      masked.push_back({std::move(m.input), std::move(m.target), d.id, 0});
    }
    std::vector<const Example*> batch;
    for (const auto& e : masked) batch.push_back(&e);
    const LossOptions opt{true, !frozen};
    const ExampleLoss loss_fn = [&](ag::Graph& g, Var doc_emb, const Example& ex) {
      return marginal_loss(g, b, kb, doc_emb, ex.context, ex.target, k, opt);
    };
    BatchGrads grads = batch_gradients(b, doc_tokens, batch, loss_fn, opt);
    apply(b.dialogue_encoder, grads.dialogue, cfg.optim);
    apply(b.document_encoder, grads.document, cfg.optim);
    if (!frozen) apply(b.generator, grads.generator, cfg.optim);
    if (frozen) ++res.frozen_steps;
    TrainRecord rec{step, Stage::MLM, grads.loss, frozen, {}, {}, {}};
    res.steps_run = step;
    if (b.uses_retrieval() && (step % cfg.eval_every == 0 || step == cfg.max_steps)) {
      rec.doc_acc = doc_selection_accuracy(b, split.dev, kb, cfg.eval_limit);
      res.final_doc_acc = rec.doc_acc;
      log::debug("MLM step " + std::to_string(step) + " loss " + std::to_string(grads.loss) + " dev doc acc " +
                 std::to_string(*rec.doc_acc));
    }
    res.log.append(rec);
  }
  b.stages.emplace_back("MLM");
  return res;
}

StageResult train_task(ModelBundle& b, const CorpusSplit& split, const KnowledgeBase& kb, const TrainConfig& cfg) {
  cfg.validate();
  if (cfg.stage != Stage::AST && cfg.stage != Stage::WD)
    throw ConfigError("train_task called with stage " + std::string(stage_name(cfg.stage)));
  const Task task = cfg.stage == Stage::AST ? Task::AST : Task::WD;
  StageResult res;
  const std::vector<Example> pool = task_examples(split.train, cfg.stage, b.style);
  if (pool.empty()) throw ConfigError("no training examples for " + std::string(stage_name(cfg.stage)));
  const std::vector<Example> dev = task_examples(split.dev, cfg.stage, b.style);
  const auto doc_tokens = document_tokens(kb, b.vocab, b.encoder);
  const std::size_t k = std::min(cfg.top_k, kb.size());
  const LossOptions opt{true, true};
  const ExampleLoss loss_fn = [&](ag::Graph& g, Var doc_emb, const Example& ex) {
    return marginal_loss(g, b, kb, doc_emb, ex.context, ex.target, k, opt);
  };

  std::optional<Snapshot> best;
  double best_acc = -1.0;
  for (std::size_t step = 1; step <= cfg.max_steps; ++step) {
    const auto batch = sample_batch(pool, static_cast<std::size_t>(cfg.optim.batch_size), cfg.seed, step);
    BatchGrads grads = batch_gradients(b, doc_tokens, batch, loss_fn, opt);
    apply(b.dialogue_encoder, grads.dialogue, cfg.optim);
    apply(b.document_encoder, grads.document, cfg.optim);
    apply(b.generator, grads.generator, cfg.optim);
    TrainRecord rec{step, cfg.stage, grads.loss, false, {}, {}, {}};
    res.steps_run = step;
    if (step % cfg.eval_every == 0 || step == cfg.max_steps) {
      const auto& scored = dev.empty() ? pool : dev;
      const AccuracySummary acc = task_accuracy(b, kb, scored, task, k, cfg.eval_limit);
      rec.bslot_acc = acc.bslot_acc;
      rec.value_acc = acc.value_acc;
      if (b.uses_retrieval()) rec.doc_acc = doc_selection_accuracy(b, split.dev, kb, cfg.eval_limit);
      log::debug(std::string(stage_name(cfg.stage)) + " step " + std::to_string(step) + " loss " +
                 std::to_string(grads.loss) + " dev bslot acc " + std::to_string(acc.bslot_acc));
      if (acc.bslot_acc > best_acc) {
        best_acc = acc.bslot_acc;
        best = Snapshot{b.dialogue_encoder, b.document_encoder, b.generator};
      }
    }
    res.log.append(rec);
  }
  if (best) {
    b.dialogue_encoder = std::move(best->dialogue);
    b.document_encoder = std::move(best->document);
    b.generator = std::move(best->generator);
    // Restored copies keep their old version tags; retag so caches notice.
    b.dialogue_encoder.touch();
    b.document_encoder.touch();
    b.generator.touch();
  }
  res.best_bslot_acc = best_acc;
  if (b.uses_retrieval()) res.final_doc_acc = doc_selection_accuracy(b, split.dev, kb, cfg.eval_limit);
  b.stages.emplace_back(stage_name(cfg.stage));
  return res;
}

StageResult train_stage(ModelBundle& b, const CorpusSplit& split, const KnowledgeBase& kb, const TrainConfig& cfg) {
  switch (cfg.stage) {
    case Stage::DDM:
      return train_ddm(b, split, kb, cfg);
    case Stage::MLM:
      return train_mlm(b, split, kb, cfg);
    case Stage::AST:
    case Stage::WD:
      return train_task(b, split, kb, cfg);
  }
  throw InternalError("unhandled stage");
}

}  // namespace kads
