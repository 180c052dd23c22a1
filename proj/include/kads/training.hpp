#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "kads/model.hpp"
#include "kads/params.hpp"

namespace kads {

enum class Stage { DDM, MLM, AST, WD };
std::string_view stage_name(Stage stage);
Stage parse_stage(std::string_view name);  // case-insensitive

struct TrainConfig {
  Stage stage = Stage::AST;
  std::size_t top_k = 5;
  double freeze_prob = 0.9;
  double mask_rate = 0.5;
  OptimConfig optim;
  std::size_t max_steps = 1000;
  std::size_t eval_every = 100;
  std::uint64_t seed = 0;
  // MLM refuses to start on a bundle without DDM unless this is cleared
  // (the ablation suite clears it).
  bool require_warmup = true;
  // Dev dialogues (DDM/MLM) or examples (AST/WD) scored per eval tick.
  std::size_t eval_limit = 200;
  // DDM stops at the first eval tick reaching this dev accuracy.
  std::optional<double> stop_doc_acc;

  void validate() const;  // throws ConfigError
  static TrainConfig desk_scale(Stage stage);
  static TrainConfig reference_scale(Stage stage);

  nlohmann::json to_json() const;
  // Unknown keys are rejected; "preset" selects the base values.
  static TrainConfig from_json(const nlohmann::json& j);
};

struct TrainRecord {
  std::size_t step = 0;
  Stage stage = Stage::AST;
  double loss = 0.0;
  bool frozen = false;
  std::optional<double> doc_acc;
  std::optional<double> bslot_acc;
  std::optional<double> value_acc;
};

class TrainLog {
 public:
  void append(TrainRecord r);  // steps must strictly increase
  // Appends another log, offsetting its steps past this one's last step.
  void extend(const TrainLog& other);
  const std::vector<TrainRecord>& records() const { return records_; }
  bool contains_stage(Stage stage) const;
  std::string to_csv() const;
  void write_csv(const std::filesystem::path& path) const;

 private:
  std::vector<TrainRecord> records_;
};

struct StageResult {
  TrainLog log;
  std::optional<double> initial_doc_acc;  // dev accuracy before the first update
  std::optional<double> final_doc_acc;
  std::optional<double> best_bslot_acc;
  std::size_t steps_run = 0;
  std::size_t skipped = 0;  // unlabeled dialogues (DDM) or filtered dialogues (MLM)
  std::size_t frozen_steps = 0;
};

// One Bernoulli draw per optimizer step.
bool freeze_mask_sample(Rng& rng, double freeze_prob);

// Dialogues whose b-slot set is contained in some single document's b-slots.
std::vector<Dialogue> filter_mlm_dialogues(std::span<const Dialogue> dialogues, const KnowledgeBase& kb);

struct LossOptions {
  bool train_retriever = true;
  bool train_generator = true;
};

// -log sum_{z in top-k} p(y|X,z) p^(z|X), with p^ renormalized over the top
// k. `doc_emb` is the [|kb|, hidden] document embedding node on `g`. Bundles
// that do not retrieve reduce to -log p(y|X).
ag::Var marginal_loss(ag::Graph& g, const ModelBundle& bundle, const KnowledgeBase& kb, ag::Var doc_emb,
                      std::string_view context, std::string_view target, std::size_t k, LossOptions opt = {});
// Same, with the document embeddings built on `g` as well.
ag::Var marginal_loss(ag::Graph& g, const ModelBundle& bundle, const KnowledgeBase& kb, std::string_view context,
                      std::string_view target, std::size_t k);
double marginal_loss_value(const ModelBundle& bundle, const KnowledgeBase& kb, std::string_view context,
                           std::string_view target, std::size_t k);

// Fraction of dialogues whose top-1 document equals the labeling oracle's.
double doc_selection_accuracy(const ModelBundle& bundle, std::span<const Dialogue> dialogues,
                              const KnowledgeBase& kb, std::size_t limit = 0);

StageResult train_ddm(ModelBundle& bundle, const CorpusSplit& split, const KnowledgeBase& kb, const TrainConfig& cfg);
StageResult train_mlm(ModelBundle& bundle, const CorpusSplit& split, const KnowledgeBase& kb, const TrainConfig& cfg);
StageResult train_task(ModelBundle& bundle, const CorpusSplit& split, const KnowledgeBase& kb,
                       const TrainConfig& cfg);
// Dispatches on cfg.stage.
StageResult train_stage(ModelBundle& bundle, const CorpusSplit& split, const KnowledgeBase& kb,
                        const TrainConfig& cfg);

}  // namespace kads
