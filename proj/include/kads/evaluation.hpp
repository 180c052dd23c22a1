#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "kads/metrics.hpp"
#include "kads/model.hpp"
#include "kads/training.hpp"

namespace kads {

inline constexpr std::string_view kValueAccDefinition =
    "value_acc = exact value-list matches / positions whose predicted and gold b-slots agree (micro-averaged; "
    "AST positions count only when the whole b-slot sequence matches)";

struct BslotRow {
  std::string bslot;
  std::size_t train_freq = 0;
  std::size_t test_count = 0;          // gold occurrences among the scored examples
  std::optional<double> accuracy;      // empty when test_count is 0
};

struct EvalReport {
  Task task = Task::AST;
  std::string dataset;
  std::string model;
  double bslot_acc = 0.0;
  double value_acc = 0.0;
  std::vector<BslotRow> per_bslot;  // sorted by b-slot
  std::optional<double> doc_selection_acc;
  std::size_t n_examples = 0;
  std::vector<std::uint64_t> seeds;
  bool partial = false;  // set when the scored partition was empty

  nlohmann::json to_json() const;
  static std::string csv_header();
  std::string csv_row() const;
};

std::string_view task_name(Task task);
Task parse_task(std::string_view name);  // "ast" or "wd", case-insensitive

// Action counts per b-slot over the given dialogues.
std::map<std::string, std::size_t> bslot_frequencies(std::span<const Dialogue> dialogues);

std::vector<TextExample> examples_for(std::span<const Dialogue> dialogues, Task task, ActionStyle style);

// Scores top-1-document predictions against each example's gold target.
// Throws ConfigError on an empty example set.
EvalReport eval_action_accuracy(const ModelBundle& bundle, const KnowledgeBase& kb,
                                std::span<const TextExample> examples, Task task,
                                const std::map<std::string, std::size_t>& train_freq, std::size_t top_k = 5);

// Top-1 retrieval accuracy against the style's reference document: the
// overlap oracle over the full interaction (Abcd) or the labeled intent in
// force for each intent segment (Sgd; LabelError when a dialogue has none).
double eval_doc_selection(const ModelBundle& bundle, std::span<const Dialogue> dialogues, const KnowledgeBase& kb,
                          DocStyle style, std::size_t limit = 0);
// Same scoring for any selector mapping a serialized context to a
// knowledge-base index.
using DocSelector = std::function<std::size_t(const std::string& context)>;
double eval_doc_selection(const DocSelector& select, std::span<const Dialogue> dialogues, const KnowledgeBase& kb,
                          DocStyle style, ActionStyle action_style, std::size_t limit = 0);

struct OodReport {
  EvalReport in_distribution;
  EvalReport out_of_distribution;
};

// Partitions test examples by whether the gold target contains a held-out
// b-slot and scores both partitions.
OodReport eval_ood(const ModelBundle& bundle, const KnowledgeBase& kb, std::span<const Dialogue> test,
                   const std::set<std::string>& held_out, const std::map<std::string, std::size_t>& train_freq,
                   Task task, std::size_t top_k = 5);

// Pearson correlation of per-b-slot train frequency and accuracy over rows
// with a defined accuracy. Empty with fewer than 3 rows or zero variance.
std::optional<double> freq_acc_correlation(const EvalReport& report);

struct MeanCi {
  double mean = 0.0;
  double halfwidth = 0.0;  // 95% Student-t interval over the samples
};
// Throws ConfigError for fewer than 2 samples.
MeanCi mean_ci95(std::span<const double> samples);

// --- experiment pipelines ------------------------------------------------------

enum class Pretraining { None, MlmOnly, DdmOnly, Full };
std::string_view pretraining_label(Pretraining p);  // "none", "MLM only", "DDM only", "full"

struct ExperimentConfig {
  EncoderConfig encoder;
  GenConfig generator;
  OptimConfig optim;
  Task task = Task::AST;
  std::size_t top_k = 5;
  std::size_t ddm_steps = 1000;
  std::optional<double> ddm_stop_acc;
  std::size_t mlm_steps = 500;
  double freeze_prob = 0.9;
  double mask_rate = 0.5;
  std::size_t task_steps = 2000;
  std::size_t eval_every = 100;
  std::size_t eval_limit = 150;
  double holdout_fraction = 0.1;  // OOD experiments only

  void validate() const;  // throws ConfigError
  // Small enough for a single CPU core; the acceptance suite uses it.
  static ExperimentConfig desk_scale();
  nlohmann::json to_json() const;
  // Unknown keys are rejected; absent keys keep desk-scale values.
  static ExperimentConfig from_json(const nlohmann::json& j);
};

struct RunResult {
  ModelBundle bundle;
  TrainLog log;
  std::map<std::string, double> doc_acc_after;  // stage name -> dev doc-selection accuracy
};

// Builds a fresh retrieving bundle over the train split's vocabulary and runs
// the selected pretraining stages followed by task fine-tuning.
RunResult run_pipeline(const CorpusSplit& split, const KnowledgeBase& kb, const ExperimentConfig& cfg,
                       Pretraining pretraining, ActionStyle style, std::uint64_t seed);
// The un-augmented generator: no retrieval, task fine-tuning only.
RunResult run_baseline(const CorpusSplit& split, const KnowledgeBase& kb, const ExperimentConfig& cfg,
                       ActionStyle style, std::uint64_t seed);

// Average of reports over seeds: accuracies are means, per-b-slot accuracy is
// averaged where defined, seed lists are concatenated.
EvalReport merge_reports(std::span<const EvalReport> reports);

struct SweepRow {
  std::size_t train_size = 0;
  std::vector<std::uint64_t> seeds;
  MeanCi kads;
  MeanCi baseline;
};

struct SweepResult {
  std::vector<SweepRow> rows;  // train sizes strictly increasing
  std::string to_csv() const;
};

// For every size and seed: subsample the train dialogues, run the full
// pipeline and the baseline, and score AST on the test split. Needs >= 3
// seeds and strictly increasing sizes no larger than the train split.
SweepResult data_efficiency_sweep(const Corpus& corpus, const ExperimentConfig& cfg, std::span<const std::size_t> sizes,
                                  std::span<const std::uint64_t> seeds);

struct AblationRow {
  Pretraining pretraining = Pretraining::None;
  EvalReport report;  // merged over seeds
};

// none / MLM only / DDM only / full with identical seeds and budgets.
std::vector<AblationRow> ablation_suite(const Corpus& corpus, const ExperimentConfig& cfg,
                                        std::span<const std::uint64_t> seeds);
std::string ablation_csv(std::span<const AblationRow> rows);

struct OodRow {
  std::string model;
  std::uint64_t seed = 0;
  OodReport report;
};

// KADS and the baseline on one holdout per seed.
std::vector<OodRow> ood_experiment(const Corpus& corpus, const ExperimentConfig& cfg,
                                   std::span<const std::uint64_t> seeds);
std::string ood_csv(std::span<const OodRow> rows);

// --- reports -------------------------------------------------------------------

std::string per_bslot_csv(const EvalReport& report);
void write_text(const std::filesystem::path& path, std::string_view text);
// Run manifest: config, seeds, build description, and corpus hash.
nlohmann::json make_manifest(const nlohmann::json& config, std::span<const std::uint64_t> seeds,
                             const Corpus& corpus);
std::string_view build_description();

}  // namespace kads
