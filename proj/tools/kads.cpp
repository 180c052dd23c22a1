// Command-line entry point: corpus generation and ingestion, staged training,
// evaluation, and the experiment suites.
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "kads/error.hpp"
#include "kads/evaluation.hpp"
#include "kads/log.hpp"

namespace fs = std::filesystem;
using namespace kads;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitInvalid = 1;
constexpr int kExitRuntime = 2;

nlohmann::json read_json(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open '" + path.string() + "'");
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError("'" + path.string() + "' is not valid JSON: " + e.what());
  }
}

// Normalized corpus files carry their dataset tag; an explicit schema wins.
Corpus read_corpus(const fs::path& path, const std::string& schema) {
  if (!schema.empty()) return load_corpus(path, parse_schema(schema));
  const nlohmann::json j = read_json(path);
  const std::string tag = j.is_object() ? j.value("dataset", std::string("synthetic")) : "synthetic";
  return load_corpus(path, parse_schema(tag));
}

std::vector<std::uint64_t> seeds_or_default(std::vector<std::uint64_t> seeds) {
  if (seeds.empty()) seeds = {1, 2, 3};
  return seeds;
}

void write_manifest(const fs::path& dir, const nlohmann::json& config, std::span<const std::uint64_t> seeds,
                    const Corpus& corpus, nlohmann::json extra = nlohmann::json::object()) {
  nlohmann::json m = make_manifest(config, seeds, corpus);
  m.update(extra);
  write_text(dir / "manifest.json", m.dump(2) + "\n");
}

// --- synth -----------------------------------------------------------------------

struct SynthArgs {
  std::size_t docs = 20;
  std::size_t dialogues = 2000;
  std::size_t vocab = 60;
  std::uint64_t seed = 1;
  std::string out;
};

void run_synth(const SynthArgs& a) {
  const Corpus c = synth_corpus(a.docs, a.dialogues, a.vocab, a.seed);
  save_corpus(c, a.out);
  std::cout << "wrote " << a.out << ": " << c.kb.size() << " documents, " << c.split.train.size() << "/"
            << c.split.dev.size() << "/" << c.split.test.size() << " train/dev/test dialogues\n";
}

// --- ingest ----------------------------------------------------------------------

struct IngestArgs {
  std::string schema;
  std::string input;
  std::string out;
};

void run_ingest(const IngestArgs& a) {
  const Corpus c = load_corpus(a.input, parse_schema(a.schema));
  save_corpus(c, a.out);
  std::cout << "wrote " << a.out << " (corpus hash " << std::hex << corpus_hash(c) << std::dec << ")\n";
}

// --- train -----------------------------------------------------------------------

struct TrainArgs {
  std::string stage;
  std::string config;
  std::string model_config;
  std::string corpus;
  std::string schema;
  std::string init;
  std::string mode = "retrieved";
  std::string out;
  std::optional<double> holdout;
  std::uint64_t holdout_seed = 1;
  std::optional<std::uint64_t> seed;
};

void run_train(const TrainArgs& a) {
  nlohmann::json cfg_json = a.config.empty() ? nlohmann::json::object() : read_json(a.config);
  if (!a.stage.empty()) cfg_json["stage"] = a.stage;
  if (a.seed) cfg_json["seed"] = *a.seed;
  const TrainConfig cfg = TrainConfig::from_json(cfg_json);
  cfg.validate();

  const Corpus corpus = read_corpus(a.corpus, a.schema);
  CorpusSplit split = corpus.split;
  nlohmann::json extra = nlohmann::json::object();
  if (a.holdout) {
    HoldoutResult held = holdout_split(corpus.split, *a.holdout, a.holdout_seed);
    if (held.train_emptied) throw ConfigError("holdout removed every training dialogue");
    split = std::move(held.split);
    extra["held_out_bslots"] = split.held_out_bslots;
    extra["holdout_fraction"] = *a.holdout;
    extra["holdout_seed"] = a.holdout_seed;
  }

  ModelBundle bundle = [&] {
    if (!a.init.empty()) return load_bundle(a.init);
    const ActionStyle style = action_style_for(corpus.dataset);
    Vocab vocab = Vocab::build(split, corpus.kb, style);
    EncoderConfig enc = EncoderConfig::desk_scale(vocab.size());
    GenConfig gen = GenConfig::desk_scale(vocab.size());
    if (!a.model_config.empty()) {
      const nlohmann::json m = read_json(a.model_config);
      for (const auto& [key, _] : m.items())
        if (key != "encoder" && key != "generator") throw ConfigError("unknown model config key '" + key + "'");
      if (m.contains("encoder")) {
        nlohmann::json e = enc.to_json();
        e.update(m.at("encoder"));
        enc = EncoderConfig::from_json(e);
      }
      if (m.contains("generator")) {
        nlohmann::json g = gen.to_json();
        g.update(m.at("generator"));
        gen = GenConfig::from_json(g);
      }
      enc.vocab_size = gen.vocab_size = vocab.size();
    }
    return make_bundle(std::move(vocab), enc, gen, parse_input_mode(a.mode), style, cfg.seed);
  }();

  const StageResult r = train_stage(bundle, split, corpus.kb, cfg);
  const fs::path dir(a.out);
  fs::create_directories(dir);
  save_bundle(bundle, dir / "best.ckpt");
  r.log.write_csv(dir / "trainlog.csv");
  const std::vector<std::uint64_t> seeds = {cfg.seed};
  write_manifest(dir, cfg.to_json(), seeds, corpus, extra);
  std::cout << stage_name(cfg.stage) << ": " << r.steps_run << " steps";
  if (r.final_doc_acc) std::cout << ", dev doc_acc " << *r.final_doc_acc;
  if (r.best_bslot_acc) std::cout << ", best dev bslot_acc " << *r.best_bslot_acc;
  std::cout << "\nwrote " << (dir / "best.ckpt").string() << "\n";
}

// --- eval ------------------------------------------------------------------------

struct EvalArgs {
  std::string task = "ast";
  std::string model;
  std::string corpus;
  std::string schema;
  std::string split = "test";
  std::string out;
  std::size_t top_k = 5;
};

void run_eval(const EvalArgs& a) {
  const Task task = parse_task(a.task);
  const Corpus corpus = read_corpus(a.corpus, a.schema);
  const ModelBundle bundle = load_bundle(a.model);
  const std::vector<Dialogue>* part = a.split == "test" ? &corpus.split.test
                                      : a.split == "dev" ? &corpus.split.dev
                                                         : nullptr;
  if (!part) throw ConfigError("--split must be dev or test");
  const fs::path dir = a.out.empty() ? fs::path(a.model).parent_path() : fs::path(a.out);

  // A manifest written by a holdout training run names the held-out b-slots.
  std::set<std::string> held_out;
  nlohmann::json train_manifest;
  if (fs::exists(fs::path(a.model).parent_path() / "manifest.json")) {
    train_manifest = read_json(fs::path(a.model).parent_path() / "manifest.json");
    if (train_manifest.contains("held_out_bslots"))
      held_out = train_manifest.at("held_out_bslots").get<std::set<std::string>>();
  }
  CorpusSplit train_view = corpus.split;
  if (!held_out.empty())
    train_view = holdout_split(corpus.split, train_manifest.at("holdout_fraction").get<double>(),
                               train_manifest.at("holdout_seed").get<std::uint64_t>())
                     .split;
  const auto freq = bslot_frequencies(train_view.train);
  const std::vector<std::uint64_t> seeds = train_manifest.contains("seeds")
                                               ? train_manifest.at("seeds").get<std::vector<std::uint64_t>>()
                                               : std::vector<std::uint64_t>{};

  EvalReport report =
      eval_action_accuracy(bundle, corpus.kb, examples_for(*part, task, bundle.style), task, freq, a.top_k);
  report.dataset = corpus.dataset;
  report.model = fs::path(a.model).parent_path().filename().string();
  report.seeds = seeds;
  if (bundle.uses_retrieval())
    report.doc_selection_acc = eval_doc_selection(bundle, *part, corpus.kb, doc_style_for(corpus.dataset));

  std::string csv = "# " + std::string(kValueAccDefinition) + "\n" + EvalReport::csv_header() + "\n" + report.csv_row() + "\n";
  nlohmann::json out = report.to_json();
  if (const auto r = freq_acc_correlation(report)) out["freq_acc_correlation"] = *r;
  if (!held_out.empty()) {
    const OodReport ood = eval_ood(bundle, corpus.kb, *part, held_out, freq, task, a.top_k);
    for (auto [name, rep] : {std::pair<std::string, EvalReport>{"in", ood.in_distribution},
                             std::pair<std::string, EvalReport>{"ood", ood.out_of_distribution}}) {
      rep.dataset = corpus.dataset;
      rep.model = report.model + "/" + name;
      rep.seeds = seeds;
      csv += rep.csv_row() + "\n";
      out[name + "_distribution"] = rep.to_json();
    }
  }
  write_text(dir / "report.csv", csv);
  write_text(dir / "per_bslot.csv", per_bslot_csv(report));
  write_text(dir / "report.json", out.dump(2) + "\n");
  write_text(dir / "eval_manifest.json",
             make_manifest({{"task", a.task}, {"model", a.model}, {"split", a.split}, {"top_k", a.top_k}}, seeds,
                           corpus)
                     .dump(2) +
                 "\n");
  std::cout << csv;
}

// --- experiment suites -----------------------------------------------------------

struct SuiteArgs {
  std::string config;
  std::string corpus;
  std::string schema;
  std::string out;
  std::vector<std::uint64_t> seeds;
  std::vector<std::size_t> sizes = {100, 400, 1600};
  bool ood = false;
};

ExperimentConfig suite_config(const SuiteArgs& a) {
  return a.config.empty() ? ExperimentConfig::desk_scale() : ExperimentConfig::from_json(read_json(a.config));
}

void run_sweep(const SuiteArgs& a) {
  const ExperimentConfig cfg = suite_config(a);
  const Corpus corpus = read_corpus(a.corpus, a.schema);
  const auto seeds = seeds_or_default(a.seeds);
  const fs::path dir(a.out);
  fs::create_directories(dir);
  write_manifest(dir, cfg.to_json(), seeds, corpus, {{"sizes", a.sizes}});
  const SweepResult r = data_efficiency_sweep(corpus, cfg, a.sizes, seeds);
  write_text(dir / "sweep.csv", r.to_csv());
  std::cout << r.to_csv();
}

void run_ablate(const SuiteArgs& a) {
  const ExperimentConfig cfg = suite_config(a);
  const Corpus corpus = read_corpus(a.corpus, a.schema);
  const auto seeds = seeds_or_default(a.seeds);
  const fs::path dir(a.out);
  fs::create_directories(dir);
  write_manifest(dir, cfg.to_json(), seeds, corpus);
  if (a.ood) {
    const auto rows = ood_experiment(corpus, cfg, seeds);
    write_text(dir / "ood.csv", ood_csv(rows));
    std::cout << ood_csv(rows);
    return;
  }
  const auto rows = ablation_suite(corpus, cfg, seeds);
  write_text(dir / "ablation.csv", ablation_csv(rows));
  std::cout << ablation_csv(rows);
}

// --- report ----------------------------------------------------------------------

struct ReportArgs {
  std::vector<std::string> runs;
  std::string out;
};

// Collects report.json files from evaluated run directories into one table
// with a Student-t interval per metric when there are at least two runs.
void run_report(const ReportArgs& a) {
  std::vector<double> bslot, value;
  std::string csv = EvalReport::csv_header() + "\n";
  for (const auto& run : a.runs) {
    const nlohmann::json j = read_json(fs::path(run) / "report.json");
    bslot.push_back(j.at("bslot_acc").get<double>());
    value.push_back(j.at("value_acc").get<double>());
    const auto doc = j.at("doc_selection_acc");
    std::ostringstream row;
    row << j.at("task").get<std::string>() << "," << j.at("dataset").get<std::string>() << ","
        << j.at("model").get<std::string>() << "," << j.at("bslot_acc").get<double>() << ","
        << j.at("value_acc").get<double>() << "," << (doc.is_null() ? std::string() : std::to_string(doc.get<double>()))
        << "," << j.at("n_examples").get<std::size_t>() << ",";
    for (std::size_t i = 0; i < j.at("seeds").size(); ++i) row << (i ? " " : "") << j.at("seeds")[i].get<std::uint64_t>();
    row << "," << (j.at("partial").get<bool>() ? 1 : 0);
    csv += row.str() + "\n";
  }
  std::ostringstream summary;
  summary << "runs," << a.runs.size() << "\n";
  if (a.runs.size() >= 2) {
    const MeanCi b = mean_ci95(bslot), v = mean_ci95(value);
    summary << "bslot_acc_mean," << b.mean << "\nbslot_acc_ci95," << b.halfwidth << "\nvalue_acc_mean," << v.mean
            << "\nvalue_acc_ci95," << v.halfwidth << "\n";
  }
  std::cout << csv << summary.str();
  if (!a.out.empty()) {
    write_text(fs::path(a.out) / "summary.csv", csv);
    write_text(fs::path(a.out) / "summary_stats.csv", summary.str());
  }
}

std::vector<std::uint64_t> parse_u64_list(const std::string& s) {
  std::vector<std::uint64_t> out;
  std::stringstream ss(s);
  for (std::string item; std::getline(ss, item, ',');) out.push_back(std::stoull(item));
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Knowledge-augmented dialogue system: training, evaluation and experiment suites"};
  app.require_subcommand(1);
  std::string log_level;
  app.add_option("--log", log_level, "Log threshold")->check(CLI::IsMember({"debug", "info", "warn", "error", "off"}));

  SynthArgs synth;
  auto* synth_cmd = app.add_subcommand("synth", "Generate a synthetic corpus");
  synth_cmd->add_option("--docs", synth.docs, "Number of documents");
  synth_cmd->add_option("--dialogues", synth.dialogues, "Number of dialogues");
  synth_cmd->add_option("--vocab", synth.vocab, "Number of distinct b-slots");
  synth_cmd->add_option("--seed", synth.seed, "Generator seed");
  synth_cmd->add_option("-o,--output", synth.out, "Output corpus file")->required();

  IngestArgs ingest;
  auto* ingest_cmd = app.add_subcommand("ingest", "Validate and normalize a corpus file");
  ingest_cmd->add_option("--schema", ingest.schema, "abcd, sgd or synthetic")->required();
  ingest_cmd->add_option("-i,--input", ingest.input, "Input corpus file")->required()->check(CLI::ExistingFile);
  ingest_cmd->add_option("-o,--output", ingest.out, "Output corpus file")->required();

  TrainArgs train;
  auto* train_cmd = app.add_subcommand("train", "Run one training stage");
  train_cmd->add_option("--stage", train.stage, "ddm, mlm, ast or wd (overrides the config)");
  train_cmd->add_option("--config", train.config, "Train config JSON")->check(CLI::ExistingFile);
  train_cmd->add_option("--model-config", train.model_config, "Encoder/generator sizes for a fresh model")
      ->check(CLI::ExistingFile);
  train_cmd->add_option("--corpus", train.corpus, "Normalized corpus file")->required()->check(CLI::ExistingFile);
  train_cmd->add_option("--schema", train.schema, "Corpus schema (default: the file's dataset tag)");
  train_cmd->add_option("--init", train.init, "Checkpoint to continue from")->check(CLI::ExistingFile);
  train_cmd->add_option("--mode", train.mode, "retrieved, none or static (fresh models only)");
  train_cmd->add_option("--holdout", train.holdout, "Hold out this fraction of b-slots from training");
  train_cmd->add_option("--seed", train.seed, "Run seed (overrides the config)");
  train_cmd->add_option("--holdout-seed", train.holdout_seed, "Seed of the b-slot holdout");
  train_cmd->add_option("-o,--output", train.out, "Run directory")->required();

  EvalArgs eval;
  auto* eval_cmd = app.add_subcommand("eval", "Score a checkpoint");
  eval_cmd->add_option("--task", eval.task, "ast or wd");
  eval_cmd->add_option("--model", eval.model, "Checkpoint")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--corpus", eval.corpus, "Normalized corpus file")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--schema", eval.schema, "Corpus schema (default: the file's dataset tag)");
  eval_cmd->add_option("--split", eval.split, "dev or test");
  eval_cmd->add_option("--top-k", eval.top_k, "Documents in the reported provenance");
  eval_cmd->add_option("-o,--output", eval.out, "Report directory (default: the checkpoint's directory)");

  SuiteArgs sweep;
  std::string sweep_seeds, sweep_sizes;
  auto* sweep_cmd = app.add_subcommand("sweep", "Data-efficiency sweep against the un-augmented baseline");
  sweep_cmd->add_option("--config", sweep.config, "Experiment config JSON")->check(CLI::ExistingFile);
  sweep_cmd->add_option("--corpus", sweep.corpus, "Normalized corpus file")->required()->check(CLI::ExistingFile);
  sweep_cmd->add_option("--schema", sweep.schema, "Corpus schema (default: the file's dataset tag)");
  sweep_cmd->add_option("--seeds", sweep_seeds, "Comma-separated seeds (default 1,2,3)");
  sweep_cmd->add_option("--sizes", sweep_sizes, "Comma-separated train sizes (default 100,400,1600)");
  sweep_cmd->add_option("-o,--output", sweep.out, "Output directory")->required();

  SuiteArgs ablate;
  std::string ablate_seeds;
  auto* ablate_cmd = app.add_subcommand("ablate", "Pretraining ablations, or the b-slot holdout experiment");
  ablate_cmd->add_option("--config", ablate.config, "Experiment config JSON")->check(CLI::ExistingFile);
  ablate_cmd->add_option("--corpus", ablate.corpus, "Normalized corpus file")->required()->check(CLI::ExistingFile);
  ablate_cmd->add_option("--schema", ablate.schema, "Corpus schema (default: the file's dataset tag)");
  ablate_cmd->add_option("--seeds", ablate_seeds, "Comma-separated seeds (default 1,2,3)");
  ablate_cmd->add_flag("--ood", ablate.ood, "Compare against the baseline on held-out b-slots instead");
  ablate_cmd->add_option("-o,--output", ablate.out, "Output directory")->required();

  ReportArgs report;
  auto* report_cmd = app.add_subcommand("report", "Summarize evaluated run directories");
  report_cmd->add_option("runs", report.runs, "Directories holding report.json")->required()->check(CLI::ExistingDirectory);
  report_cmd->add_option("-o,--output", report.out, "Directory for summary files");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    std::cerr << app.help();
    return kExitInvalid;
  }

  try {
    if (!log_level.empty()) {
      static const std::map<std::string, log::Level> levels = {{"debug", log::Level::Debug}, {"info", log::Level::Info},
                                                               {"warn", log::Level::Warn},   {"error", log::Level::Error},
                                                               {"off", log::Level::Off}};
      log::set_threshold(levels.at(log_level));
    }
    if (*synth_cmd) run_synth(synth);
    if (*ingest_cmd) run_ingest(ingest);
    if (*train_cmd) run_train(train);
    if (*eval_cmd) run_eval(eval);
    if (*sweep_cmd) {
      if (!sweep_seeds.empty()) sweep.seeds = parse_u64_list(sweep_seeds);
      if (!sweep_sizes.empty()) {
        sweep.sizes.clear();
        for (auto s : parse_u64_list(sweep_sizes)) sweep.sizes.push_back(static_cast<std::size_t>(s));
      }
      run_sweep(sweep);
    }
    if (*ablate_cmd) {
      if (!ablate_seeds.empty()) ablate.seeds = parse_u64_list(ablate_seeds);
      run_ablate(ablate);
    }
    if (*report_cmd) run_report(report);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitInvalid;
  } catch (const ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitInvalid;
  } catch (const IntegrityError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitInvalid;
  } catch (const InputError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitInvalid;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: malformed number list: " << e.what() << "\n";
    return kExitInvalid;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitOk;
}
