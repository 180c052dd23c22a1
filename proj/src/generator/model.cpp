#include "kads/model.hpp"

#include <algorithm>

#include "kads/checkpoint.hpp"
#include "kads/error.hpp"

namespace kads {
namespace {

std::string_view style_name(ActionStyle s) { return s == ActionStyle::Colon ? "colon" : "space"; }

ActionStyle parse_style(std::string_view s) {
  if (s == "colon") return ActionStyle::Colon;
  if (s == "space") return ActionStyle::Space;
  throw ParseError("unknown action style '" + std::string(s) + "'");
}

nlohmann::json config_json(const ModelBundle& b) {
  return {{"encoder", b.encoder.to_json()},
          {"generator", b.generator_cfg.to_json()},
          {"mode", input_mode_name(b.mode)},
          {"style", style_name(b.style)}};
}

}  // namespace

std::uint64_t ModelBundle::config_hash() const { return fnv1a(config_json(*this).dump()); }

bool ModelBundle::has_stage(std::string_view stage) const {
  return std::find(stages.begin(), stages.end(), stage) != stages.end();
}

ModelBundle make_bundle(Vocab vocab, EncoderConfig encoder, GenConfig generator, InputMode mode, ActionStyle style,
                        std::uint64_t seed) {
  ModelBundle b;
  encoder.vocab_size = vocab.size();
  generator.vocab_size = vocab.size();
  b.vocab = std::move(vocab);
  b.encoder = encoder;
  b.generator_cfg = generator;
  b.mode = mode;
  b.style = style;
  init_encoder(b.dialogue_encoder, encoder, Rng::stream(seed, "init.dialogue").next_u64());
  init_encoder(b.document_encoder, encoder, Rng::stream(seed, "init.document").next_u64());
  init_generator(b.generator, generator, Rng::stream(seed, "init.generator").next_u64());
  return b;
}

void save_bundle(const ModelBundle& b, const std::filesystem::path& path) {
  Checkpoint c;
  c.vocab_hash = b.vocab.hash();
  c.config_hash = b.config_hash();
  c.extra = {{"vocab", b.vocab.to_json()}, {"config", config_json(b)}, {"stages", b.stages}};
  c.stores.emplace("dialogue_encoder", b.dialogue_encoder);
  c.stores.emplace("document_encoder", b.document_encoder);
  c.stores.emplace("generator", b.generator);
  write_checkpoint(c, path);
}

ModelBundle load_bundle(const std::filesystem::path& path) {
  Checkpoint c = read_checkpoint(path);
  ModelBundle b;
  try {
    b.vocab = Vocab::from_json(c.extra.at("vocab"));
    const auto& cfg = c.extra.at("config");
    b.encoder = EncoderConfig::from_json(cfg.at("encoder"));
    b.generator_cfg = GenConfig::from_json(cfg.at("generator"));
    b.mode = parse_input_mode(cfg.at("mode").get<std::string>());
    b.style = parse_style(cfg.at("style").get<std::string>());
    b.stages = c.extra.value("stages", std::vector<std::string>{});
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("checkpoint '" + path.string() + "' lacks bundle metadata: " + e.what());
  }
  if (b.vocab.hash() != c.vocab_hash)
    throw IncompatibleError("checkpoint '" + path.string() + "' vocabulary does not match its recorded hash");
  if (b.config_hash() != c.config_hash)
    throw IncompatibleError("checkpoint '" + path.string() + "' config does not match its recorded hash");
  auto take = [&](const char* name) {
    auto it = c.stores.find(name);
    if (it == c.stores.end()) throw ParseError("checkpoint '" + path.string() + "' lacks store '" + name + "'");
    return std::move(it->second);
  };
  b.dialogue_encoder = take("dialogue_encoder");
  b.document_encoder = take("document_encoder");
  b.generator = take("generator");
  return b;
}

std::vector<int> dialogue_tokens(std::string_view context, const Vocab& vocab) {
  std::vector<int> ids = vocab.encode(context);
  if (ids.empty()) ids.push_back(Vocab::kSep);
  return ids;
}

Predictor::Predictor(const ModelBundle& bundle, const KnowledgeBase& kb) : bundle_(bundle), kb_(kb) {
  if (kb.empty()) throw ConfigError("prediction needs a non-empty knowledge base");
  if (bundle.uses_retrieval())
    retriever_ = std::make_unique<Retriever>(bundle.encoder, bundle.dialogue_encoder, bundle.document_encoder,
                                             bundle.vocab, kb);
}

std::size_t Predictor::select_document(std::string_view context) {
  if (!retriever_) throw ConfigError("bundle does not retrieve documents");
  const auto scores = retriever_->scores(dialogue_tokens(context, bundle_.vocab));
  return top_k_indices(scores, 1).front();
}

Prediction Predictor::predict(std::string_view context, std::size_t k) {
  Prediction p;
  const Document* doc = nullptr;
  if (retriever_) {
    p.provenance = retriever_->top_k_retrieve(dialogue_tokens(context, bundle_.vocab), std::min(k, kb_.size()));
    doc = &kb_[p.provenance.indices.front()];
  }
  const auto input = build_conditioned_input(context, doc, bundle_.mode, kb_, bundle_.vocab, bundle_.generator_cfg);
  p.tokens = generate(bundle_.generator, bundle_.generator_cfg, input);
  p.text = bundle_.vocab.decode(p.tokens);
  return p;
}

}  // namespace kads
