#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "kads/generator.hpp"
#include "kads/retriever.hpp"

namespace kads {

// Everything a trained system needs: the two retriever towers, the
// generator, and the shared vocabulary.
struct ModelBundle {
  Vocab vocab;
  EncoderConfig encoder;
  GenConfig generator_cfg;
  InputMode mode = InputMode::Retrieved;
  ActionStyle style = ActionStyle::Colon;
  ParamStore dialogue_encoder;
  ParamStore document_encoder;
  ParamStore generator;
  std::vector<std::string> stages;  // training stages applied so far, in order

  std::uint64_t config_hash() const;
  bool has_stage(std::string_view stage) const;
  bool uses_retrieval() const { return mode == InputMode::Retrieved; }
};

ModelBundle make_bundle(Vocab vocab, EncoderConfig encoder, GenConfig generator, InputMode mode, ActionStyle style,
                        std::uint64_t seed);

void save_bundle(const ModelBundle& bundle, const std::filesystem::path& path);
ModelBundle load_bundle(const std::filesystem::path& path);

// Token ids fed to the dialogue tower; an empty context becomes [SEP].
std::vector<int> dialogue_tokens(std::string_view context, const Vocab& vocab);

struct Prediction {
  std::string text;
  std::vector<int> tokens;
  RetrievalDistribution provenance;  // empty when the bundle does not retrieve
};

// Decodes with the top-1 retrieved document and reports the full top-k
// distribution as provenance.
class Predictor {
 public:
  Predictor(const ModelBundle& bundle, const KnowledgeBase& kb);

  Prediction predict(std::string_view context, std::size_t k);
  // Top-1 retrieved document for a dialogue context.
  std::size_t select_document(std::string_view context);
  Retriever* retriever() { return retriever_.get(); }

 private:
  const ModelBundle& bundle_;
  const KnowledgeBase& kb_;
  std::unique_ptr<Retriever> retriever_;
};

}  // namespace kads
