#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "kads/autograd.hpp"
#include "kads/corpus.hpp"
#include "kads/vocab.hpp"

namespace kads {

struct EncoderConfig {
  std::size_t n_layers = 2;
  std::size_t hidden_dim = 64;
  std::size_t n_heads = 4;
  std::size_t max_seq_len = 256;
  std::size_t vocab_size = 0;

  void validate() const;  // throws ConfigError
  static EncoderConfig desk_scale(std::size_t vocab_size);
  static EncoderConfig reference_scale(std::size_t vocab_size);  // 4 layers, hidden 512

  nlohmann::json to_json() const;
  static EncoderConfig from_json(const nlohmann::json& j);
  bool operator==(const EncoderConfig&) const = default;
};

enum class Tower { Dialogue, Document };

void init_encoder(ParamStore& store, const EncoderConfig& cfg, std::uint64_t seed);

// Dialogues keep their most recent tokens, documents their leading tokens.
std::vector<int> truncate_for(std::span<const int> ids, std::size_t max_len, Tower tower);

// Transformer encoder, mean-pooled to [1, hidden]. Throws InputError on an
// empty sequence.
ag::Var encode_text(ag::Graph& g, const ParamStore& store, const EncoderConfig& cfg, std::span<const int> ids,
                    Tower tower, bool trainable = true);
Tensor embed_text(const ParamStore& store, const EncoderConfig& cfg, std::span<const int> ids, Tower tower);

double relevance(const Tensor& dialogue_emb, const Tensor& doc_emb);

struct RetrievalDistribution {
  std::vector<std::size_t> indices;  // knowledge-base positions
  std::vector<std::string> doc_ids;
  std::vector<double> probs;
  std::vector<double> scores;
};

RetrievalDistribution distribution_from_scores(std::span<const double> scores, const KnowledgeBase& kb);
// The k highest scores (lower index first on ties), in rank order, with
// probabilities renormalized over the retained set. Throws ConfigError unless
// 1 <= k <= |kb|.
std::vector<std::size_t> top_k_indices(std::span<const double> scores, std::size_t k);
RetrievalDistribution top_k_from_scores(std::span<const double> scores, const KnowledgeBase& kb, std::size_t k);

// Document token ids as fed to the document tower.
std::vector<std::vector<int>> document_tokens(const KnowledgeBase& kb, const Vocab& vocab, const EncoderConfig& cfg);

// Stacked document embeddings [|kb|, hidden] as one graph node.
ag::Var encode_documents(ag::Graph& g, const ParamStore& store, const EncoderConfig& cfg,
                         const std::vector<std::vector<int>>& doc_tokens, bool trainable = true);

// Inference-side retriever over fixed stores. Document embeddings are cached
// and recomputed whenever the document store's version changes.
class Retriever {
 public:
  Retriever(const EncoderConfig& cfg, const ParamStore& dialogue, const ParamStore& document, const Vocab& vocab,
            const KnowledgeBase& kb, bool use_cache = true);

  const Tensor& doc_embeddings();
  std::vector<double> scores(std::span<const int> dialogue_ids);
  RetrievalDistribution retrieval_distribution(std::span<const int> dialogue_ids);
  RetrievalDistribution top_k_retrieve(std::span<const int> dialogue_ids, std::size_t k);

  const KnowledgeBase& kb() const { return kb_; }

 private:
  const EncoderConfig& cfg_;
  const ParamStore& dialogue_;
  const ParamStore& document_;
  const KnowledgeBase& kb_;
  std::vector<std::vector<int>> doc_tokens_;
  bool use_cache_;
  std::optional<std::uint64_t> cached_version_;
  Tensor cache_;
};

}  // namespace kads
