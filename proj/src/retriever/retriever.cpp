#include "kads/retriever.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "kads/error.hpp"
#include "kads/layers.hpp"

namespace kads {

using ag::Var;

void EncoderConfig::validate() const {
  if (n_layers == 0) throw ConfigError("encoder n_layers must be >= 1");
  if (n_heads == 0 || hidden_dim % n_heads != 0)
    throw ConfigError("encoder hidden_dim " + std::to_string(hidden_dim) + " not divisible by n_heads " +
                      std::to_string(n_heads));
  if (max_seq_len < 16) throw ConfigError("encoder max_seq_len must be >= 16");
  if (vocab_size <= static_cast<std::size_t>(Vocab::kNumSpecial)) throw ConfigError("encoder vocab_size too small");
}

EncoderConfig EncoderConfig::desk_scale(std::size_t vocab_size) { return {2, 64, 4, 256, vocab_size}; }

EncoderConfig EncoderConfig::reference_scale(std::size_t vocab_size) { return {4, 512, 8, 512, vocab_size}; }

nlohmann::json EncoderConfig::to_json() const {
  return {{"n_layers", n_layers},
          {"hidden_dim", hidden_dim},
          {"n_heads", n_heads},
          {"max_seq_len", max_seq_len},
          {"vocab_size", vocab_size}};
}

EncoderConfig EncoderConfig::from_json(const nlohmann::json& j) {
  EncoderConfig c;
  try {
    c.n_layers = j.value("n_layers", c.n_layers);
    c.hidden_dim = j.value("hidden_dim", c.hidden_dim);
    c.n_heads = j.value("n_heads", c.n_heads);
    c.max_seq_len = j.value("max_seq_len", c.max_seq_len);
    c.vocab_size = j.value("vocab_size", c.vocab_size);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed encoder config: ") + e.what());
  }
  return c;
}

void init_encoder(ParamStore& store, const EncoderConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(seed);
  nn::init_normal(store, "tok_emb", cfg.vocab_size, cfg.hidden_dim, 1.0, rng);
  nn::init_normal(store, "pos_emb", cfg.max_seq_len, cfg.hidden_dim, 0.5, rng);
  for (std::size_t l = 0; l < cfg.n_layers; ++l) nn::init_encoder_block(store, "block" + std::to_string(l), cfg.hidden_dim, rng);
  nn::init_layer_norm(store, "ln_f", cfg.hidden_dim);
}

std::vector<int> truncate_for(std::span<const int> ids, std::size_t max_len, Tower tower) {
  if (ids.size() <= max_len) return {ids.begin(), ids.end()};
  if (tower == Tower::Dialogue) return {ids.end() - static_cast<std::ptrdiff_t>(max_len), ids.end()};
  return {ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(max_len)};
}

Var encode_text(ag::Graph& g, const ParamStore& store, const EncoderConfig& cfg, std::span<const int> ids, Tower tower,
                bool trainable) {
  if (ids.empty()) throw InputError("cannot embed an empty token sequence");
  const std::vector<int> kept = truncate_for(ids, cfg.max_seq_len, tower);
  for (int id : kept)
    if (id < 0 || static_cast<std::size_t>(id) >= cfg.vocab_size)
      throw VocabError("token id " + std::to_string(id) + " outside encoder vocabulary of " +
                       std::to_string(cfg.vocab_size));
  const nn::Binder p{g, store, trainable};
  std::vector<int> positions(kept.size());
  std::iota(positions.begin(), positions.end(), 0);
  Var x = ag::add(ag::embedding(p("tok_emb"), kept), ag::embedding(p("pos_emb"), positions));
  for (std::size_t l = 0; l < cfg.n_layers; ++l) x = nn::encoder_block(p, "block" + std::to_string(l), x, cfg.n_heads);
  return ag::mean_rows(nn::layer_norm(p, "ln_f", x));
}

Tensor embed_text(const ParamStore& store, const EncoderConfig& cfg, std::span<const int> ids, Tower tower) {
  ag::Graph g(false);
  return encode_text(g, store, cfg, ids, tower, false).value();
}

double relevance(const Tensor& a, const Tensor& b) {
  if (a.size() != b.size()) throw ShapeError("relevance: embedding " + a.shape_str() + " vs " + b.shape_str());
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

namespace {

std::vector<double> softmax_of(std::span<const double> scores) {
  const double mx = *std::max_element(scores.begin(), scores.end());
  std::vector<double> p(scores.size());
  double z = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) z += (p[i] = std::exp(scores[i] - mx));
  for (double& x : p) x /= z;
  return p;
}

}  // namespace

RetrievalDistribution distribution_from_scores(std::span<const double> scores, const KnowledgeBase& kb) {
  if (kb.empty()) throw ConfigError("retrieval over an empty knowledge base");
  if (scores.size() != kb.size())
    throw ShapeError("retrieval: " + std::to_string(scores.size()) + " scores for " + std::to_string(kb.size()) +
                     " documents");
  RetrievalDistribution r;
  r.scores.assign(scores.begin(), scores.end());
  r.probs = softmax_of(scores);
  for (std::size_t i = 0; i < kb.size(); ++i) {
    r.indices.push_back(i);
    r.doc_ids.push_back(kb[i].id);
  }
  return r;
}

std::vector<std::size_t> top_k_indices(std::span<const double> scores, std::size_t k) {
  if (k < 1 || k > scores.size())
    throw ConfigError("top-k: k = " + std::to_string(k) + " outside [1, " + std::to_string(scores.size()) + "]");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  order.resize(k);
  return order;
}

RetrievalDistribution top_k_from_scores(std::span<const double> scores, const KnowledgeBase& kb, std::size_t k) {
  if (kb.empty()) throw ConfigError("retrieval over an empty knowledge base");
  if (scores.size() != kb.size())
    throw ShapeError("retrieval: " + std::to_string(scores.size()) + " scores for " + std::to_string(kb.size()) +
                     " documents");
  RetrievalDistribution r;
  r.indices = top_k_indices(scores, k);
  for (std::size_t i : r.indices) {
    r.scores.push_back(scores[i]);
    r.doc_ids.push_back(kb[i].id);
  }
  r.probs = softmax_of(r.scores);
  return r;
}

std::vector<std::vector<int>> document_tokens(const KnowledgeBase& kb, const Vocab& vocab, const EncoderConfig& cfg) {
  std::vector<std::vector<int>> out;
  for (const auto& doc : kb.documents())
    out.push_back(truncate_for(vocab.encode(render_document(doc)), cfg.max_seq_len, Tower::Document));
  return out;
}

Var encode_documents(ag::Graph& g, const ParamStore& store, const EncoderConfig& cfg,
                     const std::vector<std::vector<int>>& doc_tokens, bool trainable) {
  std::vector<Var> rows;
  rows.reserve(doc_tokens.size());
  for (const auto& ids : doc_tokens) rows.push_back(encode_text(g, store, cfg, ids, Tower::Document, trainable));
  return ag::concat_rows(rows);
}

Retriever::Retriever(const EncoderConfig& cfg, const ParamStore& dialogue, const ParamStore& document,
                     const Vocab& vocab, const KnowledgeBase& kb, bool use_cache)
    : cfg_(cfg),
      dialogue_(dialogue),
      document_(document),
      kb_(kb),
      doc_tokens_(document_tokens(kb, vocab, cfg)),
      use_cache_(use_cache) {
  if (kb.empty()) throw ConfigError("retriever needs a non-empty knowledge base");
}

const Tensor& Retriever::doc_embeddings() {
  if (!use_cache_ || cached_version_ != document_.version()) {
    ag::Graph g(false);
    cache_ = encode_documents(g, document_, cfg_, doc_tokens_, false).value();
    cached_version_ = document_.version();
  }
  if (cache_.rows() != kb_.size() || cached_version_ != document_.version())
    throw InternalError("document embedding cache is stale");
  return cache_;
}

std::vector<double> Retriever::scores(std::span<const int> dialogue_ids) {
  const Tensor q = embed_text(dialogue_, cfg_, dialogue_ids, Tower::Dialogue);
  const Tensor& d = doc_embeddings();
  std::vector<double> s(kb_.size(), 0.0);
  for (std::size_t i = 0; i < s.size(); ++i)
    for (std::size_t c = 0; c < q.size(); ++c) s[i] += q[c] * d.at(i, c);
  return s;
}

RetrievalDistribution Retriever::retrieval_distribution(std::span<const int> dialogue_ids) {
  return distribution_from_scores(scores(dialogue_ids), kb_);
}

RetrievalDistribution Retriever::top_k_retrieve(std::span<const int> dialogue_ids, std::size_t k) {
  return top_k_from_scores(scores(dialogue_ids), kb_, k);
}

}  // namespace kads
