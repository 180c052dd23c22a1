#include "kads/generator.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "kads/error.hpp"
#include "kads/layers.hpp"

namespace kads {

using ag::Var;

void GenConfig::validate() const {
  if (n_layers == 0) throw ConfigError("generator n_layers must be >= 1");
  if (n_heads == 0 || hidden_dim % n_heads != 0)
    throw ConfigError("generator hidden_dim " + std::to_string(hidden_dim) + " not divisible by n_heads " +
                      std::to_string(n_heads));
  if (max_input_len < 16) throw ConfigError("generator max_input_len must be >= 16");
  if (max_target_len < 2) throw ConfigError("generator max_target_len must be >= 2");
  if (vocab_size <= static_cast<std::size_t>(Vocab::kNumSpecial)) throw ConfigError("generator vocab_size too small");
  if (decode == DecodeMode::Beam && beam_width < 1) throw ConfigError("beam_width must be >= 1");
}

GenConfig GenConfig::desk_scale(std::size_t vocab_size) {
  GenConfig c;
  c.vocab_size = vocab_size;
  return c;
}

GenConfig GenConfig::reference_scale(std::size_t vocab_size) {
  GenConfig c;
  c.n_layers = 4;
  c.hidden_dim = 512;
  c.n_heads = 8;
  c.max_input_len = 512;
  c.max_target_len = 64;
  c.vocab_size = vocab_size;
  return c;
}

nlohmann::json GenConfig::to_json() const {
  return {{"n_layers", n_layers},
          {"hidden_dim", hidden_dim},
          {"n_heads", n_heads},
          {"max_input_len", max_input_len},
          {"max_target_len", max_target_len},
          {"vocab_size", vocab_size},
          {"decode", decode == DecodeMode::Greedy ? "greedy" : "beam"},
          {"beam_width", beam_width},
          {"copy_head", copy_head},
          {"local_window", local_window}};
}

GenConfig GenConfig::from_json(const nlohmann::json& j) {
  GenConfig c;
  try {
    c.n_layers = j.value("n_layers", c.n_layers);
    c.hidden_dim = j.value("hidden_dim", c.hidden_dim);
    c.n_heads = j.value("n_heads", c.n_heads);
    c.max_input_len = j.value("max_input_len", c.max_input_len);
    c.max_target_len = j.value("max_target_len", c.max_target_len);
    c.vocab_size = j.value("vocab_size", c.vocab_size);
    const std::string decode = j.value("decode", std::string("greedy"));
    if (decode == "greedy")
      c.decode = DecodeMode::Greedy;
    else if (decode == "beam")
      c.decode = DecodeMode::Beam;
    else
      throw ConfigError("unknown decode mode '" + decode + "'");
    c.beam_width = j.value("beam_width", c.beam_width);
    c.copy_head = j.value("copy_head", c.copy_head);
    c.local_window = j.value("local_window", c.local_window);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed generator config: ") + e.what());
  }
  return c;
}

std::string_view input_mode_name(InputMode mode) {
  switch (mode) {
    case InputMode::Retrieved:
      return "retrieved";
    case InputMode::None:
      return "none";
    case InputMode::StaticGuide:
      return "static_guide";
  }
  return "retrieved";
}

InputMode parse_input_mode(std::string_view name) {
  if (name == "retrieved") return InputMode::Retrieved;
  if (name == "none") return InputMode::None;
  if (name == "static_guide") return InputMode::StaticGuide;
  throw ConfigError("unknown input mode '" + std::string(name) + "'");
}

void init_generator(ParamStore& store, const GenConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(seed);
  nn::init_normal(store, "tok_emb", cfg.vocab_size, cfg.hidden_dim, 1.0, rng);
  nn::init_normal(store, "enc_pos", cfg.max_input_len, cfg.hidden_dim, 0.5, rng);
  nn::init_normal(store, "dec_pos", cfg.max_target_len + 1, cfg.hidden_dim, 0.5, rng);
  for (std::size_t s = 1; s <= cfg.local_window; ++s) {
    nn::init_normal(store, "enc_prev" + std::to_string(s), cfg.hidden_dim, cfg.hidden_dim, 0.5 / std::sqrt(static_cast<double>(cfg.hidden_dim)), rng);
    nn::init_normal(store, "enc_next" + std::to_string(s), cfg.hidden_dim, cfg.hidden_dim, 0.5 / std::sqrt(static_cast<double>(cfg.hidden_dim)), rng);
  }
  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    nn::init_encoder_block(store, "enc" + std::to_string(l), cfg.hidden_dim, rng);
    nn::init_decoder_block(store, "dec" + std::to_string(l), cfg.hidden_dim, rng);
  }
  nn::init_layer_norm(store, "enc_ln", cfg.hidden_dim);
  nn::init_layer_norm(store, "dec_ln", cfg.hidden_dim);
  if (cfg.copy_head) {
    nn::init_linear(store, "copy.q", cfg.hidden_dim, cfg.hidden_dim, rng);
    nn::init_projection(store, "copy.k", cfg.hidden_dim, cfg.hidden_dim, rng);
    nn::init_linear(store, "copy.gate", cfg.hidden_dim, 1, rng);
    // The copy branch starts at weight sigmoid(-2).
    store.mutable_value("copy.gate.b").data()[0] = 2.0;
  }
}

namespace {

std::vector<int> left_truncate(std::vector<int> ids, std::size_t max_len) {
  if (ids.size() > max_len) ids.erase(ids.begin(), ids.end() - static_cast<std::ptrdiff_t>(max_len));
  return ids;
}

void check_ids(std::span<const int> ids, const GenConfig& cfg, const char* what) {
  for (int id : ids)
    if (id < 0 || static_cast<std::size_t>(id) >= cfg.vocab_size)
      throw VocabError(std::string(what) + " token id " + std::to_string(id) + " outside vocabulary of " +
                       std::to_string(cfg.vocab_size));
}

std::vector<int> iota_ids(std::size_t n) {
  std::vector<int> v(n);
  std::iota(v.begin(), v.end(), 0);
  return v;
}

// An empty context still needs one key for attention to read.
std::span<const int> effective_input(std::span<const int> input) {
  static constexpr int kEmpty[] = {Vocab::kSep};
  return input.empty() ? std::span<const int>(kEmpty) : input;
}

Var encode_input(const nn::Binder& p, const GenConfig& cfg, std::span<const int> input) {
  input = effective_input(input);
  if (input.size() > cfg.max_input_len)
    throw LengthError("generator input of " + std::to_string(input.size()) + " tokens exceeds max_input_len " +
                      std::to_string(cfg.max_input_len));
  check_ids(input, cfg, "input");
  Var table = p("tok_emb");
  Var x = ag::add(ag::embedding(table, input), ag::embedding(p("enc_pos"), iota_ids(input.size())));
  // Neighbouring token embeddings, each through its own projection; positions
  // past either end read [PAD].
  for (std::size_t s = 1; s <= cfg.local_window; ++s) {
    std::vector<int> prev(input.size(), Vocab::kPad), next(input.size(), Vocab::kPad);
    for (std::size_t i = s; i < input.size(); ++i) prev[i] = input[i - s];
    for (std::size_t i = 0; i + s < input.size(); ++i) next[i] = input[i + s];
    x = ag::add(x, ag::matmul(ag::embedding(table, prev), p("enc_prev" + std::to_string(s))));
    x = ag::add(x, ag::matmul(ag::embedding(table, next), p("enc_next" + std::to_string(s))));
  }
  for (std::size_t l = 0; l < cfg.n_layers; ++l) x = nn::encoder_block(p, "enc" + std::to_string(l), x, cfg.n_heads);
  return nn::layer_norm(p, "enc_ln", x);
}

// Encoder output together with the token ids it was computed from.
struct Memory {
  Var states;
  std::span<const int> ids;
};

Memory encode(const nn::Binder& p, const GenConfig& cfg, std::span<const int> input) {
  return {encode_input(p, cfg, input), effective_input(input)};
}

// Next-token logits [T, V]; also returns the final decoder states.
Var decode_logits(const nn::Binder& p, const GenConfig& cfg, Var memory, std::span<const int> dec_in,
                  Var* states = nullptr) {
  Var table = p("tok_emb");
  Var y = ag::add(ag::embedding(table, dec_in), ag::embedding(p("dec_pos"), iota_ids(dec_in.size())));
  for (std::size_t l = 0; l < cfg.n_layers; ++l)
    y = nn::decoder_block(p, "dec" + std::to_string(l), y, memory, cfg.n_heads);
  y = nn::layer_norm(p, "dec_ln", y);
  if (states) *states = y;
  return ag::scale(ag::matmul(y, table, true), 1.0 / std::sqrt(static_cast<double>(cfg.hidden_dim)));
}

// Next-token distributions [T, V]. With the copy head, a gate mixes the
// vocabulary softmax with a single-head attention over input positions whose
// mass is credited to the token at each position.
Var next_token_probs(const nn::Binder& p, const GenConfig& cfg, const Memory& memory, std::span<const int> dec_in) {
  Var y;
  Var logits = decode_logits(p, cfg, memory.states, dec_in, &y);
  if (!cfg.copy_head) return ag::softmax(logits);
  Var q = nn::linear(p, "copy.q", y);
  Var k = nn::project(p, "copy.k", memory.states);
  Var attn = ag::softmax(ag::scale(ag::matmul(q, k, true), 1.0 / std::sqrt(static_cast<double>(cfg.hidden_dim))));
  Tensor onehot({memory.ids.size(), cfg.vocab_size});
  for (std::size_t s = 0; s < memory.ids.size(); ++s) onehot.at(s, static_cast<std::size_t>(memory.ids[s])) = 1.0;
  Var copied = ag::matmul(attn, p.graph.constant(std::move(onehot)));
  Var gate_logit = nn::linear(p, "copy.gate", y);
  return ag::add(ag::scale_rows(ag::softmax(logits), ag::sigmoid(gate_logit)),
                 ag::scale_rows(copied, ag::sigmoid(ag::neg(gate_logit))));
}

std::vector<int> decoder_input(std::span<const int> target) {
  std::vector<int> dec_in{Vocab::kBos};
  dec_in.insert(dec_in.end(), target.begin(), target.end() - 1);
  return dec_in;
}

void check_target(std::span<const int> target, const GenConfig& cfg) {
  if (target.empty() || target.back() != Vocab::kEos) throw InputError("generator target must end with [EOS]");
  if (target.size() > cfg.max_target_len + 1)
    throw LengthError("target of " + std::to_string(target.size()) + " tokens exceeds max_target_len " +
                      std::to_string(cfg.max_target_len));
  check_ids(target, cfg, "target");
}

}  // namespace

std::vector<int> build_conditioned_input(std::string_view context, const Document* z, InputMode mode,
                                         const KnowledgeBase& kb, const Vocab& vocab, const GenConfig& cfg) {
  std::vector<int> x = vocab.encode(context);
  switch (mode) {
    case InputMode::None:
      return left_truncate(std::move(x), cfg.max_input_len);
    case InputMode::Retrieved: {
      if (z == nullptr) throw ConfigError("retrieved input mode requires a document");
      std::vector<int> out{Vocab::kDoc};
      for (int id : vocab.encode(render_document(*z))) out.push_back(id);
      // Documents keep at most half of the budget.
      if (out.size() > cfg.max_input_len / 2) out.resize(cfg.max_input_len / 2);
      out.push_back(Vocab::kSep);
      x = left_truncate(std::move(x), cfg.max_input_len - out.size());
      out.insert(out.end(), x.begin(), x.end());
      return out;
    }
    case InputMode::StaticGuide: {
      if (kb.empty()) throw ConfigError("static_guide input mode requires a knowledge base");
      std::vector<int> out = std::move(x);
      out.push_back(Vocab::kSep);
      for (const auto& doc : kb.documents()) {
        out.push_back(Vocab::kDoc);
        for (int id : vocab.encode(render_document(doc))) out.push_back(id);
      }
      if (out.size() > cfg.max_input_len)
        throw LengthError("static guide input of " + std::to_string(out.size()) + " tokens exceeds max_input_len " +
                          std::to_string(cfg.max_input_len));
      return out;
    }
  }
  return x;
}

std::vector<int> target_ids(std::string_view target, const Vocab& vocab, const GenConfig& cfg) {
  std::vector<int> ids = vocab.encode(target);
  ids.push_back(Vocab::kEos);
  if (ids.size() > cfg.max_target_len + 1)
    throw LengthError("target of " + std::to_string(ids.size() - 1) + " tokens exceeds max_target_len " +
                      std::to_string(cfg.max_target_len));
  return ids;
}

Var cond_loglik(ag::Graph& g, const ParamStore& store, const GenConfig& cfg, std::span<const int> input,
                std::span<const int> target, bool trainable) {
  check_target(target, cfg);
  const nn::Binder p{g, store, trainable};
  const Memory memory = encode(p, cfg, input);
  if (!cfg.copy_head) return ag::neg(ag::cross_entropy(decode_logits(p, cfg, memory.states, decoder_input(target)), target));
  return ag::sum(ag::log(ag::pick(next_token_probs(p, cfg, memory, decoder_input(target)), target)));
}

double cond_loglik_value(const ParamStore& store, const GenConfig& cfg, std::span<const int> input,
                         std::span<const int> target) {
  ag::Graph g(false);
  return cond_loglik(g, store, cfg, input, target, false).item();
}

Tensor teacher_forced_probs(const ParamStore& store, const GenConfig& cfg, std::span<const int> input,
                            std::span<const int> target) {
  check_target(target, cfg);
  ag::Graph g(false);
  const nn::Binder p{g, store, false};
  return next_token_probs(p, cfg, encode(p, cfg, input), decoder_input(target)).value();
}

namespace {

std::vector<int> greedy(const nn::Binder& p, const GenConfig& cfg, const Memory& memory) {
  std::vector<int> dec_in{Vocab::kBos};
  std::vector<int> out;
  while (out.size() < cfg.max_target_len) {
    const Tensor probs = next_token_probs(p, cfg, memory, dec_in).value();
    const std::size_t last = probs.rows() - 1;
    int best = 0;
    for (std::size_t v = 1; v < probs.cols(); ++v)
      if (probs.at(last, v) > probs.at(last, static_cast<std::size_t>(best))) best = static_cast<int>(v);
    if (best == Vocab::kEos) break;
    out.push_back(best);
    dec_in.push_back(best);
  }
  return out;
}

std::vector<int> beam(const nn::Binder& p, const GenConfig& cfg, const Memory& memory) {
  struct Hyp {
    std::vector<int> tokens;  // excludes [BOS]
    double logp = 0.0;
  };
  std::vector<Hyp> live{{}};
  std::vector<Hyp> done;
  for (std::size_t step = 0; step < cfg.max_target_len && !live.empty(); ++step) {
    std::vector<Hyp> cand;
    for (const Hyp& h : live) {
      std::vector<int> dec_in{Vocab::kBos};
      dec_in.insert(dec_in.end(), h.tokens.begin(), h.tokens.end());
      const Tensor probs = next_token_probs(p, cfg, memory, dec_in).value();
      const std::size_t last = probs.rows() - 1;
      for (std::size_t v = 0; v < probs.cols(); ++v) {
        Hyp n = h;
        n.tokens.push_back(static_cast<int>(v));
        n.logp += std::log(probs.at(last, v));
        cand.push_back(std::move(n));
      }
    }
    std::stable_sort(cand.begin(), cand.end(), [](const Hyp& a, const Hyp& b) { return a.logp > b.logp; });
    live.clear();
    for (Hyp& h : cand) {
      if (live.size() >= cfg.beam_width) break;
      if (h.tokens.back() == Vocab::kEos) {
        h.tokens.pop_back();
        done.push_back(std::move(h));
      } else {
        live.push_back(std::move(h));
      }
    }
    // Scores only fall as hypotheses grow, so a finished one that beats every
    // live one is final.
    double best_done = -INFINITY;
    for (const Hyp& h : done) best_done = std::max(best_done, h.logp);
    if (!live.empty() && best_done >= live.front().logp) live.clear();
  }
  for (Hyp& h : live) done.push_back(std::move(h));
  const auto best =
      std::max_element(done.begin(), done.end(), [](const Hyp& a, const Hyp& b) { return a.logp < b.logp; });
  return best == done.end() ? std::vector<int>{} : best->tokens;
}

}  // namespace

std::vector<int> generate(const ParamStore& store, const GenConfig& cfg, std::span<const int> input) {
  ag::Graph g(false);
  const nn::Binder p{g, store, false};
  const Memory memory = encode(p, cfg, input);
  return cfg.decode == DecodeMode::Beam ? beam(p, cfg, memory) : greedy(p, cfg, memory);
}

}  // namespace kads
