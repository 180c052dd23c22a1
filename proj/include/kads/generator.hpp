#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "kads/autograd.hpp"
#include "kads/corpus.hpp"
#include "kads/vocab.hpp"

namespace kads {

enum class DecodeMode { Greedy, Beam };

struct GenConfig {
  std::size_t n_layers = 2;  // per side: encoder and decoder each get n_layers blocks
  std::size_t hidden_dim = 64;
  std::size_t n_heads = 4;
  std::size_t max_input_len = 384;
  std::size_t max_target_len = 64;
  std::size_t vocab_size = 0;
  DecodeMode decode = DecodeMode::Greedy;
  std::size_t beam_width = 4;
  // Gated pointer over input tokens mixed into the output distribution.
  bool copy_head = true;
  // Encoder inputs also mix in the embeddings of up to this many neighbours
  // on each side.
  std::size_t local_window = 3;

  void validate() const;  // throws ConfigError
  static GenConfig desk_scale(std::size_t vocab_size);
  static GenConfig reference_scale(std::size_t vocab_size);

  nlohmann::json to_json() const;
  static GenConfig from_json(const nlohmann::json& j);
  bool operator==(const GenConfig&) const = default;
};

enum class InputMode { Retrieved, None, StaticGuide };
std::string_view input_mode_name(InputMode mode);
InputMode parse_input_mode(std::string_view name);

void init_generator(ParamStore& store, const GenConfig& cfg, std::uint64_t seed);

// retrieved:    "[DOC] render(z) [SEP] X", dialogue part left-truncated to fit
// none:         "X", left-truncated
// static_guide: "X [SEP] [DOC] render(z_1) [DOC] render(z_2) ..."; LengthError
//               when it exceeds max_input_len
std::vector<int> build_conditioned_input(std::string_view context, const Document* z, InputMode mode,
                                         const KnowledgeBase& kb, const Vocab& vocab, const GenConfig& cfg);

// Encodes a rendered target and appends [EOS]. LengthError beyond
// max_target_len.
std::vector<int> target_ids(std::string_view target, const Vocab& vocab, const GenConfig& cfg);

// log p(target | input) under teacher forcing, natural log. `target` must end
// with [EOS]. Throws VocabError on ids outside the vocabulary.
ag::Var cond_loglik(ag::Graph& g, const ParamStore& store, const GenConfig& cfg, std::span<const int> input,
                    std::span<const int> target, bool trainable = true);
double cond_loglik_value(const ParamStore& store, const GenConfig& cfg, std::span<const int> input,
                         std::span<const int> target);
// Teacher-forced next-token distributions, one row per target position.
Tensor teacher_forced_probs(const ParamStore& store, const GenConfig& cfg, std::span<const int> input,
                            std::span<const int> target);

// Decodes up to [EOS] or max_target_len tokens; the result excludes [EOS].
std::vector<int> generate(const ParamStore& store, const GenConfig& cfg, std::span<const int> input);

}  // namespace kads
