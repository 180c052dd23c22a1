#include "kads/layers.hpp"

#include <cmath>

namespace kads::nn {

using ag::Var;

void init_normal(ParamStore& store, const std::string& name, std::size_t rows, std::size_t cols, double std, Rng& rng) {
  Tensor t({rows, cols});
  for (double& x : t.data()) x = std * rng.normal();
  store.add(name, std::move(t));
}

void init_linear(ParamStore& store, const std::string& prefix, std::size_t in, std::size_t out, Rng& rng) {
  init_normal(store, prefix + ".w", in, out, 1.0 / std::sqrt(static_cast<double>(in)), rng);
  store.add(prefix + ".b", Tensor({1, out}));
}

void init_projection(ParamStore& store, const std::string& prefix, std::size_t in, std::size_t out, Rng& rng) {
  init_normal(store, prefix + ".w", in, out, 1.0 / std::sqrt(static_cast<double>(in)), rng);
}

void init_layer_norm(ParamStore& store, const std::string& prefix, std::size_t width) {
  store.add(prefix + ".g", Tensor({1, width}, 1.0));
  store.add(prefix + ".b", Tensor({1, width}));
}

namespace {

void init_attention(ParamStore& store, const std::string& prefix, std::size_t hidden, Rng& rng) {
  init_linear(store, prefix + ".q", hidden, hidden, rng);
  init_projection(store, prefix + ".k", hidden, hidden, rng);
  init_linear(store, prefix + ".v", hidden, hidden, rng);
  init_linear(store, prefix + ".o", hidden, hidden, rng);
}

void init_ffn(ParamStore& store, const std::string& prefix, std::size_t hidden, Rng& rng) {
  init_linear(store, prefix + ".in", hidden, 4 * hidden, rng);
  init_linear(store, prefix + ".out", 4 * hidden, hidden, rng);
}

Var attend(const Binder& p, const std::string& prefix, Var x, Var memory, std::size_t n_heads, bool causal) {
  Var q = linear(p, prefix + ".q", x);
  Var k = project(p, prefix + ".k", memory);
  Var v = linear(p, prefix + ".v", memory);
  return linear(p, prefix + ".o", ag::attention(q, k, v, n_heads, causal));
}

Var ffn(const Binder& p, const std::string& prefix, Var x) {
  return linear(p, prefix + ".out", ag::gelu(linear(p, prefix + ".in", x)));
}

}  // namespace

void init_encoder_block(ParamStore& store, const std::string& prefix, std::size_t hidden, Rng& rng) {
  init_layer_norm(store, prefix + ".ln1", hidden);
  init_attention(store, prefix + ".attn", hidden, rng);
  init_layer_norm(store, prefix + ".ln2", hidden);
  init_ffn(store, prefix + ".ffn", hidden, rng);
}

void init_decoder_block(ParamStore& store, const std::string& prefix, std::size_t hidden, Rng& rng) {
  init_encoder_block(store, prefix, hidden, rng);
  init_layer_norm(store, prefix + ".lnx", hidden);
  init_attention(store, prefix + ".cross", hidden, rng);
}

Var linear(const Binder& p, const std::string& prefix, Var x) {
  return ag::add_row(ag::matmul(x, p(prefix + ".w")), p(prefix + ".b"));
}

Var project(const Binder& p, const std::string& prefix, Var x) { return ag::matmul(x, p(prefix + ".w")); }

Var layer_norm(const Binder& p, const std::string& prefix, Var x) {
  return ag::layer_norm(x, p(prefix + ".g"), p(prefix + ".b"));
}

Var encoder_block(const Binder& p, const std::string& prefix, Var x, std::size_t n_heads) {
  Var h = layer_norm(p, prefix + ".ln1", x);
  x = ag::add(x, attend(p, prefix + ".attn", h, h, n_heads, false));
  return ag::add(x, ffn(p, prefix + ".ffn", layer_norm(p, prefix + ".ln2", x)));
}

Var decoder_block(const Binder& p, const std::string& prefix, Var x, Var memory, std::size_t n_heads) {
  Var h = layer_norm(p, prefix + ".ln1", x);
  x = ag::add(x, attend(p, prefix + ".attn", h, h, n_heads, true));
  x = ag::add(x, attend(p, prefix + ".cross", layer_norm(p, prefix + ".lnx", x), memory, n_heads, false));
  return ag::add(x, ffn(p, prefix + ".ffn", layer_norm(p, prefix + ".ln2", x)));
}

}  // namespace kads::nn
