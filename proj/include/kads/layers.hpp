#pragma once

#include <cstdint>
#include <span>
#include <string>

#include "kads/autograd.hpp"
#include "kads/rng.hpp"

namespace kads::nn {

// Pulls parameters of one store into a graph, all trainable or all frozen.
struct Binder {
  ag::Graph& graph;
  const ParamStore& store;
  bool trainable = true;

  ag::Var operator()(const std::string& name) const { return graph.param(store, name, trainable); }
};

void init_normal(ParamStore& store, const std::string& name, std::size_t rows, std::size_t cols, double std, Rng& rng);
// <prefix>.w [in, out] with std 1/sqrt(in), <prefix>.b zeros.
void init_linear(ParamStore& store, const std::string& prefix, std::size_t in, std::size_t out, Rng& rng);
// <prefix>.w only.
void init_projection(ParamStore& store, const std::string& prefix, std::size_t in, std::size_t out, Rng& rng);
// <prefix>.g ones, <prefix>.b zeros.
void init_layer_norm(ParamStore& store, const std::string& prefix, std::size_t width);
void init_encoder_block(ParamStore& store, const std::string& prefix, std::size_t hidden, Rng& rng);
// Encoder block plus a cross-attention sublayer.
void init_decoder_block(ParamStore& store, const std::string& prefix, std::size_t hidden, Rng& rng);

ag::Var linear(const Binder& p, const std::string& prefix, ag::Var x);
ag::Var project(const Binder& p, const std::string& prefix, ag::Var x);
ag::Var layer_norm(const Binder& p, const std::string& prefix, ag::Var x);

// Pre-norm residual blocks.
ag::Var encoder_block(const Binder& p, const std::string& prefix, ag::Var x, std::size_t n_heads);
ag::Var decoder_block(const Binder& p, const std::string& prefix, ag::Var x, ag::Var memory, std::size_t n_heads);

}  // namespace kads::nn
