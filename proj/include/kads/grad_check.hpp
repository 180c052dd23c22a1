#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "kads/autograd.hpp"

namespace kads {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t coords_checked = 0;
};

// Builds a scalar loss on the given graph. Parameters must be pulled in via
// Graph::param so that the checker can perturb them.
using LossBuilder = std::function<ag::Var(ag::Graph&)>;

// Compares reverse-mode gradients against central finite differences on a
// seeded random subsample of at least `min_coords` coordinates (all of them if
// fewer exist) drawn across every store. Relative error per coordinate is
// |a - n| / max(|a|, |n|, 1e-8). Throws NumericError if the loss is not finite
// and ConfigError if eps lies outside [1e-6, 1e-3].
GradCheckResult grad_check(const LossBuilder& build, const std::vector<ParamStore*>& stores, double eps,
                           std::uint64_t seed = 0, std::size_t min_coords = 64);

inline GradCheckResult grad_check(const LossBuilder& build, ParamStore& store, double eps, std::uint64_t seed = 0,
                                  std::size_t min_coords = 64) {
  return grad_check(build, std::vector<ParamStore*>{&store}, eps, seed, min_coords);
}

}  // namespace kads
