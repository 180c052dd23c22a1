#include "kads/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "kads/error.hpp"
#include "kads/rng.hpp"

namespace kads {
namespace {

double eval_loss(const LossBuilder& build) {
  ag::Graph g(false);
  const double v = build(g).value().item();
  if (!std::isfinite(v)) throw NumericError("grad_check: loss is not finite (" + std::to_string(v) + ")");
  return v;
}

struct Coord {
  std::size_t store;
  std::string name;
  std::size_t index;
};

}  // namespace

GradCheckResult grad_check(const LossBuilder& build, const std::vector<ParamStore*>& stores, double eps,
                           std::uint64_t seed, std::size_t min_coords) {
  if (!(eps >= 1e-6 && eps <= 1e-3)) throw ConfigError("grad_check: eps must lie in [1e-6, 1e-3]");

  std::vector<GradMap> analytic(stores.size());
  {
    ag::Graph g(true);
    ag::Var loss = build(g);
    if (!std::isfinite(loss.value().item())) throw NumericError("grad_check: loss is not finite");
    g.backward(loss);
    for (std::size_t s = 0; s < stores.size(); ++s) analytic[s] = g.param_grads(*stores[s]);
  }

  std::vector<Coord> coords;
  for (std::size_t s = 0; s < stores.size(); ++s)
    for (const auto& [name, p] : stores[s]->params())
      for (std::size_t i = 0; i < p.value.size(); ++i) coords.push_back({s, name, i});
  Rng rng(seed);
  if (coords.size() > min_coords) {
    rng.shuffle(std::span<Coord>(coords));
    coords.resize(min_coords);
  }

  GradCheckResult res;
  for (const Coord& c : coords) {
    ParamStore& store = *stores[c.store];
    const double original = store.value(c.name)[c.index];
    store.mutable_value(c.name)[c.index] = original + eps;
    const double plus = eval_loss(build);
    store.mutable_value(c.name)[c.index] = original - eps;
    const double minus = eval_loss(build);
    store.mutable_value(c.name)[c.index] = original;

    const double numeric = (plus - minus) / (2.0 * eps);
    const auto& grads = analytic[c.store];
    const auto it = grads.find(c.name);
    const double a = it == grads.end() ? 0.0 : it->second[c.index];
    const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
    res.max_rel_error = std::max(res.max_rel_error, std::abs(a - numeric) / denom);
    ++res.coords_checked;
  }
  return res;
}

}  // namespace kads
