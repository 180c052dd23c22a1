#include "kads/params.hpp"

#include <atomic>
#include <cmath>

#include "kads/error.hpp"

namespace kads {

std::uint64_t ParamStore::next_version() {
  static std::atomic<std::uint64_t> counter{1};
  return counter.fetch_add(1);
}

Tensor& ParamStore::add(const std::string& name, Tensor init) {
  if (params_.count(name)) throw IntegrityError("duplicate parameter name '" + name + "'");
  Param p;
  p.m = Tensor::zeros_like(init);
  p.v = Tensor::zeros_like(init);
  p.value = std::move(init);
  touch();
  return params_.emplace(name, std::move(p)).first->second.value;
}

const Param& ParamStore::at(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw BoundsError("unknown parameter '" + name + "'");
  return it->second;
}

Param& ParamStore::mutable_at(const std::string& name) {
  auto it = params_.find(name);
  if (it == params_.end()) throw BoundsError("unknown parameter '" + name + "'");
  touch();
  return it->second;
}

const Tensor& ParamStore::value(const std::string& name) const { return at(name).value; }
Tensor& ParamStore::mutable_value(const std::string& name) { return mutable_at(name).value; }

std::size_t ParamStore::total_size() const {
  std::size_t n = 0;
  for (const auto& [_, p] : params_) n += p.value.size();
  return n;
}

void OptimConfig::validate() const {
  if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be > 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("betas must lie in [0, 1)");
  if (!(epsilon > 0.0)) throw ConfigError("epsilon must be > 0");
  if (weight_decay < 0.0) throw ConfigError("weight_decay must be >= 0");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
}

OptimConfig OptimConfig::reference_scale() {
  OptimConfig c;
  c.learning_rate = 1e-5;
  c.batch_size = 32;
  return c;
}

OptimConfig OptimConfig::desk_scale() {
  OptimConfig c;
  c.learning_rate = 3e-4;
  c.batch_size = 16;
  return c;
}

void adamw_step(ParamStore& store, const GradMap& grads, const OptimConfig& cfg, std::uint64_t step_index) {
  if (step_index < 1) throw ConfigError("adamw_step: step_index must be >= 1");
  for (const auto& [name, g] : grads) {
    const Param& p = store.at(name);
    if (g.shape() != p.value.shape())
      throw ShapeError("gradient for '" + name + "' has shape " + g.shape_str() + ", parameter has " +
                       p.value.shape_str());
    if (!g.all_finite()) throw NumericError("non-finite gradient for parameter '" + name + "'");
  }
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step_index));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step_index));
  const double decay = 1.0 - cfg.learning_rate * cfg.weight_decay;
  for (const auto& [name, g] : grads) {
    Param& p = store.mutable_at(name);
    double* w = p.value.ptr();
    double* m = p.m.ptr();
    double* v = p.v.ptr();
    const double* gd = g.ptr();
    for (std::size_t i = 0; i < g.size(); ++i) {
      w[i] *= decay;
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gd[i];
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gd[i] * gd[i];
      const double m_hat = m[i] / bc1;
      const double v_hat = v[i] / bc2;
      w[i] -= cfg.learning_rate * m_hat / (std::sqrt(v_hat) + cfg.epsilon);
    }
  }
  store.set_steps(step_index);
  store.touch();
}

void accumulate(GradMap& into, const GradMap& from) {
  for (const auto& [name, g] : from) {
    auto it = into.find(name);
    if (it == into.end())
      into.emplace(name, g);
    else
      it->second.add_inplace(g);
  }
}

void scale(GradMap& grads, double factor) {
  for (auto& [_, g] : grads)
    for (double& x : g.data()) x *= factor;
}

}  // namespace kads
