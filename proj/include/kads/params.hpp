#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "kads/tensor.hpp"

namespace kads {

// A parameter plus its AdamW moments.
struct Param {
  Tensor value;
  Tensor m;
  Tensor v;

  bool operator==(const Param&) const = default;
};

using GradMap = std::map<std::string, Tensor>;

// Named parameters of one network. Ordered by name so iteration (and thus
// initialisation, checkpoint layout and optimizer traversal) is deterministic.
class ParamStore {
 public:
  Tensor& add(const std::string& name, Tensor init);  // throws IntegrityError on duplicate names
  bool contains(const std::string& name) const { return params_.count(name) > 0; }
  const Tensor& value(const std::string& name) const;
  Tensor& mutable_value(const std::string& name);  // bumps the version
  const Param& at(const std::string& name) const;
  Param& mutable_at(const std::string& name);  // bumps the version

  const std::map<std::string, Param>& params() const { return params_; }
  std::size_t total_size() const;

  // Number of optimizer steps applied to this store.
  std::uint64_t steps() const { return steps_; }
  void set_steps(std::uint64_t s) { steps_ = s; }

  // Changes whenever any value may have changed; caches key on it.
  std::uint64_t version() const { return version_; }
  void touch() { version_ = next_version(); }

  // Equality covers values, moments and step count (not the version tag).
  bool operator==(const ParamStore& o) const { return params_ == o.params_ && steps_ == o.steps_; }

 private:
  static std::uint64_t next_version();

  std::map<std::string, Param> params_;
  std::uint64_t steps_ = 0;
  std::uint64_t version_ = next_version();
};

struct OptimConfig {
  double learning_rate = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 0.01;
  int batch_size = 16;

  void validate() const;  // throws ConfigError

  // Large-model reference settings and the small-model default.
  static OptimConfig reference_scale();
  static OptimConfig desk_scale();
};

// Decoupled-weight-decay Adam with bias correction. `step_index` (>= 1) is the
// optimizer step count of this store after the update. Parameters without an
// entry in `grads` are left untouched, moments included.
void adamw_step(ParamStore& store, const GradMap& grads, const OptimConfig& cfg, std::uint64_t step_index);

// In-place helpers over gradient maps.
void accumulate(GradMap& into, const GradMap& from);
void scale(GradMap& grads, double factor);

}  // namespace kads
