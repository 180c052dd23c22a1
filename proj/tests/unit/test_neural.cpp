#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "kads/autograd.hpp"
#include "kads/checkpoint.hpp"
#include "kads/error.hpp"
#include "kads/grad_check.hpp"
#include "kads/rng.hpp"
#include "primitive_cases.hpp"

using namespace kads;
using ag::Graph;
using ag::Var;
using testing::random_tensor;
using testing::weighted;

namespace {

std::filesystem::path temp_path(const std::string& name) { return std::filesystem::temp_directory_path() / name; }

constexpr double kPrimitiveTol = 1e-6;
constexpr double kEps = 1e-5;
constexpr int kSeeds = 20;

}  // namespace

TEST_CASE("closed-form forward values") {
  Graph g(false);
  auto sm = ag::softmax(g.constant(Tensor::row({0.0, std::log(2.0)})));
  CHECK(sm.value()[0] == doctest::Approx(1.0 / 3.0).epsilon(1e-14));
  CHECK(sm.value()[1] == doctest::Approx(2.0 / 3.0).epsilon(1e-14));

  Rng rng(1);
  Tensor a = random_tensor({3, 4}, rng);
  Tensor eye({3, 3});
  for (std::size_t i = 0; i < 3; ++i) eye.at(i, i) = 1.0;
  CHECK(ag::matmul(g.constant(eye), g.constant(a)).value() == a);

  auto ln = ag::layer_norm(g.constant(Tensor({1, 5}, 2.5)), g.constant(Tensor({1, 5}, 1.0)), g.constant(Tensor({1, 5}, 0.0)));
  for (double x : ln.value().data()) CHECK(x == 0.0);
}

TEST_CASE("softmax normalisation and shift invariance (property)") {
  Rng rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + rng.below(12);
    Tensor logits = random_tensor({1, n}, rng, 5.0);
    Tensor shifted = logits;
    const double c = 100.0 * rng.normal();
    for (double& x : shifted.data()) x += c;
    Graph g(false);
    const Tensor p = ag::softmax(g.constant(logits)).value();
    const Tensor q = ag::softmax(g.constant(shifted)).value();
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      total += p[i];
      REQUIRE(std::abs(p[i] - q[i]) <= 1e-12);
    }
    REQUIRE(std::abs(total - 1.0) <= 1e-12);
  }
}

TEST_CASE("shape errors name both operands") {
  Graph g;
  try {
    ag::matmul(g.constant(Tensor({2, 3})), g.constant(Tensor({4, 5})));
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[2, 3]") != std::string::npos);
    CHECK(msg.find("[4, 5]") != std::string::npos);
  }
  CHECK_THROWS_AS(ag::add(g.constant(Tensor({2, 2})), g.constant(Tensor({2, 3}))), ShapeError);
  CHECK_THROWS_AS(Tensor({2, 2}, std::vector<double>{1.0}), ShapeError);
}

TEST_CASE("every primitive passes grad_check over random shapes") {
  for (const auto& c : testing::primitive_cases()) {
    const double worst = testing::primitive_worst_error(c, kSeeds, kEps);
    INFO("primitive " << std::string(c.name) << " worst rel err " << worst);
    CHECK(worst < kPrimitiveTol);
  }
}

TEST_CASE("grad_check contract") {
  ParamStore store;
  store.add("w", Tensor::scalar(3.0));
  store.add("dead", Tensor::scalar(1.0));
  auto square = [&](Graph& g) {
    auto w = g.param(store, "w");
    return ag::mul(w, w);
  };
  const auto r = grad_check(square, store, 1e-4);
  CHECK(r.max_rel_error < 1e-8);
  CHECK(r.coords_checked == 2);

  Graph g;
  auto loss = square(g);
  g.backward(loss);
  const auto grads = g.param_grads(store);
  CHECK(grads.at("w").item() == 6.0);
  CHECK(grads.count("dead") == 0);  // never touched: no gradient entry, i.e. exactly zero

  CHECK_THROWS_AS(grad_check(square, store, 1e-2), ConfigError);
  ParamStore bad;
  bad.add("w", Tensor::scalar(0.0));
  CHECK_THROWS_AS(grad_check([&](Graph& gg) { return ag::log_softmax(ag::scale(gg.param(bad, "w"), 1.0 / 0.0)); }, bad, 1e-5),
                  NumericError);
}

TEST_CASE("adamw_step") {
  OptimConfig cfg;
  cfg.learning_rate = 0.1;
  cfg.weight_decay = 0.0;

  SUBCASE("zero gradient, zero decay leaves parameters unchanged") {
    ParamStore s;
    s.add("w", Tensor::row({1.0, -2.0}));
    adamw_step(s, {{"w", Tensor::row({0.0, 0.0})}}, cfg, 1);
    CHECK(s.value("w") == Tensor::row({1.0, -2.0}));
  }
  SUBCASE("first bias-corrected step") {
    ParamStore s;
    s.add("w", Tensor::scalar(1.0));
    adamw_step(s, {{"w", Tensor::scalar(1.0)}}, cfg, 1);
    // m_hat = 1, v_hat = 1: update = lr / (1 + eps)
    CHECK(s.value("w").item() == doctest::Approx(1.0 - 0.1 / (1.0 + 1e-8)).epsilon(1e-15));
    CHECK(s.steps() == 1);
  }
  SUBCASE("decoupled weight decay") {
    cfg.weight_decay = 0.1;
    ParamStore s;
    s.add("w", Tensor::scalar(2.0));
    adamw_step(s, {{"w", Tensor::scalar(0.0)}}, cfg, 1);
    CHECK(s.value("w").item() == doctest::Approx(2.0 * (1.0 - 0.01)).epsilon(1e-15));
  }
  SUBCASE("deterministic") {
    Rng rng(8);
    ParamStore a;
    a.add("w", random_tensor({3, 3}, rng));
    ParamStore b = a;
    const Tensor g = random_tensor({3, 3}, rng);
    for (std::uint64_t t = 1; t <= 5; ++t) {
      adamw_step(a, {{"w", g}}, cfg, t);
      adamw_step(b, {{"w", g}}, cfg, t);
    }
    CHECK(a == b);
  }
  SUBCASE("NaN gradient names the parameter") {
    ParamStore s;
    s.add("encoder.w", Tensor::scalar(1.0));
    try {
      adamw_step(s, {{"encoder.w", Tensor::scalar(std::nan(""))}}, cfg, 1);
      FAIL("expected NumericError");
    } catch (const NumericError& e) {
      CHECK(std::string(e.what()).find("encoder.w") != std::string::npos);
    }
  }
  CHECK_THROWS_AS(OptimConfig{.learning_rate = 0.0}.validate(), ConfigError);
  CHECK(OptimConfig::reference_scale().learning_rate == 1e-5);
  CHECK(OptimConfig::reference_scale().batch_size == 32);
}

TEST_CASE("checkpoint round trip and failure modes") {
  Rng rng(21);
  ParamStore s;
  s.add("a", random_tensor({4, 3}, rng));
  s.add("b.bias", random_tensor({1, 7}, rng));
  OptimConfig cfg;
  adamw_step(s, {{"a", random_tensor({4, 3}, rng)}}, cfg, 1);

  const auto path = temp_path("kads_neural_ckpt.bin");
  save_checkpoint(s, path, 0x1234, 0x99);
  const ParamStore back = load_checkpoint(path, 0x1234, 0x99);
  CHECK(back == s);
  for (const auto& [name, p] : s.params())
    for (std::size_t i = 0; i < p.value.size(); ++i) CHECK(std::bit_cast<std::uint64_t>(back.value(name)[i]) == std::bit_cast<std::uint64_t>(p.value[i]));

  CHECK_THROWS_AS(load_checkpoint(path, 0x4321), IncompatibleError);
  CHECK_THROWS_AS(load_checkpoint(path, std::nullopt, 0x1), IncompatibleError);

  const auto size = std::filesystem::file_size(path);
  std::filesystem::resize_file(path, size - 5);
  CHECK_THROWS_AS(load_checkpoint(path), ParseError);
  std::ofstream(path, std::ios::trunc) << "garbage";
  CHECK_THROWS_AS(load_checkpoint(path), ParseError);
}
