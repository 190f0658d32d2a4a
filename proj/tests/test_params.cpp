#include <doctest.h>

#include <cmath>
#include <stdexcept>

#include "tdv3/graph.hpp"
#include "tdv3/params.hpp"

using namespace tdv3;

TEST_CASE("freeze matches whole path components only") {
  ParameterStore store;
  store.add("wm.enc.W", Tensor::zeros({2, 2}));
  store.add("wmx.W", Tensor::zeros({2, 2}));
  store.add("wm", Tensor::zeros({1, 1}));
  store.freeze("wm");
  CHECK(store.is_frozen("wm"));
  CHECK(store.is_frozen("wm.enc.W"));
  CHECK(!store.is_frozen("wmx.W"));
  store.unfreeze("wm");
  CHECK(!store.is_frozen("wm.enc.W"));
}

TEST_CASE("binder reuses leaves and skips frozen entries in gradients") {
  ParameterStore store;
  store.add("a", Tensor::scalar(2.0));
  store.add("b", Tensor::scalar(3.0));
  store.freeze("b");

  Graph g;
  ParamBinder bind(g, store);
  Var a1 = bind("a"), a2 = bind("a");
  CHECK(a1.id == a2.id);
  Var loss = g.mul(bind("a"), bind("b"));
  GradResult gr = bind.collect(loss);
  CHECK(gr.loss_value == doctest::Approx(6.0));
  CHECK(gr.grads.count("a") == 1);
  CHECK(gr.grads.count("b") == 0);
  CHECK(gr.grads.at("a").data[0] == doctest::Approx(3.0));
}

TEST_CASE("binder returns zero grads for bound but unused parameters") {
  ParameterStore store;
  store.add("used", Tensor::scalar(2.0));
  store.add("unused", Tensor::zeros({2, 2}));
  Graph g;
  ParamBinder bind(g, store);
  Var u = bind("used");
  bind("unused");
  GradResult gr = bind.collect(g.mul(u, u));
  CHECK(gr.grads.at("used").data[0] == doctest::Approx(4.0));
  REQUIRE(gr.grads.count("unused") == 1);
  for (double v : gr.grads.at("unused").data) CHECK(v == 0.0);
}

TEST_CASE("adam zero grad leaves parameters unchanged") {
  ParameterStore store;
  store.add("p", Tensor({2}, {1.5, -0.25}));
  Tensor before = store.at("p");
  GradResult gr;
  gr.grads.emplace("p", Tensor::zeros({2}));
  adam_step(store, gr, AdamConfig{});
  CHECK(store.at("p") == before);
}

TEST_CASE("adam single step matches the hand formula") {
  ParameterStore store;
  store.add("p", Tensor::scalar(1.0));
  auto& mo = store.moments("p");
  mo.m.data[0] = 0.2;
  mo.v.data[0] = 0.09;
  mo.step = 3;

  GradResult gr;
  gr.grads.emplace("p", Tensor::scalar(0.5));
  AdamConfig cfg;
  cfg.lr = 1e-3;
  adam_step(store, gr, cfg);

  const double b1 = 0.9, b2 = 0.999, g = 0.5;
  const double m = b1 * 0.2 + (1 - b1) * g;
  const double v = b2 * 0.09 + (1 - b2) * g * g;
  const double mhat = m / (1 - std::pow(b1, 4.0));
  const double vhat = v / (1 - std::pow(b2, 4.0));
  const double expect = double(float(1.0 - 1e-3 * mhat / (std::sqrt(vhat) + 1e-8)));
  CHECK(store.at("p").data[0] == doctest::Approx(expect).epsilon(1e-12));
  CHECK(store.moments("p").step == 4);
}

TEST_CASE("adam clips by global norm across all entries") {
  ParameterStore store;
  store.add("a", Tensor::scalar(0.0));
  store.add("b", Tensor::scalar(0.0));
  GradResult gr;
  gr.grads.emplace("a", Tensor::scalar(3.0));
  gr.grads.emplace("b", Tensor::scalar(4.0));
  AdamConfig cfg;
  cfg.lr = 1.0;
  cfg.clip_norm = 1.0;  // norm is 5, so grads scale by 1/5
  adam_step(store, gr, cfg);
  // After scaling, per-entry update is lr * g/|g| independent of magnitude,
  // so both entries move by the same unit step; verify via the formula.
  const double ga = 3.0 / 5.0, gb = 4.0 / 5.0;
  auto one_step = [](double g) {
    double m = 0.1 * g, v = 0.001 * g * g;
    double mhat = m / 0.1, vhat = v / 0.001;
    return double(float(-mhat / (std::sqrt(vhat) + 1e-8)));
  };
  CHECK(store.at("a").data[0] == doctest::Approx(one_step(ga)).epsilon(1e-9));
  CHECK(store.at("b").data[0] == doctest::Approx(one_step(gb)).epsilon(1e-9));
}

TEST_CASE("frozen entries stay bit-identical through optimizer steps") {
  ParameterStore store;
  store.add("wm.W", Tensor({2}, {0.123456789, -9.87654321}));
  store.add("actor.W", Tensor({2}, {1.0, 2.0}));

  GradResult gr;
  gr.grads.emplace("wm.W", Tensor({2}, {1.0, -1.0}));
  gr.grads.emplace("actor.W", Tensor({2}, {1.0, -1.0}));
  adam_step(store, gr, AdamConfig{});  // unfrozen warm-up builds moments

  Tensor frozen_snapshot = store.at("wm.W");
  std::uint64_t h0 = byte_hash(store, "wm");
  store.freeze("wm");
  for (int i = 0; i < 10; ++i) adam_step(store, gr, AdamConfig{});
  CHECK(store.at("wm.W") == frozen_snapshot);
  CHECK(byte_hash(store, "wm") == h0);
  CHECK(store.at("actor.W") != Tensor({2}, {1.0, 2.0}));
}

TEST_CASE("adam rejects shape mismatches") {
  ParameterStore store;
  store.add("p", Tensor::zeros({2, 2}));
  GradResult gr;
  gr.grads.emplace("p", Tensor::zeros({2, 3}));
  CHECK_THROWS_AS(adam_step(store, gr, AdamConfig{}), std::invalid_argument);
}

TEST_CASE("dense init is bounded, zero-biased and f32 snapped") {
  ParameterStore store;
  Rng rng(9);
  init_dense(store, "layer", 30, 10, rng);
  const Tensor& w = store.at("layer.W");
  const Tensor& b = store.at("layer.b");
  CHECK(w.shape == Shape{30, 10});
  CHECK(b.shape == Shape{1, 10});
  const double bound = std::sqrt(6.0 / 40.0);
  for (double v : w.data) {
    CHECK(std::abs(v) <= bound);
    CHECK(double(float(v)) == v);
  }
  for (double v : b.data) CHECK(v == 0.0);
  double mean = 0;
  for (double v : w.data) mean += v;
  CHECK(std::abs(mean / w.size()) < 0.05);
}

TEST_CASE("freeze scope restores state on exit") {
  ParameterStore store;
  store.add("wm.W", Tensor::scalar(1.0));
  {
    FreezeScope fs(store, "wm");
    CHECK(store.is_frozen("wm.W"));
  }
  CHECK(!store.is_frozen("wm.W"));
  store.freeze("wm");
  {
    FreezeScope fs(store, "wm");
    CHECK(store.is_frozen("wm.W"));
  }
  CHECK(store.is_frozen("wm.W"));
}
