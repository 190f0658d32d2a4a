#include <doctest.h>

#include <cmath>

#include "tdv3/nets.hpp"

using namespace tdv3;

namespace {

Tensor randn(Rng& rng, Shape s, double scale = 1.0) {
  Tensor t(std::move(s));
  for (double& x : t.data) x = scale * rng.normal();
  return t;
}

void zero_all(ParameterStore& store) {
  for (auto& [name, t] : store.entries())
    for (double& v : t.data) v = 0.0;
}

}  // namespace

TEST_CASE("mlp zero weights emit the output bias") {
  ParameterStore store;
  Rng rng(1);
  Mlp net{"net", {3, 4, 2}};
  net.init(store, rng);
  zero_all(store);
  store.at("net.l1.b") = Tensor({1, 2}, {0.5, -1.5});

  Graph g;
  ParamBinder bind(g, store);
  Tensor out = g.value(net(g, bind, g.input(randn(rng, {5, 3}))));
  for (int r = 0; r < 5; ++r) {
    CHECK(out.at(r, 0) == 0.5);
    CHECK(out.at(r, 1) == -1.5);
  }
}

TEST_CASE("mlp is deterministic and matches a direct evaluation") {
  ParameterStore store;
  Rng rng(2);
  Mlp net{"net", {3, 4, 2}};
  net.init(store, rng);
  Tensor x = randn(rng, {2, 3});

  auto run = [&] {
    Graph g;
    ParamBinder bind(g, store);
    return g.value(net(g, bind, g.input(x)));
  };
  Tensor a = run(), b = run();
  CHECK(a == b);

  const Tensor& w0 = store.at("net.l0.W");
  const Tensor& b0 = store.at("net.l0.b");
  const Tensor& w1 = store.at("net.l1.W");
  const Tensor& b1 = store.at("net.l1.b");
  for (int r = 0; r < 2; ++r) {
    double hid[4];
    for (int j = 0; j < 4; ++j) {
      double acc = b0.at(0, j);
      for (int k = 0; k < 3; ++k) acc += x.at(r, k) * w0.at(k, j);
      hid[j] = acc / (1.0 + std::exp(-acc));  // silu
    }
    for (int j = 0; j < 2; ++j) {
      double acc = b1.at(0, j);
      for (int k = 0; k < 4; ++k) acc += hid[k] * w1.at(k, j);
      CHECK(a.at(r, j) == doctest::Approx(acc).epsilon(1e-12));
    }
  }
}

TEST_CASE("gru zero weights halve the hidden state") {
  ParameterStore store;
  Rng rng(3);
  GruCell cell{"gru", 3, 4};
  cell.init(store, rng);
  zero_all(store);

  Graph g;
  ParamBinder bind(g, store);
  Tensor h0({2, 4}, {1, -2, 3, -4, 0.5, 0.5, 0.5, 0.5});
  Tensor out = g.value(cell(g, bind, g.input(randn(rng, {2, 3})), g.input(h0)));
  for (std::size_t i = 0; i < out.size(); ++i)
    CHECK(out.data[i] == doctest::Approx(0.5 * h0.data[i]).epsilon(1e-12));

  Tensor zero_h = g.value(cell(g, bind, g.input(randn(rng, {2, 3})), g.input(Tensor::zeros({2, 4}))));
  for (double v : zero_h.data) CHECK(v == 0.0);
}

TEST_CASE("gru matches the gate formula") {
  ParameterStore store;
  Rng rng(4);
  GruCell cell{"gru", 2, 3};
  cell.init(store, rng);
  Tensor in = randn(rng, {1, 2}), h = randn(rng, {1, 3});

  Graph g;
  ParamBinder bind(g, store);
  Tensor out = g.value(cell(g, bind, g.input(in), g.input(h)));

  auto gate = [&](const std::string& name, const double* a, const double* b2, int na, int nb, int j) {
    const Tensor& w = store.at("gru." + name + ".W");
    const Tensor& bb = store.at("gru." + name + ".b");
    double acc = bb.at(0, j);
    for (int k = 0; k < na; ++k) acc += a[k] * w.at(k, j);
    for (int k = 0; k < nb; ++k) acc += b2[k] * w.at(na + k, j);
    return acc;
  };
  for (int j = 0; j < 3; ++j) {
    double u = 1.0 / (1.0 + std::exp(-gate("u", in.data.data(), h.data.data(), 2, 3, j)));
    double r = 1.0 / (1.0 + std::exp(-gate("r", in.data.data(), h.data.data(), 2, 3, j)));
    (void)r;
    double rh[3];
    for (int k = 0; k < 3; ++k) {
      double rk = 1.0 / (1.0 + std::exp(-gate("r", in.data.data(), h.data.data(), 2, 3, k)));
      rh[k] = rk * h.data[static_cast<std::size_t>(k)];
    }
    double c = std::tanh(gate("c", in.data.data(), rh, 2, 3, j));
    double expect = u * h.data[static_cast<std::size_t>(j)] + (1 - u) * c;
    CHECK(out.data[static_cast<std::size_t>(j)] == doctest::Approx(expect).epsilon(1e-10));
  }
}

TEST_CASE("mlp and gru gradients pass finite differences") {
  ParameterStore store;
  Rng rng(5);
  Mlp net{"net", {3, 5, 2}};
  net.init(store, rng);
  GruCell cell{"gru", 2, 3};
  cell.init(store, rng);
  Tensor x = randn(rng, {2, 3});
  Tensor gin = randn(rng, {1, 2}), gh = randn(rng, {1, 3});

  auto loss_of = [&](const ParameterStore& s) {
    Graph g;
    ParamBinder bind(g, s);
    Var a = g.sum_all(net(g, bind, g.input(x)));
    Var b = g.sum_all(cell(g, bind, g.input(gin), g.input(gh)));
    return g.value(g.add(a, b)).data[0];
  };

  Graph g;
  ParamBinder bind(g, store);
  Var a = g.sum_all(net(g, bind, g.input(x)));
  Var b = g.sum_all(cell(g, bind, g.input(gin), g.input(gh)));
  GradResult gr = bind.collect(g.add(a, b));

  const double h = 1e-5;
  for (auto& [name, grad] : gr.grads) {
    Tensor& p = store.at(name);
    for (std::size_t i = 0; i < p.data.size(); ++i) {
      const double keep = p.data[i];
      p.data[i] = keep + h;
      double up = loss_of(store);
      p.data[i] = keep - h;
      double dn = loss_of(store);
      p.data[i] = keep;
      double fd = (up - dn) / (2 * h);
      INFO(name << "[" << i << "]");
      CHECK(std::abs(grad.data[i] - fd) / std::max({1.0, std::abs(fd), std::abs(grad.data[i])}) < 1e-5);
    }
  }
}
