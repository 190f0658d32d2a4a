#include <doctest.h>

#include <cmath>

#include "tdv3/transformer.hpp"

using namespace tdv3;

namespace {

Tensor randn(Rng& rng, Shape s, double scale = 1.0) {
  Tensor t(std::move(s));
  for (double& x : t.data) x = scale * rng.normal();
  return t;
}

ParameterStore make_encoder(const EncoderConfig& cfg, std::uint64_t seed) {
  ParameterStore store;
  Rng rng(seed);
  encoder_init(store, "enc", cfg, rng);
  return store;
}

Tensor run_parallel(const ParameterStore& store, const EncoderConfig& cfg, const Tensor& tokens, int T,
                    int B) {
  Graph g;
  ParamBinder bind(g, store);
  return g.value(encoder_forward(g, bind, "enc", cfg, g.input(tokens), T, B));
}

Tensor token_row(const Tensor& tokens, int r) {
  const int d = tokens.cols();
  Tensor row({d});
  for (int j = 0; j < d; ++j) row.data[static_cast<std::size_t>(j)] = tokens.at(r, j);
  return row;
}

double max_rel_err(const Tensor& a, const Tensor& b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    double err = std::abs(a.data[i] - b.data[i]) /
                 std::max({1.0, std::abs(a.data[i]), std::abs(b.data[i])});
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace

TEST_CASE("encoder config validation") {
  EncoderConfig cfg;
  cfg.d_model = 6;
  cfg.n_heads = 4;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg.n_heads = 2;
  CHECK_NOTHROW(cfg.validate());
  cfg.context = Context::window;
  cfg.window = 0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}

TEST_CASE("zero-weight layer collapses to stacked normalization") {
  EncoderConfig cfg;
  cfg.d_model = 4;
  cfg.n_heads = 2;
  cfg.d_ff = 6;
  cfg.n_layers = 1;
  ParameterStore store = make_encoder(cfg, 7);
  for (auto& [name, t] : store.entries())
    if (name.find(".ln") == std::string::npos)
      for (double& v : t.data) v = 0.0;

  Rng rng(8);
  Tensor tokens = randn(rng, {3, 4});
  Tensor out = run_parallel(store, cfg, tokens, 3, 1);

  Graph g;
  Var gamma = g.input(Tensor::full({1, 4}, 1.0));
  Var beta = g.input(Tensor::zeros({1, 4}));
  Tensor expect = g.value(g.layer_norm(g.layer_norm(g.input(tokens), gamma, beta, 1e-5), gamma, beta, 1e-5));
  CHECK(max_rel_err(out, expect) < 1e-12);
}

TEST_CASE("full causal attention cannot see the future") {
  EncoderConfig cfg;
  cfg.d_model = 8;
  cfg.n_heads = 2;
  cfg.d_ff = 12;
  cfg.n_layers = 2;
  ParameterStore store = make_encoder(cfg, 9);
  Rng rng(10);
  const int T = 6;
  Tensor tokens = randn(rng, {T, 8});
  Tensor base = run_parallel(store, cfg, tokens, T, 1);

  Tensor bumped = tokens;
  for (int j = 0; j < 8; ++j) bumped.at(4, j) += rng.normal();
  Tensor out = run_parallel(store, cfg, bumped, T, 1);
  for (int t = 0; t < 4; ++t)
    for (int j = 0; j < 8; ++j) CHECK(out.at(t, j) == base.at(t, j));
  bool changed = false;
  for (int j = 0; j < 8; ++j) changed = changed || out.at(4, j) != base.at(4, j);
  CHECK(changed);
}

TEST_CASE("window-1 output is a per-token function") {
  EncoderConfig cfg;
  cfg.d_model = 8;
  cfg.n_heads = 2;
  cfg.d_ff = 12;
  cfg.n_layers = 2;
  cfg.context = Context::window;
  cfg.window = 1;
  ParameterStore store = make_encoder(cfg, 11);
  Rng rng(12);
  const int T = 5;
  Tensor tokens = randn(rng, {T, 8});
  Tensor full = run_parallel(store, cfg, tokens, T, 1);
  for (int t = 0; t < T; ++t) {
    Tensor single({1, 8});
    for (int j = 0; j < 8; ++j) single.at(0, j) = tokens.at(t, j);
    Tensor alone = run_parallel(store, cfg, single, 1, 1);
    for (int j = 0; j < 8; ++j) CHECK(full.at(t, j) == alone.at(0, j));
  }
}

TEST_CASE("no positional encoding makes earlier tokens order-free") {
  EncoderConfig cfg;
  cfg.d_model = 8;
  cfg.n_heads = 2;
  cfg.d_ff = 12;
  cfg.n_layers = 1;
  ParameterStore store = make_encoder(cfg, 13);
  Rng rng(14);
  const int T = 7;
  Tensor tokens = randn(rng, {T, 8});
  Tensor base = run_parallel(store, cfg, tokens, T, 1);

  for (int trial = 0; trial < 10; ++trial) {
    std::vector<int> perm(T - 1);
    for (int i = 0; i < T - 1; ++i) perm[static_cast<std::size_t>(i)] = i;
    for (int i = T - 2; i > 0; --i) std::swap(perm[static_cast<std::size_t>(i)],
                                              perm[static_cast<std::size_t>(rng.index(i + 1))]);
    Tensor shuffled = tokens;
    for (int i = 0; i < T - 1; ++i)
      for (int j = 0; j < 8; ++j) shuffled.at(i, j) = tokens.at(perm[static_cast<std::size_t>(i)], j);
    Tensor out = run_parallel(store, cfg, shuffled, T, 1);
    for (int j = 0; j < 8; ++j)
      CHECK(std::abs(out.at(T - 1, j) - base.at(T - 1, j)) < 1e-9);
  }
}

TEST_CASE("cached steps reproduce the parallel forward") {
  Rng seed_rng(15);
  for (int variant = 0; variant < 4; ++variant) {
    EncoderConfig cfg;
    cfg.d_model = 8;
    cfg.n_heads = variant % 2 == 0 ? 2 : 1;
    cfg.d_ff = 10;
    cfg.n_layers = 2;
    if (variant == 1) {
      cfg.context = Context::window;
      cfg.window = 1;
    } else if (variant == 2) {
      cfg.context = Context::window;
      cfg.window = 4;
    } else if (variant == 3) {
      cfg.positional_encoding = true;
    }
    CAPTURE(variant);
    ParameterStore store = make_encoder(cfg, 100 + static_cast<std::uint64_t>(variant));
    Rng rng(seed_rng.next_u64());
    const int T = 16;
    Tensor tokens = randn(rng, {T, 8});
    Tensor parallel = run_parallel(store, cfg, tokens, T, 1);

    EncoderCache cache;
    for (int t = 0; t < T; ++t) {
      Tensor out = encoder_step(store, "enc", cfg, cache, token_row(tokens, t));
      Tensor want({1, 8});
      for (int j = 0; j < 8; ++j) want.at(0, j) = parallel.at(t, j);
      CHECK(max_rel_err(out, want) < 1e-6);
      if (cfg.context == Context::window)
        for (const Tensor& rows : cache.k) CHECK(rows.rows() <= cfg.window);
    }
    CHECK(cache.t == T);
  }
}

TEST_CASE("batched forward equals independent per-stream runs") {
  EncoderConfig cfg;
  cfg.d_model = 8;
  cfg.n_heads = 2;
  cfg.d_ff = 12;
  cfg.n_layers = 2;
  ParameterStore store = make_encoder(cfg, 16);
  Rng rng(17);
  const int T = 5, B = 3;
  Tensor batch({T * B, 8});
  std::vector<Tensor> streams;
  for (int b = 0; b < B; ++b) streams.push_back(randn(rng, {T, 8}));
  for (int t = 0; t < T; ++t)
    for (int b = 0; b < B; ++b)
      for (int j = 0; j < 8; ++j) batch.at(t * B + b, j) = streams[static_cast<std::size_t>(b)].at(t, j);

  Tensor joint = run_parallel(store, cfg, batch, T, B);
  for (int b = 0; b < B; ++b) {
    Tensor solo = run_parallel(store, cfg, streams[static_cast<std::size_t>(b)], T, 1);
    for (int t = 0; t < T; ++t)
      for (int j = 0; j < 8; ++j) CHECK(joint.at(t * B + b, j) == solo.at(t, j));
  }
}

TEST_CASE("encoder gradients pass finite differences") {
  EncoderConfig cfg;
  cfg.d_model = 4;
  cfg.n_heads = 2;
  cfg.d_ff = 6;
  cfg.n_layers = 2;
  ParameterStore store = make_encoder(cfg, 18);
  Rng rng(19);
  const int T = 3;
  Tensor tokens = randn(rng, {T, 4});
  Tensor w = randn(rng, {T, 4});

  auto loss_of = [&](const ParameterStore& s) {
    Graph g;
    ParamBinder bind(g, s);
    Var out = encoder_forward(g, bind, "enc", cfg, g.input(tokens), T, 1);
    return g.value(g.sum_all(g.mul(out, g.input(w)))).data[0];
  };

  Graph g;
  ParamBinder bind(g, store);
  Var out = encoder_forward(g, bind, "enc", cfg, g.input(tokens), T, 1);
  GradResult gr = bind.collect(g.sum_all(g.mul(out, g.input(w))));

  const double h = 1e-5;
  for (auto& [name, grad] : gr.grads) {
    Tensor& p = store.at(name);
    for (std::size_t i = 0; i < p.data.size(); i += 3) {  // stride keeps runtime low
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
