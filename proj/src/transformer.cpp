#include "tdv3/transformer.hpp"

#include <cmath>
#include <stdexcept>

namespace tdv3 {

void EncoderConfig::validate() const {
  if (d_model <= 0 || n_heads <= 0 || d_ff <= 0 || n_layers <= 0)
    throw std::invalid_argument("encoder config: extents must be positive");
  if (d_model % n_heads != 0)
    throw std::invalid_argument("encoder config: d_model " + std::to_string(d_model) +
                                " not divisible by n_heads " + std::to_string(n_heads));
  if (context == Context::window && window < 1)
    throw std::invalid_argument("encoder config: window must be >= 1");
}

void encoder_init(ParameterStore& store, const std::string& prefix, const EncoderConfig& cfg, Rng& rng) {
  cfg.validate();
  const int d = cfg.d_model;
  for (int l = 0; l < cfg.n_layers; ++l) {
    const std::string lp = prefix + ".l" + std::to_string(l);
    init_matrix(store, lp + ".wq", d, d, rng);
    init_matrix(store, lp + ".wk", d, d, rng);
    init_matrix(store, lp + ".wv", d, d, rng);
    init_matrix(store, lp + ".wo", d, d, rng);
    init_dense(store, lp + ".ffn1", d, cfg.d_ff, rng);
    init_dense(store, lp + ".ffn2", cfg.d_ff, d, rng);
    init_layer_norm(store, lp + ".ln1", d);
    init_layer_norm(store, lp + ".ln2", d);
  }
}

Tensor positional_row(int pos, int d) {
  Tensor row({1, d});
  for (int j = 0; j < d; ++j) {
    const double rate = std::pow(10000.0, double(2 * (j / 2)) / double(d));
    const double angle = double(pos) / rate;
    row.data[static_cast<std::size_t>(j)] = (j % 2 == 0) ? std::sin(angle) : std::cos(angle);
  }
  return row;
}

namespace {

// One layer over rows that already carry their visibility ranges.
Var encoder_layer(Graph& g, ParamBinder& bind, const std::string& lp, const EncoderConfig& cfg, Var x,
                  const std::vector<VisRange>& vis) {
  const int d = cfg.d_model;
  const int dh = d / cfg.n_heads;
  Var q = g.matmul(x, bind(lp + ".wq"));
  Var k = g.matmul(x, bind(lp + ".wk"));
  Var v = g.matmul(x, bind(lp + ".wv"));
  std::vector<Var> heads;
  heads.reserve(static_cast<std::size_t>(cfg.n_heads));
  for (int h = 0; h < cfg.n_heads; ++h) {
    Var qh = g.slice_cols(q, h * dh, dh);
    Var kh = g.slice_cols(k, h * dh, dh);
    Var vh = g.slice_cols(v, h * dh, dh);
    heads.push_back(g.attention(qh, kh, vh, vis));
  }
  Var merged = g.matmul(cfg.n_heads == 1 ? heads[0] : g.concat_cols(heads), bind(lp + ".wo"));
  Var y = g.layer_norm(g.add(x, merged), bind(lp + ".ln1.g"), bind(lp + ".ln1.b"), 1e-5);
  Var f1 = g.silu(g.linear(y, bind(lp + ".ffn1.W"), bind(lp + ".ffn1.b")));
  Var f2 = g.linear(f1, bind(lp + ".ffn2.W"), bind(lp + ".ffn2.b"));
  return g.layer_norm(g.add(y, f2), bind(lp + ".ln2.g"), bind(lp + ".ln2.b"), 1e-5);
}

int window_start(const EncoderConfig& cfg, int t) {
  if (cfg.context == Context::full_causal) return 0;
  return std::max(0, t - cfg.window + 1);
}

}  // namespace

Var encoder_forward(Graph& g, ParamBinder& bind, const std::string& prefix, const EncoderConfig& cfg,
                    Var tokens, int T, int B) {
  cfg.validate();
  if (T <= 0 || B <= 0) throw std::invalid_argument("encoder_forward: T and B must be positive");
  const Tensor& tv = g.value(tokens);
  if (tv.rows() != T * B || tv.cols() != cfg.d_model)
    throw std::invalid_argument("encoder_forward: tokens " + shape_str(tv.shape) + " vs T*B=" +
                                std::to_string(T * B) + ", d_model=" + std::to_string(cfg.d_model));

  Var x = tokens;
  if (cfg.positional_encoding) {
    Tensor pe({T * B, cfg.d_model});
    for (int t = 0; t < T; ++t) {
      Tensor row = positional_row(t, cfg.d_model);
      for (int b = 0; b < B; ++b)
        for (int j = 0; j < cfg.d_model; ++j)
          pe.at(t * B + b, j) = row.data[static_cast<std::size_t>(j)];
    }
    x = g.add(x, g.input(std::move(pe)));
  }

  std::vector<VisRange> vis(static_cast<std::size_t>(T * B));
  for (int t = 0; t < T; ++t) {
    const int t0 = window_start(cfg, t);
    for (int b = 0; b < B; ++b)
      vis[static_cast<std::size_t>(t * B + b)] = VisRange{t0 * B + b, t - t0 + 1, B};
  }

  for (int l = 0; l < cfg.n_layers; ++l)
    x = encoder_layer(g, bind, prefix + ".l" + std::to_string(l), cfg, x, vis);
  return x;
}

Tensor encoder_step(const ParameterStore& store, const std::string& prefix, const EncoderConfig& cfg,
                    EncoderCache& cache, const Tensor& token) {
  cfg.validate();
  if (cache.k.empty()) {
    cache.k.assign(static_cast<std::size_t>(cfg.n_layers), Tensor());
    cache.v.assign(static_cast<std::size_t>(cfg.n_layers), Tensor());
  }
  if (static_cast<int>(cache.k.size()) != cfg.n_layers)
    throw std::invalid_argument("encoder_step: cache has " + std::to_string(cache.k.size()) +
                                " layers, config wants " + std::to_string(cfg.n_layers));
  const int d = cfg.d_model;
  if (static_cast<int>(token.size()) != d)
    throw std::invalid_argument("encoder_step: token " + shape_str(token.shape) + " vs d_model " +
                                std::to_string(d));
  const int dh = d / cfg.n_heads;

  Graph g;
  ParamBinder bind(g, store);
  Tensor tok({1, d}, token.data);
  if (cfg.positional_encoding) {
    Tensor pe = positional_row(cache.t, d);
    for (int j = 0; j < d; ++j) tok.data[static_cast<std::size_t>(j)] += pe.data[static_cast<std::size_t>(j)];
  }
  Var x = g.input(std::move(tok));

  for (int l = 0; l < cfg.n_layers; ++l) {
    const std::string lp = prefix + ".l" + std::to_string(l);
    auto& lk = cache.k[static_cast<std::size_t>(l)];
    auto& lv = cache.v[static_cast<std::size_t>(l)];

    Var q = g.matmul(x, bind(lp + ".wq"));
    Tensor k_new = g.value(g.matmul(x, bind(lp + ".wk")));
    Tensor v_new = g.value(g.matmul(x, bind(lp + ".wv")));

    auto append_row = [d](Tensor& rows, const Tensor& row) {
      if (rows.size() == 0) {
        rows = Tensor({1, d}, row.data);
        return;
      }
      Tensor grown({rows.rows() + 1, d});
      std::copy(rows.data.begin(), rows.data.end(), grown.data.begin());
      std::copy(row.data.begin(), row.data.end(), grown.data.begin() + rows.data.size());
      rows = std::move(grown);
    };
    append_row(lk, k_new);
    append_row(lv, v_new);
    if (cfg.context == Context::window && lk.rows() > cfg.window) {
      Tensor kk({cfg.window, d}), vv({cfg.window, d});
      const int drop = lk.rows() - cfg.window;
      std::copy(lk.data.begin() + static_cast<std::ptrdiff_t>(drop) * d, lk.data.end(), kk.data.begin());
      std::copy(lv.data.begin() + static_cast<std::ptrdiff_t>(drop) * d, lv.data.end(), vv.data.begin());
      lk = std::move(kk);
      lv = std::move(vv);
    }

    Var kv = g.input(lk);
    Var vv2 = g.input(lv);
    std::vector<VisRange> vis = {VisRange{0, lk.rows(), 1}};
    std::vector<Var> heads;
    heads.reserve(static_cast<std::size_t>(cfg.n_heads));
    for (int h = 0; h < cfg.n_heads; ++h) {
      Var qh = g.slice_cols(q, h * dh, dh);
      Var kh = g.slice_cols(kv, h * dh, dh);
      Var vh = g.slice_cols(vv2, h * dh, dh);
      heads.push_back(g.attention(qh, kh, vh, vis));
    }
    Var merged = g.matmul(cfg.n_heads == 1 ? heads[0] : g.concat_cols(heads), bind(lp + ".wo"));
    Var y = g.layer_norm(g.add(x, merged), bind(lp + ".ln1.g"), bind(lp + ".ln1.b"), 1e-5);
    Var f1 = g.silu(g.linear(y, bind(lp + ".ffn1.W"), bind(lp + ".ffn1.b")));
    Var f2 = g.linear(f1, bind(lp + ".ffn2.W"), bind(lp + ".ffn2.b"));
    x = g.layer_norm(g.add(y, f2), bind(lp + ".ln2.g"), bind(lp + ".ln2.b"), 1e-5);
  }

  cache.t += 1;
  return g.value(x);
}

}  // namespace tdv3
