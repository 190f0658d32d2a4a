#include "tdv3/nets.hpp"

#include <stdexcept>

namespace tdv3 {

void Mlp::init(ParameterStore& store, Rng& rng) const {
  if (dims.size() < 2) throw std::invalid_argument("Mlp " + prefix + ": needs at least one layer");
  for (int i = 0; i < n_layers(); ++i)
    init_dense(store, prefix + ".l" + std::to_string(i), dims[i], dims[i + 1], rng);
}

Var Mlp::operator()(Graph& g, ParamBinder& bind, Var x) const {
  Var h = x;
  for (int i = 0; i < n_layers(); ++i) {
    const std::string l = prefix + ".l" + std::to_string(i);
    h = g.linear(h, bind(l + ".W"), bind(l + ".b"));
    if (i + 1 < n_layers()) h = g.silu(h);
  }
  return h;
}

void GruCell::init(ParameterStore& store, Rng& rng) const {
  init_dense(store, prefix + ".u", d_in + d_h, d_h, rng);
  init_dense(store, prefix + ".r", d_in + d_h, d_h, rng);
  init_dense(store, prefix + ".c", d_in + d_h, d_h, rng);
}

Var GruCell::operator()(Graph& g, ParamBinder& bind, Var in, Var h) const {
  Var ih = g.concat_cols({in, h});
  Var u = g.sigmoid(g.linear(ih, bind(prefix + ".u.W"), bind(prefix + ".u.b")));
  Var r = g.sigmoid(g.linear(ih, bind(prefix + ".r.W"), bind(prefix + ".r.b")));
  Var irh = g.concat_cols({in, g.mul(r, h)});
  Var c = g.tanh(g.linear(irh, bind(prefix + ".c.W"), bind(prefix + ".c.b")));
  Var one_minus_u = g.add_scalar(g.scale(u, -1.0), 1.0);
  return g.add(g.mul(u, h), g.mul(one_minus_u, c));
}

}  // namespace tdv3
