#pragma once

// Small building-block networks: MLP with SiLU hidden activations and a GRU
// cell. Both describe their parameters by name so the same object drives
// init, training forward and forward-only evaluation.

#include <string>
#include <vector>

#include "tdv3/graph.hpp"
#include "tdv3/params.hpp"

namespace tdv3 {

// dims = [d_in, hidden..., d_out]; layers live at <prefix>.l<i>.{W,b}.
// The final layer is linear; hidden layers are followed by SiLU.
struct Mlp {
  std::string prefix;
  std::vector<int> dims;

  int n_layers() const { return static_cast<int>(dims.size()) - 1; }
  void init(ParameterStore& store, Rng& rng) const;
  Var operator()(Graph& g, ParamBinder& bind, Var x) const;
};

// Gated recurrent cell over concatenated [input, hidden]:
//   u = sigmoid([in,h]·Wu + bu)
//   r = sigmoid([in,h]·Wr + br)
//   c = tanh([in, r*h]·Wc + bc)
//   h' = u*h + (1-u)*c
// Parameters at <prefix>.{u,r,c}.{W,b}. Rows are batch entries.
struct GruCell {
  std::string prefix;
  int d_in = 0;
  int d_h = 0;

  void init(ParameterStore& store, Rng& rng) const;
  Var operator()(Graph& g, ParamBinder& bind, Var in, Var h) const;
};

}  // namespace tdv3
