#pragma once

// Causal transformer encoder with a configurable context window and no
// dropout. Attention visibility is expressed as per-query index sets rather
// than additive masks, so the window-1 variant literally contains no masking
// arithmetic. A KV cache supports sequential rollout; its outputs match the
// parallel forward.

#include <string>
#include <vector>

#include "tdv3/graph.hpp"
#include "tdv3/params.hpp"

namespace tdv3 {

enum class Context { full_causal, window };

struct EncoderConfig {
  int d_model = 64;
  int n_heads = 2;
  int d_ff = 128;
  int n_layers = 2;
  Context context = Context::full_causal;
  int window = 1;                    // only read when context == window
  bool positional_encoding = false;  // sinusoidal, off by default

  void validate() const;
};

// Layer l parameters at <prefix>.l<l>.{wq,wk,wv,wo} (bias-free),
// .ffn1/.ffn2 (dense) and .ln1/.ln2 (norm pairs).
void encoder_init(ParameterStore& store, const std::string& prefix, const EncoderConfig& cfg, Rng& rng);

// Parallel forward over a time-major batch: row t*B+b of tokens is stream b at
// position t. Position t attends to positions vis(t) of its own stream only.
// Returns [T*B x d_model].
Var encoder_forward(Graph& g, ParamBinder& bind, const std::string& prefix, const EncoderConfig& cfg,
                    Var tokens, int T, int B);

// Sequential evaluation state for one stream. Holds per-layer K/V rows of the
// consumed prefix; Window(k) retains at most k rows per layer.
struct EncoderCache {
  int t = 0;  // tokens consumed so far
  std::vector<Tensor> k, v;  // per layer, rows appended in order (possibly evicted)
};

// Consumes one token, returns the encoder output at its position.
// Feeding a sequence token-by-token reproduces encoder_forward rows.
Tensor encoder_step(const ParameterStore& store, const std::string& prefix, const EncoderConfig& cfg,
                    EncoderCache& cache, const Tensor& token);

// Sinusoidal position row, length d (used only when positional_encoding).
Tensor positional_row(int pos, int d);

}  // namespace tdv3
