#pragma once

// World model: observation encoder, posterior/prior over discrete latents,
// recurrent (GRU) and transformer deterministic-state backbones behind one
// stepping interface, decoders, and the combined training loss.
//
// The posterior is a function of the observation alone; the deterministic
// state never feeds it. Latents are L categorical groups of C classes with
// uniform-mixture smoothing and straight-through sampling.

#include <string>
#include <vector>

#include "tdv3/graph.hpp"
#include "tdv3/nets.hpp"
#include "tdv3/params.hpp"
#include "tdv3/transformer.hpp"

namespace tdv3 {

// ---- scalar transforms ----

inline double symlog(double v) { return v >= 0 ? std::log1p(v) : -std::log1p(-v); }
inline double symexp(double v) { return v >= 0 ? std::expm1(v) : -std::expm1(-v); }

// `count` centers uniform in symlog space over [symlog(-limit), symlog(limit)].
// Odd counts put one center exactly at zero.
Tensor symlog_bins(int count, double limit);

// Splits unit mass linearly across the two bins bracketing clip(v); exact
// one-hot on centers. decode is the dot product with the centers.
Tensor twohot_encode(double v, const Tensor& bins);
double twohot_decode(const Tensor& weights, const Tensor& bins);

// Sum over group rows of KL(Cat(p_row) || Cat(q_row)); logits [L x C].
double kl_categorical(const Tensor& p_logits, const Tensor& q_logits);

// ---- configuration ----

enum class Backbone { rssm, tssm };

struct WorldModelConfig {
  Backbone backbone = Backbone::tssm;
  EncoderConfig encoder;  // read when backbone == tssm; d_model fields must agree
  int latent_groups = 8;   // L
  int latent_classes = 8;  // C
  int d_obs = 0;
  int d_model = 64;
  int d_embed = 64;
  int n_actions = 0;
  double unimix = 0.01;
  double free_bits = 1.0;
  double kl_dyn_scale = 0.5;
  double kl_rep_scale = 0.1;
  int reward_bins = 41;
  double reward_limit = 20.0;

  int latent_dim() const { return latent_groups * latent_classes; }
  int state_dim() const { return d_model + latent_dim(); }
  void validate() const;
};

struct LossBreakdown {
  double recon = 0, reward = 0, cont = 0, kl_dyn = 0, kl_rep = 0, total = 0;
};

// Time-major segment batch: row t*B+b belongs to stream b at position t.
// Entry t pairs the observation with the action taken there and the reward /
// continue flag that arrived with it.
struct SegmentBatch {
  int B = 0, T = 0;
  Tensor obs;      // [T*B x d_obs]
  Tensor actions;  // [T*B x n_actions]
  Tensor rewards;  // [T*B x 1]
  Tensor conts;    // [T*B x 1]
};

struct WmLossOptions {
  bool sample = true;       // false: latents are the smoothed probabilities
  bool want_grads = true;
  // Frozen logits substituted for the gradient-stopped KL arguments; used by
  // difference-quotient tests so the evaluated function matches the analytic
  // stop-gradient structure. Null means stop-grad on the live logits.
  const Tensor* fixed_post = nullptr;
  const Tensor* fixed_prior = nullptr;
};

struct WmLossResult {
  LossBreakdown breakdown;
  GradResult grads;
  Tensor h;       // [T*B x d_model] deterministic states
  Tensor z;       // [T*B x L*C] latents as used by the loss
  Tensor tokens;  // [T*B x d_model] backbone input tokens (tssm only)
  Tensor post_logits;   // [T*B x L*C]
  Tensor prior_logits;  // [T*B x L*C]
};

class WorldModel {
 public:
  explicit WorldModel(WorldModelConfig cfg);
  const WorldModelConfig& config() const { return cfg_; }
  const Tensor& reward_bin_centers() const { return bins_; }

  // Registers every parameter under "wm.".
  void init(ParameterStore& store, Rng& rng) const;

  // ---- graph building blocks (batched rows) ----
  Var embed_obs(Graph& g, ParamBinder& bind, Var obs) const;
  Var posterior_logits(Graph& g, ParamBinder& bind, Var embed) const;
  Var prior_logits(Graph& g, ParamBinder& bind, Var h) const;
  // Smoothed probabilities, sampled to straight-through one-hots when rng set.
  Var latent(Graph& g, Var logits, Rng* rng) const;
  Var token_embed(Graph& g, ParamBinder& bind, Var z, Var a) const;
  // States h_1..h_T (rows time-major) from latents/actions; h_1 is the learned
  // or zero initial state. Optionally exposes the embedded tokens.
  Var backbone_states(Graph& g, ParamBinder& bind, Var z, Var a, int T, int B,
                      Var* tokens_out = nullptr) const;
  Var decode_obs(Graph& g, ParamBinder& bind, Var state) const;
  Var decode_reward_logits(Graph& g, ParamBinder& bind, Var state) const;
  Var decode_cont_logits(Graph& g, ParamBinder& bind, Var state) const;

  // ---- training loss ----
  WmLossResult loss(const ParameterStore& store, const SegmentBatch& batch, Rng& rng,
                    const WmLossOptions& opt = {}) const;

  // ---- forward-only evaluation ----
  Tensor posterior_latent(const ParameterStore& store, const Tensor& obs_row, Rng* rng) const;
  Tensor prior_latent(const ParameterStore& store, const Tensor& h_row, Rng* rng) const;
  struct Decoded {
    Tensor obs_symlog;  // predicted observation in symlog space
    double reward = 0;
    double cont_prob = 0;
  };
  Decoded decode(const ParameterStore& store, const Tensor& h_row, const Tensor& z_row) const;
  Tensor token_row(const ParameterStore& store, const Tensor& z_row, const Tensor& a_row) const;
  Tensor rssm_step(const ParameterStore& store, const Tensor& h_row, const Tensor& z_row,
                   const Tensor& a_row) const;

 private:
  WorldModelConfig cfg_;
  Tensor bins_;
  Mlp enc_, post_, prior_, dec_obs_, dec_reward_, dec_cont_;
  Mlp token_;
  GruCell gru_;
};

// Sequential forward-only state shared by both backbones: advance() consumes
// the latent/action of the current step and yields the next deterministic
// state. Value-copyable, so rollouts can branch from a common prefix.
class ModelStepper {
 public:
  ModelStepper(const ParameterStore& store, const WorldModel& wm);
  void reset();
  const Tensor& h() const { return h_; }  // [1 x d_model]
  void advance(const Tensor& z_row, const Tensor& a_row);

 private:
  const ParameterStore* store_;
  const WorldModel* wm_;
  Tensor h_;
  EncoderCache cache_;
};

}  // namespace tdv3
