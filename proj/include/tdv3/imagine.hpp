#pragma once

// Forward-only latent rollouts branched from posterior states. Every start
// gets min(requested, kMaxRolloutsPerStart) rollouts with independent random
// streams; nothing here builds gradients.

#include <functional>

#include "tdv3/ssm.hpp"

namespace tdv3 {

inline constexpr int kMaxRolloutsPerStart = 3;

// A start is a posterior latent plus the latent/action pairs that preceded it
// in its trajectory. The deterministic state is rebuilt by replaying the
// prefix through a stepper, which also fills the transformer key/value cache.
struct ImagineStart {
  Tensor z_row;                  // [1 x L*C]
  std::vector<Tensor> prefix_z;  // [1 x L*C] each, oldest first
  std::vector<Tensor> prefix_a;  // [1 x n_actions] each, same length
};

struct ImaginedRollout {
  Tensor states;   // [(H+1) x (d_model + L*C)] s_0..s_H, each row [h ; z]
  Tensor actions;  // [H x n_actions] one-hot; row t-1 is the action taken at s_{t-1}
  std::vector<double> rewards;    // predicted, arriving with s_1..s_H
  std::vector<double> continues;  // predicted continue probabilities
  int horizon() const { return actions.rows(); }
};

// Draws an action index from a policy given a state row.
using ImaginePolicy = std::function<int(const Tensor& state_row, Rng& rng)>;

// Returns rollouts grouped by start (all rollouts of start 0, then start 1,
// ...). Consumes one draw from rng to salt the per-rollout streams, so
// successive calls diverge while a fixed rng state reproduces exactly.
std::vector<ImaginedRollout> imagine(const ParameterStore& store, const WorldModel& wm,
                                     const std::vector<ImagineStart>& starts, int horizon,
                                     int rollouts_per_start, const ImaginePolicy& policy, Rng& rng);

// Picks `per_segment` start points per batch stream, uniform over the later
// half of positions (imagined windows then cover the reward-bearing tail with
// real prefix context), cutting start latents and prefixes out of a
// world-model loss pass.
std::vector<ImagineStart> make_starts(const WmLossResult& res, const SegmentBatch& batch,
                                      int per_segment, Rng& rng);

}  // namespace tdv3
