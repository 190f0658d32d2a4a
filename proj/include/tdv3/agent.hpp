#pragma once

// Actor-critic trained purely on imagined rollouts. The critic regresses
// lambda returns through a two-hot distribution over squashed-value bins;
// the actor follows score-function gradients with an entropy bonus. World
// model parameters stay frozen for the duration of every update.

#include <string>
#include <vector>

#include "tdv3/imagine.hpp"
#include "tdv3/nets.hpp"
#include "tdv3/params.hpp"

namespace tdv3 {

// R_t = r_t + gamma * c_t * ((1 - lambda) * v_t + lambda * R_{t+1}) with
// R_{H+1} = v_H. rewards/continues hold steps 1..H, values states 0..H;
// the result holds R_1..R_H.
std::vector<double> lambda_returns(const std::vector<double>& rewards,
                                   const std::vector<double>& values,
                                   const std::vector<double>& continues, double gamma,
                                   double lambda);

struct AgentConfig {
  int state_dim = 0;
  int n_actions = 0;
  int hidden = 64;
  double gamma = 0.997;
  double lambda = 0.95;
  double entropy_scale = 3e-4;
  int value_bins = 41;
  double value_limit = 20.0;
  double lr = 3e-4;
  std::string freeze_prefix = "wm";

  void validate() const;
};

class Agent {
 public:
  explicit Agent(AgentConfig cfg);
  const AgentConfig& config() const { return cfg_; }
  const Tensor& value_bin_centers() const { return bins_; }

  // Registers parameters under "actor." and "critic.".
  void init(ParameterStore& store, Rng& rng) const;

  Tensor policy_logits(const ParameterStore& store, const Tensor& state_row) const;
  // greedy: lowest-index argmax; otherwise a categorical draw from softmax.
  int act(const ParameterStore& store, const Tensor& state_row, bool greedy, Rng& rng) const;
  double value(const ParameterStore& store, const Tensor& state_row) const;

  // One row per (rollout, step t in 1..H): the state the action was taken in,
  // the action, the lambda return R_t, the normalized advantage and the
  // probability the rollout was still live at that state.
  struct UpdateBatch {
    Tensor states;      // [N x state_dim]
    Tensor actions;     // [N x n_actions]
    Tensor returns;     // [N x 1]
    Tensor advantages;  // [N x 1]
    Tensor weights;     // [N x 1]
    double range_used = 1.0;  // advantage normalizer, max(1, range EMA)
  };
  // Computes values with the current critic and updates the running
  // percentile-range estimate used to scale advantages.
  UpdateBatch prepare(const ParameterStore& store, const std::vector<ImaginedRollout>& rollouts);

  // Loss and gradients of one head at the current parameters; world-model
  // entries are frozen for the duration of the call.
  GradResult critic_loss(ParameterStore& store, const UpdateBatch& batch) const;
  GradResult policy_loss(ParameterStore& store, const UpdateBatch& batch) const;

  // Each returns the loss value after one optimizer step on its own head.
  double critic_update(ParameterStore& store, const UpdateBatch& batch) const;
  double policy_update(ParameterStore& store, const UpdateBatch& batch) const;

  double return_range_ema() const { return range_ema_; }

 private:
  AgentConfig cfg_;
  Tensor bins_;
  Mlp actor_, critic_;
  double range_ema_ = -1.0;  // negative: not yet observed
};

}  // namespace tdv3
