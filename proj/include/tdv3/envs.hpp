#pragma once

// Synthetic memory diagnostics. Both tasks hide information early in the
// episode that the agent must reproduce later, with the gap length as the
// single difficulty knob.
//
// DelayedRecall: a cue symbol is shown once at the first step, followed by
// blank padding; at the query step the agent must answer with the cue's
// action. RepeatSequence: `delay` symbols are shown one per step, then queried
// in order; the full sequence must be answered correctly for the terminal
// reward.
//
// Observation layout: n_symbols one-hot channels, then a cue-phase flag and a
// query-phase flag.

#include <cstdint>
#include <utility>

#include "tdv3/tensor.hpp"

namespace tdv3 {

struct EnvConfig {
  enum class Kind { delayed_recall, repeat_sequence };
  Kind kind = Kind::delayed_recall;
  int delay = 16;
  int n_symbols = 4;
  int episode_len = 0;  // 0 uses the kind's natural length

  int obs_dim() const { return n_symbols + 2; }
  int n_actions() const { return n_symbols; }
  // Actions per episode: cue + padding + one query, or show/answer phases.
  int steps_per_episode() const {
    if (episode_len > 0) return episode_len;
    return kind == Kind::delayed_recall ? delay + 1 : 2 * delay;
  }
  void validate() const;
};

class Env {
 public:
  explicit Env(EnvConfig cfg);

  // Starts a fresh episode; the seed fixes the hidden symbols.
  Tensor reset(std::uint64_t episode_seed);

  struct StepResult {
    Tensor obs;
    double reward = 0;
    double cont = 1;
  };
  // Applies the action for the current step. Stepping a finished episode is a
  // contract error.
  StepResult step(int action);

  bool done() const { return done_; }
  int t() const { return t_; }  // actions taken so far
  const EnvConfig& config() const { return cfg_; }

 private:
  Tensor observe() const;

  EnvConfig cfg_;
  std::vector<int> symbols_;  // hidden cue(s) for this episode
  int t_ = 0;
  bool done_ = true;
  int matches_ = 0;
};

// (optimal, uniform-random-policy) expected per-episode returns.
std::pair<double, double> oracle_returns(const EnvConfig& cfg);

}  // namespace tdv3
