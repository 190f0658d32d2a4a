#include "tdv3/envs.hpp"

#include <cmath>
#include <stdexcept>

namespace tdv3 {

void EnvConfig::validate() const {
  if (delay < 1) throw std::invalid_argument("env config: delay must be >= 1");
  if (n_symbols < 2) throw std::invalid_argument("env config: n_symbols must be >= 2");
  if (episode_len != 0 && episode_len <= delay)
    throw std::invalid_argument("env config: episode_len must exceed delay");
}

Env::Env(EnvConfig cfg) : cfg_(cfg) { cfg_.validate(); }

Tensor Env::reset(std::uint64_t episode_seed) {
  Rng rng(episode_seed);
  symbols_.clear();
  const int k = cfg_.kind == EnvConfig::Kind::delayed_recall ? 1 : cfg_.delay;
  for (int i = 0; i < k; ++i) symbols_.push_back(rng.index(cfg_.n_symbols));
  t_ = 0;
  done_ = false;
  matches_ = 0;
  return observe();
}

// Observation for the state reached after t_ actions (0-based position t_).
Tensor Env::observe() const {
  Tensor obs({cfg_.obs_dim()});
  const int cue_flag = cfg_.n_symbols;
  const int query_flag = cfg_.n_symbols + 1;
  if (cfg_.kind == EnvConfig::Kind::delayed_recall) {
    if (t_ == 0) {
      obs.data[static_cast<std::size_t>(symbols_[0])] = 1.0;
      obs.data[static_cast<std::size_t>(cue_flag)] = 1.0;
    } else if (t_ == cfg_.steps_per_episode() - 1) {
      obs.data[static_cast<std::size_t>(query_flag)] = 1.0;
    }
    // padding positions and the terminal observation stay zero
  } else {
    const int show = cfg_.delay;
    if (t_ < show) {
      obs.data[static_cast<std::size_t>(symbols_[static_cast<std::size_t>(t_)])] = 1.0;
      obs.data[static_cast<std::size_t>(cue_flag)] = 1.0;
    } else if (t_ < 2 * show) {
      obs.data[static_cast<std::size_t>(query_flag)] = 1.0;
    }
  }
  return obs;
}

Env::StepResult Env::step(int action) {
  if (done_) throw std::logic_error("env: step() after episode end");
  if (action < 0 || action >= cfg_.n_actions())
    throw std::invalid_argument("env: action " + std::to_string(action) + " out of range");

  StepResult out;
  const int total = cfg_.steps_per_episode();
  if (cfg_.kind == EnvConfig::Kind::delayed_recall) {
    const bool at_query = t_ == total - 1;
    if (at_query && action == symbols_[0]) out.reward = 1.0;
  } else {
    const int show = cfg_.delay;
    if (t_ >= show && t_ < 2 * show) {
      if (action == symbols_[static_cast<std::size_t>(t_ - show)]) matches_ += 1;
      if (t_ == 2 * show - 1 && matches_ == show) out.reward = 1.0;
    }
  }
  t_ += 1;
  done_ = t_ >= total;
  out.cont = done_ ? 0.0 : 1.0;
  out.obs = observe();
  return out;
}

std::pair<double, double> oracle_returns(const EnvConfig& cfg) {
  cfg.validate();
  const double m = double(cfg.n_symbols);
  if (cfg.kind == EnvConfig::Kind::delayed_recall) return {1.0, 1.0 / m};
  return {1.0, std::pow(1.0 / m, double(cfg.delay))};
}

}  // namespace tdv3
