#pragma once

// Run configuration: every knob of an experiment in one struct, serialized as
// flat dotted key=value lines. Parsing is strict: unknown or duplicate keys
// are errors, values keep full precision so serialize(parse(s)) == s for
// canonical files.

#include <string>

#include "tdv3/agent.hpp"
#include "tdv3/envs.hpp"
#include "tdv3/ssm.hpp"

namespace tdv3 {

struct ReplayConfig {
  int capacity = 500;
  int seg_len = 18;
  int horizon = 15;
  int batch = 4;
  int starts_per_segment = 1;
  int rollouts_per_start = 3;
  double priority_floor = 0.1;

  void validate() const;
};

struct ScheduleConfig {
  long long total_env_steps = 50000;
  double train_ratio = 0.25;  // train steps per env step
  int eval_every = 2000;
  int eval_episodes = 10;
  std::uint64_t seed = 0;

  void validate() const;
};

struct RunConfig {
  EnvConfig env;
  WorldModelConfig world_model;  // d_obs / n_actions are derived, not keys
  double world_model_lr = 1e-3;

  double agent_gamma = 0.997;
  double agent_lambda = 0.95;
  double agent_entropy_scale = 3e-4;
  int agent_critic_bins = 41;
  int agent_hidden = 64;
  double agent_lr = 3e-4;
  std::string agent_freeze_scope = "world_model";  // or "transformer"

  ReplayConfig replay;
  ScheduleConfig schedule;

  // Fills the derived world-model fields from the environment and validates
  // every section.
  void finalize();

  AgentConfig agent_config() const;

  static RunConfig parse(const std::string& text);
  static RunConfig load(const std::string& path);
  std::string serialize() const;
  void save(const std::string& path) const;
};

}  // namespace tdv3
