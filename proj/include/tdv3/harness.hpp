#pragma once

// Experiment driver: the collect -> train -> evaluate loop, metrics CSV,
// checkpointing and greedy evaluation. Single-threaded and fully determined
// by (config, seed); wall-clock time never reaches the CSV.

#include <functional>
#include <string>
#include <vector>

#include "tdv3/config.hpp"

namespace tdv3 {

struct MetricsRow {
  long long env_step = 0;
  double episode_return_mean = 0;
  LossBreakdown wm;
  double policy_loss = 0;
  double critic_loss = 0;
  long long wall_ms = 0;  // stdout reporting only, excluded from the CSV
};

inline constexpr const char* kMetricsHeader =
    "env_step,episode_return_mean,loss_total,loss_recon,loss_reward,loss_cont,"
    "loss_kl_dyn,loss_kl_rep,policy_loss,critic_loss";

std::string metrics_csv_line(const MetricsRow& row);  // %.9g floats, no wall_ms

struct TrainHooks {
  // After each appended eval row; return false to stop the run early (the
  // checkpoint is still written).
  std::function<bool(const MetricsRow&)> on_eval;
  // After each imagination phase with the number of starts and rollouts.
  std::function<void(int n_starts, int n_rollouts)> on_imagine;
};

struct TrainResult {
  std::vector<MetricsRow> rows;
  long long env_steps = 0;
  long long train_steps = 0;
  long long episodes = 0;
  long long imagine_calls = 0;
  long long imagine_starts = 0;
  long long imagined_rollouts = 0;
  std::string metrics_path;
  std::string checkpoint_path;
};

// Runs the loop to schedule.total_env_steps, writing metrics.csv plus
// checkpoint.tdv3 (with config sidecar checkpoint.tdv3.cfg) under out_dir.
TrainResult run_train(const RunConfig& config, const std::string& out_dir,
                      const TrainHooks& hooks = {});

struct EvalResult {
  double mean = 0;
  double ci95 = 0;  // normal-approximation half width
  int episodes = 0;
};

// Greedy-policy evaluation of an in-memory parameter set.
EvalResult evaluate_store(const ParameterStore& store, const RunConfig& config, int episodes,
                          Rng& rng);

// Loads checkpoint + config sidecar, then evaluates greedily.
EvalResult evaluate(const std::string& checkpoint_path, int episodes, std::uint64_t seed);

}  // namespace tdv3
