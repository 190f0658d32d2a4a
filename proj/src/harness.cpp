#include "tdv3/harness.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include "tdv3/agent.hpp"
#include "tdv3/checkpoint.hpp"
#include "tdv3/envs.hpp"
#include "tdv3/imagine.hpp"
#include "tdv3/replay.hpp"

namespace tdv3 {

namespace {

Tensor onehot_row(int i, int n) {
  Tensor t = Tensor::zeros({1, n});
  t.at(0, i) = 1.0;
  return t;
}

Tensor concat_row(const Tensor& a, const Tensor& b) {
  Tensor out({1, a.cols() + b.cols()});
  for (int j = 0; j < a.cols(); ++j) out.at(0, j) = a.at(0, j);
  for (int j = 0; j < b.cols(); ++j) out.at(0, a.cols() + j) = b.at(0, j);
  return out;
}

void push_entry(Trajectory& traj, const Tensor& obs, const Tensor& action, double reward,
                double cont) {
  traj.observations.push_back(obs);
  traj.actions.push_back(action);
  traj.rewards.push_back(reward);
  traj.continues.push_back(cont);
}

}  // namespace

std::string metrics_csv_line(const MetricsRow& row) {
  char buf[320];
  std::snprintf(buf, sizeof buf, "%lld,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g",
                row.env_step, row.episode_return_mean, row.wm.total, row.wm.recon, row.wm.reward,
                row.wm.cont, row.wm.kl_dyn, row.wm.kl_rep, row.policy_loss, row.critic_loss);
  return buf;
}

EvalResult evaluate_store(const ParameterStore& store, const RunConfig& config, int episodes,
                          Rng& rng) {
  if (episodes < 1) throw std::invalid_argument("eval: episodes must be positive");
  RunConfig cfg = config;
  cfg.finalize();
  const WorldModel wm(cfg.world_model);
  const Agent agent(cfg.agent_config());
  Env env(cfg.env);
  const int n_actions = cfg.env.n_actions();

  double sum = 0, sumsq = 0;
  for (int e = 0; e < episodes; ++e) {
    const std::uint64_t seed = rng.next_u64();
    Tensor obs = env.reset(seed);
    ModelStepper stepper(store, wm);
    stepper.reset();
    Tensor z = wm.posterior_latent(store, obs, nullptr);  // mode: eval is deterministic
    double ret = 0;
    while (!env.done()) {
      const Tensor state = concat_row(stepper.h(), z);
      const int a = agent.act(store, state, /*greedy=*/true, rng);
      const Tensor a_row = onehot_row(a, n_actions);
      const auto sr = env.step(a);
      ret += sr.reward;
      stepper.advance(z, a_row);
      if (!env.done()) z = wm.posterior_latent(store, sr.obs, nullptr);
    }
    sum += ret;
    sumsq += ret * ret;
  }
  EvalResult out;
  out.episodes = episodes;
  out.mean = sum / episodes;
  if (episodes > 1) {
    const double var = std::max(0.0, (sumsq - episodes * out.mean * out.mean) / (episodes - 1));
    out.ci95 = 1.96 * std::sqrt(var / episodes);
  }
  return out;
}

EvalResult evaluate(const std::string& checkpoint_path, int episodes, std::uint64_t seed) {
  if (episodes < 1) throw std::invalid_argument("eval: episodes must be positive");
  const auto loaded = checkpoint_read(checkpoint_path);
  RunConfig cfg = RunConfig::load(checkpoint_path + ".cfg");
  const WorldModel wm(cfg.world_model);
  const Agent agent(cfg.agent_config());
  ParameterStore store;
  Rng shape_rng(0);
  wm.init(store, shape_rng);
  agent.init(store, shape_rng);
  checkpoint_restore(store, loaded);
  Rng rng(seed);
  return evaluate_store(store, cfg, episodes, rng);
}

TrainResult run_train(const RunConfig& config, const std::string& out_dir, const TrainHooks& hooks) {
  RunConfig cfg = config;
  cfg.finalize();
  std::filesystem::create_directories(out_dir);

  const auto t0 = std::chrono::steady_clock::now();
  const auto wall_ms = [&]() {
    return std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() -
                                                                 t0)
        .count();
  };

  const WorldModel wm(cfg.world_model);
  Agent agent(cfg.agent_config());
  ParameterStore store;
  Rng master(cfg.schedule.seed);
  Rng init_rng = master.derive("init");
  wm.init(store, init_rng);
  agent.init(store, init_rng);

  Env env(cfg.env);
  const int n_actions = cfg.env.n_actions();
  ReplayBuffer buffer(cfg.replay.capacity, cfg.replay.priority_floor);
  Rng episode_seeds = master.derive("episodes");
  Rng collect_rng = master.derive("collect");
  Rng replay_rng = master.derive("replay");
  Rng loss_rng = master.derive("wm-loss");
  Rng starts_rng = master.derive("starts");
  Rng imagine_rng = master.derive("imagine");
  const Rng eval_base = master.derive("eval");
  AdamConfig wm_opt;
  wm_opt.lr = cfg.world_model_lr;

  TrainResult result;
  result.metrics_path = (std::filesystem::path(out_dir) / "metrics.csv").string();
  result.checkpoint_path = (std::filesystem::path(out_dir) / "checkpoint.tdv3").string();
  std::ofstream csv(result.metrics_path);
  if (!csv) throw std::runtime_error("metrics: cannot write '" + result.metrics_path + "'");
  csv << kMetricsHeader << "\n";
  csv.flush();

  MetricsRow last;  // most recent loss values, reported at each eval point
  double credit = 0;
  long long next_eval = cfg.schedule.eval_every;
  long long eval_index = 0;
  bool stopped = false;

  const ImaginePolicy imagine_policy = [&](const Tensor& state, Rng& r) {
    return agent.act(store, state, /*greedy=*/false, r);
  };

  const auto train_step = [&]() {
    if (buffer.eligible(cfg.replay.seg_len) < 1) return;
    const auto refs = buffer.sample_segments(cfg.replay.batch, cfg.replay.seg_len, replay_rng);
    const SegmentBatch seg = buffer.materialize(refs, cfg.replay.seg_len);
    const WmLossResult res = wm.loss(store, seg, loss_rng, {});
    adam_step(store, res.grads, wm_opt);

    const auto starts = make_starts(res, seg, cfg.replay.starts_per_segment, starts_rng);
    const auto rolls = imagine(store, wm, starts, cfg.replay.horizon,
                               cfg.replay.rollouts_per_start, imagine_policy, imagine_rng);
    result.imagine_calls += 1;
    result.imagine_starts += static_cast<long long>(starts.size());
    result.imagined_rollouts += static_cast<long long>(rolls.size());
    if (hooks.on_imagine) hooks.on_imagine(static_cast<int>(starts.size()), static_cast<int>(rolls.size()));

    const auto batch = agent.prepare(store, rolls);
    last.critic_loss = agent.critic_update(store, batch);
    last.policy_loss = agent.policy_update(store, batch);
    last.wm = res.breakdown;
    result.train_steps += 1;
  };

  const auto eval_point = [&]() {
    Rng eval_rng = eval_base.derive(static_cast<std::uint64_t>(eval_index++));
    MetricsRow row = last;
    row.env_step = result.env_steps;
    row.episode_return_mean =
        evaluate_store(store, cfg, cfg.schedule.eval_episodes, eval_rng).mean;
    row.wall_ms = wall_ms();
    csv << metrics_csv_line(row) << "\n";
    csv.flush();
    result.rows.push_back(row);
    if (hooks.on_eval && !hooks.on_eval(row)) stopped = true;
  };

  while (result.env_steps < cfg.schedule.total_env_steps && !stopped) {
    const std::uint64_t ep_seed = episode_seeds.next_u64();
    Tensor obs = env.reset(ep_seed);
    ModelStepper stepper(store, wm);
    stepper.reset();
    Tensor z = wm.posterior_latent(store, obs, &collect_rng);
    double arrived_reward = 0, arrived_cont = 1;
    Trajectory traj;

    while (!env.done()) {
      const Tensor state = concat_row(stepper.h(), z);
      const int a = agent.act(store, state, /*greedy=*/false, collect_rng);
      const Tensor a_row = onehot_row(a, n_actions);
      push_entry(traj, obs, a_row, arrived_reward, arrived_cont);

      const auto sr = env.step(a);
      result.env_steps += 1;
      stepper.advance(z, a_row);
      obs = sr.obs;
      arrived_reward = sr.reward;
      arrived_cont = sr.cont;
      if (env.done()) {
        push_entry(traj, obs, onehot_row(0, n_actions), arrived_reward, arrived_cont);
      } else {
        z = wm.posterior_latent(store, obs, &collect_rng);
      }

      credit += cfg.schedule.train_ratio;
      while (credit >= 1.0 && !stopped) {
        credit -= 1.0;
        train_step();
      }
      if (!stopped && result.env_steps >= next_eval) {
        eval_point();
        next_eval += cfg.schedule.eval_every;
      }
      if (stopped || result.env_steps >= cfg.schedule.total_env_steps) break;
    }
    if (traj.length() > 0) buffer.add(std::move(traj));
    result.episodes += 1;
  }

  checkpoint_save(store, result.checkpoint_path);
  cfg.save(result.checkpoint_path + ".cfg");
  return result;
}

}  // namespace tdv3
