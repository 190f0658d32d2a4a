#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "doctest.h"
#include "tdv3/checkpoint.hpp"
#include "tdv3/harness.hpp"
#include "tdv3/plot.hpp"

using namespace tdv3;

namespace {

std::string read_file(const std::string& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

std::filesystem::path temp_dir(const std::string& leaf) {
  const auto dir = std::filesystem::temp_directory_path() / "tdv3_test_harness" / leaf;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

// small but complete run: short episodes, tiny model
RunConfig tiny_config() {
  RunConfig cfg;
  cfg.env.kind = EnvConfig::Kind::delayed_recall;
  cfg.env.delay = 3;  // 4 actions, 5 stored entries per episode
  cfg.env.n_symbols = 4;
  cfg.world_model.backbone = Backbone::tssm;
  cfg.world_model.encoder.context = Context::full_causal;
  cfg.world_model.encoder.n_heads = 2;
  cfg.world_model.encoder.d_ff = 16;
  cfg.world_model.encoder.n_layers = 1;
  cfg.world_model.d_model = 8;
  cfg.world_model.d_embed = 8;
  cfg.world_model.latent_groups = 2;
  cfg.world_model.latent_classes = 3;
  cfg.world_model.reward_bins = 11;
  cfg.agent_hidden = 8;
  cfg.agent_critic_bins = 11;
  cfg.replay.capacity = 50;
  cfg.replay.seg_len = 5;
  cfg.replay.horizon = 3;
  cfg.replay.batch = 2;
  cfg.replay.starts_per_segment = 1;
  cfg.replay.rollouts_per_start = 3;
  cfg.schedule.total_env_steps = 200;
  cfg.schedule.train_ratio = 0.25;
  cfg.schedule.eval_every = 50;
  cfg.schedule.eval_episodes = 2;
  cfg.schedule.seed = 7;
  return cfg;
}

}  // namespace

TEST_CASE("metrics line formatting uses 9 significant digits and no wall clock") {
  MetricsRow row;
  row.env_step = 100;
  row.episode_return_mean = 0.25;
  row.wm.total = 1.5;
  row.wm.recon = 1.0;
  row.wm.reward = 0.25;
  row.wm.cont = 0.125;
  row.wm.kl_dyn = 0.0625;
  row.wm.kl_rep = 0.03125;
  row.policy_loss = -0.5;
  row.critic_loss = 2.0;
  row.wall_ms = 123456;  // must not appear
  CHECK(metrics_csv_line(row) == "100,0.25,1.5,1,0.25,0.125,0.0625,0.03125,-0.5,2");
  CHECK(std::string(kMetricsHeader).find("wall") == std::string::npos);
  CHECK(metrics_csv_line(MetricsRow{}) == "0,0,0,0,0,0,0,0,0,0");
}

TEST_CASE("zero-step run emits header-only metrics and an initial checkpoint") {
  const auto dir = temp_dir("zero");
  RunConfig cfg = tiny_config();
  cfg.schedule.total_env_steps = 0;
  const TrainResult res = run_train(cfg, dir.string());
  CHECK(res.rows.empty());
  CHECK(res.env_steps == 0);
  CHECK(res.train_steps == 0);
  CHECK(read_file(res.metrics_path) == std::string(kMetricsHeader) + "\n");

  // checkpoint loads back bitwise and the sidecar reproduces the config
  const auto loaded = checkpoint_read(res.checkpoint_path);
  CHECK(loaded.count("wm.h0") == 1);
  CHECK(loaded.count("actor.l0.W") == 1);
  RunConfig side = RunConfig::load(res.checkpoint_path + ".cfg");
  CHECK(side.serialize() == cfg.serialize());
  std::filesystem::remove_all(dir);
}

TEST_CASE("training run: counters, cadence and csv layout") {
  const auto dir = temp_dir("run");
  RunConfig cfg = tiny_config();
  cfg.replay.rollouts_per_start = 5;  // the harness must still see the cap of 3

  long long hook_starts = 0, hook_rollouts = 0;
  TrainHooks hooks;
  hooks.on_imagine = [&](int s, int r) {
    hook_starts += s;
    hook_rollouts += r;
  };
  const TrainResult res = run_train(cfg, dir.string(), hooks);

  CHECK(res.env_steps == 200);
  CHECK(res.episodes == 50);  // 4 actions per episode
  CHECK(res.train_steps > 0);
  // one imagination phase per train step, batch*starts_per_segment starts each,
  // exactly three rollouts per start despite the request for five
  CHECK(res.imagine_calls == res.train_steps);
  CHECK(res.imagine_starts == res.train_steps * cfg.replay.batch * cfg.replay.starts_per_segment);
  CHECK(res.imagined_rollouts == 3 * res.imagine_starts);
  CHECK(hook_starts == res.imagine_starts);
  CHECK(hook_rollouts == res.imagined_rollouts);

  REQUIRE(res.rows.size() == 4);  // 200 / eval_every(50)
  const MetricsTable table = parse_metrics_csv(res.metrics_path);
  CHECK(table.columns.size() == 10);
  CHECK(table.columns[0] == "env_step");
  CHECK(table.columns[9] == "critic_loss");
  REQUIRE(table.rows.size() == 4);
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(table.rows[i][0] == 50.0 * (i + 1));
    CHECK(table.rows[i][1] >= 0.0);  // episode returns on this task
    CHECK(table.rows[i][1] <= 1.0);
  }
  // losses are live after training started
  CHECK(table.rows[3][2] > 0.0);
  std::filesystem::remove_all(dir);
}

TEST_CASE("identical config and seed give byte-identical metrics and checkpoint") {
  const auto dir_a = temp_dir("det_a");
  const auto dir_b = temp_dir("det_b");
  const RunConfig cfg = tiny_config();
  const TrainResult a = run_train(cfg, dir_a.string());
  const TrainResult b = run_train(cfg, dir_b.string());
  CHECK(read_file(a.metrics_path) == read_file(b.metrics_path));
  CHECK(read_file(a.checkpoint_path) == read_file(b.checkpoint_path));

  // a different seed diverges
  RunConfig other = cfg;
  other.schedule.seed = 8;
  const auto dir_c = temp_dir("det_c");
  const TrainResult c = run_train(other, dir_c.string());
  CHECK(read_file(a.metrics_path) != read_file(c.metrics_path));
  std::filesystem::remove_all(dir_a);
  std::filesystem::remove_all(dir_b);
  std::filesystem::remove_all(dir_c);
}

TEST_CASE("eval hook can stop a run early; checkpoint still written") {
  const auto dir = temp_dir("stop");
  RunConfig cfg = tiny_config();
  TrainHooks hooks;
  hooks.on_eval = [](const MetricsRow&) { return false; };
  const TrainResult res = run_train(cfg, dir.string(), hooks);
  CHECK(res.rows.size() == 1);
  CHECK(res.env_steps == 50);
  CHECK(std::filesystem::exists(res.checkpoint_path));
  CHECK(std::filesystem::exists(res.checkpoint_path + ".cfg"));
  std::filesystem::remove_all(dir);
}

TEST_CASE("evaluate on a random-weights checkpoint sits at the random baseline") {
  const auto dir = temp_dir("eval");
  RunConfig cfg = tiny_config();
  cfg.env.delay = 4;
  cfg.schedule.total_env_steps = 0;
  const TrainResult res = run_train(cfg, dir.string());

  const EvalResult ev = evaluate(res.checkpoint_path, 300, 17);
  CHECK(ev.episodes == 300);
  CHECK(ev.ci95 > 0.0);
  // cue-blind behavior: one of four symbols matches in expectation
  CHECK(std::abs(ev.mean - 0.25) <= std::max(ev.ci95, 0.08));

  // determinism of evaluation
  const EvalResult ev2 = evaluate(res.checkpoint_path, 300, 17);
  CHECK(ev.mean == ev2.mean);
  const EvalResult ev3 = evaluate(res.checkpoint_path, 300, 18);
  CHECK(ev.mean != ev3.mean);

  CHECK_THROWS_AS(evaluate(res.checkpoint_path, 0, 1), std::invalid_argument);
  std::filesystem::remove_all(dir);
}

TEST_CASE("checkpoints from a different backbone fail restore with a named tensor") {
  const auto dir = temp_dir("backbone");
  RunConfig rssm_cfg = tiny_config();
  rssm_cfg.world_model.backbone = Backbone::rssm;
  rssm_cfg.schedule.total_env_steps = 0;
  const TrainResult res = run_train(rssm_cfg, dir.string());
  const auto loaded = checkpoint_read(res.checkpoint_path);

  RunConfig tssm_cfg = tiny_config();
  tssm_cfg.finalize();
  const WorldModel wm(tssm_cfg.world_model);
  const Agent agent(tssm_cfg.agent_config());
  ParameterStore store;
  Rng rng(0);
  wm.init(store, rng);
  agent.init(store, rng);
  CHECK_THROWS_WITH_AS(checkpoint_restore(store, loaded), doctest::Contains("wm.gru"),
                       std::invalid_argument);
  std::filesystem::remove_all(dir);
}
