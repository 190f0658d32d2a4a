// Command-line driver: train, eval, plot and selftest subcommands.
// TDV3_SEED overrides the configured seed when no --seed flag is given.

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "tdv3/checkpoint.hpp"
#include "tdv3/graph.hpp"
#include "tdv3/harness.hpp"
#include "tdv3/plot.hpp"

namespace {

std::optional<std::uint64_t> env_seed_override() {
  const char* v = std::getenv("TDV3_SEED");
  if (v == nullptr || *v == '\0') return std::nullopt;
  return static_cast<std::uint64_t>(std::strtoull(v, nullptr, 10));
}

int cmd_train(const std::string& config_path, std::optional<std::uint64_t> seed,
              const std::string& out_dir) {
  tdv3::RunConfig cfg = tdv3::RunConfig::load(config_path);
  if (!seed) seed = env_seed_override();
  if (seed) cfg.schedule.seed = *seed;

  tdv3::TrainHooks hooks;
  hooks.on_eval = [](const tdv3::MetricsRow& row) {
    std::printf("step %lld  eval_return %.4f  wm_loss %.4f  policy %.4f  critic %.4f  wall_ms %lld\n",
                row.env_step, row.episode_return_mean, row.wm.total, row.policy_loss,
                row.critic_loss, row.wall_ms);
    std::fflush(stdout);
    return true;
  };
  const tdv3::TrainResult res = tdv3::run_train(cfg, out_dir, hooks);
  std::printf("done: %lld env steps, %lld train steps, %lld episodes\n", res.env_steps,
              res.train_steps, res.episodes);
  std::printf("metrics: %s\ncheckpoint: %s\n", res.metrics_path.c_str(),
              res.checkpoint_path.c_str());
  return 0;
}

int cmd_eval(const std::string& checkpoint, int episodes, std::optional<std::uint64_t> seed) {
  if (!seed) seed = env_seed_override();
  const tdv3::EvalResult res = tdv3::evaluate(checkpoint, episodes, seed.value_or(0));
  std::printf("mean_return %.6f  ci95 %.6f  episodes %d\n", res.mean, res.ci95, res.episodes);
  return 0;
}

int cmd_plot(const std::vector<std::string>& inputs, const std::string& out_dir) {
  const auto written = tdv3::emit_plots(inputs, out_dir);
  for (const auto& p : written) std::printf("wrote %s\n", p.c_str());
  return 0;
}

bool report(const char* name, bool ok) {
  std::printf("[%s] %s\n", ok ? "ok" : "fail", name);
  return ok;
}

int cmd_selftest() {
  using namespace tdv3;
  bool all = true;

  {
    Rng rng(12345);
    bool ok = true;
    for (int i = 0; i < 1000; ++i) {
      const double v = rng.uniform(-50, 50);
      ok = ok && std::abs(symexp(symlog(v)) - v) <= 1e-12 * std::max(1.0, std::abs(v));
    }
    all &= report("symlog/symexp roundtrip", ok);
  }
  {
    const Tensor bins = symlog_bins(41, 20.0);
    Rng rng(77);
    bool ok = true;
    for (int i = 0; i < 200; ++i) {
      const double v = rng.uniform(symlog(-20.0), symlog(20.0));
      ok = ok && std::abs(twohot_decode(twohot_encode(v, bins), bins) - v) <= 1e-9;
    }
    all &= report("two-hot roundtrip", ok);
  }
  {
    Rng rng(5);
    Tensor logits({3, 4});
    for (double& v : logits.data) v = rng.normal();
    all &= report("KL of a distribution with itself", std::abs(kl_categorical(logits, logits)) <= 1e-10);
  }
  {
    Graph g;
    Rng rng(9);
    Tensor x({2, 5});
    for (double& v : x.data) v = rng.normal();
    Tensor shifted = x;
    for (int r = 0; r < 2; ++r) {
      for (int c = 0; c < 5; ++c) shifted.at(r, c) += 7.5;
    }
    const Tensor a = g.value(g.softmax_lastdim(g.constant(x)));
    const Tensor b = g.value(g.softmax_lastdim(g.constant(shifted)));
    bool ok = true;
    for (std::size_t i = 0; i < a.data.size(); ++i) ok = ok && std::abs(a.data[i] - b.data[i]) <= 1e-12;
    all &= report("softmax shift invariance", ok);
  }
  {
    Rng a(42), b(42);
    bool ok = true;
    for (int i = 0; i < 100; ++i) ok = ok && a.next_u64() == b.next_u64();
    Rng d1 = a.derive("stream"), d2 = b.derive("stream");
    for (int i = 0; i < 100; ++i) ok = ok && d1.next_u64() == d2.next_u64();
    all &= report("rng determinism", ok);
  }
  {
    RunConfig cfg;
    const std::string text = cfg.serialize();
    const bool ok = RunConfig::parse(text).serialize() == text;
    all &= report("config roundtrip", ok);
  }
  {
    ParameterStore store;
    Rng rng(3);
    Tensor t({4, 3});
    for (double& v : t.data) v = rng.normal();
    store.add("selftest.W", t);
    const auto path = (std::filesystem::temp_directory_path() / "tdv3_selftest.ckpt").string();
    checkpoint_save(store, path);
    const auto loaded = checkpoint_read(path);
    std::filesystem::remove(path);
    const bool ok = loaded.size() == 1 && loaded.count("selftest.W") == 1 &&
                    loaded.at("selftest.W") == store.at("selftest.W");
    all &= report("checkpoint roundtrip", ok);
  }

  return all ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"transformer world-model agent on memory tasks"};
  app.require_subcommand(1);

  std::string config_path, out_dir = "run_out", checkpoint, plot_out = "plots";
  std::vector<std::string> plot_inputs;
  int episodes = 100;
  std::optional<std::uint64_t> seed;

  auto* train = app.add_subcommand("train", "run the training loop");
  train->add_option("--config", config_path, "config file")->required()->check(CLI::ExistingFile);
  train->add_option("--seed", seed, "seed override");
  train->add_option("--out", out_dir, "output directory");

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint greedily");
  eval->add_option("--checkpoint", checkpoint, "checkpoint file")->required()->check(CLI::ExistingFile);
  eval->add_option("--episodes", episodes, "number of episodes")->required();
  eval->add_option("--seed", seed, "evaluation seed");

  auto* plot = app.add_subcommand("plot", "render metric SVGs from CSVs");
  plot->add_option("--in", plot_inputs, "metrics CSV files")->required()->check(CLI::ExistingFile);
  plot->add_option("--out", plot_out, "output directory");

  app.add_subcommand("selftest", "run built-in invariant checks");

  CLI11_PARSE(app, argc, argv);

  try {
    if (train->parsed()) return cmd_train(config_path, seed, out_dir);
    if (eval->parsed()) return cmd_eval(checkpoint, episodes, seed);
    if (plot->parsed()) return cmd_plot(plot_inputs, plot_out);
    return cmd_selftest();
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}
