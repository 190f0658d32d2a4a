#include "tdv3/agent.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace tdv3 {

std::vector<double> lambda_returns(const std::vector<double>& rewards,
                                   const std::vector<double>& values,
                                   const std::vector<double>& continues, double gamma,
                                   double lambda) {
  const std::size_t H = rewards.size();
  if (H == 0) throw std::invalid_argument("lambda_returns: horizon must be at least 1");
  if (continues.size() != H || values.size() != H + 1) {
    throw std::invalid_argument("lambda_returns: lengths must be H, H and H+1");
  }
  std::vector<double> out(H);
  double next = values[H];  // bootstrap R_{H+1} = v_H
  for (std::size_t t = H; t >= 1; --t) {
    const double mix = (1.0 - lambda) * values[t] + lambda * next;
    next = rewards[t - 1] + gamma * continues[t - 1] * mix;
    out[t - 1] = next;
  }
  return out;
}

void AgentConfig::validate() const {
  if (state_dim < 1) throw std::invalid_argument("agent: state_dim must be positive");
  if (n_actions < 1) throw std::invalid_argument("agent: n_actions must be positive");
  if (hidden < 1) throw std::invalid_argument("agent: hidden must be positive");
  if (value_bins < 2) throw std::invalid_argument("agent: value_bins must be at least 2");
  if (!(value_limit > 0)) throw std::invalid_argument("agent: value_limit must be positive");
  if (!(gamma > 0 && gamma <= 1)) throw std::invalid_argument("agent: gamma must be in (0, 1]");
  if (!(lambda >= 0 && lambda <= 1)) throw std::invalid_argument("agent: lambda must be in [0, 1]");
  if (!(lr > 0)) throw std::invalid_argument("agent: lr must be positive");
}

Agent::Agent(AgentConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  bins_ = symlog_bins(cfg_.value_bins, cfg_.value_limit);
  actor_ = Mlp{"actor", {cfg_.state_dim, cfg_.hidden, cfg_.n_actions}};
  critic_ = Mlp{"critic", {cfg_.state_dim, cfg_.hidden, cfg_.value_bins}};
}

void Agent::init(ParameterStore& store, Rng& rng) const {
  actor_.init(store, rng);
  critic_.init(store, rng);
}

namespace {

// softmax of one logit row, then expectation over squashed-value bin centers
double decode_value_row(const Tensor& logits, int r, const Tensor& bins) {
  const int n = logits.cols();
  double mx = logits.at(r, 0);
  for (int j = 1; j < n; ++j) mx = std::max(mx, logits.at(r, j));
  double denom = 0;
  std::vector<double> e(static_cast<std::size_t>(n));
  for (int j = 0; j < n; ++j) {
    e[static_cast<std::size_t>(j)] = std::exp(logits.at(r, j) - mx);
    denom += e[static_cast<std::size_t>(j)];
  }
  double acc = 0;
  for (int j = 0; j < n; ++j) acc += e[static_cast<std::size_t>(j)] / denom * bins.at(0, j);
  return symexp(acc);
}

double percentile(std::vector<double> v, double q) {
  if (v.empty()) throw std::invalid_argument("percentile: empty");
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = static_cast<std::size_t>(std::ceil(pos));
  const double frac = pos - static_cast<double>(lo);
  return v[lo] * (1.0 - frac) + v[hi] * frac;
}

}  // namespace

Tensor Agent::policy_logits(const ParameterStore& store, const Tensor& state_row) const {
  Graph g;
  ParamBinder bind(g, store);
  const Var out = actor_(g, bind, g.constant(state_row));
  return g.value(out);
}

int Agent::act(const ParameterStore& store, const Tensor& state_row, bool greedy, Rng& rng) const {
  const Tensor logits = policy_logits(store, state_row);
  const int n = logits.cols();
  if (greedy) {
    int best = 0;
    for (int j = 1; j < n; ++j) {
      if (logits.at(0, j) > logits.at(0, best)) best = j;
    }
    return best;
  }
  double mx = logits.at(0, 0);
  for (int j = 1; j < n; ++j) mx = std::max(mx, logits.at(0, j));
  std::vector<double> w(static_cast<std::size_t>(n));
  for (int j = 0; j < n; ++j) w[static_cast<std::size_t>(j)] = std::exp(logits.at(0, j) - mx);
  return rng.categorical(w.data(), n);
}

double Agent::value(const ParameterStore& store, const Tensor& state_row) const {
  Graph g;
  ParamBinder bind(g, store);
  const Var out = critic_(g, bind, g.constant(state_row));
  return decode_value_row(g.value(out), 0, bins_);
}

Agent::UpdateBatch Agent::prepare(const ParameterStore& store,
                                  const std::vector<ImaginedRollout>& rollouts) {
  if (rollouts.empty()) throw std::invalid_argument("agent: no rollouts to train on");
  int n_rows = 0, n_states = 0;
  for (const auto& r : rollouts) {
    if (r.horizon() < 1) throw std::invalid_argument("agent: rollout with empty horizon");
    n_rows += r.horizon();
    n_states += r.horizon() + 1;
  }

  Tensor all_states({n_states, cfg_.state_dim});
  int row = 0;
  for (const auto& r : rollouts) {
    for (int t = 0; t < r.states.rows(); ++t, ++row) {
      for (int j = 0; j < cfg_.state_dim; ++j) all_states.at(row, j) = r.states.at(t, j);
    }
  }
  Tensor value_logits;
  {
    Graph g;
    ParamBinder bind(g, store);
    value_logits = g.value(critic_(g, bind, g.constant(all_states)));
  }

  UpdateBatch batch;
  batch.states = Tensor::zeros({n_rows, cfg_.state_dim});
  batch.actions = Tensor::zeros({n_rows, cfg_.n_actions});
  batch.returns = Tensor::zeros({n_rows, 1});
  batch.advantages = Tensor::zeros({n_rows, 1});
  batch.weights = Tensor::zeros({n_rows, 1});

  std::vector<double> all_returns;
  all_returns.reserve(static_cast<std::size_t>(n_rows));
  std::vector<double> raw_adv(static_cast<std::size_t>(n_rows), 0.0);

  int out_row = 0, state_base = 0;
  for (const auto& r : rollouts) {
    const int H = r.horizon();
    std::vector<double> values(static_cast<std::size_t>(H) + 1);
    for (int t = 0; t <= H; ++t) values[static_cast<std::size_t>(t)] = decode_value_row(value_logits, state_base + t, bins_);
    const std::vector<double> returns = lambda_returns(r.rewards, values, r.continues, cfg_.gamma, cfg_.lambda);

    double alive = 1.0;
    for (int t = 1; t <= H; ++t) {
      const int i = out_row++;
      for (int j = 0; j < cfg_.state_dim; ++j) batch.states.at(i, j) = r.states.at(t - 1, j);
      for (int j = 0; j < cfg_.n_actions; ++j) batch.actions.at(i, j) = r.actions.at(t - 1, j);
      const double R = returns[static_cast<std::size_t>(t) - 1];
      batch.returns.at(i, 0) = R;
      raw_adv[static_cast<std::size_t>(i)] = R - values[static_cast<std::size_t>(t) - 1];
      batch.weights.at(i, 0) = alive;
      alive *= r.continues[static_cast<std::size_t>(t) - 1];
      all_returns.push_back(R);
    }
    state_base += H + 1;
  }

  const double range = percentile(all_returns, 0.95) - percentile(all_returns, 0.05);
  range_ema_ = range_ema_ < 0 ? range : 0.99 * range_ema_ + 0.01 * range;
  batch.range_used = std::max(1.0, range_ema_);
  for (int i = 0; i < n_rows; ++i) {
    batch.advantages.at(i, 0) = raw_adv[static_cast<std::size_t>(i)] / batch.range_used;
  }
  return batch;
}

GradResult Agent::critic_loss(ParameterStore& store, const UpdateBatch& batch) const {
  FreezeScope guard(store, cfg_.freeze_prefix);
  const int n = batch.states.rows();
  Tensor targets({n, cfg_.value_bins});
  for (int i = 0; i < n; ++i) {
    const Tensor two = twohot_encode(symlog(batch.returns.at(i, 0)), bins_);
    for (int j = 0; j < cfg_.value_bins; ++j) targets.at(i, j) = two.at(0, j);
  }

  Graph g;
  ParamBinder bind(g, store);
  const Var logits = critic_(g, bind, g.constant(batch.states));
  const Var lp = g.log_softmax_lastdim(logits);
  const Var ce = g.scale(g.sum_lastdim(g.mul(g.constant(targets), lp)), -1.0);
  const Var w = g.reshape(g.constant(batch.weights), {n});
  const Var loss = g.mean_all(g.mul(ce, w));
  return bind.collect(loss);
}

GradResult Agent::policy_loss(ParameterStore& store, const UpdateBatch& batch) const {
  FreezeScope guard(store, cfg_.freeze_prefix);
  const int n = batch.states.rows();
  Graph g;
  ParamBinder bind(g, store);
  const Var logits = actor_(g, bind, g.constant(batch.states));
  const Var lp = g.log_softmax_lastdim(logits);
  const Var chosen = g.sum_lastdim(g.mul(lp, g.constant(batch.actions)));
  const Var entropy = g.scale(g.sum_lastdim(g.mul(g.softmax_lastdim(logits), lp)), -1.0);
  const Var adv = g.reshape(g.constant(batch.advantages), {n});
  const Var w = g.reshape(g.constant(batch.weights), {n});
  const Var gain = g.add(g.mul(adv, chosen), g.scale(entropy, cfg_.entropy_scale));
  const Var loss = g.scale(g.mean_all(g.mul(gain, w)), -1.0);
  return bind.collect(loss);
}

double Agent::critic_update(ParameterStore& store, const UpdateBatch& batch) const {
  const GradResult res = critic_loss(store, batch);
  AdamConfig opt;
  opt.lr = cfg_.lr;
  adam_step(store, res, opt);
  return res.loss_value;
}

double Agent::policy_update(ParameterStore& store, const UpdateBatch& batch) const {
  const GradResult res = policy_loss(store, batch);
  AdamConfig opt;
  opt.lr = cfg_.lr;
  adam_step(store, res, opt);
  return res.loss_value;
}

}  // namespace tdv3
