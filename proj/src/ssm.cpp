#include "tdv3/ssm.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace tdv3 {

Tensor symlog_bins(int count, double limit) {
  if (count < 2) throw std::invalid_argument("symlog_bins: need at least 2 bins");
  if (limit <= 0) throw std::invalid_argument("symlog_bins: limit must be positive");
  const double hi = symlog(limit);
  const double lo = -hi;
  Tensor bins({count});
  for (int i = 0; i < count; ++i)
    bins.data[static_cast<std::size_t>(i)] = lo + (hi - lo) * (double(i) / double(count - 1));
  return bins;
}

Tensor twohot_encode(double v, const Tensor& bins) {
  const int n = static_cast<int>(bins.size());
  Tensor w({n});
  const double lo = bins.data[0], hi = bins.data[static_cast<std::size_t>(n - 1)];
  const double x = std::min(std::max(v, lo), hi);
  int k = int(std::upper_bound(bins.data.begin(), bins.data.end(), x) - bins.data.begin()) - 1;
  if (k >= n - 1) k = n - 2;
  if (k < 0) k = 0;
  const double span = bins.data[static_cast<std::size_t>(k + 1)] - bins.data[static_cast<std::size_t>(k)];
  const double upper = (x - bins.data[static_cast<std::size_t>(k)]) / span;
  w.data[static_cast<std::size_t>(k)] = 1.0 - upper;
  w.data[static_cast<std::size_t>(k + 1)] = upper;
  return w;
}

double twohot_decode(const Tensor& weights, const Tensor& bins) {
  check_same_shape(weights, bins, "twohot_decode");
  double acc = 0.0;
  for (std::size_t i = 0; i < bins.size(); ++i) acc += weights.data[i] * bins.data[i];
  return acc;
}

double kl_categorical(const Tensor& p_logits, const Tensor& q_logits) {
  check_same_shape(p_logits, q_logits, "kl_categorical");
  const int L = p_logits.rows(), C = p_logits.cols();
  auto lsm = [C](const double* row, std::vector<double>& out) {
    double mx = row[0];
    for (int j = 1; j < C; ++j) mx = std::max(mx, row[j]);
    double s = 0.0;
    for (int j = 0; j < C; ++j) s += std::exp(row[j] - mx);
    const double lse = mx + std::log(s);
    for (int j = 0; j < C; ++j) out[static_cast<std::size_t>(j)] = row[j] - lse;
  };
  std::vector<double> lp(static_cast<std::size_t>(C)), lq(static_cast<std::size_t>(C));
  double total = 0.0;
  for (int i = 0; i < L; ++i) {
    lsm(&p_logits.data[static_cast<std::size_t>(i) * C], lp);
    lsm(&q_logits.data[static_cast<std::size_t>(i) * C], lq);
    double kl = 0.0;
    for (int j = 0; j < C; ++j)
      kl += std::exp(lp[static_cast<std::size_t>(j)]) * (lp[static_cast<std::size_t>(j)] - lq[static_cast<std::size_t>(j)]);
    total += std::max(kl, 0.0);
  }
  return total;
}

void WorldModelConfig::validate() const {
  if (latent_groups <= 0 || latent_classes <= 0)
    throw std::invalid_argument("world model config: latent extents must be positive");
  if (d_obs <= 0 || d_model <= 0 || d_embed <= 0 || n_actions <= 0)
    throw std::invalid_argument("world model config: d_obs, d_model, d_embed, n_actions must be positive");
  if (unimix < 0.0 || unimix >= 1.0)
    throw std::invalid_argument("world model config: unimix must be in [0,1)");
  if (free_bits < 0.0) throw std::invalid_argument("world model config: free_bits must be >= 0");
  if (reward_bins < 2 || reward_bins % 2 == 0)
    throw std::invalid_argument("world model config: reward_bins must be odd and >= 3");
  if (backbone == Backbone::tssm) {
    encoder.validate();
    if (encoder.d_model != d_model)
      throw std::invalid_argument("world model config: encoder d_model " + std::to_string(encoder.d_model) +
                                  " != d_model " + std::to_string(d_model));
  }
}

WorldModel::WorldModel(WorldModelConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  bins_ = symlog_bins(cfg_.reward_bins, cfg_.reward_limit);
  const int zdim = cfg_.latent_dim();
  const int sdim = cfg_.state_dim();
  enc_ = Mlp{"wm.enc", {cfg_.d_obs, cfg_.d_embed, cfg_.d_embed}};
  post_ = Mlp{"wm.post", {cfg_.d_embed, cfg_.d_embed, zdim}};
  prior_ = Mlp{"wm.prior", {cfg_.d_model, cfg_.d_model, zdim}};
  token_ = Mlp{"wm.token", {zdim + cfg_.n_actions, cfg_.d_model}};
  gru_ = GruCell{"wm.gru", zdim + cfg_.n_actions, cfg_.d_model};
  dec_obs_ = Mlp{"wm.dec.obs", {sdim, cfg_.d_embed, cfg_.d_obs}};
  dec_reward_ = Mlp{"wm.dec.reward", {sdim, cfg_.d_embed, cfg_.reward_bins}};
  dec_cont_ = Mlp{"wm.dec.cont", {sdim, cfg_.d_embed, 1}};
}

void WorldModel::init(ParameterStore& store, Rng& rng) const {
  enc_.init(store, rng);
  post_.init(store, rng);
  prior_.init(store, rng);
  dec_obs_.init(store, rng);
  dec_reward_.init(store, rng);
  dec_cont_.init(store, rng);
  if (cfg_.backbone == Backbone::rssm) {
    gru_.init(store, rng);
  } else {
    token_.init(store, rng);
    store.add("wm.h0", Tensor::zeros({1, cfg_.d_model}));
    encoder_init(store, "wm.tssm", cfg_.encoder, rng);
  }
}

Var WorldModel::embed_obs(Graph& g, ParamBinder& bind, Var obs) const { return enc_(g, bind, obs); }

Var WorldModel::posterior_logits(Graph& g, ParamBinder& bind, Var embed) const {
  return post_(g, bind, embed);
}

Var WorldModel::prior_logits(Graph& g, ParamBinder& bind, Var h) const { return prior_(g, bind, h); }

Var WorldModel::latent(Graph& g, Var logits, Rng* rng) const {
  const int n = g.value(logits).rows();
  const int L = cfg_.latent_groups, C = cfg_.latent_classes;
  Var rows = g.reshape(logits, {n * L, C});
  Var probs = g.softmax_lastdim(rows);
  if (cfg_.unimix > 0.0)
    probs = g.add_scalar(g.scale(probs, 1.0 - cfg_.unimix), cfg_.unimix / double(C));
  Var z = probs;
  if (rng != nullptr) {
    const Tensor& pv = g.value(probs);
    Tensor sample({n * L, C});
    for (int r = 0; r < n * L; ++r) {
      const int idx = rng->categorical(&pv.data[static_cast<std::size_t>(r) * C], C);
      sample.at(r, idx) = 1.0;
    }
    z = g.st_onehot(probs, std::move(sample));
  }
  return g.reshape(z, {n, L * C});
}

Var WorldModel::token_embed(Graph& g, ParamBinder& bind, Var z, Var a) const {
  return token_(g, bind, g.concat_cols({z, a}));
}

Var WorldModel::backbone_states(Graph& g, ParamBinder& bind, Var z, Var a, int T, int B,
                                Var* tokens_out) const {
  if (T < 1 || B < 1) throw std::invalid_argument("backbone_states: T and B must be positive");
  const Tensor& zv = g.value(z);
  const Tensor& av = g.value(a);
  if (zv.rows() != T * B || av.rows() != T * B)
    throw std::invalid_argument("backbone_states: row count mismatch, z " + shape_str(zv.shape) + " a " +
                                shape_str(av.shape) + " vs T*B=" + std::to_string(T * B));
  if (tokens_out) *tokens_out = Var{};

  if (cfg_.backbone == Backbone::rssm) {
    Var h = g.input(Tensor::zeros({B, cfg_.d_model}));
    if (T == 1) return h;
    std::vector<Var> hs;
    hs.reserve(static_cast<std::size_t>(T));
    hs.push_back(h);
    for (int t = 0; t + 1 < T; ++t) {
      Var in = g.concat_cols({g.slice_rows(z, t * B, B), g.slice_rows(a, t * B, B)});
      h = gru_(g, bind, in, h);
      hs.push_back(h);
    }
    return g.concat_rows(hs);
  }

  Var tokens = token_embed(g, bind, z, a);
  if (tokens_out) *tokens_out = tokens;
  Var h1 = g.broadcast_row(bind("wm.h0"), B);
  if (T == 1) return h1;
  Var enc_in = g.slice_rows(tokens, 0, (T - 1) * B);
  Var enc_out = encoder_forward(g, bind, "wm.tssm", cfg_.encoder, enc_in, T - 1, B);
  return g.concat_rows({h1, enc_out});
}

Var WorldModel::decode_obs(Graph& g, ParamBinder& bind, Var state) const {
  return dec_obs_(g, bind, state);
}

Var WorldModel::decode_reward_logits(Graph& g, ParamBinder& bind, Var state) const {
  return dec_reward_(g, bind, state);
}

Var WorldModel::decode_cont_logits(Graph& g, ParamBinder& bind, Var state) const {
  return dec_cont_(g, bind, state);
}

WmLossResult WorldModel::loss(const ParameterStore& store, const SegmentBatch& batch, Rng& rng,
                              const WmLossOptions& opt) const {
  if (batch.T < 2) throw std::invalid_argument("world_model_loss: segment length must be >= 2");
  const int n = batch.T * batch.B;
  const int L = cfg_.latent_groups, C = cfg_.latent_classes;
  if (batch.obs.rows() != n || batch.obs.cols() != cfg_.d_obs)
    throw std::invalid_argument("world_model_loss: obs " + shape_str(batch.obs.shape));

  Graph g;
  ParamBinder bind(g, store);

  Var obs = g.input(batch.obs);
  Var actions = g.input(batch.actions);
  Var post = posterior_logits(g, bind, embed_obs(g, bind, obs));
  Var z = latent(g, post, opt.sample ? &rng : nullptr);
  Var tokens{};
  Var h = backbone_states(g, bind, z, actions, batch.T, batch.B, &tokens);
  Var prior = prior_logits(g, bind, h);
  Var state = g.concat_cols({h, z});

  // reconstruction: squared error against symlog targets, summed over features
  Tensor target = batch.obs;
  for (double& v : target.data) v = symlog(v);
  Var diff = g.sub(decode_obs(g, bind, state), g.input(std::move(target)));
  Var recon = g.mean_all(g.sum_lastdim(g.mul(diff, diff)));

  // reward: cross-entropy against two-hot symlog targets
  Tensor rtargets({n, cfg_.reward_bins});
  for (int r = 0; r < n; ++r) {
    Tensor w = twohot_encode(symlog(batch.rewards.data[static_cast<std::size_t>(r)]), bins_);
    for (int j = 0; j < cfg_.reward_bins; ++j) rtargets.at(r, j) = w.data[static_cast<std::size_t>(j)];
  }
  Var rlp = g.log_softmax_lastdim(decode_reward_logits(g, bind, state));
  Var reward = g.scale(g.mean_all(g.sum_lastdim(g.mul(rlp, g.input(std::move(rtargets))))), -1.0);

  Var cont = g.bce_logits_mean(decode_cont_logits(g, bind, state), batch.conts);

  auto grouped = [&](Var logits) { return g.reshape(logits, {n * L, C}); };
  Var post_rows = grouped(post);
  Var prior_rows = grouped(prior);
  Var post_fixed = opt.fixed_post ? g.input(Tensor({n * L, C}, opt.fixed_post->data))
                                  : g.stop_grad(post_rows);
  Var prior_fixed = opt.fixed_prior ? g.input(Tensor({n * L, C}, opt.fixed_prior->data))
                                    : g.stop_grad(prior_rows);
  auto kl_term = [&](Var p, Var q) {
    Var per_group = g.kl_rows(p, q);
    Var per_sample = g.sum_lastdim(g.reshape(per_group, {n, L}));
    return g.mean_all(g.max_scalar(per_sample, cfg_.free_bits));
  };
  Var kl_dyn = kl_term(post_fixed, prior_rows);
  Var kl_rep = kl_term(post_rows, prior_fixed);

  Var total = g.add(g.add(g.add(recon, reward), cont),
                    g.add(g.scale(kl_dyn, cfg_.kl_dyn_scale), g.scale(kl_rep, cfg_.kl_rep_scale)));

  WmLossResult out;
  out.breakdown.recon = g.value(recon).data[0];
  out.breakdown.reward = g.value(reward).data[0];
  out.breakdown.cont = g.value(cont).data[0];
  out.breakdown.kl_dyn = g.value(kl_dyn).data[0];
  out.breakdown.kl_rep = g.value(kl_rep).data[0];
  out.breakdown.total = g.value(total).data[0];
  out.h = g.value(h);
  out.z = g.value(z);
  if (tokens.valid()) out.tokens = g.value(tokens);
  out.post_logits = g.value(post);
  out.prior_logits = g.value(prior);
  if (opt.want_grads) {
    out.grads = bind.collect(total);
  } else {
    out.grads.loss_value = out.breakdown.total;
  }
  return out;
}

namespace {

Tensor as_row(const Tensor& t, int d, const char* what) {
  if (static_cast<int>(t.size()) != d)
    throw std::invalid_argument(std::string(what) + ": expected " + std::to_string(d) + " values, got " +
                                shape_str(t.shape));
  return Tensor({1, d}, t.data);
}

}  // namespace

Tensor WorldModel::posterior_latent(const ParameterStore& store, const Tensor& obs_row, Rng* rng) const {
  Graph g;
  ParamBinder bind(g, store);
  Var obs = g.input(as_row(obs_row, cfg_.d_obs, "posterior_latent"));
  Var z = latent(g, posterior_logits(g, bind, embed_obs(g, bind, obs)), rng);
  return g.value(z);
}

Tensor WorldModel::prior_latent(const ParameterStore& store, const Tensor& h_row, Rng* rng) const {
  Graph g;
  ParamBinder bind(g, store);
  Var h = g.input(as_row(h_row, cfg_.d_model, "prior_latent"));
  Var z = latent(g, prior_logits(g, bind, h), rng);
  return g.value(z);
}

WorldModel::Decoded WorldModel::decode(const ParameterStore& store, const Tensor& h_row,
                                       const Tensor& z_row) const {
  Graph g;
  ParamBinder bind(g, store);
  Var state = g.concat_cols({g.input(as_row(h_row, cfg_.d_model, "decode h")),
                             g.input(as_row(z_row, cfg_.latent_dim(), "decode z"))});
  Decoded out;
  out.obs_symlog = g.value(decode_obs(g, bind, state));
  Tensor rw = g.value(g.softmax_lastdim(decode_reward_logits(g, bind, state)));
  out.reward = symexp(twohot_decode(Tensor({cfg_.reward_bins}, rw.data), bins_));
  const double logit = g.value(decode_cont_logits(g, bind, state)).data[0];
  out.cont_prob = 1.0 / (1.0 + std::exp(-logit));
  return out;
}

Tensor WorldModel::token_row(const ParameterStore& store, const Tensor& z_row, const Tensor& a_row) const {
  Graph g;
  ParamBinder bind(g, store);
  Var token = token_embed(g, bind, g.input(as_row(z_row, cfg_.latent_dim(), "token z")),
                          g.input(as_row(a_row, cfg_.n_actions, "token a")));
  return g.value(token);
}

Tensor WorldModel::rssm_step(const ParameterStore& store, const Tensor& h_row, const Tensor& z_row,
                             const Tensor& a_row) const {
  Graph g;
  ParamBinder bind(g, store);
  Var in = g.concat_cols({g.input(as_row(z_row, cfg_.latent_dim(), "rssm_step z")),
                          g.input(as_row(a_row, cfg_.n_actions, "rssm_step a"))});
  Var h = g.input(as_row(h_row, cfg_.d_model, "rssm_step h"));
  return g.value(gru_(g, bind, in, h));
}

ModelStepper::ModelStepper(const ParameterStore& store, const WorldModel& wm)
    : store_(&store), wm_(&wm) {
  reset();
}

void ModelStepper::reset() {
  const auto& cfg = wm_->config();
  cache_ = EncoderCache{};
  if (cfg.backbone == Backbone::rssm) {
    h_ = Tensor::zeros({1, cfg.d_model});
  } else {
    const Tensor& h0 = store_->at("wm.h0");
    h_ = Tensor({1, cfg.d_model}, h0.data);
  }
}

void ModelStepper::advance(const Tensor& z_row, const Tensor& a_row) {
  const auto& cfg = wm_->config();
  if (cfg.backbone == Backbone::rssm) {
    h_ = wm_->rssm_step(*store_, h_, z_row, a_row);
  } else {
    Tensor token = wm_->token_row(*store_, z_row, a_row);
    Tensor flat({cfg.d_model}, token.data);
    h_ = encoder_step(*store_, "wm.tssm", cfg.encoder, cache_, flat);
  }
}

}  // namespace tdv3
