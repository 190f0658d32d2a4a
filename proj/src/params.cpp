#include "tdv3/params.hpp"

#include <cmath>
#include <cstring>
#include <stdexcept>

namespace tdv3 {

Tensor& ParameterStore::add(const std::string& name, Tensor t) {
  if (entries_.count(name)) throw std::invalid_argument("parameter already exists: " + name);
  snap_f32(t);
  auto [it, ok] = entries_.emplace(name, std::move(t));
  (void)ok;
  return it->second;
}

Tensor& ParameterStore::at(const std::string& name) {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw std::invalid_argument("no such parameter: " + name);
  return it->second;
}

const Tensor& ParameterStore::at(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw std::invalid_argument("no such parameter: " + name);
  return it->second;
}

void ParameterStore::freeze(const std::string& prefix) { frozen_.insert(prefix); }

void ParameterStore::unfreeze(const std::string& prefix) { frozen_.erase(prefix); }

bool ParameterStore::is_frozen(const std::string& name) const {
  for (const auto& p : frozen_) {
    if (name == p) return true;
    if (name.size() > p.size() && name.compare(0, p.size(), p) == 0 && name[p.size()] == '.') return true;
  }
  return false;
}

ParameterStore::Moments& ParameterStore::moments(const std::string& name) {
  auto it = opt_state_.find(name);
  if (it == opt_state_.end()) {
    const Tensor& p = at(name);
    Moments m;
    m.m = Tensor::zeros(p.shape);
    m.v = Tensor::zeros(p.shape);
    it = opt_state_.emplace(name, std::move(m)).first;
  }
  return it->second;
}

Var ParamBinder::operator()(const std::string& name) {
  auto it = bound_.find(name);
  if (it != bound_.end()) return it->second;
  const Tensor& t = store_.at(name);
  Var v = g_.param(t, /*trainable=*/!store_.is_frozen(name));
  bound_.emplace(name, v);
  return v;
}

GradResult ParamBinder::collect(Var loss) {
  g_.backward(loss);
  GradResult out;
  out.loss_value = g_.value(loss).data[0];
  for (const auto& [name, var] : bound_) {
    if (store_.is_frozen(name)) continue;
    out.grads.emplace(name, g_.grad_or_zero(var));
  }
  return out;
}

void adam_step(ParameterStore& store, const GradResult& grads, const AdamConfig& cfg) {
  double sq_norm = 0.0;
  for (const auto& [name, g] : grads.grads) {
    const Tensor& p = store.at(name);
    if (!p.same_shape(g))
      throw std::invalid_argument("gradient shape mismatch for " + name + ": " + shape_str(g.shape) + " vs " +
                                  shape_str(p.shape));
    for (double x : g.data) sq_norm += x * x;
  }
  double scale = 1.0;
  if (cfg.clip_norm > 0.0) {
    double norm = std::sqrt(sq_norm);
    if (norm > cfg.clip_norm) scale = cfg.clip_norm / norm;
  }

  for (const auto& [name, g] : grads.grads) {
    if (store.is_frozen(name)) continue;
    Tensor& p = store.at(name);
    auto& mo = store.moments(name);
    mo.step += 1;
    const double b1t = 1.0 - std::pow(cfg.beta1, double(mo.step));
    const double b2t = 1.0 - std::pow(cfg.beta2, double(mo.step));
    for (std::size_t i = 0; i < p.data.size(); ++i) {
      const double gi = g.data[i] * scale;
      mo.m.data[i] = cfg.beta1 * mo.m.data[i] + (1.0 - cfg.beta1) * gi;
      mo.v.data[i] = cfg.beta2 * mo.v.data[i] + (1.0 - cfg.beta2) * gi * gi;
      const double mhat = mo.m.data[i] / b1t;
      const double vhat = mo.v.data[i] / b2t;
      p.data[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
    snap_f32(p);
  }
}

void init_dense(ParameterStore& store, const std::string& prefix, int fan_in, int fan_out, Rng& rng) {
  init_matrix(store, prefix + ".W", fan_in, fan_out, rng);
  store.add(prefix + ".b", Tensor::zeros({1, fan_out}));
}

void init_matrix(ParameterStore& store, const std::string& name, int fan_in, int fan_out, Rng& rng) {
  const double bound = std::sqrt(6.0 / double(fan_in + fan_out));
  Tensor w({fan_in, fan_out});
  for (double& x : w.data) x = rng.uniform(-bound, bound);
  store.add(name, std::move(w));
}

void init_layer_norm(ParameterStore& store, const std::string& prefix, int d) {
  store.add(prefix + ".g", Tensor::full({1, d}, 1.0));
  store.add(prefix + ".b", Tensor::zeros({1, d}));
}

std::uint64_t byte_hash(const ParameterStore& store, const std::string& prefix) {
  // FNV-1a over name bytes and f32-snapped value bytes, in sorted name order.
  std::uint64_t h = 1469598103934665603ull;
  auto mix = [&h](const void* p, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 1099511628211ull;
    }
  };
  for (const auto& [name, t] : store.entries()) {
    if (!prefix.empty()) {
      bool match = name == prefix || (name.size() > prefix.size() && name.compare(0, prefix.size(), prefix) == 0 &&
                                      name[prefix.size()] == '.');
      if (!match) continue;
    }
    mix(name.data(), name.size());
    for (double x : t.data) {
      float f = float(x);
      mix(&f, sizeof(f));
    }
  }
  return h;
}

}  // namespace tdv3
