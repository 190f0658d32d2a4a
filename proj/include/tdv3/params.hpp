#pragma once

// Named parameter collection with freeze prefixes, adaptive-moment updates and
// the bridge that lifts parameters into an autodiff graph.

#include <map>
#include <set>
#include <string>

#include "tdv3/graph.hpp"
#include "tdv3/tensor.hpp"

namespace tdv3 {

struct GradResult {
  double loss_value = 0.0;
  std::map<std::string, Tensor> grads;
};

class ParameterStore {
 public:
  Tensor& add(const std::string& name, Tensor t);
  Tensor& at(const std::string& name);
  const Tensor& at(const std::string& name) const;
  bool has(const std::string& name) const { return entries_.count(name) != 0; }

  const std::map<std::string, Tensor>& entries() const { return entries_; }
  std::map<std::string, Tensor>& entries() { return entries_; }

  void freeze(const std::string& prefix);
  void unfreeze(const std::string& prefix);
  bool is_frozen(const std::string& name) const;  // prefix match on dot boundaries
  const std::set<std::string>& frozen_paths() const { return frozen_; }

  // Optimizer moment state lives with the parameters it belongs to.
  struct Moments {
    Tensor m, v;
    std::int64_t step = 0;
  };
  Moments& moments(const std::string& name);

 private:
  std::map<std::string, Tensor> entries_;
  std::map<std::string, Moments> opt_state_;
  std::set<std::string> frozen_;
};

// Temporarily freezes a prefix for the lifetime of the guard.
class FreezeScope {
 public:
  FreezeScope(ParameterStore& store, std::string prefix) : store_(store), prefix_(std::move(prefix)) {
    already_ = store_.frozen_paths().count(prefix_) != 0;
    if (!already_) store_.freeze(prefix_);
  }
  ~FreezeScope() {
    if (!already_) store_.unfreeze(prefix_);
  }
  FreezeScope(const FreezeScope&) = delete;
  FreezeScope& operator=(const FreezeScope&) = delete;

 private:
  ParameterStore& store_;
  std::string prefix_;
  bool already_;
};

// Lifts store entries into a graph, one leaf per name, remembering the binding
// so gradients can be collected after backward(). Frozen entries become
// non-trainable leaves.
class ParamBinder {
 public:
  ParamBinder(Graph& g, const ParameterStore& store) : g_(g), store_(store) {}

  Var operator()(const std::string& name);

  // Runs g.backward(loss) and collects gradients of every bound non-frozen
  // parameter. Parameters never touched by the loss get zero gradients.
  GradResult collect(Var loss);

 private:
  Graph& g_;
  const ParameterStore& store_;
  std::map<std::string, Var> bound_;
};

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double clip_norm = 100.0;  // global-norm clip; <= 0 disables
};

// First/second-moment adaptive update over all non-frozen entries named in
// grads. Updated values are snapped to the float32 grid.
void adam_step(ParameterStore& store, const GradResult& grads, const AdamConfig& cfg);

// ---- initialization ----

// Dense layer init: W uniform in +/- sqrt(6/(fan_in+fan_out)), bias zero.
void init_dense(ParameterStore& store, const std::string& prefix, int fan_in, int fan_out, Rng& rng);

// Bias-free weight matrix with the same bound.
void init_matrix(ParameterStore& store, const std::string& name, int fan_in, int fan_out, Rng& rng);

// Layer-norm pair: gain ones at <prefix>.g, shift zeros at <prefix>.b.
void init_layer_norm(ParameterStore& store, const std::string& prefix, int d);

// Hash of all entry bytes under a prefix ("" = everything); for freeze checks.
std::uint64_t byte_hash(const ParameterStore& store, const std::string& prefix = "");

}  // namespace tdv3
