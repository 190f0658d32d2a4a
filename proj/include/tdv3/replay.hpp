#pragma once

// Trajectory storage with return-prioritized sampling. Entry t of a
// trajectory pairs the observation with the action taken there and the
// reward / continue flag that arrived with that observation; the terminal
// entry carries a dummy action.

#include <deque>

#include "tdv3/ssm.hpp"
#include "tdv3/tensor.hpp"

namespace tdv3 {

struct Trajectory {
  std::vector<Tensor> observations;
  std::vector<Tensor> actions;
  std::vector<double> rewards;
  std::vector<double> continues;

  int length() const { return static_cast<int>(observations.size()); }
  double episode_return() const {
    double s = 0;
    for (double r : rewards) s += r;
    return s;
  }
  void validate() const;
};

class ReplayBuffer {
 public:
  explicit ReplayBuffer(int capacity, double priority_floor = 0.1);

  void add(Trajectory t);  // evicts the oldest at capacity
  int size() const { return static_cast<int>(items_.size()); }
  const Trajectory& at(int i) const { return items_[static_cast<std::size_t>(i)]; }
  int eligible(int seg_len) const;  // trajectories long enough to sample

  // Sampling weight of each trajectory of length >= seg_len:
  //   return_i - min_eligible_return + floor.
  // Returns (index, weight) pairs; throws when nothing is eligible.
  std::vector<std::pair<int, double>> priorities(int seg_len) const;

  struct SegmentRef {
    int traj = 0;
    int start = 0;
  };
  // Draws trajectories proportional to priority, segment starts uniform.
  std::vector<SegmentRef> sample_segments(int batch, int seg_len, Rng& rng) const;

  // Packs segments into a time-major batch (row t*B+b = segment b, offset t).
  SegmentBatch materialize(const std::vector<SegmentRef>& refs, int seg_len) const;

 private:
  int capacity_;
  double floor_;
  std::deque<Trajectory> items_;
};

}  // namespace tdv3
