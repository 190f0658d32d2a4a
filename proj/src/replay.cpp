#include "tdv3/replay.hpp"

#include <algorithm>
#include <stdexcept>

namespace tdv3 {

void Trajectory::validate() const {
  const std::size_t n = observations.size();
  if (n == 0) throw std::invalid_argument("trajectory: empty");
  if (actions.size() != n || rewards.size() != n || continues.size() != n) {
    throw std::invalid_argument("trajectory: field lengths differ");
  }
  for (std::size_t i = 1; i < n; ++i) {
    if (!observations[i].same_shape(observations[0]) || !actions[i].same_shape(actions[0])) {
      throw std::invalid_argument("trajectory: inconsistent row shapes");
    }
  }
}

ReplayBuffer::ReplayBuffer(int capacity, double priority_floor)
    : capacity_(capacity), floor_(priority_floor) {
  if (capacity < 1) throw std::invalid_argument("replay: capacity must be positive");
  if (!(priority_floor > 0)) throw std::invalid_argument("replay: priority floor must be positive");
}

void ReplayBuffer::add(Trajectory t) {
  t.validate();
  if (static_cast<int>(items_.size()) == capacity_) items_.pop_front();
  items_.push_back(std::move(t));
}

int ReplayBuffer::eligible(int seg_len) const {
  int n = 0;
  for (const auto& t : items_) {
    if (t.length() >= seg_len) ++n;
  }
  return n;
}

std::vector<std::pair<int, double>> ReplayBuffer::priorities(int seg_len) const {
  if (seg_len < 2) throw std::invalid_argument("replay: segment length must be at least 2");
  std::vector<std::pair<int, double>> out;
  double min_ret = 0;
  bool first = true;
  for (int i = 0; i < size(); ++i) {
    if (items_[static_cast<std::size_t>(i)].length() < seg_len) continue;
    const double r = items_[static_cast<std::size_t>(i)].episode_return();
    out.emplace_back(i, r);
    if (first || r < min_ret) min_ret = r;
    first = false;
  }
  if (out.empty()) {
    throw std::invalid_argument(items_.empty() ? "replay: buffer is empty"
                                               : "replay: no trajectory long enough to sample");
  }
  for (auto& [idx, w] : out) w = w - min_ret + floor_;
  return out;
}

std::vector<ReplayBuffer::SegmentRef> ReplayBuffer::sample_segments(int batch, int seg_len,
                                                                    Rng& rng) const {
  if (batch < 1) throw std::invalid_argument("replay: batch must be positive");
  const auto pri = priorities(seg_len);
  std::vector<double> weights(pri.size());
  for (std::size_t i = 0; i < pri.size(); ++i) weights[i] = pri[i].second;
  std::vector<SegmentRef> refs(static_cast<std::size_t>(batch));
  for (auto& ref : refs) {
    const int pick = rng.categorical(weights.data(), static_cast<int>(weights.size()));
    ref.traj = pri[static_cast<std::size_t>(pick)].first;
    const int slack = items_[static_cast<std::size_t>(ref.traj)].length() - seg_len;
    ref.start = slack == 0 ? 0 : rng.index(slack + 1);
  }
  return refs;
}

SegmentBatch ReplayBuffer::materialize(const std::vector<SegmentRef>& refs, int seg_len) const {
  if (refs.empty()) throw std::invalid_argument("replay: no segments to materialize");
  const int B = static_cast<int>(refs.size());
  const Trajectory& probe = items_[static_cast<std::size_t>(refs[0].traj)];
  const int d_obs = probe.observations[0].cols();
  const int n_act = probe.actions[0].cols();

  SegmentBatch batch;
  batch.B = B;
  batch.T = seg_len;
  batch.obs = Tensor::zeros({seg_len * B, d_obs});
  batch.actions = Tensor::zeros({seg_len * B, n_act});
  batch.rewards = Tensor::zeros({seg_len * B, 1});
  batch.conts = Tensor::zeros({seg_len * B, 1});
  for (int b = 0; b < B; ++b) {
    const Trajectory& tr = items_[static_cast<std::size_t>(refs[static_cast<std::size_t>(b)].traj)];
    const int start = refs[static_cast<std::size_t>(b)].start;
    if (start < 0 || start + seg_len > tr.length()) {
      throw std::invalid_argument("replay: segment out of range");
    }
    for (int t = 0; t < seg_len; ++t) {
      const std::size_t src = static_cast<std::size_t>(start + t);
      const int row = t * B + b;
      for (int c = 0; c < d_obs; ++c) batch.obs.at(row, c) = tr.observations[src].at(0, c);
      for (int c = 0; c < n_act; ++c) batch.actions.at(row, c) = tr.actions[src].at(0, c);
      batch.rewards.at(row, 0) = tr.rewards[src];
      batch.conts.at(row, 0) = tr.continues[src];
    }
  }
  return batch;
}

}  // namespace tdv3
