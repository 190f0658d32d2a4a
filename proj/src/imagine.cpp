#include "tdv3/imagine.hpp"

#include <stdexcept>

namespace tdv3 {

namespace {

Tensor take_row(const Tensor& t, int r) {
  const int c = t.cols();
  Tensor out({1, c});
  for (int j = 0; j < c; ++j) out.at(0, j) = t.at(r, j);
  return out;
}

Tensor concat_row(const Tensor& a, const Tensor& b) {
  Tensor out({1, a.cols() + b.cols()});
  for (int j = 0; j < a.cols(); ++j) out.at(0, j) = a.at(0, j);
  for (int j = 0; j < b.cols(); ++j) out.at(0, a.cols() + j) = b.at(0, j);
  return out;
}

}  // namespace

std::vector<ImaginedRollout> imagine(const ParameterStore& store, const WorldModel& wm,
                                     const std::vector<ImagineStart>& starts, int horizon,
                                     int rollouts_per_start, const ImaginePolicy& policy,
                                     Rng& rng) {
  if (starts.empty()) throw std::invalid_argument("imagine: no starts");
  if (horizon < 1) throw std::invalid_argument("imagine: horizon must be at least 1");
  if (rollouts_per_start < 1) throw std::invalid_argument("imagine: rollouts_per_start must be positive");
  const int per_start = std::min(rollouts_per_start, kMaxRolloutsPerStart);
  const int n_actions = wm.config().n_actions;
  const int d_state = wm.config().state_dim();

  Rng streams(rng.next_u64());
  std::vector<ImaginedRollout> out;
  out.reserve(starts.size() * static_cast<std::size_t>(per_start));
  for (std::size_t s = 0; s < starts.size(); ++s) {
    const ImagineStart& start = starts[s];
    if (start.prefix_z.size() != start.prefix_a.size()) {
      throw std::invalid_argument("imagine: prefix latent/action lengths differ");
    }
    ModelStepper proto(store, wm);
    proto.reset();
    for (std::size_t i = 0; i < start.prefix_z.size(); ++i) {
      proto.advance(start.prefix_z[i], start.prefix_a[i]);
    }
    for (int r = 0; r < per_start; ++r) {
      Rng stream = streams.derive(static_cast<std::uint64_t>(s)).derive(static_cast<std::uint64_t>(r));
      ModelStepper stepper = proto;
      Tensor z = start.z_row;

      ImaginedRollout roll;
      roll.states = Tensor::zeros({horizon + 1, d_state});
      roll.actions = Tensor::zeros({horizon, n_actions});
      roll.rewards.reserve(static_cast<std::size_t>(horizon));
      roll.continues.reserve(static_cast<std::size_t>(horizon));

      Tensor state = concat_row(stepper.h(), z);
      for (int j = 0; j < d_state; ++j) roll.states.at(0, j) = state.at(0, j);
      for (int t = 1; t <= horizon; ++t) {
        const int a = policy(state, stream);
        if (a < 0 || a >= n_actions) throw std::invalid_argument("imagine: policy action out of range");
        Tensor a_row = Tensor::zeros({1, n_actions});
        a_row.at(0, a) = 1.0;
        stepper.advance(z, a_row);
        z = wm.prior_latent(store, stepper.h(), &stream);
        const auto dec = wm.decode(store, stepper.h(), z);

        roll.actions.at(t - 1, a) = 1.0;
        roll.rewards.push_back(dec.reward);
        roll.continues.push_back(dec.cont_prob);
        state = concat_row(stepper.h(), z);
        for (int j = 0; j < d_state; ++j) roll.states.at(t, j) = state.at(0, j);
      }
      out.push_back(std::move(roll));
    }
  }
  return out;
}

std::vector<ImagineStart> make_starts(const WmLossResult& res, const SegmentBatch& batch,
                                      int per_segment, Rng& rng) {
  if (per_segment < 1) throw std::invalid_argument("imagine: per_segment must be positive");
  const int B = batch.B;
  const int T = batch.T;
  if (res.z.rows() != T * B) throw std::invalid_argument("imagine: latent rows do not match batch");
  std::vector<ImagineStart> starts;
  starts.reserve(static_cast<std::size_t>(B) * static_cast<std::size_t>(per_segment));
  for (int b = 0; b < B; ++b) {
    for (int j = 0; j < per_segment; ++j) {
      // Draw start positions from the later half of the segment: imagined
      // windows then overlap the reward-bearing tail while keeping most of
      // the real prefix as context.
      const int lo = T / 2;
      const int t = lo + rng.index(T - lo);
      ImagineStart st;
      st.z_row = take_row(res.z, t * B + b);
      st.prefix_z.reserve(static_cast<std::size_t>(t));
      st.prefix_a.reserve(static_cast<std::size_t>(t));
      for (int i = 0; i < t; ++i) {
        st.prefix_z.push_back(take_row(res.z, i * B + b));
        st.prefix_a.push_back(take_row(batch.actions, i * B + b));
      }
      starts.push_back(std::move(st));
    }
  }
  return starts;
}

}  // namespace tdv3
