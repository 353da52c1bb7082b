#pragma once

// DDPM machinery on SE(3) pose vectors: geometric noise ladder, forward
// noising that perturbs the decoded pose (translation additive, rotation
// right-multiplied through the exponential map), and the generic reverse
// sampler. The denoiser is abstract here: any callable (x_t, t) -> 6-vector.

#include <cmath>
#include <functional>
#include <vector>

#include "stablepose/errors.hpp"
#include "stablepose/rng.hpp"
#include "stablepose/se3.hpp"

namespace stablepose {

struct NoiseSchedule {
  std::vector<double> sigmas;  // sigma_1..sigma_T, strictly increasing

  int T() const { return static_cast<int>(sigmas.size()); }
  double sigma(int t) const {  // 1-based; sigma(0) = 0 closes Eq. (2b)
    return t == 0 ? 0.0 : sigmas[static_cast<std::size_t>(t - 1)];
  }

  static NoiseSchedule geometric(int T = 100, double lo = 0.01, double hi = 1.5) {
    if (T < 1 || lo <= 0 || hi <= lo) throw ValidationError("bad schedule parameters");
    NoiseSchedule s;
    s.sigmas.resize(static_cast<std::size_t>(T));
    for (int t = 0; t < T; ++t)
      s.sigmas[static_cast<std::size_t>(t)] =
          T == 1 ? hi : lo * std::pow(hi / lo, static_cast<double>(t) / (T - 1));
    return s;
  }

  void validate() const {
    if (sigmas.empty()) throw ValidationError("empty noise schedule");
    double prev = 0.0;
    for (double s : sigmas) {
      if (!(s > prev)) throw ValidationError("noise schedule must be strictly increasing");
      prev = s;
    }
  }
};

enum class Parameterization { Epsilon, X0 };

// x_t = encode(perturb(decode(x0), eps)), eps ~ N(0, sigma_t^2 I6).
inline std::pair<PoseVec, Vec6> add_noise(const PoseVec& x0, int t, const NoiseSchedule& sched,
                                          Rng& rng) {
  if (t < 1 || t > sched.T()) throw ValidationError("noise step out of range");
  Vec6 eps = rng.normal_vec(6, sched.sigma(t));
  PoseVec x_t = encode_pose(perturb_pose(decode_pose(x0), eps));
  return {x_t, eps};
}

inline PoseVec apply_noise(const PoseVec& x, const Vec6& eps) {
  return encode_pose(perturb_pose(decode_pose(x), eps));
}

// Exact inverse of apply_noise: translation subtract, rotation right-multiply
// by expmap(-eps_r).
inline PoseVec remove_noise(const PoseVec& x, const Vec6& eps_hat) {
  return apply_noise(x, -eps_hat);
}

// Reverse process in normalized coordinates. denoise(x_t, t) returns eps_hat
// or x0_hat depending on the parameterization. The caller's closure is
// responsible for rebuilding any conditioning (pointcloud) at x_t.
inline PoseVec reverse_sample_raw(const std::function<Vec6(const PoseVec&, int)>& denoise,
                                  const NoiseSchedule& sched, Parameterization param, Rng& rng) {
  PoseVec x = rng.normal_vec(6, sched.sigma(sched.T()));
  for (int t = sched.T(); t >= 1; --t) {
    Vec6 pred = denoise(x, t);
    PoseVec x0_hat = param == Parameterization::Epsilon ? remove_noise(x, pred) : PoseVec(pred);
    double s_prev = sched.sigma(t - 1);
    x = s_prev == 0.0 ? x0_hat : apply_noise(x0_hat, rng.normal_vec(6, s_prev));
    if (x.norm() > 10.0) throw SamplingFault("reverse sampling diverged at step " +
                                             std::to_string(t - 1));
    if (!x.allFinite()) throw SamplingFault("non-finite sample state");
  }
  return x;
}

}  // namespace stablepose
