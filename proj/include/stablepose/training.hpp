#pragma once

// Training objective and optimizer. The loss follows the DDPM recipe: per
// query object, sample t, noise the pose in the normalized frame, rebuild the
// augmented cloud at the noised world pose, and regress the denoiser output
// onto the target for the configured parameterization. All randomness is
// routed through per-object streams keyed by sample_seed, and the per-object
// terms are summed in ascending stream order, so the loss value does not
// depend on the context list ordering.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "stablepose/denoiser.hpp"

namespace stablepose {

/// Loss node for one scene: mean over the per-query-object MSE terms
/// (mean-over-entries convention). Under eps-prediction each term is weighted
/// by 1/sigma_t^2 — the standard DDPM standardization — so every noise level
/// contributes equally; without it the sigma~1.5 terms outweigh the sigma~0.01
/// terms by four orders of magnitude and the small/mid-sigma denoising that
/// decides final sample quality gets almost no gradient. A zero model under
/// eps-prediction therefore scores exactly 1 in expectation.
inline int training_loss_node(ad::Tape& tape, const BoundModel& bm, const ShapeCatalog& catalog,
                              const Scene& scene, Rng& rng) {
  const DenoiserConfig& cfg = bm.model->config;
  validate_scene(catalog, scene);
  std::uint64_t master = rng.next_u64();

  std::vector<std::pair<std::uint64_t, int>> order;
  for (int q = 0; q < scene.size(); ++q)
    order.emplace_back(detail::cloud_stream_id(scene.objects[static_cast<std::size_t>(q)], q),
                       q);
  std::sort(order.begin(), order.end());

  std::vector<int> terms;
  for (auto [stream, q] : order) {
    Rng orng = Rng::stream(master, stream);
    Scene noised = scene;
    noised.query_index = q;
    WorkspaceFrame frame = context_frame(noised);
    int t = static_cast<int>(orng.uniform_int(1, cfg.schedule.T()));
    PoseVec x0 = to_normalized(
        frame, encode_pose(noised.objects[static_cast<std::size_t>(q)].pose));
    auto [x_t, eps] = add_noise(x0, t, cfg.schedule, orng);
    noised.objects[static_cast<std::size_t>(q)].pose = to_world(frame, decode_pose(x_t));
    AugmentedPointCloud cloud = build_augmented_cloud(
        catalog, noised, noised.objects[static_cast<std::size_t>(q)].pose, cfg.n_pts, orng);
    int pred = denoise_node(tape, bm, normalize_cloud(frame, cloud.rows), x_t, t);
    Vec6 target = cfg.parameterization == Parameterization::Epsilon ? eps : x0;
    int term = ad::mse(tape, pred, ad::input(tape, target.transpose()));
    if (cfg.parameterization == Parameterization::Epsilon) {
      double s = cfg.schedule.sigma(t);
      term = ad::scale(tape, term, 1.0 / (s * s));
    }
    terms.push_back(term);
  }
  int acc = terms[0];
  for (std::size_t i = 1; i < terms.size(); ++i) acc = ad::add(tape, acc, terms[i]);
  return ad::scale(tape, acc, 1.0 / static_cast<double>(terms.size()));
}

inline double training_loss(const DenoiserModel& m, const ShapeCatalog& catalog,
                            const Scene& scene, Rng& rng) {
  ad::Tape tape;
  BoundModel bm = BoundModel::bind(tape, m);
  double v = tape.val(training_loss_node(tape, bm, catalog, scene, rng))(0, 0);
  if (!std::isfinite(v)) throw TrainFault("non-finite training loss on a single scene");
  return v;
}

struct TrainConfig {
  int steps = 10000;
  int batch_size = 32;
  double lr = 1e-4;
  double lr_final = 0.0;  // >0: geometric decay from lr to lr_final over the run
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  int val_every = 500;   // also evaluated at the final step
  int val_repeats = 2;   // passes over the validation split per measurement
  std::uint64_t seed = 0;
  int snapshot_every = 0;  // 0 = no periodic snapshots
  std::function<void(int, const DenoiserModel&)> snapshot;
  std::function<void(int, double)> progress;
};

struct TrainHistory {
  std::vector<double> step_loss;
  std::vector<std::pair<int, double>> val_loss;  // (step, loss)
};

struct TrainResult {
  DenoiserModel model;  // last parameters with all-finite state
  TrainHistory history;
  int steps_completed = 0;
  bool aborted = false;
  std::string fault;
};

namespace detail {

/// Validation split: every 10th scene when there are at least 10, otherwise
/// the whole dataset doubles as both splits (memorization runs).
inline void split_dataset(int n, std::vector<int>& train_idx, std::vector<int>& val_idx) {
  for (int i = 0; i < n; ++i) {
    if (n >= 10 && i % 10 == 9)
      val_idx.push_back(i);
    else
      train_idx.push_back(i);
  }
  if (val_idx.empty()) val_idx = train_idx;
}

}  // namespace detail

/// Minibatch Adam on training_loss. Deterministic given the seed: one
/// sequential RNG drives batch selection and loss randomness, validation uses
/// per-measurement streams. A non-finite loss or gradient aborts and returns
/// the last good parameters.
inline TrainResult train(const DenoiserConfig& cfg, const ShapeCatalog& catalog,
                         const std::vector<Scene>& dataset, const TrainConfig& tc) {
  if (dataset.empty()) throw ValidationError("empty training dataset");
  if (tc.steps < 1 || tc.batch_size < 1) throw ValidationError("bad training configuration");

  std::vector<int> train_idx, val_idx;
  detail::split_dataset(static_cast<int>(dataset.size()), train_idx, val_idx);

  TrainResult res;
  res.model = DenoiserModel::init(cfg, tc.seed);
  DenoiserModel& model = res.model;
  DenoiserModel last_good = model;

  std::vector<Eigen::MatrixXd> adam_m, adam_v;
  for (const auto& t : model.tensors) {
    adam_m.push_back(Eigen::MatrixXd::Zero(t.value.rows(), t.value.cols()));
    adam_v.push_back(Eigen::MatrixXd::Zero(t.value.rows(), t.value.cols()));
  }

  Rng rng = Rng::stream(tc.seed, 1);
  auto validation_loss = [&](int step) {
    Rng vr = Rng::stream(tc.seed, 0x76616cULL + static_cast<std::uint64_t>(step));
    double sum = 0.0;
    int n = 0;
    for (int rep = 0; rep < tc.val_repeats; ++rep)
      for (int i : val_idx) {
        sum += training_loss(model, catalog, dataset[static_cast<std::size_t>(i)], vr);
        ++n;
      }
    return sum / n;
  };

  for (int step = 1; step <= tc.steps; ++step) {
    ad::Tape tape;
    BoundModel bm = BoundModel::bind(tape, model);
    int acc = -1;
    std::string members;
    for (int b = 0; b < tc.batch_size; ++b) {
      int si = train_idx[static_cast<std::size_t>(
          rng.uniform_int(0, static_cast<std::int64_t>(train_idx.size()) - 1))];
      members += (b ? "," : "") + std::to_string(si);
      int node = training_loss_node(tape, bm, catalog, dataset[static_cast<std::size_t>(si)],
                                    rng);
      acc = b == 0 ? node : ad::add(tape, acc, node);
    }
    int loss_node = ad::scale(tape, acc, 1.0 / tc.batch_size);
    double loss = tape.val(loss_node)(0, 0);
    if (!std::isfinite(loss)) {
      res.model = last_good;
      res.aborted = true;
      res.fault = "non-finite loss at step " + std::to_string(step) + " (batch scenes " +
                  members + ")";
      break;
    }

    tape.backward(loss_node);
    bool grads_ok = true;
    for (std::size_t i = 0; i < model.tensors.size() && grads_ok; ++i)
      if (!tape.grad(bm.ids[i]).allFinite()) {
        res.model = last_good;
        res.aborted = true;
        res.fault = "non-finite gradient in " + model.tensors[i].name + " at step " +
                    std::to_string(step);
        grads_ok = false;
      }
    if (!grads_ok) break;

    double c1 = 1.0 - std::pow(tc.beta1, step);
    double c2 = 1.0 - std::pow(tc.beta2, step);
    double lr = tc.lr;
    if (tc.lr_final > 0.0 && tc.steps > 1)
      lr = tc.lr * std::pow(tc.lr_final / tc.lr,
                            static_cast<double>(step - 1) / (tc.steps - 1));
    for (std::size_t i = 0; i < model.tensors.size(); ++i) {
      const Eigen::MatrixXd& g = tape.grad(bm.ids[i]);
      adam_m[i] = tc.beta1 * adam_m[i] + (1.0 - tc.beta1) * g;
      adam_v[i] = tc.beta2 * adam_v[i] + (1.0 - tc.beta2) * g.cwiseProduct(g);
      model.tensors[i].value.array() -=
          lr * (adam_m[i].array() / c1) /
          ((adam_v[i].array() / c2).sqrt() + tc.adam_eps);
    }

    res.history.step_loss.push_back(loss);
    res.steps_completed = step;
    last_good = model;
    if (tc.val_every > 0 && (step % tc.val_every == 0 || step == tc.steps))
      res.history.val_loss.emplace_back(step, validation_loss(step));
    if (tc.snapshot && tc.snapshot_every > 0 && step % tc.snapshot_every == 0)
      tc.snapshot(step, model);
    if (tc.progress) tc.progress(step, loss);
  }
  return res;
}

}  // namespace stablepose
