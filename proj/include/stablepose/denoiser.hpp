#pragma once

// The learnable denoiser: a dynamic-graph edge-convolution encoder that turns
// the augmented pointcloud into one latent vector, and an MLP head mapping
// (latent, noisy pose, step embedding) to the predicted noise. Forward passes
// are built on the autodiff tape; evaluation uses the same path and simply
// never calls backward.

#include <algorithm>
#include <cstdint>
#include <iostream>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "stablepose/autodiff.hpp"
#include "stablepose/catalog.hpp"
#include "stablepose/diffusion.hpp"
#include "stablepose/errors.hpp"
#include "stablepose/rng.hpp"
#include "stablepose/scene.hpp"
#include "stablepose/se3.hpp"

namespace stablepose {

struct DenoiserConfig {
  int k_nn = 16;
  std::vector<int> edge_conv_widths = {64, 64, 128, 256};
  int latent_dim = 512;
  std::vector<int> mlp_widths = {256, 256};
  int n_pts = 128;  // surface samples per object (and for the ground patch)
  bool ablate_nosdf = false;   // zero the SDF column at the encoder input
  bool ablate_nopose = false;  // drop x_t from the head input
  Parameterization parameterization = Parameterization::Epsilon;
  NoiseSchedule schedule = NoiseSchedule::geometric();

  static DenoiserConfig paper() { return {}; }

  // CPU-trainable profile: widths at a quarter of the paper's, per-layer count
  // trimmed to three, latent 128.
  static DenoiserConfig desk() {
    DenoiserConfig c;
    c.k_nn = 8;
    c.edge_conv_widths = {16, 16, 32};
    c.latent_dim = 128;
    c.mlp_widths = {64, 64};
    c.n_pts = 64;
    return c;
  }

  int head_input_dim() const { return latent_dim + (ablate_nopose ? 0 : 6) + 2; }

  void validate() const {
    if (k_nn < 1) throw ValidationError("k_nn must be >= 1");
    if (edge_conv_widths.empty()) throw ValidationError("need at least one edge-conv layer");
    for (int w : edge_conv_widths)
      if (w < 1) throw ValidationError("edge-conv widths must be positive");
    if (latent_dim < 1) throw ValidationError("latent_dim must be >= 1");
    if (mlp_widths.size() != 2) throw ValidationError("head takes exactly two hidden widths");
    for (int w : mlp_widths)
      if (w < 1) throw ValidationError("mlp widths must be positive");
    if (n_pts < 1) throw ValidationError("n_pts must be >= 1");
    if (ablate_nosdf && ablate_nopose)
      throw ValidationError("pick at most one ablation per model");
    schedule.validate();
  }
};

// Two configs describe the same trainable architecture if everything except
// the ablation switches matches (cmd_ablate's compatibility requirement).
inline bool same_profile(const DenoiserConfig& a, const DenoiserConfig& b) {
  return a.k_nn == b.k_nn && a.edge_conv_widths == b.edge_conv_widths &&
         a.latent_dim == b.latent_dim && a.mlp_widths == b.mlp_widths && a.n_pts == b.n_pts &&
         a.parameterization == b.parameterization && a.schedule.sigmas == b.schedule.sigmas;
}

struct NamedTensor {
  std::string name;
  Eigen::MatrixXd value;
};

struct DenoiserModel {
  DenoiserConfig config;
  std::vector<NamedTensor> tensors;  // fixed creation order; checkpoints keep it

  int find(const std::string& name) const {
    for (std::size_t i = 0; i < tensors.size(); ++i)
      if (tensors[i].name == name) return static_cast<int>(i);
    throw ValidationError("unknown tensor: " + name);
  }
  const Eigen::MatrixXd& tensor(const std::string& name) const {
    return tensors[static_cast<std::size_t>(find(name))].value;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& t : tensors) n += static_cast<std::size_t>(t.value.size());
    return n;
  }

  bool all_finite() const {
    for (const auto& t : tensors)
      if (!t.value.allFinite()) return false;
    return true;
  }

  /// He-initialized weights, zero biases, fully determined by the seed.
  static DenoiserModel init(const DenoiserConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    DenoiserModel m;
    m.config = cfg;
    Rng rng(seed);
    auto affine = [&](const std::string& name, int in, int out) {
      Eigen::MatrixXd w(in, out);
      double s = std::sqrt(2.0 / in);
      for (int r = 0; r < in; ++r)
        for (int c = 0; c < out; ++c) w(r, c) = s * rng.normal();
      m.tensors.push_back({name + ".W", std::move(w)});
      m.tensors.push_back({name + ".b", Eigen::MatrixXd::Zero(1, out)});
    };
    int d = 5;
    for (std::size_t l = 0; l < cfg.edge_conv_widths.size(); ++l) {
      affine("enc" + std::to_string(l), 2 * d, cfg.edge_conv_widths[l]);
      d = cfg.edge_conv_widths[l];
    }
    int cat = 0;
    for (int w : cfg.edge_conv_widths) cat += w;
    affine("proj", cat, cfg.latent_dim);
    affine("head0", cfg.head_input_dim(), cfg.mlp_widths[0]);
    affine("head1", cfg.mlp_widths[0], cfg.mlp_widths[1]);
    affine("head2", cfg.mlp_widths[1], 6);
    return m;
  }
};

/// Self-inclusive k-nearest-neighbor indices per row, ties broken by
/// (squared distance, index). k larger than N-1 is clipped with a warning.
inline Eigen::MatrixXi knn_graph(const Eigen::MatrixXd& pts, int k) {
  const int n = static_cast<int>(pts.rows());
  if (n < 1) throw ValidationError("knn_graph: empty point set");
  int kk = std::max(1, std::min(k, n - 1));
  if (kk != k)
    std::cerr << "warning: knn k clipped from " << k << " to " << kk << " (" << n
              << " points)\n";
  Eigen::MatrixXi out(n, kk);
  std::vector<std::pair<double, int>> dist(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j)
      dist[static_cast<std::size_t>(j)] = {(pts.row(i) - pts.row(j)).squaredNorm(), j};
    std::partial_sort(dist.begin(), dist.begin() + kk, dist.end());
    for (int m = 0; m < kk; ++m) out(i, m) = dist[static_cast<std::size_t>(m)].second;
  }
  return out;
}

/// Model parameters registered as tape inputs, shared across every forward
/// pass built on the same tape (so one backward sums the batch gradient).
struct BoundModel {
  const DenoiserModel* model = nullptr;
  std::vector<int> ids;  // parallel to model->tensors

  static BoundModel bind(ad::Tape& t, const DenoiserModel& m) {
    BoundModel b;
    b.model = &m;
    for (const auto& nt : m.tensors) b.ids.push_back(ad::input(t, nt.value));
    return b;
  }

  int id(const std::string& name) const {
    return ids[static_cast<std::size_t>(model->find(name))];
  }
};

namespace detail {

inline int affine(ad::Tape& t, const BoundModel& bm, const std::string& name, int x) {
  return ad::add_rowvec(t, ad::matmul(t, x, bm.id(name + ".W")), bm.id(name + ".b"));
}

}  // namespace detail

/// Encoder over normalized cloud rows (N x 5: x, y, z, sdf, flag). The layer-1
/// graph metric is (x, y, z, flag) — SDF never enters the metric — and deeper
/// layers rebuild the graph in their input feature space. Returns the 1 x
/// latent_dim node.
inline int encode_cloud_node(ad::Tape& t, const BoundModel& bm, const Eigen::MatrixXd& rows) {
  const DenoiserConfig& cfg = bm.model->config;
  if (rows.rows() < 1 || rows.cols() != 5) throw ValidationError("cloud must be N x 5");
  Eigen::MatrixXd feats = rows;
  if (cfg.ablate_nosdf) feats.col(3).setZero();
  Eigen::MatrixXd metric(rows.rows(), 4);
  metric << rows.col(0), rows.col(1), rows.col(2), rows.col(4);

  int f = ad::input(t, feats);
  std::vector<int> layer_outs;
  for (std::size_t l = 0; l < cfg.edge_conv_widths.size(); ++l) {
    Eigen::MatrixXi g = knn_graph(l == 0 ? metric : t.val(f), cfg.k_nn);
    int e = ad::edge_features(t, f, g);
    int h = ad::relu(t, detail::affine(t, bm, "enc" + std::to_string(l), e));
    f = ad::group_max(t, h, static_cast<int>(g.cols()));
    layer_outs.push_back(f);
  }
  int all = layer_outs.size() == 1 ? layer_outs[0] : ad::concat_cols(t, layer_outs);
  return detail::affine(t, bm, "proj", ad::colwise_max(t, all));
}

/// Three-layer MLP head over concat(latent, x_t, t/T, log sigma_t); under the
/// no-pose ablation x_t is dropped (the cloud still carries the noisy pose).
inline int denoise_head_node(ad::Tape& t, const BoundModel& bm, int z, const PoseVec& x_t,
                             int step) {
  const DenoiserConfig& cfg = bm.model->config;
  std::vector<int> parts = {z};
  if (!cfg.ablate_nopose) parts.push_back(ad::input(t, x_t.transpose()));
  Eigen::MatrixXd embed(1, 2);
  embed << static_cast<double>(step) / cfg.schedule.T(), std::log(cfg.schedule.sigma(step));
  parts.push_back(ad::input(t, embed));
  int h = ad::concat_cols(t, parts);
  h = ad::relu(t, detail::affine(t, bm, "head0", h));
  h = ad::relu(t, detail::affine(t, bm, "head1", h));
  return detail::affine(t, bm, "head2", h);
}

inline int denoise_node(ad::Tape& t, const BoundModel& bm, const Eigen::MatrixXd& rows,
                        const PoseVec& x_t, int step) {
  return denoise_head_node(t, bm, encode_cloud_node(t, bm, rows), x_t, step);
}

/// Value-only forward pass (fresh local tape, no backward).
inline Vec6 denoise_eval(const DenoiserModel& m, const Eigen::MatrixXd& rows, const PoseVec& x_t,
                         int step) {
  ad::Tape t;
  BoundModel bm = BoundModel::bind(t, m);
  int out = denoise_node(t, bm, rows, x_t, step);
  return Vec6(t.val(out).row(0).transpose());
}

inline Eigen::VectorXd encode_cloud(const DenoiserModel& m, const Eigen::MatrixXd& rows) {
  ad::Tape t;
  BoundModel bm = BoundModel::bind(t, m);
  int z = encode_cloud_node(t, bm, rows);
  return t.val(z).row(0).transpose();
}

/// Reverse-diffusion sampling of a query pose given the context objects (the
/// scene without the query). The augmented cloud is rebuilt at the current
/// noisy pose on every step; the result is decoded back to world frame.
inline Pose sample_pose(const DenoiserModel& m, const ShapeCatalog& catalog,
                        const std::vector<SceneObject>& context, const std::string& query_shape,
                        Rng& rng) {
  catalog.get(query_shape);
  Scene work;
  work.objects = context;
  SceneObject q;
  q.shape = query_shape;
  q.sample_seed = rng.next_u64() | 1;
  work.objects.push_back(q);
  work.query_index = work.size() - 1;
  WorkspaceFrame frame = context_frame(work);

  auto denoise = [&](const PoseVec& x, int t) {
    Pose at = to_world(frame, decode_pose(x));
    AugmentedPointCloud cloud = build_augmented_cloud(catalog, work, at, m.config.n_pts, rng);
    return denoise_eval(m, normalize_cloud(frame, cloud.rows), x, t);
  };
  PoseVec x0 =
      reverse_sample_raw(denoise, m.config.schedule, m.config.parameterization, rng);
  return to_world(frame, decode_pose(x0));
}

}  // namespace stablepose
