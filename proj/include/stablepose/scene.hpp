#pragma once

// Scene data model and the SDF-augmented pointcloud that conditions the
// denoiser: body-frame surface samples transformed to world, each annotated
// with the merged signed distance to every OTHER body (ground included) and a
// binary query flag.

#include <Eigen/Dense>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "stablepose/catalog.hpp"
#include "stablepose/errors.hpp"
#include "stablepose/rng.hpp"
#include "stablepose/se3.hpp"
#include "stablepose/shape.hpp"

namespace stablepose {

inline constexpr int kGroundOwner = -1;
inline constexpr double kWorkspaceScale = 0.3;   // meters per normalized unit
inline constexpr double kGroundPatchHalf = 0.3;  // 0.6 m square patch

struct SceneObject {
  std::string shape;
  Pose pose;
  // Identity of this object's sample stream. Travels with the object, so
  // reordering the list reorders cloud blocks without changing their content.
  std::uint64_t sample_seed = 0;
};

struct Scene {
  std::vector<SceneObject> objects;
  int query_index = 0;

  int size() const { return static_cast<int>(objects.size()); }
  const SceneObject& query() const { return objects[static_cast<std::size_t>(query_index)]; }
};

inline void validate_scene(const ShapeCatalog& catalog, const Scene& scene) {
  if (scene.objects.empty()) throw ValidationError("scene has no objects");
  if (scene.query_index < 0 || scene.query_index >= scene.size())
    throw ValidationError("scene query_index out of range");
  for (const auto& obj : scene.objects)
    if (!catalog.has(obj.shape)) throw ValidationError("unknown shape '" + obj.shape + "'");
}

// min over bodies j != owner of f_j(H_j^-1 p), with the ground halfspace
// f(p) = p_z as one of the bodies. owner = kGroundOwner skips only the ground.
inline double merged_sdf(const ShapeCatalog& catalog, const Scene& scene, int owner,
                         const Vec3& p_world) {
  double best = std::numeric_limits<double>::infinity();
  if (owner != kGroundOwner) best = p_world.z();
  for (int j = 0; j < scene.size(); ++j) {
    if (j == owner) continue;
    const SceneObject& obj = scene.objects[static_cast<std::size_t>(j)];
    const BlockShape& shape = catalog.get(obj.shape);
    Vec3 local = obj.pose.rotation.transpose() * (p_world - obj.pose.translation);
    best = std::min(best, sdf(shape, local));
  }
  return best;
}

struct AugmentedPointCloud {
  // (n_ctx + n_objects * n_pts) x 5: columns x, y, z, sdf_value, query_flag.
  // Ground patch rows first, then object blocks in scene order.
  Eigen::MatrixXd rows;
  int n_ctx = 0;
  int n_pts = 0;
};

namespace detail {
inline std::uint64_t cloud_stream_id(const SceneObject& obj, int index) {
  return obj.sample_seed != 0 ? obj.sample_seed : static_cast<std::uint64_t>(index) + 1;
}
}  // namespace detail

// query_pose overrides the stored pose of the query object (during diffusion
// this is the noised pose). Consumes one draw from rng; all sampling below
// runs on per-body streams split from that draw so the result depends only on
// (scene content, per-object seeds, rng state), not on list order.
inline AugmentedPointCloud build_augmented_cloud(const ShapeCatalog& catalog, const Scene& scene_in,
                                                 const Pose& query_pose, int n_pts, Rng& rng) {
  validate_scene(catalog, scene_in);
  if (n_pts < 1) throw ValidationError("n_pts must be >= 1");
  // The override must also be what merged_sdf sees, or context points would
  // measure distance to the query at its stale stored pose.
  Scene scene = scene_in;
  scene.objects[static_cast<std::size_t>(scene.query_index)].pose = query_pose;
  std::uint64_t master = rng.next_u64();

  AugmentedPointCloud cloud;
  cloud.n_ctx = n_pts;
  cloud.n_pts = n_pts;
  cloud.rows.resize(cloud.n_ctx + scene.size() * n_pts, 5);

  Rng ground_rng = Rng::stream(master, ~std::uint64_t{0});
  for (int i = 0; i < cloud.n_ctx; ++i) {
    Vec3 p(ground_rng.uniform(-kGroundPatchHalf, kGroundPatchHalf),
           ground_rng.uniform(-kGroundPatchHalf, kGroundPatchHalf), 0.0);
    cloud.rows.row(i) << p.x(), p.y(), p.z(), merged_sdf(catalog, scene, kGroundOwner, p), 0.0;
  }

  for (int j = 0; j < scene.size(); ++j) {
    const SceneObject& obj = scene.objects[static_cast<std::size_t>(j)];
    const BlockShape& shape = catalog.get(obj.shape);
    const Pose& pose = (j == scene.query_index) ? query_pose : obj.pose;
    Rng obj_rng = Rng::stream(master, detail::cloud_stream_id(obj, j));
    PointMatrix local = sample_surface(shape, n_pts, obj_rng);
    double flag = (j == scene.query_index) ? 1.0 : 0.0;
    int base = cloud.n_ctx + j * n_pts;
    for (int i = 0; i < n_pts; ++i) {
      Vec3 p = pose.apply(local.row(i).transpose());
      cloud.rows.row(base + i) << p.x(), p.y(), p.z(), merged_sdf(catalog, scene, j, p), flag;
    }
  }
  return cloud;
}

// --- workspace normalization -------------------------------------------------
// Shifts the (x,y) context centroid to the origin and divides all lengths by
// kWorkspaceScale. z is shifted never; the scale is uniform across axes so a
// single isotropic noise level is meaningful over translation and rotation.

struct WorkspaceFrame {
  double cx = 0.0;
  double cy = 0.0;
  double scale = kWorkspaceScale;
};

inline WorkspaceFrame context_frame(const Scene& scene) {
  WorkspaceFrame frame;
  double n = 0;
  for (int j = 0; j < scene.size(); ++j) {
    if (j == scene.query_index) continue;
    frame.cx += scene.objects[static_cast<std::size_t>(j)].pose.translation.x();
    frame.cy += scene.objects[static_cast<std::size_t>(j)].pose.translation.y();
    n += 1;
  }
  if (n > 0) {
    frame.cx /= n;
    frame.cy /= n;
  }
  return frame;
}

inline Pose to_normalized(const WorkspaceFrame& f, const Pose& p) {
  Pose out = p;
  out.translation = Vec3(p.translation.x() - f.cx, p.translation.y() - f.cy, p.translation.z()) /
                    f.scale;
  return out;
}

inline Pose to_world(const WorkspaceFrame& f, const Pose& p) {
  Pose out = p;
  out.translation = p.translation * f.scale + Vec3(f.cx, f.cy, 0.0);
  return out;
}

inline PoseVec to_normalized(const WorkspaceFrame& f, const PoseVec& x) {
  PoseVec out = x;
  out[0] = (x[0] - f.cx) / f.scale;
  out[1] = (x[1] - f.cy) / f.scale;
  out[2] = x[2] / f.scale;
  return out;
}

inline PoseVec to_world(const WorkspaceFrame& f, const PoseVec& x) {
  PoseVec out = x;
  out[0] = x[0] * f.scale + f.cx;
  out[1] = x[1] * f.scale + f.cy;
  out[2] = x[2] * f.scale;
  return out;
}

// Lengths (coordinates and the sdf column) divide by the scale; flags pass
// through untouched.
inline Eigen::MatrixXd normalize_cloud(const WorkspaceFrame& f, const Eigen::MatrixXd& rows) {
  Eigen::MatrixXd out = rows;
  out.col(0).array() -= f.cx;
  out.col(1).array() -= f.cy;
  out.leftCols(4) /= f.scale;
  return out;
}

inline std::pair<Scene, WorkspaceFrame> normalize_scene(const Scene& scene) {
  WorkspaceFrame frame = context_frame(scene);
  Scene out = scene;
  for (auto& obj : out.objects) obj.pose = to_normalized(frame, obj.pose);
  return {out, frame};
}

inline Scene denormalize_scene(const Scene& scene, const WorkspaceFrame& frame) {
  Scene out = scene;
  for (auto& obj : out.objects) obj.pose = to_world(frame, obj.pose);
  return out;
}

// Minimum surface-sample separation between distinct blocks (ground excluded).
// +inf for single-object scenes. focus >= 0 restricts to pairs involving that
// block. Used by the interaction-bias guard and the stacked-scene contact
// requirement.
inline double interblock_min_sdf(const ShapeCatalog& catalog, const Scene& scene, int n_per_obj,
                                 Rng& rng, int focus = -1) {
  double best = std::numeric_limits<double>::infinity();
  if (scene.size() < 2) return best;
  for (int i = 0; i < scene.size(); ++i) {
    const SceneObject& obj = scene.objects[static_cast<std::size_t>(i)];
    const BlockShape& shape = catalog.get(obj.shape);
    PointMatrix area = sample_surface(shape, n_per_obj, rng);
    // Line and point contacts live on edges, which area sampling never hits;
    // probe them deterministically.
    std::vector<Vec3> probes;
    probes.reserve(static_cast<std::size_t>(area.rows()) + shape.edges.size() * 9);
    for (int n = 0; n < area.rows(); ++n) probes.push_back(area.row(n).transpose());
    for (const auto& e : shape.edges) {
      const Vec3& a = shape.vertices[static_cast<std::size_t>(e[0])];
      const Vec3& b = shape.vertices[static_cast<std::size_t>(e[1])];
      for (int k = 0; k <= 8; ++k) probes.push_back(a + (k / 8.0) * (b - a));
    }
    for (const Vec3& local : probes) {
      Vec3 p = obj.pose.apply(local);
      for (int j = 0; j < scene.size(); ++j) {
        if (j == i) continue;
        if (focus >= 0 && i != focus && j != focus) continue;
        const SceneObject& other = scene.objects[static_cast<std::size_t>(j)];
        Vec3 q = other.pose.rotation.transpose() * (p - other.pose.translation);
        best = std::min(best, sdf(catalog.get(other.shape), q));
      }
    }
  }
  return best;
}

}  // namespace stablepose
