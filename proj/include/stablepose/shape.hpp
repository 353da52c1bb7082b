#pragma once

// Convex block shapes with exact signed distance fields, area-weighted
// surface sampling, and polyhedral mass properties.
//
// Shapes are defined in a body frame with the centroid of the solid at the
// origin, so a pose translation is the position of the object center.

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "stablepose/errors.hpp"
#include "stablepose/rng.hpp"
#include "stablepose/se3.hpp"

namespace stablepose {

using PointMatrix = Eigen::Matrix<double, Eigen::Dynamic, 3>;

struct Face {
  std::vector<int> verts;  // outward CCW order after canonicalization
  Vec3 normal;             // unit, outward
  double offset = 0.0;     // plane: normal . x = offset
};

struct BlockShape {
  std::string name;
  std::vector<Vec3> vertices;
  std::vector<Face> faces;
  std::vector<std::array<int, 2>> edges;  // unique undirected vertex pairs

  double diameter = 0.0;  // max pairwise vertex distance
  double volume = 0.0;
  Vec3 centroid = Vec3::Zero();    // of the solid; ~0 for catalog shapes
  Mat3 unit_inertia = Mat3::Zero();  // inertia about the centroid per unit density

  // Surface triangulation (face fans) for sampling.
  struct Tri {
    int a, b, c;
    int face;
    double area;
  };
  std::vector<Tri> tris;
  double surface_area = 0.0;
  std::vector<double> tri_cdf;  // cumulative areas, tri_cdf.back() == surface_area
};

namespace detail {

inline Vec3 newell_normal(const std::vector<Vec3>& verts, const std::vector<int>& face) {
  Vec3 n = Vec3::Zero();
  const int k = static_cast<int>(face.size());
  for (int i = 0; i < k; ++i) {
    const Vec3& a = verts[face[i]];
    const Vec3& b = verts[face[(i + 1) % k]];
    n += a.cross(b);
  }
  return n;
}

}  // namespace detail

/// Builds a shape from raw vertices and faces (any winding): orients faces
/// outward, derives planes, edges, triangulation, and mass properties.
/// Geometry validation (convexity, closedness) lives in the catalog loader.
inline BlockShape make_shape(std::string name, std::vector<Vec3> vertices,
                             std::vector<std::vector<int>> face_indices) {
  BlockShape s;
  s.name = std::move(name);
  s.vertices = std::move(vertices);

  if (s.vertices.size() < 4 || face_indices.size() < 4) {
    throw ValidationError("shape '" + s.name + "': needs at least 4 vertices and 4 faces");
  }
  for (const auto& f : face_indices) {
    if (f.size() < 3) throw ValidationError("shape '" + s.name + "': face with < 3 vertices");
    for (int idx : f) {
      if (idx < 0 || idx >= static_cast<int>(s.vertices.size())) {
        throw ValidationError("shape '" + s.name + "': face vertex index out of range");
      }
    }
  }

  // Any interior point works for orienting faces; the vertex average is
  // interior for a convex hull.
  Vec3 interior = Vec3::Zero();
  for (const auto& v : s.vertices) interior += v;
  interior /= static_cast<double>(s.vertices.size());

  for (auto f : face_indices) {
    Vec3 n = detail::newell_normal(s.vertices, f);
    if (n.norm() < 1e-14) throw ValidationError("shape '" + s.name + "': degenerate face");
    Vec3 fc = Vec3::Zero();
    for (int idx : f) fc += s.vertices[idx];
    fc /= static_cast<double>(f.size());
    if (n.dot(fc - interior) < 0.0) {
      std::reverse(f.begin(), f.end());
      n = -n;
    }
    Face face;
    face.verts = std::move(f);
    face.normal = n.normalized();
    face.offset = face.normal.dot(s.vertices[face.verts[0]]);
    s.faces.push_back(std::move(face));
  }

  // Unique undirected edges.
  std::vector<std::array<int, 2>> all;
  for (const auto& f : s.faces) {
    const int k = static_cast<int>(f.verts.size());
    for (int i = 0; i < k; ++i) {
      int a = f.verts[i], b = f.verts[(i + 1) % k];
      all.push_back({std::min(a, b), std::max(a, b)});
    }
  }
  std::sort(all.begin(), all.end());
  for (std::size_t i = 0; i < all.size();) {
    std::size_t j = i;
    while (j < all.size() && all[j] == all[i]) ++j;
    if (j - i != 2) {
      throw ValidationError("shape '" + s.name + "': edge not shared by exactly two faces");
    }
    s.edges.push_back(all[i]);
    i = j;
  }

  // Triangulation, areas, sampling CDF.
  for (int fi = 0; fi < static_cast<int>(s.faces.size()); ++fi) {
    const auto& fv = s.faces[fi].verts;
    for (std::size_t i = 1; i + 1 < fv.size(); ++i) {
      BlockShape::Tri t;
      t.a = fv[0];
      t.b = fv[i];
      t.c = fv[i + 1];
      t.face = fi;
      t.area = 0.5 * (s.vertices[t.b] - s.vertices[t.a])
                         .cross(s.vertices[t.c] - s.vertices[t.a])
                         .norm();
      s.surface_area += t.area;
      s.tris.push_back(t);
      s.tri_cdf.push_back(s.surface_area);
    }
  }

  // Mass properties by fanning signed tetrahedra from the origin:
  //   V_tet = det(a,b,c)/6,  int_tet x dV = V_tet (a+b+c)/4,
  //   int_tet x x^T dV = (V_tet/20) (sum_i v_i v_i^T + S S^T), S = a+b+c.
  Vec3 first_moment = Vec3::Zero();
  Mat3 second_moment = Mat3::Zero();
  for (const auto& t : s.tris) {
    const Vec3& a = s.vertices[t.a];
    const Vec3& b = s.vertices[t.b];
    const Vec3& c = s.vertices[t.c];
    double v6 = a.dot(b.cross(c));
    double vol = v6 / 6.0;
    s.volume += vol;
    first_moment += vol * (a + b + c) / 4.0;
    Vec3 sum = a + b + c;
    Mat3 m = a * a.transpose() + b * b.transpose() + c * c.transpose() + sum * sum.transpose();
    second_moment += (vol / 20.0) * m;
  }
  if (s.volume <= 0.0) throw ValidationError("shape '" + s.name + "': non-positive volume");
  s.centroid = first_moment / s.volume;
  // Shift second moment to the centroid, then inertia = tr(C) I - C.
  Mat3 c2 = second_moment - s.volume * (s.centroid * s.centroid.transpose());
  s.unit_inertia = c2.trace() * Mat3::Identity() - c2;

  double d2 = 0.0;
  for (std::size_t i = 0; i < s.vertices.size(); ++i) {
    for (std::size_t j = i + 1; j < s.vertices.size(); ++j) {
      d2 = std::max(d2, (s.vertices[i] - s.vertices[j]).squaredNorm());
    }
  }
  s.diameter = std::sqrt(d2);
  return s;
}

inline double diameter(const BlockShape& s) { return s.diameter; }

// ---------------------------------------------------------------------------
// Exact convex SDF
// ---------------------------------------------------------------------------

struct SdfDetail {
  enum class Feature { Inside, FaceInterior, EdgeInterior, Vertex };
  double value = 0.0;
  Vec3 closest = Vec3::Zero();
  Feature feature = Feature::Inside;
};

namespace detail {

inline bool projection_in_face(const BlockShape& s, const Face& f, const Vec3& q,
                               double tol = 1e-12) {
  const int k = static_cast<int>(f.verts.size());
  for (int i = 0; i < k; ++i) {
    const Vec3& a = s.vertices[f.verts[i]];
    const Vec3& b = s.vertices[f.verts[(i + 1) % k]];
    if ((b - a).cross(q - a).dot(f.normal) < -tol) return false;
  }
  return true;
}

}  // namespace detail

/// Exact signed Euclidean distance: negative inside, positive outside.
/// Inside: max over face-plane signed distances. Outside: closest point on
/// the hull via face / edge / vertex projection.
inline SdfDetail sdf_detail(const BlockShape& s, const Vec3& p) {
  SdfDetail out;

  double max_plane = -std::numeric_limits<double>::infinity();
  int max_face = 0;
  for (int i = 0; i < static_cast<int>(s.faces.size()); ++i) {
    double d = s.faces[i].normal.dot(p) - s.faces[i].offset;
    if (d > max_plane) {
      max_plane = d;
      max_face = i;
    }
  }
  if (max_plane <= 0.0) {
    // Interior: the foot on the nearest face plane lies within that face for
    // a convex solid.
    out.value = max_plane;
    out.closest = p - max_plane * s.faces[max_face].normal;
    out.feature = SdfDetail::Feature::Inside;
    return out;
  }

  double best = std::numeric_limits<double>::infinity();
  for (const auto& f : s.faces) {
    double d = f.normal.dot(p) - f.offset;
    if (d <= 0.0) continue;
    Vec3 q = p - d * f.normal;
    if (detail::projection_in_face(s, f, q)) {
      if (d < best) {
        best = d;
        out.closest = q;
        out.feature = SdfDetail::Feature::FaceInterior;
      }
    }
  }
  for (const auto& e : s.edges) {
    const Vec3& a = s.vertices[e[0]];
    const Vec3& b = s.vertices[e[1]];
    Vec3 ab = b - a;
    double t = (p - a).dot(ab) / ab.squaredNorm();
    if (t <= 0.0 || t >= 1.0) continue;  // endpoints handled as vertices
    Vec3 q = a + t * ab;
    double d = (p - q).norm();
    if (d < best) {
      best = d;
      out.closest = q;
      out.feature = SdfDetail::Feature::EdgeInterior;
    }
  }
  for (const auto& v : s.vertices) {
    double d = (p - v).norm();
    if (d < best) {
      best = d;
      out.closest = v;
      out.feature = SdfDetail::Feature::Vertex;
    }
  }
  out.value = best;
  return out;
}

inline double sdf(const BlockShape& s, const Vec3& p) { return sdf_detail(s, p).value; }

// ---------------------------------------------------------------------------
// Surface sampling
// ---------------------------------------------------------------------------

/// n points drawn area-weighted uniformly over the surface; deterministic
/// given the rng state. n = 0 returns an empty matrix.
inline PointMatrix sample_surface(const BlockShape& s, int n, Rng& rng) {
  PointMatrix pts(std::max(n, 0), 3);
  for (int i = 0; i < n; ++i) {
    double u = rng.uniform() * s.surface_area;
    auto it = std::lower_bound(s.tri_cdf.begin(), s.tri_cdf.end(), u);
    std::size_t ti = std::min<std::size_t>(it - s.tri_cdf.begin(), s.tris.size() - 1);
    const auto& t = s.tris[ti];
    double r1 = std::sqrt(rng.uniform());
    double r2 = rng.uniform();
    Vec3 q = (1.0 - r1) * s.vertices[t.a] + r1 * (1.0 - r2) * s.vertices[t.b] +
             r1 * r2 * s.vertices[t.c];
    pts.row(i) = q;
  }
  return pts;
}

}  // namespace stablepose
