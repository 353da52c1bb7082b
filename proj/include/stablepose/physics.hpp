#pragma once

// Deterministic rigid-body settling simulator: fixed-timestep velocity-level
// sequential impulses with Coulomb friction, SAT contact generation between
// convex blocks, speculative contact margins, and Baumgarte positional
// recovery. Single-threaded per simulation; bitwise deterministic given
// (scene, config).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "stablepose/catalog.hpp"
#include "stablepose/errors.hpp"
#include "stablepose/rng.hpp"
#include "stablepose/scene.hpp"
#include "stablepose/se3.hpp"
#include "stablepose/shape.hpp"

namespace stablepose {

struct SimConfig {
  double timestep = 1.0 / 240.0;
  double gravity = 9.81;
  double friction_coeff = 0.6;
  double restitution = 0.0;
  int solver_iterations = 20;
  double rest_linear_speed = 1e-3;
  double rest_angular_speed = 1e-2;
  int rest_window = 60;
  int max_steps = 4800;
  double baumgarte = 0.2;
  double slop = 5e-4;               // penetration tolerated without push-out
  double deep_penetration = 5e-3;   // initial-state rejection threshold
  double density = 1000.0;
  double epsilon_energy = 0.02;     // per-step stabilization budget, joules
  bool record_energy = false;
};

struct SettleResult {
  std::vector<Pose> settled_poses;
  int steps_used = 0;
  bool converged = false;
  std::vector<double> energy;  // per step, if record_energy
};

struct DisplacementReport {
  std::vector<std::pair<double, double>> per_object;  // (trans_pct, rot_deg)
  double scene_max_trans_pct = 0.0;
  double scene_max_rot_deg = 0.0;
};

inline DisplacementReport displacement_metrics(const std::vector<Pose>& initial,
                                               const std::vector<Pose>& settled,
                                               const std::vector<double>& diameters) {
  if (initial.size() != settled.size() || initial.size() != diameters.size())
    throw ValidationError("displacement_metrics: length mismatch");
  DisplacementReport rep;
  for (std::size_t i = 0; i < initial.size(); ++i) {
    double trans = 100.0 * (settled[i].translation - initial[i].translation).norm() / diameters[i];
    double rot = degrees(relative_rotation_angle(initial[i].rotation, settled[i].rotation));
    rep.per_object.emplace_back(trans, rot);
    rep.scene_max_trans_pct = std::max(rep.scene_max_trans_pct, trans);
    rep.scene_max_rot_deg = std::max(rep.scene_max_rot_deg, rot);
  }
  return rep;
}

struct StackThresholds {
  double trans_pct = 25.0;
  double rot_deg = 15.0;
};

inline bool stack_success(const DisplacementReport& rep, StackThresholds th = {}) {
  return rep.scene_max_trans_pct < th.trans_pct && rep.scene_max_rot_deg < th.rot_deg;
}

// --- simulator internals -----------------------------------------------------

namespace sim {

struct Body {
  const BlockShape* shape;
  Pose pose;
  Vec3 v = Vec3::Zero();
  Vec3 w = Vec3::Zero();
  double inv_mass = 0.0;
  double mass = 0.0;
  Mat3 inv_inertia_body = Mat3::Zero();
  Mat3 inv_inertia_world = Mat3::Zero();
  double radius = 0.0;
  std::vector<Vec3> world_verts;

  void refresh() {
    inv_inertia_world = pose.rotation * inv_inertia_body * pose.rotation.transpose();
    world_verts.resize(shape->vertices.size());
    for (std::size_t i = 0; i < shape->vertices.size(); ++i)
      world_verts[i] = pose.apply(shape->vertices[i]);
  }
};

struct Contact {
  int a = 0;          // pushed along +normal
  int b = -1;         // pushed along -normal; -1 = ground
  Vec3 point = Vec3::Zero();
  Vec3 normal = Vec3::UnitZ();
  double depth = 0.0;  // positive = penetrating, negative = speculative gap
  Vec3 t1 = Vec3::Zero(), t2 = Vec3::Zero();
  double jn = 0.0, jt1 = 0.0, jt2 = 0.0;
};

inline void tangent_basis(const Vec3& n, Vec3& t1, Vec3& t2) {
  Vec3 ref = std::abs(n.x()) < 0.9 ? Vec3::UnitX() : Vec3::UnitY();
  t1 = n.cross(ref).normalized();
  t2 = n.cross(t1);
}

// Signed separation of body `other` from `plane` (world normal n, offset o):
// min over other's vertices of n·v - o.
inline double face_separation(const Vec3& n, double o, const Body& other) {
  double best = std::numeric_limits<double>::infinity();
  for (const auto& v : other.world_verts) best = std::min(best, n.dot(v) - o);
  return best;
}

struct SatResult {
  double separation = -std::numeric_limits<double>::infinity();
  int kind = 0;      // 0 = face of A, 1 = face of B, 2 = edge-edge
  int face = -1;     // for kind 0/1
  int edge_a = -1, edge_b = -1;
  Vec3 axis = Vec3::Zero();  // for kind 2, oriented A -> B
};

// Max separation over face normals of A/B and edge-cross axes. For
// overlapping convex polytopes the best axis realizes the minimum
// translation depth; faces win ties so manifolds stay multi-point.
inline SatResult sat_query(const Body& A, const Body& B) {
  SatResult best_face;
  best_face.separation = -std::numeric_limits<double>::infinity();
  for (std::size_t f = 0; f < A.shape->faces.size(); ++f) {
    Vec3 n = A.pose.rotation * A.shape->faces[f].normal;
    double o = A.shape->faces[f].offset + n.dot(A.pose.translation);
    double s = face_separation(n, o, B);
    if (s > best_face.separation) {
      best_face = {s, 0, static_cast<int>(f), -1, -1, n};
    }
  }
  for (std::size_t f = 0; f < B.shape->faces.size(); ++f) {
    Vec3 n = B.pose.rotation * B.shape->faces[f].normal;
    double o = B.shape->faces[f].offset + n.dot(B.pose.translation);
    double s = face_separation(n, o, A);
    if (s > best_face.separation) {
      best_face = {s, 1, static_cast<int>(f), -1, -1, n};
    }
  }

  SatResult best_edge;
  best_edge.separation = -std::numeric_limits<double>::infinity();
  Vec3 dc = B.pose.translation - A.pose.translation;
  for (std::size_t ea = 0; ea < A.shape->edges.size(); ++ea) {
    Vec3 da = A.world_verts[static_cast<std::size_t>(A.shape->edges[ea][1])] -
              A.world_verts[static_cast<std::size_t>(A.shape->edges[ea][0])];
    for (std::size_t eb = 0; eb < B.shape->edges.size(); ++eb) {
      Vec3 db = B.world_verts[static_cast<std::size_t>(B.shape->edges[eb][1])] -
                B.world_verts[static_cast<std::size_t>(B.shape->edges[eb][0])];
      Vec3 axis = da.cross(db);
      double norm = axis.norm();
      if (norm < 1e-10) continue;
      axis /= norm;
      if (axis.dot(dc) < 0) axis = -axis;  // orient A -> B
      double s = face_separation(axis, [&] {
        double m = -std::numeric_limits<double>::infinity();
        for (const auto& v : A.world_verts) m = std::max(m, axis.dot(v));
        return m;
      }(), B);
      if (s > best_edge.separation) {
        best_edge = {s, 2, -1, static_cast<int>(ea), static_cast<int>(eb), axis};
      }
    }
  }

  // Prefer face manifolds unless the edge axis is clearly better.
  if (best_edge.separation > best_face.separation + 1e-6) return best_edge;
  return best_face;
}

inline std::vector<Vec3> clip_polygon_halfspace(const std::vector<Vec3>& poly, const Vec3& n,
                                                double o) {
  // Keep n·p <= o.
  std::vector<Vec3> out;
  std::size_t m = poly.size();
  for (std::size_t i = 0; i < m; ++i) {
    const Vec3& p = poly[i];
    const Vec3& q = poly[(i + 1) % m];
    double dp = n.dot(p) - o, dq = n.dot(q) - o;
    if (dp <= 0) out.push_back(p);
    if ((dp < 0 && dq > 0) || (dp > 0 && dq < 0)) {
      double t = dp / (dp - dq);
      out.push_back(p + t * (q - p));
    }
  }
  return out;
}

inline void closest_points_on_segments(const Vec3& p1, const Vec3& q1, const Vec3& p2,
                                       const Vec3& q2, Vec3& c1, Vec3& c2) {
  Vec3 d1 = q1 - p1, d2 = q2 - p2, r = p1 - p2;
  double a = d1.squaredNorm(), e = d2.squaredNorm(), f = d2.dot(r);
  double c = d1.dot(r), b = d1.dot(d2);
  double denom = a * e - b * b;
  double s = denom > 1e-14 ? std::clamp((b * f - c * e) / denom, 0.0, 1.0) : 0.0;
  double t = e > 1e-14 ? std::clamp((b * s + f) / e, 0.0, 1.0) : 0.0;
  s = a > 1e-14 ? std::clamp((b * t - c) / a, 0.0, 1.0) : 0.0;
  c1 = p1 + s * d1;
  c2 = p2 + t * d2;
}

// Contacts between a body pair within `margin` of touching. A is the
// reference for kind-0 manifolds; contact normal always pushes `a` apart
// from `b`, so the incident body takes the `a` slot.
inline void pair_contacts(int ia, int ib, const Body& A, const Body& B, double margin,
                          std::vector<Contact>& out) {
  SatResult sat = sat_query(A, B);
  if (sat.separation > margin) return;

  if (sat.kind == 2) {
    const auto& ea = A.shape->edges[static_cast<std::size_t>(sat.edge_a)];
    const auto& eb = B.shape->edges[static_cast<std::size_t>(sat.edge_b)];
    Vec3 c1, c2;
    closest_points_on_segments(A.world_verts[static_cast<std::size_t>(ea[0])],
                               A.world_verts[static_cast<std::size_t>(ea[1])],
                               B.world_verts[static_cast<std::size_t>(eb[0])],
                               B.world_verts[static_cast<std::size_t>(eb[1])], c1, c2);
    Contact c;
    c.a = ib;
    c.b = ia;
    c.normal = sat.axis;
    c.point = 0.5 * (c1 + c2);
    c.depth = -sat.separation;
    tangent_basis(c.normal, c.t1, c.t2);
    out.push_back(c);
    return;
  }

  const Body& ref = sat.kind == 0 ? A : B;
  const Body& inc = sat.kind == 0 ? B : A;
  int ref_idx = sat.kind == 0 ? ia : ib;
  int inc_idx = sat.kind == 0 ? ib : ia;

  const Face& rf = ref.shape->faces[static_cast<std::size_t>(sat.face)];
  Vec3 n = ref.pose.rotation * rf.normal;
  double o = rf.offset + n.dot(ref.pose.translation);

  // Incident face: most anti-parallel to the reference normal.
  int inc_face = 0;
  double best_dot = std::numeric_limits<double>::infinity();
  for (std::size_t f = 0; f < inc.shape->faces.size(); ++f) {
    double d = n.dot(inc.pose.rotation * inc.shape->faces[f].normal);
    if (d < best_dot) {
      best_dot = d;
      inc_face = static_cast<int>(f);
    }
  }

  std::vector<Vec3> poly;
  for (int vi : inc.shape->faces[static_cast<std::size_t>(inc_face)].verts)
    poly.push_back(inc.world_verts[static_cast<std::size_t>(vi)]);

  // Clip by the reference face's side planes.
  const auto& rverts = rf.verts;
  for (std::size_t i = 0; i < rverts.size() && !poly.empty(); ++i) {
    Vec3 p = ref.world_verts[static_cast<std::size_t>(rverts[i])];
    Vec3 q = ref.world_verts[static_cast<std::size_t>(rverts[(i + 1) % rverts.size()])];
    Vec3 side = (q - p).cross(n);  // outward side normal for CCW-from-outside faces
    double norm = side.norm();
    if (norm < 1e-12) continue;
    side /= norm;
    poly = clip_polygon_halfspace(poly, side, side.dot(p));
  }

  for (const auto& p : poly) {
    double sep = n.dot(p) - o;
    if (sep > margin) continue;
    Contact c;
    c.a = inc_idx;
    c.b = ref_idx;
    c.normal = n;
    c.point = p;
    c.depth = -sep;
    tangent_basis(c.normal, c.t1, c.t2);
    out.push_back(c);
  }
}

inline void ground_contacts(int ib, const Body& body, double margin, std::vector<Contact>& out) {
  for (const auto& v : body.world_verts) {
    if (v.z() > margin) continue;
    Contact c;
    c.a = ib;
    c.b = -1;
    c.normal = Vec3::UnitZ();
    c.point = v;
    c.depth = -v.z();
    tangent_basis(c.normal, c.t1, c.t2);
    out.push_back(c);
  }
}

inline double effective_mass(const std::vector<Body>& bodies, const Contact& c, const Vec3& d) {
  const Body& A = bodies[static_cast<std::size_t>(c.a)];
  Vec3 ra = c.point - A.pose.translation;
  double k = A.inv_mass + (ra.cross(d)).dot(A.inv_inertia_world * ra.cross(d));
  if (c.b >= 0) {
    const Body& B = bodies[static_cast<std::size_t>(c.b)];
    Vec3 rb = c.point - B.pose.translation;
    k += B.inv_mass + (rb.cross(d)).dot(B.inv_inertia_world * rb.cross(d));
  }
  return k;
}

inline Vec3 relative_velocity(const std::vector<Body>& bodies, const Contact& c) {
  const Body& A = bodies[static_cast<std::size_t>(c.a)];
  Vec3 v = A.v + A.w.cross(c.point - A.pose.translation);
  if (c.b >= 0) {
    const Body& B = bodies[static_cast<std::size_t>(c.b)];
    v -= B.v + B.w.cross(c.point - B.pose.translation);
  }
  return v;
}

inline void apply_impulse(std::vector<Body>& bodies, const Contact& c, const Vec3& impulse) {
  Body& A = bodies[static_cast<std::size_t>(c.a)];
  A.v += impulse * A.inv_mass;
  A.w += A.inv_inertia_world * (c.point - A.pose.translation).cross(impulse);
  if (c.b >= 0) {
    Body& B = bodies[static_cast<std::size_t>(c.b)];
    B.v -= impulse * B.inv_mass;
    B.w -= B.inv_inertia_world * (c.point - B.pose.translation).cross(impulse);
  }
}

}  // namespace sim

// Deep-penetration pre-check; throws naming the offending pair.
inline void check_initial_penetration(const std::vector<sim::Body>& bodies,
                                      const SimConfig& cfg) {
  for (std::size_t i = 0; i < bodies.size(); ++i) {
    double low = 0.0;
    for (const auto& v : bodies[i].world_verts) low = std::min(low, v.z());
    if (-low > cfg.deep_penetration)
      throw SimFault("initial interpenetration: body " + std::to_string(i) +
                     " and ground, depth " + std::to_string(-low));
    for (std::size_t j = i + 1; j < bodies.size(); ++j) {
      sim::SatResult sat = sim::sat_query(bodies[i], bodies[j]);
      if (-sat.separation > cfg.deep_penetration)
        throw SimFault("initial interpenetration: bodies " + std::to_string(i) + " and " +
                       std::to_string(j) + ", depth " + std::to_string(-sat.separation));
    }
  }
}

inline SettleResult settle(const ShapeCatalog& catalog, const Scene& scene,
                           const SimConfig& cfg) {
  validate_scene(catalog, scene);
  std::vector<sim::Body> bodies;
  for (const auto& obj : scene.objects) {
    sim::Body b;
    b.shape = &catalog.get(obj.shape);
    b.pose = obj.pose;
    b.mass = cfg.density * b.shape->volume;
    b.inv_mass = 1.0 / b.mass;
    b.inv_inertia_body = (cfg.density * b.shape->unit_inertia).inverse();
    b.radius = 0.5 * b.shape->diameter;
    b.refresh();
    bodies.push_back(std::move(b));
  }
  check_initial_penetration(bodies, cfg);

  const double dt = cfg.timestep;
  std::vector<sim::Contact> prev;
  SettleResult result;
  int rest_count = 0;

  auto total_energy = [&]() {
    double e = 0.0;
    for (const auto& b : bodies) {
      Mat3 inertia_world = b.inv_inertia_world.inverse();
      e += 0.5 * b.mass * b.v.squaredNorm() + 0.5 * b.w.dot(inertia_world * b.w) +
           b.mass * cfg.gravity * b.pose.translation.z();
    }
    return e;
  };

  int step = 0;
  for (; step < cfg.max_steps; ++step) {
    for (auto& b : bodies) b.v.z() -= cfg.gravity * dt;

    // Contact generation with speculative margins sized to one step of travel.
    std::vector<sim::Contact> contacts;
    for (std::size_t i = 0; i < bodies.size(); ++i) {
      double mi = cfg.slop + dt * (bodies[i].v.norm() + bodies[i].w.norm() * bodies[i].radius);
      sim::ground_contacts(static_cast<int>(i), bodies[i], mi, contacts);
      for (std::size_t j = i + 1; j < bodies.size(); ++j) {
        double mj =
            cfg.slop + dt * (bodies[j].v.norm() + bodies[j].w.norm() * bodies[j].radius);
        sim::pair_contacts(static_cast<int>(i), static_cast<int>(j), bodies[i], bodies[j],
                           mi + mj, contacts);
      }
    }

    // Warm start by positional matching against last step's manifold.
    std::vector<bool> used(prev.size(), false);
    for (auto& c : contacts) {
      int best = -1;
      double best_d2 = 1e-6;  // (1 mm)^2
      for (std::size_t k = 0; k < prev.size(); ++k) {
        if (used[k] || prev[k].a != c.a || prev[k].b != c.b) continue;
        double d2 = (prev[k].point - c.point).squaredNorm();
        if (d2 < best_d2) {
          best_d2 = d2;
          best = static_cast<int>(k);
        }
      }
      if (best >= 0) {
        used[static_cast<std::size_t>(best)] = true;
        c.jn = prev[static_cast<std::size_t>(best)].jn;
        c.jt1 = prev[static_cast<std::size_t>(best)].jt1;
        c.jt2 = prev[static_cast<std::size_t>(best)].jt2;
        sim::apply_impulse(bodies, c, c.jn * c.normal + c.jt1 * c.t1 + c.jt2 * c.t2);
      }
    }

    for (int it = 0; it < cfg.solver_iterations; ++it) {
      for (auto& c : contacts) {
        double kn = sim::effective_mass(bodies, c, c.normal);
        if (kn > 1e-12) {
          double vn = c.normal.dot(sim::relative_velocity(bodies, c));
          double target = c.depth > cfg.slop
                              ? cfg.baumgarte / dt * (c.depth - cfg.slop)
                              : (c.depth >= 0.0 ? 0.0 : c.depth / dt);
          double delta = (target - vn) / kn;
          double jn_new = std::max(c.jn + delta, 0.0);
          sim::apply_impulse(bodies, c, (jn_new - c.jn) * c.normal);
          c.jn = jn_new;
        }
        double limit = cfg.friction_coeff * c.jn;
        for (int axis = 0; axis < 2; ++axis) {
          const Vec3& t = axis == 0 ? c.t1 : c.t2;
          double& jt = axis == 0 ? c.jt1 : c.jt2;
          double kt = sim::effective_mass(bodies, c, t);
          if (kt < 1e-12) continue;
          double vt = t.dot(sim::relative_velocity(bodies, c));
          double jt_new = std::clamp(jt - vt / kt, -limit, limit);
          sim::apply_impulse(bodies, c, (jt_new - jt) * t);
          jt = jt_new;
        }
      }
    }

    for (auto& b : bodies) {
      b.pose.translation += b.v * dt;
      b.pose.rotation = expmap(b.w * dt) * b.pose.rotation;
      Eigen::Quaterniond q(b.pose.rotation);
      b.pose.rotation = q.normalized().toRotationMatrix();
      b.refresh();
      if (!b.pose.translation.allFinite() || !b.v.allFinite() || !b.w.allFinite())
        throw SimFault("non-finite simulation state at step " + std::to_string(step));
    }

    if (cfg.record_energy) result.energy.push_back(total_energy());

    bool resting = true;
    for (const auto& b : bodies)
      if (b.v.norm() >= cfg.rest_linear_speed || b.w.norm() >= cfg.rest_angular_speed)
        resting = false;
    rest_count = resting ? rest_count + 1 : 0;
    prev = std::move(contacts);
    if (rest_count >= cfg.rest_window) {
      ++step;
      result.converged = true;
      break;
    }
  }

  result.steps_used = step;
  for (const auto& b : bodies) result.settled_poses.push_back(b.pose);
  return result;
}

// --- scene generation --------------------------------------------------------

struct GenOptions {
  double xy_sigma = 0.04;        // drop bias toward the structure centroid
  double drop_gap_min = 0.02;    // above current max height
  double drop_gap_max = 0.10;
  int drop_retries = 20;
  int scene_retries = 4;
  double workspace_half = kGroundPatchHalf;
  bool stack_bias = false;       // aim at the top block instead of the centroid
  double stack_sigma = 0.01;
  bool require_block_contact = false;  // later drops must touch a prior block
  std::vector<std::string> shapes;     // restrict the draw; empty = full catalog
};

inline double scene_max_height(const ShapeCatalog& catalog, const Scene& scene) {
  double top = 0.0;
  for (const auto& obj : scene.objects) {
    const BlockShape& s = catalog.get(obj.shape);
    for (const auto& v : s.vertices) top = std::max(top, obj.pose.apply(v).z());
  }
  return top;
}

inline Scene generate_stable_scene(int n_blocks, const ShapeCatalog& catalog, Rng& rng,
                                   const SimConfig& cfg, const GenOptions& opt = {}) {
  if (n_blocks < 1) throw ValidationError("n_blocks must be >= 1");
  std::vector<std::string> names = opt.shapes.empty() ? canonical_shape_names() : opt.shapes;
  for (const auto& n : names) catalog.get(n);  // unknown name -> ValidationError now

  for (int scene_try = 0; scene_try < opt.scene_retries; ++scene_try) {
    Scene scene;
    bool failed = false;
    for (int b = 0; b < n_blocks && !failed; ++b) {
      std::string shape = names[static_cast<std::size_t>(
          rng.uniform_int(0, static_cast<int>(names.size()) - 1))];
      bool placed = false;
      for (int attempt = 0; attempt < opt.drop_retries; ++attempt) {
        double cx = 0.0, cy = 0.0, sigma = opt.xy_sigma;
        if (opt.stack_bias && !scene.objects.empty()) {
          // Aim at the block whose top is highest.
          double top = -1.0;
          for (const auto& obj : scene.objects) {
            const BlockShape& s = catalog.get(obj.shape);
            double t = 0.0;
            for (const auto& v : s.vertices) t = std::max(t, obj.pose.apply(v).z());
            if (t > top) {
              top = t;
              cx = obj.pose.translation.x();
              cy = obj.pose.translation.y();
            }
          }
          sigma = opt.stack_sigma;
        } else if (!scene.objects.empty()) {
          for (const auto& obj : scene.objects) {
            cx += obj.pose.translation.x();
            cy += obj.pose.translation.y();
          }
          cx /= scene.size();
          cy /= scene.size();
        }

        SceneObject obj;
        obj.shape = shape;
        obj.pose.rotation = random_rotation(rng);
        // Gap applies to the block's lowest point, so the drop starts fully
        // above the structure; otherwise penetration rejections would cull
        // exactly the overlapping (x,y) draws that create interaction.
        double min_z = std::numeric_limits<double>::infinity();
        for (const auto& v : catalog.get(shape).vertices)
          min_z = std::min(min_z, (obj.pose.rotation * v).z());
        obj.pose.translation =
            Vec3(rng.normal(cx, sigma), rng.normal(cy, sigma),
                 scene_max_height(catalog, scene) +
                     rng.uniform(opt.drop_gap_min, opt.drop_gap_max) - min_z);
        obj.sample_seed = rng.next_u64() | 1;

        Scene candidate = scene;
        candidate.objects.push_back(obj);
        candidate.query_index = candidate.size() - 1;

        SettleResult result;
        try {
          result = settle(catalog, candidate, cfg);
        } catch (const SimFault&) {
          continue;  // drop pose interpenetrated; redraw
        }
        if (!result.converged) continue;

        bool in_bounds = true;
        for (std::size_t k = 0; k < candidate.objects.size(); ++k) {
          candidate.objects[k].pose = result.settled_poses[k];
          if (std::abs(result.settled_poses[k].translation.x()) > opt.workspace_half ||
              std::abs(result.settled_poses[k].translation.y()) > opt.workspace_half)
            in_bounds = false;
        }
        if (!in_bounds) continue;

        if (opt.require_block_contact && b > 0) {
          Rng crng = Rng::stream(obj.sample_seed, 77);
          if (interblock_min_sdf(catalog, candidate, 128, crng, candidate.size() - 1) > 1e-3)
            continue;
        }

        scene = candidate;
        placed = true;
        break;
      }
      if (!placed) failed = true;
    }
    if (failed) continue;

    // Fixed-point verification: re-settling moves nothing beyond 2% / 2 deg.
    SettleResult recheck;
    try {
      recheck = settle(catalog, scene, cfg);
    } catch (const SimFault&) {
      continue;
    }
    if (!recheck.converged) continue;
    std::vector<Pose> before;
    std::vector<double> diameters;
    for (const auto& obj : scene.objects) {
      before.push_back(obj.pose);
      diameters.push_back(catalog.get(obj.shape).diameter);
    }
    DisplacementReport rep = displacement_metrics(before, recheck.settled_poses, diameters);
    if (rep.scene_max_trans_pct < 2.0 && rep.scene_max_rot_deg < 2.0) {
      scene.query_index = scene.size() - 1;
      return scene;
    }
  }
  throw SimFault("scene generation failed after retries");
}

enum class BaselineMode { Placement, Stack };

inline Pose random_baseline_pose(const ShapeCatalog& catalog, const Scene& context,
                                 const std::string& query_shape, BaselineMode mode, Rng& rng) {
  (void)query_shape;
  double cx = 0.0, cy = 0.0;
  if (mode == BaselineMode::Stack && !context.objects.empty()) {
    double top = -1.0;
    for (const auto& obj : context.objects) {
      const BlockShape& s = catalog.get(obj.shape);
      double t = 0.0;
      for (const auto& v : s.vertices) t = std::max(t, obj.pose.apply(v).z());
      if (t > top) {
        top = t;
        cx = obj.pose.translation.x();
        cy = obj.pose.translation.y();
      }
    }
  } else {
    if (!context.objects.empty()) {
      for (const auto& obj : context.objects) {
        cx += obj.pose.translation.x();
        cy += obj.pose.translation.y();
      }
      cx /= context.size();
      cy /= context.size();
    }
    cx = rng.normal(cx, 0.05);
    cy = rng.normal(cy, 0.05);
  }
  double top = scene_max_height(catalog, context);
  Pose pose;
  pose.rotation = random_rotation(rng);
  pose.translation = Vec3(cx, cy, top + rng.uniform(0.0, 0.1));
  return pose;
}

}  // namespace stablepose
