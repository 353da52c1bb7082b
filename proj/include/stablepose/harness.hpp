#pragma once

// Evaluation harness: score a proposed query pose by dropping it into the
// context, settling the scene, and measuring how far everything moved.
//
// Scoring rules:
//  - All objects count (context included), and the scene score is the max.
//  - success = scene max within 25% translation / 15 deg rotation.
//  - A proposal the simulator refuses to realize (interpenetration beyond the
//    settle precondition) is a *rejected placement*: sentinel displacement
//    (1000% / 180 deg), failure, run continues. The harness never repairs a
//    proposal — scoring a nudged pose would grade an answer the method did
//    not give, and it is exactly the deeply-penetrating placements that make
//    the blind baseline as bad as it is. Shallow contact (< 5 mm) is within
//    the solver's tolerance and settles normally.
//  - A sampling fault (diverged reverse diffusion) scores the same sentinels.
//
// Reports are a fixed-width text table (one row per shape, then all/ID/OOD
// splits) plus a machine-readable JSONL file with one row per instance;
// aggregates are recomputable from the rows, and the tests insist on it.

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "stablepose/dataset.hpp"
#include "stablepose/denoiser.hpp"
#include "stablepose/physics.hpp"

namespace stablepose {

inline constexpr double kFaultTransPct = 1000.0;
inline constexpr double kFaultRotDeg = 180.0;

struct ProposalOutcome {
  Pose proposed;
  bool rejected = false;  // violated the settle precondition as proposed
  std::string reject_what;
  bool converged = false;
  DisplacementReport report;
  bool success = false;
  std::vector<Pose> settled;  // context order, query last
};

// Drops the query at `proposed` into the context and settles. A proposal the
// simulator refuses (deep interpenetration) scores the failure sentinels.
inline ProposalOutcome settle_proposal(const ShapeCatalog& catalog, const std::vector<SceneObject>& context,
                                       const std::string& query_shape, const Pose& proposed,
                                       const SimConfig& sim = {}) {
  ProposalOutcome out;
  out.proposed = proposed;

  Scene trial;
  trial.objects = context;
  SceneObject q;
  q.shape = query_shape;
  q.pose = proposed;
  q.sample_seed = 1;
  trial.objects.push_back(q);
  trial.query_index = trial.size() - 1;

  SettleResult settled;
  try {
    settled = settle(catalog, trial, sim);
  } catch (const SimFault& e) {
    out.rejected = true;
    out.reject_what = e.what();
    out.report.scene_max_trans_pct = kFaultTransPct;
    out.report.scene_max_rot_deg = kFaultRotDeg;
    return out;
  }

  out.converged = settled.converged;
  out.settled = settled.settled_poses;
  std::vector<Pose> initial;
  std::vector<double> diameters;
  for (const SceneObject& o : context) {
    initial.push_back(o.pose);
    diameters.push_back(catalog.get(o.shape).diameter);
  }
  initial.push_back(proposed);
  diameters.push_back(catalog.get(query_shape).diameter);
  out.report = displacement_metrics(initial, out.settled, diameters);
  out.success = stack_success(out.report);
  return out;
}

// --- per-instance evaluation -------------------------------------------------

struct EvalInstance {
  int scene_id = 0;
  std::string method;  // "model" | "random"
  std::string query_shape;
  bool ood = false;
  bool fault = false;     // reverse sampling diverged
  bool rejected = false;  // proposal violated the settle precondition
  bool converged = false;
  double scene_max_trans_pct = 0.0;
  double scene_max_rot_deg = 0.0;
  bool success = false;
};

struct EvalOptions {
  std::string method = "model";
  std::string mode = "placement";  // "placement" | "stack1" | "stack2"
  std::uint64_t seed = 0;
  std::string holdout_shape;  // marks matching query shapes OOD
  SimConfig sim;
};

inline BaselineMode baseline_mode_for(const std::string& eval_mode) {
  if (eval_mode == "placement") return BaselineMode::Placement;
  if (eval_mode == "stack1" || eval_mode == "stack2") return BaselineMode::Stack;
  throw ValidationError("unknown eval mode: " + eval_mode);
}

// Conditioning context = the test scene with its query object removed.
inline std::vector<SceneObject> strip_query(const Scene& scene) {
  std::vector<SceneObject> ctx;
  for (int j = 0; j < scene.size(); ++j)
    if (j != scene.query_index) ctx.push_back(scene.objects[static_cast<std::size_t>(j)]);
  return ctx;
}

inline EvalInstance evaluate_instance(const DenoiserModel* model, const ShapeCatalog& catalog,
                                      const Scene& test_scene, int scene_id, const EvalOptions& opt,
                                      Rng& rng) {
  EvalInstance inst;
  inst.scene_id = scene_id;
  inst.method = opt.method;
  inst.query_shape = test_scene.query().shape;
  inst.ood = !opt.holdout_shape.empty() && inst.query_shape == opt.holdout_shape;

  std::vector<SceneObject> context = strip_query(test_scene);
  Pose proposed;
  try {
    if (opt.method == "model") {
      if (!model) throw ValidationError("model evaluation without a model");
      proposed = sample_pose(*model, catalog, context, inst.query_shape, rng);
    } else if (opt.method == "random") {
      Scene ctx_scene;
      ctx_scene.objects = context;
      ctx_scene.query_index = context.empty() ? -1 : 0;
      proposed = random_baseline_pose(catalog, ctx_scene, inst.query_shape,
                                      baseline_mode_for(opt.mode), rng);
    } else {
      throw ValidationError("unknown eval method: " + opt.method);
    }
  } catch (const SamplingFault&) {
    inst.fault = true;
    inst.scene_max_trans_pct = kFaultTransPct;
    inst.scene_max_rot_deg = kFaultRotDeg;
    return inst;
  }

  ProposalOutcome out = settle_proposal(catalog, context, inst.query_shape, proposed, opt.sim);
  inst.rejected = out.rejected;
  inst.converged = out.converged;
  inst.scene_max_trans_pct = out.report.scene_max_trans_pct;
  inst.scene_max_rot_deg = out.report.scene_max_rot_deg;
  inst.success = out.success;
  return inst;
}

inline std::vector<EvalInstance> run_eval(const DenoiserModel* model, const ShapeCatalog& catalog,
                                          const std::vector<Scene>& testset, const EvalOptions& opt,
                                          const std::function<void(int, int)>& progress = {}) {
  std::vector<EvalInstance> out;
  for (std::size_t i = 0; i < testset.size(); ++i) {
    Rng rng = Rng::stream(opt.seed, static_cast<std::uint64_t>(i) + 1);
    out.push_back(evaluate_instance(model, catalog, testset[i], static_cast<int>(i), opt, rng));
    if (progress) progress(static_cast<int>(i) + 1, static_cast<int>(testset.size()));
  }
  return out;
}

// --- aggregation -------------------------------------------------------------

inline double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

struct EvalAggregate {
  std::string label;
  int count = 0;
  double median_trans_pct = 0.0;
  double median_rot_deg = 0.0;
  double success_rate_pct = 0.0;
};

inline EvalAggregate aggregate_over(const std::string& label, const std::vector<const EvalInstance*>& rows) {
  EvalAggregate a;
  a.label = label;
  a.count = static_cast<int>(rows.size());
  std::vector<double> trans, rot;
  int ok = 0;
  for (const EvalInstance* r : rows) {
    trans.push_back(r->scene_max_trans_pct);
    rot.push_back(r->scene_max_rot_deg);
    ok += r->success ? 1 : 0;
  }
  a.median_trans_pct = median(trans);
  a.median_rot_deg = median(rot);
  a.success_rate_pct = rows.empty() ? 0.0 : 100.0 * ok / static_cast<double>(rows.size());
  return a;
}

// Rows: one per shape (catalog order), then "all", then ID/OOD when a holdout
// is known. Mirrors the per-shape tables.
inline std::vector<EvalAggregate> compute_aggregates(const std::vector<EvalInstance>& instances,
                                                     bool with_ood_split) {
  std::vector<EvalAggregate> out;
  std::vector<std::string> shapes;
  std::map<std::string, std::vector<const EvalInstance*>> by_shape;
  std::vector<const EvalInstance*> all, id_rows, ood_rows;
  for (const EvalInstance& r : instances) {
    if (!by_shape.count(r.query_shape)) shapes.push_back(r.query_shape);
    by_shape[r.query_shape].push_back(&r);
    all.push_back(&r);
    (r.ood ? ood_rows : id_rows).push_back(&r);
  }
  std::sort(shapes.begin(), shapes.end());
  for (const std::string& s : shapes) out.push_back(aggregate_over(s, by_shape[s]));
  out.push_back(aggregate_over("all", all));
  if (with_ood_split) {
    out.push_back(aggregate_over("ID", id_rows));
    out.push_back(aggregate_over("OOD", ood_rows));
  }
  return out;
}

// --- report files ------------------------------------------------------------

inline constexpr const char* kReportFormat = "stablepose-report";
inline constexpr int kReportVersion = 1;

struct ReportHeader {
  std::string catalog_hash;
  std::string method;
  std::string mode;
  std::uint64_t seed = 0;
  std::string holdout_shape;
};

namespace detail {

inline void write_text_atomic(const std::string& path, const std::string& body) {
  std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw ValidationError("cannot open report file for writing: " + tmp);
    out << body;
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0)
    throw ValidationError("cannot move report into place: " + path);
}

}  // namespace detail

inline std::string render_table(const ReportHeader& hdr, const std::vector<EvalInstance>& instances,
                                const std::vector<EvalAggregate>& aggs) {
  char line[160];
  std::string body;
  std::snprintf(line, sizeof(line), "# stablepose eval  method=%s  mode=%s  scenes=%zu  seed=%llu  catalog=%s  holdout=%s\n",
                hdr.method.c_str(), hdr.mode.c_str(), instances.size(),
                static_cast<unsigned long long>(hdr.seed), hdr.catalog_hash.c_str(),
                hdr.holdout_shape.empty() ? "-" : hdr.holdout_shape.c_str());
  body += line;
  std::snprintf(line, sizeof(line), "%-16s %6s %14s %12s %10s\n", "split", "n", "med-trans-%", "med-rot-deg", "success-%");
  body += line;
  for (const EvalAggregate& a : aggs) {
    std::snprintf(line, sizeof(line), "%-16s %6d %14.2f %12.2f %10.1f\n", a.label.c_str(), a.count,
                  a.median_trans_pct, a.median_rot_deg, a.success_rate_pct);
    body += line;
  }
  return body;
}

inline std::string instance_line(const EvalInstance& r) {
  std::string out = "{\"scene_id\":" + std::to_string(r.scene_id);
  out += ",\"method\":" + nlohmann::json(r.method).dump();
  out += ",\"query_shape\":" + nlohmann::json(r.query_shape).dump();
  out += ",\"ood\":" + std::string(r.ood ? "true" : "false");
  out += ",\"fault\":" + std::string(r.fault ? "true" : "false");
  out += ",\"rejected\":" + std::string(r.rejected ? "true" : "false");
  out += ",\"converged\":" + std::string(r.converged ? "true" : "false");
  out += ",\"scene_max_trans_pct\":" + detail::format_double(r.scene_max_trans_pct);
  out += ",\"scene_max_rot_deg\":" + detail::format_double(r.scene_max_rot_deg);
  out += ",\"success\":" + std::string(r.success ? "true" : "false") + "}";
  return out;
}

// Writes the table to `path` and the per-instance rows to `path`.jsonl.
inline void write_report(const std::string& path, const ReportHeader& hdr,
                         const std::vector<EvalInstance>& instances,
                         const std::vector<EvalAggregate>& aggs) {
  detail::write_text_atomic(path, render_table(hdr, instances, aggs));
  std::string rows = "{\"format\":\"" + std::string(kReportFormat) +
                     "\",\"version\":" + std::to_string(kReportVersion) +
                     ",\"catalog_hash\":" + nlohmann::json(hdr.catalog_hash).dump() +
                     ",\"method\":" + nlohmann::json(hdr.method).dump() +
                     ",\"mode\":" + nlohmann::json(hdr.mode).dump() +
                     ",\"seed\":" + std::to_string(hdr.seed) +
                     ",\"holdout\":" + nlohmann::json(hdr.holdout_shape).dump() + "}\n";
  for (const EvalInstance& r : instances) rows += instance_line(r) + "\n";
  detail::write_text_atomic(path + ".jsonl", rows);
}

struct LoadedReport {
  ReportHeader header;
  std::vector<EvalInstance> instances;
};

inline LoadedReport load_report_rows(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open report rows: " + path);
  std::string line;
  if (!std::getline(in, line)) throw ValidationError("empty report file: " + path);
  nlohmann::json hdr = nlohmann::json::parse(line, nullptr, false);
  if (hdr.is_discarded() || hdr.value("format", "") != kReportFormat)
    throw ValidationError("not a stablepose report: " + path);
  if (hdr.value("version", -1) != kReportVersion)
    throw ValidationError("unsupported report version in " + path);
  LoadedReport rep;
  rep.header.catalog_hash = hdr.value("catalog_hash", "");
  rep.header.method = hdr.value("method", "");
  rep.header.mode = hdr.value("mode", "");
  rep.header.seed = hdr.value("seed", std::uint64_t{0});
  rep.header.holdout_shape = hdr.value("holdout", "");
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded()) throw ValidationError("malformed report row in " + path);
    EvalInstance r;
    r.scene_id = j.value("scene_id", 0);
    r.method = j.value("method", "");
    r.query_shape = j.value("query_shape", "");
    r.ood = j.value("ood", false);
    r.fault = j.value("fault", false);
    r.rejected = j.value("rejected", false);
    r.converged = j.value("converged", false);
    r.scene_max_trans_pct = j.value("scene_max_trans_pct", 0.0);
    r.scene_max_rot_deg = j.value("scene_max_rot_deg", 0.0);
    r.success = j.value("success", false);
    rep.instances.push_back(r);
  }
  return rep;
}

// --- orientation diversity ---------------------------------------------------

// Single-linkage clustering on relative rotation angle: two samples join the
// same cluster if any chain of links under `link_deg` connects them.
inline int rotation_cluster_count(const std::vector<Pose>& poses, double link_deg) {
  std::size_t n = poses.size();
  std::vector<std::size_t> parent(n);
  std::iota(parent.begin(), parent.end(), std::size_t{0});
  std::function<std::size_t(std::size_t)> find = [&](std::size_t a) {
    while (parent[a] != a) a = parent[a] = parent[parent[a]];
    return a;
  };
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      if (degrees(relative_rotation_angle(poses[i].rotation, poses[j].rotation)) < link_deg)
        parent[find(i)] = find(j);
  int clusters = 0;
  for (std::size_t i = 0; i < n; ++i)
    if (find(i) == i) ++clusters;
  return clusters;
}

// --- ablation comparison -----------------------------------------------------

// Side-by-side medians for full / without-SDF / without-pose over the same
// instances. Expects the three runs to cover identical scene sets.
inline std::string render_ablation_table(const std::vector<EvalInstance>& full,
                                         const std::vector<EvalInstance>& nosdf,
                                         const std::vector<EvalInstance>& nopose,
                                         const std::string& catalog_hash) {
  auto med = [](const std::vector<EvalInstance>& rows, bool ood, bool want_rot) {
    std::vector<double> v;
    bool any_ood = false;
    for (const EvalInstance& r : rows) any_ood |= r.ood;
    for (const EvalInstance& r : rows)
      if (!any_ood || r.ood == ood) v.push_back(want_rot ? r.scene_max_rot_deg : r.scene_max_trans_pct);
    return median(v);
  };
  char line[160];
  std::string body;
  std::snprintf(line, sizeof(line), "# stablepose ablation  scenes=%zu  catalog=%s\n", full.size(),
                catalog_hash.c_str());
  body += line;
  std::snprintf(line, sizeof(line), "%-10s %14s %12s %14s %12s\n", "variant", "ID-trans-%", "ID-rot-deg",
                "OOD-trans-%", "OOD-rot-deg");
  body += line;
  const std::vector<std::pair<std::string, const std::vector<EvalInstance>*>> rows = {
      {"full", &full}, {"w/o-sdf", &nosdf}, {"w/o-pose", &nopose}};
  for (const auto& [name, inst] : rows) {
    std::snprintf(line, sizeof(line), "%-10s %14.2f %12.2f %14.2f %12.2f\n", name.c_str(),
                  med(*inst, false, false), med(*inst, false, true), med(*inst, true, false),
                  med(*inst, true, true));
    body += line;
  }
  return body;
}

}  // namespace stablepose
