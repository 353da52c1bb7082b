#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>

#include "stablepose/harness.hpp"

using namespace stablepose;
namespace fs = std::filesystem;

namespace {

Scene settled_scene(const ShapeCatalog& catalog, int blocks, std::uint64_t seed) {
  Rng gen(seed);
  return generate_stable_scene(blocks, catalog, gen, SimConfig{});
}

EvalInstance row(int id, const std::string& shape, double trans, double rot, bool ok, bool ood = false) {
  EvalInstance r;
  r.scene_id = id;
  r.method = "model";
  r.query_shape = shape;
  r.ood = ood;
  r.converged = true;
  r.scene_max_trans_pct = trans;
  r.scene_max_rot_deg = rot;
  r.success = ok;
  return r;
}

}  // namespace

TEST_CASE("settling a proposal at its own stable pose barely moves") {
  ShapeCatalog catalog = builtin_catalog();
  Scene scene = settled_scene(catalog, 2, 404);
  std::vector<SceneObject> ctx = strip_query(scene);
  const SceneObject& q = scene.query();

  ProposalOutcome out = settle_proposal(catalog, ctx, q.shape, q.pose);
  CHECK_FALSE(out.rejected);
  CHECK(out.converged);
  CHECK(out.report.scene_max_trans_pct < 5.0);
  CHECK(out.report.scene_max_rot_deg < 5.0);
  CHECK(out.success);
  REQUIRE(out.settled.size() == ctx.size() + 1);
}

TEST_CASE("a deeply interpenetrating proposal is rejected with sentinels") {
  ShapeCatalog catalog = builtin_catalog();
  Scene scene = settled_scene(catalog, 1, 405);
  std::vector<SceneObject> ctx = {scene.objects[0]};

  // Same pose as the context object: maximal overlap, far past the 5 mm gate.
  ProposalOutcome out = settle_proposal(catalog, ctx, ctx[0].shape, ctx[0].pose);
  CHECK(out.rejected);
  CHECK(out.reject_what.find("interpenetration") != std::string::npos);
  CHECK(out.report.scene_max_trans_pct == kFaultTransPct);
  CHECK(out.report.scene_max_rot_deg == kFaultRotDeg);
  CHECK_FALSE(out.success);
}

TEST_CASE("random evaluation is deterministic in the seed") {
  ShapeCatalog catalog = builtin_catalog();
  std::vector<Scene> testset;
  for (int i = 0; i < 6; ++i) testset.push_back(settled_scene(catalog, 1, 600 + i));

  EvalOptions opt;
  opt.method = "random";
  opt.mode = "placement";
  opt.seed = 77;
  std::vector<EvalInstance> a = run_eval(nullptr, catalog, testset, opt);
  std::vector<EvalInstance> b = run_eval(nullptr, catalog, testset, opt);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].scene_max_trans_pct == b[i].scene_max_trans_pct);
    CHECK(a[i].scene_max_rot_deg == b[i].scene_max_rot_deg);
    CHECK(a[i].rejected == b[i].rejected);
    CHECK(a[i].success == b[i].success);
  }

  opt.seed = 78;
  std::vector<EvalInstance> c = run_eval(nullptr, catalog, testset, opt);
  bool any_diff = false;
  for (std::size_t i = 0; i < a.size(); ++i)
    any_diff |= a[i].scene_max_trans_pct != c[i].scene_max_trans_pct;
  CHECK(any_diff);
}

TEST_CASE("model evaluation without a model refuses") {
  ShapeCatalog catalog = builtin_catalog();
  Scene scene = settled_scene(catalog, 1, 31);
  EvalOptions opt;
  opt.method = "model";
  Rng rng(1);
  CHECK_THROWS_AS(evaluate_instance(nullptr, catalog, scene, 0, opt, rng), ValidationError);
  opt.method = "oracle";
  CHECK_THROWS_AS(evaluate_instance(nullptr, catalog, scene, 0, opt, rng), ValidationError);
  CHECK_THROWS_AS(baseline_mode_for("bogus"), ValidationError);
}

TEST_CASE("median handles odd, even and empty inputs") {
  CHECK(median({}) == 0.0);
  CHECK(median({3.0}) == 3.0);
  CHECK(median({5.0, 1.0, 3.0}) == 3.0);
  CHECK(median({4.0, 1.0, 2.0, 3.0}) == 2.5);
}

TEST_CASE("aggregates split by shape and by distribution") {
  std::vector<EvalInstance> rows = {
      row(0, "cube", 10.0, 2.0, true),          row(1, "cube", 30.0, 20.0, false),
      row(2, "hat", 5.0, 1.0, true, true),      row(3, "hat", 15.0, 3.0, true, true),
      row(4, "rectangle", 50.0, 40.0, false),
  };
  std::vector<EvalAggregate> aggs = compute_aggregates(rows, true);
  // cube, hat, rectangle (sorted), all, ID, OOD
  REQUIRE(aggs.size() == 6);
  CHECK(aggs[0].label == "cube");
  CHECK(aggs[0].count == 2);
  CHECK(aggs[0].median_trans_pct == Catch::Approx(20.0));
  CHECK(aggs[0].success_rate_pct == Catch::Approx(50.0));
  CHECK(aggs[1].label == "hat");
  CHECK(aggs[1].median_rot_deg == Catch::Approx(2.0));
  CHECK(aggs[3].label == "all");
  CHECK(aggs[3].count == 5);
  CHECK(aggs[3].median_trans_pct == Catch::Approx(15.0));
  CHECK(aggs[4].label == "ID");
  CHECK(aggs[4].count == 3);
  CHECK(aggs[5].label == "OOD");
  CHECK(aggs[5].count == 2);
  CHECK(aggs[5].success_rate_pct == Catch::Approx(100.0));

  // A perfect run: every displacement zero reads as zero medians, 100% success.
  std::vector<EvalInstance> perfect = {row(0, "cube", 0.0, 0.0, true), row(1, "cube", 0.0, 0.0, true)};
  std::vector<EvalAggregate> pa = compute_aggregates(perfect, false);
  REQUIRE(pa.size() == 2);
  CHECK(pa[1].median_trans_pct == 0.0);
  CHECK(pa[1].median_rot_deg == 0.0);
  CHECK(pa[1].success_rate_pct == Catch::Approx(100.0));
}

TEST_CASE("report rows reproduce the emitted table") {
  ShapeCatalog catalog = builtin_catalog();
  std::vector<EvalInstance> rows = {
      row(0, "cube", 12.25, 3.5, true),  row(1, "tetrahedron", 80.0, 90.0, false),
      row(2, "hat", 7.0, 2.0, true, true),
  };
  rows[1].rejected = true;
  ReportHeader hdr;
  hdr.catalog_hash = catalog_hash_hex(catalog);
  hdr.method = "model";
  hdr.mode = "placement";
  hdr.seed = 1234;
  hdr.holdout_shape = "hat";

  fs::path dir = fs::temp_directory_path() / "sp_report_test";
  fs::create_directories(dir);
  std::string path = (dir / "r.txt").string();
  std::vector<EvalAggregate> aggs = compute_aggregates(rows, true);
  write_report(path, hdr, rows, aggs);

  LoadedReport back = load_report_rows(path + ".jsonl");
  CHECK(back.header.method == "model");
  CHECK(back.header.seed == 1234);
  CHECK(back.header.holdout_shape == "hat");
  REQUIRE(back.instances.size() == rows.size());
  CHECK(back.instances[1].rejected);
  CHECK(back.instances[1].scene_max_trans_pct == 80.0);

  // Recomputing aggregates from the persisted rows renders the same table.
  std::string original = render_table(hdr, rows, aggs);
  std::string recomputed =
      render_table(back.header, back.instances, compute_aggregates(back.instances, true));
  CHECK(original == recomputed);

  std::ifstream table(path);
  std::string first;
  std::getline(table, first);
  CHECK(first.find("method=model") != std::string::npos);
  fs::remove_all(dir);
}

TEST_CASE("rotation clusters follow single-linkage chains") {
  auto at = [](const Vec3& w) {
    Pose p;
    p.rotation = expmap(w);
    return p;
  };
  std::vector<Pose> same = {at({0, 0, 0}), at({0, 0, 0.01}), at({0.01, 0, 0})};
  CHECK(rotation_cluster_count(same, 15.0) == 1);

  std::vector<Pose> spread = {at({0, 0, 0}), at({0, 0, radians(90.0)}), at({radians(120.0), 0, 0})};
  CHECK(rotation_cluster_count(spread, 15.0) == 3);

  // 0, 10, 20 deg: no pair across 20 deg links directly, but the chain merges.
  std::vector<Pose> chain = {at({0, 0, 0}), at({0, 0, radians(10.0)}), at({0, 0, radians(20.0)})};
  CHECK(rotation_cluster_count(chain, 15.0) == 1);
  CHECK(rotation_cluster_count(chain, 8.0) == 3);
  CHECK(rotation_cluster_count({}, 15.0) == 0);
}

TEST_CASE("ablation table gives identical variants identical columns") {
  std::vector<EvalInstance> rows = {row(0, "cube", 10.0, 5.0, true), row(1, "hat", 20.0, 9.0, false, true)};
  std::string table = render_ablation_table(rows, rows, rows, "cafe");
  std::istringstream in(table);
  std::string line, full, nosdf, nopose;
  std::getline(in, line);  // banner
  std::getline(in, line);  // column header
  std::getline(in, full);
  std::getline(in, nosdf);
  std::getline(in, nopose);
  CHECK(full.substr(10) == nosdf.substr(10));
  CHECK(full.substr(10) == nopose.substr(10));
  CHECK(full.find("full") == 0);
}
