#include <catch2/catch_amalgamated.hpp>

#include <fstream>
#include <numeric>

#include "stablepose/checkpoint.hpp"
#include "stablepose/denoiser.hpp"

using namespace stablepose;

namespace {

DenoiserConfig tiny_config() {
  DenoiserConfig c;
  c.k_nn = 4;
  c.edge_conv_widths = {8, 8};
  c.latent_dim = 8;
  c.mlp_widths = {8, 8};
  c.n_pts = 16;
  return c;
}

Eigen::MatrixXd random_cloud(int n, Rng& rng) {
  Eigen::MatrixXd rows(n, 5);
  for (int i = 0; i < n; ++i) {
    rows(i, 0) = rng.uniform(-1.0, 1.0);
    rows(i, 1) = rng.uniform(-1.0, 1.0);
    rows(i, 2) = rng.uniform(0.0, 1.0);
    rows(i, 3) = rng.uniform(0.0, 0.5);
    rows(i, 4) = (i % 3 == 0) ? 1.0 : 0.0;
  }
  return rows;
}

void zero_weights(DenoiserModel& m) {
  for (auto& t : m.tensors) t.value.setZero();
}

}  // namespace

TEST_CASE("model tensors have the documented names and shapes") {
  DenoiserModel m = DenoiserModel::init(tiny_config(), 3);
  std::vector<std::string> names;
  for (const auto& t : m.tensors) names.push_back(t.name);
  std::vector<std::string> want = {"enc0.W", "enc0.b", "enc1.W", "enc1.b",
                                   "proj.W", "proj.b", "head0.W", "head0.b",
                                   "head1.W", "head1.b", "head2.W", "head2.b"};
  CHECK(names == want);
  CHECK(m.tensor("enc0.W").rows() == 10);  // 2 * 5 input dims
  CHECK(m.tensor("enc1.W").rows() == 16);  // 2 * 8 features
  CHECK(m.tensor("proj.W").rows() == 16);  // concat of [8, 8]
  CHECK(m.tensor("proj.W").cols() == 8);
  CHECK(m.tensor("head0.W").rows() == 16);  // latent 8 + pose 6 + embed 2
  CHECK(m.tensor("head2.W").cols() == 6);
  CHECK(m.all_finite());
  // Seeded init is reproducible, different seeds differ.
  DenoiserModel m2 = DenoiserModel::init(tiny_config(), 3);
  DenoiserModel m3 = DenoiserModel::init(tiny_config(), 4);
  CHECK(m.tensor("enc0.W") == m2.tensor("enc0.W"));
  CHECK(m.tensor("enc0.W") != m3.tensor("enc0.W"));
}

TEST_CASE("config validation rejects malformed settings") {
  DenoiserConfig c = tiny_config();
  c.k_nn = 0;
  CHECK_THROWS_AS(c.validate(), ValidationError);
  c = tiny_config();
  c.mlp_widths = {8, 8, 8};
  CHECK_THROWS_AS(c.validate(), ValidationError);
  c = tiny_config();
  c.ablate_nosdf = c.ablate_nopose = true;
  CHECK_THROWS_AS(c.validate(), ValidationError);
  c = tiny_config();
  c.edge_conv_widths.clear();
  CHECK_THROWS_AS(c.validate(), ValidationError);
}

TEST_CASE("knn graph is self-inclusive with deterministic tie-breaks") {
  Rng rng(5);
  Eigen::MatrixXd pts = random_cloud(20, rng).leftCols(3);
  Eigen::MatrixXi g = knn_graph(pts, 4);
  REQUIRE(g.rows() == 20);
  REQUIRE(g.cols() == 4);
  for (int i = 0; i < 20; ++i) CHECK(g(i, 0) == i);  // self at distance zero

  // Exact duplicates: the lower index wins the tie, self still included.
  Eigen::MatrixXd dup(3, 3);
  dup << 0, 0, 0, 0, 0, 0, 5, 5, 5;
  Eigen::MatrixXi gd = knn_graph(dup, 2);
  CHECK(gd(1, 0) == 0);  // row 1's nearest: duplicate row 0 by index tie
  CHECK(gd(1, 1) == 1);

  // k beyond N-1 clips.
  Eigen::MatrixXi gc = knn_graph(dup, 10);
  CHECK(gc.cols() == 2);
}

TEST_CASE("latent is exactly invariant to point permutation") {
  Rng rng(11);
  DenoiserModel m = DenoiserModel::init(tiny_config(), 7);
  Eigen::MatrixXd rows = random_cloud(40, rng);

  std::vector<int> perm(40);
  std::iota(perm.begin(), perm.end(), 0);
  for (int i = 39; i > 0; --i) std::swap(perm[i], perm[rng.uniform_int(0, i)]);
  Eigen::MatrixXd shuffled(40, 5);
  for (int i = 0; i < 40; ++i) shuffled.row(i) = rows.row(perm[i]);

  Eigen::VectorXd za = encode_cloud(m, rows);
  Eigen::VectorXd zb = encode_cloud(m, shuffled);
  CHECK(za == zb);
}

TEST_CASE("duplicating every point with doubled k keeps the latent") {
  Rng rng(13);
  DenoiserModel m = DenoiserModel::init(tiny_config(), 19);
  m.config.k_nn = 6;
  Eigen::MatrixXd rows = random_cloud(30, rng);
  Eigen::MatrixXd doubled(60, 5);
  doubled << rows, rows;

  DenoiserModel m2 = m;
  m2.config.k_nn = 12;
  CHECK(encode_cloud(m, rows) == encode_cloud(m2, doubled));
}

TEST_CASE("zero weights give zero latent and zero head output") {
  Rng rng(17);
  DenoiserModel m = DenoiserModel::init(tiny_config(), 23);
  zero_weights(m);
  Eigen::MatrixXd rows = random_cloud(25, rng);
  CHECK(encode_cloud(m, rows).norm() == 0.0);
  Vec6 out = denoise_eval(m, rows, Vec6::Constant(0.3), 40);
  REQUIRE(out.size() == 6);
  CHECK(out.norm() == 0.0);
}

TEST_CASE("head respects the spectral-norm Lipschitz bound in x_t") {
  Rng rng(29);
  DenoiserModel m = DenoiserModel::init(tiny_config(), 31);
  double lip = 1.0;
  for (const char* n : {"head0.W", "head1.W", "head2.W"}) {
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(m.tensor(n));
    lip *= svd.singularValues()(0);
  }
  Eigen::MatrixXd rows = random_cloud(20, rng);
  for (int i = 0; i < 50; ++i) {
    Vec6 x = rng.normal_vec(6, 1.0);
    Vec6 d = rng.normal_vec(6, 0.1);
    double delta = (denoise_eval(m, rows, PoseVec(x + d), 10) -
                    denoise_eval(m, rows, PoseVec(x), 10))
                       .norm();
    CHECK(delta <= lip * d.norm() * (1.0 + 1e-9));
  }
}

TEST_CASE("finite differences confirm every parameter gradient") {
  Rng rng(37);
  DenoiserConfig cfg = tiny_config();
  DenoiserModel model = DenoiserModel::init(cfg, 41);
  Eigen::MatrixXd rows = random_cloud(16, rng);
  PoseVec x_t = rng.normal_vec(6, 0.5);
  Vec6 target = rng.normal_vec(6, 0.5);
  const int step = 35;

  auto loss_value = [&](const DenoiserModel& mm) {
    ad::Tape t;
    BoundModel bm = BoundModel::bind(t, mm);
    int pred = denoise_node(t, bm, rows, x_t, step);
    return t.val(ad::mse(t, pred, ad::input(t, target.transpose())))(0, 0);
  };

  ad::Tape t;
  BoundModel bm = BoundModel::bind(t, model);
  int pred = denoise_node(t, bm, rows, x_t, step);
  int loss = ad::mse(t, pred, ad::input(t, target.transpose()));
  t.backward(loss);

  const double h = 1e-5;
  double worst = 0.0;
  for (std::size_t i = 0; i < model.tensors.size(); ++i) {
    const Eigen::MatrixXd& g = t.grad(bm.ids[i]);
    for (Eigen::Index r = 0; r < g.rows(); ++r)
      for (Eigen::Index c = 0; c < g.cols(); ++c) {
        DenoiserModel probe = model;
        probe.tensors[i].value(r, c) += h;
        double up = loss_value(probe);
        probe.tensors[i].value(r, c) -= 2 * h;
        double dn = loss_value(probe);
        double fd = (up - dn) / (2 * h);
        double err = std::abs(g(r, c) - fd) /
                     std::max({1e-4, std::abs(g(r, c)), std::abs(fd)});
        worst = std::max(worst, err);
      }
  }
  INFO("worst relative error " << worst);
  CHECK(worst < 1e-4);
}

TEST_CASE("zero weights kill every gradient behind the first rectifier") {
  Rng rng(43);
  DenoiserModel m = DenoiserModel::init(tiny_config(), 47);
  zero_weights(m);
  Eigen::MatrixXd rows = random_cloud(20, rng);

  ad::Tape t;
  BoundModel bm = BoundModel::bind(t, m);
  int pred = denoise_node(t, bm, rows, Vec6::Constant(0.2), 12);
  int loss = ad::mse(t, pred, ad::input(t, Eigen::MatrixXd::Ones(1, 6)));
  t.backward(loss);

  // Output = head2.b = 0, so only the output bias sees the residual; with
  // relu'(0) = 0 everything upstream is dead.
  for (std::size_t i = 0; i < m.tensors.size(); ++i) {
    double gn = t.grad(bm.ids[i]).norm();
    if (m.tensors[i].name == "head2.b")
      CHECK(gn > 0.0);
    else
      CHECK(gn == 0.0);
  }
}

TEST_CASE("constant loss backpropagates exact zeros") {
  Rng rng(53);
  DenoiserModel m = DenoiserModel::init(tiny_config(), 59);
  Eigen::MatrixXd rows = random_cloud(18, rng);
  ad::Tape t;
  BoundModel bm = BoundModel::bind(t, m);
  int pred = denoise_node(t, bm, rows, Vec6::Constant(0.1), 5);
  int loss = ad::mse(t, pred, pred);  // identically zero
  t.backward(loss);
  for (std::size_t i = 0; i < m.tensors.size(); ++i)
    CHECK(t.grad(bm.ids[i]).norm() == 0.0);
}

TEST_CASE("ablations drop exactly the advertised inputs") {
  Rng rng(61);
  Eigen::MatrixXd rows = random_cloud(24, rng);
  Eigen::MatrixXd rows_sdf = rows;
  rows_sdf.col(3).array() += 0.3;

  DenoiserConfig cfg = tiny_config();
  cfg.ablate_nosdf = true;
  DenoiserModel blind = DenoiserModel::init(cfg, 67);
  CHECK(encode_cloud(blind, rows) == encode_cloud(blind, rows_sdf));
  DenoiserModel sighted = DenoiserModel::init(tiny_config(), 67);
  CHECK(encode_cloud(sighted, rows) != encode_cloud(sighted, rows_sdf));

  cfg = tiny_config();
  cfg.ablate_nopose = true;
  DenoiserModel noposed = DenoiserModel::init(cfg, 71);
  CHECK(noposed.tensor("head0.W").rows() == 8 + 2);
  CHECK(denoise_eval(noposed, rows, Vec6::Constant(0.4), 9) ==
        denoise_eval(noposed, rows, Vec6::Constant(-1.2), 9));
}

TEST_CASE("checkpoint round trip is bit-exact and self-describing") {
  DenoiserConfig cfg = tiny_config();
  cfg.ablate_nosdf = true;
  cfg.parameterization = Parameterization::X0;
  DenoiserModel m = DenoiserModel::init(cfg, 73);
  CheckpointMeta meta;
  meta.profile = "desk";
  meta.seed = 99;
  meta.steps = 1234;
  meta.holdout_shape = "cube";
  meta.dataset_ids = {"a.jsonl", "b.jsonl"};
  meta.catalog_hash = catalog_hash(builtin_catalog());

  const std::string path = "ckpt_roundtrip_test.bin";
  save_checkpoint(path, m, meta);
  CheckpointMeta back;
  DenoiserModel loaded = load_checkpoint(path, &back);

  REQUIRE(loaded.tensors.size() == m.tensors.size());
  for (std::size_t i = 0; i < m.tensors.size(); ++i) {
    CHECK(loaded.tensors[i].name == m.tensors[i].name);
    CHECK(loaded.tensors[i].value == m.tensors[i].value);
  }
  CHECK(loaded.config.ablate_nosdf);
  CHECK(loaded.config.parameterization == Parameterization::X0);
  CHECK(loaded.config.schedule.sigmas == cfg.schedule.sigmas);
  CHECK(back.profile == "desk");
  CHECK(back.seed == 99);
  CHECK(back.steps == 1234);
  CHECK(back.holdout_shape == "cube");
  CHECK(back.dataset_ids == meta.dataset_ids);
  CHECK(back.catalog_hash == meta.catalog_hash);

  // Identical outputs on a probe input.
  Rng rng(79);
  Eigen::MatrixXd rows = random_cloud(20, rng);
  CHECK(denoise_eval(loaded, rows, Vec6::Constant(0.2), 50) ==
        denoise_eval(m, rows, Vec6::Constant(0.2), 50));

  // Save is deterministic byte-for-byte.
  const std::string path2 = "ckpt_roundtrip_test2.bin";
  save_checkpoint(path2, m, meta);
  std::ifstream f1(path, std::ios::binary), f2(path2, std::ios::binary);
  std::string b1((std::istreambuf_iterator<char>(f1)), {});
  std::string b2((std::istreambuf_iterator<char>(f2)), {});
  CHECK(b1 == b2);
}

TEST_CASE("checkpoint loader rejects corrupted files") {
  DenoiserModel m = DenoiserModel::init(tiny_config(), 83);
  const std::string path = "ckpt_corrupt_test.bin";
  save_checkpoint(path, m, {});
  std::string bytes;
  {
    std::ifstream in(path, std::ios::binary);
    bytes.assign((std::istreambuf_iterator<char>(in)), {});
  }

  auto rewrite = [&](const std::string& b) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write(b.data(), static_cast<std::streamsize>(b.size()));
  };

  std::string bad = bytes;
  bad[0] = 'X';
  rewrite(bad);
  CHECK_THROWS_MATCHES(load_checkpoint(path), ValidationError,
                       Catch::Matchers::MessageMatches(
                           Catch::Matchers::ContainsSubstring("not a stablepose checkpoint")));

  bad = bytes;
  bad[4] = 2;  // version
  rewrite(bad);
  CHECK_THROWS_MATCHES(
      load_checkpoint(path), ValidationError,
      Catch::Matchers::MessageMatches(Catch::Matchers::ContainsSubstring("version")));

  rewrite(bytes.substr(0, bytes.size() / 2));
  CHECK_THROWS_AS(load_checkpoint(path), ValidationError);
}

TEST_CASE("sample_pose is seed-deterministic and returns finite world poses") {
  // Untrained eps-prediction models can random-walk past the divergence gate,
  // so the determinism probe uses a bounded x0-prediction model: whatever the
  // net outputs is the next x0 estimate, and small weights keep it in range.
  DenoiserConfig cfg = tiny_config();
  cfg.parameterization = Parameterization::X0;
  DenoiserModel m = DenoiserModel::init(cfg, 89);
  for (auto& t : m.tensors) t.value *= 0.1;
  ShapeCatalog catalog = builtin_catalog();

  Rng a(301), b(301), c(302);
  Pose pa = sample_pose(m, catalog, {}, "cube", a);
  Pose pb = sample_pose(m, catalog, {}, "cube", b);
  Pose pc = sample_pose(m, catalog, {}, "cube", c);
  CHECK(pa.translation == pb.translation);
  CHECK(pa.rotation == pb.rotation);
  CHECK(pa.translation != pc.translation);
  CHECK(pa.translation.allFinite());
  CHECK(is_rotation(pa.rotation, 1e-9));

  // With context, the workspace frame recenters on the context blocks.
  SceneObject ctx;
  ctx.shape = "cube";
  ctx.pose.translation = Vec3(0.2, -0.1, 0.05);
  ctx.sample_seed = 11;
  Rng d(303);
  Pose pd = sample_pose(m, catalog, {ctx}, "cube", d);
  CHECK(pd.translation.allFinite());
  CHECK_THROWS_AS(sample_pose(m, catalog, {}, "dodecahedron", d), ValidationError);
}

TEST_CASE("sample_pose surfaces divergence as a sampling fault") {
  DenoiserModel m = DenoiserModel::init(tiny_config(), 97);
  zero_weights(m);
  m.tensors[static_cast<std::size_t>(m.find("head2.b"))].value.setConstant(50.0);
  Rng rng(7);
  CHECK_THROWS_AS(sample_pose(m, builtin_catalog(), {}, "cube", rng), SamplingFault);
}
