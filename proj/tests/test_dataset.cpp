#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "stablepose/dataset.hpp"
#include "stablepose/physics.hpp"

using namespace stablepose;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() : path(fs::temp_directory_path() / ("sp_ds_" + std::to_string(::getpid()))) {
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string file(const std::string& name) const { return (path / name).string(); }
};

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  return std::string(std::istreambuf_iterator<char>(in), {});
}

std::vector<Scene> make_scenes(const ShapeCatalog& catalog, int n, std::uint64_t seed, int blocks = 1) {
  std::vector<Scene> out;
  Rng gen(seed);
  SimConfig sim;
  for (int i = 0; i < n; ++i) out.push_back(generate_stable_scene(blocks, catalog, gen, sim));
  return out;
}

void write_file(const std::string& path, const DatasetInfo& info, const std::vector<Scene>& scenes) {
  DatasetWriter w(path, info);
  for (std::size_t i = 0; i < scenes.size(); ++i) w.add(scenes[i], i + 1);
  w.finalize();
}

}  // namespace

TEST_CASE("dataset round trip preserves scenes") {
  ShapeCatalog catalog = builtin_catalog();
  TempDir tmp;
  std::vector<Scene> scenes = make_scenes(catalog, 3, 91, 2);

  DatasetInfo info;
  info.mode = "placement";
  info.seed = 91;
  info.blocks = 2;
  info.catalog_hash = catalog_hash_hex(catalog);
  write_file(tmp.file("a.jsonl"), info, scenes);

  LoadedDataset ds = load_dataset(tmp.file("a.jsonl"), catalog);
  CHECK(ds.info.mode == "placement");
  CHECK(ds.info.seed == 91);
  CHECK(ds.info.blocks == 2);
  REQUIRE(ds.scenes.size() == scenes.size());
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    REQUIRE(ds.scene_seeds[i] == i + 1);
    REQUIRE(ds.scenes[i].query_index == scenes[i].query_index);
    REQUIRE(ds.scenes[i].size() == scenes[i].size());
    for (int j = 0; j < scenes[i].size(); ++j) {
      const SceneObject& a = scenes[i].objects[static_cast<std::size_t>(j)];
      const SceneObject& b = ds.scenes[i].objects[static_cast<std::size_t>(j)];
      CHECK(a.shape == b.shape);
      CHECK(a.sample_seed == b.sample_seed);
      // 17 significant digits round-trip doubles exactly; the rotation passes
      // through logmap/expmap, so allow the group round-trip tolerance there.
      CHECK(a.pose.translation == b.pose.translation);
      CHECK(relative_rotation_angle(a.pose.rotation, b.pose.rotation) < 1e-7);
    }
  }
}

TEST_CASE("identical content writes byte-identical files") {
  ShapeCatalog catalog = builtin_catalog();
  TempDir tmp;
  std::vector<Scene> scenes = make_scenes(catalog, 4, 17);
  DatasetInfo info;
  info.seed = 17;
  info.catalog_hash = catalog_hash_hex(catalog);
  write_file(tmp.file("one.jsonl"), info, scenes);
  write_file(tmp.file("two.jsonl"), info, scenes);
  CHECK(slurp(tmp.file("one.jsonl")) == slurp(tmp.file("two.jsonl")));
}

TEST_CASE("loader rejects foreign or damaged files") {
  ShapeCatalog catalog = builtin_catalog();
  TempDir tmp;
  std::vector<Scene> scenes = make_scenes(catalog, 1, 5);
  DatasetInfo info;
  info.catalog_hash = catalog_hash_hex(catalog);
  write_file(tmp.file("ok.jsonl"), info, scenes);
  std::string good = slurp(tmp.file("ok.jsonl"));

  auto write_raw = [&](const std::string& name, const std::string& body) {
    std::ofstream out(tmp.file(name), std::ios::binary);
    out << body;
    out.close();
    return tmp.file(name);
  };

  SECTION("missing file") {
    CHECK_THROWS_AS(load_dataset(tmp.file("absent.jsonl"), catalog), ValidationError);
  }
  SECTION("empty file") {
    CHECK_THROWS_AS(load_dataset(write_raw("empty.jsonl", ""), catalog), ValidationError);
  }
  SECTION("wrong format name") {
    CHECK_THROWS_AS(load_dataset(write_raw("fmt.jsonl", "{\"format\":\"other\"}\n"), catalog),
                    ValidationError);
  }
  SECTION("future version") {
    std::string bumped = good;
    bumped.replace(bumped.find("\"version\":1"), 11, "\"version\":9");
    CHECK_THROWS_AS(load_dataset(write_raw("ver.jsonl", bumped), catalog), ValidationError);
  }
  SECTION("catalog hash mismatch") {
    std::string tampered = good;
    auto at = tampered.find(info.catalog_hash);
    REQUIRE(at != std::string::npos);
    tampered.replace(at, 4, "dead");
    CHECK_THROWS_AS(load_dataset(write_raw("hash.jsonl", tampered), catalog), ValidationError);
  }
  SECTION("malformed record line") {
    CHECK_THROWS_AS(load_dataset(write_raw("rec.jsonl", good + "{not json\n"), catalog),
                    ValidationError);
  }
  SECTION("pose with wrong arity") {
    std::string line =
        "{\"seed\":1,\"objects\":[{\"shape\":\"cube\",\"pose\":[1,2,3],\"sample_seed\":1}],\"query\":0}\n";
    CHECK_THROWS_AS(load_dataset(write_raw("arity.jsonl", good + line), catalog), ValidationError);
  }
  SECTION("unknown shape") {
    std::string line =
        "{\"seed\":1,\"objects\":[{\"shape\":\"dodecahedron\",\"pose\":[0,0,0.05,0,0,0],\"sample_seed\":1}],\"query\":0}\n";
    CHECK_THROWS_AS(load_dataset(write_raw("shape.jsonl", good + line), catalog), ValidationError);
  }
}

TEST_CASE("dataset union keeps order and filters holdout scenes") {
  ShapeCatalog catalog = builtin_catalog();
  TempDir tmp;
  // Hand-build scenes so shape membership is controlled.
  auto resting = [&](const std::string& shape, double x) {
    Scene s;
    SceneObject o;
    o.shape = shape;
    o.pose.translation = Vec3(x, 0.0, catalog.get(shape).diameter);
    o.sample_seed = 7;
    s.objects.push_back(o);
    s.query_index = 0;
    return s;
  };
  DatasetInfo info;
  info.catalog_hash = catalog_hash_hex(catalog);
  write_file(tmp.file("a.jsonl"), info, {resting("cube", 0.0), resting("rectangle", 0.1)});
  write_file(tmp.file("b.jsonl"), info, {resting("hat", 0.0), resting("cube", 0.2)});

  LoadedDataset all = load_datasets({tmp.file("a.jsonl"), tmp.file("b.jsonl")}, catalog);
  REQUIRE(all.scenes.size() == 4);
  CHECK(all.scenes[0].query().shape == "cube");
  CHECK(all.scenes[2].query().shape == "hat");

  LoadedDataset held = load_datasets({tmp.file("a.jsonl"), tmp.file("b.jsonl")}, catalog, "cube");
  REQUIRE(held.scenes.size() == 2);
  for (const Scene& s : held.scenes)
    for (const SceneObject& o : s.objects) CHECK(o.shape != "cube");

  CHECK_THROWS_AS(load_datasets({tmp.file("a.jsonl")}, catalog, "pyramid"), ValidationError);
  CHECK_THROWS_AS(load_datasets({}, catalog), ValidationError);
}

TEST_CASE("writer is atomic: no temp residue, partials only on finalize") {
  ShapeCatalog catalog = builtin_catalog();
  TempDir tmp;
  DatasetInfo info;
  info.catalog_hash = catalog_hash_hex(catalog);
  std::string path = tmp.file("x.jsonl");
  {
    DatasetWriter w(path, info);
    w.add(make_scenes(catalog, 1, 3)[0], 1);
    // destroyed without finalize: abandoned
  }
  CHECK_FALSE(fs::exists(path));
  CHECK_FALSE(fs::exists(path + ".tmp"));
  {
    DatasetWriter w(path, info);
    w.add(make_scenes(catalog, 1, 3)[0], 1);
    w.finalize();
  }
  CHECK(fs::exists(path));
  CHECK_FALSE(fs::exists(path + ".tmp"));
  CHECK(load_dataset(path, catalog).scenes.size() == 1);
}
