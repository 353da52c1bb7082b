#pragma once

// Line-delimited scene datasets. The first line is a header object that makes
// the file self-describing (format name, version, catalog hash, generation
// mode and seed); every following line is one scene. Poses are stored as
// 6-vectors (translation, exponential coordinates) printed with 17 significant
// digits so the doubles round-trip exactly and files diff cleanly.
//
//   {"format":"stablepose-dataset","version":1,"catalog_hash":"…","mode":"placement","seed":7,"blocks":1}
//   {"seed":123,"objects":[{"shape":"cube","pose":[…6…],"sample_seed":45}],"query":0}
//
// Writers stream records into a sibling temp file and rename it into place on
// finalize; a generator that exhausts its retry budget still finalizes, so a
// partial file lands at the target path and the caller exits nonzero.

#include <cinttypes>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "stablepose/catalog.hpp"
#include "stablepose/errors.hpp"
#include "stablepose/scene.hpp"

namespace stablepose {

inline constexpr int kDatasetVersion = 1;
inline constexpr const char* kDatasetFormat = "stablepose-dataset";

struct DatasetInfo {
  std::string mode = "placement";  // "placement" | "stacking"
  std::uint64_t seed = 0;
  int blocks = 1;
  std::string catalog_hash;
};

namespace detail {

// format_double comes from catalog.hpp (same 17-significant-digit contract).

inline std::string format_pose(const Pose& pose) {
  PoseVec x = encode_pose(pose);
  std::string out = "[";
  for (int i = 0; i < 6; ++i) {
    if (i) out += ",";
    out += format_double(x(i));
  }
  out += "]";
  return out;
}

inline std::string scene_line(const Scene& scene, std::uint64_t scene_seed) {
  std::string out = "{\"seed\":" + std::to_string(scene_seed) + ",\"objects\":[";
  for (std::size_t i = 0; i < scene.objects.size(); ++i) {
    const SceneObject& o = scene.objects[i];
    if (i) out += ",";
    out += "{\"shape\":" + nlohmann::json(o.shape).dump();
    out += ",\"pose\":" + format_pose(o.pose);
    out += ",\"sample_seed\":" + std::to_string(o.sample_seed) + "}";
  }
  out += "],\"query\":" + std::to_string(scene.query_index) + "}";
  return out;
}

}  // namespace detail

class DatasetWriter {
 public:
  DatasetWriter(std::string path, const DatasetInfo& info) : path_(std::move(path)), tmp_(path_ + ".tmp") {
    out_.open(tmp_, std::ios::binary | std::ios::trunc);
    if (!out_) throw ValidationError("cannot open dataset file for writing: " + tmp_);
    out_ << "{\"format\":\"" << kDatasetFormat << "\",\"version\":" << kDatasetVersion
         << ",\"catalog_hash\":" << nlohmann::json(info.catalog_hash).dump() << ",\"mode\":" << nlohmann::json(info.mode).dump()
         << ",\"seed\":" << info.seed << ",\"blocks\":" << info.blocks << "}\n";
  }

  DatasetWriter(const DatasetWriter&) = delete;
  DatasetWriter& operator=(const DatasetWriter&) = delete;

  void add(const Scene& scene, std::uint64_t scene_seed) {
    out_ << detail::scene_line(scene, scene_seed) << "\n";
    ++count_;
  }

  std::size_t count() const { return count_; }

  // Renames the temp file into place. Also used to deliver partial files when
  // generation gives up, so readers never observe a half-written line.
  void finalize() {
    out_.flush();
    out_.close();
    if (std::rename(tmp_.c_str(), path_.c_str()) != 0)
      throw ValidationError("cannot move dataset into place: " + path_);
    finalized_ = true;
  }

  ~DatasetWriter() {
    if (!finalized_) {
      out_.close();
      std::remove(tmp_.c_str());
    }
  }

 private:
  std::string path_;
  std::string tmp_;
  std::ofstream out_;
  std::size_t count_ = 0;
  bool finalized_ = false;
};

struct LoadedDataset {
  DatasetInfo info;
  std::vector<Scene> scenes;
  std::vector<std::uint64_t> scene_seeds;
};

// Parses a dataset and checks it against the active catalog: hash mismatches
// and structural errors are validation failures, not silent skips.
inline LoadedDataset load_dataset(const std::string& path, const ShapeCatalog& catalog) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open dataset file: " + path);
  std::string line;
  if (!std::getline(in, line)) throw ValidationError("empty dataset file: " + path);

  nlohmann::json header = nlohmann::json::parse(line, nullptr, false);
  if (header.is_discarded() || !header.is_object())
    throw ValidationError("malformed dataset header: " + path);
  if (header.value("format", "") != kDatasetFormat)
    throw ValidationError("not a stablepose dataset: " + path);
  if (header.value("version", -1) != kDatasetVersion)
    throw ValidationError("unsupported dataset version in " + path);

  LoadedDataset ds;
  ds.info.mode = header.value("mode", "");
  ds.info.seed = header.value("seed", std::uint64_t{0});
  ds.info.blocks = header.value("blocks", 0);
  ds.info.catalog_hash = header.value("catalog_hash", "");
  if (ds.info.catalog_hash != catalog_hash_hex(catalog))
    throw ValidationError("dataset " + path + " was generated against a different catalog (hash " +
                          ds.info.catalog_hash + ", active " + catalog_hash_hex(catalog) + ")");

  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json rec = nlohmann::json::parse(line, nullptr, false);
    if (rec.is_discarded() || !rec.is_object() || !rec.contains("objects"))
      throw ValidationError("malformed record at line " + std::to_string(lineno) + " of " + path);
    Scene scene;
    for (const auto& jo : rec["objects"]) {
      SceneObject o;
      o.shape = jo.value("shape", "");
      catalog.get(o.shape);  // throws on unknown shapes
      const auto& jp = jo["pose"];
      if (!jp.is_array() || jp.size() != 6)
        throw ValidationError("pose is not a 6-vector at line " + std::to_string(lineno) + " of " + path);
      PoseVec x;
      for (int i = 0; i < 6; ++i) x(i) = jp[static_cast<std::size_t>(i)].get<double>();
      o.pose = decode_pose(x);
      o.sample_seed = jo.value("sample_seed", std::uint64_t{0});
      scene.objects.push_back(o);
    }
    scene.query_index = rec.value("query", -1);
    validate_scene(catalog, scene);
    ds.scenes.push_back(std::move(scene));
    ds.scene_seeds.push_back(rec.value("seed", std::uint64_t{0}));
  }
  return ds;
}

// Union of several dataset files, optionally dropping every scene that
// contains a held-out shape. Keeps file order, then record order.
inline LoadedDataset load_datasets(const std::vector<std::string>& paths, const ShapeCatalog& catalog,
                                   const std::string& holdout_shape = "") {
  if (paths.empty()) throw ValidationError("no dataset files given");
  if (!holdout_shape.empty()) catalog.get(holdout_shape);
  LoadedDataset all;
  for (std::size_t p = 0; p < paths.size(); ++p) {
    LoadedDataset one = load_dataset(paths[p], catalog);
    if (p == 0) all.info = one.info;
    for (std::size_t i = 0; i < one.scenes.size(); ++i) {
      bool drop = false;
      if (!holdout_shape.empty())
        for (const SceneObject& o : one.scenes[i].objects)
          if (o.shape == holdout_shape) drop = true;
      if (drop) continue;
      all.scenes.push_back(std::move(one.scenes[i]));
      all.scene_seeds.push_back(one.scene_seeds[i]);
    }
  }
  return all;
}

}  // namespace stablepose
