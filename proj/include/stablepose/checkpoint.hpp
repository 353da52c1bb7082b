#pragma once

// Checkpoint persistence. Byte layout (all integers little-endian):
//
//   offset  size  field
//   0       4     magic "SPCK"
//   4       4     u32 format version (1)
//   8       8     u64 header length H
//   16      H     UTF-8 JSON header: model config (including the noise
//                 schedule and ablation flags), catalog hash, profile name,
//                 seed, step count, holdout shape, dataset ids
//   ...           u32 tensor count, then per tensor:
//                   u32 name length, name bytes,
//                   u32 rows, u32 cols,
//                   rows*cols f64 values, row-major
//
// Tensors appear in model creation order. Writes go to a temp file in the
// same directory and are renamed into place. Round trips are bit-exact.

#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "stablepose/denoiser.hpp"
#include "stablepose/errors.hpp"

namespace stablepose {

static_assert(std::endian::native == std::endian::little,
              "checkpoint io assumes a little-endian host");

struct CheckpointMeta {
  std::string profile = "custom";  // desk | paper | custom
  std::uint64_t seed = 0;
  int steps = 0;
  std::string holdout_shape;  // empty = none held out
  std::vector<std::string> dataset_ids;
  std::uint64_t catalog_hash = 0;
};

namespace detail {

inline constexpr char kCheckpointMagic[4] = {'S', 'P', 'C', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

template <typename T>
void put(std::string& buf, T v) {
  char raw[sizeof(T)];
  std::memcpy(raw, &v, sizeof(T));
  buf.append(raw, sizeof(T));
}

template <typename T>
T take(const std::string& buf, std::size_t& at) {
  if (at + sizeof(T) > buf.size()) throw ValidationError("truncated checkpoint");
  T v;
  std::memcpy(&v, buf.data() + at, sizeof(T));
  at += sizeof(T);
  return v;
}

inline void write_file_atomic(const std::string& path, const std::string& bytes) {
  std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw ValidationError("cannot write " + tmp);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw ValidationError("short write to " + tmp);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0)
    throw ValidationError("cannot rename " + tmp + " to " + path);
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open " + path);
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return bytes;
}

inline nlohmann::ordered_json config_to_json(const DenoiserConfig& c) {
  return nlohmann::ordered_json{
      {"k_nn", c.k_nn},
      {"edge_conv_widths", c.edge_conv_widths},
      {"latent_dim", c.latent_dim},
      {"mlp_widths", c.mlp_widths},
      {"n_pts", c.n_pts},
      {"ablate_nosdf", c.ablate_nosdf},
      {"ablate_nopose", c.ablate_nopose},
      {"parameterization",
       c.parameterization == Parameterization::Epsilon ? "epsilon" : "x0"},
      {"sigmas", c.schedule.sigmas}};
}

inline DenoiserConfig config_from_json(const nlohmann::json& j) {
  DenoiserConfig c;
  c.k_nn = j.at("k_nn").get<int>();
  c.edge_conv_widths = j.at("edge_conv_widths").get<std::vector<int>>();
  c.latent_dim = j.at("latent_dim").get<int>();
  c.mlp_widths = j.at("mlp_widths").get<std::vector<int>>();
  c.n_pts = j.at("n_pts").get<int>();
  c.ablate_nosdf = j.at("ablate_nosdf").get<bool>();
  c.ablate_nopose = j.at("ablate_nopose").get<bool>();
  std::string p = j.at("parameterization").get<std::string>();
  if (p == "epsilon")
    c.parameterization = Parameterization::Epsilon;
  else if (p == "x0")
    c.parameterization = Parameterization::X0;
  else
    throw ValidationError("unknown parameterization: " + p);
  c.schedule.sigmas = j.at("sigmas").get<std::vector<double>>();
  c.validate();
  return c;
}

}  // namespace detail

inline void save_checkpoint(const std::string& path, const DenoiserModel& model,
                            const CheckpointMeta& meta) {
  nlohmann::ordered_json header{{"format", "stablepose-checkpoint"},
                                {"profile", meta.profile},
                                {"seed", meta.seed},
                                {"steps", meta.steps},
                                {"holdout_shape", meta.holdout_shape},
                                {"dataset_ids", meta.dataset_ids},
                                {"catalog_hash", meta.catalog_hash},
                                {"config", detail::config_to_json(model.config)}};
  std::string hj = header.dump();

  std::string buf;
  buf.append(detail::kCheckpointMagic, 4);
  detail::put<std::uint32_t>(buf, detail::kCheckpointVersion);
  detail::put<std::uint64_t>(buf, hj.size());
  buf += hj;
  detail::put<std::uint32_t>(buf, static_cast<std::uint32_t>(model.tensors.size()));
  for (const auto& t : model.tensors) {
    detail::put<std::uint32_t>(buf, static_cast<std::uint32_t>(t.name.size()));
    buf += t.name;
    detail::put<std::uint32_t>(buf, static_cast<std::uint32_t>(t.value.rows()));
    detail::put<std::uint32_t>(buf, static_cast<std::uint32_t>(t.value.cols()));
    for (Eigen::Index r = 0; r < t.value.rows(); ++r)
      for (Eigen::Index c = 0; c < t.value.cols(); ++c)
        detail::put<double>(buf, t.value(r, c));
  }
  detail::write_file_atomic(path, buf);
}

inline DenoiserModel load_checkpoint(const std::string& path, CheckpointMeta* meta = nullptr) {
  std::string buf = detail::read_file(path);
  std::size_t at = 0;
  if (buf.size() < 16 || std::memcmp(buf.data(), detail::kCheckpointMagic, 4) != 0)
    throw ValidationError(path + ": not a stablepose checkpoint");
  at = 4;
  auto version = detail::take<std::uint32_t>(buf, at);
  if (version != detail::kCheckpointVersion)
    throw ValidationError(path + ": unsupported checkpoint version " + std::to_string(version));
  auto hlen = detail::take<std::uint64_t>(buf, at);
  if (at + hlen > buf.size()) throw ValidationError("truncated checkpoint");
  nlohmann::json header = nlohmann::json::parse(buf.substr(at, hlen), nullptr, false);
  if (header.is_discarded()) throw ValidationError(path + ": bad checkpoint header");
  at += hlen;

  DenoiserModel model;
  model.config = detail::config_from_json(header.at("config"));
  if (meta) {
    meta->profile = header.at("profile").get<std::string>();
    meta->seed = header.at("seed").get<std::uint64_t>();
    meta->steps = header.at("steps").get<int>();
    meta->holdout_shape = header.at("holdout_shape").get<std::string>();
    meta->dataset_ids = header.at("dataset_ids").get<std::vector<std::string>>();
    meta->catalog_hash = header.at("catalog_hash").get<std::uint64_t>();
  }

  auto count = detail::take<std::uint32_t>(buf, at);
  for (std::uint32_t i = 0; i < count; ++i) {
    auto nlen = detail::take<std::uint32_t>(buf, at);
    if (at + nlen > buf.size()) throw ValidationError("truncated checkpoint");
    NamedTensor t;
    t.name = buf.substr(at, nlen);
    at += nlen;
    auto rows = detail::take<std::uint32_t>(buf, at);
    auto cols = detail::take<std::uint32_t>(buf, at);
    t.value.resize(rows, cols);
    for (std::uint32_t r = 0; r < rows; ++r)
      for (std::uint32_t c = 0; c < cols; ++c) t.value(r, c) = detail::take<double>(buf, at);
    model.tensors.push_back(std::move(t));
  }
  if (at != buf.size()) throw ValidationError(path + ": trailing bytes in checkpoint");

  // Shape consistency against the declared config.
  DenoiserModel probe = DenoiserModel::init(model.config, 0);
  if (probe.tensors.size() != model.tensors.size())
    throw ValidationError(path + ": tensor count does not match config");
  for (std::size_t i = 0; i < probe.tensors.size(); ++i) {
    if (probe.tensors[i].name != model.tensors[i].name ||
        probe.tensors[i].value.rows() != model.tensors[i].value.rows() ||
        probe.tensors[i].value.cols() != model.tensors[i].value.cols())
      throw ValidationError(path + ": tensor " + model.tensors[i].name +
                            " does not match config");
  }
  return model;
}

}  // namespace stablepose
