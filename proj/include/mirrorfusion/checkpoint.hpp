#pragma once

// Checkpoint container:
//
//   bytes 0..7   magic "MFCKPT\0\1"
//   u32          format version (1)
//   u32          header length N
//   N bytes      UTF-8 JSON header {"format", "version", "config", "meta", "tensors": [name...]}
//   u32          tensor count
//   per tensor:  u32 name length, name bytes, u32 rows, u32 cols,
//                rows*cols float32 values (row-major)
//
// All integers and floats are little-endian.

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mirrorfusion/dual_branch.hpp"

namespace mf {

inline constexpr std::array<char, 8> kCheckpointMagic{'M', 'F', 'C', 'K', 'P', 'T', '\0', '\1'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

inline void put_u32(std::ostream& os, std::uint32_t v) { os.write(reinterpret_cast<const char*>(&v), 4); }

inline std::uint32_t get_u32(std::istream& is, const std::string& path) {
  std::uint32_t v = 0;
  if (!is.read(reinterpret_cast<char*>(&v), 4)) throw IoError(path + ": truncated checkpoint");
  return v;
}

}  // namespace detail

struct CheckpointData {
  UNetConfig config;
  nlohmann::json meta;
  std::map<std::string, nn::Mat<float>> tensors;
};

template <typename T>
void save_checkpoint(const std::filesystem::path& path, DualBranchModel<T>& model,
                     const nlohmann::json& meta = nlohmann::json::object()) {
  std::vector<const nn::Param<T>*> params;
  model.visit([&](nn::Param<T>& p) { params.push_back(&p); });
  nlohmann::json header{{"format", "mirrorfusion-checkpoint"},
                        {"version", kCheckpointVersion},
                        {"config", model.config()},
                        {"meta", meta},
                        {"tensors", nlohmann::json::array()}};
  for (const auto* p : params) header["tensors"].push_back(p->name);
  const std::string text = header.dump();

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError(path.string() + ": cannot open for writing");
  os.write(kCheckpointMagic.data(), kCheckpointMagic.size());
  detail::put_u32(os, kCheckpointVersion);
  detail::put_u32(os, static_cast<std::uint32_t>(text.size()));
  os.write(text.data(), static_cast<std::streamsize>(text.size()));
  detail::put_u32(os, static_cast<std::uint32_t>(params.size()));
  std::vector<float> buf;
  for (const auto* p : params) {
    detail::put_u32(os, static_cast<std::uint32_t>(p->name.size()));
    os.write(p->name.data(), static_cast<std::streamsize>(p->name.size()));
    detail::put_u32(os, static_cast<std::uint32_t>(p->value.rows()));
    detail::put_u32(os, static_cast<std::uint32_t>(p->value.cols()));
    buf.resize(static_cast<std::size_t>(p->value.size()));
    for (std::size_t i = 0; i < buf.size(); ++i) buf[i] = static_cast<float>(p->value.data()[i]);
    os.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size() * 4));
  }
  if (!os) throw IoError(path.string() + ": write failed");
}

inline CheckpointData read_checkpoint(const std::filesystem::path& path) {
  const std::string ps = path.string();
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError(ps + ": cannot open checkpoint");
  std::array<char, 8> magic{};
  if (!is.read(magic.data(), magic.size()) || magic != kCheckpointMagic) {
    throw IoError(ps + ": not a checkpoint (bad magic)");
  }
  const std::uint32_t version = detail::get_u32(is, ps);
  if (version != kCheckpointVersion) throw IoError(ps + ": unsupported checkpoint version " + std::to_string(version));
  const std::uint32_t hlen = detail::get_u32(is, ps);
  std::string text(hlen, '\0');
  if (!is.read(text.data(), hlen)) throw IoError(ps + ": truncated header");
  CheckpointData out;
  try {
    const auto header = nlohmann::json::parse(text);
    out.config = header.at("config").get<UNetConfig>();
    out.meta = header.value("meta", nlohmann::json::object());
  } catch (const nlohmann::json::exception& e) {
    throw IoError(ps + ": malformed header: " + e.what());
  }
  const std::uint32_t count = detail::get_u32(is, ps);
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t nlen = detail::get_u32(is, ps);
    std::string name(nlen, '\0');
    if (!is.read(name.data(), nlen)) throw IoError(ps + ": truncated tensor name");
    const std::uint32_t rows = detail::get_u32(is, ps);
    const std::uint32_t cols = detail::get_u32(is, ps);
    nn::Mat<float> m(rows, cols);
    if (!is.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(m.size()) * 4)) {
      throw IoError(ps + ": truncated tensor " + name);
    }
    out.tensors.emplace(std::move(name), std::move(m));
  }
  return out;
}

/// Rebuilds a model from a checkpoint; every parameter must be present with
/// a matching shape.
template <typename T>
DualBranchModel<T> load_checkpoint(const std::filesystem::path& path, nlohmann::json* meta = nullptr) {
  CheckpointData data = read_checkpoint(path);
  auto model = DualBranchModel<T>::build(data.config, 0);
  model.visit([&](nn::Param<T>& p) {
    const auto it = data.tensors.find(p.name);
    if (it == data.tensors.end()) throw IoError(path.string() + ": missing tensor " + p.name);
    if (it->second.rows() != p.value.rows() || it->second.cols() != p.value.cols()) {
      throw IoError(path.string() + ": shape mismatch for tensor " + p.name);
    }
    p.value = it->second.template cast<T>();
  });
  if (meta != nullptr) *meta = data.meta;
  return model;
}

}  // namespace mf
