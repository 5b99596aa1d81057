#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "handadapt/autodiff/tensor.hpp"

namespace handadapt {

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

// On-disk layout:
//   8 bytes   magic "HACKPT01"
//   8 bytes   header length L, little-endian u64
//   L bytes   UTF-8 JSON header {"format_version", "tensors": [{name, shape,
//             offset, nbytes}], "meta": {...}}
//   payload   little-endian f64 data; offsets are relative to payload start
struct Checkpoint {
  std::vector<NamedTensor> tensors;
  nlohmann::json meta = nlohmann::json::object();
};

inline constexpr char kCheckpointMagic[8] = {'H', 'A', 'C', 'K', 'P', 'T', '0', '1'};
inline constexpr int kCheckpointVersion = 1;

namespace detail {

inline void put_u64_le(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

inline std::uint64_t get_u64_le(const unsigned char* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return v;
}

}  // namespace detail

inline std::string serialize_checkpoint(const Checkpoint& ckpt) {
  nlohmann::json header;
  header["format_version"] = kCheckpointVersion;
  header["meta"] = ckpt.meta;
  header["tensors"] = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& nt : ckpt.tensors) {
    const std::uint64_t nbytes = nt.tensor.numel() * 8;
    header["tensors"].push_back({{"name", nt.name}, {"shape", nt.tensor.shape()}, {"offset", offset}, {"nbytes", nbytes}});
    offset += nbytes;
  }
  const std::string header_text = header.dump();
  std::string out(kCheckpointMagic, 8);
  detail::put_u64_le(out, header_text.size());
  out += header_text;
  out.reserve(out.size() + offset);
  for (const auto& nt : ckpt.tensors) {
    for (double v : nt.tensor.data()) detail::put_u64_le(out, std::bit_cast<std::uint64_t>(v));
  }
  return out;
}

inline Checkpoint deserialize_checkpoint(const std::string& bytes) {
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kCheckpointMagic, 8) != 0) {
    throw std::runtime_error("checkpoint: bad magic");
  }
  const auto* raw = reinterpret_cast<const unsigned char*>(bytes.data());
  const std::uint64_t header_len = detail::get_u64_le(raw + 8);
  if (16 + header_len > bytes.size()) throw std::runtime_error("checkpoint: truncated header");
  const auto header = nlohmann::json::parse(bytes.begin() + 16, bytes.begin() + 16 + static_cast<long>(header_len));
  if (header.at("format_version").get<int>() != kCheckpointVersion) {
    throw std::runtime_error("checkpoint: unsupported format_version");
  }
  const std::uint64_t payload = 16 + header_len;
  Checkpoint ckpt;
  ckpt.meta = header.value("meta", nlohmann::json::object());
  for (const auto& entry : header.at("tensors")) {
    Shape shape = entry.at("shape").get<Shape>();
    const std::uint64_t offset = entry.at("offset").get<std::uint64_t>();
    const std::uint64_t nbytes = entry.at("nbytes").get<std::uint64_t>();
    if (nbytes != shape_numel(shape) * 8 || payload + offset + nbytes > bytes.size()) {
      throw std::runtime_error("checkpoint: inconsistent entry " + entry.at("name").get<std::string>());
    }
    std::vector<double> data(shape_numel(shape));
    for (std::size_t i = 0; i < data.size(); ++i) {
      data[i] = std::bit_cast<double>(detail::get_u64_le(raw + payload + offset + 8 * i));
    }
    ckpt.tensors.push_back({entry.at("name").get<std::string>(), Tensor(std::move(shape), std::move(data))});
  }
  return ckpt;
}

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("checkpoint: cannot write " + path.string());
  const std::string bytes = serialize_checkpoint(ckpt);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("checkpoint: write failed for " + path.string());
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("checkpoint: cannot open " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_checkpoint(bytes);
}

}  // namespace handadapt
