#pragma once

#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "handadapt/json_reader.hpp"
#include "handadapt/synthhands/hand.hpp"

namespace handadapt {

inline constexpr int kDatasetFormatVersion = 1;

inline const char* background_name(Background b) {
  switch (b) {
    case Background::kPlain: return "plain";
    case Background::kTextured: return "textured";
    case Background::kSceneryNoise: return "scenery-noise";
  }
  return "?";
}

inline Background parse_background(const std::string& s) {
  if (s == "plain") return Background::kPlain;
  if (s == "textured") return Background::kTextured;
  if (s == "scenery-noise") return Background::kSceneryNoise;
  throw ConfigError("unknown background '" + s + "'");
}

inline void to_json(nlohmann::json& j, const DomainConfig& d) {
  j = {{"name", d.name},
       {"background", background_name(d.background)},
       {"background_color", d.background_color},
       {"background_contrast", d.background_contrast},
       {"light_gain_range", {d.light_gain_min, d.light_gain_max}},
       {"light_bias_range", {d.light_bias_min, d.light_bias_max}},
       {"rotation_range_deg", d.rotation_range_deg},
       {"scale_range", {d.scale_min, d.scale_max}},
       {"occluder", {{"count_range", {d.occluder_count_min, d.occluder_count_max}},
                     {"radius_range", {d.occluder_radius_min, d.occluder_radius_max}}}},
       {"noise_sigma", d.noise_sigma},
       {"seed", d.seed},
       {"image_size", d.image_size}};
}

struct Dataset {
  DomainConfig domain;
  std::uint64_t index_offset = 0;
  std::vector<Sample> samples;

  std::size_t size() const { return samples.size(); }
};

/// Samples index_offset .. index_offset+n-1 of a domain, in memory.
inline Dataset generate_dataset(const DomainConfig& domain, std::size_t n, std::uint64_t index_offset = 0) {
  domain.validate();
  Dataset ds{domain, index_offset, {}};
  ds.samples.reserve(n);
  for (std::size_t i = 0; i < n; ++i) ds.samples.push_back(generate_sample(domain, index_offset + i));
  return ds;
}

namespace detail {

template <class T>
void write_le(std::ofstream& out, T v) {
  using U = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint8_t>;
  const U bits = std::bit_cast<U>(v);
  for (std::size_t i = 0; i < sizeof(T); ++i) out.put(static_cast<char>((bits >> (8 * i)) & 0xffu));
}

inline std::vector<unsigned char> read_all(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw std::runtime_error("dataset: cannot open " + p.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline float read_f32(const unsigned char* p) {
  std::uint32_t bits = 0;
  for (int i = 0; i < 4; ++i) bits |= static_cast<std::uint32_t>(p[i]) << (8 * i);
  return std::bit_cast<float>(bits);
}

}  // namespace detail

/// Directory layout:
///   meta.json       counts, shapes, domain config echo, format version
///   images.f32      [n, H, W, 3] little-endian f32
///   masks.u8        [n, H, W]
///   keypoints.f32   [n, 21, 2] (x, y) pixel coordinates
/// Sample i of the directory is generator index index_offset + i.
inline void write_dataset(const Dataset& ds, const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir);
  const std::size_t n = ds.size(), s = ds.domain.image_size;
  nlohmann::json meta = {{"format_version", kDatasetFormatVersion},
                         {"count", n},
                         {"index_offset", ds.index_offset},
                         {"image_shape", {s, s, 3}},
                         {"mask_shape", {s, s}},
                         {"num_joints", kNumJoints},
                         {"domain", ds.domain},
                         {"files", {{"images", "images.f32"}, {"masks", "masks.u8"}, {"keypoints", "keypoints.f32"}}}};
  {
    std::ofstream m(out_dir / "meta.json", std::ios::trunc);
    if (!m) throw std::runtime_error("dataset: cannot write " + (out_dir / "meta.json").string());
    m << meta.dump(2) << '\n';
  }
  std::ofstream img(out_dir / "images.f32", std::ios::binary | std::ios::trunc);
  std::ofstream msk(out_dir / "masks.u8", std::ios::binary | std::ios::trunc);
  std::ofstream kp(out_dir / "keypoints.f32", std::ios::binary | std::ios::trunc);
  if (!img || !msk || !kp) throw std::runtime_error("dataset: cannot write into " + out_dir.string());
  for (const auto& sample : ds.samples) {
    for (double v : sample.image.data()) detail::write_le(img, static_cast<float>(v));
    for (double v : sample.mask.data()) msk.put(static_cast<char>(v != 0.0 ? 1 : 0));
    for (const auto& p : sample.keypoints) {
      detail::write_le(kp, static_cast<float>(p.x));
      detail::write_le(kp, static_cast<float>(p.y));
    }
  }
  if (!img || !msk || !kp) throw std::runtime_error("dataset: write failed in " + out_dir.string());
}

inline Dataset make_dataset(const DomainConfig& domain, std::size_t n, const std::filesystem::path& out_dir,
                            std::uint64_t index_offset = 0) {
  if (n == 0) throw ConfigError("make_dataset: n must be positive");
  Dataset ds = generate_dataset(domain, n, index_offset);
  write_dataset(ds, out_dir);
  return ds;
}

inline DomainConfig domain_from_json(const nlohmann::json& j, const std::string& path) {
  ObjectReader r(j, path);
  DomainConfig d;
  d.name = r.get("name", d.name);
  d.background = parse_background(r.get<std::string>("background", background_name(d.background)));
  d.background_color = r.get("background_color", d.background_color);
  d.background_contrast = r.get("background_contrast", d.background_contrast);
  r.range("light_gain_range", d.light_gain_min, d.light_gain_max);
  r.range("light_bias_range", d.light_bias_min, d.light_bias_max);
  d.rotation_range_deg = r.get("rotation_range_deg", d.rotation_range_deg);
  r.range("scale_range", d.scale_min, d.scale_max);
  if (const auto* occ = r.child("occluder")) {
    ObjectReader o(*occ, r.path("occluder"));
    o.range("count_range", d.occluder_count_min, d.occluder_count_max);
    o.range("radius_range", d.occluder_radius_min, d.occluder_radius_max);
    o.finish();
  }
  d.noise_sigma = r.get("noise_sigma", d.noise_sigma);
  d.seed = r.get("seed", d.seed);
  d.image_size = r.get("image_size", d.image_size);
  r.finish();
  try {
    d.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(path + ": " + e.what());
  }
  return d;
}

inline Dataset load_dataset(const std::filesystem::path& dir) {
  std::ifstream m(dir / "meta.json");
  if (!m) throw std::runtime_error("dataset: missing " + (dir / "meta.json").string());
  const auto meta = nlohmann::json::parse(m);
  if (meta.at("format_version").get<int>() != kDatasetFormatVersion) throw std::runtime_error("dataset: unsupported format_version");
  Dataset ds;
  ds.domain = domain_from_json(meta.at("domain"), "meta.domain");
  ds.index_offset = meta.at("index_offset").get<std::uint64_t>();
  const std::size_t n = meta.at("count").get<std::size_t>();
  const std::size_t s = ds.domain.image_size;
  const std::size_t k = meta.at("num_joints").get<std::size_t>();
  const auto img = detail::read_all(dir / "images.f32");
  const auto msk = detail::read_all(dir / "masks.u8");
  const auto kp = detail::read_all(dir / "keypoints.f32");
  if (img.size() != n * s * s * 3 * 4 || msk.size() != n * s * s || kp.size() != n * k * 2 * 4) {
    throw std::runtime_error("dataset: file sizes in " + dir.string() + " do not match meta.json");
  }
  ds.samples.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    Sample& smp = ds.samples[i];
    smp.image = Tensor({s, s, 3});
    for (std::size_t j = 0; j < s * s * 3; ++j) smp.image[j] = detail::read_f32(&img[(i * s * s * 3 + j) * 4]);
    smp.mask = Tensor({s, s});
    for (std::size_t j = 0; j < s * s; ++j) smp.mask[j] = msk[i * s * s + j] ? 1.0 : 0.0;
    smp.keypoints.resize(k);
    for (std::size_t j = 0; j < k; ++j) {
      smp.keypoints[j] = {detail::read_f32(&kp[((i * k + j) * 2) * 4]), detail::read_f32(&kp[((i * k + j) * 2 + 1) * 4])};
    }
  }
  return ds;
}

}  // namespace handadapt
