#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <string>
#include <utility>
#include <vector>

#include "handadapt/autodiff/tensor.hpp"
#include "handadapt/geometry.hpp"
#include "handadapt/rng.hpp"

namespace handadapt {

inline constexpr std::size_t kNumJoints = 21;
inline constexpr std::size_t kNumFingers = 5;

// Joint layout: 0 = wrist, then per finger (thumb, index, middle, ring,
// pinky) MCP, PIP, DIP, TIP.
inline constexpr std::size_t joint_index(std::size_t finger, std::size_t level) { return 1 + finger * 4 + level; }

using Bone = std::pair<std::size_t, std::size_t>;

inline const std::vector<Bone>& hand_bones() {
  static const std::vector<Bone> bones = [] {
    std::vector<Bone> b;
    for (std::size_t f = 0; f < kNumFingers; ++f) {
      b.emplace_back(0, joint_index(f, 0));
      for (std::size_t l = 0; l < 3; ++l) b.emplace_back(joint_index(f, l), joint_index(f, l + 1));
    }
    return b;
  }();
  return bones;
}

enum class Background { kPlain, kTextured, kSceneryNoise };

struct DomainConfig {
  std::string name = "source";
  Background background = Background::kPlain;
  std::array<double, 3> background_color{0.85, 0.86, 0.9};
  double background_contrast = 0.1;  // colour jitter (plain) or texture / scenery amplitude
  double light_gain_min = 0.9, light_gain_max = 1.1;
  double light_bias_min = 0.0, light_bias_max = 0.05;
  double rotation_range_deg = 20.0;  // palm rotation drawn from [-r, r]
  double scale_min = 0.9, scale_max = 1.1;
  std::size_t occluder_count_min = 0, occluder_count_max = 0;
  double occluder_radius_min = 2.0, occluder_radius_max = 4.0;  // px at 32x32, scaled with image size
  double noise_sigma = 0.02;
  std::uint64_t seed = 1;
  std::size_t image_size = 32;

  void validate() const {
    if (light_gain_min > light_gain_max || light_bias_min > light_bias_max || scale_min > scale_max ||
        occluder_count_min > occluder_count_max || occluder_radius_min > occluder_radius_max) {
      throw ConfigError("domain " + name + ": empty range");
    }
    if (rotation_range_deg < 0 || noise_sigma < 0 || background_contrast < 0 || scale_min <= 0 || light_gain_min < 0) {
      throw ConfigError("domain " + name + ": negative magnitude");
    }
    if (image_size < 16 || image_size % 4 != 0) throw ConfigError("domain " + name + ": image_size must be a multiple of 4, >= 16");
  }

  static DomainConfig default_source() { return {}; }

  static DomainConfig default_target() {
    DomainConfig c;
    c.name = "target";
    c.background = Background::kTextured;
    c.background_color = {0.45, 0.5, 0.6};
    c.background_contrast = 0.15;
    c.light_gain_min = 0.6;
    c.light_gain_max = 0.9;
    c.light_bias_min = 0.0;
    c.light_bias_max = 0.05;
    c.rotation_range_deg = 70.0;
    c.scale_min = 0.85;
    c.scale_max = 1.15;
    c.occluder_count_min = 0;
    c.occluder_count_max = 2;
    c.noise_sigma = 0.03;
    c.seed = 2;
    return c;
  }
};

struct Skeleton {
  Keypoints joints;  // kNumJoints entries, pixel coordinates

  static const std::vector<Bone>& bones() { return hand_bones(); }
};

/// A 2-D kinematic hand: palm placement, rotation and scale from the domain,
/// then per-finger spread and flexion within anatomical ranges.
inline Skeleton sample_skeleton(Rng& rng, const DomainConfig& domain) {
  // Local frame in units of image_size/32 px, fingers pointing to -y.
  struct FingerModel {
    Point2 mcp;
    double direction_deg;  // from -y, positive towards +x
    std::array<double, 3> lengths;
    double spread_deg;
    double flex_max_deg;
  };
  static const std::array<FingerModel, kNumFingers> kFingers{{
      {{-3.6, 3.0}, -48.0, {2.6, 2.1, 1.8}, 10.0, 35.0},
      {{-2.3, -1.2}, -10.0, {3.1, 2.0, 1.6}, 6.0, 45.0},
      {{-0.5, -1.6}, 0.0, {3.4, 2.2, 1.7}, 5.0, 45.0},
      {{1.3, -1.3}, 10.0, {3.1, 2.0, 1.6}, 6.0, 45.0},
      {{2.9, -0.4}, 22.0, {2.5, 1.7, 1.4}, 8.0, 45.0},
  }};
  const Point2 kWrist{0.3, 6.5};

  const double unit = static_cast<double>(domain.image_size) / 32.0;
  const double center = (static_cast<double>(domain.image_size) - 1.0) / 2.0;
  const double scale = rng.uniform(domain.scale_min, domain.scale_max) * unit;
  const double rot = rng.uniform(-domain.rotation_range_deg, domain.rotation_range_deg) * std::numbers::pi / 180.0;
  const Point2 origin{center + rng.uniform(-1.5, 1.5) * unit, center + 0.5 * unit + rng.uniform(-1.5, 1.5) * unit};
  const double c = std::cos(rot), s = std::sin(rot);
  auto place = [&](Point2 local) {
    return Point2{origin.x + scale * (c * local.x - s * local.y), origin.y + scale * (s * local.x + c * local.y)};
  };

  Skeleton sk;
  sk.joints.resize(kNumJoints);
  sk.joints[0] = place(kWrist);
  for (std::size_t f = 0; f < kNumFingers; ++f) {
    const auto& fm = kFingers[f];
    Point2 p = fm.mcp;
    sk.joints[joint_index(f, 0)] = place(p);
    double dir = (fm.direction_deg + rng.uniform(-fm.spread_deg, fm.spread_deg)) * std::numbers::pi / 180.0;
    // Flexion bends every segment further towards the palm side (towards
    // the thumb for the thumb, towards the little finger otherwise) and
    // foreshortens it as the finger curls out of the image plane.
    const double flex = rng.uniform(0.0, fm.flex_max_deg) * std::numbers::pi / 180.0;
    const double bend = f == 0 ? -1.0 : 0.35;
    for (std::size_t l = 0; l < 3; ++l) {
      const double len = fm.lengths[l] * (1.0 - 0.35 * std::sin(flex) * static_cast<double>(l + 1) / 3.0);
      p = {p.x + len * std::sin(dir), p.y - len * std::cos(dir)};
      sk.joints[joint_index(f, l + 1)] = place(p);
      dir += bend * flex * 0.5;
    }
  }
  return sk;
}

struct Sample {
  Tensor image;        // [H,W,3] in [0,1]
  Tensor mask;         // [H,W] in {0,1}
  Keypoints keypoints; // kNumJoints pixel coordinates
};

namespace detail {

inline double segment_distance(Point2 p, Point2 a, Point2 b) {
  const double vx = b.x - a.x, vy = b.y - a.y;
  const double len2 = vx * vx + vy * vy;
  double t = len2 > 0 ? ((p.x - a.x) * vx + (p.y - a.y) * vy) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  return distance(p, {a.x + t * vx, a.y + t * vy});
}

// Values that survive the f32 dataset files unchanged. The volatile keeps
// GCC 11 at -O3 from folding the float round trip away.
inline double to_f32(double v) {
  volatile float f = static_cast<float>(v);
  return static_cast<double>(f);
}

inline void fill_background(std::vector<std::array<double, 3>>& px, std::size_t n, const DomainConfig& d, Rng& rng) {
  const auto& base = d.background_color;
  switch (d.background) {
    case Background::kPlain: {
      // One colour per image, jittered per channel.
      std::array<double, 3> c = base;
      for (auto& v : c) v += rng.uniform(-d.background_contrast, d.background_contrast);
      for (auto& p : px) p = c;
      break;
    }
    case Background::kTextured: {
      // Two oriented sinusoidal gratings with random phase and colour.
      std::array<std::array<double, 3>, 2> tint;
      std::array<double, 2> fx, fy, ph;
      for (int k = 0; k < 2; ++k) {
        for (auto& t : tint[k]) t = rng.uniform(-d.background_contrast, d.background_contrast);
        const double ang = rng.uniform(0.0, std::numbers::pi);
        const double freq = rng.uniform(2.0, 5.0) * 2.0 * std::numbers::pi / static_cast<double>(n);
        fx[k] = freq * std::cos(ang);
        fy[k] = freq * std::sin(ang);
        ph[k] = rng.uniform(0.0, 2.0 * std::numbers::pi);
      }
      for (std::size_t y = 0; y < n; ++y)
        for (std::size_t x = 0; x < n; ++x) {
          auto& p = px[y * n + x];
          p = base;
          for (int k = 0; k < 2; ++k) {
            const double v = std::sin(fx[k] * static_cast<double>(x) + fy[k] * static_cast<double>(y) + ph[k]);
            for (int ch = 0; ch < 3; ++ch) p[ch] += tint[k][ch] * v;
          }
        }
      break;
    }
    case Background::kSceneryNoise: {
      // Coarse random blobs: noise on a 4x4-pixel lattice, bilinearly upsampled.
      const std::size_t cells = n / 4 + 2;
      std::vector<std::array<double, 3>> lattice(cells * cells);
      for (auto& l : lattice)
        for (auto& v : l) v = rng.uniform(-d.background_contrast, d.background_contrast);
      for (std::size_t y = 0; y < n; ++y)
        for (std::size_t x = 0; x < n; ++x) {
          const double gx = static_cast<double>(x) / 4.0, gy = static_cast<double>(y) / 4.0;
          const auto x0 = static_cast<std::size_t>(gx), y0 = static_cast<std::size_t>(gy);
          const double ax = gx - static_cast<double>(x0), ay = gy - static_cast<double>(y0);
          auto& p = px[y * n + x];
          for (int ch = 0; ch < 3; ++ch) {
            p[ch] = base[ch] + (1 - ax) * (1 - ay) * lattice[y0 * cells + x0][ch] + ax * (1 - ay) * lattice[y0 * cells + x0 + 1][ch] +
                    (1 - ax) * ay * lattice[(y0 + 1) * cells + x0][ch] + ax * ay * lattice[(y0 + 1) * cells + x0 + 1][ch];
          }
        }
      break;
    }
  }
}

}  // namespace detail

/// Rasterises a skeleton. The mask is the union of capsules around the
/// bones (thicker for the palm bones); occluders only paint the image.
inline Sample render(const Skeleton& skeleton, const DomainConfig& domain, Rng& rng) {
  const std::size_t n = domain.image_size;
  const double unit = static_cast<double>(n) / 32.0;
  const auto& bones = hand_bones();

  // Bone radii: palm bones wide, finger radius tapering towards the tip.
  std::vector<double> radius(bones.size());
  for (std::size_t b = 0; b < bones.size(); ++b) {
    const std::size_t level = b % 4;  // 0 = wrist-MCP
    radius[b] = unit * (level == 0 ? 1.9 : 1.05 - 0.08 * static_cast<double>(level));
  }

  Sample s;
  s.mask = Tensor({n, n});
  s.image = Tensor({n, n, 3});
  s.keypoints.reserve(skeleton.joints.size());
  for (const auto& j : skeleton.joints) s.keypoints.push_back({detail::to_f32(j.x), detail::to_f32(j.y)});

  std::vector<std::array<double, 3>> px(n * n);
  detail::fill_background(px, n, domain, rng);

  std::array<double, 3> skin{0.92, 0.72, 0.6};
  const double tone = rng.uniform(-0.08, 0.08);
  for (auto& v : skin) v = std::clamp(v + tone, 0.0, 1.0);

  for (std::size_t y = 0; y < n; ++y)
    for (std::size_t x = 0; x < n; ++x) {
      const Point2 p{static_cast<double>(x), static_cast<double>(y)};
      double depth = -1.0;  // largest normalised inset over all capsules
      for (std::size_t b = 0; b < bones.size(); ++b) {
        const double d = detail::segment_distance(p, s.keypoints[bones[b].first], s.keypoints[bones[b].second]);
        if (d <= radius[b]) depth = std::max(depth, 1.0 - d / radius[b]);
      }
      if (depth >= 0.0) {
        s.mask[y * n + x] = 1.0;
        const double shade = 0.7 + 0.3 * std::sqrt(depth);
        for (int ch = 0; ch < 3; ++ch) px[y * n + x][ch] = skin[ch] * shade;
      }
    }

  const double gain = rng.uniform(domain.light_gain_min, domain.light_gain_max);
  const double bias = rng.uniform(domain.light_bias_min, domain.light_bias_max);

  // Occluders sit over the hand, centred near a random joint.
  const std::size_t occluders =
      domain.occluder_count_min + rng.uniform_index(domain.occluder_count_max - domain.occluder_count_min + 1);
  for (std::size_t o = 0; o < occluders; ++o) {
    const Point2 anchor = s.keypoints[1 + rng.uniform_index(kNumJoints - 1)];
    const Point2 c{anchor.x + rng.uniform(-2.0, 2.0) * unit, anchor.y + rng.uniform(-2.0, 2.0) * unit};
    const double r = rng.uniform(domain.occluder_radius_min, domain.occluder_radius_max) * unit;
    std::array<double, 3> color;
    for (auto& v : color) v = rng.uniform(0.1, 0.9);
    for (std::size_t y = 0; y < n; ++y)
      for (std::size_t x = 0; x < n; ++x)
        if (distance({static_cast<double>(x), static_cast<double>(y)}, c) <= r) px[y * n + x] = color;
  }

  for (std::size_t i = 0; i < n * n; ++i)
    for (int ch = 0; ch < 3; ++ch) {
      double v = gain * px[i][ch] + bias;
      if (domain.noise_sigma > 0) v += rng.normal(0.0, domain.noise_sigma);
      s.image[i * 3 + ch] = detail::to_f32(std::clamp(v, 0.0, 1.0));
    }
  return s;
}

/// Sample `index` of a domain; a pure function of (domain, index).
inline Sample generate_sample(const DomainConfig& domain, std::uint64_t index) {
  Rng rng(derive_seed(domain.seed, "synthhands/" + domain.name, index));
  const Skeleton sk = sample_skeleton(rng, domain);
  return render(sk, domain, rng);
}

}  // namespace handadapt
