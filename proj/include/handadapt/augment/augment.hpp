#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <vector>

#include <json.hpp>

#include "handadapt/autodiff/tensor.hpp"
#include "handadapt/geometry.hpp"
#include "handadapt/rng.hpp"

namespace handadapt {

enum class AugStrength { kWeak, kStrong };

struct AugConfig {
  double flip_prob = 0.5;
  double weak_rotation_deg = 30.0;
  double strong_rotation_deg = 45.0;
  double translate_frac = 0.1;  // of the image width, each axis
  double blur_sigma_max = 1.2;  // px
  double blur_prob = 0.5;
  double brightness_min = 0.7, brightness_max = 1.3;
  double contrast_min = 0.7, contrast_max = 1.3;
  double hue_shift_max = 0.1;   // radians/pi in YIQ chroma plane
  double saturation_min = 0.7, saturation_max = 1.3;
  std::size_t cutout_max_boxes = 2;
  double cutout_max_area_frac = 0.25;

  void validate() const {
    auto range = [](double lo, double hi, const char* what) {
      if (!(lo <= hi)) throw ConfigError(std::string("aug_config: empty range for ") + what);
    };
    if (flip_prob < 0 || flip_prob > 1 || blur_prob < 0 || blur_prob > 1) throw ConfigError("aug_config: probabilities must be in [0,1]");
    if (weak_rotation_deg < 0 || strong_rotation_deg < 0 || translate_frac < 0 || blur_sigma_max < 0 || hue_shift_max < 0) {
      throw ConfigError("aug_config: magnitudes must be non-negative");
    }
    range(brightness_min, brightness_max, "brightness");
    range(contrast_min, contrast_max, "contrast");
    range(saturation_min, saturation_max, "saturation");
    if (brightness_min < 0 || contrast_min < 0 || saturation_min < 0) throw ConfigError("aug_config: gains must be non-negative");
    if (cutout_max_area_frac < 0 || cutout_max_area_frac > 1) throw ConfigError("aug_config: cutout area fraction must be in [0,1]");
  }
};

// Pixel box [x0, x1) x [y0, y1).
struct CutoutBox {
  std::size_t x0 = 0, y0 = 0, x1 = 0, y1 = 0;
};

struct GeometricAug {
  bool flip = false;
  double rotation_deg = 0.0;
  double dx = 0.0, dy = 0.0;  // translation in image pixels

  bool is_identity() const { return !flip && rotation_deg == 0.0 && dx == 0.0 && dy == 0.0; }
};

struct PhotometricAug {
  double blur_sigma = 0.0;
  double brightness_gain = 1.0;
  double contrast_gain = 1.0;
  double hue_shift = 0.0;
  double saturation_gain = 1.0;
  std::vector<CutoutBox> cutout_boxes;
};

/// A paired transform: the geometric part is shared by the image and every
/// label field, the photometric part only touches the image.
struct AugPair {
  GeometricAug geometric;
  PhotometricAug photometric;
  AugStrength strength = AugStrength::kWeak;

  static AugPair identity() { return {}; }
};

/// Forward point map p' = A p + t, in the coordinates of one raster.
struct Affine {
  double a11 = 1, a12 = 0, a21 = 0, a22 = 1, tx = 0, ty = 0;

  Point2 apply(Point2 p) const { return {a11 * p.x + a12 * p.y + tx, a21 * p.x + a22 * p.y + ty}; }

  Affine inverse() const {
    const double det = a11 * a22 - a12 * a21;
    Affine inv{a22 / det, -a12 / det, -a21 / det, a11 / det, 0, 0};
    inv.tx = -(inv.a11 * tx + inv.a12 * ty);
    inv.ty = -(inv.a21 * tx + inv.a22 * ty);
    return inv;
  }
};

/// Geometric map on a raster of size width x height that spans the same
/// extent as an image of image_width pixels: flip x -> W-1-x, then rotate
/// counterclockwise (in x-right / y-down coordinates, x' = cx + c(x-cx) -
/// s(y-cy)) about the centre, then translate.
inline Affine geometric_affine(const GeometricAug& geo, std::size_t width, std::size_t height, std::size_t image_width) {
  const double s = static_cast<double>(width) / static_cast<double>(image_width);
  const double cx = (static_cast<double>(width) - 1.0) / 2.0;
  const double cy = (static_cast<double>(height) - 1.0) / 2.0;
  const double th = geo.rotation_deg * std::numbers::pi / 180.0;
  double c = std::cos(th), sn = std::sin(th);
  if (std::fmod(geo.rotation_deg, 90.0) == 0.0) {  // quarter turns map pixel centres exactly
    c = std::round(c);
    sn = std::round(sn);
  }
  const double f = geo.flip ? -1.0 : 1.0;  // flip about cx is x -> 2cx - x
  // p' = R (F p - c) + c + t, with F p = (2cx - x, y) when flipped.
  Affine m;
  m.a11 = c * f;
  m.a12 = -sn;
  m.a21 = sn * f;
  m.a22 = c;
  const double fx0 = geo.flip ? 2.0 * cx : 0.0;  // F p = (f x + fx0, y)
  m.tx = c * (fx0 - cx) + sn * cy + cx + geo.dx * s;
  m.ty = sn * (fx0 - cx) - c * cy + cy + geo.dy * s;
  return m;
}

inline AugPair sample_aug(Rng& rng, AugStrength strength, const AugConfig& cfg, std::size_t image_size) {
  AugPair a;
  a.strength = strength;
  const double rot = strength == AugStrength::kStrong ? cfg.strong_rotation_deg : cfg.weak_rotation_deg;
  a.geometric.flip = rng.bernoulli(cfg.flip_prob);
  a.geometric.rotation_deg = rng.uniform(-rot, rot);
  const double t = cfg.translate_frac * static_cast<double>(image_size);
  a.geometric.dx = rng.uniform(-t, t);
  a.geometric.dy = rng.uniform(-t, t);
  a.photometric.blur_sigma = rng.bernoulli(cfg.blur_prob) ? rng.uniform(0.0, cfg.blur_sigma_max) : 0.0;
  if (strength == AugStrength::kStrong) {
    a.photometric.brightness_gain = rng.uniform(cfg.brightness_min, cfg.brightness_max);
    a.photometric.contrast_gain = rng.uniform(cfg.contrast_min, cfg.contrast_max);
    a.photometric.hue_shift = rng.uniform(-cfg.hue_shift_max, cfg.hue_shift_max);
    a.photometric.saturation_gain = rng.uniform(cfg.saturation_min, cfg.saturation_max);
    const std::size_t boxes = rng.uniform_index(cfg.cutout_max_boxes + 1);
    const double max_side = std::sqrt(cfg.cutout_max_area_frac) * static_cast<double>(image_size);
    for (std::size_t i = 0; i < boxes; ++i) {
      const auto bw = static_cast<std::size_t>(std::floor(rng.uniform(1.0, std::max(1.0, max_side))));
      const auto bh = static_cast<std::size_t>(std::floor(rng.uniform(1.0, std::max(1.0, max_side))));
      const std::size_t x0 = rng.uniform_index(image_size - std::min(bw, image_size) + 1);
      const std::size_t y0 = rng.uniform_index(image_size - std::min(bh, image_size) + 1);
      a.photometric.cutout_boxes.push_back({x0, y0, std::min(image_size, x0 + bw), std::min(image_size, y0 + bh)});
    }
  }
  return a;
}

namespace detail {

// Bilinear sample of one plane with zero padding outside [0,W-1]x[0,H-1].
inline double bilinear(const double* plane, std::size_t w, std::size_t h, double x, double y) {
  const double fx = std::floor(x), fy = std::floor(y);
  const long x0 = static_cast<long>(fx), y0 = static_cast<long>(fy);
  const double ax = x - fx, ay = y - fy;
  auto at = [&](long xx, long yy) -> double {
    if (xx < 0 || yy < 0 || xx >= static_cast<long>(w) || yy >= static_cast<long>(h)) return 0.0;
    return plane[static_cast<std::size_t>(yy) * w + static_cast<std::size_t>(xx)];
  };
  double v = 0.0;
  if (ax == 0.0 && ay == 0.0) return at(x0, y0);
  v += (1 - ax) * (1 - ay) * at(x0, y0);
  v += ax * (1 - ay) * at(x0 + 1, y0);
  v += (1 - ax) * ay * at(x0, y0 + 1);
  v += ax * ay * at(x0 + 1, y0 + 1);
  return v;
}

// Warps consecutive h x w planes by the inverse of forward_map.
inline void warp_planes(const double* src, double* dst, std::size_t planes, std::size_t h, std::size_t w,
                        const Affine& forward_map) {
  const Affine inv = forward_map.inverse();
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      const Point2 s = inv.apply({static_cast<double>(x), static_cast<double>(y)});
      for (std::size_t p = 0; p < planes; ++p) dst[p * h * w + y * w + x] = bilinear(src + p * h * w, w, h, s.x, s.y);
    }
}

inline void gaussian_blur_plane(double* plane, std::size_t h, std::size_t w, double sigma) {
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> k(2 * radius + 1);
  double z = 0;
  for (int i = -radius; i <= radius; ++i) z += (k[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma)));
  for (double& v : k) v /= z;
  std::vector<double> tmp(h * w);
  auto clampi = [](long v, long hi) { return std::clamp(v, 0L, hi - 1); };
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      double s = 0;
      for (int i = -radius; i <= radius; ++i) s += k[i + radius] * plane[y * w + clampi(static_cast<long>(x) + i, static_cast<long>(w))];
      tmp[y * w + x] = s;
    }
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      double s = 0;
      for (int i = -radius; i <= radius; ++i) s += k[i + radius] * tmp[clampi(static_cast<long>(y) + i, static_cast<long>(h)) * w + x];
      plane[y * w + x] = s;
    }
}

}  // namespace detail

/// T_x: geometric warp (bilinear, zero padding), then photometric ops, then
/// clamp to [0,1]. image is [H,W,C].
inline Tensor apply_image(const AugPair& aug, const Tensor& image) {
  if (image.rank() != 3) throw ShapeError("apply_image: expected [H,W,C], got " + shape_str(image.shape()));
  const std::size_t h = image.dim(0), w = image.dim(1), c = image.dim(2);
  // Work in planar layout.
  std::vector<double> planes(c * h * w);
  for (std::size_t i = 0; i < h * w; ++i)
    for (std::size_t ch = 0; ch < c; ++ch) planes[ch * h * w + i] = image[i * c + ch];

  if (!aug.geometric.is_identity()) {
    std::vector<double> warped(planes.size());
    detail::warp_planes(planes.data(), warped.data(), c, h, w, geometric_affine(aug.geometric, w, h, w));
    planes.swap(warped);
  }
  const auto& ph = aug.photometric;
  if (ph.blur_sigma > 1e-3) {
    for (std::size_t ch = 0; ch < c; ++ch) detail::gaussian_blur_plane(&planes[ch * h * w], h, w, ph.blur_sigma);
  }
  if (ph.brightness_gain != 1.0) {
    for (double& v : planes) v *= ph.brightness_gain;
  }
  if (ph.contrast_gain != 1.0) {
    double m = 0;
    for (double v : planes) m += v;
    m /= static_cast<double>(planes.size());
    for (double& v : planes) v = m + ph.contrast_gain * (v - m);
  }
  if (c == 3 && (ph.hue_shift != 0.0 || ph.saturation_gain != 1.0)) {
    // Rotate and scale the chroma plane in YIQ.
    const double th = ph.hue_shift * std::numbers::pi;
    const double cs = std::cos(th) * ph.saturation_gain, sn = std::sin(th) * ph.saturation_gain;
    for (std::size_t i = 0; i < h * w; ++i) {
      double& r = planes[i];
      double& g = planes[h * w + i];
      double& b = planes[2 * h * w + i];
      const double yy = 0.299 * r + 0.587 * g + 0.114 * b;
      const double ii = 0.596 * r - 0.274 * g - 0.322 * b;
      const double qq = 0.211 * r - 0.523 * g + 0.312 * b;
      const double i2 = cs * ii - sn * qq, q2 = sn * ii + cs * qq;
      r = yy + 0.956 * i2 + 0.621 * q2;
      g = yy - 0.272 * i2 - 0.647 * q2;
      b = yy - 1.106 * i2 + 1.703 * q2;
    }
  }
  for (const auto& box : ph.cutout_boxes) {
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t y = box.y0; y < std::min(box.y1, h); ++y)
        for (std::size_t x = box.x0; x < std::min(box.x1, w); ++x) planes[ch * h * w + y * w + x] = 0.0;
  }

  Tensor out(image.shape());
  for (std::size_t i = 0; i < h * w; ++i)
    for (std::size_t ch = 0; ch < c; ++ch) out[i * c + ch] = std::clamp(planes[ch * h * w + i], 0.0, 1.0);
  return out;
}

struct AugmentedKeypoints {
  Keypoints coords;
  std::vector<bool> out_of_frame;
};

/// T_y^p on pixel coordinates of an image_width x image_height frame.
inline AugmentedKeypoints apply_keypoints(const AugPair& aug, const Keypoints& coords, std::size_t image_width,
                                          std::size_t image_height) {
  const Affine m = geometric_affine(aug.geometric, image_width, image_height, image_width);
  AugmentedKeypoints out{Keypoints(coords.size()), std::vector<bool>(coords.size())};
  for (std::size_t k = 0; k < coords.size(); ++k) {
    out.coords[k] = aug.geometric.is_identity() ? coords[k] : m.apply(coords[k]);
    out.out_of_frame[k] = !in_frame(out.coords[k], image_width, image_height);
  }
  return out;
}

enum class FieldKind { kContinuous, kBinary };

/// T_y for rasters ([..., h, w], e.g. heatmap stacks at grid resolution or
/// masks at image resolution). Geometric only; binary fields are warped
/// bilinearly and re-thresholded at 0.5.
inline Tensor apply_spatial(const AugPair& aug, const Tensor& field, std::size_t image_width,
                            FieldKind kind = FieldKind::kContinuous) {
  if (field.rank() < 2) throw ShapeError("apply_spatial: expected [...,H,W], got " + shape_str(field.shape()));
  if (aug.geometric.is_identity()) return Tensor(field.shape(), field.storage());
  const std::size_t h = field.dim(field.rank() - 2), w = field.dim(field.rank() - 1);
  const std::size_t planes = field.numel() / (h * w);
  Tensor out(field.shape());
  detail::warp_planes(field.data().data(), out.data().data(), planes, h, w, geometric_affine(aug.geometric, w, h, image_width));
  if (kind == FieldKind::kBinary) {
    for (double& v : out.data()) v = v >= 0.5 ? 1.0 : 0.0;
  }
  return out;
}

inline void to_json(nlohmann::json& j, const AugConfig& c) {
  j = {{"flip_prob", c.flip_prob},
       {"weak_rotation_deg", c.weak_rotation_deg},
       {"strong_rotation_deg", c.strong_rotation_deg},
       {"translate_frac", c.translate_frac},
       {"blur_sigma_max", c.blur_sigma_max},
       {"blur_prob", c.blur_prob},
       {"brightness_range", {c.brightness_min, c.brightness_max}},
       {"contrast_range", {c.contrast_min, c.contrast_max}},
       {"hue_shift_max", c.hue_shift_max},
       {"saturation_range", {c.saturation_min, c.saturation_max}},
       {"cutout_max_boxes", c.cutout_max_boxes},
       {"cutout_max_area_frac", c.cutout_max_area_frac}};
}

}  // namespace handadapt
