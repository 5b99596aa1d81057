#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "handadapt/autodiff/tensor.hpp"
#include "handadapt/geometry.hpp"

namespace handadapt {

struct EncodedHeatmaps {
  Tensor maps;               // [K, grid_h, grid_w]
  std::vector<bool> clipped; // joint lies outside the image; its blob is cut by the grid border
};

/// Unnormalised Gaussian per joint with peak 1 at the joint position mapped
/// to grid coordinates. sigma is in grid cells.
inline EncodedHeatmaps encode_heatmaps(const Keypoints& coords, double sigma, std::size_t grid_h, std::size_t grid_w,
                                       std::size_t image_h, std::size_t image_w) {
  if (!(sigma > 0)) throw ConfigError("encode_heatmaps: sigma must be positive");
  EncodedHeatmaps out{Tensor({coords.size(), grid_h, grid_w}), std::vector<bool>(coords.size(), false)};
  const double inv = 1.0 / (2.0 * sigma * sigma);
  for (std::size_t k = 0; k < coords.size(); ++k) {
    out.clipped[k] = !in_frame(coords[k], image_w, image_h);
    const double cx = image_to_grid(coords[k].x, image_w, grid_w);
    const double cy = image_to_grid(coords[k].y, image_h, grid_h);
    double* plane = &out.maps.data()[k * grid_h * grid_w];
    for (std::size_t y = 0; y < grid_h; ++y) {
      const double dy = static_cast<double>(y) - cy;
      for (std::size_t x = 0; x < grid_w; ++x) {
        const double dx = static_cast<double>(x) - cx;
        plane[y * grid_w + x] = std::exp(-(dx * dx + dy * dy) * inv);
      }
    }
  }
  return out;
}

struct DecodedKeypoints {
  Keypoints coords;
  std::vector<bool> degenerate;  // channel was all zero; coordinate is the image centre
};

/// Soft-argmax: spatial softmax of heatmap/temperature, expected grid
/// position, mapped back to image pixels. heatmaps is [K, grid_h, grid_w].
inline DecodedKeypoints decode_keypoints(const Tensor& heatmaps, double temperature, std::size_t image_h,
                                         std::size_t image_w) {
  if (!(temperature > 0)) throw ConfigError("decode_keypoints: temperature must be positive");
  if (heatmaps.rank() != 3) throw ShapeError("decode_keypoints: expected [K,H,W], got " + shape_str(heatmaps.shape()));
  const std::size_t k_count = heatmaps.dim(0), gh = heatmaps.dim(1), gw = heatmaps.dim(2);
  DecodedKeypoints out{Keypoints(k_count), std::vector<bool>(k_count, false)};
  std::vector<double> w(gh * gw);
  for (std::size_t k = 0; k < k_count; ++k) {
    const double* plane = &heatmaps.data()[k * gh * gw];
    double mx = plane[0];
    bool all_zero = true;
    for (std::size_t i = 0; i < gh * gw; ++i) {
      mx = std::max(mx, plane[i]);
      all_zero = all_zero && plane[i] == 0.0;
    }
    double z = 0, ex = 0, ey = 0;
    for (std::size_t y = 0; y < gh; ++y)
      for (std::size_t x = 0; x < gw; ++x) {
        const double e = std::exp((plane[y * gw + x] - mx) / temperature);
        z += e;
        ex += e * static_cast<double>(x);
        ey += e * static_cast<double>(y);
      }
    out.coords[k] = {grid_to_image(ex / z, image_w, gw), grid_to_image(ey / z, image_h, gh)};
    out.degenerate[k] = all_zero;
  }
  return out;
}

}  // namespace handadapt
