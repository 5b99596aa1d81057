#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

namespace handadapt {

// Pixel coordinates: x to the right, y downward, integer values at pixel
// centres.
struct Point2 {
  double x = 0.0;
  double y = 0.0;

  friend bool operator==(const Point2&, const Point2&) = default;
};

using Keypoints = std::vector<Point2>;

inline double distance(Point2 a, Point2 b) { return std::hypot(a.x - b.x, a.y - b.y); }

// A lower-resolution grid covering the same extent as the image. Cell
// centres of the grid line up with the image under g = (x + 0.5) * s - 0.5,
// s = grid_size / image_size.
inline double image_to_grid(double x, std::size_t image_size, std::size_t grid_size) {
  const double s = static_cast<double>(grid_size) / static_cast<double>(image_size);
  return (x + 0.5) * s - 0.5;
}

inline double grid_to_image(double g, std::size_t image_size, std::size_t grid_size) {
  const double s = static_cast<double>(grid_size) / static_cast<double>(image_size);
  return (g + 0.5) / s - 0.5;
}

inline bool in_frame(Point2 p, std::size_t width, std::size_t height) {
  return p.x >= 0.0 && p.y >= 0.0 && p.x <= static_cast<double>(width) - 1.0 &&
         p.y <= static_cast<double>(height) - 1.0;
}

}  // namespace handadapt
