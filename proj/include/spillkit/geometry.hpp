#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <string>

#include "spillkit/error.hpp"

namespace spillkit {

using ClassId = int;

/// Axis-aligned box in image pixels, origin top-left, corners inclusive of
/// the extent (x_max = x_min + width).
struct BBox {
  double x_min = 0;
  double y_min = 0;
  double x_max = 0;
  double y_max = 0;

  static BBox from_xywh(double x, double y, double w, double h) { return {x, y, x + w, y + h}; }

  double width() const { return x_max - x_min; }
  double height() const { return y_max - y_min; }
  double area() const { return width() * height(); }
  bool degenerate() const { return !(width() > 0 && height() > 0); }

  std::array<double, 4> xywh() const { return {x_min, y_min, width(), height()}; }

  bool operator==(const BBox&) const = default;
};

struct Detection {
  BBox bbox;
  ClassId class_id = 0;
  double score = 1.0;

  bool operator==(const Detection&) const = default;
};

struct GroundTruth {
  BBox bbox;
  ClassId class_id = 0;

  bool operator==(const GroundTruth&) const = default;
};

inline std::string to_string(const BBox& b) {
  return "(" + std::to_string(b.x_min) + ", " + std::to_string(b.y_min) + ", " + std::to_string(b.x_max) +
         ", " + std::to_string(b.y_max) + ")";
}

inline void validate(const BBox& b) {
  if (!std::isfinite(b.x_min) || !std::isfinite(b.y_min) || !std::isfinite(b.x_max) || !std::isfinite(b.y_max))
    throw Error(Errc::invalid_geometry, "non-finite box coordinate " + to_string(b));
  if (b.x_min > b.x_max || b.y_min > b.y_max)
    throw Error(Errc::invalid_geometry, "inverted box " + to_string(b));
}

/// Intersection over union. Two boxes whose union has zero area score 0.
inline double iou(const BBox& a, const BBox& b) {
  validate(a);
  validate(b);
  const double iw = std::min(a.x_max, b.x_max) - std::max(a.x_min, b.x_min);
  const double ih = std::min(a.y_max, b.y_max) - std::max(a.y_min, b.y_min);
  const double inter = (iw > 0 && ih > 0) ? iw * ih : 0.0;
  const double uni = a.area() + b.area() - inter;
  if (!(uni > 0)) return 0.0;
  return std::clamp(inter / uni, 0.0, 1.0);
}

inline void check_threshold(double tau) {
  if (!(tau > 0.0 && tau <= 1.0))
    throw Error(Errc::invalid_threshold, "IoU threshold must lie in (0, 1], got " + std::to_string(tau));
}

/// Boundary inclusive: IoU equal to tau is a hit.
inline bool is_hit(const BBox& pred, const BBox& gt, double tau) {
  check_threshold(tau);
  return iou(pred, gt) >= tau;
}

}  // namespace spillkit
