#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>

#include "spillkit/coco.hpp"
#include "spillkit/error.hpp"
#include "spillkit/geometry.hpp"
#include "spillkit/image.hpp"

namespace spillkit {

enum class FeatherProfile { linear, gaussian };

struct MaskSpec {
  BBox bbox;
  double feather_px = 50.0;
  double opacity = 0.75;
  FeatherProfile profile = FeatherProfile::linear;

  bool operator==(const MaskSpec&) const = default;
};

inline std::uint8_t mask_peak(double opacity) { return static_cast<std::uint8_t>(std::lround(opacity * 255.0)); }

/// Chebyshev distance from pixel (x, y) to the box; 0 on or inside it.
inline double chebyshev_outside(const BBox& b, double x, double y) {
  const double dx = std::max({b.x_min - x, 0.0, x - b.x_max});
  const double dy = std::max({b.y_min - y, 0.0, y - b.y_max});
  return std::max(dx, dy);
}

/// Mask value for a pixel at the given outside distance.
inline std::uint8_t feather_value(const MaskSpec& spec, double distance) {
  const double peak = spec.opacity * 255.0;
  if (distance <= 0.0) return mask_peak(spec.opacity);
  if (spec.feather_px <= 0.0 || distance > spec.feather_px) return 0;
  double falloff = 0.0;
  if (spec.profile == FeatherProfile::linear) {
    falloff = 1.0 - std::clamp(distance / spec.feather_px, 0.0, 1.0);
  } else {
    const double sigma = spec.feather_px / 3.0;
    falloff = std::exp(-0.5 * (distance / sigma) * (distance / sigma));
  }
  return static_cast<std::uint8_t>(std::lround(peak * falloff));
}

inline void validate(const MaskSpec& spec) {
  validate(spec.bbox);
  if (!(spec.feather_px >= 0.0) || !std::isfinite(spec.feather_px))
    throw Error(Errc::invalid_input, "feather width must be a finite non-negative number of pixels");
  if (!(spec.opacity > 0.0 && spec.opacity <= 1.0)) throw Error(Errc::invalid_input, "mask opacity must lie in (0, 1]");
}

/// Soft mask at peak value inside the box, ramping to zero over the feather
/// band outside it. Pixel (x, y) is sampled at its integer coordinate.
inline GrayImage render_feathered_mask(const MaskSpec& spec, int width, int height) {
  validate(spec);
  if (width <= 0 || height <= 0) throw Error(Errc::invalid_input, "mask dimensions must be positive");
  const BBox& b = spec.bbox;
  if (b.x_max < 0 || b.y_max < 0 || b.x_min > width - 1 || b.y_min > height - 1)
    throw Error(Errc::empty_mask, "box " + to_string(b) + " lies outside the " + std::to_string(width) + "x" +
                                      std::to_string(height) + " image");
  GrayImage mask(width, height);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) mask.at(x, y) = feather_value(spec, chebyshev_outside(b, x, y));
  return mask;
}

inline std::string to_string(FeatherProfile p) { return p == FeatherProfile::linear ? "linear" : "gaussian"; }

inline FeatherProfile feather_profile_from_string(const std::string& s) {
  if (s == "linear") return FeatherProfile::linear;
  if (s == "gaussian") return FeatherProfile::gaussian;
  throw Error(Errc::invalid_input, "unknown feather profile '" + s + "'");
}

inline json mask_sidecar(const MaskSpec& spec, int width, int height) {
  const auto xywh = spec.bbox.xywh();
  return {{"bbox", json::array({number_json(xywh[0]), number_json(xywh[1]), number_json(xywh[2]), number_json(xywh[3])})},
          {"feather_px", number_json(spec.feather_px)},
          {"opacity", spec.opacity},
          {"profile", to_string(spec.profile)},
          {"peak_value", mask_peak(spec.opacity)},
          {"width", width},
          {"height", height}};
}

inline MaskSpec mask_spec_from_sidecar(const json& j) {
  const auto v = j.at("bbox").get<std::vector<double>>();
  if (v.size() != 4) throw Error(Errc::validation, "mask sidecar bbox must have 4 values");
  MaskSpec s;
  s.bbox = BBox::from_xywh(v[0], v[1], v[2], v[3]);
  s.feather_px = j.at("feather_px").get<double>();
  s.opacity = j.at("opacity").get<double>();
  s.profile = feather_profile_from_string(j.value("profile", "linear"));
  return s;
}

}  // namespace spillkit
