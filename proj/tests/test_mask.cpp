#include <gtest/gtest.h>

#include <chrono>
#include <cmath>

#include "spillkit/spillkit.hpp"

using namespace spillkit;

namespace {

MaskSpec centered_spec() {
  MaskSpec s;
  s.bbox = {96, 96, 160, 160};
  return s;
}

// Expected value from the ramp definition: peak inside, linear to zero at
// the feather width, measured as the larger axis gap to the box.
int expected_linear(const MaskSpec& s, int x, int y) {
  const double gx = x < s.bbox.x_min ? s.bbox.x_min - x : (x > s.bbox.x_max ? x - s.bbox.x_max : 0.0);
  const double gy = y < s.bbox.y_min ? s.bbox.y_min - y : (y > s.bbox.y_max ? y - s.bbox.y_max : 0.0);
  const double d = gx > gy ? gx : gy;
  const double peak = 255.0 * s.opacity;
  if (d == 0.0) return static_cast<int>(std::floor(peak + 0.5));
  if (d > s.feather_px) return 0;
  return static_cast<int>(std::floor(peak * (1.0 - d / s.feather_px) + 0.5));
}

}  // namespace

TEST(Mask, PeakIs191InsideBox) {
  const auto m = render_feathered_mask(centered_spec(), 256, 256);
  EXPECT_EQ(m.at(128, 128), 191);
  EXPECT_EQ(m.at(96, 96), 191);
  EXPECT_EQ(m.at(160, 160), 191);
}

TEST(Mask, HalfwayThroughFeatherIs96) {
  const auto m = render_feathered_mask(centered_spec(), 256, 256);
  EXPECT_EQ(m.at(128, 160 + 25), 96);
  EXPECT_EQ(m.at(96 - 25, 128), 96);
}

TEST(Mask, ZeroBeyondFeather) {
  const auto m = render_feathered_mask(centered_spec(), 256, 256);
  EXPECT_EQ(m.at(128, 96 - 51), 0);
  EXPECT_EQ(m.at(0, 0), 0);
  EXPECT_EQ(m.at(255, 255), 0);
}

TEST(Mask, ExhaustiveMatchesRampDefinition) {
  const auto spec = centered_spec();
  const auto t0 = std::chrono::steady_clock::now();
  const auto m = render_feathered_mask(spec, 256, 256);
  for (int y = 0; y < 256; ++y)
    for (int x = 0; x < 256; ++x) ASSERT_EQ(m.at(x, y), expected_linear(spec, x, y)) << x << "," << y;
  EXPECT_LT(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count(), 1.0);
}

TEST(Mask, MonotoneAwayFromBox) {
  for (auto profile : {FeatherProfile::linear, FeatherProfile::gaussian}) {
    auto spec = centered_spec();
    spec.profile = profile;
    const auto m = render_feathered_mask(spec, 256, 256);
    for (int y = 0; y < 256; ++y)
      for (int x = 1; x < 256; ++x) {
        if (x <= 96) {
          ASSERT_GE(m.at(x, y), m.at(x - 1, y));
        }
        if (x > 160) {
          ASSERT_LE(m.at(x, y), m.at(x - 1, y));
        }
      }
  }
}

TEST(Mask, ZeroFeatherIsHardRectangle) {
  auto spec = centered_spec();
  spec.feather_px = 0;
  const auto m = render_feathered_mask(spec, 256, 256);
  EXPECT_EQ(m.at(95, 128), 0);
  EXPECT_EQ(m.at(96, 128), 191);
}

TEST(Mask, BoxOutsideImageIsEmptyMaskError) {
  MaskSpec s;
  s.bbox = {300, 300, 400, 400};
  try {
    (void)render_feathered_mask(s, 256, 256);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::empty_mask);
  }
}

TEST(Mask, SidecarRoundTrip) {
  auto spec = centered_spec();
  spec.profile = FeatherProfile::gaussian;
  const auto side = mask_sidecar(spec, 256, 256);
  EXPECT_EQ(side.at("peak_value"), 191);
  EXPECT_EQ(side.at("bbox"), json::parse("[96,96,64,64]"));
  EXPECT_EQ(mask_spec_from_sidecar(side), spec);
}

TEST(Mask, MaskFilesWrittenPerAnnotation) {
  CocoDataset ds;
  ds.images.push_back({1, "s.png", 128, 96, json::object()});
  ds.categories.push_back({1, "oil_spill", json::object()});
  CocoAnnotation a;
  a.id = 7;
  a.image_id = 1;
  a.category_id = 1;
  a.bbox = {20, 10, 30, 40};
  ds.annotations.push_back(a);
  const auto dir = std::filesystem::temp_directory_path() / "spillkit-mask-test";
  std::filesystem::remove_all(dir);
  const auto masks = write_masks(ds, InpaintProfile{}, dir);
  ASSERT_EQ(masks.size(), 1u);
  EXPECT_EQ(masks[0].png.filename(), "image1-ann7.png");
  const auto img = load_png_gray(masks[0].png);
  EXPECT_EQ(img.width, 128);
  EXPECT_EQ(img.at(30, 30), 191);
  const auto side = json::parse(read_text(masks[0].sidecar));
  EXPECT_EQ(mask_spec_from_sidecar(side).bbox, a.box());
  std::filesystem::remove_all(dir);
}
