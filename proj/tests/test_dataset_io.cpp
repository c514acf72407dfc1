#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <set>

#include "support.hpp"

using namespace spillkit;
using namespace spillkit::testing;

namespace {

const char* kResultRecord = R"({"image_id":134,"category_id":3,"bbox":[256,411,142,95],"score":0.97})";

std::string small_dataset(bool dangling = false) {
  json root = {
      {"info", {{"description", "fixture"}}},
      {"images", {{{"id", 1}, {"file_name", "a.png"}, {"width", 640}, {"height", 480}, {"license", 2}}}},
      {"categories", {{{"id", 1}, {"name", "oil_spill"}}, {{"id", 3}, {"name", "spark"}}}},
      {"annotations",
       {{{"id", 10}, {"image_id", 1}, {"category_id", 1}, {"bbox", {10, 20, 30, 40}}, {"area", 1200}, {"iscrowd", 0}}}},
  };
  if (dangling) root["annotations"].push_back({{"id", 11}, {"image_id", 999}, {"category_id", 1}, {"bbox", {1, 1, 2, 2}}});
  return root.dump();
}

GrayImage structured_image(int w, int h, std::uint32_t seed) {
  std::mt19937 rng(seed);
  std::uniform_int_distribution<int> noise(-3, 3);
  GrayImage img(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double v = 128 + 70 * std::sin(x / 9.0) * std::cos(y / 13.0) + noise(rng);
      img.at(x, y) = static_cast<std::uint8_t>(std::clamp(v, 0.0, 255.0));
    }
  return img;
}

}  // namespace

TEST(CocoResults, ReferenceRecordRoundTripsLosslessly) {
  const auto recs = parse_coco_results(kResultRecord);
  ASSERT_EQ(recs.size(), 1u);
  const auto& r = recs[0];
  EXPECT_EQ(r.image_id, 134);
  EXPECT_EQ(r.category_id, 3);
  EXPECT_EQ(r.bbox, (std::array<double, 4>{256, 411, 142, 95}));
  ASSERT_TRUE(r.score.has_value());
  EXPECT_EQ(*r.score, 0.97);
  EXPECT_FALSE(r.has_id);

  const std::string out = to_json(r).dump();
  EXPECT_EQ(json::parse(out), json::parse(kResultRecord));
  EXPECT_EQ(parse_coco_results(out)[0], r);
}

TEST(CocoResults, ArrayFormRoundTrips) {
  const std::string arr = std::string("[") + kResultRecord + "," + kResultRecord + "]";
  const auto recs = parse_coco_results(arr);
  ASSERT_EQ(recs.size(), 2u);
  EXPECT_EQ(json::parse(serialize_coco_results(recs)), json::parse(arr));
}

TEST(Coco, UnknownFieldsSurviveRoundTrip) {
  const auto ds = parse_coco(small_dataset());
  EXPECT_EQ(json::parse(serialize_coco(ds)), json::parse(small_dataset()));
}

TEST(Coco, DanglingImageReferenceNamesTheId) {
  try {
    (void)parse_coco(small_dataset(true));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::validation);
    EXPECT_NE(std::string(e.what()).find("999"), std::string::npos);
  }
}

TEST(Coco, MalformedJsonReportsByteOffset) {
  try {
    (void)parse_coco(R"({"images": [ {"id": 1,, }]})");
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.code(), Errc::parse);
    EXPECT_GT(e.offset(), 10u);
    EXPECT_LT(e.offset(), 30u);
  }
}

TEST(Coco, OutOfBoundsBoxIsClampedWithWarning) {
  json root = json::parse(small_dataset());
  root["annotations"][0]["bbox"] = {600, 20, 100, 40};
  const auto ds = coco_from_json(root);
  EXPECT_EQ(ds.annotations[0].bbox, (std::array<double, 4>{600, 20, 40, 40}));
  ASSERT_EQ(ds.warnings.size(), 1u);
}

TEST(Yolo, ConversionExamples) {
  const auto y = coco_to_yolo({10, 20, 30, 40}, 0, 100, 100);
  EXPECT_DOUBLE_EQ(y.cx, 0.25);
  EXPECT_DOUBLE_EQ(y.cy, 0.40);
  EXPECT_DOUBLE_EQ(y.w, 0.30);
  EXPECT_DOUBLE_EQ(y.h, 0.40);

  const auto full = yolo_to_coco({0, 0.5, 0.5, 1.0, 1.0}, 640, 480);
  EXPECT_EQ(full, (std::array<double, 4>{0, 0, 640, 480}));
}

TEST(Yolo, OutOfRangeAndDegenerate) {
  try {
    (void)yolo_to_coco({0, 1.2, 0.5, 0.1, 0.1}, 640, 480);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::range);
  }
  try {
    (void)coco_to_yolo({10, 10, 0, 5}, 0, 100, 100);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::degenerate_box);
  }
}

TEST(Yolo, RoundTripWithinTolerance) {
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<int> dim(16, 4096);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < 10000; ++i) {
    const int W = dim(rng), H = dim(rng);
    const double x = u(rng) * W * 0.9, y = u(rng) * H * 0.9;
    const double w = std::max(1e-3, u(rng) * (W - x)), h = std::max(1e-3, u(rng) * (H - y));
    const std::array<double, 4> box{x, y, w, h};
    const auto text = format_yolo_txt({coco_to_yolo(box, 2, W, H)});
    const auto back = yolo_to_coco(parse_yolo_txt(text).at(0), W, H);
    for (int k = 0; k < 4; ++k) ASSERT_NEAR(back[k], box[k], 1e-6 * (k % 2 == 0 ? W : H));
  }
}

TEST(Yolo, ParserReportsBadLine) {
  try {
    (void)parse_yolo_txt("0 0.5 0.5 0.1 0.1\n1 0.5 oops\n");
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.offset(), 18u);
  }
}

TEST(Yolo, DatasetExportAndImport) {
  TempDir dir;
  auto ds = parse_coco(small_dataset());
  save_png(dir / "a.png", GrayImage(640, 480, 10));
  write_yolo(to_yolo(ds), dir / "labels");
  const auto back = from_yolo(dir / "labels", dir.path(), ClassRegistry::defaults());
  ASSERT_EQ(back.annotations.size(), 1u);
  EXPECT_EQ(back.annotations[0].category_id, 1);
  for (int k = 0; k < 4; ++k) EXPECT_NEAR(back.annotations[0].bbox[k], ds.annotations[0].bbox[k], 1e-6 * 640);
}

TEST(Splits, PublicProfileTakes520ForEvaluation) {
  std::vector<std::int64_t> ids(1520);
  std::iota(ids.begin(), ids.end(), 1);
  const auto m = make_splits(ids, default_split_profile(DataSource::public_web), 42);
  EXPECT_EQ(m.split("eval").size(), 520u);
  EXPECT_EQ(m.split("adapt").size(), 100u);
  EXPECT_EQ(manifest_from_json(to_json(m)), m);
  EXPECT_EQ(make_splits(ids, default_split_profile(DataSource::public_web), 42), m);
}

TEST(Splits, OversubscriptionIsCountError) {
  std::vector<std::int64_t> ids(1520);
  std::iota(ids.begin(), ids.end(), 1);
  try {
    (void)make_splits(ids, {{"eval", 2000}}, 1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::count);
  }
}

TEST(Splits, DisjointForEverySeed) {
  std::vector<std::int64_t> ids(300);
  std::iota(ids.begin(), ids.end(), 100);
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    const auto m = make_splits(ids, {{"a", 120}, {"b", 100}, {"c", 80}}, seed);
    std::set<std::int64_t> seen;
    std::size_t n = 0;
    for (const auto& [_, chunk] : m.splits) {
      n += chunk.size();
      seen.insert(chunk.begin(), chunk.end());
    }
    ASSERT_EQ(seen.size(), n);
  }
}

TEST(Dedup, BrightnessShiftStaysInCluster) {
  TempDir dir;
  const GrayImage base = structured_image(256, 192, 1);
  GrayImage shifted = base;
  for (auto& p : shifted.pixels) p = static_cast<std::uint8_t>(std::min(255.0, std::round(p * 1.01)));
  save_png(dir / "a.png", base);
  save_png(dir / "b.png", shifted);
  save_png(dir / "c.png", noise_image(256, 192, 2));
  save_png(dir / "d.png", noise_image(256, 192, 3));
  write_text_atomic(dir / "e.png", "not a png");

  const auto res = dedup(png_inputs(dir.path()), 8, 2);
  ASSERT_EQ(res.clusters.size(), 3u);
  EXPECT_EQ(res.clusters[0].members, (std::vector<std::string>{"a.png", "b.png"}));
  EXPECT_EQ(res.clusters[1].members, (std::vector<std::string>{"c.png"}));
  EXPECT_EQ(res.clusters[2].members, (std::vector<std::string>{"d.png"}));
  ASSERT_EQ(res.skipped.size(), 1u);
  EXPECT_EQ(res.skipped[0].id, "e.png");
}

TEST(Dedup, ClustersIndependentOfInputOrder) {
  TempDir dir;
  std::vector<DedupInput> inputs;
  for (int i = 0; i < 6; ++i) {
    save_png(dir / ("n" + std::to_string(i) + ".png"), noise_image(64, 64, static_cast<std::uint32_t>(i % 3)));
    inputs.push_back({"n" + std::to_string(i) + ".png", dir / ("n" + std::to_string(i) + ".png")});
  }
  const auto a = dedup(inputs, 8, 1);
  std::reverse(inputs.begin(), inputs.end());
  const auto b = dedup(inputs, 8, 3);
  ASSERT_EQ(a.clusters.size(), b.clusters.size());
  for (std::size_t i = 0; i < a.clusters.size(); ++i) EXPECT_EQ(a.clusters[i].members, b.clusters[i].members);
  EXPECT_EQ(a.clusters.size(), 3u);
}

TEST(Png, EncodeDecodeRoundTrip) {
  const auto img = noise_image(37, 23, 4);
  const auto bytes = encode_png(img);
  ASSERT_TRUE(looks_like_png(bytes));
  const auto size = png_size(bytes);
  ASSERT_TRUE(size.has_value());
  EXPECT_EQ(size->width, 37);
  EXPECT_EQ(size->height, 23);
  EXPECT_EQ(decode_png_gray(bytes).pixels, img.pixels);
}
