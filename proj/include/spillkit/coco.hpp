#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "spillkit/error.hpp"
#include "spillkit/geometry.hpp"
#include "spillkit/util.hpp"

namespace spillkit {

struct CocoImage {
  std::int64_t id = 0;
  std::string file_name;
  int width = 0;
  int height = 0;
  json extra = json::object();

  bool operator==(const CocoImage&) const = default;
};

struct CocoAnnotation {
  std::int64_t id = 0;
  std::int64_t image_id = 0;
  ClassId category_id = 0;
  std::array<double, 4> bbox{};  // x, y, w, h in pixels
  std::optional<double> score;
  json extra = json::object();
  /// Result records (detector output) usually omit "id".
  bool has_id = true;

  BBox box() const { return BBox::from_xywh(bbox[0], bbox[1], bbox[2], bbox[3]); }

  bool operator==(const CocoAnnotation&) const = default;
};

struct CocoCategory {
  ClassId id = 0;
  std::string name;
  json extra = json::object();

  bool operator==(const CocoCategory&) const = default;
};

struct CocoDataset {
  std::vector<CocoImage> images;
  std::vector<CocoAnnotation> annotations;
  std::vector<CocoCategory> categories;
  /// Top-level keys other than images/annotations/categories, kept verbatim.
  json extra = json::object();
  /// Non-fatal findings from validation (e.g. clamped boxes).
  std::vector<std::string> warnings;

  const CocoImage* find_image(std::int64_t id) const {
    for (const auto& im : images)
      if (im.id == id) return &im;
    return nullptr;
  }

  std::int64_t next_annotation_id() const {
    std::int64_t m = 0;
    for (const auto& a : annotations) m = std::max(m, a.id);
    return m + 1;
  }
};

/// Integral values serialize as JSON integers so that records such as
/// `"bbox": [256, 411, 142, 95]` survive a round trip textually.
inline json number_json(double v) {
  if (std::isfinite(v) && v == std::floor(v) && std::fabs(v) < 9.0e15) return static_cast<std::int64_t>(v);
  return v;
}

namespace detail {

inline json split_extra(const json& obj, std::initializer_list<std::string_view> known) {
  json extra = json::object();
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    if (std::find(known.begin(), known.end(), it.key()) == known.end()) extra[it.key()] = it.value();
  }
  return extra;
}

inline void merge_extra(json& obj, const json& extra) {
  for (auto it = extra.begin(); it != extra.end(); ++it) obj[it.key()] = it.value();
}

template <typename T>
T require(const json& obj, const char* key, const char* what) {
  if (!obj.is_object() || !obj.contains(key))
    throw Error(Errc::validation, std::string(what) + " is missing \"" + key + "\"");
  try {
    return obj.at(key).get<T>();
  } catch (const json::exception& e) {
    throw Error(Errc::validation, std::string(what) + " field \"" + key + "\" has the wrong type");
  }
}

inline std::string join_ids(const std::vector<std::int64_t>& ids) {
  std::ostringstream os;
  for (std::size_t i = 0; i < ids.size(); ++i) os << (i ? ", " : "") << ids[i];
  return os.str();
}

}  // namespace detail

inline CocoAnnotation annotation_from_json(const json& j) {
  if (!j.is_object()) throw Error(Errc::validation, "annotation must be an object");
  CocoAnnotation a;
  a.id = j.contains("id") ? detail::require<std::int64_t>(j, "id", "annotation") : 0;
  a.image_id = detail::require<std::int64_t>(j, "image_id", "annotation");
  a.category_id = detail::require<ClassId>(j, "category_id", "annotation");
  const auto bbox = detail::require<std::vector<double>>(j, "bbox", "annotation");
  if (bbox.size() != 4) throw Error(Errc::validation, "annotation bbox must have 4 values");
  std::copy(bbox.begin(), bbox.end(), a.bbox.begin());
  if (j.contains("score")) a.score = detail::require<double>(j, "score", "annotation");
  a.extra = detail::split_extra(j, {"id", "image_id", "category_id", "bbox", "score"});
  a.has_id = j.contains("id");
  return a;
}

inline json to_json(const CocoAnnotation& a) {
  json j = json::object();
  if (a.has_id) j["id"] = a.id;
  j["image_id"] = a.image_id;
  j["category_id"] = a.category_id;
  j["bbox"] = json::array({number_json(a.bbox[0]), number_json(a.bbox[1]), number_json(a.bbox[2]), number_json(a.bbox[3])});
  if (a.score) j["score"] = number_json(*a.score);
  detail::merge_extra(j, a.extra);
  return j;
}

inline json to_json(const CocoImage& im) {
  json j = {{"id", im.id}, {"file_name", im.file_name}, {"width", im.width}, {"height", im.height}};
  detail::merge_extra(j, im.extra);
  return j;
}

inline json to_json(const CocoCategory& c) {
  json j = {{"id", c.id}, {"name", c.name}};
  detail::merge_extra(j, c.extra);
  return j;
}

inline json to_json(const CocoDataset& ds) {
  json j = ds.extra;
  j["images"] = json::array();
  for (const auto& im : ds.images) j["images"].push_back(to_json(im));
  j["annotations"] = json::array();
  for (const auto& a : ds.annotations) j["annotations"].push_back(to_json(a));
  j["categories"] = json::array();
  for (const auto& c : ds.categories) j["categories"].push_back(to_json(c));
  return j;
}

inline std::string serialize_coco(const CocoDataset& ds, int indent = 2) { return to_json(ds).dump(indent); }

inline json parse_json_text(std::string_view text) {
  try {
    return json::parse(text.begin(), text.end());
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("malformed JSON: ") + e.what(), e.byte);
  }
}

/// Referential and geometric checks. Dangling references are fatal; boxes
/// overflowing their image are clamped and reported as warnings.
inline void validate(CocoDataset& ds) {
  std::set<std::int64_t> image_ids;
  for (const auto& im : ds.images) {
    if (!image_ids.insert(im.id).second)
      throw Error(Errc::validation, "duplicate image id " + std::to_string(im.id));
    if (im.width <= 0 || im.height <= 0)
      throw Error(Errc::validation, "image " + std::to_string(im.id) + " has non-positive dimensions");
  }
  std::set<ClassId> cat_ids;
  for (const auto& c : ds.categories) cat_ids.insert(c.id);

  std::vector<std::int64_t> missing_images, missing_categories, degenerate;
  for (const auto& a : ds.annotations) {
    if (!image_ids.contains(a.image_id)) missing_images.push_back(a.image_id);
    if (!cat_ids.contains(a.category_id)) missing_categories.push_back(a.category_id);
    if (!(a.bbox[2] > 0 && a.bbox[3] > 0) || !std::all_of(a.bbox.begin(), a.bbox.end(), [](double v) { return std::isfinite(v); }))
      degenerate.push_back(a.id);
  }
  std::string problems;
  if (!missing_images.empty()) problems += "annotations reference unknown image ids: " + detail::join_ids(missing_images) + "; ";
  if (!missing_categories.empty())
    problems += "annotations reference unknown category ids: " + detail::join_ids(missing_categories) + "; ";
  if (!degenerate.empty()) problems += "annotations with non-positive extent: " + detail::join_ids(degenerate) + "; ";
  if (!problems.empty()) throw Error(Errc::validation, problems.substr(0, problems.size() - 2));

  for (auto& a : ds.annotations) {
    const CocoImage* im = ds.find_image(a.image_id);
    const double x0 = std::clamp(a.bbox[0], 0.0, static_cast<double>(im->width));
    const double y0 = std::clamp(a.bbox[1], 0.0, static_cast<double>(im->height));
    const double x1 = std::clamp(a.bbox[0] + a.bbox[2], 0.0, static_cast<double>(im->width));
    const double y1 = std::clamp(a.bbox[1] + a.bbox[3], 0.0, static_cast<double>(im->height));
    const std::array<double, 4> clamped{x0, y0, x1 - x0, y1 - y0};
    if (clamped != a.bbox) {
      ds.warnings.push_back("annotation " + std::to_string(a.id) + " clamped to image " + std::to_string(im->id) + " bounds");
      a.bbox = clamped;
    }
  }
}

inline CocoDataset coco_from_json(const json& root) {
  if (!root.is_object()) throw Error(Errc::validation, "COCO document must be a JSON object");
  CocoDataset ds;
  ds.extra = detail::split_extra(root, {"images", "annotations", "categories"});
  if (root.contains("images")) {
    for (const auto& j : root.at("images")) {
      CocoImage im;
      im.id = detail::require<std::int64_t>(j, "id", "image");
      im.file_name = j.value("file_name", "");
      im.width = detail::require<int>(j, "width", "image");
      im.height = detail::require<int>(j, "height", "image");
      im.extra = detail::split_extra(j, {"id", "file_name", "width", "height"});
      ds.images.push_back(std::move(im));
    }
  }
  if (root.contains("annotations"))
    for (const auto& j : root.at("annotations")) ds.annotations.push_back(annotation_from_json(j));
  if (root.contains("categories")) {
    for (const auto& j : root.at("categories")) {
      CocoCategory c;
      c.id = detail::require<ClassId>(j, "id", "category");
      c.name = j.value("name", "");
      c.extra = detail::split_extra(j, {"id", "name"});
      ds.categories.push_back(std::move(c));
    }
  }
  validate(ds);
  return ds;
}

inline CocoDataset parse_coco(std::string_view text) { return coco_from_json(parse_json_text(text)); }

/// COCO "results" documents: an array of annotation-like records carrying a
/// score. A single bare record is accepted too.
inline std::vector<CocoAnnotation> parse_coco_results(std::string_view text) {
  const json root = parse_json_text(text);
  std::vector<CocoAnnotation> out;
  if (root.is_object()) {
    out.push_back(annotation_from_json(root));
  } else if (root.is_array()) {
    for (const auto& j : root) out.push_back(annotation_from_json(j));
  } else {
    throw Error(Errc::validation, "COCO results must be an array of records");
  }
  return out;
}

inline std::string serialize_coco_results(const std::vector<CocoAnnotation>& records) {
  json arr = json::array();
  for (const auto& a : records) arr.push_back(to_json(a));
  return arr.dump();
}

// ---------------------------------------------------------------------------
// YOLO text labels

struct YoloRecord {
  int class_idx = 0;
  double cx = 0, cy = 0, w = 0, h = 0;

  bool operator==(const YoloRecord&) const = default;
};

inline YoloRecord coco_to_yolo(const std::array<double, 4>& xywh, int class_idx, int image_w, int image_h) {
  if (image_w <= 0 || image_h <= 0) throw Error(Errc::invalid_input, "image dimensions must be positive");
  if (!(xywh[2] > 0 && xywh[3] > 0)) throw Error(Errc::degenerate_box, "cannot convert a zero-area box to YOLO");
  const double W = image_w, H = image_h;
  return {class_idx, (xywh[0] + xywh[2] / 2) / W, (xywh[1] + xywh[3] / 2) / H, xywh[2] / W, xywh[3] / H};
}

inline std::array<double, 4> yolo_to_coco(const YoloRecord& r, int image_w, int image_h) {
  if (image_w <= 0 || image_h <= 0) throw Error(Errc::invalid_input, "image dimensions must be positive");
  for (double v : {r.cx, r.cy, r.w, r.h})
    if (!(v >= 0.0 && v <= 1.0)) throw Error(Errc::range, "YOLO values must lie in [0, 1]");
  if (!(r.w > 0 && r.h > 0)) throw Error(Errc::degenerate_box, "YOLO record has zero extent");
  const double W = image_w, H = image_h;
  const double w = r.w * W, h = r.h * H;
  return {r.cx * W - w / 2, r.cy * H - h / 2, w, h};
}

inline std::vector<YoloRecord> parse_yolo_txt(std::string_view text) {
  std::vector<YoloRecord> out;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t lineno = 0, offset = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::size_t line_start = offset;
    offset += line.size() + 1;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream ls(line);
    YoloRecord r;
    if (!(ls >> r.class_idx >> r.cx >> r.cy >> r.w >> r.h))
      throw ParseError("YOLO line " + std::to_string(lineno) + " needs 'class cx cy w h'", line_start);
    std::string rest;
    if (ls >> rest) throw ParseError("YOLO line " + std::to_string(lineno) + " has trailing fields", line_start);
    if (r.class_idx < 0) throw ParseError("YOLO line " + std::to_string(lineno) + " has a negative class", line_start);
    out.push_back(r);
  }
  return out;
}

inline std::string format_yolo_txt(const std::vector<YoloRecord>& records) {
  std::ostringstream os;
  os.precision(17);
  for (const auto& r : records) os << r.class_idx << ' ' << r.cx << ' ' << r.cy << ' ' << r.w << ' ' << r.h << '\n';
  return os.str();
}

/// YOLO class index of a COCO category: position among categories sorted by id.
inline std::map<ClassId, int> yolo_class_index(const CocoDataset& ds) {
  std::vector<ClassId> ids;
  for (const auto& c : ds.categories) ids.push_back(c.id);
  std::sort(ids.begin(), ids.end());
  std::map<ClassId, int> index;
  for (std::size_t i = 0; i < ids.size(); ++i) index[ids[i]] = static_cast<int>(i);
  return index;
}

/// Ground truths of one image, in annotation order.
inline std::vector<GroundTruth> ground_truths_for(const CocoDataset& ds, std::int64_t image_id) {
  std::vector<GroundTruth> out;
  for (const auto& a : ds.annotations)
    if (a.image_id == image_id) out.push_back({a.box(), a.category_id});
  return out;
}

}  // namespace spillkit
