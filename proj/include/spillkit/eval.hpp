#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "spillkit/coco.hpp"
#include "spillkit/concurrency.hpp"
#include "spillkit/error.hpp"
#include "spillkit/metrics.hpp"
#include "spillkit/vlm.hpp"

namespace spillkit {

/// Where predictions come from. predict() returns the detections for one
/// image restricted to `classes` where the source queries per class; it
/// throws when the detector call for that image failed.
class DetectorSource {
 public:
  virtual ~DetectorSource() = default;
  virtual std::vector<Detection> predict(const CocoImage& image, const std::vector<ClassId>& classes) = 0;
  /// Image ids the source cannot answer for, checked before a run starts.
  virtual std::vector<std::int64_t> missing(const std::vector<const CocoImage*>&) const { return {}; }
};

/// Queries a live VLM backend, one call per (image, class).
class LiveVlmSource : public DetectorSource {
 public:
  LiveVlmSource(VlmDetector& detector, std::filesystem::path image_dir, const IclSupportSet* support = nullptr)
      : detector_(detector), image_dir_(std::move(image_dir)), support_(support) {}

  std::vector<Detection> predict(const CocoImage& image, const std::vector<ClassId>& classes) override {
    ImageInput in;
    in.image_id = image.id;
    in.uri = (image_dir_ / image.file_name).string();
    in.width = image.width;
    in.height = image.height;
    std::vector<Detection> out;
    for (ClassId c : classes) {
      auto parsed = detector_.detect(in, c, support_);
      for (auto& d : parsed.detections) {
        d.class_id = c;
        out.push_back(d);
      }
    }
    return out;
  }

 private:
  VlmDetector& detector_;
  std::filesystem::path image_dir_;
  const IclSupportSet* support_;
};

/// Replays responses recorded by a VlmDetector's log. The latest entry per
/// (image, class) wins.
class ReplaySource : public DetectorSource {
 public:
  explicit ReplaySource(const std::vector<json>& entries, CoordinateFrame frame = {}) : frame_(frame) {
    for (const auto& e : entries) {
      const auto key = std::pair{e.at("image_id").get<std::int64_t>(), e.at("class_id").get<ClassId>()};
      entries_[key] = e;
    }
  }

  std::vector<Detection> predict(const CocoImage& image, const std::vector<ClassId>& classes) override {
    std::vector<Detection> out;
    for (ClassId c : classes) {
      const auto it = entries_.find({image.id, c});
      if (it == entries_.end())
        throw Error(Errc::coverage, "replay log has no entry for image " + std::to_string(image.id) + " class " + std::to_string(c));
      const json& e = it->second;
      if (e.contains("error")) throw Error(Errc::transport, "recorded failure: " + e.at("error").get<std::string>());
      ParseOptions opts;
      opts.default_class = c;
      opts.frame = frame_;
      auto parsed = parse_response(e.at("response").get<std::string>(), image.width, image.height, opts);
      for (auto& d : parsed.detections) {
        d.class_id = c;
        out.push_back(d);
      }
    }
    return out;
  }

  std::vector<std::int64_t> missing(const std::vector<const CocoImage*>& images) const override {
    std::set<std::int64_t> present;
    for (const auto& [key, _] : entries_) present.insert(key.first);
    std::vector<std::int64_t> out;
    for (const auto* im : images)
      if (!present.contains(im->id)) out.push_back(im->id);
    return out;
  }

 private:
  std::map<std::pair<std::int64_t, ClassId>, json> entries_;
  CoordinateFrame frame_;
};

/// Predictions from an external detector in the COCO results format.
class ExternalResultsSource : public DetectorSource {
 public:
  explicit ExternalResultsSource(const std::vector<CocoAnnotation>& results) {
    for (const auto& r : results) {
      if (!r.score) throw Error(Errc::invalid_input, "external prediction for image " + std::to_string(r.image_id) + " lacks a score");
      by_image_[r.image_id].push_back({r.box(), r.category_id, *r.score});
    }
  }

  std::vector<Detection> predict(const CocoImage& image, const std::vector<ClassId>&) override {
    const auto it = by_image_.find(image.id);
    return it == by_image_.end() ? std::vector<Detection>{} : it->second;
  }

 private:
  std::map<std::int64_t, std::vector<Detection>> by_image_;
};

struct EvalFailure {
  std::int64_t image_id = 0;
  std::string reason;
};

struct EvalRun {
  std::string dataset;
  std::string method;
  std::string column;
  std::map<std::int64_t, std::vector<Detection>> predictions;
  std::vector<EvalFailure> failures;
  json config = json::object();
};

struct EvalReport {
  std::string dataset;
  std::string method;
  /// Column label in rendered tables (model size, dataset name, ...).
  std::string column;
  double tau = 0.5;
  std::size_t images = 0;
  /// Mean over classes of per-class hit-rates.
  double hit_rate = 0.0;
  /// Hits over all scored (image, class) units.
  double hit_rate_pooled = 0.0;
  std::map<ClassId, double> per_class;
  double map50 = 0.0;
  std::vector<ClassId> map_skipped;
  SweepCurve sweep;
  std::vector<EvalFailure> failures;
  std::optional<std::string> baseline_method;
  std::optional<double> uplift;
};

struct EvalOptions {
  double tau = 0.5;
  MatchRule rule = MatchRule::best_per_class;
  std::vector<double> sweep_thresholds = default_sweep_thresholds();
  /// Query only the classes annotated in each image (one request per
  /// labelled class) or every registered class.
  bool query_all_classes = false;
  std::vector<ClassId> all_classes;
  std::size_t workers = 1;
  std::string dataset = "dataset";
  std::string method = "Zero-Shot";
  std::string column = "";
};

struct EvalResult {
  EvalRun run;
  EvalReport report;
};

/// Metrics for an already-collected prediction set.
inline EvalReport score_predictions(const CocoDataset& ds, const std::vector<std::int64_t>& split,
                                    const std::map<std::int64_t, std::vector<Detection>>& predictions,
                                    const EvalOptions& opts) {
  std::vector<ImageEval> evals;
  std::vector<std::vector<Detection>> dets;
  std::vector<std::vector<GroundTruth>> gts;
  for (auto id : split) {
    ImageEval e;
    const auto it = predictions.find(id);
    if (it != predictions.end()) e.predictions = it->second;
    e.ground_truths = ground_truths_for(ds, id);
    dets.push_back(e.predictions);
    gts.push_back(e.ground_truths);
    evals.push_back(std::move(e));
  }
  const HitStats stats = hit_stats(evals, opts.tau, opts.rule);
  const ApReport ap = average_precision(dets, gts, 0.5);

  EvalReport r;
  r.dataset = opts.dataset;
  r.method = opts.method;
  r.column = opts.column;
  r.tau = opts.tau;
  r.images = split.size();
  r.hit_rate = stats.class_mean();
  r.hit_rate_pooled = stats.pooled();
  for (const auto& [cls, t] : stats.per_class) r.per_class[cls] = t.rate();
  r.map50 = ap.map;
  r.map_skipped = ap.skipped;
  if (!opts.sweep_thresholds.empty()) r.sweep = sweep(evals, opts.sweep_thresholds, opts.rule);
  return r;
}

/// Run a detector source over a split and score it. Per-image failures are
/// recorded and count as misses; they never affect other images.
inline EvalResult run_eval(const CocoDataset& ds, const std::vector<std::int64_t>& split, DetectorSource& source,
                           const EvalOptions& opts = {}) {
  if (split.empty()) throw Error(Errc::empty_input, "evaluation split is empty");
  std::vector<const CocoImage*> images;
  std::vector<std::int64_t> unknown;
  for (auto id : split) {
    const CocoImage* im = ds.find_image(id);
    if (im == nullptr) unknown.push_back(id);
    images.push_back(im);
  }
  if (!unknown.empty()) throw Error(Errc::validation, "split references unknown image ids: " + detail::join_ids(unknown));
  if (const auto gaps = source.missing(images); !gaps.empty())
    throw Error(Errc::coverage, "detector source has no predictions for image ids: " + detail::join_ids(gaps));

  std::vector<std::vector<Detection>> preds(images.size());
  std::vector<std::optional<std::string>> errors(images.size());
  parallel_for(images.size(), opts.workers, [&](std::size_t i) {
    std::vector<ClassId> classes;
    if (opts.query_all_classes) {
      classes = opts.all_classes;
    } else {
      std::set<ClassId> s;
      for (const auto& gt : ground_truths_for(ds, images[i]->id)) s.insert(gt.class_id);
      classes.assign(s.begin(), s.end());
    }
    try {
      preds[i] = source.predict(*images[i], classes);
    } catch (const Error& e) {
      if (e.code() == Errc::coverage) throw;
      errors[i] = e.what();
    } catch (const std::exception& e) {
      errors[i] = e.what();
    }
  });

  EvalResult res;
  res.run.dataset = opts.dataset;
  res.run.method = opts.method;
  res.run.column = opts.column;
  res.run.config = {{"tau", opts.tau},
                    {"rule", opts.rule == MatchRule::best_per_class ? "best_per_class" : "greedy_all"},
                    {"query_all_classes", opts.query_all_classes}};
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (errors[i]) {
      res.run.failures.push_back({images[i]->id, *errors[i]});
      res.run.predictions[images[i]->id] = {};
    } else {
      res.run.predictions[images[i]->id] = std::move(preds[i]);
    }
  }
  res.report = score_predictions(ds, split, res.run.predictions, opts);
  res.report.failures = res.run.failures;
  return res;
}

struct Comparison {
  double overall = 0.0;
  std::map<ClassId, std::optional<double>> per_class;
};

/// Relative uplift of a report over a baseline on the same dataset and tau.
inline Comparison compare(const EvalReport& report, const EvalReport& baseline) {
  if (report.dataset != baseline.dataset)
    throw Error(Errc::comparison, "cannot compare runs on '" + report.dataset + "' and '" + baseline.dataset + "'");
  if (report.tau != baseline.tau) throw Error(Errc::comparison, "cannot compare runs at different IoU thresholds");
  Comparison c;
  c.overall = uplift(report.hit_rate, baseline.hit_rate);
  for (const auto& [cls, hr] : report.per_class) {
    const auto it = baseline.per_class.find(cls);
    if (it == baseline.per_class.end() || it->second == 0.0) {
      c.per_class[cls] = std::nullopt;
    } else {
      c.per_class[cls] = uplift(hr, it->second);
    }
  }
  return c;
}

inline void attach_baseline(EvalReport& report, const EvalReport& baseline) {
  report.uplift = compare(report, baseline).overall;
  report.baseline_method = baseline.method;
}

inline json to_json(const EvalReport& r) {
  json per_class = json::object();
  for (const auto& [c, v] : r.per_class) per_class[std::to_string(c)] = v;
  json failures = json::array();
  for (const auto& f : r.failures) failures.push_back({{"image_id", f.image_id}, {"reason", f.reason}});
  json j = {{"dataset", r.dataset},
            {"method", r.method},
            {"column", r.column},
            {"tau", r.tau},
            {"images", r.images},
            {"hit_rate", r.hit_rate},
            {"hit_rate_pooled", r.hit_rate_pooled},
            {"per_class", per_class},
            {"map50", r.map50},
            {"map_skipped", r.map_skipped},
            {"sweep", {{"thresholds", r.sweep.thresholds}, {"hit_rates", r.sweep.hit_rates}}},
            {"failures", failures}};
  if (r.baseline_method) j["baseline_method"] = *r.baseline_method;
  if (r.uplift) j["uplift"] = *r.uplift;
  return j;
}

inline EvalReport eval_report_from_json(const json& j) {
  EvalReport r;
  r.dataset = j.value("dataset", "");
  r.method = j.at("method").get<std::string>();
  r.column = j.value("column", "");
  r.tau = j.value("tau", 0.5);
  r.images = j.value("images", std::size_t{0});
  r.hit_rate = j.at("hit_rate").get<double>();
  r.hit_rate_pooled = j.value("hit_rate_pooled", r.hit_rate);
  if (j.contains("per_class"))
    for (auto it = j["per_class"].begin(); it != j["per_class"].end(); ++it) r.per_class[std::stoi(it.key())] = it.value().get<double>();
  r.map50 = j.value("map50", 0.0);
  r.map_skipped = j.value("map_skipped", std::vector<ClassId>{});
  if (j.contains("sweep")) {
    r.sweep.thresholds = j["sweep"].value("thresholds", std::vector<double>{});
    r.sweep.hit_rates = j["sweep"].value("hit_rates", std::vector<double>{});
  }
  if (j.contains("failures"))
    for (const auto& f : j["failures"]) r.failures.push_back({f.at("image_id").get<std::int64_t>(), f.value("reason", "")});
  if (j.contains("baseline_method")) r.baseline_method = j["baseline_method"].get<std::string>();
  if (j.contains("uplift")) r.uplift = j["uplift"].get<double>();
  return r;
}

}  // namespace spillkit
