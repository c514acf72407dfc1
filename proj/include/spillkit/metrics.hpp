#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "spillkit/error.hpp"
#include "spillkit/geometry.hpp"

namespace spillkit {

/// Predictions and ground truths for one image.
struct ImageEval {
  std::vector<Detection> predictions;
  std::vector<GroundTruth> ground_truths;
};

/// How predictions are paired with ground truths when counting hits.
enum class MatchRule {
  /// One query per (image, class): the top-scoring prediction of the class is
  /// a hit if it reaches tau against any ground truth of that class. The unit
  /// counted is the (image, class) pair.
  best_per_class,
  /// Every ground truth is a unit; predictions are matched greedily by
  /// descending score to the best unmatched ground truth.
  greedy_all,
};

struct HitTally {
  std::size_t hits = 0;
  std::size_t total = 0;

  double rate() const { return total == 0 ? 0.0 : static_cast<double>(hits) / static_cast<double>(total); }
};

struct HitStats {
  std::map<ClassId, HitTally> per_class;
  HitTally overall;

  double pooled() const { return overall.rate(); }

  /// Mean of per-class rates; classes without any ground truth are absent.
  double class_mean() const {
    if (per_class.empty()) return 0.0;
    double sum = 0.0;
    for (const auto& [_, t] : per_class) sum += t.rate();
    return sum / static_cast<double>(per_class.size());
  }
};

namespace detail {

inline std::vector<std::size_t> score_order(const std::vector<const Detection*>& dets) {
  std::vector<std::size_t> order(dets.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return dets[a]->score > dets[b]->score; });
  return order;
}

// Greedy matching of one class within one image; returns matched GT count.
inline std::size_t greedy_matches(const std::vector<const Detection*>& preds,
                                  const std::vector<const GroundTruth*>& gts, double tau) {
  std::vector<bool> taken(gts.size(), false);
  std::size_t hits = 0;
  for (std::size_t idx : score_order(preds)) {
    double best = -1.0;
    std::size_t best_gt = gts.size();
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (taken[g]) continue;
      const double v = iou(preds[idx]->bbox, gts[g]->bbox);
      if (v > best) {
        best = v;
        best_gt = g;
      }
    }
    if (best_gt < gts.size() && best >= tau) {
      taken[best_gt] = true;
      ++hits;
    }
  }
  return hits;
}

}  // namespace detail

inline HitStats hit_stats(std::span<const ImageEval> images, double tau,
                          MatchRule rule = MatchRule::best_per_class) {
  check_threshold(tau);
  HitStats stats;
  for (const auto& img : images) {
    std::map<ClassId, std::vector<const GroundTruth*>> gts_by_class;
    for (const auto& gt : img.ground_truths) gts_by_class[gt.class_id].push_back(&gt);
    for (const auto& [cls, gts] : gts_by_class) {
      std::vector<const Detection*> preds;
      for (const auto& d : img.predictions)
        if (d.class_id == cls) preds.push_back(&d);

      std::size_t hits = 0;
      std::size_t units = 0;
      if (rule == MatchRule::best_per_class) {
        units = 1;
        const Detection* top = nullptr;
        for (const auto* d : preds)
          if (top == nullptr || d->score > top->score) top = d;
        if (top != nullptr) {
          for (const auto* gt : gts)
            if (iou(top->bbox, gt->bbox) >= tau) {
              hits = 1;
              break;
            }
        }
      } else {
        units = gts.size();
        hits = detail::greedy_matches(preds, gts, tau);
      }
      auto& t = stats.per_class[cls];
      t.hits += hits;
      t.total += units;
      stats.overall.hits += hits;
      stats.overall.total += units;
    }
  }
  if (stats.overall.total == 0) throw Error(Errc::empty_input, "evaluation set contains no ground-truth boxes");
  return stats;
}

/// Fraction of scored units that are hits at threshold tau.
inline double mean_hit_rate(std::span<const ImageEval> images, double tau,
                            MatchRule rule = MatchRule::best_per_class) {
  return hit_stats(images, tau, rule).pooled();
}

struct SweepCurve {
  std::vector<double> thresholds;
  std::vector<double> hit_rates;
};

inline std::vector<double> default_sweep_thresholds() { return {0.5, 0.6, 0.7, 0.8, 0.9}; }

inline SweepCurve sweep(std::span<const ImageEval> images, std::span<const double> thresholds,
                        MatchRule rule = MatchRule::best_per_class) {
  if (thresholds.empty()) throw Error(Errc::invalid_input, "sweep needs at least one threshold");
  for (std::size_t i = 0; i < thresholds.size(); ++i) {
    check_threshold(thresholds[i]);
    if (i > 0 && !(thresholds[i] > thresholds[i - 1]))
      throw Error(Errc::invalid_input, "sweep thresholds must be strictly increasing");
  }
  SweepCurve curve;
  curve.thresholds.assign(thresholds.begin(), thresholds.end());
  for (double t : thresholds) curve.hit_rates.push_back(mean_hit_rate(images, t, rule));
  return curve;
}

struct ApReport {
  double map = 0.0;
  std::map<ClassId, double> per_class;
  /// Classes that appear only in detections; they carry no AP term.
  std::vector<ClassId> skipped;
};

/// Area under the precision envelope (all-points interpolation).
inline double all_points_ap(const std::vector<bool>& tp_in_rank_order, std::size_t num_gt) {
  if (num_gt == 0) return 0.0;
  const std::size_t n = tp_in_rank_order.size();
  std::vector<double> precision(n), recall(n);
  std::size_t tp = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (tp_in_rank_order[i]) ++tp;
    precision[i] = static_cast<double>(tp) / static_cast<double>(i + 1);
    recall[i] = static_cast<double>(tp) / static_cast<double>(num_gt);
  }
  for (std::size_t i = n; i-- > 1;) precision[i - 1] = std::max(precision[i - 1], precision[i]);
  double ap = 0.0;
  double prev_recall = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    ap += (recall[i] - prev_recall) * precision[i];
    prev_recall = recall[i];
  }
  return ap;
}

/// Per-class average precision at a single IoU threshold, averaged over the
/// classes that have ground truth.
inline ApReport average_precision(std::span<const std::vector<Detection>> detections,
                                  std::span<const std::vector<GroundTruth>> ground_truths,
                                  double iou_threshold = 0.5) {
  check_threshold(iou_threshold);
  if (detections.size() != ground_truths.size())
    throw Error(Errc::invalid_input, "detections and ground truths must cover the same images");

  std::map<ClassId, std::size_t> gt_count;
  std::map<ClassId, bool> seen_in_dets;
  for (const auto& img : ground_truths)
    for (const auto& gt : img) ++gt_count[gt.class_id];
  for (const auto& img : detections)
    for (const auto& d : img) {
      if (!std::isfinite(d.score)) throw Error(Errc::invalid_input, "detection without a finite score");
      seen_in_dets[d.class_id] = true;
    }

  ApReport report;
  for (const auto& [cls, _] : seen_in_dets)
    if (!gt_count.contains(cls)) report.skipped.push_back(cls);

  for (const auto& [cls, num_gt] : gt_count) {
    struct Ranked {
      double score;
      std::size_t image;
      const Detection* det;
    };
    std::vector<Ranked> ranked;
    for (std::size_t i = 0; i < detections.size(); ++i)
      for (const auto& d : detections[i])
        if (d.class_id == cls) ranked.push_back({d.score, i, &d});
    std::stable_sort(ranked.begin(), ranked.end(), [](const Ranked& a, const Ranked& b) { return a.score > b.score; });

    std::vector<std::vector<bool>> taken(ground_truths.size());
    for (std::size_t i = 0; i < ground_truths.size(); ++i) taken[i].assign(ground_truths[i].size(), false);

    std::vector<bool> tp;
    tp.reserve(ranked.size());
    for (const auto& r : ranked) {
      const auto& gts = ground_truths[r.image];
      double best = -1.0;
      std::size_t best_gt = gts.size();
      for (std::size_t g = 0; g < gts.size(); ++g) {
        if (gts[g].class_id != cls || taken[r.image][g]) continue;
        const double v = iou(r.det->bbox, gts[g].bbox);
        if (v > best) {
          best = v;
          best_gt = g;
        }
      }
      const bool hit = best_gt < gts.size() && best >= iou_threshold;
      if (hit) taken[r.image][best_gt] = true;
      tp.push_back(hit);
    }
    report.per_class[cls] = all_points_ap(tp, num_gt);
  }

  if (!report.per_class.empty()) {
    double sum = 0.0;
    for (const auto& [_, ap] : report.per_class) sum += ap;
    report.map = sum / static_cast<double>(report.per_class.size());
  }
  return report;
}

inline double map50(std::span<const std::vector<Detection>> detections,
                    std::span<const std::vector<GroundTruth>> ground_truths) {
  return average_precision(detections, ground_truths, 0.5).map;
}

/// Relative improvement of a method's rate over the zero-shot rate, percent.
inline double uplift(double hr_method, double hr_zeroshot) {
  if (hr_zeroshot == 0.0)
    throw Error(Errc::division_by_zero, "uplift is undefined for a zero baseline hit-rate");
  if (!std::isfinite(hr_method) || !std::isfinite(hr_zeroshot) || hr_zeroshot < 0.0)
    throw Error(Errc::invalid_input, "uplift needs finite rates and a positive baseline");
  return (hr_method / hr_zeroshot - 1.0) * 100.0;
}

}  // namespace spillkit
