#pragma once

#include <algorithm>
#include <map>
#include <random>
#include <vector>

#include "spillkit/spillkit.hpp"

// Independent reference implementations used only by tests.

namespace spillkit::testing {

/// IoU of integer-cornered boxes by counting covered unit cells.
inline double raster_iou(const BBox& a, const BBox& b) {
  const int x0 = static_cast<int>(std::min(a.x_min, b.x_min));
  const int y0 = static_cast<int>(std::min(a.y_min, b.y_min));
  const int x1 = static_cast<int>(std::max(a.x_max, b.x_max));
  const int y1 = static_cast<int>(std::max(a.y_max, b.y_max));
  long inter = 0, uni = 0;
  for (int y = y0; y < y1; ++y) {
    for (int x = x0; x < x1; ++x) {
      const double cx = x + 0.5, cy = y + 0.5;
      const bool in_a = cx > a.x_min && cx < a.x_max && cy > a.y_min && cy < a.y_max;
      const bool in_b = cx > b.x_min && cx < b.x_max && cy > b.y_min && cy < b.y_max;
      inter += in_a && in_b;
      uni += in_a || in_b;
    }
  }
  return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

inline BBox random_box(std::mt19937_64& rng, double extent = 100.0) {
  std::uniform_real_distribution<double> u(0.0, extent);
  const double x0 = u(rng), x1 = u(rng), y0 = u(rng), y1 = u(rng);
  return {std::min(x0, x1), std::min(y0, y1), std::max(x0, x1), std::max(y0, y1)};
}

inline BBox random_int_box(std::mt19937_64& rng, int extent = 48) {
  std::uniform_int_distribution<int> u(0, extent);
  int x0 = u(rng), x1 = u(rng), y0 = u(rng), y1 = u(rng);
  if (x0 == x1) ++x1;
  if (y0 == y1) ++y1;
  return {double(std::min(x0, x1)), double(std::min(y0, y1)), double(std::max(x0, x1)), double(std::max(y0, y1))};
}

/// AP per class by recomputing the greedy matching from scratch at every rank
/// cutoff and integrating max precision over recall levels. Quadratic, but
/// shares no code with the library's single-pass accumulator.
inline double brute_force_map(const std::vector<std::vector<Detection>>& dets,
                              const std::vector<std::vector<GroundTruth>>& gts, double thr) {
  std::map<ClassId, int> num_gt;
  for (const auto& img : gts)
    for (const auto& g : img) ++num_gt[g.class_id];
  if (num_gt.empty()) return 0.0;

  double total = 0.0;
  for (const auto& [cls, n_gt] : num_gt) {
    struct Item {
      double score;
      std::size_t image;
      BBox box;
    };
    std::vector<Item> items;
    for (std::size_t i = 0; i < dets.size(); ++i)
      for (const auto& d : dets[i])
        if (d.class_id == cls) items.push_back({d.score, i, d.bbox});
    std::stable_sort(items.begin(), items.end(), [](const Item& a, const Item& b) { return a.score > b.score; });

    const std::size_t n = items.size();
    std::vector<double> precision(n), recall(n);
    for (std::size_t k = 1; k <= n; ++k) {
      std::vector<std::vector<char>> used(gts.size());
      for (std::size_t i = 0; i < gts.size(); ++i) used[i].assign(gts[i].size(), 0);
      int tp = 0;
      for (std::size_t r = 0; r < k; ++r) {
        const auto& g = gts[items[r].image];
        int best = -1;
        double best_v = -1.0;
        for (std::size_t j = 0; j < g.size(); ++j) {
          if (g[j].class_id != cls || used[items[r].image][j]) continue;
          const double v = iou(items[r].box, g[j].bbox);
          if (v > best_v) {
            best_v = v;
            best = static_cast<int>(j);
          }
        }
        if (best >= 0 && best_v >= thr) {
          used[items[r].image][static_cast<std::size_t>(best)] = 1;
          ++tp;
        }
      }
      precision[k - 1] = static_cast<double>(tp) / static_cast<double>(k);
      recall[k - 1] = static_cast<double>(tp) / static_cast<double>(n_gt);
    }
    double ap = 0.0, prev = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
      if (recall[k] <= prev) continue;
      double best_p = 0.0;
      for (std::size_t j = k; j < n; ++j) best_p = std::max(best_p, precision[j]);
      ap += (recall[k] - prev) * best_p;
      prev = recall[k];
    }
    total += ap;
  }
  return total / static_cast<double>(num_gt.size());
}

/// Random detection/ground-truth instance on a few images with near-miss
/// boxes so both hits and misses occur.
struct ApInstance {
  std::vector<std::vector<Detection>> dets;
  std::vector<std::vector<GroundTruth>> gts;
};

inline ApInstance random_ap_instance(std::mt19937_64& rng, int max_dets = 5, int max_gts = 3) {
  ApInstance inst;
  std::uniform_int_distribution<int> nd(0, max_dets), ng(1, max_gts), cls(1, 2), jit(-6, 6);
  std::uniform_real_distribution<double> score(0.0, 1.0);
  std::uniform_int_distribution<int> coin(0, 2);
  inst.gts.emplace_back();
  inst.dets.emplace_back();
  const int g = ng(rng);
  for (int i = 0; i < g; ++i) inst.gts[0].push_back({random_int_box(rng, 40), cls(rng)});
  const int d = nd(rng);
  for (int i = 0; i < d; ++i) {
    Detection det;
    if (coin(rng) != 0) {
      const auto& base = inst.gts[0][static_cast<std::size_t>(std::uniform_int_distribution<int>(0, g - 1)(rng))];
      det.bbox = {base.bbox.x_min + jit(rng), base.bbox.y_min + jit(rng), base.bbox.x_max + jit(rng), base.bbox.y_max + jit(rng)};
      if (det.bbox.x_max <= det.bbox.x_min) det.bbox.x_max = det.bbox.x_min + 1;
      if (det.bbox.y_max <= det.bbox.y_min) det.bbox.y_max = det.bbox.y_min + 1;
      det.class_id = coin(rng) == 0 ? cls(rng) : base.class_id;
    } else {
      det.bbox = random_int_box(rng, 40);
      det.class_id = cls(rng);
    }
    det.score = score(rng);
    inst.dets[0].push_back(det);
  }
  return inst;
}

/// Fixture of ten single-object images where exactly seven predictions reach
/// IoU 0.5.
inline std::vector<ImageEval> seven_of_ten_fixture() {
  std::vector<ImageEval> images;
  for (int i = 0; i < 10; ++i) {
    ImageEval im;
    const BBox gt{10, 10, 110, 110};
    im.ground_truths.push_back({gt, 1});
    // Hits are exact overlaps; misses are shifted far enough that IoU < 0.5.
    const BBox pred = i < 7 ? gt : BBox{60, 60, 160, 160};
    im.predictions.push_back({pred, 1, 0.9});
    images.push_back(std::move(im));
  }
  return images;
}

}  // namespace spillkit::testing
