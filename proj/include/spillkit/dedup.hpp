#pragma once

#include <algorithm>
#include <bit>
#include <cstdint>
#include <filesystem>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include "spillkit/concurrency.hpp"
#include "spillkit/image.hpp"

namespace spillkit {

/// 64-bit difference hash: the image is box-averaged down to 9x8 cells and
/// each bit records whether a cell is brighter than its right neighbour.
struct PerceptualHash {
  std::uint64_t bits = 0;
  bool operator==(const PerceptualHash&) const = default;
};

inline int hamming(PerceptualHash a, PerceptualHash b) { return std::popcount(a.bits ^ b.bits); }

inline PerceptualHash dhash(const GrayImage& img) {
  if (img.width <= 0 || img.height <= 0) throw Error(Errc::invalid_input, "cannot hash an empty image");
  constexpr int kCols = 9, kRows = 8;
  auto span_of = [](int cell, int cells, int extent) {
    int lo = static_cast<int>(static_cast<long long>(cell) * extent / cells);
    int hi = static_cast<int>(static_cast<long long>(cell + 1) * extent / cells);
    lo = std::min(lo, extent - 1);
    return std::pair{lo, std::max(hi, lo + 1)};
  };
  double cells[kRows][kCols];
  for (int r = 0; r < kRows; ++r) {
    const auto [y0, y1] = span_of(r, kRows, img.height);
    for (int c = 0; c < kCols; ++c) {
      const auto [x0, x1] = span_of(c, kCols, img.width);
      double sum = 0;
      for (int y = y0; y < y1; ++y)
        for (int x = x0; x < x1; ++x) sum += img.at(x, y);
      cells[r][c] = sum / static_cast<double>((y1 - y0) * (x1 - x0));
    }
  }
  PerceptualHash h;
  int bit = 0;
  for (int r = 0; r < kRows; ++r)
    for (int c = 0; c + 1 < kCols; ++c, ++bit)
      if (cells[r][c] > cells[r][c + 1]) h.bits |= (std::uint64_t{1} << bit);
  return h;
}

struct DedupInput {
  std::string id;
  std::filesystem::path path;
};

struct DuplicateCluster {
  std::string canonical;
  std::vector<std::string> members;  // sorted, includes canonical
};

struct DedupSkip {
  std::string id;
  std::string reason;
};

struct DedupResult {
  std::vector<DuplicateCluster> clusters;  // sorted by canonical id
  std::vector<DedupSkip> skipped;
  std::map<std::string, PerceptualHash> hashes;
};

/// Single-linkage clustering of hashes within `max_hamming` bits. The
/// canonical member of each cluster is its smallest id, so the result does
/// not depend on input order.
inline DedupResult cluster_hashes(const std::map<std::string, PerceptualHash>& hashes, int max_hamming) {
  std::vector<std::string> ids;
  std::vector<PerceptualHash> hs;
  for (const auto& [id, h] : hashes) {
    ids.push_back(id);
    hs.push_back(h);
  }
  std::vector<std::size_t> parent(ids.size());
  std::iota(parent.begin(), parent.end(), std::size_t{0});
  auto find = [&](std::size_t x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  };
  for (std::size_t i = 0; i < ids.size(); ++i)
    for (std::size_t j = i + 1; j < ids.size(); ++j)
      if (hamming(hs[i], hs[j]) <= max_hamming) {
        const auto a = find(i), b = find(j);
        parent[std::max(a, b)] = std::min(a, b);
      }
  std::map<std::size_t, DuplicateCluster> groups;
  for (std::size_t i = 0; i < ids.size(); ++i) groups[find(i)].members.push_back(ids[i]);
  DedupResult res;
  res.hashes = hashes;
  for (auto& [_, g] : groups) {
    g.canonical = g.members.front();
    res.clusters.push_back(std::move(g));
  }
  return res;
}

inline DedupResult dedup(const std::vector<DedupInput>& images, int max_hamming = 8,
                         std::size_t workers = default_workers()) {
  std::vector<std::optional<PerceptualHash>> hashes(images.size());
  std::vector<std::string> errors(images.size());
  parallel_for(images.size(), workers, [&](std::size_t i) {
    try {
      hashes[i] = dhash(load_png_gray(images[i].path));
    } catch (const std::exception& e) {
      errors[i] = e.what();
    }
  });
  std::map<std::string, PerceptualHash> ok;
  std::vector<DedupSkip> skipped;
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (hashes[i]) {
      ok[images[i].id] = *hashes[i];
    } else {
      skipped.push_back({images[i].id, errors[i]});
    }
  }
  DedupResult res = cluster_hashes(ok, max_hamming);
  std::sort(skipped.begin(), skipped.end(), [](const DedupSkip& a, const DedupSkip& b) { return a.id < b.id; });
  res.skipped = std::move(skipped);
  return res;
}

}  // namespace spillkit
