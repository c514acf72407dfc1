#pragma once

#include <algorithm>
#include <cstdint>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "spillkit/error.hpp"
#include "spillkit/util.hpp"

namespace spillkit {

enum class DataSource { synthetic, public_web, proprietary };

inline std::string to_string(DataSource s) {
  switch (s) {
    case DataSource::synthetic: return "synthetic";
    case DataSource::public_web: return "public";
    case DataSource::proprietary: return "proprietary";
  }
  return "unknown";
}

inline DataSource data_source_from_string(const std::string& s) {
  if (s == "synthetic") return DataSource::synthetic;
  if (s == "public") return DataSource::public_web;
  if (s == "proprietary") return DataSource::proprietary;
  throw Error(Errc::invalid_input, "unknown data source '" + s + "'");
}

using SplitCounts = std::vector<std::pair<std::string, std::size_t>>;

struct SplitManifest {
  DataSource source = DataSource::public_web;
  std::uint64_t seed = 0;
  std::vector<std::pair<std::string, std::vector<std::int64_t>>> splits;

  const std::vector<std::int64_t>& split(const std::string& name) const {
    for (const auto& [n, ids] : splits)
      if (n == name) return ids;
    throw Error(Errc::not_found, "no split named '" + name + "'");
  }

  bool operator==(const SplitManifest&) const = default;
};

/// Shipped split profiles. The public profile uses fixed counts
/// (520 evaluation, 100 adaptation); the remaining public images are
/// left unassigned.
inline SplitCounts default_split_profile(DataSource source) {
  switch (source) {
    case DataSource::public_web: return {{"eval", 520}, {"adapt", 100}};
    case DataSource::proprietary: return {{"icl_pool", 50}, {"eval", 100}};
    case DataSource::synthetic: return {{"adapt", 2000}};
  }
  return {};
}

/// Seeded, order-independent partition: ids are sorted, shuffled with a
/// platform-stable Fisher-Yates, then cut into consecutive runs.
inline SplitManifest make_splits(std::span<const std::int64_t> ids, const SplitCounts& counts, std::uint64_t seed,
                                 DataSource source = DataSource::public_web) {
  std::vector<std::int64_t> pool(ids.begin(), ids.end());
  std::sort(pool.begin(), pool.end());
  if (std::adjacent_find(pool.begin(), pool.end()) != pool.end())
    throw Error(Errc::invalid_input, "duplicate image ids in split input");
  std::size_t requested = 0;
  std::set<std::string> names;
  for (const auto& [name, n] : counts) {
    if (!names.insert(name).second) throw Error(Errc::invalid_input, "split '" + name + "' listed twice");
    requested += n;
  }
  if (requested > pool.size())
    throw Error(Errc::count, "requested " + std::to_string(requested) + " images but only " +
                                 std::to_string(pool.size()) + " are available");

  for (std::size_t i = pool.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(unit_interval(seed, i) * static_cast<double>(i));
    std::swap(pool[i - 1], pool[std::min(j, i - 1)]);
  }

  SplitManifest m;
  m.source = source;
  m.seed = seed;
  std::size_t at = 0;
  for (const auto& [name, n] : counts) {
    std::vector<std::int64_t> chunk(pool.begin() + static_cast<std::ptrdiff_t>(at),
                                    pool.begin() + static_cast<std::ptrdiff_t>(at + n));
    std::sort(chunk.begin(), chunk.end());
    m.splits.emplace_back(name, std::move(chunk));
    at += n;
  }
  return m;
}

inline json to_json(const SplitManifest& m) {
  json splits = json::object();
  for (const auto& [name, ids] : m.splits) splits[name] = ids;
  json order = json::array();
  for (const auto& [name, _] : m.splits) order.push_back(name);
  return {{"source", to_string(m.source)}, {"seed", m.seed}, {"order", order}, {"splits", splits}};
}

inline SplitManifest manifest_from_json(const json& j) {
  SplitManifest m;
  m.source = data_source_from_string(j.at("source").get<std::string>());
  m.seed = j.value("seed", std::uint64_t{0});
  for (const auto& name : j.at("order")) {
    const auto n = name.get<std::string>();
    m.splits.emplace_back(n, j.at("splits").at(n).get<std::vector<std::int64_t>>());
  }
  return m;
}

}  // namespace spillkit
