#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "spillkit/concurrency.hpp"
#include "spillkit/error.hpp"
#include "spillkit/tensor_store.hpp"

namespace spillkit {

/// Dense row-major float matrix.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<float> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, float fill = 0.0f) : rows(r), cols(c), data(r * c, fill) {}
  Matrix(std::size_t r, std::size_t c, std::vector<float> values) : rows(r), cols(c), data(std::move(values)) {
    if (data.size() != r * c) throw Error(Errc::dimension, "matrix data does not match " + shape());
  }

  float operator()(std::size_t i, std::size_t j) const { return data[i * cols + j]; }
  float& operator()(std::size_t i, std::size_t j) { return data[i * cols + j]; }

  std::string shape() const { return std::to_string(rows) + "x" + std::to_string(cols); }

  bool operator==(const Matrix&) const = default;
};

/// Low-rank update factors: A is d_out x r, B is r x d_in, applied as
/// W + alpha * A * B.
struct LoraAdapter {
  Matrix a;
  Matrix b;
  double alpha = 1.0;

  std::size_t rank() const { return a.cols; }

  static LoraAdapter with_default_alpha(Matrix a, Matrix b) {
    const double alpha = a.cols == 0 ? 1.0 : 1.0 / static_cast<double>(a.cols);
    return {std::move(a), std::move(b), alpha};
  }

  void validate() const {
    if (a.cols == 0) throw Error(Errc::dimension, "adapter rank must be at least 1");
    if (a.cols != b.rows)
      throw Error(Errc::dimension, "adapter inner dimensions disagree: A is " + a.shape() + ", B is " + b.shape());
    if (!(alpha > 0) || !std::isfinite(alpha)) throw Error(Errc::invalid_input, "adapter alpha must be positive");
  }
};

/// W' = W + alpha * A * B, accumulated in double and stored as float.
inline Matrix merge(const Matrix& w, const LoraAdapter& adapter) {
  adapter.validate();
  if (w.rows != adapter.a.rows || w.cols != adapter.b.cols)
    throw Error(Errc::dimension, "weight is " + w.shape() + " but adapter produces " + adapter.a.shape() + " * " +
                                     adapter.b.shape());
  const std::size_t r = adapter.rank();
  Matrix out = w;
  for (std::size_t i = 0; i < w.rows; ++i) {
    for (std::size_t j = 0; j < w.cols; ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < r; ++k)
        acc += static_cast<double>(adapter.a(i, k)) * static_cast<double>(adapter.b(k, j));
      const double delta = adapter.alpha * acc;
      if (delta != 0.0) out(i, j) = static_cast<float>(static_cast<double>(w(i, j)) + delta);
    }
  }
  return out;
}

enum class Pathway { language, vision, both };

inline Pathway pathway_from_string(const std::string& s) {
  if (s == "L") return Pathway::language;
  if (s == "V") return Pathway::vision;
  if (s == "V+L" || s == "L+V") return Pathway::both;
  throw Error(Errc::invalid_input, "variant must be one of L, V, V+L (got '" + s + "')");
}

inline std::string to_string(Pathway p) {
  switch (p) {
    case Pathway::language: return "L";
    case Pathway::vision: return "V";
    case Pathway::both: return "V+L";
  }
  return "?";
}

/// Name prefixes that assign a tensor to the vision or language pathway.
struct PathwayPrefixes {
  std::vector<std::string> vision{"visual.", "vision_tower.", "vision_model.", "model.visual."};
  std::vector<std::string> language{"model.layers.", "language_model.", "model.language_model.", "lm_head."};

  std::optional<Pathway> classify(const std::string& name) const {
    for (const auto& p : vision)
      if (name.rfind(p, 0) == 0) return Pathway::vision;
    for (const auto& p : language)
      if (name.rfind(p, 0) == 0) return Pathway::language;
    return std::nullopt;
  }

  bool selected(const std::string& name, Pathway variant) const {
    const auto p = classify(name);
    if (!p) return false;
    return variant == Pathway::both || *p == variant;
  }
};

inline Matrix matrix_from_store(const TensorStore& store, const std::string& name) {
  const auto& info = store.info(name);
  if (info.shape.size() != 2) throw Error(Errc::dimension, "tensor '" + name + "' is not a matrix");
  return Matrix(static_cast<std::size_t>(info.shape[0]), static_cast<std::size_t>(info.shape[1]), store.read_f32(name));
}

/// Adapters stored as "<target>.lora_A" / "<target>.lora_B" pairs. Alpha comes
/// from `alpha_override`, else a "<target>.alpha" scalar tensor, else an
/// "alpha" metadata entry, else 1/r.
inline std::map<std::string, LoraAdapter> adapters_from_store(const TensorStore& store,
                                                              std::optional<double> alpha_override = std::nullopt) {
  static constexpr std::string_view kA = ".lora_A";
  std::optional<double> meta_alpha;
  if (store.metadata().contains("alpha")) {
    const auto& v = store.metadata()["alpha"];
    meta_alpha = v.is_string() ? std::stod(v.get<std::string>()) : v.get<double>();
  }
  std::map<std::string, LoraAdapter> out;
  for (const auto& t : store.tensors()) {
    if (t.name.size() <= kA.size() || t.name.compare(t.name.size() - kA.size(), kA.size(), kA) != 0) continue;
    const std::string target = t.name.substr(0, t.name.size() - kA.size());
    const std::string b_name = target + ".lora_B";
    if (!store.contains(b_name)) throw Error(Errc::validation, "adapter '" + target + "' is missing its B factor");
    LoraAdapter ad = LoraAdapter::with_default_alpha(matrix_from_store(store, t.name), matrix_from_store(store, b_name));
    if (alpha_override) {
      ad.alpha = *alpha_override;
    } else if (store.contains(target + ".alpha")) {
      const auto v = store.read_f32(target + ".alpha");
      if (v.size() != 1) throw Error(Errc::validation, "adapter '" + target + "' alpha must be a scalar");
      ad.alpha = v[0];
    } else if (meta_alpha) {
      ad.alpha = *meta_alpha;
    }
    ad.validate();
    out.emplace(target, std::move(ad));
  }
  for (const auto& t : store.tensors()) {
    static constexpr std::string_view kB = ".lora_B";
    if (t.name.size() > kB.size() && t.name.compare(t.name.size() - kB.size(), kB.size(), kB) == 0 &&
        !out.contains(t.name.substr(0, t.name.size() - kB.size())))
      throw Error(Errc::validation, "tensor '" + t.name + "' has no matching A factor");
  }
  return out;
}

/// Names of base tensors an adapter set would modify under a variant.
inline std::vector<std::string> merge_targets(const TensorStore& base, const std::map<std::string, LoraAdapter>& adapters,
                                              Pathway variant, const PathwayPrefixes& prefixes = {}) {
  for (const auto& [target, _] : adapters)
    if (!base.contains(target)) throw Error(Errc::unknown_target, "adapter targets missing tensor '" + target + "'");
  std::vector<std::string> out;
  for (const auto& [target, _] : adapters)
    if (prefixes.selected(target, variant)) out.push_back(target);
  return out;
}

/// Apply every selected adapter to a copy of the base store. Tensors not
/// selected keep their bytes exactly.
inline TensorStore merge_store(const TensorStore& base, const std::map<std::string, LoraAdapter>& adapters,
                               Pathway variant, const PathwayPrefixes& prefixes = {},
                               std::size_t workers = default_workers()) {
  const auto targets = merge_targets(base, adapters, variant, prefixes);
  std::vector<Matrix> merged(targets.size());
  parallel_for(targets.size(), workers, [&](std::size_t i) {
    merged[i] = merge(matrix_from_store(base, targets[i]), adapters.at(targets[i]));
  });
  TensorStore out = base;
  for (std::size_t i = 0; i < targets.size(); ++i) out.write_f32(targets[i], merged[i].data);
  return out;
}

}  // namespace spillkit
