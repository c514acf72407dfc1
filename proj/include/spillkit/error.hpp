#pragma once

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace spillkit {

enum class Errc {
  invalid_geometry,
  invalid_threshold,
  empty_input,
  invalid_input,
  division_by_zero,
  parse,
  validation,
  degenerate_box,
  range,
  count,
  parameter_band,
  geometry,
  truncation,
  corruption,
  dimension,
  unknown_target,
  transport,
  context_overflow,
  unsupported_shot_count,
  coverage,
  inconsistency,
  comparison,
  state,
  empty_mask,
  not_found,
  io,
  unsupported,
};

inline std::string_view to_string(Errc c) {
  switch (c) {
    case Errc::invalid_geometry: return "invalid_geometry";
    case Errc::invalid_threshold: return "invalid_threshold";
    case Errc::empty_input: return "empty_input";
    case Errc::invalid_input: return "invalid_input";
    case Errc::division_by_zero: return "division_by_zero";
    case Errc::parse: return "parse";
    case Errc::validation: return "validation";
    case Errc::degenerate_box: return "degenerate_box";
    case Errc::range: return "range";
    case Errc::count: return "count";
    case Errc::parameter_band: return "parameter_band";
    case Errc::geometry: return "geometry";
    case Errc::truncation: return "truncation";
    case Errc::corruption: return "corruption";
    case Errc::dimension: return "dimension";
    case Errc::unknown_target: return "unknown_target";
    case Errc::transport: return "transport";
    case Errc::context_overflow: return "context_overflow";
    case Errc::unsupported_shot_count: return "unsupported_shot_count";
    case Errc::coverage: return "coverage";
    case Errc::inconsistency: return "inconsistency";
    case Errc::comparison: return "comparison";
    case Errc::state: return "state";
    case Errc::empty_mask: return "empty_mask";
    case Errc::not_found: return "not_found";
    case Errc::io: return "io";
    case Errc::unsupported: return "unsupported";
  }
  return "unknown";
}

/// Every failure raised by the library carries a machine-readable code so
/// callers (and the CLI's structured error output) can branch on it.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what) : std::runtime_error(what), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

/// Malformed input with the byte position where decoding stopped.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t offset)
      : Error(Errc::parse, what + " (at byte " + std::to_string(offset) + ")"), offset_(offset) {}

  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

/// A configuration or job parameter outside its allowed band. `field` is the
/// dotted path of the offending value, e.g. "generation.lora_strength".
class BandError : public Error {
 public:
  BandError(std::string field, const std::string& what)
      : Error(Errc::parameter_band, field + ": " + what), field_(std::move(field)) {}

  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

}  // namespace spillkit
