#pragma once

#include <charconv>
#include <cmath>
#include <cstdio>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "spillkit/error.hpp"
#include "spillkit/eval.hpp"

namespace spillkit {

/// A methods-by-columns table of rates.
struct Table {
  std::string caption;
  std::string row_header = "Method";
  std::vector<std::string> columns;
  std::vector<std::string> row_labels;
  std::vector<std::vector<std::optional<double>>> cells;  // [row][column]

  std::optional<double> at(const std::string& row, const std::string& column) const {
    for (std::size_t r = 0; r < row_labels.size(); ++r)
      if (row_labels[r] == row)
        for (std::size_t c = 0; c < columns.size(); ++c)
          if (columns[c] == column) return cells[r][c];
    return std::nullopt;
  }

  bool operator==(const Table&) const = default;
};

enum class ReportFormat { markdown, csv, json };
enum class TableKind { hit_rate, map50, sweep };

inline ReportFormat report_format_from_string(const std::string& s) {
  if (s == "markdown" || s == "md") return ReportFormat::markdown;
  if (s == "csv") return ReportFormat::csv;
  if (s == "json") return ReportFormat::json;
  throw Error(Errc::invalid_input, "unknown report format '" + s + "'");
}

inline TableKind table_kind_from_string(const std::string& s) {
  if (s == "hit-rate" || s == "hit_rate") return TableKind::hit_rate;
  if (s == "map50" || s == "map") return TableKind::map50;
  if (s == "sweep") return TableKind::sweep;
  throw Error(Errc::invalid_input, "unknown table kind '" + s + "'");
}

/// Shortest text that parses back to the same double.
inline std::string exact_number(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

inline std::string fixed_number(double v, int precision) {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(precision);
  os << v;
  return os.str();
}

namespace detail {

inline std::size_t index_of(std::vector<std::string>& labels, const std::string& label) {
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (labels[i] == label) return i;
  labels.push_back(label);
  return labels.size() - 1;
}

}  // namespace detail

/// Pivot reports into a table: one row per method, one column per report
/// column label, in order of first appearance.
inline Table pivot_table(std::span<const EvalReport> reports, TableKind kind) {
  if (reports.empty()) throw Error(Errc::empty_input, "no reports to render");
  Table t;
  if (kind == TableKind::sweep) {
    const auto& thresholds = reports.front().sweep.thresholds;
    for (const auto& r : reports)
      if (r.sweep.thresholds != thresholds)
        throw Error(Errc::inconsistency, "reports were swept over different IoU thresholds");
    for (double th : thresholds) t.columns.push_back(fixed_number(th, 1));
    t.caption = "Hit-rate under varying IoU thresholds";
    for (const auto& r : reports) {
      const std::string label = r.column.empty() ? r.method : r.method + " (" + r.column + ")";
      t.row_labels.push_back(label);
      std::vector<std::optional<double>> row(r.sweep.hit_rates.begin(), r.sweep.hit_rates.end());
      t.cells.push_back(std::move(row));
    }
    return t;
  }

  const double tau = reports.front().tau;
  for (const auto& r : reports)
    if (r.tau != tau) throw Error(Errc::inconsistency, "reports mix IoU thresholds in one table");
  t.caption = kind == TableKind::hit_rate ? "Mean hit-rate @ IoU = " + exact_number(tau) : "mAP@50";
  for (const auto& r : reports) {
    const std::size_t row = detail::index_of(t.row_labels, r.method);
    const std::size_t col = detail::index_of(t.columns, r.column.empty() ? "value" : r.column);
    if (t.cells.size() <= row) t.cells.resize(row + 1);
    for (auto& cells : t.cells) cells.resize(t.columns.size());
    if (t.cells[row][col]) throw Error(Errc::inconsistency, "two reports for " + r.method + " / " + t.columns[col]);
    t.cells[row][col] = kind == TableKind::hit_rate ? r.hit_rate : r.map50;
  }
  for (auto& cells : t.cells) cells.resize(t.columns.size());
  return t;
}

inline std::string render_markdown(const Table& t, int precision = 2, const std::vector<EvalFailure>& failures = {}) {
  std::ostringstream os;
  if (!t.caption.empty()) os << "**" << t.caption << "**\n\n";
  os << "| " << t.row_header;
  for (const auto& c : t.columns) os << " | " << c;
  os << " |\n|---";
  for (std::size_t i = 0; i < t.columns.size(); ++i) os << "|---:";
  os << "|\n";
  for (std::size_t r = 0; r < t.row_labels.size(); ++r) {
    os << "| " << t.row_labels[r];
    for (const auto& cell : t.cells[r]) os << " | " << (cell ? fixed_number(*cell, precision) : "-");
    os << " |\n";
  }
  if (!failures.empty()) {
    os << "\nFailed detections (counted as misses):\n";
    for (const auto& f : failures) os << "- image " << f.image_id << ": " << f.reason << "\n";
  }
  return os.str();
}

namespace detail {

inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

inline std::vector<std::vector<std::string>> csv_rows(std::string_view text) {
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> row;
  std::string field;
  bool quoted = false, any = false;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          field += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        field += c;
      }
      continue;
    }
    if (c == '"') {
      quoted = true;
      any = true;
    } else if (c == ',') {
      row.push_back(std::move(field));
      field.clear();
      any = true;
    } else if (c == '\n' || c == '\r') {
      if (c == '\r' && i + 1 < text.size() && text[i + 1] == '\n') ++i;
      if (any || !field.empty()) {
        row.push_back(std::move(field));
        rows.push_back(std::move(row));
      }
      row.clear();
      field.clear();
      any = false;
    } else {
      field += c;
      any = true;
    }
  }
  if (quoted) throw ParseError("unterminated quoted CSV field", text.size());
  if (any || !field.empty()) {
    row.push_back(std::move(field));
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace detail

/// CSV with full-precision values; parse_csv_table inverts it exactly.
inline std::string render_csv(const Table& t) {
  std::ostringstream os;
  os << detail::csv_field(t.row_header);
  for (const auto& c : t.columns) os << ',' << detail::csv_field(c);
  os << '\n';
  for (std::size_t r = 0; r < t.row_labels.size(); ++r) {
    os << detail::csv_field(t.row_labels[r]);
    for (const auto& cell : t.cells[r]) os << ',' << (cell ? exact_number(*cell) : "");
    os << '\n';
  }
  return os.str();
}

inline Table parse_csv_table(std::string_view text) {
  const auto rows = detail::csv_rows(text);
  if (rows.empty()) throw ParseError("empty CSV table", 0);
  Table t;
  t.row_header = rows[0][0];
  t.columns.assign(rows[0].begin() + 1, rows[0].end());
  for (std::size_t r = 1; r < rows.size(); ++r) {
    if (rows[r].size() != rows[0].size()) throw ParseError("CSV row " + std::to_string(r) + " has the wrong width", 0);
    t.row_labels.push_back(rows[r][0]);
    std::vector<std::optional<double>> cells;
    for (std::size_t c = 1; c < rows[r].size(); ++c) {
      const auto& f = rows[r][c];
      if (f.empty()) {
        cells.emplace_back();
        continue;
      }
      double v = 0;
      const auto res = std::from_chars(f.data(), f.data() + f.size(), v);
      if (res.ec != std::errc() || res.ptr != f.data() + f.size())
        throw ParseError("CSV cell '" + f + "' is not a number", 0);
      cells.emplace_back(v);
    }
    t.cells.push_back(std::move(cells));
  }
  return t;
}

inline std::string render_report(std::span<const EvalReport> reports, ReportFormat format,
                                 TableKind kind = TableKind::hit_rate) {
  if (reports.empty()) throw Error(Errc::empty_input, "no reports to render");
  if (format == ReportFormat::json) {
    json arr = json::array();
    for (const auto& r : reports) arr.push_back(to_json(r));
    return arr.dump(2) + "\n";
  }
  const Table t = pivot_table(reports, kind);
  if (format == ReportFormat::csv) return render_csv(t);
  std::vector<EvalFailure> failures;
  for (const auto& r : reports) failures.insert(failures.end(), r.failures.begin(), r.failures.end());
  return render_markdown(t, 2, failures);
}

}  // namespace spillkit
