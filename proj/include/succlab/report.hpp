#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

namespace succlab {

/// Version string recorded in manifests.
inline constexpr const char* kSucclabVersion = "1.0.0";

// ---------------------------------------------------------------------------
// Tables

/// Cell values print with 9 significant digits.
using Cell = std::variant<std::string, double, std::int64_t>;

struct Table {
  std::vector<std::string> columns;
  std::vector<std::vector<Cell>> rows;

  /// Throws IntegrityError when the row width differs from the header.
  void add_row(std::vector<Cell> row);
  std::string to_csv() const;
  /// Rows as JSON objects keyed by column name.
  nlohmann::json to_json() const;
};

std::string format_sig(double value, int digits = 9);
std::string csv_escape(const std::string& field);
/// RFC 4180 reader: quoted fields, doubled quotes, CRLF or LF line ends.
std::vector<std::vector<std::string>> parse_csv(const std::string& text);

// ---------------------------------------------------------------------------
// SVG charts

struct Rgb {
  int r = 0, g = 0, b = 0;
  std::string hex() const;
};

/// Linear scale from light (t = 0) to dark (t = 1); every channel is monotone.
Rgb scale_color(double t);

struct HeatmapOptions {
  std::string title;
  std::string x_label = "column";
  std::string y_label = "row";
  /// Annotate cells with their values; always on for a 1x1 matrix.
  bool annotate = false;
};

/// Throws DomainError for an empty or non-finite matrix or mismatched labels.
std::string heatmap_svg(const Eigen::MatrixXd& values, const std::vector<std::string>& row_labels,
                        const std::vector<std::string>& col_labels, const HeatmapOptions& options = {});

struct LineSeries {
  std::string name;
  std::vector<double> y;
};

std::string line_chart_svg(const std::vector<double>& x, const std::vector<LineSeries>& series,
                           const std::string& title, const std::string& x_label, const std::string& y_label);

/// Values must be finite, nonnegative and sum to a positive total.
std::string pie_chart_svg(const std::vector<std::string>& labels, const std::vector<double>& values,
                          const std::string& title);

// ---------------------------------------------------------------------------
// Run configuration

/// key=value lines under optional [section] headers; keys are stored as
/// "section.key". '#' and ';' start comment lines.
class RunConfig {
 public:
  static RunConfig parse(const std::string& text);
  static RunConfig load(const std::string& path);

  void set(const std::string& key, const std::string& value);
  bool has(const std::string& key) const;
  /// Later values win.
  void merge(const RunConfig& overrides);

  std::string get(const std::string& key, const std::string& fallback) const;
  std::optional<std::string> find(const std::string& key) const;
  int get_int(const std::string& key, int fallback) const;
  double get_double(const std::string& key, double fallback) const;
  std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;

  /// Canonical text form: sections in order, keys sorted.
  std::string dump() const;
  /// FNV-1a 64 of dump(), as 16 hex digits.
  std::string hash() const;
  const std::map<std::string, std::string>& values() const noexcept { return values_; }

 private:
  std::map<std::string, std::string> values_;
};

/// command, config hash, root seed, versions and extra fields.
nlohmann::json make_manifest(const std::string& command, const RunConfig& effective, std::uint64_t seed,
                             const nlohmann::json& extra = nlohmann::json::object());

/// Deterministic pretty JSON with a trailing newline.
std::string dump_json(const nlohmann::json& j);

}  // namespace succlab
