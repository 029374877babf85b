#include "succlab/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <sstream>

#include <zlib.h>

#include "succlab/error.hpp"
#include "succlab/io.hpp"

namespace succlab {

// ---------------------------------------------------------------------------
// Tables

std::string format_sig(double value, int digits) {
  if (std::isnan(value)) return "nan";
  if (std::isinf(value)) return value > 0 ? "inf" : "-inf";
  return format_double(value, digits);
}

std::string csv_escape(const std::string& field) {
  if (field.find_first_of(",\"\r\n") == std::string::npos) return field;
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

void Table::add_row(std::vector<Cell> row) {
  if (row.size() != columns.size()) {
    throw IntegrityError("table row has " + std::to_string(row.size()) + " cells, header has " +
                         std::to_string(columns.size()));
  }
  rows.push_back(std::move(row));
}

namespace {

std::string cell_text(const Cell& c) {
  if (const auto* s = std::get_if<std::string>(&c)) return *s;
  if (const auto* d = std::get_if<double>(&c)) return format_sig(*d);
  return std::to_string(std::get<std::int64_t>(c));
}

nlohmann::json cell_json(const Cell& c) {
  if (const auto* s = std::get_if<std::string>(&c)) return *s;
  if (const auto* d = std::get_if<double>(&c)) {
    if (!std::isfinite(*d)) return nullptr;
    return *d;
  }
  return std::get<std::int64_t>(c);
}

std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string svg_open(double width, double height) {
  return "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + num(width) + "\" height=\"" + num(height) +
         "\" viewBox=\"0 0 " + num(width) + " " + num(height) + "\" font-family=\"sans-serif\" font-size=\"11\">\n" +
         "<rect x=\"0\" y=\"0\" width=\"" + num(width) + "\" height=\"" + num(height) + "\" fill=\"#ffffff\"/>\n";
}

std::string text(double x, double y, const std::string& s, const std::string& attrs = "") {
  return "<text x=\"" + num(x) + "\" y=\"" + num(y) + "\"" + (attrs.empty() ? "" : " " + attrs) + ">" +
         xml_escape(s) + "</text>\n";
}

const char* kPalette[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
                          "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};

}  // namespace

std::string Table::to_csv() const {
  std::string out;
  for (std::size_t i = 0; i < columns.size(); ++i) out += (i ? "," : "") + csv_escape(columns[i]);
  out += "\n";
  for (const auto& row : rows) {
    for (std::size_t i = 0; i < row.size(); ++i) out += (i ? "," : "") + csv_escape(cell_text(row[i]));
    out += "\n";
  }
  return out;
}

nlohmann::json Table::to_json() const {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& row : rows) {
    nlohmann::json obj = nlohmann::json::object();
    for (std::size_t i = 0; i < row.size(); ++i) obj[columns[i]] = cell_json(row[i]);
    arr.push_back(std::move(obj));
  }
  return arr;
}

std::vector<std::vector<std::string>> parse_csv(const std::string& text) {
  std::vector<std::vector<std::string>> out;
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
      row.push_back(std::move(field));
      field.clear();
      out.push_back(std::move(row));
      row.clear();
      any = false;
    } else {
      field += c;
      any = true;
    }
  }
  if (quoted) throw FormatError("unterminated quoted CSV field");
  if (any || !field.empty()) {
    row.push_back(std::move(field));
    out.push_back(std::move(row));
  }
  return out;
}

// ---------------------------------------------------------------------------
// SVG

std::string Rgb::hex() const {
  char buf[8];
  std::snprintf(buf, sizeof buf, "#%02x%02x%02x", r, g, b);
  return buf;
}

Rgb scale_color(double t) {
  t = std::clamp(t, 0.0, 1.0);
  const Rgb lo{247, 251, 255}, hi{8, 48, 107};
  auto mix = [&](int a, int b) { return static_cast<int>(std::lround(a + (b - a) * t)); };
  return {mix(lo.r, hi.r), mix(lo.g, hi.g), mix(lo.b, hi.b)};
}

std::string heatmap_svg(const Eigen::MatrixXd& values, const std::vector<std::string>& row_labels,
                        const std::vector<std::string>& col_labels, const HeatmapOptions& options) {
  if (values.size() == 0) throw DomainError("heatmap needs a nonempty matrix");
  if (!values.allFinite()) throw DomainError("heatmap values must be finite");
  if (row_labels.size() != static_cast<std::size_t>(values.rows()) ||
      col_labels.size() != static_cast<std::size_t>(values.cols())) {
    throw DomainError("heatmap labels do not match the matrix shape");
  }
  const double lo = values.minCoeff(), hi = values.maxCoeff();
  const double cell = std::clamp(720.0 / static_cast<double>(std::max(values.rows(), values.cols())), 3.0, 28.0);
  const double left = 110, top = 50;
  const double width = left + cell * values.cols() + 140, height = top + cell * values.rows() + 70;
  const bool annotate = options.annotate || values.size() == 1;
  const auto rows_every = static_cast<Eigen::Index>(std::ceil(11.0 / cell));

  std::string s = svg_open(width, height);
  s += text(left, 20, options.title, "font-size=\"14\"");
  for (Eigen::Index r = 0; r < values.rows(); ++r) {
    for (Eigen::Index c = 0; c < values.cols(); ++c) {
      const double v = values(r, c);
      const double t = hi > lo ? (v - lo) / (hi - lo) : 0.5;
      const double x = left + cell * c, y = top + cell * r;
      s += "<rect x=\"" + num(x) + "\" y=\"" + num(y) + "\" width=\"" + num(cell) + "\" height=\"" + num(cell) +
           "\" fill=\"" + scale_color(t).hex() + "\" data-value=\"" + format_sig(v) + "\"/>\n";
      if (annotate) {
        s += text(x + cell / 2, y + cell / 2 + 4, format_sig(v, 6),
                  std::string("text-anchor=\"middle\" fill=\"") + (t > 0.5 ? "#ffffff" : "#000000") + "\"");
      }
    }
  }
  for (Eigen::Index r = 0; r < values.rows(); r += rows_every) {
    s += text(left - 4, top + cell * r + cell / 2 + 4, row_labels[static_cast<std::size_t>(r)], "text-anchor=\"end\"");
  }
  for (Eigen::Index c = 0; c < values.cols(); c += rows_every) {
    const double x = left + cell * c + cell / 2, y = top + cell * values.rows() + 6;
    s += text(x, y, col_labels[static_cast<std::size_t>(c)],
              "text-anchor=\"end\" transform=\"rotate(-60 " + num(x) + " " + num(y) + ")\"");
  }
  s += text(left + cell * values.cols() / 2, height - 8, options.x_label, "text-anchor=\"middle\" class=\"x-label\"");
  s += text(14, top + cell * values.rows() / 2, options.y_label,
            "text-anchor=\"middle\" class=\"y-label\" transform=\"rotate(-90 14 " + num(top + cell * values.rows() / 2) +
                ")\"");
  // legend: 10-step bar from min (bottom) to max (top)
  const double lx = left + cell * values.cols() + 30, lh = std::max(100.0, cell * values.rows());
  for (int k = 0; k < 10; ++k) {
    s += "<rect x=\"" + num(lx) + "\" y=\"" + num(top + lh * (9 - k) / 10.0) + "\" width=\"16\" height=\"" +
         num(lh / 10.0) + "\" fill=\"" + scale_color((k + 0.5) / 10.0).hex() + "\"/>\n";
  }
  s += text(lx + 20, top + 10, "max " + format_sig(hi, 6), "class=\"max\"");
  s += text(lx + 20, top + lh, "min " + format_sig(lo, 6), "class=\"min\"");
  return s + "</svg>\n";
}

std::string line_chart_svg(const std::vector<double>& x, const std::vector<LineSeries>& series,
                           const std::string& title, const std::string& x_label, const std::string& y_label) {
  if (x.empty() || series.empty()) throw DomainError("line chart needs points and at least one series");
  double ylo = 0, yhi = 0;
  bool first = true;
  for (const auto& s : series) {
    if (s.y.size() != x.size()) throw DomainError("line series '" + s.name + "' length differs from x");
    for (double v : s.y) {
      if (!std::isfinite(v)) throw DomainError("line chart values must be finite");
      ylo = first ? v : std::min(ylo, v);
      yhi = first ? v : std::max(yhi, v);
      first = false;
    }
  }
  for (double v : x) {
    if (!std::isfinite(v)) throw DomainError("line chart x values must be finite");
  }
  const double xlo = *std::min_element(x.begin(), x.end()), xhi = *std::max_element(x.begin(), x.end());
  if (yhi == ylo) {
    ylo -= 0.5;
    yhi += 0.5;
  }
  const double left = 70, top = 40, w = 520, h = 300;
  auto px = [&](double v) { return left + (xhi > xlo ? (v - xlo) / (xhi - xlo) : 0.5) * w; };
  auto py = [&](double v) { return top + h - (v - ylo) / (yhi - ylo) * h; };

  std::string s = svg_open(left + w + 160, top + h + 60);
  s += text(left, 20, title, "font-size=\"14\"");
  s += "<line x1=\"" + num(left) + "\" y1=\"" + num(top + h) + "\" x2=\"" + num(left + w) + "\" y2=\"" +
       num(top + h) + "\" stroke=\"#000000\"/>\n";
  s += "<line x1=\"" + num(left) + "\" y1=\"" + num(top) + "\" x2=\"" + num(left) + "\" y2=\"" + num(top + h) +
       "\" stroke=\"#000000\"/>\n";
  for (int k = 0; k <= 4; ++k) {
    const double yv = ylo + (yhi - ylo) * k / 4.0, xv = xlo + (xhi - xlo) * k / 4.0;
    s += text(left - 6, py(yv) + 4, format_sig(yv, 4), "text-anchor=\"end\"");
    s += text(px(xv), top + h + 16, format_sig(xv, 6), "text-anchor=\"middle\"");
  }
  s += text(left + w / 2, top + h + 40, x_label, "text-anchor=\"middle\" class=\"x-label\"");
  s += text(16, top + h / 2, y_label,
            "text-anchor=\"middle\" class=\"y-label\" transform=\"rotate(-90 16 " + num(top + h / 2) + ")\"");
  for (std::size_t i = 0; i < series.size(); ++i) {
    const char* color = kPalette[i % std::size(kPalette)];
    std::string pts;
    for (std::size_t k = 0; k < x.size(); ++k) pts += (k ? " " : "") + num(px(x[k])) + "," + num(py(series[i].y[k]));
    s += "<polyline fill=\"none\" stroke=\"" + std::string(color) + "\" stroke-width=\"1.5\" points=\"" + pts + "\"/>\n";
    s += text(left + w + 12, top + 14.0 * static_cast<double>(i + 1), series[i].name,
              "fill=\"" + std::string(color) + "\"");
  }
  return s + "</svg>\n";
}

std::string pie_chart_svg(const std::vector<std::string>& labels, const std::vector<double>& values,
                          const std::string& title) {
  if (labels.size() != values.size() || values.empty()) throw DomainError("pie chart needs one label per value");
  double total = 0.0;
  for (double v : values) {
    if (!std::isfinite(v) || v < 0.0) throw DomainError("pie values must be finite and nonnegative");
    total += v;
  }
  if (!(total > 0.0)) throw DomainError("pie values must sum to a positive total");
  const double cx = 160, cy = 180, r = 120;
  std::string s = svg_open(480, 340);
  s += text(20, 24, title, "font-size=\"14\"");
  double angle = -std::numbers::pi / 2;
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double share = values[i] / total;
    const char* color = kPalette[i % std::size(kPalette)];
    if (share >= 1.0 - 1e-12) {
      s += "<circle cx=\"" + num(cx) + "\" cy=\"" + num(cy) + "\" r=\"" + num(r) + "\" fill=\"" + color + "\"/>\n";
    } else if (share > 0.0) {
      const double end = angle + share * 2 * std::numbers::pi;
      s += "<path d=\"M " + num(cx) + " " + num(cy) + " L " + num(cx + r * std::cos(angle)) + " " +
           num(cy + r * std::sin(angle)) + " A " + num(r) + " " + num(r) + " 0 " + (share > 0.5 ? "1" : "0") +
           " 1 " + num(cx + r * std::cos(end)) + " " + num(cy + r * std::sin(end)) + " Z\" fill=\"" + color +
           "\"/>\n";
      angle = end;
    }
    s += "<rect x=\"310\" y=\"" + num(60 + 18.0 * static_cast<double>(i)) + "\" width=\"12\" height=\"12\" fill=\"" +
         color + "\"/>\n";
    s += text(328, 70 + 18.0 * static_cast<double>(i), labels[i] + " " + format_sig(100 * share, 4) + "%");
  }
  return s + "</svg>\n";
}

// ---------------------------------------------------------------------------
// Configuration

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

RunConfig RunConfig::parse(const std::string& text) {
  RunConfig c;
  std::istringstream in(text);
  std::string line, section;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#' || t[0] == ';') continue;
    if (t.front() == '[') {
      if (t.back() != ']' || t.size() < 3) throw ConfigError("config line " + std::to_string(lineno) + ": bad section header");
      section = trim(t.substr(1, t.size() - 2));
      continue;
    }
    const auto eq = t.find('=');
    if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(lineno) + ": expected key=value");
    const std::string key = trim(t.substr(0, eq));
    if (key.empty()) throw ConfigError("config line " + std::to_string(lineno) + ": empty key");
    c.set(section.empty() ? key : section + "." + key, trim(t.substr(eq + 1)));
  }
  return c;
}

RunConfig RunConfig::load(const std::string& path) { return parse(read_file(path)); }

void RunConfig::set(const std::string& key, const std::string& value) { values_[key] = value; }

bool RunConfig::has(const std::string& key) const { return values_.count(key) != 0; }

void RunConfig::merge(const RunConfig& overrides) {
  for (const auto& [k, v] : overrides.values_) values_[k] = v;
}

std::optional<std::string> RunConfig::find(const std::string& key) const {
  const auto it = values_.find(key);
  if (it == values_.end()) return std::nullopt;
  return it->second;
}

std::string RunConfig::get(const std::string& key, const std::string& fallback) const {
  return find(key).value_or(fallback);
}

namespace {

template <typename T, typename Parse>
T parse_value(const std::optional<std::string>& v, const std::string& key, T fallback, Parse&& parse) {
  if (!v) return fallback;
  try {
    std::size_t used = 0;
    const T out = parse(*v, &used);
    if (used != v->size()) throw std::invalid_argument(*v);
    return out;
  } catch (const std::logic_error&) {
    throw ConfigError("config key '" + key + "' has invalid value '" + *v + "'");
  }
}

}  // namespace

int RunConfig::get_int(const std::string& key, int fallback) const {
  return parse_value<int>(find(key), key, fallback, [](const std::string& s, std::size_t* n) { return std::stoi(s, n); });
}

double RunConfig::get_double(const std::string& key, double fallback) const {
  return parse_value<double>(find(key), key, fallback,
                             [](const std::string& s, std::size_t* n) { return std::stod(s, n); });
}

std::uint64_t RunConfig::get_u64(const std::string& key, std::uint64_t fallback) const {
  return parse_value<std::uint64_t>(find(key), key, fallback, [](const std::string& s, std::size_t* n) {
    if (!s.empty() && s[0] == '-') throw std::invalid_argument(s);
    return static_cast<std::uint64_t>(std::stoull(s, n));
  });
}

bool RunConfig::get_bool(const std::string& key, bool fallback) const {
  const auto v = find(key);
  if (!v) return fallback;
  if (*v == "true" || *v == "1" || *v == "yes" || *v == "on") return true;
  if (*v == "false" || *v == "0" || *v == "no" || *v == "off") return false;
  throw ConfigError("config key '" + key + "' has invalid boolean '" + *v + "'");
}

std::string RunConfig::dump() const {
  std::map<std::string, std::vector<std::pair<std::string, std::string>>> sections;
  for (const auto& [k, v] : values_) {
    const auto dot = k.find('.');
    if (dot == std::string::npos) {
      sections[""].emplace_back(k, v);
    } else {
      sections[k.substr(0, dot)].emplace_back(k.substr(dot + 1), v);
    }
  }
  std::string out;
  for (const auto& [name, entries] : sections) {
    if (!name.empty()) out += (out.empty() ? "" : "\n") + std::string("[") + name + "]\n";
    for (const auto& [k, v] : entries) out += k + "=" + v + "\n";
  }
  return out;
}

std::string RunConfig::hash() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : dump()) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

nlohmann::json make_manifest(const std::string& command, const RunConfig& effective, std::uint64_t seed,
                             const nlohmann::json& extra) {
  nlohmann::json m;
  m["command"] = command;
  m["config_hash"] = effective.hash();
  m["seed"] = seed;
  m["config"] = effective.values();
  m["versions"] = {
      {"succlab", kSucclabVersion},
      {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                    std::to_string(EIGEN_MINOR_VERSION)},
      {"nlohmann_json", std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." + std::to_string(NLOHMANN_JSON_VERSION_MINOR) +
                            "." + std::to_string(NLOHMANN_JSON_VERSION_PATCH)},
      {"zlib", ZLIB_VERSION},
  };
  for (const auto& [k, v] : extra.items()) m[k] = v;
  return m;
}

std::string dump_json(const nlohmann::json& j) { return j.dump(2) + "\n"; }

}  // namespace succlab
