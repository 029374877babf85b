#include <doctest.h>

#include <cmath>
#include <limits>
#include <random>
#include <regex>

#include "succlab/error.hpp"
#include "succlab/report.hpp"
#include "succlab/seed.hpp"

using namespace succlab;

namespace {

std::vector<std::string> labels(int n, const std::string& prefix) {
  std::vector<std::string> out;
  for (int i = 0; i < n; ++i) out.push_back(prefix + std::to_string(i));
  return out;
}

/// (value, fill) pairs of the heatmap cells in emission order.
std::vector<std::pair<double, std::string>> cells(const std::string& svg) {
  std::vector<std::pair<double, std::string>> out;
  const std::regex re("fill=\"(#[0-9a-f]{6})\" data-value=\"([^\"]+)\"");
  for (auto it = std::sregex_iterator(svg.begin(), svg.end(), re); it != std::sregex_iterator(); ++it) {
    out.emplace_back(std::stod((*it)[2].str()), (*it)[1].str());
  }
  return out;
}

int channel_sum(const std::string& hex) {
  return std::stoi(hex.substr(1, 2), nullptr, 16) + std::stoi(hex.substr(3, 2), nullptr, 16) +
         std::stoi(hex.substr(5, 2), nullptr, 16);
}

}  // namespace

TEST_CASE("CSV round trip at 9 significant digits") {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(-1e3, 1e3);
  Table t;
  t.columns = {"name", "value", "count"};
  std::vector<double> values;
  for (int i = 0; i < 200; ++i) {
    const double v = u(rng) * std::pow(10.0, (i % 7) - 3);
    values.push_back(v);
    t.add_row({std::string(i % 3 == 0 ? "a,\"b\"" : "plain") + std::to_string(i), v, std::int64_t{i}});
  }
  const auto parsed = parse_csv(t.to_csv());
  REQUIRE(parsed.size() == 201);
  CHECK(parsed[0] == t.columns);
  for (int i = 0; i < 200; ++i) {
    const auto& row = parsed[static_cast<std::size_t>(i + 1)];
    CHECK(row[0] == std::get<std::string>(t.rows[static_cast<std::size_t>(i)][0]));
    const double v = values[static_cast<std::size_t>(i)];
    const double back = std::stod(row[1]);
    // half a unit in the ninth significant digit
    const double half_unit = 0.5 * std::pow(10.0, std::floor(std::log10(std::abs(v))) - 8);
    CHECK(std::abs(back - v) <= half_unit * (1 + 1e-12));
    if (std::abs(v) < 0.1) CHECK(std::abs(back - v) < 1e-9);
    CHECK(row[2] == std::to_string(i));
  }
  CHECK_THROWS_AS(t.add_row({1.0}), IntegrityError);
  CHECK(format_sig(1.0 / 3.0) == "0.333333333");
  CHECK(format_sig(std::numeric_limits<double>::quiet_NaN()) == "nan");
  CHECK(parse_csv("a,b\r\n\"x\ny\",2") == std::vector<std::vector<std::string>>{{"a", "b"}, {"x\ny", "2"}});
  CHECK_THROWS_AS(parse_csv("\"open"), FormatError);

  const auto j = t.to_json();
  CHECK(j.size() == 200);
  CHECK(j[5]["count"] == 5);
}

TEST_CASE("heatmap contract") {
  SUBCASE("1x1 matrix is annotated with its value") {
    Eigen::MatrixXd m(1, 1);
    m << 0.375;
    const auto svg = heatmap_svg(m, {"r"}, {"c"});
    CHECK(svg.find(">0.375</text>") != std::string::npos);
    CHECK(cells(svg).size() == 1);
  }
  SUBCASE("min, max and axis labels are printed") {
    Eigen::MatrixXd m = Eigen::MatrixXd::Identity(10, 10) * 4.0;
    m(0, 1) = -2.5;
    HeatmapOptions opt;
    opt.title = "bands";
    opt.x_label = "output class";
    opt.y_label = "input class";
    const auto svg = heatmap_svg(m, labels(10, "r"), labels(10, "c"), opt);
    CHECK(svg.find("min -2.5") != std::string::npos);
    CHECK(svg.find("max 4") != std::string::npos);
    CHECK(svg.find(">output class<") != std::string::npos);
    CHECK(svg.find(">input class<") != std::string::npos);
    CHECK(svg.find(">r3<") != std::string::npos);
    CHECK(svg.find(">c7<") != std::string::npos);
  }
  SUBCASE("cell colors are monotone in value") {
    Eigen::MatrixXd m(12, 12);
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(-5, 5);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
    for (int i = 0; i < 12; ++i) m(i, i) = 10.0;  // band
    const auto c = cells(heatmap_svg(m, labels(12, "r"), labels(12, "c")));
    REQUIRE(c.size() == 144);
    for (const auto& a : c) {
      for (const auto& b : c) {
        if (a.first < b.first) CHECK(channel_sum(a.second) >= channel_sum(b.second));
      }
    }
    // the diagonal is the darkest color
    for (int i = 0; i < 12; ++i) CHECK(c[static_cast<std::size_t>(i * 12 + i)].second == scale_color(1.0).hex());
  }
  SUBCASE("scale endpoints and channel monotonicity") {
    for (int k = 0; k < 100; ++k) {
      const auto a = scale_color(k / 100.0), b = scale_color((k + 1) / 100.0);
      CHECK(a.r >= b.r);
      CHECK(a.g >= b.g);
      CHECK(a.b >= b.b);
    }
  }
  SUBCASE("rejections") {
    CHECK_THROWS_AS(heatmap_svg(Eigen::MatrixXd(0, 0), {}, {}), DomainError);
    Eigen::MatrixXd m = Eigen::MatrixXd::Zero(2, 2);
    m(1, 0) = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(heatmap_svg(m, {"a", "b"}, {"a", "b"}), DomainError);
    CHECK_THROWS_AS(heatmap_svg(Eigen::MatrixXd::Zero(2, 2), {"a"}, {"a", "b"}), DomainError);
  }
}

TEST_CASE("line and pie charts") {
  const auto line = line_chart_svg({0, 1000, 2000}, {{"L1H0", {0.1, 0.5, 0.9}}, {"L1H1", {0.2, 0.2, 0.3}}},
                                   "score over training", "step", "successor score");
  CHECK(line.find("<polyline") != std::string::npos);
  CHECK(line.find(">step<") != std::string::npos);
  CHECK(line.find(">L1H1<") != std::string::npos);
  CHECK_THROWS_AS(line_chart_svg({0, 1}, {{"a", {0.1}}}, "", "", ""), DomainError);
  CHECK_THROWS_AS(line_chart_svg({}, {}, "", "", ""), DomainError);

  const auto pie = pie_chart_svg({"successorship", "acronym", "other"}, {2, 1, 1}, "shares");
  CHECK(pie.find("successorship 50%") != std::string::npos);
  CHECK(pie.find("acronym 25%") != std::string::npos);
  const auto whole = pie_chart_svg({"only", "none"}, {3, 0}, "");
  CHECK(whole.find("<circle") != std::string::npos);
  CHECK_THROWS_AS(pie_chart_svg({"a"}, {0}, ""), DomainError);
  CHECK_THROWS_AS(pie_chart_svg({"a", "b"}, {1, -1}, ""), DomainError);
}

TEST_CASE("run config parsing, overrides and dump") {
  const auto c = RunConfig::parse(
      "# comment\n"
      "seed = 7\n"
      "[train]\n"
      "steps=20000\n"
      "lr = 1e-3\n"
      "; another comment\n"
      "[sae]\n"
      "features=10\n"
      "normalize = yes\n");
  CHECK(c.get_u64("seed", 0) == 7);
  CHECK(c.get_int("train.steps", 0) == 20000);
  CHECK(c.get_double("train.lr", 0) == 1e-3);
  CHECK(c.get_bool("sae.normalize", false));
  CHECK(c.get_int("missing", 42) == 42);
  CHECK_THROWS_AS(c.get_int("train.lr", 0), ConfigError);
  CHECK_THROWS_AS(c.get_bool("train.steps", false) && false, ConfigError);

  RunConfig flags;
  flags.set("train.steps", "100");
  RunConfig eff = c;
  eff.merge(flags);
  CHECK(eff.get_int("train.steps", 0) == 100);
  CHECK(eff.hash() != c.hash());

  const auto again = RunConfig::parse(eff.dump());
  CHECK(again.values() == eff.values());
  CHECK(again.dump() == eff.dump());
  CHECK(again.hash() == eff.hash());

  CHECK_THROWS_AS(RunConfig::parse("[broken\n"), ConfigError);
  CHECK_THROWS_AS(RunConfig::parse("novalue\n"), ConfigError);
  CHECK_THROWS_AS(RunConfig::parse("=3\n"), ConfigError);
  CHECK_THROWS_AS(RunConfig::parse("seed=-1\n").get_u64("seed", 0), ConfigError);
}

TEST_CASE("manifest and seeds") {
  RunConfig c;
  c.set("seed", "3");
  const auto m = make_manifest("scores", c, 3, {{"outputs", {"heads.csv"}}});
  CHECK(m["command"] == "scores");
  CHECK(m["config_hash"] == c.hash());
  CHECK(m["seed"] == 3);
  CHECK(m["versions"].contains("eigen"));
  CHECK(m["outputs"][0] == "heads.csv");
  CHECK(dump_json(m) == dump_json(make_manifest("scores", c, 3, {{"outputs", {"heads.csv"}}})));

  CHECK(derive_seed(1, "sae") == derive_seed(1, "sae"));
  CHECK(derive_seed(1, "sae") != derive_seed(1, "probe"));
  CHECK(derive_seed(1, "sae") != derive_seed(2, "sae"));
  CHECK(mix_seed(5, 1) != mix_seed(5, 2));
}
