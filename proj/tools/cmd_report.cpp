#include <algorithm>

#include "cli_common.hpp"
#include "succlab/error.hpp"
#include "succlab/io.hpp"

namespace succlab::cli {
namespace {

using nlohmann::json;

json parse_json_file(const std::filesystem::path& path) {
  try {
    return json::parse(read_file(path));
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

/// Top-level scalar fields of a JSON document.
json headline(const json& doc) {
  json out = json::object();
  if (!doc.is_object()) return out;
  for (const auto& [k, v] : doc.items()) {
    if (v.is_primitive()) out[k] = v;
  }
  return out;
}

void report(Context& ctx) {
  std::vector<std::filesystem::path> dirs;
  std::filesystem::path root;
  if (const auto list = ctx.get("report.runs", ""); !list.empty()) {
    for (const auto& d : split(list, ',')) dirs.emplace_back(d);
  } else {
    root = ctx.require("report.root");
    if (!std::filesystem::is_directory(root)) throw IoError("report root '" + root.string() + "' not found");
    for (const auto& e : std::filesystem::recursive_directory_iterator(root)) {
      if (e.is_regular_file() && e.path().filename() == "manifest.json") dirs.push_back(e.path().parent_path());
    }
    std::sort(dirs.begin(), dirs.end());
  }
  const auto self = std::filesystem::weakly_canonical(ctx.out());
  Table t;
  t.columns = {"run", "command", "config_hash", "seed"};
  json runs = json::array();
  for (const auto& dir : dirs) {
    if (std::filesystem::weakly_canonical(dir) == self) continue;
    const auto manifest = parse_json_file(dir / "manifest.json");
    const std::string name = root.empty() ? dir.string() : std::filesystem::relative(dir, root).string();
    json results = json::object();
    if (manifest.contains("outputs")) {
      for (const auto& o : manifest["outputs"]) {
        const auto file = o.get<std::string>();
        if (file.size() > 5 && file.substr(file.size() - 5) == ".json" && file.find('/') == std::string::npos) {
          results[file] = headline(parse_json_file(dir / file));
        }
      }
    }
    t.add_row({name, manifest.value("command", ""), manifest.value("config_hash", ""),
               std::to_string(manifest.value("seed", std::uint64_t{0}))});
    runs.push_back({{"run", name},
                    {"command", manifest.value("command", "")},
                    {"config_hash", manifest.value("config_hash", "")},
                    {"seed", manifest.value("seed", std::uint64_t{0})},
                    {"results", results}});
  }
  if (runs.empty()) throw DatasetError("no run manifests found");
  ctx.write_table("report", t);
  ctx.write_json("report.json", {{"runs", runs}});
}

}  // namespace

std::vector<Command> report_commands() {
  return {
      {"report", "collect manifests and headline results of earlier runs",
       [](CLI::App& app, FlagSink& s) {
         flag(app, s, "--root", "report.root", "directory scanned for run manifests");
         flag(app, s, "--runs", "report.runs", "comma-separated run directories");
       },
       report},
  };
}

}  // namespace succlab::cli
