#include <iostream>

#include "cli_common.hpp"
#include "succlab/error.hpp"
#include "succlab/io.hpp"

using namespace succlab;
using namespace succlab::cli;

namespace {

std::string category_name(ErrorCategory c) {
  switch (c) {
    case ErrorCategory::usage: return "usage";
    case ErrorCategory::data: return "data";
    case ErrorCategory::numeric: return "numeric";
  }
  return "unknown";
}

int report_error(const std::string& category, const std::string& kind, const std::string& message, int code,
                 const std::string& out_dir) {
  const auto doc = error_json(category, kind, message, code);
  std::cerr << doc.dump() << "\n";
  if (!out_dir.empty()) {
    try {
      std::filesystem::create_directories(out_dir);
      write_file_atomic(std::filesystem::path(out_dir) / "error.json", dump_json(doc));
    } catch (...) {
    }
  }
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app("succlab: successor-head analysis toolkit", "succlab");
  app.require_subcommand(1);
  app.set_version_flag("--version", kSucclabVersion);

  std::vector<Command> commands;
  for (auto group : {model_commands, feature_commands, factor_commands, ablation_commands, report_commands}) {
    for (auto& c : group()) commands.push_back(std::move(c));
  }
  std::vector<FlagSink> sinks(commands.size());
  std::vector<CLI::App*> subs;
  for (std::size_t i = 0; i < commands.size(); ++i) {
    auto* sub = app.add_subcommand(commands[i].name, commands[i].help);
    common_flags(*sub, sinks[i]);
    if (commands[i].flags) commands[i].flags(*sub, sinks[i]);
    subs.push_back(sub);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return report_error("usage", "usage", e.what(), 2, "");
  }

  std::size_t chosen = 0;
  while (chosen < subs.size() && !subs[chosen]->parsed()) ++chosen;
  const auto& out_dir = sinks[chosen].out_dir;
  try {
    Context ctx(commands[chosen].name, sinks[chosen]);
    commands[chosen].run(ctx);
    ctx.finish();
    return 0;
  } catch (const Error& e) {
    const int code = exit_code_for(e.category());
    return report_error(category_name(e.category()), e.kind(), e.what(), code, out_dir);
  } catch (const std::exception& e) {
    return report_error("numeric", "internal", e.what(), 4, out_dir);
  }
}
