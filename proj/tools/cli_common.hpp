#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "succlab/error.hpp"
#include "succlab/model.hpp"
#include "succlab/report.hpp"
#include "succlab/succession.hpp"

namespace succlab::cli {

/// Flag values collected by CLI11, keyed by config key.
struct FlagSink {
  std::map<std::string, std::string> values;
  std::string config_path;
  std::string out_dir;
};

/// Registers `--name` as an override of `key`.
void flag(CLI::App& app, FlagSink& sink, const std::string& name, const std::string& key, const std::string& help);

/// Adds --config, --out, --set, --seed, --model, --vocab, --dataset and --head.
void common_flags(CLI::App& app, FlagSink& sink);

/// One command invocation: effective config, output directory, artifact list.
class Context {
 public:
  Context(std::string command, const FlagSink& sink);

  const std::string& command() const { return command_; }
  const RunConfig& config() const { return cfg_; }
  const std::filesystem::path& out() const { return out_; }
  std::uint64_t seed() const { return seed_; }
  /// Root seed derived for one analysis stream.
  std::uint64_t seed_for(const std::string& label) const;

  std::string get(const std::string& key, const std::string& fallback) const;
  std::string require(const std::string& key) const;
  int get_int(const std::string& key, int fallback) const;
  double get_double(const std::string& key, double fallback) const;
  std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;

  void write_text(const std::string& name, const std::string& contents);
  void write_json(const std::string& name, const nlohmann::json& j);
  void write_table(const std::string& stem, const Table& t);  // stem.csv
  void write_binary(const std::string& name, const std::string& bytes);

  /// manifest.json and config.txt; both record defaults of every key read.
  void finish(const nlohmann::json& extra = nlohmann::json::object());

  // Shared inputs.
  const Vocab& vocab();
  const SuccessionDataset& dataset();
  const ModelHandle& model();
  HeadId head();  // "head" key, "auto" picks the best-scoring head

 private:
  std::string command_;
  RunConfig cfg_;
  std::filesystem::path out_;
  std::uint64_t seed_ = 0;
  std::vector<std::string> outputs_;
  /// Every key read so far with the value in effect, defaults included.
  mutable std::map<std::string, std::string> resolved_;
  std::optional<Vocab> vocab_;
  std::optional<SuccessionDataset> dataset_;
  std::optional<ModelHandle> model_;
};

/// Process exit code for an error category.
int exit_code_for(ErrorCategory c);

/// {"error": {...}} document.
nlohmann::json error_json(const std::string& category, const std::string& kind, const std::string& message, int code);

std::vector<int> parse_int_list(const std::string& s, const std::string& key);
std::vector<std::string> split(const std::string& s, char sep);

/// One subcommand: flag registration and the body run inside a Context.
struct Command {
  std::string name;
  std::string help;
  std::function<void(CLI::App&, FlagSink&)> flags;
  std::function<void(Context&)> run;
};

std::vector<Command> model_commands();     // toy-train .. bias
std::vector<Command> feature_commands();   // sae-train .. arith-table
std::vector<Command> factor_commands();    // factor-train, factor-eval
std::vector<Command> ablation_commands();  // ablate .. numbered-listing
std::vector<Command> report_commands();    // report

/// Surface form of a token, or "#id" when out of range.
std::string surface_of(const Vocab& vocab, int token);

}  // namespace succlab::cli
