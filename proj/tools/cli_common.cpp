#include "cli_common.hpp"

#include <sstream>

#include "succlab/error.hpp"
#include "succlab/io.hpp"
#include "succlab/ov.hpp"
#include "succlab/seed.hpp"

namespace succlab::cli {

void flag(CLI::App& app, FlagSink& sink, const std::string& name, const std::string& key, const std::string& help) {
  app.add_option_function<std::string>(
      name, [&sink, key](const std::string& v) { sink.values[key] = v; }, help + " [" + key + "]");
}

void common_flags(CLI::App& app, FlagSink& sink) {
  app.add_option("--config", sink.config_path, "key=value config file with [section] headers");
  app.add_option("--out", sink.out_dir, "output directory")->required();
  app.add_option_function<std::vector<std::string>>(
      "--set",
      [&sink](const std::vector<std::string>& items) {
        for (const auto& item : items) {
          const auto eq = item.find('=');
          if (eq == std::string::npos || eq == 0) throw CLI::ValidationError("--set", "expected key=value, got '" + item + "'");
          sink.values[item.substr(0, eq)] = item.substr(eq + 1);
        }
      },
      "override any config key (key=value), repeatable");
  flag(app, sink, "--seed", "seed", "root seed");
  flag(app, sink, "--model", "model", "model archive (.ntar)");
  flag(app, sink, "--vocab", "data.vocab", "vocab file, one surface form per line");
  flag(app, sink, "--dataset", "data.registry", "ordinal task registry file");
  flag(app, sink, "--head", "head", "head as L<layer>H<head>, or auto");
}

Context::Context(std::string command, const FlagSink& sink) : command_(std::move(command)), out_(sink.out_dir) {
  if (!sink.config_path.empty()) cfg_ = RunConfig::load(sink.config_path);
  RunConfig overrides;
  for (const auto& [k, v] : sink.values) overrides.set(k, v);
  cfg_.merge(overrides);
  seed_ = cfg_.get_u64("seed", 0);
  cfg_.set("seed", std::to_string(seed_));
  std::error_code ec;
  std::filesystem::create_directories(out_, ec);
  if (ec) throw IoError("cannot create output directory '" + out_.string() + "': " + ec.message());
}

std::uint64_t Context::seed_for(const std::string& label) const { return derive_seed(seed_, label); }

namespace {

/// Shortest "%g" form that parses back to the same double.
std::string shortest(double v) {
  for (int digits = 6; digits < 17; ++digits) {
    const auto s = format_double(v, digits);
    if (std::stod(s) == v) return s;
  }
  return format_double(v, 17);
}

}  // namespace

std::string Context::get(const std::string& key, const std::string& fallback) const {
  const auto v = cfg_.get(key, fallback);
  resolved_[key] = v;
  return v;
}

std::string Context::require(const std::string& key) const {
  const auto v = cfg_.find(key);
  if (!v || v->empty()) throw UsageError("missing required setting '" + key + "'");
  resolved_[key] = *v;
  return *v;
}

int Context::get_int(const std::string& key, int fallback) const {
  const int v = cfg_.get_int(key, fallback);
  resolved_[key] = std::to_string(v);
  return v;
}

double Context::get_double(const std::string& key, double fallback) const {
  const double v = cfg_.get_double(key, fallback);
  resolved_[key] = cfg_.has(key) ? *cfg_.find(key) : shortest(v);
  return v;
}

std::uint64_t Context::get_u64(const std::string& key, std::uint64_t fallback) const {
  const auto v = cfg_.get_u64(key, fallback);
  resolved_[key] = std::to_string(v);
  return v;
}

bool Context::get_bool(const std::string& key, bool fallback) const {
  const bool v = cfg_.get_bool(key, fallback);
  resolved_[key] = cfg_.has(key) ? *cfg_.find(key) : (v ? "true" : "false");
  return v;
}

void Context::write_text(const std::string& name, const std::string& contents) {
  const auto path = out_ / name;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  write_file_atomic(path, contents);
  outputs_.push_back(name);
}

void Context::write_json(const std::string& name, const nlohmann::json& j) { write_text(name, dump_json(j)); }

void Context::write_table(const std::string& stem, const Table& t) { write_text(stem + ".csv", t.to_csv()); }

void Context::write_binary(const std::string& name, const std::string& bytes) { write_text(name, bytes); }

void Context::finish(const nlohmann::json& extra) {
  RunConfig effective;
  for (const auto& [k, v] : resolved_) effective.set(k, v);
  effective.merge(cfg_);
  nlohmann::json more = extra;
  auto outputs = outputs_;
  outputs.push_back("config.txt");
  more["outputs"] = outputs;
  write_file_atomic(out_ / "config.txt", effective.dump());
  write_file_atomic(out_ / "manifest.json", dump_json(make_manifest(command_, effective, seed_, more)));
}

const Vocab& Context::vocab() {
  if (!vocab_) {
    const auto path = get("data.vocab", "");
    vocab_ = path.empty() ? make_toy_vocab() : load_vocab(path);
  }
  return *vocab_;
}

const SuccessionDataset& Context::dataset() {
  if (!dataset_) {
    const auto path = get("data.registry", "");
    dataset_ = build_succession_dataset(vocab(), path.empty() ? default_registry() : load_registry(path));
  }
  return *dataset_;
}

const ModelHandle& Context::model() {
  if (!model_) {
    model_ = load_model(require("model"));
    if (model_->config().vocab_size != vocab().size()) {
      throw VocabError("model vocab size " + std::to_string(model_->config().vocab_size) + " differs from vocab size " +
                       std::to_string(vocab().size()));
    }
  }
  return *model_;
}

HeadId Context::head() {
  const auto s = get("head", "auto");
  if (s != "auto") {
    const HeadId h = head_from_string(s);
    model().check_head(h);
    return h;
  }
  const auto table = score_all_heads(model(), dataset());
  return table.heads[table.best].head;
}

int exit_code_for(ErrorCategory c) {
  switch (c) {
    case ErrorCategory::usage: return 2;
    case ErrorCategory::data: return 3;
    case ErrorCategory::numeric: return 4;
  }
  return 1;
}

nlohmann::json error_json(const std::string& category, const std::string& kind, const std::string& message, int code) {
  return {{"error", {{"category", category}, {"kind", kind}, {"message", message}, {"exit_code", code}}}};
}

std::string surface_of(const Vocab& vocab, int token) {
  return token >= 0 && token < vocab.size() ? vocab.surface(token) : "#" + std::to_string(token);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(s);
  while (std::getline(in, item, sep)) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::vector<int> parse_int_list(const std::string& s, const std::string& key) {
  std::vector<int> out;
  for (const auto& part : split(s, ',')) {
    const auto dash = part.find('-', 1);
    try {
      if (dash == std::string::npos) {
        out.push_back(std::stoi(part));
      } else {
        const int lo = std::stoi(part.substr(0, dash)), hi = std::stoi(part.substr(dash + 1));
        for (int v = lo; v <= hi; ++v) out.push_back(v);
      }
    } catch (const std::logic_error&) {
      throw ConfigError("setting '" + key + "' expects integers or ranges like 2-25, got '" + s + "'");
    }
  }
  if (out.empty()) throw ConfigError("setting '" + key + "' is empty");
  return out;
}

}  // namespace succlab::cli
