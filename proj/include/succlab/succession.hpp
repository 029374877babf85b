#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "succlab/archive.hpp"
#include "succlab/model.hpp"

namespace succlab {

/// Surface form <-> token id map; id is the line number in the manifest file.
class Vocab {
 public:
  static constexpr const char* kUnk = "<unk>";

  Vocab() = default;
  explicit Vocab(std::vector<std::string> surfaces);

  int size() const noexcept { return static_cast<int>(surfaces_.size()); }
  const std::string& surface(int id) const;
  std::optional<int> find(const std::string& surface) const;
  /// Throws VocabError when the surface form is absent.
  int id(const std::string& surface) const;
  std::optional<int> unk_id() const { return find(kUnk); }
  std::size_t max_surface_length() const noexcept { return max_len_; }
  const std::vector<std::string>& surfaces() const noexcept { return surfaces_; }

  /// One surface form per line (no trailing newline stripping beyond '\n').
  std::string to_text() const;
  static Vocab from_text(const std::string& text);

 private:
  std::vector<std::string> surfaces_;
  std::unordered_map<std::string, int> ids_;
  std::size_t max_len_ = 0;
};

Vocab load_vocab(const std::filesystem::path& path);

struct OrdinalTask {
  std::string name;
  std::vector<std::string> items;                  // canonical forms in order
  std::vector<std::vector<std::string>> variants;  // per item, all surface forms
  bool cyclic = false;
  bool held_out = false;

  int size() const noexcept { return static_cast<int>(items.size()); }
  void validate() const;
};

/// Ordinals are 1-based positions within a task. Returns the successor
/// ordinal; cyclic tasks wrap, non-cyclic terminals have none.
std::optional<int> successor_of(const OrdinalTask& task, int ordinal);

/// The built-in registry: the eight succession tasks plus held-out Roman numerals.
std::vector<OrdinalTask> default_registry();

/// Registry text: "[task]" headers, "cyclic=..", "held_out=.." lines, then
/// "item<TAB>variant,variant,..." rows. '#' starts a comment line.
std::string registry_to_text(const std::vector<OrdinalTask>& tasks);
std::vector<OrdinalTask> registry_from_text(const std::string& text);
std::vector<OrdinalTask> load_registry(const std::filesystem::path& path);

struct DatasetToken {
  int token = 0;
  int task = 0;     // index into SuccessionDataset::tasks
  int ordinal = 0;  // 1-based
  int variant = 0;  // index into the item's variant list
};

struct ResolvedTask {
  OrdinalTask task;
  /// Per item (ordinal - 1): token ids of its resolved variants.
  std::vector<std::vector<int>> item_tokens;

  bool has_item(int ordinal) const;
  int resolved_items() const;
};

struct DatasetReport {
  std::vector<std::string> excluded_tasks;
  /// "task: surface" for variants missing from the vocab.
  std::vector<std::string> missing;
  /// "task: surface (claimed by other)" for cross-task collisions.
  std::vector<std::string> collisions;
  std::vector<std::string> missing_for(const std::string& task) const;
};

struct SuccessionDataset {
  std::vector<ResolvedTask> tasks;
  std::vector<DatasetToken> tokens;
  DatasetReport report;

  const DatasetToken* lookup(int token) const;
  std::optional<int> task_index(const std::string& name) const;
  /// Tokens of every non-held-out task, in task/ordinal/variant order.
  std::vector<DatasetToken> scored_tokens() const;
  std::vector<DatasetToken> task_tokens(int task) const;
  /// Token id of the (task, ordinal) item, preferring `variant` when resolved.
  std::optional<int> item_token(int task, int ordinal, int variant = 0) const;

 private:
  friend SuccessionDataset build_succession_dataset(const Vocab&, const std::vector<OrdinalTask>&);
  std::unordered_map<int, std::size_t> by_token_;
};

/// Resolves the registry against `vocab`. Tasks with no resolved items are
/// excluded and reported; a task with exactly one resolved item is a DatasetError.
/// Surface forms already claimed by an earlier task are excluded and reported.
SuccessionDataset build_succession_dataset(const Vocab& vocab,
                                           const std::vector<OrdinalTask>& registry = default_registry());

/// Built-in toy vocabulary (also shipped as data/toy_vocab.txt).
Vocab make_toy_vocab();

// ---------------------------------------------------------------------------
// Synthetic corpus

enum class Generator : int { ordinal_runs = 0, numbered_lists = 1, acronym_definitions = 2, copying_spans = 3, filler = 4 };
constexpr int kGeneratorCount = 5;
std::string to_string(Generator g);

struct CorpusSpec {
  /// Mixture weights indexed by Generator.
  std::array<double, kGeneratorCount> weights{0.5, 0.3, 0.07, 0.07, 0.06};
  std::size_t length = 100000;
  std::uint64_t seed = 0;

  void validate() const;
};

struct CorpusSpan {
  Generator generator;
  std::size_t begin = 0;
  std::size_t end = 0;
};

struct Corpus {
  Tokens tokens;
  std::vector<Generator> provenance;  // one tag per position
  std::vector<CorpusSpan> spans;
};

/// Word lists the generators draw from; every entry must be in the vocab.
struct CorpusLexicon {
  std::vector<int> separators;       // between ordinal run items
  std::vector<int> filler;           // lowercase filler words
  std::vector<int> acronym_words;    // capitalized words
  int open_paren = -1, close_paren = -1, period = -1, semicolon = -1;

  static CorpusLexicon from_vocab(const Vocab& vocab);
};

Corpus generate_corpus(const CorpusSpec& spec, const SuccessionDataset& dataset, const Vocab& vocab);

/// One numbered-list prompt per entry, cut immediately before a list index.
struct ListingPrompt {
  Tokens prompt;
  int answer = 0;
};
std::vector<ListingPrompt> numbered_listing_prompts(const SuccessionDataset& dataset, const Vocab& vocab,
                                                    std::size_t count, int max_len, std::uint64_t seed);

/// Filler-only prompts with a filler continuation, for baseline comparisons.
std::vector<ListingPrompt> filler_prompts(const Vocab& vocab, std::size_t count, int len, std::uint64_t seed);

Archive corpus_to_archive(const Corpus& corpus);
Corpus corpus_from_archive(const Archive& archive);

struct IngestResult {
  Tokens tokens;
  double coverage = 1.0;  // matched characters / non-skipped characters
  std::size_t unknown_count = 0;
};

/// Greedy longest-match tokenization. Unmatched whitespace is skipped; an
/// unmatched non-whitespace run becomes one <unk> token (VocabError when the
/// vocab has no <unk>).
IngestResult ingest_text(const std::string& text, const Vocab& vocab);
IngestResult ingest_text_corpus(const std::filesystem::path& path, const Vocab& vocab);

}  // namespace succlab
