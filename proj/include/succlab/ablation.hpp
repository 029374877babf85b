#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "succlab/model.hpp"
#include "succlab/succession.hpp"

namespace succlab {

enum class AblationEffect { direct, indirect, total };
enum class AblationMethod { mean, resample };
std::string to_string(AblationEffect e);
std::string to_string(AblationMethod m);
AblationEffect ablation_effect_from_string(const std::string& s);
AblationMethod ablation_method_from_string(const std::string& s);

struct AblationSpec {
  AblationEffect effect = AblationEffect::direct;
  AblationMethod method = AblationMethod::mean;
  int resample_repeats = 8;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Chooses the batch sequence whose head output replaces (sequence, position)
/// on a given repeat. Must return a sequence longer than `position`.
using ResamplePicker = std::function<std::size_t(std::size_t sequence, std::size_t position, int repeat)>;

struct SequenceAblation {
  Eigen::MatrixXd delta_logits;  // vocab x T, ablated minus original
  Eigen::VectorXd delta_loss;    // T - 1, next-token cross-entropy, ablated minus original
};

/// direct: downstream sees the original output, the final residual gets
/// (replacement - original). indirect: downstream sees the replacement, the
/// final residual gets (original - replacement). total: plain patch.
/// The mean replacement at position p averages the head over batch sequences
/// longer than p. Resampling averages deltas over the repeats.
std::vector<SequenceAblation> ablate_effect(const ModelHandle& model, HeadId head, const std::vector<Tokens>& batch,
                                            const AblationSpec& spec, const ResamplePicker& picker = {});

enum class Behavior : int { successorship = 0, acronym = 1, copying = 2, greater_than = 3, other = 4 };
constexpr int kBehaviorCount = 5;
std::string to_string(Behavior b);

struct AttendedToken {
  int position = 0;
  int token = 0;
  double weight = 0.0;
};

struct CaseRecord {
  std::size_t context = 0;  // index of the source window
  int position = 0;         // prediction position within the window
  Tokens prefix;            // window tokens 0..position
  int correct = 0;          // window token at position + 1
  std::vector<double> head_delta_logit;  // per head (layer-major), correct-token logit change
  double delta_loss = 0.0;               // designated head
  std::vector<AttendedToken> top_attended;  // designated head, descending weight, at most 5
  std::optional<Generator> provenance;      // generator tag of the correct token when known
  std::vector<Behavior> labels;
  Behavior primary = Behavior::other;
};

/// Labels in priority order and the first one as primary.
struct BehaviorLabels {
  std::vector<Behavior> labels;
  Behavior primary = Behavior::other;
};
BehaviorLabels classify_behavior(const CaseRecord& record, const SuccessionDataset& dataset, const Vocab& vocab);

struct MiningSpec {
  AblationSpec ablation;
  int contexts = 128;
  int context_length = 64;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Deterministic windows drawn from the stream; each window is one batch member.
std::vector<std::size_t> mining_window_starts(std::size_t corpus_size, const MiningSpec& spec);

struct WinningResult {
  std::vector<CaseRecord> wins;  // designated head is the unique largest logit drop
  std::size_t prefixes = 0;
  /// Wins and prefixes per generator tag of the correct token (when provenance is given).
  std::map<Generator, std::pair<std::size_t, std::size_t>> by_generator;
  double rate() const;
};

WinningResult find_winning_cases(const ModelHandle& model, HeadId head, const Tokens& corpus, const MiningSpec& spec,
                                 const SuccessionDataset& dataset, const Vocab& vocab,
                                 const std::vector<Generator>* provenance = nullptr);

struct LossReducingResult {
  std::vector<CaseRecord> cases;  // delta_loss > 0
  double total_delta_loss = 0.0;
  std::size_t prefixes = 0;
};

LossReducingResult find_loss_reducing_cases(const ModelHandle& model, HeadId head, const Tokens& corpus,
                                            const MiningSpec& spec, const SuccessionDataset& dataset,
                                            const Vocab& vocab, const std::vector<Generator>* provenance = nullptr);

struct BehaviorShares {
  std::array<double, kBehaviorCount> by_count{};
  std::array<double, kBehaviorCount> by_delta_loss{};  // weights max(delta_loss, 0)
  std::size_t records = 0;
  bool empty() const { return records == 0; }
};

/// Primary-label shares; empty input gives an empty report.
BehaviorShares behavior_report(const std::vector<CaseRecord>& records);

struct ListingOutcome {
  std::optional<HeadId> winner;  // none on ties
  double designated_drop = 0.0;
};

struct ListingStudy {
  std::vector<ListingOutcome> prompts;
  std::size_t wins = 0;
  double rate = 0.0;
};

/// Fraction of prompts whose answer-logit drop is uniquely largest for `head`;
/// the ablation batch is the prompt set.
ListingStudy numbered_listing_study(const ModelHandle& model, HeadId head, const std::vector<ListingPrompt>& prompts,
                                   const AblationSpec& spec = {});

}  // namespace succlab
