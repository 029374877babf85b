#include "succlab/ablation.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <random>

#include "succlab/error.hpp"
#include "succlab/seed.hpp"
#include "succlab/train.hpp"

namespace succlab {

std::string to_string(AblationEffect e) {
  switch (e) {
    case AblationEffect::direct: return "direct";
    case AblationEffect::indirect: return "indirect";
    case AblationEffect::total: return "total";
  }
  return "?";
}

std::string to_string(AblationMethod m) { return m == AblationMethod::mean ? "mean" : "resample"; }

AblationEffect ablation_effect_from_string(const std::string& s) {
  if (s == "direct") return AblationEffect::direct;
  if (s == "indirect") return AblationEffect::indirect;
  if (s == "total") return AblationEffect::total;
  throw ConfigError("unknown ablation effect '" + s + "' (direct|indirect|total)");
}

AblationMethod ablation_method_from_string(const std::string& s) {
  if (s == "mean") return AblationMethod::mean;
  if (s == "resample") return AblationMethod::resample;
  throw ConfigError("unknown ablation method '" + s + "' (mean|resample)");
}

void AblationSpec::validate() const {
  if (resample_repeats < 1) throw ConfigError("resample_repeats must be >= 1");
}

void MiningSpec::validate() const {
  ablation.validate();
  if (contexts < 1) throw ConfigError("contexts must be >= 1");
  if (context_length < 2) throw ConfigError("context_length must be >= 2");
}

std::string to_string(Behavior b) {
  switch (b) {
    case Behavior::successorship: return "successorship";
    case Behavior::acronym: return "acronym";
    case Behavior::copying: return "copying";
    case Behavior::greater_than: return "greater_than";
    case Behavior::other: return "other";
  }
  return "?";
}

namespace {

struct CleanPass {
  Eigen::MatrixXd logits;
  ForwardTrace trace;
};

std::vector<CleanPass> clean_passes(const ModelHandle& model, const std::vector<Tokens>& batch) {
  std::vector<CleanPass> out(batch.size());
  parallel_for(batch.size(), [&](std::size_t i) {
    auto r = forward(model, batch[i], true);
    out[i] = {std::move(r.logits), std::move(*r.trace)};
  });
  return out;
}

const Eigen::MatrixXd& head_output(const CleanPass& pass, HeadId h) {
  return pass.trace.head_out[static_cast<std::size_t>(h.layer)][static_cast<std::size_t>(h.head)];
}

/// Column p averages the head over sequences longer than p.
Eigen::MatrixXd mean_output(const std::vector<CleanPass>& passes, HeadId head, int d_model) {
  Eigen::Index t_max = 0;
  for (const auto& p : passes) t_max = std::max(t_max, p.logits.cols());
  Eigen::MatrixXd sum = Eigen::MatrixXd::Zero(d_model, t_max);
  Eigen::VectorXd count = Eigen::VectorXd::Zero(t_max);
  for (const auto& p : passes) {
    const auto& out = head_output(p, head);
    sum.leftCols(out.cols()) += out;
    count.head(out.cols()).array() += 1.0;
  }
  for (Eigen::Index c = 0; c < t_max; ++c) sum.col(c) /= count(c);
  return sum;
}

class Ablator {
 public:
  Ablator(const ModelHandle& model, const std::vector<Tokens>& batch, const std::vector<CleanPass>& passes,
          const AblationSpec& spec, const ResamplePicker& picker)
      : model_(model), batch_(batch), passes_(passes), spec_(spec), picker_(picker) {
    std::size_t t_max = 0;
    for (const auto& s : batch) t_max = std::max(t_max, s.size());
    eligible_.resize(t_max);
    for (std::size_t i = 0; i < batch.size(); ++i) {
      for (std::size_t p = 0; p < batch[i].size(); ++p) eligible_[p].push_back(i);
    }
  }

  void set_head(HeadId head) {
    head_ = head;
    if (spec_.method == AblationMethod::mean) mean_ = mean_output(passes_, head, model_.config().d_model);
  }

  /// Ablated minus clean logits for one sequence, averaged over repeats.
  Eigen::MatrixXd delta(std::size_t i) const {
    const auto& O = head_output(passes_[i], head_);
    const auto T = O.cols();
    if (spec_.method == AblationMethod::mean) return ablated(i, O, mean_.leftCols(T)) - passes_[i].logits;
    Eigen::MatrixXd acc = Eigen::MatrixXd::Zero(passes_[i].logits.rows(), T);
    for (int r = 0; r < spec_.resample_repeats; ++r) {
      Eigen::MatrixXd R(O.rows(), T);
      for (Eigen::Index p = 0; p < T; ++p) {
        const std::size_t j = pick(i, static_cast<std::size_t>(p), r);
        R.col(p) = head_output(passes_[j], head_).col(p);
      }
      acc += ablated(i, O, R) - passes_[i].logits;
    }
    return acc / static_cast<double>(spec_.resample_repeats);
  }

 private:
  std::size_t pick(std::size_t i, std::size_t p, int r) const {
    std::size_t j;
    if (picker_) {
      j = picker_(i, p, r);
    } else {
      const auto& pool = eligible_[p];
      std::mt19937_64 rng(mix_seed(mix_seed(mix_seed(derive_seed(spec_.seed, "resample"), i), p), static_cast<std::uint64_t>(r)));
      j = pool[std::uniform_int_distribution<std::size_t>(0, pool.size() - 1)(rng)];
    }
    if (j >= batch_.size() || batch_[j].size() <= p) {
      throw IndexError("resample picker returned a sequence without position " + std::to_string(p));
    }
    return j;
  }

  Eigen::MatrixXd ablated(std::size_t i, const Eigen::MatrixXd& O, const Eigen::MatrixXd& R) const {
    Intervention iv;
    switch (spec_.effect) {
      case AblationEffect::direct: iv.final_delta = R - O; break;
      case AblationEffect::indirect:
        iv.patches.push_back({head_, R});
        iv.final_delta = O - R;
        break;
      case AblationEffect::total: iv.patches.push_back({head_, R}); break;
    }
    return forward(model_, batch_[i], false, &iv).logits;
  }

  const ModelHandle& model_;
  const std::vector<Tokens>& batch_;
  const std::vector<CleanPass>& passes_;
  const AblationSpec& spec_;
  const ResamplePicker& picker_;
  std::vector<std::vector<std::size_t>> eligible_;
  HeadId head_{};
  Eigen::MatrixXd mean_;
};

double cross_entropy(const Eigen::Ref<const Eigen::VectorXd>& logits, int target) {
  const double mx = logits.maxCoeff();
  return std::log((logits.array() - mx).exp().sum()) + mx - logits(target);
}

Eigen::VectorXd delta_loss(const Eigen::MatrixXd& clean, const Eigen::MatrixXd& delta, const Tokens& tokens) {
  const Eigen::Index n = static_cast<Eigen::Index>(tokens.size()) - 1;
  Eigen::VectorXd out = Eigen::VectorXd::Zero(std::max<Eigen::Index>(n, 0));
  for (Eigen::Index p = 0; p < n; ++p) {
    const int target = tokens[static_cast<std::size_t>(p + 1)];
    const Eigen::VectorXd ablated = clean.col(p) + delta.col(p);
    out(p) = delta.col(p).isZero(0.0) ? 0.0 : cross_entropy(ablated, target) - cross_entropy(clean.col(p), target);
  }
  return out;
}

void check_batch(const ModelHandle& model, HeadId head, const std::vector<Tokens>& batch) {
  model.check_head(head);
  if (batch.empty()) throw DatasetError("ablation batch is empty");
  for (const auto& s : batch) {
    if (s.empty()) throw ContextError("ablation batch contains an empty sequence");
  }
}

std::vector<AttendedToken> top_attended(const CleanPass& pass, HeadId head, const Tokens& tokens, int position) {
  const auto& A = pass.trace.attention[static_cast<std::size_t>(head.layer)][static_cast<std::size_t>(head.head)];
  std::vector<AttendedToken> all;
  for (int s = 0; s <= position; ++s) all.push_back({s, tokens[static_cast<std::size_t>(s)], A(position, s)});
  std::stable_sort(all.begin(), all.end(), [](const auto& a, const auto& b) { return a.weight > b.weight; });
  if (all.size() > 5) all.resize(5);
  return all;
}

std::string strip_space(const std::string& s) { return !s.empty() && s.front() == ' ' ? s.substr(1) : s; }

bool is_acronym_of(const std::string& correct, const std::string& attended) {
  const std::string c = strip_space(correct);
  const std::string a = strip_space(attended);
  if (c.size() < 2 || a.empty()) return false;
  for (unsigned char ch : c) {
    if (ch < 'A' || ch > 'Z') return false;
  }
  return std::toupper(static_cast<unsigned char>(a.front())) == c.back();
}

struct MinedWindows {
  std::vector<std::size_t> starts;
  std::vector<Tokens> windows;
  std::vector<CleanPass> passes;
};

MinedWindows prepare_windows(const ModelHandle& model, HeadId head, const Tokens& corpus, const MiningSpec& spec,
                             const std::vector<Generator>* provenance) {
  spec.validate();
  model.check_head(head);
  if (corpus.size() < 2) throw DatasetError("mining corpus needs at least two tokens");
  if (provenance && provenance->size() != corpus.size()) {
    throw IntegrityError("provenance length differs from the corpus");
  }
  MinedWindows m;
  m.starts = mining_window_starts(corpus.size(), spec);
  const std::size_t len = std::min<std::size_t>(static_cast<std::size_t>(spec.context_length), corpus.size());
  for (std::size_t s : m.starts) {
    m.windows.emplace_back(corpus.begin() + static_cast<std::ptrdiff_t>(s),
                           corpus.begin() + static_cast<std::ptrdiff_t>(s + len));
  }
  m.passes = clean_passes(model, m.windows);
  return m;
}

CaseRecord make_record(const MinedWindows& m, std::size_t w, int p, HeadId head, const std::vector<Generator>* prov) {
  CaseRecord r;
  r.context = w;
  r.position = p;
  const Tokens& win = m.windows[w];
  r.prefix.assign(win.begin(), win.begin() + p + 1);
  r.correct = win[static_cast<std::size_t>(p + 1)];
  r.top_attended = top_attended(m.passes[w], head, win, p);
  if (prov) r.provenance = (*prov)[m.starts[w] + static_cast<std::size_t>(p) + 1];
  return r;
}

void label(CaseRecord& r, const SuccessionDataset& dataset, const Vocab& vocab) {
  auto l = classify_behavior(r, dataset, vocab);
  r.labels = std::move(l.labels);
  r.primary = l.primary;
}

}  // namespace

std::vector<SequenceAblation> ablate_effect(const ModelHandle& model, HeadId head, const std::vector<Tokens>& batch,
                                            const AblationSpec& spec, const ResamplePicker& picker) {
  spec.validate();
  check_batch(model, head, batch);
  const auto passes = clean_passes(model, batch);
  Ablator ablator(model, batch, passes, spec, picker);
  ablator.set_head(head);
  std::vector<SequenceAblation> out(batch.size());
  parallel_for(batch.size(), [&](std::size_t i) {
    out[i].delta_logits = ablator.delta(i);
    out[i].delta_loss = delta_loss(passes[i].logits, out[i].delta_logits, batch[i]);
  });
  return out;
}

BehaviorLabels classify_behavior(const CaseRecord& record, const SuccessionDataset& dataset, const Vocab& vocab) {
  const DatasetToken* correct = dataset.lookup(record.correct);
  bool successor = false, acronym = false, copying = false, greater = false;
  for (const auto& a : record.top_attended) {
    const DatasetToken* t = dataset.lookup(a.token);
    if (!correct || !t || t->task != correct->task) continue;
    const auto& task = dataset.tasks[static_cast<std::size_t>(t->task)].task;
    if (successor_of(task, t->ordinal) == correct->ordinal) successor = true;
    if (t->ordinal < correct->ordinal) greater = true;
  }
  if (!record.top_attended.empty()) {
    acronym = is_acronym_of(vocab.surface(record.correct), vocab.surface(record.top_attended.front().token));
  }
  const bool seen = std::find(record.prefix.begin(), record.prefix.end(), record.correct) != record.prefix.end();
  const bool attended = std::any_of(record.top_attended.begin(), record.top_attended.end(),
                                    [&](const auto& a) { return a.token == record.correct; });
  copying = seen && attended;
  greater = greater && !successor;

  BehaviorLabels out;
  if (successor) out.labels.push_back(Behavior::successorship);
  if (acronym) out.labels.push_back(Behavior::acronym);
  if (copying) out.labels.push_back(Behavior::copying);
  if (greater) out.labels.push_back(Behavior::greater_than);
  if (out.labels.empty()) out.labels.push_back(Behavior::other);
  out.primary = out.labels.front();
  return out;
}

std::vector<std::size_t> mining_window_starts(std::size_t corpus_size, const MiningSpec& spec) {
  spec.validate();
  const std::size_t len = std::min<std::size_t>(static_cast<std::size_t>(spec.context_length), corpus_size);
  std::mt19937_64 rng(derive_seed(spec.seed, "mining-windows"));
  std::uniform_int_distribution<std::size_t> start(0, corpus_size - len);
  std::vector<std::size_t> out;
  for (int i = 0; i < spec.contexts; ++i) out.push_back(start(rng));
  return out;
}

double WinningResult::rate() const {
  return prefixes == 0 ? 0.0 : static_cast<double>(wins.size()) / static_cast<double>(prefixes);
}

WinningResult find_winning_cases(const ModelHandle& model, HeadId head, const Tokens& corpus, const MiningSpec& spec,
                                 const SuccessionDataset& dataset, const Vocab& vocab,
                                 const std::vector<Generator>* provenance) {
  const auto m = prepare_windows(model, head, corpus, spec, provenance);
  const auto heads = model.all_heads();
  const std::size_t designated = static_cast<std::size_t>(head.layer * model.config().n_heads + head.head);

  // drops[w](h, p): correct-token logit change of head h at position p.
  std::vector<Eigen::MatrixXd> deltas(m.windows.size());
  std::vector<Eigen::VectorXd> losses(m.windows.size());
  for (std::size_t w = 0; w < m.windows.size(); ++w) {
    deltas[w].resize(static_cast<Eigen::Index>(heads.size()), static_cast<Eigen::Index>(m.windows[w].size()) - 1);
  }
  Ablator ablator(model, m.windows, m.passes, spec.ablation, {});
  for (std::size_t h = 0; h < heads.size(); ++h) {
    ablator.set_head(heads[h]);
    parallel_for(m.windows.size(), [&](std::size_t w) {
      const Tokens& win = m.windows[w];
      const Eigen::MatrixXd d = ablator.delta(w);
      for (Eigen::Index p = 0; p + 1 < static_cast<Eigen::Index>(win.size()); ++p) {
        deltas[w](static_cast<Eigen::Index>(h), p) = d(win[static_cast<std::size_t>(p + 1)], p);
      }
      if (h == designated) losses[w] = delta_loss(m.passes[w].logits, d, win);
    });
  }

  WinningResult result;
  for (std::size_t w = 0; w < m.windows.size(); ++w) {
    for (Eigen::Index p = 0; p < deltas[w].cols(); ++p) {
      ++result.prefixes;
      const auto col = deltas[w].col(p);
      const double mine = -col(static_cast<Eigen::Index>(designated));
      bool win = true;
      for (Eigen::Index h = 0; h < col.size(); ++h) {
        if (h != static_cast<Eigen::Index>(designated) && !(mine > -col(h))) win = false;
      }
      const int pos = static_cast<int>(p);
      if (provenance) {
        auto& g = result.by_generator[(*provenance)[m.starts[w] + static_cast<std::size_t>(p) + 1]];
        ++g.second;
        g.first += win ? 1 : 0;
      }
      if (!win) continue;
      CaseRecord r = make_record(m, w, pos, head, provenance);
      r.head_delta_logit.assign(col.data(), col.data() + col.size());
      r.delta_loss = losses[w](p);
      label(r, dataset, vocab);
      result.wins.push_back(std::move(r));
    }
  }
  return result;
}

LossReducingResult find_loss_reducing_cases(const ModelHandle& model, HeadId head, const Tokens& corpus,
                                            const MiningSpec& spec, const SuccessionDataset& dataset,
                                            const Vocab& vocab, const std::vector<Generator>* provenance) {
  const auto m = prepare_windows(model, head, corpus, spec, provenance);
  Ablator ablator(model, m.windows, m.passes, spec.ablation, {});
  ablator.set_head(head);
  std::vector<Eigen::MatrixXd> deltas(m.windows.size());
  std::vector<Eigen::VectorXd> losses(m.windows.size());
  parallel_for(m.windows.size(), [&](std::size_t w) {
    deltas[w] = ablator.delta(w);
    losses[w] = delta_loss(m.passes[w].logits, deltas[w], m.windows[w]);
  });

  LossReducingResult result;
  for (std::size_t w = 0; w < m.windows.size(); ++w) {
    for (Eigen::Index p = 0; p < losses[w].size(); ++p) {
      ++result.prefixes;
      if (!(losses[w](p) > 0.0)) continue;
      CaseRecord r = make_record(m, w, static_cast<int>(p), head, provenance);
      r.head_delta_logit = {deltas[w](r.correct, p)};
      r.delta_loss = losses[w](p);
      label(r, dataset, vocab);
      result.total_delta_loss += r.delta_loss;
      result.cases.push_back(std::move(r));
    }
  }
  return result;
}

BehaviorShares behavior_report(const std::vector<CaseRecord>& records) {
  BehaviorShares s;
  s.records = records.size();
  if (records.empty()) return s;
  double weight_total = 0.0;
  for (const auto& r : records) {
    const auto k = static_cast<std::size_t>(r.primary);
    s.by_count[k] += 1.0;
    const double w = std::max(r.delta_loss, 0.0);
    s.by_delta_loss[k] += w;
    weight_total += w;
  }
  for (auto& v : s.by_count) v /= static_cast<double>(records.size());
  for (auto& v : s.by_delta_loss) v = weight_total > 0.0 ? v / weight_total : 0.0;
  return s;
}

ListingStudy numbered_listing_study(const ModelHandle& model, HeadId head, const std::vector<ListingPrompt>& prompts,
                                   const AblationSpec& spec) {
  spec.validate();
  model.check_head(head);
  ListingStudy study;
  if (prompts.empty()) return study;
  std::vector<Tokens> batch;
  for (const auto& p : prompts) batch.push_back(p.prompt);
  check_batch(model, head, batch);
  const auto passes = clean_passes(model, batch);
  const auto heads = model.all_heads();
  Eigen::MatrixXd drops(static_cast<Eigen::Index>(heads.size()), static_cast<Eigen::Index>(prompts.size()));
  Ablator ablator(model, batch, passes, spec, {});
  for (std::size_t h = 0; h < heads.size(); ++h) {
    ablator.set_head(heads[h]);
    parallel_for(prompts.size(), [&](std::size_t i) {
      const Eigen::MatrixXd d = ablator.delta(i);
      drops(static_cast<Eigen::Index>(h), static_cast<Eigen::Index>(i)) = -d(prompts[i].answer, d.cols() - 1);
    });
  }
  for (std::size_t i = 0; i < prompts.size(); ++i) {
    ListingOutcome o;
    const auto col = drops.col(static_cast<Eigen::Index>(i));
    Eigen::Index best = 0;
    bool tie = false;
    for (Eigen::Index h = 1; h < col.size(); ++h) {
      if (col(h) > col(best)) {
        best = h;
        tie = false;
      } else if (col(h) == col(best)) {
        tie = true;
      }
    }
    if (!tie) o.winner = heads[static_cast<std::size_t>(best)];
    o.designated_drop = col(head.layer * model.config().n_heads + head.head);
    if (o.winner && *o.winner == head) ++study.wins;
    study.prompts.push_back(o);
  }
  study.rate = static_cast<double>(study.wins) / static_cast<double>(prompts.size());
  return study;
}

}  // namespace succlab
