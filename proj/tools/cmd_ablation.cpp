#include <sstream>

#include "cli_common.hpp"
#include "succlab/ablation.hpp"
#include "succlab/error.hpp"
#include "succlab/io.hpp"

namespace succlab::cli {
namespace {

using nlohmann::json;

AblationSpec ablation_spec(const Context& ctx) {
  AblationSpec s;
  s.effect = ablation_effect_from_string(ctx.get("ablation.effect", "direct"));
  s.method = ablation_method_from_string(ctx.get("ablation.method", "mean"));
  s.resample_repeats = ctx.get_int("ablation.repeats", 8);
  s.seed = ctx.seed_for("ablation");
  s.validate();
  return s;
}

MiningSpec mining_spec(const Context& ctx) {
  MiningSpec m;
  m.ablation = ablation_spec(ctx);
  m.contexts = ctx.get_int("mining.contexts", 128);
  m.context_length = ctx.get_int("mining.context_length", 32);
  m.seed = ctx.seed_for("mining");
  m.validate();
  return m;
}

/// Text corpus from corpus.path, otherwise a synthetic corpus with provenance.
Corpus load_corpus(Context& ctx, json& info) {
  if (const auto path = ctx.get("corpus.path", ""); !path.empty()) {
    auto ing = ingest_text_corpus(path, ctx.vocab());
    info = {{"source", "text"}, {"tokens", ing.tokens.size()}, {"coverage", ing.coverage}};
    Corpus c;
    c.tokens = std::move(ing.tokens);
    return c;
  }
  CorpusSpec spec;
  spec.length = static_cast<std::size_t>(ctx.get_u64("corpus.length", 50000));
  spec.seed = ctx.seed_for("corpus");
  info = {{"source", "synthetic"}, {"tokens", spec.length}};
  return generate_corpus(spec, ctx.dataset(), ctx.vocab());
}

std::vector<HeadId> ablation_heads(Context& ctx) {
  if (ctx.get("head", "auto") == "all") return ctx.model().all_heads();
  return {ctx.head()};
}

void ablate(Context& ctx) {
  const auto& model = ctx.model();
  const auto mspec = mining_spec(ctx);
  json corpus_info;
  const Corpus corpus = load_corpus(ctx, corpus_info);
  std::vector<Tokens> batch;
  for (std::size_t start : mining_window_starts(corpus.tokens.size(), mspec)) {
    batch.emplace_back(corpus.tokens.begin() + static_cast<std::ptrdiff_t>(start),
                       corpus.tokens.begin() + static_cast<std::ptrdiff_t>(start + mspec.context_length));
  }
  Table t;
  t.columns = {"head", "mean_delta_loss", "mean_correct_logit_delta", "loss_increase_fraction"};
  json heads = json::array();
  for (const HeadId h : ablation_heads(ctx)) {
    const auto res = ablate_effect(model, h, batch, mspec.ablation);
    double dl = 0.0, dlogit = 0.0;
    std::size_t n = 0, increases = 0;
    for (std::size_t s = 0; s < batch.size(); ++s) {
      for (Eigen::Index p = 0; p < res[s].delta_loss.size(); ++p) {
        dl += res[s].delta_loss(p);
        dlogit += res[s].delta_logits(batch[s][static_cast<std::size_t>(p + 1)], p);
        increases += res[s].delta_loss(p) > 0.0 ? 1 : 0;
        ++n;
      }
    }
    const double inv = n ? 1.0 / static_cast<double>(n) : 0.0;
    t.add_row({to_string(h), dl * inv, dlogit * inv, static_cast<double>(increases) * inv});
    heads.push_back({{"head", to_string(h)},
                     {"mean_delta_loss", dl * inv},
                     {"mean_correct_logit_delta", dlogit * inv},
                     {"loss_increase_fraction", static_cast<double>(increases) * inv},
                     {"positions", n}});
  }
  ctx.write_table("ablate", t);
  ctx.write_json("ablate.json", {{"effect", to_string(mspec.ablation.effect)},
                                 {"method", to_string(mspec.ablation.method)},
                                 {"contexts", batch.size()},
                                 {"corpus", corpus_info},
                                 {"heads", heads}});
}

// ---------------------------------------------------------------------------
// Case records as JSON lines

json record_json(const CaseRecord& r, const Vocab& vocab) {
  json prefix = json::array(), text = json::array(), attended = json::array(), labels = json::array();
  for (int t : r.prefix) {
    prefix.push_back(t);
    text.push_back(surface_of(vocab, t));
  }
  for (const auto& a : r.top_attended) {
    attended.push_back({{"position", a.position}, {"token", a.token}, {"surface", surface_of(vocab, a.token)},
                        {"weight", a.weight}});
  }
  for (auto b : r.labels) labels.push_back(to_string(b));
  return {{"context", r.context},
          {"position", r.position},
          {"prefix", prefix},
          {"prefix_text", text},
          {"correct", r.correct},
          {"correct_text", surface_of(vocab, r.correct)},
          {"head_delta_logit", r.head_delta_logit},
          {"delta_loss", r.delta_loss},
          {"top_attended", attended},
          {"provenance", r.provenance ? json(to_string(*r.provenance)) : json(nullptr)},
          {"labels", labels},
          {"primary", to_string(r.primary)}};
}

Generator generator_from_string(const std::string& s) {
  for (int g = 0; g < kGeneratorCount; ++g) {
    if (to_string(static_cast<Generator>(g)) == s) return static_cast<Generator>(g);
  }
  throw FormatError("unknown generator '" + s + "'");
}

CaseRecord record_from_json(const json& j) {
  try {
    CaseRecord r;
    r.context = j.at("context").get<std::size_t>();
    r.position = j.at("position").get<int>();
    r.prefix = j.at("prefix").get<Tokens>();
    r.correct = j.at("correct").get<int>();
    r.head_delta_logit = j.at("head_delta_logit").get<std::vector<double>>();
    r.delta_loss = j.at("delta_loss").get<double>();
    for (const auto& a : j.at("top_attended")) {
      r.top_attended.push_back({a.at("position").get<int>(), a.at("token").get<int>(), a.at("weight").get<double>()});
    }
    if (!j.at("provenance").is_null()) r.provenance = generator_from_string(j.at("provenance").get<std::string>());
    return r;
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed case record: ") + e.what());
  }
}

std::string to_jsonl(const std::vector<CaseRecord>& records, const Vocab& vocab) {
  std::string out;
  for (const auto& r : records) out += record_json(r, vocab).dump() + "\n";
  return out;
}

json shares_json(const BehaviorShares& s) {
  json by_count = json::object(), by_loss = json::object();
  for (int b = 0; b < kBehaviorCount; ++b) {
    by_count[to_string(static_cast<Behavior>(b))] = s.by_count[static_cast<std::size_t>(b)];
    by_loss[to_string(static_cast<Behavior>(b))] = s.by_delta_loss[static_cast<std::size_t>(b)];
  }
  return {{"records", s.records}, {"by_count", by_count}, {"by_delta_loss", by_loss}};
}

void mine_wild(Context& ctx) {
  const auto& model = ctx.model();
  const auto& ds = ctx.dataset();
  const Vocab& vocab = ctx.vocab();
  const HeadId head = ctx.head();
  const auto spec = mining_spec(ctx);
  json corpus_info;
  const Corpus corpus = load_corpus(ctx, corpus_info);
  const auto* prov = corpus.provenance.empty() ? nullptr : &corpus.provenance;
  const auto wins = find_winning_cases(model, head, corpus.tokens, spec, ds, vocab, prov);
  const auto loss = find_loss_reducing_cases(model, head, corpus.tokens, spec, ds, vocab, prov);
  ctx.write_text("winning_cases.jsonl", to_jsonl(wins.wins, vocab));
  ctx.write_text("loss_reducing_cases.jsonl", to_jsonl(loss.cases, vocab));
  json by_gen = json::object();
  for (const auto& [g, wp] : wins.by_generator) {
    by_gen[to_string(g)] = {{"wins", wp.first}, {"prefixes", wp.second},
                            {"rate", wp.second ? static_cast<double>(wp.first) / static_cast<double>(wp.second) : 0.0}};
  }
  ctx.write_json("mine.json", {{"head", to_string(head)},
                               {"effect", to_string(spec.ablation.effect)},
                               {"method", to_string(spec.ablation.method)},
                               {"corpus", corpus_info},
                               {"winning", {{"cases", wins.wins.size()},
                                            {"prefixes", wins.prefixes},
                                            {"rate", wins.rate()},
                                            {"by_generator", by_gen},
                                            {"behaviors", shares_json(behavior_report(wins.wins))}}},
                               {"loss_reducing", {{"cases", loss.cases.size()},
                                                  {"prefixes", loss.prefixes},
                                                  {"total_delta_loss", loss.total_delta_loss},
                                                  {"behaviors", shares_json(behavior_report(loss.cases))}}}});
}

void behaviors(Context& ctx) {
  const auto& ds = ctx.dataset();
  const Vocab& vocab = ctx.vocab();
  std::vector<CaseRecord> records;
  for (const auto& path : split(ctx.require("behaviors.cases"), ',')) {
    std::istringstream in(read_file(path));
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (line.empty()) continue;
      json j;
      try {
        j = json::parse(line);
      } catch (const json::exception& e) {
        throw FormatError(path + ":" + std::to_string(line_no) + ": " + e.what());
      }
      auto r = record_from_json(j);
      for (int t : r.prefix) vocab.surface(t);  // throws on ids outside the vocab
      vocab.surface(r.correct);
      const auto labels = classify_behavior(r, ds, vocab);
      r.labels = labels.labels;
      r.primary = labels.primary;
      records.push_back(std::move(r));
    }
  }
  const auto shares = behavior_report(records);
  std::vector<std::string> names;
  for (int b = 0; b < kBehaviorCount; ++b) names.push_back(to_string(static_cast<Behavior>(b)));
  Table t;
  t.columns = {"behavior", "share_by_count", "share_by_delta_loss"};
  for (int b = 0; b < kBehaviorCount; ++b) {
    t.add_row({names[static_cast<std::size_t>(b)], shares.by_count[static_cast<std::size_t>(b)],
               shares.by_delta_loss[static_cast<std::size_t>(b)]});
  }
  ctx.write_table("behaviors", t);
  ctx.write_text("labeled_cases.jsonl", to_jsonl(records, vocab));
  ctx.write_json("behaviors.json", shares_json(shares));
  auto pie = [&](const std::array<double, kBehaviorCount>& v, const std::string& file, const std::string& title) {
    const std::vector<double> values(v.begin(), v.end());
    double total = 0.0;
    for (double x : values) total += x;
    if (total > 0.0) ctx.write_text(file, pie_chart_svg(names, values, title));
  };
  pie(shares.by_count, "behaviors_count.svg", "behaviors by case count");
  pie(shares.by_delta_loss, "behaviors_loss.svg", "behaviors by loss increase");
}

// ---------------------------------------------------------------------------
// numbered-listing

/// One prompt per line: "<prompt text> ⟂ <answer surface>".
std::vector<ListingPrompt> read_prompt_file(const std::string& path, const Vocab& vocab) {
  static const std::string kSep = "⟂";
  std::vector<ListingPrompt> out;
  std::istringstream in(read_file(path));
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    const auto at = line.rfind(kSep);
    if (at == std::string::npos) {
      throw FormatError(path + ":" + std::to_string(line_no) + ": missing '" + kSep + "' separator");
    }
    ListingPrompt p;
    p.prompt = ingest_text(line.substr(0, at), vocab).tokens;
    std::string answer = line.substr(at + kSep.size());
    if (!answer.empty() && answer[0] == ' ' && !vocab.find(answer)) answer.erase(0, 1);
    const auto id = vocab.find(answer);
    if (!id) {
      const auto toks = ingest_text(answer, vocab).tokens;
      if (toks.size() != 1) throw VocabError(path + ":" + std::to_string(line_no) + ": answer is not one token");
      p.answer = toks[0];
    } else {
      p.answer = *id;
    }
    if (p.prompt.empty()) throw FormatError(path + ":" + std::to_string(line_no) + ": empty prompt");
    out.push_back(std::move(p));
  }
  if (out.empty()) throw DatasetError("prompt file '" + path + "' has no prompts");
  return out;
}

void numbered_listing(Context& ctx) {
  const auto& model = ctx.model();
  const Vocab& vocab = ctx.vocab();
  const HeadId head = ctx.head();
  const auto spec = ablation_spec(ctx);
  std::vector<ListingPrompt> prompts;
  if (const auto path = ctx.get("listing.prompts", ""); !path.empty()) {
    prompts = read_prompt_file(path, vocab);
  } else {
    prompts = numbered_listing_prompts(ctx.dataset(), vocab, static_cast<std::size_t>(ctx.get_int("listing.count", 64)),
                                       ctx.get_int("listing.max_len", model.config().max_context),
                                       ctx.seed_for("listing"));
  }
  const auto study = numbered_listing_study(model, head, prompts, spec);
  Table t;
  t.columns = {"prompt", "answer", "winner", "designated_drop"};
  json rows = json::array();
  std::map<std::string, int> by_winner;
  for (std::size_t i = 0; i < prompts.size(); ++i) {
    std::string text;
    for (int tok : prompts[i].prompt) text += surface_of(vocab, tok);
    const auto& o = study.prompts[i];
    const std::string winner = o.winner ? to_string(*o.winner) : "tie";
    ++by_winner[winner];
    t.add_row({text, surface_of(vocab, prompts[i].answer), winner, o.designated_drop});
    rows.push_back({{"prompt", text}, {"answer", surface_of(vocab, prompts[i].answer)}, {"winner", winner},
                    {"designated_drop", o.designated_drop}});
  }
  ctx.write_table("listing", t);
  ctx.write_json("listing.json", {{"head", to_string(head)},
                                  {"effect", to_string(spec.effect)},
                                  {"method", to_string(spec.method)},
                                  {"prompts", prompts.size()},
                                  {"wins", study.wins},
                                  {"rate", study.rate},
                                  {"wins_by_head", by_winner},
                                  {"rows", rows}});
}

}  // namespace

std::vector<Command> ablation_commands() {
  auto ablation_flags = [](CLI::App& app, FlagSink& s) {
    flag(app, s, "--effect", "ablation.effect", "direct, indirect or total");
    flag(app, s, "--method", "ablation.method", "mean or resample");
    flag(app, s, "--repeats", "ablation.repeats", "resampling repeats");
  };
  return {
      {"ablate", "ablation effect of heads on next-token loss",
       [=](CLI::App& app, FlagSink& s) {
         ablation_flags(app, s);
         flag(app, s, "--corpus", "corpus.path", "text corpus (default: synthetic)");
         flag(app, s, "--contexts", "mining.contexts", "number of windows");
       },
       ablate},
      {"mine-wild", "winning and loss-reducing cases of one head",
       [=](CLI::App& app, FlagSink& s) {
         ablation_flags(app, s);
         flag(app, s, "--corpus", "corpus.path", "text corpus (default: synthetic)");
         flag(app, s, "--contexts", "mining.contexts", "number of windows");
       },
       mine_wild},
      {"behaviors", "behavior shares of mined cases",
       [](CLI::App& app, FlagSink& s) { flag(app, s, "--cases", "behaviors.cases", "comma-separated JSONL files"); },
       behaviors},
      {"numbered-listing", "head winning rate on numbered-listing prompts",
       [=](CLI::App& app, FlagSink& s) {
         ablation_flags(app, s);
         flag(app, s, "--prompts", "listing.prompts", "prompt file, lines 'prompt ⟂ answer'");
         flag(app, s, "--count", "listing.count", "generated prompts");
       },
       numbered_listing},
  };
}

}  // namespace succlab::cli
