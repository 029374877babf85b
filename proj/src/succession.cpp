#include "succlab/succession.hpp"

#include <algorithm>
#include <cctype>
#include <random>
#include <set>
#include <sstream>
#include <unordered_set>

#include "succlab/error.hpp"
#include "succlab/io.hpp"

namespace succlab {
namespace {

std::vector<std::string> spaced_variants(const std::string& item) { return {item, " " + item}; }

std::vector<std::string> word_variants(const std::string& item) {
  std::string cap = item;
  cap[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(cap[0])));
  return {item, " " + item, cap, " " + cap};
}

OrdinalTask make_task(std::string name, std::vector<std::string> items, bool words, bool cyclic = false,
                      bool held_out = false) {
  OrdinalTask t;
  t.name = std::move(name);
  t.items = std::move(items);
  for (const auto& it : t.items) t.variants.push_back(words ? word_variants(it) : spaced_variants(it));
  t.cyclic = cyclic;
  t.held_out = held_out;
  return t;
}

const std::vector<std::string>& filler_words() {
  static const std::vector<std::string> words = {
      " apple", " river", " stone", " cloud", " green", " table", " music", " paper", " light", " water",
      " house", " dream", " field", " glass", " metal", " quiet", " bread", " chair", " forest", " garden",
      " window", " yellow", " silver", " winter", " summer", " ocean", " bridge", " candle", " letter", " market",
      " pencil", " rabbit"};
  return words;
}

const std::vector<std::string>& acronym_word_list() {
  static const std::vector<std::string> words = {" Alpha", " Bravo", " Charlie", " Delta", " Golf",
                                                 " Hotel", " Kilo",  " Metro",   " Sierra", " Tango"};
  return words;
}

char initial_of(const std::string& surface) {
  for (char c : surface) {
    if (c != ' ') return static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  }
  return '\0';
}

}  // namespace

// ---------------------------------------------------------------------------
// Vocab

Vocab::Vocab(std::vector<std::string> surfaces) : surfaces_(std::move(surfaces)) {
  for (std::size_t i = 0; i < surfaces_.size(); ++i) {
    const auto& s = surfaces_[i];
    if (s.empty()) throw VocabError("empty surface form at id " + std::to_string(i));
    if (s.find('\n') != std::string::npos) throw VocabError("surface form with newline at id " + std::to_string(i));
    if (!ids_.emplace(s, static_cast<int>(i)).second) throw VocabError("duplicate surface form '" + s + "'");
    max_len_ = std::max(max_len_, s.size());
  }
}

const std::string& Vocab::surface(int id) const {
  if (id < 0 || id >= size()) throw VocabError("token id " + std::to_string(id) + " outside vocab");
  return surfaces_[static_cast<std::size_t>(id)];
}

std::optional<int> Vocab::find(const std::string& surface) const {
  const auto it = ids_.find(surface);
  if (it == ids_.end()) return std::nullopt;
  return it->second;
}

int Vocab::id(const std::string& surface) const {
  const auto found = find(surface);
  if (!found) throw VocabError("surface form '" + surface + "' not in vocab");
  return *found;
}

std::string Vocab::to_text() const {
  std::string out;
  for (const auto& s : surfaces_) out += s + "\n";
  return out;
}

Vocab Vocab::from_text(const std::string& text) {
  std::vector<std::string> lines;
  std::size_t start = 0;
  while (start < text.size()) {
    auto nl = text.find('\n', start);
    if (nl == std::string::npos) nl = text.size();
    std::string line = text.substr(start, nl - start);
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(std::move(line));
    start = nl + 1;
  }
  return Vocab(std::move(lines));
}

Vocab load_vocab(const std::filesystem::path& path) { return Vocab::from_text(read_file(path)); }

// ---------------------------------------------------------------------------
// Tasks and registry

void OrdinalTask::validate() const {
  if (items.empty()) throw DatasetError("task '" + name + "' has no items");
  if (variants.size() != items.size()) throw DatasetError("task '" + name + "' variant table size mismatch");
  std::unordered_set<std::string> seen;
  for (const auto& it : items) {
    if (!seen.insert(it).second) throw DatasetError("task '" + name + "' repeats item '" + it + "'");
  }
  for (std::size_t i = 0; i < variants.size(); ++i) {
    if (variants[i].empty()) throw DatasetError("task '" + name + "' item '" + items[i] + "' has no variants");
  }
}

std::optional<int> successor_of(const OrdinalTask& task, int ordinal) {
  if (ordinal < 1 || ordinal > task.size()) {
    throw IndexError("ordinal " + std::to_string(ordinal) + " outside task '" + task.name + "'");
  }
  if (ordinal < task.size()) return ordinal + 1;
  if (task.cyclic) return 1;
  return std::nullopt;
}

std::vector<OrdinalTask> default_registry() {
  std::vector<std::string> numbers;
  for (int i = 1; i <= 200; ++i) numbers.push_back(std::to_string(i));
  std::vector<OrdinalTask> r;
  r.push_back(make_task("numbers", numbers, false));
  r.push_back(make_task("number_words",
                        {"one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten", "eleven",
                         "twelve", "thirteen", "fourteen", "fifteen", "sixteen", "seventeen", "eighteen", "nineteen",
                         "twenty"},
                        true));
  r.push_back(make_task("cardinal_words",
                        {"first", "second", "third", "fourth", "fifth", "sixth", "seventh", "eighth", "ninth", "tenth"},
                        true));
  r.push_back(make_task("days", {"Monday", "Tuesday", "Wednesday", "Thursday", "Friday", "Saturday", "Sunday"}, false,
                        true));
  r.push_back(make_task("day_prefixes", {"Mon", "Tue", "Wed", "Thu", "Fri", "Sat", "Sun"}, false));
  r.push_back(make_task("months",
                        {"January", "February", "March", "April", "May", "June", "July", "August", "September",
                         "October", "November", "December"},
                        false, true));
  r.push_back(make_task("month_prefixes",
                        {"Jan", "Feb", "Mar", "Apr", "May", "Jun", "Jul", "Aug", "Sep", "Oct", "Nov", "Dec"}, false));
  std::vector<std::string> letters;
  for (char c = 'A'; c <= 'Z'; ++c) letters.emplace_back(1, c);
  r.push_back(make_task("letters", letters, false));
  r.push_back(make_task("roman_numerals", {"I", "II", "III", "IV", "V", "VI", "VII", "VIII", "IX", "X", "XI", "XII"},
                        false, false, true));
  return r;
}

std::string registry_to_text(const std::vector<OrdinalTask>& tasks) {
  std::string out = "# ordinal task registry: item<TAB>comma-separated surface variants\n";
  for (const auto& t : tasks) {
    out += "[" + t.name + "]\n";
    out += std::string("cyclic=") + (t.cyclic ? "true" : "false") + "\n";
    out += std::string("held_out=") + (t.held_out ? "true" : "false") + "\n";
    for (std::size_t i = 0; i < t.items.size(); ++i) {
      out += t.items[i] + "\t";
      for (std::size_t v = 0; v < t.variants[i].size(); ++v) out += (v ? "," : "") + t.variants[i][v];
      out += "\n";
    }
  }
  return out;
}

std::vector<OrdinalTask> registry_from_text(const std::string& text) {
  std::vector<OrdinalTask> tasks;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  auto fail = [&](const std::string& why) {
    throw FormatError("registry line " + std::to_string(lineno) + ": " + why);
  };
  auto parse_flag = [&](const std::string& v) {
    if (v == "true") return true;
    if (v == "false") return false;
    fail("expected true/false, got '" + v + "'");
    return false;
  };
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    if (line.front() == '[') {
      if (line.back() != ']' || line.size() < 3) fail("malformed section header");
      tasks.push_back(OrdinalTask{line.substr(1, line.size() - 2), {}, {}, false, false});
      continue;
    }
    if (tasks.empty()) fail("row before any [task] header");
    auto& t = tasks.back();
    const auto tab = line.find('\t');
    if (tab == std::string::npos) {
      if (line.rfind("cyclic=", 0) == 0) {
        t.cyclic = parse_flag(line.substr(7));
      } else if (line.rfind("held_out=", 0) == 0) {
        t.held_out = parse_flag(line.substr(9));
      } else {
        fail("expected item<TAB>variants or a task flag");
      }
      continue;
    }
    t.items.push_back(line.substr(0, tab));
    std::vector<std::string> vars;
    std::string rest = line.substr(tab + 1);
    std::size_t start = 0;
    while (start <= rest.size()) {
      auto comma = rest.find(',', start);
      if (comma == std::string::npos) comma = rest.size();
      if (comma > start) vars.push_back(rest.substr(start, comma - start));
      start = comma + 1;
    }
    if (vars.empty()) fail("item '" + t.items.back() + "' has no variants");
    t.variants.push_back(std::move(vars));
  }
  for (const auto& t : tasks) t.validate();
  return tasks;
}

std::vector<OrdinalTask> load_registry(const std::filesystem::path& path) {
  return registry_from_text(read_file(path));
}

// ---------------------------------------------------------------------------
// Dataset

bool ResolvedTask::has_item(int ordinal) const {
  return ordinal >= 1 && ordinal <= static_cast<int>(item_tokens.size()) &&
         !item_tokens[static_cast<std::size_t>(ordinal - 1)].empty();
}

int ResolvedTask::resolved_items() const {
  return static_cast<int>(std::count_if(item_tokens.begin(), item_tokens.end(), [](const auto& v) { return !v.empty(); }));
}

std::vector<std::string> DatasetReport::missing_for(const std::string& task) const {
  std::vector<std::string> out;
  const std::string prefix = task + ": ";
  for (const auto& m : missing) {
    if (m.rfind(prefix, 0) == 0) out.push_back(m.substr(prefix.size()));
  }
  return out;
}

const DatasetToken* SuccessionDataset::lookup(int token) const {
  const auto it = by_token_.find(token);
  return it == by_token_.end() ? nullptr : &tokens[it->second];
}

std::optional<int> SuccessionDataset::task_index(const std::string& name) const {
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    if (tasks[i].task.name == name) return static_cast<int>(i);
  }
  return std::nullopt;
}

std::vector<DatasetToken> SuccessionDataset::scored_tokens() const {
  std::vector<DatasetToken> out;
  for (const auto& t : tokens) {
    if (!tasks[static_cast<std::size_t>(t.task)].task.held_out) out.push_back(t);
  }
  return out;
}

std::vector<DatasetToken> SuccessionDataset::task_tokens(int task) const {
  std::vector<DatasetToken> out;
  for (const auto& t : tokens) {
    if (t.task == task) out.push_back(t);
  }
  return out;
}

std::optional<int> SuccessionDataset::item_token(int task, int ordinal, int variant) const {
  const auto& rt = tasks.at(static_cast<std::size_t>(task));
  if (!rt.has_item(ordinal)) return std::nullopt;
  const auto& ids = rt.item_tokens[static_cast<std::size_t>(ordinal - 1)];
  for (int id : ids) {
    if (lookup(id)->variant == variant) return id;
  }
  return ids.front();
}

SuccessionDataset build_succession_dataset(const Vocab& vocab, const std::vector<OrdinalTask>& registry) {
  if (vocab.size() == 0) throw DatasetError("empty vocab");
  SuccessionDataset ds;
  std::unordered_map<int, std::string> claimed;  // token -> task name
  for (const auto& task : registry) {
    task.validate();
    ResolvedTask rt{task, std::vector<std::vector<int>>(task.items.size())};
    std::vector<DatasetToken> pending;
    const int task_idx = static_cast<int>(ds.tasks.size());
    for (std::size_t i = 0; i < task.items.size(); ++i) {
      std::set<int> seen_in_item;
      for (std::size_t v = 0; v < task.variants[i].size(); ++v) {
        const auto& surface = task.variants[i][v];
        const auto id = vocab.find(surface);
        if (!id) {
          ds.report.missing.push_back(task.name + ": " + surface);
          continue;
        }
        if (const auto c = claimed.find(*id); c != claimed.end()) {
          ds.report.collisions.push_back(task.name + ": " + surface + " (claimed by " + c->second + ")");
          continue;
        }
        if (!seen_in_item.insert(*id).second) continue;
        rt.item_tokens[i].push_back(*id);
        pending.push_back({*id, task_idx, static_cast<int>(i) + 1, static_cast<int>(v)});
      }
    }
    const int resolved = rt.resolved_items();
    if (resolved == 0) {
      ds.report.excluded_tasks.push_back(task.name);
      continue;
    }
    if (resolved < 2) {
      throw DatasetError("task '" + task.name + "' resolves only " + std::to_string(resolved) +
                         " item; at least 2 are needed");
    }
    for (const auto& p : pending) claimed.emplace(p.token, task.name);
    for (const auto& p : pending) {
      ds.by_token_.emplace(p.token, ds.tokens.size());
      ds.tokens.push_back(p);
    }
    ds.tasks.push_back(std::move(rt));
  }
  if (ds.tasks.empty()) throw DatasetError("no task resolved against the vocab");
  return ds;
}

Vocab make_toy_vocab() {
  std::vector<std::string> s = {Vocab::kUnk};
  std::unordered_set<std::string> seen(s.begin(), s.end());
  auto add = [&](const std::string& x) {
    if (seen.insert(x).second) s.push_back(x);
  };
  for (const auto& task : default_registry()) {
    for (const auto& vars : task.variants) {
      for (const auto& v : vars) add(v);
    }
  }
  for (const char* p : {",", ".", "(", ")", ";", ":", " and", " then", " the", " is", " next", " list", " here"}) add(p);
  for (const auto& w : filler_words()) add(w);
  for (const auto& w : acronym_word_list()) add(w);
  for (const auto& a : acronym_word_list()) {
    for (const auto& b : acronym_word_list()) {
      if (a != b) add(std::string{initial_of(a), initial_of(b)});
    }
  }
  return Vocab(std::move(s));
}

// ---------------------------------------------------------------------------
// Corpus generation

std::string to_string(Generator g) {
  switch (g) {
    case Generator::ordinal_runs: return "ordinal_runs";
    case Generator::numbered_lists: return "numbered_lists";
    case Generator::acronym_definitions: return "acronym_definitions";
    case Generator::copying_spans: return "copying_spans";
    case Generator::filler: return "filler";
  }
  return "unknown";
}

void CorpusSpec::validate() const {
  double sum = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0)) throw ConfigError("corpus mixture weights must be nonnegative");
    sum += w;
  }
  if (!(sum > 0.0)) throw ConfigError("corpus mixture weights must sum to a positive value");
}

CorpusLexicon CorpusLexicon::from_vocab(const Vocab& vocab) {
  CorpusLexicon lex;
  for (const char* sep : {",", " and", " then"}) {
    if (auto id = vocab.find(sep)) lex.separators.push_back(*id);
  }
  for (const auto& w : filler_words()) {
    if (auto id = vocab.find(w)) lex.filler.push_back(*id);
  }
  for (const auto& w : acronym_word_list()) {
    if (auto id = vocab.find(w)) lex.acronym_words.push_back(*id);
  }
  auto opt = [&](const char* s) { return vocab.find(s).value_or(-1); };
  lex.open_paren = opt("(");
  lex.close_paren = opt(")");
  lex.period = opt(".");
  lex.semicolon = opt(";");
  return lex;
}

namespace {

class SpanWriter {
 public:
  SpanWriter(const SuccessionDataset& ds, const Vocab& vocab, std::mt19937_64& rng)
      : ds_(ds), vocab_(vocab), lex_(CorpusLexicon::from_vocab(vocab)), rng_(rng) {
    for (std::size_t t = 0; t < ds_.tasks.size(); ++t) {
      const auto& rt = ds_.tasks[t];
      if (rt.task.held_out || rt.resolved_items() < 3) continue;
      run_tasks_.push_back(static_cast<int>(t));
      run_weights_.push_back(static_cast<double>(ds_.task_tokens(static_cast<int>(t)).size()));
    }
    numbers_ = ds_.task_index("numbers");
  }

  bool can(Generator g) const {
    switch (g) {
      case Generator::ordinal_runs: return !run_tasks_.empty() && !lex_.separators.empty();
      case Generator::numbered_lists:
        return numbers_.has_value() && lex_.close_paren >= 0 && lex_.period >= 0 && !lex_.filler.empty();
      case Generator::acronym_definitions:
        return lex_.acronym_words.size() >= 2 && lex_.open_paren >= 0 && lex_.close_paren >= 0;
      case Generator::copying_spans: return lex_.filler.size() >= 2 && lex_.semicolon >= 0;
      case Generator::filler: return !lex_.filler.empty();
    }
    return false;
  }

  Tokens emit(Generator g) {
    switch (g) {
      case Generator::ordinal_runs: return ordinal_run();
      case Generator::numbered_lists: return numbered_list(uniform(3, 6), nullptr);
      case Generator::acronym_definitions: return acronym();
      case Generator::copying_spans: return copying();
      case Generator::filler: return filler(uniform(3, 8));
    }
    return {};
  }

  Tokens numbered_list(int items, std::vector<std::size_t>* index_positions) {
    const int start = uniform(0, 3) == 0 ? uniform(1, 20) : 1;
    const int variant = uniform(0, 1);
    Tokens out;
    for (int k = 0; k < items; ++k) {
      const auto id = ds_.item_token(*numbers_, start + k, variant);
      if (!id) break;
      if (index_positions) index_positions->push_back(out.size());
      out.push_back(*id);
      out.push_back(lex_.close_paren);
      const auto words = filler(uniform(1, 3));
      out.insert(out.end(), words.begin(), words.end());
      out.push_back(lex_.period);
    }
    return out;
  }

  Tokens filler(int n) {
    Tokens out;
    for (int i = 0; i < n; ++i) out.push_back(pick(lex_.filler));
    return out;
  }

  int uniform(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng_); }

 private:
  int pick(const std::vector<int>& v) {
    return v[static_cast<std::size_t>(uniform(0, static_cast<int>(v.size()) - 1))];
  }

  Tokens ordinal_run() {
    std::discrete_distribution<std::size_t> which(run_weights_.begin(), run_weights_.end());
    const int task = run_tasks_[which(rng_)];
    const auto& rt = ds_.tasks[static_cast<std::size_t>(task)];
    const int n = rt.task.size();
    const int len = uniform(3, 6);
    const int variant = uniform(0, static_cast<int>(rt.task.variants.front().size()) - 1);
    int ord = uniform(1, n);
    while (!rt.has_item(ord)) ord = uniform(1, n);
    Tokens out;
    for (int k = 0; k < len; ++k) {
      if (k > 0) {
        const auto next = successor_of(rt.task, ord);
        if (!next || !rt.has_item(*next)) break;
        ord = *next;
        out.push_back(pick(lex_.separators));
      }
      out.push_back(*ds_.item_token(task, ord, variant));
    }
    return out;
  }

  Tokens acronym() {
    std::vector<int> words = lex_.acronym_words;
    std::shuffle(words.begin(), words.end(), rng_);
    for (std::size_t i = 0; i + 1 < words.size(); ++i) {
      const std::string acr{initial_of(vocab_.surface(words[i])), initial_of(vocab_.surface(words[i + 1]))};
      if (const auto id = vocab_.find(acr)) {
        return {words[i], words[i + 1], lex_.open_paren, *id, lex_.close_paren};
      }
    }
    return filler(3);
  }

  Tokens copying() {
    const Tokens span = filler(uniform(2, 4));
    Tokens out = span;
    out.push_back(lex_.semicolon);
    out.insert(out.end(), span.begin(), span.end());
    return out;
  }

  const SuccessionDataset& ds_;
  const Vocab& vocab_;
  CorpusLexicon lex_;
  std::mt19937_64& rng_;
  std::vector<int> run_tasks_;
  std::vector<double> run_weights_;
  std::optional<int> numbers_;
};

}  // namespace

Corpus generate_corpus(const CorpusSpec& spec, const SuccessionDataset& dataset, const Vocab& vocab) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  SpanWriter writer(dataset, vocab, rng);
  std::array<double, kGeneratorCount> weights = spec.weights;
  for (int g = 0; g < kGeneratorCount; ++g) {
    if (weights[static_cast<std::size_t>(g)] > 0 && !writer.can(static_cast<Generator>(g))) {
      throw DatasetError("vocab cannot support generator '" + to_string(static_cast<Generator>(g)) + "'");
    }
  }
  std::discrete_distribution<int> pick(weights.begin(), weights.end());
  Corpus c;
  while (c.tokens.size() < spec.length) {
    const auto g = static_cast<Generator>(pick(rng));
    Tokens span = writer.emit(g);
    if (span.empty()) continue;
    const std::size_t begin = c.tokens.size();
    const std::size_t take = std::min(span.size(), spec.length - begin);
    c.tokens.insert(c.tokens.end(), span.begin(), span.begin() + static_cast<std::ptrdiff_t>(take));
    c.provenance.insert(c.provenance.end(), take, g);
    c.spans.push_back({g, begin, begin + take});
  }
  return c;
}

std::vector<ListingPrompt> numbered_listing_prompts(const SuccessionDataset& dataset, const Vocab& vocab,
                                                    std::size_t count, int max_len, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  SpanWriter writer(dataset, vocab, rng);
  if (!writer.can(Generator::numbered_lists)) throw DatasetError("vocab cannot support numbered lists");
  std::vector<ListingPrompt> out;
  int guard = 0;
  while (out.size() < count && ++guard < static_cast<int>(count) * 100) {
    std::vector<std::size_t> idx;
    Tokens list = writer.numbered_list(writer.uniform(2, 5), &idx);
    if (idx.size() < 2) continue;
    const std::size_t cut = idx[static_cast<std::size_t>(writer.uniform(1, static_cast<int>(idx.size()) - 1))];
    Tokens prompt = writer.filler(writer.uniform(0, 3));
    prompt.insert(prompt.end(), list.begin(), list.begin() + static_cast<std::ptrdiff_t>(cut));
    if (static_cast<int>(prompt.size()) > max_len) continue;
    out.push_back({std::move(prompt), list[cut]});
  }
  return out;
}

std::vector<ListingPrompt> filler_prompts(const Vocab& vocab, std::size_t count, int len, std::uint64_t seed) {
  const CorpusLexicon lex = CorpusLexicon::from_vocab(vocab);
  if (lex.filler.empty()) throw DatasetError("vocab has no filler words");
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, lex.filler.size() - 1);
  std::vector<ListingPrompt> out;
  for (std::size_t i = 0; i < count; ++i) {
    ListingPrompt p;
    for (int k = 0; k < len; ++k) p.prompt.push_back(lex.filler[pick(rng)]);
    p.answer = lex.filler[pick(rng)];
    out.push_back(std::move(p));
  }
  return out;
}

Archive corpus_to_archive(const Corpus& c) {
  Archive a;
  a.set_meta("kind", "corpus");
  a.add_ids("tokens", c.tokens);
  std::vector<int> prov;
  prov.reserve(c.provenance.size());
  for (auto g : c.provenance) prov.push_back(static_cast<int>(g));
  a.add_ids("provenance", prov);
  return a;
}

Corpus corpus_from_archive(const Archive& a) {
  Corpus c;
  c.tokens = a.ids("tokens");
  if (a.find("provenance")) {
    for (int g : a.ids("provenance")) {
      if (g >= kGeneratorCount) throw IntegrityError("unknown generator tag " + std::to_string(g));
      c.provenance.push_back(static_cast<Generator>(g));
    }
    if (c.provenance.size() != c.tokens.size()) throw IntegrityError("provenance length differs from token count");
    for (std::size_t i = 0; i < c.provenance.size(); ++i) {
      if (c.spans.empty() || c.spans.back().generator != c.provenance[i] || i == 0) {
        if (!c.spans.empty() && c.spans.back().generator == c.provenance[i]) continue;
        c.spans.push_back({c.provenance[i], i, i + 1});
      }
      c.spans.back().end = i + 1;
    }
  }
  return c;
}

// ---------------------------------------------------------------------------
// Ingestion

IngestResult ingest_text(const std::string& text, const Vocab& vocab) {
  IngestResult r;
  std::size_t matched = 0, skipped = 0;
  std::size_t i = 0;
  const std::size_t max_len = vocab.max_surface_length();
  auto is_space = [](char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; };
  while (i < text.size()) {
    std::optional<int> hit;
    std::size_t hit_len = 0;
    for (std::size_t len = std::min(max_len, text.size() - i); len >= 1; --len) {
      if (auto id = vocab.find(text.substr(i, len))) {
        hit = id;
        hit_len = len;
        break;
      }
    }
    if (hit) {
      r.tokens.push_back(*hit);
      matched += hit_len;
      i += hit_len;
      continue;
    }
    if (is_space(text[i])) {
      ++skipped;
      ++i;
      continue;
    }
    const auto unk = vocab.unk_id();
    if (!unk) throw VocabError("text contains unknown words but the vocab has no <unk>");
    std::size_t j = i;
    while (j < text.size() && !is_space(text[j])) ++j;
    r.tokens.push_back(*unk);
    ++r.unknown_count;
    i = j;
  }
  const std::size_t denom = text.size() - skipped;
  r.coverage = denom == 0 ? 1.0 : static_cast<double>(matched) / static_cast<double>(denom);
  return r;
}

IngestResult ingest_text_corpus(const std::filesystem::path& path, const Vocab& vocab) {
  return ingest_text(read_file(path), vocab);
}

}  // namespace succlab
