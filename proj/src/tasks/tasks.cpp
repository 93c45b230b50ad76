#include "rfs/tasks/tasks.hpp"

#include <algorithm>
#include <map>
#include <numeric>
#include <sstream>

namespace rfs::tasks {
namespace {

// Table-style example words plus filler, 64 entries.
const char* const kWordPool[] = {
    "Code",      "Bank",     "southern", "8",       "Angle",     "situated",      "Con",
    "branches",  "1",        "I",        "M",       "J",         "$",             "high",
    "Hersteller", "conform", "B",        "F",       "Positive",  "heroic",        "Men",
    "3",         "A",        "+",        "4",       "registered", "2",            "tears",
    "S",         "neighborhoods", "Cover", "=",     "geschaffen", "C",            "apa",
    "5",         "exp",      "R",        "despair", "E",         "(",             "river",
    "window",    "silent",   "orbit",    "Maple",   "ledger",    "crimson",       "Falcon",
    "gentle",    "harbor",   "Quartz",   "velvet",  "summit",    "Echo",          "lantern",
    "meadow",    "Nova",     "pepper",   "thunder", "Willow",    "zenith",        "copper",
    "Tango"};
static_assert(sizeof(kWordPool) / sizeof(kWordPool[0]) == 64);

const char* const kScanCommandWords[] = {"walk",     "look",   "run",   "jump",  "turn",
                                         "left",     "right",  "opposite", "around",
                                         "twice",    "thrice", "and",   "after"};
const char* const kScanActions[] = {"Walk", "Look", "Run", "Jump", "Left", "Right"};

std::vector<std::string> split_ws(std::string_view text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && (text[i] == ' ' || text[i] == '\t' || text[i] == '\n')) ++i;
    std::size_t j = i;
    while (j < text.size() && !(text[j] == ' ' || text[j] == '\t' || text[j] == '\n')) ++j;
    if (j > i) out.emplace_back(text.substr(i, j - i));
    i = j;
  }
  return out;
}

std::string join(const std::vector<std::string>& words) {
  std::string out;
  for (std::size_t i = 0; i < words.size(); ++i) {
    if (i) out += ' ';
    out += words[i];
  }
  return out;
}

std::size_t uniform_index(Rng& rng, std::size_t n) {
  return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
}

// Decimal string with `digits` digits, no leading zero unless single digit.
std::string random_number(Rng& rng, std::size_t digits) {
  std::string s;
  for (std::size_t i = 0; i < digits; ++i) {
    const std::size_t lo = (i == 0 && digits > 1) ? 1 : 0;
    s += static_cast<char>('0' + lo + uniform_index(rng, 10 - lo));
  }
  return s;
}

std::vector<std::string> spaced_digits(std::string_view number) {
  std::vector<std::string> out;
  for (char c : number) out.emplace_back(1, c);
  return out;
}

}  // namespace

Vocab::Vocab() {
  auto add = [this](const std::string& t) {
    if (index_.count(t)) return;
    index_.emplace(t, static_cast<TokenId>(tokens_.size()));
    tokens_.push_back(t);
  };
  add("<pad>");
  add("<eos>");
  add("<sep>");
  for (char c = '0'; c <= '9'; ++c) {
    add(std::string(1, c));
    add(std::string(1, c) + ".");
    add(std::string(1, c) + ",");
  }
  for (const char* p : {"+", "?", ".", ",", "[", "]", "].", ":", "=", "(", ")", "$", "-", "*",
                        "/", "!"}) {
    add(p);
  }
  for (const char* k : {"Copy:", "Compute", "Compute:", "Sort", "the", "following", "list",
                        "The", "answer", "is", "sorted"}) {
    add(k);
  }
  for (const char* w : kScanCommandWords) add(w);
  for (const char* a : kScanActions) add(a);
  for (const char* w : kWordPool) {
    add(w);
    pool_.emplace_back(w);
  }
  for (char c = 'A'; c <= 'Z'; ++c) add(std::string(1, c));
  for (char c = 'a'; c <= 'z'; ++c) add(std::string(1, c));
}

const Vocab& Vocab::standard() {
  static const Vocab vocab;
  return vocab;
}

bool Vocab::contains(std::string_view token) const {
  return index_.count(std::string(token)) != 0;
}

TokenId Vocab::id(std::string_view token) const {
  auto it = index_.find(std::string(token));
  if (it == index_.end()) throw ConfigError("vocab: unknown token '" + std::string(token) + "'");
  return it->second;
}

const std::string& Vocab::token(TokenId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
    throw ConfigError("vocab: id " + std::to_string(id) + " out of range");
  }
  return tokens_[static_cast<std::size_t>(id)];
}

std::vector<TokenId> Vocab::tokenize(std::string_view text) const {
  std::vector<TokenId> ids;
  for (const auto& w : split_ws(text)) ids.push_back(id(w));
  return ids;
}

std::string Vocab::detokenize(std::span<const TokenId> ids) const {
  std::vector<std::string> words;
  for (TokenId id : ids) {
    if (!is_special(id)) words.push_back(token(id));
  }
  return join(words);
}

std::string_view to_string(Task t) {
  switch (t) {
    case Task::Copy: return "copy";
    case Task::Copy2: return "copy2";
    case Task::Reverse: return "reverse";
    case Task::Addition: return "addition";
    case Task::Sort: return "sort";
    case Task::Summation: return "summation";
    case Task::ScanLite: return "scan";
  }
  return "?";
}

std::string_view to_string(Split s) { return s == Split::TrainLen ? "train_len" : "ood_len"; }

Task parse_task(std::string_view s) {
  for (Task t : {Task::Copy, Task::Copy2, Task::Reverse, Task::Addition, Task::Sort,
                 Task::Summation, Task::ScanLite}) {
    if (to_string(t) == s) return t;
  }
  throw ConfigError("unknown task '" + std::string(s) + "'");
}

Split parse_split(std::string_view s) {
  if (s == "train_len") return Split::TrainLen;
  if (s == "ood_len") return Split::OODLen;
  throw ConfigError("unknown split '" + std::string(s) + "'");
}

std::vector<TokenId> TaskSample::full_sequence() const {
  std::vector<TokenId> out = prompt_ids;
  out.insert(out.end(), target_ids.begin(), target_ids.end());
  return out;
}

TaskSample make_sample(Task task, std::string prompt, std::string target, std::size_t length,
                       Split split) {
  const Vocab& vocab = Vocab::standard();
  TaskSample s;
  s.task = task;
  s.prompt_ids = vocab.tokenize(prompt);
  s.prompt_ids.push_back(Vocab::kSep);
  s.target_ids = vocab.tokenize(target);
  s.target_ids.push_back(Vocab::kEos);
  s.prompt = std::move(prompt);
  s.target = std::move(target);
  s.length = length;
  s.split = split;
  return s;
}

std::string add_decimal(std::string_view a, std::string_view b) {
  std::string out;
  int carry = 0;
  for (std::size_t i = 0; i < std::max(a.size(), b.size()) || carry; ++i) {
    int d = carry;
    if (i < a.size()) d += a[a.size() - 1 - i] - '0';
    if (i < b.size()) d += b[b.size() - 1 - i] - '0';
    out.push_back(static_cast<char>('0' + d % 10));
    carry = d / 10;
  }
  while (out.size() > 1 && out.back() == '0') out.pop_back();
  std::reverse(out.begin(), out.end());
  return out;
}

int summation_answer(std::span<const int> operands) {
  int total = 0;
  for (int v : operands) total += v;
  return ((total % 10) + 10) % 10;
}

bool supports_length(Task task, std::size_t length) {
  if (length == 0) return false;
  switch (task) {
    case Task::Copy: return length <= Vocab::standard().word_pool().size();
    case Task::ScanLite:
      return length <= scan::max_output_length() &&
             !scan::commands_with_output_length(length).empty();
    default: return true;
  }
}

TaskSample generate(Task task, std::size_t length, Rng& rng) {
  if (!supports_length(task, length)) {
    throw ConfigError("generate: task " + std::string(to_string(task)) +
                      " does not support length " + std::to_string(length));
  }
  const auto& pool = Vocab::standard().word_pool();
  std::vector<std::string> prompt, target;
  switch (task) {
    case Task::Copy: {
      std::vector<std::string> words;
      std::sample(pool.begin(), pool.end(), std::back_inserter(words),
                  static_cast<std::ptrdiff_t>(length), rng);
      std::shuffle(words.begin(), words.end(), rng);
      prompt.push_back("Copy:");
      prompt.insert(prompt.end(), words.begin(), words.end());
      target = words;
      break;
    }
    case Task::Copy2: {
      const std::string& w = pool[uniform_index(rng, pool.size())];
      prompt.push_back("Copy:");
      prompt.insert(prompt.end(), length, w);
      target.assign(length, w);
      break;
    }
    case Task::Reverse: {
      for (std::size_t i = 0; i < length; ++i) prompt.push_back(pool[uniform_index(rng, pool.size())]);
      target.assign(prompt.rbegin(), prompt.rend());
      break;
    }
    case Task::Addition: {
      std::string a = random_number(rng, length);
      std::string b = random_number(rng, 1 + uniform_index(rng, length));
      if (uniform_index(rng, 2)) std::swap(a, b);
      prompt.push_back("Compute");
      for (auto& d : spaced_digits(a)) prompt.push_back(d);
      prompt.push_back("+");
      for (auto& d : spaced_digits(b)) prompt.push_back(d);
      prompt.push_back("?");
      target = {"The", "answer", "is"};
      for (auto& d : spaced_digits(add_decimal(a, b))) target.push_back(d);
      target.back() += ".";
      break;
    }
    case Task::Sort: {
      std::vector<std::string> numbers(length);
      for (auto& n : numbers) n = random_number(rng, 1 + uniform_index(rng, 4));
      auto emit = [](const std::vector<std::string>& nums, std::vector<std::string>& out) {
        out.push_back("[");
        for (std::size_t i = 0; i < nums.size(); ++i) {
          for (auto& d : spaced_digits(nums[i])) out.push_back(d);
          if (i + 1 < nums.size()) out.back() += ",";
        }
        out.push_back("].");
      };
      prompt = {"Sort", "the", "following", "list"};
      emit(numbers, prompt);
      std::vector<std::string> sorted = numbers;
      std::stable_sort(sorted.begin(), sorted.end(), [](const std::string& x, const std::string& y) {
        return x.size() != y.size() ? x.size() < y.size() : x < y;
      });
      target = {"The", "sorted", "list", "is"};
      emit(sorted, target);
      break;
    }
    case Task::Summation: {
      std::vector<int> ops(length);
      for (auto& v : ops) v = static_cast<int>(uniform_index(rng, 10));
      prompt.push_back("Compute:");
      for (std::size_t i = 0; i < length; ++i) {
        if (i) prompt.push_back("+");
        prompt.push_back(std::to_string(ops[i]));
      }
      prompt.push_back(".");
      target = {"The", "answer", "is", std::to_string(summation_answer(ops)), "."};
      break;
    }
    case Task::ScanLite: {
      const auto& bucket = scan::commands_with_output_length(length);
      const auto& cmd = scan::all_commands()[bucket[uniform_index(rng, bucket.size())]];
      prompt = cmd.words;
      target = cmd.actions;
      break;
    }
  }
  return make_sample(task, join(prompt), join(target), length, Split::TrainLen);
}

bool exact_match(std::span<const TokenId> predicted, std::span<const TokenId> target) {
  auto keep = [](TokenId id) {
    return id != Vocab::kEos && id != Vocab::kPad && id != Vocab::kSep;
  };
  std::vector<TokenId> a, b;
  std::copy_if(predicted.begin(), predicted.end(), std::back_inserter(a), keep);
  std::copy_if(target.begin(), target.end(), std::back_inserter(b), keep);
  return a == b;
}

bool exact_match_text(std::string_view predicted, std::string_view target) {
  auto clean = [](std::string_view text) {
    auto words = split_ws(text);
    std::erase_if(words, [](const std::string& w) {
      return w == "<eos>" || w == "<pad>" || w == "<sep>";
    });
    return words;
  };
  return clean(predicted) == clean(target);
}

std::size_t Dataset::max_train_sequence() const {
  std::size_t m = 0;
  for (const auto& s : train) m = std::max(m, s.prompt_ids.size() + s.target_ids.size());
  return m;
}

std::size_t Dataset::max_sequence() const {
  std::size_t m = max_train_sequence();
  for (const auto& s : test) m = std::max(m, s.prompt_ids.size() + s.target_ids.size());
  return m;
}

Dataset make_split(Task task, std::size_t n_train, std::size_t n_test, std::size_t train_max,
                   std::size_t test_max, std::uint64_t seed) {
  if (train_max == 0 || train_max >= test_max) {
    throw ConfigError("make_split: need 1 <= train_max < test_max");
  }
  auto lengths_upto = [task](std::size_t max_len) {
    std::vector<std::size_t> out;
    for (std::size_t n = 1; n <= max_len; ++n) {
      if (supports_length(task, n)) out.push_back(n);
    }
    if (out.empty()) throw ConfigError("make_split: no supported lengths");
    return out;
  };
  const auto train_lengths = lengths_upto(train_max);
  const auto test_lengths = lengths_upto(test_max);
  Dataset ds;
  ds.task = task;
  ds.train_max = train_max;
  ds.test_max = test_max;
  ds.seed = seed;
  const std::string tag(to_string(task));
  auto fill = [&](std::vector<TaskSample>& out, std::size_t count,
                  const std::vector<std::size_t>& lengths, const std::string& split_tag) {
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
      Rng rng(derive_seed(seed, tag + "/" + split_tag, i));
      const std::size_t len = lengths[uniform_index(rng, lengths.size())];
      TaskSample s = generate(task, len, rng);
      s.split = len > train_max ? Split::OODLen : Split::TrainLen;
      out.push_back(std::move(s));
    }
  };
  fill(ds.train, n_train, train_lengths, "train");
  fill(ds.test, n_test, test_lengths, "test");
  return ds;
}

namespace scan {
namespace {

struct Verb {
  std::vector<std::string> words;
  std::vector<std::string> actions;
};

std::vector<Verb> build_verbs() {
  const std::vector<std::pair<std::string, std::string>> prims = {
      {"walk", "Walk"}, {"look", "Look"}, {"run", "Run"}, {"jump", "Jump"}};
  const std::vector<std::pair<std::string, std::string>> dirs = {{"left", "Left"},
                                                                 {"right", "Right"}};
  std::vector<Verb> verbs;
  for (const auto& [w, a] : prims) verbs.push_back({{w}, {a}});
  for (const auto& [dw, da] : dirs) {
    for (const auto& [w, a] : prims) verbs.push_back({{w, dw}, {da, a}});
    verbs.push_back({{"turn", dw}, {da}});
    for (const auto& [w, a] : prims) verbs.push_back({{w, "opposite", dw}, {da, da, a}});
    verbs.push_back({{"turn", "opposite", dw}, {da, da}});
    for (const auto& [w, a] : prims) {
      Verb v{{w, "around", dw}, {}};
      for (int r = 0; r < 4; ++r) v.actions.insert(v.actions.end(), {da, a});
      verbs.push_back(v);
    }
    verbs.push_back({{"turn", "around", dw}, {da, da, da, da}});
  }
  return verbs;
}

std::vector<Verb> build_statements() {
  std::vector<Verb> out;
  for (const auto& v : build_verbs()) {
    out.push_back(v);
    for (const auto& [word, reps] : {std::pair<const char*, int>{"twice", 2}, {"thrice", 3}}) {
      Verb s{v.words, {}};
      s.words.push_back(word);
      for (int r = 0; r < reps; ++r) s.actions.insert(s.actions.end(), v.actions.begin(), v.actions.end());
      out.push_back(std::move(s));
    }
  }
  return out;
}

}  // namespace

const std::vector<Command>& all_commands() {
  static const std::vector<Command> commands = [] {
    const auto stmts = build_statements();
    std::vector<Command> out;
    out.reserve(stmts.size() * (1 + 2 * stmts.size()));
    for (const auto& s : stmts) out.push_back({s.words, s.actions});
    for (const auto& a : stmts) {
      for (const auto& b : stmts) {
        Command c_and{a.words, a.actions};
        c_and.words.push_back("and");
        c_and.words.insert(c_and.words.end(), b.words.begin(), b.words.end());
        c_and.actions.insert(c_and.actions.end(), b.actions.begin(), b.actions.end());
        out.push_back(std::move(c_and));
        // "a after b" runs b first.
        Command c_after{a.words, b.actions};
        c_after.words.push_back("after");
        c_after.words.insert(c_after.words.end(), b.words.begin(), b.words.end());
        c_after.actions.insert(c_after.actions.end(), a.actions.begin(), a.actions.end());
        out.push_back(std::move(c_after));
      }
    }
    return out;
  }();
  return commands;
}

namespace {
const std::map<std::size_t, std::vector<std::size_t>>& buckets() {
  static const auto table = [] {
    std::map<std::size_t, std::vector<std::size_t>> m;
    const auto& cmds = all_commands();
    for (std::size_t i = 0; i < cmds.size(); ++i) m[cmds[i].actions.size()].push_back(i);
    return m;
  }();
  return table;
}
}  // namespace

const std::vector<std::size_t>& commands_with_output_length(std::size_t length) {
  static const std::vector<std::size_t> empty;
  auto it = buckets().find(length);
  return it == buckets().end() ? empty : it->second;
}

std::size_t max_output_length() { return buckets().rbegin()->first; }

}  // namespace scan

}  // namespace rfs::tasks
