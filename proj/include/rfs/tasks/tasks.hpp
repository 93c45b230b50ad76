#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "rfs/common.hpp"

namespace rfs::tasks {

/// Closed task-local vocabulary. Ids 0..2 are <pad>, <eos>, <sep>.
class Vocab {
 public:
  static constexpr TokenId kPad = 0;
  static constexpr TokenId kEos = 1;
  static constexpr TokenId kSep = 2;

  /// The fixed vocabulary shared by every task.
  static const Vocab& standard();

  std::size_t size() const { return tokens_.size(); }
  bool contains(std::string_view token) const;
  TokenId id(std::string_view token) const;
  const std::string& token(TokenId id) const;
  bool is_special(TokenId id) const { return id == kPad || id == kEos || id == kSep; }

  /// Splits on whitespace; unknown tokens throw ConfigError.
  std::vector<TokenId> tokenize(std::string_view text) const;
  /// Space-joined surface text; special tokens are dropped.
  std::string detokenize(std::span<const TokenId> ids) const;

  /// The 64-entry word pool Copy, Copy2 and Reverse draw from.
  const std::vector<std::string>& word_pool() const { return pool_; }

 private:
  Vocab();
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> index_;
  std::vector<std::string> pool_;
};

enum class Task { Copy, Copy2, Reverse, Addition, Sort, Summation, ScanLite };
enum class Split { TrainLen, OODLen };

std::string_view to_string(Task t);
std::string_view to_string(Split s);
Task parse_task(std::string_view s);
Split parse_split(std::string_view s);

struct TaskSample {
  Task task = Task::Copy;
  std::string prompt;  // surface text
  std::string target;  // surface text
  std::vector<TokenId> prompt_ids;  // tokenized prompt followed by <sep>
  std::vector<TokenId> target_ids;  // tokenized target followed by <eos>
  std::size_t length = 0;
  Split split = Split::TrainLen;

  /// prompt_ids followed by target_ids.
  std::vector<TokenId> full_sequence() const;
};

/// Builds the token ids of a sample from its surface text.
TaskSample make_sample(Task task, std::string prompt, std::string target, std::size_t length,
                       Split split);

/// One well-formed sample of the given problem length. Length meaning:
/// Copy/Copy2/Reverse word count, Addition digits of the longer operand,
/// Sort list size, Summation operand count, ScanLite number of output actions.
TaskSample generate(Task task, std::size_t length, Rng& rng);

/// Whether `generate` accepts the length for this task.
bool supports_length(Task task, std::size_t length);

// Ground-truth helpers, exposed for checks.
std::string add_decimal(std::string_view a, std::string_view b);
int summation_answer(std::span<const int> operands);

/// True iff the sequences agree after removing <eos>, <pad> and <sep>.
bool exact_match(std::span<const TokenId> predicted, std::span<const TokenId> target);
/// Same on whitespace-separated surface text.
bool exact_match_text(std::string_view predicted, std::string_view target);

struct Dataset {
  Task task = Task::Copy;
  std::size_t train_max = 0;
  std::size_t test_max = 0;
  std::uint64_t seed = 0;
  std::vector<TaskSample> train;
  std::vector<TaskSample> test;

  /// Longest prompt + target token sequence in the training split.
  std::size_t max_train_sequence() const;
  std::size_t max_sequence() const;
};

/// Training lengths uniform over the supported lengths in [1, train_max], test
/// lengths over [1, test_max]; samples with length > train_max are OODLen.
/// Sample i of each split uses its own seed derived from (seed, task, split, i).
Dataset make_split(Task task, std::size_t n_train, std::size_t n_test, std::size_t train_max,
                   std::size_t test_max, std::uint64_t seed);

// ScanLite grammar.
namespace scan {

struct Command {
  std::vector<std::string> words;
  std::vector<std::string> actions;
};

/// Every command of the grammar (20910 of them), in a fixed order.
const std::vector<Command>& all_commands();
/// Indices into all_commands() whose expansion has exactly `length` actions.
const std::vector<std::size_t>& commands_with_output_length(std::size_t length);
std::size_t max_output_length();

}  // namespace scan

}  // namespace rfs::tasks
