#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "inlineac/corpus.hpp"
#include "inlineac/lm.hpp"

namespace inlineac::mdp {

using corpus::SentenceRecord;
using lm::Candidate;

/// Millisecond timings the reward parameters are derived from.
struct TimingConstants {
  double char_write_ms = 521.0;
  double char_read_ms = 40.0;
  double saccade_ms = 30.0;
};

struct RewardParams {
  double alpha = 40.0 / 521.0;
  double beta_correct = 60.0 / 521.0;
  double beta_incorrect = 60.0 / 521.0;

  /// alpha = read/write, beta = two saccades / write.
  static RewardParams from_timings(const TimingConstants& t);
  static RewardParams defaults() { return from_timings({}); }
  /// alpha = 0, beta 10/521 when correct and 50/521 when wrong.
  static RewardParams study();
  static RewardParams preset(std::string_view name);

  void validate() const;
};

/// Word: accept only when the insertion ends at a word boundary of the
/// target. Literal: accept any insertion that is a prefix of the remainder.
enum class BoundaryMode { Word, Literal };

struct EnvConfig {
  RewardParams reward;
  BoundaryMode boundary = BoundaryMode::Word;
  lm::LmConfig lm;

  static EnvConfig from_json(const nlohmann::json& j);
  static EnvConfig load(const std::filesystem::path& path);
  nlohmann::json to_json() const;
};

struct AgentAction {
  enum class Kind { Wait, Suggest };
  Kind kind = Kind::Wait;
  std::size_t index = 0;

  static AgentAction wait() { return {}; }
  static AgentAction suggest(std::size_t i) { return {Kind::Suggest, i}; }
  bool is_wait() const { return kind == Kind::Wait; }
  bool operator==(const AgentAction&) const = default;
};
std::ostream& operator<<(std::ostream& os, const AgentAction& a);

struct EnvState {
  std::string typed;
  std::string current_prefix;
  std::vector<Candidate> candidates;
};

struct UserReaction {
  bool accept = false;
  char next_char = '\0';  // meaningful when !accept
};

struct StepOutcome {
  double reward = 0.0;
  bool accepted = false;
  std::string inserted;
  bool done = false;
};

struct StepRecord {
  std::size_t t = 0;
  std::size_t typed_len = 0;
  AgentAction action;
  std::optional<Candidate> shown;
  StepOutcome outcome;
};

struct EpisodeLog {
  SentenceRecord target;
  std::vector<StepRecord> steps;
  double return_undiscounted = 0.0;
  std::size_t chars_saved = 0;
  std::size_t horizon = 0;
  std::size_t suggestions = 0;
  std::size_t accepted = 0;
};

/// Text acceptance would insert: the candidate words minus the typed prefix.
/// Throws ContractViolation when the first word does not start with the prefix.
std::string insertion_for(const Candidate& candidate, std::string_view current_prefix);

/// Whether the idealized user accepts `insertion` after `typed` when writing `target`.
bool accepts(std::string_view target, std::string_view typed, std::string_view insertion, BoundaryMode mode);

/// Deterministic idealized user: accepts a matching suggestion, otherwise
/// types the next target character.
UserReaction user_react(const SentenceRecord& target, std::string_view typed, const Candidate* suggestion,
                        BoundaryMode mode = BoundaryMode::Word);

double reward(const AgentAction& action, bool accepted, std::size_t insertion_len, const RewardParams& params);

/// Anything that maps a state to an action. The target is passed for agents
/// with privileged access (the oracle); others ignore it.
class Policy {
 public:
  virtual ~Policy() = default;
  virtual AgentAction act(const EnvState& state, const SentenceRecord& target) = 0;
  virtual std::string name() const = 0;
};

/// The autocomplete MDP over a fixed language model. Stateless; safe to share
/// read-only across threads.
class Environment {
 public:
  Environment(const lm::LanguageModel& model, EnvConfig config);

  const EnvConfig& config() const { return config_; }
  const lm::LanguageModel& model() const { return *model_; }

  EnvState make_state(std::string typed) const;
  EnvState initial_state() const { return make_state({}); }
  /// Throws ContractViolation on an invalid suggestion index or inconsistent state.
  std::pair<EnvState, StepOutcome> step(const EnvState& state, const AgentAction& action,
                                        const SentenceRecord& target) const;

 private:
  const lm::LanguageModel* model_;
  EnvConfig config_;
};

EpisodeLog run_episode(Policy& policy, const SentenceRecord& target, const Environment& env);

/// One JSON object per step: {t, typed_len, action, candidate_word, raw_prob, accepted, reward}.
void write_episode_jsonl(std::ostream& os, const EpisodeLog& log);

}  // namespace inlineac::mdp
