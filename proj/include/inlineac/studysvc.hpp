#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "inlineac/errors.hpp"
#include "inlineac/mdp.hpp"

namespace inlineac::studysvc {

class UnknownSession : public SessionError {
 public:
  using SessionError::SessionError;
};

enum class Condition { WithSuggestions, WithoutSuggestions };
std::string_view to_string(Condition c);
Condition condition_from_string(std::string_view s);

enum class SessionStatus { Active, Complete };

struct PromptInstance {
  std::size_t prompt = 0;  // index into Session::prompts
  Condition condition = Condition::WithSuggestions;
};

struct Session {
  std::string id;
  std::string participant;
  std::vector<std::string> prompts;
  std::vector<Condition> block_order;      // two blocks, counterbalanced by seed
  std::vector<PromptInstance> instances;   // block_order[0] prompts, then block_order[1]
  std::string policy;
  std::uint64_t seed = 0;
  SessionStatus status = SessionStatus::Active;
  std::size_t cursor = 0;                  // current instance
  std::string typed;                       // buffer of the current instance

  nlohmann::json to_json() const;
};

/// What the client saw when the key was pressed. `completion` holds the full
/// suggested word(s), e.g. "call" or "call me"; `insertion` the part after the caret.
struct ShownSuggestion {
  std::string completion;
  std::string insertion;
};

/// The candidate's words joined by single spaces.
std::string suggested_words(const mdp::Candidate& c);

enum class KeyKind { Char, Accept, Backspace, Dismiss };

struct KeyEvent {
  std::string session_id;
  std::uint64_t seq = 0;
  double timestamp_ms = 0.0;  // client monotonic clock
  KeyKind kind = KeyKind::Char;
  char ch = '\0';             // for Char
  std::optional<ShownSuggestion> suggestion_shown;
  // Filled in by the service.
  std::size_t instance = 0;
  Condition condition = Condition::WithSuggestions;
  std::string context;        // typed text before the key
  bool suggestion_correct = false;
  bool accepted = false;
  bool excluded = false;      // backspace, or follows a backspace in the same word
  std::optional<double> interval_ms;

  std::string key_label() const;
  nlohmann::json to_json() const;
  static KeyEvent from_json(const nlohmann::json& j);
};

struct SessionLog {
  Session session;
  std::vector<KeyEvent> events;
};

struct PairedSample {
  std::uint64_t context_hash = 0;
  std::string key;
  double dt_with_ms = 0.0;
  double dt_without_ms = 0.0;
  double load_ms = 0.0;
  std::size_t suggestion_length = 0;
  bool suggestion_correct = false;
};

struct PairingResult {
  std::vector<PairedSample> samples;
  std::size_t unmatched_with = 0;
  std::size_t unmatched_without = 0;
  std::size_t excluded = 0;
};

/// Pairs (context, key) occurrences across conditions within each session.
/// Repeats within a condition are averaged before differencing.
PairingResult paired_samples(std::span<const SessionLog> logs);

struct LoadEstimate {
  double char_write_ms = 521.0;
  // load ~ slope*len + b_correct*[correct] + b_incorrect*[incorrect]
  double slope_ms = 0.0, slope_ci_ms = 0.0;
  double intercept_correct_ms = 0.0, intercept_correct_ci_ms = 0.0;
  double intercept_incorrect_ms = 0.0, intercept_incorrect_ci_ms = 0.0;
  // load ~ slope*len + b (pooled)
  double pooled_slope_ms = 0.0, pooled_intercept_ms = 0.0, pooled_intercept_ci_ms = 0.0;
  double alpha_hat = 0.0, alpha_ci = 0.0;
  double beta_hat = 0.0, beta_ci = 0.0;
  double beta_hat_correct = 0.0, beta_correct_ci = 0.0;
  double beta_hat_incorrect = 0.0, beta_incorrect_ci = 0.0;
  double mean_load_ms = 0.0, mean_load_ci_ms = 0.0;
  double mean_load_correct_ms = 0.0, mean_load_incorrect_ms = 0.0;
  std::size_t n = 0, n_correct = 0, n_incorrect = 0;

  nlohmann::json to_json() const;
};

/// Throws EstimationError with fewer than two distinct lengths or too few samples.
LoadEstimate estimate_load(std::span<const PairedSample> samples, double char_write_ms = 521.0);

struct FatigueBinning {
  std::size_t width = 10;
};

struct FatigueBucket {
  std::size_t bin_lo = 0;  // inclusive
  std::size_t bin_hi = 0;  // exclusive
  double rate = 0.0;
  double ci95 = 0.0;
  std::size_t n = 0;
};

struct FatigueCurves {
  std::vector<FatigueBucket> by_past_suggestions;
  std::vector<FatigueBucket> by_past_incorrect;
};

/// Acceptance rate of correct shown suggestions against how many suggestions
/// (all, or incorrect only) the participant had seen before.
FatigueCurves fatigue_curve(std::span<const SessionLog> logs, const FatigueBinning& binning = {});

struct ServedSuggestion {
  std::optional<mdp::Candidate> candidate;
  std::string insertion;
};

struct EventAck {
  std::vector<std::uint64_t> applied;
  std::vector<std::uint64_t> duplicates;
  std::size_t instance = 0;
  std::string typed;
  SessionStatus status = SessionStatus::Active;
};

struct ServiceConfig {
  mdp::EnvConfig env;
  std::string default_policy = "threshold:0";
  /// Append-only JSONL logs, one file per session. Empty disables persistence.
  std::filesystem::path log_dir;
};

/// Thread-safe. Sessions are serialized individually; analyses copy logs first.
class StudyService {
 public:
  StudyService(const lm::LanguageModel& model, ServiceConfig config);
  ~StudyService();
  StudyService(const StudyService&) = delete;
  StudyService& operator=(const StudyService&) = delete;

  /// Throws ConfigError on an empty prompt list or a prompt that fails the corpus filters.
  Session create_session(std::string participant, std::vector<std::string> prompts, std::string policy,
                         std::uint64_t seed);
  Session session(std::string_view id) const;
  std::vector<std::string> session_ids() const;

  ServedSuggestion suggest(std::string_view id, std::string_view context);
  /// Applies events in seq order. Re-sent events with an already applied seq are
  /// acknowledged as duplicates; anything else out of order throws OrderingError.
  EventAck record_events(std::string_view id, std::span<const KeyEvent> events);
  EventAck record_event(std::string_view id, const KeyEvent& event) { return record_events(id, {&event, 1}); }

  SessionLog snapshot(std::string_view id) const;
  std::vector<SessionLog> snapshot_all() const;

  /// Reloads every session log in `config.log_dir`.
  void load_logs();

 private:
  struct Live;
  Live& live(std::string_view id) const;
  void apply(Live& s, const KeyEvent& event, bool persist);
  void append(const Live& s, const nlohmann::json& line) const;

  const lm::LanguageModel* model_;
  ServiceConfig config_;
  mdp::Environment env_;
  mutable std::mutex mu_;
  std::map<std::string, std::unique_ptr<Live>, std::less<>> sessions_;
  std::size_t next_id_ = 1;
};

/// Reads a session log file written by StudyService.
SessionLog read_session_log(const std::filesystem::path& path);
std::vector<SessionLog> read_session_logs(const std::filesystem::path& dir);

/// Replays events from scratch; returns the final typed text of each instance.
std::vector<std::string> reconstruct_texts(const SessionLog& log);

std::uint64_t context_hash(std::string_view context);

}  // namespace inlineac::studysvc
