#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "inlineac/mdp.hpp"

namespace inlineac::theory {

// ---------------------------------------------------------------------------
// Two-word system: the user writes one of two length-n words sharing their
// first m letters, each with probability 1/2. With k = 1, the candidate is a
// fixed one of the two words while t <= m letters are typed and the target
// afterwards.

struct TwoWordInstance {
  int n = 0;
  int m = 0;
  double alpha = 0.0;
  double beta = 0.0;

  void validate() const;
};

struct QPair {
  double show = 0.0;
  double wait = 0.0;
};

/// Closed-form values at position m for gamma = 0.
QPair q_myopic_at_m(const TwoWordInstance& inst);

/// Closed form at position m for gamma = 1. Only exact when
/// (n - m - 1)(1 - alpha) >= beta; `valid` reports that.
struct FarsightedClosedForm {
  QPair q;
  bool valid = false;
};
FarsightedClosedForm q_farsighted_at_m(const TwoWordInstance& inst);
bool in_validity_regime(const TwoWordInstance& inst);

/// Open alpha interval in which gamma = 1 waits and gamma = 0 shows at m.
struct ConstraintInterval {
  double alpha_lo = 0.0;
  double alpha_hi = 0.0;

  bool empty() const { return !(alpha_lo < alpha_hi); }
  bool contains(double alpha) const { return alpha_lo < alpha && alpha < alpha_hi; }
};
ConstraintInterval disagreement_interval(int n, int m, double beta);

/// Backward-induction Q table; index t = letters typed, 0..n. Q at t = n is 0.
struct TwoWordTable {
  int n = 0;
  int m = 0;
  double gamma = 1.0;
  std::vector<QPair> u;
  std::vector<QPair> v;

  /// Tie goes to wait.
  bool shows_at(int t) const { return u.at(static_cast<std::size_t>(t)).show > u.at(static_cast<std::size_t>(t)).wait; }
};
TwoWordTable brute_force_two_word(const TwoWordInstance& inst, double gamma);

// ---------------------------------------------------------------------------
// Prefix-state MDP over a finite target set. A state is the text typed so far;
// the belief over targets is the prior restricted to targets that strictly
// extend it.

struct TrieTarget {
  std::string text;
  double prior = 0.0;
};

/// Insertions offered at a state (one per suggest action, in slot order).
using CandidateRule = std::function<std::vector<std::string>(std::string_view typed)>;

struct TrieMdp {
  std::vector<TrieTarget> targets;
  CandidateRule candidates;
  mdp::RewardParams reward;
  mdp::BoundaryMode boundary = mdp::BoundaryMode::Word;
  double gamma = 1.0;

  /// Word targets weighted by `weights` (normalized here); the single
  /// candidate is the most probable strict extension, ties by word.
  static TrieMdp top_prior_words(std::span<const std::pair<std::string, double>> weights,
                                 const mdp::RewardParams& reward, double gamma);
  /// Sentence targets with a uniform prior; candidates come from the
  /// environment's language model.
  static TrieMdp from_environment(const mdp::Environment& env, std::span<const corpus::SentenceRecord> targets,
                                  double gamma);
};

struct StateValue {
  std::vector<double> q;  // q[0] = wait, q[i + 1] = suggest slot i
  double value = 0.0;
  std::size_t best = 0;   // index into q
};

struct PolicyTable {
  std::unordered_map<std::string, StateValue> states;
  double root_value = 0.0;

  /// Action chosen at a state; throws ContractViolation for unknown states.
  mdp::AgentAction action_at(std::string_view typed) const;
};

/// Exact values by backward induction. Ties go to wait.
/// Throws ConfigError on an empty target set.
PolicyTable solve_dp(const TrieMdp& mdp);

/// Expected return at the root of `mdp` when following `policy`'s actions.
double evaluate_policy(const TrieMdp& mdp, const PolicyTable& policy);

struct RolloutStats {
  double mean = 0.0;
  double std_error = 0.0;
  std::size_t n = 0;
};
/// Undiscounted Monte-Carlo return of `policy`; every step draws the target
/// from the posterior at the current state, as the solver assumes.
RolloutStats monte_carlo_return(const TrieMdp& mdp, const PolicyTable& policy, std::size_t rollouts,
                                std::uint64_t seed);

/// Undiscounted expected return when the target is drawn once from the prior
/// and kept for the whole episode (a rejected suggestion then tells the user
/// model nothing new, but the target no longer changes).
double fixed_target_return(const TrieMdp& mdp, const PolicyTable& policy);

struct DisagreementReport {
  std::size_t total_states = 0;
  std::size_t disagreements = 0;
  double fraction = 0.0;
};
DisagreementReport count_disagreements(const PolicyTable& farsighted, const PolicyTable& myopic);

struct SweepPoint {
  double alpha = 0.0;
  DisagreementReport report;
};
/// Solves gamma = 1 and gamma = 0 for every alpha (beta fixed for both
/// correctness classes).
std::vector<SweepPoint> alpha_sweep(const TrieMdp& base, std::span<const double> alphas, double beta);

/// {0.05, 0.10, ..., 0.95}
std::vector<double> default_alpha_grid();

/// The `count` most frequent vocabulary words with their counts.
std::vector<std::pair<std::string, double>> top_words(const lm::LanguageModel& model, std::size_t count);

}  // namespace inlineac::theory
