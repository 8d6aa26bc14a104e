#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "inlineac/mdp.hpp"
#include "inlineac/theory.hpp"

namespace inlineac::agents {

using mdp::AgentAction;
using mdp::EnvState;
using mdp::SentenceRecord;

// ---------------------------------------------------------------------------
// Baselines

/// Suggest(0) iff a candidate exists and its raw probability is at least tau.
AgentAction threshold_act(const EnvState& state, double tau);
/// Lowest-index candidate the idealized user would accept, else wait.
AgentAction oracle_act(const EnvState& state, const SentenceRecord& target,
                       mdp::BoundaryMode mode = mdp::BoundaryMode::Word);
/// Uniform over wait and every available candidate.
AgentAction random_act(const EnvState& state, std::mt19937_64& rng);

class ThresholdPolicy : public mdp::Policy {
 public:
  explicit ThresholdPolicy(double tau);
  AgentAction act(const EnvState& state, const SentenceRecord&) override { return threshold_act(state, tau_); }
  std::string name() const override;
  double tau() const { return tau_; }

 private:
  double tau_;
};

class OraclePolicy : public mdp::Policy {
 public:
  explicit OraclePolicy(mdp::BoundaryMode mode = mdp::BoundaryMode::Word) : mode_(mode) {}
  AgentAction act(const EnvState& state, const SentenceRecord& target) override {
    return oracle_act(state, target, mode_);
  }
  std::string name() const override { return "oracle"; }

 private:
  mdp::BoundaryMode mode_;
};

class RandomPolicy : public mdp::Policy {
 public:
  explicit RandomPolicy(std::uint64_t seed) : rng_(seed) {}
  AgentAction act(const EnvState& state, const SentenceRecord&) override { return random_act(state, rng_); }
  std::string name() const override { return "random"; }

 private:
  std::mt19937_64 rng_;
};

class WaitPolicy : public mdp::Policy {
 public:
  AgentAction act(const EnvState&, const SentenceRecord&) override { return AgentAction::wait(); }
  std::string name() const override { return "wait"; }
};

/// Follows an exact DP policy table keyed by typed text; waits off-table.
class DpPolicy : public mdp::Policy {
 public:
  explicit DpPolicy(std::shared_ptr<const theory::PolicyTable> table) : table_(std::move(table)) {}
  AgentAction act(const EnvState& state, const SentenceRecord&) override;
  std::string name() const override { return "dp"; }

 private:
  std::shared_ptr<const theory::PolicyTable> table_;
};

// ---------------------------------------------------------------------------
// Discrete features and action-value tables

struct FeatureConfig {
  int prob_bins = 20;
  int max_len_bin = 5;     // insertion lengths 1, 2, ..., max_len_bin+
  int max_prefix_bin = 3;  // prefix lengths 0, 1, ..., max_prefix_bin+
  /// Key states by the exact typed text as well (plain tabular learning).
  bool exact_context = false;

  nlohmann::json to_json() const;
  static FeatureConfig from_json(const nlohmann::json& j);
  bool operator==(const FeatureConfig&) const = default;
};

/// Features of one action slot. Slot 0 is wait (described by the top
/// candidate); slot i + 1 suggests candidate i (described by that candidate).
struct QKey {
  std::uint16_t slot = 0;
  std::int16_t prob_bin = -1;  // -1: no candidate
  std::uint16_t len_bin = 0;
  std::uint16_t prefix_bin = 0;
  std::uint64_t context = 0;

  auto operator<=>(const QKey&) const = default;
};

/// Keys for every available action at `state`, index = slot.
std::vector<QKey> action_keys(const EnvState& state, const FeatureConfig& features);

class QTable {
 public:
  struct Cell {
    double value = 0.0;
    std::uint64_t visits = 0;
  };

  QTable() = default;
  explicit QTable(FeatureConfig features) : features_(features) {}

  const FeatureConfig& features() const { return features_; }
  /// Unseen keys are worth 0, the value of waiting.
  double value(const QKey& key) const;
  Cell& cell(const QKey& key) { return cells_[key]; }
  const std::map<QKey, Cell>& cells() const { return cells_; }
  std::size_t size() const { return cells_.size(); }

  nlohmann::json to_json() const;
  static QTable from_json(const nlohmann::json& j);
  void save(const std::filesystem::path& path) const;
  static QTable load(const std::filesystem::path& path);

 private:
  FeatureConfig features_;
  std::map<QKey, Cell> cells_;
};

/// Argmax over available actions; ties go to wait, then to the lower slot.
AgentAction greedy_act(const QTable& table, const EnvState& state);

class GreedyQPolicy : public mdp::Policy {
 public:
  GreedyQPolicy(std::shared_ptr<const QTable> table, std::string label = "q")
      : table_(std::move(table)), label_(std::move(label)) {}
  AgentAction act(const EnvState& state, const SentenceRecord&) override { return greedy_act(*table_, state); }
  std::string name() const override { return label_; }

 private:
  std::shared_ptr<const QTable> table_;
  std::string label_;
};

// ---------------------------------------------------------------------------
// Training

struct TrainConfig {
  double gamma = 0.99;
  std::size_t steps = 250'000;
  double learning_rate = 0.1;
  double eps_start = 1.0;
  double eps_end = 0.05;
  double eps_decay_fraction = 0.5;  // linear decay over this share of steps
  std::uint64_t seed = 0;
  std::size_t log_every = 1'000;
  std::size_t fitted_max_iters = 10'000;
  double fitted_tol = 1e-6;
  FeatureConfig features;

  void validate() const;
  double epsilon_at(std::size_t step) const;
};

struct CurvePoint {
  std::size_t step = 0;
  double epsilon = 0.0;
  double mean_return = 0.0;  // behaviour episodes finished in the window
  std::size_t episodes = 0;
};

struct TrainResult {
  QTable table;
  std::vector<CurvePoint> curve;
};

/// One-step Q-learning with epsilon-greedy behaviour; targets sampled
/// uniformly. Throws TrainingError on a non-finite update.
TrainResult q_learning_train(const mdp::Environment& env, std::span<const SentenceRecord> targets,
                             const TrainConfig& config);

struct Transition {
  QKey key;
  double reward = 0.0;
  std::vector<QKey> next_keys;
  bool done = false;
  bool explored = false;
  std::uint32_t episode = 0;
  std::uint32_t t = 0;

  bool operator==(const Transition&) const = default;
};

struct OfflineDataset {
  std::vector<Transition> transitions;
  std::size_t trajectories = 0;
  std::string collection_policy;
  double exploration_rate = 0.0;
  std::uint64_t seed = 0;
  FeatureConfig features;

  double explored_fraction() const;
  void save_jsonl(const std::filesystem::path& path) const;
  static OfflineDataset load_jsonl(const std::filesystem::path& path);
};

/// Runs `base` for `trajectories` episodes, replacing each action with a
/// uniformly random one with probability `exploration_rate`.
OfflineDataset collect_offline(mdp::Policy& base, double exploration_rate, std::size_t trajectories,
                               const mdp::Environment& env, std::span<const SentenceRecord> targets,
                               std::uint64_t seed, const FeatureConfig& features = {});

/// Bellman backups over the dataset's discrete keys until the largest change
/// drops below config.fitted_tol. Throws ConfigError on an empty dataset.
QTable fitted_q_train(const OfflineDataset& dataset, const TrainConfig& config);

// ---------------------------------------------------------------------------
// Policy specs: "oracle", "random[:seed]", "threshold:<tau>", "wait", "q:<table.json>", "dp"

struct PolicySpec {
  enum class Kind { Oracle, Random, Threshold, Wait, QTable, Dp };
  Kind kind = Kind::Wait;
  double tau = 0.0;
  std::uint64_t seed = 0;
  std::string table_path;

  static PolicySpec parse(std::string_view text);
  std::string label() const;
};

}  // namespace inlineac::agents
