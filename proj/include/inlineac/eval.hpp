#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "inlineac/agents.hpp"
#include "inlineac/mdp.hpp"

namespace inlineac::eval {

using mdp::SentenceRecord;

struct EvalConfig {
  std::size_t runs = 5;
  std::vector<SentenceRecord> sentences;
  mdp::EnvConfig env;
  std::uint64_t seed_base = 0;
  /// Sentences sampled (without replacement) per run; 0 uses all of them.
  std::size_t sentences_per_run = 0;

  void validate() const;
  std::uint64_t run_seed(std::size_t run) const { return seed_base + 7919 * (run + 1); }
};

/// Builds a fresh policy for one run; trained agents train inside the factory.
using PolicyFactory = std::function<std::unique_ptr<mdp::Policy>(std::uint64_t run_seed)>;

struct NamedPolicy {
  std::string name;
  PolicyFactory make;
};

struct MetricsRow {
  std::string policy;
  double mean_return = 0.0;
  double ci95_return = 0.0;
  double mean_chars_saved = 0.0;
  double ci95_chars_saved = 0.0;
  double suggestions_made = 0.0;  // per episode
  double acceptance_rate = 0.0;
  std::vector<double> run_returns;  // per-run mean episode return
  std::vector<double> run_chars_saved;
};

/// Episode logs kept for auditing: [policy][run][episode].
struct EvalAudit {
  std::vector<std::vector<std::vector<mdp::EpisodeLog>>> logs;
};

/// 1.96 * sample standard deviation / sqrt(n).
double ci95(std::span<const double> xs);
double mean(std::span<const double> xs);

/// Throws ConfigError on an empty sentence set or fewer than two runs.
std::vector<MetricsRow> evaluate(const lm::LanguageModel& model, std::span<const NamedPolicy> policies,
                                 const EvalConfig& config, EvalAudit* audit = nullptr);

NamedPolicy make_named_policy(const agents::PolicySpec& spec, mdp::BoundaryMode mode);

struct ThresholdSweep {
  std::vector<double> taus;
  std::vector<MetricsRow> rows;
  double best_tau = 0.0;
};
/// Best tau by mean return; ties go to the smaller tau.
ThresholdSweep threshold_sweep(const lm::LanguageModel& model, std::span<const double> taus, const EvalConfig& config);

struct GammaEntry {
  double alpha = 0.0;
  double gamma = 0.0;
  MetricsRow row;
};

struct GammaDifference {
  double alpha = 0.0;
  double high_gamma = 0.0;
  double low_gamma = 0.0;
  double difference = 0.0;  // mean(high) - mean(low)
  double ci95 = 0.0;
};

struct GammaComparison {
  std::vector<GammaEntry> entries;
  std::vector<GammaDifference> differences;
};

enum class AgentKind { Online, Offline };

/// For every alpha and gamma: train per run (seeded by the run), evaluate
/// undiscounted. Offline agents collect from threshold:`offline_tau`.
GammaComparison gamma_comparison(const lm::LanguageModel& model, AgentKind kind, std::span<const double> gammas,
                                 std::span<const double> alphas, std::span<const SentenceRecord> train_sentences,
                                 const EvalConfig& config, const agents::TrainConfig& train,
                                 double offline_tau = 0.3, std::size_t offline_trajectories = 5000);

struct CrowdingReport {
  std::size_t states_examined = 0;
  std::size_t crowded_states = 0;
  std::size_t oracle_saved_single = 0;
  std::size_t oracle_saved_mixed = 0;
  double oracle_return_single = 0.0;
  double oracle_return_mixed = 0.0;
};

/// Replays the oracle with single-word and with mixed top-k slates (the
/// mixed slate follows `lm_config.multiword`), counting states where a
/// correct single word was pushed out of the mixed slate.
CrowdingReport crowding_report(const lm::LanguageModel& model, std::span<const SentenceRecord> sentences,
                               const lm::LmConfig& lm_config, const mdp::EnvConfig& base_env);

void write_metrics_csv(std::ostream& os, std::span<const MetricsRow> rows);
nlohmann::json metrics_json(std::span<const MetricsRow> rows);

/// Git blob id (SHA-1 of "blob <size>\0" + bytes), hex.
std::string git_blob_sha1(std::string_view bytes);

}  // namespace inlineac::eval
