#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "inlineac/studysvc.hpp"

namespace inlineac::studysvc {

/// Synthetic participant with planted timing. Per-key base time depends only
/// on (context, key), so it cancels in paired differences; the planted load
/// is added to every key typed while a suggestion is visible.
struct SimConfig {
  double char_write_ms = 521.0;
  double alpha = 0.0;           // per suggested character, in char_write units
  double beta_correct = 30.0 / 521.0;
  double beta_incorrect = 30.0 / 521.0;
  double base_ms = 180.0;
  double key_spread_ms = 120.0;
  double noise_sd_ms = 0.0;
  double accept_prob = 0.5;     // for correct suggestions
  double accept_decay = 0.0;    // accept_prob * exp(-decay * past suggestions)
  double typo_prob = 0.0;       // wrong key followed by backspace
  std::string policy = "threshold:0";
  std::size_t prompts_per_session = 42;
  std::uint64_t seed = 1;

  double planted_load_ms(std::size_t len, bool correct) const {
    return char_write_ms * (alpha * static_cast<double>(len) + (correct ? beta_correct : beta_incorrect));
  }
};

/// Runs one complete session against the service; returns its id.
std::string simulate_session(StudyService& service, const std::string& participant,
                             std::vector<std::string> prompts, const SimConfig& config);

struct SimulationResult {
  std::vector<std::string> session_ids;
  std::vector<SessionLog> logs;
  PairingResult pairing;
};

/// Simulates sessions over prompts drawn from `pool` until at least
/// `min_pairs` paired samples exist.
SimulationResult simulate_until(StudyService& service, std::span<const std::string> pool, const SimConfig& config,
                                std::size_t min_pairs, std::size_t max_sessions = 200);

}  // namespace inlineac::studysvc
