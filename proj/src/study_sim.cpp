#include "inlineac/study_sim.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace inlineac::studysvc {

namespace {

double key_base(const SimConfig& cfg, const std::string& context, char key) {
  std::string k = context;
  k.push_back('\x1f');
  k.push_back(key);
  const auto h = context_hash(k);
  return cfg.base_ms + cfg.key_spread_ms * static_cast<double>(h % 1000) / 1000.0;
}

}  // namespace

std::string simulate_session(StudyService& service, const std::string& participant,
                             std::vector<std::string> prompts, const SimConfig& cfg) {
  const auto session = service.create_session(participant, std::move(prompts), cfg.policy, cfg.seed);
  std::mt19937_64 rng(cfg.seed ^ 0xA5A5A5A5ULL);
  std::normal_distribution<double> noise(0.0, cfg.noise_sd_ms > 0 ? cfg.noise_sd_ms : 1.0);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  auto jitter = [&] { return cfg.noise_sd_ms > 0 ? noise(rng) : 0.0; };

  double clock = 1000.0;
  std::uint64_t seq = 0;
  std::size_t past_suggestions = 0;

  auto send = [&](KeyEvent e, double dt) {
    clock += std::max(dt, 1.0);
    e.seq = ++seq;
    e.timestamp_ms = clock;
    return service.record_event(session.id, e);
  };

  for (const auto& inst : session.instances) {
    const std::string& prompt = session.prompts[inst.prompt];
    std::string typed;
    clock += 2000.0;  // pause between prompts
    while (typed != prompt) {
      std::optional<ShownSuggestion> shown;
      bool correct = false;
      if (inst.condition == Condition::WithSuggestions) {
        const auto s = service.suggest(session.id, typed);
        if (s.candidate) {
          shown = ShownSuggestion{suggested_words(*s.candidate), s.insertion};
          correct = mdp::accepts(prompt, typed, s.insertion, mdp::BoundaryMode::Word);
        }
      }
      const double load = shown ? cfg.planted_load_ms(shown->insertion.size(), correct) : 0.0;
      const char next = prompt[typed.size()];

      if (shown && correct) {
        const double p = cfg.accept_prob * std::exp(-cfg.accept_decay * static_cast<double>(past_suggestions));
        ++past_suggestions;
        if (u01(rng) < p) {
          KeyEvent e;
          e.kind = KeyKind::Accept;
          e.suggestion_shown = shown;
          send(e, key_base(cfg, typed, '\t') + load + jitter());
          typed += shown->insertion;
          continue;
        }
      } else if (shown) {
        ++past_suggestions;
      }

      if (cfg.typo_prob > 0 && u01(rng) < cfg.typo_prob) {
        KeyEvent wrong;
        wrong.kind = KeyKind::Char;
        wrong.ch = next == 'x' ? 'q' : 'x';
        wrong.suggestion_shown = shown;
        send(wrong, key_base(cfg, typed, wrong.ch) + load + jitter());
        KeyEvent bs;
        bs.kind = KeyKind::Backspace;
        send(bs, key_base(cfg, typed + wrong.ch, '\b') + jitter());
        // Suggestion is re-served for the restored context below.
        continue;
      }

      KeyEvent e;
      e.kind = KeyKind::Char;
      e.ch = next;
      e.suggestion_shown = shown;
      send(e, key_base(cfg, typed, next) + load + jitter());
      typed.push_back(next);
    }
  }
  return session.id;
}

SimulationResult simulate_until(StudyService& service, std::span<const std::string> pool, const SimConfig& config,
                                std::size_t min_pairs, std::size_t max_sessions) {
  if (pool.empty()) throw ConfigError("prompt pool is empty");
  SimulationResult out;
  std::mt19937_64 rng(config.seed);
  for (std::size_t i = 0; i < max_sessions; ++i) {
    std::vector<std::string> prompts(pool.begin(), pool.end());
    std::shuffle(prompts.begin(), prompts.end(), rng);
    if (prompts.size() > config.prompts_per_session) prompts.resize(config.prompts_per_session);
    SimConfig cfg = config;
    cfg.seed = config.seed * 1000003ULL + i;
    const auto id = simulate_session(service, "sim-" + std::to_string(i), std::move(prompts), cfg);
    out.session_ids.push_back(id);
    out.logs.push_back(service.snapshot(id));
    const auto pairing = paired_samples(std::span<const SessionLog>(&out.logs.back(), 1));
    out.pairing.samples.insert(out.pairing.samples.end(), pairing.samples.begin(), pairing.samples.end());
    out.pairing.unmatched_with += pairing.unmatched_with;
    out.pairing.unmatched_without += pairing.unmatched_without;
    out.pairing.excluded += pairing.excluded;
    if (out.pairing.samples.size() >= min_pairs) return out;
  }
  throw EstimationError("simulation produced only " + std::to_string(out.pairing.samples.size()) +
                        " paired samples after " + std::to_string(max_sessions) + " sessions");
}

}  // namespace inlineac::studysvc
