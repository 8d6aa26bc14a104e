#include "inlineac/mdp.hpp"

#include <fstream>

#include "inlineac/errors.hpp"

namespace inlineac::mdp {

RewardParams RewardParams::from_timings(const TimingConstants& t) {
  if (!(t.char_write_ms > 0 && t.char_read_ms > 0 && t.saccade_ms > 0))
    throw ConfigError("timing constants must be positive");
  const double beta = 2.0 * t.saccade_ms / t.char_write_ms;
  return {t.char_read_ms / t.char_write_ms, beta, beta};
}

RewardParams RewardParams::study() { return {0.0, 10.0 / 521.0, 50.0 / 521.0}; }

RewardParams RewardParams::preset(std::string_view name) {
  if (name == "default") return defaults();
  if (name == "study") return study();
  throw ConfigError("unknown reward preset: " + std::string(name));
}

void RewardParams::validate() const {
  auto unit = [](double x) { return x >= 0.0 && x <= 1.0; };
  if (!unit(alpha) || !unit(beta_correct) || !unit(beta_incorrect))
    throw ConfigError("reward parameters must lie in [0, 1]");
}

EnvConfig EnvConfig::from_json(const nlohmann::json& j) {
  EnvConfig cfg;
  cfg.reward = RewardParams::preset(j.value("preset", std::string("default")));
  if (j.contains("alpha")) cfg.reward.alpha = j.at("alpha").get<double>();
  if (j.contains("beta")) cfg.reward.beta_correct = cfg.reward.beta_incorrect = j.at("beta").get<double>();
  if (j.contains("beta_correct")) cfg.reward.beta_correct = j.at("beta_correct").get<double>();
  if (j.contains("beta_incorrect")) cfg.reward.beta_incorrect = j.at("beta_incorrect").get<double>();
  const auto boundary = j.value("boundary", std::string("word"));
  if (boundary == "word") {
    cfg.boundary = BoundaryMode::Word;
  } else if (boundary == "literal") {
    cfg.boundary = BoundaryMode::Literal;
  } else {
    throw ConfigError("boundary must be 'word' or 'literal'");
  }
  cfg.lm.k = j.value("k", cfg.lm.k);
  cfg.lm.lambda = j.value("lambda", cfg.lm.lambda);
  cfg.lm.multiword = j.value("multiword", cfg.lm.multiword);
  cfg.lm.beam_width = j.value("beam_width", std::max(cfg.lm.beam_width, cfg.lm.k));
  cfg.reward.validate();
  cfg.lm.validate();
  return cfg;
}

EnvConfig EnvConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  return from_json(nlohmann::json::parse(in));
}

nlohmann::json EnvConfig::to_json() const {
  return {{"alpha", reward.alpha},
          {"beta_correct", reward.beta_correct},
          {"beta_incorrect", reward.beta_incorrect},
          {"boundary", boundary == BoundaryMode::Word ? "word" : "literal"},
          {"k", lm.k},
          {"lambda", lm.lambda},
          {"multiword", lm.multiword},
          {"beam_width", lm.beam_width}};
}

std::ostream& operator<<(std::ostream& os, const AgentAction& a) {
  if (a.is_wait()) return os << "wait";
  return os << "suggest:" << a.index;
}

std::string insertion_for(const Candidate& candidate, std::string_view current_prefix) {
  if (candidate.full_words.empty()) throw ContractViolation("candidate has no words");
  const std::string& first = candidate.full_words.front();
  if (!first.starts_with(current_prefix))
    throw ContractViolation("candidate '" + first + "' does not extend prefix '" + std::string(current_prefix) + "'");
  std::string out = first.substr(current_prefix.size());
  for (std::size_t i = 1; i < candidate.full_words.size(); ++i) {
    out += ' ';
    out += candidate.full_words[i];
  }
  return out;
}

bool accepts(std::string_view target, std::string_view typed, std::string_view insertion, BoundaryMode mode) {
  if (insertion.empty() || !target.starts_with(typed)) return false;
  const auto rest = target.substr(typed.size());
  if (!rest.starts_with(insertion)) return false;
  if (mode == BoundaryMode::Literal) return true;
  const std::size_t after = typed.size() + insertion.size();
  return after == target.size() || !corpus::is_word_char(target[after]);
}

UserReaction user_react(const SentenceRecord& target, std::string_view typed, const Candidate* suggestion,
                        BoundaryMode mode) {
  const std::string_view text = target.text;
  if (!text.starts_with(typed) || typed.size() >= text.size())
    throw ContractViolation("typed text '" + std::string(typed) + "' is not a proper prefix of the target");
  if (suggestion != nullptr) {
    const auto prefix = lm::split_context(typed).prefix;
    if (accepts(text, typed, insertion_for(*suggestion, prefix), mode)) return {true, '\0'};
  }
  return {false, text[typed.size()]};
}

double reward(const AgentAction& action, bool accepted, std::size_t insertion_len, const RewardParams& params) {
  if (action.is_wait()) return 0.0;
  const auto len = static_cast<double>(insertion_len);
  if (accepted) return (1.0 - params.alpha) * len - params.beta_correct;
  return -params.alpha * len - params.beta_incorrect;
}

Environment::Environment(const lm::LanguageModel& model, EnvConfig config) : model_(&model), config_(config) {
  config_.reward.validate();
  config_.lm.validate();
}

EnvState Environment::make_state(std::string typed) const {
  EnvState s;
  s.current_prefix = lm::split_context(typed).prefix;
  s.candidates = model_->candidates(typed, config_.lm);
  s.typed = std::move(typed);
  return s;
}

std::pair<EnvState, StepOutcome> Environment::step(const EnvState& state, const AgentAction& action,
                                                   const SentenceRecord& target) const {
  const Candidate* shown = nullptr;
  if (!action.is_wait()) {
    if (action.index >= state.candidates.size())
      throw ContractViolation("suggestion index " + std::to_string(action.index) + " out of range");
    shown = &state.candidates[action.index];
  }
  const auto reaction = user_react(target, state.typed, shown, config_.boundary);
  StepOutcome out;
  std::string typed = state.typed;
  std::size_t shown_len = 0;
  if (shown != nullptr) shown_len = insertion_for(*shown, state.current_prefix).size();
  if (reaction.accept) {
    out.accepted = true;
    out.inserted = insertion_for(*shown, state.current_prefix);
    typed += out.inserted;
  } else {
    typed.push_back(reaction.next_char);
  }
  out.reward = reward(action, out.accepted, shown_len, config_.reward);
  out.done = typed == target.text;
  EnvState next;
  if (out.done) {
    next.current_prefix = lm::split_context(typed).prefix;
    next.typed = std::move(typed);
  } else {
    next = make_state(std::move(typed));
  }
  return {std::move(next), std::move(out)};
}

EpisodeLog run_episode(Policy& policy, const SentenceRecord& target, const Environment& env) {
  EpisodeLog log;
  log.target = target;
  if (target.text.empty()) return log;
  EnvState state = env.initial_state();
  const std::size_t max_steps = target.text.size() + 1;
  for (std::size_t t = 0;; ++t) {
    if (t >= max_steps) throw ContractViolation("episode exceeded its horizon bound");
    const AgentAction action = policy.act(state, target);
    StepRecord rec;
    rec.t = t;
    rec.typed_len = state.typed.size();
    rec.action = action;
    if (!action.is_wait() && action.index < state.candidates.size()) rec.shown = state.candidates[action.index];
    auto [next, outcome] = env.step(state, action, target);
    log.return_undiscounted += outcome.reward;
    if (!action.is_wait()) ++log.suggestions;
    if (outcome.accepted) {
      ++log.accepted;
      log.chars_saved += outcome.inserted.size();
    }
    rec.outcome = std::move(outcome);
    const bool done = rec.outcome.done;
    log.steps.push_back(std::move(rec));
    state = std::move(next);
    if (done) break;
  }
  log.horizon = log.steps.size();
  return log;
}

void write_episode_jsonl(std::ostream& os, const EpisodeLog& log) {
  for (const auto& s : log.steps) {
    nlohmann::json j;
    j["t"] = s.t;
    j["typed_len"] = s.typed_len;
    j["action"] = s.action.is_wait() ? std::string("wait") : "suggest:" + std::to_string(s.action.index);
    if (s.shown) {
      std::string words;
      for (const auto& w : s.shown->full_words) words += (words.empty() ? "" : " ") + w;
      j["candidate_word"] = words;
      j["raw_prob"] = s.shown->raw_prob;
    } else {
      j["candidate_word"] = nullptr;
      j["raw_prob"] = nullptr;
    }
    j["accepted"] = s.outcome.accepted;
    j["reward"] = s.outcome.reward;
    os << j.dump() << '\n';
  }
}

}  // namespace inlineac::mdp
