#include "inlineac/theory.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <memory>
#include <optional>
#include <random>

#include "inlineac/errors.hpp"

namespace inlineac::theory {

void TwoWordInstance::validate() const {
  if (!(1 <= m && m < n)) throw ConfigError("two-word instance needs 1 <= m < n");
}

bool in_validity_regime(const TwoWordInstance& inst) {
  return (inst.n - inst.m - 1) * (1.0 - inst.alpha) >= inst.beta;
}

QPair q_myopic_at_m(const TwoWordInstance& inst) {
  inst.validate();
  return {(inst.n - inst.m) * (0.5 - inst.alpha) - inst.beta, 0.0};
}

FarsightedClosedForm q_farsighted_at_m(const TwoWordInstance& inst) {
  inst.validate();
  const double d = inst.n - inst.m;
  const double a = inst.alpha;
  const double b = inst.beta;
  FarsightedClosedForm out;
  out.q.wait = (d - 1.0) * (1.0 - a) - b;
  out.q.show = d * (1.0 - 1.5 * a) - 0.5 * (1.0 - a) - 1.5 * b;
  out.valid = in_validity_regime(inst);
  return out;
}

ConstraintInterval disagreement_interval(int n, int m, double beta) {
  if (!(1 <= m && m < n)) throw ConfigError("disagreement interval needs 1 <= m < n");
  const double d = n - m;
  return {(1.0 - beta) / (d + 1.0), (0.5 * d - beta) / d};
}

TwoWordTable brute_force_two_word(const TwoWordInstance& inst, double gamma) {
  inst.validate();
  if (!(gamma >= 0.0 && gamma <= 1.0)) throw ConfigError("gamma must lie in [0, 1]");
  const int n = inst.n;
  const int m = inst.m;
  const double a = inst.alpha;
  const double b = inst.beta;
  TwoWordTable table;
  table.n = n;
  table.m = m;
  table.gamma = gamma;
  table.u.assign(static_cast<std::size_t>(n) + 1, QPair{});
  table.v.assign(static_cast<std::size_t>(n) + 1, QPair{});
  auto value = [](const QPair& q) { return std::max(q.show, q.wait); };
  std::vector<double> vu(static_cast<std::size_t>(n) + 1, 0.0);
  std::vector<double> vv(static_cast<std::size_t>(n) + 1, 0.0);
  for (int t = n - 1; t >= 0; --t) {
    const auto i = static_cast<std::size_t>(t);
    const double left = n - t;
    const double accepted = left * (1.0 - a) - b;
    if (t > m) {
      // The candidate is the target: showing is accepted and ends the episode.
      table.u[i] = {accepted, gamma * vu[i + 1]};
      table.v[i] = {accepted, gamma * vv[i + 1]};
    } else {
      // One fixed word of the pair is shown; it is the target half the time.
      // On a miss the user types the next letter of the other word.
      const double show_u = 0.5 * accepted + 0.5 * (-left * a - b + gamma * vv[i + 1]);
      const double show_v = 0.5 * accepted + 0.5 * (-left * a - b + gamma * vu[i + 1]);
      const double wait = gamma * (0.5 * vu[i + 1] + 0.5 * vv[i + 1]);
      table.u[i] = {show_u, wait};
      table.v[i] = {show_v, wait};
    }
    vu[i] = value(table.u[i]);
    vv[i] = value(table.v[i]);
  }
  return table;
}

// ---------------------------------------------------------------------------

namespace {

using WeightedTargets = std::vector<std::pair<std::string, double>>;

WeightedTargets merge_targets(const std::vector<TrieTarget>& targets) {
  std::map<std::string, double> merged;
  for (const auto& t : targets) {
    if (t.text.empty()) continue;
    if (!(t.prior >= 0.0)) throw ConfigError("target priors must be non-negative");
    merged[t.text] += t.prior;
  }
  WeightedTargets out;
  for (auto& [text, w] : merged) {
    if (w > 0.0) out.emplace_back(text, w);
  }
  return out;
}

/// Targets strictly extending `typed`, as a range of the sorted target list.
std::pair<std::size_t, std::size_t> extension_range(const WeightedTargets& sorted, std::string_view typed) {
  auto it = std::lower_bound(sorted.begin(), sorted.end(), typed,
                             [](const auto& e, std::string_view p) { return std::string_view(e.first) < p; });
  if (it != sorted.end() && it->first == typed) ++it;
  auto end = it;
  while (end != sorted.end() && std::string_view(end->first).starts_with(typed)) ++end;
  return {static_cast<std::size_t>(it - sorted.begin()), static_cast<std::size_t>(end - sorted.begin())};
}

class Solver {
 public:
  Solver(const TrieMdp& mdp, const PolicyTable* fixed) : mdp_(mdp), fixed_(fixed), targets_(merge_targets(mdp.targets)) {
    if (targets_.empty()) throw ConfigError("trie MDP has no targets");
    if (!mdp_.candidates) throw ConfigError("trie MDP has no candidate rule");
  }

  double value(const std::string& typed) { return solve(typed).value; }

  PolicyTable take() {
    PolicyTable table;
    table.root_value = value("");
    table.states = std::move(memo_);
    return table;
  }

 private:
  const StateValue& solve(const std::string& typed) {
    if (auto it = memo_.find(typed); it != memo_.end()) return it->second;

    const auto [lo, hi] = extension_range(targets_, typed);
    if (lo == hi) throw ContractViolation("state '" + typed + "' has no consistent target");
    double mass = 0.0;
    for (std::size_t i = lo; i < hi; ++i) mass += targets_[i].second;

    const double gamma = mdp_.gamma;
    const auto& rp = mdp_.reward;
    // Continuation after the user types the target's next character.
    auto after_typing = [&](std::size_t i) {
      const auto& text = targets_[i].first;
      std::string next = text.substr(0, typed.size() + 1);
      return next == text ? 0.0 : solve(next).value;
    };

    StateValue sv;
    double wait = 0.0;
    for (std::size_t i = lo; i < hi; ++i) wait += targets_[i].second * gamma * after_typing(i);
    sv.q.push_back(wait / mass);

    for (const auto& ins : mdp_.candidates(typed)) {
      if (ins.empty()) throw ContractViolation("candidate rule returned an empty insertion");
      const double len = static_cast<double>(ins.size());
      const std::string after_accept = typed + ins;
      std::optional<double> accept_cont;
      double q = 0.0;
      for (std::size_t i = lo; i < hi; ++i) {
        const auto& text = targets_[i].first;
        double r;
        if (mdp::accepts(text, typed, ins, mdp_.boundary)) {
          r = (1.0 - rp.alpha) * len - rp.beta_correct;
          if (after_accept != text) {
            if (!accept_cont) accept_cont = solve(after_accept).value;
            r += gamma * *accept_cont;
          }
        } else {
          r = -rp.alpha * len - rp.beta_incorrect + gamma * after_typing(i);
        }
        q += targets_[i].second * r;
      }
      sv.q.push_back(q / mass);
    }

    if (fixed_ != nullptr) {
      auto it = fixed_->states.find(typed);
      if (it == fixed_->states.end()) throw ContractViolation("policy has no action for state '" + typed + "'");
      if (it->second.best >= sv.q.size()) throw ContractViolation("policy action out of range at '" + typed + "'");
      sv.best = it->second.best;
    } else {
      sv.best = 0;
      for (std::size_t a = 1; a < sv.q.size(); ++a) {
        if (sv.q[a] > sv.q[sv.best]) sv.best = a;
      }
    }
    sv.value = sv.q[sv.best];
    return memo_.emplace(typed, std::move(sv)).first->second;
  }

  const TrieMdp& mdp_;
  const PolicyTable* fixed_;
  WeightedTargets targets_;
  std::unordered_map<std::string, StateValue> memo_;
};

}  // namespace

TrieMdp TrieMdp::top_prior_words(std::span<const std::pair<std::string, double>> weights,
                                 const mdp::RewardParams& reward, double gamma) {
  TrieMdp out;
  double total = 0.0;
  for (const auto& [w, x] : weights) total += x;
  if (weights.empty() || !(total > 0.0)) throw ConfigError("word weights are empty");
  for (const auto& [w, x] : weights) out.targets.push_back({w, x / total});
  auto sorted = std::make_shared<WeightedTargets>(merge_targets(out.targets));
  out.candidates = [sorted](std::string_view typed) -> std::vector<std::string> {
    const auto [lo, hi] = extension_range(*sorted, typed);
    if (lo == hi) return {};
    std::size_t best = lo;
    for (std::size_t i = lo + 1; i < hi; ++i) {
      if ((*sorted)[i].second > (*sorted)[best].second) best = i;
    }
    return {(*sorted)[best].first.substr(typed.size())};
  };
  out.reward = reward;
  out.boundary = mdp::BoundaryMode::Word;
  out.gamma = gamma;
  return out;
}

TrieMdp TrieMdp::from_environment(const mdp::Environment& env, std::span<const corpus::SentenceRecord> targets,
                                  double gamma) {
  if (targets.empty()) throw ConfigError("no target sentences");
  TrieMdp out;
  const double w = 1.0 / static_cast<double>(targets.size());
  for (const auto& t : targets) out.targets.push_back({t.text, w});
  const mdp::Environment* e = &env;
  out.candidates = [e](std::string_view typed) {
    const auto state = e->make_state(std::string(typed));
    std::vector<std::string> ins;
    for (const auto& c : state.candidates) ins.push_back(mdp::insertion_for(c, state.current_prefix));
    return ins;
  };
  out.reward = env.config().reward;
  out.boundary = env.config().boundary;
  out.gamma = gamma;
  return out;
}

mdp::AgentAction PolicyTable::action_at(std::string_view typed) const {
  auto it = states.find(std::string(typed));
  if (it == states.end()) throw ContractViolation("no policy entry for state '" + std::string(typed) + "'");
  if (it->second.best == 0) return mdp::AgentAction::wait();
  return mdp::AgentAction::suggest(it->second.best - 1);
}

PolicyTable solve_dp(const TrieMdp& mdp) {
  if (!(mdp.gamma >= 0.0 && mdp.gamma <= 1.0)) throw ConfigError("gamma must lie in [0, 1]");
  Solver solver(mdp, nullptr);
  return solver.take();
}

double evaluate_policy(const TrieMdp& mdp, const PolicyTable& policy) {
  Solver solver(mdp, &policy);
  return solver.value("");
}

RolloutStats monte_carlo_return(const TrieMdp& mdp, const PolicyTable& policy, std::size_t rollouts,
                                std::uint64_t seed) {
  const auto targets = merge_targets(mdp.targets);
  if (targets.empty()) throw ConfigError("trie MDP has no targets");
  std::vector<double> cum{0.0};
  for (const auto& t : targets) cum.push_back(cum.back() + t.second);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  const auto& rp = mdp.reward;

  // Each step draws the target from the state's posterior, so the rollout
  // follows the same transition kernel the solver backs up.
  auto draw = [&](const std::string& typed) -> const std::string& {
    const auto [lo, hi] = extension_range(targets, typed);
    if (lo == hi) throw ContractViolation("state '" + typed + "' has no consistent target");
    const double x = cum[lo] + u01(rng) * (cum[hi] - cum[lo]);
    auto it = std::upper_bound(cum.begin() + static_cast<std::ptrdiff_t>(lo) + 1,
                               cum.begin() + static_cast<std::ptrdiff_t>(hi), x);
    const auto i = std::min(static_cast<std::size_t>(it - cum.begin()) - 1, hi - 1);
    return targets[i].first;
  };

  double sum = 0.0;
  double sum_sq = 0.0;
  for (std::size_t r = 0; r < rollouts; ++r) {
    std::string typed;
    double ret = 0.0;
    for (bool done = false; !done;) {
      const std::string& target = draw(typed);
      const auto action = policy.action_at(typed);
      bool accepted = false;
      if (!action.is_wait()) {
        const auto ins = mdp.candidates(typed).at(action.index);
        if (mdp::accepts(target, typed, ins, mdp.boundary)) {
          ret += (1.0 - rp.alpha) * static_cast<double>(ins.size()) - rp.beta_correct;
          typed += ins;
          accepted = true;
        } else {
          ret += -rp.alpha * static_cast<double>(ins.size()) - rp.beta_incorrect;
        }
      }
      if (!accepted) typed.push_back(target[typed.size()]);
      done = typed == target;
    }
    sum += ret;
    sum_sq += ret * ret;
  }
  RolloutStats s;
  s.n = rollouts;
  s.mean = sum / static_cast<double>(rollouts);
  if (rollouts > 1) {
    const double var = (sum_sq - static_cast<double>(rollouts) * s.mean * s.mean) / static_cast<double>(rollouts - 1);
    s.std_error = std::sqrt(std::max(var, 0.0) / static_cast<double>(rollouts));
  }
  return s;
}

double fixed_target_return(const TrieMdp& mdp, const PolicyTable& policy) {
  const auto targets = merge_targets(mdp.targets);
  if (targets.empty()) throw ConfigError("trie MDP has no targets");
  const auto& rp = mdp.reward;
  double total = 0.0;
  double mass = 0.0;
  for (const auto& [target, prior] : targets) {
    std::string typed;
    double ret = 0.0;
    while (typed != target) {
      const auto action = policy.action_at(typed);
      if (!action.is_wait()) {
        const auto ins = mdp.candidates(typed).at(action.index);
        if (mdp::accepts(target, typed, ins, mdp.boundary)) {
          ret += (1.0 - rp.alpha) * static_cast<double>(ins.size()) - rp.beta_correct;
          typed += ins;
          continue;
        }
        ret += -rp.alpha * static_cast<double>(ins.size()) - rp.beta_incorrect;
      }
      typed.push_back(target[typed.size()]);
    }
    total += prior * ret;
    mass += prior;
  }
  return total / mass;
}

DisagreementReport count_disagreements(const PolicyTable& farsighted, const PolicyTable& myopic) {
  if (farsighted.states.size() != myopic.states.size())
    throw ContractViolation("policy tables cover different state sets");
  DisagreementReport rep;
  for (const auto& [state, sv] : farsighted.states) {
    auto it = myopic.states.find(state);
    if (it == myopic.states.end()) throw ContractViolation("state '" + state + "' missing from myopic table");
    ++rep.total_states;
    if (it->second.best != sv.best) ++rep.disagreements;
  }
  rep.fraction = rep.total_states == 0 ? 0.0
                                       : static_cast<double>(rep.disagreements) / static_cast<double>(rep.total_states);
  return rep;
}

std::vector<SweepPoint> alpha_sweep(const TrieMdp& base, std::span<const double> alphas, double beta) {
  std::vector<SweepPoint> out;
  for (double alpha : alphas) {
    TrieMdp far = base;
    far.reward.alpha = alpha;
    far.reward.beta_correct = far.reward.beta_incorrect = beta;
    far.reward.validate();
    far.gamma = 1.0;
    TrieMdp myo = far;
    myo.gamma = 0.0;
    out.push_back({alpha, count_disagreements(solve_dp(far), solve_dp(myo))});
  }
  return out;
}

std::vector<double> default_alpha_grid() {
  std::vector<double> grid;
  for (int i = 1; i <= 19; ++i) grid.push_back(0.05 * i);
  return grid;
}

std::vector<std::pair<std::string, double>> top_words(const lm::LanguageModel& model, std::size_t count) {
  const auto& vocab = model.vocabulary();
  std::vector<std::pair<std::string, double>> out;
  for (auto id : vocab.by_frequency()) {
    if (out.size() >= count) break;
    out.emplace_back(vocab.word(id), static_cast<double>(vocab.count(id)));
  }
  return out;
}

}  // namespace inlineac::theory
