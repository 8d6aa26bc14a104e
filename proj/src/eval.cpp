#include "inlineac/eval.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <random>
#include <sstream>

#include <openssl/evp.h>

#include "inlineac/errors.hpp"

namespace inlineac::eval {

void EvalConfig::validate() const {
  if (runs < 2) throw ConfigError("at least two runs are needed for confidence intervals");
  if (sentences.empty()) throw ConfigError("evaluation sentence set is empty");
}

double mean(std::span<const double> xs) {
  if (xs.empty()) return 0.0;
  return std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
}

double ci95(std::span<const double> xs) {
  if (xs.size() < 2) return 0.0;
  const double m = mean(xs);
  double ss = 0.0;
  for (double x : xs) ss += (x - m) * (x - m);
  const double sd = std::sqrt(ss / static_cast<double>(xs.size() - 1));
  return 1.96 * sd / std::sqrt(static_cast<double>(xs.size()));
}

namespace {

std::vector<std::size_t> run_order(const EvalConfig& config, std::size_t run) {
  std::vector<std::size_t> idx(config.sentences.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::mt19937_64 rng(config.run_seed(run) ^ 0x9E3779B97F4A7C15ULL);
  std::shuffle(idx.begin(), idx.end(), rng);
  if (config.sentences_per_run > 0 && config.sentences_per_run < idx.size()) idx.resize(config.sentences_per_run);
  return idx;
}

}  // namespace

std::vector<MetricsRow> evaluate(const lm::LanguageModel& model, std::span<const NamedPolicy> policies,
                                 const EvalConfig& config, EvalAudit* audit) {
  config.validate();
  const mdp::Environment env(model, config.env);
  std::vector<MetricsRow> rows;
  if (audit != nullptr) audit->logs.assign(policies.size(), {});

  for (std::size_t p = 0; p < policies.size(); ++p) {
    MetricsRow row;
    row.policy = policies[p].name;
    std::size_t suggestions = 0;
    std::size_t accepted = 0;
    std::size_t episodes = 0;
    for (std::size_t run = 0; run < config.runs; ++run) {
      auto policy = policies[p].make(config.run_seed(run));
      double ret = 0.0;
      double saved = 0.0;
      const auto order = run_order(config, run);
      std::vector<mdp::EpisodeLog> kept;
      for (std::size_t i : order) {
        auto log = mdp::run_episode(*policy, config.sentences[i], env);
        ret += log.return_undiscounted;
        saved += static_cast<double>(log.chars_saved);
        suggestions += log.suggestions;
        accepted += log.accepted;
        ++episodes;
        if (audit != nullptr) kept.push_back(std::move(log));
      }
      row.run_returns.push_back(ret / static_cast<double>(order.size()));
      row.run_chars_saved.push_back(saved / static_cast<double>(order.size()));
      if (audit != nullptr) audit->logs[p].push_back(std::move(kept));
    }
    row.mean_return = mean(row.run_returns);
    row.ci95_return = ci95(row.run_returns);
    row.mean_chars_saved = mean(row.run_chars_saved);
    row.ci95_chars_saved = ci95(row.run_chars_saved);
    row.suggestions_made = episodes ? static_cast<double>(suggestions) / static_cast<double>(episodes) : 0.0;
    row.acceptance_rate = suggestions ? static_cast<double>(accepted) / static_cast<double>(suggestions) : 0.0;
    rows.push_back(std::move(row));
  }
  return rows;
}

NamedPolicy make_named_policy(const agents::PolicySpec& spec, mdp::BoundaryMode mode) {
  using Kind = agents::PolicySpec::Kind;
  switch (spec.kind) {
    case Kind::Oracle:
      return {"oracle", [mode](std::uint64_t) { return std::make_unique<agents::OraclePolicy>(mode); }};
    case Kind::Random: {
      const auto offset = spec.seed;
      return {"random", [offset](std::uint64_t s) { return std::make_unique<agents::RandomPolicy>(s + offset); }};
    }
    case Kind::Threshold: {
      const double tau = spec.tau;
      return {spec.label(), [tau](std::uint64_t) { return std::make_unique<agents::ThresholdPolicy>(tau); }};
    }
    case Kind::Wait:
      return {"wait", [](std::uint64_t) { return std::make_unique<agents::WaitPolicy>(); }};
    case Kind::QTable: {
      auto table = std::make_shared<const agents::QTable>(agents::QTable::load(spec.table_path));
      return {spec.label(), [table](std::uint64_t) { return std::make_unique<agents::GreedyQPolicy>(table); }};
    }
    case Kind::Dp:
      throw ConfigError("dp policies need a solved policy table; build them with DpPolicy directly");
  }
  throw ConfigError("unknown policy kind");
}

ThresholdSweep threshold_sweep(const lm::LanguageModel& model, std::span<const double> taus, const EvalConfig& config) {
  std::vector<NamedPolicy> policies;
  for (double tau : taus) {
    agents::PolicySpec spec;
    spec.kind = agents::PolicySpec::Kind::Threshold;
    spec.tau = tau;
    policies.push_back(make_named_policy(spec, config.env.boundary));
  }
  ThresholdSweep sweep;
  sweep.taus.assign(taus.begin(), taus.end());
  sweep.rows = evaluate(model, policies, config);
  std::size_t best = 0;
  for (std::size_t i = 1; i < sweep.rows.size(); ++i) {
    if (sweep.rows[i].mean_return > sweep.rows[best].mean_return) best = i;
  }
  if (!sweep.rows.empty()) sweep.best_tau = sweep.taus[best];
  return sweep;
}

GammaComparison gamma_comparison(const lm::LanguageModel& model, AgentKind kind, std::span<const double> gammas,
                                 std::span<const double> alphas, std::span<const SentenceRecord> train_sentences,
                                 const EvalConfig& config, const agents::TrainConfig& train, double offline_tau,
                                 std::size_t offline_trajectories) {
  GammaComparison out;
  const std::vector<SentenceRecord> train_set(train_sentences.begin(), train_sentences.end());
  for (double alpha : alphas) {
    EvalConfig cfg = config;
    cfg.env.reward.alpha = alpha;
    auto env = std::make_shared<const mdp::Environment>(model, cfg.env);
    std::vector<NamedPolicy> policies;
    for (double gamma : gammas) {
      agents::TrainConfig tc = train;
      tc.gamma = gamma;
      std::ostringstream name;
      name << (kind == AgentKind::Online ? "q_online" : "q_offline") << "(gamma=" << gamma << ")";
      policies.push_back({name.str(), [=](std::uint64_t seed) -> std::unique_ptr<mdp::Policy> {
                            agents::TrainConfig run_tc = tc;
                            run_tc.seed = seed;
                            std::shared_ptr<const agents::QTable> table;
                            if (kind == AgentKind::Online) {
                              table = std::make_shared<const agents::QTable>(
                                  agents::q_learning_train(*env, train_set, run_tc).table);
                            } else {
                              agents::ThresholdPolicy base(offline_tau);
                              const auto data = agents::collect_offline(base, 0.05, offline_trajectories, *env,
                                                                        train_set, seed, run_tc.features);
                              table = std::make_shared<const agents::QTable>(agents::fitted_q_train(data, run_tc));
                            }
                            return std::make_unique<agents::GreedyQPolicy>(table);
                          }});
    }
    const auto rows = evaluate(model, policies, cfg);
    for (std::size_t g = 0; g < gammas.size(); ++g) out.entries.push_back({alpha, gammas[g], rows[g]});
    if (gammas.size() >= 2) {
      // Largest gamma against smallest.
      const auto hi = static_cast<std::size_t>(std::max_element(gammas.begin(), gammas.end()) - gammas.begin());
      const auto lo = static_cast<std::size_t>(std::min_element(gammas.begin(), gammas.end()) - gammas.begin());
      GammaDifference d;
      d.alpha = alpha;
      d.high_gamma = gammas[hi];
      d.low_gamma = gammas[lo];
      d.difference = rows[hi].mean_return - rows[lo].mean_return;
      d.ci95 = std::hypot(rows[hi].ci95_return, rows[lo].ci95_return);
      out.differences.push_back(d);
    }
  }
  return out;
}

CrowdingReport crowding_report(const lm::LanguageModel& model, std::span<const SentenceRecord> sentences,
                               const lm::LmConfig& lm_config, const mdp::EnvConfig& base_env) {
  mdp::EnvConfig single_cfg = base_env;
  single_cfg.lm = lm_config;
  single_cfg.lm.multiword = false;
  mdp::EnvConfig mixed_cfg = base_env;
  mixed_cfg.lm = lm_config;
  const mdp::Environment single_env(model, single_cfg);
  const mdp::Environment mixed_env(model, mixed_cfg);
  agents::OraclePolicy oracle(base_env.boundary);

  CrowdingReport rep;
  for (const auto& target : sentences) {
    const auto single = mdp::run_episode(oracle, target, single_env);
    rep.oracle_saved_single += single.chars_saved;
    rep.oracle_return_single += single.return_undiscounted;

    const auto mixed = mdp::run_episode(oracle, target, mixed_env);
    rep.oracle_saved_mixed += mixed.chars_saved;
    rep.oracle_return_mixed += mixed.return_undiscounted;

    // Re-walk the mixed trajectory and compare slates at each visited state.
    std::string typed;
    for (const auto& step : mixed.steps) {
      const auto s_state = single_env.make_state(typed);
      const auto m_state = mixed_env.make_state(typed);
      ++rep.states_examined;
      bool crowded = false;
      for (const auto& c : s_state.candidates) {
        const auto ins = mdp::insertion_for(c, s_state.current_prefix);
        if (!mdp::accepts(target.text, typed, ins, base_env.boundary)) continue;
        const bool present = std::any_of(m_state.candidates.begin(), m_state.candidates.end(),
                                         [&](const lm::Candidate& m) { return m.full_words == c.full_words; });
        if (!present) crowded = true;
      }
      if (crowded) ++rep.crowded_states;
      if (step.outcome.accepted) {
        typed += step.outcome.inserted;
      } else {
        typed.push_back(target.text[typed.size()]);
      }
    }
  }
  return rep;
}

void write_metrics_csv(std::ostream& os, std::span<const MetricsRow> rows) {
  os << "policy,mean_return,ci95_return,mean_chars_saved,ci95_chars_saved,suggestions_made,acceptance_rate\n";
  os << std::setprecision(10);
  for (const auto& r : rows) {
    os << r.policy << ',' << r.mean_return << ',' << r.ci95_return << ',' << r.mean_chars_saved << ','
       << r.ci95_chars_saved << ',' << r.suggestions_made << ',' << r.acceptance_rate << '\n';
  }
}

nlohmann::json metrics_json(std::span<const MetricsRow> rows) {
  auto out = nlohmann::json::array();
  for (const auto& r : rows) {
    out.push_back({{"policy", r.policy},
                   {"mean_return", r.mean_return},
                   {"ci95_return", r.ci95_return},
                   {"mean_chars_saved", r.mean_chars_saved},
                   {"ci95_chars_saved", r.ci95_chars_saved},
                   {"suggestions_made", r.suggestions_made},
                   {"acceptance_rate", r.acceptance_rate},
                   {"run_returns", r.run_returns},
                   {"run_chars_saved", r.run_chars_saved}});
  }
  return out;
}

std::string git_blob_sha1(std::string_view bytes) {
  const std::string header = "blob " + std::to_string(bytes.size()) + '\0';
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  if (ctx == nullptr) throw std::runtime_error("EVP_MD_CTX_new failed");
  const bool ok = EVP_DigestInit_ex(ctx, EVP_sha1(), nullptr) == 1 &&
                  EVP_DigestUpdate(ctx, header.data(), header.size()) == 1 &&
                  EVP_DigestUpdate(ctx, bytes.data(), bytes.size()) == 1 && EVP_DigestFinal_ex(ctx, digest, &len) == 1;
  EVP_MD_CTX_free(ctx);
  if (!ok) throw std::runtime_error("SHA-1 digest failed");
  std::ostringstream os;
  for (unsigned int i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(digest[i]);
  return os.str();
}

}  // namespace inlineac::eval
