#include <doctest.h>

#include <cmath>
#include <map>

#include "inlineac/agents.hpp"
#include "inlineac/errors.hpp"
#include "support.hpp"

using namespace inlineac;
using namespace inlineac::agents;
using testsupport::model_of;
using testsupport::records;
using mdp::Policy;

namespace {


lm::Candidate word(std::string w, std::size_t prefix_len, double p) {
  lm::Candidate c;
  c.completion = w.substr(prefix_len);
  c.full_words = {w};
  c.raw_prob = p;
  c.norm_prob = p;
  return c;
}

EnvState gr_state() {
  EnvState s;
  s.typed = "i am gr";
  s.current_prefix = "gr";
  for (const char* w : {"great", "greater", "grateful", "green", "grow"}) s.candidates.push_back(word(w, 2, 0.2));
  return s;
}

double mean_episode_return(Policy& p, std::span<const SentenceRecord> targets, const mdp::Environment& env,
                           std::size_t* suggestions = nullptr) {
  double total = 0.0;
  std::size_t shown = 0;
  for (const auto& t : targets) {
    const auto log = mdp::run_episode(p, t, env);
    total += log.return_undiscounted;
    shown += log.suggestions;
  }
  if (suggestions) *suggestions = shown;
  return total / static_cast<double>(targets.size());
}

}  // namespace


TEST_CASE("threshold agent") {
  EnvState s;
  s.candidates = {word("call", 0, 0.9)};
  CHECK(threshold_act(s, 0.3) == AgentAction::suggest(0));
  s.candidates = {word("call", 0, 0.1)};
  CHECK(threshold_act(s, 0.3) == AgentAction::wait());
  CHECK(threshold_act(s, 0.0) == AgentAction::suggest(0));
  s.candidates = {word("call", 0, 0.0)};
  CHECK(threshold_act(s, 0.0) == AgentAction::suggest(0));
  s.candidates.clear();
  CHECK(threshold_act(s, 0.0) == AgentAction::wait());
  // The comparison is inclusive.
  s.candidates = {word("call", 0, 0.3)};
  CHECK(threshold_act(s, 0.3) == AgentAction::suggest(0));
  CHECK_THROWS_AS(ThresholdPolicy(1.5), ConfigError);
  CHECK_THROWS_AS(ThresholdPolicy(-0.1), ConfigError);
}

TEST_CASE("oracle agent") {
  const auto target = corpus::make_record("i am grateful to you");
  CHECK(oracle_act(gr_state(), target) == AgentAction::suggest(2));

  auto s = gr_state();
  s.candidates.erase(s.candidates.begin() + 2);
  CHECK(oracle_act(s, target) == AgentAction::wait());

  // "great" is a prefix of "greatly" but not a whole word of it.
  const auto greatly = corpus::make_record("i am greatly moved");
  CHECK(oracle_act(gr_state(), greatly) == AgentAction::wait());
  CHECK(oracle_act(gr_state(), greatly, mdp::BoundaryMode::Literal) == AgentAction::suggest(0));

  SUBCASE("never negative under the idealized user") {
    const auto model = testsupport::model_of({"call me later", "call me now", "can you call", "i am here"});
    const mdp::Environment env(model, {});
    OraclePolicy oracle;
    for (const auto& t : records({"call me later", "call me now", "can you call", "i am here", "cannot call"})) {
      const auto log = mdp::run_episode(oracle, t, env);
      for (const auto& st : log.steps) CHECK(st.outcome.reward >= 0.0);
    }
  }
}

TEST_CASE("random agent") {
  std::mt19937_64 rng(7);
  EnvState s;
  s.candidates = {word("call", 0, 0.5)};
  const int n = 20000;
  int shows = 0;
  for (int i = 0; i < n; ++i) shows += random_act(s, rng).is_wait() ? 0 : 1;
  const double sigma = std::sqrt(0.25 / n);
  CHECK(std::abs(shows / double(n) - 0.5) < 4 * sigma);

  s.candidates.clear();
  for (int i = 0; i < 100; ++i) CHECK(random_act(s, rng).is_wait());

  s.candidates = {word("a", 0, 0.2), word("b", 0, 0.2), word("c", 0, 0.2)};
  std::map<std::size_t, int> hist;
  for (int i = 0; i < n; ++i) {
    const auto a = random_act(s, rng);
    ++hist[a.is_wait() ? 0 : a.index + 1];
  }
  REQUIRE(hist.size() == 4);
  for (const auto& [slot, c] : hist) CHECK(std::abs(c / double(n) - 0.25) < 4 * std::sqrt(0.25 * 0.75 / n));

  RandomPolicy a(99), b(99);
  const corpus::SentenceRecord t = corpus::make_record("x");
  for (int i = 0; i < 200; ++i) CHECK(a.act(s, t) == b.act(s, t));
}

TEST_CASE("greedy action") {
  QTable table;
  EnvState s;
  CHECK(greedy_act(table, s).is_wait());
  s.candidates = {word("call", 0, 0.9), word("cab", 0, 0.1)};
  // All unseen: every value is 0, the tie goes to wait.
  CHECK(greedy_act(table, s).is_wait());
  const auto keys = action_keys(s, table.features());
  REQUIRE(keys.size() == 3);
  table.cell(keys[2]).value = 0.5;
  CHECK(greedy_act(table, s) == AgentAction::suggest(1));
  table.cell(keys[1]).value = 0.5;
  CHECK(greedy_act(table, s) == AgentAction::suggest(0));
  table.cell(keys[0]).value = 0.5;
  CHECK(greedy_act(table, s).is_wait());
  table.cell(keys[1]).value = 0.6;
  CHECK(greedy_act(table, s) == AgentAction::suggest(0));
}

TEST_CASE("feature keys") {
  EnvState s;
  s.typed = "i am gr";
  s.current_prefix = "gr";
  s.candidates = {word("grateful", 2, 1.0), word("great", 2, 0.04)};
  const FeatureConfig f;
  const auto keys = action_keys(s, f);
  REQUIRE(keys.size() == 3);
  CHECK(keys[0].slot == 0);
  CHECK(keys[0].prob_bin == 19);  // wait is described by the top candidate
  CHECK(keys[1].prob_bin == 19);
  CHECK(keys[1].len_bin == 5);    // "ateful" capped
  CHECK(keys[2].prob_bin == 0);
  CHECK(keys[2].len_bin == 3);
  CHECK(keys[1].prefix_bin == 2);
  CHECK(keys[1].context == 0);

  s.current_prefix = "grat";
  s.candidates = {word("grateful", 4, 0.5)};
  CHECK(action_keys(s, f)[1].prefix_bin == 3);

  EnvState empty;
  const auto k0 = action_keys(empty, f);
  REQUIRE(k0.size() == 1);
  CHECK(k0[0].prob_bin == -1);

  FeatureConfig exact;
  exact.exact_context = true;
  EnvState other = s;
  other.typed = "you gr";
  CHECK(action_keys(s, exact)[1].context != 0);
  CHECK(action_keys(s, exact)[1] != action_keys(other, exact)[1]);
  CHECK(action_keys(s, f)[1] == action_keys(other, f)[1]);
}

TEST_CASE("q-learning on a single sentence with gamma 0") {
  const auto model = model_of({"call"});
  const mdp::Environment env(model, {});
  const auto targets = records({"call"});
  TrainConfig cfg;
  cfg.gamma = 0.0;
  cfg.steps = 5000;
  cfg.seed = 3;
  const auto result = q_learning_train(env, targets, cfg);
  const auto root = action_keys(env.initial_state(), cfg.features);
  REQUIRE(root.size() == 2);
  CHECK(result.table.value(root[1]) == doctest::Approx(1864.0 / 521.0).epsilon(0.01 / 3.57774));
  CHECK(std::abs(result.table.value(root[1]) - 3.57774) < 0.01);
  CHECK(greedy_act(result.table, env.initial_state()) == AgentAction::suggest(0));
  CHECK(result.curve.size() == 5);
  for (const auto& p : result.curve) CHECK(std::isfinite(p.mean_return));
}

TEST_CASE("q-learning converges to exact values on a deterministic target") {
  const auto model = model_of({"call me later", "call me now", "cat nap"});
  const mdp::Environment env(model, {});
  const auto targets = records({"call me later"});
  TrainConfig cfg;
  cfg.gamma = 1.0;
  cfg.steps = 60000;
  cfg.seed = 11;
  cfg.learning_rate = 0.2;
  cfg.features.exact_context = true;
  const auto q = q_learning_train(env, targets, cfg).table;

  const auto trie = theory::TrieMdp::from_environment(env, targets, 1.0);
  const auto dp = theory::solve_dp(trie);
  // Every state the greedy policy visits carries the exact values.
  GreedyQPolicy greedy(std::make_shared<QTable>(q));
  const auto log = mdp::run_episode(greedy, targets[0], env);
  CHECK(log.return_undiscounted == doctest::Approx(dp.root_value).epsilon(1e-9));
  for (const auto& st : log.steps) {
    const auto state = env.make_state(log.target.text.substr(0, st.typed_len));
    const auto keys = action_keys(state, cfg.features);
    const auto& exact = dp.states.at(state.typed);
    const std::size_t slot = st.action.is_wait() ? 0 : st.action.index + 1;
    CHECK(std::abs(q.value(keys[slot]) - exact.q[slot]) < 0.01);
  }
}

TEST_CASE("epsilon 1 behaves as the random agent") {
  const auto texts = std::vector<std::string>{"call me later", "call me now", "can you call", "i am here"};
  const auto model = model_of(texts);
  const mdp::Environment env(model, {});
  const auto targets = records(texts);
  TrainConfig cfg;
  cfg.eps_start = cfg.eps_end = 1.0;
  cfg.steps = 60000;
  cfg.log_every = 60000;
  cfg.seed = 5;
  const auto result = q_learning_train(env, targets, cfg);
  REQUIRE(result.curve.size() == 1);
  const auto& behaviour = result.curve[0];

  RandomPolicy random(17);
  std::vector<double> returns;
  std::mt19937_64 pick(2);
  for (int i = 0; i < 6000; ++i) {
    const auto& t = targets[pick() % targets.size()];
    returns.push_back(mdp::run_episode(random, t, env).return_undiscounted);
  }
  double m = 0, v = 0;
  for (double r : returns) m += r;
  m /= returns.size();
  for (double r : returns) v += (r - m) * (r - m);
  v /= returns.size() - 1;
  const double se = std::sqrt(v / returns.size() + v / behaviour.episodes);
  CHECK(std::abs(behaviour.mean_return - m) < 4 * se);
}

TEST_CASE("training configuration") {
  TrainConfig cfg;
  cfg.steps = 100;
  CHECK(cfg.epsilon_at(0) == doctest::Approx(1.0));
  CHECK(cfg.epsilon_at(25) == doctest::Approx(0.525));
  CHECK(cfg.epsilon_at(50) == doctest::Approx(0.05));
  CHECK(cfg.epsilon_at(99) == doctest::Approx(0.05));
  cfg.gamma = 1.5;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg.gamma = 0.5;
  cfg.steps = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg.steps = 1;
  cfg.learning_rate = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);

  const auto model = model_of({"call"});
  const mdp::Environment env(model, {});
  CHECK_THROWS_AS(q_learning_train(env, {}, TrainConfig{}), ConfigError);
}

TEST_CASE("offline collection") {
  const auto texts = std::vector<std::string>{"call me later", "can you call"};
  const auto model = model_of(texts);
  const mdp::Environment env(model, {});
  const auto targets = records(texts);

  SUBCASE("no exploration reproduces the base policy") {
    ThresholdPolicy base(0.3);
    const auto d = collect_offline(base, 0.0, 50, env, targets, 4);
    CHECK(d.trajectories == 50);
    CHECK(d.collection_policy == "threshold:0.3");
    CHECK(d.explored_fraction() == 0.0);
    std::vector<std::vector<double>> expected;
    for (const auto& t : targets) {
      std::vector<double> rs;
      for (const auto& st : mdp::run_episode(base, t, env).steps) rs.push_back(st.outcome.reward);
      expected.push_back(rs);
    }
    std::map<std::uint32_t, std::vector<double>> episodes;
    for (const auto& tr : d.transitions) episodes[tr.episode].push_back(tr.reward);
    CHECK(episodes.size() == 50);
    for (const auto& [ep, rs] : episodes) CHECK((rs == expected[0] || rs == expected[1]));
  }

  SUBCASE("transition count equals the sum of horizons") {
    ThresholdPolicy base(0.0);
    const auto d = collect_offline(base, 0.3, 200, env, targets, 9);
    std::map<std::uint32_t, std::size_t> len;
    std::size_t done = 0;
    for (const auto& tr : d.transitions) {
      CHECK(tr.t == len[tr.episode]);
      ++len[tr.episode];
      if (tr.done) {
        ++done;
        CHECK(tr.next_keys.empty());
      } else {
        CHECK_FALSE(tr.next_keys.empty());
      }
    }
    CHECK(len.size() == 200);
    CHECK(done == 200);
  }

  SUBCASE("action marginals mix base and uniform") {
    ThresholdPolicy base(0.0);
    const double rate = 0.05;
    const auto d = collect_offline(base, rate, 3000, env, targets, 21);
    std::size_t with_candidate = 0, suggested = 0;
    for (const auto& tr : d.transitions) {
      if (tr.key.prob_bin < 0) {
        CHECK(tr.key.slot == 0);
        continue;
      }
      if (!tr.explored) CHECK(tr.key.slot == 1);
      ++with_candidate;
      suggested += tr.key.slot == 1 ? 1 : 0;
    }
    const double n = static_cast<double>(d.transitions.size());
    const double f = d.explored_fraction();
    CHECK(std::abs(f - rate) < 3 * std::sqrt(rate * (1 - rate) / n));
    const double p = 1 - rate / 2;  // k = 1: exploration suggests half the time
    const double m = static_cast<double>(with_candidate);
    CHECK(std::abs(suggested / m - p) < 3 * std::sqrt(p * (1 - p) / m));
  }

  CHECK_THROWS_AS(collect_offline(*std::make_unique<WaitPolicy>(), 1.5, 10, env, targets, 0), ConfigError);
  WaitPolicy w;
  CHECK_THROWS_AS(collect_offline(w, 0.1, 10, env, {}, 0), ConfigError);
}

TEST_CASE("dataset and table persistence") {
  const auto texts = std::vector<std::string>{"call me later", "can you call"};
  const auto model = model_of(texts);
  const mdp::Environment env(model, {});
  const auto targets = records(texts);
  FeatureConfig f;
  f.exact_context = true;
  ThresholdPolicy base(0.3);
  const auto d = collect_offline(base, 0.2, 40, env, targets, 8, f);
  const auto dir = testsupport::temp_dir("agents");
  d.save_jsonl(dir / "d.jsonl");
  const auto back = OfflineDataset::load_jsonl(dir / "d.jsonl");
  CHECK(back.transitions == d.transitions);
  CHECK(back.trajectories == d.trajectories);
  CHECK(back.collection_policy == d.collection_policy);
  CHECK(back.exploration_rate == d.exploration_rate);
  CHECK(back.seed == d.seed);
  CHECK(back.features == d.features);

  TrainConfig cfg;
  const auto table = fitted_q_train(d, cfg);
  table.save(dir / "q.json");
  const auto loaded = QTable::load(dir / "q.json");
  CHECK(loaded.features() == table.features());
  REQUIRE(loaded.size() == table.size());
  for (const auto& [k, c] : table.cells()) {
    CHECK(loaded.value(k) == c.value);
    CHECK(loaded.cells().at(k).visits == c.visits);
  }
  const auto j = table.to_json();
  CHECK(j.contains("features_config"));
  CHECK(j.at("entries").is_array());
  CHECK(j.at("entries").at(0).contains("state"));
  CHECK(j.at("entries").at(0).contains("action"));

  auto bad = j;
  bad["entries"][0]["action"] = "jump";
  CHECK_THROWS_AS(QTable::from_json(bad), FormatError);
  bad = j;
  bad["entries"][0]["action"] = "suggest:x";
  CHECK_THROWS_AS(QTable::from_json(bad), FormatError);
  std::filesystem::remove_all(dir);
}

TEST_CASE("fitted Q iteration") {
  SUBCASE("gamma 0 gives the per-cell mean reward") {
    const auto texts = std::vector<std::string>{"call me later", "call me now", "can you call"};
    const auto model = model_of(texts);
    const mdp::Environment env(model, {});
    const auto targets = records(texts);
    ThresholdPolicy base(0.2);
    const auto d = collect_offline(base, 0.3, 300, env, targets, 1);
    TrainConfig cfg;
    cfg.gamma = 0.0;
    const auto q = fitted_q_train(d, cfg);
    std::map<QKey, std::pair<double, std::size_t>> sums;
    for (const auto& t : d.transitions) {
      sums[t.key].first += t.reward;
      ++sums[t.key].second;
    }
    REQUIRE(q.size() == sums.size());
    for (const auto& [k, s] : sums) {
      CHECK(q.value(k) == doctest::Approx(s.first / s.second).epsilon(1e-12));
      CHECK(q.cells().at(k).visits == s.second);
    }
  }

  SUBCASE("deterministic single sentence recovers exact values") {
    const auto model = model_of({"call me later", "call me now", "cat nap"});
    const mdp::Environment env(model, {});
    const auto targets = records({"call me later"});
    FeatureConfig f;
    f.exact_context = true;
    RandomPolicy base(1);
    const auto d = collect_offline(base, 1.0, 2000, env, targets, 2, f);
    TrainConfig cfg;
    cfg.gamma = 1.0;
    cfg.fitted_tol = 1e-12;
    const auto q = fitted_q_train(d, cfg);
    const auto dp = theory::solve_dp(theory::TrieMdp::from_environment(env, targets, 1.0));
    std::size_t compared = 0;
    for (const auto& [typed, sv] : dp.states) {
      const auto keys = action_keys(env.make_state(typed), f);
      REQUIRE(keys.size() == sv.q.size());
      for (std::size_t a = 0; a < keys.size(); ++a) {
        REQUIRE(q.cells().count(keys[a]) == 1);
        CHECK(std::abs(q.value(keys[a]) - sv.q[a]) < 1e-6);
        ++compared;
      }
    }
    CHECK(compared > 10);
  }

  SUBCASE("retraining is bit-identical and leaves the data alone") {
    const auto model = model_of({"call me later", "can you call"});
    const mdp::Environment env(model, {});
    const auto targets = records({"call me later", "can you call"});
    ThresholdPolicy base(0.3);
    const auto d = collect_offline(base, 0.05, 200, env, targets, 77);
    const auto copy = d;
    TrainConfig cfg;
    const auto a = fitted_q_train(d, cfg);
    const auto b = fitted_q_train(d, cfg);
    CHECK(a.to_json().dump() == b.to_json().dump());
    CHECK(d.transitions == copy.transitions);
    const auto d2 = collect_offline(base, 0.05, 200, env, targets, 77);
    CHECK(d2.transitions == d.transitions);

    TrainConfig online;
    online.steps = 3000;
    online.seed = 4;
    CHECK(q_learning_train(env, targets, online).table.to_json().dump() ==
          q_learning_train(env, targets, online).table.to_json().dump());
  }

  CHECK_THROWS_AS(fitted_q_train(OfflineDataset{}, TrainConfig{}), ConfigError);
}

TEST_CASE("threshold monotonicity") {
  const auto all = testsupport::desk_corpus();
  const std::vector<SentenceRecord> sample(all.begin(), all.begin() + 40);
  const auto model = lm::LanguageModel::build(all);
  const mdp::Environment env(model, {});
  std::size_t prev = std::numeric_limits<std::size_t>::max();
  for (double tau = 0.0; tau <= 1.0001; tau += 0.1) {
    ThresholdPolicy p(std::min(tau, 1.0));
    std::size_t shown = 0;
    mean_episode_return(p, sample, env, &shown);
    CHECK(shown <= prev);
    prev = shown;
  }
}

TEST_CASE("policy specs") {
  CHECK(PolicySpec::parse("oracle").kind == PolicySpec::Kind::Oracle);
  CHECK(PolicySpec::parse("wait").kind == PolicySpec::Kind::Wait);
  CHECK(PolicySpec::parse("dp").kind == PolicySpec::Kind::Dp);
  const auto r = PolicySpec::parse("random:42");
  CHECK(r.kind == PolicySpec::Kind::Random);
  CHECK(r.seed == 42);
  CHECK(PolicySpec::parse("random").seed == 0);
  const auto t = PolicySpec::parse("threshold:0.3");
  CHECK(t.kind == PolicySpec::Kind::Threshold);
  CHECK(t.tau == doctest::Approx(0.3));
  CHECK(t.label() == "threshold:0.3");
  const auto q = PolicySpec::parse("q:tables/a.json");
  CHECK(q.kind == PolicySpec::Kind::QTable);
  CHECK(q.table_path == "tables/a.json");
  CHECK(q.label() == "q:tables/a.json");
  CHECK_THROWS_AS(PolicySpec::parse("threshold"), ConfigError);
  CHECK_THROWS_AS(PolicySpec::parse("threshold:2"), ConfigError);
  CHECK_THROWS_AS(PolicySpec::parse("threshold:abc"), ConfigError);
  CHECK_THROWS_AS(PolicySpec::parse("random:x"), ConfigError);
  CHECK_THROWS_AS(PolicySpec::parse("q"), ConfigError);
  CHECK_THROWS_AS(PolicySpec::parse("ppo"), ConfigError);
}

TEST_CASE("dp policy follows the solved table") {
  const auto model = model_of({"call me later", "call me now", "cat nap"});
  const mdp::Environment env(model, {});
  const auto targets = records({"call me later", "cat nap"});
  const auto table = std::make_shared<theory::PolicyTable>(
      theory::solve_dp(theory::TrieMdp::from_environment(env, targets, 1.0)));
  DpPolicy dp(table);
  const auto trie = theory::TrieMdp::from_environment(env, targets, 1.0);
  CHECK(mean_episode_return(dp, targets, env) ==
        doctest::Approx(theory::fixed_target_return(trie, *table)).epsilon(1e-12));
  EnvState off;
  off.typed = "zzz";
  CHECK(dp.act(off, targets[0]).is_wait());
}
