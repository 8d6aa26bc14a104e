#include "inlineac/agents.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "inlineac/errors.hpp"

namespace inlineac::agents {

using nlohmann::json;

AgentAction threshold_act(const EnvState& state, double tau) {
  if (!state.candidates.empty() && state.candidates.front().raw_prob >= tau) return AgentAction::suggest(0);
  return AgentAction::wait();
}

AgentAction oracle_act(const EnvState& state, const SentenceRecord& target, mdp::BoundaryMode mode) {
  for (std::size_t i = 0; i < state.candidates.size(); ++i) {
    const auto ins = mdp::insertion_for(state.candidates[i], state.current_prefix);
    if (mdp::accepts(target.text, state.typed, ins, mode)) return AgentAction::suggest(i);
  }
  return AgentAction::wait();
}

AgentAction random_act(const EnvState& state, std::mt19937_64& rng) {
  std::uniform_int_distribution<std::size_t> pick(0, state.candidates.size());
  const auto a = pick(rng);
  return a == 0 ? AgentAction::wait() : AgentAction::suggest(a - 1);
}

ThresholdPolicy::ThresholdPolicy(double tau) : tau_(tau) {
  if (!(tau >= 0.0 && tau <= 1.0)) throw ConfigError("threshold must lie in [0, 1]");
}

std::string ThresholdPolicy::name() const {
  std::ostringstream os;
  os << "threshold:" << tau_;
  return os.str();
}

AgentAction DpPolicy::act(const EnvState& state, const SentenceRecord&) {
  auto it = table_->states.find(state.typed);
  if (it == table_->states.end() || it->second.best == 0) return AgentAction::wait();
  const auto slot = it->second.best - 1;
  if (slot >= state.candidates.size()) return AgentAction::wait();
  return AgentAction::suggest(slot);
}

// ---------------------------------------------------------------------------
// Features

namespace {

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  auto [p, ec] = std::to_chars(buf, buf + 16, v, 16);
  return std::string(buf, p);
}

std::uint64_t parse_hex64(const std::string& s) {
  std::uint64_t v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v, 16);
  if (ec != std::errc() || p != s.data() + s.size()) throw FormatError("bad context hash: " + s);
  return v;
}

std::string action_label(std::uint16_t slot) {
  return slot == 0 ? std::string("wait") : "suggest:" + std::to_string(slot - 1);
}

std::uint16_t parse_action_label(const std::string& s) {
  if (s == "wait") return 0;
  if (s.starts_with("suggest:")) {
    unsigned v = 0;
    const auto [p, ec] = std::from_chars(s.data() + 8, s.data() + s.size(), v);
    if (ec == std::errc() && p == s.data() + s.size() && s.size() > 8 && v < 0xffff) {
      return static_cast<std::uint16_t>(v + 1);
    }
  }
  throw FormatError("bad action label: " + s);
}

json key_array(const QKey& k) {
  json a = json::array({k.slot, k.prob_bin, k.len_bin, k.prefix_bin});
  if (k.context != 0) a.push_back(hex64(k.context));
  return a;
}

QKey key_from_array(const json& a) {
  QKey k;
  k.slot = a.at(0).get<std::uint16_t>();
  k.prob_bin = a.at(1).get<std::int16_t>();
  k.len_bin = a.at(2).get<std::uint16_t>();
  k.prefix_bin = a.at(3).get<std::uint16_t>();
  if (a.size() > 4) k.context = parse_hex64(a.at(4).get<std::string>());
  return k;
}

}  // namespace

json FeatureConfig::to_json() const {
  return {{"prob_bins", prob_bins},
          {"max_len_bin", max_len_bin},
          {"max_prefix_bin", max_prefix_bin},
          {"exact_context", exact_context}};
}

FeatureConfig FeatureConfig::from_json(const json& j) {
  FeatureConfig f;
  f.prob_bins = j.value("prob_bins", f.prob_bins);
  f.max_len_bin = j.value("max_len_bin", f.max_len_bin);
  f.max_prefix_bin = j.value("max_prefix_bin", f.max_prefix_bin);
  f.exact_context = j.value("exact_context", f.exact_context);
  if (f.prob_bins < 1 || f.max_len_bin < 1 || f.max_prefix_bin < 0) throw ConfigError("bad feature config");
  return f;
}

std::vector<QKey> action_keys(const EnvState& state, const FeatureConfig& features) {
  const auto prefix_bin =
      static_cast<std::uint16_t>(std::min<std::size_t>(state.current_prefix.size(), static_cast<std::size_t>(features.max_prefix_bin)));
  const std::uint64_t ctx = features.exact_context ? fnv1a(state.typed) | 1ULL : 0;
  auto describe = [&](std::uint16_t slot, const lm::Candidate* c) {
    QKey k;
    k.slot = slot;
    k.prefix_bin = prefix_bin;
    k.context = ctx;
    if (c != nullptr) {
      const int bin = static_cast<int>(std::floor(c->raw_prob * features.prob_bins));
      k.prob_bin = static_cast<std::int16_t>(std::clamp(bin, 0, features.prob_bins - 1));
      const auto len = mdp::insertion_for(*c, state.current_prefix).size();
      k.len_bin = static_cast<std::uint16_t>(std::min<std::size_t>(len, static_cast<std::size_t>(features.max_len_bin)));
    }
    return k;
  };
  std::vector<QKey> keys;
  keys.reserve(state.candidates.size() + 1);
  keys.push_back(describe(0, state.candidates.empty() ? nullptr : &state.candidates.front()));
  for (std::size_t i = 0; i < state.candidates.size(); ++i) {
    keys.push_back(describe(static_cast<std::uint16_t>(i + 1), &state.candidates[i]));
  }
  return keys;
}

double QTable::value(const QKey& key) const {
  auto it = cells_.find(key);
  return it == cells_.end() ? 0.0 : it->second.value;
}

json QTable::to_json() const {
  json entries = json::array();
  for (const auto& [k, c] : cells_) {
    json state = {{"prob_bin", k.prob_bin}, {"len_bin", k.len_bin}, {"prefix_bin", k.prefix_bin}};
    if (k.context != 0) state["context"] = hex64(k.context);
    entries.push_back({{"state", state}, {"action", action_label(k.slot)}, {"value", c.value}, {"visits", c.visits}});
  }
  return {{"features_config", features_.to_json()}, {"entries", entries}};
}

QTable QTable::from_json(const json& j) {
  QTable t(FeatureConfig::from_json(j.at("features_config")));
  for (const auto& e : j.at("entries")) {
    const auto& s = e.at("state");
    QKey k;
    k.slot = parse_action_label(e.at("action").get<std::string>());
    k.prob_bin = s.at("prob_bin").get<std::int16_t>();
    k.len_bin = s.at("len_bin").get<std::uint16_t>();
    k.prefix_bin = s.at("prefix_bin").get<std::uint16_t>();
    if (s.contains("context")) k.context = parse_hex64(s.at("context").get<std::string>());
    const double v = e.at("value").get<double>();
    if (!std::isfinite(v)) throw FormatError("non-finite Q value");
    t.cells_[k] = {v, e.value("visits", std::uint64_t{0})};
  }
  return t;
}

void QTable::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << to_json().dump(1) << '\n';
}

QTable QTable::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return from_json(json::parse(in));
}

AgentAction greedy_act(const QTable& table, const EnvState& state) {
  const auto keys = action_keys(state, table.features());
  std::size_t best = 0;
  double best_v = table.value(keys[0]);
  for (std::size_t i = 1; i < keys.size(); ++i) {
    const double v = table.value(keys[i]);
    if (v > best_v) {
      best_v = v;
      best = i;
    }
  }
  return best == 0 ? AgentAction::wait() : AgentAction::suggest(best - 1);
}

// ---------------------------------------------------------------------------
// Online Q-learning

void TrainConfig::validate() const {
  if (!(gamma >= 0.0 && gamma <= 1.0)) throw ConfigError("gamma must lie in [0, 1]");
  if (steps < 1) throw ConfigError("steps must be at least 1");
  if (!(learning_rate > 0.0 && learning_rate <= 1.0)) throw ConfigError("learning rate must lie in (0, 1]");
  auto unit = [](double x) { return x >= 0.0 && x <= 1.0; };
  if (!unit(eps_start) || !unit(eps_end) || !unit(eps_decay_fraction)) throw ConfigError("bad epsilon schedule");
}

double TrainConfig::epsilon_at(std::size_t step) const {
  const double horizon = eps_decay_fraction * static_cast<double>(steps);
  if (horizon <= 0.0 || static_cast<double>(step) >= horizon) return eps_end;
  return eps_start + (eps_end - eps_start) * (static_cast<double>(step) / horizon);
}

namespace {

const SentenceRecord& sample_target(std::span<const SentenceRecord> targets, std::mt19937_64& rng) {
  std::uniform_int_distribution<std::size_t> pick(0, targets.size() - 1);
  return targets[pick(rng)];
}

}  // namespace

TrainResult q_learning_train(const mdp::Environment& env, std::span<const SentenceRecord> targets,
                             const TrainConfig& config) {
  config.validate();
  if (targets.empty()) throw ConfigError("no training sentences");
  TrainResult result{QTable(config.features), {}};
  QTable& q = result.table;
  std::mt19937_64 rng(config.seed);
  std::uniform_real_distribution<double> coin(0.0, 1.0);

  std::size_t step = 0;
  double window_return = 0.0;
  std::size_t window_episodes = 0;
  while (step < config.steps) {
    const auto& target = sample_target(targets, rng);
    if (target.text.empty()) continue;
    auto state = env.initial_state();
    auto keys = action_keys(state, config.features);
    double episode_return = 0.0;
    bool done = false;
    while (!done && step < config.steps) {
      const double eps = config.epsilon_at(step);
      AgentAction action;
      if (coin(rng) < eps) {
        action = random_act(state, rng);
      } else {
        action = greedy_act(q, state);
      }
      const std::size_t slot = action.is_wait() ? 0 : action.index + 1;
      auto [next, outcome] = env.step(state, action, target);
      done = outcome.done;
      episode_return += outcome.reward;

      std::vector<QKey> next_keys;
      double bootstrap = 0.0;
      if (!done) {
        next_keys = action_keys(next, config.features);
        bootstrap = q.value(next_keys[0]);
        for (std::size_t i = 1; i < next_keys.size(); ++i) bootstrap = std::max(bootstrap, q.value(next_keys[i]));
      }
      auto& cell = q.cell(keys[slot]);
      const double td_target = outcome.reward + config.gamma * bootstrap;
      cell.value += config.learning_rate * (td_target - cell.value);
      ++cell.visits;
      if (!std::isfinite(cell.value)) {
        std::ostringstream os;
        os << "non-finite Q update at step " << step << " (reward " << outcome.reward << ", typed '" << state.typed
           << "')";
        throw TrainingError(os.str());
      }

      state = std::move(next);
      keys = std::move(next_keys);
      ++step;
      if (done) {
        window_return += episode_return;
        ++window_episodes;
      }
      if (config.log_every > 0 && step % config.log_every == 0) {
        result.curve.push_back({step, eps, window_episodes ? window_return / static_cast<double>(window_episodes) : 0.0,
                                window_episodes});
        window_return = 0.0;
        window_episodes = 0;
      }
    }
  }
  return result;
}

// ---------------------------------------------------------------------------
// Offline data and fitted Q iteration

double OfflineDataset::explored_fraction() const {
  if (transitions.empty()) return 0.0;
  std::size_t n = 0;
  for (const auto& t : transitions) n += t.explored ? 1 : 0;
  return static_cast<double>(n) / static_cast<double>(transitions.size());
}

void OfflineDataset::save_jsonl(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << json{{"type", "header"},
              {"trajectories", trajectories},
              {"collection_policy", collection_policy},
              {"exploration_rate", exploration_rate},
              {"seed", seed},
              {"features_config", features.to_json()}}
             .dump()
      << '\n';
  for (const auto& t : transitions) {
    json next = json::array();
    for (const auto& k : t.next_keys) next.push_back(key_array(k));
    out << json{{"episode", t.episode}, {"t", t.t},         {"key", key_array(t.key)},
                {"reward", t.reward},   {"next", next},     {"done", t.done},
                {"explored", t.explored}}
               .dump()
        << '\n';
  }
}

OfflineDataset OfflineDataset::load_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  OfflineDataset d;
  std::string line;
  if (!std::getline(in, line)) throw FormatError("empty dataset file");
  const auto header = json::parse(line);
  if (header.value("type", "") != "header") throw FormatError("dataset header missing");
  d.trajectories = header.at("trajectories").get<std::size_t>();
  d.collection_policy = header.at("collection_policy").get<std::string>();
  d.exploration_rate = header.at("exploration_rate").get<double>();
  d.seed = header.at("seed").get<std::uint64_t>();
  d.features = FeatureConfig::from_json(header.at("features_config"));
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto j = json::parse(line);
    Transition t;
    t.episode = j.at("episode").get<std::uint32_t>();
    t.t = j.at("t").get<std::uint32_t>();
    t.key = key_from_array(j.at("key"));
    t.reward = j.at("reward").get<double>();
    for (const auto& k : j.at("next")) t.next_keys.push_back(key_from_array(k));
    t.done = j.at("done").get<bool>();
    t.explored = j.at("explored").get<bool>();
    d.transitions.push_back(std::move(t));
  }
  return d;
}

OfflineDataset collect_offline(mdp::Policy& base, double exploration_rate, std::size_t trajectories,
                               const mdp::Environment& env, std::span<const SentenceRecord> targets,
                               std::uint64_t seed, const FeatureConfig& features) {
  if (!(exploration_rate >= 0.0 && exploration_rate <= 1.0)) throw ConfigError("exploration rate must lie in [0, 1]");
  if (targets.empty()) throw ConfigError("no target sentences");
  OfflineDataset d;
  d.trajectories = trajectories;
  d.collection_policy = base.name();
  d.exploration_rate = exploration_rate;
  d.seed = seed;
  d.features = features;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> coin(0.0, 1.0);

  for (std::size_t ep = 0; ep < trajectories; ++ep) {
    const auto& target = sample_target(targets, rng);
    if (target.text.empty()) continue;
    auto state = env.initial_state();
    auto keys = action_keys(state, features);
    for (std::uint32_t t = 0;; ++t) {
      AgentAction action = base.act(state, target);
      bool explored = false;
      if (coin(rng) < exploration_rate) {
        action = random_act(state, rng);
        explored = true;
      }
      auto [next, outcome] = env.step(state, action, target);
      Transition tr;
      tr.key = keys[action.is_wait() ? 0 : action.index + 1];
      tr.reward = outcome.reward;
      tr.done = outcome.done;
      tr.explored = explored;
      tr.episode = static_cast<std::uint32_t>(ep);
      tr.t = t;
      if (!outcome.done) tr.next_keys = action_keys(next, features);
      keys = tr.next_keys;
      d.transitions.push_back(std::move(tr));
      state = std::move(next);
      if (outcome.done) break;
    }
  }
  return d;
}

QTable fitted_q_train(const OfflineDataset& dataset, const TrainConfig& config) {
  if (dataset.transitions.empty()) throw ConfigError("offline dataset is empty");
  if (!(config.gamma >= 0.0 && config.gamma <= 1.0)) throw ConfigError("gamma must lie in [0, 1]");

  std::map<QKey, std::size_t> index;
  for (const auto& t : dataset.transitions) index.emplace(t.key, 0);
  std::size_t next_id = 0;
  for (auto& [k, id] : index) id = next_id++;
  const std::size_t n = index.size();

  struct Row {
    std::size_t key;
    double reward;
    std::vector<std::ptrdiff_t> next;  // -1: never taken in the data, worth 0
    bool done;
  };
  std::vector<Row> rows;
  rows.reserve(dataset.transitions.size());
  std::vector<std::uint64_t> counts(n, 0);
  for (const auto& t : dataset.transitions) {
    Row r{index.at(t.key), t.reward, {}, t.done};
    for (const auto& k : t.next_keys) {
      auto it = index.find(k);
      r.next.push_back(it == index.end() ? -1 : static_cast<std::ptrdiff_t>(it->second));
    }
    ++counts[r.key];
    rows.push_back(std::move(r));
  }

  std::vector<double> q(n, 0.0);
  std::vector<double> acc(n);
  for (std::size_t iter = 0; iter < config.fitted_max_iters; ++iter) {
    std::fill(acc.begin(), acc.end(), 0.0);
    for (const auto& r : rows) {
      double boot = 0.0;
      if (!r.done && !r.next.empty()) {
        boot = r.next[0] < 0 ? 0.0 : q[static_cast<std::size_t>(r.next[0])];
        for (std::size_t i = 1; i < r.next.size(); ++i) {
          boot = std::max(boot, r.next[i] < 0 ? 0.0 : q[static_cast<std::size_t>(r.next[i])]);
        }
      }
      acc[r.key] += r.reward + config.gamma * boot;
    }
    double delta = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double v = acc[i] / static_cast<double>(counts[i]);
      if (!std::isfinite(v)) throw TrainingError("non-finite value in fitted Q iteration");
      delta = std::max(delta, std::abs(v - q[i]));
      q[i] = v;
    }
    if (delta < config.fitted_tol) break;
  }

  QTable table(dataset.features);
  for (const auto& [k, id] : index) table.cell(k) = {q[id], counts[id]};
  return table;
}

// ---------------------------------------------------------------------------

namespace {

double parse_number(std::string_view text, std::string_view what) {
  double v = 0.0;
  const auto [p, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || p != text.data() + text.size()) {
    throw ConfigError("bad " + std::string(what) + ": '" + std::string(text) + "'");
  }
  return v;
}

std::uint64_t parse_seed(std::string_view text) {
  std::uint64_t v = 0;
  const auto [p, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || p != text.data() + text.size()) throw ConfigError("bad seed: '" + std::string(text) + "'");
  return v;
}

}  // namespace

PolicySpec PolicySpec::parse(std::string_view text) {
  PolicySpec s;
  const auto colon = text.find(':');
  const auto head = text.substr(0, colon);
  const auto arg = colon == std::string_view::npos ? std::string_view{} : text.substr(colon + 1);
  if (head == "oracle") {
    s.kind = Kind::Oracle;
  } else if (head == "random") {
    s.kind = Kind::Random;
    if (!arg.empty()) s.seed = parse_seed(arg);
  } else if (head == "threshold") {
    s.kind = Kind::Threshold;
    if (arg.empty()) throw ConfigError("threshold policy needs a value, e.g. threshold:0.3");
    s.tau = parse_number(arg, "threshold");
    if (!(s.tau >= 0.0 && s.tau <= 1.0)) throw ConfigError("threshold must lie in [0, 1]");
  } else if (head == "wait") {
    s.kind = Kind::Wait;
  } else if (head == "q") {
    s.kind = Kind::QTable;
    if (arg.empty()) throw ConfigError("q policy needs a table path, e.g. q:table.json");
    s.table_path = std::string(arg);
  } else if (head == "dp") {
    s.kind = Kind::Dp;
  } else {
    throw ConfigError("unknown policy spec: " + std::string(text));
  }
  return s;
}

std::string PolicySpec::label() const {
  switch (kind) {
    case Kind::Oracle:
      return "oracle";
    case Kind::Random:
      return "random";
    case Kind::Threshold: {
      std::ostringstream os;
      os << "threshold:" << tau;
      return os.str();
    }
    case Kind::Wait:
      return "wait";
    case Kind::QTable:
      return "q:" + table_path;
    case Kind::Dp:
      return "dp";
  }
  return "?";
}

}  // namespace inlineac::agents
