#include "inlineac/studysvc.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "inlineac/agents.hpp"
#include "inlineac/corpus.hpp"
#include "inlineac/eval.hpp"

namespace inlineac::studysvc {

using nlohmann::json;

std::string_view to_string(Condition c) {
  return c == Condition::WithSuggestions ? "with" : "without";
}

Condition condition_from_string(std::string_view s) {
  if (s == "with") return Condition::WithSuggestions;
  if (s == "without") return Condition::WithoutSuggestions;
  throw FormatError("unknown condition: " + std::string(s));
}

std::string suggested_words(const mdp::Candidate& c) {
  std::string out;
  for (const auto& w : c.full_words) {
    if (!out.empty()) out += ' ';
    out += w;
  }
  return out;
}

std::uint64_t context_hash(std::string_view context) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : context) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

json Session::to_json() const {
  json inst = json::array();
  for (const auto& i : instances) inst.push_back({{"prompt", i.prompt}, {"condition", to_string(i.condition)}});
  json blocks = json::array();
  for (auto c : block_order) blocks.push_back(to_string(c));
  return {{"id", id},
          {"participant", participant},
          {"prompts", prompts},
          {"block_order", blocks},
          {"instances", inst},
          {"policy", policy},
          {"seed", seed},
          {"status", status == SessionStatus::Active ? "active" : "complete"},
          {"cursor", cursor},
          {"typed", typed}};
}

std::string KeyEvent::key_label() const {
  switch (kind) {
    case KeyKind::Char:
      return std::string(1, ch);
    case KeyKind::Accept:
      return "Tab";
    case KeyKind::Backspace:
      return "Backspace";
    case KeyKind::Dismiss:
      return "Escape";
  }
  return {};
}

json KeyEvent::to_json() const {
  json j = {{"seq", seq}, {"timestamp_ms", timestamp_ms}, {"key", key_label()}};
  if (suggestion_shown) {
    j["suggestion"] = {{"completion", suggestion_shown->completion}, {"insertion", suggestion_shown->insertion}};
  } else {
    j["suggestion"] = nullptr;
  }
  return j;
}

KeyEvent KeyEvent::from_json(const json& j) {
  KeyEvent e;
  try {
    e.seq = j.at("seq").get<std::uint64_t>();
    e.timestamp_ms = j.at("timestamp_ms").get<double>();
    const auto key = j.at("key").get<std::string>();
    if (key == "Tab") {
      e.kind = KeyKind::Accept;
    } else if (key == "Backspace") {
      e.kind = KeyKind::Backspace;
    } else if (key == "Escape") {
      e.kind = KeyKind::Dismiss;
    } else if (key.size() == 1) {
      e.kind = KeyKind::Char;
      e.ch = key[0];
    } else {
      throw FormatError("unsupported key: " + key);
    }
    if (j.contains("suggestion") && !j.at("suggestion").is_null()) {
      const auto& s = j.at("suggestion");
      ShownSuggestion shown;
      shown.completion = s.at("completion").get<std::string>();
      if (s.contains("insertion")) shown.insertion = s.at("insertion").get<std::string>();
      e.suggestion_shown = std::move(shown);
    }
  } catch (const json::exception& ex) {
    throw FormatError(std::string("malformed key event: ") + ex.what());
  }
  return e;
}

namespace {

struct Cursor {
  std::optional<double> last_ts;
  std::optional<double> anchor_ts;  // last buffer-changing key in this instance
  bool word_dirty = false;
};

std::vector<std::string> split_words(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream is(s);
  for (std::string w; is >> w;) out.push_back(w);
  return out;
}

// Validates `e` against the session state, fills the derived fields and
// advances the session. Leaves everything untouched when it throws.
void apply_event(Session& s, Cursor& c, KeyEvent& e, mdp::BoundaryMode mode) {
  if (s.status == SessionStatus::Complete) throw SessionError("session " + s.id + " is complete");
  if (c.last_ts && e.timestamp_ms < *c.last_ts) {
    throw OrderingError("timestamp " + std::to_string(e.timestamp_ms) + " precedes previous event");
  }
  const auto& inst = s.instances[s.cursor];
  const std::string& prompt = s.prompts[inst.prompt];
  e.session_id = s.id;
  e.instance = s.cursor;
  e.condition = inst.condition;
  e.context = s.typed;

  if (e.suggestion_shown) {
    if (inst.condition == Condition::WithoutSuggestions) {
      throw SessionError("suggestion reported in a without-suggestions block");
    }
    mdp::Candidate cand;
    cand.completion = e.suggestion_shown->completion;
    cand.full_words = split_words(cand.completion);
    const auto prefix = lm::split_context(s.typed).prefix;
    std::string insertion;
    try {
      insertion = mdp::insertion_for(cand, prefix);
    } catch (const ContractViolation&) {
      throw SessionError("suggestion '" + cand.completion + "' does not extend the typed prefix");
    }
    if (!e.suggestion_shown->insertion.empty() && e.suggestion_shown->insertion != insertion) {
      throw SessionError("insertion does not match completion '" + cand.completion + "'");
    }
    e.suggestion_shown->insertion = insertion;
    e.suggestion_correct = mdp::accepts(prompt, s.typed, insertion, mode);
  }

  bool dirty = c.word_dirty;
  std::string typed = s.typed;
  switch (e.kind) {
    case KeyKind::Accept:
      if (!e.suggestion_shown || e.suggestion_shown->insertion.empty()) {
        throw SessionError("accept key with no suggestion shown");
      }
      typed += e.suggestion_shown->insertion;
      e.accepted = true;
      e.excluded = dirty;
      if (std::any_of(e.suggestion_shown->insertion.begin(), e.suggestion_shown->insertion.end(),
                      [](char ch) { return !corpus::is_word_char(ch); })) {
        dirty = false;
      }
      break;
    case KeyKind::Char:
      if (e.ch == '\0') throw SessionError("empty character key");
      typed.push_back(e.ch);
      e.excluded = dirty;
      if (!corpus::is_word_char(e.ch)) dirty = false;
      break;
    case KeyKind::Backspace:
      if (typed.empty()) throw SessionError("backspace on an empty buffer");
      typed.pop_back();
      e.excluded = true;
      dirty = true;
      break;
    case KeyKind::Dismiss:
      e.excluded = true;
      break;
  }

  // Commit.
  c.last_ts = e.timestamp_ms;
  if (e.kind != KeyKind::Dismiss) {
    if (c.anchor_ts) e.interval_ms = e.timestamp_ms - *c.anchor_ts;
    c.anchor_ts = e.timestamp_ms;
  }
  c.word_dirty = dirty;
  s.typed = std::move(typed);
  if (s.typed == prompt) {
    ++s.cursor;
    s.typed.clear();
    c.anchor_ts.reset();
    c.word_dirty = false;
    if (s.cursor == s.instances.size()) s.status = SessionStatus::Complete;
  }
}

bool same_event(const KeyEvent& a, const KeyEvent& b) {
  return a.seq == b.seq && a.timestamp_ms == b.timestamp_ms && a.kind == b.kind && a.ch == b.ch &&
         a.suggestion_shown.has_value() == b.suggestion_shown.has_value() &&
         (!a.suggestion_shown || a.suggestion_shown->completion == b.suggestion_shown->completion);
}

Session session_from_meta(const json& j) {
  Session s;
  s.id = j.at("id").get<std::string>();
  s.participant = j.at("participant").get<std::string>();
  s.prompts = j.at("prompts").get<std::vector<std::string>>();
  for (const auto& b : j.at("block_order")) s.block_order.push_back(condition_from_string(b.get<std::string>()));
  for (const auto& i : j.at("instances")) {
    s.instances.push_back({i.at("prompt").get<std::size_t>(), condition_from_string(i.at("condition").get<std::string>())});
  }
  s.policy = j.at("policy").get<std::string>();
  s.seed = j.at("seed").get<std::uint64_t>();
  return s;
}

double now_ms() {
  using namespace std::chrono;
  return duration<double, std::milli>(steady_clock::now().time_since_epoch()).count();
}

}  // namespace

// ---------------------------------------------------------------------------
// Service

struct StudyService::Live {
  mutable std::mutex mu;
  Session session;
  Cursor cursor;
  std::vector<KeyEvent> events;
  std::map<std::uint64_t, std::size_t> by_seq;
  std::unique_ptr<mdp::Policy> policy;
  std::filesystem::path file;
};

StudyService::StudyService(const lm::LanguageModel& model, ServiceConfig config)
    : model_(&model), config_(std::move(config)), env_(model, config_.env) {
  if (!config_.log_dir.empty()) {
    std::filesystem::create_directories(config_.log_dir);
    load_logs();
  }
}

StudyService::~StudyService() = default;

namespace {

std::unique_ptr<mdp::Policy> build_policy(const std::string& spec, std::uint64_t seed, mdp::BoundaryMode mode) {
  return eval::make_named_policy(agents::PolicySpec::parse(spec), mode).make(seed);
}

}  // namespace

Session StudyService::create_session(std::string participant, std::vector<std::string> prompts, std::string policy,
                                     std::uint64_t seed) {
  if (prompts.empty()) throw ConfigError("prompt list is empty");
  const corpus::FilterConfig filter;
  for (const auto& p : prompts) {
    if (corpus::normalize(p) != p) throw ConfigError("prompt is not normalized: '" + p + "'");
    const std::string one[] = {p};
    if (corpus::filter_corpus(one, filter).kept.size() != 1) {
      throw ConfigError("prompt fails the corpus filters: '" + p + "'");
    }
  }
  if (policy.empty()) policy = config_.default_policy;

  auto live = std::make_unique<Live>();
  live->policy = build_policy(policy, seed, config_.env.boundary);
  Session& s = live->session;
  s.participant = std::move(participant);
  s.prompts = std::move(prompts);
  s.policy = std::move(policy);
  s.seed = seed;

  std::mt19937_64 rng(seed);
  const bool with_first = std::bernoulli_distribution(0.5)(rng);
  s.block_order = with_first ? std::vector{Condition::WithSuggestions, Condition::WithoutSuggestions}
                             : std::vector{Condition::WithoutSuggestions, Condition::WithSuggestions};
  for (auto cond : s.block_order) {
    std::vector<std::size_t> order(s.prompts.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    for (auto i : order) s.instances.push_back({i, cond});
  }

  std::lock_guard lock(mu_);
  std::ostringstream id;
  id << 's' << std::setw(6) << std::setfill('0') << next_id_++;
  s.id = id.str();
  if (!config_.log_dir.empty()) {
    live->file = config_.log_dir / (s.id + ".jsonl");
    json meta = s.to_json();
    meta.erase("status");
    meta.erase("cursor");
    meta.erase("typed");
    meta["type"] = "session";
    append(*live, meta);
  }
  Session out = s;
  sessions_.emplace(out.id, std::move(live));
  return out;
}

StudyService::Live& StudyService::live(std::string_view id) const {
  std::lock_guard lock(mu_);
  const auto it = sessions_.find(id);
  if (it == sessions_.end()) throw UnknownSession("unknown session: " + std::string(id));
  return *it->second;
}

Session StudyService::session(std::string_view id) const {
  auto& s = live(id);
  std::lock_guard lock(s.mu);
  return s.session;
}

std::vector<std::string> StudyService::session_ids() const {
  std::lock_guard lock(mu_);
  std::vector<std::string> ids;
  for (const auto& [id, _] : sessions_) ids.push_back(id);
  return ids;
}

void StudyService::append(const Live& s, const json& line) const {
  if (s.file.empty()) return;
  std::ofstream os(s.file, std::ios::app);
  if (!os) throw SessionError("cannot append to " + s.file.string());
  os << line.dump() << '\n';
}

ServedSuggestion StudyService::suggest(std::string_view id, std::string_view context) {
  auto& s = live(id);
  std::lock_guard lock(s.mu);
  if (s.session.status != SessionStatus::Active) throw SessionError("session " + s.session.id + " is not active");
  const auto& inst = s.session.instances[s.session.cursor];
  ServedSuggestion out;
  if (inst.condition == Condition::WithSuggestions) {
    const auto state = env_.make_state(std::string(context));
    const auto target = corpus::make_record(s.session.prompts[inst.prompt]);
    const auto action = s.policy->act(state, target);
    if (!action.is_wait() && action.index < state.candidates.size()) {
      out.candidate = state.candidates[action.index];
      out.insertion = mdp::insertion_for(*out.candidate, state.current_prefix);
    }
  }
  json line = {{"type", "suggest"},
               {"server_ms", now_ms()},
               {"instance", s.session.cursor},
               {"context", context},
               {"completion", out.candidate ? json(suggested_words(*out.candidate)) : json(nullptr)},
               {"insertion", out.insertion}};
  append(s, line);
  return out;
}

void StudyService::apply(Live& s, const KeyEvent& event, bool persist) {
  KeyEvent e = event;
  apply_event(s.session, s.cursor, e, config_.env.boundary);
  s.by_seq.emplace(e.seq, s.events.size());
  if (persist) {
    json line = e.to_json();
    line["type"] = "event";
    line["server_ms"] = now_ms();
    append(s, line);
  }
  s.events.push_back(std::move(e));
}

EventAck StudyService::record_events(std::string_view id, std::span<const KeyEvent> events) {
  auto& s = live(id);
  std::lock_guard lock(s.mu);
  EventAck ack;
  for (const auto& e : events) {
    const std::uint64_t last = s.events.empty() ? 0 : s.events.back().seq;
    if (!s.events.empty() && e.seq <= last) {
      const auto it = s.by_seq.find(e.seq);
      if (it != s.by_seq.end() && same_event(s.events[it->second], e)) {
        ack.duplicates.push_back(e.seq);
        continue;
      }
      throw OrderingError("event seq " + std::to_string(e.seq) + " is out of order (last applied " +
                          std::to_string(last) + ")");
    }
    apply(s, e, true);
    ack.applied.push_back(e.seq);
  }
  ack.instance = s.session.cursor;
  ack.typed = s.session.typed;
  ack.status = s.session.status;
  return ack;
}

SessionLog StudyService::snapshot(std::string_view id) const {
  auto& s = live(id);
  std::lock_guard lock(s.mu);
  return {s.session, s.events};
}

std::vector<SessionLog> StudyService::snapshot_all() const {
  std::vector<SessionLog> out;
  for (const auto& id : session_ids()) out.push_back(snapshot(id));
  return out;
}

void StudyService::load_logs() {
  if (config_.log_dir.empty() || !std::filesystem::exists(config_.log_dir)) return;
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(config_.log_dir)) {
    if (entry.path().extension() == ".jsonl") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  for (const auto& path : files) {
    std::ifstream is(path);
    std::string line;
    if (!std::getline(is, line)) continue;
    auto live = std::make_unique<Live>();
    const auto meta = json::parse(line);
    if (meta.value("type", "") != "session") throw FormatError(path.string() + ": missing session header");
    live->session = session_from_meta(meta);
    live->policy = build_policy(live->session.policy, live->session.seed, config_.env.boundary);
    while (std::getline(is, line)) {
      if (line.empty()) continue;
      const auto j = json::parse(line);
      if (j.value("type", "") == "event") apply(*live, KeyEvent::from_json(j), false);
    }
    live->file = path;
    const std::string id = live->session.id;
    std::lock_guard lock(mu_);
    if (id.size() > 1 && id[0] == 's') {
      try {
        next_id_ = std::max<std::size_t>(next_id_, std::stoull(id.substr(1)) + 1);
      } catch (const std::exception&) {
      }
    }
    sessions_.insert_or_assign(id, std::move(live));
  }
}

SessionLog read_session_log(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw FormatError("cannot open " + path.string());
  std::string line;
  if (!std::getline(is, line)) throw FormatError(path.string() + ": empty log");
  SessionLog log;
  const auto meta = json::parse(line);
  if (meta.value("type", "") != "session") throw FormatError(path.string() + ": missing session header");
  log.session = session_from_meta(meta);
  Cursor c;
  // Modes other than word boundaries only affect correctness flags; logs are
  // always analysed with word boundaries.
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto j = json::parse(line);
    if (j.value("type", "") != "event") continue;
    auto e = KeyEvent::from_json(j);
    apply_event(log.session, c, e, mdp::BoundaryMode::Word);
    log.events.push_back(std::move(e));
  }
  return log;
}

std::vector<SessionLog> read_session_logs(const std::filesystem::path& dir) {
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (entry.path().extension() == ".jsonl") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  std::vector<SessionLog> out;
  for (const auto& f : files) out.push_back(read_session_log(f));
  return out;
}

std::vector<std::string> reconstruct_texts(const SessionLog& log) {
  Session s = log.session;
  s.cursor = 0;
  s.typed.clear();
  s.status = SessionStatus::Active;
  Cursor c;
  std::vector<std::string> texts;
  for (const auto& original : log.events) {
    KeyEvent e = original;
    e.suggestion_correct = false;
    e.accepted = false;
    e.excluded = false;
    e.interval_ms.reset();
    const auto before = s.cursor;
    const std::string prompt = s.prompts[s.instances[before].prompt];
    apply_event(s, c, e, mdp::BoundaryMode::Word);
    if (s.cursor != before) texts.push_back(prompt);
  }
  if (s.status == SessionStatus::Active && !s.typed.empty()) texts.push_back(s.typed);
  return texts;
}

// ---------------------------------------------------------------------------
// Analysis

PairingResult paired_samples(std::span<const SessionLog> logs) {
  PairingResult out;
  struct Acc {
    double sum = 0.0;
    std::size_t n = 0;
  };
  // With-condition groups also split by suggestion length and correctness, so
  // repeated contexts under different prompts stay distinct.
  using WithKey = std::tuple<std::string, std::string, std::size_t, bool>;
  for (const auto& log : logs) {
    std::map<WithKey, Acc> with;
    std::map<std::pair<std::string, std::string>, Acc> without;
    for (const auto& e : log.events) {
      if (e.kind != KeyKind::Char) continue;
      if (e.excluded) {
        ++out.excluded;
        continue;
      }
      if (!e.interval_ms || *e.interval_ms <= 0.0) continue;
      if (e.condition == Condition::WithSuggestions) {
        if (!e.suggestion_shown) continue;
        auto& a = with[{e.context, e.key_label(), e.suggestion_shown->insertion.size(), e.suggestion_correct}];
        a.sum += *e.interval_ms;
        ++a.n;
      } else {
        auto& a = without[{e.context, e.key_label()}];
        a.sum += *e.interval_ms;
        ++a.n;
      }
    }
    std::set<std::pair<std::string, std::string>> used;
    for (const auto& [k, a] : with) {
      const auto& [context, key, len, correct] = k;
      const auto it = without.find({context, key});
      if (it == without.end()) {
        ++out.unmatched_with;
        continue;
      }
      used.insert(it->first);
      PairedSample p;
      p.context_hash = context_hash(context);
      p.key = key;
      p.dt_with_ms = a.sum / static_cast<double>(a.n);
      p.dt_without_ms = it->second.sum / static_cast<double>(it->second.n);
      p.load_ms = p.dt_with_ms - p.dt_without_ms;
      p.suggestion_length = len;
      p.suggestion_correct = correct;
      out.samples.push_back(std::move(p));
    }
    out.unmatched_without += without.size() - used.size();
  }
  return out;
}

namespace {

struct OlsFit {
  std::vector<double> coef;
  std::vector<double> se;
};

// Least squares through normal equations; p is tiny.
OlsFit ols(const std::vector<std::vector<double>>& x, const std::vector<double>& y) {
  const std::size_t n = y.size();
  const std::size_t p = x.empty() ? 0 : x[0].size();
  if (n <= p) throw EstimationError("not enough samples for regression");
  std::vector<std::vector<double>> a(p, std::vector<double>(2 * p, 0.0));
  std::vector<double> xty(p, 0.0);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t i = 0; i < p; ++i) {
      xty[i] += x[r][i] * y[r];
      for (std::size_t j = 0; j < p; ++j) a[i][j] += x[r][i] * x[r][j];
    }
  }
  for (std::size_t i = 0; i < p; ++i) a[i][p + i] = 1.0;
  for (std::size_t col = 0; col < p; ++col) {
    std::size_t piv = col;
    for (std::size_t r = col + 1; r < p; ++r)
      if (std::abs(a[r][col]) > std::abs(a[piv][col])) piv = r;
    if (std::abs(a[piv][col]) < 1e-12) throw EstimationError("regression design is singular");
    std::swap(a[col], a[piv]);
    const double d = a[col][col];
    for (auto& v : a[col]) v /= d;
    for (std::size_t r = 0; r < p; ++r) {
      if (r == col) continue;
      const double f = a[r][col];
      for (std::size_t j = 0; j < 2 * p; ++j) a[r][j] -= f * a[col][j];
    }
  }
  OlsFit fit;
  fit.coef.assign(p, 0.0);
  for (std::size_t i = 0; i < p; ++i)
    for (std::size_t j = 0; j < p; ++j) fit.coef[i] += a[i][p + j] * xty[j];
  double rss = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    double pred = 0.0;
    for (std::size_t i = 0; i < p; ++i) pred += x[r][i] * fit.coef[i];
    rss += (y[r] - pred) * (y[r] - pred);
  }
  const double sigma2 = rss / static_cast<double>(n - p);
  for (std::size_t i = 0; i < p; ++i) fit.se.push_back(std::sqrt(sigma2 * a[i][p + i]));
  return fit;
}

}  // namespace

LoadEstimate estimate_load(std::span<const PairedSample> samples, double char_write_ms) {
  LoadEstimate est;
  est.char_write_ms = char_write_ms;
  est.n = samples.size();
  std::set<std::size_t> lengths;
  double sum_c = 0.0, sum_w = 0.0;
  for (const auto& s : samples) {
    lengths.insert(s.suggestion_length);
    if (s.suggestion_correct) {
      ++est.n_correct;
      sum_c += s.load_ms;
    } else {
      ++est.n_incorrect;
      sum_w += s.load_ms;
    }
  }
  if (samples.size() < 4 || lengths.size() < 2) {
    throw EstimationError("need at least 4 samples over 2 distinct suggestion lengths (have " +
                          std::to_string(samples.size()) + " samples, " + std::to_string(lengths.size()) +
                          " lengths; " + std::to_string(est.n_correct) + " correct, " +
                          std::to_string(est.n_incorrect) + " incorrect)");
  }
  const double nan = std::numeric_limits<double>::quiet_NaN();
  est.mean_load_correct_ms = est.n_correct ? sum_c / static_cast<double>(est.n_correct) : nan;
  est.mean_load_incorrect_ms = est.n_incorrect ? sum_w / static_cast<double>(est.n_incorrect) : nan;

  std::vector<double> y;
  std::vector<std::vector<double>> pooled;
  std::vector<std::vector<double>> split;
  for (const auto& s : samples) {
    y.push_back(s.load_ms);
    const auto len = static_cast<double>(s.suggestion_length);
    pooled.push_back({len, 1.0});
    std::vector<double> row{len};
    if (est.n_correct) row.push_back(s.suggestion_correct ? 1.0 : 0.0);
    if (est.n_incorrect) row.push_back(s.suggestion_correct ? 0.0 : 1.0);
    split.push_back(std::move(row));
  }
  const double mean = std::accumulate(y.begin(), y.end(), 0.0) / static_cast<double>(y.size());
  double ss = 0.0;
  for (double v : y) ss += (v - mean) * (v - mean);
  est.mean_load_ms = mean;
  est.mean_load_ci_ms = 1.96 * std::sqrt(ss / static_cast<double>(y.size() - 1)) / std::sqrt(static_cast<double>(y.size()));

  const auto pf = ols(pooled, y);
  est.pooled_slope_ms = pf.coef[0];
  est.pooled_intercept_ms = pf.coef[1];
  est.pooled_intercept_ci_ms = 1.96 * pf.se[1];

  const auto sf = ols(split, y);
  est.slope_ms = sf.coef[0];
  est.slope_ci_ms = 1.96 * sf.se[0];
  std::size_t col = 1;
  est.intercept_correct_ms = est.intercept_correct_ci_ms = nan;
  est.intercept_incorrect_ms = est.intercept_incorrect_ci_ms = nan;
  if (est.n_correct) {
    est.intercept_correct_ms = sf.coef[col];
    est.intercept_correct_ci_ms = 1.96 * sf.se[col];
    ++col;
  }
  if (est.n_incorrect) {
    est.intercept_incorrect_ms = sf.coef[col];
    est.intercept_incorrect_ci_ms = 1.96 * sf.se[col];
  }

  est.alpha_hat = est.slope_ms / char_write_ms;
  est.alpha_ci = est.slope_ci_ms / char_write_ms;
  est.beta_hat = est.pooled_intercept_ms / char_write_ms;
  est.beta_ci = est.pooled_intercept_ci_ms / char_write_ms;
  est.beta_hat_correct = est.intercept_correct_ms / char_write_ms;
  est.beta_correct_ci = est.intercept_correct_ci_ms / char_write_ms;
  est.beta_hat_incorrect = est.intercept_incorrect_ms / char_write_ms;
  est.beta_incorrect_ci = est.intercept_incorrect_ci_ms / char_write_ms;
  return est;
}

json LoadEstimate::to_json() const {
  auto num = [](double v) { return std::isfinite(v) ? json(v) : json(nullptr); };
  return {{"alpha_hat", num(alpha_hat)},
          {"alpha_ci95", num(alpha_ci)},
          {"beta_hat", num(beta_hat)},
          {"beta_ci95", num(beta_ci)},
          {"beta_hat_correct", num(beta_hat_correct)},
          {"beta_correct_ci95", num(beta_correct_ci)},
          {"beta_hat_incorrect", num(beta_hat_incorrect)},
          {"beta_incorrect_ci95", num(beta_incorrect_ci)},
          {"slope_ms", num(slope_ms)},
          {"intercept_correct_ms", num(intercept_correct_ms)},
          {"intercept_incorrect_ms", num(intercept_incorrect_ms)},
          {"pooled_slope_ms", num(pooled_slope_ms)},
          {"pooled_intercept_ms", num(pooled_intercept_ms)},
          {"mean_load_ms", num(mean_load_ms)},
          {"mean_load_ci95_ms", num(mean_load_ci_ms)},
          {"mean_load_correct_ms", num(mean_load_correct_ms)},
          {"mean_load_incorrect_ms", num(mean_load_incorrect_ms)},
          {"n", n},
          {"n_correct", n_correct},
          {"n_incorrect", n_incorrect},
          {"char_write_ms", char_write_ms}};
}

FatigueCurves fatigue_curve(std::span<const SessionLog> logs, const FatigueBinning& binning) {
  if (binning.width == 0) throw ConfigError("fatigue bin width must be positive");
  struct Tally {
    std::size_t n = 0;
    std::size_t accepted = 0;
  };
  std::map<std::size_t, Tally> all;
  std::map<std::size_t, Tally> incorrect;
  for (const auto& log : logs) {
    std::size_t past = 0;
    std::size_t past_wrong = 0;
    for (const auto& e : log.events) {
      if (e.condition != Condition::WithSuggestions || !e.suggestion_shown) continue;
      if (e.kind != KeyKind::Char && e.kind != KeyKind::Accept) continue;
      if (e.suggestion_correct) {
        auto& a = all[past / binning.width];
        auto& b = incorrect[past_wrong / binning.width];
        ++a.n;
        ++b.n;
        if (e.accepted) {
          ++a.accepted;
          ++b.accepted;
        }
      } else {
        ++past_wrong;
      }
      ++past;
    }
  }
  auto to_buckets = [&](const std::map<std::size_t, Tally>& m) {
    std::vector<FatigueBucket> out;
    for (const auto& [bin, t] : m) {
      FatigueBucket b;
      b.bin_lo = bin * binning.width;
      b.bin_hi = (bin + 1) * binning.width;
      b.n = t.n;
      b.rate = static_cast<double>(t.accepted) / static_cast<double>(t.n);
      b.ci95 = 1.96 * std::sqrt(b.rate * (1.0 - b.rate) / static_cast<double>(t.n));
      out.push_back(b);
    }
    return out;
  };
  return {to_buckets(all), to_buckets(incorrect)};
}

}  // namespace inlineac::studysvc
