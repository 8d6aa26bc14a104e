#include "inlineac/lm.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

#include "inlineac/errors.hpp"

namespace inlineac::lm {

void LmConfig::validate() const {
  if (k < 1) throw ConfigError("k must be at least 1");
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw ConfigError("lambda must lie in [0, 1]");
  if (beam_width < k) throw ConfigError("beam_width must be at least k");
}

// ---------------------------------------------------------------------------
// Vocabulary / BigramTable

Vocabulary::Vocabulary(std::vector<std::pair<std::string, std::uint64_t>> counts) {
  std::sort(counts.begin(), counts.end());
  for (std::size_t i = 1; i < counts.size(); ++i) {
    if (counts[i].first == counts[i - 1].first) throw BuildError("duplicate vocabulary word: " + counts[i].first);
  }
  words_.reserve(counts.size());
  counts_.reserve(counts.size());
  for (auto& [w, c] : counts) {
    if (c < 1) throw BuildError("vocabulary count must be positive for " + w);
    if (w.empty()) throw BuildError("empty vocabulary word");
    words_.push_back(std::move(w));
    counts_.push_back(c);
    total_ += c;
  }
}

std::optional<WordId> Vocabulary::find(std::string_view w) const {
  auto it = std::lower_bound(words_.begin(), words_.end(), w,
                             [](const std::string& a, std::string_view b) { return std::string_view(a) < b; });
  if (it == words_.end() || *it != w) return std::nullopt;
  return static_cast<WordId>(it - words_.begin());
}

std::vector<WordId> Vocabulary::by_frequency() const {
  std::vector<WordId> ids(words_.size());
  std::iota(ids.begin(), ids.end(), WordId{0});
  std::stable_sort(ids.begin(), ids.end(), [&](WordId a, WordId b) { return counts_[a] > counts_[b]; });
  return ids;
}

void BigramTable::add(WordId prev, WordId word, std::uint64_t count) {
  rows_.at(prev).push_back({word, count});
  totals_[prev] += count;
}

void BigramTable::finalize() {
  for (auto& row : rows_) {
    std::sort(row.begin(), row.end(), [](const Entry& a, const Entry& b) { return a.word < b.word; });
    // merge repeated adds of the same pair
    std::vector<Entry> merged;
    for (const auto& e : row) {
      if (!merged.empty() && merged.back().word == e.word) {
        merged.back().count += e.count;
      } else {
        merged.push_back(e);
      }
    }
    row = std::move(merged);
  }
}

std::uint64_t BigramTable::count(WordId prev, WordId word) const {
  const auto& r = rows_.at(prev);
  auto it = std::lower_bound(r.begin(), r.end(), word, [](const Entry& e, WordId w) { return e.word < w; });
  return (it != r.end() && it->word == word) ? it->count : 0;
}

std::size_t BigramTable::entry_count() const {
  std::size_t n = 0;
  for (const auto& r : rows_) n += r.size();
  return n;
}

// ---------------------------------------------------------------------------
// PrefixTrie

PrefixTrie::PrefixTrie(const Vocabulary& vocab) {
  nodes_.emplace_back();
  const auto n = static_cast<WordId>(vocab.size());
  nodes_[0].lo = 0;
  nodes_[0].hi = n;
  // Words are sorted, so each child's subtree is a contiguous id range.
  for (WordId id = 0; id < n; ++id) {
    const std::string& w = vocab.word(id);
    std::uint32_t cur = 0;
    for (char c : w) {
      auto& kids = nodes_[cur].children;
      auto it = std::find_if(kids.begin(), kids.end(), [c](const auto& p) { return p.first == c; });
      std::uint32_t next;
      if (it == kids.end()) {
        next = static_cast<std::uint32_t>(nodes_.size());
        nodes_[cur].children.emplace_back(c, next);
        nodes_.emplace_back();
        nodes_[next].lo = id;
        nodes_[next].hi = id;
      } else {
        next = it->second;
      }
      cur = next;
      nodes_[cur].hi = id + 1;
    }
    nodes_[cur].terminal = id;
    nodes_[cur].terminal_mass = vocab.unigram(id);
  }
  const auto order = vocab.by_frequency();
  std::vector<std::uint32_t> rank(n);
  for (WordId r = 0; r < n; ++r) rank[order[r]] = r;
  for (auto& node : nodes_) {
    std::sort(node.children.begin(), node.children.end());
    std::uint64_t count_sum = 0;
    node.ranked.resize(node.hi - node.lo);
    std::iota(node.ranked.begin(), node.ranked.end(), node.lo);
    for (WordId id = node.lo; id < node.hi; ++id) count_sum += vocab.count(id);
    std::sort(node.ranked.begin(), node.ranked.end(), [&](WordId a, WordId b) { return rank[a] < rank[b]; });
    node.mass = static_cast<double>(count_sum) / static_cast<double>(vocab.total_count());
  }
}

const PrefixTrie::Node* PrefixTrie::find(std::string_view prefix) const {
  if (nodes_.empty()) return nullptr;
  std::uint32_t cur = 0;
  for (char c : prefix) {
    const auto& kids = nodes_[cur].children;
    auto it = std::lower_bound(kids.begin(), kids.end(), c, [](const auto& p, char ch) { return p.first < ch; });
    if (it == kids.end() || it->first != c) return nullptr;
    cur = it->second;
  }
  return &nodes_[cur];
}

// ---------------------------------------------------------------------------
// Context splitting

SplitContext split_context(std::string_view typed) {
  SplitContext ctx;
  std::size_t start = typed.size();
  while (start > 0 && corpus::is_word_char(typed[start - 1])) --start;
  ctx.prefix = std::string(typed.substr(start));
  auto before = corpus::tokenize(typed.substr(0, start));
  if (!before.empty()) ctx.prev_word = std::move(before.back());
  return ctx;
}

// ---------------------------------------------------------------------------
// LanguageModel

LanguageModel LanguageModel::build(std::span<const corpus::SentenceRecord> sentences) {
  std::map<std::string, std::uint64_t> counts;
  for (const auto& s : sentences) {
    for (const auto& w : s.words) ++counts[w];
  }
  if (counts.empty()) throw BuildError("cannot build a language model from an empty corpus");
  Vocabulary vocab(std::vector<std::pair<std::string, std::uint64_t>>(counts.begin(), counts.end()));
  BigramTable bigrams(vocab.size());
  for (const auto& s : sentences) {
    for (std::size_t i = 1; i < s.words.size(); ++i) {
      bigrams.add(*vocab.find(s.words[i - 1]), *vocab.find(s.words[i]), 1);
    }
  }
  return from_counts(std::move(vocab), std::move(bigrams));
}

LanguageModel LanguageModel::from_counts(Vocabulary vocab, BigramTable bigrams) {
  if (vocab.size() == 0) throw BuildError("empty vocabulary");
  LanguageModel model;
  bigrams.finalize();
  model.trie_ = PrefixTrie(vocab);
  model.vocab_ = std::move(vocab);
  model.bigrams_ = std::move(bigrams);
  return model;
}

std::optional<WordId> LanguageModel::prev_id(std::optional<std::string_view> prev_word) const {
  if (!prev_word) return std::nullopt;
  return vocab_.find(*prev_word);
}

double LanguageModel::effective_lambda(std::optional<WordId> prev, double lambda) const {
  if (!prev || bigrams_.row_total(*prev) == 0) return 0.0;
  return lambda;
}

double LanguageModel::next_word_prob(std::optional<std::string_view> prev_word, WordId word, double lambda) const {
  const auto prev = prev_id(prev_word);
  const double lam = effective_lambda(prev, lambda);
  double bi = 0.0;
  if (lam > 0.0) {
    bi = static_cast<double>(bigrams_.count(*prev, word)) / static_cast<double>(bigrams_.row_total(*prev));
  }
  return lam * bi + (1.0 - lam) * vocab_.unigram(word);
}

std::vector<LanguageModel::Scored> LanguageModel::top_scored(const PrefixTrie::Node& node, std::optional<WordId> prev,
                                                             double lam, std::size_t limit,
                                                             std::optional<WordId> exclude) const {
  std::vector<Scored> out;
  std::vector<WordId> successors;
  if (lam > 0.0) {
    const auto row = bigrams_.row(*prev);
    const double total = static_cast<double>(bigrams_.row_total(*prev));
    auto it = std::lower_bound(row.begin(), row.end(), node.lo,
                               [](const BigramTable::Entry& e, WordId w) { return e.word < w; });
    for (; it != row.end() && it->word < node.hi; ++it) {
      successors.push_back(it->word);
      if (exclude && *exclude == it->word) continue;
      const double score = lam * static_cast<double>(it->count) / total + (1.0 - lam) * vocab_.unigram(it->word);
      out.push_back({it->word, score});
    }
  }
  if (lam < 1.0) {
    std::size_t taken = 0;
    for (WordId id : node.ranked) {
      if (taken >= limit) break;
      if (exclude && *exclude == id) continue;
      if (std::binary_search(successors.begin(), successors.end(), id)) continue;
      out.push_back({id, (1.0 - lam) * vocab_.unigram(id)});
      ++taken;
    }
  }
  std::sort(out.begin(), out.end(), [](const Scored& a, const Scored& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.id < b.id;
  });
  if (out.size() > limit) out.resize(limit);
  return out;
}

std::vector<std::pair<WordId, double>> LanguageModel::prefix_distribution(std::optional<std::string_view> prev_word,
                                                                          std::string_view prefix,
                                                                          double lambda) const {
  const auto* node = trie_.find(prefix);
  if (node == nullptr) return {};
  const auto prev = prev_id(prev_word);
  double lam = effective_lambda(prev, lambda);
  auto score_all = [&](double l) {
    std::vector<std::pair<WordId, double>> out;
    for (WordId id = node->lo; id < node->hi; ++id) {
      double bi = 0.0;
      if (l > 0.0) {
        bi = static_cast<double>(bigrams_.count(*prev, id)) / static_cast<double>(bigrams_.row_total(*prev));
      }
      out.emplace_back(id, l * bi + (1.0 - l) * vocab_.unigram(id));
    }
    return out;
  };
  auto dist = score_all(lam);
  double z = 0.0;
  for (const auto& [id, s] : dist) z += s;
  if (z <= 0.0) {
    // lambda = 1 with no observed successor in range: back off to unigram.
    dist = score_all(0.0);
    z = 0.0;
    for (const auto& [id, s] : dist) z += s;
  }
  for (auto& [id, s] : dist) s /= z;
  return dist;
}

std::vector<Candidate> LanguageModel::raw_candidates(std::optional<std::string_view> prev_word, std::string_view prefix,
                                                     const LmConfig& config) const {
  config.validate();
  const auto* node = trie_.find(prefix);
  if (node == nullptr) return {};
  const auto prev = prev_id(prev_word);
  double lam = effective_lambda(prev, config.lambda);

  double bi_mass = 0.0;
  if (lam > 0.0) {
    const auto row = bigrams_.row(*prev);
    auto it = std::lower_bound(row.begin(), row.end(), node->lo,
                               [](const BigramTable::Entry& e, WordId w) { return e.word < w; });
    std::uint64_t c = 0;
    for (; it != row.end() && it->word < node->hi; ++it) c += it->count;
    bi_mass = static_cast<double>(c) / static_cast<double>(bigrams_.row_total(*prev));
  }
  double z = lam * bi_mass + (1.0 - lam) * node->mass;
  if (z <= 0.0) {
    lam = 0.0;
    z = node->mass;
  }

  std::vector<Candidate> out;
  for (const auto& s : top_scored(*node, prev, lam, config.k, node->terminal)) {
    if (s.score <= 0.0) continue;
    const std::string& w = vocab_.word(s.id);
    Candidate c;
    c.completion = w.substr(prefix.size());
    c.full_words = {w};
    c.raw_prob = s.score / z;
    c.norm_prob = c.raw_prob;
    out.push_back(std::move(c));
  }
  return out;
}

std::vector<Candidate> LanguageModel::beam_multiword(std::optional<std::string_view> prev_word,
                                                     std::string_view prefix, const LmConfig& config) const {
  config.validate();
  LmConfig first_cfg = config;
  first_cfg.k = config.beam_width;
  const auto firsts = raw_candidates(prev_word, prefix, first_cfg);

  std::vector<Candidate> pool;
  for (const auto& first : firsts) {
    pool.push_back(first);
    const std::string& w1 = first.full_words.front();
    const auto id1 = vocab_.find(w1);
    const double lam2 = effective_lambda(id1, config.lambda);
    // Over the whole vocabulary the interpolated scores already sum to one.
    for (const auto& s : top_scored(trie_.root(), id1, lam2, config.beam_width, std::nullopt)) {
      if (s.score <= 0.0) continue;
      const double chain[2] = {first.raw_prob, s.score};
      Candidate c;
      c.completion = first.completion + " " + vocab_.word(s.id);
      c.full_words = {w1, vocab_.word(s.id)};
      c.raw_prob = first.raw_prob * s.score;
      c.norm_prob = normalize_length(chain);
      pool.push_back(std::move(c));
    }
  }
  std::stable_sort(pool.begin(), pool.end(), [](const Candidate& a, const Candidate& b) {
    if (a.norm_prob != b.norm_prob) return a.norm_prob > b.norm_prob;
    if (a.full_words.size() != b.full_words.size()) return a.full_words.size() < b.full_words.size();
    return a.completion < b.completion;
  });
  if (pool.size() > config.k) pool.resize(config.k);
  return renormalize_topk(std::move(pool));
}

std::vector<Candidate> LanguageModel::candidates(std::string_view typed, const LmConfig& config) const {
  const auto ctx = split_context(typed);
  std::optional<std::string_view> prev;
  if (ctx.prev_word) prev = *ctx.prev_word;
  if (config.multiword) return beam_multiword(prev, ctx.prefix, config);
  return renormalize_topk(raw_candidates(prev, ctx.prefix, config));
}

// ---------------------------------------------------------------------------
// Serialization
//
// Layout (all integers little-endian):
//   magic    8 bytes  "INLACLM\0"
//   version  u32      1
//   n_words  u32
//   n_words x { len u32, bytes[len], count u64 }   sorted by word
//   n_bigram u64
//   n_bigram x { prev u32, word u32, count u64 }   sorted by (prev, word)
// The trie is rebuilt on load.

namespace {

constexpr char kMagic[8] = {'I', 'N', 'L', 'A', 'C', 'L', 'M', '\0'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void put(std::string& out, T v) {
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<char>((static_cast<std::uint64_t>(v) >> (8 * i)) & 0xFF));
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}
  template <typename T>
  T get() {
    need(sizeof(T));
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += sizeof(T);
    return static_cast<T>(v);
  }
  std::string_view take(std::size_t n) {
    need(n);
    auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) throw FormatError("truncated language model file");
  }
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string LanguageModel::serialize() const {
  std::string out(kMagic, sizeof(kMagic));
  put<std::uint32_t>(out, kVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(vocab_.size()));
  for (WordId id = 0; id < vocab_.size(); ++id) {
    const auto& w = vocab_.word(id);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(w.size()));
    out += w;
    put<std::uint64_t>(out, vocab_.count(id));
  }
  put<std::uint64_t>(out, bigrams_.entry_count());
  for (WordId prev = 0; prev < vocab_.size(); ++prev) {
    for (const auto& e : bigrams_.row(prev)) {
      put<std::uint32_t>(out, prev);
      put<std::uint32_t>(out, e.word);
      put<std::uint64_t>(out, e.count);
    }
  }
  return out;
}

LanguageModel LanguageModel::deserialize(std::string_view bytes) {
  Reader r(bytes);
  if (r.take(sizeof(kMagic)) != std::string_view(kMagic, sizeof(kMagic))) throw FormatError("bad language model magic");
  const auto version = r.get<std::uint32_t>();
  if (version != kVersion) throw FormatError("unsupported language model version " + std::to_string(version));
  const auto n = r.get<std::uint32_t>();
  std::vector<std::pair<std::string, std::uint64_t>> counts;
  counts.reserve(n);
  for (std::uint32_t i = 0; i < n; ++i) {
    const auto len = r.get<std::uint32_t>();
    std::string w(r.take(len));
    counts.emplace_back(std::move(w), r.get<std::uint64_t>());
  }
  if (!std::is_sorted(counts.begin(), counts.end())) throw FormatError("vocabulary block not sorted");
  Vocabulary vocab(std::move(counts));
  BigramTable bigrams(vocab.size());
  const auto nb = r.get<std::uint64_t>();
  for (std::uint64_t i = 0; i < nb; ++i) {
    const auto prev = r.get<std::uint32_t>();
    const auto word = r.get<std::uint32_t>();
    const auto c = r.get<std::uint64_t>();
    if (prev >= vocab.size() || word >= vocab.size() || c == 0) throw FormatError("bad bigram record");
    bigrams.add(prev, word, c);
  }
  if (!r.done()) throw FormatError("trailing bytes in language model file");
  return from_counts(std::move(vocab), std::move(bigrams));
}

void LanguageModel::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  const auto bytes = serialize();
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

LanguageModel LanguageModel::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return deserialize(ss.str());
}

// ---------------------------------------------------------------------------

std::vector<Candidate> renormalize_topk(std::vector<Candidate> candidates) {
  double z = 0.0;
  for (const auto& c : candidates) z += c.norm_prob;
  if (z <= 0.0) return candidates;
  for (auto& c : candidates) c.norm_prob /= z;
  return candidates;
}

double normalize_length(std::span<const double> word_probs) {
  if (word_probs.empty()) throw DomainError("empty probability chain");
  double product = 1.0;
  for (double p : word_probs) {
    if (!(p > 0.0)) throw DomainError("chain probabilities must be positive");
    product *= p;
  }
  switch (word_probs.size()) {
    case 1:
      return product;
    case 2:
      return std::sqrt(product);
    default:
      return std::pow(product, 1.0 / static_cast<double>(word_probs.size()));
  }
}

}  // namespace inlineac::lm
