#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "inlineac/corpus.hpp"

namespace inlineac::lm {

using WordId = std::uint32_t;

/// A proposed completion. `completion` is what acceptance would insert after
/// the current prefix; `full_words` are the whole word tokens it completes to.
struct Candidate {
  std::string completion;
  std::vector<std::string> full_words;
  double raw_prob = 0.0;
  double norm_prob = 0.0;

  bool operator==(const Candidate&) const = default;
};

struct LmConfig {
  std::size_t k = 1;
  /// Weight of the bigram estimate against the unigram estimate.
  double lambda = 0.7;
  bool multiword = false;
  std::size_t beam_width = 16;

  void validate() const;
};

/// Word counts, stored sorted so every prefix maps to a contiguous id range.
class Vocabulary {
 public:
  Vocabulary() = default;
  explicit Vocabulary(std::vector<std::pair<std::string, std::uint64_t>> counts);

  std::size_t size() const { return words_.size(); }
  const std::string& word(WordId id) const { return words_[id]; }
  std::uint64_t count(WordId id) const { return counts_[id]; }
  std::uint64_t total_count() const { return total_; }
  std::optional<WordId> find(std::string_view w) const;
  double unigram(WordId id) const { return static_cast<double>(counts_[id]) / static_cast<double>(total_); }
  /// Ids ordered by descending count, ties by word.
  std::vector<WordId> by_frequency() const;

 private:
  std::vector<std::string> words_;
  std::vector<std::uint64_t> counts_;
  std::uint64_t total_ = 0;
};

/// (previous word, word) counts with per-row totals.
class BigramTable {
 public:
  struct Entry {
    WordId word;
    std::uint64_t count;
  };

  BigramTable() = default;
  explicit BigramTable(std::size_t vocab_size) : rows_(vocab_size), totals_(vocab_size, 0) {}

  void add(WordId prev, WordId word, std::uint64_t count);
  /// Sorts rows by word id; call once after all adds.
  void finalize();

  std::span<const Entry> row(WordId prev) const { return rows_[prev]; }
  std::uint64_t row_total(WordId prev) const { return totals_[prev]; }
  std::uint64_t count(WordId prev, WordId word) const;
  std::size_t entry_count() const;

 private:
  std::vector<std::vector<Entry>> rows_;
  std::vector<std::uint64_t> totals_;
};

/// Character trie over the vocabulary. Each node holds unigram subtree mass
/// and the mass of the word ending exactly at that node.
class PrefixTrie {
 public:
  struct Node {
    std::vector<std::pair<char, std::uint32_t>> children;  // sorted by char
    double mass = 0.0;
    double terminal_mass = 0.0;
    std::optional<WordId> terminal;
    WordId lo = 0;  // word id range [lo, hi) of the subtree
    WordId hi = 0;
    std::vector<WordId> ranked;  // subtree ids by descending count, ties by word
  };

  PrefixTrie() = default;
  explicit PrefixTrie(const Vocabulary& vocab);

  const Node& root() const { return nodes_.front(); }
  const Node& node(std::uint32_t i) const { return nodes_[i]; }
  std::size_t node_count() const { return nodes_.size(); }
  /// Node for the given prefix, or nullptr when no word has it.
  const Node* find(std::string_view prefix) const;

 private:
  std::vector<Node> nodes_;
};

/// Splits typed sentence text into the previous complete word and the
/// in-progress word prefix.
struct SplitContext {
  std::optional<std::string> prev_word;
  std::string prefix;
};
SplitContext split_context(std::string_view typed);

class LanguageModel {
 public:
  /// Throws BuildError on an empty corpus.
  static LanguageModel build(std::span<const corpus::SentenceRecord> sentences);
  static LanguageModel from_counts(Vocabulary vocab, BigramTable bigrams);

  const Vocabulary& vocabulary() const { return vocab_; }
  const BigramTable& bigrams() const { return bigrams_; }
  const PrefixTrie& trie() const { return trie_; }

  /// Top-k single-word completions of `prefix`, ranked by raw probability.
  /// Probabilities are normalized over every vocabulary word having the
  /// prefix (including the word equal to the prefix, which is never emitted).
  std::vector<Candidate> raw_candidates(std::optional<std::string_view> prev_word,
                                        std::string_view prefix, const LmConfig& config) const;

  /// Mixed 1- and 2-word candidates ranked by length-normalized probability,
  /// top-k renormalized.
  std::vector<Candidate> beam_multiword(std::optional<std::string_view> prev_word,
                                        std::string_view prefix, const LmConfig& config) const;

  /// The candidate slate that defines the MDP state for a typed context.
  std::vector<Candidate> candidates(std::string_view typed, const LmConfig& config) const;

  /// Full distribution over prefix-consistent words (word, probability).
  std::vector<std::pair<WordId, double>> prefix_distribution(std::optional<std::string_view> prev_word,
                                                             std::string_view prefix, double lambda) const;

  /// Interpolated next-word probability P(word | prev) over the whole vocabulary.
  double next_word_prob(std::optional<std::string_view> prev_word, WordId word, double lambda) const;

  void save(const std::filesystem::path& path) const;
  static LanguageModel load(const std::filesystem::path& path);
  std::string serialize() const;
  static LanguageModel deserialize(std::string_view bytes);

 private:
  struct Scored {
    WordId id;
    double score;
  };
  std::optional<WordId> prev_id(std::optional<std::string_view> prev_word) const;
  double effective_lambda(std::optional<WordId> prev, double lambda) const;
  /// Top `limit` scored words in the trie node, skipping `exclude`.
  std::vector<Scored> top_scored(const PrefixTrie::Node& node, std::optional<WordId> prev, double lam,
                                 std::size_t limit, std::optional<WordId> exclude) const;

  Vocabulary vocab_;
  BigramTable bigrams_;
  PrefixTrie trie_;
};

/// Rescales norm_prob to sum to one, preserving order and ratios.
std::vector<Candidate> renormalize_topk(std::vector<Candidate> candidates);

/// Geometric mean of the chain probabilities of an m-word suggestion.
/// Throws DomainError on a non-positive probability or an empty chain.
double normalize_length(std::span<const double> word_probs);

}  // namespace inlineac::lm
