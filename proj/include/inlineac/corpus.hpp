#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

namespace inlineac::corpus {

/// A target sentence that passed the admissibility filters.
struct SentenceRecord {
  std::string text;
  std::vector<std::string> words;
  std::size_t char_count = 0;

  bool operator==(const SentenceRecord&) const = default;
};

struct FilterConfig {
  std::size_t max_words = 10;
  std::string allowed_chars = "abcdefghijklmnopqrstuvwxyz,.'?! ";
  /// Sentences whose fraction of out-of-vocabulary words exceeds this are
  /// dropped. 1.0 disables the screen.
  double max_oov_rate = 1.0;

  /// Throws ConfigError.
  void validate() const;
};

struct DropCounts {
  std::size_t too_long = 0;
  std::size_t bad_char = 0;
  std::size_t oov = 0;
};

struct FilterResult {
  std::vector<SentenceRecord> kept;
  std::size_t input_count = 0;
  DropCounts drops;
};

/// Letters and apostrophes form words; everything else separates them.
inline bool is_word_char(char c) {
  return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || c == '\'';
}

/// Lowercases ASCII, maps the typographic right quote (U+2019) to an ASCII
/// apostrophe and trims surrounding whitespace.
std::string normalize(std::string_view line);

/// Maximal runs of letters and apostrophes.
std::vector<std::string> tokenize(std::string_view text);

/// Builds a record from already-normalized text (no filtering).
SentenceRecord make_record(std::string text);

/// Applies charset, length and optional OOV filters. Order and duplicates are
/// preserved. Blank lines are skipped and not counted as input.
FilterResult filter_corpus(std::span<const std::string> lines, const FilterConfig& config,
                           const std::unordered_set<std::string>* vocabulary = nullptr);

std::vector<std::string> read_lines(const std::filesystem::path& path);
void write_lines(const std::filesystem::path& path, std::span<const std::string> lines);

/// Reads a corpus file and wraps every nonblank normalized line as a record.
std::vector<SentenceRecord> load_sentences(const std::filesystem::path& path);

}  // namespace inlineac::corpus
