#include "inlineac/corpus.hpp"

#include <fstream>

#include "inlineac/errors.hpp"

namespace inlineac::corpus {

void FilterConfig::validate() const {
  if (max_words < 1) throw ConfigError("max_words must be at least 1");
  if (allowed_chars.empty()) throw ConfigError("allowed character set is empty");
  if (allowed_chars.find(' ') == std::string::npos)
    throw ConfigError("allowed character set must include space");
  if (!(max_oov_rate >= 0.0 && max_oov_rate <= 1.0))
    throw ConfigError("max_oov_rate must lie in [0, 1]");
}

std::string normalize(std::string_view line) {
  std::string out;
  out.reserve(line.size());
  for (std::size_t i = 0; i < line.size(); ++i) {
    const auto c = static_cast<unsigned char>(line[i]);
    // U+2019 RIGHT SINGLE QUOTATION MARK is E2 80 99 in UTF-8.
    if (c == 0xE2 && i + 2 < line.size() && static_cast<unsigned char>(line[i + 1]) == 0x80 &&
        static_cast<unsigned char>(line[i + 2]) == 0x99) {
      out.push_back('\'');
      i += 2;
      continue;
    }
    if (c >= 'A' && c <= 'Z') {
      out.push_back(static_cast<char>(c - 'A' + 'a'));
    } else {
      out.push_back(static_cast<char>(c));
    }
  }
  const auto first = out.find_first_not_of(" \t\r\n");
  if (first == std::string::npos) return {};
  const auto last = out.find_last_not_of(" \t\r\n");
  return out.substr(first, last - first + 1);
}

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> words;
  std::size_t i = 0;
  while (i < text.size()) {
    if (!is_word_char(text[i])) {
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j < text.size() && is_word_char(text[j])) ++j;
    words.emplace_back(text.substr(i, j - i));
    i = j;
  }
  return words;
}

SentenceRecord make_record(std::string text) {
  SentenceRecord rec;
  rec.words = tokenize(text);
  rec.char_count = text.size();
  rec.text = std::move(text);
  return rec;
}

FilterResult filter_corpus(std::span<const std::string> lines, const FilterConfig& config,
                           const std::unordered_set<std::string>* vocabulary) {
  config.validate();
  bool allowed[256] = {};
  for (unsigned char c : config.allowed_chars) allowed[c] = true;

  FilterResult result;
  for (const auto& line : lines) {
    std::string text = normalize(line);
    if (text.empty()) continue;
    ++result.input_count;

    bool ok = true;
    for (unsigned char c : text) {
      if (!allowed[c]) {
        ok = false;
        break;
      }
    }
    if (!ok) {
      ++result.drops.bad_char;
      continue;
    }
    SentenceRecord rec = make_record(std::move(text));
    if (rec.words.size() > config.max_words) {
      ++result.drops.too_long;
      continue;
    }
    if (vocabulary != nullptr && config.max_oov_rate < 1.0 && !rec.words.empty()) {
      std::size_t oov = 0;
      for (const auto& w : rec.words) oov += vocabulary->contains(w) ? 0 : 1;
      if (static_cast<double>(oov) / static_cast<double>(rec.words.size()) > config.max_oov_rate) {
        ++result.drops.oov;
        continue;
      }
    }
    result.kept.push_back(std::move(rec));
  }
  return result;
}

std::vector<std::string> read_lines(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) lines.push_back(std::move(line));
  return lines;
}

void write_lines(const std::filesystem::path& path, std::span<const std::string> lines) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (const auto& l : lines) out << l << '\n';
}

std::vector<SentenceRecord> load_sentences(const std::filesystem::path& path) {
  std::vector<SentenceRecord> out;
  for (const auto& line : read_lines(path)) {
    auto text = normalize(line);
    if (!text.empty()) out.push_back(make_record(std::move(text)));
  }
  return out;
}

}  // namespace inlineac::corpus
