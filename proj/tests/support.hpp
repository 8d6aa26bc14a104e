#pragma once

#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "inlineac/corpus.hpp"
#include "inlineac/lm.hpp"

namespace testsupport {

inline std::vector<inlineac::corpus::SentenceRecord> records(const std::vector<std::string>& texts) {
  std::vector<inlineac::corpus::SentenceRecord> out;
  for (const auto& t : texts) out.push_back(inlineac::corpus::make_record(t));
  return out;
}

inline inlineac::lm::LanguageModel model_of(const std::vector<std::string>& texts) {
  return inlineac::lm::LanguageModel::build(records(texts));
}

inline std::filesystem::path data_dir() { return INLINEAC_DATA_DIR; }

inline std::vector<inlineac::corpus::SentenceRecord> desk_corpus() {
  return inlineac::corpus::load_sentences(data_dir() / "desk_corpus.txt");
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path temp_dir(const std::string& tag) {
  std::random_device rd;
  auto dir = std::filesystem::temp_directory_path() / ("inlineac-" + tag + "-" + std::to_string(rd()));
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace testsupport
