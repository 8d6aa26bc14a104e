#include <doctest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "inlineac/errors.hpp"
#include "inlineac/lm.hpp"
#include "support.hpp"

using namespace inlineac;
using namespace inlineac::lm;
using testsupport::model_of;

namespace {

LmConfig cfg(std::size_t k, double lambda = 0.7) {
  LmConfig c;
  c.k = k;
  c.lambda = lambda;
  return c;
}

}  // namespace

TEST_CASE("counting model") {
  const auto m = model_of({"call me", "call later"});
  const auto& v = m.vocabulary();
  REQUIRE(v.size() == 3);
  CHECK(v.count(*v.find("call")) == 2);
  CHECK(v.count(*v.find("me")) == 1);
  CHECK(v.count(*v.find("later")) == 1);
  CHECK(v.total_count() == 4);
  CHECK(m.bigrams().count(*v.find("call"), *v.find("me")) == 1);
  CHECK(m.bigrams().count(*v.find("call"), *v.find("later")) == 1);
  CHECK(m.bigrams().entry_count() == 2);

  const auto c = m.raw_candidates(std::nullopt, "ca", cfg(5));
  REQUIRE(c.size() == 1);
  CHECK(c[0].full_words == std::vector<std::string>{"call"});
  CHECK(c[0].completion == "ll");
}

TEST_CASE("raw candidates") {
  const auto m = model_of({"call me", "call later"});
  const auto l = m.raw_candidates(std::nullopt, "l", cfg(1));
  REQUIRE(l.size() == 1);
  CHECK(l[0].completion == "ater");
  CHECK(l[0].full_words.front() == "later");
  CHECK(l[0].raw_prob == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(m.raw_candidates(std::nullopt, "zzz", cfg(5)).empty());

  const auto u = model_of({"aa", "ab", "ac", "ac"});
  const auto top2 = u.raw_candidates(std::nullopt, "a", cfg(2, 0.0));
  REQUIRE(top2.size() == 2);
  CHECK(top2[0].full_words.front() == "ac");
  CHECK(top2[0].raw_prob == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(top2[1].full_words.front() == "aa");  // lexicographic tie-break
  CHECK(top2[1].raw_prob == doctest::Approx(0.25).epsilon(1e-12));
  // One-word candidates carry norm_prob = raw_prob before renormalization.
  CHECK(top2[0].norm_prob == top2[0].raw_prob);
}

TEST_CASE("the word equal to the prefix counts but is never offered") {
  const auto m = model_of({"a", "ab"});
  const auto c = m.raw_candidates(std::nullopt, "a", cfg(5, 0.0));
  REQUIRE(c.size() == 1);
  CHECK(c[0].full_words.front() == "ab");
  CHECK(c[0].raw_prob == doctest::Approx(0.5));
  CHECK(m.raw_candidates(std::nullopt, "ab", cfg(5)).empty());
}

TEST_CASE("bigram interpolation follows the previous word") {
  const auto m = model_of({"x ma", "x ma", "y mb", "y mb", "y mb"});
  const auto after_x = m.candidates("x m", cfg(2));
  REQUIRE(after_x.size() == 2);
  CHECK(after_x[0].full_words.front() == "ma");
  // 0.7 * 1 + 0.3 * 2/10 against 0.3 * 3/10.
  CHECK(after_x[0].raw_prob == doctest::Approx(0.76 / 0.85).epsilon(1e-12));
  CHECK(m.candidates("y m", cfg(1))[0].full_words.front() == "mb");
  // Sentence start has no bigram context.
  CHECK(m.candidates("m", cfg(1))[0].raw_prob == doctest::Approx(0.6).epsilon(1e-12));
}

TEST_CASE("renormalize top-k") {
  const auto m = model_of({"aa", "ab", "ac", "ac"});
  const auto one = renormalize_topk(m.raw_candidates(std::nullopt, "a", cfg(1, 0.0)));
  CHECK(one[0].norm_prob == doctest::Approx(1.0));
  const auto two = renormalize_topk(m.raw_candidates(std::nullopt, "a", cfg(2, 0.0)));
  CHECK(two[0].norm_prob == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
  CHECK(two[1].norm_prob == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
  CHECK(two[0].raw_prob == doctest::Approx(0.5));

  std::vector<Candidate> raw(2);
  raw[0].raw_prob = raw[0].norm_prob = 0.2;
  raw[1].raw_prob = raw[1].norm_prob = 0.1;
  const auto r = renormalize_topk(raw);
  CHECK(r[0].norm_prob == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
  CHECK(r[1].norm_prob == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
  CHECK(r[0].raw_prob == 0.2);
  CHECK(renormalize_topk({}).empty());
}

TEST_CASE("length normalization") {
  const double one[] = {0.3};
  CHECK(normalize_length(one) == doctest::Approx(0.3));
  const double two[] = {0.4, 0.25};
  CHECK(normalize_length(two) == doctest::Approx(0.316228).epsilon(1e-6));
  const double up[] = {0.2, 0.5};
  CHECK(normalize_length(up) == doctest::Approx(0.316228).epsilon(1e-6));
  CHECK(normalize_length(up) > 0.2);
  const double zero[] = {0.4, 0.0};
  CHECK_THROWS_AS(normalize_length(zero), DomainError);
  const double neg[] = {-0.1};
  CHECK_THROWS_AS(normalize_length(neg), DomainError);
  CHECK_THROWS_AS(normalize_length({}), DomainError);
}

TEST_CASE("two-word beam") {
  const auto m = model_of({"call me", "call me", "call later"});
  LmConfig c = cfg(5, 1.0);
  c.multiword = true;
  const auto beam = m.beam_multiword(std::nullopt, "ca", c);
  REQUIRE(beam.size() == 3);
  CHECK(beam[0].completion == "ll");
  CHECK(beam[1].completion == "ll me");
  CHECK(beam[1].full_words == std::vector<std::string>{"call", "me"});
  CHECK(beam[2].completion == "ll later");
  // Ratios after renormalization keep the length-normalized scores.
  CHECK(beam[1].norm_prob / beam[0].norm_prob == doctest::Approx(std::sqrt(2.0 / 3.0)).epsilon(1e-12));
  CHECK(beam[2].norm_prob / beam[0].norm_prob == doctest::Approx(std::sqrt(1.0 / 3.0)).epsilon(1e-12));
  double sum = 0;
  for (const auto& b : beam) sum += b.norm_prob;
  CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));

  // Geometric-mean fixed point: P2|1 = P1 gives back P1.
  const double same[] = {0.37, 0.37};
  CHECK(normalize_length(same) == doctest::Approx(0.37).epsilon(1e-12));
}

TEST_CASE("config validation") {
  LmConfig c;
  c.k = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = {};
  c.k = 20;
  c.beam_width = 16;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = {};
  c.lambda = 1.5;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  CHECK_THROWS_AS(LanguageModel::build({}), BuildError);
}

TEST_CASE("serialization round-trips and rejects bad input") {
  const auto m = model_of({"call me", "call later", "i'll call you"});
  const auto bytes = m.serialize();
  CHECK(bytes.substr(0, 8) == std::string("INLACLM\0", 8));
  const auto back = LanguageModel::deserialize(bytes);
  CHECK(back.serialize() == bytes);
  CHECK(back.candidates("call l", cfg(3)) == m.candidates("call l", cfg(3)));

  std::string bad = bytes;
  bad[0] = 'X';
  CHECK_THROWS_AS(LanguageModel::deserialize(bad), FormatError);
  CHECK_THROWS_AS(LanguageModel::deserialize(bytes.substr(0, bytes.size() - 3)), FormatError);
  std::string version = bytes;
  version[8] = 9;
  CHECK_THROWS_AS(LanguageModel::deserialize(version), FormatError);

  const auto dir = testsupport::temp_dir("lm");
  m.save(dir / "m.lm");
  CHECK(LanguageModel::load(dir / "m.lm").serialize() == bytes);
  std::filesystem::remove_all(dir);
}

TEST_CASE("build is deterministic") {
  const auto corpus = testsupport::desk_corpus();
  CHECK(LanguageModel::build(corpus).serialize() == LanguageModel::build(corpus).serialize());
}

TEST_CASE("property: trie masses are consistent") {
  const auto m = LanguageModel::build(testsupport::desk_corpus());
  const auto& t = m.trie();
  CHECK(t.root().mass == doctest::Approx(1.0).epsilon(1e-12));
  for (std::size_t i = 0; i < t.node_count(); ++i) {
    const auto& n = t.node(static_cast<std::uint32_t>(i));
    double sum = n.terminal_mass;
    for (const auto& [ch, child] : n.children) sum += t.node(child).mass;
    REQUIRE(std::abs(sum - n.mass) < 1e-12);
  }
}

TEST_CASE("property: prefix distributions sum to one and shrink with the prefix") {
  const auto m = LanguageModel::build(testsupport::desk_corpus());
  const auto& v = m.vocabulary();
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<WordId> pick(0, static_cast<WordId>(v.size() - 1));
  for (int trial = 0; trial < 300; ++trial) {
    const std::string w = v.word(pick(rng));
    const std::string prev = v.word(pick(rng));
    const std::optional<std::string_view> ctx = trial % 3 == 0 ? std::nullopt : std::optional<std::string_view>(prev);
    std::size_t last = v.size() + 1;
    for (std::size_t len = 0; len <= w.size(); ++len) {
      const auto dist = m.prefix_distribution(ctx, w.substr(0, len), 0.7);
      double sum = 0;
      for (const auto& [id, p] : dist) sum += p;
      REQUIRE(sum == doctest::Approx(1.0).epsilon(1e-9));
      REQUIRE(dist.size() <= last);
      last = dist.size();
    }
  }
}

TEST_CASE("property: top-k ranking and ratio preservation") {
  const auto m = LanguageModel::build(testsupport::desk_corpus());
  for (const char* prefix : {"", "a", "th", "re", "s", "co", "in"}) {
    const auto raw = m.raw_candidates(std::string_view("the"), prefix, cfg(5));
    for (std::size_t i = 1; i < raw.size(); ++i) CHECK(raw[i - 1].raw_prob >= raw[i].raw_prob);
    const auto norm = renormalize_topk(raw);
    for (std::size_t i = 1; i < norm.size(); ++i) {
      CHECK(norm[i - 1].norm_prob / norm[i].norm_prob ==
            doctest::Approx(raw[i - 1].raw_prob / raw[i].raw_prob).epsilon(1e-9));
    }
    // Exact top-k agrees with the full distribution.
    auto full = m.prefix_distribution(std::string_view("the"), prefix, 0.7);
    std::erase_if(full, [&](const auto& e) { return m.vocabulary().word(e.first) == prefix; });
    std::sort(full.begin(), full.end(), [&](const auto& a, const auto& b) {
      if (a.second != b.second) return a.second > b.second;
      return m.vocabulary().word(a.first) < m.vocabulary().word(b.first);
    });
    for (std::size_t i = 0; i < raw.size(); ++i) {
      CHECK(raw[i].full_words.front() == m.vocabulary().word(full[i].first));
      CHECK(raw[i].raw_prob == doctest::Approx(full[i].second).epsilon(1e-12));
    }
  }
}

TEST_CASE("property: normalized pair beats its first word iff the second is likelier") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(1e-6, 1.0);
  for (int i = 0; i < 10000; ++i) {
    const double p1 = u(rng);
    const double p2 = u(rng);
    const double chain[] = {p1, p2};
    if (p1 == p2) continue;
    REQUIRE((normalize_length(chain) > p1) == (p2 > p1));
  }
}
