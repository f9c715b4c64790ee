#include <cmath>
#include <sstream>

#include "ctxlstm/synth.hpp"
#include "doctest.h"
#include "helpers.hpp"

using namespace ctxlstm;

namespace {

// Pearson chi-square of a K x K contingency table against independence.
double chi_square(const std::vector<std::vector<double>>& table) {
  const std::size_t K = table.size();
  std::vector<double> row(K, 0), col(K, 0);
  double n = 0;
  for (std::size_t i = 0; i < K; ++i)
    for (std::size_t j = 0; j < K; ++j) {
      row[i] += table[i][j];
      col[j] += table[i][j];
      n += table[i][j];
    }
  double chi = 0;
  for (std::size_t i = 0; i < K; ++i)
    for (std::size_t j = 0; j < K; ++j) {
      const double e = row[i] * col[j] / n;
      chi += (table[i][j] - e) * (table[i][j] - e) / e;
    }
  return chi;
}

}  // namespace

TEST_CASE("identical spec gives a byte-identical corpus") {
  const auto spec = testing::tiny_spec(4);
  std::ostringstream a, b;
  write_structured_corpus(a, generate_synth_corpus(spec).documents);
  write_structured_corpus(b, generate_synth_corpus(spec).documents);
  CHECK(a.str() == b.str());
  auto other = spec;
  other.seed = 5;
  std::ostringstream c;
  write_structured_corpus(c, generate_synth_corpus(other).documents);
  CHECK(a.str() != c.str());
}

TEST_CASE("corpus shape follows the spec") {
  const auto spec = testing::tiny_spec(1);
  const auto c = generate_synth_corpus(spec);
  REQUIRE(c.documents.size() == spec.num_documents);
  for (std::size_t d = 0; d < c.documents.size(); ++d) {
    REQUIRE(c.documents[d].paragraphs.size() == spec.num_paragraphs);
    for (std::size_t p = 0; p < spec.num_paragraphs; ++p) {
      REQUIRE(c.documents[d].paragraphs[p].size() == spec.sentences_per_paragraph);
      for (std::size_t s = 0; s < spec.sentences_per_paragraph; ++s) {
        const auto& sent = c.documents[d].paragraphs[p][s];
        CHECK(sent.size() >= spec.sentence_length - spec.sentence_length / 2);
        CHECK(sent.size() <= spec.sentence_length + spec.sentence_length / 2);
        const int topic = c.topics[d][p][s];
        CHECK(topic >= 0);
        CHECK(topic < static_cast<int>(spec.num_topics));
        // every word has nonzero probability under the sentence's topic
        SynthModel model(spec);
        for (const auto& w : sent) CHECK(model.word_prob(static_cast<std::size_t>(topic), w) > 0);
      }
    }
  }
}

TEST_CASE("coherence 1 keeps one topic per document; one topic gives constant labels") {
  auto spec = testing::tiny_spec(2);
  spec.coherence = 1.0;
  const auto c = generate_synth_corpus(spec);
  for (const auto& doc : c.topics)
    for (const auto& para : doc)
      for (int t : para) CHECK(t == doc[0][0]);

  spec.num_topics = 1;
  spec.coherence = 0.3;
  for (const auto& doc : generate_synth_corpus(spec).topics)
    for (const auto& para : doc)
      for (int t : para) CHECK(t == 0);
}

TEST_CASE("coherence 1/K makes the next topic independent of the current one") {
  SynthCorpusSpec spec;
  spec.num_topics = 4;
  spec.coherence = 0.25;
  spec.num_documents = 600;
  spec.sentence_length = 2;
  const auto c = generate_synth_corpus(spec);
  std::vector<std::vector<double>> table(4, std::vector<double>(4, 0));
  std::size_t pairs = 0;
  for (const auto& doc : c.topics) {
    std::vector<int> flat;
    for (const auto& para : doc) flat.insert(flat.end(), para.begin(), para.end());
    for (std::size_t i = 1; i < flat.size(); ++i, ++pairs) table[flat[i - 1]][flat[i]] += 1;
  }
  REQUIRE(pairs >= 10000);
  // 9 degrees of freedom; the 0.999 quantile is 27.88
  CHECK(chi_square(table) < 27.88);

  spec.coherence = 0.9;
  const auto coherent = generate_synth_corpus(spec);
  std::vector<std::vector<double>> t2(4, std::vector<double>(4, 0));
  for (const auto& doc : coherent.topics) {
    std::vector<int> flat;
    for (const auto& para : doc) flat.insert(flat.end(), para.begin(), para.end());
    for (std::size_t i = 1; i < flat.size(); ++i) t2[flat[i - 1]][flat[i]] += 1;
  }
  CHECK(chi_square(t2) > 1000);
}

TEST_CASE("SynthModel probabilities") {
  SynthCorpusSpec spec;
  spec.num_topics = 3;
  SynthModel m(spec);
  double total = 0;
  for (std::size_t i = 0; i < spec.vocab_per_topic; ++i) total += m.word_prob(1, synth_topic_token(1, i));
  for (std::size_t i = 0; i < spec.shared_vocab; ++i) total += m.word_prob(1, synth_shared_token(i));
  CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(m.word_prob(0, synth_topic_token(1, 0)) == 0.0);
  double row = 0;
  for (std::size_t j = 0; j < 3; ++j) row += m.transition_prob(2, j);
  CHECK(row == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(m.transition_prob(1, 1) == doctest::Approx(spec.coherence));
}

TEST_CASE("invalid specs are rejected") {
  SynthCorpusSpec spec;
  spec.coherence = 1.5;
  CHECK_THROWS_AS(generate_synth_corpus(spec), Error);
  spec = {};
  spec.num_topics = 0;
  CHECK_THROWS_AS(generate_synth_corpus(spec), Error);
}
