#include <algorithm>
#include <cmath>

#include "ctxlstm/nn/gradcheck.hpp"
#include "ctxlstm/topic_task.hpp"
#include "doctest.h"
#include "helpers.hpp"

using namespace ctxlstm;

namespace {

TrainConfig small_config() {
  TrainConfig cfg;
  cfg.hidden = 8;
  cfg.embed = 6;
  cfg.topic_embed = 4;
  cfg.epochs = 4;
  cfg.learning_rate = 1.0;
  cfg.batch_size = 8;
  return cfg;
}

TopicTaskData data_of(const testing::SmallCorpus& c, std::size_t num_topics) {
  return {c.docs, c.synth.topics, num_topics};
}

}  // namespace

TEST_CASE("roundoff quantizes to the nearest multiple") {
  Eigen::MatrixXd v(4, 1);
  v << 0.3, -0.13, 0.87, -1.0;
  Eigen::MatrixXd expect(4, 1);
  expect << 0.25, -0.25, 0.75, -1.0;
  CHECK(roundoff(v, 0.25) == expect);
  CHECK(roundoff(v, 0.0) == v);
  Rng rng(1);
  Eigen::MatrixXd r(10, 3);
  for (Eigen::Index i = 0; i < r.size(); ++i) r.data()[i] = rng.uniform(-3, 3);
  for (double q : {0.5, 0.1, 1e-3, 1e-6}) CHECK((roundoff(r, q) - r).cwiseAbs().maxCoeff() <= q / 2 + 1e-15);
}

TEST_CASE("thought vectors: zero for the first sentence and under a zero projection") {
  const auto c = testing::small_corpus(testing::tiny_spec(2));
  auto cfg = small_config();
  cfg.epochs = 1;
  const auto data = data_of(c, 4);
  auto tm = train_topic_model_task(data, data, c.vocab.size(), TopicInputs::WordThought, TopicTarget::NextSentence,
                                   cfg, {4, 0.25})
                .model;
  const auto& para = c.docs[0].paragraphs[0];
  auto theta = thought_vector_features(tm, para);
  REQUIRE(theta.size() == para.size());
  CHECK(theta[0].isZero());
  for (const auto& t : theta)
    for (Eigen::Index i = 0; i < t.size(); ++i) CHECK(std::abs(t(i) / 0.25 - std::round(t(i) / 0.25)) < 1e-12);
  tm.thought_proj.setZero();
  for (const auto& t : thought_vector_features(tm, para)) CHECK(t.isZero());
}

TEST_CASE("topic losses are invariant to paragraph order") {
  const auto c = testing::small_corpus(testing::tiny_spec(3));
  auto cfg = small_config();
  cfg.epochs = 1;
  const auto data = data_of(c, 4);
  for (auto inputs : {TopicInputs::WordSentTopic, TopicInputs::WordThought}) {
    const auto tm =
        train_topic_model_task(data, data, c.vocab.size(), inputs, TopicTarget::NextSentence, cfg).model;
    auto docs = c.docs;
    auto labels = c.synth.topics;
    for (std::size_t d = 0; d < docs.size(); ++d) {
      std::reverse(docs[d].paragraphs.begin(), docs[d].paragraphs.end());
      std::reverse(labels[d].begin(), labels[d].end());
    }
    auto a = eval_topic_model(tm, data).losses;
    auto b = eval_topic_model(tm, {docs, labels, 4}, 5).losses;
    REQUIRE(a.size() == b.size());
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(std::abs(a[i] - b[i]) < 1e-12);
  }
}

TEST_CASE("ST input on a coherence-1 corpus copies the topic") {
  auto spec = testing::tiny_spec(4);
  spec.coherence = 1.0;
  const auto c = testing::small_corpus(spec);
  auto cfg = small_config();
  cfg.epochs = 30;
  const auto data = data_of(c, 4);
  const auto r =
      train_topic_model_task(data, data, c.vocab.size(), TopicInputs::SentTopic, TopicTarget::NextSentence, cfg);
  CHECK(eval_topic_model(r.model, data).perplexity < 1.05);
  CHECK(r.model.net.dims.vocab == 0);
}

TEST_CASE("example sets: next-sentence drops the last sentence, same-sentence the first") {
  const auto c = testing::small_corpus(testing::tiny_spec(5));
  auto cfg = small_config();
  cfg.epochs = 1;
  const auto data = data_of(c, 4);
  std::size_t sentences = 0, paragraphs = 0;
  for (const auto& d : c.docs)
    for (const auto& p : d.paragraphs) {
      sentences += p.size();
      ++paragraphs;
    }
  for (auto target : {TopicTarget::NextSentence, TopicTarget::SameSentence}) {
    const auto tm = train_topic_model_task(data, data, c.vocab.size(), TopicInputs::Word, target, cfg).model;
    CHECK(eval_topic_model(tm, data).losses.size() == sentences - paragraphs);
  }
  CHECK(bow_examples(data, c.vocab.size()).targets.size() == sentences - paragraphs);
}

TEST_CASE("BOW-DNN gradient matches finite differences") {
  Rng rng(8);
  BowDnn<double> m;
  auto fill = [&](Eigen::MatrixXd& t, Eigen::Index r, Eigen::Index c) {
    t.resize(r, c);
    for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] = rng.uniform(-1, 1);
  };
  Eigen::MatrixXd b1, b2;
  fill(m.W1, 5, 7);
  fill(b1, 5, 1);
  fill(m.W2, 3, 5);
  fill(b2, 3, 1);
  m.b1 = b1.col(0);
  m.b2 = b2.col(0);
  BowBatch batch;
  batch.counts = Eigen::MatrixXd::Zero(7, 4);
  for (Eigen::Index b = 0; b < 4; ++b)
    for (int w = 0; w < 5; ++w) batch.counts(static_cast<Eigen::Index>(rng.below(7)), b) += 1;
  batch.targets = {0, 2, 1, 2};
  BowDnn<double> g;
  bow_dnn_loss(m, batch, &g);
  auto loss = [&] { return bow_dnn_loss(m, batch, nullptr); };
  auto check = [&](auto& p, const auto& gp) {
    const auto n = static_cast<std::size_t>(p.size());
    return nn::finite_difference_check<double>(std::span<double>(p.data(), n), std::span<const double>(gp.data(), n),
                                               loss, 1e-5);
  };
  CHECK(check(m.W1, g.W1) < 1e-5);
  CHECK(check(m.b1, g.b1) < 1e-5);
  CHECK(check(m.W2, g.W2) < 1e-5);
  CHECK(check(m.b2, g.b2) < 1e-5);
}

TEST_CASE("BOW-DNN on a single-topic corpus reaches perplexity ~1") {
  const auto c = testing::small_corpus(testing::tiny_spec(6));
  auto labels = c.synth.topics;
  for (auto& d : labels)
    for (auto& p : d) std::fill(p.begin(), p.end(), 2);
  const TopicTaskData data{c.docs, labels, 4};
  auto cfg = small_config();
  cfg.epochs = 5;
  const auto r = bow_dnn_topic_baseline(data, data, c.vocab.size(), cfg);
  CHECK(eval_bow_dnn(r.model, data, c.vocab.size()).perplexity < 1.05);
}

TEST_CASE("topic-task input validation") {
  CHECK(parse_topic_inputs("w+pst") == TopicInputs::WordThought);
  CHECK(label(TopicInputs::WordSentTopic) == "W + ST");
  CHECK_THROWS_AS(parse_topic_inputs("x"), Error);
  const auto c = testing::small_corpus(testing::tiny_spec(1));
  auto labels = c.synth.topics;
  labels[0][0][0] = 9;
  const TopicTaskData bad{c.docs, labels, 4};
  CHECK_THROWS_AS(train_topic_model_task(bad, bad, c.vocab.size(), TopicInputs::Word, TopicTarget::NextSentence,
                                         small_config()),
                  Error);
}
