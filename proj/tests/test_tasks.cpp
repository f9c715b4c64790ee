#include <cmath>

#include "ctxlstm/tasks.hpp"
#include "doctest.h"
#include "helpers.hpp"

using namespace ctxlstm;

namespace {

// Ten sentences of six distinct random words, one document each.
CorpusSplit memorization_corpus(std::size_t vocab) {
  Rng rng(17);
  CorpusSplit s;
  for (int d = 0; d < 10; ++d) {
    Sentence sent;
    for (int j = 0; j < 6; ++j) sent.push_back(static_cast<WordId>(rng.below(vocab)));
    CorpusDocument doc;
    doc.paragraphs.push_back({sent});
    s.train.push_back(doc);
  }
  return s;
}

TopicModel fitted(const std::vector<CorpusDocument>& docs, std::size_t vocab) {
  FitOptions opt;
  opt.num_topics = 4;
  return fit_topics(docs, vocab, opt).model;
}

}  // namespace

TEST_CASE("FeatureSet parsing, canonical order and labels") {
  CHECK(FeatureSet::parse("word").empty());
  CHECK(FeatureSet::parse("").empty());
  const auto a = FeatureSet::parse("paraseg,sentseg");
  CHECK(a == FeatureSet::parse("sentseg,paraseg"));
  CHECK(a.label() == "Word + SentSegTopic + ParaSegTopic");
  CHECK(a.to_string() == "sentseg,paraseg");
  CHECK(a.topic_slots() == 2);
  CHECK(FeatureSet::parse("word,prevsent").label() == "Word + PrevSentTopic");
  CHECK(FeatureSet::parse("thought").has_thought());
  CHECK_THROWS_AS(FeatureSet::parse("bogus"), Error);
}

TEST_CASE("stream_batch aligns inputs with next-word targets") {
  CorpusDocument doc;
  doc.paragraphs = {{{1, 2, 3}, {4, 5}}, {{6}}};
  const auto s = make_stream(doc, {}, nullptr);
  CHECK(s.words == std::vector<WordId>{1, 2, 3, 4, 5, 6});
  const std::vector<const FeatureStream*> streams{&s};
  const auto b = stream_batch(streams, 1, 6);
  for (int t = 0; t < 4; ++t) {
    CHECK(b.words(t, 0) == t + 2);
    CHECK(b.targets(t, 0) == t + 3);
    CHECK(b.weights(t, 0) == 1.0);
  }
  CHECK(b.weights(4, 0) == 0.0);
  CHECK(b.weights(5, 0) == 0.0);
}

TEST_CASE("untrained zero model on vocab 100 has perplexity 100") {
  nn::ModelDims d;
  d.vocab = d.output = 100;
  d.embed = 4;
  d.hidden = 5;
  const auto m = nn::zero_model<double>(d);
  auto c = testing::small_corpus(testing::tiny_spec(1));
  for (auto& doc : c.docs)
    for (auto& p : doc.paragraphs)
      for (auto& s : p)
        for (auto& w : s) w %= 100;
  const auto r = eval_perplexity(m, c.docs, {}, nullptr);
  CHECK(std::abs(r.perplexity / 100.0 - 1.0) < 1e-9);
}

TEST_CASE("perplexity of a unigram-bias model matches a hand count") {
  const auto c = testing::small_corpus(testing::tiny_spec(2));
  const std::size_t V = c.vocab.size();
  nn::ModelDims d;
  d.vocab = d.output = V;
  d.embed = 3;
  d.hidden = 4;
  auto m = nn::zero_model<double>(d);
  std::vector<double> p(V);
  double z = 0;
  for (std::size_t w = 0; w < V; ++w) z += (p[w] = 1.0 + static_cast<double>(w % 5));
  for (std::size_t w = 0; w < V; ++w) m.out.b(static_cast<Eigen::Index>(w)) = std::log(p[w]);

  double nll = 0;
  std::size_t n = 0;
  for (const auto& doc : c.docs) {
    bool first = true;
    for (const auto& para : doc.paragraphs)
      for (const auto& s : para)
        for (WordId w : s) {
          if (!first) {
            nll -= std::log(p[static_cast<std::size_t>(w)] / z);
            ++n;
          }
          first = false;
        }
  }
  const auto r = eval_perplexity(m, c.docs, {}, nullptr, 7);
  CHECK(r.predictions == n);
  CHECK(r.perplexity == doctest::Approx(std::exp(nll / static_cast<double>(n))).epsilon(1e-10));
}

TEST_CASE("a one-hot memorizer approaches perplexity 1") {
  // cycle 0 -> 1 -> ... -> 5 -> 0; one-hot embeddings, h ~ onehot(w), out.W maps w to w+1.
  const std::size_t V = 6;
  nn::ModelDims d;
  d.vocab = d.output = V;
  d.embed = d.hidden = V;
  d.peepholes = false;
  CorpusDocument doc;
  Sentence s;
  for (int i = 0; i < 30; ++i) s.push_back(i % 6);
  doc.paragraphs.push_back({s});
  const std::vector<CorpusDocument> docs{doc};
  double last = 1e9;
  for (double scale : {2.0, 8.0, 30.0}) {
    auto m = nn::zero_model<double>(d);
    const auto H = static_cast<Eigen::Index>(V);
    m.word_embedding.setIdentity();
    m.cell.base.Wx.middleRows(nn::kCell * H, H) = 20 * Eigen::MatrixXd::Identity(H, H);
    m.cell.base.b.segment(nn::kInput * H, H).setConstant(20);
    m.cell.base.b.segment(nn::kForget * H, H).setConstant(-20);
    m.cell.base.b.segment(nn::kOutput * H, H).setConstant(20);
    for (Eigen::Index w = 0; w < H; ++w) m.out.W((w + 1) % H, w) = scale;
    const double ppl = eval_perplexity(m, docs, {}, nullptr).perplexity;
    CHECK(ppl < last);
    last = ppl;
  }
  CHECK(last < 1.0 + 1e-6);
}

TEST_CASE("memorization micro-corpus: monotone training loss and perplexity < 1.5") {
  const auto corpus = memorization_corpus(30);
  TrainConfig cfg;
  cfg.hidden = 32;
  cfg.embed = 16;
  cfg.epochs = 50;
  cfg.learning_rate = 1.0;
  cfg.batch_size = 1;
  cfg.init_scale = 0.3;
  const auto r = train_word_model(corpus, 30, {}, nullptr, cfg);
  REQUIRE(r.train_loss.size() == 50);
  for (std::size_t e = 2; e < 20; ++e) {
    CAPTURE(e);
    CHECK(r.train_loss[e] < r.train_loss[e - 1]);
  }
  CHECK(eval_perplexity(r.model, corpus.train, {}, nullptr).perplexity < 1.5);
}

TEST_CASE("zero topic projection reduces CLSTM perplexity to the LSTM's") {
  const auto c = testing::small_corpus(testing::tiny_spec(5));
  const auto topics = fitted(c.docs, c.vocab.size());
  const auto features = FeatureSet::parse("sentseg,paraseg");
  TrainConfig cfg;
  cfg.hidden = 8;
  cfg.embed = 4;
  cfg.topic_embed = 3;
  auto clstm = nn::init_model<double>(word_model_dims(c.vocab.size(), features, &topics, cfg), 3, {0.3, 1.0, 0.1});
  clstm.cell.topic_proj.setZero();
  auto lstm = nn::zero_model<double>(word_model_dims(c.vocab.size(), {}, nullptr, cfg));
  lstm.word_embedding = clstm.word_embedding;
  lstm.cell.base = clstm.cell.base;
  lstm.out = clstm.out;
  const double a = eval_perplexity(clstm, c.docs, features, &topics).perplexity;
  const double b = eval_perplexity(lstm, c.docs, {}, nullptr).perplexity;
  CHECK(std::abs(a / b - 1.0) < 1e-9);
}

TEST_CASE("training is deterministic per seed") {
  const auto c = testing::small_corpus(testing::tiny_spec(7));
  const auto split = split_corpus(std::span<const CorpusDocument>(c.docs), {}, 1);
  const auto topics = fitted(split.train, c.vocab.size());
  TrainConfig cfg;
  cfg.hidden = 8;
  cfg.embed = 4;
  cfg.topic_embed = 3;
  cfg.epochs = 2;
  const auto features = FeatureSet::parse("sentseg");
  const auto a = train_word_model(split, c.vocab.size(), features, &topics, cfg);
  const auto b = train_word_model(split, c.vocab.size(), features, &topics, cfg);
  CHECK(a.train_loss == b.train_loss);
  nn::visit_tensors([](const std::string&, const auto& x, const auto& y) { CHECK(x == y); }, a.model, b.model);
  cfg.seed = 2;
  const auto other = train_word_model(split, c.vocab.size(), features, &topics, cfg);
  CHECK(other.train_loss != a.train_loss);
}

TEST_CASE("learning-rate schedule and config validation") {
  TrainConfig cfg;
  cfg.learning_rate = 1.0;
  cfg.lr_decay = 0.9;
  CHECK(epoch_learning_rate(cfg, 0) == 1.0);
  CHECK(epoch_learning_rate(cfg, 3) == doctest::Approx(0.729));
  cfg.hidden = 0;
  CHECK_THROWS_AS(cfg.validate(), Error);
  const auto c = testing::small_corpus(testing::tiny_spec(1));
  CHECK_THROWS_AS(make_stream(c.docs[0], FeatureSet::parse("sentseg"), nullptr), Error);
  CHECK_THROWS_AS(make_stream(c.docs[0], FeatureSet::parse("thought"), nullptr), Error);
}
