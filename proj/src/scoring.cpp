#include "ctxlstm/scoring.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <ostream>

namespace ctxlstm {

namespace {

// The sentences as one paragraph of a one-paragraph document.
FeatureStream composite_stream(std::span<const Sentence* const> sentences, const FeatureSet& features,
                               const TopicModel* topics) {
  CorpusDocument doc;
  doc.paragraphs.emplace_back();
  for (const auto* s : sentences) doc.paragraphs[0].push_back(*s);
  return make_stream(doc, features, topics);
}

double log_sum_exp(const Eigen::Ref<const Eigen::RowVectorXd>& v) {
  const double mx = v.maxCoeff();
  if (!std::isfinite(mx)) return mx;
  return mx + std::log((v.array() - mx).exp().sum());
}

std::size_t words_in(std::span<const Sentence* const> sentences) {
  std::size_t n = 0;
  for (const auto* s : sentences) n += s->size();
  return n;
}

}  // namespace

ScoringInstance make_instance(std::span<const CorpusDocument> docs, const SequenceBlock& block) {
  ScoringInstance inst;
  for (const auto& t : block.sequences) {
    inst.contexts.push_back({t.sentence(docs, 0), t.sentence(docs, 1), t.sentence(docs, 2)});
    inst.candidates.push_back(t.sentence(docs, 3));
  }
  return inst;
}

std::vector<ScoringInstance> make_instances(std::span<const CorpusDocument> docs,
                                            std::span<const SequenceBlock> blocks) {
  std::vector<ScoringInstance> out;
  out.reserve(blocks.size());
  for (const auto& b : blocks) out.push_back(make_instance(docs, b));
  return out;
}

Eigen::VectorXd normalizers(const ScoreMatrix& m) {
  if (m.rows() == 0 || m.rows() != m.cols()) fail(ErrorKind::Dimension, "score matrix must be square and nonempty");
  Eigen::VectorXd n(m.rows());
  const double log_k = std::log(static_cast<double>(m.cols()));
  for (Eigen::Index i = 0; i < m.rows(); ++i) n(i) = log_sum_exp(m.row(i)) - log_k;
  return n;
}

ScoreMatrix normalized_scores(const ScoreMatrix& m) {
  return m.colwise() - normalizers(m);
}

std::vector<std::size_t> predict_next(const ScoreMatrix& m) {
  const ScoreMatrix s = normalized_scores(m);
  std::vector<std::size_t> pred(static_cast<std::size_t>(s.cols()));
  for (Eigen::Index j = 0; j < s.cols(); ++j) {
    Eigen::Index best = 0;
    for (Eigen::Index i = 1; i < s.rows(); ++i)
      if (s(i, j) > s(best, j)) best = i;
    pred[static_cast<std::size_t>(j)] = static_cast<std::size_t>(best);
  }
  return pred;
}

double block_accuracy(std::span<const std::size_t> predictions) {
  if (predictions.empty()) fail(ErrorKind::Config, "empty candidate set");
  std::size_t correct = 0;
  for (std::size_t j = 0; j < predictions.size(); ++j) correct += predictions[j] == j;
  return static_cast<double>(correct) / static_cast<double>(predictions.size());
}

AccuracyResult summarize_accuracy(std::vector<double> per_block) {
  AccuracyResult r;
  r.per_block = std::move(per_block);
  const auto n = static_cast<double>(r.per_block.size());
  if (r.per_block.empty()) return r;
  r.mean = std::accumulate(r.per_block.begin(), r.per_block.end(), 0.0) / n;
  if (r.per_block.size() > 1) {
    double ss = 0;
    for (double a : r.per_block) ss += (a - r.mean) * (a - r.mean);
    r.stddev = std::sqrt(ss / (n - 1));
  }
  return r;
}

AccuracyResult next_sentence_accuracy(std::span<const ScoringInstance> instances, const Scorer& scorer) {
  std::vector<double> acc;
  acc.reserve(instances.size());
  for (const auto& inst : instances) {
    if (inst.size() == 0) fail(ErrorKind::Config, "empty candidate set");
    acc.push_back(block_accuracy(predict_next(scorer(inst))));
  }
  return summarize_accuracy(std::move(acc));
}

AccuracyResult random_accuracy(std::span<const ScoringInstance> instances, std::uint64_t seed) {
  Rng rng(derive_seed(seed, "random-scorer"));
  std::vector<double> acc;
  for (const auto& inst : instances) {
    std::vector<std::size_t> pred(inst.size());
    for (auto& p : pred) p = rng.below(inst.size());
    acc.push_back(block_accuracy(pred));
  }
  return summarize_accuracy(std::move(acc));
}

ScoreMatrix score_next_sentence(const Model& model, const ScoringInstance& instance, const FeatureSet& features,
                                const TopicModel* topics) {
  const std::size_t k = instance.size();
  if (k == 0) fail(ErrorKind::Config, "empty candidate set");
  if (instance.contexts.size() != k) fail(ErrorKind::Dimension, "one context per candidate required");
  const auto H = static_cast<Eigen::Index>(model.dims.hidden);
  const auto K = static_cast<Eigen::Index>(k);

  // Context pass: inputs are every context word but the last, so the state
  // handed to the candidate pass has not yet consumed C's final word.
  std::vector<FeatureStream> ctx(k);
  std::vector<const FeatureStream*> ctx_ptr(k);
  std::size_t longest = 0;
  for (std::size_t j = 0; j < k; ++j) {
    const auto& c = instance.contexts[j];
    if (c.empty()) fail(ErrorKind::Config, "empty context");
    std::vector<const Sentence*> sents;
    for (const auto& s : c) sents.push_back(&s);
    if (words_in(sents) == 0) fail(ErrorKind::Config, "context without words");
    ctx[j] = composite_stream(sents, features, topics);
    ctx_ptr[j] = &ctx[j];
    longest = std::max(longest, ctx[j].words.size() - 1);
  }
  auto seeded = nn::CellState<double>::zero(H, K);
  if (longest > 0) {
    const auto batch = stream_batch(ctx_ptr, 0, longest);
    const auto fwd = nn::forward_sequence(model, batch, nn::CellState<double>::zero(H, K));
    for (std::size_t j = 0; j < k; ++j) {
      const std::size_t n = ctx[j].words.size() - 1;
      if (n == 0) continue;
      const auto& tr = fwd.traces[n - 1];
      const auto jj = static_cast<Eigen::Index>(j);
      seeded.h.col(jj) = tr.h.col(jj);
      seeded.c.col(jj) = tr.c.col(jj);
    }
  }

  ScoreMatrix m(K, K);
  const std::size_t slots = features.topic_slots();
  for (std::size_t i = 0; i < k; ++i) {
    const auto& d = instance.candidates[i];
    if (d.empty()) fail(ErrorKind::Config, "empty candidate sentence");
    const auto T = static_cast<Eigen::Index>(d.size());
    auto batch = nn::SequenceBatch<double>::empty(T, K, slots);
    for (std::size_t j = 0; j < k; ++j) {
      const auto jj = static_cast<Eigen::Index>(j);
      std::vector<const Sentence*> sents;
      for (const auto& s : instance.contexts[j]) sents.push_back(&s);
      sents.push_back(&d);
      const auto full = composite_stream(sents, features, topics);
      const std::size_t start = ctx[j].words.size() - 1;  // position of C's last word
      for (Eigen::Index t = 0; t < T; ++t) {
        const auto pos = start + static_cast<std::size_t>(t);
        batch.words(t, jj) = full.words[pos];
        for (std::size_t s = 0; s < slots; ++s) batch.topics[s](t, jj) = full.topics[s][pos];
        batch.targets(t, jj) = full.words[pos + 1];
        batch.weights(t, jj) = 1.0;
      }
    }
    const auto fwd = nn::forward_sequence(model, batch, seeded);
    for (Eigen::Index t = 0; t < T; ++t) {
      const auto lp = nn::log_softmax<double>(fwd.logits[static_cast<std::size_t>(t)]);
      for (Eigen::Index j = 0; j < K; ++j) {
        if (t == 0) m(static_cast<Eigen::Index>(i), j) = 0;
        m(static_cast<Eigen::Index>(i), j) += lp(batch.targets(t, j), j);
      }
    }
  }
  if (!m.allFinite()) fail(ErrorKind::Numerical, "non-finite sentence log-probability");
  return m;
}

// ---- training --------------------------------------------------------------

std::vector<SequenceTuple> all_tuples(std::span<const CorpusDocument> docs) {
  std::vector<SequenceTuple> out;
  for (std::size_t d = 0; d < docs.size(); ++d)
    for (std::size_t p = 0; p < docs[d].paragraphs.size(); ++p) {
      const auto& para = docs[d].paragraphs[p];
      for (std::size_t s = 0; s + kSequenceLength <= para.size(); ++s) out.push_back({d, p, s});
    }
  return out;
}

namespace {

struct TupleStream {
  FeatureStream stream;
  std::size_t d_start = 0;  // index of D's first word
};

TupleStream tuple_stream(std::span<const CorpusDocument> docs, const SequenceTuple& t, const FeatureSet& features,
                         const TopicModel* topics) {
  std::vector<const Sentence*> sents;
  for (std::size_t o = 0; o < kSequenceLength; ++o) sents.push_back(&t.sentence(docs, o));
  TupleStream ts;
  ts.d_start = words_in(std::span(sents).first(kSequenceLength - 1));
  ts.stream = composite_stream(sents, features, topics);
  return ts;
}

nn::SequenceBatch<double> tuple_batch(std::span<const TupleStream* const> items, bool plain_lm) {
  std::vector<const FeatureStream*> streams;
  std::size_t longest = 0;
  for (const auto* it : items) {
    streams.push_back(&it->stream);
    longest = std::max(longest, it->stream.words.size() - 1);
  }
  auto batch = stream_batch(streams, 0, longest);
  if (!plain_lm) {
    for (std::size_t b = 0; b < items.size(); ++b) {
      // position pos predicts word pos + 1; D's words start at d_start
      const std::size_t first = items[b]->d_start - 1;
      for (std::size_t pos = 0; pos < first; ++pos)
        batch.weights(static_cast<Eigen::Index>(pos), static_cast<Eigen::Index>(b)) = 0.0;
    }
  }
  return batch;
}

std::vector<TupleStream> tuple_streams(std::span<const CorpusDocument> docs, std::span<const SequenceTuple> tuples,
                                       const FeatureSet& features, const TopicModel* topics) {
  std::vector<TupleStream> out;
  out.reserve(tuples.size());
  for (const auto& t : tuples) {
    out.push_back(tuple_stream(docs, t, features, topics));
    if (out.back().d_start == 0) fail(ErrorKind::Config, "tuple context without words");
  }
  return out;
}

}  // namespace

PerplexityResult eval_tuple_perplexity(const Model& model, std::span<const CorpusDocument> docs,
                                       std::span<const SequenceTuple> tuples, const FeatureSet& features,
                                       const TopicModel* topics, bool plain_lm) {
  const auto streams = tuple_streams(docs, tuples, features, topics);
  const auto H = static_cast<Eigen::Index>(model.dims.hidden);
  double nll = 0, weight = 0;
  constexpr std::size_t kBatch = 64;
  for (std::size_t first = 0; first < streams.size(); first += kBatch) {
    std::vector<const TupleStream*> chunk;
    for (std::size_t i = first; i < std::min(streams.size(), first + kBatch); ++i) chunk.push_back(&streams[i]);
    const auto batch = tuple_batch(chunk, plain_lm);
    const auto loss = nn::evaluate_loss(model, batch, nn::CellState<double>::zero(H, batch.batch()));
    nll += loss.total_nll;
    weight += loss.total_weight;
  }
  PerplexityResult r;
  r.predictions = static_cast<std::size_t>(weight);
  r.mean_nll = weight > 0 ? nll / weight : 0.0;
  r.perplexity = std::exp(r.mean_nll);
  return r;
}

TrainResult train_scoring_model(const CorpusSplit& corpus, std::size_t vocab_size, const FeatureSet& features,
                                const TopicModel* topics, const TrainConfig& config,
                                const ScoringTrainOptions& options, const EpochCallback& on_epoch) {
  config.validate();
  const auto dims = word_model_dims(vocab_size, features, topics, config);
  const auto tuples = all_tuples(corpus.train);
  if (tuples.empty()) fail(ErrorKind::Config, "no paragraph in the training split has four sentences");
  const auto streams = tuple_streams(corpus.train, tuples, features, topics);
  const auto& held_docs = corpus.validation.empty() ? corpus.train : corpus.validation;
  const auto held_tuples = all_tuples(held_docs);

  std::vector<std::size_t> order(streams.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  const auto H = static_cast<Eigen::Index>(dims.hidden);

  auto train_epoch = [&](Model& model, std::size_t epoch, double lr) {
    Rng rng(derive_seed(config.seed, "scoring-epoch-" + std::to_string(epoch)));
    rng.shuffle(order.begin(), order.end());
    double nll = 0, weight = 0, norms = 0;
    std::size_t updates = 0;
    for (std::size_t first = 0; first < order.size(); first += config.batch_size) {
      std::vector<const TupleStream*> chunk;
      for (std::size_t i = first; i < std::min(order.size(), first + config.batch_size); ++i)
        chunk.push_back(&streams[order[i]]);
      const auto batch = tuple_batch(chunk, options.plain_lm);
      auto ev = nn::loss_and_gradient(model, batch, nn::CellState<double>::zero(H, batch.batch()));
      nll += ev.loss.total_nll;
      weight += ev.loss.total_weight;
      if (ev.loss.total_weight > 0) {
        norms += apply_sgd(model, ev.backward.grads, ev.loss.total_weight, batch.batch(), lr, config);
        ++updates;
      }
    }
    return std::pair{weight > 0 ? nll / weight : 0.0, updates ? norms / static_cast<double>(updates) : 0.0};
  };
  auto validate = [&](const Model& model) {
    return eval_tuple_perplexity(model, held_docs, held_tuples, features, topics, options.plain_lm);
  };
  nn::InitOptions init;
  init.scale = config.init_scale;
  return run_training(nn::init_model<double>(dims, config.seed, init), config, train_epoch, validate, on_epoch);
}

// ---- hard negatives ------------------------------------------------------------

std::vector<SequenceBlock> build_hard_negative_blocks(std::span<const CorpusDocument> test_docs,
                                                      const TopicModel& topics, std::size_t k,
                                                      std::size_t num_blocks, std::uint64_t seed) {
  if (k == 0 || num_blocks == 0) fail(ErrorKind::Config, "k and num_blocks must be >= 1");
  // Per topic of D, the tuples grouped by paragraph.
  std::map<TopicId, std::map<std::pair<std::size_t, std::size_t>, std::vector<SequenceTuple>>> by_topic;
  for (const auto& t : all_tuples(test_docs))
    by_topic[topics.assign(t.sentence(test_docs, 3))][{t.document, t.paragraph}].push_back(t);

  std::vector<TopicId> eligible;
  for (const auto& [topic, paras] : by_topic)
    if (paras.size() >= k) eligible.push_back(topic);
  if (eligible.empty()) {
    std::size_t most = 0;
    for (const auto& [topic, paras] : by_topic) most = std::max(most, paras.size());
    fail(ErrorKind::Config, "hard negatives need " + std::to_string(k) +
                                " paragraphs sharing a candidate topic; the best topic has " + std::to_string(most));
  }

  Rng rng(derive_seed(seed, "hard-negatives"));
  std::vector<SequenceBlock> blocks;
  for (std::size_t b = 0; b < num_blocks; ++b) {
    const TopicId topic = eligible[rng.below(eligible.size())];
    const auto& paras = by_topic[topic];
    std::vector<const std::vector<SequenceTuple>*> pool;
    for (const auto& [key, tuples] : paras) pool.push_back(&tuples);
    rng.shuffle(pool.begin(), pool.end());
    SequenceBlock block;
    for (std::size_t i = 0; i < k; ++i) {
      const auto& options = *pool[i];
      block.sequences.push_back(options[rng.below(options.size())]);
    }
    blocks.push_back(std::move(block));
  }
  return blocks;
}

void write_score_dump(std::ostream& out, std::size_t block, const ScoreMatrix& m) {
  out << "block\t" << block << '\n';
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) out << (j ? "\t" : "") << m(i, j);
    out << '\n';
  }
  const auto pred = predict_next(m);
  out << "argmax";
  for (auto p : pred) out << '\t' << p;
  out << '\n';
}

}  // namespace ctxlstm
