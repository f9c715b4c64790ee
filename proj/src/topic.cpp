#include "ctxlstm/topic.hpp"

#include <Eigen/SparseCore>
#include <algorithm>
#include <cmath>
#include <istream>
#include <limits>
#include <map>
#include <ostream>

#include "ctxlstm/binary_io.hpp"

namespace ctxlstm {

namespace {

constexpr double kFixedScale = 1099511627776.0;  // 2^40
constexpr char kTopicMagic[8] = {'C', 'L', 'T', 'O', 'P', 'I', 'C', '1'};
constexpr std::uint32_t kTopicVersion = 1;

using SparseRows = Eigen::SparseMatrix<double, Eigen::RowMajor>;

std::map<WordId, double> bag(std::span<const WordId> span) {
  std::map<WordId, double> counts;
  for (WordId w : span) counts[w] += 1.0;
  return counts;
}

}  // namespace

std::string_view to_string(TopicFeatureKind kind) {
  switch (kind) {
    case TopicFeatureKind::None: return "none";
    case TopicFeatureKind::PrevSentTopic: return "prevsent";
    case TopicFeatureKind::SentSegTopic: return "sentseg";
    case TopicFeatureKind::ParaSegTopic: return "paraseg";
    case TopicFeatureKind::SentTopic: return "sent";
    case TopicFeatureKind::PrevSentThought: return "thought";
  }
  return "none";
}

TopicFeatureKind parse_feature_kind(std::string_view name) {
  for (auto k : {TopicFeatureKind::None, TopicFeatureKind::PrevSentTopic, TopicFeatureKind::SentSegTopic,
                 TopicFeatureKind::ParaSegTopic, TopicFeatureKind::SentTopic, TopicFeatureKind::PrevSentThought}) {
    if (to_string(k) == name) return k;
  }
  fail(ErrorKind::Config, "unknown feature kind '" + std::string(name) + "'");
}

// ---- TopicModel ------------------------------------------------------------

TopicModel::TopicModel(Eigen::MatrixXd centroids, Eigen::VectorXd idf)
    : centroids_(std::move(centroids)), idf_(std::move(idf)) {
  if (centroids_.rows() < 1) fail(ErrorKind::Config, "topic model needs at least one topic");
  if (idf_.size() != centroids_.cols()) fail(ErrorKind::Dimension, "idf length must equal centroid width");
  for (Eigen::Index k = 0; k < centroids_.rows(); ++k) {
    const double n = centroids_.row(k).norm();
    if (n > 0) centroids_.row(k) /= n;
  }
  build_fixed_point();
}

void TopicModel::build_fixed_point() {
  fixed_.resize(centroids_.rows(), centroids_.cols());
  for (Eigen::Index w = 0; w < centroids_.cols(); ++w)
    for (Eigen::Index k = 0; k < centroids_.rows(); ++k)
      fixed_(k, w) = std::llround(idf_(w) * centroids_(k, w) * kFixedScale);
}

void TopicModel::check_word(WordId w) const {
  if (w < 0 || static_cast<Eigen::Index>(w) >= centroids_.cols()) {
    fail(ErrorKind::Dimension, "word id " + std::to_string(w) + " outside topic model vocabulary");
  }
}

TopicId TopicModel::argmax(std::span<const std::int64_t> scores) {
  TopicId best = 0;
  for (std::size_t k = 1; k < scores.size(); ++k) {
    if (scores[k] > scores[static_cast<std::size_t>(best)]) best = static_cast<TopicId>(k);
  }
  return best;
}

TopicId TopicModel::assign(std::span<const WordId> span) const {
  if (span.empty()) return kNeutralTopic;
  std::vector<std::int64_t> score(num_topics(), 0);
  for (WordId w : span) {
    check_word(w);
    const auto col = fixed_.col(w);
    for (std::size_t k = 0; k < score.size(); ++k) score[k] += col(static_cast<Eigen::Index>(k));
  }
  return argmax(score);
}

Eigen::VectorXd TopicModel::similarities(std::span<const WordId> span) const {
  Eigen::VectorXd dots = Eigen::VectorXd::Zero(centroids_.rows());
  double norm2 = 0;
  for (const auto& [w, tf] : bag(span)) {
    check_word(w);
    const double x = tf * idf_(w);
    dots += x * centroids_.col(w);
    norm2 += x * x;
  }
  if (norm2 > 0) dots /= std::sqrt(norm2);
  return dots;
}

Eigen::VectorXd TopicModel::distribution(std::span<const WordId> span) const {
  Eigen::VectorXd s = similarities(span);
  Eigen::VectorXd p = (s.array() - s.maxCoeff()).exp();
  return p / p.sum();
}

TopicModel::PrefixTracker::PrefixTracker(const TopicModel& model)
    : model_(&model), score_(model.num_topics(), 0) {}

void TopicModel::PrefixTracker::add(WordId w) {
  model_->check_word(w);
  const auto col = model_->fixed_.col(w);
  for (std::size_t k = 0; k < score_.size(); ++k) score_[k] += col(static_cast<Eigen::Index>(k));
  ++count_;
}

void TopicModel::PrefixTracker::reset() {
  std::fill(score_.begin(), score_.end(), 0);
  count_ = 0;
}

TopicId TopicModel::PrefixTracker::current() const {
  return count_ == 0 ? kNeutralTopic : TopicModel::argmax(score_);
}

void TopicModel::write(std::ostream& out, std::uint64_t vocab_hash) const {
  out.write(kTopicMagic, sizeof(kTopicMagic));
  binary::write<std::uint32_t>(out, kTopicVersion);
  binary::write<std::uint32_t>(out, static_cast<std::uint32_t>(num_topics()));
  binary::write<std::uint32_t>(out, static_cast<std::uint32_t>(vocab_size()));
  binary::write<std::uint64_t>(out, vocab_hash);
  for (Eigen::Index k = 0; k < centroids_.rows(); ++k)
    for (Eigen::Index w = 0; w < centroids_.cols(); ++w) binary::write<float>(out, static_cast<float>(centroids_(k, w)));
  for (Eigen::Index w = 0; w < idf_.size(); ++w) binary::write<float>(out, static_cast<float>(idf_(w)));
  if (!out) fail(ErrorKind::Io, "failed writing topic model");
}

TopicModel TopicModel::read(std::istream& in, std::uint64_t* vocab_hash) {
  char magic[sizeof(kTopicMagic)];
  if (!in.read(magic, sizeof(magic))) fail(ErrorKind::Format, "truncated topic model file");
  if (!std::equal(magic, magic + sizeof(magic), kTopicMagic)) fail(ErrorKind::BadMagic, "not a topic model file");
  if (binary::read<std::uint32_t>(in, "version") != kTopicVersion)
    fail(ErrorKind::BadVersion, "unsupported topic model version");
  const auto k = binary::read<std::uint32_t>(in, "num_topics");
  const auto v = binary::read<std::uint32_t>(in, "vocab_size");
  const auto h = binary::read<std::uint64_t>(in, "vocab_hash");
  if (k == 0 || v == 0 || static_cast<std::uint64_t>(k) * v > (1ull << 32))
    fail(ErrorKind::Format, "implausible topic model dimensions");
  Eigen::MatrixXd c(k, v);
  for (Eigen::Index i = 0; i < c.rows(); ++i)
    for (Eigen::Index w = 0; w < c.cols(); ++w) c(i, w) = binary::read<float>(in, "centroids");
  Eigen::VectorXd idf(v);
  for (Eigen::Index w = 0; w < idf.size(); ++w) idf(w) = binary::read<float>(in, "idf");
  if (vocab_hash) *vocab_hash = h;
  return TopicModel(std::move(c), std::move(idf));
}

// ---- fitting -----------------------------------------------------------------

namespace {

struct KMeansRun {
  Eigen::MatrixXd centroids;
  std::vector<int> assignments;
  std::vector<double> objective;
  std::size_t iterations = 0;
  double norm_error = 0;
};

// ||x - c||^2 for unit-or-zero x and unit c.
double sq_distance(double x_norm2, double sim) { return x_norm2 + 1.0 - 2.0 * sim; }

KMeansRun spherical_kmeans(const SparseRows& x, const Eigen::VectorXd& x_norm2, std::size_t k,
                           std::size_t max_iters, Rng& rng) {
  const Eigen::Index n = x.rows();
  const Eigen::Index v = x.cols();
  KMeansRun run;
  run.centroids = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(k), v);

  // Greedy k-means++ seeding with squared chord distance: per step, draw
  // 2 + ln k candidates by D^2 sampling and keep the one with lowest potential.
  auto d2_to = [&](Eigen::Index row, const Eigen::VectorXd& current) {
    const Eigen::VectorXd sim = x * x.row(row).transpose();
    Eigen::VectorXd d2(n);
    for (Eigen::Index i = 0; i < n; ++i) d2(i) = std::min(current(i), std::max(0.0, sq_distance(x_norm2(i), sim(i))));
    return d2;
  };
  const std::size_t trials = 2 + static_cast<std::size_t>(std::log(static_cast<double>(k)));
  Eigen::VectorXd best_d2 = Eigen::VectorXd::Constant(n, std::numeric_limits<double>::infinity());
  const auto first = static_cast<Eigen::Index>(rng.below(static_cast<std::size_t>(n)));
  run.centroids.row(0) = x.row(first);
  best_d2 = d2_to(first, best_d2);
  for (std::size_t c = 1; c < k; ++c) {
    const double total = best_d2.sum();
    Eigen::Index pick = -1;
    Eigen::VectorXd pick_d2;
    for (std::size_t t = 0; t < trials; ++t) {
      Eigen::Index cand = 0;
      if (total > 0) {
        double u = rng.uniform() * total;
        for (cand = 0; cand < n - 1; ++cand) {
          u -= best_d2(cand);
          if (u < 0) break;
        }
      } else {
        cand = static_cast<Eigen::Index>(rng.below(static_cast<std::size_t>(n)));
      }
      Eigen::VectorXd d2 = d2_to(cand, best_d2);
      if (pick < 0 || d2.sum() < pick_d2.sum()) {
        pick = cand;
        pick_d2 = std::move(d2);
      }
    }
    run.centroids.row(static_cast<Eigen::Index>(c)) = x.row(pick);
    best_d2 = std::move(pick_d2);
  }

  run.assignments.assign(static_cast<std::size_t>(n), -1);
  for (std::size_t it = 0; it < max_iters; ++it) {
    const Eigen::MatrixXd sim = x * run.centroids.transpose();  // n x k
    bool changed = false;
    double obj = 0;
    for (Eigen::Index i = 0; i < n; ++i) {
      Eigen::Index best = 0;
      for (Eigen::Index c = 1; c < sim.cols(); ++c)
        if (sim(i, c) > sim(i, best)) best = c;
      obj += sq_distance(x_norm2(i), sim(i, best));
      if (run.assignments[static_cast<std::size_t>(i)] != static_cast<int>(best)) changed = true;
      run.assignments[static_cast<std::size_t>(i)] = static_cast<int>(best);
    }
    run.objective.push_back(obj);
    run.iterations = it + 1;
    if (!changed && it > 0) break;

    // Update: normalized mean direction per cluster.
    Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(k), v);
    for (Eigen::Index i = 0; i < n; ++i) sums.row(run.assignments[static_cast<std::size_t>(i)]) += x.row(i);
    std::vector<bool> used(static_cast<std::size_t>(n), false);
    for (Eigen::Index c = 0; c < static_cast<Eigen::Index>(k); ++c) {
      const double norm = sums.row(c).norm();
      if (norm > 0) {
        run.centroids.row(c) = sums.row(c) / norm;
        continue;
      }
      // Empty cluster: reseed from the point farthest from its centroid.
      Eigen::Index far = -1;
      double far_d = -1;
      for (Eigen::Index i = 0; i < n; ++i) {
        if (used[static_cast<std::size_t>(i)] || x_norm2(i) == 0) continue;
        const int a = run.assignments[static_cast<std::size_t>(i)];
        const double d = sq_distance(x_norm2(i), sim(i, a));
        if (d > far_d) {
          far_d = d;
          far = i;
        }
      }
      if (far < 0) continue;
      used[static_cast<std::size_t>(far)] = true;
      run.centroids.row(c) = x.row(far);
    }
    for (Eigen::Index c = 0; c < static_cast<Eigen::Index>(k); ++c) {
      const double norm = run.centroids.row(c).norm();
      run.norm_error = std::max(run.norm_error, std::abs(norm - 1.0));
    }
  }
  return run;
}

}  // namespace

FitResult fit_topics(std::span<const CorpusDocument> documents, std::size_t vocab_size, const FitOptions& options) {
  if (options.num_topics < 1) fail(ErrorKind::Config, "num_topics must be >= 1");
  if (vocab_size < 1) fail(ErrorKind::Config, "vocab_size must be >= 1");

  std::vector<const Sentence*> sentences;
  for (const auto& doc : documents)
    for (const auto& para : doc.paragraphs)
      for (const auto& sent : para) sentences.push_back(&sent);
  if (sentences.empty()) fail(ErrorKind::Config, "cannot fit topics on an empty corpus");
  if (options.num_topics > sentences.size()) {
    fail(ErrorKind::Config, "num_topics (" + std::to_string(options.num_topics) + ") exceeds number of sentences (" +
                                std::to_string(sentences.size()) + ")");
  }

  // Smoothed idf over sentences.
  std::vector<std::size_t> df(vocab_size, 0);
  for (const Sentence* s : sentences) {
    for (const auto& [w, tf] : bag(*s)) {
      if (w < 0 || static_cast<std::size_t>(w) >= vocab_size)
        fail(ErrorKind::Dimension, "word id " + std::to_string(w) + " outside vocabulary");
      ++df[static_cast<std::size_t>(w)];
    }
  }
  const double n_sent = static_cast<double>(sentences.size());
  Eigen::VectorXd idf(static_cast<Eigen::Index>(vocab_size));
  for (std::size_t w = 0; w < vocab_size; ++w)
    idf(static_cast<Eigen::Index>(w)) = std::log((1.0 + n_sent) / (1.0 + static_cast<double>(df[w]))) + 1.0;

  // L2-normalized tf-idf rows.
  std::vector<Eigen::Triplet<double>> trips;
  Eigen::VectorXd x_norm2(static_cast<Eigen::Index>(sentences.size()));
  for (std::size_t i = 0; i < sentences.size(); ++i) {
    auto b = bag(*sentences[i]);
    double n2 = 0;
    for (const auto& [w, tf] : b) n2 += (tf * idf(w)) * (tf * idf(w));
    const double norm = std::sqrt(n2);
    for (const auto& [w, tf] : b) trips.emplace_back(static_cast<int>(i), w, tf * idf(w) / norm);
    x_norm2(static_cast<Eigen::Index>(i)) = n2 > 0 ? 1.0 : 0.0;
  }
  SparseRows x(static_cast<Eigen::Index>(sentences.size()), static_cast<Eigen::Index>(vocab_size));
  x.setFromTriplets(trips.begin(), trips.end());

  Rng rng(derive_seed(options.seed, "kmeans"));
  KMeansRun best;
  for (std::size_t r = 0; r < std::max<std::size_t>(1, options.restarts); ++r) {
    KMeansRun run = spherical_kmeans(x, x_norm2, options.num_topics, options.max_iters, rng);
    if (r == 0 || run.objective.back() < best.objective.back()) best = std::move(run);
  }

  FitResult result;
  result.assignments = std::move(best.assignments);
  result.objective = std::move(best.objective);
  result.iterations = best.iterations;
  result.max_centroid_norm_error = best.norm_error;
  result.model = TopicModel(std::move(best.centroids), std::move(idf));
  return result;
}

// ---- features ----------------------------------------------------------------

std::vector<std::vector<TopicSequence>> topic_features(const CorpusDocument& document, TopicFeatureKind kind,
                                                       const TopicModel& model) {
  std::vector<std::vector<TopicSequence>> out;
  out.reserve(document.paragraphs.size());
  TopicModel::PrefixTracker tracker(model);
  TopicId prev_sentence = kNeutralTopic;
  for (const auto& para : document.paragraphs) {
    std::vector<TopicSequence> seqs;
    seqs.reserve(para.size());
    if (kind == TopicFeatureKind::ParaSegTopic) tracker.reset();
    for (const auto& sent : para) {
      TopicSequence seq(sent.size(), kNeutralTopic);
      switch (kind) {
        case TopicFeatureKind::PrevSentTopic:
          std::fill(seq.begin(), seq.end(), prev_sentence);
          break;
        case TopicFeatureKind::SentSegTopic:
          tracker.reset();
          [[fallthrough]];
        case TopicFeatureKind::ParaSegTopic:
          for (std::size_t j = 0; j < sent.size(); ++j) {
            tracker.add(sent[j]);
            seq[j] = tracker.current();
          }
          break;
        case TopicFeatureKind::SentTopic:
          std::fill(seq.begin(), seq.end(), model.assign(sent));
          break;
        case TopicFeatureKind::None:
        case TopicFeatureKind::PrevSentThought:
          fail(ErrorKind::Config, "topic_features does not produce '" + std::string(to_string(kind)) + "'");
      }
      if (kind == TopicFeatureKind::PrevSentTopic) prev_sentence = model.assign(sent);
      seqs.push_back(std::move(seq));
    }
    out.push_back(std::move(seqs));
  }
  return out;
}

void write_topic_features(std::ostream& out, const std::vector<std::vector<TopicSequence>>& features) {
  for (const auto& para : features) {
    for (const auto& seq : para) {
      for (std::size_t j = 0; j < seq.size(); ++j) out << (j ? " " : "") << seq[j];
      out << '\n';
    }
    out << '\n';
  }
}

}  // namespace ctxlstm
