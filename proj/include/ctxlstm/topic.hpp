#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ctxlstm/corpus.hpp"

namespace ctxlstm {

using TopicId = std::int32_t;

// Reserved id for "no context" positions, e.g. PrevSentTopic of the first
// sentence of a document.
inline constexpr TopicId kNeutralTopic = 0;

enum class TopicFeatureKind {
  None,
  PrevSentTopic,    // topic of the whole previous sentence (document order)
  SentSegTopic,     // topic of the current sentence prefix, current word included
  ParaSegTopic,     // topic of the paragraph prefix, current word included
  SentTopic,        // topic of the whole current sentence
  PrevSentThought,  // produced by the network, not by a TopicModel
};

std::string_view to_string(TopicFeatureKind kind);
TopicFeatureKind parse_feature_kind(std::string_view name);

// Per-word-position topic ids of one sentence.
using TopicSequence = std::vector<TopicId>;

// Spherical k-means over tf-idf sentence vectors. The argmax contract is the
// one a supervised topic classifier offers: distribution over topics, pick the
// most likely one.
class TopicModel {
 public:
  TopicModel() = default;
  // centroids: num_topics x vocab, rows renormalized to unit length.
  TopicModel(Eigen::MatrixXd centroids, Eigen::VectorXd idf);

  std::size_t num_topics() const { return static_cast<std::size_t>(centroids_.rows()); }
  std::size_t vocab_size() const { return static_cast<std::size_t>(centroids_.cols()); }
  const Eigen::MatrixXd& centroids() const { return centroids_; }
  const Eigen::VectorXd& idf() const { return idf_; }

  // Argmax of cosine similarity; lowest id on ties; empty span -> kNeutralTopic.
  TopicId assign(std::span<const WordId> span) const;
  // Cosine similarity of the span's tf-idf vector with every centroid.
  Eigen::VectorXd similarities(std::span<const WordId> span) const;
  // Softmax over similarities.
  Eigen::VectorXd distribution(std::span<const WordId> span) const;

  // Running prefix scores, O(num_topics) per appended word. Scores are
  // fixed-point so the result is independent of summation order and matches
  // assign() on the same bag exactly.
  class PrefixTracker {
   public:
    explicit PrefixTracker(const TopicModel& model);
    void add(WordId w);
    void reset();
    TopicId current() const;
    bool empty() const { return count_ == 0; }

   private:
    const TopicModel* model_;
    std::vector<std::int64_t> score_;
    std::size_t count_ = 0;
  };

  void write(std::ostream& out, std::uint64_t vocab_hash) const;
  static TopicModel read(std::istream& in, std::uint64_t* vocab_hash = nullptr);

 private:
  void check_word(WordId w) const;
  void build_fixed_point();
  static TopicId argmax(std::span<const std::int64_t> scores);

  Eigen::MatrixXd centroids_;
  Eigen::VectorXd idf_;
  // fixed_(k, w) = round(idf[w] * centroids(k, w) * 2^40); column-major so a
  // word's column is contiguous.
  Eigen::Matrix<std::int64_t, Eigen::Dynamic, Eigen::Dynamic> fixed_;
};

struct FitOptions {
  std::size_t num_topics = 16;
  std::uint64_t seed = 1;
  std::size_t max_iters = 100;
  std::size_t restarts = 10;  // best objective over greedy k-means++ restarts
};

struct FitResult {
  TopicModel model;
  std::vector<int> assignments;       // per sentence, corpus order
  std::vector<double> objective;      // per iteration of the winning restart
  std::size_t iterations = 0;
  double max_centroid_norm_error = 0; // max | ||c_k|| - 1 | seen over all iterations
};

FitResult fit_topics(std::span<const CorpusDocument> documents, std::size_t vocab_size, const FitOptions& options);

inline TopicId assign_topic(std::span<const WordId> span, const TopicModel& model) { return model.assign(span); }

// Per paragraph, per sentence topic sequence for one discrete feature kind.
std::vector<std::vector<TopicSequence>> topic_features(const CorpusDocument& document, TopicFeatureKind kind,
                                                       const TopicModel& model);

// Debug dump: per sentence, whitespace-separated topic ids aligned to words.
void write_topic_features(std::ostream& out, const std::vector<std::vector<TopicSequence>>& features);

}  // namespace ctxlstm
