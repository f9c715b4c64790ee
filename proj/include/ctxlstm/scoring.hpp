#pragma once

#include <Eigen/Core>
#include <functional>
#include <iosfwd>
#include <span>
#include <vector>

#include "ctxlstm/tasks.hpp"

namespace ctxlstm {

// One block of the next-sentence task: context j is A_j B_j C_j, candidate i
// is D_i; the true next sentence of context j is candidate j.
struct ScoringInstance {
  std::vector<std::vector<Sentence>> contexts;  // k x 3 sentences
  std::vector<Sentence> candidates;             // k sentences

  std::size_t size() const { return candidates.size(); }
};

ScoringInstance make_instance(std::span<const CorpusDocument> docs, const SequenceBlock& block);
std::vector<ScoringInstance> make_instances(std::span<const CorpusDocument> docs,
                                            std::span<const SequenceBlock> blocks);

// M(i, j) = log P(D_i | Context_j).
using ScoreMatrix = Eigen::MatrixXd;
using Scorer = std::function<ScoreMatrix(const ScoringInstance&)>;

// N_i = log[(1/k) sum_j P(D_i | Context_j)], by log-sum-exp over row i.
Eigen::VectorXd normalizers(const ScoreMatrix& m);
// score(i, j) = M(i, j) - N_i: the normalized score of candidate i for context j.
ScoreMatrix normalized_scores(const ScoreMatrix& m);
// Per context j, argmax_i of the normalized score (lowest i on ties).
std::vector<std::size_t> predict_next(const ScoreMatrix& m);

struct AccuracyResult {
  double mean = 0;
  double stddev = 0;  // sample standard deviation across blocks
  std::vector<double> per_block;
};

AccuracyResult summarize_accuracy(std::vector<double> per_block);
double block_accuracy(std::span<const std::size_t> predictions);
AccuracyResult next_sentence_accuracy(std::span<const ScoringInstance> instances, const Scorer& scorer);
// Picks a candidate uniformly at random for every context.
AccuracyResult random_accuracy(std::span<const ScoringInstance> instances, std::uint64_t seed);

// Word model over the tuple A B C D. Topic features of every (context,
// candidate) pair are computed on the composite paragraph A_j B_j C_j D_i.
ScoreMatrix score_next_sentence(const Model& model, const ScoringInstance& instance, const FeatureSet& features,
                                const TopicModel* topics);

// Scoring model training: tuples of four consecutive sentences of the
// training paragraphs, loss on the words of D (every word when plain_lm).
struct ScoringTrainOptions {
  bool plain_lm = false;
};

std::vector<SequenceTuple> all_tuples(std::span<const CorpusDocument> docs);

TrainResult train_scoring_model(const CorpusSplit& corpus, std::size_t vocab_size, const FeatureSet& features,
                                const TopicModel* topics, const TrainConfig& config,
                                const ScoringTrainOptions& options = {}, const EpochCallback& on_epoch = {});

// Mean NLL of the words of D over tuples.
PerplexityResult eval_tuple_perplexity(const Model& model, std::span<const CorpusDocument> docs,
                                       std::span<const SequenceTuple> tuples, const FeatureSet& features,
                                       const TopicModel* topics, bool plain_lm = false);

// Blocks whose candidate sentences all have the same assigned topic.
std::vector<SequenceBlock> build_hard_negative_blocks(std::span<const CorpusDocument> test_docs,
                                                      const TopicModel& topics, std::size_t k,
                                                      std::size_t num_blocks, std::uint64_t seed);

// Debug dump: per block the k x k log-probability matrix and per-context argmax.
void write_score_dump(std::ostream& out, std::size_t block, const ScoreMatrix& m);

}  // namespace ctxlstm
