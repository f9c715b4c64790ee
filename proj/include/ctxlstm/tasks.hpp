#pragma once

#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ctxlstm/corpus.hpp"
#include "ctxlstm/nn/sequence.hpp"
#include "ctxlstm/topic.hpp"

namespace ctxlstm {

using Model = nn::LanguageModel<double>;

struct TrainConfig {
  std::size_t hidden = 32;
  std::size_t embed = 16;
  std::size_t topic_embed = 32;
  double learning_rate = 0.1;
  double lr_decay = 0.9;  // per epoch
  double clip_norm = 5.0;
  std::size_t bptt_len = 64;
  std::size_t batch_size = 16;
  std::size_t epochs = 5;
  std::uint64_t seed = 1;
  bool peepholes = true;
  bool shared_topic_projection = false;
  double init_scale = 0.05;
  // SGD on the NLL summed over a window's steps and averaged over columns;
  // false uses the per-token mean.
  bool sequence_sum = true;

  void validate() const;
};

// Topic feature slots fed to the cell; word input is always present.
// Kinds are kept in enum order so equal sets compare and print equal.
class FeatureSet {
 public:
  FeatureSet() = default;
  explicit FeatureSet(std::vector<TopicFeatureKind> kinds);

  // "word", "none" or "" give the empty set; otherwise a comma list of
  // prevsent, sentseg, paraseg, sent, thought.
  static FeatureSet parse(std::string_view text);

  const std::vector<TopicFeatureKind>& kinds() const { return kinds_; }
  bool empty() const { return kinds_.empty(); }
  bool has_thought() const;
  std::size_t topic_slots() const;  // discrete slots, thought excluded

  std::string to_string() const;  // comma list, "word" when empty
  std::string label() const;      // "Word + SentSegTopic"
  bool operator==(const FeatureSet&) const = default;

 private:
  std::vector<TopicFeatureKind> kinds_;
};

// One document flattened into a word stream with aligned topic ids per slot.
struct FeatureStream {
  std::vector<WordId> words;
  std::vector<std::vector<int>> topics;  // per slot, same length as words
};

FeatureStream make_stream(const CorpusDocument& doc, const FeatureSet& features, const TopicModel* topics);

nn::ModelDims word_model_dims(std::size_t vocab_size, const FeatureSet& features, const TopicModel* topics,
                              const TrainConfig& config);

struct EpochLog {
  std::size_t epoch = 0;
  std::string split;
  double mean_nll = 0;
  double perplexity = 0;
  double seconds = 0;
};

// Tab-separated: epoch, split, mean NLL (nats), perplexity, seconds.
void write_epoch_log(std::ostream& out, const EpochLog& log);

struct PerplexityResult {
  double mean_nll = 0;
  double perplexity = 0;
  std::size_t predictions = 0;
};

struct TrainResult {
  Model model;                  // parameters with the best validation perplexity
  std::vector<EpochLog> log;
  std::vector<double> train_loss;  // mean training NLL per epoch
  std::vector<double> grad_norm;   // mean pre-clip gradient norm per epoch
  std::size_t best_epoch = 0;
};

using EpochCallback = std::function<void(const EpochLog&)>;

// Epoch loop shared by the trainers: train_epoch(model, epoch, lr) runs one
// pass and returns (mean training NLL, mean pre-clip gradient norm); the
// parameters with the best validate(model) perplexity are kept.
using EpochFn = std::function<std::pair<double, double>(Model&, std::size_t, double)>;
using ValidateFn = std::function<PerplexityResult(const Model&)>;
TrainResult run_training(Model model, const TrainConfig& config, const EpochFn& train_epoch,
                         const ValidateFn& validate, const EpochCallback& on_epoch);

// Next-word training over whole documents: state threads through each
// document, truncated BPTT windows of bptt_len carry state forward.
TrainResult train_word_model(const CorpusSplit& corpus, std::size_t vocab_size, const FeatureSet& features,
                             const TopicModel* topics, const TrainConfig& config, const EpochCallback& on_epoch = {});

// exp(mean NLL) over every next-word prediction; state resets per document.
PerplexityResult eval_perplexity(const Model& model, std::span<const CorpusDocument> docs,
                                 const FeatureSet& features, const TopicModel* topics, std::size_t batch_size = 32);

// One clipped SGD step on the gradient of a weighted-mean loss, rescaled per
// config.sequence_sum. Returns the pre-clip norm.
double apply_sgd(Model& model, nn::Gradients<double>& grads, double total_weight, Eigen::Index columns, double lr,
                 const TrainConfig& config);

inline double epoch_learning_rate(const TrainConfig& config, std::size_t epoch) {
  double lr = config.learning_rate;
  for (std::size_t e = 0; e < epoch; ++e) lr *= config.lr_decay;
  return lr;
}

// Column-batched sequences built from streams: inputs positions 0..n-2,
// targets 1..n-1, padded with zero weight.
nn::SequenceBatch<double> stream_batch(std::span<const FeatureStream* const> streams, std::size_t begin,
                                       std::size_t length);

}  // namespace ctxlstm
