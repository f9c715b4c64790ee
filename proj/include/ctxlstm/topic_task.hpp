#pragma once

#include <span>
#include <string>
#include <vector>

#include "ctxlstm/checkpoint.hpp"
#include "ctxlstm/tasks.hpp"

namespace ctxlstm {

// Inputs of the unrolled topic model: W, ST, W + ST, W + PST.
enum class TopicInputs { Word, SentTopic, WordSentTopic, WordThought };

TopicInputs parse_topic_inputs(std::string_view text);  // "w", "st", "w+st", "w+pst"
std::string_view to_string(TopicInputs inputs);
std::string_view label(TopicInputs inputs);             // "W + ST"

inline bool uses_words(TopicInputs in) { return in != TopicInputs::SentTopic; }
inline bool uses_topic(TopicInputs in) { return in == TopicInputs::SentTopic || in == TopicInputs::WordSentTopic; }
inline bool uses_thought(TopicInputs in) { return in == TopicInputs::WordThought; }

// NextSentence: from sentence n (and its topic) predict the topic of n + 1.
// SameSentence: the BOW-DNN comparison setup; from the words of sentence n
// (and the topic of n - 1) predict the topic of n.
enum class TopicTarget { NextSentence, SameSentence };

struct ThoughtOptions {
  std::size_t dim = 16;
  double quantum = 0.25;  // 0 disables rounding
};

// q * round(v / q) per coordinate.
Eigen::MatrixXd roundoff(const Eigen::MatrixXd& v, double quantum);

struct TopicTaskModel {
  TopicInputs inputs = TopicInputs::Word;
  TopicTarget target = TopicTarget::NextSentence;
  ThoughtOptions thought;
  Model net;
  Eigen::MatrixXd thought_proj;  // thought.dim x hidden (W + PST only)
};

// Checkpoint with the net, the inputs/target/thought options in the manifest
// and the thought projection as the extra tensor "thought.proj".
void save_topic_task_model(const std::string& path, const TopicTaskModel& model, FlatConfig manifest);
TopicTaskModel load_topic_task_model(const std::string& path, const ExpectedHashes& expect = {},
                                     FlatConfig* manifest = nullptr);

// Per-sentence topic labels from a topic model.
std::vector<DocumentLabels> assign_labels(std::span<const CorpusDocument> docs, const TopicModel& topics);

struct TopicTaskData {
  std::span<const CorpusDocument> docs;
  std::span<const DocumentLabels> labels;
  std::size_t num_topics = 0;
};

// Thought vectors of one paragraph: entry n is the input of sentence n,
// roundoff(P h_last(n - 1)), zero for n = 0.
std::vector<Eigen::VectorXd> thought_vector_features(const TopicTaskModel& model, const Paragraph& paragraph);

struct TopicEval {
  double mean_nll = 0;
  double perplexity = 0;
  std::vector<double> losses;  // per example, in (document, paragraph, sentence) order
};

TopicEval eval_topic_model(const TopicTaskModel& model, const TopicTaskData& data, std::size_t batch_size = 64);

struct TopicTrainResult {
  TopicTaskModel model;  // best validation perplexity
  std::vector<EpochLog> log;
  std::size_t best_epoch = 0;
};

TopicTrainResult train_topic_model_task(const TopicTaskData& train, const TopicTaskData& validation,
                                        std::size_t vocab_size, TopicInputs inputs, TopicTarget target,
                                        const TrainConfig& config, const ThoughtOptions& thought = {},
                                        const EpochCallback& on_epoch = {});

// Bag-of-words count vector -> ReLU hidden layer -> softmax over topics,
// predicting the topic of a sentence from its own words.
template <class Scalar>
struct BowDnn {
  nn::Mat<Scalar> W1;  // hidden x vocab
  nn::Vec<Scalar> b1;
  nn::Mat<Scalar> W2;  // topics x hidden
  nn::Vec<Scalar> b2;
};

struct BowBatch {
  Eigen::MatrixXd counts;  // vocab x batch
  std::vector<int> targets;
};

// Mean NLL over the batch and, when grads is given, its exact gradient.
double bow_dnn_loss(const BowDnn<double>& m, const BowBatch& batch, BowDnn<double>* grads);

struct BowTrainResult {
  BowDnn<double> model;
  std::vector<EpochLog> log;
  std::size_t best_epoch = 0;
};

// Examples are the sentences n >= 1 of every paragraph, the same set the
// SameSentence topic model is scored on.
BowBatch bow_examples(const TopicTaskData& data, std::size_t vocab_size);
BowTrainResult bow_dnn_topic_baseline(const TopicTaskData& train, const TopicTaskData& validation,
                                      std::size_t vocab_size, const TrainConfig& config,
                                      const EpochCallback& on_epoch = {});
PerplexityResult eval_bow_dnn(const BowDnn<double>& model, const TopicTaskData& data, std::size_t vocab_size);

}  // namespace ctxlstm
