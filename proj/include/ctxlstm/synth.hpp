#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "ctxlstm/corpus.hpp"

namespace ctxlstm {

// Topic-coherent synthetic corpus: every sentence is drawn from one latent
// topic's unigram distribution (topic words mixed with a shared vocabulary),
// and the topic follows a Markov chain along the sentences of a document.
struct SynthCorpusSpec {
  std::size_t num_topics = 16;
  std::size_t vocab_per_topic = 20;
  std::size_t shared_vocab = 20;
  double coherence = 0.9;               // P(next sentence keeps the topic)
  std::size_t sentence_length = 10;     // mean; lengths are uniform in [L - L/2, L + L/2]
  std::size_t sentences_per_paragraph = 6;
  std::size_t num_paragraphs = 4;       // per document
  std::size_t num_documents = 1000;
  double topic_word_prob = 0.5;         // share of words drawn from the topic vocabulary
  double zipf_exponent = 1.0;           // within each vocabulary
  std::uint64_t seed = 1;

  void validate() const;
};

struct SynthCorpus {
  std::vector<TokenizedDocument> documents;
  std::vector<DocumentLabels> topics;  // ground-truth topic per sentence
};

SynthCorpus generate_synth_corpus(const SynthCorpusSpec& spec);

std::string synth_topic_token(std::size_t topic, std::size_t index);
std::string synth_shared_token(std::size_t index);

// The generating distributions, for oracle scorers.
class SynthModel {
 public:
  explicit SynthModel(const SynthCorpusSpec& spec);

  std::size_t num_topics() const { return spec_.num_topics; }
  double word_prob(std::size_t topic, std::string_view token) const;
  double sentence_logprob(std::size_t topic, const std::vector<std::string>& tokens) const;
  double transition_prob(std::size_t from, std::size_t to) const;

 private:
  SynthCorpusSpec spec_;
  std::vector<double> topic_weights_;   // normalized Zipf over vocab_per_topic
  std::vector<double> shared_weights_;  // normalized Zipf over shared_vocab
};

}  // namespace ctxlstm
