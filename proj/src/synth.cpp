#include "ctxlstm/synth.hpp"

#include <algorithm>
#include <cmath>

namespace ctxlstm {

namespace {

std::vector<double> zipf_weights(std::size_t n, double exponent) {
  std::vector<double> w(n);
  double total = 0;
  for (std::size_t r = 0; r < n; ++r) {
    w[r] = 1.0 / std::pow(static_cast<double>(r + 1), exponent);
    total += w[r];
  }
  for (double& x : w) x /= total;
  return w;
}

std::size_t draw(Rng& rng, const std::vector<double>& cumulative) {
  const double u = rng.uniform();
  auto it = std::upper_bound(cumulative.begin(), cumulative.end(), u);
  return std::min(static_cast<std::size_t>(it - cumulative.begin()), cumulative.size() - 1);
}

std::vector<double> cumulative(const std::vector<double>& w) {
  std::vector<double> c(w.size());
  double acc = 0;
  for (std::size_t i = 0; i < w.size(); ++i) c[i] = (acc += w[i]);
  return c;
}

// Parses "t<topic>w<index>" / "s<index>".
bool parse_topic_token(std::string_view tok, std::size_t& topic, std::size_t& index) {
  if (tok.size() < 4 || tok[0] != 't') return false;
  const auto w = tok.find('w');
  if (w == std::string_view::npos || w < 2 || w + 1 >= tok.size()) return false;
  topic = 0;
  index = 0;
  for (std::size_t i = 1; i < w; ++i) {
    if (tok[i] < '0' || tok[i] > '9') return false;
    topic = topic * 10 + static_cast<std::size_t>(tok[i] - '0');
  }
  for (std::size_t i = w + 1; i < tok.size(); ++i) {
    if (tok[i] < '0' || tok[i] > '9') return false;
    index = index * 10 + static_cast<std::size_t>(tok[i] - '0');
  }
  return true;
}

bool parse_shared_token(std::string_view tok, std::size_t& index) {
  if (tok.size() < 2 || tok[0] != 's') return false;
  index = 0;
  for (std::size_t i = 1; i < tok.size(); ++i) {
    if (tok[i] < '0' || tok[i] > '9') return false;
    index = index * 10 + static_cast<std::size_t>(tok[i] - '0');
  }
  return true;
}

}  // namespace

void SynthCorpusSpec::validate() const {
  if (num_topics < 1 || vocab_per_topic < 1 || shared_vocab < 1 || sentence_length < 1 ||
      sentences_per_paragraph < 1 || num_paragraphs < 1 || num_documents < 1) {
    fail(ErrorKind::Config, "synthetic corpus counts must all be >= 1");
  }
  if (!(coherence >= 0.0 && coherence <= 1.0)) fail(ErrorKind::Config, "coherence must be in [0, 1]");
  if (!(topic_word_prob >= 0.0 && topic_word_prob <= 1.0))
    fail(ErrorKind::Config, "topic_word_prob must be in [0, 1]");
  if (!(zipf_exponent >= 0.0)) fail(ErrorKind::Config, "zipf_exponent must be >= 0");
}

std::string synth_topic_token(std::size_t topic, std::size_t index) {
  return "t" + std::to_string(topic) + "w" + std::to_string(index);
}

std::string synth_shared_token(std::size_t index) { return "s" + std::to_string(index); }

SynthCorpus generate_synth_corpus(const SynthCorpusSpec& spec) {
  spec.validate();
  Rng rng(derive_seed(spec.seed, "synth"));
  const auto topic_cdf = cumulative(zipf_weights(spec.vocab_per_topic, spec.zipf_exponent));
  const auto shared_cdf = cumulative(zipf_weights(spec.shared_vocab, spec.zipf_exponent));
  const std::size_t L = spec.sentence_length;
  const std::size_t len_lo = std::max<std::size_t>(1, L - L / 2);
  const std::size_t len_hi = L + L / 2;

  SynthCorpus out;
  out.documents.reserve(spec.num_documents);
  out.topics.reserve(spec.num_documents);
  for (std::size_t d = 0; d < spec.num_documents; ++d) {
    TokenizedDocument doc;
    DocumentLabels labels;
    std::size_t topic = rng.below(spec.num_topics);
    bool first = true;
    for (std::size_t p = 0; p < spec.num_paragraphs; ++p) {
      TokenizedDocument::Paragraph para;
      std::vector<int> para_labels;
      for (std::size_t s = 0; s < spec.sentences_per_paragraph; ++s) {
        if (!first && spec.num_topics > 1 && !rng.bernoulli(spec.coherence)) {
          // Switch to one of the other topics uniformly.
          std::size_t next = rng.below(spec.num_topics - 1);
          if (next >= topic) ++next;
          topic = next;
        }
        first = false;
        const std::size_t len = len_lo + rng.below(len_hi - len_lo + 1);
        TokenizedDocument::Sentence sent;
        sent.reserve(len);
        for (std::size_t w = 0; w < len; ++w) {
          if (rng.bernoulli(spec.topic_word_prob)) sent.push_back(synth_topic_token(topic, draw(rng, topic_cdf)));
          else sent.push_back(synth_shared_token(draw(rng, shared_cdf)));
        }
        para.push_back(std::move(sent));
        para_labels.push_back(static_cast<int>(topic));
      }
      doc.paragraphs.push_back(std::move(para));
      labels.push_back(std::move(para_labels));
    }
    out.documents.push_back(std::move(doc));
    out.topics.push_back(std::move(labels));
  }
  return out;
}

SynthModel::SynthModel(const SynthCorpusSpec& spec)
    : spec_(spec),
      topic_weights_(zipf_weights(spec.vocab_per_topic, spec.zipf_exponent)),
      shared_weights_(zipf_weights(spec.shared_vocab, spec.zipf_exponent)) {
  spec_.validate();
}

double SynthModel::word_prob(std::size_t topic, std::string_view token) const {
  std::size_t t = 0;
  std::size_t i = 0;
  if (parse_topic_token(token, t, i)) {
    if (t != topic || i >= topic_weights_.size()) return 0.0;
    return spec_.topic_word_prob * topic_weights_[i];
  }
  if (parse_shared_token(token, i)) {
    if (i >= shared_weights_.size()) return 0.0;
    return (1.0 - spec_.topic_word_prob) * shared_weights_[i];
  }
  return 0.0;
}

double SynthModel::sentence_logprob(std::size_t topic, const std::vector<std::string>& tokens) const {
  double lp = 0;
  for (const auto& tok : tokens) lp += std::log(word_prob(topic, tok));
  return lp;
}

double SynthModel::transition_prob(std::size_t from, std::size_t to) const {
  if (spec_.num_topics == 1) return 1.0;
  if (from == to) return spec_.coherence;
  return (1.0 - spec_.coherence) / static_cast<double>(spec_.num_topics - 1);
}

}  // namespace ctxlstm
