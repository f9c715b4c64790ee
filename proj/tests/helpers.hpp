#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "ctxlstm/corpus.hpp"
#include "ctxlstm/synth.hpp"

namespace testing {

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    path_ = std::filesystem::temp_directory_path() /
            ("ctxlstm-" + tag + "-" + std::to_string(reinterpret_cast<std::uintptr_t>(this)));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

// Small synthetic corpus encoded with a threshold-1 vocabulary.
struct SmallCorpus {
  ctxlstm::SynthCorpus synth;
  ctxlstm::Vocabulary vocab;
  std::vector<ctxlstm::CorpusDocument> docs;
};

inline SmallCorpus small_corpus(ctxlstm::SynthCorpusSpec spec) {
  SmallCorpus c;
  c.synth = ctxlstm::generate_synth_corpus(spec);
  c.vocab = ctxlstm::build_vocab(c.synth.documents, 1);
  c.docs = ctxlstm::encode(c.synth.documents, c.vocab);
  return c;
}

inline ctxlstm::SynthCorpusSpec tiny_spec(std::uint64_t seed = 1) {
  ctxlstm::SynthCorpusSpec s;
  s.num_topics = 4;
  s.vocab_per_topic = 6;
  s.shared_vocab = 4;
  s.sentence_length = 5;
  s.sentences_per_paragraph = 5;
  s.num_paragraphs = 2;
  s.num_documents = 30;
  s.seed = seed;
  return s;
}

}  // namespace testing
