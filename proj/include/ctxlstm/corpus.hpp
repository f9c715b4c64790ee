#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "ctxlstm/common.hpp"

namespace ctxlstm {

using WordId = std::int32_t;

// document -> paragraphs -> sentences -> tokens
template <class Token>
struct BasicDocument {
  using Sentence = std::vector<Token>;
  using Paragraph = std::vector<Sentence>;

  std::vector<Paragraph> paragraphs;

  std::size_t sentence_count() const {
    std::size_t n = 0;
    for (const auto& p : paragraphs) n += p.size();
    return n;
  }
  std::size_t word_count() const {
    std::size_t n = 0;
    for (const auto& p : paragraphs)
      for (const auto& s : p) n += s.size();
    return n;
  }
  bool operator==(const BasicDocument&) const = default;
};

using TokenizedDocument = BasicDocument<std::string>;
using CorpusDocument = BasicDocument<WordId>;
using Sentence = CorpusDocument::Sentence;
using Paragraph = CorpusDocument::Paragraph;

// Per-sentence integer labels laid out like a document (paragraph x sentence).
using DocumentLabels = std::vector<std::vector<int>>;

// Paragraphs split on blank lines, sentences on terminal punctuation followed
// by whitespace, tokens on whitespace. Tokens are ASCII-lowercased and have
// leading/trailing punctuation stripped; punctuation-only tokens vanish.
TokenizedDocument tokenize(std::string_view raw_text);

// Word-level rules only; the input is treated as one sentence.
std::vector<std::string> tokenize_words(std::string_view sentence);

class Vocabulary {
 public:
  static constexpr WordId kUnkId = 0;
  static constexpr std::string_view kUnkToken = "<unk>";

  Vocabulary();

  // Tokens with corpus frequency >= threshold, ids in descending frequency,
  // ties broken lexicographically. Id 0 is always the unknown token.
  static Vocabulary build(std::span<const TokenizedDocument> documents, std::size_t threshold);

  WordId id(std::string_view token) const;
  bool contains(std::string_view token) const;
  const std::string& token(WordId id) const { return id_to_token_.at(static_cast<std::size_t>(id)); }
  std::size_t frequency(WordId id) const { return frequency_.at(static_cast<std::size_t>(id)); }
  std::size_t size() const { return id_to_token_.size(); }
  std::size_t threshold() const { return threshold_; }
  WordId unk_id() const { return kUnkId; }

  std::uint64_t content_hash() const;

  // One token per line, "token\tfrequency"; line number is the id.
  void write(std::ostream& out) const;
  static Vocabulary read(std::istream& in);

 private:
  std::unordered_map<std::string, WordId> token_to_id_;
  std::vector<std::string> id_to_token_;
  std::vector<std::size_t> frequency_;
  std::size_t threshold_ = 1;
};

inline Vocabulary build_vocab(std::span<const TokenizedDocument> documents, std::size_t threshold) {
  return Vocabulary::build(documents, threshold);
}

CorpusDocument encode(const TokenizedDocument& document, const Vocabulary& vocab);
std::vector<CorpusDocument> encode(std::span<const TokenizedDocument> documents, const Vocabulary& vocab);
TokenizedDocument decode(const CorpusDocument& document, const Vocabulary& vocab);

struct OovStats {
  std::size_t oov = 0;
  std::size_t total = 0;
  double rate() const { return total == 0 ? 0.0 : static_cast<double>(oov) / static_cast<double>(total); }
};
OovStats count_oov(std::span<const CorpusDocument> documents, const Vocabulary& vocab);

struct SplitFractions {
  double train = 0.8;
  double validation = 0.1;
  double test = 0.1;
};

// Source indices of the documents assigned to each part.
struct SplitAssignment {
  std::vector<std::size_t> train;
  std::vector<std::size_t> validation;
  std::vector<std::size_t> test;
};

SplitAssignment assign_splits(std::size_t num_documents, const SplitFractions& fractions, std::uint64_t seed);

template <class Doc>
struct BasicSplit {
  std::vector<Doc> train;
  std::vector<Doc> validation;
  std::vector<Doc> test;
  SplitAssignment assignment;
};

using CorpusSplit = BasicSplit<CorpusDocument>;

template <class Doc>
std::vector<Doc> gather(std::span<const Doc> items, std::span<const std::size_t> indices) {
  std::vector<Doc> out;
  out.reserve(indices.size());
  for (std::size_t i : indices) out.push_back(items[i]);
  return out;
}

template <class Doc>
BasicSplit<Doc> split_corpus(std::span<const Doc> documents, const SplitFractions& fractions,
                             std::uint64_t seed) {
  BasicSplit<Doc> s;
  s.assignment = assign_splits(documents.size(), fractions, seed);
  s.train = gather(documents, std::span<const std::size_t>(s.assignment.train));
  s.validation = gather(documents, std::span<const std::size_t>(s.assignment.validation));
  s.test = gather(documents, std::span<const std::size_t>(s.assignment.test));
  return s;
}

// <A B C D>: four consecutive sentences of one paragraph.
struct SequenceTuple {
  std::size_t document = 0;
  std::size_t paragraph = 0;
  std::size_t first_sentence = 0;

  const Sentence& sentence(std::span<const CorpusDocument> docs, std::size_t offset) const {
    return docs[document].paragraphs[paragraph][first_sentence + offset];
  }
  bool operator==(const SequenceTuple&) const = default;
};

struct SequenceBlock {
  std::vector<SequenceTuple> sequences;
  std::size_t block_size() const { return sequences.size(); }
};

inline constexpr std::size_t kSequenceLength = 4;

// Partition test documents into num_blocks disjoint subsets and draw k tuples
// from k distinct paragraphs of each subset.
std::vector<SequenceBlock> sample_blocks(std::span<const CorpusDocument> test_docs, std::size_t k,
                                         std::size_t num_blocks, std::uint64_t seed);

// ---- files -------------------------------------------------------------

// A directory of plain-text files (one document each), a single plain-text
// file (one document), or a ".jsonl" file with one document per line encoded
// as [[sentence, ...], ...] (paragraphs of sentence strings).
std::vector<TokenizedDocument> read_raw_corpus(const std::filesystem::path& path);
void write_structured_corpus(std::ostream& out, std::span<const TokenizedDocument> documents);

// Encoded documents, one JSON line each, after a header line carrying hashes.
struct EncodedCorpusHeader {
  std::uint64_t vocab_hash = 0;
  std::uint64_t content_hash = 0;  // over the encoded documents
};
std::uint64_t corpus_hash(std::span<const CorpusDocument> documents);
void write_encoded_corpus(std::ostream& out, std::span<const CorpusDocument> documents, std::uint64_t vocab_hash);
std::vector<CorpusDocument> read_encoded_corpus(std::istream& in, EncodedCorpusHeader* header = nullptr);

// One integer per sentence; a blank line closes a paragraph, a second blank
// line closes the document.
void write_topic_sidecar(std::ostream& out, std::span<const DocumentLabels> labels);
std::vector<DocumentLabels> read_topic_sidecar(std::istream& in);

}  // namespace ctxlstm
