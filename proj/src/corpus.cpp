#include "ctxlstm/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>

#include "json.hpp"

namespace ctxlstm {

std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << v;
  return os.str();
}

std::uint64_t parse_hex64(std::string_view s) {
  if (s.empty() || s.size() > 16) fail(ErrorKind::Format, "bad hash '" + std::string(s) + "'");
  std::uint64_t v = 0;
  for (char c : s) {
    v <<= 4;
    if (c >= '0' && c <= '9') v |= static_cast<std::uint64_t>(c - '0');
    else if (c >= 'a' && c <= 'f') v |= static_cast<std::uint64_t>(c - 'a' + 10);
    else fail(ErrorKind::Format, "bad hash '" + std::string(s) + "'");
  }
  return v;
}

namespace {

bool is_space(unsigned char c) { return std::isspace(c) != 0; }
bool is_punct(unsigned char c) { return c < 0x80 && std::ispunct(c) != 0; }

// True when the raw whitespace-delimited token closes a sentence. Closing
// quotes and brackets after the terminal mark are allowed.
bool ends_sentence(std::string_view raw) {
  std::size_t end = raw.size();
  while (end > 0) {
    const char c = raw[end - 1];
    if (c == '"' || c == '\'' || c == ')' || c == ']' || c == '}') --end;
    else break;
  }
  if (end == 0) return false;
  const char last = raw[end - 1];
  return last == '.' || last == '!' || last == '?';
}

std::string normalize_token(std::string_view raw) {
  std::size_t b = 0;
  std::size_t e = raw.size();
  while (b < e && is_punct(static_cast<unsigned char>(raw[b]))) ++b;
  while (e > b && is_punct(static_cast<unsigned char>(raw[e - 1]))) --e;
  std::string out(raw.substr(b, e - b));
  for (char& c : out) {
    if (static_cast<unsigned char>(c) < 0x80) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  }
  return out;
}

std::vector<std::string_view> split_whitespace(std::string_view text) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && is_space(static_cast<unsigned char>(text[i]))) ++i;
    std::size_t j = i;
    while (j < text.size() && !is_space(static_cast<unsigned char>(text[j]))) ++j;
    if (j > i) out.push_back(text.substr(i, j - i));
    i = j;
  }
  return out;
}

TokenizedDocument::Paragraph tokenize_paragraph(std::string_view text) {
  TokenizedDocument::Paragraph para;
  TokenizedDocument::Sentence current;
  for (std::string_view raw : split_whitespace(text)) {
    std::string tok = normalize_token(raw);
    if (!tok.empty()) current.push_back(std::move(tok));
    if (ends_sentence(raw) && !current.empty()) {
      para.push_back(std::move(current));
      current.clear();
    }
  }
  if (!current.empty()) para.push_back(std::move(current));
  return para;
}

bool blank_line(std::string_view line) {
  return std::all_of(line.begin(), line.end(), [](char c) { return is_space(static_cast<unsigned char>(c)); });
}

}  // namespace

TokenizedDocument tokenize(std::string_view raw_text) {
  TokenizedDocument doc;
  std::string block;
  auto flush = [&] {
    auto para = tokenize_paragraph(block);
    if (!para.empty()) doc.paragraphs.push_back(std::move(para));
    block.clear();
  };
  std::size_t pos = 0;
  while (pos <= raw_text.size()) {
    std::size_t nl = raw_text.find('\n', pos);
    if (nl == std::string_view::npos) nl = raw_text.size();
    std::string_view line = raw_text.substr(pos, nl - pos);
    if (blank_line(line)) {
      flush();
    } else {
      block.append(line);
      block.push_back('\n');
    }
    pos = nl + 1;
  }
  flush();
  return doc;
}

std::vector<std::string> tokenize_words(std::string_view sentence) {
  std::vector<std::string> out;
  for (std::string_view raw : split_whitespace(sentence)) {
    std::string tok = normalize_token(raw);
    if (!tok.empty()) out.push_back(std::move(tok));
  }
  return out;
}

// ---- vocabulary ----------------------------------------------------------

Vocabulary::Vocabulary() {
  id_to_token_.emplace_back(kUnkToken);
  frequency_.push_back(0);
}

Vocabulary Vocabulary::build(std::span<const TokenizedDocument> documents, std::size_t threshold) {
  if (threshold == 0) fail(ErrorKind::Config, "vocabulary threshold must be >= 1");
  std::unordered_map<std::string, std::size_t> counts;
  for (const auto& doc : documents)
    for (const auto& para : doc.paragraphs)
      for (const auto& sent : para)
        for (const auto& tok : sent) ++counts[tok];

  std::vector<std::pair<std::string, std::size_t>> kept;
  std::size_t dropped = 0;
  for (auto& [tok, n] : counts) {
    if (n >= threshold) kept.emplace_back(tok, n);
    else dropped += n;
  }
  std::sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });

  Vocabulary v;
  v.threshold_ = threshold;
  v.frequency_[0] = dropped;
  for (auto& [tok, n] : kept) {
    v.token_to_id_.emplace(tok, static_cast<WordId>(v.id_to_token_.size()));
    v.id_to_token_.push_back(tok);
    v.frequency_.push_back(n);
  }
  return v;
}

WordId Vocabulary::id(std::string_view token) const {
  auto it = token_to_id_.find(std::string(token));
  return it == token_to_id_.end() ? kUnkId : it->second;
}

bool Vocabulary::contains(std::string_view token) const {
  return token_to_id_.find(std::string(token)) != token_to_id_.end();
}

std::uint64_t Vocabulary::content_hash() const {
  Fnv1a h;
  for (const auto& tok : id_to_token_) {
    h.update(tok);
    h.update("\n");
  }
  return h.digest();
}

void Vocabulary::write(std::ostream& out) const {
  for (std::size_t i = 0; i < id_to_token_.size(); ++i) {
    out << id_to_token_[i] << '\t' << frequency_[i] << '\n';
  }
}

Vocabulary Vocabulary::read(std::istream& in) {
  Vocabulary v;
  v.id_to_token_.clear();
  v.frequency_.clear();
  std::string line;
  std::size_t min_freq = 0;
  bool first = true;
  while (std::getline(in, line)) {
    const auto tab = line.rfind('\t');
    if (tab == std::string::npos) fail(ErrorKind::Format, "vocabulary line without frequency: " + line);
    std::string tok = line.substr(0, tab);
    const std::size_t freq = std::stoull(line.substr(tab + 1));
    if (first) {
      if (tok != kUnkToken) fail(ErrorKind::Format, "vocabulary line 0 must be " + std::string(kUnkToken));
      first = false;
    } else {
      if (!v.token_to_id_.emplace(tok, static_cast<WordId>(v.id_to_token_.size())).second)
        fail(ErrorKind::Format, "duplicate vocabulary token " + tok);
      min_freq = min_freq == 0 ? freq : std::min(min_freq, freq);
    }
    v.id_to_token_.push_back(std::move(tok));
    v.frequency_.push_back(freq);
  }
  if (first) fail(ErrorKind::Format, "empty vocabulary file");
  v.threshold_ = std::max<std::size_t>(1, min_freq);
  return v;
}

// ---- encoding ------------------------------------------------------------

CorpusDocument encode(const TokenizedDocument& document, const Vocabulary& vocab) {
  CorpusDocument out;
  out.paragraphs.reserve(document.paragraphs.size());
  for (const auto& para : document.paragraphs) {
    Paragraph p;
    p.reserve(para.size());
    for (const auto& sent : para) {
      Sentence s;
      s.reserve(sent.size());
      for (const auto& tok : sent) s.push_back(vocab.id(tok));
      p.push_back(std::move(s));
    }
    out.paragraphs.push_back(std::move(p));
  }
  return out;
}

std::vector<CorpusDocument> encode(std::span<const TokenizedDocument> documents, const Vocabulary& vocab) {
  std::vector<CorpusDocument> out;
  out.reserve(documents.size());
  for (const auto& d : documents) out.push_back(encode(d, vocab));
  return out;
}

TokenizedDocument decode(const CorpusDocument& document, const Vocabulary& vocab) {
  TokenizedDocument out;
  for (const auto& para : document.paragraphs) {
    TokenizedDocument::Paragraph p;
    for (const auto& sent : para) {
      TokenizedDocument::Sentence s;
      for (WordId id : sent) s.push_back(vocab.token(id));
      p.push_back(std::move(s));
    }
    out.paragraphs.push_back(std::move(p));
  }
  return out;
}

OovStats count_oov(std::span<const CorpusDocument> documents, const Vocabulary& vocab) {
  OovStats st;
  for (const auto& doc : documents)
    for (const auto& para : doc.paragraphs)
      for (const auto& sent : para)
        for (WordId id : sent) {
          ++st.total;
          if (id == vocab.unk_id()) ++st.oov;
        }
  return st;
}

// ---- splits and blocks -----------------------------------------------------

SplitAssignment assign_splits(std::size_t num_documents, const SplitFractions& f, std::uint64_t seed) {
  if (f.train < 0 || f.validation < 0 || f.test < 0 ||
      std::abs(f.train + f.validation + f.test - 1.0) > 1e-9) {
    fail(ErrorKind::Config, "split fractions must be nonnegative and sum to 1");
  }
  if (num_documents < 3) {
    fail(ErrorKind::Config, "need at least 3 documents to split, got " + std::to_string(num_documents));
  }
  std::vector<std::size_t> order(num_documents);
  for (std::size_t i = 0; i < num_documents; ++i) order[i] = i;
  Rng rng(derive_seed(seed, "split"));
  rng.shuffle(order.begin(), order.end());

  const double n = static_cast<double>(num_documents);
  auto n_train = static_cast<std::size_t>(std::llround(f.train * n));
  auto n_val = static_cast<std::size_t>(std::llround(f.validation * n));
  n_train = std::min(n_train, num_documents);
  n_val = std::min(n_val, num_documents - n_train);

  SplitAssignment a;
  a.train.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
  a.validation.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train),
                      order.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
  a.test.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train + n_val), order.end());
  return a;
}

std::vector<SequenceBlock> sample_blocks(std::span<const CorpusDocument> test_docs, std::size_t k,
                                         std::size_t num_blocks, std::uint64_t seed) {
  if (k == 0 || num_blocks == 0) fail(ErrorKind::Config, "block size and block count must be >= 1");
  if (test_docs.size() < num_blocks) {
    fail(ErrorKind::Config, "cannot form " + std::to_string(num_blocks) + " disjoint subsets from " +
                                std::to_string(test_docs.size()) + " documents");
  }
  Rng rng(derive_seed(seed, "blocks"));
  std::vector<std::size_t> order(test_docs.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  rng.shuffle(order.begin(), order.end());

  std::vector<SequenceBlock> blocks(num_blocks);
  for (std::size_t b = 0; b < num_blocks; ++b) {
    // Contiguous slice of the shuffled order: subset b.
    const std::size_t lo = b * order.size() / num_blocks;
    const std::size_t hi = (b + 1) * order.size() / num_blocks;
    std::vector<std::pair<std::size_t, std::size_t>> qualifying;
    for (std::size_t i = lo; i < hi; ++i) {
      const auto& doc = test_docs[order[i]];
      for (std::size_t p = 0; p < doc.paragraphs.size(); ++p) {
        if (doc.paragraphs[p].size() >= kSequenceLength) qualifying.emplace_back(order[i], p);
      }
    }
    if (qualifying.size() < k) {
      fail(ErrorKind::Config, "block " + std::to_string(b) + " has " + std::to_string(qualifying.size()) +
                                  " paragraphs with >= 4 sentences, needs " + std::to_string(k) + " (short by " +
                                  std::to_string(k - qualifying.size()) + ")");
    }
    rng.shuffle(qualifying.begin(), qualifying.end());
    for (std::size_t s = 0; s < k; ++s) {
      const auto [d, p] = qualifying[s];
      const std::size_t n = test_docs[d].paragraphs[p].size();
      const std::size_t start = rng.below(n - kSequenceLength + 1);
      blocks[b].sequences.push_back({d, p, start});
    }
  }
  return blocks;
}

// ---- files -------------------------------------------------------------------

namespace {

std::string slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::Io, "cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

TokenizedDocument parse_structured_document(const nlohmann::json& j) {
  if (!j.is_array()) fail(ErrorKind::Format, "structured document must be a list of paragraphs");
  TokenizedDocument doc;
  for (const auto& pj : j) {
    if (!pj.is_array()) fail(ErrorKind::Format, "paragraph must be a list of sentence strings");
    TokenizedDocument::Paragraph para;
    for (const auto& sj : pj) {
      if (!sj.is_string()) fail(ErrorKind::Format, "sentence must be a string");
      auto words = tokenize_words(sj.get<std::string>());
      if (!words.empty()) para.push_back(std::move(words));
    }
    if (!para.empty()) doc.paragraphs.push_back(std::move(para));
  }
  return doc;
}

}  // namespace

std::vector<TokenizedDocument> read_raw_corpus(const std::filesystem::path& path) {
  namespace fs = std::filesystem;
  std::vector<TokenizedDocument> docs;
  if (fs::is_directory(path)) {
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(path)) {
      if (e.is_regular_file()) files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
      auto d = tokenize(slurp(f));
      if (!d.paragraphs.empty()) docs.push_back(std::move(d));
    }
    return docs;
  }
  const std::string text = slurp(path);
  if (path.extension() == ".jsonl") {
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (blank_line(line)) continue;
      nlohmann::json j;
      try {
        j = nlohmann::json::parse(line);
      } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::Format, path.string() + ":" + std::to_string(lineno) + ": " + e.what());
      }
      auto d = parse_structured_document(j);
      if (!d.paragraphs.empty()) docs.push_back(std::move(d));
    }
    return docs;
  }
  auto d = tokenize(text);
  if (!d.paragraphs.empty()) docs.push_back(std::move(d));
  return docs;
}

void write_structured_corpus(std::ostream& out, std::span<const TokenizedDocument> documents) {
  for (const auto& doc : documents) {
    nlohmann::json j = nlohmann::json::array();
    for (const auto& para : doc.paragraphs) {
      nlohmann::json pj = nlohmann::json::array();
      for (const auto& sent : para) {
        std::string s;
        for (std::size_t i = 0; i < sent.size(); ++i) {
          if (i) s.push_back(' ');
          s += sent[i];
        }
        s.push_back('.');
        pj.push_back(std::move(s));
      }
      j.push_back(std::move(pj));
    }
    out << j.dump() << '\n';
  }
}

std::uint64_t corpus_hash(std::span<const CorpusDocument> documents) {
  Fnv1a h;
  for (const auto& doc : documents) {
    for (const auto& para : doc.paragraphs) {
      for (const auto& sent : para) {
        h.update(sent.data(), sent.size() * sizeof(WordId));
        h.update("s");
      }
      h.update("p");
    }
    h.update("d");
  }
  return h.digest();
}

void write_encoded_corpus(std::ostream& out, std::span<const CorpusDocument> documents, std::uint64_t vocab_hash) {
  nlohmann::json header = {{"format", "ctxlstm-encoded"},
                           {"version", 1},
                           {"vocab_hash", hex64(vocab_hash)},
                           {"content_hash", hex64(corpus_hash(documents))},
                           {"documents", documents.size()}};
  out << header.dump() << '\n';
  for (const auto& doc : documents) {
    nlohmann::json j = doc.paragraphs;
    out << j.dump() << '\n';
  }
}

std::vector<CorpusDocument> read_encoded_corpus(std::istream& in, EncodedCorpusHeader* header) {
  std::string line;
  if (!std::getline(in, line)) fail(ErrorKind::Format, "empty encoded corpus");
  EncodedCorpusHeader h;
  std::size_t expected = 0;
  try {
    auto hj = nlohmann::json::parse(line);
    if (hj.value("format", "") != "ctxlstm-encoded") fail(ErrorKind::BadMagic, "not an encoded corpus file");
    if (hj.value("version", 0) != 1) fail(ErrorKind::BadVersion, "unsupported encoded corpus version");
    h.vocab_hash = parse_hex64(hj.at("vocab_hash").get<std::string>());
    h.content_hash = parse_hex64(hj.at("content_hash").get<std::string>());
    expected = hj.at("documents").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Format, std::string("bad encoded corpus header: ") + e.what());
  }
  std::vector<CorpusDocument> docs;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    CorpusDocument d;
    try {
      d.paragraphs = nlohmann::json::parse(line).get<std::vector<Paragraph>>();
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorKind::Format, std::string("bad encoded document: ") + e.what());
    }
    docs.push_back(std::move(d));
  }
  if (docs.size() != expected) fail(ErrorKind::Format, "encoded corpus is truncated");
  if (corpus_hash(docs) != h.content_hash) fail(ErrorKind::HashMismatch, "encoded corpus content hash mismatch");
  if (header) *header = h;
  return docs;
}

void write_topic_sidecar(std::ostream& out, std::span<const DocumentLabels> labels) {
  for (const auto& doc : labels) {
    for (const auto& para : doc) {
      for (int t : para) out << t << '\n';
      out << '\n';
    }
    out << '\n';
  }
}

std::vector<DocumentLabels> read_topic_sidecar(std::istream& in) {
  std::vector<DocumentLabels> out;
  DocumentLabels doc;
  std::vector<int> para;
  std::string line;
  int blanks = 0;
  while (std::getline(in, line)) {
    if (blank_line(line)) {
      ++blanks;
      if (blanks == 1 && !para.empty()) {
        doc.push_back(std::move(para));
        para.clear();
      } else if (blanks == 2 && !doc.empty()) {
        out.push_back(std::move(doc));
        doc.clear();
      }
      continue;
    }
    blanks = 0;
    para.push_back(std::stoi(line));
  }
  if (!para.empty()) doc.push_back(std::move(para));
  if (!doc.empty()) out.push_back(std::move(doc));
  return out;
}

}  // namespace ctxlstm
