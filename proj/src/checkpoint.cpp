#include "ctxlstm/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include "ctxlstm/binary_io.hpp"

namespace ctxlstm {

void dims_to_manifest(const nn::ModelDims& d, FlatConfig& m) {
  m.set("dims.vocab", std::uint64_t{d.vocab});
  m.set("dims.embed", std::uint64_t{d.embed});
  m.set("dims.hidden", std::uint64_t{d.hidden});
  m.set("dims.output", std::uint64_t{d.output});
  m.set("dims.num_topics", std::uint64_t{d.num_topics});
  m.set("dims.topic_embed", std::uint64_t{d.topic_embed});
  m.set("dims.topic_slots", std::uint64_t{d.topic_slots});
  m.set("dims.context_dim", std::uint64_t{d.context_dim});
  m.set("dims.peepholes", d.peepholes);
  m.set("dims.shared_topic_projection", d.shared_topic_projection);
}

nn::ModelDims dims_from_manifest(const FlatConfig& m) {
  try {
    nn::ModelDims d;
    d.vocab = m.get_uint("dims.vocab");
    d.embed = m.get_uint("dims.embed");
    d.hidden = m.get_uint("dims.hidden");
    d.output = m.get_uint("dims.output");
    d.num_topics = m.get_uint("dims.num_topics");
    d.topic_embed = m.get_uint("dims.topic_embed");
    d.topic_slots = m.get_uint("dims.topic_slots");
    d.context_dim = m.get_uint("dims.context_dim");
    d.peepholes = m.get_bool("dims.peepholes");
    d.shared_topic_projection = m.get_bool("dims.shared_topic_projection");
    d.validate();
    return d;
  } catch (const Error& e) {
    fail(ErrorKind::Format, std::string("checkpoint manifest: ") + e.what());
  }
}

void check_hash(const FlatConfig& manifest, const char* key, std::uint64_t expected) {
  if (!manifest.has(key)) return;
  const auto& stored = manifest.get(key);
  if (stored != hex64(expected))
    fail(ErrorKind::HashMismatch, std::string(key) + " mismatch: artifact has " + stored + ", expected " + hex64(expected));
}

namespace {

// Forwards writes to a stream while hashing them.
class HashingWriter {
 public:
  explicit HashingWriter(std::ostream& out) : out_(out) {}
  void bytes(const void* p, std::size_t n) {
    hash_.update(p, n);
    out_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
  }
  template <class T>
  void scalar(T v) {
    unsigned char raw[sizeof(T)];
    std::memcpy(raw, &v, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(raw, raw + sizeof(T));
    bytes(raw, sizeof(T));
  }
  void string(const std::string& s) {
    scalar<std::uint32_t>(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }
  std::uint64_t digest() const { return hash_.digest(); }

 private:
  std::ostream& out_;
  Fnv1a hash_;
};

class HashingReader {
 public:
  explicit HashingReader(std::istream& in) : in_(in) {}
  void bytes(void* p, std::size_t n, const char* what) {
    if (n > 0 && !in_.read(static_cast<char*>(p), static_cast<std::streamsize>(n)))
      fail(ErrorKind::Format, std::string("truncated checkpoint while reading ") + what);
    hash_.update(p, n);
  }
  template <class T>
  T scalar(const char* what) {
    unsigned char raw[sizeof(T)];
    bytes(raw, sizeof(T), what);
    if constexpr (std::endian::native == std::endian::big) std::reverse(raw, raw + sizeof(T));
    T v;
    std::memcpy(&v, raw, sizeof(T));
    return v;
  }
  std::string string(const char* what, std::uint32_t max_len) {
    const auto n = scalar<std::uint32_t>(what);
    if (n > max_len) fail(ErrorKind::Format, std::string("implausible length for ") + what);
    std::string s(n, '\0');
    bytes(s.data(), n, what);
    return s;
  }
  std::uint64_t digest() const { return hash_.digest(); }

 private:
  std::istream& in_;
  Fnv1a hash_;
};

template <class Derived>
void write_tensor(HashingWriter& w, const std::string& name, const Eigen::MatrixBase<Derived>& t) {
  w.string(name);
  const bool vector = t.cols() == 1 && Derived::ColsAtCompileTime == 1;
  w.scalar<std::uint32_t>(vector ? 1 : 2);
  w.scalar<std::uint32_t>(static_cast<std::uint32_t>(t.rows()));
  if (!vector) w.scalar<std::uint32_t>(static_cast<std::uint32_t>(t.cols()));
  for (Eigen::Index j = 0; j < t.cols(); ++j)
    for (Eigen::Index i = 0; i < t.rows(); ++i) {
      const auto f = static_cast<float>(t(i, j));
      if (!std::isfinite(f)) fail(ErrorKind::Numerical, "non-finite value in tensor " + name);
      w.scalar<float>(f);
    }
}

struct RawTensor {
  std::uint32_t rows = 0, cols = 1, rank = 0;
  Eigen::MatrixXd data;
};

RawTensor read_tensor(HashingReader& r, const std::string& name) {
  RawTensor t;
  t.rank = r.scalar<std::uint32_t>("tensor rank");
  if (t.rank != 1 && t.rank != 2) fail(ErrorKind::Format, "tensor " + name + " has rank " + std::to_string(t.rank));
  t.rows = r.scalar<std::uint32_t>("tensor dims");
  if (t.rank == 2) t.cols = r.scalar<std::uint32_t>("tensor dims");
  if (std::uint64_t{t.rows} * t.cols > (1ull << 31)) fail(ErrorKind::Format, "implausible size for tensor " + name);
  t.data.resize(t.rows, t.cols);
  for (Eigen::Index j = 0; j < t.data.cols(); ++j)
    for (Eigen::Index i = 0; i < t.data.rows(); ++i) t.data(i, j) = r.scalar<float>("tensor data");
  return t;
}

}  // namespace

void save_checkpoint(std::ostream& out, const nn::LanguageModel<double>& model, FlatConfig manifest,
                     const NamedTensors& extras) {
  dims_to_manifest(model.dims, manifest);
  HashingWriter w(out);
  w.bytes(kCheckpointMagic, sizeof kCheckpointMagic);
  w.scalar<std::uint32_t>(kCheckpointVersion);
  w.string(manifest.to_string());

  std::uint32_t count = static_cast<std::uint32_t>(extras.size());
  nn::visit_tensors([&](const std::string&, const auto&) { ++count; }, model);
  w.scalar<std::uint32_t>(count);
  nn::visit_tensors([&](const std::string& name, const auto& t) { write_tensor(w, name, t); }, model);
  for (const auto& [name, t] : extras) write_tensor(w, name, t);
  binary::write<std::uint64_t>(out, w.digest());
  if (!out) fail(ErrorKind::Io, "failed writing checkpoint");
}

void save_checkpoint(const std::string& path, const nn::LanguageModel<double>& model, const FlatConfig& manifest,
                     const NamedTensors& extras) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::Io, "cannot write " + path);
  save_checkpoint(out, model, manifest, extras);
}

Checkpoint load_checkpoint(std::istream& in, const ExpectedHashes& expect) {
  HashingReader r(in);
  char magic[sizeof kCheckpointMagic];
  r.bytes(magic, sizeof magic, "magic");
  if (!std::equal(magic, magic + sizeof magic, kCheckpointMagic)) fail(ErrorKind::BadMagic, "not a CLSTM1 checkpoint");
  const auto version = r.scalar<std::uint32_t>("version");
  if (version != kCheckpointVersion)
    fail(ErrorKind::BadVersion, "unsupported checkpoint version " + std::to_string(version));

  Checkpoint ck;
  ck.manifest = FlatConfig::parse(r.string("manifest", 1u << 20));
  if (expect.vocab) check_hash(ck.manifest, kVocabHashKey, *expect.vocab);
  if (expect.corpus) check_hash(ck.manifest, kCorpusHashKey, *expect.corpus);
  if (expect.topics) check_hash(ck.manifest, kTopicHashKey, *expect.topics);
  ck.model = nn::zero_model<double>(dims_from_manifest(ck.manifest));

  std::map<std::string, RawTensor> tensors;
  const auto count = r.scalar<std::uint32_t>("tensor count");
  for (std::uint32_t i = 0; i < count; ++i) {
    auto name = r.string("tensor name", 4096);
    auto t = read_tensor(r, name);
    if (!tensors.emplace(name, std::move(t)).second) fail(ErrorKind::Format, "duplicate tensor " + name);
  }
  const auto stored = binary::read<std::uint64_t>(in, "checksum");
  if (stored != r.digest()) fail(ErrorKind::Format, "checkpoint checksum mismatch");

  nn::visit_tensors(
      [&](const std::string& name, auto& dst) {
        const auto it = tensors.find(name);
        if (it == tensors.end()) fail(ErrorKind::Format, "checkpoint lacks tensor " + name);
        const auto& src = it->second.data;
        if (src.rows() != dst.rows() || src.cols() != dst.cols())
          fail(ErrorKind::Format, "tensor " + name + " has shape " + std::to_string(src.rows()) + "x" +
                                      std::to_string(src.cols()) + ", manifest implies " +
                                      std::to_string(dst.rows()) + "x" + std::to_string(dst.cols()));
        dst = src;
        tensors.erase(it);
      },
      ck.model);
  for (auto& [name, t] : tensors) ck.extras.emplace(name, std::move(t.data));
  return ck;
}

Checkpoint load_checkpoint(const std::string& path, const ExpectedHashes& expect) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::Io, "cannot read " + path);
  return load_checkpoint(in, expect);
}

}  // namespace ctxlstm
