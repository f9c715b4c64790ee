#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>

#include "ctxlstm/config.hpp"
#include "ctxlstm/nn/params.hpp"

namespace ctxlstm {

// File layout:
//   "CLSTM1"  u32 version
//   u32 length, manifest text (FlatConfig)
//   u32 tensor count, then per tensor: name, u32 rank, u32 dims[rank], f32 data (column major)
//   u64 FNV-1a over every preceding byte
inline constexpr char kCheckpointMagic[6] = {'C', 'L', 'S', 'T', 'M', '1'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

// Manifest keys with a fixed meaning. Hashes are 16 hex digits.
inline constexpr const char* kVocabHashKey = "vocab_hash";
inline constexpr const char* kCorpusHashKey = "corpus_hash";
inline constexpr const char* kTopicHashKey = "topic_hash";
inline constexpr const char* kFeaturesKey = "features";

void dims_to_manifest(const nn::ModelDims& dims, FlatConfig& manifest);
nn::ModelDims dims_from_manifest(const FlatConfig& manifest);

using NamedTensors = std::map<std::string, Eigen::MatrixXd>;

struct Checkpoint {
  FlatConfig manifest;
  nn::LanguageModel<double> model;
  NamedTensors extras;  // tensors outside the language model, e.g. "thought.proj"
};

// Hashes the loader insists on; unset entries are not checked.
struct ExpectedHashes {
  std::optional<std::uint64_t> vocab;
  std::optional<std::uint64_t> corpus;
  std::optional<std::uint64_t> topics;
};

// Dims are written into the manifest from the model; everything else in
// `manifest` is stored verbatim.
void save_checkpoint(std::ostream& out, const nn::LanguageModel<double>& model, FlatConfig manifest,
                     const NamedTensors& extras = {});
void save_checkpoint(const std::string& path, const nn::LanguageModel<double>& model, const FlatConfig& manifest,
                     const NamedTensors& extras = {});

Checkpoint load_checkpoint(std::istream& in, const ExpectedHashes& expect = {});
Checkpoint load_checkpoint(const std::string& path, const ExpectedHashes& expect = {});

// HashMismatch when manifest[key] is present and differs from `expected`.
void check_hash(const FlatConfig& manifest, const char* key, std::uint64_t expected);

}  // namespace ctxlstm
