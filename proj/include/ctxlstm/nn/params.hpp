#pragma once

#include <Eigen/Core>
#include <cstddef>
#include <string>
#include <vector>

#include "ctxlstm/common.hpp"

namespace ctxlstm::nn {

template <class Scalar>
using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <class Scalar>
using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

// Gate blocks inside the stacked 4H pre-activation, in this order.
enum Gate : Eigen::Index { kInput = 0, kForget = 1, kCell = 2, kOutput = 3 };
inline constexpr Eigen::Index kNumGates = 4;

struct ModelDims {
  std::size_t vocab = 0;        // input word vocabulary; 0 means no word input
  std::size_t embed = 0;
  std::size_t hidden = 0;
  std::size_t output = 0;       // size of the softmax target space
  std::size_t num_topics = 0;
  std::size_t topic_embed = 0;
  std::size_t topic_slots = 0;  // discrete topic features, one embedding table each
  std::size_t context_dim = 0;  // continuous topic input appended after the slots
  bool peepholes = true;
  bool shared_topic_projection = false;  // one W_T for all four gates

  std::size_t input_dim() const { return vocab > 0 ? embed : 0; }
  std::size_t topic_input_dim() const { return topic_slots * topic_embed + context_dim; }
  bool contextual() const { return topic_input_dim() > 0; }

  void validate() const {
    if (hidden == 0 || output == 0) fail(ErrorKind::Config, "hidden and output sizes must be >= 1");
    if (vocab > 0 && embed == 0) fail(ErrorKind::Config, "word input needs embed >= 1");
    if (topic_slots > 0 && (num_topics == 0 || topic_embed == 0))
      fail(ErrorKind::Config, "topic slots need num_topics >= 1 and topic_embed >= 1");
  }
  bool operator==(const ModelDims&) const = default;
};

// Peephole LSTM: W_x* stacked as Wx (4H x E), W_h* as Wh (4H x H), diagonal
// peepholes w_ci, w_cf, w_co, biases stacked as b (4H).
template <class Scalar>
struct LstmParams {
  Mat<Scalar> Wx;
  Mat<Scalar> Wh;
  Vec<Scalar> peep_i;
  Vec<Scalar> peep_f;
  Vec<Scalar> peep_o;
  Vec<Scalar> b;

  Eigen::Index hidden() const { return Wh.cols(); }
};

// Topic terms added to every gate pre-activation: W_T* stacked as topic_proj
// (4H x D, or H x D when shared across gates). Column blocks of the topic
// input are the slot embeddings in order, then the continuous context.
template <class Scalar>
struct ClstmParams {
  LstmParams<Scalar> base;
  Mat<Scalar> topic_proj;
  std::vector<Mat<Scalar>> topic_embedding;  // per slot: topic_embed x num_topics
};

template <class Scalar>
struct OutputLayer {
  Mat<Scalar> W;  // output x hidden
  Vec<Scalar> b;
};

template <class Scalar>
struct LanguageModel {
  ModelDims dims;
  Mat<Scalar> word_embedding;  // embed x vocab, one column per word
  ClstmParams<Scalar> cell;
  OutputLayer<Scalar> out;
};

// Same shapes as the model; one slot per parameter tensor.
template <class Scalar>
using Gradients = LanguageModel<Scalar>;

// Calls f(name, tensor_of_m0, tensor_of_m1, ...) for every parameter tensor,
// in a fixed order. All models must share dims.
template <class F, class M0, class... Ms>
void visit_tensors(F&& f, M0& m0, Ms&... ms) {
  f(std::string("word_embedding"), m0.word_embedding, ms.word_embedding...);
  f(std::string("lstm.Wx"), m0.cell.base.Wx, ms.cell.base.Wx...);
  f(std::string("lstm.Wh"), m0.cell.base.Wh, ms.cell.base.Wh...);
  f(std::string("lstm.peep_i"), m0.cell.base.peep_i, ms.cell.base.peep_i...);
  f(std::string("lstm.peep_f"), m0.cell.base.peep_f, ms.cell.base.peep_f...);
  f(std::string("lstm.peep_o"), m0.cell.base.peep_o, ms.cell.base.peep_o...);
  f(std::string("lstm.b"), m0.cell.base.b, ms.cell.base.b...);
  f(std::string("topic.proj"), m0.cell.topic_proj, ms.cell.topic_proj...);
  for (std::size_t s = 0; s < m0.cell.topic_embedding.size(); ++s) {
    f("topic.embedding." + std::to_string(s), m0.cell.topic_embedding[s], ms.cell.topic_embedding[s]...);
  }
  f(std::string("out.W"), m0.out.W, ms.out.W...);
  f(std::string("out.b"), m0.out.b, ms.out.b...);
}

template <class Scalar>
LanguageModel<Scalar> zero_model(const ModelDims& dims) {
  dims.validate();
  const auto H = static_cast<Eigen::Index>(dims.hidden);
  const auto E = static_cast<Eigen::Index>(dims.input_dim());
  const auto D = static_cast<Eigen::Index>(dims.topic_input_dim());
  LanguageModel<Scalar> m;
  m.dims = dims;
  m.word_embedding = Mat<Scalar>::Zero(E, static_cast<Eigen::Index>(dims.vocab));
  m.cell.base.Wx = Mat<Scalar>::Zero(kNumGates * H, E);
  m.cell.base.Wh = Mat<Scalar>::Zero(kNumGates * H, H);
  m.cell.base.peep_i = Vec<Scalar>::Zero(H);
  m.cell.base.peep_f = Vec<Scalar>::Zero(H);
  m.cell.base.peep_o = Vec<Scalar>::Zero(H);
  m.cell.base.b = Vec<Scalar>::Zero(kNumGates * H);
  m.cell.topic_proj = Mat<Scalar>::Zero(dims.shared_topic_projection ? H : kNumGates * H, D);
  m.cell.topic_embedding.assign(dims.topic_slots, Mat<Scalar>::Zero(static_cast<Eigen::Index>(dims.topic_embed),
                                                                    static_cast<Eigen::Index>(dims.num_topics)));
  m.out.W = Mat<Scalar>::Zero(static_cast<Eigen::Index>(dims.output), H);
  m.out.b = Vec<Scalar>::Zero(static_cast<Eigen::Index>(dims.output));
  return m;
}

template <class Scalar>
Gradients<Scalar> zeros_like(const LanguageModel<Scalar>& m) {
  return zero_model<Scalar>(m.dims);
}

struct InitOptions {
  double scale = 0.05;        // uniform(-scale, scale) for weights
  double forget_bias = 1.0;
  double bias_scale = 0.0;    // uniform(-bias_scale, bias_scale) added to all biases
};

// Uniform weights, zero biases, forget-gate bias offset.
template <class Scalar>
LanguageModel<Scalar> init_model(const ModelDims& dims, std::uint64_t seed, const InitOptions& opt = {}) {
  auto m = zero_model<Scalar>(dims);
  Rng rng(derive_seed(seed, "init"));
  auto fill = [&](auto& t, double scale) {
    for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] = static_cast<Scalar>(rng.uniform(-scale, scale));
  };
  fill(m.word_embedding, opt.scale);
  fill(m.cell.base.Wx, opt.scale);
  fill(m.cell.base.Wh, opt.scale);
  if (dims.peepholes) {
    fill(m.cell.base.peep_i, opt.scale);
    fill(m.cell.base.peep_f, opt.scale);
    fill(m.cell.base.peep_o, opt.scale);
  }
  fill(m.cell.topic_proj, opt.scale);
  for (auto& t : m.cell.topic_embedding) fill(t, opt.scale);
  fill(m.out.W, opt.scale);
  if (opt.bias_scale > 0) {
    fill(m.cell.base.b, opt.bias_scale);
    fill(m.out.b, opt.bias_scale);
  }
  const auto H = static_cast<Eigen::Index>(dims.hidden);
  m.cell.base.b.segment(kForget * H, H).array() += static_cast<Scalar>(opt.forget_bias);
  return m;
}

template <class To, class From>
LanguageModel<To> cast_model(const LanguageModel<From>& m) {
  auto out = zero_model<To>(m.dims);
  visit_tensors([](const std::string&, auto& dst, const auto& src) { dst = src.template cast<To>(); }, out, m);
  return out;
}

template <class Scalar>
std::size_t parameter_count(const LanguageModel<Scalar>& m) {
  std::size_t n = 0;
  visit_tensors([&](const std::string&, const auto& t) { n += static_cast<std::size_t>(t.size()); }, m);
  return n;
}

}  // namespace ctxlstm::nn
