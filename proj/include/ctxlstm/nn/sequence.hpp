#pragma once

#include <cmath>
#include <vector>

#include "ctxlstm/nn/cell.hpp"

namespace ctxlstm::nn {

using IdMatrix = Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic>;

// A batch of aligned sequences: row t holds step t of every column.
// Positions with zero weight make no prediction (padding, masked context).
template <class Scalar>
struct SequenceBatch {
  IdMatrix words;                  // steps x batch input word ids (ignored without word input)
  std::vector<IdMatrix> topics;    // per topic slot, steps x batch
  std::vector<Mat<Scalar>> context;  // per step, context_dim x batch (empty without continuous input)
  IdMatrix targets;                // steps x batch
  Mat<Scalar> weights;             // steps x batch

  Eigen::Index steps() const { return targets.rows(); }
  Eigen::Index batch() const { return targets.cols(); }

  static SequenceBatch empty(Eigen::Index steps, Eigen::Index batch, std::size_t slots) {
    SequenceBatch s;
    s.words = IdMatrix::Zero(steps, batch);
    s.topics.assign(slots, IdMatrix::Zero(steps, batch));
    s.targets = IdMatrix::Zero(steps, batch);
    s.weights = Mat<Scalar>::Zero(steps, batch);
    return s;
  }
};

template <class Scalar>
struct ForwardResult {
  std::vector<GateTrace<Scalar>> traces;
  std::vector<Mat<Scalar>> logits;  // per step, output x batch
  CellState<Scalar> final_state;
};

template <class Scalar>
Mat<Scalar> step_input(const LanguageModel<Scalar>& m, const SequenceBatch<Scalar>& batch, Eigen::Index t) {
  const Eigen::Index B = batch.batch();
  if (m.dims.vocab == 0) return Mat<Scalar>(0, B);
  Mat<Scalar> x(m.word_embedding.rows(), B);
  for (Eigen::Index b = 0; b < B; ++b) {
    const int w = batch.words(t, b);
    if (w < 0 || w >= m.word_embedding.cols()) fail(ErrorKind::Dimension, "word id " + std::to_string(w) + " out of range");
    x.col(b) = m.word_embedding.col(w);
  }
  return x;
}

template <class Scalar>
Mat<Scalar> step_topic_input(const LanguageModel<Scalar>& m, const SequenceBatch<Scalar>& batch, Eigen::Index t) {
  const Eigen::Index B = batch.batch();
  const auto& d = m.dims;
  Mat<Scalar> topic(static_cast<Eigen::Index>(d.topic_input_dim()), B);
  const auto E = static_cast<Eigen::Index>(d.topic_embed);
  for (std::size_t s = 0; s < d.topic_slots; ++s) {
    const auto& table = m.cell.topic_embedding[s];
    for (Eigen::Index b = 0; b < B; ++b) {
      const int id = batch.topics[s](t, b);
      if (id < 0 || id >= table.cols()) {
        fail(ErrorKind::Config, "topic id " + std::to_string(id) + " outside [0, " + std::to_string(table.cols()) + ")");
      }
      topic.block(static_cast<Eigen::Index>(s) * E, b, E, 1) = table.col(id);
    }
  }
  if (d.context_dim > 0) {
    const auto& ctx = batch.context[static_cast<std::size_t>(t)];
    if (ctx.rows() != static_cast<Eigen::Index>(d.context_dim) || ctx.cols() != B)
      fail(ErrorKind::Dimension, "context input has wrong shape");
    topic.bottomRows(static_cast<Eigen::Index>(d.context_dim)) = ctx;
  }
  return topic;
}

template <class Scalar>
void check_batch(const LanguageModel<Scalar>& m, const SequenceBatch<Scalar>& batch) {
  const auto T = batch.steps();
  const auto B = batch.batch();
  if (batch.weights.rows() != T || batch.weights.cols() != B)
    fail(ErrorKind::Dimension, "weights must match targets in shape");
  if (m.dims.vocab > 0 && (batch.words.rows() != T || batch.words.cols() != B))
    fail(ErrorKind::Dimension, "word and target sequences differ in length");
  if (batch.topics.size() != m.dims.topic_slots) fail(ErrorKind::Dimension, "wrong number of topic feature slots");
  for (const auto& tp : batch.topics)
    if (tp.rows() != T || tp.cols() != B) fail(ErrorKind::Dimension, "topic and word sequences differ in length");
  if (m.dims.context_dim > 0 && batch.context.size() != static_cast<std::size_t>(T))
    fail(ErrorKind::Dimension, "one context input per step required");
}

// Steps the cell over the batch and emits logits = W_out h + b_out per step.
// State is threaded through all steps.
template <class Scalar>
ForwardResult<Scalar> forward_sequence(const LanguageModel<Scalar>& m, const SequenceBatch<Scalar>& batch,
                                       const CellState<Scalar>& init) {
  check_batch(m, batch);
  ForwardResult<Scalar> r;
  r.traces.reserve(static_cast<std::size_t>(batch.steps()));
  r.logits.reserve(static_cast<std::size_t>(batch.steps()));
  CellState<Scalar> state = init;
  for (Eigen::Index t = 0; t < batch.steps(); ++t) {
    auto trace = cell_forward(m.cell, m.dims.peepholes, step_input(m, batch, t), step_topic_input(m, batch, t), state);
    Mat<Scalar> logits = m.out.b.replicate(1, batch.batch());
    logits.noalias() += m.out.W * trace.h;
    state.h = trace.h;
    state.c = trace.c;
    r.logits.push_back(std::move(logits));
    r.traces.push_back(std::move(trace));
  }
  r.final_state = std::move(state);
  return r;
}

// Forward pass returning only the final state.
template <class Scalar>
CellState<Scalar> run_state(const LanguageModel<Scalar>& m, const SequenceBatch<Scalar>& batch,
                            const CellState<Scalar>& init) {
  check_batch(m, batch);
  CellState<Scalar> state = init;
  for (Eigen::Index t = 0; t < batch.steps(); ++t) {
    auto trace = cell_forward(m.cell, m.dims.peepholes, step_input(m, batch, t), step_topic_input(m, batch, t), state);
    state.h = std::move(trace.h);
    state.c = std::move(trace.c);
  }
  return state;
}

// Column-wise log-softmax with max subtraction.
template <class Scalar>
Mat<Scalar> log_softmax(const Mat<Scalar>& logits) {
  Mat<Scalar> out(logits.rows(), logits.cols());
  for (Eigen::Index b = 0; b < logits.cols(); ++b) {
    const Scalar mx = logits.col(b).maxCoeff();
    const Scalar lse = mx + std::log((logits.col(b).array() - mx).exp().sum());
    out.col(b) = logits.col(b).array() - lse;
  }
  return out;
}

template <class Scalar>
struct LossResult {
  double loss = 0;          // weighted mean negative log-likelihood, nats
  double total_nll = 0;     // weighted sum
  double total_weight = 0;
  std::vector<Mat<Scalar>> probs;  // per step softmax, output x batch
};

template <class Scalar>
LossResult<Scalar> cross_entropy(const std::vector<Mat<Scalar>>& logits, const IdMatrix& targets,
                                 const Mat<Scalar>& weights) {
  if (static_cast<Eigen::Index>(logits.size()) != targets.rows())
    fail(ErrorKind::Dimension, "cross_entropy: one target row per logits step");
  LossResult<Scalar> r;
  r.probs.reserve(logits.size());
  for (std::size_t t = 0; t < logits.size(); ++t) {
    const auto ti = static_cast<Eigen::Index>(t);
    Mat<Scalar> lp = log_softmax<Scalar>(logits[t]);
    for (Eigen::Index b = 0; b < lp.cols(); ++b) {
      const double w = static_cast<double>(weights(ti, b));
      if (w == 0) continue;
      const int y = targets(ti, b);
      if (y < 0 || y >= lp.rows()) fail(ErrorKind::Dimension, "target id " + std::to_string(y) + " out of range");
      r.total_nll -= w * static_cast<double>(lp(y, b));
      r.total_weight += w;
    }
    r.probs.push_back(lp.array().exp().matrix());
  }
  r.loss = r.total_weight > 0 ? r.total_nll / r.total_weight : 0.0;
  return r;
}

// Unweighted convenience: every position counts once.
template <class Scalar>
LossResult<Scalar> cross_entropy(const std::vector<Mat<Scalar>>& logits, const IdMatrix& targets) {
  return cross_entropy(logits, targets, Mat<Scalar>::Ones(targets.rows(), targets.cols()).eval());
}

template <class Scalar>
struct BackwardResult {
  Gradients<Scalar> grads;
  std::vector<Mat<Scalar>> d_context;  // per step, dLoss/d(context input)
  CellState<Scalar> d_init;            // dLoss/d(initial state)
};

// Exact gradient of the weighted mean cross-entropy by backpropagation
// through time over the whole batch.
template <class Scalar>
BackwardResult<Scalar> bptt_backward(const LanguageModel<Scalar>& m, const SequenceBatch<Scalar>& batch,
                                     const ForwardResult<Scalar>& fwd, const LossResult<Scalar>& loss) {
  BackwardResult<Scalar> r;
  r.grads = zeros_like(m);
  const auto& d = m.dims;
  const Eigen::Index H = static_cast<Eigen::Index>(d.hidden);
  const Eigen::Index B = batch.batch();
  const Eigen::Index T = static_cast<Eigen::Index>(fwd.traces.size());
  if (d.context_dim > 0) r.d_context.assign(static_cast<std::size_t>(T), Mat<Scalar>::Zero(d.context_dim, B));
  r.d_init = CellState<Scalar>::zero(H, B);
  if (T == 0 || loss.total_weight == 0) return r;

  const Scalar inv_w = Scalar(1) / static_cast<Scalar>(loss.total_weight);
  Mat<Scalar> dh_next = Mat<Scalar>::Zero(H, B);
  Mat<Scalar> dc_next = Mat<Scalar>::Zero(H, B);
  const auto E = static_cast<Eigen::Index>(d.topic_embed);

  for (Eigen::Index t = T - 1; t >= 0; --t) {
    const auto ts = static_cast<std::size_t>(t);
    const auto& trace = fwd.traces[ts];
    Mat<Scalar> dlogits = loss.probs[ts];
    for (Eigen::Index b = 0; b < B; ++b) {
      const Scalar w = batch.weights(t, b) * inv_w;
      if (w == Scalar(0)) {
        dlogits.col(b).setZero();
        continue;
      }
      dlogits(batch.targets(t, b), b) -= Scalar(1);
      dlogits.col(b) *= w;
    }
    r.grads.out.W.noalias() += dlogits * trace.h.transpose();
    r.grads.out.b += dlogits.rowwise().sum();
    Mat<Scalar> dh = dh_next;
    dh.noalias() += m.out.W.transpose() * dlogits;

    auto sg = cell_backward(m.cell, d.peepholes, trace, dh, dc_next, r.grads.cell);
    if (!d.peepholes) {
      r.grads.cell.base.peep_i.setZero();
      r.grads.cell.base.peep_f.setZero();
      r.grads.cell.base.peep_o.setZero();
    }
    if (d.vocab > 0) {
      for (Eigen::Index b = 0; b < B; ++b) r.grads.word_embedding.col(batch.words(t, b)) += sg.dx.col(b);
    }
    if (d.contextual()) {
      for (std::size_t s = 0; s < d.topic_slots; ++s) {
        auto& table = r.grads.cell.topic_embedding[s];
        for (Eigen::Index b = 0; b < B; ++b)
          table.col(batch.topics[s](t, b)) += sg.dtopic.block(static_cast<Eigen::Index>(s) * E, b, E, 1);
      }
      if (d.context_dim > 0) r.d_context[ts] = sg.dtopic.bottomRows(static_cast<Eigen::Index>(d.context_dim));
    }
    dh_next = std::move(sg.dh_prev);
    dc_next = std::move(sg.dc_prev);
  }
  r.d_init = {std::move(dh_next), std::move(dc_next)};
  return r;
}

// Forward + loss + backward in one call.
template <class Scalar>
struct Evaluation {
  LossResult<Scalar> loss;
  BackwardResult<Scalar> backward;
  CellState<Scalar> final_state;
};

template <class Scalar>
Evaluation<Scalar> loss_and_gradient(const LanguageModel<Scalar>& m, const SequenceBatch<Scalar>& batch,
                                     const CellState<Scalar>& init) {
  auto fwd = forward_sequence(m, batch, init);
  auto loss = cross_entropy(fwd.logits, batch.targets, batch.weights);
  auto back = bptt_backward(m, batch, fwd, loss);
  return {std::move(loss), std::move(back), std::move(fwd.final_state)};
}

// Loss only.
template <class Scalar>
LossResult<Scalar> evaluate_loss(const LanguageModel<Scalar>& m, const SequenceBatch<Scalar>& batch,
                                 const CellState<Scalar>& init) {
  auto fwd = forward_sequence(m, batch, init);
  return cross_entropy(fwd.logits, batch.targets, batch.weights);
}

}  // namespace ctxlstm::nn
