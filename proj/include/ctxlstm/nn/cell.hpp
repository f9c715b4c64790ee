#pragma once

#include <span>
#include <utility>

#include "ctxlstm/nn/params.hpp"

namespace ctxlstm::nn {

// Columns are independent sequences of a batch.
template <class Scalar>
struct CellState {
  Mat<Scalar> h;  // hidden x batch
  Mat<Scalar> c;  // hidden x batch

  static CellState zero(Eigen::Index hidden, Eigen::Index batch) {
    return {Mat<Scalar>::Zero(hidden, batch), Mat<Scalar>::Zero(hidden, batch)};
  }
};

// Everything the backward pass needs from one step.
template <class Scalar>
struct GateTrace {
  Mat<Scalar> x;       // word input, embed x batch (0 rows without word input)
  Mat<Scalar> topic;   // topic input, D x batch (0 rows for a plain LSTM)
  Mat<Scalar> h_prev;
  Mat<Scalar> c_prev;
  Mat<Scalar> pre;     // stacked pre-activations (4H x batch), peepholes included
  Mat<Scalar> i, f, g, o;
  Mat<Scalar> c;
  Mat<Scalar> tanh_c;
  Mat<Scalar> h;
};

template <class Scalar>
inline auto sigmoid(const Mat<Scalar>& a) {
  return (Scalar(1) / (Scalar(1) + (-a.array()).exp())).matrix();
}

// One step of
//   i = s(Wxi x + Whi h' + wci*c' + bi + WTi T)
//   f = s(Wxf x + Whf h' + wcf*c' + bf + WTf T)
//   c = f*c' + i*tanh(Wxc x + Whc h' + bc + WTc T)
//   o = s(Wxo x + Who h' + wco*c + bo + WTo T)
//   h = o*tanh(c)
// With topic_proj of zero width this is the plain peephole LSTM.
template <class Scalar>
GateTrace<Scalar> cell_forward(const ClstmParams<Scalar>& p, bool peepholes, const Mat<Scalar>& x,
                               const Mat<Scalar>& topic, const CellState<Scalar>& prev) {
  const auto& base = p.base;
  const Eigen::Index H = base.hidden();
  const Eigen::Index B = prev.h.cols();
  if (x.rows() != base.Wx.cols() || (x.cols() != B && x.rows() > 0) || prev.c.rows() != H || prev.h.rows() != H ||
      topic.rows() != p.topic_proj.cols() || (topic.rows() > 0 && topic.cols() != B)) {
    fail(ErrorKind::Dimension, "cell_forward: input dimensions do not match parameters");
  }

  GateTrace<Scalar> t;
  t.x = x;
  t.topic = topic;
  t.h_prev = prev.h;
  t.c_prev = prev.c;
  t.pre = base.b.replicate(1, B);
  if (x.rows() > 0) t.pre.noalias() += base.Wx * x;
  t.pre.noalias() += base.Wh * prev.h;
  if (topic.rows() > 0) {
    if (p.topic_proj.rows() == H) {
      const Mat<Scalar> shared = p.topic_proj * topic;
      for (Eigen::Index gate = 0; gate < kNumGates; ++gate) t.pre.middleRows(gate * H, H) += shared;
    } else {
      t.pre.noalias() += p.topic_proj * topic;
    }
  }
  if (peepholes) {
    t.pre.middleRows(kInput * H, H) += (base.peep_i.asDiagonal() * prev.c);
    t.pre.middleRows(kForget * H, H) += (base.peep_f.asDiagonal() * prev.c);
  }
  t.i = sigmoid<Scalar>(t.pre.middleRows(kInput * H, H));
  t.f = sigmoid<Scalar>(t.pre.middleRows(kForget * H, H));
  t.g = t.pre.middleRows(kCell * H, H).array().tanh().matrix();
  t.c = t.f.cwiseProduct(prev.c) + t.i.cwiseProduct(t.g);
  if (peepholes) t.pre.middleRows(kOutput * H, H) += (base.peep_o.asDiagonal() * t.c);
  t.o = sigmoid<Scalar>(t.pre.middleRows(kOutput * H, H));
  t.tanh_c = t.c.array().tanh().matrix();
  t.h = t.o.cwiseProduct(t.tanh_c);
  return t;
}

template <class Scalar>
std::pair<CellState<Scalar>, GateTrace<Scalar>> lstm_step(const LstmParams<Scalar>& params, const Mat<Scalar>& x,
                                                           const CellState<Scalar>& prev, bool peepholes = true) {
  ClstmParams<Scalar> p;
  p.base = params;
  p.topic_proj = Mat<Scalar>::Zero(params.Wx.rows(), 0);
  auto t = cell_forward(p, peepholes, x, Mat<Scalar>(0, prev.h.cols()), prev);
  CellState<Scalar> next{t.h, t.c};
  return {std::move(next), std::move(t)};
}

// Looks up the topic embedding of each column's topic id (single slot).
template <class Scalar>
Mat<Scalar> lookup_topics(const Mat<Scalar>& table, std::span<const int> topic_ids) {
  Mat<Scalar> out(table.rows(), static_cast<Eigen::Index>(topic_ids.size()));
  for (std::size_t b = 0; b < topic_ids.size(); ++b) {
    const int id = topic_ids[b];
    if (id < 0 || id >= table.cols()) {
      fail(ErrorKind::Config, "topic id " + std::to_string(id) + " outside [0, " + std::to_string(table.cols()) + ")");
    }
    out.col(static_cast<Eigen::Index>(b)) = table.col(id);
  }
  return out;
}

// CLSTM step with one discrete topic per column: T = topic_embedding[0][id].
template <class Scalar>
std::pair<CellState<Scalar>, GateTrace<Scalar>> clstm_step(const ClstmParams<Scalar>& params, const Mat<Scalar>& x,
                                                            std::span<const int> topic_ids,
                                                            const CellState<Scalar>& prev, bool peepholes = true) {
  if (params.topic_embedding.size() != 1) fail(ErrorKind::Dimension, "clstm_step expects exactly one topic slot");
  if (static_cast<Eigen::Index>(topic_ids.size()) != prev.h.cols())
    fail(ErrorKind::Dimension, "clstm_step: one topic id per batch column");
  auto t = cell_forward(params, peepholes, x, lookup_topics(params.topic_embedding[0], topic_ids), prev);
  CellState<Scalar> next{t.h, t.c};
  return {std::move(next), std::move(t)};
}

// Gradients flowing out of one step.
template <class Scalar>
struct StepGrad {
  Mat<Scalar> dh_prev;
  Mat<Scalar> dc_prev;
  Mat<Scalar> dx;
  Mat<Scalar> dtopic;
};

// Backward through one step. dh / dc are the total gradients arriving at this
// step's h and c. Parameter gradients are accumulated into g.
template <class Scalar>
StepGrad<Scalar> cell_backward(const ClstmParams<Scalar>& p, bool peepholes, const GateTrace<Scalar>& t,
                               const Mat<Scalar>& dh, const Mat<Scalar>& dc_in, ClstmParams<Scalar>& g) {
  const auto& base = p.base;
  const Eigen::Index H = base.hidden();
  const Eigen::Index B = t.h.cols();

  Mat<Scalar> dA(kNumGates * H, B);
  auto da_i = dA.middleRows(kInput * H, H);
  auto da_f = dA.middleRows(kForget * H, H);
  auto da_c = dA.middleRows(kCell * H, H);
  auto da_o = dA.middleRows(kOutput * H, H);

  da_o = (dh.array() * t.tanh_c.array() * t.o.array() * (Scalar(1) - t.o.array())).matrix();
  Mat<Scalar> dc = dc_in + (dh.array() * t.o.array() * (Scalar(1) - t.tanh_c.array().square())).matrix();
  if (peepholes) dc += base.peep_o.asDiagonal() * da_o;
  da_i = (dc.array() * t.g.array() * t.i.array() * (Scalar(1) - t.i.array())).matrix();
  da_f = (dc.array() * t.c_prev.array() * t.f.array() * (Scalar(1) - t.f.array())).matrix();
  da_c = (dc.array() * t.i.array() * (Scalar(1) - t.g.array().square())).matrix();

  StepGrad<Scalar> out;
  out.dc_prev = dc.cwiseProduct(t.f);
  if (peepholes) {
    out.dc_prev += base.peep_i.asDiagonal() * da_i;
    out.dc_prev += base.peep_f.asDiagonal() * da_f;
    g.base.peep_i += (da_i.array() * t.c_prev.array()).rowwise().sum().matrix();
    g.base.peep_f += (da_f.array() * t.c_prev.array()).rowwise().sum().matrix();
    g.base.peep_o += (da_o.array() * t.c.array()).rowwise().sum().matrix();
  }

  g.base.b += dA.rowwise().sum();
  g.base.Wh.noalias() += dA * t.h_prev.transpose();
  out.dh_prev.noalias() = base.Wh.transpose() * dA;
  if (t.x.rows() > 0) {
    g.base.Wx.noalias() += dA * t.x.transpose();
    out.dx.noalias() = base.Wx.transpose() * dA;
  }
  if (t.topic.rows() > 0) {
    if (p.topic_proj.rows() == H) {
      Mat<Scalar> dsum = da_i + da_f + da_c + da_o;
      g.topic_proj.noalias() += dsum * t.topic.transpose();
      out.dtopic.noalias() = p.topic_proj.transpose() * dsum;
    } else {
      g.topic_proj.noalias() += dA * t.topic.transpose();
      out.dtopic.noalias() = p.topic_proj.transpose() * dA;
    }
  }
  return out;
}

}  // namespace ctxlstm::nn
