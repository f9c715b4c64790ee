#pragma once

#include <cmath>
#include <string>

#include "ctxlstm/nn/params.hpp"

namespace ctxlstm::nn {

struct SgdOptions {
  double learning_rate = 0.1;
  double clip_norm = 5.0;
};

template <class Scalar>
double global_norm(const Gradients<Scalar>& g) {
  double sq = 0;
  visit_tensors([&](const std::string&, const auto& t) { sq += static_cast<double>(t.squaredNorm()); }, g);
  return std::sqrt(sq);
}

// Global-norm clipping to clip_norm, then params -= lr * grads.
// Returns the gradient norm before clipping.
template <class Scalar>
double sgd_step(LanguageModel<Scalar>& params, const Gradients<Scalar>& grads, const SgdOptions& opt) {
  if (!(opt.learning_rate > 0) || !(opt.clip_norm > 0)) fail(ErrorKind::Config, "learning rate and clip norm must be > 0");
  visit_tensors(
      [](const std::string& name, const auto& p, const auto& g) {
        if (p.rows() != g.rows() || p.cols() != g.cols())
          fail(ErrorKind::Dimension, "gradient shape mismatch in tensor " + name);
        if (!g.allFinite()) fail(ErrorKind::Numerical, "non-finite gradient in tensor " + name);
      },
      params, grads);
  const double norm = global_norm(grads);
  const double scale = norm > opt.clip_norm ? opt.clip_norm / norm : 1.0;
  const auto step = static_cast<Scalar>(opt.learning_rate * scale);
  visit_tensors([&](const std::string&, auto& p, const auto& g) { p -= step * g; }, params, grads);
  if (!params.dims.peepholes) {
    params.cell.base.peep_i.setZero();
    params.cell.base.peep_f.setZero();
    params.cell.base.peep_o.setZero();
  }
  return norm;
}

}  // namespace ctxlstm::nn
