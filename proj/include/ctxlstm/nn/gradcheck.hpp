#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "ctxlstm/nn/sequence.hpp"

namespace ctxlstm::nn {

inline double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-8});
}

// Central differences of f over the chosen coordinates of x (all when
// coords is empty). x is perturbed in place and restored.
template <class Scalar, class F>
double finite_difference_check(std::span<Scalar> x, std::span<const Scalar> analytic, F&& f, double step,
                               std::span<const std::size_t> coords = {}) {
  double worst = 0;
  auto check = [&](std::size_t i) {
    const Scalar saved = x[i];
    x[i] = saved + static_cast<Scalar>(step);
    const double up = static_cast<double>(f());
    x[i] = saved - static_cast<Scalar>(step);
    const double down = static_cast<double>(f());
    x[i] = saved;
    const double numeric = (up - down) / (2 * step);
    worst = std::max(worst, relative_error(static_cast<double>(analytic[i]), numeric));
  };
  if (coords.empty()) {
    for (std::size_t i = 0; i < x.size(); ++i) check(i);
  } else {
    for (std::size_t i : coords) check(i);
  }
  return worst;
}

struct TensorCheck {
  std::string name;
  double max_rel_error = 0;
  std::size_t coords = 0;
};

struct GradCheckReport {
  std::vector<TensorCheck> tensors;

  double max_error() const {
    double m = 0;
    for (const auto& t : tensors) m = std::max(m, t.max_rel_error);
    return m;
  }
  bool passed(double tolerance) const { return max_error() < tolerance; }
  const TensorCheck* worst() const {
    const TensorCheck* w = nullptr;
    for (const auto& t : tensors)
      if (!w || t.max_rel_error > w->max_rel_error) w = &t;
    return w;
  }
};

struct GradCheckOptions {
  double step = 1e-4;
  std::size_t max_coords_per_tensor = 0;  // 0 checks every coordinate
  std::uint64_t seed = 1;
};

// Compares analytic gradients against central differences of loss(model).
template <class Scalar, class LossFn>
GradCheckReport compare_gradients(LanguageModel<Scalar> model, const Gradients<Scalar>& analytic, LossFn&& loss,
                                  const GradCheckOptions& opt) {
  GradCheckReport report;
  Rng rng(derive_seed(opt.seed, "gradcheck-coords"));
  visit_tensors(
      [&](const std::string& name, auto& p, const auto& g) {
        const auto n = static_cast<std::size_t>(p.size());
        if (n == 0) return;
        std::vector<std::size_t> coords;
        if (opt.max_coords_per_tensor > 0 && n > opt.max_coords_per_tensor) {
          std::vector<std::size_t> all(n);
          for (std::size_t i = 0; i < n; ++i) all[i] = i;
          rng.shuffle(all.begin(), all.end());
          coords.assign(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(opt.max_coords_per_tensor));
          std::sort(coords.begin(), coords.end());
        }
        const double err = finite_difference_check<Scalar>(std::span<Scalar>(p.data(), n),
                                                           std::span<const Scalar>(g.data(), n),
                                                           [&] { return loss(model); }, opt.step, coords);
        report.tensors.push_back({name, err, coords.empty() ? n : coords.size()});
      },
      model, analytic);
  return report;
}

struct GradCheckConfig {
  ModelDims dims;
  Eigen::Index steps = 6;
  Eigen::Index batch = 2;
  std::uint64_t seed = 1;
  GradCheckOptions options;
  std::string planted_fault;  // tensor whose analytic gradient gets scaled
  double fault_scale = 2.0;
};

// Random small model, random batch with a random initial state; every tensor
// checked against central differences.
template <class Scalar = double>
GradCheckReport run_grad_check(const GradCheckConfig& cfg) {
  const auto& d = cfg.dims;
  InitOptions init;
  init.scale = 0.5;
  init.bias_scale = 0.5;
  init.forget_bias = 0.0;
  auto model = init_model<Scalar>(d, cfg.seed, init);

  Rng rng(derive_seed(cfg.seed, "gradcheck-batch"));
  const Eigen::Index T = cfg.steps;
  const Eigen::Index B = cfg.batch;
  auto batch = SequenceBatch<Scalar>::empty(T, B, d.topic_slots);
  for (Eigen::Index t = 0; t < T; ++t) {
    for (Eigen::Index b = 0; b < B; ++b) {
      if (d.vocab > 0) batch.words(t, b) = static_cast<int>(rng.below(d.vocab));
      for (auto& tp : batch.topics) tp(t, b) = static_cast<int>(rng.below(d.num_topics));
      batch.targets(t, b) = static_cast<int>(rng.below(d.output));
      batch.weights(t, b) = static_cast<Scalar>(rng.bernoulli(0.85) ? 1.0 : 0.0);
    }
  }
  batch.weights(T - 1, 0) = Scalar(1);
  if (d.context_dim > 0) {
    for (Eigen::Index t = 0; t < T; ++t) {
      Mat<Scalar> ctx(static_cast<Eigen::Index>(d.context_dim), B);
      for (Eigen::Index i = 0; i < ctx.size(); ++i) ctx.data()[i] = static_cast<Scalar>(rng.uniform(-1, 1));
      batch.context.push_back(std::move(ctx));
    }
  }
  const auto H = static_cast<Eigen::Index>(d.hidden);
  auto init_state = CellState<Scalar>::zero(H, B);
  for (Eigen::Index i = 0; i < init_state.h.size(); ++i) {
    init_state.h.data()[i] = static_cast<Scalar>(rng.uniform(-0.5, 0.5));
    init_state.c.data()[i] = static_cast<Scalar>(rng.uniform(-1, 1));
  }

  auto analytic = loss_and_gradient(model, batch, init_state).backward.grads;
  if (!cfg.planted_fault.empty()) {
    bool found = false;
    visit_tensors(
        [&](const std::string& name, auto& g) {
          if (name == cfg.planted_fault) {
            g *= static_cast<Scalar>(cfg.fault_scale);
            found = true;
          }
        },
        analytic);
    if (!found) fail(ErrorKind::Config, "no tensor named '" + cfg.planted_fault + "'");
  }
  auto loss = [&](const LanguageModel<Scalar>& m) { return evaluate_loss(m, batch, init_state).loss; };
  return compare_gradients(model, analytic, loss, cfg.options);
}

}  // namespace ctxlstm::nn
