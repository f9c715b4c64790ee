#include <cmath>
#include <vector>

#include "ctxlstm/nn/cell.hpp"
#include "ctxlstm/nn/gradcheck.hpp"
#include "ctxlstm/nn/sequence.hpp"
#include "ctxlstm/nn/sgd.hpp"
#include "doctest.h"

using namespace ctxlstm;
using namespace ctxlstm::nn;

namespace {

using M = Mat<double>;

double sig(double a) { return 1.0 / (1.0 + std::exp(-a)); }

// Element-by-element peephole LSTM step written straight from the equations.
// topic may be empty. Returns {h, c} for a single column.
std::pair<std::vector<double>, std::vector<double>> loop_step(const ClstmParams<double>& p, const std::vector<double>& x,
                                                              const std::vector<double>& topic,
                                                              const std::vector<double>& h_prev,
                                                              const std::vector<double>& c_prev) {
  const auto H = static_cast<std::size_t>(p.base.hidden());
  const bool shared = p.topic_proj.rows() == static_cast<Eigen::Index>(H);
  auto pre = [&](std::size_t gate, std::size_t r) {
    const auto row = static_cast<Eigen::Index>(gate * H + r);
    double a = p.base.b(row);
    for (std::size_t j = 0; j < x.size(); ++j) a += p.base.Wx(row, static_cast<Eigen::Index>(j)) * x[j];
    for (std::size_t j = 0; j < H; ++j) a += p.base.Wh(row, static_cast<Eigen::Index>(j)) * h_prev[j];
    const auto trow = shared ? static_cast<Eigen::Index>(r) : row;
    for (std::size_t j = 0; j < topic.size(); ++j) a += p.topic_proj(trow, static_cast<Eigen::Index>(j)) * topic[j];
    return a;
  };
  std::vector<double> h(H), c(H);
  for (std::size_t r = 0; r < H; ++r) {
    const auto ri = static_cast<Eigen::Index>(r);
    const double i = sig(pre(0, r) + p.base.peep_i(ri) * c_prev[r]);
    const double f = sig(pre(1, r) + p.base.peep_f(ri) * c_prev[r]);
    c[r] = f * c_prev[r] + i * std::tanh(pre(2, r));
    const double o = sig(pre(3, r) + p.base.peep_o(ri) * c[r]);
    h[r] = o * std::tanh(c[r]);
  }
  return {h, c};
}

ModelDims dims(std::size_t vocab, std::size_t embed, std::size_t hidden, std::size_t topics = 0,
               std::size_t topic_embed = 0, std::size_t slots = 0) {
  ModelDims d;
  d.vocab = vocab;
  d.embed = embed;
  d.hidden = hidden;
  d.output = vocab;
  d.num_topics = topics;
  d.topic_embed = topic_embed;
  d.topic_slots = slots;
  return d;
}

InitOptions rough() {
  InitOptions o;
  o.scale = 0.5;
  o.bias_scale = 0.5;
  o.forget_bias = 0;
  return o;
}

M random_matrix(Eigen::Index r, Eigen::Index c, Rng& rng, double s = 1.0) {
  M m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(-s, s);
  return m;
}

std::vector<double> col(const M& m, Eigen::Index c = 0) {
  return std::vector<double>(m.col(c).data(), m.col(c).data() + m.rows());
}

SequenceBatch<double> random_batch(const ModelDims& d, Eigen::Index T, Eigen::Index B, Rng& rng) {
  auto batch = SequenceBatch<double>::empty(T, B, d.topic_slots);
  for (Eigen::Index t = 0; t < T; ++t)
    for (Eigen::Index b = 0; b < B; ++b) {
      batch.words(t, b) = static_cast<int>(rng.below(d.vocab));
      for (auto& tp : batch.topics) tp(t, b) = static_cast<int>(rng.below(d.num_topics));
      batch.targets(t, b) = static_cast<int>(rng.below(d.output));
      batch.weights(t, b) = 1.0;
    }
  return batch;
}

}  // namespace

TEST_CASE("lstm_step matches a scalar-loop oracle") {
  Rng rng(11);
  const auto m = init_model<double>(dims(5, 3, 3), 2, rough());
  const M x = random_matrix(3, 1, rng);
  CellState<double> prev{random_matrix(3, 1, rng), random_matrix(3, 1, rng)};
  const auto [next, trace] = lstm_step(m.cell.base, x, prev);
  const auto [h, c] = loop_step(m.cell, col(x), {}, col(prev.h), col(prev.c));
  for (Eigen::Index r = 0; r < 3; ++r) {
    CHECK(std::abs(next.h(r, 0) - h[static_cast<std::size_t>(r)]) < 1e-12);
    CHECK(std::abs(next.c(r, 0) - c[static_cast<std::size_t>(r)]) < 1e-12);
  }
}

TEST_CASE("clstm_step matches the oracle with per-gate and shared projections") {
  for (bool shared : {false, true}) {
    auto d = dims(5, 3, 3, 4, 2, 1);
    d.shared_topic_projection = shared;
    Rng rng(12);
    const auto m = init_model<double>(d, 3, rough());
    const M x = random_matrix(3, 2, rng);
    CellState<double> prev{random_matrix(3, 2, rng), random_matrix(3, 2, rng)};
    const std::vector<int> ids{2, 0};
    const auto [next, trace] = clstm_step(m.cell, x, ids, prev);
    for (Eigen::Index b = 0; b < 2; ++b) {
      const auto [h, c] = loop_step(m.cell, col(x, b), col(m.cell.topic_embedding[0], ids[static_cast<std::size_t>(b)]),
                                    col(prev.h, b), col(prev.c, b));
      for (Eigen::Index r = 0; r < 3; ++r) {
        CHECK(std::abs(next.h(r, b) - h[static_cast<std::size_t>(r)]) < 1e-12);
        CHECK(std::abs(next.c(r, b) - c[static_cast<std::size_t>(r)]) < 1e-12);
      }
    }
  }
}

TEST_CASE("all-zero parameters and inputs give half-open gates and zero state") {
  const auto m = zero_model<double>(dims(4, 2, 3));
  const auto [next, t] = lstm_step(m.cell.base, M(M::Zero(2, 1)), CellState<double>::zero(3, 1));
  CHECK((t.i.array() == 0.5).all());
  CHECK((t.f.array() == 0.5).all());
  CHECK((t.o.array() == 0.5).all());
  CHECK(next.c.isZero());
  CHECK(next.h.isZero());
}

TEST_CASE("memory carries over when the forget gate is saturated open") {
  auto m = zero_model<double>(dims(4, 2, 3));
  m.cell.base.b.segment(kInput * 3, 3).setConstant(-30);
  m.cell.base.b.segment(kForget * 3, 3).setConstant(30);
  CellState<double> prev{M::Zero(3, 1), M::Constant(3, 1, 0.7)};
  const auto [next, t] = lstm_step(m.cell.base, M(M::Ones(2, 1)), prev);
  CHECK((next.c.array() - 0.7).abs().maxCoeff() < 1e-10);
}

TEST_CASE("Eq. 2 per-gate topic terms equal Eq. 3 block concatenation") {
  // [Wx Wh WT] [x; h; T] stacked once against the separate sums in cell_forward.
  Rng rng(21);
  auto d = dims(6, 3, 4, 5, 2, 1);
  const auto m = init_model<double>(d, 4, rough());
  const M x = random_matrix(3, 2, rng);
  CellState<double> prev{random_matrix(4, 2, rng), M::Zero(4, 2)};
  const std::vector<int> ids{1, 4};
  const auto [next, t] = clstm_step(m.cell, x, ids, prev, false);
  M W(16, 3 + 4 + 2);
  W << m.cell.base.Wx, m.cell.base.Wh, m.cell.topic_proj;
  M in(9, 2);
  in << x, prev.h, lookup_topics(m.cell.topic_embedding[0], std::span<const int>(ids));
  const M pre = W * in + m.cell.base.b.replicate(1, 2);
  CHECK((pre - t.pre).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("a CLSTM with zero topic projection is the LSTM") {
  Rng rng(31);
  auto d = dims(7, 3, 4, 5, 2, 1);
  auto clstm = init_model<double>(d, 5, rough());
  clstm.cell.topic_proj.setZero();
  auto plain_dims = dims(7, 3, 4);
  auto lstm = zero_model<double>(plain_dims);
  lstm.word_embedding = clstm.word_embedding;
  lstm.cell.base = clstm.cell.base;
  lstm.out = clstm.out;
  const auto batch = random_batch(d, 6, 2, rng);
  auto plain = batch;
  plain.topics.clear();
  const auto init = CellState<double>::zero(4, 2);
  const auto a = loss_and_gradient(clstm, batch, init);
  const auto b = loss_and_gradient(lstm, plain, init);
  CHECK(a.loss.loss == doctest::Approx(b.loss.loss).epsilon(1e-14));
  CHECK((a.backward.grads.cell.base.Wx - b.backward.grads.cell.base.Wx).cwiseAbs().maxCoeff() < 1e-14);
  CHECK((a.backward.grads.word_embedding - b.backward.grads.word_embedding).cwiseAbs().maxCoeff() < 1e-14);
  CHECK((a.backward.grads.out.W - b.backward.grads.out.W).cwiseAbs().maxCoeff() < 1e-14);
  CHECK(a.backward.grads.cell.topic_embedding[0].isZero());
}

TEST_CASE("forward_sequence equals manual stepping") {
  Rng rng(41);
  auto d = dims(9, 3, 4, 3, 2, 1);
  const auto m = init_model<double>(d, 6, rough());
  const auto batch = random_batch(d, 5, 2, rng);
  CellState<double> state{random_matrix(4, 2, rng), random_matrix(4, 2, rng)};
  const auto fwd = forward_sequence(m, batch, state);
  REQUIRE(fwd.logits.size() == 5);
  for (Eigen::Index t = 0; t < 5; ++t) {
    M x(3, 2);
    std::vector<int> ids(2);
    for (Eigen::Index b = 0; b < 2; ++b) {
      x.col(b) = m.word_embedding.col(batch.words(t, b));
      ids[static_cast<std::size_t>(b)] = batch.topics[0](t, b);
    }
    auto [next, tr] = clstm_step(m.cell, x, ids, state);
    state = next;
    const M logits = m.out.W * state.h + m.out.b.replicate(1, 2);
    CHECK((logits - fwd.logits[static_cast<std::size_t>(t)]).cwiseAbs().maxCoeff() < 1e-12);
  }
  CHECK((state.h - fwd.final_state.h).cwiseAbs().maxCoeff() < 1e-12);

  auto one = SequenceBatch<double>::empty(1, 2, 1);
  CHECK(forward_sequence(m, one, CellState<double>::zero(4, 2)).logits.size() == 1);
}

TEST_CASE("zero parameters give logits equal to the output bias") {
  auto m = zero_model<double>(dims(5, 2, 3));
  m.out.b << 1, 2, 3, 4, 5;
  Rng rng(1);
  const auto fwd = forward_sequence(m, random_batch(m.dims, 3, 2, rng), CellState<double>::zero(3, 2));
  for (const auto& l : fwd.logits) CHECK((l - m.out.b.replicate(1, 2)).isZero());
}

TEST_CASE("cross_entropy against a naive oracle") {
  Rng rng(51);
  std::vector<M> logits{random_matrix(7, 4, rng, 3.0)};
  IdMatrix targets(1, 4);
  targets << 0, 6, 3, 3;
  M weights(1, 4);
  weights << 1, 0.5, 0, 2;
  const auto r = cross_entropy(logits, targets, weights);
  double nll = 0, wsum = 0;
  for (int b = 0; b < 4; ++b) {
    double z = 0;
    for (int v = 0; v < 7; ++v) z += std::exp(logits[0](v, b));
    nll -= weights(0, b) * std::log(std::exp(logits[0](targets(0, b), b)) / z);
    wsum += weights(0, b);
    CHECK(r.probs[0].col(b).sum() == doctest::Approx(1.0).epsilon(1e-14));
  }
  CHECK(r.loss == doctest::Approx(nll / wsum).epsilon(1e-12));

  std::vector<M> flat{M::Zero(10, 3)};
  CHECK(cross_entropy(flat, IdMatrix::Zero(1, 3)).loss == doctest::Approx(std::log(10.0)));

  std::vector<M> huge{M::Zero(3, 1)};
  huge[0](1, 0) = 1000;
  IdMatrix y(1, 1);
  y << 1;
  const auto sat = cross_entropy(huge, y);
  CHECK(std::isfinite(sat.loss));
  CHECK(sat.loss < 1e-12);
  y << 0;
  CHECK(cross_entropy(huge, y).loss == doctest::Approx(1000.0));
}

TEST_CASE("zero-length and all-masked batches have zero gradient") {
  auto d = dims(5, 2, 3);
  const auto m = init_model<double>(d, 1, rough());
  auto empty = SequenceBatch<double>::empty(0, 2, 0);
  const auto e = loss_and_gradient(m, empty, CellState<double>::zero(3, 2));
  CHECK(e.loss.total_weight == 0);
  CHECK(global_norm(e.backward.grads) == 0);
  auto masked = SequenceBatch<double>::empty(4, 2, 0);
  CHECK(global_norm(loss_and_gradient(m, masked, CellState<double>::zero(3, 2)).backward.grads) == 0);
}

TEST_CASE("single-step gradient of a 1-unit cell matches the hand derivation") {
  // x = 1 (embed 1), h' = c' = 0, no peepholes. With a_g the pre-activations,
  // c = i g, h = o tanh(c), logits = W h + b over 2 classes, target 0.
  auto d = dims(2, 1, 1);
  d.peepholes = false;
  auto m = zero_model<double>(d);
  m.word_embedding << 1, 0;
  m.cell.base.Wx << 0.3, -0.2, 0.5, 0.4;
  m.cell.base.b << 0.1, 0.0, -0.1, 0.2;
  m.out.W << 1.5, -0.5;
  m.out.b << 0.0, 0.1;
  auto batch = SequenceBatch<double>::empty(1, 1, 0);
  batch.weights(0, 0) = 1;
  const auto r = loss_and_gradient(m, batch, CellState<double>::zero(1, 1));

  const double i = sig(0.4), o = sig(0.6), g = std::tanh(0.4);
  const double c = i * g, h = o * std::tanh(c);
  const double z0 = 1.5 * h, z1 = -0.5 * h + 0.1;
  const double p0 = std::exp(z0) / (std::exp(z0) + std::exp(z1));
  const double dz0 = p0 - 1, dz1 = 1 - p0;
  const double dh = 1.5 * dz0 - 0.5 * dz1;
  const double da_o = dh * std::tanh(c) * o * (1 - o);
  const double dc = dh * o * (1 - std::tanh(c) * std::tanh(c));
  const double da_i = dc * g * i * (1 - i);
  const double da_g = dc * i * (1 - g * g);
  const auto& G = r.backward.grads;
  CHECK(G.out.W(0, 0) == doctest::Approx(dz0 * h).epsilon(1e-12));
  CHECK(G.out.b(1) == doctest::Approx(dz1).epsilon(1e-12));
  CHECK(G.cell.base.b(kInput) == doctest::Approx(da_i).epsilon(1e-12));
  CHECK(G.cell.base.b(kForget) == doctest::Approx(0.0));
  CHECK(G.cell.base.b(kCell) == doctest::Approx(da_g).epsilon(1e-12));
  CHECK(G.cell.base.b(kOutput) == doctest::Approx(da_o).epsilon(1e-12));
  CHECK(G.word_embedding(0, 0) ==
        doctest::Approx(0.3 * da_i + 0.5 * da_g + 0.4 * da_o).epsilon(1e-12));
}

TEST_CASE("BPTT gradients pass a finite-difference check") {
  struct Case {
    const char* name;
    ModelDims d;
  };
  auto lstm = dims(12, 4, 5);
  auto clstm = dims(12, 4, 5, 4, 3, 2);
  auto shared = clstm;
  shared.shared_topic_projection = true;
  auto thought = clstm;
  thought.context_dim = 3;
  auto nopeep = clstm;
  nopeep.peepholes = false;
  for (const auto& c : {Case{"lstm", lstm}, Case{"clstm", clstm}, Case{"shared", shared}, Case{"context", thought},
                        Case{"nopeep", nopeep}}) {
    CAPTURE(c.name);
    GradCheckConfig cfg;
    cfg.dims = c.d;
    cfg.steps = 5;
    cfg.batch = 2;
    const auto report = run_grad_check<double>(cfg);
    for (const auto& t : report.tensors) {
      CAPTURE(t.name);
      CHECK(t.max_rel_error < 1e-4);
    }
  }
}

TEST_CASE("context gradient matches finite differences") {
  auto d = dims(6, 2, 3, 3, 2, 1);
  d.context_dim = 2;
  const auto m = init_model<double>(d, 9, rough());
  Rng rng(61);
  auto batch = random_batch(d, 4, 2, rng);
  for (int t = 0; t < 4; ++t) batch.context.push_back(random_matrix(2, 2, rng));
  const auto init = CellState<double>::zero(3, 2);
  const auto r = loss_and_gradient(m, batch, init);
  for (std::size_t t = 0; t < 4; ++t) {
    std::span<double> x(batch.context[t].data(), 4);
    std::span<const double> a(r.backward.d_context[t].data(), 4);
    CHECK(finite_difference_check<double>(x, a, [&] { return evaluate_loss(m, batch, init).loss; }, 1e-5) < 1e-5);
  }
}

TEST_CASE("a planted gradient fault is caught") {
  GradCheckConfig cfg;
  cfg.dims = dims(12, 4, 5, 4, 3, 1);
  cfg.planted_fault = "lstm.Wh";
  const auto report = run_grad_check<double>(cfg);
  CHECK(report.worst()->name == "lstm.Wh");
  CHECK(report.worst()->max_rel_error > 0.3);
  cfg.planted_fault = "no.such.tensor";
  CHECK_THROWS_AS(run_grad_check<double>(cfg), Error);
}

TEST_CASE("sgd_step: zero gradient, clipping, descent, non-finite") {
  auto d = dims(5, 2, 3);
  auto m = init_model<double>(d, 1, rough());
  const auto before = m;
  auto g = zeros_like(m);
  CHECK(sgd_step(m, g, {0.1, 5.0}) == 0.0);
  CHECK(m.cell.base.Wh == before.cell.base.Wh);

  g.out.W.setConstant(100.0);
  const double norm = global_norm(g);
  CHECK(sgd_step(m, g, {0.5, 5.0}) == doctest::Approx(norm));
  auto diff = zeros_like(m);
  visit_tensors([](const std::string&, auto& o, const auto& a, const auto& b) { o = a - b; }, diff, before, m);
  CHECK(global_norm(diff) == doctest::Approx(0.5 * 5.0).epsilon(1e-12));

  // quadratic surrogate: L = |W|^2 / 2 shrinks geometrically
  auto q = init_model<double>(d, 2, rough());
  double last = q.out.W.squaredNorm();
  for (int s = 0; s < 5; ++s) {
    auto grad = zeros_like(q);
    grad.out.W = q.out.W;
    sgd_step(q, grad, {0.1, 1e9});
    CHECK(q.out.W.squaredNorm() == doctest::Approx(last * 0.81).epsilon(1e-12));
    last = q.out.W.squaredNorm();
  }

  g.cell.base.b(2) = std::nan("");
  try {
    sgd_step(m, g, {0.1, 5.0});
    FAIL("expected a numerical error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Numerical);
    CHECK(std::string(e.what()).find("lstm.b") != std::string::npos);
  }
}

TEST_CASE("gate activations stay in range on large inputs") {
  auto d = dims(6, 3, 4, 3, 2, 1);
  InitOptions big;
  big.scale = 20;
  big.bias_scale = 20;
  const auto m = init_model<double>(d, 3, big);
  Rng rng(71);
  const auto fwd = forward_sequence(m, random_batch(d, 8, 3, rng), CellState<double>::zero(4, 3));
  for (const auto& t : fwd.traces) {
    for (const M* gate : {&t.i, &t.f, &t.o}) CHECK(((gate->array() >= 0) && (gate->array() <= 1)).all());
    CHECK((t.g.array().abs() <= 1).all());
    CHECK((t.h.array().abs() <= 1).all());
    CHECK(t.c.allFinite());
  }
}

TEST_CASE("identical seeds give identical models and losses; float and double agree") {
  auto d = dims(8, 3, 4, 3, 2, 1);
  const auto a = init_model<double>(d, 7);
  const auto b = init_model<double>(d, 7);
  CHECK(a.cell.base.Wx == b.cell.base.Wx);
  CHECK(a.cell.topic_embedding[0] == b.cell.topic_embedding[0]);
  Rng r1(5), r2(5);
  const auto ba = random_batch(d, 6, 2, r1);
  const auto bb = random_batch(d, 6, 2, r2);
  CHECK(evaluate_loss(a, ba, CellState<double>::zero(4, 2)).loss ==
        evaluate_loss(b, bb, CellState<double>::zero(4, 2)).loss);

  const auto f = cast_model<float>(a);
  SequenceBatch<float> bf;
  bf.words = ba.words;
  bf.topics = ba.topics;
  bf.targets = ba.targets;
  bf.weights = ba.weights.cast<float>();
  CHECK(evaluate_loss(f, bf, CellState<float>::zero(4, 2)).loss ==
        doctest::Approx(evaluate_loss(a, ba, CellState<double>::zero(4, 2)).loss).epsilon(1e-5));
}

TEST_CASE("SGD memorizes a short sequence") {
  // 10 steps of a fixed 6-word cycle; next-word loss falls well below ln 6.
  auto d = dims(6, 8, 16);
  auto m = init_model<double>(d, 1, {0.1, 1.0, 0.0});
  auto batch = SequenceBatch<double>::empty(10, 1, 0);
  for (int t = 0; t < 10; ++t) {
    batch.words(t, 0) = t % 6;
    batch.targets(t, 0) = (t + 1) % 6;
    batch.weights(t, 0) = 1;
  }
  const auto init = CellState<double>::zero(16, 1);
  double first = 0, last = 0;
  for (int it = 0; it < 400; ++it) {
    const auto r = loss_and_gradient(m, batch, init);
    if (it == 0) first = r.loss.loss;
    last = r.loss.loss;
    sgd_step(m, r.backward.grads, {1.0, 5.0});
  }
  CHECK(first > 1.5);
  CHECK(std::exp(last) < 1.1);
}
