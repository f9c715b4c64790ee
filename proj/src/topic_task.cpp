#include "ctxlstm/topic_task.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>

#include "ctxlstm/nn/sgd.hpp"

namespace ctxlstm {

namespace {

constexpr TopicInputs kAllInputs[] = {TopicInputs::Word, TopicInputs::SentTopic, TopicInputs::WordSentTopic,
                                      TopicInputs::WordThought};

struct ParaRef {
  std::size_t doc = 0;
  std::size_t para = 0;
};

// Sentence range of a paragraph that carries predictions.
struct ExampleRange {
  std::size_t first = 0;  // first example sentence
  std::size_t end = 0;    // one past the last
};

ExampleRange examples_of(std::size_t sentences, TopicTarget target) {
  if (target == TopicTarget::NextSentence) return {0, sentences > 0 ? sentences - 1 : 0};
  return {1, sentences};
}

std::vector<ParaRef> paragraphs_with_examples(const TopicTaskData& data, TopicTarget target) {
  std::vector<ParaRef> out;
  for (std::size_t d = 0; d < data.docs.size(); ++d)
    for (std::size_t p = 0; p < data.docs[d].paragraphs.size(); ++p) {
      const auto r = examples_of(data.docs[d].paragraphs[p].size(), target);
      if (r.end > r.first) out.push_back({d, p});
    }
  return out;
}

void check_data(const TopicTaskData& data) {
  if (data.labels.size() != data.docs.size()) fail(ErrorKind::Dimension, "one label set per document required");
  for (std::size_t d = 0; d < data.docs.size(); ++d) {
    const auto& doc = data.docs[d];
    if (data.labels[d].size() != doc.paragraphs.size()) fail(ErrorKind::Dimension, "labels do not match paragraphs");
    for (std::size_t p = 0; p < doc.paragraphs.size(); ++p) {
      if (data.labels[d][p].size() != doc.paragraphs[p].size())
        fail(ErrorKind::Dimension, "labels do not match sentences");
      for (int t : data.labels[d][p])
        if (t < 0 || static_cast<std::size_t>(t) >= data.num_topics)
          fail(ErrorKind::Config, "topic label " + std::to_string(t) + " outside [0, num_topics)");
    }
  }
}

struct ChainStats {
  double nll = 0;
  double weight = 0;
  // per paragraph column, per example sentence (relative to range.first)
  std::vector<std::vector<double>> losses;
};

struct ChainGrads {
  nn::Gradients<double> net;
  Eigen::MatrixXd proj;
};

// Runs the unrolled model over a batch of paragraphs, one sentence index at
// a time; state is reset for every sentence. Gradients (of the summed NLL)
// are accumulated when grads is given. Thought inputs are stop-gradient
// w.r.t. the previous sentence; P is trained straight-through the rounding.
ChainStats run_chain(const TopicTaskModel& m, const TopicTaskData& data, std::span<const ParaRef> paras,
                     ChainGrads* grads) {
  const auto& net = m.net;
  const auto H = static_cast<Eigen::Index>(net.dims.hidden);
  const bool words = uses_words(m.inputs), topic = uses_topic(m.inputs), thought = uses_thought(m.inputs);
  const auto Dt = static_cast<Eigen::Index>(m.thought.dim);

  std::vector<ExampleRange> ranges;
  std::size_t steps = 0;
  for (const auto& p : paras) {
    ranges.push_back(examples_of(data.docs[p.doc].paragraphs[p.para].size(), m.target));
    steps = std::max(steps, ranges.back().end);
  }
  ChainStats stats;
  stats.losses.resize(paras.size());
  Eigen::MatrixXd h_last = Eigen::MatrixXd::Zero(H, static_cast<Eigen::Index>(paras.size()));

  for (std::size_t n = 0; n < steps; ++n) {
    std::vector<std::size_t> cols;
    std::size_t longest = 0;
    for (std::size_t c = 0; c < paras.size(); ++c) {
      if (ranges[c].end <= n) continue;
      cols.push_back(c);
      longest = std::max(longest, data.docs[paras[c].doc].paragraphs[paras[c].para][n].size());
    }
    const auto B = static_cast<Eigen::Index>(cols.size());
    const auto T = static_cast<Eigen::Index>(longest);
    auto batch = nn::SequenceBatch<double>::empty(T, B, topic ? 1 : 0);
    Eigen::MatrixXd h_prev(H, B), theta;
    for (Eigen::Index b = 0; b < B; ++b) h_prev.col(b) = h_last.col(static_cast<Eigen::Index>(cols[b]));
    if (thought) {
      theta = n == 0 ? Eigen::MatrixXd::Zero(Dt, B) : roundoff(m.thought_proj * h_prev, m.thought.quantum);
      batch.context.assign(static_cast<std::size_t>(T), theta);
    }
    std::vector<Eigen::Index> last(cols.size());
    for (Eigen::Index b = 0; b < B; ++b) {
      const auto& pr = paras[cols[static_cast<std::size_t>(b)]];
      const auto& sent = data.docs[pr.doc].paragraphs[pr.para][n];
      const auto& lab = data.labels[pr.doc][pr.para];
      const auto& range = ranges[cols[static_cast<std::size_t>(b)]];
      const auto len = static_cast<Eigen::Index>(sent.size());
      last[static_cast<std::size_t>(b)] = len - 1;
      const int topic_in = m.target == TopicTarget::NextSentence ? lab[n] : (n > 0 ? lab[n - 1] : 0);
      for (Eigen::Index t = 0; t < len; ++t) {
        if (words) batch.words(t, b) = sent[static_cast<std::size_t>(t)];
        if (topic) batch.topics[0](t, b) = topic_in;
      }
      if (n >= range.first) {
        batch.targets(len - 1, b) = m.target == TopicTarget::NextSentence ? lab[n + 1] : lab[n];
        batch.weights(len - 1, b) = 1.0;
      }
    }

    const auto fwd = nn::forward_sequence(net, batch, nn::CellState<double>::zero(H, B));
    const auto loss = nn::cross_entropy(fwd.logits, batch.targets, batch.weights);
    for (Eigen::Index b = 0; b < B; ++b) {
      const std::size_t c = cols[static_cast<std::size_t>(b)];
      const Eigen::Index l = last[static_cast<std::size_t>(b)];
      h_last.col(static_cast<Eigen::Index>(c)) = fwd.traces[static_cast<std::size_t>(l)].h.col(b);
      if (batch.weights(l, b) > 0) {
        const double p = loss.probs[static_cast<std::size_t>(l)](batch.targets(l, b), b);
        stats.losses[c].push_back(-std::log(p));
      }
    }
    stats.nll += loss.total_nll;
    stats.weight += loss.total_weight;

    if (grads && loss.total_weight > 0) {
      auto back = nn::bptt_backward(net, batch, fwd, loss);
      // back holds d(mean)/d(.); scale to the summed NLL
      nn::visit_tensors([&](const std::string&, auto& acc, const auto& g) { acc += loss.total_weight * g; },
                        grads->net, back.grads);
      if (thought && n > 0) {
        Eigen::MatrixXd dtheta = Eigen::MatrixXd::Zero(Dt, B);
        for (const auto& dc : back.d_context) dtheta += dc;
        grads->proj.noalias() += loss.total_weight * dtheta * h_prev.transpose();
      }
    }
  }
  return stats;
}

nn::ModelDims topic_dims(std::size_t vocab_size, std::size_t num_topics, TopicInputs inputs,
                         const TrainConfig& config, const ThoughtOptions& thought) {
  nn::ModelDims d;
  d.vocab = uses_words(inputs) ? vocab_size : 0;
  d.embed = uses_words(inputs) ? config.embed : 0;
  d.hidden = config.hidden;
  d.output = num_topics;
  if (uses_topic(inputs)) {
    d.topic_slots = 1;
    d.num_topics = num_topics;
    d.topic_embed = config.topic_embed;
  }
  if (uses_thought(inputs)) d.context_dim = thought.dim;
  d.peepholes = config.peepholes;
  d.shared_topic_projection = config.shared_topic_projection;
  return d;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

TopicInputs parse_topic_inputs(std::string_view text) {
  for (auto in : kAllInputs)
    if (to_string(in) == text) return in;
  fail(ErrorKind::Config, "unknown topic-task inputs '" + std::string(text) + "' (w, st, w+st, w+pst)");
}

std::string_view to_string(TopicInputs inputs) {
  switch (inputs) {
    case TopicInputs::Word: return "w";
    case TopicInputs::SentTopic: return "st";
    case TopicInputs::WordSentTopic: return "w+st";
    case TopicInputs::WordThought: return "w+pst";
  }
  return "w";
}

std::string_view label(TopicInputs inputs) {
  switch (inputs) {
    case TopicInputs::Word: return "W";
    case TopicInputs::SentTopic: return "ST";
    case TopicInputs::WordSentTopic: return "W + ST";
    case TopicInputs::WordThought: return "W + PST";
  }
  return "W";
}

Eigen::MatrixXd roundoff(const Eigen::MatrixXd& v, double quantum) {
  if (quantum <= 0) return v;
  return (v.array() / quantum).round().matrix() * quantum;
}

void save_topic_task_model(const std::string& path, const TopicTaskModel& model, FlatConfig manifest) {
  manifest.set("topic_task.inputs", std::string(to_string(model.inputs)));
  manifest.set("topic_task.target", model.target == TopicTarget::NextSentence ? "next" : "same");
  manifest.set("thought.dim", std::uint64_t{model.thought.dim});
  manifest.set("thought.quantum", model.thought.quantum);
  NamedTensors extras;
  if (uses_thought(model.inputs)) extras.emplace("thought.proj", model.thought_proj);
  save_checkpoint(path, model.net, std::move(manifest), extras);
}

TopicTaskModel load_topic_task_model(const std::string& path, const ExpectedHashes& expect, FlatConfig* manifest) {
  auto ck = load_checkpoint(path, expect);
  TopicTaskModel m;
  try {
    m.inputs = parse_topic_inputs(ck.manifest.get("topic_task.inputs"));
    const auto& target = ck.manifest.get("topic_task.target");
    if (target != "next" && target != "same") fail(ErrorKind::Format, "bad topic_task.target '" + target + "'");
    m.target = target == "next" ? TopicTarget::NextSentence : TopicTarget::SameSentence;
    m.thought.dim = ck.manifest.get_uint("thought.dim");
    m.thought.quantum = ck.manifest.get_double("thought.quantum");
  } catch (const Error& e) {
    if (e.kind() != ErrorKind::Config) throw;
    fail(ErrorKind::Format, std::string("not a topic-task checkpoint: ") + e.what());
  }
  if (uses_thought(m.inputs)) {
    const auto it = ck.extras.find("thought.proj");
    if (it == ck.extras.end()) fail(ErrorKind::Format, "checkpoint lacks tensor thought.proj");
    if (it->second.rows() != static_cast<Eigen::Index>(m.thought.dim) ||
        it->second.cols() != static_cast<Eigen::Index>(ck.model.dims.hidden) ||
        ck.model.dims.context_dim != m.thought.dim)
      fail(ErrorKind::Format, "thought.proj shape does not match the manifest");
    m.thought_proj = it->second;
  }
  m.net = std::move(ck.model);
  if (manifest) *manifest = std::move(ck.manifest);
  return m;
}

std::vector<DocumentLabels> assign_labels(std::span<const CorpusDocument> docs, const TopicModel& topics) {
  std::vector<DocumentLabels> out;
  out.reserve(docs.size());
  for (const auto& d : docs) {
    DocumentLabels labels;
    for (const auto& p : d.paragraphs) {
      std::vector<int> row;
      for (const auto& s : p) row.push_back(topics.assign(s));
      labels.push_back(std::move(row));
    }
    out.push_back(std::move(labels));
  }
  return out;
}

std::vector<Eigen::VectorXd> thought_vector_features(const TopicTaskModel& model, const Paragraph& paragraph) {
  if (!uses_thought(model.inputs)) fail(ErrorKind::Config, "model has no thought projection");
  const auto& net = model.net;
  const auto H = static_cast<Eigen::Index>(net.dims.hidden);
  const auto Dt = static_cast<Eigen::Index>(model.thought.dim);
  std::vector<Eigen::VectorXd> out;
  Eigen::VectorXd theta = Eigen::VectorXd::Zero(Dt);
  for (const auto& sent : paragraph) {
    out.push_back(theta);
    const auto T = static_cast<Eigen::Index>(sent.size());
    auto batch = nn::SequenceBatch<double>::empty(T, 1, 0);
    for (Eigen::Index t = 0; t < T; ++t) batch.words(t, 0) = sent[static_cast<std::size_t>(t)];
    batch.context.assign(static_cast<std::size_t>(T), Eigen::MatrixXd(theta));
    const auto state = nn::run_state(net, batch, nn::CellState<double>::zero(H, 1));
    theta = roundoff(model.thought_proj * state.h, model.thought.quantum);
  }
  return out;
}

TopicEval eval_topic_model(const TopicTaskModel& model, const TopicTaskData& data, std::size_t batch_size) {
  check_data(data);
  if (batch_size == 0) fail(ErrorKind::Config, "batch size must be >= 1");
  const auto paras = paragraphs_with_examples(data, model.target);
  TopicEval r;
  double nll = 0, weight = 0;
  for (std::size_t first = 0; first < paras.size(); first += batch_size) {
    const auto chunk = std::span(paras).subspan(first, std::min(batch_size, paras.size() - first));
    auto stats = run_chain(model, data, chunk, nullptr);
    nll += stats.nll;
    weight += stats.weight;
    for (const auto& l : stats.losses) r.losses.insert(r.losses.end(), l.begin(), l.end());
  }
  r.mean_nll = weight > 0 ? nll / weight : 0.0;
  r.perplexity = std::exp(r.mean_nll);
  if (!std::isfinite(r.perplexity)) fail(ErrorKind::Numerical, "non-finite topic perplexity");
  return r;
}

TopicTrainResult train_topic_model_task(const TopicTaskData& train, const TopicTaskData& validation,
                                        std::size_t vocab_size, TopicInputs inputs, TopicTarget target,
                                        const TrainConfig& config, const ThoughtOptions& thought,
                                        const EpochCallback& on_epoch) {
  config.validate();
  check_data(train);
  check_data(validation);
  if (train.num_topics == 0) fail(ErrorKind::Config, "num_topics must be >= 1");
  if (uses_thought(inputs) && thought.dim == 0) fail(ErrorKind::Config, "thought dimension must be >= 1");
  if (thought.quantum < 0) fail(ErrorKind::Config, "thought quantum must be >= 0");

  TopicTaskModel model;
  model.inputs = inputs;
  model.target = target;
  model.thought = thought;
  nn::InitOptions init;
  init.scale = config.init_scale;
  model.net = nn::init_model<double>(topic_dims(vocab_size, train.num_topics, inputs, config, thought), config.seed,
                                     init);
  if (uses_thought(inputs)) {
    Rng rng(derive_seed(config.seed, "thought-proj"));
    model.thought_proj.resize(static_cast<Eigen::Index>(thought.dim), static_cast<Eigen::Index>(config.hidden));
    for (Eigen::Index i = 0; i < model.thought_proj.size(); ++i)
      model.thought_proj.data()[i] = rng.uniform(-config.init_scale, config.init_scale);
  }

  auto paras = paragraphs_with_examples(train, target);
  if (paras.empty()) fail(ErrorKind::Config, "no training examples for the topic task");
  TopicTrainResult result;
  double best = std::numeric_limits<double>::infinity();

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    Rng rng(derive_seed(config.seed, "topic-epoch-" + std::to_string(epoch)));
    rng.shuffle(paras.begin(), paras.end());
    const double lr = epoch_learning_rate(config, epoch);
    double nll = 0, weight = 0;
    for (std::size_t first = 0; first < paras.size(); first += config.batch_size) {
      const auto chunk = std::span(paras).subspan(first, std::min(config.batch_size, paras.size() - first));
      ChainGrads g{nn::zeros_like(model.net), Eigen::MatrixXd::Zero(model.thought_proj.rows(), model.thought_proj.cols())};
      const auto stats = run_chain(model, train, chunk, &g);
      nll += stats.nll;
      weight += stats.weight;
      if (stats.weight == 0) continue;
      // summed NLL -> mean per example, or summed per paragraph and averaged
      const double scale =
          config.sequence_sum ? 1.0 / static_cast<double>(chunk.size()) : 1.0 / stats.weight;
      nn::visit_tensors([&](const std::string&, auto& t) { t *= scale; }, g.net);
      g.proj *= scale;
      if (!g.proj.allFinite()) fail(ErrorKind::Numerical, "non-finite gradient in tensor thought.proj");
      const double norm = std::sqrt(nn::global_norm(g.net) * nn::global_norm(g.net) + g.proj.squaredNorm());
      const double clip = norm > config.clip_norm ? config.clip_norm / norm : 1.0;
      model.thought_proj -= (lr * clip) * g.proj;
      // sgd_step clips by the net's own norm, which is already within bounds
      nn::visit_tensors([&](const std::string&, auto& t) { t *= clip; }, g.net);
      nn::sgd_step(model.net, g.net, {lr, std::numeric_limits<double>::max()});
    }
    const double train_nll = weight > 0 ? nll / weight : 0.0;
    if (!std::isfinite(train_nll)) fail(ErrorKind::Numerical, "training loss became non-finite");
    EpochLog tl{epoch + 1, "train", train_nll, std::exp(train_nll), seconds_since(t0)};
    result.log.push_back(tl);
    if (on_epoch) on_epoch(tl);
    const auto valid = eval_topic_model(model, validation.docs.empty() ? train : validation);
    EpochLog vl{epoch + 1, "validation", valid.mean_nll, valid.perplexity, seconds_since(t0)};
    result.log.push_back(vl);
    if (on_epoch) on_epoch(vl);
    if (valid.perplexity < best) {
      best = valid.perplexity;
      result.model = model;
      result.best_epoch = epoch + 1;
    }
  }
  return result;
}

// ---- BOW-DNN -------------------------------------------------------------------

double bow_dnn_loss(const BowDnn<double>& m, const BowBatch& batch, BowDnn<double>* grads) {
  const auto B = batch.counts.cols();
  if (static_cast<std::size_t>(B) != batch.targets.size()) fail(ErrorKind::Dimension, "one target per BOW column");
  if (B == 0) return 0.0;
  Eigen::MatrixXd pre = m.W1 * batch.counts;
  pre.colwise() += m.b1;
  const Eigen::MatrixXd hid = pre.cwiseMax(0.0);
  Eigen::MatrixXd logits = m.W2 * hid;
  logits.colwise() += m.b2;
  const Eigen::MatrixXd lp = nn::log_softmax<double>(logits);
  double nll = 0;
  for (Eigen::Index b = 0; b < B; ++b) nll -= lp(batch.targets[static_cast<std::size_t>(b)], b);
  nll /= static_cast<double>(B);
  if (grads) {
    Eigen::MatrixXd dlogits = lp.array().exp().matrix();
    for (Eigen::Index b = 0; b < B; ++b) dlogits(batch.targets[static_cast<std::size_t>(b)], b) -= 1.0;
    dlogits /= static_cast<double>(B);
    grads->W2 = dlogits * hid.transpose();
    grads->b2 = dlogits.rowwise().sum();
    const Eigen::MatrixXd dpre = ((m.W2.transpose() * dlogits).array() * (pre.array() > 0).cast<double>()).matrix();
    grads->W1 = dpre * batch.counts.transpose();
    grads->b1 = dpre.rowwise().sum();
  }
  return nll;
}

BowBatch bow_examples(const TopicTaskData& data, std::size_t vocab_size) {
  check_data(data);
  std::vector<std::pair<const Sentence*, int>> items;
  for (std::size_t d = 0; d < data.docs.size(); ++d)
    for (std::size_t p = 0; p < data.docs[d].paragraphs.size(); ++p) {
      const auto& para = data.docs[d].paragraphs[p];
      for (std::size_t n = 1; n < para.size(); ++n) items.push_back({&para[n], data.labels[d][p][n]});
    }
  BowBatch batch;
  batch.counts = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(vocab_size), static_cast<Eigen::Index>(items.size()));
  for (std::size_t i = 0; i < items.size(); ++i) {
    for (WordId w : *items[i].first) {
      if (w < 0 || static_cast<std::size_t>(w) >= vocab_size) fail(ErrorKind::Dimension, "word id out of range");
      batch.counts(w, static_cast<Eigen::Index>(i)) += 1.0;
    }
    batch.targets.push_back(items[i].second);
  }
  return batch;
}

PerplexityResult eval_bow_dnn(const BowDnn<double>& model, const TopicTaskData& data, std::size_t vocab_size) {
  const auto batch = bow_examples(data, vocab_size);
  PerplexityResult r;
  r.predictions = batch.targets.size();
  r.mean_nll = bow_dnn_loss(model, batch, nullptr);
  r.perplexity = std::exp(r.mean_nll);
  return r;
}

BowTrainResult bow_dnn_topic_baseline(const TopicTaskData& train, const TopicTaskData& validation,
                                      std::size_t vocab_size, const TrainConfig& config,
                                      const EpochCallback& on_epoch) {
  config.validate();
  const auto all = bow_examples(train, vocab_size);
  if (all.targets.empty()) fail(ErrorKind::Config, "no training examples for the BOW-DNN baseline");
  const auto V = static_cast<Eigen::Index>(vocab_size);
  const auto H = static_cast<Eigen::Index>(config.hidden);
  const auto K = static_cast<Eigen::Index>(train.num_topics);
  BowDnn<double> model;
  Rng init(derive_seed(config.seed, "bow-init"));
  auto fill = [&](Eigen::MatrixXd& m, Eigen::Index r, Eigen::Index c) {
    m.resize(r, c);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = init.uniform(-config.init_scale, config.init_scale);
  };
  fill(model.W1, H, V);
  fill(model.W2, K, H);
  model.b1 = Eigen::VectorXd::Zero(H);
  model.b2 = Eigen::VectorXd::Zero(K);

  std::vector<Eigen::Index> order(all.targets.size());
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  BowTrainResult result;
  double best = std::numeric_limits<double>::infinity();
  const auto& held = validation.docs.empty() ? train : validation;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    Rng rng(derive_seed(config.seed, "bow-epoch-" + std::to_string(epoch)));
    rng.shuffle(order.begin(), order.end());
    const double lr = epoch_learning_rate(config, epoch);
    double nll = 0;
    for (std::size_t first = 0; first < order.size(); first += config.batch_size) {
      const std::size_t n = std::min(config.batch_size, order.size() - first);
      BowBatch batch;
      batch.counts.resize(V, static_cast<Eigen::Index>(n));
      for (std::size_t i = 0; i < n; ++i) {
        batch.counts.col(static_cast<Eigen::Index>(i)) = all.counts.col(order[first + i]);
        batch.targets.push_back(all.targets[static_cast<std::size_t>(order[first + i])]);
      }
      BowDnn<double> g;
      nll += bow_dnn_loss(model, batch, &g) * static_cast<double>(n);
      // one example is one sequence, so both loss scalings coincide
      const double norm = std::sqrt(g.W1.squaredNorm() + g.b1.squaredNorm() + g.W2.squaredNorm() + g.b2.squaredNorm());
      if (!std::isfinite(norm)) fail(ErrorKind::Numerical, "non-finite gradient in the BOW-DNN");
      const double step = lr * (norm > config.clip_norm ? config.clip_norm / norm : 1.0);
      model.W1 -= step * g.W1;
      model.b1 -= step * g.b1;
      model.W2 -= step * g.W2;
      model.b2 -= step * g.b2;
    }
    const double train_nll = nll / static_cast<double>(order.size());
    EpochLog tl{epoch + 1, "train", train_nll, std::exp(train_nll), seconds_since(t0)};
    result.log.push_back(tl);
    if (on_epoch) on_epoch(tl);
    const auto valid = eval_bow_dnn(model, held, vocab_size);
    EpochLog vl{epoch + 1, "validation", valid.mean_nll, valid.perplexity, seconds_since(t0)};
    result.log.push_back(vl);
    if (on_epoch) on_epoch(vl);
    if (valid.perplexity < best) {
      best = valid.perplexity;
      result.model = model;
      result.best_epoch = epoch + 1;
    }
  }
  return result;
}

}  // namespace ctxlstm
