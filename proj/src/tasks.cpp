#include "ctxlstm/tasks.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <ostream>

#include "ctxlstm/nn/sgd.hpp"

namespace ctxlstm {

void TrainConfig::validate() const {
  if (hidden == 0 || embed == 0 || topic_embed == 0) fail(ErrorKind::Config, "hidden, embed and topic_embed must be >= 1");
  if (!(learning_rate > 0) || !(clip_norm > 0)) fail(ErrorKind::Config, "lr and clip must be > 0");
  if (!(lr_decay > 0)) fail(ErrorKind::Config, "lr_decay must be > 0");
  if (bptt_len == 0 || batch_size == 0 || epochs == 0) fail(ErrorKind::Config, "bptt_len, batch and epochs must be >= 1");
  if (!(init_scale > 0)) fail(ErrorKind::Config, "init_scale must be > 0");
}

// ---- FeatureSet ------------------------------------------------------------

FeatureSet::FeatureSet(std::vector<TopicFeatureKind> kinds) : kinds_(std::move(kinds)) {
  std::sort(kinds_.begin(), kinds_.end());
  if (std::adjacent_find(kinds_.begin(), kinds_.end()) != kinds_.end())
    fail(ErrorKind::Config, "feature listed twice");
  if (std::find(kinds_.begin(), kinds_.end(), TopicFeatureKind::None) != kinds_.end())
    fail(ErrorKind::Config, "'none' cannot be combined with other features");
  if (has_thought() && kinds_.size() > 1)
    fail(ErrorKind::Config, "thought replaces the external topic features; use it alone");
}

FeatureSet FeatureSet::parse(std::string_view text) {
  if (text.empty() || text == "word" || text == "none") return {};
  std::vector<TopicFeatureKind> kinds;
  std::size_t start = 0;
  while (start <= text.size()) {
    const auto comma = text.find(',', start);
    const auto item = text.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start);
    if (item != "word") kinds.push_back(parse_feature_kind(item));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return FeatureSet(std::move(kinds));
}

bool FeatureSet::has_thought() const {
  return std::find(kinds_.begin(), kinds_.end(), TopicFeatureKind::PrevSentThought) != kinds_.end();
}

std::size_t FeatureSet::topic_slots() const { return kinds_.size() - (has_thought() ? 1 : 0); }

std::string FeatureSet::to_string() const {
  if (kinds_.empty()) return "word";
  std::string s;
  for (auto k : kinds_) {
    if (!s.empty()) s += ',';
    s += ctxlstm::to_string(k);
  }
  return s;
}

std::string FeatureSet::label() const {
  std::string s = "Word";
  for (auto k : kinds_) {
    switch (k) {
      case TopicFeatureKind::PrevSentTopic: s += " + PrevSentTopic"; break;
      case TopicFeatureKind::SentSegTopic: s += " + SentSegTopic"; break;
      case TopicFeatureKind::ParaSegTopic: s += " + ParaSegTopic"; break;
      case TopicFeatureKind::SentTopic: s += " + SentTopic"; break;
      case TopicFeatureKind::PrevSentThought: s += " + PrevSentThought"; break;
      case TopicFeatureKind::None: break;
    }
  }
  return s;
}

// ---- streams and batches -----------------------------------------------------

FeatureStream make_stream(const CorpusDocument& doc, const FeatureSet& features, const TopicModel* topics) {
  if (features.has_thought()) fail(ErrorKind::Config, "thought vectors are only produced by the topic task");
  if (!features.empty() && !topics) fail(ErrorKind::Config, "topic features need a topic model");
  FeatureStream s;
  s.words.reserve(doc.word_count());
  for (const auto& p : doc.paragraphs)
    for (const auto& sent : p) s.words.insert(s.words.end(), sent.begin(), sent.end());
  for (auto kind : features.kinds()) {
    std::vector<int> ids;
    ids.reserve(s.words.size());
    for (const auto& p : topic_features(doc, kind, *topics))
      for (const auto& seq : p) ids.insert(ids.end(), seq.begin(), seq.end());
    s.topics.push_back(std::move(ids));
  }
  return s;
}

nn::ModelDims word_model_dims(std::size_t vocab_size, const FeatureSet& features, const TopicModel* topics,
                              const TrainConfig& config) {
  nn::ModelDims d;
  d.vocab = vocab_size;
  d.embed = config.embed;
  d.hidden = config.hidden;
  d.output = vocab_size;
  d.topic_slots = features.topic_slots();
  if (d.topic_slots > 0) {
    if (!topics) fail(ErrorKind::Config, "topic features need a topic model");
    if (topics->vocab_size() != vocab_size) fail(ErrorKind::HashMismatch, "topic model built on a different vocabulary");
    d.num_topics = topics->num_topics();
    d.topic_embed = config.topic_embed;
  }
  d.peepholes = config.peepholes;
  d.shared_topic_projection = config.shared_topic_projection;
  return d;
}

nn::SequenceBatch<double> stream_batch(std::span<const FeatureStream* const> streams, std::size_t begin,
                                       std::size_t length) {
  const auto B = static_cast<Eigen::Index>(streams.size());
  const std::size_t slots = streams.empty() ? 0 : streams[0]->topics.size();
  auto batch = nn::SequenceBatch<double>::empty(static_cast<Eigen::Index>(length), B, slots);
  for (Eigen::Index b = 0; b < B; ++b) {
    const auto& s = *streams[static_cast<std::size_t>(b)];
    for (std::size_t t = 0; t < length; ++t) {
      const std::size_t pos = begin + t;
      if (pos + 1 >= s.words.size()) break;
      const auto ti = static_cast<Eigen::Index>(t);
      batch.words(ti, b) = s.words[pos];
      for (std::size_t k = 0; k < slots; ++k) batch.topics[k](ti, b) = s.topics[k][pos];
      batch.targets(ti, b) = s.words[pos + 1];
      batch.weights(ti, b) = 1.0;
    }
  }
  return batch;
}

namespace {

std::size_t predictions_of(const FeatureStream& s) { return s.words.empty() ? 0 : s.words.size() - 1; }

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

double apply_sgd(Model& model, nn::Gradients<double>& grads, double total_weight, Eigen::Index columns, double lr,
                 const TrainConfig& config) {
  if (config.sequence_sum && columns > 0) {
    const double scale = total_weight / static_cast<double>(columns);
    nn::visit_tensors([&](const std::string&, auto& g) { g *= scale; }, grads);
  }
  return nn::sgd_step(model, grads, {lr, config.clip_norm});
}

PerplexityResult eval_perplexity(const Model& model, std::span<const CorpusDocument> docs,
                                 const FeatureSet& features, const TopicModel* topics, std::size_t batch_size) {
  if (batch_size == 0) fail(ErrorKind::Config, "batch size must be >= 1");
  if (features.topic_slots() != model.dims.topic_slots) fail(ErrorKind::Config, "feature set does not match the model");
  std::vector<FeatureStream> streams;
  streams.reserve(docs.size());
  for (const auto& d : docs) streams.push_back(make_stream(d, features, topics));

  double nll = 0;
  std::size_t count = 0;
  const auto H = static_cast<Eigen::Index>(model.dims.hidden);
  for (std::size_t first = 0; first < streams.size(); first += batch_size) {
    const std::size_t last = std::min(streams.size(), first + batch_size);
    std::vector<const FeatureStream*> chunk;
    std::size_t longest = 0;
    for (std::size_t i = first; i < last; ++i) {
      chunk.push_back(&streams[i]);
      longest = std::max(longest, predictions_of(streams[i]));
    }
    if (longest == 0) continue;
    const auto batch = stream_batch(chunk, 0, longest);
    const auto fwd = nn::forward_sequence(model, batch, nn::CellState<double>::zero(H, batch.batch()));
    const auto loss = nn::cross_entropy(fwd.logits, batch.targets, batch.weights);
    nll += loss.total_nll;
    count += static_cast<std::size_t>(loss.total_weight);
  }
  PerplexityResult r;
  r.predictions = count;
  r.mean_nll = count ? nll / static_cast<double>(count) : 0.0;
  r.perplexity = std::exp(r.mean_nll);
  if (!std::isfinite(r.perplexity)) fail(ErrorKind::Numerical, "non-finite perplexity");
  return r;
}

void write_epoch_log(std::ostream& out, const EpochLog& log) {
  out << log.epoch << '\t' << log.split << '\t' << log.mean_nll << '\t' << log.perplexity << '\t' << log.seconds
      << '\n';
}

TrainResult run_training(Model model, const TrainConfig& config, const EpochFn& train_epoch,
                         const ValidateFn& validate, const EpochCallback& on_epoch) {
  TrainResult result;
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto [train_nll, norm] = train_epoch(model, epoch, epoch_learning_rate(config, epoch));
    if (!std::isfinite(train_nll)) fail(ErrorKind::Numerical, "training loss became non-finite");
    result.train_loss.push_back(train_nll);
    result.grad_norm.push_back(norm);
    EpochLog train_log{epoch + 1, "train", train_nll, std::exp(train_nll), seconds_since(t0)};
    result.log.push_back(train_log);
    if (on_epoch) on_epoch(train_log);

    const auto valid = validate(model);
    EpochLog valid_log{epoch + 1, "validation", valid.mean_nll, valid.perplexity, seconds_since(t0)};
    result.log.push_back(valid_log);
    if (on_epoch) on_epoch(valid_log);
    if (valid.perplexity < best) {
      best = valid.perplexity;
      result.model = model;
      result.best_epoch = epoch + 1;
    }
  }
  return result;
}

TrainResult train_word_model(const CorpusSplit& corpus, std::size_t vocab_size, const FeatureSet& features,
                             const TopicModel* topics, const TrainConfig& config, const EpochCallback& on_epoch) {
  config.validate();
  if (corpus.train.empty()) fail(ErrorKind::Config, "empty training split");
  const auto dims = word_model_dims(vocab_size, features, topics, config);
  nn::InitOptions init;
  init.scale = config.init_scale;

  std::vector<FeatureStream> streams;
  streams.reserve(corpus.train.size());
  for (const auto& d : corpus.train) streams.push_back(make_stream(d, features, topics));
  std::vector<std::size_t> order(streams.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  const auto H = static_cast<Eigen::Index>(dims.hidden);

  auto train_epoch = [&](Model& model, std::size_t epoch, double lr) {
    Rng rng(derive_seed(config.seed, "word-epoch-" + std::to_string(epoch)));
    rng.shuffle(order.begin(), order.end());
    double nll = 0, weight = 0, norms = 0;
    std::size_t updates = 0;
    for (std::size_t first = 0; first < order.size(); first += config.batch_size) {
      const std::size_t last = std::min(order.size(), first + config.batch_size);
      std::vector<const FeatureStream*> chunk;
      std::size_t longest = 0;
      for (std::size_t i = first; i < last; ++i) {
        chunk.push_back(&streams[order[i]]);
        longest = std::max(longest, predictions_of(streams[order[i]]));
      }
      auto state = nn::CellState<double>::zero(H, static_cast<Eigen::Index>(chunk.size()));
      for (std::size_t begin = 0; begin < longest; begin += config.bptt_len) {
        const auto batch = stream_batch(chunk, begin, std::min(config.bptt_len, longest - begin));
        auto ev = nn::loss_and_gradient(model, batch, state);
        nll += ev.loss.total_nll;
        weight += ev.loss.total_weight;
        if (ev.loss.total_weight > 0) {
          norms += apply_sgd(model, ev.backward.grads, ev.loss.total_weight, batch.batch(), lr, config);
          ++updates;
        }
        state = std::move(ev.final_state);
      }
    }
    return std::pair{weight > 0 ? nll / weight : 0.0, updates ? norms / static_cast<double>(updates) : 0.0};
  };
  const auto& held_out = corpus.validation.empty() ? corpus.train : corpus.validation;
  auto validate = [&](const Model& model) { return eval_perplexity(model, held_out, features, topics); };
  return run_training(nn::init_model<double>(dims, config.seed, init), config, train_epoch, validate, on_epoch);
}

}  // namespace ctxlstm
