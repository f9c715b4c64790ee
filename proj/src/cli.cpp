#include "ctxlstm/cli.hpp"

#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <memory>
#include <optional>
#include <ostream>
#include <sstream>
#include <vector>

#include "CLI11.hpp"
#include "ctxlstm/checkpoint.hpp"
#include "ctxlstm/config.hpp"
#include "ctxlstm/corpus.hpp"
#include "ctxlstm/nn/gradcheck.hpp"
#include "ctxlstm/report.hpp"
#include "ctxlstm/scoring.hpp"
#include "ctxlstm/synth.hpp"
#include "ctxlstm/tasks.hpp"
#include "ctxlstm/topic.hpp"
#include "ctxlstm/topic_task.hpp"

namespace fs = std::filesystem;

namespace ctxlstm::cli {

int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Config:
    case ErrorKind::Dimension: return kExitConfig;
    case ErrorKind::HashMismatch: return kExitHashMismatch;
    case ErrorKind::Numerical: return kExitNumerical;
    default: return kExitError;
  }
}

namespace {

// ---- files ---------------------------------------------------------------------

std::ofstream open_out(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::Io, "cannot write " + path.string());
  return out;
}

std::ifstream open_in(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::Io, "cannot read " + path.string());
  return in;
}

std::string slurp(const fs::path& path) {
  auto in = open_in(path);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void write_text(const fs::path& path, const std::string& text) {
  auto out = open_out(path);
  out << text;
  if (!out) fail(ErrorKind::Io, "failed writing " + path.string());
}

// ---- prepared corpus -------------------------------------------------------------

constexpr const char* kSplitNames[] = {"train", "validation", "test"};

struct Prepared {
  Vocabulary vocab;
  std::uint64_t vocab_hash = 0;
  CorpusSplit split;
  std::uint64_t train_hash = 0;
};

Prepared load_prepared(const fs::path& dir) {
  Prepared p;
  {
    auto in = open_in(dir / "vocab.txt");
    p.vocab = Vocabulary::read(in);
  }
  p.vocab_hash = p.vocab.content_hash();
  std::vector<CorpusDocument>* parts[] = {&p.split.train, &p.split.validation, &p.split.test};
  for (int i = 0; i < 3; ++i) {
    const auto path = dir / (std::string(kSplitNames[i]) + ".enc");
    auto in = open_in(path);
    EncodedCorpusHeader h;
    *parts[i] = read_encoded_corpus(in, &h);
    if (h.vocab_hash != p.vocab_hash)
      fail(ErrorKind::HashMismatch, path.string() + " was encoded with vocabulary " + hex64(h.vocab_hash) +
                                        ", vocab.txt is " + hex64(p.vocab_hash));
    if (i == 0) p.train_hash = h.content_hash;
  }
  return p;
}

struct LoadedTopics {
  TopicModel model;
  std::uint64_t hash = 0;  // over the file bytes
};

LoadedTopics load_topics(const fs::path& path, std::uint64_t vocab_hash) {
  const auto bytes = slurp(path);
  std::istringstream in(bytes);
  std::uint64_t stored = 0;
  LoadedTopics t{TopicModel::read(in, &stored), fnv1a(bytes)};
  if (stored != vocab_hash)
    fail(ErrorKind::HashMismatch, path.string() + " was fitted on vocabulary " + hex64(stored) + ", corpus has " +
                                      hex64(vocab_hash));
  return t;
}

bool needs_topics(const FeatureSet& f) { return f.topic_slots() > 0; }

// ---- options and manifests ----------------------------------------------------------

struct TrainFlags {
  TrainConfig config;
  bool no_peepholes = false;

  void bind(CLI::App* app) {
    app->add_option("--hidden", config.hidden, "LSTM hidden size");
    app->add_option("--embed", config.embed, "word embedding size");
    app->add_option("--topic-embed", config.topic_embed, "topic embedding size");
    app->add_option("--epochs", config.epochs);
    app->add_option("--lr", config.learning_rate, "initial learning rate");
    app->add_option("--lr-decay", config.lr_decay, "per-epoch learning rate factor");
    app->add_option("--clip", config.clip_norm, "global gradient norm clip");
    app->add_option("--batch", config.batch_size);
    app->add_option("--bptt", config.bptt_len, "truncated BPTT window");
    app->add_option("--init-scale", config.init_scale);
    app->add_flag("--no-peepholes", no_peepholes);
    app->add_flag("--shared-topic-projection", config.shared_topic_projection);
  }
  TrainConfig resolve(std::uint64_t seed) const {
    auto c = config;
    c.peepholes = !no_peepholes;
    c.seed = seed;
    c.validate();
    return c;
  }
};

// Every option of the subcommand with its effective value.
FlatConfig effective_config(const CLI::App& app) {
  FlatConfig m;
  m.set("command", app.get_name());
  for (const auto* o : app.get_options()) {
    const auto name = o->get_single_name();
    if (name.empty() || name == "help" || name == "help-all" || name == "config") continue;
    std::string value;
    if (o->get_expected_min() == 0)
      value = o->count() > 0 && o->as<bool>() ? "true" : "false";
    else
      value = o->count() > 0 ? o->as<std::string>() : o->get_default_str();
    m.set(name, value);
  }
  return m;
}

void write_manifest(const fs::path& path, const FlatConfig& m) { write_text(path, m.to_string()); }

fs::path with_suffix(const fs::path& base, const std::string& suffix) { return fs::path(base.string() + suffix); }

void emit_reports(std::ostream& out, const fs::path& prefix, const std::vector<TaskReport>& reports) {
  std::ostringstream table, records;
  write_report_table(table, reports);
  write_report_records(records, reports);
  out << table.str();
  write_text(with_suffix(prefix, ".tsv"), table.str());
  write_text(with_suffix(prefix, ".jsonl"), records.str());
}

// ---- commands -------------------------------------------------------------------------

struct Context {
  std::ostream& out;
  std::ostream& err;
};

void cmd_synth(const CLI::App& app, const SynthCorpusSpec& spec, const fs::path& out_dir, Context& ctx) {
  const auto corpus = generate_synth_corpus(spec);
  std::ostringstream docs, truth;
  write_structured_corpus(docs, corpus.documents);
  write_topic_sidecar(truth, corpus.topics);
  write_text(out_dir / "corpus.jsonl", docs.str());
  write_text(out_dir / "truth.topics", truth.str());
  auto m = effective_config(app);
  m.set("output_hash", hex64(fnv1a(docs.str())));
  write_manifest(out_dir / "synth.manifest", m);
  ctx.out << "wrote " << corpus.documents.size() << " documents to " << (out_dir / "corpus.jsonl").string() << '\n';
}

void cmd_prepare(const CLI::App& app, const fs::path& corpus_path, const fs::path& out_dir, std::size_t threshold,
                 std::uint64_t seed, Context& ctx) {
  const auto raw = read_raw_corpus(corpus_path);
  if (raw.empty()) fail(ErrorKind::Config, "empty corpus: " + corpus_path.string());
  std::ostringstream canonical;
  write_structured_corpus(canonical, raw);
  const auto split = split_corpus(std::span<const TokenizedDocument>(raw), {}, seed);
  const auto vocab = build_vocab(split.train, threshold);
  const auto vocab_hash = vocab.content_hash();

  fs::create_directories(out_dir);
  {
    auto out = open_out(out_dir / "vocab.txt");
    vocab.write(out);
  }
  const std::vector<TokenizedDocument>* parts[] = {&split.train, &split.validation, &split.test};
  std::ostringstream stats;
  stats << "split\tdocuments\tparagraphs\tsentences\twords\toov\toov_rate\n";
  auto m = effective_config(app);
  m.set("input_hash", hex64(fnv1a(canonical.str())));
  m.set(kVocabHashKey, hex64(vocab_hash));
  m.set("vocab_size", std::uint64_t{vocab.size()});
  for (int i = 0; i < 3; ++i) {
    const auto enc = encode(*parts[i], vocab);
    std::ostringstream body;
    write_encoded_corpus(body, enc, vocab_hash);
    write_text(out_dir / (std::string(kSplitNames[i]) + ".enc"), body.str());
    std::size_t paragraphs = 0, sentences = 0, words = 0;
    for (const auto& d : enc) {
      paragraphs += d.paragraphs.size();
      sentences += d.sentence_count();
      words += d.word_count();
    }
    const auto oov = count_oov(enc, vocab);
    stats << kSplitNames[i] << '\t' << enc.size() << '\t' << paragraphs << '\t' << sentences << '\t' << words << '\t'
          << oov.oov << '\t' << format_metric(oov.rate()) << '\n';
    m.set(std::string(kSplitNames[i]) + "_hash", hex64(corpus_hash(enc)));
  }
  write_text(out_dir / "stats.tsv", stats.str());
  write_manifest(out_dir / "prepare.manifest", m);
  ctx.out << stats.str();
}

void cmd_fit_topics(const CLI::App& app, const fs::path& dir, const fs::path& out_path, const FitOptions& opt,
                    Context& ctx) {
  const auto p = load_prepared(dir);
  const auto fit = fit_topics(p.split.train, p.vocab.size(), opt);
  std::ostringstream bytes;
  fit.model.write(bytes, p.vocab_hash);
  write_text(out_path, bytes.str());
  auto m = effective_config(app);
  m.set(kVocabHashKey, hex64(p.vocab_hash));
  m.set(kCorpusHashKey, hex64(p.train_hash));
  m.set(kTopicHashKey, hex64(fnv1a(bytes.str())));
  m.set("iterations", std::uint64_t{fit.iterations});
  m.set("objective", fit.objective.empty() ? 0.0 : fit.objective.back());
  write_manifest(with_suffix(out_path, ".manifest"), m);
  ctx.out << "fitted " << opt.num_topics << " topics in " << fit.iterations << " iterations\n";
}

// Topic model for a feature set, or null when no topic slot is used.
std::optional<LoadedTopics> topics_for(const FeatureSet& f, const fs::path& path, std::uint64_t vocab_hash) {
  if (!needs_topics(f)) return std::nullopt;
  return load_topics(path, vocab_hash);
}

FlatConfig artifact_manifest(const CLI::App& app, const Prepared& p, const std::optional<LoadedTopics>& topics,
                             const fs::path& topic_path) {
  auto m = effective_config(app);
  m.set(kVocabHashKey, hex64(p.vocab_hash));
  m.set(kCorpusHashKey, hex64(p.train_hash));
  if (topics) {
    m.set(kTopicHashKey, hex64(topics->hash));
    m.set("topic-model", topic_path.string());
  }
  return m;
}

EpochCallback epoch_logger(std::ostream& log, std::ostream& err) {
  return [&log, &err](const EpochLog& e) {
    write_epoch_log(log, e);
    err << "epoch " << e.epoch << ' ' << e.split << " ppl " << format_metric(e.perplexity) << '\n';
  };
}

void cmd_train(const CLI::App& app, const fs::path& dir, const FeatureSet& features, const fs::path& topic_path,
               const TrainConfig& config, const fs::path& out_path, Context& ctx) {
  const auto p = load_prepared(dir);
  const auto topics = topics_for(features, topic_path, p.vocab_hash);
  auto log = open_out(with_suffix(out_path, ".log"));
  const auto result = train_word_model(p.split, p.vocab.size(), features, topics ? &topics->model : nullptr, config,
                                       epoch_logger(log, ctx.err));
  auto m = artifact_manifest(app, p, topics, topic_path);
  m.set("task", "word");
  m.set(kFeaturesKey, features.to_string());
  m.set("best_epoch", std::uint64_t{result.best_epoch});
  save_checkpoint(out_path.string(), result.model, m);
  write_manifest(with_suffix(out_path, ".manifest"), m);
  ctx.out << "best validation epoch " << result.best_epoch << ", checkpoint " << out_path.string() << '\n';
}

std::span<const CorpusDocument> split_docs(const Prepared& p, const std::string& name) {
  if (name == "train") return p.split.train;
  if (name == "validation") return p.split.validation;
  if (name == "test") return p.split.test;
  fail(ErrorKind::Config, "unknown split '" + name + "' (train, validation, test)");
}

void cmd_eval(const CLI::App& app, const fs::path& dir, const fs::path& model_path, const fs::path& topic_path,
              const std::string& split, const fs::path& prefix, Context& ctx) {
  const auto p = load_prepared(dir);
  const auto docs = split_docs(p, split);
  auto ck = load_checkpoint(model_path.string(), {p.vocab_hash, std::nullopt, std::nullopt});
  if (ck.manifest.get_or("task", "word") != "word")
    fail(ErrorKind::Config, model_path.string() + " is not a word-prediction checkpoint");
  const auto features = FeatureSet::parse(ck.manifest.get_or(kFeaturesKey, "word"));
  const auto topics = topics_for(features, topic_path, p.vocab_hash);
  if (topics) check_hash(ck.manifest, kTopicHashKey, topics->hash);
  const auto r = eval_perplexity(ck.model, docs, features, topics ? &topics->model : nullptr);
  std::vector<TaskReport> reports{{"word", features.label(), ck.model.dims.hidden, "perplexity", r.perplexity, 0.0}};
  auto m = effective_config(app);
  m.set("out", prefix.string());
  if (topics) m.set("topic-model", topic_path.string());
  m.set(kVocabHashKey, hex64(p.vocab_hash));
  m.set("model_hash", hex64(fnv1a(slurp(model_path))));
  write_manifest(with_suffix(prefix, ".manifest"), m);
  emit_reports(ctx.out, prefix, reports);
}

struct ScoreFlags {
  std::size_t k = 10;
  std::size_t blocks = 20;
  bool hard_negatives = false;
  bool plain_lm = false;
  std::string model;
};

void cmd_score(const CLI::App& app, const fs::path& dir, const FeatureSet& features, const fs::path& topic_path,
               const TrainConfig& config, const ScoreFlags& sf, const fs::path& prefix, Context& ctx) {
  const auto p = load_prepared(dir);
  std::optional<LoadedTopics> topics;
  if (needs_topics(features) || sf.hard_negatives) topics = load_topics(topic_path, p.vocab_hash);
  const TopicModel* tm = needs_topics(features) ? &topics->model : nullptr;

  Model model;
  auto m = artifact_manifest(app, p, topics, topic_path);
  m.set("task", "score");
  m.set(kFeaturesKey, features.to_string());
  if (sf.model.empty()) {
    auto log = open_out(with_suffix(prefix, ".log"));
    ScoringTrainOptions opt;
    opt.plain_lm = sf.plain_lm;
    auto trained = train_scoring_model(p.split, p.vocab.size(), features, tm, config, opt, epoch_logger(log, ctx.err));
    model = std::move(trained.model);
    save_checkpoint(with_suffix(prefix, ".ckpt").string(), model, m);
  } else {
    auto ck = load_checkpoint(sf.model, {p.vocab_hash, std::nullopt, std::nullopt});
    if (FeatureSet::parse(ck.manifest.get_or(kFeaturesKey, "word")) != features)
      fail(ErrorKind::Config, sf.model + " was trained with features '" + ck.manifest.get_or(kFeaturesKey, "word") +
                                  "', not '" + features.to_string() + "'");
    if (tm) check_hash(ck.manifest, kTopicHashKey, topics->hash);
    model = std::move(ck.model);
  }

  const auto block_seed = derive_seed(config.seed, "blocks");
  const auto blocks = sf.hard_negatives
                          ? build_hard_negative_blocks(p.split.test, topics->model, sf.k, sf.blocks, block_seed)
                          : sample_blocks(p.split.test, sf.k, sf.blocks, block_seed);
  const auto instances = make_instances(p.split.test, blocks);
  const auto acc = next_sentence_accuracy(
      instances, [&](const ScoringInstance& inst) { return score_next_sentence(model, inst, features, tm); });
  const auto rnd = random_accuracy(instances, derive_seed(config.seed, "random-scorer"));
  const std::string task = sf.hard_negatives ? "score-hard" : "score";
  std::vector<TaskReport> reports{
      {task, features.label(), model.dims.hidden, "accuracy", acc.mean, acc.stddev},
      {task, "Random", model.dims.hidden, "accuracy", rnd.mean, rnd.stddev},
  };
  write_manifest(with_suffix(prefix, ".manifest"), m);
  emit_reports(ctx.out, prefix, reports);
}

struct TopicFlags {
  std::string inputs = "w+st";
  std::string target = "next";
  bool bow = false;
  ThoughtOptions thought;
};

void cmd_topic_task(const CLI::App& app, const fs::path& dir, const fs::path& topic_path, const TrainConfig& config,
                    const TopicFlags& tf, const fs::path& prefix, Context& ctx) {
  const auto inputs = parse_topic_inputs(tf.inputs);
  if (tf.target != "next" && tf.target != "same")
    fail(ErrorKind::Config, "unknown topic target '" + tf.target + "' (next, same)");
  const auto target = tf.target == "next" ? TopicTarget::NextSentence : TopicTarget::SameSentence;
  const auto p = load_prepared(dir);
  const auto topics = load_topics(topic_path, p.vocab_hash);
  const auto train_labels = assign_labels(p.split.train, topics.model);
  const auto valid_labels = assign_labels(p.split.validation, topics.model);
  const auto test_labels = assign_labels(p.split.test, topics.model);
  const auto K = topics.model.num_topics();
  const TopicTaskData train{p.split.train, train_labels, K};
  const TopicTaskData valid{p.split.validation, valid_labels, K};
  const TopicTaskData test{p.split.test, test_labels, K};

  auto log = open_out(with_suffix(prefix, ".log"));
  const auto result = train_topic_model_task(train, valid, p.vocab.size(), inputs, target, config, tf.thought,
                                             epoch_logger(log, ctx.err));
  auto m = artifact_manifest(app, p, topics, topic_path);
  m.set("task", "topic");
  m.set("best_epoch", std::uint64_t{result.best_epoch});
  save_topic_task_model(with_suffix(prefix, ".ckpt").string(), result.model, m);

  std::vector<TaskReport> reports{{"topic", std::string(label(inputs)), config.hidden, "perplexity",
                                   eval_topic_model(result.model, test).perplexity, 0.0}};
  if (tf.bow) {
    if (target != TopicTarget::SameSentence)
      fail(ErrorKind::Config, "the BOW-DNN baseline predicts the topic of the same sentence; use --target same");
    const auto bow = bow_dnn_topic_baseline(train, valid, p.vocab.size(), config, epoch_logger(log, ctx.err));
    reports.push_back({"topic", "BOW-DNN", config.hidden, "perplexity",
                       eval_bow_dnn(bow.model, test, p.vocab.size()).perplexity, 0.0});
  }
  write_manifest(with_suffix(prefix, ".manifest"), m);
  emit_reports(ctx.out, prefix, reports);
}

struct GradFlags {
  nn::ModelDims dims{20, 8, 12, 20, 5, 6, 1, 0, true, false};
  bool no_peepholes = false;
  std::size_t steps = 6;
  std::size_t batch = 2;
  std::string fault;
  double tolerance = 1e-4;
};

int cmd_gradcheck(const CLI::App& app, const GradFlags& gf, std::uint64_t seed, const std::string& out_path,
                  Context& ctx) {
  auto clstm = gf.dims;
  clstm.peepholes = !gf.no_peepholes;
  clstm.output = clstm.vocab;
  auto lstm = clstm;
  lstm.topic_slots = 0;
  lstm.num_topics = 0;
  lstm.topic_embed = 0;
  lstm.context_dim = 0;
  lstm.shared_topic_projection = false;

  std::ostringstream report;
  report << "model\ttensor\tmax_rel_error\tcoords\n";
  bool pass = true;
  for (const auto& [name, dims] : {std::pair{"lstm", lstm}, std::pair{"clstm", clstm}}) {
    nn::GradCheckConfig cfg;
    cfg.dims = dims;
    cfg.steps = static_cast<Eigen::Index>(gf.steps);
    cfg.batch = static_cast<Eigen::Index>(gf.batch);
    cfg.seed = seed;
    cfg.options.seed = seed;
    cfg.planted_fault = gf.fault;
    const auto r = nn::run_grad_check<double>(cfg);
    for (const auto& t : r.tensors) {
      std::ostringstream e;
      e << std::scientific << std::setprecision(3) << t.max_rel_error;
      report << name << '\t' << t.name << '\t' << e.str() << '\t' << t.coords << '\n';
    }
    if (!r.passed(gf.tolerance)) {
      pass = false;
      report << "FAIL " << name << ": " << r.worst()->name << " exceeds " << gf.tolerance << '\n';
    }
  }
  report << (pass ? "PASS" : "FAIL") << '\n';
  ctx.out << report.str();
  if (!out_path.empty()) {
    write_text(out_path, report.str());
    write_manifest(with_suffix(out_path, ".manifest"), effective_config(app));
  }
  return pass ? kExitOk : kExitCheckFailed;
}

// "--config FILE" holds key=value lines; each key is an option of the chosen
// subcommand and is inserted ahead of the explicit flags so those win.
std::vector<std::string> expand_config(const CLI::App& root, std::vector<std::string> args) {
  auto it = std::find(args.begin(), args.end(), "--config");
  if (it == args.end()) return args;
  if (it + 1 == args.end()) fail(ErrorKind::Config, "--config needs a file");
  const fs::path path = *(it + 1);
  args.erase(it, it + 2);
  if (args.empty()) fail(ErrorKind::Config, "--config needs a subcommand");
  const auto* sub = root.get_subcommand_no_throw(args.front());
  if (!sub) fail(ErrorKind::Config, "unknown subcommand '" + args.front() + "'");
  const auto cfg = FlatConfig::parse(slurp(path));
  std::vector<std::string> injected;
  for (const auto& [key, value] : cfg.values()) {
    if (key == "command") {
      if (value != args.front()) fail(ErrorKind::Config, "config is for command '" + value + "'");
      continue;
    }
    const auto* opt = sub->get_option_no_throw("--" + key);
    if (!opt) fail(ErrorKind::Config, "unknown config key '" + key + "' for " + args.front());
    if (value.empty()) continue;  // unset string option
    injected.push_back("--" + key + "=" + value);
  }
  args.insert(args.begin() + 1, injected.begin(), injected.end());
  return args;
}

}  // namespace

int run(std::span<const std::string> raw_args, std::ostream& out, std::ostream& err) {
  Context ctx{out, err};
  CLI::App app("Contextual LSTM experiments", "clstm");
  app.option_defaults()->always_capture_default()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all");

  std::string corpus, out_path, features_text = "word", topic_model, model_path, split = "test";
  std::uint64_t seed = 1;
  TrainFlags train_flags;

  auto add_config = [](CLI::App* sub) {
    sub->add_option("--config", "key=value file of option values");
  };

  auto* synth = app.add_subcommand("synth", "generate a synthetic topic-coherent corpus");
  SynthCorpusSpec spec;
  synth->add_option("--out", out_path, "output directory")->required();
  synth->add_option("--seed", spec.seed);
  synth->add_option("--topics", spec.num_topics);
  synth->add_option("--coherence", spec.coherence);
  synth->add_option("--docs", spec.num_documents);
  synth->add_option("--paragraphs", spec.num_paragraphs, "per document");
  synth->add_option("--sentences", spec.sentences_per_paragraph, "per paragraph");
  synth->add_option("--sentence-length", spec.sentence_length);
  synth->add_option("--vocab-per-topic", spec.vocab_per_topic);
  synth->add_option("--shared-vocab", spec.shared_vocab);
  synth->add_option("--topic-word-prob", spec.topic_word_prob);
  add_config(synth);

  auto* prepare = app.add_subcommand("prepare", "vocabulary, splits and stats from a raw corpus");
  std::size_t threshold = 2;
  prepare->add_option("--corpus", corpus, "raw corpus file or directory")->required();
  prepare->add_option("--out", out_path, "output directory")->required();
  prepare->add_option("--threshold", threshold, "minimum training-split frequency");
  prepare->add_option("--seed", seed);
  add_config(prepare);

  auto* fit = app.add_subcommand("fit-topics", "k-means topic model on the training split");
  FitOptions fit_opt;
  fit->add_option("--corpus", corpus, "prepared corpus directory")->required();
  fit->add_option("--out", out_path, "topic model file (default <corpus>/topics.bin)");
  fit->add_option("--topics", fit_opt.num_topics);
  fit->add_option("--seed", fit_opt.seed);
  fit->add_option("--restarts", fit_opt.restarts);
  add_config(fit);

  auto add_topic_model = [&](CLI::App* sub) {
    sub->add_option("--topic-model", topic_model, "topic model file (default <corpus>/topics.bin)");
  };

  auto* train = app.add_subcommand("train", "train a word-prediction model");
  train->add_option("--corpus", corpus, "prepared corpus directory")->required();
  train->add_option("--features", features_text, "word, or a comma list of prevsent,sentseg,paraseg,sent");
  train->add_option("--out", out_path, "checkpoint file")->required();
  train->add_option("--seed", seed);
  add_topic_model(train);
  train_flags.bind(train);
  add_config(train);

  auto* eval = app.add_subcommand("eval", "test perplexity of a word-prediction checkpoint");
  eval->add_option("--corpus", corpus, "prepared corpus directory")->required();
  eval->add_option("--model", model_path, "checkpoint file")->required();
  eval->add_option("--split", split);
  eval->add_option("--out", out_path, "report prefix (default <model>.<split>)");
  add_topic_model(eval);
  add_config(eval);

  auto* score = app.add_subcommand("score", "next-sentence selection accuracy");
  ScoreFlags score_flags;
  score->add_option("--corpus", corpus, "prepared corpus directory")->required();
  score->add_option("--features", features_text);
  score->add_option("--k", score_flags.k, "candidates per block");
  score->add_option("--blocks", score_flags.blocks);
  score->add_flag("--hard-negatives", score_flags.hard_negatives, "candidates share one topic");
  score->add_flag("--plain-lm", score_flags.plain_lm, "train on every word, not only D's");
  score->add_option("--model", score_flags.model, "reuse a scoring checkpoint instead of training");
  score->add_option("--out", out_path, "report prefix")->required();
  score->add_option("--seed", seed);
  add_topic_model(score);
  train_flags.bind(score);
  add_config(score);

  auto* topic = app.add_subcommand("topic-task", "sentence-topic prediction");
  TopicFlags topic_flags;
  topic->add_option("--corpus", corpus, "prepared corpus directory")->required();
  topic->add_option("--inputs", topic_flags.inputs, "w, st, w+st or w+pst");
  topic->add_option("--target", topic_flags.target, "next (topic of the next sentence) or same");
  topic->add_flag("--bow", topic_flags.bow, "also train the BOW-DNN baseline (needs --target same)");
  topic->add_option("--thought-dim", topic_flags.thought.dim);
  topic->add_option("--thought-quantum", topic_flags.thought.quantum);
  topic->add_option("--out", out_path, "report prefix")->required();
  topic->add_option("--seed", seed);
  add_topic_model(topic);
  train_flags.bind(topic);
  add_config(topic);

  auto* grad = app.add_subcommand("gradcheck", "analytic vs finite-difference gradients");
  GradFlags grad_flags;
  grad->add_option("--vocab", grad_flags.dims.vocab);
  grad->add_option("--embed", grad_flags.dims.embed);
  grad->add_option("--hidden", grad_flags.dims.hidden);
  grad->add_option("--topics", grad_flags.dims.num_topics);
  grad->add_option("--topic-embed", grad_flags.dims.topic_embed);
  grad->add_option("--slots", grad_flags.dims.topic_slots);
  grad->add_option("--context-dim", grad_flags.dims.context_dim);
  grad->add_flag("--shared-topic-projection", grad_flags.dims.shared_topic_projection);
  grad->add_flag("--no-peepholes", grad_flags.no_peepholes);
  grad->add_option("--steps", grad_flags.steps);
  grad->add_option("--batch", grad_flags.batch);
  grad->add_option("--plant-fault", grad_flags.fault, "tensor whose analytic gradient is corrupted");
  grad->add_option("--tolerance", grad_flags.tolerance);
  grad->add_option("--seed", seed);
  grad->add_option("--out", out_path, "report file");
  add_config(grad);

  try {
    auto args = expand_config(app, std::vector<std::string>(raw_args.begin(), raw_args.end()));
    std::reverse(args.begin(), args.end());  // CLI11 consumes a reversed vector
    try {
      app.parse(args);
    } catch (const CLI::CallForHelp&) {
      out << app.help();
      return kExitOk;
    } catch (const CLI::CallForAllHelp&) {
      out << app.help("", CLI::AppFormatMode::All);
      return kExitOk;
    } catch (const CLI::ParseError& e) {
      err << "error: " << e.what() << '\n';
      return kExitConfig;
    }

    const fs::path dir = corpus;
    const fs::path topics_path = topic_model.empty() ? dir / "topics.bin" : fs::path(topic_model);
    if (synth->parsed()) {
      spec.validate();
      cmd_synth(*synth, spec, out_path, ctx);
    } else if (prepare->parsed()) {
      if (threshold == 0) fail(ErrorKind::Config, "threshold must be >= 1");
      cmd_prepare(*prepare, corpus, out_path, threshold, seed, ctx);
    } else if (fit->parsed()) {
      cmd_fit_topics(*fit, dir, out_path.empty() ? dir / "topics.bin" : fs::path(out_path), fit_opt, ctx);
    } else if (train->parsed()) {
      cmd_train(*train, dir, FeatureSet::parse(features_text), topics_path, train_flags.resolve(seed), out_path, ctx);
    } else if (eval->parsed()) {
      const fs::path prefix = out_path.empty() ? fs::path(model_path + "." + split) : fs::path(out_path);
      cmd_eval(*eval, dir, model_path, topics_path, split, prefix, ctx);
    } else if (score->parsed()) {
      cmd_score(*score, dir, FeatureSet::parse(features_text), topics_path, train_flags.resolve(seed), score_flags,
                out_path, ctx);
    } else if (topic->parsed()) {
      cmd_topic_task(*topic, dir, topics_path, train_flags.resolve(seed), topic_flags, out_path, ctx);
    } else if (grad->parsed()) {
      return cmd_gradcheck(*grad, grad_flags, seed, out_path, ctx);
    }
    return kExitOk;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitError;
  }
}

}  // namespace ctxlstm::cli
