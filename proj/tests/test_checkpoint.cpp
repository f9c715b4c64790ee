#include <fstream>
#include <sstream>

#include "ctxlstm/checkpoint.hpp"
#include "ctxlstm/config.hpp"
#include "ctxlstm/report.hpp"
#include "ctxlstm/topic_task.hpp"
#include "doctest.h"
#include "helpers.hpp"

using namespace ctxlstm;

namespace {

nn::ModelDims clstm_dims() {
  nn::ModelDims d;
  d.vocab = 11;
  d.embed = 4;
  d.hidden = 5;
  d.output = 11;
  d.num_topics = 3;
  d.topic_embed = 2;
  d.topic_slots = 2;
  return d;
}

std::string saved_bytes(const Model& m, const FlatConfig& manifest, const NamedTensors& extras = {}) {
  std::ostringstream out;
  save_checkpoint(out, m, manifest, extras);
  return out.str();
}

ErrorKind load_error(const std::string& bytes, const ExpectedHashes& expect = {}) {
  std::istringstream in(bytes);
  try {
    load_checkpoint(in, expect);
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("load succeeded");
  return ErrorKind::Config;
}

}  // namespace

TEST_CASE("checkpoint round trip is exact at float precision and re-saves identically") {
  auto d = clstm_dims();
  d.shared_topic_projection = true;
  const auto m = nn::init_model<double>(d, 3);
  FlatConfig manifest;
  manifest.set(kVocabHashKey, hex64(0x1234));
  manifest.set("features", "sentseg,paraseg");
  const auto bytes = saved_bytes(m, manifest);

  std::istringstream in(bytes);
  const auto ck = load_checkpoint(in);
  CHECK(ck.model.dims == d);
  CHECK(ck.manifest.get("features") == "sentseg,paraseg");
  const auto rounded = nn::cast_model<double>(nn::cast_model<float>(m));
  nn::visit_tensors([](const std::string& name, const auto& a, const auto& b) {
    CAPTURE(name);
    CHECK(a == b);
  }, ck.model, rounded);
  CHECK(saved_bytes(ck.model, ck.manifest) == bytes);
}

TEST_CASE("checkpoint file errors map to distinct kinds") {
  const auto m = nn::init_model<double>(clstm_dims(), 1);
  FlatConfig manifest;
  manifest.set(kVocabHashKey, hex64(0xabc));
  const auto bytes = saved_bytes(m, manifest);

  for (std::size_t cut : {std::size_t{3}, std::size_t{20}, bytes.size() / 2, bytes.size() - 1}) {
    CAPTURE(cut);
    CHECK(load_error(bytes.substr(0, cut)) == ErrorKind::Format);
  }
  auto magic = bytes;
  magic[0] = 'X';
  CHECK(load_error(magic) == ErrorKind::BadMagic);
  auto version = bytes;
  version[6] = 2;
  CHECK(load_error(version) == ErrorKind::BadVersion);
  auto flipped = bytes;
  flipped[bytes.size() - 20] ^= 0x01;
  CHECK(load_error(flipped) == ErrorKind::Format);

  ExpectedHashes expect;
  expect.vocab = 0xabd;
  CHECK(load_error(bytes, expect) == ErrorKind::HashMismatch);
  expect.vocab = 0xabc;
  std::istringstream ok(bytes);
  CHECK_NOTHROW(load_checkpoint(ok, expect));
}

TEST_CASE("extras survive the round trip and non-finite weights are refused") {
  const auto m = nn::init_model<double>(clstm_dims(), 2);
  NamedTensors extras;
  extras["thought.proj"] = Eigen::MatrixXd::Constant(3, 5, 0.25);
  std::istringstream in(saved_bytes(m, {}, extras));
  const auto ck = load_checkpoint(in);
  REQUIRE(ck.extras.count("thought.proj") == 1);
  CHECK(ck.extras.at("thought.proj") == extras["thought.proj"]);

  auto bad = m;
  bad.out.b(0) = std::numeric_limits<double>::infinity();
  std::ostringstream out;
  try {
    save_checkpoint(out, bad, {});
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Numerical);
  }
}

TEST_CASE("topic-task model round trip") {
  testing::TempDir dir("ckpt");
  TopicTaskModel tm;
  tm.inputs = TopicInputs::WordThought;
  tm.target = TopicTarget::SameSentence;
  tm.thought.dim = 3;
  tm.thought.quantum = 0.5;
  nn::ModelDims d;
  d.vocab = 9;
  d.embed = 3;
  d.hidden = 4;
  d.output = 5;
  d.context_dim = 3;
  tm.net = nn::init_model<double>(d, 4);
  tm.thought_proj = Eigen::MatrixXd::Constant(3, 4, 0.125);
  const auto path = (dir / "t.ckpt").string();
  FlatConfig manifest;
  manifest.set(kTopicHashKey, hex64(77));
  save_topic_task_model(path, tm, manifest);
  FlatConfig back_manifest;
  const auto back = load_topic_task_model(path, {}, &back_manifest);
  CHECK(back.inputs == tm.inputs);
  CHECK(back.target == tm.target);
  CHECK(back.thought.dim == 3);
  CHECK(back.thought.quantum == 0.5);
  CHECK(back.thought_proj == tm.thought_proj);
  CHECK(back.net.dims == d);
  CHECK(back_manifest.get(kTopicHashKey) == hex64(77));
  ExpectedHashes expect;
  expect.topics = 78;
  CHECK_THROWS_AS(load_topic_task_model(path, expect), Error);
}

TEST_CASE("FlatConfig parsing and canonical form") {
  const auto c = FlatConfig::parse("# comment\n b = 2.5 \n\na=hello world\nflag=true\nn=7\n");
  CHECK(c.get("a") == "hello world");
  CHECK(c.get_double("b") == 2.5);
  CHECK(c.get_bool("flag"));
  CHECK(c.get_uint("n") == 7);
  CHECK(c.to_string() == "a=hello world\nb=2.5\nflag=true\nn=7\n");
  CHECK(FlatConfig::parse(c.to_string()) == c);
  CHECK_THROWS_AS(FlatConfig::parse("novalue\n"), Error);
  CHECK_THROWS_AS(c.get("missing"), Error);
  CHECK_THROWS_AS(c.get_uint("a"), Error);
  CHECK_NOTHROW(c.reject_unknown({"a", "b", "flag", "n"}));
  try {
    c.reject_unknown({"a", "b", "n"});
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Config);
    CHECK(std::string(e.what()).find("flag") != std::string::npos);
  }
  FlatConfig d;
  d.set("x", 0.1);
  CHECK(std::stod(d.get("x")) == 0.1);
  d.merge_defaults(c);
  CHECK(d.get("a") == "hello world");
}

TEST_CASE("report table layout") {
  std::vector<TaskReport> reports{
      {"word", "Word", 16, "perplexity", 27.5, 0},
      {"word", "Word + SentSegTopic", 16, "perplexity", 27.25, 0},
      {"word", "Word", 32, "perplexity", 27.0, 0},
      {"score", "Word", 32, "accuracy", 0.5, 0.125},
  };
  std::ostringstream out;
  write_report_table(out, reports);
  CHECK(out.str() ==
        "word perplexity\thidden=16\thidden=32\n"
        "Word\t27.500000\t27.000000\n"
        "Word + SentSegTopic\t27.250000\t-\n"
        "\n"
        "score accuracy\thidden=32\n"
        "Word\t0.500000±0.125000\n");

  std::ostringstream again;
  write_report_table(again, reports);
  CHECK(again.str() == out.str());
}

TEST_CASE("report records round trip and validation") {
  std::vector<TaskReport> reports{{"topic", "W + ST", 8, "perplexity", 1.75, 0},
                                  {"score", "Random", 8, "accuracy", 0.1, 0.03125}};
  std::stringstream s;
  write_report_records(s, reports);
  CHECK(read_report_records(s) == reports);

  std::ostringstream sink;
  CHECK_THROWS_AS(write_report_records(sink, {{"word", "Word", 8, "perplexity", 0.5, 0}}), Error);
  CHECK_THROWS_AS(write_report_records(sink, {{"score", "Word", 8, "accuracy", 1.5, 0}}), Error);
  CHECK_THROWS_AS(write_report_table(sink, {{"score", "Word", 8, "accuracy", std::nan(""), 0}}), Error);
}
