#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "../support/gradcheck.hpp"
#include "debias/common/rng.hpp"
#include "debias/tinylm/checkpoint.hpp"
#include "debias/tinylm/model.hpp"

#include <cmath>

using namespace debias;
using namespace debias::tinylm;

namespace {

EncoderConfig small_config(int d = 32) {
  EncoderConfig c;
  c.num_layers = 2;
  c.hidden_dim = d;
  c.num_heads = 4;
  c.ff_dim = 2 * d;
  c.vocab_size = 24;
  c.max_seq_len = 8;
  c.seed = 7;
  return c;
}

ModelGraph full_model(TaskKind task = TaskKind::regression, int d = 32) {
  return ModelGraph::build(small_config(d), {{"gender", 8}, {"race", 8}, {"task", 8}}, true, {true, task});
}

std::vector<int> random_ids(Rng& rng, int n, int vocab) {
  std::vector<int> ids;
  for (int i = 0; i < n; ++i) ids.push_back(static_cast<int>(rng.below(static_cast<std::uint64_t>(vocab))));
  return ids;
}

struct Example {
  std::vector<int> ids;
  std::vector<std::uint8_t> mask;
  std::vector<int> targets;  // MLM positions
  double label = 0;
};

std::vector<Example> examples(std::uint64_t seed) {
  Rng rng(seed);
  std::vector<Example> ex;
  for (int n : {5, 7}) {
    Example e;
    e.ids = random_ids(rng, n, 24);
    e.mask.assign(static_cast<std::size_t>(n), 1);
    e.mask.back() = 0;
    e.targets = {1, n - 2};
    e.label = rng.uniform();
    ex.push_back(e);
  }
  return ex;
}

double mlm_loss(ModelGraph& m, const ForwardPlan& plan, const std::vector<Example>& ex, bool grad) {
  if (grad) m.zero_grad();
  double total = 0;
  int count = 0;
  for (const auto& e : ex) count += static_cast<int>(e.targets.size());
  for (const auto& e : ex) {
    EncodeTrace tr;
    Mat h = m.encode(e.ids, e.mask, plan, grad ? &tr : nullptr);
    Mat rows(static_cast<Eigen::Index>(e.targets.size()), h.cols());
    for (std::size_t i = 0; i < e.targets.size(); ++i) rows.row(static_cast<Eigen::Index>(i)) = h.row(e.targets[i]);
    Mat logits = m.mlm_logits(rows);
    Mat dlogits = Mat::Zero(logits.rows(), logits.cols());
    for (Eigen::Index r = 0; r < logits.rows(); ++r) {
      Eigen::VectorXd p = softmax(logits.row(r).transpose());
      const int gold = e.ids[static_cast<std::size_t>(e.targets[static_cast<std::size_t>(r)])];
      total -= std::log(p(gold));
      dlogits.row(r) = p.transpose() / count;
      dlogits(r, gold) -= 1.0 / count;
    }
    if (grad) {
      Mat drows = m.mlm_backward(rows, dlogits);
      Mat dh = Mat::Zero(h.rows(), h.cols());
      for (std::size_t i = 0; i < e.targets.size(); ++i) dh.row(e.targets[i]) += drows.row(static_cast<Eigen::Index>(i));
      m.backward_encode(tr, dh);
    }
  }
  return total / count;
}

double task_loss(ModelGraph& m, const ForwardPlan& plan, const std::vector<Example>& ex, bool grad) {
  if (grad) m.zero_grad();
  const bool classifier = m.heads().task == TaskKind::classifier;
  double total = 0;
  const double n = static_cast<double>(ex.size());
  for (const auto& e : ex) {
    EncodeTrace tr;
    Mat h = m.encode(e.ids, e.mask, plan, grad ? &tr : nullptr);
    const double z = m.task_logit(h, e.mask);
    double dz;
    if (classifier) {
      const double y = e.label > 0.5 ? 1.0 : 0.0;
      const double p = 1.0 / (1.0 + std::exp(-z));
      total -= y * std::log(p) + (1 - y) * std::log(1 - p);
      dz = (p - y) / n;
    } else {
      const double target = 5.0 * e.label;
      total += (z - target) * (z - target);
      dz = 2.0 * (z - target) / n;
    }
    if (grad) m.backward_encode(tr, m.task_backward(h, e.mask, dz));
  }
  return total / n;
}

std::vector<std::string> group_names(const ModelGraph& m, const std::string& group) {
  std::vector<std::string> out;
  for (const auto& n : m.parameter_names()) {
    if (parameter_group(n) == group) out.push_back(n);
  }
  return out;
}

}  // namespace

TEST_CASE("adapter bottleneck follows the reduction factor") {
  AdapterConfig a{"gender", 16};
  CHECK(a.bottleneck_dim(64) == 4);
  auto m = ModelGraph::build(small_config(64), {a}, false, {true, std::nullopt});
  CHECK(m.params().at("adapter.gender.layer0.down.weight").value.cols() == 4);
  CHECK_THROWS_AS(ModelGraph::build(small_config(16), {{"x", 32}}, false, {}), ConfigError);
}

TEST_CASE("configuration errors") {
  auto bad = small_config();
  bad.num_heads = 5;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  CHECK_THROWS_AS(ModelGraph::build(small_config(), {}, true, {}), ConfigError);
  CHECK_THROWS_AS(ModelGraph::build(small_config(), {{"a", 8}, {"a", 8}}, false, {}), ConfigError);
}

TEST_CASE("equal seeds give bit-identical parameters") {
  auto a = full_model();
  auto b = full_model();
  for (const auto& [name, p] : a.params()) {
    const Mat& q = b.params().at(name).value;
    CHECK(std::memcmp(p.value.data(), q.data(), sizeof(double) * static_cast<std::size_t>(p.value.size())) == 0);
  }
}

TEST_CASE("unattached adapters do not change the plain encoder") {
  auto plain = ModelGraph::build(small_config(), {}, false, {true, std::nullopt});
  auto with = full_model();
  Batch batch{{{2, 5, 6, 7, 3}}, {}};
  ForwardPlan plan;
  auto x = plain.forward(batch, plan).mlm_logits[0];
  auto y = with.forward(batch, plan).mlm_logits[0];
  CHECK((x - y).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("fresh adapters are near-neutral") {
  auto m = full_model();
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    Batch batch{{random_ids(rng, 6, 24)}, {}};
    auto base = m.forward(batch, ForwardPlan{}).mlm_logits[0];
    ForwardPlan with;
    with.stack = {"gender"};
    auto adapted = m.forward(batch, with).mlm_logits[0];
    CHECK((base - adapted).cwiseAbs().maxCoeff() <= 1e-3);
  }
}

TEST_CASE("adapter forward") {
  auto m = ModelGraph::build(small_config(64), {{"gender", 16}}, false, {true, std::nullopt});
  Rng rng(11);
  std::vector<Mat> batch(2, Mat(8, 64));
  for (auto& h : batch) {
    for (Eigen::Index i = 0; i < h.size(); ++i) h.data()[i] = rng.normal();
  }
  AdapterWeights a = m.adapter_weights("gender", 0);

  SUBCASE("shape is preserved") {
    auto out = adapter_forward(batch, a);
    REQUIRE(out.size() == 2);
    CHECK(out[0].rows() == 8);
    CHECK(out[0].cols() == 64);
  }
  SUBCASE("zero up-projection is the identity") {
    a.up.w->value.setZero();
    a.up.b->value.setZero();
    auto out = adapter_forward(batch, a);
    CHECK((out[1] - batch[1]).cwiseAbs().maxCoeff() == 0.0);
  }
  SUBCASE("shape mismatch is rejected") {
    CHECK_THROWS_AS(adapter_forward(Mat::Zero(3, 32), a), std::invalid_argument);
  }
  SUBCASE("down-projection gradient matches finite differences") {
    testing::perturb_parameters(m, 5);
    Mat probe(8, 64);
    for (Eigen::Index i = 0; i < probe.size(); ++i) probe.data()[i] = rng.normal();
    auto loss = [&](bool grad) {
      if (grad) m.zero_grad();
      AdapterCache c;
      Mat y = adapter_forward(batch[0], a, &c);
      if (grad) adapter_backward(c, a, probe);
      return (y.array() * probe.array()).sum();
    };
    auto r = testing::check_gradients(m, {"adapter.gender.layer0.down.weight", "adapter.gender.layer0.ln.gain"},
                                      loss, 64, 9);
    INFO(r.worst);
    CHECK(r.max_rel_error < 1e-4);
  }
}

TEST_CASE("fusion forward") {
  auto m = full_model(TaskKind::regression, 32);
  testing::perturb_parameters(m, 21);
  Rng rng(4);
  auto random_mat = [&](Eigen::Index r, Eigen::Index c) {
    Mat x(r, c);
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = rng.normal();
    return x;
  };
  FusionWeights f = m.fusion_weights(0);
  Mat h = random_mat(6, 32);

  SUBCASE("single adapter reduces to its value path") {
    Mat a = random_mat(6, 32);
    auto out = fusion_forward(h, {a}, f);
    Mat expected = linear(a, f.value.w->value, f.value.b->value);
    CHECK((out.output - expected).cwiseAbs().maxCoeff() < 1e-12);
  }
  SUBCASE("identical inputs with identity values return the shared input") {
    f.value.w->value.setIdentity();
    f.value.b->value.setZero();
    Mat a = random_mat(6, 32);
    auto out = fusion_forward(h, {a, a, a}, f);
    CHECK((out.output - a).cwiseAbs().maxCoeff() < 1e-12);
  }
  SUBCASE("weights form a distribution per token") {
    for (int trial = 0; trial < 50; ++trial) {
      auto out = fusion_forward(random_mat(5, 32), {random_mat(5, 32), random_mat(5, 32), random_mat(5, 32)}, f);
      CHECK(out.weights.minCoeff() >= 0.0);
      for (Eigen::Index r = 0; r < out.weights.rows(); ++r) CHECK(std::abs(out.weights.row(r).sum() - 1.0) < 1e-6);
    }
  }
  SUBCASE("no adapters is an error") { CHECK_THROWS_AS(fusion_forward(h, {}, f), std::invalid_argument); }
}

TEST_CASE("forward contracts") {
  auto m = full_model(TaskKind::classifier);
  Rng rng(8);

  SUBCASE("fully masked rows only see themselves") {
    ForwardPlan plan;
    std::vector<int> a = {2, 5, 6, 7, 3};
    std::vector<int> b = {2, 9, 6, 11, 3};
    std::vector<std::uint8_t> none(5, 0);
    auto la = m.forward({{a}, {none}}, plan).mlm_logits[0];
    auto lb = m.forward({{b}, {none}}, plan).mlm_logits[0];
    CHECK((la.row(2) - lb.row(2)).cwiseAbs().maxCoeff() == 0.0);
    CHECK((la.row(1) - lb.row(1)).cwiseAbs().maxCoeff() > 0.0);
  }
  SUBCASE("batch of one equals the matching row of a larger batch") {
    auto mode = WiringMode::fusion({"gender", "race"}, "task");
    auto ids = random_ids(rng, 6, 24);
    Batch four{{random_ids(rng, 6, 24), ids, random_ids(rng, 6, 24), random_ids(rng, 6, 24)}, {}};
    auto single = m.forward(Batch{{ids}, {}}, mode).scores[0];
    auto many = m.forward(four, mode).scores[1];
    CHECK(std::abs(single - many) < 1e-6);
  }
  SUBCASE("classifier output is a probability") {
    testing::perturb_parameters(m, 99, 0.3);
    auto mode = WiringMode::with_task_adapter("task", "gender");
    for (int i = 0; i < 1000; ++i) {
      double p = m.forward(Batch{{random_ids(rng, 1 + static_cast<int>(rng.below(8)), 24)}, {}}, mode).scores[0];
      REQUIRE(p > 0.0);
      REQUIRE(p < 1.0);
    }
  }
  SUBCASE("out-of-range token ids are rejected") {
    CHECK_THROWS_AS(m.forward(Batch{{{2, 24, 3}}, {}}, ForwardPlan{}), std::out_of_range);
  }
}

TEST_CASE("trainable masks per wiring mode") {
  auto m = full_model();
  auto groups = [&](const WiringMode& mode) {
    std::set<std::string> g;
    for (const auto& n : m.trainable_mask(mode)) g.insert(parameter_group(n));
    return g;
  };
  CHECK(groups(WiringMode::dba_pretrain("gender")) == std::set<std::string>{"adapter.gender", "head.mlm"});
  CHECK(groups(WiringMode::with_task_adapter("task", "gender")) == std::set<std::string>{"adapter.task", "head.task"});
  CHECK(groups(WiringMode::fusion({"gender", "race"}, "task")) ==
        std::set<std::string>{"fusion", "adapter.task", "head.task"});
  CHECK(m.trainable_mask(WiringMode::full_finetune(Objective::task)).size() == m.params().size());
  CHECK_THROWS_AS(m.trainable_mask(WiringMode::dba_pretrain("religion")), ConfigError);
  CHECK_THROWS_AS(m.trainable_mask(WiringMode::fusion({}, "task")), ConfigError);

  auto no_task = ModelGraph::build(small_config(), {{"gender", 8}, {"task", 8}}, false, {true, std::nullopt});
  CHECK_THROWS_AS(no_task.validate(WiringMode::with_task_adapter("task")), ConfigError);
}

TEST_CASE("analytic gradients match finite differences for every group") {
  for (TaskKind kind : {TaskKind::regression, TaskKind::classifier}) {
    auto m = full_model(kind);
    testing::perturb_parameters(m, 31);
    auto ex = examples(17);

    ForwardPlan fused = plan_for(WiringMode::fusion({"gender", "race"}, "task"));
    auto task = [&](bool g) { return task_loss(m, fused, ex, g); };
    for (const char* group : {"encoder", "adapter.gender", "adapter.race", "adapter.task", "fusion", "head.task"}) {
      auto r = testing::check_gradients(m, group_names(m, group), task, 6, 3);
      INFO(group << " " << to_string(kind) << " " << r.worst);
      CHECK(r.max_rel_error < 1e-4);
    }
  }
  auto m = full_model();
  testing::perturb_parameters(m, 41);
  auto ex = examples(19);
  ForwardPlan dba = plan_for(WiringMode::dba_pretrain("gender"));
  auto mlm = [&](bool g) { return mlm_loss(m, dba, ex, g); };
  for (const char* group : {"encoder", "adapter.gender", "head.mlm"}) {
    auto r = testing::check_gradients(m, group_names(m, group), mlm, 6, 5);
    INFO(group << " " << r.worst);
    CHECK(r.max_rel_error < 1e-4);
  }
}

TEST_CASE("checkpoint round trip") {
  auto m = full_model();
  Vocabulary vocab = Vocabulary::build({"the man met a woman"}, 24);
  auto mode = WiringMode::fusion({"gender", "race"}, "task");
  std::string bytes = serialize_checkpoint(m, vocab, mode, {{"note", "x"}});
  CHECK(bytes == serialize_checkpoint(m, vocab, mode, {{"note", "x"}}));
  Checkpoint c = deserialize_checkpoint(bytes);
  CHECK(c.mode == mode);
  CHECK(c.vocab.tokens() == vocab.tokens());
  CHECK(c.model.config() == m.config());
  round_to_float32(m);
  for (const auto& [name, p] : m.params()) CHECK((p.value - c.model.params().at(name).value).cwiseAbs().maxCoeff() == 0.0);
  CHECK(serialize_checkpoint(c.model, c.vocab, c.mode, {{"note", "x"}}) == bytes);
  CHECK_THROWS(deserialize_checkpoint(bytes.substr(0, bytes.size() - 4)));
  CHECK_THROWS(deserialize_checkpoint("garbage-bytes-here"));
}

TEST_CASE("tokenizer") {
  CHECK(Vocabulary::words("Man overboard!") == std::vector<std::string>{"man", "overboard", "!"});
  CHECK(Vocabulary::words("\"Trans-man,\" he said") ==
        std::vector<std::string>{"\"", "trans-man", ",", "\"", "he", "said"});
  Vocabulary v = Vocabulary::build({"a b b c", "b c"}, 7);
  CHECK(v.size() == 7);
  CHECK(v.token(kNumSpecial) == "b");
  CHECK(v.id("zebra") == kUnkId);
  auto ids = v.encode_pair("b", "c");
  CHECK(ids == std::vector<int>{kClsId, v.id("b"), kSepId, v.id("c"), kSepId});
}
