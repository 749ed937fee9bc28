#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "debias/common/io.hpp"
#include "debias/common/rng.hpp"
#include "debias/metrics/benchmarks.hpp"
#include "debias/metrics/fairness.hpp"
#include "debias/metrics/report.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>

using namespace debias;
using namespace debias::metrics;
using cda::BiasDimension;
using doctest::Approx;

namespace {

const std::string kData = DEBIAS_DATA_DIR;

std::vector<double> random_vector(Rng& rng, std::size_t n, double lo, double hi) {
  std::vector<double> v(n);
  for (auto& x : v) x = lo + (hi - lo) * rng.uniform();
  return v;
}

// Pairwise-comparison oracle for ROC-AUC.
double brute_auc(const std::vector<double>& s, const std::vector<int>& y) {
  double wins = 0, pairs = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (y[i] == 1 && y[j] == 0) {
        pairs += 1;
        wins += s[i] > s[j] ? 1.0 : s[i] == s[j] ? 0.5 : 0.0;
      }
    }
  }
  return wins / pairs;
}

}  // namespace

TEST_CASE("multiway_delta") {
  CHECK(multiway_delta(std::vector<double>{2.0, 2.0, 2.0}) == 0.0);
  CHECK(multiway_delta(std::vector<double>{1, 2, 3}) == Approx(4.0 / 3.0).epsilon(1e-12));
  CHECK(std::abs(multiway_delta(std::vector<double>{1, 2, 3}) - 1.3333333333333333) < 1e-9);
  CHECK_THROWS_AS(multiway_delta(std::vector<double>{1.0}), MetricError);

  Rng rng(1);
  for (int t = 0; t < 200; ++t) {
    auto v = random_vector(rng, 2 + rng.below(10), -3, 3);
    const double d = multiway_delta(v);
    CHECK(d >= 0.0);
    auto w = v;
    std::reverse(w.begin(), w.end());
    std::swap(w.front(), w[w.size() / 2]);
    CHECK(multiway_delta(w) == Approx(d).epsilon(1e-12));
    const double c = -2.5;
    for (auto& x : w) x *= c;
    CHECK(multiway_delta(w) == Approx(std::abs(c) * d).epsilon(1e-12));
    std::vector<double> same(v.size(), v[0]);
    CHECK(multiway_delta(same) == 0.0);
  }
}

TEST_CASE("pearson") {
  const std::vector<double> x = {1, 2, 3};
  CHECK(pearson(x, x) == Approx(1.0).epsilon(1e-12));
  CHECK(pearson(x, std::vector<double>{-1, -2, -3}) == Approx(-1.0).epsilon(1e-12));
  CHECK(std::abs(pearson(x, std::vector<double>{1, 2, 4}) - 0.9819805060619656) < 1e-9);
  CHECK_THROWS_AS(pearson(x, std::vector<double>{2, 2, 2}), MetricError);
  CHECK_THROWS_AS(pearson(std::vector<double>{1}, std::vector<double>{1}), MetricError);
  CHECK_THROWS_AS(pearson(x, std::vector<double>{1, 2}), MetricError);

  Rng rng(2);
  for (int t = 0; t < 100; ++t) {
    auto a = random_vector(rng, 20, -1, 1), b = random_vector(rng, 20, -1, 1);
    const double r = pearson(a, b);
    CHECK(r >= -1.0);
    CHECK(r <= 1.0);
    auto a2 = a;
    for (auto& v : a2) v = 3.0 * v + 7.0;
    CHECK(pearson(a2, b) == Approx(r).epsilon(1e-10));
    for (auto& v : a2) v = -v;
    CHECK(pearson(a2, b) == Approx(-r).epsilon(1e-10));
  }
}

TEST_CASE("useful_fairness") {
  CHECK(std::abs(useful_fairness(0.78, 0.11) - 0.6942) < 1e-9);
  CHECK(round_half_up(useful_fairness(0.78, 0.11)) == 0.69);
  CHECK(std::abs(useful_fairness(0.71, 0.11) - 0.6319) < 1e-9);
  CHECK(round_half_up(useful_fairness(0.71, 0.11)) == 0.63);
  CHECK(useful_fairness(0.5, 0.0) == 0.5);
  CHECK_THROWS_AS(useful_fairness(0.5, 0.1, 0.0), MetricError);
  Rng rng(3);
  for (int t = 0; t < 100; ++t) {
    const double rho = rng.uniform(), d1 = rng.uniform(), d2 = rng.uniform();
    CHECK(useful_fairness(rho, d1) <= rho);
    if (rho > 0 && d1 != d2) CHECK((useful_fairness(rho, std::min(d1, d2)) > useful_fairness(rho, std::max(d1, d2))));
  }
}

TEST_CASE("roc_auc") {
  CHECK(roc_auc(std::vector<double>{0.1, 0.2, 0.8, 0.9}, std::vector<int>{0, 0, 1, 1}) == 1.0);
  CHECK(roc_auc(std::vector<double>{0.3, 0.3, 0.3}, std::vector<int>{0, 1, 1}) == 0.5);
  CHECK(std::abs(roc_auc(std::vector<double>{0.1, 0.4, 0.35, 0.8}, std::vector<int>{0, 0, 1, 1}) - 0.75) < 1e-12);
  CHECK_THROWS_AS(roc_auc(std::vector<double>{0.1, 0.2}, std::vector<int>{1, 1}), SingleClassError);
  CHECK_THROWS_AS(roc_auc(std::vector<double>{0.1}, std::vector<int>{2}), MetricError);

  Rng rng(4);
  for (int t = 0; t < 100; ++t) {
    const std::size_t n = 2 + rng.below(40);
    std::vector<double> s(n);
    std::vector<int> y(n);
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = std::round(rng.uniform() * 10) / 10;  // frequent ties
      y[i] = static_cast<int>(rng.below(2));
    }
    y[0] = 0;
    y[1] = 1;
    const double auc = roc_auc(s, y);
    CHECK(auc == Approx(brute_auc(s, y)).epsilon(1e-12));
    std::vector<double> flipped(s);
    for (auto& v : flipped) v = 1.0 - v;
    CHECK(roc_auc(flipped, y) == Approx(1.0 - auc).epsilon(1e-12));
  }
}

TEST_CASE("generalized_mean") {
  CHECK(generalized_mean(std::vector<double>{0.2, 0.4}, 1.0) == Approx(0.3).epsilon(1e-12));
  CHECK(std::abs(generalized_mean(std::vector<double>{0.5, 1.0}, -5.0) - 0.5708252968172411) < 1e-9);
  CHECK_THROWS_AS(generalized_mean(std::vector<double>{0.5, 0.0}, -5.0), MetricError);
  CHECK_THROWS_AS(generalized_mean(std::vector<double>{0.5}, 0.0), MetricError);
  CHECK_THROWS_AS(generalized_mean(std::vector<double>{}, 1.0), MetricError);
  Rng rng(5);
  for (int t = 0; t < 100; ++t) {
    auto v = random_vector(rng, 1 + rng.below(9), 0.01, 1.0);
    const double lo = *std::min_element(v.begin(), v.end()), hi = *std::max_element(v.begin(), v.end());
    const double m5 = generalized_mean(v, -5.0), m1 = generalized_mean(v, 1.0);
    CHECK(m5 >= lo - 1e-12);
    CHECK(m5 <= hi + 1e-12);
    CHECK(m5 <= m1 + 1e-12);
    std::vector<double> same(v.size(), v[0]);
    CHECK(generalized_mean(same, -5.0) == Approx(v[0]).epsilon(1e-12));
    CHECK(generalized_mean(same, 3.0) == Approx(v[0]).epsilon(1e-12));
  }
}

TEST_CASE("jigsaw_submetrics") {
  const std::vector<AnnotatedComment> four = {{"a", 0, 0.2, {"muslim"}},
                                              {"b", 1, 0.9, {"muslim"}},
                                              {"c", 1, 0.7, {}},
                                              {"d", 0, 0.1, {}}};
  auto m = jigsaw_submetrics(four, "muslim");
  CHECK(m.bpsn_auc == 1.0);
  CHECK(m.bnsp_auc == 1.0);
  CHECK(m.subgroup_auc == 1.0);

  auto none = jigsaw_submetrics(four, "jewish");
  CHECK_FALSE(none.subgroup_auc.has_value());
  CHECK_FALSE(none.bpsn_auc.has_value());
  CHECK_FALSE(none.bnsp_auc.has_value());

  std::vector<AnnotatedComment> all = four;
  for (auto& c : all) c.subgroups = {"female"};
  std::vector<double> s;
  std::vector<int> y;
  for (const auto& c : all) {
    s.push_back(c.score);
    y.push_back(c.label);
  }
  CHECK(jigsaw_submetrics(all, "female").subgroup_auc == roc_auc(s, y));

  std::vector<AnnotatedComment> bad = four;
  bad[0].subgroups = {"martian"};
  CHECK_THROWS_AS(jigsaw_submetrics(bad, "muslim"), MetricError);
}

TEST_CASE("jigsaw_overall") {
  const std::vector<std::optional<double>> eq = {0.9, 0.9, 0.9};
  CHECK(jigsaw_overall(0.9, eq) == Approx(0.9).epsilon(1e-12));
  const std::vector<std::optional<double>> m8 = {0.8, 0.8, 0.8};
  CHECK(std::abs(jigsaw_overall(1.0, m8) - 0.85) < 1e-9);
  Rng rng(6);
  for (int t = 0; t < 50; ++t) {
    const double a = rng.uniform(), m = rng.uniform();
    const std::vector<std::optional<double>> ms = {m, m, m};
    CHECK(std::abs(jigsaw_overall(a, ms) - (0.25 * a + 0.75 * m)) < 1e-12);
  }
  const std::vector<std::optional<double>> missing = {0.8, std::nullopt, 0.8};
  CHECK_THROWS_WITH_AS(jigsaw_overall(0.9, missing), doctest::Contains("exclude"), MetricError);
  // One subgroup: each power mean is that subgroup's value.
  const std::vector<AnnotatedComment> four = {{"a", 0, 0.2, {"muslim"}},
                                              {"b", 1, 0.9, {"muslim"}},
                                              {"c", 1, 0.7, {}},
                                              {"d", 0, 0.3, {"muslim"}},
                                              {"e", 0, 0.8, {}}};
  auto r = jigsaw_report(four, {"muslim"});
  REQUIRE(r.rows.size() == 1);
  REQUIRE(r.overall.has_value());
  CHECK(r.mean_subgroup_auc == r.rows[0].metrics.subgroup_auc);
  CHECK(*r.mean_bpsn_auc == Approx(*r.rows[0].metrics.bpsn_auc).epsilon(1e-12));
}

TEST_CASE("jigsaw fixture matches the frozen pairwise oracle") {
  const auto comments = parse_comments(read_file(kData + "/fixtures/jigsaw_200.jsonl"));
  REQUIRE(comments.size() == 200);
  const auto expected = nlohmann::json::parse(read_file(kData + "/fixtures/jigsaw_200.expected.json"));
  const auto report = jigsaw_report(comments, jigsaw_subgroups());
  CHECK(std::abs(report.overall_auc - expected.at("overall_auc").get<double>()) < 1e-12);
  for (std::size_t i = 0; i < report.rows.size(); ++i) {
    const auto& row = report.rows[i];
    const auto& e = expected.at("subgroups").at(i);
    CHECK(row.subgroup == e.at("subgroup").get<std::string>());
    CHECK(row.count == e.at("count").get<std::size_t>());
    CHECK(std::abs(*row.metrics.subgroup_auc - e.at("subgroup_auc").get<double>()) < 1e-12);
    CHECK(std::abs(*row.metrics.bpsn_auc - e.at("bpsn_auc").get<double>()) < 1e-12);
    CHECK(std::abs(*row.metrics.bnsp_auc - e.at("bnsp_auc").get<double>()) < 1e-12);
  }
  CHECK(std::abs(*report.overall - expected.at("overall").get<double>()) < 1e-9);
  CHECK(parse_comments(serialize_comments(comments)).size() == 200);
  CHECK_THROWS_WITH(parse_comments("{\"text\":\"x\",\"label\":1,\"score\":1.5}\n"), doctest::Contains("line 1"));
}

TEST_CASE("stereotype and minimal-pair percentages from scores") {
  std::vector<TripleScores> all_stereo, tied, nonsense;
  for (int i = 0; i < 10; ++i) {
    all_stereo.push_back({std::to_string(i), BiasDimension::gender, -1.0, -2.0, -3.0});
    tied.push_back({std::to_string(i), BiasDimension::gender, -1.0, -1.0, -3.0});
    nonsense.push_back({std::to_string(i), BiasDimension::gender, -2.0, -3.0, -1.0});
  }
  CHECK(stereoset_from_scores(all_stereo).ss == 100.0);
  CHECK(stereoset_from_scores(all_stereo).lm_score == 100.0);
  CHECK(stereoset_from_scores(tied).ss == 50.0);
  CHECK(stereoset_from_scores(nonsense).lm_score == 0.0);
  CHECK_THROWS_AS(stereoset_from_scores({}), MetricError);

  std::vector<PairScores> p = {{"1", BiasDimension::race, -1, -2},
                               {"2", BiasDimension::race, -1, -2},
                               {"3", BiasDimension::race, -1, -2},
                               {"4", BiasDimension::race, -3, -2}};
  CHECK(crows_from_scores(p).ss == 75.0);
  for (auto& s : p) s.anti = s.stereo;
  CHECK(crows_from_scores(p).ss == 50.0);

  // A fair-by-construction coin-flip scorer lands at 50 within 2 points.
  Rng rng(7);
  std::vector<TripleScores> coin;
  for (int i = 0; i < 10000; ++i) {
    const bool s = rng.bernoulli(0.5);
    coin.push_back({std::to_string(i), BiasDimension::religion, s ? -1.0 : -2.0, s ? -2.0 : -1.0, -5.0});
  }
  const double ss = stereoset_from_scores(coin).ss;
  CHECK(ss >= 48.0);
  CHECK(ss <= 52.0);
}

TEST_CASE("unique tokens follow the longest common subsequence") {
  using tinylm::Vocabulary;
  auto u = unique_tokens(Vocabulary::words("He is a doctor"), Vocabulary::words("She is a doctor"));
  CHECK(u.first == std::vector<int>{0});
  CHECK(u.second == std::vector<int>{0});
  u = unique_tokens(Vocabulary::words("the poor man was lazy"), Vocabulary::words("the rich man was lazy"));
  CHECK(u.first == std::vector<int>{1});
  u = unique_tokens(Vocabulary::words("a b"), Vocabulary::words("a b c d"));
  CHECK(u.first.empty());
  CHECK(u.second == std::vector<int>{2, 3});
}

namespace {

struct ToyLm {
  tinylm::Vocabulary vocab;
  tinylm::ModelGraph model;
};

ToyLm toy_lm() {
  auto vocab = tinylm::Vocabulary::build({"he she is a doctor nurse the man woman sings table"}, 64);
  tinylm::EncoderConfig cfg;
  cfg.hidden_dim = 32;
  cfg.num_heads = 4;
  cfg.ff_dim = 64;
  cfg.vocab_size = vocab.size();
  cfg.seed = 9;
  auto model = tinylm::ModelGraph::build(cfg, {}, false, {});
  Rng rng(9);
  for (auto& [name, p] : model.params()) {
    for (Eigen::Index i = 0; i < p.value.size(); ++i) p.value.data()[i] += 0.3 * rng.normal();
  }
  return {std::move(vocab), std::move(model)};
}

// Direct oracle: full forward pass on the masked sequence, then a softmax.
double direct_log_prob(const ToyLm& lm, std::vector<int> ids, int pos) {
  const int gold = ids[static_cast<std::size_t>(pos)];
  ids[static_cast<std::size_t>(pos)] = tinylm::kMaskId;
  auto out = lm.model.forward({{ids}, {}}, tinylm::ForwardPlan{});
  const auto row = out.mlm_logits[0].row(pos);
  double z = 0;
  for (Eigen::Index v = 0; v < row.size(); ++v) z += std::exp(row(v));
  return row(gold) - std::log(z);
}

}  // namespace

TEST_CASE("pll_score against direct masked forward passes") {
  const auto lm = toy_lm();
  const auto ids = lm.vocab.encode("the man is a doctor");
  const tinylm::ForwardPlan plan;
  CHECK(pll_score(lm.model, plan, ids, {2}) == Approx(direct_log_prob(lm, ids, 2)).epsilon(1e-10));
  const double two = pll_score(lm.model, plan, ids, {2, 5});
  CHECK(two == Approx(0.5 * (direct_log_prob(lm, ids, 2) + direct_log_prob(lm, ids, 5))).epsilon(1e-10));
  CHECK_THROWS_AS(pll_score(lm.model, plan, ids, {}), MetricError);
  CHECK_THROWS_AS(pll_score(lm.model, plan, ids, {7}), MetricError);
  const double prob = pll_score(lm.model, plan, ids, {2}, Aggregation::mean_prob);
  CHECK(prob == Approx(std::exp(direct_log_prob(lm, ids, 2))).epsilon(1e-10));
}

TEST_CASE("crows_eval on the toy model equals the brute-force softmax comparison") {
  const auto lm = toy_lm();
  ModelScorer scorer(lm.model, lm.vocab, {});
  const std::vector<CrowsPair> pairs = {{"p1", "He is a doctor", "She is a doctor", BiasDimension::gender},
                                        {"p2", "the man sings", "the woman sings", BiasDimension::gender},
                                        {"p3", "the nurse", "the nurse .", BiasDimension::gender}};
  auto r = crows_eval(scorer, pairs);
  CHECK(r.count == 2);
  CHECK(r.skipped == std::vector<std::string>{"p3"});
  const bool p1 = direct_log_prob(lm, lm.vocab.encode("He is a doctor"), 1) >
                  direct_log_prob(lm, lm.vocab.encode("She is a doctor"), 1);
  const bool p2 = direct_log_prob(lm, lm.vocab.encode("the man sings"), 2) >
                  direct_log_prob(lm, lm.vocab.encode("the woman sings"), 2);
  CHECK(r.ss == Approx(50.0 * (p1 + p2)));
  CHECK(r.ss >= 0.0);
  CHECK(r.ss <= 100.0);
}

TEST_CASE("stereoset_eval scores fills in context") {
  const auto lm = toy_lm();
  ModelScorer scorer(lm.model, lm.vocab, {});
  const StereoTriple t{"t1", "the BLANK is a doctor", "man", "woman", "table", BiasDimension::gender};
  const auto rendered = render(t, "man");
  CHECK(rendered.words == std::vector<std::string>{"the", "man", "is", "a", "doctor"});
  CHECK(rendered.fill_positions == std::vector<int>{1});
  const auto scores = score_triples(scorer, {t});
  CHECK(scores[0].stereo == Approx(direct_log_prob(lm, lm.vocab.encode("the man is a doctor"), 2)).epsilon(1e-10));
  const auto r = stereoset_eval(scorer, {t});
  CHECK((r.ss == 0.0 || r.ss == 100.0));
  CHECK_THROWS_AS(validate(StereoTriple{"x", "no blank here", "a", "b", "c", BiasDimension::gender}), MetricError);
  CHECK_THROWS_AS(validate(StereoTriple{"x", "BLANK BLANK", "a", "b", "c", BiasDimension::gender}), MetricError);
  CHECK_THROWS_AS(validate(StereoTriple{"x", "BLANK", "a", "A", "c", BiasDimension::gender}), MetricError);
}

TEST_CASE("score logs feed the same metric functions") {
  std::vector<TripleScores> t = {{"a", BiasDimension::gender, -1, -2, -3}, {"b", BiasDimension::gender, -2, -1, -3}};
  auto log = serialize_score_log(to_records(t));
  auto back = triples_from_log(parse_score_log(log));
  CHECK(stereoset_from_scores(back).ss == 50.0);
  std::vector<SimilarityScores> s = {{"t0", BiasDimension::race, {1.0, 2.0, 3.0}}};
  auto tuples = tuples_from_log(parse_score_log(serialize_score_log(to_records(s))));
  REQUIRE(tuples.size() == 1);
  CHECK(tuples[0].scores == s[0].scores);
  CHECK(bias_sts_delta(tuples) == Approx(4.0 / 15.0).epsilon(1e-12));
  CHECK_THROWS_WITH(parse_score_log("{\"id\":\"a\",\"dimension\":\"gender\",\"role\":\"weird\",\"score\":1}"),
                    doctest::Contains("line 1"));
  CHECK_THROWS_AS(triples_from_log(parse_score_log(
                      "{\"id\":\"a\",\"dimension\":\"gender\",\"role\":\"stereo\",\"score\":1}\n")),
                  MetricError);
}

TEST_CASE("table 2 psi column is recomputable from rho and delta average") {
  struct Row {
    const char* name;
    double rho, dg, dr, drel, davg, psi;
  };
  const Row rows[] = {{"BERT", .78, .18, .09, .07, .11, .69},      {"BERT+DA", .75, .15, .02, .12, .10, .67},
                      {"gender", .66, .09, .10, .09, .09, .60},    {"race", .46, .09, .06, .19, .11, .41},
                      {"religion", .45, .19, .09, .06, .11, .40},  {"profession", .45, .15, .11, .12, .13, .39},
                      {"all", .71, .15, .10, .07, .11, .63},       {"MAFIA", .84, .12, .06, .05, .07, .77}};
  for (const auto& r : rows) {
    const double psi = round_half_up(useful_fairness(r.rho, r.davg));
    CHECK_MESSAGE(std::abs(psi - r.psi) <= 0.01 + 1e-9, r.name);
  }
}

TEST_CASE("bias report emission") {
  BiasReport r;
  r.name = "BERT";
  r.rho = 0.78;
  r.dimensions[BiasDimension::gender].delta = 0.18;
  r.dimensions[BiasDimension::race].delta = 0.09;
  r.dimensions[BiasDimension::religion].delta = 0.07;
  r.derive();
  CHECK(round_half_up(*r.delta_average) == 0.11);
  CHECK(round_half_up(*r.psi_average) == 0.69);
  const std::string table = report_emit({r}, ReportFormat::table);
  CHECK(table.find("BERT") != std::string::npos);
  CHECK(table.find("   0.78      0.18    0.09        0.07       0.11         0.69") != std::string::npos);

  auto records = report_emit({r}, ReportFormat::records);
  auto parsed = parse_records(records);
  REQUIRE(parsed.size() == 1);
  CHECK(parsed[0] == r);

  CHECK_THROWS_AS(report_emit({}, ReportFormat::table), ReportError);
  BiasReport other = r;
  other.schema_version = 2;
  CHECK_THROWS_AS(report_emit({r, other}, ReportFormat::table), ReportError);
  BiasReport wrong = r;
  wrong.psi_average = 0.5;
  CHECK_THROWS_AS(report_emit({wrong}, ReportFormat::records), ReportError);

  BiasReport tox;
  tox.name = "tox";
  tox.jigsaw = jigsaw_report(parse_comments(read_file(kData + "/fixtures/jigsaw_200.jsonl")));
  auto both = parse_records(report_emit({r, tox}, ReportFormat::records));
  CHECK(both[1] == tox);
  CHECK(report_emit({r, tox}, ReportFormat::table).find("overall_auc") != std::string::npos);
}

TEST_CASE("round_half_up") {
  CHECK(round_half_up(0.685) == 0.69);
  CHECK(round_half_up(0.675) == 0.68);
  CHECK(round_half_up(0.6942) == 0.69);
  CHECK(round_half_up(0.125) == 0.13);
  CHECK(round_half_up(57.145) == 57.15);
}
