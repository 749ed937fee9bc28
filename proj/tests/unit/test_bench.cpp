#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "debias/bench/bench.hpp"

#include <cmath>
#include <numeric>
#include <set>

using namespace debias;
using namespace debias::bench;
using cda::BiasDimension;

namespace {

const std::string kData = DEBIAS_DATA_DIR;

TemplateSpec tiny_spec() {
  TemplateSpec s;
  s.verbs = {"owns"};
  s.objects = {"car"};
  s.identities[BiasDimension::gender] = {"male", "female", "non-binary", "transgender", "gay", "lesbian", "bisexual"};
  return s;
}

}  // namespace

TEST_CASE("one template, verb and object over 7 gender identities gives one 7-tuple") {
  const auto suite = expand_bias_suite(tiny_spec(), BiasDimension::gender);
  REQUIRE(suite.size() == 1);
  CHECK(suite[0].components.size() == 7);
  CHECK(suite[0].tuple_id == "gender-0");
  CHECK(suite[0].components[0].sentence_a == "The male person owns a car");
  CHECK(suite[0].components[0].sentence_b == "The person owns a car");
  for (const auto& c : suite[0].components) CHECK(c.sentence_b == "The person owns a car");
  CHECK_THROWS_AS(expand_bias_suite(tiny_spec(), BiasDimension::race), BenchError);
}

TEST_CASE("two adjectives, three verbs and one object over 10 race identities") {
  TemplateSpec s;
  s.templates = {TemplatePair{"The <subject> person <verb> a/an <object>", "The <adjective> person <verb> a/an <object>"}};
  s.adjectives = {"kind", "rude"};
  s.verbs = {"owns", "likes", "sold"};
  s.objects = {"apple"};
  s.identities[BiasDimension::race] = {"a", "b", "c", "d", "e", "f", "g", "h", "i", "j"};
  const auto suite = expand_bias_suite(s, BiasDimension::race);
  CHECK(suite.size() == 6);
  std::size_t pairs = 0;
  for (const auto& t : suite) pairs += t.components.size();
  CHECK(pairs == 60);
  CHECK(suite[0].components[0].sentence_b == "The kind person owns an apple");
  CHECK(suite[5].components[9].sentence_a == "The j person sold an apple");
  CHECK(suite[5].components[9].sentence_b == "The rude person sold an apple");
}

TEST_CASE("articles follow the next word") {
  CHECK(article_for("apple") == "an");
  CHECK(article_for("book") == "a");
  CHECK(article_for("Umbrella") == "an");
  CHECK(fill_template("I ate a/an <object>.", {{"<object>", "orange"}}) == "I ate an orange.");
  CHECK(fill_template("I read a/an <object>", {{"<object>", "book"}}) == "I read a book");
}

TEST_CASE("expansion count equals brute-force enumeration") {
  Rng rng(11);
  for (int trial = 0; trial < 40; ++trial) {
    TemplateSpec s;
    s.templates.clear();
    const std::size_t nt = 1 + rng.below(3);
    for (std::size_t t = 0; t < nt; ++t) {
      TemplatePair p;
      if (rng.bernoulli(0.5)) p.adjective = "The <adjective> person <verb> a/an <object>";
      s.templates.push_back(p);
    }
    auto list = [&](const char* prefix) {
      std::vector<std::string> v(1 + rng.below(4));
      for (std::size_t i = 0; i < v.size(); ++i) v[i] = prefix + std::to_string(i);
      return v;
    };
    s.verbs = list("v");
    s.objects = list("o");
    s.adjectives = list("adj");
    s.identities[BiasDimension::religion] = list("id");
    const auto suite = expand_bias_suite(s, BiasDimension::religion);
    std::size_t brute = 0;
    for (const auto& t : s.templates) {
      for (std::size_t a = 0; a < (t.adjective ? s.adjectives.size() : 1); ++a) {
        for (std::size_t v = 0; v < s.verbs.size(); ++v) {
          for (std::size_t o = 0; o < s.objects.size(); ++o) ++brute;
        }
      }
    }
    CHECK(suite.size() == brute);
    CHECK(expected_tuple_count(s) == brute);
    std::set<std::string> ids;
    for (const auto& t : suite) {
      ids.insert(t.tuple_id);
      CHECK(t.components.size() == s.identities[BiasDimension::religion].size());
    }
    CHECK(ids.size() == suite.size());
    CHECK(serialize_suite(expand_bias_suite(s, BiasDimension::religion)) == serialize_suite(suite));
  }
}

TEST_CASE("shipped templates") {
  const auto spec = load_template_spec(kData + "/bias_sts_templates.json");
  CHECK(spec.identities.at(BiasDimension::gender).size() == 7);
  CHECK(spec.identities.at(BiasDimension::race).size() == 10);
  CHECK(spec.identities.at(BiasDimension::religion).size() == 11);
  const auto race = expand_bias_suite(spec, BiasDimension::race);
  CHECK(race.size() == expected_tuple_count(spec));
  CHECK(race.size() == spec.adjectives.size() * spec.verbs.size() * spec.objects.size());

  // Flatten to sentence pairs and draw the evaluation-sized subsample.
  std::vector<SimilarityComponent> pairs;
  for (const auto& t : race) pairs.insert(pairs.end(), t.components.begin(), t.components.end());
  REQUIRE(pairs.size() >= 16384);
  const auto sample = subsample(pairs, 16384, 42);
  CHECK(sample.size() == 16384);

  const auto text = serialize_suite(race);
  const auto back = parse_suite(text);
  REQUIRE(back.size() == race.size());
  CHECK(back[17].tuple_id == race[17].tuple_id);
  CHECK(back[17].components[3].sentence_a == race[17].components[3].sentence_a);
  CHECK(serialize_suite(back) == text);
}

TEST_CASE("template spec validation") {
  CHECK_THROWS_AS(parse_template_spec(R"({"verbs":["a"],"objects":["b"],"colour":1})"), BenchError);
  CHECK_THROWS_AS(parse_template_spec(R"({"verbs":[],"objects":["b"]})"), BenchError);
  CHECK_THROWS_AS(parse_template_spec(R"({"templates":[{"noun":"The <subject> <subject> <verb> <object>"}],
                                          "verbs":["a"],"objects":["b"]})"),
                  BenchError);
  CHECK_THROWS_AS(parse_template_spec("not json"), BenchError);
  CHECK_THROWS_WITH(parse_suite("{\"tuple_id\":\"x\"}\n"), doctest::Contains("line 1"));
}

TEST_CASE("subsample") {
  std::vector<int> items(100);
  std::iota(items.begin(), items.end(), 0);
  CHECK(subsample(items, 100, 3) == items);
  CHECK(subsample(items, 0, 3).empty());
  CHECK_THROWS_AS(subsample(items, 101, 3), BenchError);
  Rng rng(12);
  for (int t = 0; t < 50; ++t) {
    const std::size_t n = rng.below(101);
    const std::uint64_t seed = rng.below(1000000);
    const auto a = subsample(items, n, seed);
    CHECK(a == subsample(items, n, seed));
    CHECK(a.size() == n);
    CHECK(std::is_sorted(a.begin(), a.end()));
    CHECK(std::set<int>(a.begin(), a.end()).size() == n);
    auto rest = subsample_complement(items, n, seed);
    std::vector<int> all = a;
    all.insert(all.end(), rest.begin(), rest.end());
    std::sort(all.begin(), all.end());
    CHECK(all == items);
  }
  // Each item is included with probability n / size.
  std::vector<int> hits(100, 0);
  for (std::uint64_t seed = 0; seed < 2000; ++seed) {
    for (int i : subsample(items, 10, seed)) ++hits[static_cast<std::size_t>(i)];
  }
  const double sd = std::sqrt(2000 * 0.1 * 0.9);
  for (int h : hits) CHECK(std::abs(h - 200.0) < 5 * sd);
}

TEST_CASE("synthetic biased corpus") {
  SynthCorpusSpec s;
  s.identities = {{"he", "she"}, {"man", "woman"}};
  s.pole_a = {"strong", "brave"};
  s.pole_b = {"gentle", "caring"};
  s.count = 500;
  s.skew = 1.0;
  s.seed = 5;
  const auto full = synth_bias_corpus(s);
  CHECK(full.size() == 500);
  const std::set<std::string> a_ids = {"he", "man"}, pole_a = {"strong", "brave"};
  for (const auto& sent : full.sentences) {
    REQUIRE(sent.tokens.size() == 3);
    CHECK(a_ids.count(sent.tokens[0]) == pole_a.count(sent.tokens[2]));
  }
  CHECK(synth_bias_corpus(s) == full);

  for (double skew : {0.5, 0.8}) {
    s.skew = skew;
    s.count = 10000;
    const auto corpus = synth_bias_corpus(s);
    double a_total = 0, a_pole_a = 0, a_pole_b = 0;
    for (const auto& sent : corpus.sentences) {
      if (!a_ids.count(sent.tokens[0])) continue;
      ++a_total;
      (pole_a.count(sent.tokens[2]) ? a_pole_a : a_pole_b) += 1;
    }
    const double sd = std::sqrt(skew * (1 - skew) / a_total);
    CHECK(std::abs(a_pole_a / a_total - skew) < 3 * sd + 1e-12);
    if (skew == 0.5) CHECK(std::abs(a_pole_a - a_pole_b) / a_total < 0.05);
  }

  s.skew = 0.4;
  CHECK_THROWS_AS(synth_bias_corpus(s), BenchError);
  s.skew = 0.9;
  s.pole_b = {"Brave"};
  CHECK_THROWS_AS(synth_bias_corpus(s), BenchError);
}

TEST_CASE("mirrored stereotype suite") {
  SynthCorpusSpec s;
  s.identities = {{"he", "she"}};
  s.pole_a = {"strong"};
  s.pole_b = {"gentle", "caring"};
  s.linkers = {"is", "was"};
  const auto triples = synth_stereo_triples(s, {"table"}, BiasDimension::gender);
  CHECK(triples.size() == 6);
  std::size_t he_stereo = 0;
  for (const auto& t : triples) {
    metrics::validate(t);
    he_stereo += t.stereotype == "he";
  }
  CHECK(he_stereo == 2);
  CHECK(triples[0].context == "BLANK is strong");
  const auto pairs = synth_pairs(s, BiasDimension::gender);
  REQUIRE(pairs.size() == 1);
  CHECK(pairs[0].dominant == "he");
}

TEST_CASE("similarity datasets") {
  auto ds = parse_similarity_dataset("a man is walking\tsomeone walks\t4.2\n");
  REQUIRE(ds.examples.size() == 1);
  CHECK(ds.examples[0].score == 4.2);
  CHECK(ds.examples[0].sentence_b == "someone walks");
  CHECK_THROWS_WITH_AS(parse_similarity_dataset("a\tb\t1\nc\td\t5.1\n"), doctest::Contains("line 2"), BenchError);
  CHECK_THROWS_WITH_AS(parse_similarity_dataset("a\tb\n"), doctest::Contains("line 1"), BenchError);
  CHECK_THROWS_WITH_AS(parse_similarity_dataset("a\tb\tx\n"), doctest::Contains("line 1"), BenchError);
  auto empty = parse_similarity_dataset("");
  CHECK(empty.examples.empty());
  CHECK(empty.warnings.size() == 1);
  CHECK(parse_similarity_dataset("Der Mann geht\tJemand läuft\t3\n").examples.size() == 1);
  CHECK(load_similarity_dataset(kData + "/fixtures/sts_small.tsv").examples.size() == 60);
}
