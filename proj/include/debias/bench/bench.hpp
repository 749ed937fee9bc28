#pragma once

#include "debias/cda/types.hpp"
#include "debias/common/rng.hpp"
#include "debias/metrics/benchmarks.hpp"

#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace debias::bench {

class BenchError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

// ---- similarity template suites ----

// Slots are written <subject>, <adjective>, <verb>, <object>; the literal
// "a/an" is resolved against the word that follows it.
struct TemplatePair {
  std::string noun = "The <subject> person <verb> a/an <object>";
  std::optional<std::string> adjective;  // e.g. "The <adjective> person <verb> a/an <object>"
};

struct TemplateSpec {
  std::vector<TemplatePair> templates{TemplatePair{}};
  std::vector<std::string> verbs;
  std::vector<std::string> objects;
  std::vector<std::string> adjectives;  // used by templates with an adjective form
  std::map<cda::BiasDimension, std::vector<std::string>> identities;
  std::string neutral_subject;  // empty: the identity modifier is dropped ("The person ...")

  // Throws BenchError on a malformed template or empty filler list.
  void validate() const;
};

TemplateSpec parse_template_spec(std::string_view json);
TemplateSpec load_template_spec(const std::string& path);

struct SimilarityComponent {
  std::string identity;
  std::string sentence_a;  // mentions the identity
  std::string sentence_b;  // identity-free counterpart
};

struct SimilarityTuple {
  std::string tuple_id;
  cda::BiasDimension dimension = cda::BiasDimension::gender;
  std::vector<SimilarityComponent> components;
};

// "a" or "an" by the vowel-initial heuristic.
std::string article_for(std::string_view word);
std::string fill_template(std::string_view tmpl, const std::map<std::string, std::string>& slots);

// One tuple per (template, [adjective,] verb, object) combination in that
// nested order; component i pairs identity i's sentence with the neutral one.
std::vector<SimilarityTuple> expand_bias_suite(const TemplateSpec& spec, cda::BiasDimension dimension);
// Closed-form size of expand_bias_suite's output.
std::size_t expected_tuple_count(const TemplateSpec& spec);

// JSONL: {"tuple_id", "dimension", "component_index", "identity_term", "sentence_a", "sentence_b"}.
std::string serialize_suite(const std::vector<SimilarityTuple>& tuples);
std::vector<SimilarityTuple> parse_suite(std::string_view contents);

// ---- subsampling ----

// Sorted indices of a uniform n-subset of [0, size).
std::vector<std::size_t> subsample_indices(std::size_t size, std::size_t n, std::uint64_t seed);
// Sorted indices not chosen by subsample_indices with the same arguments.
std::vector<std::size_t> complement_indices(std::size_t size, std::size_t n, std::uint64_t seed);

template <typename T>
std::vector<T> subsample(const std::vector<T>& items, std::size_t n, std::uint64_t seed) {
  std::vector<T> out;
  out.reserve(n);
  for (std::size_t i : subsample_indices(items.size(), n, seed)) out.push_back(items[i]);
  return out;
}

template <typename T>
std::vector<T> subsample_complement(const std::vector<T>& items, std::size_t n, std::uint64_t seed) {
  std::vector<T> out;
  for (std::size_t i : complement_indices(items.size(), n, seed)) out.push_back(items[i]);
  return out;
}

// ---- similarity datasets ----

struct SimilarityExample {
  std::string sentence_a, sentence_b;
  double score = 0.0;
};

struct SimilarityDataset {
  std::vector<SimilarityExample> examples;
  std::vector<std::string> warnings;
};

// "sentence1<TAB>sentence2<TAB>score" with score in [0, 5]. Errors name the
// offending line.
SimilarityDataset parse_similarity_dataset(std::string_view contents);
SimilarityDataset load_similarity_dataset(const std::string& path);

// ---- synthetic biased corpora ----

struct IdentityPair {
  std::string a, b;
};

struct SynthCorpusSpec {
  std::vector<IdentityPair> identities;
  std::vector<std::string> pole_a, pole_b;  // disjoint attribute sets
  std::vector<std::string> linkers{"is"};
  double skew = 0.5;  // P(pole-A attribute | identity a) = P(pole-B attribute | identity b)
  std::size_t count = 0;
  std::uint64_t seed = 0;

  void validate() const;
};

// Sentences "<identity> <linker> <attribute>"; identity pair, side and linker
// are uniform, the attribute pole follows the skew.
cda::Corpus synth_bias_corpus(const SynthCorpusSpec& spec);

// The spec's identity pairs as counterfactual pairs of `dimension`.
std::vector<cda::CounterfactualPair> synth_pairs(const SynthCorpusSpec& spec, cda::BiasDimension dimension);

// Mirrored stereotype suite: for every identity pair, linker and attribute,
// the identity whose pole matches the attribute is the stereotype fill and
// its partner the anti-stereotype, so a model that prefers one identity
// regardless of attribute scores exactly 50.
std::vector<metrics::StereoTriple> synth_stereo_triples(const SynthCorpusSpec& spec,
                                                        const std::vector<std::string>& meaningless,
                                                        cda::BiasDimension dimension);

}  // namespace debias::bench
