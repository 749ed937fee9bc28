#include "debias/bench/bench.hpp"

#include "debias/common/io.hpp"
#include "debias/common/text.hpp"

#include <algorithm>
#include <cerrno>
#include <cmath>
#include <cstdlib>
#include <nlohmann/json.hpp>
#include <set>

namespace debias::bench {

namespace {

std::size_t count_of(std::string_view s, std::string_view needle) {
  std::size_t n = 0;
  for (auto pos = s.find(needle); pos != std::string_view::npos; pos = s.find(needle, pos + needle.size())) ++n;
  return n;
}

void require_slots(const std::string& tmpl, const std::vector<std::string>& present, const std::vector<std::string>& absent) {
  for (const auto& slot : present) {
    if (count_of(tmpl, slot) != 1) throw BenchError("template \"" + tmpl + "\" must contain " + slot + " exactly once");
  }
  for (const auto& slot : absent) {
    if (count_of(tmpl, slot) != 0) throw BenchError("template \"" + tmpl + "\" must not contain " + slot);
  }
}

std::vector<std::string> strings(const nlohmann::json& j, const std::string& key) {
  if (!j.is_array()) throw BenchError("template spec key '" + key + "' must be a list of strings");
  return j.get<std::vector<std::string>>();
}

}  // namespace

void TemplateSpec::validate() const {
  if (templates.empty()) throw BenchError("template spec has no templates");
  if (verbs.empty()) throw BenchError("template spec has no verbs");
  if (objects.empty()) throw BenchError("template spec has no objects");
  for (const auto& t : templates) {
    require_slots(t.noun, {"<subject>", "<verb>", "<object>"}, {"<adjective>"});
    if (t.adjective) {
      require_slots(*t.adjective, {"<adjective>", "<verb>", "<object>"}, {"<subject>"});
      if (adjectives.empty()) throw BenchError("adjective template given but the adjective list is empty");
    }
  }
}

TemplateSpec parse_template_spec(std::string_view contents) {
  TemplateSpec spec;
  try {
    const auto j = nlohmann::json::parse(contents);
    for (const auto& [key, v] : j.items()) {
      if (key == "templates") {
        spec.templates.clear();
        for (const auto& t : v) {
          TemplatePair p;
          p.noun = t.at("noun").get<std::string>();
          if (t.contains("adjective") && !t.at("adjective").is_null()) p.adjective = t.at("adjective").get<std::string>();
          spec.templates.push_back(std::move(p));
        }
      } else if (key == "verbs") {
        spec.verbs = strings(v, key);
      } else if (key == "objects") {
        spec.objects = strings(v, key);
      } else if (key == "adjectives") {
        spec.adjectives = strings(v, key);
      } else if (key == "neutral_subject") {
        spec.neutral_subject = v.get<std::string>();
      } else if (key == "identities") {
        for (const auto& [dim, list] : v.items()) spec.identities[cda::parse_dimension(dim)] = strings(list, dim);
      } else {
        throw BenchError("unknown template spec key: " + key);
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw BenchError(std::string("malformed template spec: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw BenchError(std::string("malformed template spec: ") + e.what());
  }
  spec.validate();
  return spec;
}

TemplateSpec load_template_spec(const std::string& path) { return parse_template_spec(read_file(path)); }

std::string article_for(std::string_view word) { return text::starts_with_vowel(word) ? "an" : "a"; }

std::string fill_template(std::string_view tmpl, const std::map<std::string, std::string>& slots) {
  std::string s(tmpl);
  for (const auto& [slot, value] : slots) {
    for (auto pos = s.find(slot); pos != std::string::npos; pos = s.find(slot, pos + value.size())) {
      s.replace(pos, slot.size(), value);
    }
  }
  auto words = text::split_whitespace(s);
  for (std::size_t i = 0; i < words.size(); ++i) {
    if (words[i] == "a/an") words[i] = i + 1 < words.size() ? article_for(words[i + 1]) : "a";
  }
  return text::join(words, " ");
}

std::size_t expected_tuple_count(const TemplateSpec& spec) {
  std::size_t total = 0;
  for (const auto& t : spec.templates) {
    total += (t.adjective ? spec.adjectives.size() : 1) * spec.verbs.size() * spec.objects.size();
  }
  return total;
}

std::vector<SimilarityTuple> expand_bias_suite(const TemplateSpec& spec, cda::BiasDimension dimension) {
  spec.validate();
  auto it = spec.identities.find(dimension);
  if (it == spec.identities.end() || it->second.empty()) {
    throw BenchError("no identity terms for dimension " + std::string(cda::to_string(dimension)));
  }
  const auto& identities = it->second;
  std::vector<SimilarityTuple> out;
  out.reserve(expected_tuple_count(spec));
  const std::string dim(cda::to_string(dimension));
  for (const auto& t : spec.templates) {
    const std::vector<std::string> adjectives = t.adjective ? spec.adjectives : std::vector<std::string>{""};
    for (const auto& adj : adjectives) {
      for (const auto& verb : spec.verbs) {
        for (const auto& object : spec.objects) {
          SimilarityTuple tuple{dim + "-" + std::to_string(out.size()), dimension, {}};
          const std::string neutral =
              t.adjective ? fill_template(*t.adjective, {{"<adjective>", adj}, {"<verb>", verb}, {"<object>", object}})
                          : fill_template(t.noun, {{"<subject>", spec.neutral_subject}, {"<verb>", verb}, {"<object>", object}});
          for (const auto& id : identities) {
            tuple.components.push_back(
                {id, fill_template(t.noun, {{"<subject>", id}, {"<verb>", verb}, {"<object>", object}}), neutral});
          }
          out.push_back(std::move(tuple));
        }
      }
    }
  }
  return out;
}

std::string serialize_suite(const std::vector<SimilarityTuple>& tuples) {
  std::string out;
  for (const auto& t : tuples) {
    for (std::size_t i = 0; i < t.components.size(); ++i) {
      const auto& c = t.components[i];
      out += nlohmann::json{{"tuple_id", t.tuple_id},
                            {"dimension", cda::to_string(t.dimension)},
                            {"component_index", i},
                            {"identity_term", c.identity},
                            {"sentence_a", c.sentence_a},
                            {"sentence_b", c.sentence_b}}
                 .dump() +
             "\n";
    }
  }
  return out;
}

std::vector<SimilarityTuple> parse_suite(std::string_view contents) {
  std::vector<SimilarityTuple> out;
  std::map<std::string, std::size_t> index;
  std::size_t line_no = 0;
  for (const auto& line : text::split(contents, '\n')) {
    ++line_no;
    if (text::trim(line).empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      const std::string id = j.at("tuple_id").get<std::string>();
      const auto dim = cda::parse_dimension(j.at("dimension").get<std::string>());
      auto [it, fresh] = index.emplace(id, out.size());
      if (fresh) out.push_back({id, dim, {}});
      auto& tuple = out[it->second];
      if (tuple.dimension != dim) throw BenchError("tuple mixes dimensions");
      if (j.at("component_index").get<std::size_t>() != tuple.components.size()) {
        throw BenchError("component_index out of order");
      }
      tuple.components.push_back({j.at("identity_term").get<std::string>(), j.at("sentence_a").get<std::string>(),
                                  j.at("sentence_b").get<std::string>()});
    } catch (const nlohmann::json::exception& e) {
      throw BenchError("suite line " + std::to_string(line_no) + ": " + e.what());
    } catch (const std::invalid_argument& e) {
      throw BenchError("suite line " + std::to_string(line_no) + ": " + e.what());
    } catch (const BenchError& e) {
      throw BenchError("suite line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

std::vector<std::size_t> subsample_indices(std::size_t size, std::size_t n, std::uint64_t seed) {
  if (n > size) {
    throw BenchError("cannot sample " + std::to_string(n) + " items from " + std::to_string(size));
  }
  Rng rng(seed);
  auto perm = rng.permutation(size);
  perm.resize(n);
  std::sort(perm.begin(), perm.end());
  return perm;
}

std::vector<std::size_t> complement_indices(std::size_t size, std::size_t n, std::uint64_t seed) {
  const auto chosen = subsample_indices(size, n, seed);
  std::vector<std::size_t> out;
  out.reserve(size - n);
  std::size_t c = 0;
  for (std::size_t i = 0; i < size; ++i) {
    if (c < chosen.size() && chosen[c] == i) ++c;
    else out.push_back(i);
  }
  return out;
}

SimilarityDataset parse_similarity_dataset(std::string_view contents) {
  SimilarityDataset ds;
  std::size_t line_no = 0;
  for (const auto& raw : text::split(contents, '\n')) {
    ++line_no;
    std::string line = raw;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (text::trim(line).empty()) continue;
    const auto cols = text::split(line, '\t');
    const std::string where = "line " + std::to_string(line_no) + ": ";
    if (cols.size() != 3) {
      throw BenchError(where + "expected 3 tab-separated columns, found " + std::to_string(cols.size()));
    }
    const std::string field(text::trim(cols[2]));
    char* end = nullptr;
    errno = 0;
    const double score = std::strtod(field.c_str(), &end);
    if (field.empty() || end != field.c_str() + field.size() || errno == ERANGE || !std::isfinite(score)) {
      throw BenchError(where + "score '" + field + "' is not a number");
    }
    if (score < 0.0 || score > 5.0) throw BenchError(where + "score " + field + " outside [0, 5]");
    ds.examples.push_back({cols[0], cols[1], score});
  }
  if (ds.examples.empty()) ds.warnings.push_back("similarity dataset is empty");
  return ds;
}

SimilarityDataset load_similarity_dataset(const std::string& path) {
  SimilarityDataset ds = parse_similarity_dataset(read_file(path));
  for (auto& w : ds.warnings) w = path + ": " + w;
  return ds;
}

void SynthCorpusSpec::validate() const {
  if (identities.empty()) throw BenchError("synthetic corpus needs at least one identity pair");
  if (pole_a.empty() || pole_b.empty()) throw BenchError("both attribute poles must be non-empty");
  if (linkers.empty()) throw BenchError("synthetic corpus needs at least one linker");
  if (!(skew >= 0.5 && skew <= 1.0)) throw BenchError("skew must be in [0.5, 1]");
  std::set<std::string> a;
  for (const auto& w : pole_a) a.insert(text::lower(w));
  for (const auto& w : pole_b) {
    if (a.count(text::lower(w))) throw BenchError("attribute '" + w + "' appears in both poles");
  }
}

cda::Corpus synth_bias_corpus(const SynthCorpusSpec& spec) {
  spec.validate();
  Rng rng(Rng::splitmix(spec.seed ^ 0x73796e7468ULL));
  cda::Corpus corpus;
  corpus.sentences.reserve(spec.count);
  for (std::size_t i = 0; i < spec.count; ++i) {
    const auto& pair = spec.identities[rng.below(spec.identities.size())];
    const bool side_a = rng.bernoulli(0.5);
    const std::string& linker = spec.linkers[rng.below(spec.linkers.size())];
    const bool own_pole = rng.bernoulli(spec.skew);
    const auto& pole = (side_a == own_pole) ? spec.pole_a : spec.pole_b;
    const std::string& attribute = pole[rng.below(pole.size())];
    corpus.sentences.push_back(cda::Sentence::from_text((side_a ? pair.a : pair.b) + " " + linker + " " + attribute));
  }
  return corpus;
}

std::vector<cda::CounterfactualPair> synth_pairs(const SynthCorpusSpec& spec, cda::BiasDimension dimension) {
  std::vector<cda::CounterfactualPair> out;
  for (const auto& p : spec.identities) out.push_back({p.a, p.b, dimension});
  return out;
}

std::vector<metrics::StereoTriple> synth_stereo_triples(const SynthCorpusSpec& spec,
                                                        const std::vector<std::string>& meaningless,
                                                        cda::BiasDimension dimension) {
  spec.validate();
  if (meaningless.empty()) throw BenchError("need at least one meaningless filler");
  std::vector<metrics::StereoTriple> out;
  std::size_t n = 0;
  for (const auto& pair : spec.identities) {
    for (const auto& linker : spec.linkers) {
      for (int pole = 0; pole < 2; ++pole) {
        for (const auto& attribute : pole == 0 ? spec.pole_a : spec.pole_b) {
          metrics::StereoTriple t;
          t.id = "synth-" + std::to_string(n);
          t.context = std::string(metrics::kBlank) + " " + linker + " " + attribute;
          t.stereotype = pole == 0 ? pair.a : pair.b;
          t.anti_stereotype = pole == 0 ? pair.b : pair.a;
          t.meaningless = meaningless[n % meaningless.size()];
          t.dimension = dimension;
          out.push_back(std::move(t));
          ++n;
        }
      }
    }
  }
  return out;
}

}  // namespace debias::bench
