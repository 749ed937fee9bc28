#include "debias/metrics/benchmarks.hpp"

#include "debias/common/io.hpp"
#include "debias/common/text.hpp"

#include <algorithm>
#include <cmath>
#include <nlohmann/json.hpp>
#include <unordered_map>

namespace debias::metrics {

using tinylm::Mat;
using tinylm::Vocabulary;

void validate(const StereoTriple& t) {
  const auto first = t.context.find(kBlank);
  if (first == std::string::npos || t.context.find(kBlank, first + 1) != std::string::npos) {
    throw MetricError("triple " + t.id + ": context must contain exactly one " + std::string(kBlank));
  }
  const std::string s = text::lower(t.stereotype), a = text::lower(t.anti_stereotype), m = text::lower(t.meaningless);
  if (s.empty() || a.empty() || m.empty() || s == a || s == m || a == m) {
    throw MetricError("triple " + t.id + ": fills must be three distinct non-empty strings");
  }
}

void validate(const CrowsPair& p) {
  if (Vocabulary::words(p.stereotypical) == Vocabulary::words(p.anti_stereotypical)) {
    throw MetricError("pair " + p.id + ": sentences do not differ in any token");
  }
}

Rendered render(const StereoTriple& t, std::string_view fill) {
  validate(t);
  const auto at = t.context.find(kBlank);
  Rendered r;
  r.words = Vocabulary::words(std::string_view(t.context).substr(0, at));
  for (auto& w : Vocabulary::words(fill)) {
    r.fill_positions.push_back(static_cast<int>(r.words.size()));
    r.words.push_back(std::move(w));
  }
  for (auto& w : Vocabulary::words(std::string_view(t.context).substr(at + kBlank.size()))) r.words.push_back(std::move(w));
  return r;
}

UniqueTokens unique_tokens(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  const std::size_t n = a.size(), m = b.size();
  std::vector<std::vector<int>> lcs(n + 1, std::vector<int>(m + 1, 0));
  for (std::size_t i = n; i-- > 0;) {
    for (std::size_t j = m; j-- > 0;) {
      lcs[i][j] = a[i] == b[j] ? lcs[i + 1][j + 1] + 1 : std::max(lcs[i + 1][j], lcs[i][j + 1]);
    }
  }
  UniqueTokens u;
  std::size_t i = 0, j = 0;
  while (i < n && j < m) {
    if (a[i] == b[j]) {
      ++i;
      ++j;
    } else if (lcs[i + 1][j] >= lcs[i][j + 1]) {
      u.first.push_back(static_cast<int>(i++));
    } else {
      u.second.push_back(static_cast<int>(j++));
    }
  }
  for (; i < n; ++i) u.first.push_back(static_cast<int>(i));
  for (; j < m; ++j) u.second.push_back(static_cast<int>(j));
  return u;
}

double pll_score(const tinylm::ModelGraph& model, const tinylm::ForwardPlan& plan, const std::vector<int>& ids,
                 const std::vector<int>& targets, Aggregation agg) {
  if (targets.empty()) throw MetricError("pseudo-log-likelihood needs at least one target position");
  const std::vector<std::uint8_t> mask(ids.size(), 1);
  double total = 0.0;
  for (int t : targets) {
    if (t < 0 || static_cast<std::size_t>(t) >= ids.size()) {
      throw MetricError("target position " + std::to_string(t) + " outside a sequence of length " +
                        std::to_string(ids.size()));
    }
    std::vector<int> masked = ids;
    masked[static_cast<std::size_t>(t)] = tinylm::kMaskId;
    const Mat h = model.encode(masked, mask, plan);
    const Mat logits = model.mlm_logits(h.row(t));
    const Eigen::VectorXd row = logits.row(0).transpose();
    const double mx = row.maxCoeff();
    const double log_z = mx + std::log((row.array() - mx).exp().sum());
    const double log_p = row(ids[static_cast<std::size_t>(t)]) - log_z;
    total += agg == Aggregation::mean_log_prob ? log_p : std::exp(log_p);
  }
  return total / static_cast<double>(targets.size());
}

double ModelScorer::score(const std::vector<std::string>& words, const std::vector<int>& targets) const {
  std::vector<int> ids{tinylm::kClsId};
  for (const auto& w : words) ids.push_back(vocab_.id(w));
  ids.push_back(tinylm::kSepId);
  std::vector<int> shifted;
  for (int t : targets) {
    if (t < 0 || static_cast<std::size_t>(t) >= words.size()) {
      throw MetricError("target position " + std::to_string(t) + " outside a sentence of " +
                        std::to_string(words.size()) + " words");
    }
    shifted.push_back(t + 1);
  }
  return pll_score(model_, plan_, ids, shifted, agg_);
}

double tie_aware_percent(std::size_t wins, std::size_t ties, std::size_t total) {
  if (total == 0) throw MetricError("percentage over zero items");
  return 100.0 * (static_cast<double>(wins) + 0.5 * static_cast<double>(ties)) / static_cast<double>(total);
}

StereoSetResult stereoset_from_scores(const std::vector<TripleScores>& scores) {
  if (scores.empty()) throw MetricError("stereotype evaluation needs at least one triple");
  std::size_t ss_win = 0, ss_tie = 0, lm_win = 0, lm_tie = 0;
  for (const auto& s : scores) {
    if (s.stereo > s.anti) ++ss_win;
    else if (s.stereo == s.anti) ++ss_tie;
    const double best = std::max(s.stereo, s.anti);
    if (best > s.meaningless) ++lm_win;
    else if (best == s.meaningless) ++lm_tie;
  }
  return {tie_aware_percent(ss_win, ss_tie, scores.size()), tie_aware_percent(lm_win, lm_tie, scores.size()),
          scores.size()};
}

std::vector<TripleScores> score_triples(const SentenceScorer& scorer, const std::vector<StereoTriple>& triples) {
  std::vector<TripleScores> out;
  out.reserve(triples.size());
  for (const auto& t : triples) {
    auto fill_score = [&](const std::string& fill) {
      const Rendered r = render(t, fill);
      return scorer.score(r.words, r.fill_positions);
    };
    out.push_back({t.id, t.dimension, fill_score(t.stereotype), fill_score(t.anti_stereotype),
                   fill_score(t.meaningless)});
  }
  return out;
}

StereoSetResult stereoset_eval(const SentenceScorer& scorer, const std::vector<StereoTriple>& triples) {
  return stereoset_from_scores(score_triples(scorer, triples));
}

CrowsResult crows_from_scores(const std::vector<PairScores>& scores) {
  if (scores.empty()) throw MetricError("minimal-pair evaluation needs at least one scored pair");
  std::size_t wins = 0, ties = 0;
  for (const auto& s : scores) {
    if (s.stereo > s.anti) ++wins;
    else if (s.stereo == s.anti) ++ties;
  }
  return {tie_aware_percent(wins, ties, scores.size()), scores.size(), {}};
}

CrowsResult crows_eval(const SentenceScorer& scorer, const std::vector<CrowsPair>& pairs) {
  std::vector<PairScores> scores;
  std::vector<std::string> skipped;
  for (const auto& p : pairs) {
    validate(p);
    const auto a = Vocabulary::words(p.stereotypical), b = Vocabulary::words(p.anti_stereotypical);
    const UniqueTokens u = unique_tokens(a, b);
    if (u.first.empty() || u.second.empty()) {
      skipped.push_back(p.id);
      continue;
    }
    scores.push_back({p.id, p.dimension, scorer.score(a, u.first), scorer.score(b, u.second)});
  }
  CrowsResult r = crows_from_scores(scores);
  r.skipped = std::move(skipped);
  return r;
}

double bias_sts_delta(const std::vector<SimilarityScores>& tuples, double scale) {
  if (tuples.empty()) throw MetricError("similarity delta needs at least one tuple");
  if (!(scale > 0.0)) throw MetricError("similarity scale must be positive");
  double total = 0.0;
  for (const auto& t : tuples) {
    std::vector<double> s(t.scores);
    for (double& v : s) v /= scale;
    total += multiway_delta(s);
  }
  return total / static_cast<double>(tuples.size());
}

// ---- score logs ----

namespace {

template <typename F>
void for_each_json_line(std::string_view contents, const char* what, F&& f) {
  std::size_t line_no = 0;
  for (const auto& line : text::split(contents, '\n')) {
    ++line_no;
    if (text::trim(line).empty()) continue;
    try {
      f(nlohmann::json::parse(line));
    } catch (const nlohmann::json::exception& e) {
      throw MetricError(std::string(what) + " line " + std::to_string(line_no) + ": " + e.what());
    } catch (const std::invalid_argument& e) {
      throw MetricError(std::string(what) + " line " + std::to_string(line_no) + ": " + e.what());
    }
  }
}

std::string dump_lines(const std::vector<nlohmann::json>& rows) {
  std::string out;
  for (const auto& r : rows) out += r.dump() + "\n";
  return out;
}

std::vector<std::pair<std::string, std::vector<const ScoreRecord*>>> group_by_id(const std::vector<ScoreRecord>& records) {
  std::vector<std::pair<std::string, std::vector<const ScoreRecord*>>> groups;
  std::unordered_map<std::string, std::size_t> index;
  for (const auto& r : records) {
    auto [it, fresh] = index.emplace(r.id, groups.size());
    if (fresh) groups.push_back({r.id, {}});
    groups[it->second].second.push_back(&r);
  }
  return groups;
}

std::map<std::string, double> roles(const std::string& id, const std::vector<const ScoreRecord*>& recs) {
  std::map<std::string, double> out;
  for (const auto* r : recs) {
    if (r->dimension != recs.front()->dimension) throw MetricError("score log id " + id + " mixes dimensions");
    if (!out.emplace(r->role, r->score).second) throw MetricError("score log id " + id + " repeats role " + r->role);
  }
  return out;
}

double need(const std::map<std::string, double>& roles, const std::string& id, const std::string& role) {
  auto it = roles.find(role);
  if (it == roles.end()) throw MetricError("score log id " + id + " lacks role " + role);
  return it->second;
}

}  // namespace

std::vector<ScoreRecord> parse_score_log(std::string_view contents) {
  std::vector<ScoreRecord> out;
  for_each_json_line(contents, "score log", [&](const nlohmann::json& j) {
    ScoreRecord r;
    r.id = j.at("id").is_string() ? j.at("id").get<std::string>() : j.at("id").dump();
    r.dimension = cda::parse_dimension(j.at("dimension").get<std::string>());
    r.role = j.at("role").get<std::string>();
    r.score = j.at("score").get<double>();
    const bool known = r.role == "stereo" || r.role == "anti" || r.role == "meaningless" ||
                       (r.role.rfind("component-", 0) == 0 && r.role.size() > 10 &&
                        std::all_of(r.role.begin() + 10, r.role.end(), [](char c) { return c >= '0' && c <= '9'; }));
    if (!known) throw std::invalid_argument("unknown role '" + r.role + "'");
    if (!std::isfinite(r.score)) throw std::invalid_argument("score is not finite");
    out.push_back(std::move(r));
  });
  return out;
}

std::vector<ScoreRecord> load_score_log(const std::string& path) { return parse_score_log(read_file(path)); }

std::string serialize_score_log(const std::vector<ScoreRecord>& records) {
  std::vector<nlohmann::json> rows;
  for (const auto& r : records) {
    rows.push_back({{"id", r.id}, {"dimension", cda::to_string(r.dimension)}, {"role", r.role}, {"score", r.score}});
  }
  return dump_lines(rows);
}

std::vector<TripleScores> triples_from_log(const std::vector<ScoreRecord>& records) {
  std::vector<TripleScores> out;
  for (const auto& [id, recs] : group_by_id(records)) {
    const auto r = roles(id, recs);
    out.push_back({id, recs.front()->dimension, need(r, id, "stereo"), need(r, id, "anti"), need(r, id, "meaningless")});
  }
  return out;
}

std::vector<PairScores> pairs_from_log(const std::vector<ScoreRecord>& records) {
  std::vector<PairScores> out;
  for (const auto& [id, recs] : group_by_id(records)) {
    const auto r = roles(id, recs);
    out.push_back({id, recs.front()->dimension, need(r, id, "stereo"), need(r, id, "anti")});
  }
  return out;
}

std::vector<SimilarityScores> tuples_from_log(const std::vector<ScoreRecord>& records) {
  std::vector<SimilarityScores> out;
  for (const auto& [id, recs] : group_by_id(records)) {
    const auto r = roles(id, recs);
    SimilarityScores t{id, recs.front()->dimension, {}};
    for (std::size_t i = 0; i < r.size(); ++i) t.scores.push_back(need(r, id, "component-" + std::to_string(i)));
    if (t.scores.size() < 2) throw MetricError("score log tuple " + id + " has fewer than 2 components");
    out.push_back(std::move(t));
  }
  return out;
}

std::vector<ScoreRecord> to_records(const std::vector<TripleScores>& scores) {
  std::vector<ScoreRecord> out;
  for (const auto& s : scores) {
    out.push_back({s.id, s.dimension, "stereo", s.stereo});
    out.push_back({s.id, s.dimension, "anti", s.anti});
    out.push_back({s.id, s.dimension, "meaningless", s.meaningless});
  }
  return out;
}

std::vector<ScoreRecord> to_records(const std::vector<PairScores>& scores) {
  std::vector<ScoreRecord> out;
  for (const auto& s : scores) {
    out.push_back({s.id, s.dimension, "stereo", s.stereo});
    out.push_back({s.id, s.dimension, "anti", s.anti});
  }
  return out;
}

std::vector<ScoreRecord> to_records(const std::vector<SimilarityScores>& tuples) {
  std::vector<ScoreRecord> out;
  for (const auto& t : tuples) {
    for (std::size_t i = 0; i < t.scores.size(); ++i) {
      out.push_back({t.tuple_id, t.dimension, "component-" + std::to_string(i), t.scores[i]});
    }
  }
  return out;
}

// ---- suites ----

std::vector<StereoTriple> parse_stereo_triples(std::string_view contents) {
  std::vector<StereoTriple> out;
  for_each_json_line(contents, "stereotype suite", [&](const nlohmann::json& j) {
    StereoTriple t{j.at("id").get<std::string>(),
                   j.at("context").get<std::string>(),
                   j.at("stereotype").get<std::string>(),
                   j.at("anti_stereotype").get<std::string>(),
                   j.at("meaningless").get<std::string>(),
                   cda::parse_dimension(j.at("dimension").get<std::string>())};
    try {
      validate(t);
    } catch (const MetricError& e) {
      throw std::invalid_argument(e.what());
    }
    out.push_back(std::move(t));
  });
  return out;
}

std::string serialize_stereo_triples(const std::vector<StereoTriple>& triples) {
  std::vector<nlohmann::json> rows;
  for (const auto& t : triples) {
    rows.push_back({{"id", t.id},
                    {"dimension", cda::to_string(t.dimension)},
                    {"context", t.context},
                    {"stereotype", t.stereotype},
                    {"anti_stereotype", t.anti_stereotype},
                    {"meaningless", t.meaningless}});
  }
  return dump_lines(rows);
}

std::vector<CrowsPair> parse_crows_pairs(std::string_view contents) {
  std::vector<CrowsPair> out;
  for_each_json_line(contents, "minimal-pair suite", [&](const nlohmann::json& j) {
    CrowsPair p{j.at("id").get<std::string>(), j.at("stereotypical").get<std::string>(),
                j.at("anti_stereotypical").get<std::string>(),
                cda::parse_dimension(j.at("dimension").get<std::string>())};
    try {
      validate(p);
    } catch (const MetricError& e) {
      throw std::invalid_argument(e.what());
    }
    out.push_back(std::move(p));
  });
  return out;
}

std::string serialize_crows_pairs(const std::vector<CrowsPair>& pairs) {
  std::vector<nlohmann::json> rows;
  for (const auto& p : pairs) {
    rows.push_back({{"id", p.id},
                    {"dimension", cda::to_string(p.dimension)},
                    {"stereotypical", p.stereotypical},
                    {"anti_stereotypical", p.anti_stereotypical}});
  }
  return dump_lines(rows);
}

std::vector<AnnotatedComment> parse_comments(std::string_view contents) {
  std::vector<AnnotatedComment> out;
  for_each_json_line(contents, "comment file", [&](const nlohmann::json& j) {
    AnnotatedComment c;
    c.text = j.at("text").get<std::string>();
    c.label = j.at("label").get<int>();
    c.score = j.at("score").get<double>();
    for (const auto& g : j.value("subgroups", nlohmann::json::array())) c.subgroups.insert(g.get<std::string>());
    if (!(c.score >= 0.0 && c.score <= 1.0)) throw std::invalid_argument("score outside [0, 1]");
    try {
      validate_comments(std::span<const AnnotatedComment>(&c, 1));
    } catch (const MetricError& e) {
      throw std::invalid_argument(e.what());
    }
    out.push_back(std::move(c));
  });
  return out;
}

std::string serialize_comments(const std::vector<AnnotatedComment>& comments) {
  std::vector<nlohmann::json> rows;
  for (const auto& c : comments) {
    rows.push_back({{"text", c.text},
                    {"label", c.label},
                    {"score", c.score},
                    {"subgroups", std::vector<std::string>(c.subgroups.begin(), c.subgroups.end())}});
  }
  return dump_lines(rows);
}

}  // namespace debias::metrics
