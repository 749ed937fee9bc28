#pragma once

#include "debias/cda/types.hpp"
#include "debias/metrics/fairness.hpp"
#include "debias/tinylm/model.hpp"
#include "debias/tinylm/tokenizer.hpp"

#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace debias::metrics {

// ---- instances ----

inline constexpr std::string_view kBlank = "BLANK";

struct StereoTriple {
  std::string id;
  std::string context;  // contains kBlank exactly once
  std::string stereotype, anti_stereotype, meaningless;
  cda::BiasDimension dimension = cda::BiasDimension::gender;
};

struct CrowsPair {
  std::string id;
  std::string stereotypical, anti_stereotypical;
  cda::BiasDimension dimension = cda::BiasDimension::gender;
};

// Throws MetricError on a broken invariant.
void validate(const StereoTriple& t);
void validate(const CrowsPair& p);

// Word tokens of the context with `fill` substituted, and the positions the
// fill occupies.
struct Rendered {
  std::vector<std::string> words;
  std::vector<int> fill_positions;
};
Rendered render(const StereoTriple& t, std::string_view fill);

// Positions of each side not on the longest common word subsequence.
struct UniqueTokens {
  std::vector<int> first, second;
};
UniqueTokens unique_tokens(const std::vector<std::string>& a, const std::vector<std::string>& b);

// ---- scoring ----

enum class Aggregation { mean_log_prob, mean_prob };

// Scores word positions of a word sequence.
class SentenceScorer {
public:
  virtual ~SentenceScorer() = default;
  virtual double score(const std::vector<std::string>& words, const std::vector<int>& targets) const = 0;
};

// Mean over targets of log p(original token) with that single position
// replaced by [MASK]; one forward pass per target. `ids` positions are token
// positions (including [CLS]).
double pll_score(const tinylm::ModelGraph& model, const tinylm::ForwardPlan& plan, const std::vector<int>& ids,
                 const std::vector<int>& targets, Aggregation agg = Aggregation::mean_log_prob);

class ModelScorer : public SentenceScorer {
public:
  ModelScorer(const tinylm::ModelGraph& model, const tinylm::Vocabulary& vocab, tinylm::ForwardPlan plan,
              Aggregation agg = Aggregation::mean_log_prob)
      : model_(model), vocab_(vocab), plan_(std::move(plan)), agg_(agg) {}

  // Word position i maps to token position i + 1 (after [CLS]).
  double score(const std::vector<std::string>& words, const std::vector<int>& targets) const override;

private:
  const tinylm::ModelGraph& model_;
  const tinylm::Vocabulary& vocab_;
  tinylm::ForwardPlan plan_;
  Aggregation agg_;
};

// Percentage with ties counted as half.
double tie_aware_percent(std::size_t wins, std::size_t ties, std::size_t total);

struct TripleScores {
  std::string id;
  cda::BiasDimension dimension = cda::BiasDimension::gender;
  double stereo = 0, anti = 0, meaningless = 0;
};

struct StereoSetResult {
  double ss = 0.0;
  double lm_score = 0.0;
  std::size_t count = 0;
};

StereoSetResult stereoset_from_scores(const std::vector<TripleScores>& scores);
std::vector<TripleScores> score_triples(const SentenceScorer& scorer, const std::vector<StereoTriple>& triples);
StereoSetResult stereoset_eval(const SentenceScorer& scorer, const std::vector<StereoTriple>& triples);

struct PairScores {
  std::string id;
  cda::BiasDimension dimension = cda::BiasDimension::gender;
  double stereo = 0, anti = 0;
};

struct CrowsResult {
  double ss = 0.0;
  std::size_t count = 0;
  std::vector<std::string> skipped;  // ids with an empty unique-token set
};

CrowsResult crows_from_scores(const std::vector<PairScores>& scores);
CrowsResult crows_eval(const SentenceScorer& scorer, const std::vector<CrowsPair>& pairs);

// ---- similarity tuples ----

struct SimilarityScores {
  std::string tuple_id;
  cda::BiasDimension dimension = cda::BiasDimension::gender;
  std::vector<double> scores;  // model similarity per identity component, on the 0-5 scale
};

inline constexpr double kSimilarityScale = 5.0;

// Mean over tuples of the multi-way delta of scores / scale, so the result
// lies in [0, 1].
double bias_sts_delta(const std::vector<SimilarityScores>& tuples, double scale = kSimilarityScale);

// ---- score logs ----

// One line per record: {"id", "dimension", "role", "score"} where role is
// stereo | anti | meaningless | component-<i>.
struct ScoreRecord {
  std::string id;
  cda::BiasDimension dimension = cda::BiasDimension::gender;
  std::string role;
  double score = 0.0;
};

std::vector<ScoreRecord> parse_score_log(std::string_view contents);
std::vector<ScoreRecord> load_score_log(const std::string& path);
std::string serialize_score_log(const std::vector<ScoreRecord>& records);

std::vector<TripleScores> triples_from_log(const std::vector<ScoreRecord>& records);
std::vector<PairScores> pairs_from_log(const std::vector<ScoreRecord>& records);
std::vector<SimilarityScores> tuples_from_log(const std::vector<ScoreRecord>& records);

std::vector<ScoreRecord> to_records(const std::vector<TripleScores>& scores);
std::vector<ScoreRecord> to_records(const std::vector<PairScores>& scores);
std::vector<ScoreRecord> to_records(const std::vector<SimilarityScores>& tuples);

// ---- suites on disk ----

// JSONL: {"id", "dimension", "context", "stereotype", "anti_stereotype", "meaningless"}.
std::vector<StereoTriple> parse_stereo_triples(std::string_view contents);
std::string serialize_stereo_triples(const std::vector<StereoTriple>& triples);
// JSONL: {"id", "dimension", "stereotypical", "anti_stereotypical"}.
std::vector<CrowsPair> parse_crows_pairs(std::string_view contents);
std::string serialize_crows_pairs(const std::vector<CrowsPair>& pairs);

// JSONL: {"text", "label", "score", "subgroups": [...]}.
std::vector<AnnotatedComment> parse_comments(std::string_view contents);
std::string serialize_comments(const std::vector<AnnotatedComment>& comments);

}  // namespace debias::metrics
