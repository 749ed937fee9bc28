#pragma once

#include "debias/cda/terms.hpp"
#include "debias/cda/types.hpp"

#include <map>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace debias::cda {

struct ProposalRequest {
  BiasDimension dimension;
  std::vector<CounterfactualPair> seed_pairs;
  std::string term;
};

// Thrown by a proposer when the request could not be delivered or answered.
class ProposerTransportError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

// Answers "what is the counterpart of <term> for this bias dimension?".
// std::nullopt is a refusal.
class PairProposer {
public:
  virtual ~PairProposer() = default;
  virtual std::optional<std::string> propose(const ProposalRequest& request) = 0;
};

// Offline proposer backed by a fixed lexicon (keys matched case-insensitively).
class StubProposer final : public PairProposer {
public:
  StubProposer() = default;
  explicit StubProposer(const std::map<std::string, std::string>& lexicon);
  // Lexicon is every pair in both directions.
  static StubProposer from_pairs(const std::vector<CounterfactualPair>& pairs);

  std::optional<std::string> propose(const ProposalRequest& request) override;

private:
  std::map<std::string, std::string> lexicon_;
};

// POSTs the JSON request to an http(s) endpoint and reads {"counterpart": ...}.
class HttpProposer final : public PairProposer {
public:
  explicit HttpProposer(std::string url, int timeout_seconds = 30);
  std::optional<std::string> propose(const ProposalRequest& request) override;

private:
  std::string base_;
  std::string path_;
  int timeout_seconds_;
};

// Wire encoding shared by HttpProposer and any server implementing the endpoint.
std::string encode_request(const ProposalRequest& request);
ProposalRequest decode_request(const std::string& body);
std::string encode_response(const std::optional<std::string>& counterpart);
std::optional<std::string> decode_response(const std::string& body);

inline constexpr const char* kProposerUrlEnv = "MAFIA_PROPOSER_URL";

// HttpProposer when MAFIA_PROPOSER_URL is set, otherwise the supplied stub.
std::unique_ptr<PairProposer> proposer_from_env(StubProposer fallback);

struct ProposeOptions {
  int max_retries = 3;
};

struct ProposeDiagnostics {
  std::vector<std::string> covered;     // already dominant in a seed pair
  std::vector<std::string> refused;     // proposer returned null
  std::vector<std::string> rejected;    // empty or self counterpart
  std::vector<std::string> unresolved;  // transport kept failing
};

struct ProposeResult {
  std::vector<CounterfactualPair> pairs;
  ProposeDiagnostics diagnostics;
};

ProposeResult propose_pairs(const TermCatalog& catalog,
                            const std::vector<CounterfactualPair>& seed_pairs,
                            PairProposer& proposer, BiasDimension dimension,
                            const ProposeOptions& options = {});

}  // namespace debias::cda
