#include "debias/cda/proposer.hpp"

#include "debias/common/text.hpp"

#include <cstdlib>
#include <httplib.h>
#include <nlohmann/json.hpp>

namespace debias::cda {

using nlohmann::json;

StubProposer::StubProposer(const std::map<std::string, std::string>& lexicon) {
  for (const auto& [k, v] : lexicon) lexicon_.emplace(text::lower(k), v);
}

StubProposer StubProposer::from_pairs(const std::vector<CounterfactualPair>& pairs) {
  std::map<std::string, std::string> lex;
  for (const auto& p : pairs) {
    lex.emplace(text::lower(p.dominant), p.minority);
    lex.emplace(text::lower(p.minority), p.dominant);
  }
  return StubProposer(lex);
}

std::optional<std::string> StubProposer::propose(const ProposalRequest& request) {
  auto it = lexicon_.find(text::lower(request.term));
  if (it == lexicon_.end()) return std::nullopt;
  return it->second;
}

std::string encode_request(const ProposalRequest& request) {
  json seeds = json::array();
  for (const auto& p : request.seed_pairs) seeds.push_back({p.dominant, p.minority});
  json body = {{"bias_type", std::string(to_string(request.dimension))},
               {"seed_pairs", seeds},
               {"term", request.term}};
  return body.dump();
}

ProposalRequest decode_request(const std::string& body) {
  json j = json::parse(body);
  ProposalRequest req;
  req.dimension = parse_dimension(j.at("bias_type").get<std::string>());
  req.term = j.at("term").get<std::string>();
  for (const auto& pair : j.at("seed_pairs")) {
    req.seed_pairs.push_back({pair.at(0).get<std::string>(), pair.at(1).get<std::string>(), req.dimension});
  }
  return req;
}

std::string encode_response(const std::optional<std::string>& counterpart) {
  json body = {{"counterpart", counterpart ? json(*counterpart) : json(nullptr)}};
  return body.dump();
}

std::optional<std::string> decode_response(const std::string& body) {
  json j = json::parse(body);
  const json& c = j.at("counterpart");
  if (c.is_null()) return std::nullopt;
  return c.get<std::string>();
}

HttpProposer::HttpProposer(std::string url, int timeout_seconds) : timeout_seconds_(timeout_seconds) {
  auto scheme_end = url.find("://");
  std::size_t host_start = scheme_end == std::string::npos ? 0 : scheme_end + 3;
  auto path_start = url.find('/', host_start);
  if (path_start == std::string::npos) {
    base_ = url;
    path_ = "/";
  } else {
    base_ = url.substr(0, path_start);
    path_ = url.substr(path_start);
  }
}

std::optional<std::string> HttpProposer::propose(const ProposalRequest& request) {
  httplib::Client client(base_);
  client.set_connection_timeout(timeout_seconds_);
  client.set_read_timeout(timeout_seconds_);
  auto res = client.Post(path_, encode_request(request), "application/json");
  if (!res) throw ProposerTransportError("proposer request failed: " + httplib::to_string(res.error()));
  if (res->status != 200) {
    throw ProposerTransportError("proposer returned HTTP " + std::to_string(res->status));
  }
  try {
    return decode_response(res->body);
  } catch (const json::exception& e) {
    throw ProposerTransportError(std::string("malformed proposer response: ") + e.what());
  }
}

std::unique_ptr<PairProposer> proposer_from_env(StubProposer fallback) {
  const char* url = std::getenv(kProposerUrlEnv);
  if (url && *url) return std::make_unique<HttpProposer>(url);
  return std::make_unique<StubProposer>(std::move(fallback));
}

namespace {

// A proposer may answer with several candidates; the first one is used.
std::string first_candidate(std::string_view answer) {
  auto cut = answer.find_first_of(",;\n");
  return text::normalize_space(answer.substr(0, cut));
}

}  // namespace

ProposeResult propose_pairs(const TermCatalog& catalog,
                            const std::vector<CounterfactualPair>& seed_pairs,
                            PairProposer& proposer, BiasDimension dimension,
                            const ProposeOptions& options) {
  for (const auto& p : seed_pairs) {
    if (p.dimension != dimension) {
      throw std::invalid_argument("seed pair (" + p.dominant + ", " + p.minority +
                                  ") does not belong to dimension " + std::string(to_string(dimension)));
    }
  }
  ProposeResult result;
  auto& diag = result.diagnostics;
  for (const TermEntry& entry : catalog.entries(dimension)) {
    bool covered = false;
    for (const auto& s : seed_pairs) covered = covered || text::iequals(s.dominant, entry.term);
    if (covered) {
      diag.covered.push_back(entry.term);
      continue;
    }

    ProposalRequest request{dimension, seed_pairs, entry.term};
    std::optional<std::string> answer;
    bool delivered = false;
    for (int attempt = 0; attempt <= options.max_retries && !delivered; ++attempt) {
      try {
        answer = proposer.propose(request);
        delivered = true;
      } catch (const ProposerTransportError&) {
      }
    }
    if (!delivered) {
      diag.unresolved.push_back(entry.term);
      continue;
    }
    if (!answer) {
      diag.refused.push_back(entry.term);
      continue;
    }
    std::string counterpart = first_candidate(*answer);
    if (counterpart.empty() || text::iequals(counterpart, entry.term)) {
      diag.rejected.push_back(entry.term);
      continue;
    }
    result.pairs.push_back({entry.term, counterpart, dimension});
  }
  return result;
}

}  // namespace debias::cda
