#include "debias/metrics/report.hpp"

#include "debias/common/text.hpp"

#include <cmath>
#include <cstdio>

namespace debias::metrics {

namespace {

nlohmann::json opt(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); }

std::optional<double> get_opt(const nlohmann::json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return j.at(key).get<double>();
}

nlohmann::json jigsaw_to_json(const JigsawReport& r) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& row : r.rows) {
    rows.push_back({{"subgroup", row.subgroup},
                    {"count", row.count},
                    {"subgroup_auc", opt(row.metrics.subgroup_auc)},
                    {"bpsn_auc", opt(row.metrics.bpsn_auc)},
                    {"bnsp_auc", opt(row.metrics.bnsp_auc)}});
  }
  return {{"overall_auc", r.overall_auc},
          {"subgroups", rows},
          {"mean_subgroup_auc", opt(r.mean_subgroup_auc)},
          {"mean_bpsn_auc", opt(r.mean_bpsn_auc)},
          {"mean_bnsp_auc", opt(r.mean_bnsp_auc)},
          {"overall", opt(r.overall)}};
}

JigsawReport jigsaw_from_json(const nlohmann::json& j) {
  JigsawReport r;
  r.overall_auc = j.at("overall_auc").get<double>();
  for (const auto& row : j.at("subgroups")) {
    r.rows.push_back({row.at("subgroup").get<std::string>(), row.at("count").get<std::size_t>(),
                      {get_opt(row, "subgroup_auc"), get_opt(row, "bpsn_auc"), get_opt(row, "bnsp_auc")}});
  }
  r.mean_subgroup_auc = get_opt(j, "mean_subgroup_auc");
  r.mean_bpsn_auc = get_opt(j, "mean_bpsn_auc");
  r.mean_bnsp_auc = get_opt(j, "mean_bnsp_auc");
  r.overall = get_opt(j, "overall");
  return r;
}

}  // namespace

bool operator==(const JigsawReport& a, const JigsawReport& b) {
  return jigsaw_to_json(a) == jigsaw_to_json(b);
}

bool operator==(const BiasReport& a, const BiasReport& b) { return a.to_json() == b.to_json(); }

void BiasReport::derive() {
  std::vector<double> deltas;
  for (auto& [dim, m] : dimensions) {
    if (m.delta) {
      deltas.push_back(*m.delta);
      if (rho) m.psi = useful_fairness(*rho, *m.delta, alpha);
    }
  }
  if (!deltas.empty()) delta_average = mean(deltas);
  if (rho && delta_average) psi_average = useful_fairness(*rho, *delta_average, alpha);
}

nlohmann::json BiasReport::to_json() const {
  nlohmann::json dims = nlohmann::json::object();
  for (const auto& [dim, m] : dimensions) {
    dims[std::string(cda::to_string(dim))] = {{"ss", opt(m.ss)},
                                               {"lm_score", opt(m.lm_score)},
                                               {"crows_ss", opt(m.crows_ss)},
                                               {"delta", opt(m.delta)},
                                               {"psi", opt(m.psi)}};
  }
  return {{"schema_version", schema_version},
          {"name", name},
          {"dimensions", dims},
          {"rho", opt(rho)},
          {"alpha", alpha},
          {"delta_average", opt(delta_average)},
          {"psi_average", opt(psi_average)},
          {"jigsaw", jigsaw ? jigsaw_to_json(*jigsaw) : nlohmann::json(nullptr)},
          {"provenance", provenance}};
}

BiasReport BiasReport::from_json(const nlohmann::json& j) {
  try {
    BiasReport r;
    r.schema_version = j.at("schema_version").get<int>();
    r.name = j.value("name", "");
    for (const auto& [key, m] : j.at("dimensions").items()) {
      r.dimensions[cda::parse_dimension(key)] = {get_opt(m, "ss"), get_opt(m, "lm_score"), get_opt(m, "crows_ss"),
                                                 get_opt(m, "delta"), get_opt(m, "psi")};
    }
    r.rho = get_opt(j, "rho");
    r.alpha = j.value("alpha", 1.0);
    r.delta_average = get_opt(j, "delta_average");
    r.psi_average = get_opt(j, "psi_average");
    if (j.contains("jigsaw") && !j.at("jigsaw").is_null()) r.jigsaw = jigsaw_from_json(j.at("jigsaw"));
    r.provenance = j.value("provenance", nlohmann::json::object());
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw ReportError(std::string("malformed report: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw ReportError(std::string("malformed report: ") + e.what());
  }
}

BiasReport merge(const BiasReport& base, const BiasReport& update) {
  if (base.schema_version != update.schema_version) throw ReportError("cannot merge reports with different schema versions");
  BiasReport r = base;
  if (!update.name.empty()) r.name = update.name;
  for (const auto& [dim, m] : update.dimensions) {
    auto& t = r.dimensions[dim];
    if (m.ss) t.ss = m.ss;
    if (m.lm_score) t.lm_score = m.lm_score;
    if (m.crows_ss) t.crows_ss = m.crows_ss;
    if (m.delta) t.delta = m.delta;
    if (m.psi) t.psi = m.psi;
  }
  if (update.rho) r.rho = update.rho;
  r.alpha = update.alpha;
  if (update.jigsaw) r.jigsaw = update.jigsaw;
  for (const auto& [k, v] : update.provenance.items()) r.provenance[k] = v;
  r.derive();
  return r;
}

ReportFormat parse_report_format(const std::string& s) {
  if (s == "table") return ReportFormat::table;
  if (s == "records") return ReportFormat::records;
  throw std::invalid_argument("unknown report format '" + s + "' (expected table or records)");
}

namespace {

std::string cell(const std::optional<double>& v, int width) {
  char buf[32];
  if (v) std::snprintf(buf, sizeof buf, "%*.2f", width, round_half_up(*v));
  else std::snprintf(buf, sizeof buf, "%*s", width, "-");
  return buf;
}

std::string label(const std::string& s, std::size_t width) {
  std::string out = s.empty() ? "(unnamed)" : s;
  if (out.size() < width) out.append(width - out.size(), ' ');
  return out;
}

void check_psi(const BiasReport& r) {
  auto check = [&](const std::optional<double>& stored, const std::optional<double>& delta, const std::string& what) {
    if (!stored || !r.rho || !delta) return;
    const double recomputed = useful_fairness(*r.rho, *delta, r.alpha);
    if (std::abs(recomputed - *stored) > 0.01 + 1e-12) {
      char buf[200];
      std::snprintf(buf, sizeof buf, "report '%s': stored %s %.6f disagrees with rho*alpha*(1-delta) = %.6f",
                    r.name.c_str(), what.c_str(), *stored, recomputed);
      throw ReportError(buf);
    }
  };
  for (const auto& [dim, m] : r.dimensions) check(m.psi, m.delta, "psi_" + std::string(cda::to_string(dim)));
  check(r.psi_average, r.delta_average, "psi_average");
}

}  // namespace

std::string report_emit(const std::vector<BiasReport>& reports, ReportFormat format) {
  if (reports.empty()) throw ReportError("no reports to emit");
  for (const auto& r : reports) {
    if (r.schema_version != reports.front().schema_version) {
      throw ReportError("reports have different schema versions (" + std::to_string(reports.front().schema_version) +
                        " and " + std::to_string(r.schema_version) + ")");
    }
    check_psi(r);
  }
  if (format == ReportFormat::records) {
    std::string out;
    for (const auto& r : reports) out += r.to_json().dump() + "\n";
    return out;
  }

  std::size_t w = 5;
  for (const auto& r : reports) w = std::max(w, r.name.size());
  w += 2;
  using cda::BiasDimension;
  auto dim = [](const BiasReport& r, BiasDimension d) -> const DimensionMetrics* {
    auto it = r.dimensions.find(d);
    return it == r.dimensions.end() ? nullptr : &it->second;
  };

  std::string out = label("model", w) + "    rho  d_gender  d_race  d_religion  d_average  psi_average\n";
  for (const auto& r : reports) {
    auto delta = [&](BiasDimension d) {
      const auto* m = dim(r, d);
      return m ? m->delta : std::nullopt;
    };
    out += label(r.name, w) + cell(r.rho, 7) + cell(delta(BiasDimension::gender), 10) +
           cell(delta(BiasDimension::race), 8) + cell(delta(BiasDimension::religion), 12) +
           cell(r.delta_average, 11) + cell(r.psi_average, 13) + "\n";
  }

  bool intrinsic = false;
  for (const auto& r : reports) {
    for (const auto& [d, m] : r.dimensions) intrinsic |= m.ss || m.crows_ss || m.lm_score;
  }
  if (intrinsic) {
    out += "\n" + label("model", w) + "dimension      ss  crows_ss  lm_score\n";
    for (const auto& r : reports) {
      for (const auto& [d, m] : r.dimensions) {
        if (!(m.ss || m.crows_ss || m.lm_score)) continue;
        out += label(r.name, w) + label(std::string(cda::to_string(d)), 10) + cell(m.ss, 7) + cell(m.crows_ss, 10) +
               cell(m.lm_score, 10) + "\n";
      }
    }
  }

  bool toxicity = false;
  for (const auto& r : reports) toxicity |= r.jigsaw.has_value();
  if (toxicity) {
    out += "\n" + label("model", w) + label("subgroup", 30) + "  count  subgroup_auc  bpsn_auc  bnsp_auc\n";
    for (const auto& r : reports) {
      if (!r.jigsaw) continue;
      for (const auto& row : r.jigsaw->rows) {
        char count[16];
        std::snprintf(count, sizeof count, "%7zu", row.count);
        out += label(r.name, w) + label(row.subgroup, 30) + count + cell(row.metrics.subgroup_auc, 14) +
               cell(row.metrics.bpsn_auc, 10) + cell(row.metrics.bnsp_auc, 10) + "\n";
      }
      out += label(r.name, w) + label("overall_auc", 30) + "       " + cell(r.jigsaw->overall_auc, 14) + "\n";
      out += label(r.name, w) + label("overall", 30) + "       " + cell(r.jigsaw->overall, 14) + "\n";
    }
  }
  return out;
}

std::vector<BiasReport> parse_records(std::string_view contents) {
  std::vector<BiasReport> out;
  std::size_t line_no = 0;
  for (const auto& line : text::split(contents, '\n')) {
    ++line_no;
    if (text::trim(line).empty()) continue;
    try {
      out.push_back(BiasReport::from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw ReportError("report records line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace debias::metrics
