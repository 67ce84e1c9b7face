// Segment-level correlation harness: WMT relative-ranking Kendall's tau and
// Pearson's r, with per-group reporting.
#pragma once

#include <cmath>
#include <cstdio>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "tensor.hpp"

namespace unite {

/// Metric scores for a human-preferred and a dispreferred hypothesis.
struct RelativeRankingPair {
  double better = 0.0;
  double worse = 0.0;
};

enum class TiePolicy { Discordant, Excluded };

inline TiePolicy parse_tie_policy(std::string_view s) {
  if (s == "discordant") return TiePolicy::Discordant;
  if (s == "excluded") return TiePolicy::Excluded;
  throw Error("unknown tie policy: " + std::string(s));
}

struct KendallCounts {
  std::size_t concordant = 0;
  std::size_t discordant = 0;
  std::size_t ties = 0;
};

inline KendallCounts kendall_counts(std::span<const RelativeRankingPair> pairs, TiePolicy ties) {
  KendallCounts c;
  for (const auto& p : pairs) {
    if (!std::isfinite(p.better) || !std::isfinite(p.worse)) throw Error("non-finite metric score");
    if (p.better > p.worse) {
      ++c.concordant;
    } else if (p.better < p.worse) {
      ++c.discordant;
    } else {
      ++c.ties;
      if (ties == TiePolicy::Discordant) ++c.discordant;
    }
  }
  return c;
}

/// (Concordant - Discordant) / (Concordant + Discordant).
inline double kendall_wmt(std::span<const RelativeRankingPair> pairs, TiePolicy ties = TiePolicy::Discordant) {
  if (pairs.empty()) throw Error("kendall: empty pair list");
  const auto c = kendall_counts(pairs, ties);
  const double denom = static_cast<double>(c.concordant + c.discordant);
  if (denom == 0.0) throw Error("kendall: every pair is a metric tie");
  return (static_cast<double>(c.concordant) - static_cast<double>(c.discordant)) / denom;
}

inline double pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw Error("pearson: length mismatch");
  if (x.size() < 2) throw Error("pearson: need at least two points");
  const double n = static_cast<double>(x.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) mx += x[i], my += y[i];
  mx /= n, my /= n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - mx, dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0) throw Error("zero variance");
  const double r = sxy / std::sqrt(sxx * syy);
  return std::clamp(r, -1.0, 1.0);
}

enum class Measure { Kendall, Pearson };

inline Measure parse_measure(std::string_view s) {
  if (s == "kendall") return Measure::Kendall;
  if (s == "pearson") return Measure::Pearson;
  throw Error("unknown measure: " + std::string(s));
}

inline std::string_view to_string(Measure m) { return m == Measure::Kendall ? "kendall" : "pearson"; }

struct GroupResult {
  std::string group;
  double value = 0.0;
  std::size_t count = 0;  // pairs for Kendall, samples for Pearson
};

struct CorrelationReport {
  Measure measure = Measure::Kendall;
  std::vector<GroupResult> groups;  // sorted by group name
  double average = 0.0;             // unweighted over groups

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["measure"] = std::string(to_string(measure));
    j["groups"] = nlohmann::ordered_json::array();
    for (const auto& g : groups) j["groups"].push_back({{"group", g.group}, {"value", g.value}, {"count", g.count}});
    j["average"] = average;
    return j;
  }

  std::string to_table() const {
    std::size_t width = 7;
    for (const auto& g : groups) width = std::max(width, g.group.size());
    std::string out;
    char line[256];
    std::snprintf(line, sizeof line, "%-*s  %10s  %8s\n", static_cast<int>(width), "group",
                  measure == Measure::Kendall ? "tau" : "r", "count");
    out += line;
    for (const auto& g : groups) {
      std::snprintf(line, sizeof line, "%-*s  %10.6f  %8zu\n", static_cast<int>(width), g.group.c_str(), g.value,
                    g.count);
      out += line;
    }
    std::snprintf(line, sizeof line, "%-*s  %10.6f\n", static_cast<int>(width), "Avg.", average);
    out += line;
    return out;
  }
};

inline double unweighted_average(const std::vector<GroupResult>& groups) {
  if (groups.empty()) throw Error("report: no groups");
  double s = 0.0;
  for (const auto& g : groups) s += g.value;
  return s / static_cast<double>(groups.size());
}

inline CorrelationReport kendall_report(const std::map<std::string, std::vector<RelativeRankingPair>>& by_group,
                                        TiePolicy ties = TiePolicy::Discordant) {
  CorrelationReport rep;
  rep.measure = Measure::Kendall;
  for (const auto& [g, pairs] : by_group) rep.groups.push_back({g, kendall_wmt(pairs, ties), pairs.size()});
  rep.average = unweighted_average(rep.groups);
  return rep;
}

struct ScoredSample {
  double metric = 0.0;
  double gold = 0.0;
};

inline CorrelationReport pearson_report(const std::map<std::string, std::vector<ScoredSample>>& by_group) {
  CorrelationReport rep;
  rep.measure = Measure::Pearson;
  for (const auto& [g, samples] : by_group) {
    std::vector<double> x, y;
    for (const auto& s : samples) x.push_back(s.metric), y.push_back(s.gold);
    rep.groups.push_back({g, pearson(x, y), samples.size()});
  }
  rep.average = unweighted_average(rep.groups);
  return rep;
}

}  // namespace unite
