// Ranking-based pseudo labels: score, (ensemble), rank, z-normalize.
#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "checkpoint.hpp"
#include "corpus.hpp"
#include "model.hpp"

namespace unite {

/// Rank values in [0, N-1]; higher score -> higher rank. Tied scores share
/// the average of the positions they occupy.
inline std::vector<double> rank_indices(std::span<const double> scores) {
  if (scores.empty()) throw Error("rank_indices: empty score list");
  for (double s : scores)
    if (!std::isfinite(s)) throw Error("non-finite score");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  std::vector<double> ranks(scores.size());
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() && scores[order[j + 1]] == scores[order[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j);
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = avg;
    i = j + 1;
  }
  return ranks;
}

/// (v - mean) / population std; all zeros when the std is 0.
inline std::vector<double> z_normalize(std::span<const double> values) {
  if (values.empty()) throw Error("z_normalize: empty input");
  const double n = static_cast<double>(values.size());
  double mean = 0.0;
  for (double v : values) mean += v;
  mean /= n;
  double var = 0.0;
  for (double v : values) var += (v - mean) * (v - mean);
  var /= n;
  const double sd = std::sqrt(var);
  std::vector<double> out(values.size(), 0.0);
  if (sd == 0.0) return out;
  for (std::size_t i = 0; i < values.size(); ++i) out[i] = (values[i] - mean) / sd;
  return out;
}

inline std::vector<double> rank_label(std::span<const double> scores) {
  const auto ranks = rank_indices(scores);
  return z_normalize(ranks);
}

/// Elementwise mean of k aligned score lists.
inline std::vector<double> ensemble_scores(std::span<const std::vector<double>> lists) {
  if (lists.empty()) throw Error("ensemble: no score lists");
  const std::size_t n = lists.front().size();
  for (const auto& l : lists)
    if (l.size() != n) throw Error("ensemble: score list length mismatch");
  std::vector<double> out(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (const auto& l : lists) s += l[i];
    out[i] = s / static_cast<double>(lists.size());
  }
  return out;
}

enum class LabelScheme { Rank, ZNorm };

inline LabelScheme parse_label_scheme(std::string_view s) {
  if (s == "rank") return LabelScheme::Rank;
  if (s == "z-norm") return LabelScheme::ZNorm;
  throw Error("unknown labeling scheme: " + std::string(s));
}

inline std::string_view to_string(LabelScheme s) { return s == LabelScheme::Rank ? "rank" : "z-norm"; }

/// Anything that assigns a raw quality score to a triplet.
using Scorer = std::function<double(const RawTriplet&)>;

/// Scores with a checkpoint under a fixed format and mask variant.
inline Scorer checkpoint_scorer(std::shared_ptr<const Checkpoint> ckpt, TaskFormat format, MaskVariant variant) {
  return [ckpt = std::move(ckpt), format, variant](const RawTriplet& t) {
    const auto& v = ckpt->vocab;
    return score(tokenize(t.hyp, v), tokenize(t.src, v), tokenize(t.ref, v), format, ckpt->params, ckpt->config,
                 variant);
  };
}

/// Unigram F1 between hypothesis and reference tokens: a lexical-overlap
/// metric usable as a checkpoint-free labeler.
inline double overlap_f1(const RawTriplet& t) {
  const auto hyp = split_whitespace(t.hyp);
  const auto ref = split_whitespace(t.ref);
  if (hyp.empty() || ref.empty()) throw Error("empty segment");
  std::map<std::string, int> counts;
  for (const auto& w : ref) ++counts[w];
  std::size_t matched = 0;
  for (const auto& w : hyp) {
    auto it = counts.find(w);
    if (it != counts.end() && it->second > 0) {
      --it->second;
      ++matched;
    }
  }
  if (matched == 0) return 0.0;
  const double p = static_cast<double>(matched) / static_cast<double>(hyp.size());
  const double r = static_cast<double>(matched) / static_cast<double>(ref.size());
  return 2.0 * p * r / (p + r);
}

/// Raw scores from every scorer, averaged, then turned into labels.
inline std::vector<double> label_scores(std::span<const RawTriplet> triplets, std::span<const Scorer> scorers,
                                        LabelScheme scheme = LabelScheme::Rank) {
  if (scorers.empty()) throw Error("label: no scorers");
  if (triplets.empty()) throw Error("empty corpus");
  std::vector<std::vector<double>> raw;
  raw.reserve(scorers.size());
  for (const auto& scorer : scorers) {
    std::vector<double> s;
    s.reserve(triplets.size());
    for (const auto& t : triplets) s.push_back(scorer(t));
    raw.push_back(std::move(s));
  }
  const auto mean = ensemble_scores(raw);
  return scheme == LabelScheme::Rank ? rank_label(mean) : z_normalize(mean);
}

/// Attaches labels to triplets, preserving input order.
inline std::vector<CorpusRow> label_corpus(std::span<const RawTriplet> triplets, std::span<const Scorer> scorers,
                                           LabelScheme scheme = LabelScheme::Rank) {
  const auto labels = label_scores(triplets, scorers, scheme);
  std::vector<CorpusRow> out;
  out.reserve(triplets.size());
  for (std::size_t i = 0; i < triplets.size(); ++i) out.push_back(row_from_triplet(triplets[i], labels[i]));
  return out;
}

/// Checkpoint-driven labeling.
inline std::vector<CorpusRow> label_corpus(std::span<const RawTriplet> triplets,
                                           std::span<const std::shared_ptr<const Checkpoint>> scorers,
                                           TaskFormat format, MaskVariant variant,
                                           LabelScheme scheme = LabelScheme::Rank) {
  std::vector<Scorer> fns;
  for (const auto& c : scorers) fns.push_back(checkpoint_scorer(c, format, variant));
  return label_corpus(triplets, fns, scheme);
}

}  // namespace unite
