// Toy translation-evaluation task with known quality: a random "source
// language" that maps word-for-word onto the target side, and hypotheses
// corrupted by a per-item noise level whose realized rate is the gold score.
#pragma once

#include <map>
#include <string>
#include <vector>

#include "corpus.hpp"
#include "labeling.hpp"

namespace unite {

struct ToyOptions {
  std::size_t sources = 500;
  std::size_t hyps_per_source = 4;
  std::size_t words = 254;  // per language; 2 * 254 + 4 specials = 512
  std::size_t min_len = 6;
  std::size_t max_len = 14;
  double max_drop = 0.5;    // drop probability at noise level 1
  double max_swap = 0.1;    // adjacent-swap probability at noise level 1
  std::string group = "toy-en";
  std::uint64_t seed = 0;
};

inline std::string toy_target_word(std::size_t k) { return "t" + std::to_string(k); }
inline std::string toy_source_word(std::size_t k) { return "s" + std::to_string(k); }

/// Source/reference sentence pairs (no hypotheses).
inline std::vector<ParallelPair> toy_parallel(std::size_t n, const ToyOptions& opts, Rng& rng) {
  std::vector<ParallelPair> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t len = opts.min_len + rng.below(opts.max_len - opts.min_len + 1);
    std::vector<std::string> src, ref;
    for (std::size_t k = 0; k < len; ++k) {
      const std::size_t w = rng.below(opts.words);
      src.push_back(toy_source_word(w));
      ref.push_back(toy_target_word(w));
    }
    out.push_back({join_tokens(src), join_tokens(ref)});
  }
  return out;
}

/// Rows carry hyp/src/ref, `gold` (z-normalized negative noise rate, so
/// higher is better), the same value as `score`, plus `id`, `src_id`, `lp`.
inline std::vector<CorpusRow> toy_corpus(const ToyOptions& opts) {
  if (opts.sources == 0 || opts.hyps_per_source == 0) throw Error("toy: empty corpus");
  Rng rng(opts.seed);
  const auto parallel = toy_parallel(opts.sources, opts, rng);
  std::vector<CorpusRow> rows;
  std::vector<double> quality;
  for (std::size_t s = 0; s < parallel.size(); ++s) {
    const auto ref = split_whitespace(parallel[s].ref);
    for (std::size_t h = 0; h < opts.hyps_per_source; ++h) {
      const double level = rng.uniform();
      std::vector<std::string> hyp;
      std::size_t edits = 0;
      for (const auto& w : ref) {
        if (rng.bernoulli(opts.max_drop * level)) ++edits;
        else hyp.push_back(w);
      }
      if (hyp.empty()) {
        hyp.push_back(ref.front());
        --edits;
      }
      for (std::size_t i = 0; i + 1 < hyp.size(); ++i) {
        if (rng.bernoulli(opts.max_swap * level)) {
          std::swap(hyp[i], hyp[i + 1]);
          ++edits;
          ++i;
        }
      }
      CorpusRow row;
      row.hyp = join_tokens(hyp);
      row.src = parallel[s].src;
      row.ref = parallel[s].ref;
      row.extra["id"] = "h" + std::to_string(rows.size());
      row.extra["src_id"] = "s" + std::to_string(s);
      row.extra["lp"] = opts.group;
      rows.push_back(std::move(row));
      quality.push_back(-static_cast<double>(edits) / static_cast<double>(ref.size()));
    }
  }
  const auto gold = z_normalize(quality);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    rows[i].score = gold[i];
    rows[i].extra["gold"] = gold[i];
  }
  return rows;
}

struct PreferencePair {
  std::string src_id;
  std::string better_hyp;
  std::string worse_hyp;
  std::string group;
};

/// Relative-ranking pairs between hypotheses of the same source whose gold
/// scores differ by more than `threshold`.
inline std::vector<PreferencePair> preference_pairs(std::span<const CorpusRow> rows, double threshold = 0.1) {
  std::map<std::string, std::vector<const CorpusRow*>> by_src;
  for (const auto& r : rows) {
    if (!r.extra.contains("src_id") || !r.extra.contains("id") || !r.extra.contains("gold"))
      throw Error("missing gold");
    by_src[r.extra["src_id"].get<std::string>()].push_back(&r);
  }
  std::vector<PreferencePair> out;
  for (const auto& [sid, hyps] : by_src) {
    for (std::size_t a = 0; a < hyps.size(); ++a) {
      for (std::size_t b = a + 1; b < hyps.size(); ++b) {
        const double ga = hyps[a]->extra["gold"].get<double>();
        const double gb = hyps[b]->extra["gold"].get<double>();
        if (std::abs(ga - gb) <= threshold) continue;
        const auto* better = ga > gb ? hyps[a] : hyps[b];
        const auto* worse = ga > gb ? hyps[b] : hyps[a];
        std::string group = better->extra.contains("lp") ? better->extra["lp"].get<std::string>() : "all";
        out.push_back({sid, better->extra["id"].get<std::string>(), worse->extra["id"].get<std::string>(), group});
      }
    }
  }
  return out;
}

/// Training rows, held-out rows with their preference pairs, and unlabeled
/// parallel pairs for synthesis, each from its own seed stream.
struct ToySplits {
  std::vector<CorpusRow> train;
  std::vector<CorpusRow> test;
  std::vector<PreferencePair> pairs;
  std::vector<ParallelPair> parallel;
};

inline ToySplits toy_splits(const ToyOptions& opts, std::size_t test_sources, std::size_t parallel_pairs,
                            double threshold = 0.1) {
  ToySplits out;
  out.train = toy_corpus(opts);
  ToyOptions test_opts = opts;
  test_opts.sources = test_sources;
  test_opts.seed = opts.seed + 1000003;
  out.test = toy_corpus(test_opts);
  out.pairs = preference_pairs(out.test, threshold);
  Rng rng(opts.seed + 2000003);
  out.parallel = toy_parallel(parallel_pairs, opts, rng);
  return out;
}

}  // namespace unite
