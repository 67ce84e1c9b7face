// Regional attention masks: full attention, the hard monotonic design, and
// the six single-flow soft variants.
#pragma once

#include <array>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "packing.hpp"

namespace unite {

/// Additive value for blocked logits. Finite so that softmax never sees
/// inf - inf; exp(-1e9) underflows to exactly 0.
inline constexpr double kBlocked = -1e9;

enum class MaskVariant { Full, Hard, NoHypToSrc, NoSrcToHyp, NoRefToSrc, NoSrcToRef, NoRefToHyp, NoHypToRef };

inline constexpr std::array<MaskVariant, 8> kAllVariants = {
    MaskVariant::Full,       MaskVariant::Hard,       MaskVariant::NoHypToSrc, MaskVariant::NoSrcToHyp,
    MaskVariant::NoRefToSrc, MaskVariant::NoSrcToRef, MaskVariant::NoRefToHyp, MaskVariant::NoHypToRef};

inline std::string_view to_string(MaskVariant v) {
  switch (v) {
    case MaskVariant::Full: return "full";
    case MaskVariant::Hard: return "hard";
    case MaskVariant::NoHypToSrc: return "no-hyp-to-src";
    case MaskVariant::NoSrcToHyp: return "no-src-to-hyp";
    case MaskVariant::NoRefToSrc: return "no-ref-to-src";
    case MaskVariant::NoSrcToRef: return "no-src-to-ref";
    case MaskVariant::NoRefToHyp: return "no-ref-to-hyp";
    case MaskVariant::NoHypToRef: return "no-hyp-to-ref";
  }
  return "?";
}

inline MaskVariant parse_mask_variant(std::string_view s) {
  for (auto v : kAllVariants)
    if (to_string(v) == s) return v;
  throw Error("unknown mask variant: " + std::string(s));
}

/// A directed information flow `from -> to`: `to`'s queries read `from`'s keys.
struct Flow {
  Segment from;
  Segment to;
  friend bool operator==(const Flow&, const Flow&) = default;
};

/// Flows a variant blocks. The hard design keeps only Src->Hyp, Ref->Hyp and
/// Ref->Src, i.e. it blocks Hyp->Src, Hyp->Ref and Src->Ref.
inline std::vector<Flow> blocked_flows(MaskVariant v) {
  using S = Segment;
  switch (v) {
    case MaskVariant::Full: return {};
    case MaskVariant::Hard: return {{S::Hyp, S::Src}, {S::Hyp, S::Ref}, {S::Src, S::Ref}};
    case MaskVariant::NoHypToSrc: return {{S::Hyp, S::Src}};
    case MaskVariant::NoSrcToHyp: return {{S::Src, S::Hyp}};
    case MaskVariant::NoRefToSrc: return {{S::Ref, S::Src}};
    case MaskVariant::NoSrcToRef: return {{S::Src, S::Ref}};
    case MaskVariant::NoRefToHyp: return {{S::Ref, S::Hyp}};
    case MaskVariant::NoHypToRef: return {{S::Hyp, S::Ref}};
  }
  return {};
}

/// Whether the variant is meaningful for a given set of segments. Hard only
/// needs two segments; a single-flow variant needs both of its segments.
inline bool variant_compatible(MaskVariant v, const SegmentSpans& spans) {
  if (v == MaskVariant::Full || v == MaskVariant::Hard) return true;
  const auto f = blocked_flows(v).front();
  return spans.has(f.from) && spans.has(f.to);
}

/// L x L additive mask; row = query position, column = key position.
struct AttnMask {
  Matrix values;

  std::size_t size() const { return values.rows; }
  bool blocked(std::size_t query, std::size_t key) const { return values(query, key) != 0.0; }
  friend bool operator==(const AttnMask&, const AttnMask&) = default;
};

inline AttnMask build_mask(MaskVariant variant, const SegmentSpans& spans) {
  if (!variant_compatible(variant, spans)) throw Error("mask/format mismatch");
  const std::size_t n = spans.total();
  AttnMask mask{Matrix(n, n, 0.0)};
  for (const auto& f : blocked_flows(variant)) {
    const auto& keys = spans[f.from];
    const auto& queries = spans[f.to];
    if (!keys || !queries) continue;  // hard design on a two-segment format
    for (std::size_t i = queries->start; i < queries->end; ++i)
      for (std::size_t j = keys->start; j < keys->end; ++j) mask.values(i, j) = kBlocked;
  }
  return mask;
}

inline AttnMask build_mask(MaskVariant variant, const PackedInput& packed) {
  return build_mask(variant, packed.spans);
}

/// 0/1 grid, one row per line, 1 = blocked.
inline std::string mask_grid(const AttnMask& mask) {
  std::string out;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    for (std::size_t j = 0; j < mask.size(); ++j) {
      if (j) out += ' ';
      out += mask.blocked(i, j) ? '1' : '0';
    }
    out += '\n';
  }
  return out;
}

/// reach[a][b] is true when information from segment a can arrive in
/// segment b's representations after `layers` stacked masked layers.
using Reachability = std::array<std::array<bool, 3>, 3>;

inline Reachability reachability(MaskVariant variant, const SegmentSpans& spans, std::size_t layers) {
  if (layers < 1) throw Error("reachability: need at least one layer");
  Reachability step{};
  for (std::size_t a = 0; a < 3; ++a)
    for (std::size_t b = 0; b < 3; ++b)
      step[a][b] = spans.spans[a].has_value() && spans.spans[b].has_value();
  for (const auto& f : blocked_flows(variant)) step[static_cast<std::size_t>(f.from)][static_cast<std::size_t>(f.to)] = false;
  for (std::size_t a = 0; a < 3; ++a)
    if (spans.spans[a]) step[a][a] = true;

  Reachability reach = step;
  for (std::size_t k = 1; k < layers; ++k) {
    Reachability next{};
    for (std::size_t a = 0; a < 3; ++a)
      for (std::size_t b = 0; b < 3; ++b)
        for (std::size_t c = 0; c < 3; ++c) next[a][b] = next[a][b] || (reach[a][c] && step[c][b]);
    reach = next;
  }
  return reach;
}

}  // namespace unite
