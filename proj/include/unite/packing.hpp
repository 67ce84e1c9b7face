// Unified input packing: BOS · h · SEP [· s · SEP] [· r · SEP].
#pragma once

#include <array>
#include <optional>
#include <string>
#include <string_view>

#include "corpus.hpp"

namespace unite {

enum class TaskFormat { Ref, Src, SrcRef };
enum class Segment { Hyp = 0, Src = 1, Ref = 2 };

inline constexpr std::array<TaskFormat, 3> kAllFormats = {TaskFormat::Ref, TaskFormat::Src, TaskFormat::SrcRef};

inline std::string_view to_string(TaskFormat f) {
  switch (f) {
    case TaskFormat::Ref: return "ref";
    case TaskFormat::Src: return "src";
    case TaskFormat::SrcRef: return "src+ref";
  }
  return "?";
}

inline TaskFormat parse_task_format(std::string_view s) {
  if (s == "ref") return TaskFormat::Ref;
  if (s == "src") return TaskFormat::Src;
  if (s == "src+ref" || s == "srcref") return TaskFormat::SrcRef;
  throw Error("unknown task format: " + std::string(s));
}

inline std::string_view to_string(Segment s) {
  switch (s) {
    case Segment::Hyp: return "hyp";
    case Segment::Src: return "src";
    case Segment::Ref: return "ref";
  }
  return "?";
}

inline bool format_has(TaskFormat f, Segment s) {
  switch (s) {
    case Segment::Hyp: return true;
    case Segment::Src: return f != TaskFormat::Ref;
    case Segment::Ref: return f != TaskFormat::Src;
  }
  return false;
}

/// Half-open token range [start, end).
struct Span {
  std::size_t start = 0;
  std::size_t end = 0;
  std::size_t width() const { return end - start; }
  bool contains(std::size_t i) const { return i >= start && i < end; }
  friend bool operator==(const Span&, const Span&) = default;
};

/// Span per segment; absent segments hold std::nullopt.
struct SegmentSpans {
  std::array<std::optional<Span>, 3> spans;

  const std::optional<Span>& operator[](Segment s) const { return spans[static_cast<std::size_t>(s)]; }
  std::optional<Span>& operator[](Segment s) { return spans[static_cast<std::size_t>(s)]; }
  bool has(Segment s) const { return (*this)[s].has_value(); }
  std::size_t total() const {
    std::size_t n = 0;
    for (const auto& sp : spans)
      if (sp) n = std::max(n, sp->end);
    return n;
  }
  friend bool operator==(const SegmentSpans&, const SegmentSpans&) = default;

  /// Contiguous layout from segment widths (0 = absent), in Hyp, Src, Ref order.
  static SegmentSpans from_widths(std::size_t hyp, std::size_t src, std::size_t ref) {
    SegmentSpans out;
    std::size_t pos = 0;
    const std::array<std::size_t, 3> widths = {hyp, src, ref};
    for (std::size_t k = 0; k < 3; ++k) {
      if (widths[k] == 0) continue;
      out.spans[k] = Span{pos, pos + widths[k]};
      pos += widths[k];
    }
    return out;
  }
};

struct PackedInput {
  TokenSeq tokens;
  TaskFormat format = TaskFormat::Ref;
  SegmentSpans spans;

  std::size_t length() const { return tokens.size(); }

  /// Raw segment length without the attached specials (BOS, trailing SEP).
  std::size_t raw_length(Segment s) const {
    const auto& sp = spans[s];
    if (!sp) return 0;
    return sp->width() - (s == Segment::Hyp ? 2 : 1);
  }
  friend bool operator==(const PackedInput&, const PackedInput&) = default;
};

/// BOS belongs to the hypothesis span; every SEP belongs to the segment it
/// terminates.
inline PackedInput pack(const TokenSeq& hyp, const std::optional<TokenSeq>& src, const std::optional<TokenSeq>& ref,
                        TaskFormat format) {
  const bool need_src = format_has(format, Segment::Src);
  const bool need_ref = format_has(format, Segment::Ref);
  if ((need_src && !src) || (need_ref && !ref)) throw Error("format/segment mismatch");
  if (hyp.empty() || (need_src && src->empty()) || (need_ref && ref->empty())) throw Error("empty segment");

  PackedInput out;
  out.format = format;
  auto append = [&](Segment seg, const TokenSeq& toks, bool with_bos) {
    const std::size_t start = out.tokens.size();
    if (with_bos) out.tokens.push_back(kBos);
    out.tokens.insert(out.tokens.end(), toks.begin(), toks.end());
    out.tokens.push_back(kSep);
    out.spans[seg] = Span{start, out.tokens.size()};
  };
  append(Segment::Hyp, hyp, true);
  if (need_src) append(Segment::Src, *src, false);
  if (need_ref) append(Segment::Ref, *ref, false);
  return out;
}

inline Segment segment_of(const PackedInput& packed, std::size_t index) {
  if (index >= packed.length()) throw Error("segment_of: index out of range");
  for (Segment s : {Segment::Hyp, Segment::Src, Segment::Ref}) {
    const auto& sp = packed.spans[s];
    if (sp && sp->contains(index)) return s;
  }
  throw Error("segment_of: index not covered by any span");
}

}  // namespace unite
