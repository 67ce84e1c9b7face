#include <set>

#include <gtest/gtest.h>

#include <unite/packing.hpp>
#include <unite/tensor.hpp>

namespace unite {
namespace {

TEST(Pack, RefLayout) {
  const PackedInput p = pack({11, 12}, std::nullopt, TokenSeq{31}, TaskFormat::Ref);
  EXPECT_EQ(p.tokens, (TokenSeq{1, 11, 12, 2, 31, 2}));
  EXPECT_EQ(p.spans[Segment::Hyp], (Span{0, 4}));
  EXPECT_EQ(p.spans[Segment::Ref], (Span{4, 6}));
  EXPECT_FALSE(p.spans.has(Segment::Src));
}

TEST(Pack, SrcRefLayout) {
  const PackedInput p = pack({11, 12}, TokenSeq{21}, TokenSeq{31, 32}, TaskFormat::SrcRef);
  EXPECT_EQ(p.tokens, (TokenSeq{1, 11, 12, 2, 21, 2, 31, 32, 2}));
  EXPECT_EQ(p.spans[Segment::Hyp], (Span{0, 4}));
  EXPECT_EQ(p.spans[Segment::Src], (Span{4, 6}));
  EXPECT_EQ(p.spans[Segment::Ref], (Span{6, 9}));
}

TEST(Pack, FormatSegmentPreconditions) {
  EXPECT_NO_THROW(pack({11}, TokenSeq{21}, std::nullopt, TaskFormat::Src));
  try {
    pack({11}, TokenSeq{21}, std::nullopt, TaskFormat::Ref);
    FAIL();
  } catch (const Error& e) {
    EXPECT_STREQ(e.what(), "format/segment mismatch");
  }
  EXPECT_THROW(pack({11}, std::nullopt, TokenSeq{31}, TaskFormat::SrcRef), Error);
}

TEST(Pack, UnusedSegmentIsIgnored) {
  const PackedInput p = pack({11}, TokenSeq{21}, TokenSeq{31}, TaskFormat::Src);
  EXPECT_EQ(p.tokens, (TokenSeq{1, 11, 2, 21, 2}));
}

TEST(SegmentOf, SrcRefExample) {
  const PackedInput p = pack({11, 12}, TokenSeq{21}, TokenSeq{31, 32}, TaskFormat::SrcRef);
  EXPECT_EQ(segment_of(p, 0), Segment::Hyp);
  EXPECT_EQ(segment_of(p, 3), Segment::Hyp);
  EXPECT_EQ(segment_of(p, 5), Segment::Src);
  EXPECT_EQ(segment_of(p, 8), Segment::Ref);
  EXPECT_THROW(segment_of(p, 9), Error);
}

TokenSeq random_seq(Rng& rng, TokenId base) {
  TokenSeq s(1 + rng.below(16));
  for (auto& t : s) t = base + static_cast<TokenId>(rng.below(50));
  return s;
}

TEST(PackProperty, SpansPartitionAndLengthsRecoverable) {
  Rng rng(2024);
  for (int trial = 0; trial < 500; ++trial) {
    const TokenSeq h = random_seq(rng, 10), s = random_seq(rng, 100), r = random_seq(rng, 200);
    for (auto f : kAllFormats) {
      const PackedInput p = pack(h, s, r, f);
      ASSERT_EQ(p.spans[Segment::Hyp]->start, 0u);
      std::size_t cursor = 0, segments = 0, raw = 0;
      for (Segment seg : {Segment::Hyp, Segment::Src, Segment::Ref}) {
        if (!p.spans.has(seg)) continue;
        ASSERT_EQ(p.spans[seg]->start, cursor);
        cursor = p.spans[seg]->end;
        ++segments;
        raw += p.raw_length(seg);
      }
      ASSERT_EQ(cursor, p.length());
      ASSERT_EQ(p.length(), raw + segments + 1);
      ASSERT_EQ(p.raw_length(Segment::Hyp), h.size());
      if (format_has(f, Segment::Src)) ASSERT_EQ(p.raw_length(Segment::Src), s.size());
      if (format_has(f, Segment::Ref)) ASSERT_EQ(p.raw_length(Segment::Ref), r.size());
    }
  }
}

TEST(PackProperty, Injective) {
  Rng rng(7);
  std::set<std::pair<TokenSeq, int>> seen;
  std::set<std::tuple<TokenSeq, TokenSeq, TokenSeq, int>> inputs;
  for (int trial = 0; trial < 300; ++trial) {
    const TokenSeq h = random_seq(rng, 10), s = random_seq(rng, 100), r = random_seq(rng, 200);
    for (auto f : kAllFormats) {
      const TokenSeq s_used = format_has(f, Segment::Src) ? s : TokenSeq{};
      const TokenSeq r_used = format_has(f, Segment::Ref) ? r : TokenSeq{};
      if (!inputs.insert({h, s_used, r_used, static_cast<int>(f)}).second) continue;
      const PackedInput p = pack(h, s, r, f);
      ASSERT_TRUE(seen.insert({p.tokens, static_cast<int>(f)}).second);
    }
  }
}

}  // namespace
}  // namespace unite
