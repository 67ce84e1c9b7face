// Tokenization, vocabulary, JSONL corpus I/O and synthetic hypothesis
// generation (noising stub plus word/span dropping).
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "tensor.hpp"

namespace unite {

using TokenId = std::int32_t;
using TokenSeq = std::vector<TokenId>;

inline constexpr TokenId kPad = 0;
inline constexpr TokenId kBos = 1;
inline constexpr TokenId kSep = 2;
inline constexpr TokenId kUnk = 3;
inline constexpr std::size_t kNumSpecials = 4;

inline std::vector<std::string> split_whitespace(std::string_view text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  auto is_space = [](char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v'; };
  while (i < text.size()) {
    while (i < text.size() && is_space(text[i])) ++i;
    std::size_t j = i;
    while (j < text.size() && !is_space(text[j])) ++j;
    if (j > i) out.emplace_back(text.substr(i, j - i));
    i = j;
  }
  return out;
}

inline std::string join_tokens(const std::vector<std::string>& toks) {
  std::string out;
  for (std::size_t i = 0; i < toks.size(); ++i) {
    if (i) out += ' ';
    out += toks[i];
  }
  return out;
}

/// Token <-> id mapping. Ids 0..3 are always <pad>, <bos>, <sep>, <unk>.
class Vocab {
 public:
  Vocab() : tokens_{"<pad>", "<bos>", "<sep>", "<unk>"} {
    for (std::size_t i = 0; i < tokens_.size(); ++i) index_.emplace(tokens_[i], static_cast<TokenId>(i));
  }

  static bool is_special(std::string_view tok) {
    return tok == "<pad>" || tok == "<bos>" || tok == "<sep>" || tok == "<unk>";
  }

  /// Appends a corpus token; returns its id. Specials and duplicates are rejected.
  TokenId add(const std::string& tok) {
    if (is_special(tok)) throw Error("vocab: token collides with a reserved special: " + tok);
    if (index_.contains(tok)) throw Error("vocab: duplicate token: " + tok);
    const auto id = static_cast<TokenId>(tokens_.size());
    tokens_.push_back(tok);
    index_.emplace(tok, id);
    return id;
  }

  TokenId id_of(std::string_view tok) const {
    auto it = index_.find(std::string(tok));
    return it == index_.end() ? kUnk : it->second;
  }
  bool contains(std::string_view tok) const { return index_.contains(std::string(tok)); }
  const std::string& lookup(TokenId id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) throw Error("vocab: id out of range");
    return tokens_[static_cast<std::size_t>(id)];
  }
  std::size_t size() const { return tokens_.size(); }
  const std::vector<std::string>& tokens() const { return tokens_; }

  friend bool operator==(const Vocab& a, const Vocab& b) { return a.tokens_ == b.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> index_;
};

/// Specials plus the (max_size - 4) most frequent tokens; ties go to the
/// lexicographically smaller token.
inline Vocab build_vocab(std::span<const std::string> texts, std::size_t max_size) {
  if (texts.empty()) throw Error("empty corpus");
  if (max_size < kNumSpecials) throw Error("vocab: max_size must be at least 4");
  std::map<std::string, std::size_t> counts;
  for (const auto& t : texts)
    for (auto& tok : split_whitespace(t))
      if (!Vocab::is_special(tok)) ++counts[tok];
  std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(), counts.end());
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  Vocab v;
  for (const auto& [tok, n] : ranked) {
    if (v.size() >= max_size) break;
    v.add(tok);
  }
  return v;
}

inline TokenSeq tokenize(std::string_view text, const Vocab& vocab) {
  auto toks = split_whitespace(text);
  if (toks.empty()) throw Error("empty segment");
  TokenSeq out;
  out.reserve(toks.size());
  for (const auto& t : toks) out.push_back(vocab.id_of(t));
  return out;
}

inline std::string detokenize(std::span<const TokenId> seq, const Vocab& vocab) {
  std::vector<std::string> toks;
  toks.reserve(seq.size());
  for (auto id : seq) toks.push_back(vocab.lookup(id));
  return join_tokens(toks);
}

/// Plain-text vocabulary: one token per line, line number = id.
inline void write_vocab(const Vocab& vocab, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open for writing: " + path);
  for (const auto& t : vocab.tokens()) out << t << '\n';
}

inline Vocab vocab_from_tokens(const std::vector<std::string>& tokens) {
  static const char* kExpected[] = {"<pad>", "<bos>", "<sep>", "<unk>"};
  if (tokens.size() < kNumSpecials) throw Error("vocab: missing reserved specials");
  for (std::size_t i = 0; i < kNumSpecials; ++i)
    if (tokens[i] != kExpected[i]) throw Error("vocab: line " + std::to_string(i + 1) + " must be " + kExpected[i]);
  Vocab v;
  for (std::size_t i = kNumSpecials; i < tokens.size(); ++i) v.add(tokens[i]);
  return v;
}

inline Vocab read_vocab(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open: " + path);
  std::vector<std::string> tokens;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    tokens.push_back(line);
  }
  return vocab_from_tokens(tokens);
}

// ---------------------------------------------------------------------------
// Corpus records

struct RawTriplet {
  std::string hyp;
  std::string src;
  std::string ref;
};

struct ScoredExample {
  TokenSeq hyp;
  TokenSeq src;
  TokenSeq ref;
  double score = 0.0;
};

/// One JSONL line. `src`/`ref` may be absent (a Src-only or Ref-only row);
/// keys other than the four known ones are carried through untouched.
struct CorpusRow {
  std::string hyp;
  std::optional<std::string> src;
  std::optional<std::string> ref;
  std::optional<double> score;
  nlohmann::ordered_json extra = nlohmann::ordered_json::object();

  RawTriplet triplet() const {
    if (!src || !ref) throw Error("format/segment mismatch");
    return {hyp, *src, *ref};
  }
  friend bool operator==(const CorpusRow& a, const CorpusRow& b) {
    return a.hyp == b.hyp && a.src == b.src && a.ref == b.ref && a.score == b.score && a.extra == b.extra;
  }
};

inline nlohmann::ordered_json row_to_json(const CorpusRow& row) {
  nlohmann::ordered_json j;
  j["hyp"] = row.hyp;
  if (row.src) j["src"] = *row.src;
  if (row.ref) j["ref"] = *row.ref;
  if (row.score) j["score"] = *row.score;
  for (const auto& [k, v] : row.extra.items()) j[k] = v;
  return j;
}

/// Parses one JSONL object. With `require_all`, `hyp`, `src` and `ref` must
/// all be present; otherwise only `hyp` is mandatory.
inline CorpusRow row_from_json(const nlohmann::ordered_json& j, std::size_t line_no, bool require_all = true) {
  auto where = [&] { return " @ line " + std::to_string(line_no); };
  if (!j.is_object()) throw Error("malformed JSON object" + where());
  CorpusRow row;
  auto text_field = [&](const char* key, bool required) -> std::optional<std::string> {
    auto it = j.find(key);
    if (it == j.end()) {
      if (required) throw Error(std::string("missing field ") + key + where());
      return std::nullopt;
    }
    if (!it->is_string()) throw Error(std::string("field ") + key + " must be a string" + where());
    return it->get<std::string>();
  };
  row.hyp = *text_field("hyp", true);
  row.src = text_field("src", require_all);
  row.ref = text_field("ref", require_all);
  if (auto it = j.find("score"); it != j.end()) {
    if (!it->is_number()) throw Error("field score must be a number" + where());
    const double s = it->get<double>();
    if (!std::isfinite(s)) throw Error("field score must be finite" + where());
    row.score = s;
  }
  for (const auto& [k, v] : j.items())
    if (k != "hyp" && k != "src" && k != "ref" && k != "score") row.extra[k] = v;
  return row;
}

struct JsonLine {
  std::size_t line_no;
  nlohmann::ordered_json value;
};

inline std::vector<JsonLine> read_json_lines(std::istream& in) {
  std::vector<JsonLine> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    try {
      out.push_back({line_no, nlohmann::ordered_json::parse(line)});
    } catch (const nlohmann::json::parse_error&) {
      throw Error("malformed JSON @ line " + std::to_string(line_no));
    }
  }
  return out;
}

inline std::vector<CorpusRow> read_jsonl(std::istream& in, bool require_all = true) {
  std::vector<CorpusRow> rows;
  for (const auto& [line_no, j] : read_json_lines(in)) rows.push_back(row_from_json(j, line_no, require_all));
  return rows;
}

inline std::vector<CorpusRow> read_jsonl(const std::string& path, bool require_all = true) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open: " + path);
  return read_jsonl(in, require_all);
}

inline void write_jsonl(std::span<const CorpusRow> rows, std::ostream& out) {
  for (const auto& r : rows) out << row_to_json(r).dump() << '\n';
}

inline void write_jsonl(std::span<const CorpusRow> rows, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open for writing: " + path);
  write_jsonl(rows, out);
}

inline CorpusRow row_from_triplet(const RawTriplet& t, std::optional<double> score = std::nullopt) {
  CorpusRow r;
  r.hyp = t.hyp;
  r.src = t.src;
  r.ref = t.ref;
  r.score = score;
  return r;
}

// ---------------------------------------------------------------------------
// Degradation

struct DegradePolicy {
  double portion = 0.5;        // share of hypotheses that get degraded
  double word_drop = 0.15;     // per-token drop probability, in [0, 1)
  std::size_t max_span = 4;    // 0 disables span dropping
  std::uint64_t seed = 0;

  void validate() const {
    if (!(portion >= 0.0 && portion <= 1.0)) throw Error("degrade: portion must lie in [0, 1]");
    if (!(word_drop >= 0.0 && word_drop < 1.0)) throw Error("degrade: word drop probability must lie in [0, 1)");
  }
};

/// Removes [start, end) from `seq`.
template <class T>
std::vector<T> drop_span(std::span<const T> seq, std::size_t start, std::size_t end) {
  if (start > end || end > seq.size()) throw Error("drop_span: range out of bounds");
  std::vector<T> out(seq.begin(), seq.begin() + static_cast<std::ptrdiff_t>(start));
  out.insert(out.end(), seq.begin() + static_cast<std::ptrdiff_t>(end), seq.end());
  return out;
}

/// Word dropping followed by one span drop. The result is a non-empty
/// subsequence of the input: if everything would be removed, the first
/// token is kept.
template <class T>
std::vector<T> degrade(std::span<const T> seq, const DegradePolicy& policy, Rng& rng) {
  if (seq.empty()) throw Error("empty segment");
  std::vector<T> kept;
  kept.reserve(seq.size());
  for (const auto& tok : seq)
    if (!rng.bernoulli(policy.word_drop)) kept.push_back(tok);
  if (policy.max_span > 0 && !kept.empty()) {
    const std::size_t span_len = std::min<std::size_t>(1 + rng.below(policy.max_span), kept.size());
    const std::size_t start = rng.below(kept.size() - span_len + 1);
    kept = drop_span<T>(kept, start, start + span_len);
  }
  if (kept.empty()) kept.push_back(seq.front());
  return kept;
}

/// Stand-in for an MT system: light seeded noise on the reference (token
/// drop and adjacent swap, each with probability 0.05).
struct NoiseStub {
  double drop = 0.05;
  double swap = 0.05;

  template <class T>
  std::vector<T> operator()(std::span<const T> ref, Rng& rng) const {
    if (ref.empty()) throw Error("empty segment");
    std::vector<T> out;
    out.reserve(ref.size());
    for (const auto& tok : ref)
      if (!rng.bernoulli(drop)) out.push_back(tok);
    if (out.empty()) out.push_back(ref.front());
    for (std::size_t i = 0; i + 1 < out.size(); ++i) {
      if (rng.bernoulli(swap)) {
        std::swap(out[i], out[i + 1]);
        ++i;
      }
    }
    return out;
  }
};

/// ceil(p * n) robust to representation error in p (0.3 * 100 must give 30).
inline std::size_t degrade_count(double portion, std::size_t n) {
  return static_cast<std::size_t>(std::ceil(portion * static_cast<double>(n) - 1e-9));
}

struct ParallelPair {
  std::string src;
  std::string ref;
};

struct SynthesizedCorpus {
  std::vector<RawTriplet> triplets;
  std::vector<bool> degraded;
};

/// One triplet per pair: hypothesis = stub(reference); exactly
/// ceil(portion * N) hypotheses, chosen by seeded shuffle, are degraded too.
inline SynthesizedCorpus synthesize_corpus(std::span<const ParallelPair> parallel, const DegradePolicy& policy,
                                           const NoiseStub& stub = {}) {
  if (parallel.empty()) throw Error("empty corpus");
  policy.validate();
  Rng rng(policy.seed);
  const std::size_t n = parallel.size();
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  rng.shuffle(order);
  SynthesizedCorpus out;
  out.degraded.assign(n, false);
  for (std::size_t i = 0; i < degrade_count(policy.portion, n); ++i) out.degraded[order[i]] = true;
  out.triplets.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto src_toks = split_whitespace(parallel[i].src);
    auto ref_toks = split_whitespace(parallel[i].ref);
    if (src_toks.empty() || ref_toks.empty()) throw Error("empty segment");
    auto hyp = stub(std::span<const std::string>(ref_toks), rng);
    if (out.degraded[i]) hyp = degrade(std::span<const std::string>(hyp), policy, rng);
    out.triplets.push_back({join_tokens(hyp), join_tokens(src_toks), join_tokens(ref_toks)});
  }
  return out;
}

inline std::vector<ParallelPair> read_parallel_jsonl(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open: " + path);
  auto objs = read_json_lines(in);
  std::vector<ParallelPair> out;
  for (const auto& [line_no, j] : objs) {
    for (const char* key : {"src", "ref"})
      if (!j.contains(key) || !j[key].is_string())
        throw Error(std::string("missing field ") + key + " @ line " + std::to_string(line_no));
    out.push_back({j["src"].get<std::string>(), j["ref"].get<std::string>()});
  }
  return out;
}

}  // namespace unite
