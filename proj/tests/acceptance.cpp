// Acceptance checks. Prints one PASS/FAIL line per criterion; exits non-zero
// if any fails. Pass criterion numbers as arguments to run a subset.
#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>

#include <sys/wait.h>
#include <unistd.h>

#include <unite/unite.hpp>

using namespace unite;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

struct CliResult {
  int status = -1;
  std::string output;
};

CliResult cli(const std::string& args) {
  const std::string cmd = std::string(UNITE_CLI) + " " + args + " 2>&1";
  CliResult r;
  FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) return r;
  std::array<char, 4096> buf{};
  while (std::size_t n = fread(buf.data(), 1, buf.size(), pipe)) r.output.append(buf.data(), n);
  const int raw = pclose(pipe);
  r.status = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  return r;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string work_dir() {
  static const std::string dir = [] {
    const auto d = fs::temp_directory_path() / ("unite_acceptance_" + std::to_string(::getpid()));
    fs::remove_all(d);
    fs::create_directories(d);
    return d.string();
  }();
  return dir;
}

Segment seg_at(const SegmentSpans& spans, std::size_t i) {
  for (Segment s : {Segment::Hyp, Segment::Src, Segment::Ref})
    if (spans[s] && spans[s]->contains(i)) return s;
  throw Error("uncovered position");
}

// Blocked (query segment, key segment) pairs, written out per variant.
std::set<std::pair<Segment, Segment>> oracle_pairs(MaskVariant v) {
  using S = Segment;
  switch (v) {
    case MaskVariant::Full: return {};
    case MaskVariant::Hard: return {{S::Src, S::Hyp}, {S::Ref, S::Hyp}, {S::Ref, S::Src}};
    case MaskVariant::NoHypToSrc: return {{S::Src, S::Hyp}};
    case MaskVariant::NoSrcToHyp: return {{S::Hyp, S::Src}};
    case MaskVariant::NoRefToSrc: return {{S::Src, S::Ref}};
    case MaskVariant::NoSrcToRef: return {{S::Ref, S::Src}};
    case MaskVariant::NoRefToHyp: return {{S::Hyp, S::Ref}};
    case MaskVariant::NoHypToRef: return {{S::Ref, S::Hyp}};
  }
  return {};
}

// ---------------------------------------------------------------------------

Outcome mask_fidelity() {
  const auto t0 = Clock::now();
  const auto dump = cli("mask-dump --variant hard --spans 2,2,2");
  const std::string golden = slurp(std::string(UNITE_TEST_DATA) + "/mask_hard_2_2_2.txt");
  const bool grid_ok = dump.status == 0 && dump.output == golden;

  Rng rng(2024);
  std::size_t layouts = 0, checked = 0, mismatches = 0;
  for (; layouts < 200; ++layouts) {
    const auto spans = SegmentSpans::from_widths(1 + rng.below(12), 1 + rng.below(12), 1 + rng.below(12));
    for (auto v : kAllVariants) {
      const AttnMask m = build_mask(v, spans);
      std::set<std::pair<std::size_t, std::size_t>> got, want;
      const auto blocked_segs = oracle_pairs(v);
      for (std::size_t i = 0; i < m.size(); ++i)
        for (std::size_t j = 0; j < m.size(); ++j) {
          if (m.blocked(i, j)) got.insert({i, j});
          if (blocked_segs.contains({seg_at(spans, i), seg_at(spans, j)})) want.insert({i, j});
        }
      mismatches += got != want;
      ++checked;
    }
  }
  const double secs = seconds_since(t0);
  return {grid_ok && mismatches == 0 && secs < 1.0,
          fmt("golden grid %s; %zu/%zu variant-layout sets equal oracle; %.3f s (< 1 s)", grid_ok ? "exact" : "DIFFERS",
              checked - mismatches, checked, secs)};
}

Outcome attention_soundness() {
  ModelConfig c;
  c.d_model = 16;
  c.n_layers = 2;
  c.n_heads = 4;
  c.d_ffn = 32;
  c.head_dims = {48, 16, 1};
  c.vocab_size = 64;
  c.max_len = 64;
  Rng rng(7);
  double worst_sum = 0.0, worst_blocked = 0.0;
  for (int pass = 0; pass < 100; ++pass) {
    const ModelParams p = init_params(c, 1000 + pass);
    auto seq = [&] {
      TokenSeq s(1 + rng.below(12));
      for (auto& t : s) t = static_cast<TokenId>(kNumSpecials + rng.below(60));
      return s;
    };
    const TaskFormat f = kAllFormats[rng.below(3)];
    const PackedInput packed = pack(seq(), seq(), seq(), f);
    std::vector<MaskVariant> usable;
    for (auto v : kAllVariants)
      if (variant_compatible(v, packed.spans)) usable.push_back(v);
    const MaskVariant v = usable[rng.below(usable.size())];
    AttentionTrace trace;
    score_packed(p, c, packed, v, &trace);
    const AttnMask mask = build_mask(v, packed);
    for (const Matrix& a : trace.probs)
      for (std::size_t i = 0; i < a.rows; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < a.cols; ++j) {
          s += a(i, j);
          if (mask.blocked(i, j)) worst_blocked = std::max(worst_blocked, a(i, j));
        }
        worst_sum = std::max(worst_sum, std::abs(s - 1.0));
      }
  }
  return {worst_sum < 1e-9 && worst_blocked < 1e-12,
          fmt("max |row sum - 1| = %.2e (< 1e-9); max blocked weight = %.2e (< 1e-12)", worst_sum, worst_blocked)};
}

Outcome gradient_correctness() {
  const auto t0 = Clock::now();
  bool ok = true;
  double worst = 0.0;
  std::string notes;
  for (const char* task : {"ref", "src", "src+ref"})
    for (const char* mask : {"full", "hard", "no-hyp-to-src"}) {
      const auto r = cli(fmt("grad-check --d-model 8 --layers 2 --eps 1e-5 --task %s --mask %s", task, mask));
      if (std::string(task) == "ref" && std::string(mask) == "no-hyp-to-src") {
        // No source segment: the variant cannot be applied and must be refused.
        const bool refused = r.status != 0 && r.output.find("mask/format mismatch") != std::string::npos;
        ok = ok && refused;
        notes += refused ? "; ref x no-hyp-to-src refused" : "; ref x no-hyp-to-src NOT refused";
        continue;
      }
      const auto pos = r.output.find("max_rel_error");
      double err = 1.0;
      if (pos != std::string::npos) std::sscanf(r.output.c_str() + pos, "max_rel_error %lf", &err);
      worst = std::max(worst, err);
      ok = ok && r.status == 0 && err < 1e-3;
    }
  const double secs = seconds_since(t0);
  return {ok && secs < 30.0, fmt("worst max relative error %.2e (< 1e-3) over 8 checks%s; %.1f s (< 30 s)", worst,
                                 notes.c_str(), secs)};
}

Outcome labeling_invariants() {
  Rng rng(99);
  double worst_mean = 0.0, worst_std = 0.0;
  std::size_t order_failures = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 2 + rng.below(200);
    std::vector<double> s(n);
    const int kind = trial % 4;
    for (auto& x : s) {
      switch (kind) {
        case 0: x = rng.normal(); break;
        case 1: x = std::exp(8.0 * rng.normal()); break;          // heavily skewed
        case 2: x = -std::log(rng.uniform()) * 1e6; break;        // exponential draws
        default: x = static_cast<double>(rng.below(4)); break;    // many ties
      }
    }
    if (std::all_of(s.begin(), s.end(), [&](double x) { return x == s[0]; })) s[0] += 1.0;
    const auto l = rank_label(s);
    double mean = 0.0, var = 0.0;
    for (double x : l) mean += x;
    mean /= static_cast<double>(n);
    for (double x : l) var += (x - mean) * (x - mean);
    worst_mean = std::max(worst_mean, std::abs(mean));
    worst_std = std::max(worst_std, std::abs(std::sqrt(var / static_cast<double>(n)) - 1.0));
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j)
        if ((s[i] > s[j] && !(l[i] > l[j])) || (s[i] == s[j] && l[i] != l[j])) ++order_failures;
    std::vector<double> warped(n);
    for (std::size_t i = 0; i < n; ++i) warped[i] = std::atan(s[i]) * 3.0 - 2.0;  // strictly increasing
    // atan can merge huge distinct values at double precision; compare only when order survives.
    bool injective = true;
    for (std::size_t i = 0; i < n && injective; ++i)
      for (std::size_t j = 0; j < n; ++j)
        if (s[i] != s[j] && warped[i] == warped[j]) injective = false;
    if (injective && rank_label(warped) != l) ++order_failures;
  }
  const auto ex = rank_label(std::vector<double>{0.9, 0.5, 0.7});
  const bool example = std::abs(ex[0] - 1.224745) < 1e-6 && std::abs(ex[1] + 1.224745) < 1e-6 && std::abs(ex[2]) < 1e-6;
  return {worst_mean < 1e-9 && worst_std < 1e-9 && order_failures == 0 && example,
          fmt("max |mean| %.1e, max |std-1| %.1e over 1000 lists; %zu order violations; example %s", worst_mean,
              worst_std, order_failures, example ? "matches" : "DIFFERS")};
}

Outcome correlation_oracles() {
  std::size_t lists = 0, mismatches = 0;
  for (int len = 1; len <= 10; ++len) {
    std::size_t total = 1;
    for (int i = 0; i < len; ++i) total *= 3;
    for (std::size_t code = 0; code < total; ++code) {
      std::vector<RelativeRankingPair> pairs;
      std::vector<int> orient;
      std::size_t c = code;
      for (int i = 0; i < len; ++i, c /= 3) {
        const int o = static_cast<int>(c % 3);  // 0 agree, 1 disagree, 2 metric tie
        orient.push_back(o);
        const double base = 0.37 * i;
        pairs.push_back(o == 0 ? RelativeRankingPair{base + 1, base} : o == 1 ? RelativeRankingPair{base, base + 1}
                                                                              : RelativeRankingPair{base, base});
      }
      for (auto ties : {TiePolicy::Discordant, TiePolicy::Excluded}) {
        int con = 0, dis = 0;
        for (int o : orient) {
          if (o == 0) ++con;
          if (o == 1 || (o == 2 && ties == TiePolicy::Discordant)) ++dis;
        }
        ++lists;
        if (con + dis == 0) {
          bool threw = false;
          try {
            kendall_wmt(pairs, ties);
          } catch (const Error&) {
            threw = true;
          }
          mismatches += !threw;
          continue;
        }
        mismatches += kendall_wmt(pairs, ties) != static_cast<double>(con - dis) / (con + dis);
      }
    }
  }
  Rng rng(5);
  double worst = 0.0;
  for (int t = 0; t < 1000; ++t) {
    const std::size_t n = 2 + rng.below(100);
    std::vector<double> x(n), y(n);
    const double rho = rng.uniform(-1.0, 1.0);
    for (std::size_t i = 0; i < n; ++i) {
      x[i] = rng.normal() * 10.0 + 3.0;
      y[i] = rho * x[i] + rng.normal();
    }
    // Independent: long-double covariance from raw sums.
    long double sx = 0, sy = 0;
    for (std::size_t i = 0; i < n; ++i) sx += x[i], sy += y[i];
    const long double mx = sx / n, my = sy / n;
    long double cxy = 0, cxx = 0, cyy = 0;
    for (std::size_t i = 0; i < n; ++i) {
      cxy += (x[i] - mx) * (y[i] - my);
      cxx += (x[i] - mx) * (x[i] - mx);
      cyy += (y[i] - my) * (y[i] - my);
    }
    const double oracle = static_cast<double>(cxy / std::sqrt(cxx * cyy));
    worst = std::max(worst, std::abs(pearson(x, y) - oracle));
  }
  return {mismatches == 0 && worst < 1e-12,
          fmt("kendall: %zu/%zu exhaustive lists (len <= 10, both tie policies) match; pearson max |diff| %.1e (< 1e-12)",
              lists - mismatches, lists, worst)};
}

// ---------------------------------------------------------------------------
// Toy task

RunConfig toy_config(std::uint64_t seed) {
  RunConfig c;
  c.seed = seed;
  c.tag = "toy" + std::to_string(seed);
  c.d_model = 32;
  c.n_layers = 2;
  c.n_heads = 4;
  c.d_ffn = 64;
  c.max_len = 64;
  c.vocab_size = 512;
  c.lr = 2e-3;
  c.finetune_lr = 2e-3;
  c.batch_size = 16;
  c.steps = 400;
  return c;
}

constexpr std::size_t kPretrainSteps = 200;  // unified arm: 200 pretrain + 200 finetune = 400

struct SeedRun {
  std::array<double, 3> scratch_tau{};
  std::array<double, 3> unified_tau{};
  double scratch_seconds = 0.0;
  double unified_seconds = 0.0;
  std::size_t train_rows = 0;
  std::size_t vocab = 0;
  std::size_t pairs = 0;
  Checkpoint unified;
};

std::array<double, 3> held_out_tau(const Checkpoint& ck, const ToySplits& data) {
  std::array<double, 3> out{};
  for (std::size_t f = 0; f < 3; ++f)
    out[f] = evaluate_kendall(data.test, data.pairs, checkpoint_metric(ck, kAllFormats[f])).average;
  return out;
}

const std::vector<SeedRun>& toy_runs() {
  static const std::vector<SeedRun> runs = [] {
    std::vector<SeedRun> out;
    for (std::uint64_t seed : {0, 1, 2}) {
      ToyOptions opts;
      opts.seed = seed;
      const ToySplits data = toy_splits(opts, 100, 2000);
      SeedRun r;
      r.train_rows = data.train.size();
      r.pairs = data.pairs.size();

      auto t0 = Clock::now();
      const RunConfig cfg = toy_config(seed);
      const auto scratch = cmd_pretrain(cfg, data.train, "");
      r.scratch_seconds = seconds_since(t0);
      r.vocab = scratch.checkpoint.vocab.size();
      r.scratch_tau = held_out_tau(scratch.checkpoint, data);

      t0 = Clock::now();
      const RunConfig base = toy_config(seed);
      const auto synth = synthesize_corpus(data.parallel, base.degrade_policy());
      const std::vector<Scorer> scorers{overlap_f1};
      const auto pseudo = label_corpus(synth.triplets, scorers, base.labeling);
      RunConfig pre_cfg = base;
      pre_cfg.steps = kPretrainSteps;
      const auto pre = cmd_pretrain(pre_cfg, pseudo, "");
      RunConfig ft_cfg = base;
      ft_cfg.steps = base.steps - kPretrainSteps;
      auto ft = cmd_finetune(ft_cfg, pre.checkpoint, data.train, "");
      r.unified_seconds = seconds_since(t0);
      r.unified_tau = held_out_tau(ft.checkpoint, data);
      r.unified = std::move(ft.checkpoint);
      out.push_back(std::move(r));
    }
    return out;
  }();
  return runs;
}

Outcome unified_contract() {
  const Checkpoint& ck = toy_runs().front().unified;
  const std::string before = serialize_checkpoint(ck);
  ToyOptions opts;
  opts.sources = 20;
  opts.seed = 77;
  const auto rows = toy_corpus(opts);
  bool finite = true, stable = true;
  std::array<std::vector<double>, 3> first;
  for (int round = 0; round < 2; ++round)
    for (std::size_t f = 0; f < 3; ++f)
      for (const auto& row : rows) {
        const double s = score_row(ck, row, kAllFormats[f]);
        finite = finite && std::isfinite(s);
        if (round == 0) first[f].push_back(s);
        else stable = stable && first[f][&row - rows.data()] == s;
      }
  const bool unchanged = serialize_checkpoint(ck) == before;
  bool distinct = first[0] != first[1] && first[1] != first[2];

  // Same contract through the CLI on a saved copy.
  const std::string path = work_dir() + "/unified.ckpt";
  const std::string input = work_dir() + "/contract.jsonl";
  save_checkpoint(ck, path);
  write_jsonl(rows, input);
  const std::string file_before = slurp(path);
  bool cli_ok = true;
  for (const char* task : {"ref", "src", "src+ref"}) {
    const auto r = cli(fmt("score --input %s --checkpoint %s --task %s", input.c_str(), path.c_str(), task));
    cli_ok = cli_ok && r.status == 0;
    std::istringstream lines(r.output);
    std::string line;
    std::size_t n = 0;
    while (std::getline(lines, line)) {
      const auto j = nlohmann::json::parse(line, nullptr, false);
      cli_ok = cli_ok && !j.is_discarded() && j.contains("score") && std::isfinite(j["score"].get<double>());
      ++n;
    }
    cli_ok = cli_ok && n == rows.size();
  }
  cli_ok = cli_ok && slurp(path) == file_before;
  return {finite && stable && unchanged && distinct && cli_ok,
          fmt("pretrained+finetuned checkpoint: %zu rows x 3 tasks finite=%s, repeat-stable=%s, parameters unchanged=%s, "
              "task-dependent=%s, CLI=%s",
              rows.size(), finite ? "yes" : "no", stable ? "yes" : "no", unchanged ? "yes" : "no",
              distinct ? "yes" : "no", cli_ok ? "ok" : "FAILED")};
}

Outcome learnability() {
  const auto& runs = toy_runs();
  bool ok = true;
  double max_secs = 0.0;
  std::string taus;
  for (std::size_t s = 0; s < runs.size(); ++s) {
    const auto& r = runs[s];
    for (double t : r.scratch_tau) ok = ok && t >= 0.5;
    max_secs = std::max(max_secs, r.scratch_seconds);
    taus += fmt(" seed%zu[ref %.3f src %.3f src+ref %.3f]", s, r.scratch_tau[0], r.scratch_tau[1], r.scratch_tau[2]);
    ok = ok && r.train_rows == 2000 && r.vocab <= 512;
  }
  const auto& r0 = runs.front();
  return {ok && max_secs < 300.0,
          fmt("%zu train triplets, vocab %zu, %zu held-out pairs, %zu steps; tau >= 0.5:%s; slowest run %.0f s (< 300 s)",
              r0.train_rows, r0.vocab, r0.pairs, toy_config(0).steps, taus.c_str(), max_secs)};
}

Outcome ablation_direction() {
  const auto& runs = toy_runs();
  double scratch = 0.0, unified = 0.0;
  for (const auto& r : runs)
    for (std::size_t f = 0; f < 3; ++f) scratch += r.scratch_tau[f], unified += r.unified_tau[f];
  scratch /= 3.0 * static_cast<double>(runs.size());
  unified /= 3.0 * static_cast<double>(runs.size());
  std::string per_format;
  for (std::size_t f = 0; f < 3; ++f) {
    double a = 0.0, b = 0.0;
    for (const auto& r : runs) a += r.unified_tau[f], b += r.scratch_tau[f];
    per_format += fmt(" %s %.3f/%.3f", std::string(to_string(kAllFormats[f])).c_str(), a / 3.0, b / 3.0);
  }
  return {unified >= scratch,
          fmt("mean tau unified %.4f vs scratch %.4f (seeds 0-2, %zu+%zu vs %zu steps); unified/scratch:%s", unified,
              scratch, kPretrainSteps, toy_config(0).steps - kPretrainSteps, toy_config(0).steps, per_format.c_str())};
}

Outcome determinism() {
  const std::string d = work_dir() + "/det";
  const std::string cfg = d + "/tiny.cfg";
  fs::create_directories(d);
  std::ofstream(cfg) << "d_model = 16\nn_layers = 2\nn_heads = 2\nd_ffn = 32\nmax_len = 64\nbatch_size = 8\n"
                        "steps = 20\ntag = det\n";
  bool ok = cli("--seed 4 --out " + d + "/toy toy --sources 40 --test-sources 10 --parallel 10").status == 0;
  const std::string train = d + "/toy/train.jsonl";
  ok = ok && cli("--config " + cfg + " --seed 4 --out " + d + "/a pretrain --train " + train).status == 0;
  ok = ok && cli("--config " + cfg + " --seed 4 --out " + d + "/b pretrain --train " + train).status == 0;
  const std::string a = slurp(d + "/a/det-step20.ckpt"), b = slurp(d + "/b/det-step20.ckpt");
  const bool ckpt_same = ok && !a.empty() && a == b;
  const auto s1 = cli("score --input " + d + "/toy/test.jsonl --checkpoint " + d + "/a/det-step20.ckpt --task src+ref");
  const auto s2 = cli("score --input " + d + "/toy/test.jsonl --checkpoint " + d + "/b/det-step20.ckpt --task src+ref");
  const bool score_same = s1.status == 0 && s2.status == 0 && !s1.output.empty() && s1.output == s2.output;
  return {ckpt_same && score_same, fmt("pretrain checkpoints byte-identical=%s (%zu bytes); score output byte-identical=%s",
                                       ckpt_same ? "yes" : "no", a.size(), score_same ? "yes" : "no")};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria = {
      {"mask fidelity", mask_fidelity},
      {"attention soundness", attention_soundness},
      {"gradient correctness", gradient_correctness},
      {"labeling invariants", labeling_invariants},
      {"correlation oracles", correlation_oracles},
      {"unified single-model contract", unified_contract},
      {"end-to-end learnability", learnability},
      {"ablation direction", ablation_direction},
      {"determinism", determinism},
  };
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));
  int failures = 0;
  for (std::size_t k = 0; k < criteria.size(); ++k) {
    const int id = static_cast<int>(k + 1);
    if (!only.empty() && !only.contains(id)) continue;
    Outcome o;
    try {
      o = criteria[k].second();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    failures += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << "  " << id << ". " << criteria[k].first << ": " << o.detail << std::endl;
  }
  fs::remove_all(work_dir());
  return failures == 0 ? 0 : 1;
}
