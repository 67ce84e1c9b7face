// Run configuration and the command implementations behind the CLI:
// synthesize, label, pretrain, finetune, score, evaluate.
#pragma once

#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "checkpoint.hpp"
#include "corpus.hpp"
#include "evalcorr.hpp"
#include "labeling.hpp"
#include "model.hpp"
#include "toy.hpp"
#include "training.hpp"

namespace unite {

/// Every knob of a run. Parsed from `key = value` lines; `#` starts a
/// comment; unknown keys are errors.
struct RunConfig {
  std::uint64_t seed = 0;
  std::string tag = "unite";

  // model
  std::size_t d_model = 64;
  std::size_t n_layers = 2;
  std::size_t n_heads = 4;
  std::size_t d_ffn = 256;
  std::size_t head_dim1 = 0;  // 0 = 3 * d_model
  std::size_t head_dim2 = 0;  // 0 = d_model
  std::size_t max_len = 128;
  std::size_t vocab_size = 512;
  bool segment_embeddings = false;
  MaskVariant mask_ref = MaskVariant::Full;
  MaskVariant mask_src = MaskVariant::Full;
  MaskVariant mask_srcref = MaskVariant::Full;

  // optimization
  double lr = 1e-3;
  double finetune_lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double clip_norm = 1.0;
  std::size_t batch_size = 16;
  std::size_t steps = 500;
  std::size_t warmup_steps = 0;
  std::size_t checkpoint_every = 0;  // 0 = only the final checkpoint

  // data
  double dev_fraction = 0.1;
  std::size_t dev_min = 32;
  double degrade_portion = 0.5;
  double word_drop = 0.15;
  std::size_t max_span = 4;

  // labeling
  LabelScheme labeling = LabelScheme::Rank;
  TaskFormat label_task = TaskFormat::SrcRef;

  void set(const std::string& key, const std::string& value) {
    auto as_size = [&] {
      try {
        std::size_t pos = 0;
        const unsigned long long v = std::stoull(value, &pos);
        if (pos != value.size()) throw Error("");
        return static_cast<std::size_t>(v);
      } catch (...) {
        throw Error("config: " + key + " expects a non-negative integer, got '" + value + "'");
      }
    };
    auto as_double = [&] {
      try {
        std::size_t pos = 0;
        const double v = std::stod(value, &pos);
        if (pos != value.size() || !std::isfinite(v)) throw Error("");
        return v;
      } catch (...) {
        throw Error("config: " + key + " expects a number, got '" + value + "'");
      }
    };
    auto as_bool = [&] {
      if (value == "true" || value == "1") return true;
      if (value == "false" || value == "0") return false;
      throw Error("config: " + key + " expects true/false, got '" + value + "'");
    };
    if (key == "seed") seed = as_size();
    else if (key == "tag") tag = value;
    else if (key == "d_model") d_model = as_size();
    else if (key == "n_layers") n_layers = as_size();
    else if (key == "n_heads") n_heads = as_size();
    else if (key == "d_ffn") d_ffn = as_size();
    else if (key == "head_dim1") head_dim1 = as_size();
    else if (key == "head_dim2") head_dim2 = as_size();
    else if (key == "max_len") max_len = as_size();
    else if (key == "vocab_size") vocab_size = as_size();
    else if (key == "segment_embeddings") segment_embeddings = as_bool();
    else if (key == "mask_ref") mask_ref = parse_mask_variant(value);
    else if (key == "mask_src") mask_src = parse_mask_variant(value);
    else if (key == "mask_srcref") mask_srcref = parse_mask_variant(value);
    else if (key == "lr") lr = as_double();
    else if (key == "finetune_lr") finetune_lr = as_double();
    else if (key == "beta1") beta1 = as_double();
    else if (key == "beta2") beta2 = as_double();
    else if (key == "adam_eps") adam_eps = as_double();
    else if (key == "clip_norm") clip_norm = as_double();
    else if (key == "batch_size") batch_size = as_size();
    else if (key == "steps") steps = as_size();
    else if (key == "warmup_steps") warmup_steps = as_size();
    else if (key == "checkpoint_every") checkpoint_every = as_size();
    else if (key == "dev_fraction") dev_fraction = as_double();
    else if (key == "dev_min") dev_min = as_size();
    else if (key == "degrade_portion") degrade_portion = as_double();
    else if (key == "word_drop") word_drop = as_double();
    else if (key == "max_span") max_span = as_size();
    else if (key == "labeling") labeling = parse_label_scheme(value);
    else if (key == "label_task") label_task = parse_task_format(value);
    else throw Error("config: unknown key '" + key + "'");
  }

  static RunConfig parse(std::istream& in) {
    RunConfig cfg;
    std::string line;
    std::size_t line_no = 0;
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r");
      if (b == std::string::npos) return std::string();
      const auto e = s.find_last_not_of(" \t\r");
      return s.substr(b, e - b + 1);
    };
    while (std::getline(in, line)) {
      ++line_no;
      if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
      line = trim(line);
      if (line.empty()) continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos) throw Error("config: expected key = value @ line " + std::to_string(line_no));
      cfg.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
    return cfg;
  }

  static RunConfig load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open: " + path);
    return parse(in);
  }

  ModelConfig model_config(std::size_t actual_vocab) const {
    ModelConfig m;
    m.d_model = d_model;
    m.n_layers = n_layers;
    m.n_heads = n_heads;
    m.d_ffn = d_ffn;
    m.head_dims = {head_dim1 ? head_dim1 : 3 * d_model, head_dim2 ? head_dim2 : d_model, 1};
    m.max_len = max_len;
    m.vocab_size = actual_vocab;
    m.masks = {{TaskFormat::Ref, mask_ref}, {TaskFormat::Src, mask_src}, {TaskFormat::SrcRef, mask_srcref}};
    m.segment_embeddings = segment_embeddings;
    m.validate();
    return m;
  }

  DegradePolicy degrade_policy() const { return {degrade_portion, word_drop, max_span, seed}; }

  TrainOptions train_options(double learning_rate) const {
    TrainOptions o;
    o.adam = {learning_rate, beta1, beta2, adam_eps, clip_norm};
    o.steps = steps;
    o.batch_size = batch_size;
    o.warmup_steps = warmup_steps;
    o.seed = seed;
    return o;
  }
};

// ---------------------------------------------------------------------------
// Training commands

struct TrainRunResult {
  std::string checkpoint_path;
  Checkpoint checkpoint;
  std::vector<StepRecord> log;
  std::optional<double> dev_loss;  // mean over formats, after training
};

inline std::string checkpoint_name(const std::string& tag, std::size_t step) {
  return tag + "-step" + std::to_string(step) + ".ckpt";
}

inline nlohmann::ordered_json step_json(const StepRecord& r) {
  nlohmann::ordered_json j;
  j["step"] = r.step;
  j["loss_ref"] = r.losses.ref;
  j["loss_src"] = r.losses.src;
  j["loss_srcref"] = r.losses.srcref;
  j["loss"] = r.losses.total();
  j["lr"] = r.lr;
  j["wall_time"] = r.wall_seconds;
  return j;
}

/// Shared loop for pretraining and finetuning. Writes
/// `<tag>-step<k>.ckpt`, a `<tag>-latest` pointer file, `<tag>-log.jsonl`
/// and `vocab.txt` under `out_dir` (when non-empty).
inline TrainRunResult run_training(const RunConfig& cfg, Checkpoint start, std::span<const CorpusRow> rows,
                                   double learning_rate, const std::string& out_dir) {
  std::vector<TrainExample> examples;
  examples.reserve(rows.size());
  for (const auto& r : rows) {
    TrainExample ex = encode_row(r, start.vocab);
    if (!ex.src || !ex.ref) throw Error("training rows need hyp, src and ref");
    const std::size_t longest = ex.hyp.size() + ex.src->size() + ex.ref->size() + 4;
    if (longest > start.config.max_len) throw Error("sequence too long");
    examples.push_back(std::move(ex));
  }
  const DevSplit dev = split_dev(examples.size(), cfg.dev_fraction, cfg.dev_min, cfg.seed);
  const ThreeWaySplit parts = partition_three_way(dev.train.size(), cfg.seed);
  auto remap = [&](const std::vector<std::size_t>& local) {
    std::vector<std::size_t> out;
    for (auto i : local) out.push_back(dev.train[i]);
    return out;
  };
  const ThreeWaySplit split{remap(parts.ref), remap(parts.src), remap(parts.srcref)};

  std::ofstream log;
  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir);
    log.open(out_dir + "/" + cfg.tag + "-log.jsonl", std::ios::binary);
    write_vocab(start.vocab, out_dir + "/vocab.txt");
  }
  TrainRunResult res;
  const std::uint64_t base_step = start.step;
  auto save = [&](std::size_t step) {
    start.step = base_step + step;
    start.tag = cfg.tag;
    const std::string name = checkpoint_name(cfg.tag, start.step);
    if (!out_dir.empty()) {
      save_checkpoint(start, out_dir + "/" + name);
      std::ofstream latest(out_dir + "/" + cfg.tag + "-latest", std::ios::binary);
      latest << name << '\n';
      res.checkpoint_path = out_dir + "/" + name;
    }
  };
  TrainOptions opts = cfg.train_options(learning_rate);
  train(start.params, start.config, examples, split, opts, [&](const StepRecord& rec) {
    res.log.push_back(rec);
    if (log) log << step_json(rec).dump() << '\n';
    if (cfg.checkpoint_every && rec.step % cfg.checkpoint_every == 0 && rec.step != opts.steps) save(rec.step);
  });
  save(opts.steps);
  if (!dev.dev.empty()) {
    std::vector<const TrainExample*> dev_ex;
    for (auto i : dev.dev) dev_ex.push_back(&examples[i]);
    double s = 0.0;
    for (auto f : kAllFormats) s += evaluate_loss(start.params, start.config, dev_ex, f);
    res.dev_loss = s / 3.0;
  }
  res.checkpoint = std::move(start);
  return res;
}

inline Vocab vocab_for_rows(std::span<const CorpusRow> rows, std::size_t max_size) {
  std::vector<std::string> texts;
  for (const auto& r : rows) {
    texts.push_back(r.hyp);
    if (r.src) texts.push_back(*r.src);
    if (r.ref) texts.push_back(*r.ref);
  }
  return build_vocab(texts, max_size);
}

inline Checkpoint fresh_checkpoint(const RunConfig& cfg, Vocab vocab) {
  Checkpoint c;
  c.config = cfg.model_config(vocab.size());
  c.params = init_params(c.config, cfg.seed);
  c.vocab = std::move(vocab);
  c.seed = cfg.seed;
  c.tag = cfg.tag;
  return c;
}

/// Multi-task pretraining from a fresh initialization on a labeled corpus.
inline TrainRunResult cmd_pretrain(const RunConfig& cfg, std::span<const CorpusRow> rows, const std::string& out_dir) {
  if (rows.empty()) throw Error("empty corpus");
  return run_training(cfg, fresh_checkpoint(cfg, vocab_for_rows(rows, cfg.vocab_size)), rows, cfg.lr, out_dir);
}

/// Continues training from `init` (or from scratch when `from_scratch`).
inline TrainRunResult cmd_finetune(const RunConfig& cfg, const Checkpoint& init, std::span<const CorpusRow> rows,
                                   const std::string& out_dir, bool from_scratch = false) {
  if (rows.empty()) throw Error("empty corpus");
  if (from_scratch) return run_training(cfg, fresh_checkpoint(cfg, vocab_for_rows(rows, cfg.vocab_size)), rows,
                                        cfg.finetune_lr, out_dir);
  ModelConfig expected = cfg.model_config(init.vocab.size());
  if (!(expected == init.config)) throw Error("config/checkpoint shape mismatch");
  check_shapes(init.config, init.params);
  return run_training(cfg, init, rows, cfg.finetune_lr, out_dir);
}

// ---------------------------------------------------------------------------
// Scoring and evaluation

inline double score_row(const Checkpoint& ckpt, const CorpusRow& row, TaskFormat format,
                        std::optional<MaskVariant> variant = std::nullopt) {
  const auto& v = ckpt.vocab;
  std::optional<TokenSeq> src, ref;
  if (row.src) src = tokenize(*row.src, v);
  if (row.ref) ref = tokenize(*row.ref, v);
  return score(tokenize(row.hyp, v), src, ref, format, ckpt.params, ckpt.config, variant);
}

/// Rows with the model's prediction stored in `score`.
inline std::vector<CorpusRow> cmd_score(const Checkpoint& ckpt, std::span<const CorpusRow> rows, TaskFormat format,
                                        std::optional<MaskVariant> variant = std::nullopt) {
  std::vector<CorpusRow> out(rows.begin(), rows.end());
  for (auto& r : out) r.score = score_row(ckpt, r, format, variant);
  return out;
}

using RowMetric = std::function<double(const CorpusRow&)>;

inline std::string group_of(const CorpusRow& row, const std::string& key) {
  if (auto it = row.extra.find(key); it != row.extra.end() && it->is_string()) return it->get<std::string>();
  return "all";
}

/// Pearson per group between the metric and each row's `gold`.
inline CorrelationReport evaluate_pearson(std::span<const CorpusRow> rows, const RowMetric& metric,
                                          const std::string& group_key = "lp") {
  std::map<std::string, std::vector<ScoredSample>> groups;
  for (const auto& r : rows) {
    auto it = r.extra.find("gold");
    if (it == r.extra.end() || !it->is_number()) throw Error("missing gold");
    groups[group_of(r, group_key)].push_back({metric(r), it->get<double>()});
  }
  return pearson_report(groups);
}

/// WMT Kendall per group over preference pairs that reference hypothesis
/// rows by `id`.
inline CorrelationReport evaluate_kendall(std::span<const CorpusRow> hyps, std::span<const PreferencePair> pairs,
                                          const RowMetric& metric, TiePolicy ties = TiePolicy::Discordant) {
  if (pairs.empty()) throw Error("missing gold");
  std::map<std::string, const CorpusRow*> by_id;
  for (const auto& r : hyps) {
    auto it = r.extra.find("id");
    if (it == r.extra.end() || !it->is_string()) throw Error("hypothesis row without id");
    by_id[it->get<std::string>()] = &r;
  }
  std::map<std::string, double> cache;
  auto metric_of = [&](const std::string& id) {
    if (auto c = cache.find(id); c != cache.end()) return c->second;
    auto it = by_id.find(id);
    if (it == by_id.end()) throw Error("pair references unknown hypothesis " + id);
    return cache[id] = metric(*it->second);
  };
  std::map<std::string, std::vector<RelativeRankingPair>> groups;
  for (const auto& p : pairs) groups[p.group].push_back({metric_of(p.better_hyp), metric_of(p.worse_hyp)});
  return kendall_report(groups, ties);
}

inline RowMetric checkpoint_metric(const Checkpoint& ckpt, TaskFormat format,
                                   std::optional<MaskVariant> variant = std::nullopt) {
  return [&ckpt, format, variant](const CorpusRow& r) { return score_row(ckpt, r, format, variant); };
}

inline std::vector<PreferencePair> read_pairs_jsonl(const std::string& path, std::span<const CorpusRow> hyps) {
  std::map<std::string, std::string> group_of_id;
  for (const auto& r : hyps)
    if (auto it = r.extra.find("id"); it != r.extra.end() && it->is_string())
      group_of_id[it->get<std::string>()] = group_of(r, "lp");
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open: " + path);
  std::vector<PreferencePair> out;
  for (const auto& [line_no, j] : read_json_lines(in)) {
    for (const char* key : {"src_id", "better_hyp", "worse_hyp"})
      if (!j.contains(key) || !j[key].is_string())
        throw Error(std::string("missing field ") + key + " @ line " + std::to_string(line_no));
    PreferencePair p{j["src_id"].get<std::string>(), j["better_hyp"].get<std::string>(),
                     j["worse_hyp"].get<std::string>(), "all"};
    if (j.contains("lp") && j["lp"].is_string()) p.group = j["lp"].get<std::string>();
    else if (auto it = group_of_id.find(p.better_hyp); it != group_of_id.end()) p.group = it->second;
    out.push_back(std::move(p));
  }
  return out;
}

inline void write_pairs_jsonl(std::span<const PreferencePair> pairs, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open for writing: " + path);
  for (const auto& p : pairs) {
    nlohmann::ordered_json j;
    j["src_id"] = p.src_id;
    j["better_hyp"] = p.better_hyp;
    j["worse_hyp"] = p.worse_hyp;
    j["lp"] = p.group;
    out << j.dump() << '\n';
  }
}

}  // namespace unite
