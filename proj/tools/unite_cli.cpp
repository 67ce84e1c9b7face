// Command-line front end: synthesize, label, pretrain, finetune, score,
// evaluate, grad-check, mask-dump, toy.
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include <unite/unite.hpp>

namespace {

using namespace unite;

struct Globals {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out_dir;
  std::vector<std::string> overrides;

  RunConfig run_config() const {
    RunConfig cfg = config_path.empty() ? RunConfig{} : RunConfig::load(config_path);
    for (const auto& kv : overrides) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) throw Error("--set expects key=value, got '" + kv + "'");
      cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
    }
    if (seed) cfg.seed = *seed;
    return cfg;
  }

  std::string out_file(const std::string& name) const {
    if (out_dir.empty()) return {};
    std::filesystem::create_directories(out_dir);
    return out_dir + "/" + name;
  }
};

void emit_rows(const std::vector<CorpusRow>& rows, const std::string& path) {
  if (path.empty()) write_jsonl(rows, std::cout);
  else write_jsonl(rows, path);
}

std::vector<std::size_t> parse_widths(const std::string& text) {
  std::vector<std::size_t> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(std::stoul(item));
  if (out.size() != 3) throw Error("--spans expects three widths hyp,src,ref (0 = absent)");
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Unified translation-evaluation model: training, scoring and correlation tools"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config_path, "key = value run configuration file");
  app.add_option("--seed", g.seed, "RNG seed (overrides the config)");
  app.add_option("--out", g.out_dir, "output directory");
  app.add_option("--set", g.overrides, "override one config key (key=value); repeatable");

  // synthesize
  auto* synth = app.add_subcommand("synthesize", "noisy hypotheses from a parallel {src, ref} JSONL corpus");
  std::string synth_in;
  synth->add_option("--input", synth_in, "parallel JSONL")->required();

  // label
  auto* label = app.add_subcommand("label", "rank-normalized pseudo labels for a triplet corpus");
  std::string label_in, label_scorer, label_task = "src+ref", label_mask, label_scheme;
  std::vector<std::string> label_ckpts;
  std::size_t label_ensemble = 0;
  label->add_option("--input", label_in, "triplet JSONL")->required();
  label->add_option("--checkpoint", label_ckpts, "scorer checkpoint; repeat to ensemble");
  label->add_option("--scorer", label_scorer, "checkpoint-free scorer: overlap");
  label->add_option("--ensemble", label_ensemble, "number of scorer checkpoints expected");
  label->add_option("--task", label_task, "ref|src|src+ref");
  label->add_option("--mask", label_mask, "mask variant (default: the checkpoint's)");
  label->add_option("--labeling", label_scheme, "rank|z-norm (default: config)");

  // pretrain / finetune
  auto* pretrain = app.add_subcommand("pretrain", "unified multi-task training from scratch");
  std::string pretrain_in;
  pretrain->add_option("--train", pretrain_in, "labeled JSONL")->required();

  auto* finetune = app.add_subcommand("finetune", "continue multi-task training from a checkpoint");
  std::string finetune_in, finetune_init;
  bool from_scratch = false;
  finetune->add_option("--train", finetune_in, "labeled JSONL")->required();
  finetune->add_option("--init", finetune_init, "initial checkpoint");
  finetune->add_flag("--from-scratch", from_scratch, "ignore --init and start from a fresh model");

  // score
  auto* score_cmd = app.add_subcommand("score", "score JSONL rows with a checkpoint");
  std::string score_in, score_ckpt, score_task = "src+ref", score_mask;
  score_cmd->add_option("--input", score_in, "JSONL rows")->required();
  score_cmd->add_option("--checkpoint", score_ckpt, "checkpoint")->required();
  score_cmd->add_option("--task", score_task, "ref|src|src+ref");
  score_cmd->add_option("--mask", score_mask, "mask variant (default: the checkpoint's)");

  // evaluate
  auto* eval = app.add_subcommand("evaluate", "segment-level correlation against gold judgments");
  std::string eval_ckpt, eval_measure = "kendall", eval_in, eval_pairs, eval_task = "src+ref", eval_mask,
                         eval_ties = "discordant", eval_group = "lp";
  eval->add_option("--checkpoint", eval_ckpt, "checkpoint")->required();
  eval->add_option("--measure", eval_measure, "kendall|pearson");
  eval->add_option("--input,--hyps", eval_in, "rows (pearson: with gold; kendall: hypotheses with id)")->required();
  eval->add_option("--pairs", eval_pairs, "preference pairs JSONL (kendall)");
  eval->add_option("--task", eval_task, "ref|src|src+ref");
  eval->add_option("--mask", eval_mask, "mask variant (default: the checkpoint's)");
  eval->add_option("--ties", eval_ties, "discordant|excluded");
  eval->add_option("--group-key", eval_group, "row field used to group results");

  // grad-check
  auto* gc = app.add_subcommand("grad-check", "finite-difference check of the analytic gradients");
  std::string gc_task = "src+ref", gc_mask = "full";
  double gc_eps = 1e-5;
  std::size_t gc_d = 8, gc_layers = 2, gc_heads = 2, gc_samples = 200;
  gc->add_option("--task", gc_task, "ref|src|src+ref");
  gc->add_option("--mask", gc_mask, "mask variant");
  gc->add_option("--eps", gc_eps, "central-difference step");
  gc->add_option("--d-model", gc_d, "hidden width");
  gc->add_option("--layers", gc_layers, "encoder layers");
  gc->add_option("--heads", gc_heads, "attention heads");
  gc->add_option("--samples", gc_samples, "minimum number of checked scalars");

  // mask-dump
  auto* md = app.add_subcommand("mask-dump", "print a mask as a 0/1 grid (1 = blocked)");
  std::string md_variant = "hard", md_spans = "2,2,2";
  md->add_option("--variant", md_variant, "mask variant");
  md->add_option("--spans", md_spans, "segment widths hyp,src,ref; 0 = absent");

  // toy
  auto* toy = app.add_subcommand("toy", "write a toy corpus with known quality (train, test, pairs, parallel)");
  ToyOptions toy_opts;
  std::size_t toy_test_sources = 100, toy_parallel_pairs = 2000;
  double toy_threshold = 0.1;
  toy->add_option("--sources", toy_opts.sources, "training sources");
  toy->add_option("--hyps-per-source", toy_opts.hyps_per_source, "hypotheses per source");
  toy->add_option("--test-sources", toy_test_sources, "held-out sources");
  toy->add_option("--parallel", toy_parallel_pairs, "parallel pairs for synthesis");
  toy->add_option("--threshold", toy_threshold, "gold gap needed to form a preference pair");

  CLI11_PARSE(app, argc, argv);

  try {
    RunConfig cfg = g.run_config();

    if (*synth) {
      const auto pairs = read_parallel_jsonl(synth_in);
      const auto corpus = synthesize_corpus(pairs, cfg.degrade_policy());
      std::vector<CorpusRow> rows;
      for (const auto& t : corpus.triplets) rows.push_back(row_from_triplet(t));
      emit_rows(rows, g.out_file("synthetic.jsonl"));
    } else if (*label) {
      const auto rows = read_jsonl(label_in);
      std::vector<RawTriplet> triplets;
      for (const auto& r : rows) triplets.push_back(r.triplet());
      if (label_ensemble && label_ensemble != label_ckpts.size())
        throw Error("--ensemble " + std::to_string(label_ensemble) + " needs that many --checkpoint files");
      const TaskFormat format = parse_task_format(label_task);
      std::vector<Scorer> scorers;
      for (const auto& path : label_ckpts) {
        auto ckpt = std::make_shared<const Checkpoint>(load_checkpoint(path));
        const MaskVariant v = label_mask.empty() ? ckpt->config.mask_for(format) : parse_mask_variant(label_mask);
        scorers.push_back(checkpoint_scorer(ckpt, format, v));
      }
      if (!label_scorer.empty()) {
        if (label_scorer != "overlap") throw Error("unknown scorer: " + label_scorer);
        scorers.push_back(overlap_f1);
      }
      const LabelScheme scheme = label_scheme.empty() ? cfg.labeling : parse_label_scheme(label_scheme);
      emit_rows(label_corpus(triplets, scorers, scheme), g.out_file("labeled.jsonl"));
    } else if (*pretrain) {
      if (g.out_dir.empty()) throw Error("pretrain needs --out");
      const auto rows = read_jsonl(pretrain_in);
      const auto res = cmd_pretrain(cfg, rows, g.out_dir);
      std::cout << res.checkpoint_path << '\n';
    } else if (*finetune) {
      if (g.out_dir.empty()) throw Error("finetune needs --out");
      const auto rows = read_jsonl(finetune_in);
      TrainRunResult res;
      if (from_scratch) {
        res = cmd_finetune(cfg, Checkpoint{}, rows, g.out_dir, true);
      } else {
        if (finetune_init.empty()) throw Error("finetune needs --init or --from-scratch");
        res = cmd_finetune(cfg, load_checkpoint(finetune_init), rows, g.out_dir);
      }
      std::cout << res.checkpoint_path << '\n';
    } else if (*score_cmd) {
      const Checkpoint ckpt = load_checkpoint(score_ckpt);
      const auto rows = read_jsonl(score_in, /*require_all=*/false);
      std::optional<MaskVariant> v;
      if (!score_mask.empty()) v = parse_mask_variant(score_mask);
      emit_rows(cmd_score(ckpt, rows, parse_task_format(score_task), v), g.out_file("scores.jsonl"));
    } else if (*eval) {
      const Checkpoint ckpt = load_checkpoint(eval_ckpt);
      const auto rows = read_jsonl(eval_in, /*require_all=*/false);
      std::optional<MaskVariant> v;
      if (!eval_mask.empty()) v = parse_mask_variant(eval_mask);
      const auto metric = checkpoint_metric(ckpt, parse_task_format(eval_task), v);
      CorrelationReport rep;
      if (parse_measure(eval_measure) == Measure::Pearson) {
        rep = evaluate_pearson(rows, metric, eval_group);
      } else {
        if (eval_pairs.empty()) throw Error("kendall needs --pairs");
        rep = evaluate_kendall(rows, read_pairs_jsonl(eval_pairs, rows), metric, parse_tie_policy(eval_ties));
      }
      if (const auto path = g.out_file("report.json"); !path.empty()) {
        std::ofstream out(path, std::ios::binary);
        out << rep.to_json().dump(2) << '\n';
      }
      std::cout << rep.to_table();
    } else if (*gc) {
      RunConfig small = cfg;
      small.d_model = gc_d;
      small.n_layers = gc_layers;
      small.n_heads = gc_heads;
      small.d_ffn = 2 * gc_d;
      small.head_dim1 = small.head_dim2 = 0;
      small.max_len = 32;
      const TaskFormat format = parse_task_format(gc_task);
      const MaskVariant variant = parse_mask_variant(gc_mask);
      ModelConfig mc = small.model_config(24);
      const ModelParams params = init_params(mc, cfg.seed);
      Rng rng(cfg.seed + 17);
      auto seq = [&](std::size_t n) {
        TokenSeq s;
        for (std::size_t i = 0; i < n; ++i) s.push_back(static_cast<TokenId>(kNumSpecials + rng.below(20)));
        return s;
      };
      const PackedInput packed = pack(seq(4), seq(3), seq(5), format);
      const auto res = grad_check(params, mc, packed, variant, 0.7, gc_eps, gc_samples, cfg.seed);
      std::cout << "task " << to_string(format) << " mask " << to_string(variant) << " checked " << res.checked
                << " groups " << res.groups << " max_rel_error " << res.max_rel_error << " (" << res.worst_tensor
                << ")\n";
      return res.max_rel_error < 1e-3 ? 0 : 1;
    } else if (*md) {
      const auto w = parse_widths(md_spans);
      if (w[0] == 0) throw Error("--spans: the hypothesis segment is always present");
      std::cout << mask_grid(build_mask(parse_mask_variant(md_variant), SegmentSpans::from_widths(w[0], w[1], w[2])));
    } else if (*toy) {
      if (g.out_dir.empty()) throw Error("toy needs --out");
      toy_opts.seed = cfg.seed;
      const ToySplits splits = toy_splits(toy_opts, toy_test_sources, toy_parallel_pairs, toy_threshold);
      write_jsonl(splits.train, g.out_file("train.jsonl"));
      write_jsonl(splits.test, g.out_file("test.jsonl"));
      write_pairs_jsonl(splits.pairs, g.out_file("pairs.jsonl"));
      std::ofstream par(g.out_file("parallel.jsonl"), std::ios::binary);
      for (const auto& p : splits.parallel) {
        nlohmann::ordered_json j;
        j["src"] = p.src;
        j["ref"] = p.ref;
        par << j.dump() << '\n';
      }
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
