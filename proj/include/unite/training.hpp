// Multi-task training: data partitioning, the summed-loss step and the loop.
#pragma once

#include <algorithm>
#include <array>
#include <chrono>
#include <functional>
#include <numeric>
#include <optional>
#include <span>
#include <vector>

#include "autodiff.hpp"
#include "corpus.hpp"
#include "model.hpp"
#include "packing.hpp"

namespace unite {

/// A scored example with the segments it has; packing checks the format.
struct TrainExample {
  TokenSeq hyp;
  std::optional<TokenSeq> src;
  std::optional<TokenSeq> ref;
  double score = 0.0;
};

inline TrainExample encode_row(const CorpusRow& row, const Vocab& vocab) {
  if (!row.score) throw Error("training row without score");
  TrainExample ex;
  ex.hyp = tokenize(row.hyp, vocab);
  if (row.src) ex.src = tokenize(*row.src, vocab);
  if (row.ref) ex.ref = tokenize(*row.ref, vocab);
  ex.score = *row.score;
  return ex;
}

struct ThreeWaySplit {
  std::vector<std::size_t> ref;
  std::vector<std::size_t> src;
  std::vector<std::size_t> srcref;

  const std::vector<std::size_t>& operator[](TaskFormat f) const {
    return f == TaskFormat::Ref ? ref : f == TaskFormat::Src ? src : srcref;
  }
};

/// Seeded shuffle of [0, n) cut into contiguous thirds; earlier thirds take
/// the remainder, so sizes differ by at most one.
inline ThreeWaySplit partition_three_way(std::size_t n, std::uint64_t seed) {
  if (n < 3) throw Error("corpus too small for a three-way partition");
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(seed);
  rng.shuffle(idx);
  const std::size_t base = n / 3, extra = n % 3;
  const std::size_t s0 = base + (extra > 0), s1 = base + (extra > 1);
  ThreeWaySplit out;
  out.ref.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(s0));
  out.src.assign(idx.begin() + static_cast<std::ptrdiff_t>(s0), idx.begin() + static_cast<std::ptrdiff_t>(s0 + s1));
  out.srcref.assign(idx.begin() + static_cast<std::ptrdiff_t>(s0 + s1), idx.end());
  return out;
}

struct DevSplit {
  std::vector<std::size_t> train;
  std::vector<std::size_t> dev;
};

/// Holds out max(ceil(fraction * n), min_dev) examples, or nothing when the
/// corpus would leave fewer than three training examples per format.
inline DevSplit split_dev(std::size_t n, double fraction, std::size_t min_dev, std::uint64_t seed) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(seed ^ 0x9e3779b97f4a7c15ULL);
  rng.shuffle(idx);
  std::size_t dev = fraction > 0.0 ? std::max(degrade_count(fraction, n), min_dev) : 0;
  if (dev + 9 > n) dev = 0;
  DevSplit out;
  out.dev.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(dev));
  out.train.assign(idx.begin() + static_cast<std::ptrdiff_t>(dev), idx.end());
  std::sort(out.dev.begin(), out.dev.end());
  std::sort(out.train.begin(), out.train.end());
  return out;
}

struct LossTriple {
  double ref = 0.0;
  double src = 0.0;
  double srcref = 0.0;

  double total() const { return multitask_loss(ref, src, srcref); }
  double& operator[](TaskFormat f) { return f == TaskFormat::Ref ? ref : f == TaskFormat::Src ? src : srcref; }
};

/// One batch per format, in Ref, Src, SrcRef order.
using FormatBatches = std::array<std::vector<const TrainExample*>, 3>;

/// Summed per-format mean squared errors and their exact gradient, from one
/// tape and one backward pass.
inline LossTriple multitask_loss_and_grad(const ModelParams& params, const ModelConfig& config,
                                          const FormatBatches& batches, Gradients* grads) {
  Tape tape;
  BoundWeights w = bind(tape, params);
  LossTriple losses;
  std::vector<Var> per_format;
  for (std::size_t f = 0; f < 3; ++f) {
    const TaskFormat format = kAllFormats[f];
    const auto& batch = batches[f];
    if (batch.empty()) throw Error("empty batch for format " + std::string(to_string(format)));
    std::vector<Var> errs;
    errs.reserve(batch.size());
    for (const TrainExample* ex : batch) {
      const PackedInput packed = pack(ex->hyp, ex->src, ex->ref, format);
      Var p = forward(tape, w, config, packed, config.mask_for(format));
      errs.push_back(ops::squared_error(tape, p, ex->score));
    }
    Var mean = ops::scale(tape, ops::sum_scalars(tape, errs), 1.0 / static_cast<double>(batch.size()));
    losses[format] = tape.scalar(mean);
    per_format.push_back(mean);
  }
  Var total = ops::sum_scalars(tape, per_format);
  if (grads) {
    tape.backward(total);
    *grads = zeros_like(params);
    collect_gradients(tape, w, *grads);
  }
  return losses;
}

/// Three forward passes (one per format, each with its configured mask),
/// the summed loss, one backward pass, clipping and one Adam update.
/// Returns the losses measured before the update.
inline LossTriple multitask_step(ModelParams& params, const ModelConfig& config, const FormatBatches& batches,
                                 AdamState& opt) {
  Gradients grads;
  const LossTriple losses = multitask_loss_and_grad(params, config, batches, &grads);
  auto p = params.tensors();
  auto g = grads.tensors();
  adam_step(p, g, opt);
  return losses;
}

/// Mean squared error over a set of examples for one format (no gradient).
inline double evaluate_loss(const ModelParams& params, const ModelConfig& config,
                            std::span<const TrainExample* const> examples, TaskFormat format) {
  if (examples.empty()) throw Error("evaluate_loss: no examples");
  double s = 0.0;
  for (const TrainExample* ex : examples) {
    const double p = score_packed(params, config, pack(ex->hyp, ex->src, ex->ref, format), config.mask_for(format));
    s += mse_loss(p, ex->score);
  }
  return s / static_cast<double>(examples.size());
}

struct TrainOptions {
  AdamConfig adam;
  std::size_t steps = 500;
  std::size_t batch_size = 16;   // per format
  std::size_t warmup_steps = 0;  // linear warmup; 0 disables
  std::uint64_t seed = 0;
};

struct StepRecord {
  std::size_t step = 0;
  LossTriple losses;
  double lr = 0.0;
  double wall_seconds = 0.0;
};

/// Cycles through one fixed partition per format, reshuffling each
/// partition at the start of every pass over it.
class BatchStream {
 public:
  BatchStream(std::vector<std::size_t> indices, std::uint64_t seed) : order_(std::move(indices)), rng_(seed) {
    if (order_.empty()) throw Error("empty batch");
    rng_.shuffle(order_);
  }
  std::vector<std::size_t> next(std::size_t batch) {
    std::vector<std::size_t> out;
    out.reserve(batch);
    while (out.size() < batch) {
      if (pos_ == order_.size()) {
        rng_.shuffle(order_);
        pos_ = 0;
      }
      out.push_back(order_[pos_++]);
    }
    return out;
  }

 private:
  std::vector<std::size_t> order_;
  Rng rng_;
  std::size_t pos_ = 0;
};

/// Runs `opts.steps` multitask steps. `split` assigns example indices to
/// formats for the whole run.
inline void train(ModelParams& params, const ModelConfig& config, std::span<const TrainExample> examples,
                  const ThreeWaySplit& split, const TrainOptions& opts,
                  const std::function<void(const StepRecord&)>& on_step = {}) {
  AdamState opt;
  opt.config = opts.adam;
  std::array<BatchStream, 3> streams = {BatchStream(split.ref, opts.seed * 3 + 101),
                                        BatchStream(split.src, opts.seed * 3 + 102),
                                        BatchStream(split.srcref, opts.seed * 3 + 103)};
  const auto t0 = std::chrono::steady_clock::now();
  for (std::size_t step = 1; step <= opts.steps; ++step) {
    opt.config.lr = opts.adam.lr;
    if (opts.warmup_steps > 0 && step <= opts.warmup_steps)
      opt.config.lr *= static_cast<double>(step) / static_cast<double>(opts.warmup_steps);
    FormatBatches batches;
    for (std::size_t f = 0; f < 3; ++f)
      for (std::size_t i : streams[f].next(opts.batch_size)) batches[f].push_back(&examples[i]);
    StepRecord rec;
    rec.step = step;
    rec.lr = opt.config.lr;
    rec.losses = multitask_step(params, config, batches, opt);
    rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (on_step) on_step(rec);
  }
}

}  // namespace unite
