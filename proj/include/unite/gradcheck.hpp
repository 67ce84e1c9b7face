// Central finite-difference verification of tape gradients.
#pragma once

#include <algorithm>
#include <cmath>
#include <set>
#include <string>
#include <vector>

#include "model.hpp"
#include "training.hpp"

namespace unite {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst_tensor;
  std::size_t checked = 0;
  std::size_t groups = 0;
};

/// Squared error of one example under `format`/`variant`, and its gradient.
inline double example_loss_and_grad(const ModelParams& params, const ModelConfig& config, const PackedInput& packed,
                                    MaskVariant variant, double target, Gradients* grads) {
  Tape tape;
  BoundWeights w = bind(tape, params);
  Var loss = ops::squared_error(tape, forward(tape, w, config, packed, variant), target);
  const double value = tape.scalar(loss);
  if (grads) {
    tape.backward(loss);
    *grads = zeros_like(params);
    collect_gradients(tape, w, *grads);
  }
  return value;
}

/// Compares analytic gradients with (f(x+eps) - f(x-eps)) / 2eps on at least
/// `min_samples` scalar parameters drawn from every non-empty tensor.
/// Embedding rows are drawn from the rows the input actually uses.
inline GradCheckResult grad_check(const ModelParams& params, const ModelConfig& config, const PackedInput& packed,
                                  MaskVariant variant, double target, double eps = 1e-5,
                                  std::size_t min_samples = 200, std::uint64_t seed = 0) {
  if (!(eps >= 1e-7 && eps <= 1e-3)) throw Error("grad_check: eps must lie in [1e-7, 1e-3]");
  Gradients analytic;
  example_loss_and_grad(params, config, packed, variant, target, &analytic);

  ModelParams probe = params;
  auto tensors = probe.tensors();
  auto grads = analytic.tensors();
  const auto names = probe.names();

  std::set<std::size_t> token_rows(packed.tokens.begin(), packed.tokens.end());
  std::set<std::size_t> seg_rows;
  for (std::size_t i = 0; i < packed.length(); ++i) seg_rows.insert(static_cast<std::size_t>(segment_of(packed, i)));

  auto candidate_rows = [&](const std::string& name, const Matrix& m) {
    std::vector<std::size_t> rows;
    if (name == "token_embed") rows.assign(token_rows.begin(), token_rows.end());
    else if (name == "position_embed")
      for (std::size_t r = 0; r < packed.length(); ++r) rows.push_back(r);
    else if (name == "segment_embed") rows.assign(seg_rows.begin(), seg_rows.end());
    else
      for (std::size_t r = 0; r < m.rows; ++r) rows.push_back(r);
    return rows;
  };

  std::size_t groups = 0;
  for (auto* t : tensors) groups += t->size() > 0;
  GradCheckResult res;
  res.groups = groups;
  Rng rng(seed);
  for (std::size_t per_group = (min_samples + groups - 1) / groups;; per_group *= 2) {
    std::vector<std::pair<std::size_t, std::size_t>> picks;  // (tensor, flat index)
    for (std::size_t t = 0; t < tensors.size(); ++t) {
      const Matrix& m = *tensors[t];
      if (m.size() == 0) continue;
      const auto rows = candidate_rows(names[t], m);
      std::vector<std::size_t> flat;
      for (auto r : rows)
        for (std::size_t c = 0; c < m.cols; ++c) flat.push_back(r * m.cols + c);
      rng.shuffle(flat);
      for (std::size_t k = 0; k < std::min(per_group, flat.size()); ++k) picks.emplace_back(t, flat[k]);
    }
    if (picks.size() < min_samples && per_group < (std::size_t{1} << 20)) continue;

    for (auto [t, i] : picks) {
      double& x = tensors[t]->data[i];
      const double saved = x;
      x = saved + eps;
      const double up = example_loss_and_grad(probe, config, packed, variant, target, nullptr);
      x = saved - eps;
      const double down = example_loss_and_grad(probe, config, packed, variant, target, nullptr);
      x = saved;
      const double numeric = (up - down) / (2.0 * eps);
      const double a = grads[t]->data[i];
      const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-8});
      if (rel > res.max_rel_error) {
        res.max_rel_error = rel;
        res.worst_tensor = names[t];
      }
    }
    res.checked = picks.size();
    return res;
  }
}

}  // namespace unite
