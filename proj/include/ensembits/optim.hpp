#pragma once

#include "ensembits/tape.hpp"

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

namespace ensembits::training {

using nn::Matrix;

struct AdamWState {
  std::vector<Matrix> m, v;
  std::uint64_t step = 0;
};

struct AdamWOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-5;
};

/// One decoupled-weight-decay Adam step; initializes `state` on first use.
void adamw_step(std::span<Matrix* const> params, std::span<const Matrix> grads, AdamWState& state, double lr,
                const AdamWOptions& opt = {});

/// Linear warm-up to lr_max, then cosine decay to lr_min at total_steps.
double cosine_lr(std::size_t step, std::size_t warmup, std::size_t total_steps, double lr_max, double lr_min);

/// Rescales gradients so their global L2 norm is at most max_norm; returns the pre-clip norm.
double clip_global_norm(std::span<Matrix> grads, double max_norm);

}  // namespace ensembits::training

namespace ensembits::nn {

/// Central-difference check of `grads` against `loss` on `probes` randomly
/// chosen scalar entries of `params`. Returns the largest
/// |g_fd - g| / max(|g_fd|, |g|, floor).
double finite_difference_check(const std::function<double(std::span<const Matrix>)>& loss,
                               std::vector<Matrix> params, std::span<const Matrix> grads, std::size_t probes,
                               double h, std::uint64_t seed, double floor = 1e-6);

}  // namespace ensembits::nn
