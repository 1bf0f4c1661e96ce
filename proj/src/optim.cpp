#include "ensembits/optim.hpp"

#include "ensembits/error.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

namespace ensembits::training {

void adamw_step(std::span<Matrix* const> params, std::span<const Matrix> grads, AdamWState& state, double lr,
                const AdamWOptions& opt) {
  if (params.size() != grads.size()) throw Error("adamw: parameter and gradient counts differ");
  if (state.m.empty()) {
    for (const Matrix* p : params) {
      state.m.push_back(Matrix::Zero(p->rows(), p->cols()));
      state.v.push_back(Matrix::Zero(p->rows(), p->cols()));
    }
  }
  if (state.m.size() != params.size()) throw Error("adamw: optimizer state does not match parameters");
  ++state.step;
  const double bc1 = 1.0 - std::pow(opt.beta1, double(state.step));
  const double bc2 = 1.0 - std::pow(opt.beta2, double(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Matrix& p = *params[i];
    const Matrix& g = grads[i];
    if (g.rows() != p.rows() || g.cols() != p.cols()) throw Error("adamw: gradient shape mismatch");
    state.m[i] = opt.beta1 * state.m[i] + (1.0 - opt.beta1) * g;
    state.v[i] = opt.beta2 * state.v[i] + (1.0 - opt.beta2) * g.cwiseProduct(g);
    p *= 1.0 - lr * opt.weight_decay;
    p.array() -= lr * (state.m[i].array() / bc1) / ((state.v[i].array() / bc2).sqrt() + opt.eps);
  }
}

double cosine_lr(std::size_t step, std::size_t warmup, std::size_t total_steps, double lr_max, double lr_min) {
  if (total_steps <= warmup) throw Error("cosine_lr: total_steps must exceed warmup");
  if (step > total_steps) throw Error("cosine_lr: step beyond schedule");
  if (step < warmup) return lr_max * double(step) / double(warmup);
  const double progress = double(step - warmup) / double(total_steps - warmup);
  return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + std::cos(std::numbers::pi * progress));
}

double clip_global_norm(std::span<Matrix> grads, double max_norm) {
  double ss = 0.0;
  for (const auto& g : grads) ss += g.squaredNorm();
  const double norm = std::sqrt(ss);
  if (norm > max_norm && norm > 0.0) {
    const double s = max_norm / norm;
    for (auto& g : grads) g *= s;
  }
  return norm;
}

}  // namespace ensembits::training

namespace ensembits::nn {

double finite_difference_check(const std::function<double(std::span<const Matrix>)>& loss, std::vector<Matrix> params,
                               std::span<const Matrix> grads, std::size_t probes, double h, std::uint64_t seed,
                               double floor) {
  if (!(h > 0.0)) throw Error("finite_difference_check: step must be positive");
  if (params.size() != grads.size()) throw Error("finite_difference_check: gradient list does not match parameters");
  std::size_t total = 0;
  for (const auto& p : params) total += static_cast<std::size_t>(p.size());
  if (total == 0) throw Error("finite_difference_check: no parameters");

  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, total - 1);
  double worst = 0.0;
  for (std::size_t n = 0; n < probes; ++n) {
    std::size_t flat = pick(rng), t = 0;
    while (flat >= static_cast<std::size_t>(params[t].size())) flat -= static_cast<std::size_t>(params[t++].size());
    double& x = params[t].data()[flat];
    const double saved = x;
    x = saved + h;
    const double up = loss(params);
    x = saved - h;
    const double down = loss(params);
    x = saved;
    const double fd = (up - down) / (2.0 * h);
    const double an = grads[t].data()[flat];
    const double rel = std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), floor});
    worst = std::max(worst, rel);
  }
  return worst;
}

}  // namespace ensembits::nn
