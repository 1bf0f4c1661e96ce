#pragma once

#include "ensembits/model.hpp"
#include "ensembits/objective.hpp"
#include "ensembits/optim.hpp"
#include "ensembits/quantizer.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <limits>
#include <map>
#include <numeric>
#include <random>
#include <vector>

namespace testing {

/// Exhaustive minimum over injective row->column maps.
inline double brute_force_assignment(const Eigen::MatrixXd& cost) {
  const auto n = cost.rows(), m = cost.cols();
  std::vector<int> cols(static_cast<std::size_t>(m));
  std::iota(cols.begin(), cols.end(), 0);
  double best = std::numeric_limits<double>::infinity();
  do {
    double c = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) c += cost(i, cols[static_cast<std::size_t>(i)]);
    best = std::min(best, c);
  } while (std::next_permutation(cols.begin(), cols.end()));
  return best;
}

/// R^2 of an ordinary least-squares fit on one-hot group indicators.
inline double one_hot_r2(const std::vector<double>& y, const std::vector<long>& labels) {
  std::map<long, Eigen::Index> col;
  for (long l : labels) col.emplace(l, static_cast<Eigen::Index>(col.size()));
  const auto n = static_cast<Eigen::Index>(y.size());
  Eigen::MatrixXd X = Eigen::MatrixXd::Zero(n, static_cast<Eigen::Index>(col.size()));
  Eigen::VectorXd v(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    X(i, col.at(labels[static_cast<std::size_t>(i)])) = 1.0;
    v(i) = y[static_cast<std::size_t>(i)];
  }
  const Eigen::VectorXd beta = X.colPivHouseholderQr().solve(v);
  const double sse = (v - X * beta).squaredNorm();
  const double sst = (v.array() - v.mean()).matrix().squaredNorm();
  return 1.0 - sse / sst;
}

inline ensembits::nn::ModelConfig tiny_model(std::size_t input_dim = 5, std::size_t slots = 4) {
  ensembits::nn::ModelConfig c;
  c.input_dim = input_dim;
  c.hidden = 8;
  c.queries = 2;
  c.heads = 2;
  c.blocks = 1;
  c.latent = 4;
  c.decoder_hidden = 8;
  c.slots = slots;
  return c;
}

/// Two-branch objective on a tiny model with frozen discrete decisions.
struct ObjectiveProbe {
  ensembits::nn::ModelParams params;
  ensembits::quantizer::Codebooks books;
  std::vector<ensembits::training::BatchItem> items;
  ensembits::training::LossWeights weights;
  ensembits::training::BranchDecisions full, sub;
  ensembits::nn::Matrix teacher;  // full-branch latents at the base parameters

  explicit ObjectiveProbe(std::uint64_t seed, std::size_t n_items = 3) {
    using namespace ensembits;
    const auto cfg = tiny_model();
    params = nn::init_params(seed, cfg);
    std::mt19937_64 rng(seed + 1);
    std::normal_distribution<double> g(0.0, 1.0);
    for (std::size_t b = 0; b < n_items; ++b) {
      training::BatchItem it;
      it.frames = nn::Matrix(static_cast<Eigen::Index>(cfg.slots), static_cast<Eigen::Index>(cfg.input_dim));
      for (Eigen::Index i = 0; i < it.frames.size(); ++i) it.frames.data()[i] = g(rng);
      it.subset = training::sample_subset(cfg.slots, rng);
      items.push_back(std::move(it));
    }
    for (int l = 0; l < 3; ++l) {
      quantizer::Matrix cw(5, static_cast<Eigen::Index>(cfg.latent));
      for (Eigen::Index i = 0; i < cw.size(); ++i) cw.data()[i] = g(rng) * (l == 0 ? 0.8 : 0.3);
      books.push_back(quantizer::CodebookLevel::from_codewords(cw, Eigen::VectorXd::Ones(5)));
    }
    nn::Tape tape;
    nn::BoundModel model(tape, params);
    const auto terms = training::sftd_objective(model, books, items, weights, double(items.size()));
    full = terms.full.decisions;
    sub = terms.sub.decisions;
    teacher = tape.value(terms.full.latent);
  }

  double loss_at(std::span<const ensembits::nn::Matrix> tensors) const {
    using namespace ensembits;
    nn::ModelParams p = params;
    auto ptrs = p.tensors();
    for (std::size_t i = 0; i < ptrs.size(); ++i) *ptrs[i] = tensors[i];
    nn::Tape tape;
    nn::BoundModel model(tape, p);
    const double den = double(items.size());
    const auto t = training::sftd_objective(model, books, items, weights, den, {&full, &sub});
    // The teacher is a constant for differentiation, so hold it at its base value.
    const double pinned = (tape.value(t.sub.latent) - teacher).squaredNorm() / den;
    return t.value - weights.lambda * t.distill + weights.lambda * pinned;
  }

  std::vector<ensembits::nn::Matrix> tensors() const {
    std::vector<ensembits::nn::Matrix> out;
    for (const auto* t : params.tensors()) out.push_back(*t);
    return out;
  }

  /// Max relative error of backprop against central differences.
  double fd_error(std::size_t probes, double h, std::uint64_t seed) const {
    const auto eval = ensembits::training::evaluate_batch(params, books, items, weights, items.size());
    return ensembits::nn::finite_difference_check([this](std::span<const ensembits::nn::Matrix> t) { return loss_at(t); },
                                                  tensors(), eval.grads, probes, h, seed);
  }
};

}  // namespace testing
