#pragma once

#include "ensembits/hungarian.hpp"
#include "ensembits/model.hpp"
#include "ensembits/quantizer.hpp"

#include <cstdint>
#include <optional>
#include <random>
#include <vector>

namespace ensembits::training {

using nn::Matrix;

/// Hungarian-matched reconstruction for one residue: targets (P' x D) are
/// matched injectively into predicted slots (P_max x D).
struct Reconstruction {
  double loss = 0.0;               // (1/P') sum ||pred_slot - target||^2
  std::vector<int> slot_of_target;
};
Reconstruction reconstruction_loss(const Matrix& predicted, const Matrix& target);

/// Decisions taken from forward values that the gradient treats as constants.
struct BranchDecisions {
  std::vector<std::vector<int>> tokens;      // per item, per level
  std::vector<Eigen::VectorXd> st_offset;    // q - z per item
  std::vector<std::vector<int>> matching;    // per item, slot of each target
};

struct LossWeights {
  double beta = 0.5;
  double lambda = 0.1;
};

/// One residue's training input: standardized P x D descriptors and the
/// frame subset fed to the sub-ensemble branch.
struct BatchItem {
  Matrix frames;
  std::vector<std::size_t> subset;
};

struct BranchTerms {
  nn::Var latent;
  double recon = 0.0;   // contribution to the batch mean
  double commit = 0.0;
  BranchDecisions decisions;
  /// Level inputs rho_{l-1} and chosen codes per item, for the EMA step.
  std::vector<quantizer::Quantized> quantized;
};

struct LossTerms {
  nn::Var total;
  BranchTerms full, sub;
  double distill = 0.0;
  double value = 0.0;
};

/// Builds the two-branch objective
///   0.5(recon_1 + recon_2) + beta * 0.5(commit_1 + commit_2) + lambda ||z_2 - sg[z_1]||^2
/// for `items` on `model`'s tape. Per-item terms are divided by `denominator`
/// (the full batch size) so chunk losses sum to the batch mean. When `frozen`
/// is set its decisions replace the ones derived from forward values.
LossTerms sftd_objective(nn::BoundModel& model, const quantizer::Codebooks& codebooks,
                         std::span<const BatchItem> items, const LossWeights& weights, double denominator,
                         const std::pair<const BranchDecisions*, const BranchDecisions*>& frozen = {nullptr, nullptr});

/// Single-branch forward (no distillation): used for validation loss and
/// tokenization. Returns per-item reconstruction losses.
struct ForwardResult {
  std::vector<quantizer::Quantized> quantized;
  std::vector<Eigen::VectorXd> latents;
  std::vector<double> recon;
};
ForwardResult forward_branch(const nn::ModelParams& params, const quantizer::Codebooks& codebooks,
                             std::span<const Matrix> multisets, bool with_reconstruction);

/// Samples the sub-ensemble: size uniform in {1..P}, frames without replacement.
std::vector<std::size_t> sample_subset(std::size_t frames, std::mt19937_64& rng);

/// Whole-batch evaluation: chunked tapes reduced in a fixed order.
struct BatchEvaluation {
  double loss = 0.0;
  double recon_full = 0.0, recon_sub = 0.0, commit_full = 0.0, commit_sub = 0.0, distill = 0.0;
  std::vector<Matrix> grads;  // aligned with ModelParams::tensors()
  std::vector<quantizer::Quantized> quantized;  // both branches, item order
};
BatchEvaluation evaluate_batch(const nn::ModelParams& params, const quantizer::Codebooks& codebooks,
                               std::span<const BatchItem> items, const LossWeights& weights, std::size_t chunk,
                               std::size_t threads = 1);

/// Convenience wrapper: samples sub-ensembles with `rng` and evaluates the
/// objective for one batch of per-residue multisets.
BatchEvaluation sftd_total_loss(const nn::ModelParams& params, const quantizer::Codebooks& codebooks,
                                std::span<const Matrix> multisets, const LossWeights& weights, std::mt19937_64& rng);

}  // namespace ensembits::training
