#include "ensembits/objective.hpp"

#include "ensembits/error.hpp"

#include <algorithm>
#include <future>
#include <numeric>

namespace ensembits::training {

Reconstruction reconstruction_loss(const Matrix& predicted, const Matrix& target) {
  if (predicted.cols() != target.cols()) throw Error("reconstruction_loss: descriptor widths differ");
  if (target.rows() > predicted.rows()) throw Error("reconstruction_loss: more targets than decoder slots");
  if (target.rows() == 0) throw Error("reconstruction_loss: empty target multiset");
  Eigen::MatrixXd cost(target.rows(), predicted.rows());
  for (Eigen::Index i = 0; i < target.rows(); ++i)
    for (Eigen::Index j = 0; j < predicted.rows(); ++j) cost(i, j) = (target.row(i) - predicted.row(j)).squaredNorm();
  const auto a = hungarian_assignment(cost);
  return {a.cost / double(target.rows()), a.column_of_row};
}

namespace {

struct BranchInput {
  Matrix rows;
  nn::Segments segments;
  std::vector<Matrix> targets;
};

BranchInput stack(std::span<const BatchItem> items, bool subset) {
  BranchInput in;
  std::size_t total = 0;
  for (const auto& it : items) total += subset ? it.subset.size() : static_cast<std::size_t>(it.frames.rows());
  const Eigen::Index width = items.front().frames.cols();
  in.rows.resize(static_cast<Eigen::Index>(total), width);
  in.segments.push_back(0);
  std::size_t at = 0;
  for (const auto& it : items) {
    if (subset) {
      if (it.subset.empty()) throw Error("objective: empty sub-ensemble");
      Matrix t(static_cast<Eigen::Index>(it.subset.size()), width);
      for (std::size_t i = 0; i < it.subset.size(); ++i) {
        if (it.subset[i] >= static_cast<std::size_t>(it.frames.rows())) throw Error("objective: subset index out of range");
        t.row(static_cast<Eigen::Index>(i)) = it.frames.row(static_cast<Eigen::Index>(it.subset[i]));
      }
      in.rows.middleRows(static_cast<Eigen::Index>(at), t.rows()) = t;
      at += static_cast<std::size_t>(t.rows());
      in.targets.push_back(std::move(t));
    } else {
      in.rows.middleRows(static_cast<Eigen::Index>(at), it.frames.rows()) = it.frames;
      at += static_cast<std::size_t>(it.frames.rows());
      in.targets.push_back(it.frames);
    }
    in.segments.push_back(at);
  }
  return in;
}

BranchTerms run_branch(nn::BoundModel& model, const quantizer::Codebooks& codebooks, const BranchInput& in,
                       double denominator, const BranchDecisions* frozen, nn::Var& recon_node, nn::Var& commit_node) {
  nn::Tape& tape = model.tape();
  const std::size_t items = in.targets.size();
  const std::size_t levels = codebooks.size();
  BranchTerms out;
  out.latent = model.encode(tape.constant(in.rows), in.segments);
  const Matrix z = tape.value(out.latent);  // copy: the tape may reallocate
  const Eigen::Index dz = z.cols();

  if (frozen && (frozen->tokens.size() != items || frozen->st_offset.size() != items || frozen->matching.size() != items))
    throw Error("objective: frozen decisions do not match the batch");

  // Quantize each latent; the straight-through node forwards q and passes gradients to z.
  Matrix forward = z;
  std::vector<Matrix> level_targets(levels, Matrix(static_cast<Eigen::Index>(items), dz));
  out.decisions.tokens.resize(items);
  out.decisions.st_offset.resize(items);
  out.quantized.resize(items);
  for (std::size_t b = 0; b < items; ++b) {
    const Eigen::VectorXd zb = z.row(static_cast<Eigen::Index>(b)).transpose();
    out.quantized[b] = quantizer::quantize(zb, codebooks);
    if (frozen) {
      out.decisions.tokens[b] = frozen->tokens[b];
      out.decisions.st_offset[b] = frozen->st_offset[b];
    } else {
      out.decisions.tokens[b] = out.quantized[b].record.tokens;
      out.decisions.st_offset[b] = out.quantized[b].record.quantized - zb;
    }
    forward.row(static_cast<Eigen::Index>(b)) += out.decisions.st_offset[b].transpose();
    Eigen::VectorXd cumulative = Eigen::VectorXd::Zero(dz);
    for (std::size_t l = 0; l < levels; ++l) {
      cumulative += codebooks[l].codewords.row(out.decisions.tokens[b][l]).transpose();
      level_targets[l].row(static_cast<Eigen::Index>(b)) = cumulative.transpose();
    }
  }
  const nn::Var zq = tape.straight_through(out.latent, std::move(forward));
  const nn::Var y = model.decode(zq);
  const Matrix& yv = tape.value(y);
  const Eigen::Index width = in.targets.front().cols();
  const Eigen::Index slots = yv.cols() / width;

  // Hungarian matching on forward values, then frozen for differentiation.
  Matrix target = Matrix::Zero(yv.rows(), yv.cols());
  Matrix weight = Matrix::Zero(yv.rows(), yv.cols());
  out.decisions.matching.resize(items);
  for (std::size_t b = 0; b < items; ++b) {
    const Matrix pred = Eigen::Map<const Matrix>(yv.row(static_cast<Eigen::Index>(b)).data(), slots, width);
    const Matrix& tb = in.targets[b];
    std::vector<int> match;
    if (frozen) {
      match = frozen->matching[b];
    } else {
      match = reconstruction_loss(pred, tb).slot_of_target;
    }
    const double w = 1.0 / (double(tb.rows()) * denominator);
    for (Eigen::Index i = 0; i < tb.rows(); ++i) {
      const Eigen::Index s = match.at(static_cast<std::size_t>(i));
      target.block(static_cast<Eigen::Index>(b), s * width, 1, width) = tb.row(i);
      weight.block(static_cast<Eigen::Index>(b), s * width, 1, width).setConstant(w);
    }
    out.decisions.matching[b] = std::move(match);
  }
  recon_node = tape.weighted_sq_error(y, std::move(target), std::move(weight));
  out.recon = tape.scalar(recon_node);

  // Commitment: (1/K) sum_l ||rho_{l-1} - C^l|| = (1/K) sum_l ||z - sum_{m<=l} C^m||.
  const Matrix cw = Matrix::Constant(z.rows(), z.cols(), 1.0 / (double(levels) * denominator));
  commit_node = tape.weighted_sq_error(out.latent, level_targets[0], cw);
  for (std::size_t l = 1; l < levels; ++l)
    commit_node = tape.add(commit_node, tape.weighted_sq_error(out.latent, level_targets[l], cw));
  out.commit = tape.scalar(commit_node);
  return out;
}

}  // namespace

LossTerms sftd_objective(nn::BoundModel& model, const quantizer::Codebooks& codebooks, std::span<const BatchItem> items,
                         const LossWeights& weights, double denominator,
                         const std::pair<const BranchDecisions*, const BranchDecisions*>& frozen) {
  if (items.empty()) throw Error("objective: empty batch");
  if (codebooks.empty()) throw Error("objective: no codebooks");
  nn::Tape& tape = model.tape();
  LossTerms out;
  nn::Var r1, c1, r2, c2;
  out.full = run_branch(model, codebooks, stack(items, false), denominator, frozen.first, r1, c1);
  out.sub = run_branch(model, codebooks, stack(items, true), denominator, frozen.second, r2, c2);
  const nn::Var teacher = tape.stop_gradient(out.full.latent);
  const nn::Var distill = tape.sq_error(out.sub.latent, teacher, 1.0 / denominator);
  out.distill = tape.scalar(distill);

  nn::Var total = tape.scale(tape.add(r1, r2), 0.5);
  total = tape.add(total, tape.scale(tape.add(c1, c2), 0.5 * weights.beta));
  total = tape.add(total, tape.scale(distill, weights.lambda));
  out.total = total;
  out.value = tape.scalar(total);
  return out;
}

ForwardResult forward_branch(const nn::ModelParams& params, const quantizer::Codebooks& codebooks,
                             std::span<const Matrix> multisets, bool with_reconstruction) {
  ForwardResult out;
  if (multisets.empty()) return out;
  nn::Tape tape;
  nn::BoundModel model(tape, params);
  std::size_t total = 0;
  for (const auto& m : multisets) total += static_cast<std::size_t>(m.rows());
  Matrix rows(static_cast<Eigen::Index>(total), multisets.front().cols());
  nn::Segments seg{0};
  for (const auto& m : multisets) {
    rows.middleRows(static_cast<Eigen::Index>(seg.back()), m.rows()) = m;
    seg.push_back(seg.back() + static_cast<std::size_t>(m.rows()));
  }
  const nn::Var z = model.encode(tape.constant(std::move(rows)), seg);
  const Matrix& zv = tape.value(z);
  Matrix q(zv.rows(), zv.cols());
  for (Eigen::Index b = 0; b < zv.rows(); ++b) {
    out.latents.push_back(zv.row(b).transpose());
    if (codebooks.empty()) continue;  // latents only
    out.quantized.push_back(quantizer::quantize(out.latents.back(), codebooks));
    q.row(b) = out.quantized.back().record.quantized.transpose();
  }
  if (!with_reconstruction) return out;
  if (codebooks.empty()) throw Error("forward_branch: reconstruction needs codebooks");
  const nn::Var y = model.decode(tape.constant(std::move(q)));
  const Matrix& yv = tape.value(y);
  const Eigen::Index width = multisets.front().cols();
  const Eigen::Index slots = yv.cols() / width;
  for (std::size_t b = 0; b < multisets.size(); ++b) {
    const Matrix pred = Eigen::Map<const Matrix>(yv.row(static_cast<Eigen::Index>(b)).data(), slots, width);
    out.recon.push_back(reconstruction_loss(pred, multisets[b]).loss);
  }
  return out;
}

std::vector<std::size_t> sample_subset(std::size_t frames, std::mt19937_64& rng) {
  if (frames == 0) throw Error("sample_subset: no frames");
  std::uniform_int_distribution<std::size_t> size_dist(1, frames);
  const std::size_t n = size_dist(rng);
  std::vector<std::size_t> idx(frames);
  std::iota(idx.begin(), idx.end(), 0);
  for (std::size_t i = 0; i < n; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, frames - 1);
    std::swap(idx[i], idx[pick(rng)]);
  }
  idx.resize(n);
  return idx;
}

namespace {

struct ChunkResult {
  double loss = 0, r1 = 0, r2 = 0, c1 = 0, c2 = 0, distill = 0;
  std::vector<Matrix> grads;
  std::vector<quantizer::Quantized> quantized;
};

ChunkResult run_chunk(const nn::ModelParams& params, const quantizer::Codebooks& codebooks,
                      std::span<const BatchItem> items, const LossWeights& weights, double denominator) {
  nn::Tape tape;
  nn::BoundModel model(tape, params);
  LossTerms terms = sftd_objective(model, codebooks, items, weights, denominator);
  tape.backward(terms.total);
  ChunkResult out;
  out.loss = terms.value;
  out.r1 = terms.full.recon;
  out.r2 = terms.sub.recon;
  out.c1 = terms.full.commit;
  out.c2 = terms.sub.commit;
  out.distill = terms.distill;
  const auto pg = tape.parameter_grads();
  out.grads.resize(pg.size());
  for (const auto& g : pg) out.grads[static_cast<std::size_t>(g.slot)] = *g.grad;
  out.quantized = std::move(terms.full.quantized);
  for (auto& q : terms.sub.quantized) out.quantized.push_back(std::move(q));
  return out;
}

}  // namespace

BatchEvaluation evaluate_batch(const nn::ModelParams& params, const quantizer::Codebooks& codebooks,
                               std::span<const BatchItem> items, const LossWeights& weights, std::size_t chunk,
                               std::size_t threads) {
  if (items.empty()) throw Error("evaluate_batch: empty batch");
  chunk = std::max<std::size_t>(chunk, 1);
  const std::size_t n_chunks = (items.size() + chunk - 1) / chunk;
  const double denominator = double(items.size());
  std::vector<ChunkResult> results(n_chunks);
  auto work = [&](std::size_t c) {
    const std::size_t lo = c * chunk, hi = std::min(items.size(), lo + chunk);
    results[c] = run_chunk(params, codebooks, items.subspan(lo, hi - lo), weights, denominator);
  };
  threads = std::max<std::size_t>(threads, 1);
  if (threads == 1 || n_chunks == 1) {
    for (std::size_t c = 0; c < n_chunks; ++c) work(c);
  } else {
    for (std::size_t start = 0; start < n_chunks; start += threads) {
      std::vector<std::future<void>> fs;
      for (std::size_t c = start; c < std::min(n_chunks, start + threads); ++c)
        fs.push_back(std::async(std::launch::async, work, c));
      for (auto& f : fs) f.get();
    }
  }

  // Single reducer, fixed chunk order.
  BatchEvaluation out;
  out.grads = std::move(results.front().grads);
  for (std::size_t c = 0; c < n_chunks; ++c) {
    auto& r = results[c];
    out.loss += r.loss;
    out.recon_full += r.r1;
    out.recon_sub += r.r2;
    out.commit_full += r.c1;
    out.commit_sub += r.c2;
    out.distill += r.distill;
    if (c > 0)
      for (std::size_t i = 0; i < out.grads.size(); ++i) out.grads[i] += r.grads[i];
  }
  // Full-branch records first, then sub-branch, each in item order.
  for (std::size_t pass = 0; pass < 2; ++pass)
    for (std::size_t c = 0; c < n_chunks; ++c) {
      const std::size_t lo = c * chunk, hi = std::min(items.size(), lo + chunk);
      for (std::size_t i = 0; i < hi - lo; ++i)
        out.quantized.push_back(std::move(results[c].quantized[pass * (hi - lo) + i]));
    }
  return out;
}

BatchEvaluation sftd_total_loss(const nn::ModelParams& params, const quantizer::Codebooks& codebooks,
                                std::span<const Matrix> multisets, const LossWeights& weights, std::mt19937_64& rng) {
  std::vector<BatchItem> items;
  items.reserve(multisets.size());
  for (const auto& m : multisets) items.push_back({m, sample_subset(static_cast<std::size_t>(m.rows()), rng)});
  return evaluate_batch(params, codebooks, items, weights, items.size());
}

}  // namespace ensembits::training
