#include "ensembits/quantizer.hpp"

#include "ensembits/error.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace ensembits::quantizer {

CodebookLevel CodebookLevel::from_codewords(Matrix codewords, Vector counts) {
  if (counts.size() != codewords.rows()) throw Error("codebook: count vector length differs from codeword count");
  CodebookLevel l;
  l.ema_count = std::move(counts);
  l.ema_sum = codewords.array().colwise() * l.ema_count.array();
  l.codewords = std::move(codewords);
  return l;
}

bool CodebookLevel::operator==(const CodebookLevel& o) const {
  auto same = [](const auto& a, const auto& b) { return a.rows() == b.rows() && a.cols() == b.cols() && a == b; };
  return same(codewords, o.codewords) && same(ema_count, o.ema_count) && same(ema_sum, o.ema_sum);
}

int nearest_code(const CodebookLevel& level, const Vector& x) {
  if (level.size() == 0) throw Error("quantize: empty codebook");
  if (static_cast<std::size_t>(x.size()) != level.dim()) throw Error("quantize: latent width differs from codebook");
  int best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 0; i < level.codewords.rows(); ++i) {
    const double d = (level.codewords.row(i).transpose() - x).squaredNorm();
    if (d < best_d) {
      best_d = d;
      best = static_cast<int>(i);
    }
  }
  return best;
}

Quantized quantize(const Vector& z, const Codebooks& levels) {
  if (levels.empty()) throw Error("quantize: no codebook levels");
  Quantized out;
  out.residuals.reserve(levels.size() + 1);
  out.residuals.push_back(z);
  out.record.quantized = Vector::Zero(z.size());
  for (const auto& level : levels) {
    const int c = nearest_code(level, out.residuals.back());
    const Vector word = level.codewords.row(c).transpose();
    out.record.tokens.push_back(c);
    out.record.quantized += word;
    out.residuals.push_back(out.residuals.back() - word);
  }
  out.record.latent_distance = (z - levels.front().codewords.row(out.record.tokens.front()).transpose()).norm();
  return out;
}

void ema_update(CodebookLevel& level, std::span<const Assignment> assigned, double decay) {
  if (!(decay > 0.0 && decay <= 1.0)) throw Error("ema_update: decay must lie in (0, 1]");
  const Eigen::Index m = level.codewords.rows();
  for (const auto& a : assigned)
    if (a.code < 0 || a.code >= m) throw Error("ema_update: code index out of range");
  if (decay == 1.0) return;  // frozen; recomputing m/N could move the last bit
  Vector counts = Vector::Zero(m);
  Matrix sums = Matrix::Zero(m, level.codewords.cols());
  for (const auto& a : assigned) {
    if (a.code < 0 || a.code >= m) throw Error("ema_update: code index out of range");
    counts(a.code) += 1.0;
    sums.row(a.code) += a.input.transpose();
  }
  level.ema_count = decay * level.ema_count + (1.0 - decay) * counts;
  level.ema_sum = decay * level.ema_sum + (1.0 - decay) * sums;
  level.codewords = level.ema_sum.array().colwise() / level.ema_count.array();
}

std::size_t revive_dead(CodebookLevel& level, std::span<const Vector> batch, std::mt19937_64& rng, double threshold) {
  if (batch.empty()) throw Error("revive_dead: empty batch");
  std::uniform_int_distribution<std::size_t> pick(0, batch.size() - 1);
  std::size_t revived = 0;
  for (Eigen::Index i = 0; i < level.codewords.rows(); ++i) {
    if (level.ema_count(i) >= threshold) continue;
    const Vector& v = batch[pick(rng)];
    level.codewords.row(i) = v.transpose();
    level.ema_sum.row(i) = v.transpose();
    level.ema_count(i) = 1.0;
    ++revived;
  }
  return revived;
}

CodebookLevel kmeans_init(std::size_t capacity, std::span<const Vector> samples, std::size_t iterations,
                          std::mt19937_64& rng) {
  if (samples.empty()) throw Error("kmeans_init: no samples");
  if (capacity == 0) throw Error("kmeans_init: capacity must be positive");
  const Eigen::Index d = samples.front().size();
  const std::size_t n = samples.size();
  Matrix centers(static_cast<Eigen::Index>(capacity), d);

  if (n <= capacity) {
    // Every sample becomes a center; pad with jittered copies.
    double spread = 0.0;
    Vector mean = Vector::Zero(d);
    for (const auto& s : samples) mean += s;
    mean /= double(n);
    for (const auto& s : samples) spread += (s - mean).squaredNorm();
    const double jitter = 1e-3 * std::sqrt(spread / double(n * static_cast<std::size_t>(d))) + 1e-6;
    std::normal_distribution<double> noise(0.0, jitter);
    for (std::size_t i = 0; i < capacity; ++i) {
      centers.row(static_cast<Eigen::Index>(i)) = samples[i % n].transpose();
      if (i >= n)
        for (Eigen::Index j = 0; j < d; ++j) centers(static_cast<Eigen::Index>(i), j) += noise(rng);
    }
  } else {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    // Partial Fisher-Yates: the first `capacity` entries are a uniform subset.
    for (std::size_t i = 0; i < capacity; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, n - 1);
      std::swap(idx[i], idx[pick(rng)]);
      centers.row(static_cast<Eigen::Index>(i)) = samples[idx[i]].transpose();
    }
  }

  CodebookLevel probe;
  std::vector<int> assign(n, 0);
  auto assign_all = [&]() {
    probe.codewords = centers;
    for (std::size_t s = 0; s < n; ++s) assign[s] = nearest_code(probe, samples[s]);
  };
  for (std::size_t it = 0; it < iterations; ++it) {
    assign_all();
    Matrix sums = Matrix::Zero(centers.rows(), d);
    Vector counts = Vector::Zero(centers.rows());
    for (std::size_t s = 0; s < n; ++s) {
      sums.row(assign[s]) += samples[s].transpose();
      counts(assign[s]) += 1.0;
    }
    for (Eigen::Index c = 0; c < centers.rows(); ++c)
      if (counts(c) > 0) centers.row(c) = sums.row(c) / counts(c);  // empty clusters keep their center
  }
  assign_all();
  Vector counts = Vector::Zero(centers.rows());
  for (std::size_t s = 0; s < n; ++s) counts(assign[s]) += 1.0;
  counts = counts.cwiseMax(1.0);
  return CodebookLevel::from_codewords(std::move(centers), std::move(counts));
}

double commitment_loss(std::span<const Vector> residuals, std::span<const Vector> selected) {
  if (residuals.size() != selected.size() || residuals.empty())
    throw Error("commitment_loss: residual and codeword lists differ in length");
  double total = 0.0;
  for (std::size_t l = 0; l < residuals.size(); ++l) total += (residuals[l] - selected[l]).squaredNorm();
  return total / double(residuals.size());
}

CodebookStats codebook_stats(std::span<const double> counts) {
  double total = 0.0;
  std::size_t used = 0;
  for (double c : counts) {
    if (c < 0) throw Error("codebook_stats: negative count");
    total += c;
    used += c >= 1.0;
  }
  if (!(total > 0.0)) throw Error("codebook_stats: all counts are zero");
  double entropy = 0.0;
  for (double c : counts)
    if (c > 0) {
      const double p = c / total;
      entropy -= p * std::log(p);
    }
  return {double(used) / double(counts.size()), std::exp(entropy)};
}

}  // namespace ensembits::quantizer
