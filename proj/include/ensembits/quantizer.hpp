#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <random>
#include <span>
#include <utility>
#include <vector>

namespace ensembits::quantizer {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

/// One RVQ level: codewords plus the EMA statistics that define them.
struct CodebookLevel {
  Matrix codewords;   // M x d
  Vector ema_count;   // N_i
  Matrix ema_sum;     // m_i, M x d

  std::size_t size() const { return static_cast<std::size_t>(codewords.rows()); }
  std::size_t dim() const { return static_cast<std::size_t>(codewords.cols()); }

  /// Builds a level whose EMA state reproduces `codewords` with the given counts.
  static CodebookLevel from_codewords(Matrix codewords, Vector counts);
  bool operator==(const CodebookLevel& o) const;
};

using Codebooks = std::vector<CodebookLevel>;

struct TokenRecord {
  std::vector<int> tokens;  // c_1 .. c_K
  Vector quantized;         // q
  double latent_distance = 0.0;  // ||z - C^1_{c_1}||
};

struct Quantized {
  TokenRecord record;
  std::vector<Vector> residuals;  // rho_0 .. rho_K
};

/// Index of the codeword nearest to x; ties go to the lower index.
int nearest_code(const CodebookLevel& level, const Vector& x);

Quantized quantize(const Vector& z, const Codebooks& levels);

/// One code and the level input vector routed to it.
struct Assignment {
  int code;
  Vector input;
};

inline constexpr double kDefaultDecay = 0.99;

/// N_i <- gN_i + (1-g)n_i ; m_i <- g m_i + (1-g) sum ; e_i <- m_i / N_i
void ema_update(CodebookLevel& level, std::span<const Assignment> assigned, double decay = kDefaultDecay);

/// Reseeds every code with N_i < threshold to a uniformly drawn batch vector.
/// Returns the number of codes revived.
std::size_t revive_dead(CodebookLevel& level, std::span<const Vector> batch, std::mt19937_64& rng,
                        double threshold = 1.0);

/// Lloyd k-means over `samples` with M centers.
CodebookLevel kmeans_init(std::size_t capacity, std::span<const Vector> samples, std::size_t iterations,
                          std::mt19937_64& rng);

/// (1/K) sum_l ||rho_{l-1} - C^l_{c_l}||^2
double commitment_loss(std::span<const Vector> residuals, std::span<const Vector> selected);

struct CodebookStats {
  double utilization = 0.0;
  double perplexity = 0.0;
};

CodebookStats codebook_stats(std::span<const double> counts);

}  // namespace ensembits::quantizer
