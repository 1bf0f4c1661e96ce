#pragma once

#include "ensembits/descriptors.hpp"
#include "ensembits/ensemble.hpp"
#include "ensembits/quantizer.hpp"

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace ensembits::analysis {

/// Per-residue C-alpha fluctuation after two alignment passes (frame 0, then the mean).
std::vector<double> compute_rmsf(const Ensemble& e);

/// Top two singular values of residue r's locally aligned, centered trajectory.
std::pair<double, double> motion_amplitude(const Ensemble& e, std::size_t r, double radius = 10.0);

struct AnovaReport {
  double eta2 = 0.0;
  double f = 0.0;
  std::size_t df_between = 0, df_within = 0;
  std::size_t groups = 0, samples = 0;
  double ss_between = 0.0, ss_within = 0.0, ss_total = 0.0;
  double p_param = 0.0;
  std::vector<double> null_eta2;  // filled by permutation_null
  double null_mean = 0.0;
  double p_perm = 1.0;
};

inline constexpr std::size_t kDefaultMinCount = 80;

/// One-way decomposition of `values` by `labels`, keeping labels seen at least
/// `min_count` times.
AnovaReport anova_eta2(std::span<const double> values, std::span<const long> labels,
                       std::size_t min_count = kDefaultMinCount);

/// Adds `n_perm` shuffled-label eta^2 samples and the empirical p-value to `report`.
void permutation_null(AnovaReport& report, std::span<const double> values, std::span<const long> labels,
                      std::size_t n_perm, std::mt19937_64& rng, std::size_t min_count = kDefaultMinCount);

/// eta^2 only, for hot loops and oracles.
double eta_squared(std::span<const double> values, std::span<const long> labels);

struct ControlLabels {
  std::vector<long> group;     // protein group label index
  std::vector<long> position;  // chain-position quintile 0..4
  std::vector<long> length;    // protein-length quintile 0..4
};

/// Per-residue labels, protein-major in corpus order.
ControlLabels control_groupings(std::span<const Ensemble> corpus);

/// Quintile of index i among n items (sizes differ by at most one).
long quintile(std::size_t i, std::size_t n);

std::vector<double> average_ranks(std::span<const double> x);
double spearman(std::span<const double> x, std::span<const double> y);

/// -sum_i ||C1[wt_i] - C1[mut_i]||
double mutation_score(const quantizer::CodebookLevel& level1, std::span<const int> wt, std::span<const int> mut);

struct ProbeOptions {
  std::size_t hidden = 64;
  std::size_t epochs = 200;
  std::size_t batch = 64;
  double lr = 1e-3;
  std::size_t seeds = 10;
  std::uint64_t seed = 0;
};

struct ProbeResult {
  std::vector<double> per_seed;
  double mean = 0.0;
  double stddev = 0.0;
};

/// Fits an MLP regressor on the training rows and reports held-out Spearman.
ProbeResult rmsf_probe(const Eigen::MatrixXd& features, std::span<const double> labels,
                       std::span<const std::size_t> train_rows, std::span<const std::size_t> test_rows,
                       const ProbeOptions& options = {});

/// One residue's encoder output and its level-1 code.
struct ResidueLatent {
  std::size_t protein = 0;
  std::size_t residue = 0;
  int token = 0;
  Eigen::VectorXd latent;
};

struct NeighborCount {
  std::size_t residue = 0;
  std::size_t frames = 0;  // frames in which it was chosen
};

struct Exemplar {
  std::size_t protein = 0;
  std::size_t residue = 0;
  double d_z = 0.0;
  std::vector<NeighborCount> neighbors;
  /// Per-frame superposition onto frame 0, fitted with the highlighted 3-mers excluded.
  std::vector<geometry::RigidTransform> frame_transforms;
};

/// The n assigned residues closest to codeword `token`, ascending d_z.
std::vector<Exemplar> token_exemplars(std::span<const ResidueLatent> residues,
                                      const quantizer::CodebookLevel& level1, int token, std::size_t n);

/// Fills neighbor frequencies (top `top_k`) and the local alignment set.
void describe_exemplar(Exemplar& ex, const Ensemble& e, const descriptors::DescriptorConfig& config,
                       std::size_t top_k);

}  // namespace ensembits::analysis
