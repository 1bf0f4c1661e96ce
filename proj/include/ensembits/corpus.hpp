#pragma once

#include "ensembits/ensemble.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace ensembits::corpus {

inline constexpr const char* kEnsembleFormat = "ensembits-ens/1";
inline constexpr const char* kSplitFormat = "ensembits-split/1";

/// Native text document; coordinates use 17 significant digits so a round
/// trip is exact.
std::string serialize_ensemble(const Ensemble& e);
Ensemble parse_ensemble(const std::string& text);
void write_ensemble(const Ensemble& e, const std::filesystem::path& path);
Ensemble read_ensemble(const std::filesystem::path& path);

/// Reads every `*.ens` file in a directory, sorted by file name.
std::vector<Ensemble> read_corpus(const std::filesystem::path& dir);

/// One frame per MODEL block; residues ordered by (chain, number, insertion code).
Ensemble parse_pdb_models(const std::string& text, const std::string& id = "pdb", const std::string& group = "");

/// Kabsch-superposed C-alpha RMSD between every pair of frames.
Eigen::MatrixXd pairwise_rmsd_matrix(const Ensemble& e);

/// Greedy max-min selection over a precomputed distance matrix.
std::vector<std::size_t> fps_select(const Eigen::MatrixXd& distances, std::size_t k, std::size_t seed_frame = 0);
std::vector<std::size_t> fps_select(const Ensemble& e, std::size_t k, std::size_t seed_frame = 0);

std::vector<std::size_t> stride_sample(std::span<const std::size_t> indices, std::size_t stride);

struct SplitManifest {
  std::vector<std::string> train, val, test;
  bool operator==(const SplitManifest&) const = default;
};

struct SplitFractions {
  double train = 0.8, val = 0.1, test = 0.1;
};

/// Shuffles group labels with `seed` and partitions whole groups.
SplitManifest make_splits(std::span<const Ensemble> corpus, const SplitFractions& fractions, std::uint64_t seed);

std::string serialize_split(const SplitManifest& m);
SplitManifest parse_split(const std::string& text);

struct SynthSpec {
  std::size_t residues = 48;
  std::size_t frames = 10;
  std::vector<double> profile;  // per-residue displacement scale in angstrom
  std::uint64_t seed = 0;
  double correlation_length = 3.0;  // residues
};

/// Ideal helix with per-frame correlated Gaussian displacements whose RMS
/// magnitude at residue r is profile[r].
Ensemble synth_ensemble(const SynthSpec& spec, const std::string& id = "synth", const std::string& group = "");

/// Piecewise-constant profile: 2 to 5 segments, amplitudes uniform in [lo, hi].
std::vector<double> random_piecewise_profile(std::size_t residues, double lo, double hi, std::uint64_t seed);

struct SynthCorpusSpec {
  std::size_t proteins = 60;
  std::size_t residues = 48;
  std::size_t frames = 10;
  double amplitude_lo = 0.2, amplitude_hi = 3.0;
  std::size_t groups = 0;  // 0 picks max(3, proteins / 3)
  std::uint64_t seed = 0;
};

std::vector<Ensemble> synth_corpus(const SynthCorpusSpec& spec);

}  // namespace ensembits::corpus
