#pragma once

#include "ensembits/ensemble.hpp"
#include "ensembits/geometry.hpp"

#include <Eigen/Dense>

#include <array>
#include <span>
#include <string>
#include <vector>

namespace ensembits::descriptors {

enum class Family { ThreeDi, RelativeFrame };
enum class Mode { Fixed, Dynamical, Fused };

std::string to_string(Family f);
std::string to_string(Mode m);
Family family_from_string(std::string_view s);
Mode mode_from_string(std::string_view s);

struct DescriptorConfig {
  Family family = Family::RelativeFrame;
  Mode mode = Mode::Dynamical;
  std::size_t k = 16;
  bool psi_enabled = false;
  std::size_t min_seq_sep = 0;
  std::size_t gyration_window = 3;
  std::size_t frames_max = 10;

  /// Production setting: relative frames, dynamical neighbors, k = 16.
  static DescriptorConfig relative_frame(std::size_t k = 16);
  /// 3Di-style setting with psi on and |i-j| > 3.
  static DescriptorConfig three_di(std::size_t k = 3, Mode mode = Mode::Dynamical);

  void validate() const;
  bool operator==(const DescriptorConfig&) const = default;
};

/// Per-frame descriptor width. `frames` only matters in fused mode.
std::size_t descriptor_dim(const DescriptorConfig& config, std::size_t frames = 1);

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// L x P x D values stored residue-major.
class DescriptorSet {
 public:
  DescriptorSet() = default;
  DescriptorSet(std::size_t residues, std::size_t frames, std::size_t dim)
      : residues_(residues), frames_(frames), dim_(dim), values_(residues * frames * dim, 0.0) {}

  std::size_t residue_count() const { return residues_; }
  std::size_t frame_count() const { return frames_; }
  std::size_t dim() const { return dim_; }

  std::span<double> row(std::size_t r, std::size_t p) { return {values_.data() + (r * frames_ + p) * dim_, dim_}; }
  std::span<const double> row(std::size_t r, std::size_t p) const {
    return {values_.data() + (r * frames_ + p) * dim_, dim_};
  }
  /// P x D block for one residue.
  Eigen::Map<const RowMatrix> residue(std::size_t r) const {
    return {values_.data() + r * frames_ * dim_, static_cast<Eigen::Index>(frames_), static_cast<Eigen::Index>(dim_)};
  }
  Eigen::Map<RowMatrix> residue(std::size_t r) {
    return {values_.data() + r * frames_ * dim_, static_cast<Eigen::Index>(frames_), static_cast<Eigen::Index>(dim_)};
  }
  const std::vector<double>& values() const { return values_; }
  std::vector<double>& values() { return values_; }

 private:
  std::size_t residues_ = 0, frames_ = 0, dim_ = 0;
  std::vector<double> values_;
};

/// Per-feature affine normalization fitted on training descriptors.
struct Standardizer {
  std::vector<double> mean;
  std::vector<double> stddev;

  static constexpr double kStdFloor = 1e-8;

  void apply(DescriptorSet& set) const;
  bool operator==(const Standardizer&) const = default;
};

Standardizer fit_standardizer(std::span<const DescriptorSet> train);

/// Ten Calpha-derived invariants for the ordered pair (i, j).
std::array<double, 10> threedi_pair_block(const geometry::FrameCoords& frame, std::size_t i, std::size_t j);

/// (sin psi_i, cos psi_i, sin psi_j, cos psi_j); residues without a following N are zero.
/// The frame must carry N, CA and C (see geometry::complete_backbone).
std::array<double, 4> psi_block(const geometry::FrameCoords& frame, std::size_t i, std::size_t j);

/// (distance, alignment, approach, twist) between consecutive neighbors jm, jm1.
std::array<double, 4> glue_block(const geometry::FrameCoords& frame, std::size_t anchor, std::size_t jm,
                                 std::size_t jm1);

/// Neighbor frames expressed in the anchor frame, 12 numbers per neighbor:
/// rotation row-major, then translation.
std::vector<double> relative_frame_block(const geometry::FrameCoords& frame, std::size_t anchor,
                                         std::span<const std::size_t> neighbors);
/// Same, over precomputed per-residue local frames.
std::vector<double> relative_frame_block(std::span<const geometry::RigidTransform> local_frames, std::size_t anchor,
                                         std::span<const std::size_t> neighbors);

/// Per-frame ordered neighbor slates for residue r.
std::vector<std::vector<std::size_t>> select_neighbors(const Ensemble& ensemble, std::size_t r,
                                                       const DescriptorConfig& config);

DescriptorSet compute_descriptors(const Ensemble& ensemble, const DescriptorConfig& config);

}  // namespace ensembits::descriptors
