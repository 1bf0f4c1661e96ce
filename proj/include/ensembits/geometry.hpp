#pragma once

#include <Eigen/Dense>

#include <array>
#include <span>
#include <string_view>
#include <utility>
#include <vector>

namespace ensembits::geometry {

using Point3 = Eigen::Vector3d;
using Rotation = Eigen::Matrix3d;

/// Proper rigid motion x -> rotation * x + translation.
struct RigidTransform {
  Rotation rotation = Rotation::Identity();
  Point3 translation = Point3::Zero();

  Point3 apply(const Point3& p) const { return rotation * p + translation; }
  RigidTransform inverse() const;
  /// (*this) o other: apply `other` first.
  RigidTransform compose(const RigidTransform& other) const;
  bool is_proper(double tol = 1e-9) const;

  static RigidTransform identity() { return {}; }
};

enum class Atom { N, CA, C };

const char* atom_name(Atom a);
Atom atom_from_name(std::string_view name);

/// Coordinates of one conformation: residue_count x layout.size() points.
class FrameCoords {
 public:
  FrameCoords() = default;
  FrameCoords(std::vector<Atom> layout, std::size_t residue_count);

  std::size_t residue_count() const { return residues_; }
  const std::vector<Atom>& layout() const { return layout_; }
  bool has_atom(Atom a) const { return slot(a) >= 0; }

  Point3& at(std::size_t residue, std::size_t slot) { return coords_[residue * layout_.size() + slot]; }
  const Point3& at(std::size_t residue, std::size_t slot) const {
    return coords_[residue * layout_.size() + slot];
  }
  /// Position of atom `a`; throws if the layout lacks it.
  const Point3& atom(std::size_t residue, Atom a) const;
  const Point3& ca(std::size_t residue) const { return atom(residue, Atom::CA); }
  std::vector<Point3> ca_trace() const;

  /// Applies a rigid transform to every atom.
  FrameCoords transformed(const RigidTransform& t) const;
  void validate() const;

  bool operator==(const FrameCoords&) const = default;

 private:
  int slot(Atom a) const;

  std::vector<Atom> layout_;
  std::size_t residues_ = 0;
  std::vector<Point3> coords_;
};

struct Superposition {
  RigidTransform transform;  // maps mobile onto target
  double rmsd = 0.0;
};

/// Least-squares rigid superposition of `mobile` onto `target`, ignoring the
/// indices in `exclude`. Throws on degenerate (collinear/coincident) sets.
Superposition kabsch_superpose(std::span<const Point3> mobile, std::span<const Point3> target,
                               std::span<const std::size_t> exclude = {});

/// Torsion angle in degrees, range (-180, 180]; positive is clockwise looking
/// from p2 toward p3.
double dihedral_angle(const Point3& p1, const Point3& p2, const Point3& p3, const Point3& p4);

inline constexpr double kBondN_CA = 1.46;
inline constexpr double kBondCA_C = 1.52;
inline constexpr double kAngleN_CA_C = 111.0;

struct BackboneNC {
  Point3 n;
  Point3 c;
};

/// Ideal-geometry N and C placement from a bare Calpha trace. Terminal residues
/// reuse the offsets built for their nearest interior neighbor.
std::vector<BackboneNC> reconstruct_backbone(std::span<const Point3> ca);

/// Returns a copy with N, CA, C all present; missing atoms are reconstructed.
FrameCoords complete_backbone(const FrameCoords& frame);

/// Gram-Schmidt frame: e1 along N-CA, e2 from C-CA, translation at CA.
RigidTransform build_local_frame(const Point3& n, const Point3& ca, const Point3& c);

/// anchor^-1 o neighbor
RigidTransform relative_transform(const RigidTransform& anchor, const RigidTransform& neighbor);

/// The k residues closest to `query` by Calpha distance with |i-j| > min_seq_sep,
/// closest first, ties to the lower index.
std::vector<std::size_t> knn_neighbors(const FrameCoords& frame, std::size_t query, std::size_t k,
                                       std::size_t min_seq_sep);

/// RMS Calpha distance to the centroid over residues [center-window, center+window].
double local_gyration_radius(const FrameCoords& frame, std::size_t center, std::size_t window);

/// Two largest singular values of the row-centered P x 3 matrix.
std::pair<double, double> top_two_singular_values(const Eigen::MatrixX3d& rows);

/// Rotation about a unit axis.
Rotation axis_angle(const Point3& axis, double radians);

}  // namespace ensembits::geometry
