#include "ensembits/geometry.hpp"

#include "ensembits/error.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

namespace ensembits::geometry {

namespace {

constexpr double kDeg = 180.0 / std::numbers::pi;

Point3 unit_or_throw(const Point3& v, const char* what) {
  const double n = v.norm();
  if (!(n > 1e-12)) throw Error(std::string("zero-length vector in ") + what);
  return v / n;
}

}  // namespace

RigidTransform RigidTransform::inverse() const {
  RigidTransform inv;
  inv.rotation = rotation.transpose();
  inv.translation = -(inv.rotation * translation);
  return inv;
}

RigidTransform RigidTransform::compose(const RigidTransform& other) const {
  RigidTransform out;
  out.rotation = rotation * other.rotation;
  out.translation = rotation * other.translation + translation;
  return out;
}

bool RigidTransform::is_proper(double tol) const {
  const double ortho = (rotation.transpose() * rotation - Rotation::Identity()).cwiseAbs().maxCoeff();
  return ortho <= tol && std::abs(rotation.determinant() - 1.0) <= tol && translation.allFinite();
}

const char* atom_name(Atom a) {
  switch (a) {
    case Atom::N: return "N";
    case Atom::CA: return "CA";
    case Atom::C: return "C";
  }
  return "?";
}

Atom atom_from_name(std::string_view name) {
  if (name == "N") return Atom::N;
  if (name == "CA") return Atom::CA;
  if (name == "C") return Atom::C;
  throw Error("unknown atom label '" + std::string(name) + "'");
}

FrameCoords::FrameCoords(std::vector<Atom> layout, std::size_t residue_count)
    : layout_(std::move(layout)), residues_(residue_count), coords_(residues_ * layout_.size(), Point3::Zero()) {
  if (layout_.empty()) throw Error("frame layout must contain at least one atom");
  for (std::size_t i = 0; i < layout_.size(); ++i)
    for (std::size_t j = i + 1; j < layout_.size(); ++j)
      if (layout_[i] == layout_[j]) throw Error("duplicate atom in frame layout");
}

int FrameCoords::slot(Atom a) const {
  for (std::size_t i = 0; i < layout_.size(); ++i)
    if (layout_[i] == a) return static_cast<int>(i);
  return -1;
}

const Point3& FrameCoords::atom(std::size_t residue, Atom a) const {
  const int s = slot(a);
  if (s < 0) throw Error(std::string("frame has no ") + atom_name(a) + " atoms");
  return at(residue, static_cast<std::size_t>(s));
}

std::vector<Point3> FrameCoords::ca_trace() const {
  std::vector<Point3> out(residues_);
  for (std::size_t r = 0; r < residues_; ++r) out[r] = ca(r);
  return out;
}

FrameCoords FrameCoords::transformed(const RigidTransform& t) const {
  FrameCoords out = *this;
  for (auto& p : out.coords_) p = t.apply(p);
  return out;
}

void FrameCoords::validate() const {
  if (residues_ < 2) throw Error("frame needs at least 2 residues");
  if (slot(Atom::CA) < 0) throw Error("frame layout must include CA");
  for (const auto& p : coords_)
    if (!p.allFinite()) throw Error("non-finite coordinate in frame");
}

Superposition kabsch_superpose(std::span<const Point3> mobile, std::span<const Point3> target,
                               std::span<const std::size_t> exclude) {
  if (mobile.size() != target.size()) throw Error("kabsch: point lists differ in length");
  std::vector<char> keep(mobile.size(), 1);
  for (std::size_t e : exclude) {
    if (e >= keep.size()) throw Error("kabsch: exclusion index out of range");
    keep[e] = 0;
  }
  const auto n = static_cast<std::size_t>(std::count(keep.begin(), keep.end(), 1));
  if (n < 3) throw Error("kabsch: fewer than 3 points after exclusion");

  Point3 cm = Point3::Zero(), ct = Point3::Zero();
  for (std::size_t i = 0; i < mobile.size(); ++i)
    if (keep[i]) {
      cm += mobile[i];
      ct += target[i];
    }
  cm /= double(n);
  ct /= double(n);

  Eigen::Matrix3d h = Eigen::Matrix3d::Zero();
  for (std::size_t i = 0; i < mobile.size(); ++i)
    if (keep[i]) h += (mobile[i] - cm) * (target[i] - ct).transpose();

  Eigen::JacobiSVD<Eigen::Matrix3d> svd(h, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const auto& s = svd.singularValues();
  // Rank < 2 leaves the rotation about the common axis undetermined.
  double spread = 0.0;
  for (std::size_t i = 0; i < mobile.size(); ++i)
    if (keep[i]) spread += (mobile[i] - cm).squaredNorm() + (target[i] - ct).squaredNorm();
  if (!(spread > 1e-20) || s(1) <= 1e-12 * std::max(s(0), 1e-300) || s(1) <= 1e-14 * spread)
    throw Error("kabsch: degenerate point set (collinear or coincident)");

  const Eigen::Matrix3d u = svd.matrixU();
  const Eigen::Matrix3d v = svd.matrixV();
  Eigen::Matrix3d d = Eigen::Matrix3d::Identity();
  d(2, 2) = (v * u.transpose()).determinant() < 0.0 ? -1.0 : 1.0;

  Superposition out;
  out.transform.rotation = v * d * u.transpose();
  out.transform.translation = ct - out.transform.rotation * cm;

  double ss = 0.0;
  for (std::size_t i = 0; i < mobile.size(); ++i)
    if (keep[i]) ss += (out.transform.apply(mobile[i]) - target[i]).squaredNorm();
  out.rmsd = std::sqrt(ss / double(n));
  return out;
}

double dihedral_angle(const Point3& p1, const Point3& p2, const Point3& p3, const Point3& p4) {
  const Point3 b1 = p2 - p1;
  const Point3 b2 = p3 - p2;
  const Point3 b3 = p4 - p3;
  if (b1.norm() < 1e-12 || b2.norm() < 1e-12 || b3.norm() < 1e-12)
    throw Error("dihedral: coincident consecutive points");
  const Point3 n1 = b1.cross(b2);
  const Point3 n2 = b2.cross(b3);
  const double x = n1.dot(n2);
  const double y = n1.cross(n2).dot(b2 / b2.norm());
  double deg = std::atan2(y, x) * kDeg;
  if (deg <= -180.0) deg += 360.0;
  return deg;
}

namespace {

// N and C offsets for a residue whose Calpha sits between prev and next.
BackboneNC place_nc(const Point3& prev, const Point3& ca, const Point3& next) {
  const Point3 u = unit_or_throw(prev - ca, "backbone reconstruction");
  const Point3 w = unit_or_throw(next - ca, "backbone reconstruction");
  const Point3 e1 = unit_or_throw(u - w, "backbone reconstruction");
  Point3 e2 = u + w;
  e2 -= e2.dot(e1) * e1;
  if (e2.norm() < 1e-8) {
    // Straight chain: any perpendicular works; pick the axis least aligned with e1.
    Eigen::Index idx;
    e1.cwiseAbs().minCoeff(&idx);
    Point3 ref = Point3::Zero();
    ref(idx) = 1.0;
    e2 = ref - ref.dot(e1) * e1;
  }
  e2.normalize();
  const double half = 0.5 * (180.0 - kAngleN_CA_C) / kDeg;  // angle of each bond off the e1 axis
  const Point3 dn = std::cos(half) * e1 + std::sin(half) * e2;
  const Point3 dc = -std::cos(half) * e1 + std::sin(half) * e2;
  return {ca + kBondN_CA * dn, ca + kBondCA_C * dc};
}

}  // namespace

std::vector<BackboneNC> reconstruct_backbone(std::span<const Point3> ca) {
  const std::size_t n = ca.size();
  if (n < 3) throw Error("backbone reconstruction needs at least 3 Calpha positions");
  for (std::size_t i = 0; i + 1 < n; ++i)
    if ((ca[i + 1] - ca[i]).norm() < 1e-12)
      throw Error("backbone reconstruction: coincident Calpha at residues " + std::to_string(i) + " and " +
                  std::to_string(i + 1));
  std::vector<BackboneNC> out(n);
  for (std::size_t i = 1; i + 1 < n; ++i) out[i] = place_nc(ca[i - 1], ca[i], ca[i + 1]);
  out[0] = {ca[0] + (out[1].n - ca[1]), ca[0] + (out[1].c - ca[1])};
  out[n - 1] = {ca[n - 1] + (out[n - 2].n - ca[n - 2]), ca[n - 1] + (out[n - 2].c - ca[n - 2])};
  return out;
}

FrameCoords complete_backbone(const FrameCoords& frame) {
  if (frame.has_atom(Atom::N) && frame.has_atom(Atom::C) && frame.has_atom(Atom::CA) &&
      frame.layout().size() == 3 && frame.layout()[0] == Atom::N && frame.layout()[1] == Atom::CA)
    return frame;
  const std::size_t L = frame.residue_count();
  FrameCoords out({Atom::N, Atom::CA, Atom::C}, L);
  std::vector<BackboneNC> built;
  if (!frame.has_atom(Atom::N) || !frame.has_atom(Atom::C)) {
    const auto trace = frame.ca_trace();
    built = reconstruct_backbone(trace);
  }
  for (std::size_t r = 0; r < L; ++r) {
    out.at(r, 1) = frame.ca(r);
    out.at(r, 0) = frame.has_atom(Atom::N) ? frame.atom(r, Atom::N) : built[r].n;
    out.at(r, 2) = frame.has_atom(Atom::C) ? frame.atom(r, Atom::C) : built[r].c;
  }
  return out;
}

RigidTransform build_local_frame(const Point3& n, const Point3& ca, const Point3& c) {
  const Point3 v1 = n - ca;
  const Point3 v2 = c - ca;
  const Point3 e1 = unit_or_throw(v1, "local frame (N-CA)");
  if (v2.norm() < 1e-12) throw Error("zero-length vector in local frame (C-CA)");
  Point3 e2 = v2 - v2.dot(e1) * e1;
  if (e2.norm() < 1e-9 * v2.norm()) throw Error("local frame: N, CA, C are collinear");
  e2.normalize();
  RigidTransform t;
  t.rotation.col(0) = e1;
  t.rotation.col(1) = e2;
  t.rotation.col(2) = e1.cross(e2);
  t.translation = ca;
  return t;
}

RigidTransform relative_transform(const RigidTransform& anchor, const RigidTransform& neighbor) {
  RigidTransform out;
  out.rotation = anchor.rotation.transpose() * neighbor.rotation;
  out.translation = anchor.rotation.transpose() * (neighbor.translation - anchor.translation);
  return out;
}

std::vector<std::size_t> knn_neighbors(const FrameCoords& frame, std::size_t query, std::size_t k,
                                       std::size_t min_seq_sep) {
  const std::size_t L = frame.residue_count();
  if (query >= L) throw Error("knn: query residue " + std::to_string(query) + " out of range");
  std::vector<std::pair<double, std::size_t>> cand;
  cand.reserve(L);
  const Point3& q = frame.ca(query);
  for (std::size_t j = 0; j < L; ++j) {
    const std::size_t sep = j > query ? j - query : query - j;
    if (sep == 0 || sep <= min_seq_sep) continue;
    cand.emplace_back((frame.ca(j) - q).squaredNorm(), j);
  }
  if (cand.size() < k)
    throw Error("knn: residue " + std::to_string(query) + " has " + std::to_string(cand.size()) +
                " eligible neighbors, needs " + std::to_string(k));
  std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(k), cand.end());
  std::vector<std::size_t> out(k);
  for (std::size_t i = 0; i < k; ++i) out[i] = cand[i].second;
  return out;
}

double local_gyration_radius(const FrameCoords& frame, std::size_t center, std::size_t window) {
  const std::size_t L = frame.residue_count();
  const std::size_t lo = center >= window ? center - window : 0;
  const std::size_t hi = std::min(L - 1, center + window);
  if (hi - lo + 1 < 2) throw Error("gyration window holds fewer than 2 residues");
  Point3 c = Point3::Zero();
  for (std::size_t r = lo; r <= hi; ++r) c += frame.ca(r);
  c /= double(hi - lo + 1);
  double ss = 0.0;
  for (std::size_t r = lo; r <= hi; ++r) ss += (frame.ca(r) - c).squaredNorm();
  return std::sqrt(ss / double(hi - lo + 1));
}

std::pair<double, double> top_two_singular_values(const Eigen::MatrixX3d& rows) {
  if (rows.rows() < 1) throw Error("singular values: empty matrix");
  const Eigen::MatrixX3d centered = rows.rowwise() - rows.colwise().mean();
  Eigen::JacobiSVD<Eigen::MatrixX3d> svd(centered);
  const auto& s = svd.singularValues();
  const double s1 = s.size() > 0 ? s(0) : 0.0;
  const double s2 = s.size() > 1 ? s(1) : 0.0;
  return {s1, s2};
}

Rotation axis_angle(const Point3& axis, double radians) {
  return Eigen::AngleAxisd(radians, axis.normalized()).toRotationMatrix();
}

}  // namespace ensembits::geometry
