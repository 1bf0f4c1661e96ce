#include "ensembits/descriptors.hpp"

#include "ensembits/error.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace ensembits::descriptors {

using geometry::Atom;
using geometry::FrameCoords;
using geometry::Point3;

std::string to_string(Family f) { return f == Family::ThreeDi ? "3di" : "relative-frame"; }

std::string to_string(Mode m) {
  switch (m) {
    case Mode::Fixed: return "fixed";
    case Mode::Dynamical: return "dynamical";
    case Mode::Fused: return "fused";
  }
  return "?";
}

Family family_from_string(std::string_view s) {
  if (s == "3di") return Family::ThreeDi;
  if (s == "relative-frame") return Family::RelativeFrame;
  throw Error("unknown descriptor family '" + std::string(s) + "'");
}

Mode mode_from_string(std::string_view s) {
  if (s == "fixed") return Mode::Fixed;
  if (s == "dynamical") return Mode::Dynamical;
  if (s == "fused") return Mode::Fused;
  throw Error("unknown neighbor mode '" + std::string(s) + "'");
}

DescriptorConfig DescriptorConfig::relative_frame(std::size_t k) {
  DescriptorConfig c;
  c.family = Family::RelativeFrame;
  c.mode = Mode::Dynamical;
  c.k = k;
  c.psi_enabled = false;
  c.min_seq_sep = 0;
  return c;
}

DescriptorConfig DescriptorConfig::three_di(std::size_t k, Mode mode) {
  DescriptorConfig c;
  c.family = Family::ThreeDi;
  c.mode = mode;
  c.k = k;
  c.psi_enabled = true;
  c.min_seq_sep = 3;
  return c;
}

void DescriptorConfig::validate() const {
  if (k < 1) throw Error("descriptor config: k must be >= 1");
  if (family == Family::RelativeFrame && (min_seq_sep != 0 || psi_enabled))
    throw Error("descriptor config: relative-frame family requires min_seq_sep = 0 and psi off");
  if (mode == Mode::Fused && frames_max < 1) throw Error("descriptor config: fused mode requires frames_max >= 1");
}

std::size_t descriptor_dim(const DescriptorConfig& config, std::size_t frames) {
  config.validate();
  const std::size_t slots = config.mode == Mode::Fused ? config.k * frames : config.k;
  if (config.family == Family::RelativeFrame) return 12 * slots;
  return config.psi_enabled ? 14 + (slots - 1) * 18 : 10 + (slots - 1) * 14;
}

void Standardizer::apply(DescriptorSet& set) const {
  if (mean.size() != set.dim() || stddev.size() != set.dim())
    throw Error("standardizer width " + std::to_string(mean.size()) + " does not match descriptor width " +
                std::to_string(set.dim()));
  auto& v = set.values();
  const std::size_t d = set.dim();
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = (v[i] - mean[i % d]) / stddev[i % d];
}

Standardizer fit_standardizer(std::span<const DescriptorSet> train) {
  std::size_t dim = 0, count = 0;
  for (const auto& s : train) {
    if (s.values().empty()) continue;
    if (dim == 0) dim = s.dim();
    if (s.dim() != dim) throw Error("fit_standardizer: descriptor widths differ");
    count += s.residue_count() * s.frame_count();
  }
  if (count < 2) throw Error("fit_standardizer: need at least 2 descriptor vectors");

  Standardizer out;
  out.mean.assign(dim, 0.0);
  out.stddev.assign(dim, 0.0);
  for (const auto& s : train)
    for (std::size_t i = 0; i < s.values().size(); ++i) out.mean[i % dim] += s.values()[i];
  for (auto& m : out.mean) m /= double(count);
  for (const auto& s : train)
    for (std::size_t i = 0; i < s.values().size(); ++i) {
      const double d = s.values()[i] - out.mean[i % dim];
      out.stddev[i % dim] += d * d;
    }
  for (auto& v : out.stddev) v = std::max(std::sqrt(v / double(count)), Standardizer::kStdFloor);
  return out;
}

namespace {

Point3 unit_or_zero(const Point3& v) {
  const double n = v.norm();
  return n > 1e-12 ? Point3(v / n) : Point3::Zero();
}

// u_{a->b}; zero when either end falls off the chain.
Point3 ca_unit(const FrameCoords& f, long a, long b) {
  const long L = static_cast<long>(f.residue_count());
  if (a < 0 || b < 0 || a >= L || b >= L) return Point3::Zero();
  return unit_or_zero(f.ca(std::size_t(b)) - f.ca(std::size_t(a)));
}

double sign(long v) { return v > 0 ? 1.0 : (v < 0 ? -1.0 : 0.0); }

}  // namespace

std::array<double, 10> threedi_pair_block(const FrameCoords& f, std::size_t i_, std::size_t j_) {
  if (i_ == j_) throw Error("3Di pair block needs distinct residues");
  const long i = static_cast<long>(i_), j = static_cast<long>(j_);
  const Point3 u_im_i = ca_unit(f, i - 1, i);
  const Point3 u_i_ip = ca_unit(f, i, i + 1);
  const Point3 u_jm_j = ca_unit(f, j - 1, j);
  const Point3 u_j_jp = ca_unit(f, j, j + 1);
  const Point3 u_i_j = ca_unit(f, i, j);
  const long sep = std::labs(i - j);
  return {(f.ca(i_) - f.ca(j_)).norm(),
          u_im_i.dot(u_i_ip),
          u_jm_j.dot(u_j_jp),
          u_im_i.dot(u_i_j),
          u_jm_j.dot(u_i_j),
          u_im_i.dot(u_j_jp),
          u_i_ip.dot(u_jm_j),
          u_im_i.dot(u_jm_j),
          sign(i - j) * double(std::min(sep, 4L)),
          sign(i - j) * std::log(double(sep) + 1.0)};
}

namespace {

std::pair<double, double> sin_cos_psi(const FrameCoords& f, std::size_t r) {
  if (r + 1 >= f.residue_count()) return {0.0, 0.0};
  const double psi = geometry::dihedral_angle(f.atom(r, Atom::N), f.atom(r, Atom::CA), f.atom(r, Atom::C),
                                              f.atom(r + 1, Atom::N)) *
                     M_PI / 180.0;
  return {std::sin(psi), std::cos(psi)};
}

}  // namespace

std::array<double, 4> psi_block(const FrameCoords& f, std::size_t i, std::size_t j) {
  const auto [si, ci] = sin_cos_psi(f, i);
  const auto [sj, cj] = sin_cos_psi(f, j);
  return {si, ci, sj, cj};
}

std::array<double, 4> glue_block(const FrameCoords& f, std::size_t /*anchor*/, std::size_t jm, std::size_t jm1) {
  const long a = static_cast<long>(jm), b = static_cast<long>(jm1);
  const Point3 dir_a = ca_unit(f, a - 1, a + 1);
  const Point3 dir_b = ca_unit(f, b - 1, b + 1);
  const Point3 cd = unit_or_zero(f.ca(jm1) - f.ca(jm));
  return {(f.ca(jm) - f.ca(jm1)).norm(), dir_a.dot(dir_b), dir_a.dot(cd), dir_b.dot(cd)};
}

std::vector<double> relative_frame_block(std::span<const geometry::RigidTransform> local_frames, std::size_t anchor,
                                         std::span<const std::size_t> neighbors) {
  std::vector<double> out;
  out.reserve(neighbors.size() * 12);
  const auto& a = local_frames[anchor];
  for (std::size_t j : neighbors) {
    const auto rel = geometry::relative_transform(a, local_frames[j]);
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) out.push_back(rel.rotation(r, c));
    for (int r = 0; r < 3; ++r) out.push_back(rel.translation(r));
  }
  return out;
}

namespace {

std::vector<geometry::RigidTransform> local_frames_of(const FrameCoords& full) {
  std::vector<geometry::RigidTransform> frames(full.residue_count());
  for (std::size_t r = 0; r < frames.size(); ++r)
    frames[r] = geometry::build_local_frame(full.atom(r, Atom::N), full.atom(r, Atom::CA), full.atom(r, Atom::C));
  return frames;
}

// Frame indices ordered by decreasing local gyration radius, ties to lower index.
std::vector<std::size_t> frames_by_expansion(const Ensemble& e, std::size_t r, std::size_t window) {
  std::vector<double> rg(e.frame_count());
  for (std::size_t p = 0; p < rg.size(); ++p) rg[p] = geometry::local_gyration_radius(e.frames[p], r, window);
  std::vector<std::size_t> order(rg.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return rg[a] > rg[b]; });
  return order;
}

}  // namespace

std::vector<double> relative_frame_block(const FrameCoords& frame, std::size_t anchor,
                                         std::span<const std::size_t> neighbors) {
  const auto frames = local_frames_of(geometry::complete_backbone(frame));
  return relative_frame_block(std::span<const geometry::RigidTransform>(frames), anchor, neighbors);
}

std::vector<std::vector<std::size_t>> select_neighbors(const Ensemble& e, std::size_t r,
                                                       const DescriptorConfig& config) {
  config.validate();
  const std::size_t P = e.frame_count();
  std::vector<std::vector<std::size_t>> out(P);
  switch (config.mode) {
    case Mode::Fixed: {
      const std::size_t ref = frames_by_expansion(e, r, config.gyration_window).front();
      const auto list = geometry::knn_neighbors(e.frames[ref], r, config.k, config.min_seq_sep);
      std::fill(out.begin(), out.end(), list);
      break;
    }
    case Mode::Dynamical:
      for (std::size_t p = 0; p < P; ++p) out[p] = geometry::knn_neighbors(e.frames[p], r, config.k, config.min_seq_sep);
      break;
    case Mode::Fused: {
      if (P > config.frames_max)
        throw Error("fused mode: ensemble has " + std::to_string(P) + " frames, frames_max is " +
                    std::to_string(config.frames_max));
      std::vector<std::size_t> fused;
      fused.reserve(P * config.k);
      for (std::size_t p : frames_by_expansion(e, r, config.gyration_window)) {
        const auto list = geometry::knn_neighbors(e.frames[p], r, config.k, config.min_seq_sep);
        fused.insert(fused.end(), list.begin(), list.end());
      }
      std::fill(out.begin(), out.end(), fused);
      break;
    }
  }
  return out;
}

DescriptorSet compute_descriptors(const Ensemble& e, const DescriptorConfig& config) {
  config.validate();
  e.validate();
  const std::size_t L = e.residue_count();
  const std::size_t P = e.frame_count();
  const std::size_t D = descriptor_dim(config, P);
  DescriptorSet out(L, P, D);

  const bool needs_backbone = config.family == Family::RelativeFrame || config.psi_enabled;
  std::vector<FrameCoords> full(P);
  std::vector<std::vector<geometry::RigidTransform>> local(P);
  for (std::size_t p = 0; p < P; ++p) {
    full[p] = needs_backbone ? geometry::complete_backbone(e.frames[p]) : e.frames[p];
    if (config.family == Family::RelativeFrame) local[p] = local_frames_of(full[p]);
  }

  for (std::size_t r = 0; r < L; ++r) {
    std::vector<std::vector<std::size_t>> slates;
    try {
      slates = select_neighbors(e, r, config);
    } catch (const Error& err) {
      throw Error("protein '" + e.id + "', residue " + std::to_string(r) + ": " + err.what());
    }
    for (std::size_t p = 0; p < P; ++p) {
      auto dst = out.row(r, p);
      const auto& slate = slates[p];
      if (config.family == Family::RelativeFrame) {
        const auto block = relative_frame_block(std::span<const geometry::RigidTransform>(local[p]), r, slate);
        std::copy(block.begin(), block.end(), dst.begin());
        continue;
      }
      std::size_t at = 0;
      auto put = [&](const auto& block) {
        for (double v : block) dst[at++] = v;
      };
      for (std::size_t m = 0; m < slate.size(); ++m) {
        if (m > 0) put(glue_block(full[p], r, slate[m - 1], slate[m]));
        put(threedi_pair_block(full[p], r, slate[m]));
        if (config.psi_enabled) put(psi_block(full[p], r, slate[m]));
      }
    }
  }
  return out;
}

}  // namespace ensembits::descriptors
