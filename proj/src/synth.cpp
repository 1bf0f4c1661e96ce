#include "ensembits/corpus.hpp"
#include "ensembits/error.hpp"

#include <Eigen/Cholesky>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <random>

namespace ensembits::corpus {

namespace {

// Ideal alpha-helix C-alpha geometry.
constexpr double kHelixRadius = 2.3;
constexpr double kHelixRise = 1.5;
constexpr double kHelixTwistDeg = 100.0;

std::uint64_t mix(std::uint64_t seed, std::uint64_t salt) {
  std::seed_seq seq{std::uint32_t(seed), std::uint32_t(seed >> 32), std::uint32_t(salt), std::uint32_t(salt >> 32)};
  std::mt19937_64 g(seq);
  return g();
}

}  // namespace

Ensemble synth_ensemble(const SynthSpec& spec, const std::string& id, const std::string& group) {
  const std::size_t L = spec.residues;
  if (L < 8) throw Error("synth: need at least 8 residues");
  if (spec.frames < 1) throw Error("synth: need at least 1 frame");
  if (spec.profile.size() != L)
    throw Error("synth: profile has " + std::to_string(spec.profile.size()) + " entries, expected " +
                std::to_string(L));
  for (double a : spec.profile)
    if (!(a >= 0.0) || !std::isfinite(a)) throw Error("synth: profile amplitudes must be finite and non-negative");
  if (!(spec.correlation_length > 0.0)) throw Error("synth: correlation length must be positive");

  std::vector<geometry::Point3> base(L);
  const double step = kHelixTwistDeg * std::numbers::pi / 180.0;
  for (std::size_t r = 0; r < L; ++r)
    base[r] = {kHelixRadius * std::cos(step * double(r)), kHelixRadius * std::sin(step * double(r)),
               kHelixRise * double(r)};

  const auto n = static_cast<Eigen::Index>(L);
  Eigen::MatrixXd K(n, n);
  const double l2 = 2.0 * spec.correlation_length * spec.correlation_length;
  for (std::size_t i = 0; i < L; ++i)
    for (std::size_t j = 0; j < L; ++j) {
      const double d = double(i) - double(j);
      K(Eigen::Index(i), Eigen::Index(j)) = std::exp(-d * d / l2);
    }
  K.diagonal().array() += 1e-8;
  const Eigen::MatrixXd chol = Eigen::LLT<Eigen::MatrixXd>(K).matrixL();

  // Each axis gets profile/sqrt(3) so the 3-D RMS displacement is the profile.
  Eigen::VectorXd scale(n);
  for (std::size_t r = 0; r < L; ++r) scale(Eigen::Index(r)) = spec.profile[r] / std::sqrt(3.0);

  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  Ensemble e;
  e.id = id;
  e.group = group;
  e.flexibility = spec.profile;
  for (std::size_t p = 0; p < spec.frames; ++p) {
    Eigen::MatrixXd g(n, 3);
    for (Eigen::Index r = 0; r < g.rows(); ++r)
      for (int a = 0; a < 3; ++a) g(r, a) = gauss(rng);
    const Eigen::MatrixXd disp = scale.asDiagonal() * (chol * g);
    std::vector<geometry::Point3> ca(L);
    for (std::size_t r = 0; r < L; ++r) ca[r] = base[r] + disp.row(Eigen::Index(r)).transpose();
    const auto nc = geometry::reconstruct_backbone(ca);
    geometry::FrameCoords f({geometry::Atom::N, geometry::Atom::CA, geometry::Atom::C}, L);
    for (std::size_t r = 0; r < L; ++r) {
      f.at(r, 0) = nc[r].n;
      f.at(r, 1) = ca[r];
      f.at(r, 2) = nc[r].c;
    }
    e.frames.push_back(std::move(f));
  }
  return e;
}

std::vector<double> random_piecewise_profile(std::size_t residues, double lo, double hi, std::uint64_t seed) {
  if (residues < 2) throw Error("profile: need at least 2 residues");
  if (!(lo >= 0.0 && lo <= hi)) throw Error("profile: need 0 <= lo <= hi");
  std::mt19937_64 rng(seed);
  const std::size_t max_pieces = std::min<std::size_t>(5, residues);
  const std::size_t pieces = std::uniform_int_distribution<std::size_t>(2, max_pieces)(rng);
  std::vector<std::size_t> cuts(residues - 1);
  for (std::size_t i = 0; i < cuts.size(); ++i) cuts[i] = i + 1;
  std::shuffle(cuts.begin(), cuts.end(), rng);
  cuts.resize(pieces - 1);
  std::sort(cuts.begin(), cuts.end());
  cuts.push_back(residues);
  std::uniform_real_distribution<double> amp(lo, hi);
  std::vector<double> out(residues);
  std::size_t start = 0;
  for (std::size_t c : cuts) {
    const double a = amp(rng);
    std::fill(out.begin() + std::ptrdiff_t(start), out.begin() + std::ptrdiff_t(c), a);
    start = c;
  }
  return out;
}

std::vector<Ensemble> synth_corpus(const SynthCorpusSpec& spec) {
  if (spec.proteins < 3) throw Error("synth corpus: need at least 3 proteins");
  const std::size_t groups = spec.groups ? spec.groups : std::max<std::size_t>(3, spec.proteins / 3);
  std::vector<Ensemble> out;
  for (std::size_t i = 0; i < spec.proteins; ++i) {
    char id[32], grp[32];
    std::snprintf(id, sizeof id, "synth%03zu", i);
    std::snprintf(grp, sizeof grp, "fam%02zu", i % groups);
    SynthSpec s;
    s.residues = spec.residues;
    s.frames = spec.frames;
    s.profile = random_piecewise_profile(spec.residues, spec.amplitude_lo, spec.amplitude_hi, mix(spec.seed, 2 * i));
    s.seed = mix(spec.seed, 2 * i + 1);
    out.push_back(synth_ensemble(s, id, grp));
  }
  return out;
}

}  // namespace ensembits::corpus
