#pragma once

#include "ensembits/corpus.hpp"
#include "ensembits/geometry.hpp"

#include <Eigen/Geometry>

#include <cmath>
#include <random>

namespace testing {

using ensembits::geometry::Point3;
using ensembits::geometry::RigidTransform;

inline RigidTransform random_rigid(std::mt19937_64& rng, double shift = 10.0) {
  std::normal_distribution<double> g(0.0, 1.0);
  Eigen::Quaterniond q(g(rng), g(rng), g(rng), g(rng));
  q.normalize();
  RigidTransform t;
  t.rotation = q.toRotationMatrix();
  t.translation = Point3(g(rng), g(rng), g(rng)) * shift;
  return t;
}

inline double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return a.size() == b.size() ? m : INFINITY;
}

/// Small synthetic ensemble with a non-trivial, non-uniform profile.
inline ensembits::Ensemble toy_ensemble(std::size_t L, std::size_t P, std::uint64_t seed, double scale = 1.0) {
  ensembits::corpus::SynthSpec s;
  s.residues = L;
  s.frames = P;
  s.seed = seed;
  s.profile.resize(L);
  for (std::size_t r = 0; r < L; ++r) s.profile[r] = scale * (0.3 + 0.1 * double(r % 7));
  return ensembits::corpus::synth_ensemble(s, "toy" + std::to_string(seed), "g" + std::to_string(seed % 3));
}

}  // namespace testing
