#include "ensembits/corpus.hpp"
#include "ensembits/error.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <random>
#include <set>

namespace ensembits::corpus {

Eigen::MatrixXd pairwise_rmsd_matrix(const Ensemble& e) {
  e.validate();
  const std::size_t P = e.frame_count();
  std::vector<std::vector<geometry::Point3>> traces;
  for (const auto& f : e.frames) traces.push_back(f.ca_trace());
  Eigen::MatrixXd d = Eigen::MatrixXd::Zero(Eigen::Index(P), Eigen::Index(P));
  for (std::size_t a = 0; a < P; ++a)
    for (std::size_t b = a + 1; b < P; ++b) {
      const double r = geometry::kabsch_superpose(traces[b], traces[a], {}).rmsd;
      d(Eigen::Index(a), Eigen::Index(b)) = d(Eigen::Index(b), Eigen::Index(a)) = r;
    }
  return d;
}

std::vector<std::size_t> fps_select(const Eigen::MatrixXd& distances, std::size_t k, std::size_t seed_frame) {
  const auto P = static_cast<std::size_t>(distances.rows());
  if (distances.cols() != distances.rows()) throw Error("fps_select: distance matrix must be square");
  if (k == 0) throw Error("fps_select: K must be at least 1");
  if (k > P) throw Error("fps_select: K=" + std::to_string(k) + " exceeds frame count " + std::to_string(P));
  if (seed_frame >= P) throw Error("fps_select: seed frame out of range");
  std::vector<std::size_t> picked{seed_frame};
  std::vector<double> gap(P, std::numeric_limits<double>::infinity());
  std::vector<bool> used(P, false);
  used[seed_frame] = true;
  while (picked.size() < k) {
    const auto last = Eigen::Index(picked.back());
    std::size_t best = P;
    for (std::size_t i = 0; i < P; ++i) {
      gap[i] = std::min(gap[i], distances(last, Eigen::Index(i)));
      if (!used[i] && (best == P || gap[i] > gap[best])) best = i;
    }
    used[best] = true;
    picked.push_back(best);
  }
  return picked;
}

std::vector<std::size_t> fps_select(const Ensemble& e, std::size_t k, std::size_t seed_frame) {
  if (k > e.frame_count())
    throw Error("fps_select: K=" + std::to_string(k) + " exceeds frame count " + std::to_string(e.frame_count()));
  return fps_select(pairwise_rmsd_matrix(e), k, seed_frame);
}

std::vector<std::size_t> stride_sample(std::span<const std::size_t> indices, std::size_t stride) {
  if (stride == 0) throw Error("stride_sample: stride must be at least 1");
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < indices.size(); i += stride) out.push_back(indices[i]);
  return out;
}

SplitManifest make_splits(std::span<const Ensemble> corpus, const SplitFractions& fr, std::uint64_t seed) {
  if (fr.train < 0 || fr.val < 0 || fr.test < 0 || std::abs(fr.train + fr.val + fr.test - 1.0) > 1e-9)
    throw Error("make_splits: fractions must be non-negative and sum to 1");
  std::set<std::string> ids;
  for (const auto& e : corpus)
    if (!ids.insert(e.id).second) throw Error("make_splits: duplicate protein id '" + e.id + "'");
  std::vector<std::string> groups;
  for (const auto& e : corpus) groups.push_back(e.group.empty() ? e.id : e.group);
  std::sort(groups.begin(), groups.end());
  groups.erase(std::unique(groups.begin(), groups.end()), groups.end());
  const std::size_t G = groups.size();
  if (G < 3) throw Error("make_splits: need at least 3 groups, found " + std::to_string(G));

  std::mt19937_64 rng(seed);
  std::shuffle(groups.begin(), groups.end(), rng);
  auto share = [&](double f) { return static_cast<std::size_t>(std::llround(f * double(G))); };
  std::size_t n_val = share(fr.val), n_test = share(fr.test);
  if (fr.val > 0) n_val = std::max<std::size_t>(n_val, 1);
  if (fr.test > 0) n_test = std::max<std::size_t>(n_test, 1);
  if (n_val + n_test >= G) throw Error("make_splits: too few groups for the requested fractions");
  const std::size_t n_train = G - n_val - n_test;

  std::map<std::string, int> where;
  for (std::size_t i = 0; i < G; ++i) where[groups[i]] = i < n_train ? 0 : (i < n_train + n_val ? 1 : 2);
  SplitManifest m;
  for (const auto& e : corpus) {
    const int s = where.at(e.group.empty() ? e.id : e.group);
    (s == 0 ? m.train : s == 1 ? m.val : m.test).push_back(e.id);
  }
  return m;
}

}  // namespace ensembits::corpus
