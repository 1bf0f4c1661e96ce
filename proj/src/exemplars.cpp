#include "ensembits/analysis.hpp"
#include "ensembits/error.hpp"

#include <algorithm>
#include <map>
#include <set>

namespace ensembits::analysis {

std::vector<Exemplar> token_exemplars(std::span<const ResidueLatent> residues,
                                      const quantizer::CodebookLevel& level1, int token, std::size_t n) {
  if (token < 0 || std::size_t(token) >= level1.size()) throw Error("exemplars: token out of range");
  if (n == 0) throw Error("exemplars: n must be at least 1");
  const Eigen::VectorXd centre = level1.codewords.row(token).transpose();
  std::vector<Exemplar> hits;
  for (const auto& r : residues) {
    if (r.token != token) continue;
    if (r.latent.size() != centre.size()) throw Error("exemplars: latent width differs from codebook");
    Exemplar ex;
    ex.protein = r.protein;
    ex.residue = r.residue;
    ex.d_z = (r.latent - centre).norm();
    hits.push_back(std::move(ex));
  }
  if (hits.empty()) throw Error("exemplars: token " + std::to_string(token) + " is unused");
  if (hits.size() < n)
    throw Error("exemplars: token " + std::to_string(token) + " has " + std::to_string(hits.size()) +
                " assignments, fewer than " + std::to_string(n));
  std::stable_sort(hits.begin(), hits.end(), [](const Exemplar& a, const Exemplar& b) {
    if (a.d_z != b.d_z) return a.d_z < b.d_z;
    return std::tie(a.protein, a.residue) < std::tie(b.protein, b.residue);
  });
  hits.resize(n);
  return hits;
}

void describe_exemplar(Exemplar& ex, const Ensemble& e, const descriptors::DescriptorConfig& config,
                       std::size_t top_k) {
  const std::size_t L = e.residue_count();
  if (ex.residue >= L) throw Error("exemplars: residue out of range");
  std::map<std::size_t, std::size_t> freq;
  for (const auto& slate : descriptors::select_neighbors(e, ex.residue, config)) {
    std::set<std::size_t> seen(slate.begin(), slate.end());
    for (auto j : seen) ++freq[j];
  }
  ex.neighbors.clear();
  for (const auto& [res, count] : freq) ex.neighbors.push_back({res, count});
  std::stable_sort(ex.neighbors.begin(), ex.neighbors.end(),
                   [](const NeighborCount& a, const NeighborCount& b) { return a.frames > b.frames; });
  if (ex.neighbors.size() > top_k) ex.neighbors.resize(top_k);

  // Exclude the anchor and neighbor 3-mers so the fit follows the surroundings.
  std::set<std::size_t> highlighted;
  auto mark = [&](std::size_t c) {
    for (std::size_t d = (c == 0 ? 0 : c - 1); d <= std::min(L - 1, c + 1); ++d) highlighted.insert(d);
  };
  mark(ex.residue);
  for (const auto& nb : ex.neighbors) mark(nb.residue);
  const std::vector<std::size_t> exclude(highlighted.begin(), highlighted.end());
  const auto target = e.frames.front().ca_trace();
  ex.frame_transforms.clear();
  for (const auto& f : e.frames) {
    const auto mobile = f.ca_trace();
    ex.frame_transforms.push_back(geometry::kabsch_superpose(mobile, target, exclude).transform);
  }
}

}  // namespace ensembits::analysis
