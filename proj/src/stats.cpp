#include "ensembits/analysis.hpp"
#include "ensembits/error.hpp"

#include <boost/math/distributions/fisher_f.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>

namespace ensembits::analysis {

using geometry::Point3;

namespace {

std::vector<Point3> aligned(const std::vector<Point3>& mobile, const std::vector<Point3>& target) {
  const auto t = geometry::kabsch_superpose(mobile, target, {}).transform;
  std::vector<Point3> out;
  out.reserve(mobile.size());
  for (const auto& p : mobile) out.push_back(t.apply(p));
  return out;
}

std::vector<Point3> mean_structure(const std::vector<std::vector<Point3>>& frames) {
  std::vector<Point3> m(frames.front().size(), Point3::Zero());
  for (const auto& f : frames)
    for (std::size_t r = 0; r < f.size(); ++r) m[r] += f[r];
  for (auto& p : m) p /= double(frames.size());
  return m;
}

}  // namespace

std::vector<double> compute_rmsf(const Ensemble& e) {
  e.validate();
  const std::size_t L = e.residue_count(), P = e.frame_count();
  if (P == 1) return std::vector<double>(L, 0.0);
  std::vector<std::vector<Point3>> raw, cur;
  for (const auto& f : e.frames) raw.push_back(f.ca_trace());
  for (const auto& f : raw) cur.push_back(aligned(f, raw.front()));
  const auto ref = mean_structure(cur);
  cur.clear();
  for (const auto& f : raw) cur.push_back(aligned(f, ref));
  const auto mean = mean_structure(cur);
  std::vector<double> out(L, 0.0);
  for (const auto& f : cur)
    for (std::size_t r = 0; r < L; ++r) out[r] += (f[r] - mean[r]).squaredNorm();
  for (auto& v : out) v = std::sqrt(v / double(P));
  return out;
}

std::pair<double, double> motion_amplitude(const Ensemble& e, std::size_t r, double radius) {
  e.validate();
  if (r >= e.residue_count()) throw Error("motion_amplitude: residue out of range");
  const auto& f0 = e.frames.front();
  std::vector<std::size_t> ball;
  for (std::size_t i = 0; i < e.residue_count(); ++i)
    if ((f0.ca(i) - f0.ca(r)).norm() <= radius) ball.push_back(i);
  if (ball.size() < 3)
    throw Error("motion_amplitude: only " + std::to_string(ball.size()) + " residues within " +
                std::to_string(radius) + " A of residue " + std::to_string(r));
  std::vector<Point3> target;
  for (auto i : ball) target.push_back(f0.ca(i));
  Eigen::MatrixX3d rows(Eigen::Index(e.frame_count()), 3);
  for (std::size_t p = 0; p < e.frame_count(); ++p) {
    std::vector<Point3> mobile;
    for (auto i : ball) mobile.push_back(e.frames[p].ca(i));
    const auto t = geometry::kabsch_superpose(mobile, target, {}).transform;
    rows.row(Eigen::Index(p)) = t.apply(e.frames[p].ca(r)).transpose();
  }
  return geometry::top_two_singular_values(rows);
}

namespace {

struct Retained {
  std::vector<double> values;
  std::vector<long> labels;  // compact 0..M-1
  std::size_t groups = 0;
};

Retained filter(std::span<const double> values, std::span<const long> labels, std::size_t min_count) {
  if (values.size() != labels.size()) throw Error("anova: values and labels differ in length");
  std::map<long, std::size_t> counts;
  for (long l : labels) ++counts[l];
  std::map<long, long> index;
  for (const auto& [l, c] : counts)
    if (c >= min_count) index.emplace(l, long(index.size()));
  Retained out;
  out.groups = index.size();
  if (out.groups < 2)
    throw Error("anova: " + std::to_string(out.groups) + " group(s) have at least " + std::to_string(min_count) +
                " samples; need 2");
  for (std::size_t i = 0; i < values.size(); ++i) {
    auto it = index.find(labels[i]);
    if (it == index.end()) continue;
    if (!std::isfinite(values[i])) throw Error("anova: non-finite value");
    out.values.push_back(values[i]);
    out.labels.push_back(it->second);
  }
  return out;
}

// Between-group sum of squares from per-group sums.
double ss_between(const std::vector<double>& values, const std::vector<long>& labels, std::size_t groups,
                  double grand_mean, std::vector<double>& sums, std::vector<double>& counts) {
  sums.assign(groups, 0.0);
  counts.assign(groups, 0.0);
  for (std::size_t i = 0; i < values.size(); ++i) {
    sums[std::size_t(labels[i])] += values[i] - grand_mean;
    counts[std::size_t(labels[i])] += 1.0;
  }
  double ss = 0.0;
  for (std::size_t g = 0; g < groups; ++g)
    if (counts[g] > 0) ss += sums[g] * sums[g] / counts[g];
  return ss;
}

}  // namespace

AnovaReport anova_eta2(std::span<const double> values, std::span<const long> labels, std::size_t min_count) {
  const Retained d = filter(values, labels, min_count);
  const std::size_t N = d.values.size(), M = d.groups;
  const double mean = std::accumulate(d.values.begin(), d.values.end(), 0.0) / double(N);
  std::vector<double> gm(M, 0.0), gc(M, 0.0);
  for (std::size_t i = 0; i < N; ++i) {
    gm[std::size_t(d.labels[i])] += d.values[i];
    gc[std::size_t(d.labels[i])] += 1.0;
  }
  for (std::size_t g = 0; g < M; ++g) gm[g] /= gc[g];
  AnovaReport r;
  for (std::size_t i = 0; i < N; ++i) {
    const double x = d.values[i], m = gm[std::size_t(d.labels[i])];
    r.ss_total += (x - mean) * (x - mean);
    r.ss_within += (x - m) * (x - m);
  }
  for (std::size_t g = 0; g < M; ++g) r.ss_between += gc[g] * (gm[g] - mean) * (gm[g] - mean);
  if (!(r.ss_total > 0.0)) throw Error("anova: all values identical, eta^2 undefined");
  r.groups = M;
  r.samples = N;
  r.df_between = M - 1;
  r.df_within = N - M;
  r.eta2 = r.ss_between / r.ss_total;
  if (r.df_within == 0) {
    r.f = std::numeric_limits<double>::quiet_NaN();
    r.p_param = std::numeric_limits<double>::quiet_NaN();
  } else if (r.ss_within <= 0.0) {
    r.f = std::numeric_limits<double>::infinity();
    r.p_param = 0.0;
  } else {
    r.f = (r.ss_between / double(r.df_between)) / (r.ss_within / double(r.df_within));
    const boost::math::fisher_f_distribution<double> dist(double(r.df_between), double(r.df_within));
    r.p_param = boost::math::cdf(boost::math::complement(dist, r.f));
  }
  return r;
}

double eta_squared(std::span<const double> values, std::span<const long> labels) {
  return anova_eta2(values, labels, 1).eta2;
}

void permutation_null(AnovaReport& report, std::span<const double> values, std::span<const long> labels,
                      std::size_t n_perm, std::mt19937_64& rng, std::size_t min_count) {
  Retained d = filter(values, labels, min_count);
  const double mean = std::accumulate(d.values.begin(), d.values.end(), 0.0) / double(d.values.size());
  double ss_total = 0.0;
  for (double x : d.values) ss_total += (x - mean) * (x - mean);
  if (!(ss_total > 0.0)) throw Error("anova: all values identical, eta^2 undefined");
  std::vector<double> sums, counts;
  const double observed = ss_between(d.values, d.labels, d.groups, mean, sums, counts) / ss_total;
  report.null_eta2.clear();
  report.null_eta2.reserve(n_perm);
  std::size_t hits = 0;
  for (std::size_t k = 0; k < n_perm; ++k) {
    std::shuffle(d.labels.begin(), d.labels.end(), rng);
    const double e = ss_between(d.values, d.labels, d.groups, mean, sums, counts) / ss_total;
    report.null_eta2.push_back(e);
    if (e >= observed) ++hits;
  }
  report.null_mean = n_perm ? std::accumulate(report.null_eta2.begin(), report.null_eta2.end(), 0.0) / double(n_perm)
                            : 0.0;
  report.p_perm = n_perm ? double(hits) / double(n_perm) : 1.0;
}

long quintile(std::size_t i, std::size_t n) {
  if (i >= n) throw Error("quintile: index out of range");
  return long(5 * i / n);
}

ControlLabels control_groupings(std::span<const Ensemble> corpus) {
  ControlLabels out;
  std::map<std::string, long> group_index;
  for (const auto& e : corpus) group_index.emplace(e.group.empty() ? e.id : e.group, 0);
  long next = 0;
  for (auto& [_, v] : group_index) v = next++;

  std::vector<std::size_t> by_length(corpus.size());
  std::iota(by_length.begin(), by_length.end(), 0);
  std::stable_sort(by_length.begin(), by_length.end(),
                   [&](auto a, auto b) { return corpus[a].residue_count() < corpus[b].residue_count(); });
  std::vector<long> length_q(corpus.size());
  for (std::size_t rank = 0; rank < by_length.size(); ++rank) length_q[by_length[rank]] = quintile(rank, corpus.size());

  for (std::size_t i = 0; i < corpus.size(); ++i) {
    const auto& e = corpus[i];
    const long g = group_index.at(e.group.empty() ? e.id : e.group);
    const std::size_t L = e.residue_count();
    for (std::size_t r = 0; r < L; ++r) {
      out.group.push_back(g);
      out.position.push_back(quintile(r, L));
      out.length.push_back(length_q[i]);
    }
  }
  return out;
}

std::vector<double> average_ranks(std::span<const double> x) {
  std::vector<std::size_t> idx(x.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](auto a, auto b) { return x[a] < x[b]; });
  std::vector<double> ranks(x.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && x[idx[j + 1]] == x[idx[i]]) ++j;
    const double avg = 0.5 * double(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[idx[k]] = avg;
    i = j + 1;
  }
  return ranks;
}

double spearman(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw Error("spearman: inputs differ in length");
  if (x.size() < 3) throw Error("spearman: need at least 3 samples");
  for (std::size_t i = 0; i < x.size(); ++i)
    if (!std::isfinite(x[i]) || !std::isfinite(y[i])) throw Error("spearman: non-finite input");
  const auto rx = average_ranks(x), ry = average_ranks(y);
  const double n = double(x.size());
  const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
  const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) throw Error("spearman: constant input, correlation undefined");
  return sxy / std::sqrt(sxx * syy);
}

double mutation_score(const quantizer::CodebookLevel& level1, std::span<const int> wt, std::span<const int> mut) {
  if (wt.size() != mut.size())
    throw Error("mutation_score: sequences differ in length (" + std::to_string(wt.size()) + " vs " +
                std::to_string(mut.size()) + ")");
  const auto M = static_cast<int>(level1.size());
  double s = 0.0;
  for (std::size_t i = 0; i < wt.size(); ++i) {
    if (wt[i] < 0 || wt[i] >= M || mut[i] < 0 || mut[i] >= M)
      throw Error("mutation_score: token out of range at position " + std::to_string(i));
    s += (level1.codewords.row(wt[i]) - level1.codewords.row(mut[i])).norm();
  }
  return -s;
}

}  // namespace ensembits::analysis
