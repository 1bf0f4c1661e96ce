#include "ensembits/analysis.hpp"
#include "ensembits/error.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

namespace ensembits::analysis {

namespace {

using Mat = Eigen::MatrixXd;

struct Adam {
  Mat m, v;
  void step(Mat& p, const Mat& g, double lr, std::size_t t) {
    if (m.size() == 0) {
      m = Mat::Zero(p.rows(), p.cols());
      v = Mat::Zero(p.rows(), p.cols());
    }
    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g.cwiseProduct(g);
    const double c1 = 1.0 - std::pow(0.9, double(t)), c2 = 1.0 - std::pow(0.999, double(t));
    p.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + 1e-8);
  }
};

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2)); }
double gelu_grad(double x) {
  return 0.5 * (1.0 + std::erf(x / std::numbers::sqrt2)) + x * std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
}

}  // namespace

ProbeResult rmsf_probe(const Eigen::MatrixXd& features, std::span<const double> labels,
                       std::span<const std::size_t> train_rows, std::span<const std::size_t> test_rows,
                       const ProbeOptions& opt) {
  const auto N = static_cast<std::size_t>(features.rows());
  if (labels.size() != N) throw Error("probe: label count differs from feature rows");
  if (train_rows.empty() || test_rows.size() < 3) throw Error("probe: need training rows and at least 3 test rows");
  if (opt.seeds == 0 || opt.hidden == 0 || opt.batch == 0) throw Error("probe: invalid options");
  {
    std::vector<std::size_t> a(train_rows.begin(), train_rows.end()), b(test_rows.begin(), test_rows.end());
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    std::vector<std::size_t> both;
    std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(both));
    if (!both.empty()) throw Error("probe: train and test rows overlap");
    if (a.back() >= N || b.back() >= N) throw Error("probe: row index out of range");
  }

  // Standardize features and labels on the training rows.
  const auto F = features.cols();
  Eigen::RowVectorXd mu = Eigen::RowVectorXd::Zero(F), sd = Eigen::RowVectorXd::Zero(F);
  for (auto i : train_rows) mu += features.row(Eigen::Index(i));
  mu /= double(train_rows.size());
  for (auto i : train_rows) sd += (features.row(Eigen::Index(i)) - mu).array().square().matrix();
  sd = (sd / double(train_rows.size())).cwiseSqrt().cwiseMax(1e-8);
  double ymu = 0, ysd = 0;
  for (auto i : train_rows) ymu += labels[i];
  ymu /= double(train_rows.size());
  for (auto i : train_rows) ysd += (labels[i] - ymu) * (labels[i] - ymu);
  ysd = std::sqrt(ysd / double(train_rows.size()));
  if (!(ysd > 0.0)) throw Error("probe: training labels are constant");

  auto gather = [&](std::span<const std::size_t> rows) {
    Mat X(static_cast<Eigen::Index>(rows.size()), F);
    for (std::size_t k = 0; k < rows.size(); ++k)
      X.row(Eigen::Index(k)) = (features.row(Eigen::Index(rows[k])) - mu).cwiseQuotient(sd);
    return X;
  };
  const Mat Xtr = gather(train_rows), Xte = gather(test_rows);
  Eigen::VectorXd ytr(static_cast<Eigen::Index>(train_rows.size()));
  for (std::size_t k = 0; k < train_rows.size(); ++k) ytr(Eigen::Index(k)) = (labels[train_rows[k]] - ymu) / ysd;
  std::vector<double> yte;
  for (auto i : test_rows) yte.push_back(labels[i]);

  const auto H = Eigen::Index(opt.hidden);
  ProbeResult out;
  for (std::size_t s = 0; s < opt.seeds; ++s) {
    std::mt19937_64 rng(opt.seed + 0x9E3779B97F4A7C15ull * (s + 1));
    std::normal_distribution<double> g(0.0, 1.0);
    Mat W1(F, H), b1 = Mat::Zero(1, H), W2(H, 1), b2 = Mat::Zero(1, 1);
    for (Eigen::Index i = 0; i < W1.size(); ++i) W1.data()[i] = g(rng) / std::sqrt(double(F));
    for (Eigen::Index i = 0; i < W2.size(); ++i) W2.data()[i] = g(rng) / std::sqrt(double(H));
    Adam a1, a2, a3, a4;
    std::vector<std::size_t> order(train_rows.size());
    std::iota(order.begin(), order.end(), 0);
    std::size_t t = 0;
    for (std::size_t epoch = 0; epoch < opt.epochs; ++epoch) {
      std::shuffle(order.begin(), order.end(), rng);
      for (std::size_t lo = 0; lo < order.size(); lo += opt.batch) {
        const std::size_t n = std::min(opt.batch, order.size() - lo);
        Mat X(static_cast<Eigen::Index>(n), F);
        Eigen::VectorXd y(static_cast<Eigen::Index>(n));
        for (std::size_t k = 0; k < n; ++k) {
          X.row(Eigen::Index(k)) = Xtr.row(Eigen::Index(order[lo + k]));
          y(Eigen::Index(k)) = ytr(Eigen::Index(order[lo + k]));
        }
        Mat pre = X * W1;
        pre.rowwise() += b1.row(0);
        const Mat h = pre.unaryExpr(&gelu);
        Eigen::VectorXd pred = h * W2;
        pred.array() += b2(0, 0);
        const Eigen::VectorXd dpred = 2.0 * (pred - y) / double(n);
        const Mat gW2 = h.transpose() * dpred;
        const Mat gb2 = Mat::Constant(1, 1, dpred.sum());
        const Mat dpre = (dpred * W2.transpose()).cwiseProduct(pre.unaryExpr(&gelu_grad));
        const Mat gW1 = X.transpose() * dpre;
        const Mat gb1 = dpre.colwise().sum();
        ++t;
        a1.step(W1, gW1, opt.lr, t);
        a2.step(b1, gb1, opt.lr, t);
        a3.step(W2, gW2, opt.lr, t);
        a4.step(b2, gb2, opt.lr, t);
      }
    }
    Mat pre = Xte * W1;
    pre.rowwise() += b1.row(0);
    const Eigen::VectorXd pred = (pre.unaryExpr(&gelu) * W2).array() + b2(0, 0);
    std::vector<double> p(pred.data(), pred.data() + pred.size());
    // A constant predictor carries no ranking information.
    const bool flat = std::all_of(p.begin(), p.end(), [&](double x) { return x == p.front(); });
    out.per_seed.push_back(flat ? 0.0 : spearman(p, yte));
  }
  const double n = double(out.per_seed.size());
  out.mean = std::accumulate(out.per_seed.begin(), out.per_seed.end(), 0.0) / n;
  double v = 0;
  for (double x : out.per_seed) v += (x - out.mean) * (x - out.mean);
  out.stddev = out.per_seed.size() > 1 ? std::sqrt(v / (n - 1.0)) : 0.0;
  return out;
}

}  // namespace ensembits::analysis
