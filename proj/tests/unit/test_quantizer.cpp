#include "ensembits/error.hpp"
#include "ensembits/quantizer.hpp"

#include <doctest.h>

#include <cmath>
#include <random>

using namespace ensembits;
using namespace ensembits::quantizer;

namespace {

CodebookLevel level_of(std::initializer_list<std::initializer_list<double>> rows) {
  Matrix m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.begin()->size()));
  Eigen::Index r = 0;
  for (const auto& row : rows) {
    Eigen::Index c = 0;
    for (double v : row) m(r, c++) = v;
    ++r;
  }
  return CodebookLevel::from_codewords(m, Vector::Ones(m.rows()));
}

Vector vec(std::initializer_list<double> v) {
  Vector out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) out(i++) = x;
  return out;
}

}  // namespace

TEST_CASE("quantize: two-level hand case") {
  const Codebooks books{level_of({{1, 0}, {0, 1}}), level_of({{0, 0}, {0.5, 0}})};
  const auto q = quantize(vec({1.2, 0.1}), books);
  CHECK(q.record.tokens == std::vector<int>{0, 0});
  CHECK((q.record.quantized - vec({1, 0})).norm() < 1e-15);
  REQUIRE(q.residuals.size() == 3);
  CHECK((q.residuals[2] - vec({0.2, 0.1})).norm() < 1e-15);
  CHECK(q.record.latent_distance == doctest::Approx(std::sqrt(0.05)));
}

TEST_CASE("quantize: exact codeword, ties, residual identity, errors") {
  const Codebooks books{level_of({{3, 4}, {1, 1}}), level_of({{0.5, 0.5}, {0, 0}})};
  const auto q = quantize(vec({3, 4}), books);
  CHECK((q.record.quantized - vec({3, 4})).norm() == 0.0);
  CHECK(q.residuals.back().norm() == 0.0);

  const CodebookLevel tie = level_of({{1, 0}, {-1, 0}});
  CHECK(nearest_code(tie, vec({0, 0})) == 0);

  std::mt19937_64 rng(1);
  std::normal_distribution<double> g(0.0, 1.0);
  Codebooks random_books;
  for (int l = 0; l < 3; ++l) {
    Matrix m(7, 5);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = g(rng);
    random_books.push_back(CodebookLevel::from_codewords(m, Vector::Ones(7)));
  }
  for (int t = 0; t < 50; ++t) {
    Vector z(5);
    for (auto& v : z) v = 3.0 * g(rng);
    const auto r = quantize(z, random_books);
    CHECK((z - (r.record.quantized + r.residuals.back())).norm() < 1e-9);
  }

  CodebookLevel empty;
  empty.codewords.resize(0, 2);
  CHECK_THROWS_AS(quantize(vec({1, 2}), Codebooks{empty}), Error);
  CHECK_THROWS_AS(quantize(vec({1, 2}), Codebooks{}), Error);
}

TEST_CASE("ema update: hand case") {
  CodebookLevel l = CodebookLevel::from_codewords(Matrix::Constant(1, 2, 0.0), Vector::Ones(1));
  l.ema_sum << 1, 0;
  l.codewords << 1, 0;
  const std::vector<Assignment> a{{0, vec({2, 0})}, {0, vec({4, 0})}};
  ema_update(l, a, 0.9);
  CHECK(std::abs(l.ema_count(0) - 1.1) < 1e-12);
  CHECK(std::abs(l.ema_sum(0, 0) - 1.5) < 1e-12);
  CHECK(std::abs(l.codewords(0, 0) - 1.5 / 1.1) < 1e-12);
  CHECK(l.codewords(0, 0) == doctest::Approx(1.3636).epsilon(1e-4));
  CHECK(l.codewords(0, 1) == 0.0);
}

TEST_CASE("ema update: unassigned code keeps its codeword, default decay, decay range") {
  CHECK(kDefaultDecay == 0.99);
  CodebookLevel l = level_of({{1, 2}, {3, 4}});
  l.ema_count(1) = 2.5;
  l.ema_sum.row(1) *= 2.5;
  const std::vector<Assignment> a{{0, vec({5, 5})}};
  ema_update(l, a);
  CHECK((l.codewords.row(1) - Matrix(vec({3, 4}).transpose())).norm() < 1e-12);
  CHECK(l.ema_count(1) == doctest::Approx(0.99 * 2.5));
  CHECK_THROWS_AS(ema_update(l, a, 0.0), Error);
  CHECK_THROWS_AS(ema_update(l, a, 1.5), Error);
  const std::vector<Assignment> bad{{7, vec({5, 5})}};
  CHECK_THROWS_AS(ema_update(l, bad, 0.9), Error);
  // decay 1 freezes the level
  const CodebookLevel before = l;
  ema_update(l, a, 1.0);
  CHECK(l == before);
}

TEST_CASE("revive dead codes") {
  std::mt19937_64 rng(2);
  CodebookLevel live = level_of({{1, 0}, {0, 1}});
  const std::vector<Vector> batch{vec({7, 8})};
  const CodebookLevel before = live;
  CHECK(revive_dead(live, batch, rng) == 0);
  CHECK(live == before);

  CodebookLevel dead = level_of({{1, 0}, {0, 1}});
  dead.ema_count(1) = 0.2;
  CHECK(revive_dead(dead, batch, rng) == 1);
  CHECK((dead.codewords.row(1) - Matrix(vec({7, 8}).transpose())).norm() == 0.0);
  CHECK(dead.codewords.row(0) == Matrix(vec({1, 0}).transpose()));
  CHECK(dead.ema_count(1) >= 1.0);
  CHECK(nearest_code(dead, vec({7, 8})) == 1);
  CHECK_THROWS_AS(revive_dead(dead, std::span<const Vector>{}, rng), Error);
}

TEST_CASE("kmeans init: exact capacity and two clusters") {
  std::mt19937_64 rng(3);
  const std::vector<Vector> three{vec({0, 0}), vec({1, 5}), vec({-2, 3})};
  const auto l = kmeans_init(3, three, 0, rng);
  REQUIRE(l.size() == 3);
  for (const auto& s : three) {
    bool found = false;
    for (Eigen::Index i = 0; i < 3; ++i) found |= (l.codewords.row(i).transpose() - s).norm() == 0.0;
    CHECK(found);
  }

  std::vector<Vector> pts;
  std::normal_distribution<double> g(0.0, 0.2);
  for (int i = 0; i < 100; ++i) pts.push_back(vec({(i % 2 ? 10.0 : 0.0) + g(rng)}));
  const auto two = kmeans_init(2, pts, 10, rng);
  const double lo = std::min(two.codewords(0, 0), two.codewords(1, 0));
  const double hi = std::max(two.codewords(0, 0), two.codewords(1, 0));
  CHECK(std::abs(lo) < 0.1);
  CHECK(std::abs(hi - 10.0) < 0.1);
  CHECK(two.ema_count.sum() == doctest::Approx(100.0));
}

TEST_CASE("commitment loss") {
  const std::vector<Vector> r{vec({1, 0})}, c{vec({0, 0})};
  CHECK(commitment_loss(r, c) == 1.0);
  const std::vector<Vector> same{vec({1, 2}), vec({0.5, 0})};
  CHECK(commitment_loss(same, same) == 0.0);
  const std::vector<Vector> two{vec({1, 0}), vec({0, 3})}, zero{vec({0, 0}), vec({0, 0})};
  CHECK(commitment_loss(two, zero) == doctest::Approx(5.0));
  CHECK_THROWS_AS(commitment_loss(two, c), Error);
}

TEST_CASE("codebook stats: closed forms") {
  const std::vector<double> half{5, 5, 0, 0};
  const auto s = codebook_stats(half);
  CHECK(s.utilization == 0.5);
  CHECK(s.perplexity == doctest::Approx(2.0));
  const std::vector<double> uniform(16, 3.0);
  CHECK(codebook_stats(uniform).perplexity == doctest::Approx(16.0));
  CHECK(codebook_stats(uniform).utilization == 1.0);
  const std::vector<double> one{0, 9, 0};
  CHECK(codebook_stats(one).perplexity == doctest::Approx(1.0));
  const std::vector<double> zeros{0, 0};
  CHECK_THROWS_AS(codebook_stats(zeros), Error);
}
