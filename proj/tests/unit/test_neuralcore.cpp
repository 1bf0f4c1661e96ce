#include "ensembits/error.hpp"
#include "ensembits/model.hpp"
#include "ensembits/optim.hpp"
#include "ensembits/tape.hpp"
#include "oracles.hpp"

#include <doctest.h>

#include <algorithm>
#include <random>

using namespace ensembits;
using namespace ensembits::nn;

namespace {

Matrix random_matrix(std::mt19937_64& rng, Eigen::Index r, Eigen::Index c, double s = 1.0) {
  std::normal_distribution<double> g(0.0, s);
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = g(rng);
  return m;
}

Matrix shuffled_rows(const Matrix& m, std::mt19937_64& rng) {
  std::vector<Eigen::Index> idx(static_cast<std::size_t>(m.rows()));
  std::iota(idx.begin(), idx.end(), 0);
  std::shuffle(idx.begin(), idx.end(), rng);
  Matrix out(m.rows(), m.cols());
  for (Eigen::Index i = 0; i < m.rows(); ++i) out.row(i) = m.row(idx[static_cast<std::size_t>(i)]);
  return out;
}

}  // namespace

TEST_CASE("tape: constant loss has zero gradients") {
  Tape t;
  std::mt19937_64 rng(1);
  const Var w = t.parameter(random_matrix(rng, 3, 2), 0);
  const Var c = t.constant(Matrix::Constant(1, 1, 4.0));
  (void)w;
  t.backward(c);
  CHECK(t.grad(w).norm() == 0.0);
}

TEST_CASE("tape: half squared norm of a linear layer matches the analytic gradient") {
  std::mt19937_64 rng(2);
  const Matrix x = random_matrix(rng, 1, 4), W = random_matrix(rng, 4, 3);
  Tape t;
  const Var xv = t.input(x);
  const Var wv = t.parameter(W, 0);
  const Var y = t.matmul(xv, wv);
  const Var loss = t.sq_error(y, t.constant(Matrix::Zero(1, 3)), 0.5);
  t.backward(loss);
  const Matrix y_val = x * W;
  CHECK(t.scalar(loss) == doctest::Approx(0.5 * y_val.squaredNorm()));
  CHECK((t.grad(wv) - x.transpose() * y_val).norm() < 1e-12);
  CHECK((t.grad(xv) - y_val * W.transpose()).norm() < 1e-12);
}

TEST_CASE("tape: backward preconditions") {
  Tape a, b;
  const Var v = a.constant(Matrix::Ones(2, 2));
  CHECK_THROWS_AS(a.backward(v), Error);
  const Var s = b.sum(b.constant(Matrix::Ones(2, 2)));
  CHECK_THROWS_AS(a.backward(s), Error);
}

TEST_CASE("tape: stop gradient blocks flow, straight-through passes it") {
  Tape t;
  const Var x = t.input(Matrix::Constant(1, 2, 3.0));
  const Var sg = t.stop_gradient(x);
  const Var loss = t.sq_error(sg, t.constant(Matrix::Zero(1, 2)));
  t.backward(loss);
  CHECK(t.scalar(loss) == doctest::Approx(18.0));
  CHECK(t.grad(x).norm() == 0.0);

  Tape u;
  const Var z = u.input(Matrix::Constant(1, 2, 1.0));
  const Var st = u.straight_through(z, Matrix::Constant(1, 2, 5.0));
  const Var l2 = u.sq_error(st, u.constant(Matrix::Zero(1, 2)));
  u.backward(l2);
  CHECK(u.value(st)(0, 0) == 5.0);
  CHECK(u.grad(z)(0, 0) == doctest::Approx(10.0));
}

TEST_CASE("tape: every op passes a finite-difference check") {
  std::mt19937_64 rng(3);
  std::vector<Matrix> p{random_matrix(rng, 5, 4), random_matrix(rng, 4, 4), random_matrix(rng, 1, 4),
                        random_matrix(rng, 3, 4)};
  const Segments qs{0, 1, 3}, ks{0, 2, 5};
  auto build = [&](Tape& t, std::span<const Matrix> v, std::vector<Var>* leaves) {
    std::vector<Var> ps;
    for (std::size_t i = 0; i < v.size(); ++i) ps.push_back(t.parameter(v[i], int(i)));
    if (leaves) *leaves = ps;
    Var h = t.gelu(t.add_bias(t.matmul(ps[0], ps[1]), ps[2]));
    Var q = t.gather_rows(ps[3], {0, 1, 2});
    Var att = t.segment_attention(q, h, t.scale(h, 0.7), qs, ks, 2);
    Var r = t.reshape(att, 1, 12);
    Var tiled = t.tile_rows(r, 2);
    Var target = t.constant(Matrix::Constant(2, 12, 0.3));
    Var w = t.weighted_sq_error(tiled, Matrix::Constant(2, 12, 0.1), Matrix::Constant(2, 12, 0.5));
    return t.add(t.sub(t.sq_error(tiled, target), w), t.sum(t.scale(att, 0.2)));
  };
  Tape t;
  std::vector<Var> leaves;
  const Var loss = build(t, p, &leaves);
  t.backward(loss);
  std::vector<Matrix> grads;
  for (const auto& l : leaves) grads.push_back(t.grad(l));
  const double err = finite_difference_check(
      [&](std::span<const Matrix> v) {
        Tape s;
        return s.scalar(build(s, v, nullptr));
      },
      p, grads, 80, 1e-5, 4);
  CHECK(err < 1e-6);
}

TEST_CASE("finite difference check: linear model and invalid step") {
  std::mt19937_64 rng(5);
  const Matrix a = random_matrix(rng, 3, 3);
  std::vector<Matrix> p{random_matrix(rng, 3, 3)};
  auto loss = [&](std::span<const Matrix> v) { return (a.array() * v[0].array()).sum(); };
  std::vector<Matrix> g{a};
  CHECK(finite_difference_check(loss, p, g, 20, 1e-4, 6) < 1e-8);
  CHECK_THROWS_AS(finite_difference_check(loss, p, g, 20, 0.0, 6), Error);
}

TEST_CASE("init: deterministic per seed") {
  const auto cfg = testing::tiny_model();
  const auto a = init_params(9, cfg), b = init_params(9, cfg), c = init_params(10, cfg);
  CHECK(a == b);
  CHECK(!(a == c));
  CHECK(a.tensors().size() == b.tensors().size());
  CHECK(a.encoder_tensor_count() < a.tensors().size());
  ModelConfig bad = cfg;
  bad.hidden = 7;  // not divisible by heads
  CHECK_THROWS_AS(bad.validate(), Error);
}

TEST_CASE("encoder: any positive cardinality and permutation invariance") {
  const auto cfg = testing::tiny_model(6, 10);
  const auto params = init_params(11, cfg);
  std::mt19937_64 rng(12);
  for (std::size_t P = 1; P <= 10; ++P) {
    const Matrix x = random_matrix(rng, Eigen::Index(P), 6);
    const Eigen::VectorXd z = encode_set(params, x);
    REQUIRE(z.size() == Eigen::Index(cfg.latent));
    CHECK(z.allFinite());
    for (int trial = 0; trial < 3; ++trial) {
      const Eigen::VectorXd zp = encode_set(params, shuffled_rows(x, rng));
      CHECK((zp - z).norm() <= 1e-6 * std::max(1.0, z.norm()));
    }
  }
  Matrix bad = Matrix::Ones(2, 6);
  bad(1, 3) = std::nan("");
  CHECK_THROWS_AS(encode_set(params, bad), Error);
}

TEST_CASE("encoder: batched segments match single-set encoding") {
  const auto cfg = testing::tiny_model(6, 5);
  const auto params = init_params(13, cfg);
  std::mt19937_64 rng(14);
  const Matrix a = random_matrix(rng, 2, 6), b = random_matrix(rng, 5, 6);
  Matrix stacked(7, 6);
  stacked << a, b;
  Tape t;
  BoundModel m(t, params);
  const Var z = m.encode(t.constant(stacked), {0, 2, 7});
  CHECK((t.value(z).row(0).transpose() - encode_set(params, a)).norm() < 1e-12);
  CHECK((t.value(z).row(1).transpose() - encode_set(params, b)).norm() < 1e-12);
}

TEST_CASE("decoder: shape, zero weights, distinct outputs") {
  const auto cfg = testing::tiny_model(6, 5);
  auto params = init_params(15, cfg);
  const Eigen::VectorXd q1 = Eigen::VectorXd::LinSpaced(4, -1, 1), q2 = -q1;
  const Matrix y1 = decode_multiset(params, q1), y2 = decode_multiset(params, q2);
  CHECK(y1.rows() == 5);
  CHECK(y1.cols() == 6);
  CHECK((y1 - y2).norm() > 1e-6);

  for (auto* l : {&params.decoder.l1, &params.decoder.l2, &params.decoder.l3}) l->weight.setZero();
  params.decoder.l3.bias = Eigen::RowVectorXd::LinSpaced(30, 0.0, 2.9);
  const Matrix y0 = decode_multiset(params, q1);
  for (Eigen::Index s = 0; s < 5; ++s)
    for (Eigen::Index d = 0; d < 6; ++d) CHECK(y0(s, d) == doctest::Approx(0.1 * double(s * 6 + d)));
}

TEST_CASE("full objective gradient agrees with central differences") {
  for (std::uint64_t seed : {21u, 22u}) {
    const testing::ObjectiveProbe probe(seed);
    CHECK(probe.fd_error(60, 1e-4, seed) < 1e-3);
  }
}

TEST_CASE("distillation does not push gradient into the teacher latent") {
  const auto params = init_params(23, testing::tiny_model(5, 4));
  std::mt19937_64 rng(24);
  const Matrix x = random_matrix(rng, 4, 5);
  Tape t;
  BoundModel m(t, params);
  const Var z1 = m.encode(t.constant(x), {0, 4});
  const Var z2 = m.encode(t.constant(x.topRows(2)), {0, 2});
  const Var loss = t.sq_error(z2, t.stop_gradient(z1));
  t.backward(loss);
  CHECK(t.grad(z1).norm() == 0.0);
  CHECK(t.grad(z2).norm() > 0.0);
}
