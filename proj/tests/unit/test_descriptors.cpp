#include "ensembits/descriptors.hpp"
#include "ensembits/error.hpp"
#include "helpers.hpp"

#include <doctest.h>

#include <cmath>

using namespace ensembits;
using namespace ensembits::descriptors;
using geometry::Atom;
using geometry::FrameCoords;
using geometry::Point3;

namespace {

FrameCoords straight_ca(std::size_t L, double spacing = 1.0) {
  FrameCoords f({Atom::CA}, L);
  for (std::size_t r = 0; r < L; ++r) f.at(r, 0) = {spacing * double(r), 0, 0};
  return f;
}

Ensemble per_frame_moved(const Ensemble& e, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Ensemble out = e;
  for (auto& f : out.frames) f = f.transformed(testing::random_rigid(rng));
  return out;
}

}  // namespace

TEST_CASE("dimension law table") {
  auto three = [](std::size_t k, Mode m) { return DescriptorConfig::three_di(k, m); };
  CHECK(descriptor_dim(three(1, Mode::Fixed)) == 14);
  CHECK(descriptor_dim(three(2, Mode::Fixed)) == 32);
  CHECK(descriptor_dim(three(3, Mode::Fixed)) == 50);
  CHECK(descriptor_dim(three(3, Mode::Dynamical)) == 50);
  CHECK(descriptor_dim(three(3, Mode::Fused), 5) == 266);
  CHECK(descriptor_dim(three(3, Mode::Fused), 10) == 536);
  CHECK(descriptor_dim(DescriptorConfig::relative_frame(16)) == 192);
  for (std::size_t P = 1; P <= 10; ++P) {
    auto rf = DescriptorConfig::relative_frame(16);
    rf.mode = Mode::Fused;
    CHECK(descriptor_dim(rf, P) == 192 * P);
  }
  auto nopsi = three(3, Mode::Fixed);
  nopsi.psi_enabled = false;
  CHECK(descriptor_dim(nopsi) == 10 + 2 * 14);
}

TEST_CASE("config validation") {
  auto rf = DescriptorConfig::relative_frame(8);
  rf.psi_enabled = true;
  CHECK_THROWS_AS(rf.validate(), Error);
  auto zero = DescriptorConfig::relative_frame(8);
  zero.k = 0;
  CHECK_THROWS_AS(zero.validate(), Error);
  CHECK(family_from_string(to_string(Family::ThreeDi)) == Family::ThreeDi);
  CHECK(mode_from_string(to_string(Mode::Fused)) == Mode::Fused);
  CHECK_THROWS_AS(mode_from_string("bogus"), Error);
}

TEST_CASE("3Di pair block: straight chain") {
  const auto f = straight_ca(12);
  const auto b = threedi_pair_block(f, 1, 6);
  CHECK(b[0] == doctest::Approx(5.0));
  CHECK(b[7] == doctest::Approx(1.0));  // u_{0->1} . u_{5->6}
  for (int t = 1; t <= 7; ++t) CHECK(std::abs(std::abs(b[t]) - 1.0) < 1e-12);
  // boundary vectors are zero: every dot product touching u_{-1->0} vanishes
  const auto edge = threedi_pair_block(f, 0, 5);
  CHECK(edge[0] == doctest::Approx(5.0));
  CHECK(edge[1] == 0.0);
  CHECK(edge[7] == 0.0);
  CHECK_THROWS_AS(threedi_pair_block(f, 3, 3), Error);
}

TEST_CASE("3Di pair block: sequence features") {
  const auto f = straight_ca(12);
  const auto b = threedi_pair_block(f, 10, 3);
  CHECK(b[8] == 4.0);
  CHECK(b[9] == doctest::Approx(std::log(8.0)));
  CHECK(b[9] == doctest::Approx(2.0794).epsilon(1e-4));
  const auto c = threedi_pair_block(f, 3, 5);
  CHECK(c[8] == -2.0);
  CHECK(c[9] == doctest::Approx(-std::log(3.0)));
}

TEST_CASE("3Di pair block: rigid invariance") {
  const auto e = testing::toy_ensemble(25, 1, 3);
  std::mt19937_64 rng(11);
  const auto moved = e.frames[0].transformed(testing::random_rigid(rng));
  for (std::size_t i : {0u, 5u, 24u})
    for (std::size_t j : {2u, 13u, 23u}) {
      if (i == j) continue;
      const auto a = threedi_pair_block(e.frames[0], i, j), b = threedi_pair_block(moved, i, j);
      for (int t = 0; t < 10; ++t) CHECK(std::abs(a[t] - b[t]) < 1e-9);
    }
}

TEST_CASE("psi block: trans psi and terminal padding") {
  FrameCoords f({Atom::N, Atom::CA, Atom::C}, 2);
  f.at(0, 0) = {1, 0, 0};
  f.at(0, 1) = {0, 0, 0};
  f.at(0, 2) = {0, 1, 0};
  f.at(1, 0) = {-1, 1, 0};
  f.at(1, 1) = {-1, 2.5, 0};
  f.at(1, 2) = {0, 3, 0};
  const auto b = psi_block(f, 0, 1);
  CHECK(std::abs(b[0]) < 1e-12);
  CHECK(b[1] == doctest::Approx(-1.0));
  CHECK(b[2] == 0.0);
  CHECK(b[3] == 0.0);
}

TEST_CASE("glue block: parallel tangents, degenerate guard, invariance") {
  const auto f = straight_ca(10);
  const auto g = glue_block(f, 0, 2, 5);
  CHECK(g[0] == doctest::Approx(3.0));
  CHECK(g[1] == doctest::Approx(1.0));
  CHECK(g[2] == doctest::Approx(1.0));
  CHECK(g[3] == doctest::Approx(1.0));

  auto folded = straight_ca(10);
  folded.at(6, 0) = folded.at(2, 0);
  const auto d = glue_block(folded, 0, 2, 6);
  CHECK(d[0] == 0.0);
  CHECK(d[2] == 0.0);
  CHECK(d[3] == 0.0);

  const auto e = testing::toy_ensemble(20, 1, 5);
  std::mt19937_64 rng(12);
  const auto moved = e.frames[0].transformed(testing::random_rigid(rng));
  const auto a = glue_block(e.frames[0], 4, 9, 15), b = glue_block(moved, 4, 9, 15);
  for (int t = 0; t < 4; ++t) CHECK(std::abs(a[t] - b[t]) < 1e-9);
}

TEST_CASE("relative frame block: self neighbor is identity, rigid invariance") {
  const auto e = testing::toy_ensemble(20, 1, 6);
  const std::vector<std::size_t> self{7};
  const auto b = relative_frame_block(e.frames[0], 7, self);
  REQUIRE(b.size() == 12);
  const double expected[12] = {1, 0, 0, 0, 1, 0, 0, 0, 1, 0, 0, 0};
  for (int t = 0; t < 12; ++t) CHECK(std::abs(b[t] - expected[t]) < 1e-12);

  std::mt19937_64 rng(13);
  const auto moved = e.frames[0].transformed(testing::random_rigid(rng));
  const std::vector<std::size_t> nb{3, 12, 19};
  const auto x = relative_frame_block(e.frames[0], 10, nb), y = relative_frame_block(moved, 10, nb);
  REQUIRE(x.size() == 36);
  CHECK(testing::max_abs_diff(x, y) < 1e-9);
}

TEST_CASE("select_neighbors: modes") {
  Ensemble one;
  one.id = "one";
  one.frames.push_back(testing::toy_ensemble(20, 1, 7).frames[0]);
  for (std::size_t r : {0u, 9u}) {
    const auto a = select_neighbors(one, r, DescriptorConfig::three_di(3, Mode::Fixed));
    const auto b = select_neighbors(one, r, DescriptorConfig::three_di(3, Mode::Dynamical));
    const auto c = select_neighbors(one, r, DescriptorConfig::three_di(3, Mode::Fused));
    CHECK(a == b);
    CHECK(b == c);
  }

  // contact between residues 0 and 7 forms only in the second frame
  Ensemble two;
  two.id = "contact";
  two.frames = {straight_ca(8, 3.8), straight_ca(8, 3.8)};
  two.frames[1].at(7, 0) = {0, 2.0, 0};
  auto dyn = DescriptorConfig::relative_frame(2);
  dyn.mode = Mode::Dynamical;
  const auto lists = select_neighbors(two, 0, dyn);
  CHECK(lists[0] == std::vector<std::size_t>{1, 2});
  CHECK(lists[1] == std::vector<std::size_t>{7, 1});

  const auto five = testing::toy_ensemble(20, 5, 8);
  const auto fused = select_neighbors(five, 4, DescriptorConfig::three_di(3, Mode::Fused));
  REQUIRE(fused.size() == 5);
  for (const auto& l : fused) CHECK(l.size() == 15);

  auto tight = DescriptorConfig::three_di(3, Mode::Fused);
  tight.frames_max = 4;
  CHECK_THROWS_AS(select_neighbors(five, 4, tight), Error);
}

TEST_CASE("compute_descriptors: shape, single frame, per-frame rigid invariance") {
  const auto e = testing::toy_ensemble(24, 4, 9);
  const auto moved = per_frame_moved(e, 14);
  std::vector<DescriptorConfig> configs{DescriptorConfig::relative_frame(8), DescriptorConfig::three_di(3, Mode::Fixed),
                                        DescriptorConfig::three_di(3, Mode::Dynamical),
                                        DescriptorConfig::three_di(2, Mode::Fused)};
  auto rf_fused = DescriptorConfig::relative_frame(4);
  rf_fused.mode = Mode::Fused;
  configs.push_back(rf_fused);
  for (const auto& cfg : configs) {
    const auto a = compute_descriptors(e, cfg);
    CHECK(a.residue_count() == 24);
    CHECK(a.frame_count() == 4);
    CHECK(a.dim() == descriptor_dim(cfg, 4));
    const auto b = compute_descriptors(moved, cfg);
    CHECK(testing::max_abs_diff(a.values(), b.values()) < 1e-8);
    for (double v : a.values()) CHECK(std::isfinite(v));
  }
  const auto single = compute_descriptors(e.subset({2}), DescriptorConfig::relative_frame(8));
  CHECK(single.frame_count() == 1);
  CHECK(single.dim() == 96);
}

TEST_CASE("compute_descriptors: 3Di layout puts glue between pair blocks") {
  const auto e = testing::toy_ensemble(24, 1, 10);
  const auto cfg = DescriptorConfig::three_di(2, Mode::Dynamical);
  const auto set = compute_descriptors(e, cfg);
  const std::size_t r = 11;
  const auto nb = select_neighbors(e, r, cfg)[0];
  const auto full = geometry::complete_backbone(e.frames[0]);
  const auto row = set.row(r, 0);
  const auto p1 = threedi_pair_block(full, r, nb[0]);
  const auto d1 = psi_block(full, r, nb[0]);
  const auto g = glue_block(full, r, nb[0], nb[1]);
  const auto p2 = threedi_pair_block(full, r, nb[1]);
  std::vector<double> expect(p1.begin(), p1.end());
  expect.insert(expect.end(), d1.begin(), d1.end());
  expect.insert(expect.end(), g.begin(), g.end());
  expect.insert(expect.end(), p2.begin(), p2.end());
  for (std::size_t t = 0; t < expect.size(); ++t) CHECK(row[t] == doctest::Approx(expect[t]));
}

TEST_CASE("standardizer: floor, hand case, self application") {
  DescriptorSet a(1, 1, 2), b(1, 1, 2);
  a.values() = {0.0, 5.0};
  b.values() = {2.0, 5.0};
  std::vector<DescriptorSet> sets{a, b};
  const auto s = fit_standardizer(sets);
  CHECK(s.mean[0] == doctest::Approx(1.0));
  CHECK(s.stddev[0] == doctest::Approx(1.0));
  CHECK(s.stddev[1] == Standardizer::kStdFloor);
  auto c = b;
  s.apply(c);
  CHECK(c.values()[0] == doctest::Approx(1.0));
  CHECK(c.values()[1] == 0.0);

  const auto real = compute_descriptors(testing::toy_ensemble(20, 3, 11), DescriptorConfig::relative_frame(4));
  std::vector<DescriptorSet> train{real};
  const auto fit = fit_standardizer(train);
  auto z = real;
  fit.apply(z);
  std::vector<double> mean(z.dim(), 0.0);
  for (std::size_t i = 0; i < z.values().size(); ++i) mean[i % z.dim()] += z.values()[i];
  for (double m : mean) CHECK(std::abs(m / double(z.residue_count() * z.frame_count())) < 1e-9);

  CHECK_THROWS_AS(fit_standardizer(std::span<const DescriptorSet>{}), Error);
  DescriptorSet wrong(1, 1, 3);
  CHECK_THROWS_AS(fit.apply(wrong), Error);
}
