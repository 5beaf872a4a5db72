#include "doctest.h"

#include <random>

#include "masr/warp.hpp"

using namespace masr;

namespace {

ScalarVolume<double> x_ramp(const GridGeometry& g) {
  ScalarVolume<double> v(g);
  for (Index i = 0; i < g.size(); ++i) v[i] = double(g.coords(i)[0]);
  return v;
}

// Direct evaluation of the trilinear formula from the eight corner values.
double trilinear_oracle(const ScalarVolume<double>& v, Vec3<double> p) {
  const GridGeometry& g = v.geom();
  Index base[3];
  double t[3];
  for (int a = 0; a < 3; ++a) {
    const double hi = double(g.dims()[a] - 1);
    p[a] = std::min(std::max(p[a], 0.0), hi);
    base[a] = std::min<Index>(Index(std::floor(p[a])), g.dims()[a] - 2);
    t[a] = p[a] - double(base[a]);
  }
  double acc = 0.0;
  for (int dz = 0; dz < 2; ++dz)
    for (int dy = 0; dy < 2; ++dy)
      for (int dx = 0; dx < 2; ++dx) {
        const double w = (dx ? t[0] : 1 - t[0]) * (dy ? t[1] : 1 - t[1]) * (dz ? t[2] : 1 - t[2]);
        acc += w * v(base[0] + dx, base[1] + dy, base[2] + dz);
      }
  return acc;
}

}  // namespace

TEST_CASE("trilinear_sample examples") {
  const GridGeometry g(4, 4, 4);
  CHECK(trilinear_sample(ScalarVolume<double>(g, 7.0), Vec3<double>(0.3, 1.7, 0.5)) == doctest::Approx(7.0));
  const auto ramp = x_ramp(g);
  CHECK(trilinear_sample(ramp, Vec3<double>(0.5, 0, 0)) == 0.5);
  CHECK(trilinear_sample(ramp, Vec3<double>(-0.5, 0, 0)) == ramp(0, 0, 0));
  CHECK(trilinear_sample(ramp, Vec3<double>(3.0, 2.0, 1.0)) == 3.0);
}

TEST_CASE("trilinear_sample is exact on grid points and convex elsewhere") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> value(-5, 5);
  const GridGeometry g(5, 4, 6);
  ScalarVolume<double> v(g);
  for (Index i = 0; i < g.size(); ++i) v[i] = value(rng);
  for (Index i = 0; i < g.size(); ++i) {
    const Dims c = g.coords(i);
    CHECK(trilinear_sample(v, Vec3<double>(c.cast<double>().matrix())) == v[i]);
  }
  std::uniform_real_distribution<double> coord(-1.0, 6.5);
  for (int trial = 0; trial < 500; ++trial) {
    const Vec3<double> p(coord(rng), coord(rng), coord(rng));
    const double s = trilinear_sample(v, p);
    CHECK(s == doctest::Approx(trilinear_oracle(v, p)).epsilon(1e-12));
    CHECK(s >= v.data().minCoeff() - 1e-12);
    CHECK(s <= v.data().maxCoeff() + 1e-12);
  }
}

TEST_CASE("warp_scalar") {
  const GridGeometry g(6, 4, 3);
  const auto ramp = x_ramp(g);
  const DisplacementField<double> zero(g);
  CHECK((warp_scalar(ramp, zero).data() == ramp.data()).all());

  const auto shifted = warp_scalar(ramp, DisplacementField<double>::constant(g, Vec3<double>(1, 0, 0)));
  for (Index i = 0; i < g.size(); ++i) CHECK(shifted[i] == double(std::min<Index>(g.coords(i)[0] + 1, 5)));

  const auto quarter = warp_scalar(ramp, DisplacementField<double>::constant(g, Vec3<double>(0.25, 0, 0)));
  CHECK(quarter(2, 1, 1) == 2.25);

  CHECK_THROWS_AS(warp_scalar(ramp, DisplacementField<double>(GridGeometry(6, 4, 4))), Error);
}

TEST_CASE("warp_prob") {
  const GridGeometry g(8, 8, 8);
  LabelVolume cube(g, 1);
  for (Index z = 2; z < 5; ++z)
    for (Index y = 2; y < 5; ++y)
      for (Index x = 2; x < 5; ++x) cube(x, y, z) = 1;
  const auto p = one_hot(cube);
  CHECK((warp_prob(p, DisplacementField<double>(g)).data() == p.data()).all());

  // Sampling at x + (-1, 1, 0) reads the cube one voxel to the left and below.
  const auto moved = warp_prob(p, DisplacementField<double>::constant(g, Vec3<double>(-1, 1, 0)));
  for (Index z = 0; z < 8; ++z)
    for (Index y = 0; y < 7; ++y)
      for (Index x = 1; x < 8; ++x) CHECK(moved(g.index(x, y, z), 0) == p(g.index(x - 1, y + 1, z), 0));

  LabelVolume step(g, 1);
  for (Index i = 0; i < g.size(); ++i) step[i] = g.coords(i)[0] >= 4 ? 1 : 0;
  const auto half = warp_prob(one_hot(step), DisplacementField<double>::constant(g, Vec3<double>(0.5, 0, 0)));
  CHECK(half(g.index(3, 2, 2), 0) == 0.5);
  CHECK(half(g.index(4, 2, 2), 0) == 1.0);
  CHECK(half(g.index(2, 2, 2), 0) == 0.0);
}

TEST_CASE("warp_labels") {
  const GridGeometry g(10, 8, 8);
  LabelVolume cube(g, 2);
  for (Index z = 2; z < 6; ++z)
    for (Index y = 2; y < 6; ++y)
      for (Index x = 2; x < 6; ++x) cube(x, y, z) = x < 4 ? 1 : 2;
  CHECK(warp_labels(cube, DisplacementField<double>(g)) == cube);

  // f = (-2, 0, 0) reads from x - 2, so the cube moves +2 along x.
  const LabelVolume moved = warp_labels(cube, DisplacementField<double>::constant(g, Vec3<double>(-2, 0, 0)));
  for (Index z = 0; z < 8; ++z)
    for (Index y = 0; y < 8; ++y)
      for (Index x = 2; x < 10; ++x) CHECK(moved(x, y, z) == cube(x - 2, y, z));
}

TEST_CASE("warp_labels matches a per-voxel oracle under random fields") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> disp(-1.5, 1.5);
  std::uniform_int_distribution<int> label(0, 3);
  const GridGeometry g(6, 5, 4);
  for (int trial = 0; trial < 20; ++trial) {
    LabelVolume s(g, 3);
    for (Index i = 0; i < g.size(); ++i) s[i] = Label(label(rng));
    DisplacementField<double> f(g);
    for (Index i = 0; i < f.data().size(); ++i) f.data()[i] = disp(rng);
    const LabelVolume out = warp_labels(s, f);
    const auto hot = one_hot(s);
    for (Index i = 0; i < g.size(); ++i) {
      const Vec3<double> p = g.coords(i).cast<double>().matrix() + f.at(i);
      double probs[3];
      double sum = 0.0;
      for (int k = 0; k < 3; ++k) {
        ScalarVolume<double> channel(g, hot.channel(k).eval());
        probs[k] = std::min(std::max(trilinear_oracle(channel, p), 0.0), 1.0);
        sum += probs[k];
      }
      int best = 0;
      for (int k = 1; k < 3; ++k)
        if (probs[k] > probs[best]) best = k;
      const int expect = probs[best] > 1.0 - sum ? best + 1 : 0;
      // Ties decided by rounding are not meaningful; skip near-ties.
      bool near_tie = std::abs(probs[best] - (1.0 - sum)) < 1e-9;
      for (int k = 0; k < 3; ++k) near_tie = near_tie || (k != best && std::abs(probs[k] - probs[best]) < 1e-9);
      if (!near_tie) CHECK(int(out[i]) == expect);
      CHECK(int(out[i]) <= 3);
    }
  }
}
