#include "doctest.h"

#include <algorithm>
#include <random>

#include "masr/metrics.hpp"
#include "support.hpp"

using namespace masr;
using namespace masr::testing;

namespace {

LabelVolume slab(const GridGeometry& g, Index x) {
  LabelVolume s(g, 1);
  for (Index z = 0; z < g.nz(); ++z)
    for (Index y = 0; y < g.ny(); ++y) s(x, y, z) = 1;
  return s;
}

}  // namespace

TEST_CASE("volume_dice examples") {
  const GridGeometry g(8, 4, 4);
  LabelVolume a(g, 1), b(g, 1), c(g, 1);
  for (Index x = 0; x < 8; ++x) {
    a(x, 0, 0) = 1;
    if (x >= 4) b(x, 0, 0) = b(x, 1, 0) = 1;
    c(x, 3, 3) = 1;
  }
  CHECK(volume_dice(a, a, 1) == 1.0);
  CHECK(volume_dice(a, c, 1) == 0.0);
  CHECK(volume_dice(a, b, 1) == 0.5);
  CHECK(volume_dice(LabelVolume(g, 1), LabelVolume(g, 1), 1) == 1.0);
  CHECK(volume_dice(a, LabelVolume(g, 1), 1) == 0.0);
}

TEST_CASE("extract_surface examples") {
  const GridGeometry g(7, 7, 7, 0.5);
  LabelVolume cube(g, 2);
  for (Index z = 2; z < 5; ++z)
    for (Index y = 2; y < 5; ++y)
      for (Index x = 2; x < 5; ++x) cube(x, y, z) = 1;
  const auto s = extract_surface(cube, 1);
  CHECK(s.size() == 26);
  CHECK(std::none_of(s.points.begin(), s.points.end(),
                     [](const Eigen::Vector3d& p) { return p == Eigen::Vector3d(1.5, 1.5, 1.5); }));
  LabelVolume one(g, 1);
  one(3, 4, 5) = 1;
  const auto single = extract_surface(one, 1);
  REQUIRE(single.size() == 1);
  CHECK(single.points[0] == Eigen::Vector3d(1.5, 2.0, 2.5));
  CHECK(extract_surface(cube, 2).empty());
}

TEST_CASE("slab distances") {
  const GridGeometry g(8, 5, 5, 0.7);
  const auto a = slab(g, 2);
  CHECK(avg_surface_distance(a, a, 1) == 0.0);
  CHECK(surface_dice(a, a, 1) == 1.0);
  CHECK(md95(a, a, 1) == 0.0);

  const auto two_apart = slab(g, 4);
  CHECK(avg_surface_distance(a, two_apart, 1) == doctest::Approx(1.4).epsilon(1e-15));
  CHECK(surface_dice(a, two_apart, 1, 0.7) == 0.0);
  CHECK(md95(a, two_apart, 1) == doctest::Approx(1.4).epsilon(1e-15));

  const auto one_apart = slab(g, 3);
  CHECK(surface_dice(a, one_apart, 1, 0.7) == 1.0);

  try {
    avg_surface_distance(a, LabelVolume(g, 1), 1);
    FAIL("expected EmptySurface");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::empty_surface);
  }
}

TEST_CASE("nearest-rank percentile") {
  CHECK(percentile95_nearest_rank({2.0, 2.0}, {2.0}) == 2.0);
  std::vector<double> ab;
  for (int i = 1; i <= 100; ++i) ab.push_back(double(i));
  CHECK(percentile95_nearest_rank(ab, {}) == 95.0);
  CHECK(percentile95_nearest_rank({1.0, 2.0, 3.0}, {}) == 3.0);
  CHECK(percentile95_nearest_rank(std::vector<double>(19, 1.0), {5.0}) == 1.0);
  CHECK(percentile95_nearest_rank(std::vector<double>(18, 1.0), {5.0}) == 5.0);
}

TEST_CASE("k-d tree matches brute force exactly") {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 20; ++trial) {
    const GridGeometry g(4 + trial % 13, 5 + trial % 7, 3 + trial % 11, 0.7);
    const auto a = random_box_labels(rng, g, 2, 3);
    const auto b = random_box_labels(rng, g, 2, 3);
    for (int label = 1; label <= 2; ++label) {
      const auto sa = extract_surface(a, label);
      const auto sb = extract_surface(b, label);
      CHECK(sa.points == brute_surface(a, label));
      if (sa.empty() || sb.empty()) continue;
      CHECK(directed_distances(sa, sb) == brute_directed(sa.points, sb.points));
      CHECK(directed_distances(sb, sa) == brute_directed(sb.points, sa.points));
      CHECK(std::abs(avg_surface_distance(a, b, label) - avg_surface_distance(b, a, label)) < 1e-12);
      CHECK(std::abs(surface_dice(a, b, label) - surface_dice(b, a, label)) < 1e-12);
      CHECK(md95(a, b, label) == md95(b, a, label));
    }
  }
}

TEST_CASE("evaluate") {
  std::mt19937_64 rng(9);
  const GridGeometry g(10, 10, 10, 0.7);
  const auto truth = random_box_labels(rng, g, 2, 4);
  const MetricReport same = evaluate(truth, truth);
  for (const auto& m : same.labels) {
    if ((truth.data() == m.label).any()) {
      CHECK(m.vd == 1.0);
      CHECK(*m.sd == 1.0);
      CHECK(*m.asd == 0.0);
      CHECK(*m.md95 == 0.0);
    }
  }
  const MetricReport empty = evaluate(LabelVolume(g, 2), truth);
  for (const auto& m : empty.labels) {
    if ((truth.data() == m.label).any()) CHECK(m.vd == 0.0);
    CHECK_FALSE(m.asd);
  }
  CHECK(empty.groups.size() == 2);
  CHECK(empty.groups[0].name == "bone");
  CHECK_FALSE(empty.groups[0].asd);

  const auto other = random_box_labels(rng, g, 2, 4);
  const std::string text = format_report(evaluate(other, truth));
  CHECK(text.find("label.1.vd = ") != std::string::npos);
  CHECK(text.find("group.cartilage.md95_mm = ") != std::string::npos);
  CHECK(text.find("mean_vd = ") != std::string::npos);
}
