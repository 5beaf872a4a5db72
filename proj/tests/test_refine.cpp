#include "doctest.h"

#include <random>

#include "masr/phantom.hpp"
#include "masr/refine.hpp"
#include "support.hpp"

using namespace masr;
using namespace masr::testing;

TEST_CASE("adam_step by hand") {
  const GridGeometry g(2, 2, 2);
  RefineConfig cfg;
  AdamState<double> state(g);
  DisplacementField<double> f(g);
  adam_step(state, f, DisplacementField<double>(g), cfg);
  CHECK(state.t == 1);
  CHECK(f.data().abs().maxCoeff() == 0.0);
  CHECK(state.m.data().abs().maxCoeff() == 0.0);
  CHECK(state.v.data().abs().maxCoeff() == 0.0);

  AdamState<double> s2(g);
  DisplacementField<double> f2(g);
  const auto grad = DisplacementField<double>::constant(g, Vec3<double>(4, 4, 4));
  adam_step(s2, f2, grad, cfg);
  // t = 1: m = 0.4, v = 0.016, m_hat = 4, v_hat = 16.
  const double step1 = 0.01 * 4.0 / (4.0 + 1e-8);
  CHECK(f2.data()[0] == doctest::Approx(-step1).epsilon(1e-15));
  adam_step(s2, f2, grad, cfg);
  // t = 2: m = 0.76, v = 0.031984, m_hat = 0.76/0.19 = 4, v_hat = 0.031984/0.001999 = 16.
  const double m_hat = 0.76 / (1 - 0.81);
  const double v_hat = (0.999 * 0.016 + 0.001 * 16.0) / (1 - 0.999 * 0.999);
  CHECK(f2.data()[5] == doctest::Approx(-step1 - 0.01 * m_hat / (std::sqrt(v_hat) + 1e-8)).epsilon(1e-14));
  CHECK(s2.t == 2);
  CHECK((s2.v.data() >= 0.0).all());
}

TEST_CASE("refine_registration on an aligned pair stays put") {
  std::mt19937_64 rng(3);
  const GridGeometry g(8, 8, 8);
  const auto t = random_image(rng, g);
  const auto s = one_hot<double>(random_box_labels(rng, g, 2, 3));
  RefineConfig cfg;
  cfg.max_iters = 20;
  const auto r = refine_registration(t, t, s, s, DisplacementField<double>(g), cfg);
  CHECK(r.field.max_norm() < 1e-3);
  CHECK(r.report.best().total < 1e-8);
  CHECK(r.report.history.size() == std::size_t(r.report.iterations_run) + 1);
}

TEST_CASE("lr = 0 never moves the field") {
  std::mt19937_64 rng(4);
  const GridGeometry g(6, 6, 6);
  RefineConfig cfg;
  cfg.lr = 0.0;
  cfg.max_iters = 5;
  cfg.stop_window = 100;
  const auto f0 = kink_free_field(rng, g);
  const auto r = refine_registration(random_image(rng, g), random_image(rng, g), random_prob(rng, g, 1),
                                     random_prob(rng, g, 1), f0, cfg);
  CHECK((r.field.data() == f0.data()).all());
  CHECK(r.report.iterations_run == 5);
  CHECK(r.report.stop_reason == StopReason::max_iters);
}

TEST_CASE("early stop fires once the running best stalls") {
  std::mt19937_64 rng(5);
  const GridGeometry g(6, 6, 6);
  RefineConfig cfg;
  cfg.lr = 0.0;
  cfg.stop_window = 3;
  const auto r = refine_registration(random_image(rng, g), random_image(rng, g), random_prob(rng, g, 1),
                                     random_prob(rng, g, 1), DisplacementField<double>(g), cfg);
  CHECK(r.report.stop_reason == StopReason::converged);
  CHECK(r.report.iterations_run == 3);
}

TEST_CASE("refinement improves a phantom pair and returns the best iterate") {
  PhantomConfig pc;
  pc.dims = Dims(24, 24, 24);
  pc.num_atlases = 1;
  pc.deform_smoothness = 3.0;
  const PhantomSet set = generate_phantom(pc);
  RefineConfig cfg;
  cfg.weights.gamma = 20.0;
  cfg.max_iters = 60;
  const PhantomAtlas& a = set.atlases[0];
  const DisplacementField<double> f0(set.target_img.geom());
  const auto r = refine_registration(a.img, set.target_img, a.pred, set.target_pred, f0, cfg);
  CHECK(r.report.best().total < r.report.initial().total);
  CHECK(true_residual_dice(set, r.field, 0) > true_residual_dice(set, f0, 0));
  for (const auto& v : r.report.history) CHECK(r.report.best().total <= v.total);
  const auto at_best = objective(a.img, set.target_img, a.pred, set.target_pred, r.field, cfg.weights);
  CHECK(at_best.total == r.report.best().total);

  SUBCASE("two-level pyramid never ends above the start") {
    cfg.pyramid_levels = 2;
    const auto p = refine_pyramid(a.img, set.target_img, a.pred, set.target_pred, f0, cfg);
    const auto start = objective(a.img, set.target_img, a.pred, set.target_pred, f0, cfg.weights);
    CHECK(p.report.best().total <= start.total);
    CHECK(p.level_reports.size() == 2);
  }
}

TEST_CASE("single-level pyramid equals refine_registration bit for bit") {
  std::mt19937_64 rng(6);
  const GridGeometry g(8, 7, 6);
  const auto a = random_image(rng, g), t = random_image(rng, g);
  const auto s = random_prob(rng, g, 2), u = random_prob(rng, g, 2);
  RefineConfig cfg;
  cfg.max_iters = 8;
  const auto f0 = kink_free_field(rng, g);
  const auto r1 = refine_registration(a, t, s, u, f0, cfg);
  const auto r2 = refine_pyramid(a, t, s, u, f0, cfg);
  CHECK((r1.field.data() == r2.field.data()).all());
  CHECK(r1.report.best_iteration == r2.report.best_iteration);
}

TEST_CASE("pyramid resampling rules") {
  const GridGeometry coarse(4, 4, 4);
  const GridGeometry fine(8, 8, 8);
  const auto up = upsample_field(DisplacementField<double>::constant(coarse, Vec3<double>(1, 0, 0)), fine);
  CHECK((up.component(0) == 2.0).all());
  CHECK((up.component(1) == 0.0).all());

  const GridGeometry odd(5, 4, 3, 0.5);
  const auto down = downsample(ScalarVolume<double>(odd, 3.0));
  CHECK(down.geom().dims()[0] == 3);
  CHECK(down.geom().dims()[2] == 2);
  CHECK(down.geom().spacing()[0] == 1.0);
  CHECK((down.data() == 3.0).all());
}

TEST_CASE("refine config validation") {
  RefineConfig cfg;
  cfg.validate();
  cfg.max_iters = 0;
  CHECK_THROWS_AS(cfg.validate(), Error);
  cfg = RefineConfig{};
  cfg.beta1 = 1.0;
  CHECK_THROWS_AS(cfg.validate(), Error);
  cfg = RefineConfig{};
  CHECK_THROWS_AS(refine_registration(ScalarVolume<double>(GridGeometry(4, 4, 4)), ScalarVolume<double>(GridGeometry(4, 4, 4)),
                                      ProbVolume<double>(GridGeometry(4, 4, 4), 1), ProbVolume<double>(GridGeometry(4, 4, 4), 1),
                                      DisplacementField<double>(GridGeometry(5, 4, 4)), cfg),
                  Error);
}
