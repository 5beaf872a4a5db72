#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "masr/objective.hpp"
#include "masr/warp.hpp"

namespace masr {

struct RefineConfig {
  ObjectiveWeights weights;
  double lr = 0.01;  // voxels per step
  int max_iters = 200;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps_adam = 1e-8;
  double stop_rel_tol = 1e-5;
  int stop_window = 10;
  int pyramid_levels = 1;
  std::uint64_t seed = 0;  // reserved for stochastic options; none are used yet

  void validate() const {
    weights.validate();
    const bool ok = std::isfinite(lr) && lr >= 0.0 && max_iters >= 1 && beta1 > 0.0 && beta1 < 1.0 &&
                    beta2 > 0.0 && beta2 < 1.0 && eps_adam > 0.0 && std::isfinite(stop_rel_tol) &&
                    stop_rel_tol >= 0.0 && stop_window >= 1 && pyramid_levels >= 1;
    if (!ok) throw Error(Errc::config_invalid, "refine config out of range");
  }
};

template <class T>
struct AdamState {
  explicit AdamState(const GridGeometry& geom) : m(geom), v(geom) {}

  DisplacementField<T> m;
  DisplacementField<T> v;
  long t = 0;
};

/// One bias-corrected ADAM update of f, in place.
template <class T>
void adam_step(AdamState<T>& state, DisplacementField<T>& f, const DisplacementField<T>& g, const RefineConfig& cfg) {
  require_same_geometry(state.m.geom(), f.geom(), "adam_step: state grid differs from field");
  require_same_geometry(g.geom(), f.geom(), "adam_step: gradient grid differs from field");
  const T b1 = T(cfg.beta1), b2 = T(cfg.beta2);
  state.t += 1;
  state.m.data() = b1 * state.m.data() + (T(1) - b1) * g.data();
  state.v.data() = b2 * state.v.data() + (T(1) - b2) * g.data().square();
  const T c1 = T(1) - std::pow(b1, T(state.t));
  const T c2 = T(1) - std::pow(b2, T(state.t));
  f.data() -= T(cfg.lr) * (state.m.data() / c1) / ((state.v.data() / c2).sqrt() + T(cfg.eps_adam));
}

enum class StopReason { max_iters, converged };

inline const char* to_string(StopReason r) { return r == StopReason::converged ? "converged" : "max_iters"; }

template <class T>
struct ObjectiveReport {
  std::vector<ObjectiveValue<T>> history;  // history[0] is the initial field
  int iterations_run = 0;
  int best_iteration = 0;
  StopReason stop_reason = StopReason::max_iters;

  const ObjectiveValue<T>& initial() const { return history.front(); }
  const ObjectiveValue<T>& best() const { return history[best_iteration]; }
};

template <class T>
struct RefineResult {
  DisplacementField<T> field;
  ObjectiveReport<T> report;
  std::vector<ObjectiveReport<T>> level_reports;  // coarse to fine; empty for single scale
};

/// ADAM on the full objective starting from f0. Returns the lowest-objective
/// iterate seen, which is never worse than f0.
template <class T>
RefineResult<T> refine_registration(const ScalarVolume<T>& atlas_img, const ScalarVolume<T>& target_img,
                                    const ProbVolume<T>& s_src, const ProbVolume<T>& s_tar,
                                    const DisplacementField<T>& f0, const RefineConfig& cfg) {
  cfg.validate();
  require_same_geometry(atlas_img.geom(), f0.geom(), "refine: atlas grid differs from initial field");

  DisplacementField<T> f = f0;
  AdamState<T> state(f.geom());
  RefineResult<T> result{f0, {}, {}};
  ObjectiveReport<T>& report = result.report;

  auto eval = evaluate_objective(atlas_img, target_img, s_src, s_tar, f, cfg.weights);
  report.history.push_back(eval.value);
  std::vector<T> running_best{eval.value.total};

  for (int it = 1; it <= cfg.max_iters; ++it) {
    adam_step(state, f, eval.gradient, cfg);
    eval = evaluate_objective(atlas_img, target_img, s_src, s_tar, f, cfg.weights);
    report.history.push_back(eval.value);
    report.iterations_run = it;
    if (eval.value.total < running_best.back()) {
      running_best.push_back(eval.value.total);
      report.best_iteration = it;
      result.field = f;
    } else {
      running_best.push_back(running_best.back());
    }
    if (it >= cfg.stop_window) {
      const T before = running_best[it - cfg.stop_window];
      if (before - running_best[it] <= T(cfg.stop_rel_tol) * std::abs(before)) {
        report.stop_reason = StopReason::converged;
        break;
      }
    }
  }
  return result;
}

namespace detail {

inline GridGeometry coarsen(const GridGeometry& fine) {
  const Dims dims = (fine.dims() + 1) / 2;
  return GridGeometry(dims, fine.spacing() * 2.0);
}

// Block-average every channel of a channel-major array by 2 per axis.
template <class T>
VoxelArray<T> downsample_channels(const GridGeometry& fine, const GridGeometry& coarse, const VoxelArray<T>& data,
                                  int channels) {
  const Index nf = fine.size(), nc = coarse.size();
  VoxelArray<T> sum = VoxelArray<T>::Zero(nc * channels);
  VoxelArray<T> count = VoxelArray<T>::Zero(nc);
  for (Index i = 0; i < nf; ++i) {
    const Dims c = fine.coords(i) / 2;
    const Index j = coarse.index(c[0], c[1], c[2]);
    count[j] += T(1);
    for (int k = 0; k < channels; ++k) sum[k * nc + j] += data[k * nf + i];
  }
  for (int k = 0; k < channels; ++k) sum.segment(k * nc, nc) /= count;
  return sum;
}

template <class T>
DisplacementField<T> downsample_field(const DisplacementField<T>& f, const GridGeometry& coarse) {
  VoxelArray<T> data = downsample_channels(f.geom(), coarse, f.data(), 3) / T(2);
  return DisplacementField<T>(coarse, std::move(data));
}

}  // namespace detail

/// Fine-grid field from a coarse one: values doubled, positions mapped to the
/// coarse voxel centres and trilinearly interpolated.
template <class T>
DisplacementField<T> upsample_field(const DisplacementField<T>& coarse, const GridGeometry& fine) {
  DisplacementField<T> out(fine);
  const Index nc = coarse.geom().size();
  for (Index i = 0; i < fine.size(); ++i) {
    const Dims c = fine.coords(i);
    const Vec3<T> p = (c.template cast<T>().matrix() - Vec3<T>::Constant(T(0.5))) / T(2);
    const TrilinearCell<T> cell = locate_cell(coarse.geom(), p);
    for (int a = 0; a < 3; ++a) out.component(a)[i] = T(2) * cell.value(coarse.data().data() + a * nc);
  }
  return out;
}

template <class T>
ScalarVolume<T> downsample(const ScalarVolume<T>& v) {
  const GridGeometry coarse = detail::coarsen(v.geom());
  return ScalarVolume<T>(coarse, detail::downsample_channels(v.geom(), coarse, v.data(), 1));
}

template <class T>
ProbVolume<T> downsample(const ProbVolume<T>& p) {
  const GridGeometry coarse = detail::coarsen(p.geom());
  VoxelArray<T> data = detail::downsample_channels(p.geom(), coarse, p.data(), p.channels());
  return ProbVolume<T>(coarse, p.channels(), data.max(T(0)).min(T(1)).eval());
}

/// Coarse-to-fine refinement. Each finer level starts from f0 plus the
/// upsampled correction found so far; one level is plain refine_registration.
template <class T>
RefineResult<T> refine_pyramid(const ScalarVolume<T>& atlas_img, const ScalarVolume<T>& target_img,
                               const ProbVolume<T>& s_src, const ProbVolume<T>& s_tar,
                               const DisplacementField<T>& f0, const RefineConfig& cfg) {
  cfg.validate();
  if (cfg.pyramid_levels == 1) return refine_registration(atlas_img, target_img, s_src, s_tar, f0, cfg);

  struct Level {
    ScalarVolume<T> atlas, target;
    ProbVolume<T> src, tar;
    DisplacementField<T> base;  // f0 at this resolution
  };
  std::vector<Level> levels{{atlas_img, target_img, s_src, s_tar, f0}};
  for (int l = 1; l < cfg.pyramid_levels; ++l) {
    const Level& fine = levels.back();
    const GridGeometry coarse = detail::coarsen(fine.atlas.geom());
    levels.push_back({downsample(fine.atlas), downsample(fine.target), downsample(fine.src), downsample(fine.tar),
                      detail::downsample_field(fine.base, coarse)});
  }

  RefineConfig level_cfg = cfg;
  level_cfg.pyramid_levels = 1;
  std::vector<ObjectiveReport<T>> reports;
  DisplacementField<T> correction(levels.back().base.geom());
  for (int l = cfg.pyramid_levels - 1;; --l) {
    const Level& lv = levels[l];
    DisplacementField<T> start = lv.base;
    if (l != cfg.pyramid_levels - 1) start.data() += upsample_field(correction, lv.base.geom()).data();
    if (l == 0) {
      // Never start the finest level from something worse than f0.
      const T at_f0 = objective(atlas_img, target_img, s_src, s_tar, f0, cfg.weights).total;
      const T at_start = objective(atlas_img, target_img, s_src, s_tar, start, cfg.weights).total;
      if (!(at_start <= at_f0)) start = f0;
    }
    RefineResult<T> r = refine_registration(lv.atlas, lv.target, lv.src, lv.tar, start, level_cfg);
    reports.push_back(r.report);
    if (l == 0) {
      r.level_reports = std::move(reports);
      return r;
    }
    correction = r.field;
    correction.data() -= lv.base.data();
  }
}

}  // namespace masr
