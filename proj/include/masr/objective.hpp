#pragma once

// Refinement objective:
//
//   total(f) = (1 - NCC(atlas o phi, target))
//            + alpha * soft_dice_loss(s_src o phi, s_tar)
//            + gamma * bending_energy(f),          phi(x) = x + f(x)
//
// with an analytic gradient with respect to every component of f. Derivatives
// are taken in voxel units; spacing never enters the objective.

#include <cmath>
#include <vector>

#include "masr/volume.hpp"
#include "masr/warp.hpp"

namespace masr {

struct ObjectiveWeights {
  double alpha = 3.0;
  double gamma = 20000.0;

  void validate() const {
    if (!std::isfinite(alpha) || alpha < 0.0 || !std::isfinite(gamma) || gamma < 0.0)
      throw Error(Errc::config_invalid, "objective weights must be finite and >= 0");
  }
};

/// The voxel-unit gamma that matches `gamma` applied to a displacement
/// measured on a [-1, 1] grid along the longest axis. Bending energy scales
/// with the square of the length unit, so gamma is multiplied by (2/(n-1))^2.
inline double normalized_grid_gamma(double gamma, const GridGeometry& geom) {
  const double h = 2.0 / double(geom.dims().maxCoeff() - 1);
  return gamma * h * h;
}

template <class T>
struct ObjectiveValue {
  T total = 0;
  T img_term = 0;
  T seg_term = 0;
  T reg_term = 0;
};

inline constexpr double kVarianceFloor = 1e-12;
inline constexpr double kDiceSmoothing = 1e-8;

/// Global Pearson correlation of two volumes.
template <class T>
T ncc(const ScalarVolume<T>& a, const ScalarVolume<T>& b) {
  require_same_geometry(a.geom(), b.geom(), "ncc: grids differ");
  const Index n = a.geom().size();
  const VoxelArray<T> da = a.data() - a.data().mean();
  const VoxelArray<T> db = b.data() - b.data().mean();
  const T ssa = da.square().sum();
  const T ssb = db.square().sum();
  if (ssa / T(n) < T(kVarianceFloor) || ssb / T(n) < T(kVarianceFloor))
    throw Error(Errc::degenerate_variance, "ncc: volume is numerically constant");
  return (da * db).sum() / (std::sqrt(ssa) * std::sqrt(ssb));
}

template <class T>
T img_loss(const ScalarVolume<T>& atlas, const DisplacementField<T>& f, const ScalarVolume<T>& target) {
  require_same_geometry(atlas.geom(), target.geom(), "img_loss: atlas and target grids differ");
  return T(1) - ncc(warp_scalar(atlas, f), target);
}

template <class T>
T soft_dice_loss(const ProbVolume<T>& s_ref, const ProbVolume<T>& s_tar) {
  require_same_geometry(s_ref.geom(), s_tar.geom(), "soft_dice_loss: grids differ");
  if (s_ref.channels() != s_tar.channels())
    throw Error(Errc::channel_mismatch, "soft_dice_loss: channel counts differ");
  const int k_count = s_ref.channels();
  T acc = 0;
  for (int k = 0; k < k_count; ++k) {
    const T inter = (s_ref.channel(k) * s_tar.channel(k)).sum();
    const T denom = s_ref.channel(k).sum() + s_tar.channel(k).sum() + T(kDiceSmoothing);
    acc += T(2) * inter / denom;
  }
  return T(1) - acc / T(k_count);
}

namespace detail {

inline void require_bending_grid(const GridGeometry& geom) {
  if ((geom.dims() < 3).any())
    throw Error(Errc::grid_too_small, "bending energy needs >= 3 voxels per axis");
}

// Sum over voxels of weight * h^2 for one Hessian entry of one component,
// where h is the stencil {offsets, coef} applied at every voxel whose stencil
// stays on the grid along `axes`. With g set, also adds grad_factor * weight *
// h * d(h)/du into g.
template <class T, int Taps>
T hessian_entry_pass(const GridGeometry& geom, const T* u, const bool (&axes)[3], const Index (&offsets)[Taps],
                     const T (&coef)[Taps], T weight, T grad_factor, T* g) {
  const Dims n = geom.dims();
  Index lo[3], hi[3];
  for (int a = 0; a < 3; ++a) {
    lo[a] = axes[a] ? 1 : 0;
    hi[a] = axes[a] ? n[a] - 1 : n[a];
  }
  T sum = 0;
  for (Index z = lo[2]; z < hi[2]; ++z) {
    for (Index y = lo[1]; y < hi[1]; ++y) {
      const Index row = geom.index(0, y, z);
      for (Index x = lo[0]; x < hi[0]; ++x) {
        const Index i = row + x;
        T h = 0;
        for (int t = 0; t < Taps; ++t) h += coef[t] * u[i + offsets[t]];
        sum += h * h;
        if (g) {
          const T w = grad_factor * weight * h;
          for (int t = 0; t < Taps; ++t) g[i + offsets[t]] += w * coef[t];
        }
      }
    }
  }
  return weight * sum;
}

// Diagonal Hessian entries are second central differences; mixed entries are
// nested first central differences and appear twice in the Frobenius norm.
// Entries whose stencil leaves the grid are zero. Returns the energy and, with
// grad set, adds scale * d(energy)/df into it.
template <class T>
T bending_pass(const DisplacementField<T>& f, T scale, DisplacementField<T>* grad) {
  require_bending_grid(f.geom());
  const GridGeometry& geom = f.geom();
  const Dims s = geom.strides();
  const T grad_factor = T(2) * scale / T(geom.size());
  T sum = 0;
  for (int c = 0; c < 3; ++c) {
    const T* u = f.component(c).data();
    T* g = grad ? grad->component(c).data() : nullptr;
    for (int a = 0; a < 3; ++a) {
      bool axes[3] = {false, false, false};
      axes[a] = true;
      const Index offsets[3] = {s[a], 0, -s[a]};
      const T coef[3] = {T(1), T(-2), T(1)};
      sum += hessian_entry_pass(geom, u, axes, offsets, coef, T(1), grad_factor, g);
    }
    for (int a = 0; a < 3; ++a) {
      for (int b = a + 1; b < 3; ++b) {
        bool axes[3] = {false, false, false};
        axes[a] = axes[b] = true;
        const Index offsets[4] = {s[a] + s[b], s[a] - s[b], -s[a] + s[b], -s[a] - s[b]};
        const T coef[4] = {T(0.25), T(-0.25), T(-0.25), T(0.25)};
        sum += hessian_entry_pass(geom, u, axes, offsets, coef, T(2), grad_factor, g);
      }
    }
  }
  return sum / T(geom.size());
}

}  // namespace detail

/// Mean over voxels of the squared Frobenius norm of each component's Hessian.
template <class T>
T bending_energy(const DisplacementField<T>& f) {
  return detail::bending_pass<T>(f, T(0), nullptr);
}

/// Adds scale * d(bending_energy)/df into grad.
template <class T>
void accumulate_bending_gradient(const DisplacementField<T>& f, T scale, DisplacementField<T>& grad) {
  require_same_geometry(grad.geom(), f.geom(), "bending gradient: grids differ");
  detail::bending_pass(f, scale, &grad);
}

template <class T>
DisplacementField<T> bending_energy_gradient(const DisplacementField<T>& f) {
  DisplacementField<T> grad(f.geom());
  accumulate_bending_gradient(f, T(1), grad);
  return grad;
}

template <class T>
struct ObjectiveEvaluation {
  ObjectiveValue<T> value;
  DisplacementField<T> gradient;
};

namespace detail {

// Image and segmentation terms share the warp: every voxel samples the same
// cell in the atlas image and in each source probability channel.
template <class T>
struct SimilarityInputs {
  const ScalarVolume<T>* atlas = nullptr;
  const ScalarVolume<T>* target = nullptr;
  const ProbVolume<T>* s_src = nullptr;
  const ProbVolume<T>* s_tar = nullptr;
};

template <class T>
struct SimilarityTerms {
  T img = 0;
  T seg = 0;
};

template <class T>
SimilarityTerms<T> similarity_terms(const SimilarityInputs<T>& in, const DisplacementField<T>& f, T img_weight,
                                    T seg_weight, DisplacementField<T>* grad) {
  const GridGeometry& geom = f.geom();
  const Index n = geom.size();
  const bool has_img = in.atlas != nullptr;
  const bool has_seg = in.s_src != nullptr;
  if (has_img) {
    require_same_geometry(in.atlas->geom(), geom, "objective: atlas image grid differs from field");
    require_same_geometry(in.target->geom(), geom, "objective: target image grid differs from field");
  }
  int k_count = 0;
  if (has_seg) {
    require_same_geometry(in.s_src->geom(), geom, "objective: source segmentation grid differs from field");
    require_same_geometry(in.s_tar->geom(), geom, "objective: target segmentation grid differs from field");
    if (in.s_src->channels() != in.s_tar->channels())
      throw Error(Errc::channel_mismatch, "objective: segmentation channel counts differ");
    k_count = in.s_src->channels();
  }

  // One pass samples every warped value and, when a gradient is wanted, the
  // spatial gradient of each sampled volume; the loss derivatives need global
  // sums, so they are applied afterwards.
  const int sampled = (has_img ? 1 : 0) + k_count;
  VoxelArray<T> warped;
  VoxelArray<T> warped_seg;
  if (has_img) warped.resize(n);
  if (has_seg) warped_seg.resize(n * k_count);
  std::vector<Vec3<T>> sample_grad(grad ? std::size_t(n) * sampled : 0);
  const T* atlas = has_img ? in.atlas->data().data() : nullptr;
  const T* src = has_seg ? in.s_src->data().data() : nullptr;
  const T* fx = f.component(0).data();
  const T* fy = f.component(1).data();
  const T* fz = f.component(2).data();
  const Dims dims = geom.dims();
  for (Index z = 0; z < dims[2]; ++z) {
    for (Index y = 0; y < dims[1]; ++y) {
      const Index row = geom.index(0, y, z);
      for (Index x = 0; x < dims[0]; ++x) {
        const Index i = row + x;
        const TrilinearCell<T> cell = locate_cell(geom, Vec3<T>(T(x) + fx[i], T(y) + fy[i], T(z) + fz[i]));
        Vec3<T>* cached = grad ? &sample_grad[std::size_t(i) * sampled] : nullptr;
        if (has_img) {
          warped[i] = cell.value(atlas);
          if (cached) *cached++ = cell.gradient(atlas);
        }
        for (int k = 0; k < k_count; ++k) {
          warped_seg[k * n + i] = cell.value(src + k * n);
          if (cached) *cached++ = cell.gradient(src + k * n);
        }
      }
    }
  }

  SimilarityTerms<T> terms;

  // d(img_loss)/d(warped) = -(db / (|da||db|) - ncc * da / |da|^2).
  VoxelArray<T> d_img;
  if (has_img) {
    const VoxelArray<T> da = warped - warped.mean();
    const VoxelArray<T> db = in.target->data() - in.target->data().mean();
    const T ssa = da.square().sum();
    const T ssb = db.square().sum();
    if (ssa / T(n) < T(kVarianceFloor) || ssb / T(n) < T(kVarianceFloor))
      throw Error(Errc::degenerate_variance, "objective: image is numerically constant");
    const T norm_a = std::sqrt(ssa);
    const T norm_b = std::sqrt(ssb);
    const T corr = (da * db).sum() / (norm_a * norm_b);
    terms.img = T(1) - corr;
    if (grad) d_img = -(db / (norm_a * norm_b) - corr * da / ssa);
  }

  // d(seg_loss)/d(r_k(x)) = -(2/K) * (t_k(x) / D_k - I_k / D_k^2).
  std::vector<T> dice_a(k_count), dice_b(k_count);
  if (has_seg) {
    T acc = 0;
    for (int k = 0; k < k_count; ++k) {
      auto r = warped_seg.segment(k * n, n);
      // Interpolated probabilities can overshoot [0, 1] by rounding only.
      r = r.max(T(0)).min(T(1));
      const auto t = in.s_tar->channel(k);
      const T inter = (r * t).sum();
      const T denom = r.sum() + t.sum() + T(kDiceSmoothing);
      acc += T(2) * inter / denom;
      dice_a[k] = -T(2) / (T(k_count) * denom);
      dice_b[k] = T(2) * inter / (T(k_count) * denom * denom);
    }
    terms.seg = T(1) - acc / T(k_count);
  }

  if (grad) {
    require_same_geometry(grad->geom(), geom, "objective: gradient grid differs from field");
    T* gx = grad->component(0).data();
    T* gy = grad->component(1).data();
    T* gz = grad->component(2).data();
    const T* tar = has_seg ? in.s_tar->data().data() : nullptr;
    const bool use_img = has_img && img_weight != T(0);
    const bool use_seg = has_seg && seg_weight != T(0);
    if (!use_img && !use_seg) return terms;
    for (Index i = 0; i < n; ++i) {
      const Vec3<T>* cached = &sample_grad[std::size_t(i) * sampled];
      Vec3<T> g = Vec3<T>::Zero();
      if (has_img) {
        if (use_img) g += (img_weight * d_img[i]) * *cached;
        ++cached;
      }
      if (use_seg) {
        for (int k = 0; k < k_count; ++k) {
          const T d_r = dice_a[k] * tar[k * n + i] + dice_b[k];
          g += (seg_weight * d_r) * cached[k];
        }
      }
      gx[i] += g[0];
      gy[i] += g[1];
      gz[i] += g[2];
    }
  }
  return terms;
}

}  // namespace detail

template <class T>
DisplacementField<T> img_loss_gradient(const ScalarVolume<T>& atlas, const DisplacementField<T>& f,
                                       const ScalarVolume<T>& target) {
  DisplacementField<T> grad(f.geom());
  detail::SimilarityInputs<T> in;
  in.atlas = &atlas;
  in.target = &target;
  detail::similarity_terms(in, f, T(1), T(0), &grad);
  return grad;
}

/// Gradient of soft_dice_loss(warp_prob(s_src, f), s_tar) with respect to f.
template <class T>
DisplacementField<T> seg_loss_gradient(const ProbVolume<T>& s_src, const DisplacementField<T>& f,
                                       const ProbVolume<T>& s_tar) {
  DisplacementField<T> grad(f.geom());
  detail::SimilarityInputs<T> in;
  in.s_src = &s_src;
  in.s_tar = &s_tar;
  detail::similarity_terms(in, f, T(0), T(1), &grad);
  return grad;
}

template <class T>
ObjectiveEvaluation<T> evaluate_objective(const ScalarVolume<T>& atlas_img, const ScalarVolume<T>& target_img,
                                          const ProbVolume<T>& s_src, const ProbVolume<T>& s_tar,
                                          const DisplacementField<T>& f, const ObjectiveWeights& w,
                                          bool with_gradient = true) {
  w.validate();
  detail::SimilarityInputs<T> in{&atlas_img, &target_img, &s_src, &s_tar};
  ObjectiveEvaluation<T> out{{}, DisplacementField<T>(f.geom())};
  const T alpha = T(w.alpha);
  const T gamma = T(w.gamma);
  const auto terms = detail::similarity_terms(in, f, T(1), alpha, with_gradient ? &out.gradient : nullptr);
  out.value.img_term = terms.img;
  out.value.seg_term = terms.seg;
  out.value.reg_term = detail::bending_pass(f, gamma, with_gradient && gamma != T(0) ? &out.gradient : nullptr);
  out.value.total = out.value.img_term + alpha * out.value.seg_term + gamma * out.value.reg_term;
  return out;
}

template <class T>
ObjectiveValue<T> objective(const ScalarVolume<T>& atlas_img, const ScalarVolume<T>& target_img,
                            const ProbVolume<T>& s_src, const ProbVolume<T>& s_tar, const DisplacementField<T>& f,
                            const ObjectiveWeights& w) {
  return evaluate_objective(atlas_img, target_img, s_src, s_tar, f, w, false).value;
}

template <class T>
DisplacementField<T> objective_gradient(const ScalarVolume<T>& atlas_img, const ScalarVolume<T>& target_img,
                                        const ProbVolume<T>& s_src, const ProbVolume<T>& s_tar,
                                        const DisplacementField<T>& f, const ObjectiveWeights& w) {
  return evaluate_objective(atlas_img, target_img, s_src, s_tar, f, w, true).gradient;
}

}  // namespace masr
