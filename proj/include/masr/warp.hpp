#pragma once

// Trilinear sampling with edge clamping, and warping by x -> x + f(x).

#include <algorithm>
#include <cmath>

#include "masr/volume.hpp"

namespace masr {

/// The 2x2x2 cell surrounding a continuous sample point, plus the fractional
/// position inside it. An axis whose coordinate was clamped is not live: the
/// sample does not move when that coordinate moves, so its derivative is zero.
template <class T>
struct TrilinearCell {
  Index base = 0;
  Index stride[3] = {1, 1, 1};
  T frac[3] = {0, 0, 0};
  bool live[3] = {true, true, true};

  template <class Ptr>
  T value(Ptr data) const {
    const Ptr p = data + base;
    const T tx = frac[0], ty = frac[1], tz = frac[2];
    const Index sx = stride[0], sy = stride[1], sz = stride[2];
    const T c00 = (T(1) - tx) * p[0] + tx * p[sx];
    const T c10 = (T(1) - tx) * p[sy] + tx * p[sx + sy];
    const T c01 = (T(1) - tx) * p[sz] + tx * p[sx + sz];
    const T c11 = (T(1) - tx) * p[sy + sz] + tx * p[sx + sy + sz];
    const T c0 = (T(1) - ty) * c00 + ty * c10;
    const T c1 = (T(1) - ty) * c01 + ty * c11;
    return (T(1) - tz) * c0 + tz * c1;
  }

  /// d(value)/d(sample point), zero along clamped axes.
  template <class Ptr>
  Vec3<T> gradient(Ptr data) const {
    const Ptr p = data + base;
    const T tx = frac[0], ty = frac[1], tz = frac[2];
    const Index sx = stride[0], sy = stride[1], sz = stride[2];
    const T v000 = p[0], v100 = p[sx], v010 = p[sy], v110 = p[sx + sy];
    const T v001 = p[sz], v101 = p[sx + sz], v011 = p[sy + sz], v111 = p[sx + sy + sz];
    Vec3<T> g = Vec3<T>::Zero();
    if (live[0]) {
      const T d00 = v100 - v000, d10 = v110 - v010, d01 = v101 - v001, d11 = v111 - v011;
      g[0] = (T(1) - tz) * ((T(1) - ty) * d00 + ty * d10) + tz * ((T(1) - ty) * d01 + ty * d11);
    }
    if (live[1]) {
      const T d00 = v010 - v000, d10 = v110 - v100, d01 = v011 - v001, d11 = v111 - v101;
      g[1] = (T(1) - tz) * ((T(1) - tx) * d00 + tx * d10) + tz * ((T(1) - tx) * d01 + tx * d11);
    }
    if (live[2]) {
      const T d00 = v001 - v000, d10 = v101 - v100, d01 = v011 - v010, d11 = v111 - v110;
      g[2] = (T(1) - ty) * ((T(1) - tx) * d00 + tx * d10) + ty * ((T(1) - tx) * d01 + tx * d11);
    }
    return g;
  }
};

template <class T>
TrilinearCell<T> locate_cell(const GridGeometry& geom, const Vec3<T>& point) {
  TrilinearCell<T> cell;
  const Dims strides = geom.strides();
  for (int a = 0; a < 3; ++a) {
    const T hi = T(geom.dims()[a] - 1);
    T c = point[a];
    if (c < T(0)) {
      c = T(0);
      cell.live[a] = false;
    } else if (c > hi) {
      c = hi;
      cell.live[a] = false;
    }
    // The last cell is [n-2, n-1]; a point on the top face sits at frac 1.
    const Index i0 = std::min<Index>(static_cast<Index>(std::floor(c)), geom.dims()[a] - 2);
    cell.frac[a] = c - T(i0);
    cell.base += i0 * strides[a];
    cell.stride[a] = strides[a];
  }
  return cell;
}

template <class T>
T trilinear_sample(const ScalarVolume<T>& v, const Vec3<T>& point) {
  return locate_cell(v.geom(), point).value(v.data().data());
}

/// Cell sampled by voxel i under the displacement f.
template <class T>
TrilinearCell<T> warped_cell(const DisplacementField<T>& f, Index i) {
  const Dims c = f.geom().coords(i);
  return locate_cell(f.geom(), Vec3<T>(c.template cast<T>().matrix() + f.at(i)));
}

template <class T>
ScalarVolume<T> warp_scalar(const ScalarVolume<T>& v, const DisplacementField<T>& f) {
  require_same_geometry(v.geom(), f.geom(), "warp_scalar: volume and field grids differ");
  typename ScalarVolume<T>::Data out(v.geom().size());
  const T* src = v.data().data();
  for (Index i = 0; i < out.size(); ++i) out[i] = warped_cell(f, i).value(src);
  return ScalarVolume<T>(v.geom(), std::move(out));
}

template <class T>
ProbVolume<T> warp_prob(const ProbVolume<T>& p, const DisplacementField<T>& f) {
  require_same_geometry(p.geom(), f.geom(), "warp_prob: volume and field grids differ");
  const Index n = p.geom().size();
  ProbVolume<T> out(p.geom(), p.channels());
  for (Index i = 0; i < n; ++i) {
    const TrilinearCell<T> cell = warped_cell(f, i);
    for (int k = 0; k < p.channels(); ++k) {
      const T value = cell.value(p.data().data() + k * n);
      out(i, k) = std::clamp(value, T(0), T(1));
    }
  }
  return out;
}

template <class T = double>
LabelVolume warp_labels(const LabelVolume& s, const DisplacementField<T>& f) {
  require_same_geometry(s.geom(), f.geom(), "warp_labels: volume and field grids differ");
  return argmax_labels(warp_prob(one_hot<T>(s), f));
}

}  // namespace masr
