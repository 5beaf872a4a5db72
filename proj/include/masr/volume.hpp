#pragma once

// Dense 3D grids. Every container stores voxels x-fastest, then y, then z.
// Multi-channel containers stack whole channel blocks (channel slowest), which
// is also the on-disk order of the VVF1 format.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>

#include "masr/error.hpp"

namespace masr {

using Index = Eigen::Index;
using Dims = Eigen::Array<Index, 3, 1>;
using Spacing = Eigen::Array3d;

template <class T>
using Vec3 = Eigen::Matrix<T, 3, 1>;

template <class T>
using VoxelArray = Eigen::Array<T, Eigen::Dynamic, 1>;

class GridGeometry {
 public:
  GridGeometry(const Dims& dims, const Spacing& spacing) : dims_(dims), spacing_(spacing) {
    for (int a = 0; a < 3; ++a) {
      if (dims_[a] < 2)
        throw Error(Errc::invalid_argument, "grid dims must be >= 2 on every axis");
      if (!std::isfinite(spacing_[a]) || spacing_[a] <= 0.0)
        throw Error(Errc::invalid_argument, "grid spacing must be finite and > 0");
    }
  }

  GridGeometry(Index nx, Index ny, Index nz, double spacing = 1.0)
      : GridGeometry(Dims(nx, ny, nz), Spacing::Constant(spacing)) {}

  const Dims& dims() const { return dims_; }
  const Spacing& spacing() const { return spacing_; }
  Index nx() const { return dims_[0]; }
  Index ny() const { return dims_[1]; }
  Index nz() const { return dims_[2]; }
  Index size() const { return dims_.prod(); }

  Index index(Index x, Index y, Index z) const { return x + dims_[0] * (y + dims_[1] * z); }

  Dims coords(Index i) const {
    const Index x = i % dims_[0];
    const Index yz = i / dims_[0];
    return Dims(x, yz % dims_[1], yz / dims_[1]);
  }

  /// Distance between neighbouring voxels along each axis, in linear index units.
  Dims strides() const { return Dims(1, dims_[0], dims_[0] * dims_[1]); }

  bool operator==(const GridGeometry& other) const {
    return (dims_ == other.dims_).all() && (spacing_ == other.spacing_).all();
  }
  bool operator!=(const GridGeometry& other) const { return !(*this == other); }

 private:
  Dims dims_;
  Spacing spacing_;
};

inline void require_same_geometry(const GridGeometry& a, const GridGeometry& b, const char* where) {
  if (a != b) throw Error(Errc::geometry_mismatch, where);
}

template <class T>
class ScalarVolume {
 public:
  using Scalar = T;
  using Data = VoxelArray<T>;

  explicit ScalarVolume(const GridGeometry& geom, T fill = T(0))
      : geom_(geom), data_(Data::Constant(geom.size(), fill)) {}

  ScalarVolume(const GridGeometry& geom, Data data) : geom_(geom), data_(std::move(data)) {
    if (data_.size() != geom_.size())
      throw Error(Errc::invalid_argument, "scalar volume payload does not match grid size");
    if (!data_.allFinite()) throw Error(Errc::invalid_argument, "scalar volume has non-finite values");
  }

  const GridGeometry& geom() const { return geom_; }
  const Data& data() const { return data_; }
  Data& data() { return data_; }

  T operator[](Index i) const { return data_[i]; }
  T& operator[](Index i) { return data_[i]; }
  T operator()(Index x, Index y, Index z) const { return data_[geom_.index(x, y, z)]; }
  T& operator()(Index x, Index y, Index z) { return data_[geom_.index(x, y, z)]; }

  template <class U>
  ScalarVolume<U> cast() const {
    return ScalarVolume<U>(geom_, data_.template cast<U>().eval());
  }

 private:
  GridGeometry geom_;
  Data data_;
};

/// K foreground channels; background is the residual 1 - sum_k p_k.
template <class T>
class ProbVolume {
 public:
  using Scalar = T;
  using Data = VoxelArray<T>;

  ProbVolume(const GridGeometry& geom, int channels)
      : geom_(geom), channels_(channels), data_(Data::Zero(geom.size() * channels)) {
    if (channels < 1) throw Error(Errc::invalid_argument, "probability volume needs >= 1 channel");
  }

  ProbVolume(const GridGeometry& geom, int channels, Data data)
      : geom_(geom), channels_(channels), data_(std::move(data)) {
    if (channels < 1) throw Error(Errc::invalid_argument, "probability volume needs >= 1 channel");
    if (data_.size() != geom_.size() * channels)
      throw Error(Errc::invalid_argument, "probability payload does not match grid size");
    if (!data_.allFinite() || (data_ < T(0)).any() || (data_ > T(1)).any())
      throw Error(Errc::invalid_argument, "probabilities must lie in [0, 1]");
    const Index n = geom_.size();
    for (Index i = 0; i < n; ++i) {
      T sum = 0;
      for (int k = 0; k < channels_; ++k) sum += data_[k * n + i];
      if (sum > T(1) + T(1e-6))
        throw Error(Errc::invalid_argument, "per-voxel probability sum exceeds 1");
    }
  }

  const GridGeometry& geom() const { return geom_; }
  int channels() const { return channels_; }
  const Data& data() const { return data_; }
  Data& data() { return data_; }

  /// Channel k (0-based, i.e. label k + 1) as a contiguous block.
  auto channel(int k) const { return data_.segment(k * geom_.size(), geom_.size()); }
  auto channel(int k) { return data_.segment(k * geom_.size(), geom_.size()); }

  T operator()(Index i, int k) const { return data_[k * geom_.size() + i]; }
  T& operator()(Index i, int k) { return data_[k * geom_.size() + i]; }

  template <class U>
  ProbVolume<U> cast() const {
    return ProbVolume<U>(geom_, channels_, data_.template cast<U>().eval());
  }

 private:
  GridGeometry geom_;
  int channels_;
  Data data_;
};

/// Per-voxel offsets in voxel units; the warp samples the source at x + f(x).
template <class T>
class DisplacementField {
 public:
  using Scalar = T;
  using Data = VoxelArray<T>;

  explicit DisplacementField(const GridGeometry& geom) : geom_(geom), data_(Data::Zero(3 * geom.size())) {}

  DisplacementField(const GridGeometry& geom, Data data) : geom_(geom), data_(std::move(data)) {
    if (data_.size() != 3 * geom_.size())
      throw Error(Errc::invalid_argument, "displacement payload does not match grid size");
    if (!data_.allFinite()) throw Error(Errc::invalid_argument, "displacement has non-finite values");
  }

  static DisplacementField constant(const GridGeometry& geom, const Vec3<T>& offset) {
    DisplacementField f(geom);
    for (int c = 0; c < 3; ++c) f.component(c).setConstant(offset[c]);
    return f;
  }

  const GridGeometry& geom() const { return geom_; }
  const Data& data() const { return data_; }
  Data& data() { return data_; }

  auto component(int c) const { return data_.segment(c * geom_.size(), geom_.size()); }
  auto component(int c) { return data_.segment(c * geom_.size(), geom_.size()); }

  Vec3<T> at(Index i) const {
    const Index n = geom_.size();
    return Vec3<T>(data_[i], data_[n + i], data_[2 * n + i]);
  }

  T max_norm() const {
    T best = 0;
    for (Index i = 0; i < geom_.size(); ++i) best = std::max(best, at(i).norm());
    return best;
  }

  template <class U>
  DisplacementField<U> cast() const {
    return DisplacementField<U>(geom_, data_.template cast<U>().eval());
  }

 private:
  GridGeometry geom_;
  Data data_;
};

using Label = std::uint8_t;

/// Hard labels in {0, ..., K}; 0 is background.
class LabelVolume {
 public:
  using Data = VoxelArray<Label>;

  LabelVolume(const GridGeometry& geom, int num_structures)
      : geom_(geom), num_structures_(num_structures), data_(Data::Zero(geom.size())) {
    check_k();
  }

  LabelVolume(const GridGeometry& geom, int num_structures, Data data)
      : geom_(geom), num_structures_(num_structures), data_(std::move(data)) {
    check_k();
    if (data_.size() != geom_.size())
      throw Error(Errc::invalid_argument, "label payload does not match grid size");
    if (data_.size() > 0 && int(data_.maxCoeff()) > num_structures_)
      throw Error(Errc::invalid_argument, "label exceeds num_structures");
  }

  const GridGeometry& geom() const { return geom_; }
  int num_structures() const { return num_structures_; }
  const Data& data() const { return data_; }
  Data& data() { return data_; }

  Label operator[](Index i) const { return data_[i]; }
  Label& operator[](Index i) { return data_[i]; }
  Label operator()(Index x, Index y, Index z) const { return data_[geom_.index(x, y, z)]; }
  Label& operator()(Index x, Index y, Index z) { return data_[geom_.index(x, y, z)]; }

  bool operator==(const LabelVolume& other) const {
    return geom_ == other.geom_ && num_structures_ == other.num_structures_ && (data_ == other.data_).all();
  }

 private:
  void check_k() const {
    if (num_structures_ < 1 || num_structures_ > 255)
      throw Error(Errc::invalid_argument, "num_structures must be in 1..255");
  }

  GridGeometry geom_;
  int num_structures_;
  Data data_;
};

template <class T>
ScalarVolume<T> normalize_intensity(const ScalarVolume<T>& v) {
  const T lo = v.data().minCoeff();
  const T hi = v.data().maxCoeff();
  if (!(hi > lo)) throw Error(Errc::constant_volume, "cannot normalize a constant volume");
  // (hi - lo) / (hi - lo) is exactly 1, so the output spans [0, 1] exactly and
  // a second pass divides by 1.
  typename ScalarVolume<T>::Data out = (v.data() - lo) / (hi - lo);
  return ScalarVolume<T>(v.geom(), std::move(out));
}

template <class T = double>
ProbVolume<T> one_hot(const LabelVolume& s) {
  const int k_count = s.num_structures();
  ProbVolume<T> p(s.geom(), k_count);
  for (Index i = 0; i < s.geom().size(); ++i) {
    const int l = s[i];
    if (l > 0) p(i, l - 1) = T(1);
  }
  return p;
}

/// Hard decision: the strongest channel wins if it beats the background
/// residual; ties go to the lowest channel.
template <class T>
LabelVolume argmax_labels(const ProbVolume<T>& p) {
  const int k_count = p.channels();
  LabelVolume out(p.geom(), k_count);
  for (Index i = 0; i < p.geom().size(); ++i) {
    T sum = 0;
    T best = p(i, 0);
    int best_k = 0;
    for (int k = 0; k < k_count; ++k) {
      const T value = p(i, k);
      sum += value;
      if (value > best) {
        best = value;
        best_k = k;
      }
    }
    out[i] = (best > T(1) - sum) ? Label(best_k + 1) : Label(0);
  }
  return out;
}

}  // namespace masr
