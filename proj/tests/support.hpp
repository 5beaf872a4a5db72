#pragma once

// Reference implementations used as test oracles. They are written directly
// from the definitions, favour clarity over speed, and share no code with the
// library beyond the container types.

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <vector>

#include "masr/volume.hpp"

namespace masr::testing {

// ---- gradients --------------------------------------------------------------

/// Central finite differences of `fn` over every entry of the field.
template <class Fn>
DisplacementField<double> fd_gradient(const DisplacementField<double>& f, Fn&& fn, double h) {
  DisplacementField<double> g(f.geom());
  DisplacementField<double> probe = f;
  for (Index j = 0; j < f.data().size(); ++j) {
    const double keep = probe.data()[j];
    probe.data()[j] = keep + h;
    const double up = fn(probe);
    probe.data()[j] = keep - h;
    const double down = fn(probe);
    probe.data()[j] = keep;
    g.data()[j] = (up - down) / (2.0 * h);
  }
  return g;
}

/// Largest |a - b| / max(|a|, |b|) over entries where either magnitude exceeds floor.
inline double max_relative_error(const DisplacementField<double>& a, const DisplacementField<double>& b,
                                 double floor = 1e-8) {
  double worst = 0.0;
  for (Index j = 0; j < a.data().size(); ++j) {
    const double x = a.data()[j], y = b.data()[j];
    const double scale = std::max(std::abs(x), std::abs(y));
    if (scale > floor) worst = std::max(worst, std::abs(x - y) / scale);
  }
  return worst;
}

/// Bending energy straight from the definition: build each 3x3 Hessian, zero
/// the entries whose stencil leaves the grid, sum squared Frobenius norms.
inline double bending_energy_oracle(const DisplacementField<double>& f) {
  const GridGeometry& g = f.geom();
  const Dims n = g.dims();
  double total = 0.0;
  for (int c = 0; c < 3; ++c) {
    auto u = [&](Index x, Index y, Index z) { return f.component(c)[g.index(x, y, z)]; };
    for (Index z = 0; z < n[2]; ++z)
      for (Index y = 0; y < n[1]; ++y)
        for (Index x = 0; x < n[0]; ++x) {
          const Index p[3] = {x, y, z};
          double hess[3][3] = {};
          for (int a = 0; a < 3; ++a) {
            for (int b = 0; b < 3; ++b) {
              if (p[a] < 1 || p[a] > n[a] - 2 || p[b] < 1 || p[b] > n[b] - 2) continue;
              auto at = [&](int da, int db) {
                Index q[3] = {x, y, z};
                q[a] += da;
                q[b] += db;
                return u(q[0], q[1], q[2]);
              };
              if (a == b) {
                Index q1[3] = {x, y, z}, q2[3] = {x, y, z};
                q1[a] += 1;
                q2[a] -= 1;
                hess[a][b] = u(q1[0], q1[1], q1[2]) - 2.0 * u(x, y, z) + u(q2[0], q2[1], q2[2]);
              } else {
                hess[a][b] = (at(1, 1) - at(1, -1) - at(-1, 1) + at(-1, -1)) / 4.0;
              }
            }
          }
          for (auto& row : hess)
            for (double v : row) total += v * v;
        }
  }
  return total / double(g.size());
}

// ---- surface distances -----------------------------------------------------

/// O(n*m) nearest distances, with the same squared-distance expression as the library.
inline std::vector<double> brute_directed(const std::vector<Eigen::Vector3d>& from,
                                          const std::vector<Eigen::Vector3d>& to) {
  std::vector<double> out;
  out.reserve(from.size());
  for (const auto& p : from) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& q : to) {
      const double dx = p[0] - q[0], dy = p[1] - q[1], dz = p[2] - q[2];
      best = std::min(best, dx * dx + dy * dy + dz * dz);
    }
    out.push_back(std::sqrt(best));
  }
  return out;
}

/// Boundary voxels by direct neighbour inspection, positions in mm.
inline std::vector<Eigen::Vector3d> brute_surface(const LabelVolume& s, int label) {
  const GridGeometry& g = s.geom();
  const Dims n = g.dims();
  std::vector<Eigen::Vector3d> out;
  for (Index z = 0; z < n[2]; ++z)
    for (Index y = 0; y < n[1]; ++y)
      for (Index x = 0; x < n[0]; ++x) {
        if (s(x, y, z) != label) continue;
        bool edge = false;
        for (int a = 0; a < 3; ++a)
          for (int d = -1; d <= 1; d += 2) {
            Index q[3] = {x, y, z};
            q[a] += d;
            if (q[a] < 0 || q[a] >= n[a] || s(q[0], q[1], q[2]) != label) edge = true;
          }
        if (edge) out.emplace_back(x * g.spacing()[0], y * g.spacing()[1], z * g.spacing()[2]);
      }
  return out;
}

// ---- dense linear algebra -----------------------------------------------------

/// Gaussian elimination with partial pivoting; solves m * x = rhs.
inline std::vector<double> gauss_solve(std::vector<std::vector<double>> m, std::vector<double> rhs) {
  const std::size_t n = rhs.size();
  for (std::size_t col = 0; col < n; ++col) {
    std::size_t piv = col;
    for (std::size_t r = col + 1; r < n; ++r)
      if (std::abs(m[r][col]) > std::abs(m[piv][col])) piv = r;
    std::swap(m[col], m[piv]);
    std::swap(rhs[col], rhs[piv]);
    for (std::size_t r = col + 1; r < n; ++r) {
      const double factor = m[r][col] / m[col][col];
      for (std::size_t c = col; c < n; ++c) m[r][c] -= factor * m[col][c];
      rhs[r] -= factor * rhs[col];
    }
  }
  std::vector<double> x(n);
  for (std::size_t r = n; r-- > 0;) {
    double acc = rhs[r];
    for (std::size_t c = r + 1; c < n; ++c) acc -= m[r][c] * x[c];
    x[r] = acc / m[r][r];
  }
  return x;
}

/// JLF weights at one voxel: explicit patch loop, dense solve, clamp, normalize.
inline std::vector<double> jlf_voxel_oracle(const std::vector<ScalarVolume<double>>& atlases,
                                            const ScalarVolume<double>& target, Index voxel, int radius,
                                            double ridge) {
  const GridGeometry& g = target.geom();
  const Dims n = g.dims();
  const Dims c = g.coords(voxel);
  const std::size_t k = atlases.size();
  std::vector<std::vector<double>> m(k, std::vector<double>(k, 0.0));
  for (int dz = -radius; dz <= radius; ++dz)
    for (int dy = -radius; dy <= radius; ++dy)
      for (int dx = -radius; dx <= radius; ++dx) {
        const Index x = std::clamp<Index>(c[0] + dx, 0, n[0] - 1);
        const Index y = std::clamp<Index>(c[1] + dy, 0, n[1] - 1);
        const Index z = std::clamp<Index>(c[2] + dz, 0, n[2] - 1);
        for (std::size_t i = 0; i < k; ++i)
          for (std::size_t j = 0; j < k; ++j)
            m[i][j] += std::abs(atlases[i](x, y, z) - target(x, y, z)) * std::abs(atlases[j](x, y, z) - target(x, y, z));
      }
  for (std::size_t i = 0; i < k; ++i) m[i][i] += ridge;
  std::vector<double> w = gauss_solve(m, std::vector<double>(k, 1.0));
  double sum = 0.0;
  for (double& v : w) sum += v = std::max(v, 0.0);
  for (double& v : w) v /= sum;
  return w;
}

// ---- random instances -------------------------------------------------------

/// Labels built from a few random boxes so surfaces are non-trivial.
inline LabelVolume random_box_labels(std::mt19937_64& rng, const GridGeometry& g, int k, int boxes) {
  LabelVolume s(g, k);
  std::uniform_int_distribution<int> label(1, k);
  for (int b = 0; b < boxes; ++b) {
    Index lo[3], hi[3];
    for (int a = 0; a < 3; ++a) {
      std::uniform_int_distribution<Index> pos(0, g.dims()[a] - 1);
      lo[a] = pos(rng);
      hi[a] = pos(rng);
      if (lo[a] > hi[a]) std::swap(lo[a], hi[a]);
    }
    const Label l = Label(label(rng));
    for (Index z = lo[2]; z <= hi[2]; ++z)
      for (Index y = lo[1]; y <= hi[1]; ++y)
        for (Index x = lo[0]; x <= hi[0]; ++x) s(x, y, z) = l;
  }
  return s;
}

/// Field entries with magnitude in [0.05, 0.45] and random sign, so every
/// sample point stays off cell faces and off the clamp boundary under small
/// perturbations.
inline DisplacementField<double> kink_free_field(std::mt19937_64& rng, const GridGeometry& g) {
  std::uniform_real_distribution<double> mag(0.05, 0.45);
  std::bernoulli_distribution sign(0.5);
  DisplacementField<double> f(g);
  for (Index j = 0; j < f.data().size(); ++j) f.data()[j] = sign(rng) ? mag(rng) : -mag(rng);
  return f;
}

inline ScalarVolume<double> random_image(std::mt19937_64& rng, const GridGeometry& g) {
  std::uniform_real_distribution<double> v(0.0, 1.0);
  ScalarVolume<double> out(g);
  for (Index i = 0; i < g.size(); ++i) out[i] = v(rng);
  return out;
}

/// K channels, each in [0, 1/K], so sums never exceed 1.
inline ProbVolume<double> random_prob(std::mt19937_64& rng, const GridGeometry& g, int k) {
  std::uniform_real_distribution<double> v(0.0, 1.0 / k);
  ProbVolume<double> out(g, k);
  for (Index j = 0; j < out.data().size(); ++j) out.data()[j] = v(rng);
  return out;
}

}  // namespace masr::testing
