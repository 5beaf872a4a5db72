#include "masr/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "masr/metrics.hpp"
#include "masr/warp.hpp"

namespace masr {

void PhantomConfig::validate() const {
  const bool ok = (dims >= 8).all() && spacing_mm > 0.0 && std::isfinite(spacing_mm) && num_atlases >= 1 &&
                  (num_structures == 1 || num_structures == 2) && deform_magnitude >= 0.0 &&
                  std::isfinite(deform_magnitude) && deform_smoothness > 0.0 && noise_sigma >= 0.0 &&
                  std::isfinite(noise_sigma) && seg_perturb_radius >= 0;
  if (!ok) throw Error(Errc::config_invalid, "phantom config out of range");
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t stream_seed(std::uint64_t seed, std::uint64_t stream) { return splitmix64(seed ^ splitmix64(stream)); }

namespace {

class NormalSource {
 public:
  explicit NormalSource(std::uint64_t seed) : engine_(seed) {}

  double operator()() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

 private:
  // Open interval (0, 1) so the logarithm stays finite.
  double uniform() { return (double(engine_() >> 11) + 0.5) * 0x1.0p-53; }

  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

VoxelArray<double> gaussian_smooth(const GridGeometry& geom, const VoxelArray<double>& in, double sigma) {
  const int radius = int(std::ceil(3.0 * sigma));
  std::vector<double> kernel(2 * radius + 1);
  double norm = 0.0;
  for (int d = -radius; d <= radius; ++d) norm += kernel[d + radius] = std::exp(-0.5 * d * d / (sigma * sigma));
  for (double& k : kernel) k /= norm;

  VoxelArray<double> cur = in;
  VoxelArray<double> next(in.size());
  for (int axis = 0; axis < 3; ++axis) {
    const Index stride = geom.strides()[axis];
    const Index len = geom.dims()[axis];
    for (Index i = 0; i < cur.size(); ++i) {
      const Index pos = geom.coords(i)[axis];
      const Index line = i - pos * stride;
      double acc = 0.0;
      for (int d = -radius; d <= radius; ++d)
        acc += kernel[d + radius] * cur[line + std::clamp<Index>(pos + d, 0, len - 1) * stride];
      next[i] = acc;
    }
    std::swap(cur, next);
  }
  return cur;
}

// Grows label 1 by `radius` face-steps into label-2 voxels.
void dilate_bone(LabelVolume& s, int radius) {
  const GridGeometry& g = s.geom();
  const Dims n = g.dims();
  for (int step = 0; step < radius; ++step) {
    const LabelVolume before = s;
    for (Index i = 0; i < g.size(); ++i) {
      if (before[i] != 2) continue;
      const Dims c = g.coords(i);
      for (int a = 0; a < 3; ++a) {
        const Index s_a = g.strides()[a];
        if ((c[a] > 0 && before[i - s_a] == 1) || (c[a] < n[a] - 1 && before[i + s_a] == 1)) {
          s[i] = 1;
          break;
        }
      }
    }
  }
}

ScalarVolume<double> add_noise(ScalarVolume<double> v, double sigma, std::uint64_t seed) {
  if (sigma > 0.0) {
    NormalSource normal(seed);
    for (Index i = 0; i < v.data().size(); ++i) v[i] += sigma * normal();
  }
  return v;
}

}  // namespace

LabelVolume phantom_base_labels(const GridGeometry& geom, int num_structures) {
  const Eigen::Array3d dims = geom.dims().cast<double>();
  const Eigen::Array3d centre = (dims - 1.0) / 2.0;
  const Eigen::Array3d inner = dims * Eigen::Array3d(0.25, 0.20, 0.17);
  // At least 2.5 voxels thick, so no trilinear cell touches bone and background at once.
  const double thickness = std::max(2.5, 0.05 * dims.minCoeff());
  const Eigen::Array3d outer = inner + thickness;
  LabelVolume out(geom, num_structures);
  for (Index i = 0; i < geom.size(); ++i) {
    const Eigen::Array3d p = geom.coords(i).cast<double>() - centre;
    if ((p / inner).square().sum() <= 1.0) out[i] = 1;
    else if (num_structures >= 2 && (p / outer).square().sum() <= 1.0) out[i] = 2;
  }
  return out;
}

ScalarVolume<double> phantom_base_intensity(const LabelVolume& labels) {
  static constexpr double kLevels[3] = {0.1, 0.8, 0.5};
  ScalarVolume<double> out(labels.geom());
  for (Index i = 0; i < labels.geom().size(); ++i) out[i] = kLevels[labels[i]];
  return out;
}

DisplacementField<double> random_smooth_field(const GridGeometry& geom, double magnitude, double sigma,
                                              std::uint64_t seed) {
  DisplacementField<double> f(geom);
  if (magnitude == 0.0) return f;
  // Noise lives on a grid padded by the kernel radius and is cropped after
  // smoothing, so the field has the same statistics at the edges as inside.
  const Index pad = Index(std::ceil(3.0 * sigma));
  const GridGeometry padded(geom.dims() + 2 * pad, geom.spacing());
  NormalSource normal(seed);
  for (int c = 0; c < 3; ++c) {
    VoxelArray<double> noise(padded.size());
    for (Index i = 0; i < noise.size(); ++i) noise[i] = normal();
    const VoxelArray<double> smooth = gaussian_smooth(padded, noise, sigma);
    auto out = f.component(c);
    for (Index i = 0; i < geom.size(); ++i) {
      const Dims p = geom.coords(i) + pad;
      out[i] = smooth[padded.index(p[0], p[1], p[2])];
    }
  }
  const double peak = f.max_norm();
  if (peak > 0.0) f.data() *= magnitude / peak;
  return f;
}

LabelVolume surrogate_labels(const ScalarVolume<double>& raw, int num_structures, const SurrogateRule& rule) {
  LabelVolume out(raw.geom(), num_structures);
  for (Index i = 0; i < raw.geom().size(); ++i) {
    const double v = raw[i];
    if (v >= rule.bone_at_least) out[i] = 1;
    else if (num_structures >= 2 && v > rule.cartilage_above) out[i] = 2;
  }
  if (num_structures >= 2) dilate_bone(out, rule.perturb_radius);
  return out;
}

PhantomSet generate_phantom(const PhantomConfig& cfg) {
  cfg.validate();
  const GridGeometry geom(cfg.dims, Spacing::Constant(cfg.spacing_mm));
  const LabelVolume base_labels = phantom_base_labels(geom, cfg.num_structures);
  const ScalarVolume<double> base_img = phantom_base_intensity(base_labels);

  SurrogateRule rule;
  if (cfg.num_structures == 1) rule.bone_at_least = 0.45;
  rule.perturb_radius = cfg.seg_perturb_radius;

  const ScalarVolume<double> target_raw = add_noise(base_img, cfg.noise_sigma, stream_seed(cfg.seed, 0));
  PhantomSet set{cfg,
                 rule,
                 normalize_intensity(target_raw),
                 base_labels,
                 one_hot<double>(surrogate_labels(target_raw, cfg.num_structures, rule)),
                 {}};

  for (int a = 0; a < cfg.num_atlases; ++a) {
    DisplacementField<double> field = random_smooth_field(geom, cfg.deform_magnitude, cfg.deform_smoothness,
                                                          stream_seed(cfg.seed, 2 * std::uint64_t(a) + 1));
    const ScalarVolume<double> raw =
        add_noise(warp_scalar(base_img, field), cfg.noise_sigma, stream_seed(cfg.seed, 2 * std::uint64_t(a) + 2));
    set.atlases.push_back({normalize_intensity(raw), warp_labels(base_labels, field), std::move(field),
                           one_hot<double>(surrogate_labels(raw, cfg.num_structures, rule))});
  }
  return set;
}

double true_residual_dice(const PhantomSet& set, const DisplacementField<double>& f, int atlas_index) {
  if (atlas_index < 0 || atlas_index >= int(set.atlases.size()))
    throw Error(Errc::index_out_of_range, "true_residual_dice: atlas index out of range");
  const LabelVolume warped = warp_labels(set.atlases[atlas_index].labels, f);
  const int k_count = set.target_labels.num_structures();
  double sum = 0.0;
  for (int l = 1; l <= k_count; ++l) sum += volume_dice(warped, set.target_labels, l);
  return sum / k_count;
}

}  // namespace masr
