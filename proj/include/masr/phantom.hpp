#pragma once

// Synthetic atlas/target sets with known deformations.
//
// The base scene is an ellipsoid "bone" (label 1, intensity 0.8) wrapped in a
// "cartilage" shell (label 2, intensity 0.5) on a 0.1 background. The target
// is the base scene; atlas i is the base scene warped by a random smooth field
// (Gaussian-smoothed white noise rescaled to deform_magnitude). Each volume
// then gets its own Gaussian noise and is normalized to [0, 1].
//
// Randomness comes from std::mt19937_64 (bit-exact across platforms by the
// standard) seeded per stream with splitmix64(seed ^ splitmix64(stream)).
// Stream 0 is the target noise, 2i+1 the field of atlas i and 2i+2 its noise.
// Normal deviates use Box-Muller on 53-bit uniforms, never std::normal_distribution.

#include <cstdint>
#include <vector>

#include "masr/volume.hpp"

namespace masr {

struct PhantomConfig {
  Dims dims = Dims(64, 64, 64);
  double spacing_mm = 0.7;
  int num_atlases = 5;
  int num_structures = 2;        // 1: bone only; 2: bone and cartilage shell
  double deform_magnitude = 3.0;  // max displacement norm, voxels
  double deform_smoothness = 6.0; // Gaussian sigma, voxels
  double noise_sigma = 0.02;
  int seg_perturb_radius = 1;     // surrogate bone dilation, voxels; 0 disables
  std::uint64_t seed = 0;

  void validate() const;
};

/// The thresholds the surrogate predictor applies to every raw (pre-normalization)
/// intensity volume. Shared by construction, which is what makes the
/// predictions consistent across atlases and target.
struct SurrogateRule {
  double cartilage_above = 0.3;  // strictly greater
  double bone_at_least = 0.65;
  int perturb_radius = 0;
};

struct PhantomAtlas {
  ScalarVolume<double> img;
  LabelVolume labels;
  DisplacementField<double> true_field;  // atlas = base o (x + true_field)
  ProbVolume<double> pred;
};

struct PhantomSet {
  PhantomConfig config;
  SurrogateRule rule;
  ScalarVolume<double> target_img;
  LabelVolume target_labels;
  ProbVolume<double> target_pred;
  std::vector<PhantomAtlas> atlases;
};

PhantomSet generate_phantom(const PhantomConfig& cfg);

/// Base scene labels and noise-free intensities for a grid.
LabelVolume phantom_base_labels(const GridGeometry& geom, int num_structures);
ScalarVolume<double> phantom_base_intensity(const LabelVolume& labels);

/// Random smooth field for one RNG stream.
DisplacementField<double> random_smooth_field(const GridGeometry& geom, double magnitude, double sigma,
                                              std::uint64_t stream_seed);

LabelVolume surrogate_labels(const ScalarVolume<double>& raw, int num_structures, const SurrogateRule& rule);

/// Mean over labels 1..K of the volume Dice between the atlas labels warped
/// by f and the target labels.
double true_residual_dice(const PhantomSet& set, const DisplacementField<double>& f, int atlas_index);

std::uint64_t splitmix64(std::uint64_t x);
std::uint64_t stream_seed(std::uint64_t seed, std::uint64_t stream);

}  // namespace masr
