#pragma once

// Label fusion: plurality voting, weighted argmax voting, joint label fusion
// weights and per-voxel trust modulation of those weights.

#include <Eigen/Core>

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "masr/volume.hpp"

namespace masr {

/// Per-voxel, per-atlas weights, atlas-major: atlas i occupies block i.
class WeightVolume {
 public:
  WeightVolume(const GridGeometry& geom, int num_atlases)
      : geom_(geom), num_atlases_(num_atlases), data_(VoxelArray<double>::Zero(geom.size() * num_atlases)) {
    if (num_atlases < 1) throw Error(Errc::empty_atlas_set, "weight volume needs >= 1 atlas");
  }

  static WeightVolume uniform(const GridGeometry& geom, int num_atlases) {
    WeightVolume w(geom, num_atlases);
    w.data_.setConstant(1.0 / num_atlases);
    return w;
  }

  const GridGeometry& geom() const { return geom_; }
  int num_atlases() const { return num_atlases_; }
  const VoxelArray<double>& data() const { return data_; }
  VoxelArray<double>& data() { return data_; }

  double operator()(Index voxel, int atlas) const { return data_[atlas * geom_.size() + voxel]; }
  double& operator()(Index voxel, int atlas) { return data_[atlas * geom_.size() + voxel]; }

 private:
  GridGeometry geom_;
  int num_atlases_;
  VoxelArray<double> data_;
};

/// Per-voxel probability that an atlas's propagated label is correct. Produced
/// outside this library and read from "prob" volume files with one channel.
using TrustVolume = ProbVolume<double>;

struct JlfConfig {
  int patch_radius = 2;
  double ridge_eps = 0.1;

  void validate() const {
    if (patch_radius < 0 || !(ridge_eps > 0.0)) throw Error(Errc::config_invalid, "jlf config out of range");
  }
};

enum class TrustMode { multiply, gate };
enum class FusionMode { plurality, jlf };

/// Fallback counters. None of these conditions is an error.
struct FusionStats {
  std::size_t degenerate_voxels = 0;  // weighted_vote fell back to plurality
  std::size_t solve_failures = 0;     // jlf_weights fell back to uniform
  std::size_t trust_reverted = 0;     // apply_trust kept the pre-trust weights
};

LabelVolume plurality_vote(const std::vector<LabelVolume>& labels);

LabelVolume weighted_vote(const std::vector<LabelVolume>& labels, const WeightVolume& w,
                          FusionStats* stats = nullptr);

/// Weights from an n x n matrix that already includes the ridge term: solves
/// M w = 1, clamps negatives to zero and normalizes. Returns nullopt when the
/// solve is not usable (non-finite or all-zero result).
std::optional<Eigen::VectorXd> jlf_solve_weights(const Eigen::MatrixXd& m_with_ridge);

WeightVolume jlf_weights(const std::vector<ScalarVolume<double>>& warped_atlas_imgs,
                         const ScalarVolume<double>& target, const JlfConfig& cfg, FusionStats* stats = nullptr);

WeightVolume apply_trust(const WeightVolume& w, const std::vector<TrustVolume>& trust, double threshold,
                         TrustMode mode, FusionStats* stats = nullptr);

struct FuseConfig {
  FusionMode mode = FusionMode::jlf;
  JlfConfig jlf;
  TrustMode trust_mode = TrustMode::multiply;
  double trust_threshold = 0.5;
};

/// jlf_weights -> apply_trust (when trust is given) -> weighted_vote, or plain
/// plurality voting.
LabelVolume fuse(const std::vector<LabelVolume>& labels, const std::vector<ScalarVolume<double>>& imgs,
                 const ScalarVolume<double>& target, const std::vector<TrustVolume>* trust, const FuseConfig& cfg,
                 FusionStats* stats = nullptr);

FusionMode parse_fusion_mode(const std::string& s);
TrustMode parse_trust_mode(const std::string& s);
const char* to_string(FusionMode m);
const char* to_string(TrustMode m);

}  // namespace masr
