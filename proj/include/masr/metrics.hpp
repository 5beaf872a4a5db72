#pragma once

// Segmentation scores: volume Dice, average surface distance, surface Dice at
// a distance tolerance and the 95th percentile of the pooled symmetric surface
// distances. Surfaces are voxel centres (in mm) of label voxels that touch a
// different label, or the volume border, across a face.

#include <Eigen/Core>

#include <optional>
#include <string>
#include <vector>

#include "masr/volume.hpp"

namespace masr {

struct SurfacePointSet {
  std::vector<Eigen::Vector3d> points;

  bool empty() const { return points.empty(); }
  std::size_t size() const { return points.size(); }
};

/// Squared distance as used everywhere in this module, so that accelerated
/// and brute-force searches agree bit for bit.
inline double squared_distance(const Eigen::Vector3d& p, const Eigen::Vector3d& q) {
  const double dx = p.x() - q.x();
  const double dy = p.y() - q.y();
  const double dz = p.z() - q.z();
  return dx * dx + dy * dy + dz * dz;
}

/// Exact nearest-neighbour queries over a fixed point set.
class KdTree {
 public:
  explicit KdTree(std::vector<Eigen::Vector3d> points);

  /// Smallest squared_distance(query, p) over the stored points.
  double nearest_squared(const Eigen::Vector3d& query) const;

  std::size_t size() const { return points_.size(); }

 private:
  void build(std::size_t lo, std::size_t hi);
  void search(std::size_t lo, std::size_t hi, const Eigen::Vector3d& q, double& best) const;

  std::vector<Eigen::Vector3d> points_;
  std::vector<unsigned char> axis_;
};

double volume_dice(const LabelVolume& a, const LabelVolume& b, int label);

SurfacePointSet extract_surface(const LabelVolume& s, int label);

/// Distance (mm) from every point of `from` to its nearest point in `to`, in
/// the order of `from`.
std::vector<double> directed_distances(const SurfacePointSet& from, const SurfacePointSet& to);

double avg_surface_distance(const LabelVolume& a, const LabelVolume& b, int label);
double surface_dice(const LabelVolume& a, const LabelVolume& b, int label, double tol_mm = 0.7);
double md95(const LabelVolume& a, const LabelVolume& b, int label);

// Scalar summaries of two directed distance lists; exposed for callers that
// already hold the lists.
double mean_symmetric(const std::vector<double>& ab, const std::vector<double>& ba);
double fraction_within(const std::vector<double>& ab, const std::vector<double>& ba, double tol_mm);
double percentile95_nearest_rank(const std::vector<double>& ab, const std::vector<double>& ba);

struct LabelMetrics {
  int label = 0;
  double vd = 0.0;
  std::optional<double> asd;
  std::optional<double> sd;
  std::optional<double> md95;
};

struct LabelGroup {
  std::string name;
  std::vector<int> labels;
};

struct GroupMetrics {
  std::string name;
  std::optional<double> vd, asd, sd, md95;  // means over member labels with an entry
};

struct MetricReport {
  int num_structures = 0;
  std::vector<LabelMetrics> labels;  // one per label 1..K
  std::vector<GroupMetrics> groups;

  double mean_vd() const;
};

/// First half of the structures (rounded up) count as bone, the rest as cartilage.
std::vector<LabelGroup> default_label_groups(int num_structures);

MetricReport evaluate(const LabelVolume& pred, const LabelVolume& truth, double tol_mm = 0.7);
MetricReport evaluate(const LabelVolume& pred, const LabelVolume& truth, const std::vector<LabelGroup>& groups,
                      double tol_mm = 0.7);

/// `key = value` lines with fixed keys; values with 6 significant digits and
/// `absent` for undefined surface metrics.
std::string format_report(const MetricReport& report);

}  // namespace masr
