#include "masr/fusion.hpp"

#include <Eigen/Cholesky>

#include <algorithm>
#include <cmath>

namespace masr {
namespace {

void check_atlas_labels(const std::vector<LabelVolume>& labels) {
  if (labels.empty()) throw Error(Errc::empty_atlas_set, "fusion needs at least one atlas");
  for (const LabelVolume& s : labels) {
    require_same_geometry(s.geom(), labels.front().geom(), "fusion: atlas label grids differ");
    if (s.num_structures() != labels.front().num_structures())
      throw Error(Errc::channel_mismatch, "fusion: atlas label sets differ");
  }
}

Label plurality_at(const std::vector<LabelVolume>& labels, Index i, std::vector<int>& counts) {
  std::fill(counts.begin(), counts.end(), 0);
  for (const LabelVolume& s : labels) ++counts[s[i]];
  // max_element returns the first maximum, i.e. the lowest label on ties.
  return Label(std::max_element(counts.begin(), counts.end()) - counts.begin());
}

// Sum of values over the (2r+1)-wide window along one axis, with indices
// clamped to the grid.
VoxelArray<double> box_sum_axis(const GridGeometry& geom, const VoxelArray<double>& in, int axis, int radius) {
  const Dims n = geom.dims();
  const Index stride = geom.strides()[axis];
  const Index len = n[axis];
  VoxelArray<double> out(in.size());
  for (Index i = 0; i < in.size(); ++i) {
    const Index pos = geom.coords(i)[axis];
    const Index line_start = i - pos * stride;
    double sum = 0.0;
    for (int d = -radius; d <= radius; ++d) {
      const Index q = std::clamp<Index>(pos + d, 0, len - 1);
      sum += in[line_start + q * stride];
    }
    out[i] = sum;
  }
  return out;
}

}  // namespace

LabelVolume plurality_vote(const std::vector<LabelVolume>& labels) {
  check_atlas_labels(labels);
  const LabelVolume& first = labels.front();
  LabelVolume out(first.geom(), first.num_structures());
  std::vector<int> counts(first.num_structures() + 1);
  for (Index i = 0; i < first.geom().size(); ++i) out[i] = plurality_at(labels, i, counts);
  return out;
}

LabelVolume weighted_vote(const std::vector<LabelVolume>& labels, const WeightVolume& w, FusionStats* stats) {
  check_atlas_labels(labels);
  const LabelVolume& first = labels.front();
  require_same_geometry(w.geom(), first.geom(), "weighted_vote: weight grid differs from labels");
  if (w.num_atlases() != int(labels.size()))
    throw Error(Errc::invalid_argument, "weighted_vote: weight count differs from atlas count");

  const int n = int(labels.size());
  LabelVolume out(first.geom(), first.num_structures());
  std::vector<double> score(first.num_structures() + 1);
  std::vector<int> counts(first.num_structures() + 1);
  for (Index i = 0; i < first.geom().size(); ++i) {
    std::fill(score.begin(), score.end(), 0.0);
    bool any = false;
    for (int a = 0; a < n; ++a) {
      const double wa = w(i, a);
      any = any || wa > 0.0;
      score[labels[a][i]] += wa;
    }
    if (!any) {
      out[i] = plurality_at(labels, i, counts);
      if (stats) ++stats->degenerate_voxels;
      continue;
    }
    out[i] = Label(std::max_element(score.begin(), score.end()) - score.begin());
  }
  return out;
}

std::optional<Eigen::VectorXd> jlf_solve_weights(const Eigen::MatrixXd& m_with_ridge) {
  const Eigen::Index n = m_with_ridge.rows();
  const Eigen::LDLT<Eigen::MatrixXd> ldlt(m_with_ridge);
  if (ldlt.info() != Eigen::Success) return std::nullopt;
  Eigen::VectorXd w = ldlt.solve(Eigen::VectorXd::Ones(n));
  if (!w.allFinite()) return std::nullopt;
  w = w.cwiseMax(0.0);
  const double sum = w.sum();
  if (!(sum > 0.0) || !std::isfinite(sum)) return std::nullopt;
  return w / sum;
}

WeightVolume jlf_weights(const std::vector<ScalarVolume<double>>& warped_atlas_imgs,
                         const ScalarVolume<double>& target, const JlfConfig& cfg, FusionStats* stats) {
  cfg.validate();
  if (warped_atlas_imgs.empty()) throw Error(Errc::empty_atlas_set, "jlf_weights needs at least one atlas");
  const GridGeometry& geom = target.geom();
  for (const auto& a : warped_atlas_imgs) require_same_geometry(a.geom(), geom, "jlf_weights: atlas grid differs");

  const int n = int(warped_atlas_imgs.size());
  const Index voxels = geom.size();
  std::vector<VoxelArray<double>> err;
  err.reserve(n);
  for (const auto& a : warped_atlas_imgs) err.push_back((a.data() - target.data()).abs());

  // Patch sums of every error product, via separable clamped box filters.
  std::vector<VoxelArray<double>> pair_sum(n * n);
  for (int i = 0; i < n; ++i) {
    for (int j = i; j < n; ++j) {
      VoxelArray<double> p = err[i] * err[j];
      for (int axis = 0; axis < 3; ++axis) p = box_sum_axis(geom, p, axis, cfg.patch_radius);
      pair_sum[i * n + j] = std::move(p);
    }
  }

  WeightVolume w(geom, n);
  Eigen::MatrixXd m(n, n);
  for (Index x = 0; x < voxels; ++x) {
    for (int i = 0; i < n; ++i) {
      for (int j = i; j < n; ++j) m(i, j) = m(j, i) = pair_sum[i * n + j][x];
      m(i, i) += cfg.ridge_eps;
    }
    const auto solved = jlf_solve_weights(m);
    for (int a = 0; a < n; ++a) w(x, a) = solved ? (*solved)[a] : 1.0 / n;
    if (!solved && stats) ++stats->solve_failures;
  }
  return w;
}

WeightVolume apply_trust(const WeightVolume& w, const std::vector<TrustVolume>& trust, double threshold,
                         TrustMode mode, FusionStats* stats) {
  if (int(trust.size()) != w.num_atlases())
    throw Error(Errc::invalid_argument, "apply_trust: one trust volume per atlas required");
  if (!(threshold >= 0.0 && threshold <= 1.0))
    throw Error(Errc::invalid_argument, "apply_trust: threshold must lie in [0, 1]");
  for (const TrustVolume& t : trust) {
    require_same_geometry(t.geom(), w.geom(), "apply_trust: trust grid differs from weights");
    if (t.channels() != 1) throw Error(Errc::channel_mismatch, "apply_trust: trust volumes have one channel");
  }

  const int n = w.num_atlases();
  WeightVolume out = w;
  std::vector<double> scaled(n);
  for (Index x = 0; x < w.geom().size(); ++x) {
    double sum = 0.0;
    for (int a = 0; a < n; ++a) {
      const double t = trust[a](x, 0);
      const double factor = mode == TrustMode::multiply ? t : (t >= threshold ? 1.0 : 0.0);
      scaled[a] = w(x, a) * factor;
      sum += scaled[a];
    }
    if (sum > 0.0) {
      for (int a = 0; a < n; ++a) out(x, a) = scaled[a] / sum;
    } else if (stats) {
      ++stats->trust_reverted;
    }
  }
  return out;
}

LabelVolume fuse(const std::vector<LabelVolume>& labels, const std::vector<ScalarVolume<double>>& imgs,
                 const ScalarVolume<double>& target, const std::vector<TrustVolume>* trust, const FuseConfig& cfg,
                 FusionStats* stats) {
  if (cfg.mode == FusionMode::plurality) return plurality_vote(labels);
  if (imgs.size() != labels.size())
    throw Error(Errc::invalid_argument, "fuse: one warped image per atlas label volume required");
  WeightVolume w = jlf_weights(imgs, target, cfg.jlf, stats);
  if (trust) w = apply_trust(w, *trust, cfg.trust_threshold, cfg.trust_mode, stats);
  return weighted_vote(labels, w, stats);
}

FusionMode parse_fusion_mode(const std::string& s) {
  if (s == "plurality") return FusionMode::plurality;
  if (s == "jlf") return FusionMode::jlf;
  throw Error(Errc::config_invalid, "unknown fusion mode '" + s + "'");
}

TrustMode parse_trust_mode(const std::string& s) {
  if (s == "multiply") return TrustMode::multiply;
  if (s == "gate") return TrustMode::gate;
  throw Error(Errc::config_invalid, "unknown trust mode '" + s + "'");
}

const char* to_string(FusionMode m) { return m == FusionMode::plurality ? "plurality" : "jlf"; }
const char* to_string(TrustMode m) { return m == TrustMode::multiply ? "multiply" : "gate"; }

}  // namespace masr
