#include "masr/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <sstream>

namespace masr {

KdTree::KdTree(std::vector<Eigen::Vector3d> points) : points_(std::move(points)), axis_(points_.size(), 0) {
  build(0, points_.size());
}

void KdTree::build(std::size_t lo, std::size_t hi) {
  if (hi - lo <= 1) return;
  // Split on the widest axis of the range.
  Eigen::Vector3d mn = points_[lo], mx = points_[lo];
  for (std::size_t i = lo + 1; i < hi; ++i) {
    mn = mn.cwiseMin(points_[i]);
    mx = mx.cwiseMax(points_[i]);
  }
  Eigen::Index axis = 0;
  (mx - mn).maxCoeff(&axis);
  const std::size_t mid = lo + (hi - lo) / 2;
  std::nth_element(points_.begin() + lo, points_.begin() + mid, points_.begin() + hi,
                   [axis](const Eigen::Vector3d& a, const Eigen::Vector3d& b) { return a[axis] < b[axis]; });
  axis_[mid] = static_cast<unsigned char>(axis);
  build(lo, mid);
  build(mid + 1, hi);
}

void KdTree::search(std::size_t lo, std::size_t hi, const Eigen::Vector3d& q, double& best) const {
  if (lo >= hi) return;
  const std::size_t mid = lo + (hi - lo) / 2;
  const Eigen::Vector3d& p = points_[mid];
  best = std::min(best, squared_distance(q, p));
  if (hi - lo == 1) return;
  const int axis = axis_[mid];
  const double diff = q[axis] - p[axis];
  const bool left_first = diff < 0.0;
  if (left_first) search(lo, mid, q, best);
  else search(mid + 1, hi, q, best);
  // Every point on the far side is at least |diff| away along this axis.
  if (diff * diff <= best) {
    if (left_first) search(mid + 1, hi, q, best);
    else search(lo, mid, q, best);
  }
}

double KdTree::nearest_squared(const Eigen::Vector3d& query) const {
  double best = std::numeric_limits<double>::infinity();
  search(0, points_.size(), query, best);
  return best;
}

double volume_dice(const LabelVolume& a, const LabelVolume& b, int label) {
  require_same_geometry(a.geom(), b.geom(), "volume_dice: grids differ");
  const auto in_a = (a.data() == Label(label));
  const auto in_b = (b.data() == Label(label));
  const Index size_a = in_a.count();
  const Index size_b = in_b.count();
  if (size_a + size_b == 0) return 1.0;
  const Index overlap = (in_a && in_b).count();
  return 2.0 * double(overlap) / double(size_a + size_b);
}

SurfacePointSet extract_surface(const LabelVolume& s, int label) {
  const GridGeometry& g = s.geom();
  const Dims n = g.dims();
  const Dims strides = g.strides();
  SurfacePointSet out;
  for (Index z = 0; z < n[2]; ++z) {
    for (Index y = 0; y < n[1]; ++y) {
      for (Index x = 0; x < n[0]; ++x) {
        const Index i = g.index(x, y, z);
        if (s[i] != label) continue;
        const Index pos[3] = {x, y, z};
        bool boundary = false;
        for (int a = 0; a < 3 && !boundary; ++a) {
          boundary = pos[a] == 0 || pos[a] == n[a] - 1 || s[i - strides[a]] != label || s[i + strides[a]] != label;
        }
        if (boundary) {
          out.points.emplace_back(double(x) * g.spacing()[0], double(y) * g.spacing()[1],
                                  double(z) * g.spacing()[2]);
        }
      }
    }
  }
  return out;
}

std::vector<double> directed_distances(const SurfacePointSet& from, const SurfacePointSet& to) {
  if (to.empty()) throw Error(Errc::empty_surface, "directed_distances: target surface is empty");
  const KdTree tree(to.points);
  std::vector<double> out;
  out.reserve(from.size());
  for (const auto& p : from.points) out.push_back(std::sqrt(tree.nearest_squared(p)));
  return out;
}

namespace {

struct DirectedPair {
  std::vector<double> ab, ba;
};

DirectedPair surface_distances(const LabelVolume& a, const LabelVolume& b, int label) {
  require_same_geometry(a.geom(), b.geom(), "surface metrics: grids differ");
  const SurfacePointSet sa = extract_surface(a, label);
  const SurfacePointSet sb = extract_surface(b, label);
  if (sa.empty() || sb.empty()) throw Error(Errc::empty_surface, "label absent from one of the volumes");
  return {directed_distances(sa, sb), directed_distances(sb, sa)};
}

}  // namespace

double mean_symmetric(const std::vector<double>& ab, const std::vector<double>& ba) {
  double sum = 0.0;
  for (double d : ab) sum += d;
  for (double d : ba) sum += d;
  return sum / double(ab.size() + ba.size());
}

double fraction_within(const std::vector<double>& ab, const std::vector<double>& ba, double tol_mm) {
  std::size_t hits = 0;
  for (double d : ab) hits += d <= tol_mm;
  for (double d : ba) hits += d <= tol_mm;
  return double(hits) / double(ab.size() + ba.size());
}

double percentile95_nearest_rank(const std::vector<double>& ab, const std::vector<double>& ba) {
  std::vector<double> pooled(ab);
  pooled.insert(pooled.end(), ba.begin(), ba.end());
  if (pooled.empty()) throw Error(Errc::empty_surface, "percentile of an empty distance set");
  std::sort(pooled.begin(), pooled.end());
  // Nearest rank: the smallest value with at least 95% of the list at or below it.
  const std::size_t rank = (95 * pooled.size() + 99) / 100;
  return pooled[rank - 1];
}

double avg_surface_distance(const LabelVolume& a, const LabelVolume& b, int label) {
  const auto d = surface_distances(a, b, label);
  return mean_symmetric(d.ab, d.ba);
}

double surface_dice(const LabelVolume& a, const LabelVolume& b, int label, double tol_mm) {
  const auto d = surface_distances(a, b, label);
  return fraction_within(d.ab, d.ba, tol_mm);
}

double md95(const LabelVolume& a, const LabelVolume& b, int label) {
  const auto d = surface_distances(a, b, label);
  return percentile95_nearest_rank(d.ab, d.ba);
}

std::vector<LabelGroup> default_label_groups(int num_structures) {
  const int bone_count = (num_structures + 1) / 2;
  LabelGroup bone{"bone", {}}, cartilage{"cartilage", {}};
  for (int l = 1; l <= num_structures; ++l) (l <= bone_count ? bone : cartilage).labels.push_back(l);
  std::vector<LabelGroup> out{bone};
  if (!cartilage.labels.empty()) out.push_back(cartilage);
  return out;
}

double MetricReport::mean_vd() const {
  double sum = 0.0;
  for (const auto& m : labels) sum += m.vd;
  return labels.empty() ? 0.0 : sum / double(labels.size());
}

MetricReport evaluate(const LabelVolume& pred, const LabelVolume& truth, double tol_mm) {
  return evaluate(pred, truth, default_label_groups(truth.num_structures()), tol_mm);
}

MetricReport evaluate(const LabelVolume& pred, const LabelVolume& truth, const std::vector<LabelGroup>& groups,
                      double tol_mm) {
  require_same_geometry(pred.geom(), truth.geom(), "evaluate: grids differ");
  MetricReport report;
  report.num_structures = std::max(pred.num_structures(), truth.num_structures());
  for (int l = 1; l <= report.num_structures; ++l) {
    LabelMetrics m;
    m.label = l;
    m.vd = volume_dice(pred, truth, l);
    const SurfacePointSet sp = extract_surface(pred, l);
    const SurfacePointSet st = extract_surface(truth, l);
    if (!sp.empty() && !st.empty()) {
      const auto ab = directed_distances(sp, st);
      const auto ba = directed_distances(st, sp);
      m.asd = mean_symmetric(ab, ba);
      m.sd = fraction_within(ab, ba, tol_mm);
      m.md95 = percentile95_nearest_rank(ab, ba);
    }
    report.labels.push_back(m);
  }

  auto mean_of = [&](const LabelGroup& g, auto member) -> std::optional<double> {
    double sum = 0.0;
    int count = 0;
    for (int l : g.labels) {
      if (l < 1 || l > report.num_structures) continue;
      const std::optional<double> v = member(report.labels[l - 1]);
      if (v) {
        sum += *v;
        ++count;
      }
    }
    if (count == 0) return std::nullopt;
    return sum / count;
  };
  for (const LabelGroup& g : groups) {
    GroupMetrics gm;
    gm.name = g.name;
    gm.vd = mean_of(g, [](const LabelMetrics& m) { return std::optional<double>(m.vd); });
    gm.asd = mean_of(g, [](const LabelMetrics& m) { return m.asd; });
    gm.sd = mean_of(g, [](const LabelMetrics& m) { return m.sd; });
    gm.md95 = mean_of(g, [](const LabelMetrics& m) { return m.md95; });
    report.groups.push_back(gm);
  }
  return report;
}

namespace {

std::string fmt6(std::optional<double> v) {
  if (!v) return "absent";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", *v);
  return buf;
}

}  // namespace

std::string format_report(const MetricReport& report) {
  std::ostringstream os;
  os << "num_structures = " << report.num_structures << "\n";
  for (const auto& m : report.labels) {
    const std::string key = "label." + std::to_string(m.label) + ".";
    os << key << "vd = " << fmt6(m.vd) << "\n";
    os << key << "asd_mm = " << fmt6(m.asd) << "\n";
    os << key << "sd = " << fmt6(m.sd) << "\n";
    os << key << "md95_mm = " << fmt6(m.md95) << "\n";
  }
  for (const auto& g : report.groups) {
    const std::string key = "group." + g.name + ".";
    os << key << "vd = " << fmt6(g.vd) << "\n";
    os << key << "asd_mm = " << fmt6(g.asd) << "\n";
    os << key << "sd = " << fmt6(g.sd) << "\n";
    os << key << "md95_mm = " << fmt6(g.md95) << "\n";
  }
  os << "mean_vd = " << fmt6(report.mean_vd()) << "\n";
  return os.str();
}

}  // namespace masr
