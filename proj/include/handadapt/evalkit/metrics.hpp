#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "handadapt/autodiff/errors.hpp"
#include "handadapt/autodiff/tensor.hpp"
#include "handadapt/geometry.hpp"
#include "handadapt/synthhands/hand.hpp"

namespace handadapt {

// ---------------------------------------------------------------------------
// Per-instance metrics.

/// Mean Euclidean distance over joints not flagged in `excluded`.
inline double mpe(const Keypoints& pred, const Keypoints& gt, const std::vector<bool>& excluded = {}) {
  if (pred.size() != gt.size()) throw ShapeError("mpe: joint counts differ");
  if (!excluded.empty() && excluded.size() != gt.size()) throw ShapeError("mpe: exclusion mask length");
  double s = 0;
  std::size_t n = 0;
  for (std::size_t k = 0; k < gt.size(); ++k) {
    if (!excluded.empty() && excluded[k]) continue;
    s += distance(pred[k], gt[k]);
    ++n;
  }
  if (n == 0) throw ConfigError("mpe: every joint is excluded");
  return s / static_cast<double>(n);
}

inline std::vector<double> joint_errors(const Keypoints& pred, const Keypoints& gt) {
  if (pred.size() != gt.size()) throw ShapeError("joint_errors: joint counts differ");
  std::vector<double> e(gt.size());
  for (std::size_t k = 0; k < gt.size(); ++k) e[k] = distance(pred[k], gt[k]);
  return e;
}

/// Mean over thresholds t_j = max * j / n (j = 1..n) of the fraction of
/// joints with error <= t_j, in percent.
inline double pck_auc(std::span<const double> errors, double max_threshold_px = 20.0, std::size_t n_thresholds = 20) {
  if (n_thresholds == 0 || !(max_threshold_px > 0)) throw ConfigError("pck_auc: thresholds must be positive");
  if (errors.empty()) throw ConfigError("pck_auc: no errors");
  std::size_t hits = 0;
  for (std::size_t j = 1; j <= n_thresholds; ++j) {
    const double t = max_threshold_px * static_cast<double>(j) / static_cast<double>(n_thresholds);
    for (double e : errors) {
      if (e < 0) throw ConfigError("pck_auc: negative error");
      hits += e <= t;
    }
  }
  return 100.0 * static_cast<double>(hits) / static_cast<double>(n_thresholds * errors.size());
}

struct IouResult {
  double value = 0;         // percent
  bool both_empty = false;  // value is 100 by convention
};

inline IouResult iou(const Tensor& pred_prob, const Tensor& gt_mask, double threshold = 0.5) {
  if (pred_prob.numel() != gt_mask.numel()) throw ShapeError("iou: mask sizes differ");
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < gt_mask.numel(); ++i) {
    if (gt_mask[i] != 0.0 && gt_mask[i] != 1.0) throw ConfigError("iou: ground-truth mask must be binary");
    const bool a = pred_prob[i] >= threshold;
    const bool b = gt_mask[i] == 1.0;
    inter += a && b;
    uni += a || b;
  }
  if (uni == 0) return {100.0, true};
  return {100.0 * static_cast<double>(inter) / static_cast<double>(uni), false};
}

/// PCK threshold range in pixels for a given image size: 20 px at 128, scaled.
inline double pck_max_threshold(std::size_t image_size, double px_at_128 = 20.0) {
  return px_at_128 * static_cast<double>(image_size) / 128.0;
}

// ---------------------------------------------------------------------------
// Aggregate record.

struct InstanceMetrics {
  std::size_t index = 0;
  double mpe = 0;
  double pck = 0;  // this instance's PCK-AUC contribution, percent
  double iou = 0;
  double avg = 0;
  std::optional<double> disagreement;
};

struct MetricsRecord {
  double mpe_px = 0;
  double pck_auc = 0;
  double iou = 0;
  double avg = 0;
  std::vector<InstanceMetrics> per_instance;
};

struct EvalOptions {
  double pck_max_px = 5.0;
  std::size_t pck_thresholds = 20;
  double iou_threshold = 0.5;
};

/// Dataset-level metrics: MPE and PCK pooled over all joints, IoU averaged
/// over instances. Per-instance Avg is (PCK_i + IoU_i) / 2.
inline MetricsRecord evaluate(std::span<const Keypoints> pred_coords, std::span<const Tensor> pred_mask_prob,
                              std::span<const Keypoints> gt_coords, std::span<const Tensor> gt_masks,
                              const EvalOptions& opt, std::span<const double> disagreement = {}) {
  const std::size_t n = gt_coords.size();
  if (pred_coords.size() != n || pred_mask_prob.size() != n || gt_masks.size() != n) {
    throw ShapeError("evaluate: prediction and ground-truth counts differ");
  }
  if (!disagreement.empty() && disagreement.size() != n) throw ShapeError("evaluate: disagreement count differs");
  if (n == 0) throw ConfigError("evaluate: empty set");
  MetricsRecord r;
  std::vector<double> all_errors;
  double iou_sum = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto e = joint_errors(pred_coords[i], gt_coords[i]);
    all_errors.insert(all_errors.end(), e.begin(), e.end());
    InstanceMetrics m;
    m.index = i;
    m.mpe = mpe(pred_coords[i], gt_coords[i]);
    m.pck = pck_auc(e, opt.pck_max_px, opt.pck_thresholds);
    m.iou = iou(pred_mask_prob[i], gt_masks[i], opt.iou_threshold).value;
    m.avg = (m.pck + m.iou) / 2.0;
    if (!disagreement.empty()) m.disagreement = disagreement[i];
    iou_sum += m.iou;
    r.per_instance.push_back(m);
  }
  r.mpe_px = std::accumulate(all_errors.begin(), all_errors.end(), 0.0) / static_cast<double>(all_errors.size());
  r.pck_auc = pck_auc(all_errors, opt.pck_max_px, opt.pck_thresholds);
  r.iou = iou_sum / static_cast<double>(n);
  r.avg = (r.pck_auc + r.iou) / 2.0;
  return r;
}

// Shortest round-trip representation keeps metrics.json byte-stable.
inline nlohmann::json to_json(const MetricsRecord& r) {
  nlohmann::json per = nlohmann::json::array();
  for (const auto& m : r.per_instance) {
    nlohmann::json e = {{"index", m.index}, {"mpe", m.mpe}, {"pck", m.pck}, {"iou", m.iou}, {"avg", m.avg}};
    if (m.disagreement) e["disagreement"] = *m.disagreement;
    per.push_back(e);
  }
  return {{"mpe_px", r.mpe_px}, {"pck_auc", r.pck_auc}, {"iou", r.iou}, {"avg", r.avg}, {"per_instance", per}};
}

inline void ensure_parent(const std::filesystem::path& p) {
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
}

inline void write_metrics_json(const std::filesystem::path& path, const MetricsRecord& r, const nlohmann::json& extra = {}) {
  ensure_parent(path);
  nlohmann::json j = to_json(r);
  if (extra.is_object()) {
    for (auto it = extra.begin(); it != extra.end(); ++it) j[it.key()] = it.value();
  }
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

inline void write_instance_csv(const std::filesystem::path& path, const MetricsRecord& r) {
  ensure_parent(path);
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.precision(10);
  out << "index,mpe,pck,iou,avg,disagreement\n";
  for (const auto& m : r.per_instance) {
    out << m.index << ',' << m.mpe << ',' << m.pck << ',' << m.iou << ',' << m.avg << ',';
    if (m.disagreement) out << *m.disagreement;
    out << '\n';
  }
}

// ---------------------------------------------------------------------------
// Disagreement vs score.

/// Ranks starting at 1; ties share their average rank.
inline std::vector<double> average_ranks(std::span<const double> v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(v.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
    const double r = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
    i = j + 1;
  }
  return ranks;
}

struct CorrelationBin {
  double disagreement_lo = 0, disagreement_hi = 0;
  double mean_disagreement = 0;
  double mean_score = 0;
  std::size_t count = 0;
};

struct CorrelationResult {
  double spearman_rho = 0;
  bool degenerate = false;  // one side has constant ranks
  std::vector<CorrelationBin> bins;
};

inline double pearson(std::span<const double> a, std::span<const double> b, bool& degenerate) {
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
  const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  degenerate = saa == 0 || sbb == 0;
  return degenerate ? 0.0 : sab / std::sqrt(saa * sbb);
}

/// Spearman correlation plus a quantile-binned mean-score table (sorted by
/// disagreement, split into `n_bins` near-equal groups).
inline CorrelationResult disagreement_correlation(std::span<const double> disagreement, std::span<const double> score,
                                                  std::size_t n_bins = 10) {
  if (disagreement.size() != score.size()) throw ShapeError("disagreement_correlation: lengths differ");
  if (disagreement.size() < 30) throw ConfigError("disagreement_correlation: needs at least 30 instances");
  if (n_bins == 0) throw ConfigError("disagreement_correlation: n_bins must be positive");
  CorrelationResult r;
  const auto rd = average_ranks(disagreement);
  const auto rs = average_ranks(score);
  r.spearman_rho = pearson(rd, rs, r.degenerate);

  const std::size_t n = disagreement.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return disagreement[a] < disagreement[b]; });
  const std::size_t bins = std::min(n_bins, n);
  for (std::size_t b = 0; b < bins; ++b) {
    const std::size_t lo = b * n / bins, hi = (b + 1) * n / bins;
    CorrelationBin bin;
    bin.count = hi - lo;
    bin.disagreement_lo = disagreement[order[lo]];
    bin.disagreement_hi = disagreement[order[hi - 1]];
    for (std::size_t i = lo; i < hi; ++i) {
      bin.mean_disagreement += disagreement[order[i]] / static_cast<double>(bin.count);
      bin.mean_score += score[order[i]] / static_cast<double>(bin.count);
    }
    r.bins.push_back(bin);
  }
  return r;
}

// ---------------------------------------------------------------------------
// Bone-length distributions.

enum class BoneGroup { kWristMcp, kMcpPip, kPipDip, kDipTip };

inline const char* bone_group_name(BoneGroup g) {
  switch (g) {
    case BoneGroup::kWristMcp: return "wrist_mcp";
    case BoneGroup::kMcpPip: return "mcp_pip";
    case BoneGroup::kPipDip: return "pip_dip";
    case BoneGroup::kDipTip: return "dip_tip";
  }
  return "?";
}

inline BoneGroup parse_bone_group(const std::string& s) {
  for (BoneGroup g : {BoneGroup::kWristMcp, BoneGroup::kMcpPip, BoneGroup::kPipDip, BoneGroup::kDipTip}) {
    if (s == bone_group_name(g)) return g;
  }
  throw ConfigError("unknown bone group '" + s + "'");
}

/// Lengths of every bone of the group over a batch of 21-joint skeletons.
inline std::vector<double> bone_lengths(std::span<const Keypoints> coords, BoneGroup group) {
  const std::size_t level = static_cast<std::size_t>(group);
  std::vector<double> out;
  for (const auto& kp : coords) {
    if (kp.size() != kNumJoints) throw ShapeError("bone_lengths: expected 21 joints");
    for (std::size_t f = 0; f < kNumFingers; ++f) {
      const std::size_t child = joint_index(f, level);
      const std::size_t parent = level == 0 ? 0 : joint_index(f, level - 1);
      out.push_back(distance(kp[parent], kp[child]));
    }
  }
  return out;
}

struct DensityCurve {
  std::vector<double> x;
  std::vector<double> density;
};

inline std::vector<double> uniform_grid(double lo, double hi, std::size_t n) {
  if (n < 2 || !(hi > lo)) throw ConfigError("uniform_grid: needs n >= 2 and hi > lo");
  std::vector<double> g(n);
  for (std::size_t i = 0; i < n; ++i) g[i] = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(n - 1);
  return g;
}

/// Gaussian KDE of `samples` evaluated on `grid`.
inline DensityCurve gaussian_kde(std::span<const double> samples, double bandwidth, std::span<const double> grid) {
  if (samples.empty()) throw ConfigError("gaussian_kde: empty sample");
  if (!(bandwidth > 0)) throw ConfigError("gaussian_kde: bandwidth must be positive");
  constexpr double kInvSqrt2Pi = 0.3989422804014327;
  DensityCurve c{{grid.begin(), grid.end()}, std::vector<double>(grid.size(), 0.0)};
  const double norm = kInvSqrt2Pi / (bandwidth * static_cast<double>(samples.size()));
  for (std::size_t i = 0; i < grid.size(); ++i) {
    double s = 0;
    for (double v : samples) {
      const double z = (grid[i] - v) / bandwidth;
      s += std::exp(-0.5 * z * z);
    }
    c.density[i] = s * norm;
  }
  return c;
}

/// Default grid spans the sample range padded by 4 bandwidths.
inline DensityCurve bone_length_kde(std::span<const Keypoints> coords, BoneGroup group, double bandwidth,
                                    std::size_t grid_points = 512, std::optional<std::pair<double, double>> range = {}) {
  const auto lengths = bone_lengths(coords, group);
  if (lengths.empty()) throw ConfigError("bone_length_kde: empty group");
  if (!(bandwidth > 0)) throw ConfigError("bone_length_kde: bandwidth must be positive");
  const auto [mn, mx] = std::minmax_element(lengths.begin(), lengths.end());
  const auto r = range.value_or(std::pair{*mn - 4 * bandwidth, *mx + 4 * bandwidth});
  return gaussian_kde(lengths, bandwidth, uniform_grid(r.first, r.second, grid_points));
}

inline double trapezoid(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw ShapeError("trapezoid: lengths differ");
  double s = 0;
  for (std::size_t i = 1; i < x.size(); ++i) s += 0.5 * (y[i] + y[i - 1]) * (x[i] - x[i - 1]);
  return s;
}

/// L1 distance of two curves sampled on the same grid.
inline double density_l1(const DensityCurve& a, const DensityCurve& b) {
  if (a.x != b.x) throw ShapeError("density_l1: curves use different grids");
  std::vector<double> d(a.x.size());
  for (std::size_t i = 0; i < d.size(); ++i) d[i] = std::abs(a.density[i] - b.density[i]);
  return trapezoid(a.x, d);
}

// ---------------------------------------------------------------------------
// Plot emission.

struct Series {
  std::string label;
  std::vector<double> x, y;
};

/// Minimal SVG line plot: axes box, one polyline per series, legend text.
inline std::string svg_line_plot(std::span<const Series> series, const std::string& title, const std::string& x_label,
                                 const std::string& y_label) {
  constexpr double kW = 480, kH = 320, kL = 60, kR = 20, kT = 30, kB = 45;
  double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
  for (const auto& s : series) {
    for (double v : s.x) xmin = std::min(xmin, v), xmax = std::max(xmax, v);
    for (double v : s.y) ymin = std::min(ymin, v), ymax = std::max(ymax, v);
  }
  if (!(xmax > xmin)) xmax = xmin + 1;
  if (!(ymax > ymin)) ymax = ymin + 1;
  auto px = [&](double v) { return kL + (v - xmin) / (xmax - xmin) * (kW - kL - kR); };
  auto py = [&](double v) { return kH - kB - (v - ymin) / (ymax - ymin) * (kH - kT - kB); };
  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd"};
  std::ostringstream o;
  o.precision(6);
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kW << "\" height=\"" << kH << "\">\n";
  o << "<rect x=\"" << kL << "\" y=\"" << kT << "\" width=\"" << kW - kL - kR << "\" height=\"" << kH - kT - kB
    << "\" fill=\"none\" stroke=\"black\"/>\n";
  o << "<text x=\"" << kW / 2 << "\" y=\"18\" text-anchor=\"middle\" font-size=\"13\">" << title << "</text>\n";
  o << "<text x=\"" << kW / 2 << "\" y=\"" << kH - 8 << "\" text-anchor=\"middle\" font-size=\"11\">" << x_label
    << " [" << xmin << ", " << xmax << "]</text>\n";
  o << "<text x=\"12\" y=\"" << kH / 2 << "\" font-size=\"11\" transform=\"rotate(-90 12 " << kH / 2 << ")\">" << y_label
    << " [" << ymin << ", " << ymax << "]</text>\n";
  for (std::size_t i = 0; i < series.size(); ++i) {
    const auto& s = series[i];
    const char* c = colors[i % 5];
    o << "<polyline fill=\"none\" stroke=\"" << c << "\" points=\"";
    for (std::size_t k = 0; k < s.x.size(); ++k) o << px(s.x[k]) << ',' << py(s.y[k]) << ' ';
    o << "\"/>\n";
    o << "<text x=\"" << kL + 8 << "\" y=\"" << kT + 14 + 14 * static_cast<double>(i) << "\" font-size=\"11\" fill=\"" << c
      << "\">" << s.label << "</text>\n";
  }
  o << "</svg>\n";
  return o.str();
}

}  // namespace handadapt
