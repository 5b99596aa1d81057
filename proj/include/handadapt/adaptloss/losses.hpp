#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "handadapt/augment/augment.hpp"
#include "handadapt/autodiff/ops.hpp"
#include "handadapt/nethead/heatmap.hpp"
#include "handadapt/nethead/network.hpp"

namespace handadapt {

/// Task balance weights. The pose weight is lambda_p * pose_scale: the
/// published value 1e7 is tied to heatmap-loss magnitudes of a much larger
/// network, so pose_scale rescales it for small heatmaps while keeping
/// lambda_p itself at its documented default.
struct LossWeights {
  double lambda_p = 1e7;       // supervised and consistency pose weight
  double lambda_m = 1e2;       // supervised mask weight
  double lambda_m_tilde = 5.0; // consistency / disagreement mask weight
  double lambda_d = 0.5;       // disagreement scale inside the confidence weight
  double pose_scale = 1e-4;

  double pose() const { return lambda_p * pose_scale; }

  void validate() const {
    if (!(lambda_p > 0 && lambda_m > 0 && lambda_m_tilde > 0 && lambda_d > 0 && pose_scale > 0)) {
      throw ConfigError("loss weights must all be positive");
    }
  }
};

enum class TaskSet { kBoth, kPoseOnly, kMaskOnly };

inline bool uses_pose(TaskSet t) { return t != TaskSet::kMaskOnly; }
inline bool uses_mask(TaskSet t) { return t != TaskSet::kPoseOnly; }

// ---------------------------------------------------------------------------
// Elementary losses, mean-reduced.

inline Var smooth_l1_loss(Var pred, Var target) {
  require_same_shape(pred.shape(), target.shape(), "smooth_l1_loss");
  return mean(smooth_l1(sub(pred, target)));
}

inline Var bce_loss(Var logits, const Tensor& target) {
  require_same_shape(logits.shape(), target.shape(), "bce_loss");
  for (double t : target.data()) {
    if (t != 0.0 && t != 1.0) throw ConfigError("bce_loss: targets must be 0 or 1");
  }
  return mean(bce_with_logits(logits, target));
}

inline Var mse_loss(Var pred, Var target) {
  require_same_shape(pred.shape(), target.shape(), "mse_loss");
  Var d = sub(pred, target);
  return mean(mul(d, d));
}

inline double smooth_l1_value(const Tensor& a, const Tensor& b) {
  require_same_shape(a.shape(), b.shape(), "smooth_l1_value");
  double s = 0;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    const double d = std::abs(a[i] - b[i]);
    s += d < 1.0 ? 0.5 * d * d : d - 0.5;
  }
  return s / static_cast<double>(a.numel());
}

inline double mse_value(const Tensor& a, const Tensor& b) {
  require_same_shape(a.shape(), b.shape(), "mse_value");
  double s = 0;
  for (std::size_t i = 0; i < a.numel(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s / static_cast<double>(a.numel());
}

// ---------------------------------------------------------------------------
// Supervised source loss.

struct Labels {
  Tensor heatmaps;  // [N,K,h,w] from encode_heatmaps
  Tensor masks;     // [N,1,H,W] binary
};

inline Var loss_task(const PredictionVars& pred, const Labels& labels, const LossWeights& w, TaskSet tasks = TaskSet::kBoth) {
  if (uses_pose(tasks) && labels.heatmaps.numel() == 0) throw ConfigError("loss_task: missing heatmap labels");
  if (uses_mask(tasks) && labels.masks.numel() == 0) throw ConfigError("loss_task: missing mask labels");
  Graph& g = *pred.heatmaps.graph;
  if (tasks == TaskSet::kPoseOnly) return scale(smooth_l1_loss(pred.heatmaps, g.constant(labels.heatmaps)), w.pose());
  if (tasks == TaskSet::kMaskOnly) return scale(bce_loss(pred.mask_logits, labels.masks), w.lambda_m);
  return add(scale(smooth_l1_loss(pred.heatmaps, g.constant(labels.heatmaps)), w.pose()),
             scale(bce_loss(pred.mask_logits, labels.masks), w.lambda_m));
}

// ---------------------------------------------------------------------------
// Consistency against a fixed (already geometrically aligned) target.

struct ConsistencyTarget {
  Tensor heatmaps;   // [N,K,h,w]
  Tensor mask_prob;  // [N,1,H,W]
  std::vector<double> instance_weight;          // w_t per instance; 1 for plain GAC
  std::vector<std::vector<bool>> joint_included; // [N][K]; out-of-frame joints are dropped
};

/// (1/N) sum_i w_i (lambda_p~ L~p_i + lambda_m~ L~m_i). L~p_i is smooth L1
/// averaged over the included joints' heatmap cells, L~m_i the MSE between
/// mask probabilities.
inline Var consistency_loss(const PredictionVars& pred, const ConsistencyTarget& target, const LossWeights& w,
                            TaskSet tasks = TaskSet::kBoth) {
  Graph& g = *pred.heatmaps.graph;
  const Tensor& hv = pred.heatmaps.value();
  const Tensor& mv = pred.mask_prob.value();
  require_same_shape(hv.shape(), target.heatmaps.shape(), "consistency_loss heatmaps");
  require_same_shape(mv.shape(), target.mask_prob.shape(), "consistency_loss mask");
  const std::size_t n = hv.dim(0), k = hv.dim(1), cells = hv.dim(2) * hv.dim(3), pixels = mv.numel() / n;
  if (target.instance_weight.size() != n || target.joint_included.size() != n) {
    throw ShapeError("consistency_loss: per-instance weights do not match the batch");
  }

  std::vector<Var> terms;
  if (uses_pose(tasks)) {
    Tensor coef(hv.shape());
    for (std::size_t i = 0; i < n; ++i) {
      if (target.joint_included[i].size() != k) throw ShapeError("consistency_loss: joint mask length");
      std::size_t included = 0;
      for (bool b : target.joint_included[i]) included += b;
      if (included == 0) continue;
      const double c = target.instance_weight[i] * w.pose() / (static_cast<double>(n * included * cells));
      for (std::size_t j = 0; j < k; ++j) {
        if (!target.joint_included[i][j]) continue;
        std::fill_n(&coef.data()[(i * k + j) * cells], cells, c);
      }
    }
    Var per_cell = smooth_l1(sub(pred.heatmaps, g.constant(target.heatmaps)));
    terms.push_back(sum(mul(per_cell, g.constant(std::move(coef)))));
  }
  if (uses_mask(tasks)) {
    Tensor coef(mv.shape());
    for (std::size_t i = 0; i < n; ++i) {
      std::fill_n(&coef.data()[i * pixels], pixels,
                  target.instance_weight[i] * w.lambda_m_tilde / static_cast<double>(n * pixels));
    }
    Var d = sub(pred.mask_prob, g.constant(target.mask_prob));
    terms.push_back(sum(mul(mul(d, d), g.constant(std::move(coef)))));
  }
  return terms.size() == 1 ? terms[0] : add(terms[0], terms[1]);
}

// Options shared by the consistency losses.
struct ConsistencyOptions {
  double decode_temperature = 0.05;
  bool exclude_out_of_frame = true;
};

/// T_y applied to an unaugmented prediction: warps every instance with its
/// own AugPair and marks joints whose decoded position leaves the frame.
inline ConsistencyTarget align_target(const Prediction& clean, std::span<const AugPair> augs,
                                      std::span<const double> instance_weight, const ConsistencyOptions& opt) {
  const std::size_t n = clean.batch();
  if (augs.size() != n || instance_weight.size() != n) throw ShapeError("align_target: batch size mismatch");
  const std::size_t image = clean.mask_prob.dim(3);
  const std::size_t k = clean.heatmaps.dim(1);
  ConsistencyTarget t;
  t.heatmaps = Tensor(clean.heatmaps.shape());
  t.mask_prob = Tensor(clean.mask_prob.shape());
  t.instance_weight.assign(instance_weight.begin(), instance_weight.end());
  t.joint_included.assign(n, std::vector<bool>(k, true));
  const std::size_t hsize = t.heatmaps.numel() / n, msize = t.mask_prob.numel() / n;
  for (std::size_t i = 0; i < n; ++i) {
    const Tensor heat = instance(clean.heatmaps, i);
    const Tensor warped_heat = apply_spatial(augs[i], heat, image);
    const Tensor warped_mask = apply_spatial(augs[i], instance(clean.mask_prob, i), image);
    std::copy(warped_heat.data().begin(), warped_heat.data().end(), t.heatmaps.data().begin() + static_cast<long>(i * hsize));
    std::copy(warped_mask.data().begin(), warped_mask.data().end(), t.mask_prob.data().begin() + static_cast<long>(i * msize));
    if (opt.exclude_out_of_frame && !augs[i].geometric.is_identity()) {
      const auto decoded = decode_keypoints(heat, opt.decode_temperature, image, image);
      const auto moved = apply_keypoints(augs[i], decoded.coords, image, image);
      for (std::size_t j = 0; j < k; ++j) t.joint_included[i][j] = !moved.out_of_frame[j];
    }
  }
  return t;
}

/// T_x over a batch of [H,W,C] images, returned as [N,C,H,W].
inline Tensor augment_batch(std::span<const Tensor> images, std::span<const AugPair> augs) {
  if (images.size() != augs.size()) throw ShapeError("augment_batch: images and augmentations differ in count");
  std::vector<Tensor> out;
  out.reserve(images.size());
  for (std::size_t i = 0; i < images.size(); ++i) out.push_back(apply_image(augs[i], images[i]));
  return to_nchw(out);
}

struct GacResult {
  Var loss;
  PredictionVars clean;      // f(x) before stop_gradient
  PredictionVars augmented;  // f(T_x(x))
};

/// Geometric augmentation consistency of one network with itself. The
/// unaugmented prediction is detached before it is warped into a target.
inline GacResult loss_gac(Graph& g, NetParams& params, std::span<const Tensor> images, std::span<const AugPair> augs,
                          const LossWeights& w, TaskSet tasks = TaskSet::kBoth, const ConsistencyOptions& opt = {}) {
  GacResult r;
  r.clean = forward(g, params, to_nchw(images));
  const PredictionVars detached{stop_gradient(r.clean.heatmaps), stop_gradient(r.clean.mask_logits),
                                stop_gradient(r.clean.mask_prob)};
  const std::vector<double> ones(images.size(), 1.0);
  const ConsistencyTarget target = align_target(values_of(detached), augs, ones, opt);
  r.augmented = forward(g, params, augment_batch(images, augs));
  r.loss = consistency_loss(r.augmented, target, w, tasks);
  return r;
}

// ---------------------------------------------------------------------------
// Two-teacher confidence.

/// Task-weighted divergence of two predictions of one instance (batch 1),
/// smooth L1 on heatmaps plus MSE on mask probabilities.
inline double disagreement(const Prediction& a, const Prediction& b, const LossWeights& w, TaskSet tasks = TaskSet::kBoth) {
  double d = 0;
  if (uses_pose(tasks)) d += w.pose() * smooth_l1_value(a.heatmaps, b.heatmaps);
  if (uses_mask(tasks)) d += w.lambda_m_tilde * mse_value(a.mask_prob, b.mask_prob);
  return d;
}

inline std::vector<double> disagreements(const Prediction& a, const Prediction& b, const LossWeights& w,
                                         TaskSet tasks = TaskSet::kBoth) {
  std::vector<double> out(a.batch());
  for (std::size_t i = 0; i < a.batch(); ++i) out[i] = disagreement(a.instance(i), b.instance(i), w, tasks);
  return out;
}

/// 2 (1 - sigmoid(lambda_d * l)): 1 at full agreement, towards 0 as the
/// teachers diverge.
inline double confidence_weight(double disagreement_value, double lambda_d) {
  if (!(disagreement_value >= 0)) throw ConfigError("confidence_weight: disagreement must be non-negative");
  return 2.0 * (1.0 - sigmoid_value(lambda_d * disagreement_value));
}

inline Prediction ensemble(const Prediction& a, const Prediction& b) {
  require_same_shape(a.heatmaps.shape(), b.heatmaps.shape(), "ensemble heatmaps");
  require_same_shape(a.mask_prob.shape(), b.mask_prob.shape(), "ensemble mask");
  Prediction p{Tensor(a.heatmaps.shape()), Tensor(a.mask_logits.shape()), Tensor(a.mask_prob.shape())};
  for (std::size_t i = 0; i < p.heatmaps.numel(); ++i) p.heatmaps[i] = (a.heatmaps[i] + b.heatmaps[i]) / 2.0;
  for (std::size_t i = 0; i < p.mask_prob.numel(); ++i) {
    const double q = (a.mask_prob[i] + b.mask_prob[i]) / 2.0;
    p.mask_prob[i] = q;
    const double qc = std::clamp(q, 1e-12, 1.0 - 1e-12);
    p.mask_logits[i] = std::log(qc) - std::log1p(-qc);
  }
  return p;
}

/// Confidence-weighted consistency of the student against the teachers'
/// ensemble prediction on the clean image.
inline Var loss_cgac(Graph& g, NetParams& student, const Prediction& ensemble_clean, std::span<const double> w_t,
                     std::span<const Tensor> images, std::span<const AugPair> augs, const LossWeights& w,
                     TaskSet tasks = TaskSet::kBoth, const ConsistencyOptions& opt = {}) {
  for (double v : w_t) {
    if (!(v >= 0.0 && v <= 1.0)) throw ConfigError("loss_cgac: confidence weight outside [0,1]");
  }
  const ConsistencyTarget target = align_target(ensemble_clean, augs, w_t, opt);
  const PredictionVars pred = forward(g, student, augment_batch(images, augs));
  return consistency_loss(pred, target, w, tasks);
}

/// Output-level distillation of a teacher towards the student on the same
/// augmented batch ([N,C,H,W]). The student prediction is detached, so only
/// the teacher receives gradient.
inline Var loss_distill(Graph& g, NetParams& teacher, const PredictionVars& student_on_aug, const Tensor& augmented_batch,
                        const LossWeights& w, TaskSet tasks = TaskSet::kBoth) {
  const PredictionVars t = forward(g, teacher, augmented_batch);
  std::vector<Var> terms;
  if (uses_pose(tasks)) terms.push_back(scale(smooth_l1_loss(t.heatmaps, stop_gradient(student_on_aug.heatmaps)), w.pose()));
  if (uses_mask(tasks)) terms.push_back(scale(mse_loss(t.mask_prob, stop_gradient(student_on_aug.mask_prob)), w.lambda_m_tilde));
  return terms.size() == 1 ? terms[0] : add(terms[0], terms[1]);
}

}  // namespace handadapt
