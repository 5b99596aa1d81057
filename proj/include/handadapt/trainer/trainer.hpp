#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "handadapt/adaptloss/losses.hpp"
#include "handadapt/autodiff/adam.hpp"
#include "handadapt/augment/augment.hpp"
#include "handadapt/nethead/heatmap.hpp"
#include "handadapt/nethead/network.hpp"
#include "handadapt/rng.hpp"
#include "handadapt/synthhands/dataset.hpp"

namespace handadapt {

enum class Method { kSourceOnly, kGac, kGacMt, kGacDistill, kCgac, kGacUma };

inline const char* method_name(Method m) {
  switch (m) {
    case Method::kSourceOnly: return "source_only";
    case Method::kGac: return "gac";
    case Method::kGacMt: return "gac_mt";
    case Method::kGacDistill: return "gac_distill";
    case Method::kCgac: return "cgac";
    case Method::kGacUma: return "gac_uma";
  }
  return "?";
}

inline Method parse_method(const std::string& s) {
  for (Method m : {Method::kSourceOnly, Method::kGac, Method::kGacMt, Method::kGacDistill, Method::kCgac, Method::kGacUma}) {
    if (s == method_name(m)) return m;
  }
  throw ConfigError("unknown method '" + s + "'");
}

inline const char* tasks_name(TaskSet t) {
  switch (t) {
    case TaskSet::kBoth: return "both";
    case TaskSet::kPoseOnly: return "pose_only";
    case TaskSet::kMaskOnly: return "mask_only";
  }
  return "?";
}

inline TaskSet parse_tasks(const std::string& s) {
  if (s == "both") return TaskSet::kBoth;
  if (s == "pose_only") return TaskSet::kPoseOnly;
  if (s == "mask_only") return TaskSet::kMaskOnly;
  throw ConfigError("unknown tasks '" + s + "'");
}

/// How teachers are updated inside the two-teacher loop. kDistill is the
/// method itself; the others exist for the baselines and property checks.
enum class TeacherUpdate {
  kDistill,       // each teacher distilled from the student on its own stream
  kEma,           // each teacher an EMA of the student
  kFrozen,        // teachers never change
  kSynchronized,  // teacher1 distilled, teacher2 overwritten with teacher1
};

struct TrainConfig {
  Method method = Method::kCgac;
  TaskSet tasks = TaskSet::kBoth;
  LossWeights weights;
  AugConfig aug;

  // Source initialization.
  std::size_t source_steps = 1500;
  std::size_t source_batch = 8;
  double lr_source = 2e-3;

  // Adaptation. Effective rates are lr * lr_scale.
  std::size_t steps = 2000;
  std::size_t batch_source = 4;
  std::size_t batch_target = 4;
  double lr_student = 1e-5;
  double lr_teacher = 5e-6;
  double lr_scale = 1.0;
  double stage_switch_fraction = 0.3;
  std::optional<std::size_t> stage_switch_step;  // overrides the fraction
  double ema_alpha = 0.99;
  double consistency_weight = 1.0;  // multiplies the unlabeled term; 0 disables it

  // Heatmap encode/decode.
  double heatmap_sigma = 1.5;
  double decode_temperature = 0.05;

  // Dropout-confidence baseline.
  double uma_drop_rate = 0.1;
  std::size_t uma_forwards = 4;

  // Test hooks for the two-teacher loop.
  TeacherUpdate teacher_update = TeacherUpdate::kDistill;
  std::optional<double> confidence_override;

  std::uint64_t seed = 7;

  std::size_t switch_step() const {
    if (stage_switch_step) return *stage_switch_step;
    return static_cast<std::size_t>(std::llround(stage_switch_fraction * static_cast<double>(steps)));
  }

  void validate() const {
    weights.validate();
    aug.validate();
    if (lr_student <= 0 || lr_teacher <= 0 || lr_scale <= 0 || lr_source <= 0) throw ConfigError("learning rates must be positive");
    if (lr_teacher > lr_student) throw ConfigError("lr_teacher must not exceed lr_student");
    if (batch_source == 0 || batch_target == 0 || source_batch == 0) throw ConfigError("batch sizes must be positive");
    if (stage_switch_fraction < 0 || stage_switch_fraction > 1) throw ConfigError("stage_switch_fraction must lie in [0,1]");
    if (switch_step() > steps) throw ConfigError("stage switch step exceeds total steps");
    if (ema_alpha < 0 || ema_alpha > 1) throw ConfigError("ema_alpha must lie in [0,1]");
    if (consistency_weight < 0) throw ConfigError("consistency_weight must be non-negative");
    if (heatmap_sigma <= 0 || decode_temperature <= 0) throw ConfigError("heatmap sigma and decode temperature must be positive");
    if (uma_drop_rate < 0 || uma_drop_rate >= 1) throw ConfigError("uma_drop_rate must lie in [0,1)");
    if (uma_forwards < 2) throw ConfigError("uma_forwards must be at least 2");
    if (confidence_override && (*confidence_override < 0 || *confidence_override > 1)) {
      throw ConfigError("confidence_override must lie in [0,1]");
    }
  }
};

enum class Stage { kPoseOnly, kFull };

inline const char* stage_name(Stage s) { return s == Stage::kPoseOnly ? "pose_only" : "full"; }

struct ActiveSet {
  Stage stage = Stage::kFull;
  TaskSet tasks = TaskSet::kBoth;  // loss terms active in this step
  bool mask_branch_trainable = true;
};

/// Pose branch and backbone first, everything after the switch step. A
/// pose_only task set keeps the mask branch frozen for the whole run.
inline ActiveSet stage_schedule(std::size_t step, const TrainConfig& cfg) {
  ActiveSet a;
  a.stage = step < cfg.switch_step() ? Stage::kPoseOnly : Stage::kFull;
  a.tasks = a.stage == Stage::kPoseOnly ? TaskSet::kPoseOnly : cfg.tasks;
  a.mask_branch_trainable = uses_mask(a.tasks);
  return a;
}

// ---------------------------------------------------------------------------

struct NetState {
  NetParams params;
  AdamState adam;
};

/// Named, independent random streams derived from one seed.
class RngStreams {
 public:
  RngStreams() = default;
  explicit RngStreams(std::uint64_t seed) : seed_(seed) {}

  Rng& operator()(const std::string& name) {
    auto it = streams_.find(name);
    if (it == streams_.end()) it = streams_.emplace(name, Rng(derive_seed(seed_, name))).first;
    return it->second;
  }

 private:
  std::uint64_t seed_ = 0;
  std::map<std::string, Rng> streams_;
};

struct TrainerState {
  NetState student;
  std::vector<NetState> teachers;  // 0, 1 or 2 depending on the method
  std::size_t step = 0;
  Stage stage = Stage::kPoseOnly;
  RngStreams streams;
};

struct StepLog {
  std::size_t step = 0;
  double l_task = 0;
  double l_consistency = 0;  // L_cgac, or L_gac for single-network methods
  double l_distill1 = 0;
  double l_distill2 = 0;
  double w_mean = 1, w_min = 1, w_max = 1;
  Stage stage = Stage::kFull;
};

using StepObserver = std::function<void(const TrainerState&, const StepLog&)>;

// ---------------------------------------------------------------------------
// Data plumbing.

/// A dataset with heatmap and mask labels precomputed per sample.
struct LabeledSet {
  const Dataset* data = nullptr;
  std::vector<Tensor> heatmaps;  // [K,h,w]
  std::vector<Tensor> masks;     // [1,H,W]
};

inline LabeledSet make_labeled(const Dataset& ds, const ArchConfig& arch, double sigma) {
  LabeledSet l;
  l.data = &ds;
  const std::size_t s = arch.image_size, g = arch.grid_size();
  for (const auto& smp : ds.samples) {
    l.heatmaps.push_back(encode_heatmaps(smp.keypoints, sigma, g, g, s, s).maps);
    l.masks.push_back(smp.mask.reshaped({1, s, s}));
  }
  return l;
}

inline std::vector<std::size_t> draw_batch(Rng& rng, std::size_t dataset_size, std::size_t batch) {
  if (dataset_size == 0) throw ConfigError("cannot draw a batch from an empty dataset");
  std::vector<std::size_t> idx(batch);
  for (auto& i : idx) i = rng.uniform_index(dataset_size);
  return idx;
}

inline std::vector<Tensor> gather_images(const Dataset& ds, std::span<const std::size_t> idx) {
  std::vector<Tensor> out;
  out.reserve(idx.size());
  for (std::size_t i : idx) out.push_back(ds.samples[i].image);
  return out;
}

inline Labels gather_labels(const LabeledSet& l, std::span<const std::size_t> idx) {
  std::vector<Tensor> h, m;
  for (std::size_t i : idx) {
    h.push_back(l.heatmaps[i]);
    m.push_back(l.masks[i]);
  }
  return {stack(h), stack(m)};
}

inline std::vector<AugPair> draw_augs(Rng& rng, std::size_t n, AugStrength strength, const TrainConfig& cfg,
                                      std::size_t image_size) {
  std::vector<AugPair> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(sample_aug(rng, strength, cfg.aug, image_size));
  return out;
}

inline void check_loss(double v, const char* what, std::size_t step) {
  if (!std::isfinite(v)) {
    throw NumericalError(std::string(what) + " became non-finite at step " + std::to_string(step));
  }
}

// ---------------------------------------------------------------------------
// Parameter updates.

/// teacher <- alpha * teacher + (1 - alpha) * student, per block.
inline void ema_update(NetParams& teacher, const NetParams& student, double alpha) {
  if (alpha < 0 || alpha > 1) throw ConfigError("ema_update: alpha must lie in [0,1]");
  if (teacher.blocks.size() != student.blocks.size()) throw ShapeError("ema_update: block count mismatch");
  for (std::size_t b = 0; b < teacher.blocks.size(); ++b) {
    Tensor& t = teacher.blocks[b].value;
    const Tensor& s = student.blocks[b].value;
    require_same_shape(t.shape(), s.shape(), "ema_update");
    for (std::size_t i = 0; i < t.numel(); ++i) t[i] = alpha * t[i] + (1.0 - alpha) * s[i];
  }
}

inline void optimizer_step(NetState& net, double lr, bool mask_trainable) {
  const auto params = net.params.optim_params(!mask_trainable);
  adam_step(params, net.adam, lr);
}

// ---------------------------------------------------------------------------
// Supervised source initialization.

struct SourceResult {
  NetParams params;
  std::vector<double> losses;  // L_task per step
};

inline SourceResult train_source(const TrainConfig& cfg, const ArchConfig& arch, const Dataset& source,
                                 const std::function<void(std::size_t, double)>& on_step = {}) {
  cfg.validate();
  arch.validate();
  NetState net{build_network(arch, derive_seed(cfg.seed, "source-init")), {}};
  const LabeledSet labeled = make_labeled(source, arch, cfg.heatmap_sigma);
  Rng batches(derive_seed(cfg.seed, "source-pretrain-batch"));
  SourceResult r;
  for (std::size_t step = 0; step < cfg.source_steps; ++step) {
    const auto idx = draw_batch(batches, source.size(), cfg.source_batch);
    const auto images = gather_images(source, idx);
    Graph g;
    const PredictionVars pred = forward(g, net.params, to_nchw(images));
    const Var loss = loss_task(pred, gather_labels(labeled, idx), cfg.weights, cfg.tasks);
    const double v = loss.value().item();
    check_loss(v, "source loss", step);
    net.params.zero_grad();
    g.backward(loss);
    optimizer_step(net, cfg.lr_source, uses_mask(cfg.tasks));
    r.losses.push_back(v);
    if (on_step) on_step(step, v);
  }
  r.params = std::move(net.params);
  return r;
}

// ---------------------------------------------------------------------------
// Confidence by dropout (UMA-like baseline).

struct DropoutConfidence {
  double variance = 0;  // task-weighted mean per-element variance across forwards
  double weight = 1;
};

/// Runs n stochastic forwards with dropout on the backbone features of a
/// single [1,C,H,W] image and squashes the spread as the confidence weight.
inline DropoutConfidence dropout_confidence(const NetParams& params, const Tensor& image, std::size_t n_forwards,
                                            double drop_rate, Rng& rng, const LossWeights& w,
                                            TaskSet tasks = TaskSet::kBoth) {
  if (n_forwards < 2) throw ConfigError("dropout_confidence: n_forwards must be at least 2");
  DropoutSpec spec{drop_rate, &rng};
  std::vector<Prediction> preds;
  for (std::size_t i = 0; i < n_forwards; ++i) preds.push_back(predict(params, image, &spec));
  auto mean_variance = [&](auto field) {
    const std::size_t m = field(preds[0]).numel();
    double acc = 0;
    for (std::size_t e = 0; e < m; ++e) {
      double mean = 0;
      for (const auto& p : preds) mean += field(p)[e];
      mean /= static_cast<double>(n_forwards);
      double var = 0;
      for (const auto& p : preds) var += (field(p)[e] - mean) * (field(p)[e] - mean);
      acc += var / static_cast<double>(n_forwards - 1);
    }
    return acc / static_cast<double>(m);
  };
  DropoutConfidence c;
  if (uses_pose(tasks)) c.variance += w.pose() * mean_variance([](const Prediction& p) -> const Tensor& { return p.heatmaps; });
  if (uses_mask(tasks)) c.variance += w.lambda_m_tilde * mean_variance([](const Prediction& p) -> const Tensor& { return p.mask_prob; });
  c.weight = confidence_weight(c.variance, w.lambda_d);
  return c;
}

// ---------------------------------------------------------------------------
// Adaptation.

struct AdaptResult {
  TrainerState state;
  std::vector<StepLog> log;
};

inline std::size_t teacher_count(Method m) {
  switch (m) {
    case Method::kCgac: return 2;
    case Method::kGacMt:
    case Method::kGacDistill: return 1;
    default: return 0;
  }
}

namespace detail {

/// One distillation step of a teacher on its own minibatch and augmentation.
inline double distill_step(NetState& teacher, const NetParams& student, const Dataset& target, Rng& batch_rng,
                           Rng& aug_rng, const TrainConfig& cfg, const ActiveSet& active, std::size_t step) {
  const auto idx = draw_batch(batch_rng, target.size(), cfg.batch_target);
  const auto images = gather_images(target, idx);
  const auto augs = draw_augs(aug_rng, images.size(), AugStrength::kWeak, cfg, student.arch.image_size);
  const Tensor augmented = augment_batch(images, augs);
  Graph g;
  const PredictionVars stu = forward(g, const_cast<NetParams&>(student), augmented, GradMode::kNone);
  const Var loss = loss_distill(g, teacher.params, stu, augmented, cfg.weights, active.tasks);
  const double v = loss.value().item();
  check_loss(v, "distillation loss", step);
  teacher.params.zero_grad();
  g.backward(loss);
  optimizer_step(teacher, cfg.lr_teacher * cfg.lr_scale, active.mask_branch_trainable);
  return v;
}

}  // namespace detail

/// The shared adaptation loop. Every method consumes the source and student
/// streams identically, so methods differ only in the unlabeled term and
/// in how teachers evolve.
inline AdaptResult run_adaptation(const TrainConfig& cfg, const Dataset& source, const Dataset& target,
                                  const NetParams& init, const StepObserver& observer = {}) {
  cfg.validate();
  if (target.size() == 0 || source.size() == 0) throw ConfigError("adaptation needs non-empty source and target sets");
  AdaptResult r;
  TrainerState& st = r.state;
  st.student.params = init;
  for (std::size_t t = 0; t < teacher_count(cfg.method); ++t) st.teachers.push_back({init, {}});
  st.streams = RngStreams(cfg.seed);
  const std::size_t image_size = init.arch.image_size;
  const LabeledSet labeled = make_labeled(source, init.arch, cfg.heatmap_sigma);
  const ConsistencyOptions copt{cfg.decode_temperature, true};
  const double lr_student = cfg.lr_student * cfg.lr_scale;

  for (std::size_t step = 0; step < cfg.steps; ++step) {
    const ActiveSet active = stage_schedule(step, cfg);
    st.step = step;
    st.stage = active.stage;
    StepLog log;
    log.step = step;
    log.stage = active.stage;

    // (a) student: supervised source term plus the unlabeled term.
    const auto sidx = draw_batch(st.streams("source-batch"), source.size(), cfg.batch_source);
    const auto tidx = draw_batch(st.streams("target-batch-student"), target.size(), cfg.batch_target);
    const auto augs = draw_augs(st.streams("aug-student"), tidx.size(), AugStrength::kStrong, cfg, image_size);
    const auto timages = gather_images(target, tidx);

    Graph g;
    const PredictionVars spred = forward(g, st.student.params, to_nchw(gather_images(source, sidx)));
    Var loss = loss_task(spred, gather_labels(labeled, sidx), cfg.weights, active.tasks);
    log.l_task = loss.value().item();

    if (cfg.method != Method::kSourceOnly) {
      Var unlabeled;
      std::vector<double> w(tidx.size(), 1.0);
      switch (cfg.method) {
        case Method::kGac: {
          unlabeled = loss_gac(g, st.student.params, timages, augs, cfg.weights, active.tasks, copt).loss;
          break;
        }
        case Method::kGacUma: {
          const Tensor clean = to_nchw(timages);
          for (std::size_t i = 0; i < tidx.size(); ++i) {
            const Tensor one = to_nchw(std::span<const Tensor>(&timages[i], 1));
            w[i] = dropout_confidence(st.student.params, one, cfg.uma_forwards, cfg.uma_drop_rate, st.streams("dropout"),
                                      cfg.weights, active.tasks)
                       .weight;
          }
          const Prediction self = predict(st.student.params, clean);
          const ConsistencyTarget tgt = align_target(self, augs, w, copt);
          unlabeled = consistency_loss(forward(g, st.student.params, augment_batch(timages, augs)), tgt, cfg.weights,
                                       active.tasks);
          break;
        }
        case Method::kGacMt:
        case Method::kGacDistill: {
          const Prediction tp = predict(st.teachers[0].params, to_nchw(timages));
          unlabeled = loss_cgac(g, st.student.params, tp, w, timages, augs, cfg.weights, active.tasks, copt);
          break;
        }
        case Method::kCgac: {
          const Tensor clean = to_nchw(timages);
          const Prediction p1 = predict(st.teachers[0].params, clean);
          const Prediction p2 = predict(st.teachers[1].params, clean);
          const auto d = disagreements(p1, p2, cfg.weights, active.tasks);
          for (std::size_t i = 0; i < w.size(); ++i) {
            w[i] = cfg.confidence_override ? *cfg.confidence_override : confidence_weight(d[i], cfg.weights.lambda_d);
          }
          unlabeled = loss_cgac(g, st.student.params, ensemble(p1, p2), w, timages, augs, cfg.weights, active.tasks, copt);
          break;
        }
        case Method::kSourceOnly: break;
      }
      log.l_consistency = unlabeled.value().item();
      log.w_mean = 0;
      log.w_min = *std::min_element(w.begin(), w.end());
      log.w_max = *std::max_element(w.begin(), w.end());
      for (double v : w) log.w_mean += v / static_cast<double>(w.size());
      loss = add(loss, scale(unlabeled, cfg.consistency_weight));
    }
    check_loss(loss.value().item(), "student loss", step);
    st.student.params.zero_grad();
    g.backward(loss);
    optimizer_step(st.student, lr_student, active.mask_branch_trainable);

    // (b), (c) teachers.
    if (cfg.method == Method::kGacMt) {
      ema_update(st.teachers[0].params, st.student.params, cfg.ema_alpha);
    } else if (cfg.method == Method::kGacDistill) {
      log.l_distill1 = detail::distill_step(st.teachers[0], st.student.params, target, st.streams("target-batch-teacher1"),
                                            st.streams("aug-teacher1"), cfg, active, step);
    } else if (cfg.method == Method::kCgac) {
      switch (cfg.teacher_update) {
        case TeacherUpdate::kDistill:
          log.l_distill1 = detail::distill_step(st.teachers[0], st.student.params, target,
                                                st.streams("target-batch-teacher1"), st.streams("aug-teacher1"), cfg,
                                                active, step);
          log.l_distill2 = detail::distill_step(st.teachers[1], st.student.params, target,
                                                st.streams("target-batch-teacher2"), st.streams("aug-teacher2"), cfg,
                                                active, step);
          break;
        case TeacherUpdate::kEma:
          for (auto& t : st.teachers) ema_update(t.params, st.student.params, cfg.ema_alpha);
          break;
        case TeacherUpdate::kSynchronized:
          log.l_distill1 = detail::distill_step(st.teachers[0], st.student.params, target,
                                                st.streams("target-batch-teacher1"), st.streams("aug-teacher1"), cfg,
                                                active, step);
          log.l_distill2 = log.l_distill1;
          st.teachers[1] = st.teachers[0];
          break;
        case TeacherUpdate::kFrozen: break;
      }
    }
    r.log.push_back(log);
    if (observer) observer(st, log);
  }
  st.step = cfg.steps;
  return r;
}

inline AdaptResult with_method(Method m, TrainConfig cfg, const Dataset& source, const Dataset& target,
                               const NetParams& init, const StepObserver& observer) {
  cfg.method = m;
  return run_adaptation(cfg, source, target, init, observer);
}

/// C-GAC: student on L_task + L_cgac, two teachers distilled from the student.
inline AdaptResult adapt(const TrainConfig& cfg, const Dataset& source, const Dataset& target, const NetParams& init,
                         const StepObserver& observer = {}) {
  return with_method(Method::kCgac, cfg, source, target, init, observer);
}

inline AdaptResult adapt_gac(const TrainConfig& cfg, const Dataset& source, const Dataset& target, const NetParams& init,
                             const StepObserver& observer = {}) {
  return with_method(Method::kGac, cfg, source, target, init, observer);
}

inline AdaptResult adapt_gac_mt(const TrainConfig& cfg, const Dataset& source, const Dataset& target,
                                const NetParams& init, const StepObserver& observer = {}) {
  return with_method(Method::kGacMt, cfg, source, target, init, observer);
}

inline AdaptResult adapt_gac_distill(const TrainConfig& cfg, const Dataset& source, const Dataset& target,
                                     const NetParams& init, const StepObserver& observer = {}) {
  return with_method(Method::kGacDistill, cfg, source, target, init, observer);
}

inline AdaptResult adapt_gac_uma(const TrainConfig& cfg, const Dataset& source, const Dataset& target,
                                 const NetParams& init, const StepObserver& observer = {}) {
  return with_method(Method::kGacUma, cfg, source, target, init, observer);
}

/// Final prediction: the teachers' ensemble, the single teacher, or the
/// network itself, depending on how many teachers the state carries.
inline Prediction infer(const TrainerState& st, const Tensor& images) {
  if (st.teachers.size() >= 2) return ensemble(predict(st.teachers[0].params, images), predict(st.teachers[1].params, images));
  if (st.teachers.size() == 1) return predict(st.teachers[0].params, images);
  return predict(st.student.params, images);
}

// ---------------------------------------------------------------------------
// Logs.

inline void write_step_log(const std::filesystem::path& path, std::span<const StepLog> log) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.precision(10);
  out << "step,l_task,l_consistency,l_distill1,l_distill2,w_mean,w_min,w_max,stage\n";
  for (const auto& l : log) {
    out << l.step << ',' << l.l_task << ',' << l.l_consistency << ',' << l.l_distill1 << ',' << l.l_distill2 << ','
        << l.w_mean << ',' << l.w_min << ',' << l.w_max << ',' << stage_name(l.stage) << '\n';
  }
}

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"method", method_name(c.method)},
       {"tasks", tasks_name(c.tasks)},
       {"weights",
        {{"lambda_p", c.weights.lambda_p},
         {"lambda_m", c.weights.lambda_m},
         {"lambda_m_tilde", c.weights.lambda_m_tilde},
         {"lambda_d", c.weights.lambda_d},
         {"pose_scale", c.weights.pose_scale}}},
       {"source_steps", c.source_steps},
       {"source_batch", c.source_batch},
       {"lr_source", c.lr_source},
       {"steps", c.steps},
       {"batch_source", c.batch_source},
       {"batch_target", c.batch_target},
       {"lr_student", c.lr_student},
       {"lr_teacher", c.lr_teacher},
       {"lr_scale", c.lr_scale},
       {"stage_switch_fraction", c.stage_switch_fraction},
       {"ema_alpha", c.ema_alpha},
       {"consistency_weight", c.consistency_weight},
       {"heatmap_sigma", c.heatmap_sigma},
       {"decode_temperature", c.decode_temperature},
       {"uma_drop_rate", c.uma_drop_rate},
       {"uma_forwards", c.uma_forwards},
       {"seed", c.seed}};
  if (c.stage_switch_step) j["stage_switch_step"] = *c.stage_switch_step;
}

}  // namespace handadapt
