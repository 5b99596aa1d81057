#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "handadapt/evalkit/metrics.hpp"
#include "handadapt/gradcheck_suite.hpp"
#include "handadapt/json_reader.hpp"
#include "handadapt/trainer/trainer.hpp"

namespace handadapt {

// ---------------------------------------------------------------------------
// Configuration.

struct DatasetSpec {
  DomainConfig source = DomainConfig::default_source();
  DomainConfig target = DomainConfig::default_target();
  std::size_t n_train = 2000;
  std::size_t n_val = 200;
  std::size_t n_test = 200;
};

struct EvalConfig {
  std::optional<double> pck_max_px;  // default: 20 px scaled by image_size / 128
  std::size_t pck_thresholds = 20;
  double iou_threshold = 0.5;
  std::size_t batch = 16;
  std::size_t correlation_bins = 10;
  BoneGroup bone_group = BoneGroup::kWristMcp;
  double kde_bandwidth = 0.3;  // px
  std::size_t kde_grid_points = 256;

  EvalOptions options(std::size_t image_size) const {
    return {pck_max_px.value_or(pck_max_threshold(image_size)), pck_thresholds, iou_threshold};
  }
};

struct ExperimentConfig {
  std::uint64_t seed = 7;
  DatasetSpec dataset;
  ArchConfig arch;
  TrainConfig train;  // train.aug and train.seed are filled from the top level
  EvalConfig eval;
  std::filesystem::path output_dir = "out";
};

enum class Split { kTrain, kVal, kTest };

inline const char* split_name(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kVal: return "val";
    case Split::kTest: return "test";
  }
  return "?";
}

inline Split parse_split(const std::string& s) {
  for (Split v : {Split::kTrain, Split::kVal, Split::kTest}) {
    if (s == split_name(v)) return v;
  }
  throw ConfigError("unknown split '" + s + "' (train|val|test)");
}

// Disjoint generator index ranges per split.
inline std::uint64_t split_offset(Split s) {
  switch (s) {
    case Split::kTrain: return 0;
    case Split::kVal: return 1'000'000;
    case Split::kTest: return 2'000'000;
  }
  return 0;
}

namespace detail {

inline AugConfig aug_from_json(const nlohmann::json& j, const std::string& path) {
  ObjectReader r(j, path);
  AugConfig a;
  a.flip_prob = r.get("flip_prob", a.flip_prob);
  a.weak_rotation_deg = r.get("weak_rotation_deg", a.weak_rotation_deg);
  a.strong_rotation_deg = r.get("strong_rotation_deg", a.strong_rotation_deg);
  a.translate_frac = r.get("translate_frac", a.translate_frac);
  a.blur_sigma_max = r.get("blur_sigma_max", a.blur_sigma_max);
  a.blur_prob = r.get("blur_prob", a.blur_prob);
  r.range("brightness_range", a.brightness_min, a.brightness_max);
  r.range("contrast_range", a.contrast_min, a.contrast_max);
  a.hue_shift_max = r.get("hue_shift_max", a.hue_shift_max);
  r.range("saturation_range", a.saturation_min, a.saturation_max);
  a.cutout_max_boxes = r.get("cutout_max_boxes", a.cutout_max_boxes);
  a.cutout_max_area_frac = r.get("cutout_max_area_frac", a.cutout_max_area_frac);
  r.finish();
  try {
    a.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(path + ": " + e.what());
  }
  return a;
}

inline ArchConfig arch_from_json(const nlohmann::json& j, const std::string& path) {
  ObjectReader r(j, path);
  ArchConfig a;
  a.image_size = r.get("image_size", a.image_size);
  a.in_channels = r.get("in_channels", a.in_channels);
  a.backbone_channels = r.get("backbone_channels", a.backbone_channels);
  a.pose_hidden = r.get("pose_hidden", a.pose_hidden);
  a.mask_hidden = r.get("mask_hidden", a.mask_hidden);
  a.num_joints = r.get("num_joints", a.num_joints);
  r.finish();
  try {
    a.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(path + ": " + e.what());
  }
  if (a.num_joints != kNumJoints) throw ConfigError(path + ".num_joints: the synthetic hands have 21 joints");
  return a;
}

inline TrainConfig train_from_json(const nlohmann::json& j, const std::string& path) {
  ObjectReader r(j, path);
  TrainConfig t;
  t.method = parse_method(r.get<std::string>("method", method_name(t.method)));
  t.tasks = parse_tasks(r.get<std::string>("tasks", tasks_name(t.tasks)));
  if (const auto* w = r.child("weights")) {
    ObjectReader wr(*w, r.path("weights"));
    t.weights.lambda_p = wr.get("lambda_p", t.weights.lambda_p);
    t.weights.lambda_m = wr.get("lambda_m", t.weights.lambda_m);
    t.weights.lambda_m_tilde = wr.get("lambda_m_tilde", t.weights.lambda_m_tilde);
    t.weights.lambda_d = wr.get("lambda_d", t.weights.lambda_d);
    t.weights.pose_scale = wr.get("pose_scale", t.weights.pose_scale);
    wr.finish();
  }
  t.source_steps = r.get("source_steps", t.source_steps);
  t.source_batch = r.get("source_batch", t.source_batch);
  t.lr_source = r.get("lr_source", t.lr_source);
  t.steps = r.get("steps", t.steps);
  t.batch_source = r.get("batch_source", t.batch_source);
  t.batch_target = r.get("batch_target", t.batch_target);
  t.lr_student = r.get("lr_student", t.lr_student);
  t.lr_teacher = r.get("lr_teacher", t.lr_teacher);
  t.lr_scale = r.get("lr_scale", t.lr_scale);
  t.stage_switch_fraction = r.get("stage_switch_fraction", t.stage_switch_fraction);
  if (r.has("stage_switch_step")) t.stage_switch_step = r.require<std::size_t>("stage_switch_step");
  r.get<std::size_t>("stage_switch_step", 0);  // marks the key as known
  t.ema_alpha = r.get("ema_alpha", t.ema_alpha);
  t.consistency_weight = r.get("consistency_weight", t.consistency_weight);
  t.heatmap_sigma = r.get("heatmap_sigma", t.heatmap_sigma);
  t.decode_temperature = r.get("decode_temperature", t.decode_temperature);
  t.uma_drop_rate = r.get("uma_drop_rate", t.uma_drop_rate);
  t.uma_forwards = r.get("uma_forwards", t.uma_forwards);
  r.finish();
  return t;
}

inline EvalConfig eval_from_json(const nlohmann::json& j, const std::string& path) {
  ObjectReader r(j, path);
  EvalConfig e;
  if (r.has("pck_max_px")) e.pck_max_px = r.require<double>("pck_max_px");
  r.get<double>("pck_max_px", 0.0);
  e.pck_thresholds = r.get("pck_thresholds", e.pck_thresholds);
  e.iou_threshold = r.get("iou_threshold", e.iou_threshold);
  e.batch = r.get("batch", e.batch);
  e.correlation_bins = r.get("correlation_bins", e.correlation_bins);
  e.bone_group = parse_bone_group(r.get<std::string>("bone_group", bone_group_name(e.bone_group)));
  e.kde_bandwidth = r.get("kde_bandwidth", e.kde_bandwidth);
  e.kde_grid_points = r.get("kde_grid_points", e.kde_grid_points);
  r.finish();
  if (e.pck_max_px && !(*e.pck_max_px > 0)) throw ConfigError(path + ".pck_max_px: must be positive");
  if (e.pck_thresholds == 0) throw ConfigError(path + ".pck_thresholds: must be positive");
  if (!(e.iou_threshold > 0 && e.iou_threshold < 1)) throw ConfigError(path + ".iou_threshold: must lie in (0,1)");
  if (e.batch == 0 || e.correlation_bins == 0) throw ConfigError(path + ": batch and correlation_bins must be positive");
  if (!(e.kde_bandwidth > 0)) throw ConfigError(path + ".kde_bandwidth: must be positive");
  if (e.kde_grid_points < 2) throw ConfigError(path + ".kde_grid_points: needs at least 2");
  return e;
}

}  // namespace detail

/// Strict parse: unknown keys anywhere are rejected with their JSON path;
/// absent keys keep their defaults.
inline ExperimentConfig parse_experiment(const nlohmann::json& j) {
  ObjectReader r(j, "$");
  ExperimentConfig c;
  c.seed = r.get("seed", c.seed);
  if (const auto* d = r.child("dataset")) {
    ObjectReader dr(*d, "$.dataset");
    if (const auto* s = dr.child("source")) c.dataset.source = domain_from_json(*s, "$.dataset.source");
    if (const auto* t = dr.child("target")) c.dataset.target = domain_from_json(*t, "$.dataset.target");
    c.dataset.n_train = dr.get("n_train", c.dataset.n_train);
    c.dataset.n_val = dr.get("n_val", c.dataset.n_val);
    c.dataset.n_test = dr.get("n_test", c.dataset.n_test);
    dr.finish();
  }
  if (const auto* a = r.child("arch_config")) c.arch = detail::arch_from_json(*a, "$.arch_config");
  if (const auto* t = r.child("train")) c.train = detail::train_from_json(*t, "$.train");
  if (const auto* a = r.child("aug_config")) c.train.aug = detail::aug_from_json(*a, "$.aug_config");
  if (const auto* e = r.child("eval")) c.eval = detail::eval_from_json(*e, "$.eval");
  c.output_dir = r.get<std::string>("output_dir", c.output_dir.string());
  r.finish();

  c.train.seed = c.seed;
  if (c.dataset.n_train == 0 || c.dataset.n_val == 0 || c.dataset.n_test == 0) {
    throw ConfigError("$.dataset: n_train, n_val and n_test must be positive");
  }
  if (c.dataset.source.image_size != c.arch.image_size || c.dataset.target.image_size != c.arch.image_size) {
    throw ConfigError("$.dataset: domain image_size must equal arch_config.image_size");
  }
  try {
    c.train.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(std::string("$.train: ") + e.what());
  }
  return c;
}

inline ExperimentConfig load_experiment(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return parse_experiment(j);
}

inline nlohmann::json to_json(const ExperimentConfig& c) {
  nlohmann::json train = c.train;
  train.erase("seed");
  nlohmann::json eval = {{"pck_max_px", c.eval.options(c.arch.image_size).pck_max_px},
                         {"pck_thresholds", c.eval.pck_thresholds},
                         {"iou_threshold", c.eval.iou_threshold},
                         {"batch", c.eval.batch},
                         {"correlation_bins", c.eval.correlation_bins},
                         {"bone_group", bone_group_name(c.eval.bone_group)},
                         {"kde_bandwidth", c.eval.kde_bandwidth},
                         {"kde_grid_points", c.eval.kde_grid_points}};
  return {{"seed", c.seed},
          {"dataset",
           {{"source", c.dataset.source},
            {"target", c.dataset.target},
            {"n_train", c.dataset.n_train},
            {"n_val", c.dataset.n_val},
            {"n_test", c.dataset.n_test}}},
          {"arch_config", c.arch},
          {"aug_config", c.train.aug},
          {"train", train},
          {"eval", eval},
          {"output_dir", c.output_dir.string()}};
}

// ---------------------------------------------------------------------------
// Pipeline steps. Each one is a pure function of its inputs and overwrites
// its outputs, so reruns are idempotent.

using Progress = std::function<void(const std::string&)>;

inline const DomainConfig& domain_of(const ExperimentConfig& c, const std::string& domain) {
  if (domain == "source") return c.dataset.source;
  if (domain == "target") return c.dataset.target;
  throw ConfigError("unknown domain '" + domain + "' (source|target)");
}

inline std::size_t split_size(const ExperimentConfig& c, Split s) {
  switch (s) {
    case Split::kTrain: return c.dataset.n_train;
    case Split::kVal: return c.dataset.n_val;
    case Split::kTest: return c.dataset.n_test;
  }
  return 0;
}

inline Dataset experiment_dataset(const ExperimentConfig& c, const std::string& domain, Split split) {
  return generate_dataset(domain_of(c, domain), split_size(c, split), split_offset(split));
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  ensure_parent(path);
  std::ofstream out(path, std::ios::trunc | std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

/// Writes <out>/<domain>_<split>/ for both domains and all three splits.
inline void gen_data(const ExperimentConfig& c, const std::filesystem::path& out) {
  for (const char* domain : {"source", "target"}) {
    for (Split s : {Split::kTrain, Split::kVal, Split::kTest}) {
      write_dataset(experiment_dataset(c, domain, s), out / (std::string(domain) + "_" + split_name(s)));
    }
  }
}

/// Supervised source training. Writes source.ckpt and source_log.csv.
inline NetParams train_source_step(const ExperimentConfig& c, const std::filesystem::path& out) {
  const Dataset source = experiment_dataset(c, "source", Split::kTrain);
  const SourceResult r = train_source(c.train, c.arch, source);
  save_checkpoint(out / "source.ckpt", to_checkpoint(r.params, {{"role", "source"}, {"seed", c.seed}}));
  std::ostringstream log;
  log.precision(10);
  log << "step,l_task\n";
  for (std::size_t i = 0; i < r.losses.size(); ++i) log << i << ',' << r.losses[i] << '\n';
  write_text(out / "source_log.csv", log.str());
  return r.params;
}

/// Checkpoints that make up a method's final prediction, relative to its
/// output directory.
inline std::vector<std::string> inference_checkpoints(std::size_t n_teachers) {
  if (n_teachers == 0) return {"student.ckpt"};
  std::vector<std::string> out;
  for (std::size_t t = 0; t < n_teachers; ++t) out.push_back("teacher" + std::to_string(t + 1) + ".ckpt");
  return out;
}

/// Runs one adaptation method from `init`. Writes student.ckpt,
/// teacher<k>.ckpt, step_log.csv and inference.json under `out`.
inline AdaptResult adapt_step(const ExperimentConfig& c, Method method, const NetParams& init, const std::filesystem::path& out) {
  if (!(init.arch == c.arch)) throw ConfigError("adapt: initial checkpoint architecture differs from arch_config");
  TrainConfig t = c.train;
  t.method = method;
  const Dataset source = experiment_dataset(c, "source", Split::kTrain);
  const Dataset target = experiment_dataset(c, "target", Split::kTrain);
  AdaptResult r = run_adaptation(t, source, target, init);
  const nlohmann::json meta = {{"method", method_name(method)}, {"seed", c.seed}};
  save_checkpoint(out / "student.ckpt", to_checkpoint(r.state.student.params, meta));
  for (std::size_t k = 0; k < r.state.teachers.size(); ++k) {
    save_checkpoint(out / ("teacher" + std::to_string(k + 1) + ".ckpt"), to_checkpoint(r.state.teachers[k].params, meta));
  }
  write_step_log(out / "step_log.csv", r.log);
  write_text(out / "inference.json",
             nlohmann::json{{"method", method_name(method)}, {"checkpoints", inference_checkpoints(r.state.teachers.size())}}
                     .dump(2) +
                 "\n");
  return r;
}

/// Mean of the members' predictions (heatmaps and mask probabilities).
inline Prediction predict_ensemble(std::span<const NetParams> members, const Tensor& images) {
  if (members.empty()) throw ConfigError("predict_ensemble: no networks");
  Prediction acc = predict(members[0], images);
  for (std::size_t m = 1; m < members.size(); ++m) {
    const Prediction p = predict(members[m], images);
    for (std::size_t i = 0; i < acc.heatmaps.numel(); ++i) acc.heatmaps[i] += p.heatmaps[i];
    for (std::size_t i = 0; i < acc.mask_prob.numel(); ++i) acc.mask_prob[i] += p.mask_prob[i];
  }
  if (members.size() == 1) return acc;
  const double inv = 1.0 / static_cast<double>(members.size());
  for (double& v : acc.heatmaps.data()) v *= inv;
  for (std::size_t i = 0; i < acc.mask_prob.numel(); ++i) {
    const double q = acc.mask_prob[i] * inv;
    acc.mask_prob[i] = q;
    const double qc = std::clamp(q, 1e-12, 1.0 - 1e-12);
    acc.mask_logits[i] = std::log(qc) - std::log1p(-qc);
  }
  return acc;
}

struct DatasetPredictions {
  std::vector<Keypoints> coords;
  std::vector<Tensor> mask_prob;                // [1,1,H,W] per instance
  std::vector<double> disagreement;             // first two members; empty for one
};

inline DatasetPredictions predict_dataset(std::span<const NetParams> members, const Dataset& ds, const TrainConfig& train,
                                          std::size_t batch = 16) {
  DatasetPredictions out;
  const std::size_t s = ds.domain.image_size;
  for (const auto& m : members) {
    if (m.arch.image_size != s) throw ConfigError("checkpoint image_size differs from the dataset's");
  }
  for (std::size_t i = 0; i < ds.size(); i += batch) {
    const std::size_t e = std::min(ds.size(), i + batch);
    std::vector<Tensor> imgs;
    for (std::size_t j = i; j < e; ++j) imgs.push_back(ds.samples[j].image);
    const Tensor x = to_nchw(imgs);
    const Prediction p = predict_ensemble(members, x);
    if (members.size() >= 2) {
      const auto d = disagreements(predict(members[0], x), predict(members[1], x), train.weights, train.tasks);
      out.disagreement.insert(out.disagreement.end(), d.begin(), d.end());
    }
    for (std::size_t j = 0; j < e - i; ++j) {
      const Prediction one = p.instance(j);
      out.coords.push_back(decode_keypoints(instance(one.heatmaps, 0), train.decode_temperature, s, s).coords);
      out.mask_prob.push_back(one.mask_prob);
    }
  }
  for (const auto& kp : out.coords) {
    for (const auto& q : kp) {
      if (!std::isfinite(q.x) || !std::isfinite(q.y)) throw NumericalError("prediction produced a non-finite keypoint");
    }
  }
  return out;
}

inline MetricsRecord evaluate_predictions(const ExperimentConfig& c, const DatasetPredictions& p, const Dataset& ds) {
  std::vector<Keypoints> gk;
  std::vector<Tensor> gm;
  for (const auto& smp : ds.samples) {
    gk.push_back(smp.keypoints);
    gm.push_back(smp.mask);
  }
  return evaluate(p.coords, p.mask_prob, gk, gm, c.eval.options(ds.domain.image_size), p.disagreement);
}

/// Evaluates the ensemble of `members` on one split of one domain and writes
/// metrics.json and instances.csv under `out`.
inline MetricsRecord eval_step(const ExperimentConfig& c, std::span<const NetParams> members, Split split,
                               const std::string& domain, const std::filesystem::path& out) {
  const Dataset ds = experiment_dataset(c, domain, split);
  const MetricsRecord m = evaluate_predictions(c, predict_dataset(members, ds, c.train, c.eval.batch), ds);
  write_metrics_json(out / "metrics.json", m,
                     {{"domain", domain},
                      {"split", split_name(split)},
                      {"n_checkpoints", members.size()},
                      {"pck_max_px", c.eval.options(ds.domain.image_size).pck_max_px}});
  write_instance_csv(out / "instances.csv", m);
  return m;
}

struct AnalysisResult {
  CorrelationResult correlation;
  MetricsRecord metrics;  // teachers' ensemble on target val
  std::vector<std::pair<std::string, DensityCurve>> kde;  // ground truth first
  std::vector<std::pair<std::string, double>> kde_l1;     // each prediction vs ground truth
};

inline std::string fmt(double v) {
  std::ostringstream o;
  o.precision(10);
  o << v;
  return o.str();
}

/// Disagreement-vs-score correlation of the two teachers on target val, and
/// bone-length KDEs of the teachers' ensemble (plus optional baselines)
/// against ground truth. Writes CSV, SVG and analysis.json under `out`.
inline AnalysisResult analyze_step(const ExperimentConfig& c, const NetParams& t1, const NetParams& t2,
                                   const std::vector<std::pair<std::string, NetParams>>& baselines,
                                   const std::filesystem::path& out) {
  const Dataset val = experiment_dataset(c, "target", Split::kVal);
  const std::vector<NetParams> teachers{t1, t2};
  const DatasetPredictions pred = predict_dataset(teachers, val, c.train, c.eval.batch);
  AnalysisResult a;
  a.metrics = evaluate_predictions(c, pred, val);
  std::vector<double> scores;
  for (const auto& m : a.metrics.per_instance) scores.push_back(m.avg);
  a.correlation = disagreement_correlation(pred.disagreement, scores, c.eval.correlation_bins);

  std::ostringstream corr;
  corr.precision(10);
  corr << "index,disagreement,avg\n";
  for (std::size_t i = 0; i < scores.size(); ++i) corr << i << ',' << pred.disagreement[i] << ',' << scores[i] << '\n';
  write_text(out / "correlation.csv", corr.str());
  std::ostringstream bins;
  bins.precision(10);
  bins << "bin,disagreement_lo,disagreement_hi,mean_disagreement,mean_avg,count\n";
  Series binned{"mean Avg per disagreement bin", {}, {}};
  for (std::size_t b = 0; b < a.correlation.bins.size(); ++b) {
    const auto& bin = a.correlation.bins[b];
    bins << b << ',' << bin.disagreement_lo << ',' << bin.disagreement_hi << ',' << bin.mean_disagreement << ','
         << bin.mean_score << ',' << bin.count << '\n';
    binned.x.push_back(bin.mean_disagreement);
    binned.y.push_back(bin.mean_score);
  }
  write_text(out / "correlation_bins.csv", bins.str());
  write_text(out / "correlation.svg",
             svg_line_plot(std::span<const Series>(&binned, 1), "Spearman rho = " + fmt(a.correlation.spearman_rho),
                           "teacher disagreement", "per-instance Avg"));

  // KDEs on one shared grid so the L1 distances are well defined.
  std::vector<std::pair<std::string, std::vector<Keypoints>>> sources;
  std::vector<Keypoints> gt;
  for (const auto& smp : val.samples) gt.push_back(smp.keypoints);
  sources.emplace_back("ground_truth", gt);
  sources.emplace_back("adapted", pred.coords);
  for (const auto& [name, params] : baselines) {
    const std::vector<NetParams> one{params};
    sources.emplace_back(name, predict_dataset(one, val, c.train, c.eval.batch).coords);
  }
  double lo = 1e300, hi = -1e300;
  for (const auto& [name, coords] : sources) {
    for (double v : bone_lengths(coords, c.eval.bone_group)) lo = std::min(lo, v), hi = std::max(hi, v);
  }
  const std::pair<double, double> range{lo - 4 * c.eval.kde_bandwidth, hi + 4 * c.eval.kde_bandwidth};
  std::vector<Series> curves;
  for (const auto& [name, coords] : sources) {
    a.kde.emplace_back(name, bone_length_kde(coords, c.eval.bone_group, c.eval.kde_bandwidth, c.eval.kde_grid_points, range));
    curves.push_back({name, a.kde.back().second.x, a.kde.back().second.density});
  }
  for (std::size_t i = 1; i < a.kde.size(); ++i) a.kde_l1.emplace_back(a.kde[i].first, density_l1(a.kde[i].second, a.kde[0].second));

  const std::string group = bone_group_name(c.eval.bone_group);
  std::ostringstream kde;
  kde.precision(10);
  kde << "length";
  for (const auto& [name, curve] : a.kde) kde << ',' << name;
  kde << '\n';
  for (std::size_t i = 0; i < a.kde[0].second.x.size(); ++i) {
    kde << a.kde[0].second.x[i];
    for (const auto& [name, curve] : a.kde) kde << ',' << curve.density[i];
    kde << '\n';
  }
  write_text(out / ("kde_" + group + ".csv"), kde.str());
  write_text(out / ("kde_" + group + ".svg"), svg_line_plot(curves, group + " bone length KDE", "length [px]", "density"));

  nlohmann::json l1 = nlohmann::json::object();
  for (const auto& [name, v] : a.kde_l1) l1[name] = v;
  const nlohmann::json summary = {{"n_instances", scores.size()},
                                  {"spearman_rho", a.correlation.spearman_rho},
                                  {"correlation_degenerate", a.correlation.degenerate},
                                  {"target_val_avg", a.metrics.avg},
                                  {"bone_group", group},
                                  {"kde_bandwidth", c.eval.kde_bandwidth},
                                  {"kde_l1_to_ground_truth", l1}};
  write_text(out / "analysis.json", summary.dump(2) + "\n");
  return a;
}

inline std::vector<NetParams> load_networks(std::span<const std::filesystem::path> paths) {
  std::vector<NetParams> out;
  for (const auto& p : paths) {
    if (!std::filesystem::exists(p)) throw ConfigError("checkpoint not found: " + p.string());
    out.push_back(from_checkpoint(load_checkpoint(p)));
  }
  return out;
}

/// Source training, one adaptation method, and target test evaluation.
/// Layout: <out>/source.ckpt, <out>/<method>/..., <out>/<method>/eval/metrics.json.
inline MetricsRecord run_pipeline(const ExperimentConfig& c, Method method, const std::filesystem::path& out,
                                  const Progress& progress = {}) {
  if (progress) progress("train-source");
  const NetParams init = train_source_step(c, out);
  if (progress) progress(std::string("adapt ") + method_name(method));
  const std::filesystem::path mdir = out / method_name(method);
  const AdaptResult r = adapt_step(c, method, init, mdir);
  std::vector<NetParams> members;
  if (r.state.teachers.empty()) members.push_back(r.state.student.params);
  for (const auto& t : r.state.teachers) members.push_back(t.params);
  if (progress) progress("eval");
  return eval_step(c, members, Split::kTest, "target", mdir / "eval");
}

// ---------------------------------------------------------------------------
// Finite-difference suite.

struct GradcheckSuiteResult {
  std::vector<GradcheckReport> reports;
  bool passed() const {
    for (const auto& r : reports) {
      if (!r.passed()) return false;
    }
    return !reports.empty();
  }
};

/// Every primitive, the stop-gradient contract, and the full two-head
/// objectives on a small network, at relative tolerance 1e-4.
inline GradcheckSuiteResult run_gradcheck_suite(std::uint64_t seed = 1) {
  GradcheckSuiteResult r;
  GradcheckOptions prim;
  prim.tolerance = 1e-4;
  prim.seed = seed;
  r.reports = check_primitives(seed, prim);
  r.reports.push_back(check_stop_gradient(seed));
  // The network objective is O(1e3), so roundoff at step 1e-5 alone is
  // ~1e-5 relative on small gradients; 1e-4 keeps both error terms < 1e-5.
  GradcheckOptions net = prim;
  net.step = 1e-4;
  net.max_coords_per_tensor = 16;
  NetworkGradcheckSetup setup;
  setup.seed = seed;
  for (auto& rep : check_network_losses(setup, net)) r.reports.push_back(rep);
  return r;
}

}  // namespace handadapt
