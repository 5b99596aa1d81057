#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "handadapt/autodiff/adam.hpp"
#include "handadapt/autodiff/checkpoint.hpp"
#include "handadapt/autodiff/ops.hpp"
#include "handadapt/rng.hpp"

namespace handadapt {

struct ArchConfig {
  std::size_t image_size = 32;  // square inputs, H = W
  std::size_t in_channels = 3;
  // Backbone conv widths. A 2x2 max-pool follows the first block, so all
  // later blocks and both heads' first layers run at half resolution.
  std::vector<std::size_t> backbone_channels{8, 12, 12, 12};
  std::size_t pose_hidden = 12;
  std::size_t mask_hidden = 8;
  std::size_t num_joints = 21;

  std::size_t grid_size() const { return image_size / 2; }

  void validate() const {
    if (image_size == 0 || image_size % 4 != 0) throw ConfigError("arch: image_size must be a positive multiple of 4");
    if (in_channels == 0) throw ConfigError("arch: in_channels must be positive");
    if (backbone_channels.size() < 2) throw ConfigError("arch: backbone needs at least two blocks");
    for (auto c : backbone_channels)
      if (c == 0) throw ConfigError("arch: backbone channel widths must be positive");
    if (pose_hidden == 0 || mask_hidden == 0 || num_joints == 0) throw ConfigError("arch: widths must be positive");
  }

  friend bool operator==(const ArchConfig&, const ArchConfig&) = default;
};

inline void to_json(nlohmann::json& j, const ArchConfig& a) {
  j = {{"image_size", a.image_size},   {"in_channels", a.in_channels}, {"backbone_channels", a.backbone_channels},
       {"pose_hidden", a.pose_hidden}, {"mask_hidden", a.mask_hidden}, {"num_joints", a.num_joints}};
}

inline void from_json(const nlohmann::json& j, ArchConfig& a) {
  a.image_size = j.at("image_size").get<std::size_t>();
  a.in_channels = j.at("in_channels").get<std::size_t>();
  a.backbone_channels = j.at("backbone_channels").get<std::vector<std::size_t>>();
  a.pose_hidden = j.at("pose_hidden").get<std::size_t>();
  a.mask_hidden = j.at("mask_hidden").get<std::size_t>();
  a.num_joints = j.at("num_joints").get<std::size_t>();
}

enum class Branch { kBackbone, kPose, kMask };

struct ParamBlock {
  std::string name;
  Branch branch = Branch::kBackbone;
  Tensor value;
};

/// All parameters of one two-head network, partitioned by branch.
struct NetParams {
  ArchConfig arch;
  std::vector<ParamBlock> blocks;

  const ParamBlock& block(const std::string& name) const {
    for (const auto& b : blocks)
      if (b.name == name) return b;
    throw std::out_of_range("no parameter block " + name);
  }
  ParamBlock& block(const std::string& name) {
    return const_cast<ParamBlock&>(static_cast<const NetParams&>(*this).block(name));
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& b : blocks) n += b.value.numel();
    return n;
  }

  void zero_grad() {
    for (auto& b : blocks) b.value.zero_grad();
  }

  // Drops accumulated gradients of one branch, so Adam sees zeros there.
  void zero_grad(Branch branch) {
    for (auto& b : blocks)
      if (b.branch == branch) b.value.zero_grad();
  }

  std::vector<OptimParam> optim_params(bool freeze_mask_branch = false) {
    std::vector<OptimParam> out;
    for (auto& b : blocks) out.push_back({b.name, &b.value, freeze_mask_branch && b.branch == Branch::kMask});
    return out;
  }

  // Parameters only; gradients are not compared.
  bool bitwise_equal_to(const NetParams& other) const {
    if (!(arch == other.arch) || blocks.size() != other.blocks.size()) return false;
    for (std::size_t i = 0; i < blocks.size(); ++i) {
      if (blocks[i].name != other.blocks[i].name) return false;
      if (!bitwise_equal(blocks[i].value.data(), other.blocks[i].value.data())) return false;
    }
    return true;
  }
};

inline double squared_distance(const NetParams& a, const NetParams& b) {
  if (!(a.arch == b.arch)) throw ShapeError("squared_distance: architectures differ");
  double s = 0;
  for (std::size_t i = 0; i < a.blocks.size(); ++i)
    for (std::size_t j = 0; j < a.blocks[i].value.numel(); ++j) {
      const double d = a.blocks[i].value[j] - b.blocks[i].value[j];
      s += d * d;
    }
  return s;
}

inline const char* branch_name(Branch b) {
  switch (b) {
    case Branch::kBackbone: return "backbone";
    case Branch::kPose: return "pose";
    case Branch::kMask: return "mask";
  }
  return "?";
}

namespace detail {

inline void add_conv(NetParams& p, const std::string& name, Branch branch, std::size_t in, std::size_t out,
                     std::size_t k, Rng& rng, double bias_init = 0.0) {
  Tensor w({out, in, k, k});
  const double sd = std::sqrt(2.0 / static_cast<double>(in * k * k));
  for (double& v : w.data()) v = rng.normal(0.0, sd);
  w.set_requires_grad(true);
  Tensor b({out}, bias_init);
  b.set_requires_grad(true);
  p.blocks.push_back({name + ".weight", branch, std::move(w)});
  p.blocks.push_back({name + ".bias", branch, std::move(b)});
}

}  // namespace detail

/// He-normal weights, zero biases except the heatmap head, whose bias
/// starts the sigmoid near zero so untrained heatmaps are mostly dark.
inline NetParams build_network(const ArchConfig& arch, std::uint64_t seed) {
  arch.validate();
  Rng rng(derive_seed(seed, "network-init"));
  NetParams p;
  p.arch = arch;
  std::size_t in = arch.in_channels;
  for (std::size_t i = 0; i < arch.backbone_channels.size(); ++i) {
    detail::add_conv(p, "backbone.conv" + std::to_string(i + 1), Branch::kBackbone, in, arch.backbone_channels[i], 3, rng);
    in = arch.backbone_channels[i];
  }
  detail::add_conv(p, "pose.conv1", Branch::kPose, in, arch.pose_hidden, 3, rng);
  detail::add_conv(p, "pose.head", Branch::kPose, arch.pose_hidden, arch.num_joints, 1, rng, -2.0);
  detail::add_conv(p, "mask.conv1", Branch::kMask, in, arch.mask_hidden, 3, rng);
  detail::add_conv(p, "mask.head", Branch::kMask, arch.mask_hidden + arch.backbone_channels.front(), 1, 3, rng);
  return p;
}

inline Checkpoint to_checkpoint(const NetParams& p, nlohmann::json meta = nlohmann::json::object()) {
  Checkpoint c;
  meta["arch_config"] = p.arch;
  nlohmann::json branches = nlohmann::json::object();
  for (const auto& b : p.blocks) {
    c.tensors.push_back({b.name, Tensor(b.value.shape(), b.value.storage())});
    branches[b.name] = branch_name(b.branch);
  }
  meta["branches"] = branches;
  c.meta = std::move(meta);
  return c;
}

inline NetParams from_checkpoint(const Checkpoint& c) {
  if (!c.meta.contains("arch_config")) throw std::runtime_error("checkpoint has no arch_config");
  NetParams p = build_network(c.meta.at("arch_config").get<ArchConfig>(), 0);
  if (p.blocks.size() != c.tensors.size()) throw std::runtime_error("checkpoint block count does not match arch_config");
  for (std::size_t i = 0; i < p.blocks.size(); ++i) {
    if (p.blocks[i].name != c.tensors[i].name || p.blocks[i].value.shape() != c.tensors[i].tensor.shape()) {
      throw std::runtime_error("checkpoint block " + c.tensors[i].name + " does not match arch_config");
    }
    p.blocks[i].value.storage() = c.tensors[i].tensor.storage();
  }
  return p;
}

/// Network outputs as graph nodes. heatmaps [N,K,H/2,W/2] after sigmoid,
/// mask_logits and mask_prob [N,1,H,W].
struct PredictionVars {
  Var heatmaps;
  Var mask_logits;
  Var mask_prob;
};

/// Network outputs as plain values, same layout as PredictionVars.
struct Prediction {
  Tensor heatmaps;
  Tensor mask_logits;
  Tensor mask_prob;

  std::size_t batch() const { return heatmaps.dim(0); }

  Prediction instance(std::size_t i) const {
    auto one = [i](const Tensor& t) {
      Tensor s = handadapt::instance(t, i);
      Shape shape{1};
      shape.insert(shape.end(), s.shape().begin(), s.shape().end());
      return s.reshaped(shape);
    };
    return {one(heatmaps), one(mask_logits), one(mask_prob)};
  }
};

inline Prediction values_of(const PredictionVars& v) {
  return {v.heatmaps.value(), v.mask_logits.value(), v.mask_prob.value()};
}

// Per-step dropout on the backbone output features.
struct DropoutSpec {
  double rate = 0.0;
  Rng* rng = nullptr;
};

enum class GradMode { kTrack, kNone };

/// Two-head forward pass on [N,C,H,W] images in [0,1].
///
/// With GradMode::kTrack every parameter becomes a graph leaf and backward()
/// writes into the block tensors' grad slots; with kNone they enter as
/// constants.
inline PredictionVars forward(Graph& g, NetParams& params, const Tensor& images, GradMode mode = GradMode::kTrack,
                              const DropoutSpec* dropout = nullptr) {
  const ArchConfig& arch = params.arch;
  if (images.rank() != 4 || images.dim(1) != arch.in_channels || images.dim(2) != arch.image_size ||
      images.dim(3) != arch.image_size) {
    throw ShapeError("forward: images " + shape_str(images.shape()) + " do not match arch (C=" +
                     std::to_string(arch.in_channels) + ", size=" + std::to_string(arch.image_size) + ")");
  }
  for (double v : images.data()) {
    if (!std::isfinite(v)) throw NumericalError("forward: non-finite input pixel");
    if (v < 0.0 || v > 1.0) throw ConfigError("forward: input pixels must lie in [0,1]");
  }

  auto param = [&](const std::string& name) -> Var {
    auto& b = params.block(name);
    return mode == GradMode::kTrack ? g.leaf(b.value) : g.constant(b.value);
  };
  std::string layer;
  auto conv = [&](Var x, const std::string& name) {
    layer = name;
    return conv2d(x, param(name + ".weight"), param(name + ".bias"));
  };

  try {
    Var x = g.constant(images);
    Var skip = relu(conv(x, "backbone.conv1"));
    layer = "backbone.pool";
    Var h = maxpool2x2(skip);
    for (std::size_t i = 1; i < arch.backbone_channels.size(); ++i) {
      h = relu(conv(h, "backbone.conv" + std::to_string(i + 1)));
    }
    if (dropout != nullptr && dropout->rate > 0.0) {
      layer = "backbone.dropout";
      Tensor keep(h.shape());
      const double s = 1.0 / (1.0 - dropout->rate);
      for (double& v : keep.data()) v = dropout->rng->bernoulli(dropout->rate) ? 0.0 : s;
      h = mul(h, g.constant(std::move(keep)));
    }

    Var pose = relu(conv(h, "pose.conv1"));
    Var heat_logits = conv(pose, "pose.head");
    layer = "pose.sigmoid";
    Var heatmaps = sigmoid(heat_logits);

    Var m = relu(conv(h, "mask.conv1"));
    layer = "mask.upsample";
    m = upsample2x(m);
    m = concat_channels({m, skip});
    Var mask_logits = conv(m, "mask.head");
    layer = "mask.sigmoid";
    Var mask_prob = sigmoid(mask_logits);
    return {heatmaps, mask_logits, mask_prob};
  } catch (const NumericalError& e) {
    throw NumericalError("forward: layer " + layer + ": " + e.what());
  }
}

// Gradient-free forward on a private graph.
inline Prediction predict(const NetParams& params, const Tensor& images, const DropoutSpec* dropout = nullptr) {
  Graph g;
  return values_of(forward(g, const_cast<NetParams&>(params), images, GradMode::kNone, dropout));
}

/// Stacks [H,W,C] images into one [N,C,H,W] batch.
inline Tensor to_nchw(std::span<const Tensor> images) {
  if (images.empty()) throw ShapeError("to_nchw: empty batch");
  const std::size_t h = images[0].dim(0), w = images[0].dim(1), c = images[0].dim(2);
  Tensor out({images.size(), c, h, w});
  for (std::size_t n = 0; n < images.size(); ++n) {
    if (images[n].shape() != images[0].shape()) throw ShapeError("to_nchw: mixed image shapes");
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x)
        for (std::size_t ch = 0; ch < c; ++ch) out[((n * c + ch) * h + y) * w + x] = images[n][(y * w + x) * c + ch];
  }
  return out;
}

}  // namespace handadapt
