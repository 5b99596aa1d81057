#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "handadapt/adaptloss/losses.hpp"
#include "handadapt/autodiff/gradcheck.hpp"
#include "handadapt/autodiff/ops.hpp"
#include "handadapt/nethead/heatmap.hpp"
#include "handadapt/nethead/network.hpp"
#include "handadapt/rng.hpp"

namespace handadapt {

/// Hash of every discrete branch decision in a recorded graph: ReLU input
/// signs, max-pool argmax positions and the smooth-L1 quadratic/linear
/// regime. Two parameter vectors with equal signatures lie on the same
/// smooth piece of the objective.
inline std::uint64_t kink_signature(const Graph& g) {
  std::uint64_t h = 1469598103934665603ull;
  auto mix = [&h](std::uint64_t v) {
    h ^= v;
    h *= 1099511628211ull;
  };
  for (std::size_t id = 0; id < g.size(); ++id) {
    const auto& n = g.node(id);
    switch (n.kind) {
      case OpKind::kRelu:
        for (double v : g.value(n.inputs[0]).data()) mix(v > 0.0);
        break;
      case OpKind::kSmoothL1:
        for (double v : g.value(n.inputs[0]).data()) mix(std::abs(v) < 1.0);
        break;
      case OpKind::kMaxPool2x2: {
        const Tensor& x = g.value(n.inputs[0]);
        const std::size_t planes = x.dim(0) * x.dim(1), hh = x.dim(2), ww = x.dim(3);
        for (std::size_t p = 0; p < planes; ++p)
          for (std::size_t y = 0; y + 1 < hh; y += 2)
            for (std::size_t xx = 0; xx + 1 < ww; xx += 2) {
              const double* base = &x.data()[p * hh * ww];
              std::size_t best = y * ww + xx;
              for (std::size_t k : {y * ww + xx + 1, (y + 1) * ww + xx, (y + 1) * ww + xx + 1}) {
                if (base[k] > base[best]) best = k;
              }
              mix(best);
            }
        break;
      }
      default: break;
    }
  }
  return h;
}

struct GradcheckReport {
  std::string name;
  std::size_t checked = 0;   // coordinates compared
  std::size_t excluded = 0;  // coordinates whose difference stencil crosses a kink
  double max_rel_error = 0;
  double tolerance = 0;
  bool passed() const { return max_rel_error < tolerance && checked > 0; }
};

struct GradcheckOptions {
  double step = 1e-5;
  double tolerance = 1e-6;
  double floor = 1e-8;  // denominator floor of the relative error
  std::optional<std::size_t> max_coords_per_tensor;  // random subset when set
  std::uint64_t seed = 0;
};

/// Compares backward() with central differences for every (or a random
/// subset of) coordinate of `params`. `build` records the objective on a
/// fresh graph, registering the parameters with Graph::leaf.
inline GradcheckReport check_gradients(const std::string& name, const std::vector<Tensor*>& params,
                                       const std::function<Var(Graph&)>& build, const GradcheckOptions& opt) {
  GradcheckReport rep;
  rep.name = name;
  rep.tolerance = opt.tolerance;
  for (Tensor* p : params) {
    p->set_requires_grad(true);
    p->zero_grad();
  }
  std::uint64_t base_sig = 0;
  {
    Graph g;
    const Var loss = build(g);
    base_sig = kink_signature(g);
    g.backward(loss);
  }
  auto evaluate = [&](std::uint64_t& sig) {
    Graph g;
    const double v = build(g).value().item();
    sig = kink_signature(g);
    return v;
  };
  Rng rng(derive_seed(opt.seed, "gradcheck/" + name));
  for (Tensor* p : params) {
    const std::vector<double> analytic = p->grad() ? *p->grad() : std::vector<double>(p->numel(), 0.0);
    std::vector<std::size_t> coords(p->numel());
    for (std::size_t i = 0; i < coords.size(); ++i) coords[i] = i;
    if (opt.max_coords_per_tensor && coords.size() > *opt.max_coords_per_tensor) {
      for (std::size_t i = 0; i < *opt.max_coords_per_tensor; ++i) {
        std::swap(coords[i], coords[i + rng.uniform_index(coords.size() - i)]);
      }
      coords.resize(*opt.max_coords_per_tensor);
    }
    for (std::size_t i : coords) {
      const double orig = p->data()[i];
      std::uint64_t sp = 0, sm = 0;
      p->data()[i] = orig + opt.step;
      const double fp = evaluate(sp);
      p->data()[i] = orig - opt.step;
      const double fm = evaluate(sm);
      p->data()[i] = orig;
      if (!std::isfinite(fp) || !std::isfinite(fm)) throw NumericalError("gradcheck " + name + ": non-finite objective");
      if (sp != base_sig || sm != base_sig) {
        ++rep.excluded;
        continue;
      }
      const double numeric = (fp - fm) / (2.0 * opt.step);
      rep.max_rel_error = std::max(rep.max_rel_error, relative_error(analytic[i], numeric, opt.floor));
      ++rep.checked;
    }
  }
  return rep;
}

namespace detail {

inline Tensor random_tensor(Rng& rng, Shape shape, double lo = -2.0, double hi = 2.0) {
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

// Weighted sum against a fixed random tensor: every output element gets a
// distinct, nonzero sensitivity.
inline Var project(Graph& g, Var y, std::uint64_t seed) {
  Rng rng(seed);
  return sum(mul(y, g.constant(random_tensor(rng, y.shape(), -1.0, 1.0))));
}

}  // namespace detail

/// One report per primitive, on random inputs in [-2, 2].
inline std::vector<GradcheckReport> check_primitives(std::uint64_t seed, const GradcheckOptions& base = {}) {
  std::vector<GradcheckReport> out;
  Rng rng(derive_seed(seed, "gradcheck-primitives"));
  const std::uint64_t proj = derive_seed(seed, "gradcheck-projection");
  auto unary = [&](const std::string& name, Shape shape, const std::function<Var(Var)>& op, double lo = -2.0, double hi = 2.0) {
    Tensor x = detail::random_tensor(rng, std::move(shape), lo, hi);
    out.push_back(check_gradients(name, {&x}, [&](Graph& g) { return detail::project(g, op(g.leaf(x)), proj); }, base));
  };
  auto binary = [&](const std::string& name, Shape sa, Shape sb, const std::function<Var(Var, Var)>& op) {
    Tensor a = detail::random_tensor(rng, std::move(sa));
    Tensor b = detail::random_tensor(rng, std::move(sb));
    out.push_back(check_gradients(name, {&a, &b}, [&](Graph& g) { return detail::project(g, op(g.leaf(a), g.leaf(b)), proj); }, base));
  };

  binary("add", {2, 3, 4}, {2, 3, 4}, [](Var a, Var b) { return add(a, b); });
  binary("sub", {2, 3, 4}, {2, 3, 4}, [](Var a, Var b) { return sub(a, b); });
  binary("mul", {2, 3, 4}, {2, 3, 4}, [](Var a, Var b) { return mul(a, b); });
  unary("scale", {3, 5}, [](Var a) { return scale(a, -1.7); });
  unary("add_scalar", {3, 5}, [](Var a) { return add_scalar(a, 0.3); });
  binary("matmul", {3, 4}, {4, 5}, [](Var a, Var b) { return matmul(a, b); });
  {
    Tensor x = detail::random_tensor(rng, {2, 3, 6, 5});
    Tensor w = detail::random_tensor(rng, {4, 3, 3, 3});
    Tensor b = detail::random_tensor(rng, {4});
    out.push_back(check_gradients("conv2d_3x3", {&x, &w, &b},
                                  [&](Graph& g) { return detail::project(g, conv2d(g.leaf(x), g.leaf(w), g.leaf(b)), proj); }, base));
    Tensor w1 = detail::random_tensor(rng, {2, 3, 1, 1});
    Tensor b1 = detail::random_tensor(rng, {2});
    out.push_back(check_gradients("conv2d_1x1", {&x, &w1, &b1},
                                  [&](Graph& g) { return detail::project(g, conv2d(g.leaf(x), g.leaf(w1), g.leaf(b1)), proj); }, base));
  }
  unary("upsample2x", {2, 2, 3, 4}, [](Var a) { return upsample2x(a); });
  unary("maxpool2x2", {2, 2, 4, 6}, [](Var a) { return maxpool2x2(a); });
  unary("relu", {4, 6}, [](Var a) { return relu(a); });
  unary("sigmoid", {4, 6}, [](Var a) { return sigmoid(a); });
  unary("exp", {4, 6}, [](Var a) { return exp(a); });
  unary("log", {4, 6}, [](Var a) { return log(a); }, 0.1, 2.0);
  unary("sum", {3, 4}, [](Var a) { return scale(mul(sum(a), sum(a)), 0.5); });
  unary("mean", {3, 4}, [](Var a) { return scale(mul(mean(a), mean(a)), 0.5); });
  binary("concat_channels", {2, 2, 3, 3}, {2, 3, 3, 3}, [](Var a, Var b) { return concat_channels({a, b}); });
  unary("spatial_softmax", {2, 3, 4, 4}, [](Var a) { return spatial_softmax(a); });
  unary("reshape", {2, 6}, [](Var a) { return reshape(a, {3, 4}); });
  unary("smooth_l1", {4, 6}, [](Var a) { return smooth_l1(a); });
  {
    Tensor z = detail::random_tensor(rng, {3, 5});
    Tensor y({3, 5});
    for (double& v : y.data()) v = rng.bernoulli(0.5) ? 1.0 : 0.0;
    out.push_back(check_gradients("bce_with_logits", {&z},
                                  [&](Graph& g) { return detail::project(g, bce_with_logits(g.leaf(z), y), proj); }, base));
  }
  return out;
}

/// stop_gradient: the forward is the identity and the stopped path adds
/// nothing. Reported as a check of the exact-zero contract: L = sum(R *
/// x * sg(x)) must give grad R * x, bit for bit.
inline GradcheckReport check_stop_gradient(std::uint64_t seed) {
  GradcheckReport rep;
  rep.name = "stop_gradient";
  rep.tolerance = 1e-300;
  Rng rng(derive_seed(seed, "gradcheck-stop"));
  Tensor x = detail::random_tensor(rng, {3, 4});
  Tensor r = detail::random_tensor(rng, {3, 4}, -1.0, 1.0);
  x.set_requires_grad(true);
  x.zero_grad();
  Graph g;
  const Var xv = g.leaf(x);
  const Var sg = stop_gradient(xv);
  g.backward(sum(mul(mul(xv, sg), g.constant(r))));
  rep.max_rel_error = bitwise_equal(sg.value().data(), x.data()) ? 0.0 : 1.0;
  for (std::size_t i = 0; i < x.numel(); ++i) {
    ++rep.checked;
    if ((*x.grad())[i] != r[i] * x[i]) rep.max_rel_error = 1.0;
  }
  return rep;
}

/// The complete objective that touches every parameter block: supervised
/// two-head loss on a source batch plus confidence-weighted consistency on a
/// target batch (student) or distillation (teacher).
struct NetworkGradcheckSetup {
  ArchConfig arch;
  std::size_t batch = 2;
  std::uint64_t seed = 0;
};

inline std::vector<GradcheckReport> check_network_losses(const NetworkGradcheckSetup& setup, const GradcheckOptions& opt) {
  Rng rng(derive_seed(setup.seed, "gradcheck-network"));
  const ArchConfig& arch = setup.arch;
  const std::size_t s = arch.image_size, g = arch.grid_size(), n = setup.batch, k = arch.num_joints;
  NetParams student = build_network(arch, derive_seed(setup.seed, "gradcheck-student"));
  NetParams teacher = build_network(arch, derive_seed(setup.seed, "gradcheck-teacher"));

  std::vector<Tensor> src, tgt, heat, masks;
  for (std::size_t i = 0; i < n; ++i) {
    src.push_back(detail::random_tensor(rng, {s, s, 3}, 0.0, 1.0));
    tgt.push_back(detail::random_tensor(rng, {s, s, 3}, 0.0, 1.0));
    Keypoints kp(k);
    for (auto& p : kp) p = {rng.uniform(2.0, s - 3.0), rng.uniform(2.0, s - 3.0)};
    heat.push_back(encode_heatmaps(kp, 1.5, g, g, s, s).maps);
    Tensor m({1, s, s});
    for (double& v : m.data()) v = rng.bernoulli(0.4) ? 1.0 : 0.0;
    masks.push_back(m);
  }
  const Labels labels{stack(heat), stack(masks)};
  AugConfig aug;
  std::vector<AugPair> augs;
  for (std::size_t i = 0; i < n; ++i) augs.push_back(sample_aug(rng, AugStrength::kStrong, aug, s));
  LossWeights w;
  const Tensor src_batch = to_nchw(src);
  const Tensor tgt_aug = augment_batch(tgt, augs);

  // Fixed "teacher ensemble" target and confidence, computed once.
  const Prediction p1 = predict(teacher, to_nchw(tgt));
  const Prediction p2 = predict(student, to_nchw(tgt));
  const auto d = disagreements(p1, p2, w);
  std::vector<double> wt;
  for (double v : d) wt.push_back(confidence_weight(v, w.lambda_d));
  const Prediction ens = ensemble(p1, p2);
  // L_gac's target is detached, so finite differences must hold it fixed;
  // the adaptloss tests show the in-graph detach gives the same gradient.
  const std::vector<double> ones(n, 1.0);
  const ConsistencyTarget gac_target = align_target(p2, augs, ones, ConsistencyOptions{});

  auto blocks = [](NetParams& p) {
    std::vector<Tensor*> out;
    for (auto& b : p.blocks) out.push_back(&b.value);
    return out;
  };
  std::vector<GradcheckReport> out;
  out.push_back(check_gradients(
      "network: L_task + L_cgac + L_gac (student)", blocks(student),
      [&](Graph& gr) {
        const Var task = loss_task(forward(gr, student, src_batch), labels, w);
        const Var cgac = loss_cgac(gr, student, ens, wt, tgt, augs, w);
        const Var gac = consistency_loss(forward(gr, student, tgt_aug), gac_target, w);
        return add(add(task, cgac), gac);
      },
      opt));
  out.push_back(check_gradients(
      "network: L_distill (teacher)", blocks(teacher),
      [&](Graph& gr) {
        const PredictionVars stu = forward(gr, student, tgt_aug, GradMode::kNone);
        return loss_distill(gr, teacher, stu, tgt_aug, w);
      },
      opt));
  return out;
}

}  // namespace handadapt
