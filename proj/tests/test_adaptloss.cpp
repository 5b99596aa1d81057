#include <gtest/gtest.h>

#include <cmath>

#include "handadapt/adaptloss/losses.hpp"
#include "handadapt/rng.hpp"

using namespace handadapt;

namespace {

Tensor random_tensor(Rng& rng, Shape shape, double lo, double hi) {
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

std::vector<Tensor> random_images(Rng& rng, std::size_t n) {
  std::vector<Tensor> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(random_tensor(rng, {32, 32, 3}, 0.0, 1.0));
  return out;
}

std::vector<AugPair> strong_augs(Rng& rng, std::size_t n) {
  std::vector<AugPair> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(sample_aug(rng, AugStrength::kStrong, AugConfig{}, 32));
  return out;
}

double scalar_of(const std::function<Var(Graph&)>& f) {
  Graph g;
  return f(g).value().item();
}

bool all_bitwise_zero(const NetParams& p) {
  for (const auto& b : p.blocks) {
    if (!b.value.grad()) return false;
    for (double d : *b.value.grad())
      if (std::bit_cast<std::uint64_t>(d) != 0u) return false;
  }
  return true;
}

// Independent recomputation of the consistency value: plain loops over the
// batch, no graph.
double manual_consistency(const Prediction& student_aug, const Prediction& clean_target, std::span<const AugPair> augs,
                          std::span<const double> w, const LossWeights& lw) {
  const std::size_t n = student_aug.batch(), k = student_aug.heatmaps.dim(1);
  double total = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const Tensor heat = instance(clean_target.heatmaps, i);
    const Tensor th = apply_spatial(augs[i], heat, 32);
    const Tensor tm = apply_spatial(augs[i], instance(clean_target.mask_prob, i), 32);
    const auto moved = apply_keypoints(augs[i], decode_keypoints(heat, 0.05, 32, 32).coords, 32, 32);
    const Tensor sh = instance(student_aug.heatmaps, i);
    const Tensor sm = instance(student_aug.mask_prob, i);
    const std::size_t cells = th.numel() / k;
    double pose = 0;
    std::size_t included = 0;
    for (std::size_t j = 0; j < k; ++j) {
      if (!augs[i].geometric.is_identity() && moved.out_of_frame[j]) continue;
      ++included;
      for (std::size_t c = 0; c < cells; ++c) {
        const double d = std::abs(sh[j * cells + c] - th[j * cells + c]);
        pose += d < 1 ? 0.5 * d * d : d - 0.5;
      }
    }
    if (included) pose /= static_cast<double>(included * cells);
    double mask = 0;
    for (std::size_t c = 0; c < sm.numel(); ++c) mask += (sm[c] - tm[c]) * (sm[c] - tm[c]);
    mask /= static_cast<double>(sm.numel());
    total += w[i] * (lw.pose() * pose + lw.lambda_m_tilde * mask);
  }
  return total / static_cast<double>(n);
}

class AdaptLoss : public ::testing::Test {
 protected:
  ArchConfig arch;
  NetParams net = build_network(arch, 21);
  NetParams other = build_network(arch, 22);
  LossWeights w;
  Rng rng{5};
};

}  // namespace

// ---------------------------------------------------------------------------
// Elementary losses.

TEST(SmoothL1, Examples) {
  Graph g;
  EXPECT_EQ(smooth_l1_loss(g.constant(Tensor({3}, 0.4)), g.constant(Tensor({3}, 0.4))).value().item(), 0.0);
  EXPECT_DOUBLE_EQ(smooth_l1_loss(g.constant(Tensor({1}, 0.5)), g.constant(Tensor({1}, 0.0))).value().item(), 0.125);
  EXPECT_DOUBLE_EQ(smooth_l1_loss(g.constant(Tensor({1}, 2.0)), g.constant(Tensor({1}, 0.0))).value().item(), 1.5);
  EXPECT_THROW(smooth_l1_loss(g.constant(Tensor({2})), g.constant(Tensor({3}))), ShapeError);
}

TEST(Bce, Examples) {
  Graph g;
  EXPECT_NEAR(bce_loss(g.constant(Tensor({1}, 0.0)), Tensor({1}, 1.0)).value().item(), 0.693147, 1e-6);
  EXPECT_LT(bce_loss(g.constant(Tensor({1}, 20.0)), Tensor({1}, 1.0)).value().item(), 1e-8);
  EXPECT_NEAR(bce_loss(g.constant(Tensor({1}, 2.0)), Tensor({1}, 0.0)).value().item(), std::log(1 + std::exp(2.0)), 1e-12);
  EXPECT_NEAR(bce_loss(g.constant(Tensor({1}, 2.0)), Tensor({1}, 0.0)).value().item(), 2.126928, 1e-6);
  EXPECT_THROW(bce_loss(g.constant(Tensor({1}, 0.0)), Tensor({1}, 0.5)), ConfigError);
  // Stable at extreme logits.
  EXPECT_TRUE(std::isfinite(bce_loss(g.constant(Tensor({1}, -800.0)), Tensor({1}, 1.0)).value().item()));
}

TEST(Mse, Examples) {
  Graph g;
  EXPECT_EQ(mse_loss(g.constant(Tensor({4}, 0.3)), g.constant(Tensor({4}, 0.3))).value().item(), 0.0);
  EXPECT_DOUBLE_EQ(mse_loss(g.constant(Tensor({4}, 1.5)), g.constant(Tensor({4}, 0.5))).value().item(), 1.0);
  EXPECT_DOUBLE_EQ(mse_loss(g.constant(Tensor({2}, std::vector<double>{0, 2})), g.constant(Tensor({2}, std::vector<double>{1, 0})))
                       .value()
                       .item(),
                   2.5);
  EXPECT_THROW(mse_loss(g.constant(Tensor({2})), g.constant(Tensor({1, 2}))), ShapeError);
}

// ---------------------------------------------------------------------------
// Supervised loss.

TEST_F(AdaptLoss, TaskLossOfPerfectPredictionIsZero) {
  Tensor heat = random_tensor(rng, {2, 21, 16, 16}, 0.0, 1.0);
  Tensor mask({2, 1, 32, 32});
  Tensor logits({2, 1, 32, 32});
  for (std::size_t i = 0; i < mask.numel(); ++i) {
    mask[i] = rng.bernoulli(0.5) ? 1.0 : 0.0;
    logits[i] = mask[i] == 1.0 ? 40.0 : -40.0;
  }
  Graph g;
  const PredictionVars p{g.constant(heat), g.constant(logits), g.constant(Tensor({2, 1, 32, 32}))};
  EXPECT_NEAR(loss_task(p, {heat, mask}, w).value().item(), 0.0, 1e-10);
}

TEST_F(AdaptLoss, TaskLossPoseTermIsLinearInLambda) {
  Tensor heat = random_tensor(rng, {1, 21, 16, 16}, 0.0, 1.0);
  Tensor target = random_tensor(rng, {1, 21, 16, 16}, 0.0, 1.0);
  Graph g;
  const PredictionVars p{g.constant(heat), g.constant(Tensor({1, 1, 32, 32})), g.constant(Tensor({1, 1, 32, 32}))};
  LossWeights w2 = w;
  w2.lambda_p *= 2;
  const double a = loss_task(p, {target, Tensor()}, w, TaskSet::kPoseOnly).value().item();
  const double b = loss_task(p, {target, Tensor()}, w2, TaskSet::kPoseOnly).value().item();
  EXPECT_EQ(b, 2 * a);
}

TEST_F(AdaptLoss, TaskLossEqualsHandSummedComponents) {
  const auto images = random_images(rng, 2);
  Tensor heat = random_tensor(rng, {2, 21, 16, 16}, 0.0, 1.0);
  Tensor mask({2, 1, 32, 32});
  for (double& v : mask.data()) v = rng.bernoulli(0.3) ? 1.0 : 0.0;
  Graph g;
  const PredictionVars p = forward(g, net, to_nchw(images));
  const double got = loss_task(p, {heat, mask}, w).value().item();
  const Tensor& ph = p.heatmaps.value();
  const Tensor& pl = p.mask_logits.value();
  double sl1 = 0, bce = 0;
  for (std::size_t i = 0; i < ph.numel(); ++i) {
    const double d = std::abs(ph[i] - heat[i]);
    sl1 += d < 1 ? 0.5 * d * d : d - 0.5;
  }
  for (std::size_t i = 0; i < pl.numel(); ++i) {
    const double pr = 1 / (1 + std::exp(-pl[i]));
    bce += -(mask[i] * std::log(pr) + (1 - mask[i]) * std::log(1 - pr));
  }
  const double expect = w.pose() * sl1 / static_cast<double>(ph.numel()) + w.lambda_m * bce / static_cast<double>(pl.numel());
  EXPECT_NEAR(got, expect, 1e-10 * std::abs(expect));
}

TEST_F(AdaptLoss, TaskLossRejectsMissingLabels) {
  Graph g;
  const PredictionVars p = forward(g, net, to_nchw(random_images(rng, 1)));
  EXPECT_THROW(loss_task(p, {Tensor({1, 21, 16, 16}), Tensor()}, w), ConfigError);
  EXPECT_THROW(loss_task(p, {Tensor(), Tensor({1, 1, 32, 32})}, w), ConfigError);
}

// ---------------------------------------------------------------------------
// GAC.

TEST_F(AdaptLoss, GacWithIdentityAugmentationIsZero) {
  const auto images = random_images(rng, 3);
  const std::vector<AugPair> id(3, AugPair::identity());
  Graph g;
  EXPECT_NEAR(loss_gac(g, net, images, id, w).loss.value().item(), 0.0, 1e-10);
}

TEST_F(AdaptLoss, GacTargetPathCarriesNoGradient) {
  const auto images = random_images(rng, 2);
  const auto augs = strong_augs(rng, 2);
  net.zero_grad();
  Graph g;
  const GacResult r = loss_gac(g, net, images, augs, w);
  g.backward(r.loss);
  for (const Var v : {r.clean.heatmaps, r.clean.mask_logits, r.clean.mask_prob}) {
    for (double d : g.grad(v)) ASSERT_EQ(std::bit_cast<std::uint64_t>(d), 0u);
  }
  // The same gradient as with the target entering as a plain constant.
  std::vector<std::vector<double>> with_stop;
  for (const auto& b : net.blocks) with_stop.push_back(*b.value.grad());
  net.zero_grad();
  Graph h;
  const Prediction clean = predict(net, to_nchw(images));
  const std::vector<double> ones(2, 1.0);
  const Var ref = consistency_loss(forward(h, net, augment_batch(images, augs)), align_target(clean, augs, ones, {}), w);
  h.backward(ref);
  for (std::size_t i = 0; i < net.blocks.size(); ++i) EXPECT_TRUE(bitwise_equal(*net.blocks[i].value.grad(), with_stop[i]));
}

TEST_F(AdaptLoss, GacValueMatchesManualRecomposition) {
  const auto images = random_images(rng, 3);
  auto augs = strong_augs(rng, 3);
  augs[1].geometric.dx = 14.0;  // push some joints out of frame
  Graph g;
  const double got = loss_gac(g, net, images, augs, w).loss.value().item();
  const Prediction clean = predict(net, to_nchw(images));
  const Prediction aug = predict(net, augment_batch(images, augs));
  const std::vector<double> ones(3, 1.0);
  const double expect = manual_consistency(aug, clean, augs, ones, w);
  EXPECT_NEAR(got, expect, 1e-12 * std::max(1.0, expect));
  EXPECT_GT(got, 0.0);
}

// ---------------------------------------------------------------------------
// Disagreement, confidence, ensemble.

TEST_F(AdaptLoss, DisagreementExamples) {
  const Prediction p = predict(net, to_nchw(random_images(rng, 1)));
  EXPECT_EQ(disagreement(p, p, w), 0.0);
  Prediction a = p, b = p;
  for (std::size_t i = 0; i < a.mask_prob.numel(); ++i) {
    a.mask_prob[i] = 0.0;
    b.mask_prob[i] = 1.0;
  }
  EXPECT_DOUBLE_EQ(disagreement(a, b, w), 5.0);
  const Prediction q = predict(other, to_nchw(random_images(rng, 1)));
  EXPECT_EQ(disagreement(p, q, w), disagreement(q, p, w));
  EXPECT_GT(disagreement(p, q, w), 0.0);
}

TEST(ConfidenceWeight, Examples) {
  EXPECT_EQ(confidence_weight(0.0, 0.5), 1.0);
  EXPECT_NEAR(confidence_weight(2.0, 0.5), 2 * (1 - 1 / (1 + std::exp(-1.0))), 1e-15);
  EXPECT_NEAR(confidence_weight(2.0, 0.5), 0.537883, 1e-6);
  EXPECT_LT(confidence_weight(1000.0, 0.5), 1e-6);
  EXPECT_THROW(confidence_weight(-0.1, 0.5), ConfigError);
}

TEST(ConfidenceWeight, StrictlyDecreasingInUnitInterval) {
  double prev = confidence_weight(0.0, 0.5);
  for (int i = 1; i <= 400; ++i) {
    const double v = confidence_weight(0.1 * i, 0.5);
    ASSERT_LT(v, prev);
    ASSERT_GT(v, 0.0);
    ASSERT_LE(v, 1.0);
    prev = v;
  }
}

TEST_F(AdaptLoss, EnsembleExamples) {
  const Prediction p = predict(net, to_nchw(random_images(rng, 2)));
  const Prediction q = predict(other, to_nchw(random_images(rng, 2)));
  const Prediction pp = ensemble(p, p);
  EXPECT_TRUE(bitwise_equal(pp.heatmaps.data(), p.heatmaps.data()));
  EXPECT_TRUE(bitwise_equal(pp.mask_prob.data(), p.mask_prob.data()));
  const Prediction pq = ensemble(p, q), qp = ensemble(q, p);
  EXPECT_TRUE(bitwise_equal(pq.heatmaps.data(), qp.heatmaps.data()));
  EXPECT_TRUE(bitwise_equal(pq.mask_prob.data(), qp.mask_prob.data()));
  Prediction a = p, b = p;
  a.heatmaps[0] = 0.2;
  b.heatmaps[0] = 0.6;
  EXPECT_NEAR(ensemble(a, b).heatmaps[0], 0.4, 1e-15);
  Prediction small = p;
  small.heatmaps = Tensor({1, 21, 16, 16});
  EXPECT_THROW(ensemble(p, small), ShapeError);
}

// ---------------------------------------------------------------------------
// C-GAC.

TEST_F(AdaptLoss, CgacZeroWeightGivesZeroLossAndGradient) {
  const auto images = random_images(rng, 2);
  const auto augs = strong_augs(rng, 2);
  const Prediction ens = ensemble(predict(other, to_nchw(images)), predict(net, to_nchw(images)));
  const std::vector<double> zero(2, 0.0);
  net.zero_grad();
  Graph g;
  const Var l = loss_cgac(g, net, ens, zero, images, augs, w);
  EXPECT_EQ(l.value().item(), 0.0);
  g.backward(l);
  for (const auto& b : net.blocks)
    for (double d : *b.value.grad()) ASSERT_EQ(d, 0.0);
}

TEST_F(AdaptLoss, CgacWithIdenticalTeachersReducesToGacAgainstTeacher) {
  const auto images = random_images(rng, 2);
  const auto augs = strong_augs(rng, 2);
  const Prediction t = predict(other, to_nchw(images));
  const std::vector<double> ones(2, 1.0);
  const double cgac = scalar_of([&](Graph& g) { return loss_cgac(g, net, ensemble(t, t), ones, images, augs, w); });
  const double gac_t = scalar_of([&](Graph& g) {
    return consistency_loss(forward(g, net, augment_batch(images, augs)), align_target(t, augs, ones, {}), w);
  });
  EXPECT_EQ(cgac, gac_t);
  const Prediction aug = predict(net, augment_batch(images, augs));
  EXPECT_NEAR(cgac, manual_consistency(aug, t, augs, ones, w), 1e-12 * cgac);
}

TEST_F(AdaptLoss, CgacIsLinearInConfidence) {
  const auto images = random_images(rng, 2);
  const auto augs = strong_augs(rng, 2);
  const Prediction ens = ensemble(predict(other, to_nchw(images)), predict(net, to_nchw(images)));
  auto at = [&](double v) {
    const std::vector<double> wt(2, v);
    return scalar_of([&](Graph& g) { return loss_cgac(g, net, ens, wt, images, augs, w); });
  };
  const double full = at(1.0);
  EXPECT_GT(full, 0.0);
  EXPECT_NEAR(at(0.5), 0.5 * full, 1e-13 * full);
  EXPECT_NEAR(at(0.25), 0.25 * full, 1e-13 * full);
  // Per-instance weights act per instance.
  const std::vector<double> mixed{1.0, 0.0};
  const double first_only = scalar_of([&](Graph& g) { return loss_cgac(g, net, ens, mixed, images, augs, w); });
  const std::vector<double> other_mixed{0.0, 1.0};
  const double second_only = scalar_of([&](Graph& g) { return loss_cgac(g, net, ens, other_mixed, images, augs, w); });
  EXPECT_NEAR(first_only + second_only, full, 1e-12 * full);
}

TEST_F(AdaptLoss, CgacRejectsWeightsOutsideUnitInterval) {
  const auto images = random_images(rng, 1);
  const auto augs = strong_augs(rng, 1);
  const Prediction t = predict(other, to_nchw(images));
  Graph g;
  const std::vector<double> bad{1.5};
  EXPECT_THROW(loss_cgac(g, net, t, bad, images, augs, w), ConfigError);
  const std::vector<double> neg{-0.1};
  EXPECT_THROW(loss_cgac(g, net, t, neg, images, augs, w), ConfigError);
}

// ---------------------------------------------------------------------------
// Distillation.

TEST_F(AdaptLoss, DistillOfIdenticalNetworksIsZero) {
  NetParams teacher = net;
  const Tensor x = augment_batch(random_images(rng, 2), strong_augs(rng, 2));
  Graph g;
  const PredictionVars s = forward(g, net, x, GradMode::kNone);
  EXPECT_NEAR(loss_distill(g, teacher, s, x, w).value().item(), 0.0, 1e-10);
}

TEST_F(AdaptLoss, DistillSendsNoGradientToStudent) {
  const Tensor x = augment_batch(random_images(rng, 2), strong_augs(rng, 2));
  net.zero_grad();
  other.zero_grad();
  Graph g;
  const PredictionVars s = forward(g, net, x, GradMode::kTrack);
  const Var l = loss_distill(g, other, s, x, w);
  g.backward(l);
  EXPECT_TRUE(all_bitwise_zero(net));
  for (const Var v : {s.heatmaps, s.mask_logits, s.mask_prob}) {
    for (double d : g.grad(v)) ASSERT_EQ(std::bit_cast<std::uint64_t>(d), 0u);
  }
  bool teacher_moves = false;
  for (const auto& b : other.blocks)
    for (double d : *b.value.grad()) teacher_moves = teacher_moves || d != 0.0;
  EXPECT_TRUE(teacher_moves);
}

TEST_F(AdaptLoss, DistillValueIsSymmetricButGradientIsNot) {
  const Tensor x = augment_batch(random_images(rng, 2), strong_augs(rng, 2));
  net.zero_grad();
  other.zero_grad();
  Graph g1;
  const Var a = loss_distill(g1, other, forward(g1, net, x, GradMode::kTrack), x, w);
  g1.backward(a);
  EXPECT_TRUE(all_bitwise_zero(net));
  EXPECT_FALSE(all_bitwise_zero(other));
  net.zero_grad();
  other.zero_grad();
  Graph g2;
  const Var b = loss_distill(g2, net, forward(g2, other, x, GradMode::kTrack), x, w);
  g2.backward(b);
  EXPECT_TRUE(all_bitwise_zero(other));
  EXPECT_FALSE(all_bitwise_zero(net));
  EXPECT_EQ(a.value().item(), b.value().item());
}

// ---------------------------------------------------------------------------
// Invariants.

TEST_F(AdaptLoss, IdenticalTeachersGiveFullConfidence) {
  const NetParams t2 = net;
  const Tensor x = to_nchw(random_images(rng, 4));
  const Prediction p1 = predict(net, x), p2 = predict(t2, x);
  for (double d : disagreements(p1, p2, w)) {
    EXPECT_EQ(d, 0.0);
    EXPECT_EQ(confidence_weight(d, w.lambda_d), 1.0);
  }
  EXPECT_TRUE(bitwise_equal(ensemble(p1, p2).heatmaps.data(), p1.heatmaps.data()));
}

TEST_F(AdaptLoss, ScalingConsistencyWeightsScalesLosses) {
  const auto images = random_images(rng, 2);
  const auto augs = strong_augs(rng, 2);
  const double c = 3.0;
  LossWeights wc = w;
  wc.lambda_p *= c;
  wc.lambda_m_tilde *= c;
  const Tensor x = to_nchw(images);
  const Prediction p1 = predict(net, x), p2 = predict(other, x);
  const double d = disagreement(p1.instance(0), p2.instance(0), w);
  EXPECT_NEAR(disagreement(p1.instance(0), p2.instance(0), wc), c * d, 1e-12 * d);

  const std::vector<double> wt{0.7, 0.3};
  const Prediction ens = ensemble(p1, p2);
  const double base = scalar_of([&](Graph& g) { return loss_cgac(g, net, ens, wt, images, augs, w); });
  const double scaled = scalar_of([&](Graph& g) { return loss_cgac(g, net, ens, wt, images, augs, wc); });
  EXPECT_NEAR(scaled, c * base, 1e-12 * scaled);

  const Tensor xa = augment_batch(images, augs);
  const double db = scalar_of([&](Graph& g) { return loss_distill(g, other, forward(g, net, xa, GradMode::kNone), xa, w); });
  const double ds = scalar_of([&](Graph& g) { return loss_distill(g, other, forward(g, net, xa, GradMode::kNone), xa, wc); });
  EXPECT_NEAR(ds, c * db, 1e-12 * ds);
}

TEST_F(AdaptLoss, LossesAreNonNegative) {
  for (int rep = 0; rep < 5; ++rep) {
    const auto images = random_images(rng, 2);
    const auto augs = strong_augs(rng, 2);
    const Tensor xa = augment_batch(images, augs);
    EXPECT_GE(scalar_of([&](Graph& g) { return loss_gac(g, net, images, augs, w).loss; }), 0.0);
    EXPECT_GE(scalar_of([&](Graph& g) { return loss_distill(g, other, forward(g, net, xa, GradMode::kNone), xa, w); }), 0.0);
  }
}

TEST(LossWeightsConfig, AllMustBePositive) {
  LossWeights w;
  EXPECT_NO_THROW(w.validate());
  w.lambda_d = 0;
  EXPECT_THROW(w.validate(), ConfigError);
}
