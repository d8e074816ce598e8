#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "distill/trainer.hpp"
#include "support.hpp"

using namespace distill;

namespace {

struct Blobs3 {
  Dataset train, test;
  Blobs3() {
    auto [a, b] = split_dataset(synth_blobs({3, 100, 8, 0.2, 4}), 0.3, 4);
    train = std::move(a);
    test = std::move(b);
  }
};

TrainConfig quick(std::size_t epochs, std::uint64_t seed = 1) {
  TrainConfig c;
  c.optim.schedule.reset();
  c.epochs = epochs;
  c.batch_size = 32;
  c.seed = seed;
  return c;
}

}  // namespace

TEST(Schedule, CifarPreset) {
  auto c = OptimConfig::cifar();
  EXPECT_EQ(lr_at_epoch(c, 0), 0.01);
  EXPECT_EQ(lr_at_epoch(c, 99), 0.01);
  EXPECT_EQ(lr_at_epoch(c, 100), 0.001);
  EXPECT_EQ(lr_at_epoch(c, 200), 1e-4);
}

TEST(Schedule, TinyImageNetPreset) {
  auto c = OptimConfig::tiny_imagenet();
  EXPECT_EQ(lr_at_epoch(c, 0), 0.001);
  EXPECT_EQ(lr_at_epoch(c, 2), 0.001);
  EXPECT_EQ(lr_at_epoch(c, 3), 0.0009);
  EXPECT_EQ(lr_at_epoch(c, 6), 0.00081);
}

TEST(Schedule, ConstantWithoutDecay) {
  OptimConfig c;
  c.schedule.reset();
  EXPECT_EQ(lr_at_epoch(c, 12345), 0.01);
}

TEST(Optim, ValidateRejectsBadValues) {
  OptimConfig c;
  c.lr = -1;
  c.momentum = 1.5;
  EXPECT_THROW(c.validate(), std::invalid_argument);
}

TEST(Sgd, MomentumHandRecursion) {
  Tensor w = Tensor::vector({0.0}), g = Tensor::vector({1.0}), v = Tensor::vector({0.0});
  sgd_step(w, g, v, 0.1, 0.9, 0.0);
  sgd_step(w, g, v, 0.1, 0.9, 0.0);
  EXPECT_NEAR(v[0], 1.9, 1e-15);
  EXPECT_NEAR(w[0], -0.29, 1e-15);
}

TEST(Sgd, NullUpdate) {
  Tensor w = Tensor::vector({1.5, -2}), v = Tensor::vector({0, 0});
  sgd_step(w, Tensor::vector({0, 0}), v, 0.1, 0.9, 0.0);
  EXPECT_EQ(w, Tensor::vector({1.5, -2}));
}

TEST(Sgd, PlainGradientDescent) {
  Tensor w = Tensor::vector({1.0, 2.0}), v = Tensor::vector({0, 0});
  sgd_step(w, Tensor::vector({0.5, -1.0}), v, 0.1, 0.0, 0.0);
  EXPECT_DOUBLE_EQ(w[0], 0.95);
  EXPECT_DOUBLE_EQ(w[1], 2.1);
}

TEST(Sgd, WeightDecayAugmentsGradient) {
  Tensor w = Tensor::vector({2.0}), v = Tensor::vector({0.0});
  sgd_step(w, Tensor::vector({0.0}), v, 0.5, 0.0, 0.1);
  EXPECT_DOUBLE_EQ(w[0], 2.0 - 0.5 * 0.2);
}

TEST(Sgd, ShapeMismatch) {
  Tensor w = Tensor::vector({1, 2}), v = Tensor::vector({0, 0});
  EXPECT_THROW(sgd_step(w, Tensor::vector({1}), v, 0.1, 0.9, 0), ShapeError);
}

TEST(Sgd, DecayOnlyOnFlaggedEntries) {
  ParamStore ps;
  ps.add({"w", Tensor::vector({1.0}), true, true});
  ps.add({"b", Tensor::vector({1.0}), true, false});
  ps.add({"running", Tensor::vector({1.0}), false, false});
  std::vector<Tensor> grads{Tensor::vector({0}), Tensor::vector({0}), Tensor::vector({5})};
  std::vector<Tensor> vel{Tensor::vector({0}), Tensor::vector({0}), Tensor::vector({0})};
  sgd_step(ps, grads, vel, 1.0, 0.0, 0.5);
  EXPECT_DOUBLE_EQ(ps[0].value[0], 0.5);
  EXPECT_EQ(ps[1].value[0], 1.0);
  EXPECT_EQ(ps[2].value[0], 1.0);
}

TEST(TrainTeacher, SeparableBlobsWithinFiftyEpochs) {
  Blobs3 d;
  Model m(mlp(8, {16}, 3), 1);
  auto state = train_teacher(m, d.train, &d.test, quick(50));
  ASSERT_EQ(state.history.size(), 50u);
  EXPECT_GE(state.history.back().test_accuracy, 0.95);
  EXPECT_GE(evaluate_accuracy(m, d.test), 0.95);
}

TEST(TrainTeacher, ZeroEpochsLeavesWeights) {
  Blobs3 d;
  Model m(mlp(8, {16}, 3), 2);
  auto before = m.params().checkpoint_bytes();
  auto state = train_teacher(m, d.train, &d.test, quick(0));
  EXPECT_TRUE(state.history.empty());
  EXPECT_EQ(m.params().checkpoint_bytes(), before);
}

TEST(TrainTeacher, SameSeedSameMetrics) {
  Blobs3 d;
  Model a(mlp(8, {16}, 3, 0.3), 3), b(mlp(8, {16}, 3, 0.3), 3);
  auto sa = train_teacher(a, d.train, &d.test, quick(5));
  auto sb = train_teacher(b, d.train, &d.test, quick(5));
  EXPECT_EQ(sa.step_losses, sb.step_losses);
  std::ostringstream ma, mb;
  write_metrics(ma, sa.history);
  write_metrics(mb, sb.history);
  EXPECT_EQ(ma.str(), mb.str());
  EXPECT_EQ(a.params().checkpoint_bytes(), b.params().checkpoint_bytes());
}

TEST(TrainTeacher, DivergenceReportsEpochAndStep) {
  Blobs3 d;
  Model m(mlp(8, {16}, 3), 1);
  auto c = quick(3);
  c.optim.lr = 1e200;
  try {
    train_teacher(m, d.train, nullptr, c);
    FAIL();
  } catch (const TrainingError& e) {
    std::string msg = e.what();
    EXPECT_NE(msg.find("epoch"), std::string::npos);
    EXPECT_NE(msg.find("step"), std::string::npos);
  }
}

TEST(Distill, TeacherUntouched) {
  Blobs3 d;
  Model teacher(mlp(8, {16}, 3, 0.5), 7);
  train_teacher(teacher, d.train, nullptr, quick(3));
  auto before = teacher.params().checkpoint_bytes();
  Model student(mlp(8, {4}, 3), 8);
  LossSpec loss;
  loss.terms = {{SoftLoss::bkd, 1}, {SoftLoss::hkd, 1}, {SoftLoss::rkd_d, 1}, {SoftLoss::rkd_a, 1},
                {SoftLoss::triplet_kd, 0.1}};
  distill_student(student, teacher, d.train, &d.test, loss, {}, quick(2));
  EXPECT_EQ(teacher.params().checkpoint_bytes(), before);
}

TEST(Distill, ZeroWeightsReduceToPlainTraining) {
  Blobs3 d;
  Model teacher(mlp(8, {16}, 3), 7);
  Model plain(mlp(8, {4}, 3), 9), kd(mlp(8, {4}, 3), 9);
  LossSpec loss;
  loss.terms = {{SoftLoss::bkd, 0}, {SoftLoss::triplet_kd, 0}};
  auto a = train_teacher(plain, d.train, &d.test, quick(4));
  auto b = distill_student(kd, teacher, d.train, &d.test, loss, {}, quick(4));
  ASSERT_EQ(a.step_losses.size(), b.step_losses.size());
  for (std::size_t i = 0; i < a.step_losses.size(); ++i) EXPECT_NEAR(a.step_losses[i], b.step_losses[i], 1e-12);
}

TEST(Distill, WidthMismatchRejected) {
  Blobs3 d;
  Model teacher(mlp(8, {16}, 4), 7);
  Model student(mlp(8, {4}, 3), 9);
  EXPECT_THROW(distill_student(student, teacher, d.train, nullptr, {}, {}, quick(1)), std::invalid_argument);
}

TEST(Distill, HomogeneousBatchesAbortWithGuidance) {
  Dataset one{Tensor({12, 2}, 0.5), std::vector<std::size_t>(12, 0), 2, "flat"};
  Model teacher(mlp(2, {}, 2), 1), student(mlp(2, {}, 2), 2);
  LossSpec loss;
  loss.terms = {{SoftLoss::triplet_kd, 2}};
  try {
    distill_student(student, teacher, one, nullptr, loss, {}, quick(1));
    FAIL();
  } catch (const TrainingError& e) {
    EXPECT_NE(std::string(e.what()).find("batch"), std::string::npos) << e.what();
  }
}

TEST(Accuracy, ConstantModelScoresOneOverK) {
  Dataset d = synth_blobs({4, 25, 3, 0.1, 0});
  Model m(mlp(3, {}, 4), 0);
  for (std::size_t i = 0; i < m.params().size(); ++i) m.params()[i].value.fill(0.0);
  m.params()[m.params().size() - 1].value[2] = 1.0;
  EXPECT_DOUBLE_EQ(evaluate_accuracy(m, d), 0.25);
}

TEST(Accuracy, PerfectLookup) {
  Dataset d{Tensor({3, 3}, {1, 0, 0, 0, 0, 1, 0, 1, 0}), {0, 2, 1}, 3, "x"};
  Model m(mlp(3, {}, 3), 0);
  Tensor& w = m.params()[0].value;
  w.fill(0.0);
  for (std::size_t k = 0; k < 3; ++k) w[k * 3 + k] = 1.0;
  m.params()[1].value.fill(0.0);
  EXPECT_EQ(evaluate_accuracy(m, d), 1.0);
}

TEST(Accuracy, AgreesWithRecount) {
  Blobs3 d;
  Model m(mlp(8, {5}, 3), 11);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < d.test.size(); ++i) {
    Tensor logits = m.predict(d.test.gather({i}));
    std::size_t best = 0;
    for (std::size_t k = 1; k < 3; ++k)
      if (logits[k] > logits[best]) best = k;
    correct += best == d.test.labels[i];
  }
  EXPECT_DOUBLE_EQ(evaluate_accuracy(m, d.test, 7), static_cast<double>(correct) / d.test.size());
}

TEST(Metrics, RoundTripAndHeader) {
  std::vector<EpochMetrics> h(2);
  h[0] = {0, 0.01, 1.25, {0.5, 0, 0, 0, 3.0}, 7.25, 0.4};
  h[1] = {1, 0.001, 0.1 + 0.2, {}, 1.0 / 3.0, std::nan("")};
  std::stringstream ss;
  write_metrics(ss, h, {{"role", "student"}, {"method", "ours"}});
  std::string text = ss.str();
  EXPECT_NE(text.find(std::string(kMetricsColumns) + "\n"), std::string::npos);
  auto back = read_metrics(ss);
  EXPECT_EQ(back.tag("method"), "ours");
  EXPECT_FALSE(back.tag("missing").has_value());
  ASSERT_EQ(back.history.size(), 2u);
  EXPECT_EQ(back.history[1].hard_loss, 0.1 + 0.2);
  EXPECT_EQ(back.history[1].total_loss, 1.0 / 3.0);
  EXPECT_EQ(back.history[0].soft[4], 3.0);
  EXPECT_TRUE(std::isnan(back.history[1].test_accuracy));
}

TEST(Metrics, MalformedRejected) {
  std::stringstream ss("epoch\tlr\n0\t0.1\n");
  EXPECT_THROW(read_metrics(ss), FormatError);
}
