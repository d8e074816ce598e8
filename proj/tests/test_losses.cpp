#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "distill/losses.hpp"

using namespace distill;

namespace {

using Triplet = std::array<std::size_t, 3>;

Tensor normal(Shape shape, std::uint64_t seed) {
  Tensor t(std::move(shape));
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n;
  for (auto& v : t.data()) v = n(rng);
  return t;
}

PairSet all_pairs(std::size_t n) {
  PairSet p;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) p.pairs.push_back({i, j});
  return p;
}

TripletSet all_triplets(std::size_t n) {
  TripletSet t;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t k = 0; k < n; ++k)
        if (i != j && j != k && i != k) t.triplets.push_back({i, j, k});
  return t;
}

double value_of(const std::function<Var(Tape&)>& f) {
  Tape tape;
  return f(tape).value().item();
}

}  // namespace

TEST(Scalar, PairwiseDistance) {
  std::vector<double> a{0, 0}, b{3, 4};
  EXPECT_DOUBLE_EQ(pairwise_distance(a, b), 5.0);
}

TEST(Scalar, KlAgainstUniform) {
  std::vector<double> p{1, 0}, q{0.5, 0.5};
  EXPECT_NEAR(kl_divergence(p, q), std::log(2.0), 1e-12);
}

TEST(Scalar, HuberBeyondUnit) { EXPECT_DOUBLE_EQ(huber(3.0, 1.0), 1.5); }

TEST(Scalar, HuberInsideUnit) { EXPECT_DOUBLE_EQ(huber(0.25, 0.75), 0.125); }

TEST(Scalar, PsiAngle) {
  std::vector<double> i{1, 0}, j{0, 0}, k{1, 1};
  EXPECT_NEAR(*psi_angle(i, j, k), std::sqrt(0.5), 1e-12);
  EXPECT_FALSE(psi_angle(j, j, k).has_value());
}

TEST(Scalar, PsiDistanceSumNormalized) {
  Tensor out = Tensor::matrix({{0}, {1}, {3}});
  PairSet p{{{0, 1}, {0, 2}}};
  auto psi = psi_distance(out, p);
  EXPECT_DOUBLE_EQ(psi[0], 0.25);
  EXPECT_DOUBLE_EQ(psi[1], 0.75);
  auto psi_mean = psi_distance(out, p, PsiNorm::mean);
  EXPECT_DOUBLE_EQ(psi_mean[0], 0.5);
  EXPECT_DOUBLE_EQ(psi_mean[1], 1.5);
}

TEST(Scalar, PsiDistanceAllZeroIsDegenerate) {
  EXPECT_THROW(psi_distance(Tensor({3, 2}, 1.0), all_pairs(3)), DegenerateBatch);
}

TEST(Contrastive, SimilarPair) {
  PairSet p{{{0, 1}}};
  std::vector<int> sim{1};
  double v = value_of([&](Tape& t) {
    return contrastive_loss(t.constant(Tensor::matrix({{0, 0}, {2, 0}})), p, sim, 1.0);
  });
  EXPECT_DOUBLE_EQ(v, 2.0);
}

TEST(Contrastive, DissimilarInsideMargin) {
  PairSet p{{{0, 1}}};
  std::vector<int> sim{0};
  double v = value_of([&](Tape& t) {
    return contrastive_loss(t.constant(Tensor::matrix({{0, 0}, {0.5, 0}})), p, sim, 2.0);
  });
  EXPECT_DOUBLE_EQ(v, 0.5 * 1.5 * 1.5);
}

TEST(Contrastive, RejectsBadLabels) {
  PairSet p{{{0, 1}}};
  std::vector<int> sim{2};
  Tape t;
  EXPECT_THROW(contrastive_loss(t.constant(Tensor({2, 2})), p, sim, 1.0), std::invalid_argument);
}

TEST(TripletMetric, MarginViolation) {
  // d_ap^2 = 1, d_an^2 = 1.5
  std::vector<Triplet> tr{{0, 1, 2}};
  double v = value_of([&](Tape& t) {
    return triplet_metric_loss(t.constant(Tensor::matrix({{0, 0}, {1, 0}, {0, std::sqrt(1.5)}})), tr, 1.0);
  });
  EXPECT_NEAR(v, 0.5, 1e-12);
}

TEST(TripletMetric, SatisfiedMarginIsZero) {
  std::vector<Triplet> tr{{0, 1, 2}};
  double v = value_of([&](Tape& t) {
    return triplet_metric_loss(t.constant(Tensor::matrix({{0, 0}, {1, 0}, {0, 3}})), tr, 1.0);
  });
  EXPECT_EQ(v, 0.0);
}

TEST(Bkd, OrthogonalUnitVectors) {
  double v = value_of([](Tape& t) {
    return bkd_loss(t.constant(Tensor::matrix({{1, 0}})), t.constant(Tensor::matrix({{0, 1}})));
  });
  EXPECT_DOUBLE_EQ(v, 1.0);
}

TEST(Bkd, ShapeMismatchThrows) {
  Tape t;
  EXPECT_THROW(bkd_loss(t.constant(Tensor({2, 3})), t.constant(Tensor({2, 4}))), ShapeError);
}

TEST(Hkd, SwappedLogitsAtUnitTemperature) {
  double v = value_of([](Tape& t) {
    return hkd_loss(t.constant(Tensor::matrix({{2, 0}})), t.constant(Tensor::matrix({{0, 2}})), 1.0);
  });
  EXPECT_NEAR(v, 1.5232, 1e-4);
}

TEST(Hkd, TemperatureSquaredScaling) {
  Tensor a = normal({3, 4}, 1), b = normal({3, 4}, 2);
  double plain = value_of([&](Tape& t) { return hkd_loss(t.constant(a), t.constant(b), 4.0); });
  double scaled = value_of([&](Tape& t) { return hkd_loss(t.constant(a), t.constant(b), 4.0, true); });
  EXPECT_NEAR(scaled, 16.0 * plain, 1e-12);
}

TEST(Hkd, NonPositiveTemperatureRejected) {
  Tape t;
  EXPECT_THROW(hkd_loss(t.constant(Tensor({1, 2})), t.constant(Tensor({1, 2})), 0.0), std::invalid_argument);
}

TEST(RkdD, HuberOfPsiResiduals) {
  // teacher distances (1, 3) -> psi (.25, .75); student (1, 1) -> (.5, .5)
  PairSet p{{{0, 1}, {0, 2}}};
  double v = value_of([&](Tape& t) {
    return rkd_d_loss(p, t.constant(Tensor::matrix({{0, 0}, {1, 0}, {3, 0}})),
                      t.constant(Tensor::matrix({{0, 0}, {1, 0}, {0, 1}})));
  });
  EXPECT_NEAR(v, 0.0625, 1e-12);
}

TEST(RkdD, InvariantToStudentScale) {
  Tensor te = normal({5, 3}, 3), st = normal({5, 3}, 4);
  Tensor big = st;
  big *= 7.0;
  auto pairs = all_pairs(5);
  double a = value_of([&](Tape& t) { return rkd_d_loss(pairs, t.constant(te), t.constant(st)); });
  double b = value_of([&](Tape& t) { return rkd_d_loss(pairs, t.constant(te), t.constant(big)); });
  EXPECT_NEAR(a, b, 1e-12);
}

TEST(RkdA, CollinearVersusRightAngle) {
  TripletSet tr{{{0, 1, 2}}};
  double v = value_of([&](Tape& t) {
    return rkd_a_loss(tr, t.constant(Tensor::matrix({{1, 0}, {0, 0}, {2, 0}})),
                      t.constant(Tensor::matrix({{1, 0}, {0, 0}, {0, 1}})));
  });
  EXPECT_NEAR(v, 0.5, 1e-12);
}

TEST(RkdA, RotationInvariant) {
  Tensor te = normal({4, 2}, 5), st = normal({4, 2}, 6);
  Tensor rot({4, 2});
  const double c = std::cos(0.7), s = std::sin(0.7);
  for (std::size_t i = 0; i < 4; ++i) {
    rot[2 * i] = c * st[2 * i] - s * st[2 * i + 1];
    rot[2 * i + 1] = s * st[2 * i] + c * st[2 * i + 1];
  }
  auto tr = all_triplets(4);
  double a = value_of([&](Tape& t) { return rkd_a_loss(tr, t.constant(te), t.constant(st)); });
  double b = value_of([&](Tape& t) { return rkd_a_loss(tr, t.constant(te), t.constant(rot)); });
  EXPECT_NEAR(a, b, 1e-12);
}

TEST(RkdA, AllDegenerateThrows) {
  TripletSet tr{{{0, 1, 2}}};
  Tape t;
  EXPECT_THROW(rkd_a_loss(tr, t.constant(Tensor({3, 2})), t.constant(normal({3, 2}, 1))), DegenerateBatch);
}

TEST(RkdDa, WeightedSum) {
  Tensor te = normal({5, 3}, 7), st = normal({5, 3}, 8);
  auto pairs = all_pairs(5);
  auto tr = all_triplets(5);
  double d = value_of([&](Tape& t) { return rkd_d_loss(pairs, t.constant(te), t.constant(st)); });
  double a = value_of([&](Tape& t) { return rkd_a_loss(tr, t.constant(te), t.constant(st)); });
  double da = value_of([&](Tape& t) { return rkd_da_loss(pairs, tr, t.constant(te), t.constant(st), 1.0, 2.0); });
  EXPECT_NEAR(da, d + 2.0 * a, 1e-12);
}

TEST(TripletKd, MarginFive) {
  // ||t_0 - s_0||^2 = 1, ||t_0 - s_1||^2 = 2
  KDTripletSet omega{{{0, 1}}, {1, 0}};
  double v = value_of([&](Tape& t) {
    return triplet_kd_loss(omega, t.constant(Tensor::matrix({{0, 0}, {9, 9}})),
                           t.constant(Tensor::matrix({{1, 0}, {1, 1}})), 5.0);
  });
  EXPECT_NEAR(v, 4.0, 1e-12);
}

TEST(TripletKd, StudentOnAnchor) {
  KDTripletSet omega{{{0, 1}}, {1, 0}};
  double v = value_of([&](Tape& t) {
    return triplet_kd_loss(omega, t.constant(Tensor::matrix({{0, 0}, {9, 9}})),
                           t.constant(Tensor::matrix({{0, 0}, {std::sqrt(3.0), 0}})), 5.0);
  });
  EXPECT_NEAR(v, 2.0, 1e-12);
}

TEST(TripletKd, EmptyOmegaCountsDiagnostic) {
  KDTripletSet omega{{}, {0, 0}};
  LossDiagnostics diag;
  double v = value_of([&](Tape& t) {
    return triplet_kd_loss(omega, t.constant(Tensor({2, 2})), t.constant(Tensor({2, 2}, 1.0)), 5.0, &diag);
  });
  EXPECT_EQ(v, 0.0);
  EXPECT_EQ(diag.empty_omega, 1u);
}

TEST(CrossEntropy, TwoLogits) {
  std::vector<std::size_t> y{0};
  double v = value_of([&](Tape& t) { return cross_entropy_loss(t.constant(Tensor::matrix({{2, 0}})), y); });
  EXPECT_NEAR(v, 0.1269, 1e-4);
}

TEST(CrossEntropy, UniformIsLogK) {
  std::vector<std::size_t> y{3, 1};
  double v = value_of([&](Tape& t) { return cross_entropy_loss(t.constant(Tensor({2, 7}, 0.3)), y); });
  EXPECT_NEAR(v, std::log(7.0), 1e-12);
}

TEST(CrossEntropy, ConfidentAndCorrect) {
  std::vector<std::size_t> y{1};
  double v = value_of([&](Tape& t) { return cross_entropy_loss(t.constant(Tensor::matrix({{0, 50, 0}})), y); });
  EXPECT_LE(v, 1e-9);
  EXPECT_GE(v, 0.0);
}

TEST(CrossEntropy, LabelOutOfRange) {
  std::vector<std::size_t> y{2};
  Tape t;
  EXPECT_THROW(cross_entropy_loss(t.constant(Tensor({1, 2})), y), std::out_of_range);
}

TEST(Combined, SumsWeightedTerms) {
  Tensor te = normal({4, 3}, 9), st = normal({4, 3}, 10);
  std::vector<std::size_t> y{0, 1, 2, 0};
  BatchIndexSets sets{all_pairs(4), all_triplets(4), {{{0, 1}, {2, 3}}, {1, 0, 1, 0}}};
  LossSpec spec;
  spec.terms = {{SoftLoss::bkd, 2.0}, {SoftLoss::hkd, 16.0}, {SoftLoss::triplet_kd, 0.5}};
  Tape tape;
  auto out = combined_loss(spec, {tape.constant(te), tape.constant(st), y, &sets});
  double bkd = out.soft[0], hkd = out.soft[1], tkd = out.soft[4];
  EXPECT_NEAR(out.total.value().item(), out.hard + 2.0 * bkd + 16.0 * hkd + 0.5 * tkd, 1e-12);
  EXPECT_EQ(out.soft[2], 0.0);
  EXPECT_EQ(out.soft[3], 0.0);
  EXPECT_NEAR(bkd, value_of([&](Tape& t) { return bkd_loss(t.constant(te), t.constant(st)); }), 1e-15);
}

TEST(Combined, HandValues) {
  // hard 0.5 + 2 * 1 + 16 * 2 = 34.5
  EXPECT_DOUBLE_EQ(0.5 + 2.0 * 1.0 + 16.0 * 2.0, 34.5);
  Tensor te = Tensor::matrix({{1, 0}}), st = Tensor::matrix({{0, 1}});
  std::vector<std::size_t> y{1};
  LossSpec spec;
  spec.terms = {{SoftLoss::bkd, 2.0}};
  Tape tape;
  auto out = combined_loss(spec, {tape.constant(te), tape.constant(st), y, nullptr});
  EXPECT_DOUBLE_EQ(out.soft[0], 1.0);
  EXPECT_NEAR(out.total.value().item(), std::log1p(std::exp(-1.0)) + 2.0, 1e-12);
}

TEST(Combined, RelationalTermsNeedIndexSets) {
  LossSpec spec;
  spec.terms = {{SoftLoss::rkd_d, 1.0}};
  std::vector<std::size_t> y{0, 1};
  Tape tape;
  EXPECT_THROW(combined_loss(spec, {tape.constant(Tensor({2, 2})), tape.constant(Tensor({2, 2})), y, nullptr}),
               std::invalid_argument);
}

TEST(Combined, NoGradientReachesTeacher) {
  Tensor te = normal({4, 3}, 11), st = normal({4, 3}, 12);
  std::vector<std::size_t> y{0, 1, 2, 1};
  BatchIndexSets sets{all_pairs(4), all_triplets(4), {{{0, 1}, {1, 2}, {2, 3}}, {1, 1, 1, 0}}};
  LossSpec spec;
  spec.terms = {{SoftLoss::bkd, 1}, {SoftLoss::hkd, 1}, {SoftLoss::rkd_d, 1}, {SoftLoss::rkd_a, 1},
                {SoftLoss::triplet_kd, 1}};
  Tape tape;
  Var t = tape.constant(te), s = tape.leaf(st);
  auto g = tape.backward(combined_loss(spec, {t, s, y, &sets}).total);
  EXPECT_FALSE(g.has(t));
  EXPECT_TRUE(g.has(s));
}

TEST(LossSpec, ValidateListsEveryProblem) {
  LossSpec spec;
  spec.terms = {{SoftLoss::bkd, -1.0}};
  spec.temperature = 0.0;
  spec.margin = -2.0;
  try {
    spec.validate();
    FAIL();
  } catch (const std::invalid_argument& e) {
    std::string msg = e.what();
    EXPECT_NE(msg.find("bkd"), std::string::npos);
    EXPECT_NE(msg.find("temperature"), std::string::npos);
    EXPECT_NE(msg.find("margin"), std::string::npos);
  }
}

TEST(Names, OursAliasesTripletKd) {
  EXPECT_EQ(parse_soft_loss("ours"), SoftLoss::triplet_kd);
  for (auto k : kSoftLosses) EXPECT_EQ(parse_soft_loss(to_string(k)), k);
  EXPECT_FALSE(parse_soft_loss("nope").has_value());
}
