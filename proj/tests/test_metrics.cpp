#include <gtest/gtest.h>

#include <cmath>

#include "mclab/metrics.hpp"
#include "mclab/model.hpp"

using namespace mclab;

TEST(ErrorBundle, ZeroAtTruth) {
  const auto truth = gen_truth(20, 3, {}, 3);
  const auto b = error_bundle(truth.m_star(), truth);
  EXPECT_EQ(b.rel_fro, 0.0);
  EXPECT_EQ(b.rel_spec, 0.0);
  EXPECT_EQ(b.rel_inf, 0.0);
}

TEST(ErrorBundle, HomogeneityAtDoubledTruth) {
  const auto truth = gen_truth(18, 2, {}, 4);
  const auto b = error_bundle(2.0 * truth.m_star(), truth);
  EXPECT_NEAR(b.rel_fro, 1.0, 1e-10);
  EXPECT_NEAR(b.rel_spec, 1.0, 1e-8);
  EXPECT_NEAR(b.rel_inf, 1.0, 1e-10);
}

TEST(ErrorBundle, PairVariantAlignsFactors) {
  const auto truth = gen_truth(16, 2, {}, 5);
  // rotate the planted factors by a random orthonormal matrix: after
  // alignment the 2,inf factor error must vanish
  Rng rng(6);
  Matrix g(2, 2);
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j) g(i, j) = rng.normal();
  Eigen::HouseholderQR<Matrix> qr(g);
  const Matrix rot = qr.householderQ() * Matrix::Identity(2, 2);
  const FactorPair pair{truth.x_star * rot, truth.y_star * rot};
  const auto b = error_bundle(pair, truth);
  ASSERT_TRUE(b.factor_2inf.has_value());
  EXPECT_LT(*b.factor_2inf, 1e-10);
  EXPECT_LT(b.rel_fro, 1e-10);
  ASSERT_TRUE(b.align_rotation.has_value());
  const Matrix& h = *b.align_rotation;
  EXPECT_LT((h.transpose() * h - Matrix::Identity(2, 2)).cwiseAbs().maxCoeff(),
            1e-12);
}

TEST(ErrorBundle, AlignmentBeatsRandomRotations) {
  const auto truth = gen_truth(14, 3, {}, 7);
  Rng rng(8);
  Matrix nx(14, 3), ny(14, 3);
  for (int i = 0; i < 14; ++i)
    for (int j = 0; j < 3; ++j) {
      nx(i, j) = 0.05 * rng.normal();
      ny(i, j) = 0.05 * rng.normal();
    }
  const FactorPair pair{truth.x_star + nx, truth.y_star + ny};
  const auto b = error_bundle(pair, truth);
  ASSERT_TRUE(b.align_rotation.has_value());

  Matrix f(28, 3), f_ref(28, 3);
  f << pair.x, pair.y;
  f_ref << truth.x_star, truth.y_star;
  const double aligned = (f * (*b.align_rotation) - f_ref).norm();
  for (int trial = 0; trial < 32; ++trial) {
    Matrix g(3, 3);
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) g(i, j) = rng.normal();
    Eigen::HouseholderQR<Matrix> qr(g);
    const Matrix rot = qr.householderQ() * Matrix::Identity(3, 3);
    EXPECT_LE(aligned, (f * rot - f_ref).norm() + 1e-12);
  }
}

TEST(ErrorBundle, LinearNoiseScalingOfErrors) {
  // errors scale with the size of the perturbation (trivial sanity of the
  // relative normalization)
  const auto truth = gen_truth(20, 2, {}, 9);
  Rng rng(10);
  Matrix e(20, 20);
  for (int i = 0; i < 20; ++i)
    for (int j = 0; j < 20; ++j) e(i, j) = rng.normal();
  const auto b1 = error_bundle(truth.m_star() + 0.01 * e, truth);
  const auto b2 = error_bundle(truth.m_star() + 0.1 * e, truth);
  EXPECT_NEAR(b2.rel_fro / b1.rel_fro, 10.0, 1e-6);
  EXPECT_NEAR(b2.rel_inf / b1.rel_inf, 10.0, 1e-6);
}

TEST(ErrorBundle, DimensionMismatchThrows) {
  const auto truth = gen_truth(6, 2, {}, 11);
  EXPECT_THROW(error_bundle(Matrix::Zero(5, 5), truth), ParameterError);
}
