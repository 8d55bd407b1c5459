#include "kam/autocorr.hpp"
#include "kam/error.hpp"
#include "kam/retrieval.hpp"

#include "support.hpp"

#include <Eigen/Eigenvalues>
#include <gtest/gtest.h>

#include <random>

using namespace kam;

namespace {

const BasisSpec kBasis = BasisSpec::make(0.25, 32.0, 6);

} // namespace

TEST(ClSpectrum, GramOfBlocks) {
    const auto a = randomCoefficients(kBasis, 1);
    const auto c = clFromCoefficients(a);
    ASSERT_EQ(c.matrices.size(), 7u);
    for (int l = 0; l <= 6; ++l) EXPECT_LT(test::relativeError(c.matrices[l], a.block(l) * a.block(l).transpose()), 1e-14);
    EXPECT_NO_THROW(c.validate());
}

TEST(ClSpectrum, GaugeInvariance) {
    const auto a = randomCoefficients(kBasis, 2);
    const auto c = clFromCoefficients(a);
    std::mt19937_64 rng(3);
    VolumeCoefficients b = a;
    for (int l = 0; l <= 6; ++l) b.block(l) = a.block(l) * test::randomOrthogonal(2 * l + 1, rng);
    const auto cb = clFromCoefficients(b);
    for (int l = 0; l <= 6; ++l)
        EXPECT_LT((cb.matrices[l] - c.matrices[l]).cwiseAbs().maxCoeff(), 1e-12 * c.matrices[l].cwiseAbs().maxCoeff());
}

TEST(ClSpectrum, RotationInvariance) {
    const auto a = randomCoefficients(kBasis, 4);
    const auto c = clFromCoefficients(a);
    const auto cr = clFromCoefficients(rotateCoefficients(a, sampleUniformRotations(1, 5).front()));
    for (int l = 0; l <= 6; ++l) EXPECT_LT(test::relativeError(cr.matrices[l], c.matrices[l]), 1e-12);
}

TEST(ClSpectrum, ValidateRejectsMalformedInput) {
    auto c = clFromCoefficients(randomCoefficients(kBasis, 6));
    auto asym = c;
    asym.matrices[2](0, 1) += 1.0;
    EXPECT_THROW(asym.validate(), ParameterError);
    auto shape = c;
    shape.matrices[3] = Eigen::MatrixXd::Zero(2, 2);
    EXPECT_THROW(shape.validate(), ParameterError);
    auto count = c;
    count.matrices.pop_back();
    EXPECT_THROW(count.validate(), ParameterError);
}

TEST(Factorize, ReproducesSpectrumWithRankOrderedColumns) {
    const auto c = clFromCoefficients(randomCoefficients(kBasis, 7));
    const auto f = factorize(c);
    for (int l = 0; l <= 6; ++l) {
        const auto& fl = f.factors[l];
        ASSERT_EQ(fl.rows(), kBasis.size(l));
        ASSERT_EQ(fl.cols(), 2 * l + 1);
        EXPECT_LT(test::relativeError(fl * fl.transpose(), c.matrices[l]), 1e-10);
        EXPECT_EQ(f.ranks[l], std::min(kBasis.size(l), 2 * l + 1));
        for (int j = 1; j < fl.cols(); ++j) EXPECT_GE(fl.col(j - 1).norm(), fl.col(j).norm() - 1e-12);
        for (int j = f.ranks[l]; j < fl.cols(); ++j) EXPECT_EQ(fl.col(j).norm(), 0.0);
    }
}

TEST(Factorize, RankDeficientDegrees) {
    const BasisSpec small = BasisSpec::make(0.25, 8.0, 4);
    const auto f = factorize(clFromCoefficients(randomCoefficients(small, 8)));
    for (int l = 0; l <= 4; ++l) EXPECT_EQ(f.ranks[l], std::min(small.size(l), 2 * l + 1));
}

TEST(Factorize, RejectsIndefiniteSpectrum) {
    auto c = clFromCoefficients(randomCoefficients(kBasis, 9));
    c.matrices[2] = -c.matrices[2];
    EXPECT_THROW(factorize(c), NumericalError);
}

TEST(PerturbSpectrum, SizeDeterminismAndPsd) {
    const auto c = clFromCoefficients(randomCoefficients(kBasis, 10));
    const auto p = perturbSpectrum(c, 0.05, 11);
    const auto q = perturbSpectrum(c, 0.05, 11);
    for (int l = 0; l <= 6; ++l) {
        EXPECT_EQ(p.matrices[l], q.matrices[l]);
        // Projection onto the PSD cone can only move the result closer.
        EXPECT_LE((p.matrices[l] - c.matrices[l]).norm(), 0.05 * c.matrices[l].norm() * (1 + 1e-12));
        EXPECT_GT((p.matrices[l] - c.matrices[l]).norm(), 0.0);
        const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(p.matrices[l]);
        EXPECT_GE(eig.eigenvalues().minCoeff(), -1e-12 * c.matrices[l].norm());
        EXPECT_LT((p.matrices[l] - p.matrices[l].transpose()).norm(), 1e-14 * c.matrices[l].norm());
    }
    const auto z = perturbSpectrum(c, 0.0, 11);
    for (int l = 0; l <= 6; ++l) EXPECT_LT(test::relativeError(z.matrices[l], c.matrices[l]), 1e-14);
    EXPECT_THROW(perturbSpectrum(c, -1.0, 1), ParameterError);
}

TEST(AssembleCoefficients, PreservesSpectrumForAnyGauge) {
    const auto c = clFromCoefficients(randomCoefficients(kBasis, 12));
    const auto f = factorize(c);
    std::mt19937_64 rng(13);
    std::vector<Eigen::MatrixXd> orth;
    for (int l = 1; l <= 6; ++l) orth.push_back(test::randomOrthogonal(2 * l + 1, rng));
    const auto assembled = assembleCoefficients(f, f.factors[0].col(0), orth);
    const auto c2 = clFromCoefficients(assembled);
    for (int l = 0; l <= 6; ++l) EXPECT_LT(test::relativeError(c2.matrices[l], c.matrices[l]), 1e-8);
}
