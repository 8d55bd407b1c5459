#include "kam/basis.hpp"
#include "kam/error.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <vector>

using namespace kam;

namespace {

// Composite Simpson rule, independent of the library's quadrature.
template <class F>
double simpson(F f, double a, double b, int intervals) {
    const double h = (b - a) / intervals;
    double s = f(a) + f(b);
    for (int i = 1; i < intervals; ++i) s += f(a + i * h) * (i % 2 ? 4.0 : 2.0);
    return s * h / 3.0;
}

double legendre(int l, double x) {
    double p0 = 1.0, p1 = x;
    if (l == 0) return p0;
    for (int k = 2; k <= l; ++k) {
        const double p2 = ((2 * k - 1) * x * p1 - (k - 1) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    return p1;
}

} // namespace

TEST(SphericalBessel, MatchesClosedForms) {
    for (double x : {0.5, 1.0, 2.5, 7.0, 15.0, 40.0}) {
        const double s = std::sin(x), c = std::cos(x);
        EXPECT_NEAR(sphericalBessel(0, x), s / x, 1e-14);
        EXPECT_NEAR(sphericalBessel(1, x), s / (x * x) - c / x, 1e-14);
        EXPECT_NEAR(sphericalBessel(2, x), (3.0 / (x * x) - 1.0) * s / x - 3.0 * c / (x * x), 1e-13);
    }
    EXPECT_DOUBLE_EQ(sphericalBessel(0, 0.0), 1.0);
    EXPECT_DOUBLE_EQ(sphericalBessel(3, 0.0), 0.0);
}

TEST(SphericalBessel, SmallArgumentSeries) {
    // j_l(x) ≈ x^l / (2l+1)!! for small x.
    for (int l = 1; l <= 10; ++l) {
        const double x = 1e-4;
        double dfact = 1.0;
        for (int k = 1; k <= 2 * l + 1; k += 2) dfact *= k;
        EXPECT_NEAR(sphericalBessel(l, x) / (std::pow(x, l) / dfact), 1.0, 1e-6) << "l=" << l;
    }
}

TEST(SphericalBesselZero, KnownValues) {
    for (int s = 1; s <= 30; ++s) EXPECT_NEAR(sphericalBesselZero(0, s), s * M_PI, 1e-12);
    // First root of tan x = x.
    EXPECT_NEAR(sphericalBesselZero(1, 1), 4.493409457909064, 1e-12);
    EXPECT_NEAR(sphericalBesselZero(2, 1), 5.763459196894550, 1e-12);
}

TEST(SphericalBesselZero, AreRootsAndInterlace) {
    for (int l = 0; l <= 10; ++l)
        for (int s = 1; s <= 20; ++s) {
            const double u = sphericalBesselZero(l, s);
            EXPECT_LT(std::abs(sphericalBessel(l, u)), 1e-12) << l << "," << s;
            EXPECT_LT(u, sphericalBesselZero(l + 1, s));
            EXPECT_LT(sphericalBesselZero(l + 1, s), sphericalBesselZero(l, s + 1));
        }
}

TEST(SphericalBesselZero, RejectsOutOfRange) {
    EXPECT_THROW(sphericalBesselZero(-1, 1), ParameterError);
    EXPECT_THROW(sphericalBesselZero(0, 0), ParameterError);
}

TEST(RadialBasis, GramIsIdentity) {
    const double c = 0.25;
    for (int l = 0; l <= 6; ++l)
        for (int s = 1; s <= 8; ++s)
            for (int t = s; t <= 8; ++t) {
                const double g = simpson([&](double k) { return radialBasis(l, s, k, c) * radialBasis(l, t, k, c) * k * k; },
                                         0.0, c, 4000);
                EXPECT_NEAR(g, s == t ? 1.0 : 0.0, 1e-8) << "l=" << l << " s=" << s << " t=" << t;
            }
}

TEST(RadialBasis, VanishesAtBandlimit) {
    for (int l = 0; l <= 5; ++l)
        for (int s = 1; s <= 5; ++s) EXPECT_NEAR(radialBasis(l, s, 0.25, 0.25), 0.0, 1e-10);
}

TEST(SphericalHarmonics, LowDegreeClosedForms) {
    const double c1 = std::sqrt(3.0 / (4.0 * M_PI));
    for (double th : {0.3, 1.1, 2.5})
        for (double ph : {0.0, 0.7, 4.0}) {
            EXPECT_NEAR(realSphericalHarmonic(0, 0, th, ph), 0.5 / std::sqrt(M_PI), 1e-15);
            EXPECT_NEAR(realSphericalHarmonic(1, 0, th, ph), c1 * std::cos(th), 1e-15);
            EXPECT_NEAR(realSphericalHarmonic(1, 1, th, ph), c1 * std::sin(th) * std::cos(ph), 1e-15);
            EXPECT_NEAR(realSphericalHarmonic(1, -1, th, ph), c1 * std::sin(th) * std::sin(ph), 1e-15);
            EXPECT_NEAR(realSphericalHarmonic(2, 0, th, ph),
                        std::sqrt(5.0 / (16.0 * M_PI)) * (3.0 * std::cos(th) * std::cos(th) - 1.0), 1e-14);
        }
}

TEST(SphericalHarmonics, OrthonormalUpToDegreeTen) {
    const int lmax = 10;
    const int nth = 24, nph = 48;
    std::vector<double> x, w;
    gaussLegendre(nth, -1.0, 1.0, x, w);
    const int nh = (lmax + 1) * (lmax + 1);
    Eigen::MatrixXd gram = Eigen::MatrixXd::Zero(nh, nh);
    std::vector<double> y(static_cast<std::size_t>(nh));
    for (int i = 0; i < nth; ++i)
        for (int j = 0; j < nph; ++j) {
            const double phi = 2.0 * M_PI * j / nph;
            realSphericalHarmonics(lmax, x[i], std::sqrt(1.0 - x[i] * x[i]), phi, y.data());
            const Eigen::Map<Eigen::VectorXd> v(y.data(), nh);
            gram += (w[i] * 2.0 * M_PI / nph) * v * v.transpose();
        }
    EXPECT_LT((gram - Eigen::MatrixXd::Identity(nh, nh)).cwiseAbs().maxCoeff(), 1e-8);
}

TEST(SphericalHarmonics, AdditionTheorem) {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int trial = 0; trial < 20; ++trial) {
        const double t1 = std::acos(2 * u(rng) - 1), p1 = 2 * M_PI * u(rng);
        const double t2 = std::acos(2 * u(rng) - 1), p2 = 2 * M_PI * u(rng);
        const double dot = std::sin(t1) * std::sin(t2) * std::cos(p1 - p2) + std::cos(t1) * std::cos(t2);
        for (int l = 0; l <= 10; ++l) {
            double s = 0.0;
            for (int m = -l; m <= l; ++m) s += realSphericalHarmonic(l, m, t1, p1) * realSphericalHarmonic(l, m, t2, p2);
            EXPECT_NEAR(s, (2 * l + 1) / (4 * M_PI) * legendre(l, dot), 1e-12);
        }
    }
}

TEST(SphericalHarmonics, BatchMatchesScalar) {
    const int lmax = 8;
    std::vector<double> y((lmax + 1) * (lmax + 1));
    const double th = 0.9, ph = 2.2;
    realSphericalHarmonics(lmax, std::cos(th), std::sin(th), ph, y.data());
    for (int l = 0; l <= lmax; ++l)
        for (int m = -l; m <= l; ++m) EXPECT_NEAR(y[harmonicIndex(l, m)], realSphericalHarmonic(l, m, th, ph), 1e-14);
}

TEST(EquatorialHarmonics, ParityRowsAreExactlyZero) {
    std::vector<double> phis;
    for (int j = 0; j < 64; ++j) phis.push_back(2 * M_PI * j / 64);
    for (int l = 0; l <= 10; ++l) {
        const Eigen::MatrixXd y = equatorialHarmonicMatrix(l, phis);
        ASSERT_EQ(y.rows(), 2 * l + 1);
        for (int m = -l; m <= l; ++m) {
            if ((l + m) % 2 != 0) {
                EXPECT_EQ(y.row(m + l).cwiseAbs().maxCoeff(), 0.0) << "l=" << l << " m=" << m;
            } else {
                EXPECT_GT(y.row(m + l).cwiseAbs().maxCoeff(), 1e-3);
                for (int j = 0; j < 64; j += 7) EXPECT_NEAR(y(m + l, j), realSphericalHarmonic(l, m, M_PI / 2, phis[j]), 1e-13);
            }
        }
    }
}

TEST(Truncation, CountsZerosBelowSpaceBandwidth) {
    const double c = 0.25, r = 32.0;
    const auto t = truncationLimits(c, r, 10);
    ASSERT_EQ(t.limits.size(), 11u);
    const double bound = 2 * M_PI * c * r;
    for (int l = 0; l <= 10; ++l) {
        const int s = t.limits[l];
        if (s > 0) {
            EXPECT_LE(sphericalBesselZero(l, s), bound);
        }
        EXPECT_GT(sphericalBesselZero(l, s + 1), bound);
        if (l > 0) EXPECT_LE(t.limits[l], t.limits[l - 1]);
    }
    EXPECT_EQ(t.limits[0], 16);
    EXPECT_TRUE(t.emptyDegrees.empty());
}

TEST(Truncation, ReportsEmptyDegrees) {
    const auto t = truncationLimits(0.25, 2.0, 6);
    EXPECT_FALSE(t.emptyDegrees.empty());
    EXPECT_THROW(BasisSpec::make(0.25, 2.0, 6), ParameterError);
}

TEST(BasisSpec, CoefficientCount) {
    const BasisSpec b = BasisSpec::make(0.25, 32.0, 6);
    int n = 0;
    for (int l = 0; l <= 6; ++l) n += b.size(l) * (2 * l + 1);
    EXPECT_EQ(b.coefficientCount(), n);
    EXPECT_NO_THROW(b.validate());
    BasisSpec bad = b;
    bad.truncation[3] = bad.truncation[2] + 1;
    EXPECT_THROW(bad.validate(), ParameterError);
    bad = b;
    bad.bandlimit = 0.7;
    EXPECT_THROW(bad.validate(), ParameterError);
}

TEST(GaussLegendre, ExactForPolynomials) {
    std::vector<double> x, w;
    for (int n : {1, 4, 9, 16}) {
        gaussLegendre(n, 0.5, 2.0, x, w);
        for (int p = 0; p <= 2 * n - 1; ++p) {
            double s = 0.0;
            for (int i = 0; i < n; ++i) s += w[i] * std::pow(x[i], p);
            const double exact = (std::pow(2.0, p + 1) - std::pow(0.5, p + 1)) / (p + 1);
            EXPECT_NEAR(s, exact, 1e-12 * std::max(1.0, std::abs(exact))) << "n=" << n << " p=" << p;
        }
    }
}
