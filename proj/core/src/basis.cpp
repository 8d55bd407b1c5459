#include "kam/basis.hpp"
#include "kam/error.hpp"

#include <cmath>
#include <mutex>
#include <numbers>
#include <string>

namespace kam {
namespace {

constexpr int kMaxZeroDegree = 200;
constexpr int kMaxZeroIndex = 500;
constexpr double kPi = std::numbers::pi;

// x^l / (2l+1)!! · Σ_k (−x²/2)^k / (k! Π_{i=1..k}(2l+2i+1)), used when x² < 2l+3
// so that every term shrinks.
double besselSeries(int l, double x) {
    double prefactor = 1.0;
    for (int i = 1; i <= l; ++i) prefactor *= x / (2.0 * i + 1.0);
    const double half = -0.5 * x * x;
    double term = 1.0;
    double sum = 1.0;
    for (int k = 1; k < 100; ++k) {
        term *= half / (k * (2.0 * l + 2.0 * k + 1.0));
        sum += term;
        if (std::abs(term) < 1e-17 * std::abs(sum)) break;
    }
    return prefactor * sum;
}

// Miller's downward recurrence, normalized against the closed-form j_0 or j_1.
double besselDownward(int l, double x) {
    const int start = l + 2 * static_cast<int>(std::ceil(std::sqrt(40.0 * (l + 1)))) + 20;
    double next = 0.0;   // f_{n+1}
    double cur = 1e-300; // f_n
    double atL = 0.0, at0 = 0.0, at1 = 0.0;
    for (int n = start; n >= 0; --n) {
        if (n == l) atL = cur;
        if (n == 1) at1 = cur;
        if (n == 0) {
            at0 = cur;
            break;
        }
        const double prev = (2.0 * n + 1.0) / x * cur - next;
        next = cur;
        cur = prev;
        if (std::abs(cur) > 1e250) {
            cur *= 1e-250;
            next *= 1e-250;
            atL *= 1e-250;
            at1 *= 1e-250;
        }
    }
    const double j0 = std::sin(x) / x;
    const double j1 = std::sin(x) / (x * x) - std::cos(x) / x;
    const double scale = std::abs(j0) >= std::abs(j1) ? j0 / at0 : j1 / at1;
    return atL * scale;
}

double besselDerivative(int l, double x) {
    if (l == 0) return -sphericalBessel(1, x);
    return sphericalBessel(l - 1, x) - (l + 1.0) / x * sphericalBessel(l, x);
}

// Root of j_l in (a, b) where j_l changes sign; Newton with bisection fallback.
double refineZero(int l, double a, double b) {
    double fa = sphericalBessel(l, a);
    double x = 0.5 * (a + b);
    for (int iter = 0; iter < 200; ++iter) {
        const double f = sphericalBessel(l, x);
        if (f == 0.0) return x;
        if ((f > 0) == (fa > 0)) {
            a = x;
            fa = f;
        } else {
            b = x;
        }
        const double df = besselDerivative(l, x);
        double candidate = x - f / df;
        if (!(candidate > a && candidate < b) || df == 0.0) candidate = 0.5 * (a + b);
        const double step = std::abs(candidate - x);
        x = candidate;
        if (step < 1e-15 * x || (b - a) < 4e-16 * x) break;
    }
    return x;
}

struct ZeroTable {
    std::mutex mutex;
    std::vector<std::vector<double>> zeros;

    // Caller holds the mutex.
    void ensure(int l, int count) {
        if (zeros.size() <= static_cast<std::size_t>(l)) zeros.resize(l + 1);
        auto& row = zeros[l];
        if (static_cast<int>(row.size()) >= count) return;
        if (l == 0) {
            for (int s = static_cast<int>(row.size()) + 1; s <= count; ++s) row.push_back(s * kPi);
            return;
        }
        ensure(l - 1, count + 1);
        const auto& lower = zeros[l - 1];
        auto& target = zeros[l];
        for (int s = static_cast<int>(target.size()) + 1; s <= count; ++s)
            target.push_back(refineZero(l, lower[s - 1], lower[s]));
    }
};

ZeroTable& zeroTable() {
    static ZeroTable table;
    return table;
}

} // namespace

int BasisSpec::coefficientCount() const {
    int total = 0;
    for (int l = 0; l <= maxDegree; ++l) total += size(l) * (2 * l + 1);
    return total;
}

void BasisSpec::validate() const {
    if (!(bandlimit > 0.0 && bandlimit <= 0.5))
        throw ParameterError("bandlimit c must lie in (0, 1/2], got " + std::to_string(bandlimit));
    if (maxDegree < 0) throw ParameterError("maximum degree L must be non-negative");
    if (!(supportRadius > 0.0)) throw ParameterError("support radius R must be positive");
    if (static_cast<int>(truncation.size()) != maxDegree + 1)
        throw ParameterError("truncation table must have L+1 entries");
    for (int l = 0; l <= maxDegree; ++l) {
        if (truncation[l] < 1)
            throw ParameterError("S(" + std::to_string(l) + ") must be at least 1");
        if (l > 0 && truncation[l] > truncation[l - 1])
            throw ParameterError("truncation S(l) must be non-increasing in l");
    }
}

BasisSpec BasisSpec::make(double bandlimit, double supportRadius, int maxDegree) {
    if (maxDegree < 0) throw ParameterError("maximum degree L must be non-negative");
    if (!(bandlimit > 0.0 && bandlimit <= 0.5)) throw ParameterError("bandlimit c must lie in (0, 1/2]");
    if (!(supportRadius > 0.0)) throw ParameterError("support radius R must be positive");
    auto result = truncationLimits(bandlimit, supportRadius, maxDegree);
    if (!result.emptyDegrees.empty())
        throw ParameterError("degree " + std::to_string(result.emptyDegrees.front()) +
                             " has no radial functions for c·R = " +
                             std::to_string(bandlimit * supportRadius) +
                             "; lower L or increase the support radius");
    BasisSpec spec{bandlimit, maxDegree, supportRadius, std::move(result.limits)};
    spec.validate();
    return spec;
}

double sphericalBessel(int l, double x) {
    if (l < 0) throw ParameterError("spherical Bessel order must be non-negative");
    if (!(x >= 0.0)) throw DomainError("spherical Bessel argument must be non-negative");
    if (x == 0.0) return l == 0 ? 1.0 : 0.0;
    if (x < 1e-4 || x * x < 2.0 * l + 3.0) return besselSeries(l, x);
    if (x > l) {
        const double s = std::sin(x);
        const double c = std::cos(x);
        double jm = s / x;
        if (l == 0) return jm;
        double j = s / (x * x) - c / x;
        for (int n = 1; n < l; ++n) {
            const double jp = (2.0 * n + 1.0) / x * j - jm;
            jm = j;
            j = jp;
        }
        return j;
    }
    return besselDownward(l, x);
}

double sphericalBesselZero(int l, int s) {
    if (l < 0 || l > kMaxZeroDegree)
        throw ParameterError("Bessel zero order out of range [0, 200]: " + std::to_string(l));
    if (s < 1 || s > kMaxZeroIndex)
        throw ParameterError("Bessel zero index out of range [1, 500]: " + std::to_string(s));
    auto& table = zeroTable();
    std::lock_guard lock(table.mutex);
    table.ensure(l, s);
    return table.zeros[l][s - 1];
}

double radialBasis(int l, int s, double k, double bandlimit) {
    if (!(bandlimit > 0.0)) throw ParameterError("bandlimit must be positive");
    if (!(k >= 0.0 && k <= bandlimit))
        throw DomainError("radial frequency " + std::to_string(k) + " outside [0, c]");
    if (k == bandlimit) return 0.0;
    const double u = sphericalBesselZero(l, s);
    const double norm = std::sqrt(2.0) / (std::pow(bandlimit, 1.5) * std::abs(sphericalBessel(l + 1, u)));
    return norm * sphericalBessel(l, u * k / bandlimit);
}

void realSphericalHarmonics(int maxDegree, double x, double sx, double phi, double* out) {
    const int L = maxDegree;
    double pmm = 1.0 / std::sqrt(4.0 * kPi);
    for (int m = 0; m <= L; ++m) {
        if (m > 0) pmm *= std::sqrt((2.0 * m + 1.0) / (2.0 * m)) * sx;
        const double cm = m == 0 ? 1.0 : std::sqrt(2.0) * std::cos(m * phi);
        const double sm = m == 0 ? 0.0 : std::sqrt(2.0) * std::sin(m * phi);
        double p2 = 0.0;
        double p1 = pmm;
        for (int l = m; l <= L; ++l) {
            double p;
            if (l == m) {
                p = pmm;
            } else if (l == m + 1) {
                p = std::sqrt(2.0 * m + 3.0) * x * pmm;
            } else {
                const double a = std::sqrt((4.0 * l * l - 1.0) / (static_cast<double>(l) * l - m * m));
                const double b = std::sqrt(((l - 1.0) * (l - 1.0) - m * m) / (4.0 * (l - 1.0) * (l - 1.0) - 1.0));
                p = a * (x * p1 - b * p2);
            }
            if (l > m) {
                p2 = p1;
                p1 = p;
            }
            if (m == 0) {
                out[harmonicIndex(l, 0)] = p;
            } else {
                out[harmonicIndex(l, m)] = p * cm;
                out[harmonicIndex(l, -m)] = p * sm;
            }
        }
    }
}

double realSphericalHarmonic(int l, int m, double theta, double phi) {
    if (l < 0 || std::abs(m) > l) throw ParameterError("spherical harmonic requires |m| ≤ l");
    std::vector<double> values((l + 1) * (l + 1));
    realSphericalHarmonics(l, std::cos(theta), std::sin(theta), phi, values.data());
    return values[harmonicIndex(l, m)];
}

TruncationResult truncationLimits(double bandlimit, double supportRadius, int maxDegree) {
    TruncationResult result;
    result.limits.assign(std::max(maxDegree, 0) + 1, 0);
    const double threshold = 2.0 * kPi * bandlimit * supportRadius;
    for (int l = 0; l <= maxDegree && l <= kMaxZeroDegree; ++l) {
        int s = 0;
        while (s < kMaxZeroIndex && sphericalBesselZero(l, s + 1) <= threshold) ++s;
        result.limits[l] = s;
    }
    result.limits[0] = std::max(result.limits[0], 1);
    for (int l = 0; l <= maxDegree; ++l)
        if (result.limits[l] == 0) result.emptyDegrees.push_back(l);
    return result;
}

Eigen::MatrixXd equatorialHarmonicMatrix(int l, const std::vector<double>& phiGrid) {
    if (l < 0) throw ParameterError("degree must be non-negative");
    if (static_cast<int>(phiGrid.size()) < 2 * l + 1)
        throw ParameterError("azimuthal grid needs at least 2l+1 samples");
    Eigen::MatrixXd out(2 * l + 1, static_cast<Eigen::Index>(phiGrid.size()));
    std::vector<double> values((l + 1) * (l + 1));
    for (std::size_t j = 0; j < phiGrid.size(); ++j) {
        realSphericalHarmonics(l, 0.0, 1.0, phiGrid[j], values.data());
        for (int m = -l; m <= l; ++m) out(m + l, static_cast<Eigen::Index>(j)) = values[harmonicIndex(l, m)];
    }
    return out;
}

void gaussLegendre(int n, double a, double b, std::vector<double>& nodes, std::vector<double>& weights) {
    if (n < 1) throw ParameterError("Gauss–Legendre rule needs at least one node");
    nodes.assign(n, 0.0);
    weights.assign(n, 0.0);
    const double mid = 0.5 * (a + b);
    const double half = 0.5 * (b - a);
    for (int i = 0; i < (n + 1) / 2; ++i) {
        double z = std::cos(kPi * (i + 0.75) / (n + 0.5));
        double dp = 0.0;
        for (int iter = 0; iter < 100; ++iter) {
            double p1 = 1.0, p2 = 0.0;
            for (int j = 1; j <= n; ++j) {
                const double p3 = p2;
                p2 = p1;
                p1 = ((2.0 * j - 1.0) * z * p2 - (j - 1.0) * p3) / j;
            }
            dp = n * (z * p1 - p2) / (z * z - 1.0);
            const double dz = p1 / dp;
            z -= dz;
            if (std::abs(dz) < 1e-16) break;
        }
        // Ascending order: node i is the negative root.
        nodes[i] = mid - half * z;
        nodes[n - 1 - i] = mid + half * z;
        weights[i] = weights[n - 1 - i] = 2.0 * half / ((1.0 - z * z) * dp * dp);
    }
}

} // namespace kam
