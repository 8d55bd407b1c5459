#include "kam/volume.hpp"
#include "kam/error.hpp"
#include "kam/parallel.hpp"

#include "fft.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <string>

namespace kam {

using cdouble = std::complex<double>;

VolumeCoefficients::VolumeCoefficients(BasisSpec basis) : basis_(std::move(basis)) {
    basis_.validate();
    for (int l = 0; l <= basis_.maxDegree; ++l) blocks_.push_back(Eigen::MatrixXd::Zero(basis_.size(l), 2 * l + 1));
}

VolumeCoefficients::VolumeCoefficients(BasisSpec basis, std::vector<Eigen::MatrixXd> blocks)
    : basis_(std::move(basis)), blocks_(std::move(blocks)) {
    basis_.validate();
    if (static_cast<int>(blocks_.size()) != basis_.maxDegree + 1)
        throw ParameterError("coefficient blocks must cover degrees 0..L");
    for (int l = 0; l <= basis_.maxDegree; ++l) {
        if (blocks_[l].rows() != basis_.size(l) || blocks_[l].cols() != 2 * l + 1)
            throw ParameterError("coefficient block " + std::to_string(l) + " must be S(l) × (2l+1)");
    }
}

Eigen::VectorXd VolumeCoefficients::flatten() const {
    Eigen::VectorXd out(basis_.coefficientCount());
    Eigen::Index offset = 0;
    for (const auto& b : blocks_)
        for (Eigen::Index r = 0; r < b.rows(); ++r)
            for (Eigen::Index c = 0; c < b.cols(); ++c) out(offset++) = b(r, c);
    return out;
}

double VolumeCoefficients::squaredNorm() const {
    double s = 0.0;
    for (const auto& b : blocks_) s += b.squaredNorm();
    return s;
}

VolumeCoefficients& VolumeCoefficients::operator+=(const VolumeCoefficients& rhs) {
    if (!(basis_ == rhs.basis_)) throw ParameterError("cannot add coefficients over different bases");
    for (std::size_t l = 0; l < blocks_.size(); ++l) blocks_[l] += rhs.blocks_[l];
    return *this;
}

VolumeCoefficients& VolumeCoefficients::operator*=(double s) {
    for (auto& b : blocks_) b *= s;
    return *this;
}

VolumeCoefficients randomCoefficients(const BasisSpec& basis, std::uint64_t seed) {
    VolumeCoefficients out(basis);
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    for (int l = 0; l <= basis.maxDegree; ++l) {
        auto& b = out.block(l);
        for (Eigen::Index r = 0; r < b.rows(); ++r)
            for (Eigen::Index c = 0; c < b.cols(); ++c) b(r, c) = normal(rng);
    }
    return out;
}

VolumeCoefficients rotateCoefficients(const VolumeCoefficients& coeffs, const Rotation& r) {
    const auto d = realWignerDAll(coeffs.maxDegree(), r);
    VolumeCoefficients out = coeffs;
    for (int l = 0; l <= coeffs.maxDegree(); ++l) out.block(l) = coeffs.block(l) * d[l];
    return out;
}

VolumeCoefficients invertCoefficients(const VolumeCoefficients& coeffs) {
    VolumeCoefficients out = coeffs;
    for (int l = 1; l <= coeffs.maxDegree(); l += 2) out.block(l) = -out.block(l);
    return out;
}

namespace {

// Σ_l i^(l mod 2) Σ_m Y_lm Σ_s A_l(s, m) j_ls, given harmonics (indexed
// l² + l + m) and radial values (concatenated over l, s).
cdouble contract(const VolumeCoefficients& coeffs, const double* harmonics, const double* radial) {
    double re = 0.0, im = 0.0;
    int offset = 0;
    for (int l = 0; l <= coeffs.maxDegree(); ++l) {
        const auto& a = coeffs.block(l);
        double acc = 0.0;
        for (int m = -l; m <= l; ++m) {
            double t = 0.0;
            for (Eigen::Index s = 0; s < a.rows(); ++s) t += a(s, m + l) * radial[offset + s];
            acc += t * harmonics[harmonicIndex(l, m)];
        }
        (l % 2 == 0 ? re : im) += acc;
        offset += static_cast<int>(a.rows());
    }
    return {re, im};
}

std::vector<double> radialValues(const BasisSpec& basis, double k) {
    std::vector<double> out;
    out.reserve(basis.coefficientCount());
    for (int l = 0; l <= basis.maxDegree; ++l)
        for (int s = 1; s <= basis.size(l); ++s) out.push_back(radialBasis(l, s, k, basis.bandlimit));
    return out;
}

void checkFrequency(double k, double c) {
    if (!(k >= 0.0) || k > c * (1.0 + 1e-12))
        throw DomainError("frequency " + std::to_string(k) + " outside the band [0, " + std::to_string(c) + "]");
}

// Cartesian frequency samples inside the ball, with cached harmonics and
// radial values (radii are shared through the integer key |f|²).
struct BallSampling {
    int n = 0;
    int maxDegree = 0;
    int harmonicsPerPoint = 0;
    int radialPerKey = 0;
    std::vector<int> fftIndex;
    std::vector<int> radiusKey;
    std::vector<double> harmonics;
    std::vector<std::vector<double>> radialByKey;

    BallSampling(const BasisSpec& basis, int size) : n(size), maxDegree(basis.maxDegree) {
        harmonicsPerPoint = (maxDegree + 1) * (maxDegree + 1);
        radialPerKey = 0;
        for (int l = 0; l <= maxDegree; ++l) radialPerKey += basis.size(l);
        const double cn = basis.bandlimit * n;
        const int fmax = std::min(static_cast<int>(std::floor(cn)), (n - 1) / 2);
        const int maxKey = static_cast<int>(std::floor(cn * cn));
        radialByKey.resize(maxKey + 1);
        for (int fz = -fmax; fz <= fmax; ++fz) {
            for (int fy = -fmax; fy <= fmax; ++fy) {
                for (int fx = -fmax; fx <= fmax; ++fx) {
                    const int key = fx * fx + fy * fy + fz * fz;
                    if (key > maxKey) continue;
                    const double r = std::sqrt(static_cast<double>(key));
                    if (r / n > basis.bandlimit) continue;
                    fftIndex.push_back((detail::wrapIndex(fz, n) * n + detail::wrapIndex(fy, n)) * n +
                                       detail::wrapIndex(fx, n));
                    radiusKey.push_back(key);
                    const std::size_t base = harmonics.size();
                    harmonics.resize(base + harmonicsPerPoint);
                    const double rxy = std::hypot(static_cast<double>(fx), static_cast<double>(fy));
                    const double cosT = key == 0 ? 1.0 : fz / r;
                    const double sinT = key == 0 ? 0.0 : rxy / r;
                    const double phi = rxy == 0.0 ? 0.0 : std::atan2(static_cast<double>(fy), static_cast<double>(fx));
                    realSphericalHarmonics(maxDegree, cosT, sinT, phi, harmonics.data() + base);
                    if (radialByKey[key].empty()) radialByKey[key] = radialValues(basis, r / n);
                }
            }
        }
    }

    std::size_t size() const { return fftIndex.size(); }
    const double* harmonicsAt(std::size_t p) const { return harmonics.data() + p * harmonicsPerPoint; }
    const double* radialAt(std::size_t p) const { return radialByKey[radiusKey[p]].data(); }
};

// Φx over the ball for a flattened coefficient vector laid out as flatten().
void applyBasis(const BasisSpec& basis, const BallSampling& ball, const Eigen::VectorXd& x, std::vector<cdouble>& out) {
    std::vector<Eigen::MatrixXd> blocks;
    Eigen::Index offset = 0;
    for (int l = 0; l <= basis.maxDegree; ++l) {
        Eigen::MatrixXd b(basis.size(l), 2 * l + 1);
        for (Eigen::Index r = 0; r < b.rows(); ++r)
            for (Eigen::Index c = 0; c < b.cols(); ++c) b(r, c) = x(offset++);
        blocks.push_back(std::move(b));
    }
    const VolumeCoefficients coeffs(basis, std::move(blocks));
    out.resize(ball.size());
    parallelFor(ball.size(), [&](std::size_t p) { out[p] = contract(coeffs, ball.harmonicsAt(p), ball.radialAt(p)); });
}

// Φᵀv: the real adjoint, pairing even degrees with Re v and odd with Im v.
Eigen::VectorXd applyAdjoint(const BasisSpec& basis, const BallSampling& ball, const std::vector<cdouble>& v) {
    const int count = basis.coefficientCount();
    const std::size_t chunks = static_cast<std::size_t>(std::max(1, threadCount())) * 4;
    std::vector<Eigen::VectorXd> partial(chunks, Eigen::VectorXd::Zero(count));
    parallelFor(chunks, [&](std::size_t c) {
        auto& acc = partial[c];
        const std::size_t begin = ball.size() * c / chunks;
        const std::size_t end = ball.size() * (c + 1) / chunks;
        for (std::size_t p = begin; p < end; ++p) {
            const double* y = ball.harmonicsAt(p);
            const double* rad = ball.radialAt(p);
            Eigen::Index offset = 0;
            int radialOffset = 0;
            for (int l = 0; l <= basis.maxDegree; ++l) {
                const double w = l % 2 == 0 ? v[p].real() : v[p].imag();
                const int S = basis.size(l);
                for (int s = 0; s < S; ++s) {
                    const double ws = w * rad[radialOffset + s];
                    for (int m = -l; m <= l; ++m) acc(offset + s * (2 * l + 1) + m + l) += ws * y[harmonicIndex(l, m)];
                }
                offset += S * (2 * l + 1);
                radialOffset += S;
            }
        }
    });
    Eigen::VectorXd out = Eigen::VectorXd::Zero(count);
    for (const auto& p : partial) out += p;
    return out;
}

} // namespace

std::complex<double> evaluateFourier(const VolumeCoefficients& coeffs, const Eigen::Vector3d& frequency) {
    const double k = frequency.norm();
    checkFrequency(k, coeffs.basis().bandlimit);
    const double rxy = std::hypot(frequency.x(), frequency.y());
    const double cosT = k == 0.0 ? 1.0 : frequency.z() / k;
    const double sinT = k == 0.0 ? 0.0 : rxy / k;
    const double phi = rxy == 0.0 ? 0.0 : std::atan2(frequency.y(), frequency.x());
    std::vector<double> y((coeffs.maxDegree() + 1) * (coeffs.maxDegree() + 1));
    realSphericalHarmonics(coeffs.maxDegree(), cosT, sinT, phi, y.data());
    const auto radial = radialValues(coeffs.basis(), std::min(k, coeffs.basis().bandlimit));
    return contract(coeffs, y.data(), radial.data());
}

std::vector<std::complex<double>> evaluateFourier(const VolumeCoefficients& coeffs,
                                                  const std::vector<SphericalPoint>& points) {
    for (const auto& p : points) checkFrequency(p.k, coeffs.basis().bandlimit);
    std::vector<cdouble> out(points.size());
    const int L = coeffs.maxDegree();
    parallelFor(points.size(), [&](std::size_t i) {
        const auto& p = points[i];
        std::vector<double> y((L + 1) * (L + 1));
        realSphericalHarmonics(L, std::cos(p.theta), std::sin(p.theta), p.phi, y.data());
        const auto radial = radialValues(coeffs.basis(), std::min(p.k, coeffs.basis().bandlimit));
        out[i] = contract(coeffs, y.data(), radial.data());
    });
    return out;
}

double coefficientCorrelation(const VolumeCoefficients& a, const VolumeCoefficients& b) {
    if (!(a.basis() == b.basis())) throw ParameterError("correlation requires coefficients over the same basis");
    const double na = std::sqrt(a.squaredNorm());
    const double nb = std::sqrt(b.squaredNorm());
    if (na == 0.0 || nb == 0.0) throw NumericalError("correlation is undefined for a zero-norm volume");
    double dot = 0.0;
    for (int l = 0; l <= a.maxDegree(); ++l) dot += a.block(l).cwiseProduct(b.block(l)).sum();
    return std::clamp(dot / (na * nb), -1.0, 1.0);
}

VolumeGrid synthesizeRealGrid(const VolumeCoefficients& coeffs, int n) {
    const auto& basis = coeffs.basis();
    if (n < 2 * basis.supportRadius || n < 2)
        throw ParameterError("grid side " + std::to_string(n) + " is smaller than twice the support radius");
    const BallSampling ball(basis, n);
    std::vector<cdouble> spectrum(static_cast<std::size_t>(n) * n * n, cdouble{});
    std::vector<cdouble> values(ball.size());
    parallelFor(ball.size(), [&](std::size_t p) { values[p] = contract(coeffs, ball.harmonicsAt(p), ball.radialAt(p)); });
    for (std::size_t p = 0; p < ball.size(); ++p) spectrum[ball.fftIndex[p]] = values[p];
    detail::fft3d(spectrum, n, false);

    const double scale = 1.0 / (static_cast<double>(n) * n * n);
    double maxRe = 0.0, maxIm = 0.0;
    VolumeGrid grid(n);
    const int h = n / 2;
    for (int z = 0; z < n; ++z)
        for (int y = 0; y < n; ++y)
            for (int x = 0; x < n; ++x) {
                const auto& v = spectrum[(detail::wrapIndex(z - h, n) * n + detail::wrapIndex(y - h, n)) * n +
                                         detail::wrapIndex(x - h, n)];
                grid(z, y, x) = v.real() * scale;
                maxRe = std::max(maxRe, std::abs(v.real()));
                maxIm = std::max(maxIm, std::abs(v.imag()));
            }
    if (maxIm > 1e-10 * maxRe + 1e-300)
        throw NumericalError("synthesized volume has a non-negligible imaginary part (" + std::to_string(maxIm / maxRe) + ")");
    return grid;
}

ExpansionReport expandFromGrid(const VolumeGrid& grid, const BasisSpec& basis, double maxCondition) {
    basis.validate();
    const int n = grid.size;
    if (n < 2 || grid.data.size() != static_cast<std::size_t>(n) * n * n)
        throw ParameterError("volume grid must be a non-empty cube");
    for (double v : grid.data)
        if (!std::isfinite(v)) throw ParameterError("volume grid contains non-finite values");

    std::vector<cdouble> spectrum(grid.data.size());
    const int h = n / 2;
    for (int z = 0; z < n; ++z)
        for (int y = 0; y < n; ++y)
            for (int x = 0; x < n; ++x)
                spectrum[(detail::wrapIndex(z - h, n) * n + detail::wrapIndex(y - h, n)) * n + detail::wrapIndex(x - h, n)] =
                    grid(z, y, x);
    detail::fft3d(spectrum, n, true);

    const BallSampling ball(basis, n);
    std::vector<cdouble> rhs(ball.size());
    double rhsNorm2 = 0.0;
    for (std::size_t p = 0; p < ball.size(); ++p) {
        rhs[p] = spectrum[ball.fftIndex[p]];
        rhsNorm2 += std::norm(rhs[p]);
    }

    ExpansionReport report{VolumeCoefficients(basis), 1.0, 0, 0.0};
    const int count = basis.coefficientCount();
    if (rhsNorm2 == 0.0) return report;

    // Jacobi-scaled CGLS: solve min ‖Φ D x − F‖ with D = diag(1/‖Φ e_j‖).
    Eigen::VectorXd colNorm2 = Eigen::VectorXd::Zero(count);
    for (std::size_t p = 0; p < ball.size(); ++p) {
        const double* y = ball.harmonicsAt(p);
        const double* rad = ball.radialAt(p);
        Eigen::Index offset = 0;
        int radialOffset = 0;
        for (int l = 0; l <= basis.maxDegree; ++l) {
            for (int s = 0; s < basis.size(l); ++s)
                for (int m = -l; m <= l; ++m) {
                    const double v = rad[radialOffset + s] * y[harmonicIndex(l, m)];
                    colNorm2(offset + s * (2 * l + 1) + m + l) += v * v;
                }
            offset += basis.size(l) * (2 * l + 1);
            radialOffset += basis.size(l);
        }
    }
    for (Eigen::Index j = 0; j < count; ++j)
        if (!(colNorm2(j) > 0.0))
            throw NumericalError("basis function " + std::to_string(j) +
                                 " vanishes on the sampling grid; use a smaller L or a larger N");
    const Eigen::VectorXd scale = colNorm2.cwiseSqrt().cwiseInverse();

    Eigen::VectorXd x = Eigen::VectorXd::Zero(count);
    std::vector<cdouble> r = rhs;
    Eigen::VectorXd s = applyAdjoint(basis, ball, r).cwiseProduct(scale);
    Eigen::VectorXd p = s;
    double gamma = s.squaredNorm();
    const double gamma0 = gamma;
    std::vector<double> alphas, betas;
    std::vector<cdouble> q;
    int iter = 0;
    for (; iter < 1000 && gamma > 1e-26 * gamma0; ++iter) {
        applyBasis(basis, ball, p.cwiseProduct(scale), q);
        double qq = 0.0;
        for (const auto& v : q) qq += std::norm(v);
        if (!(qq > 0.0)) break;
        const double alpha = gamma / qq;
        x += alpha * p;
        for (std::size_t i = 0; i < r.size(); ++i) r[i] -= alpha * q[i];
        s = applyAdjoint(basis, ball, r).cwiseProduct(scale);
        const double gammaNew = s.squaredNorm();
        const double beta = gammaNew / gamma;
        alphas.push_back(alpha);
        betas.push_back(beta);
        p = s + beta * p;
        gamma = gammaNew;
    }

    // Lanczos tridiagonal of the scaled normal matrix from the CG coefficients.
    const int k = static_cast<int>(alphas.size());
    if (k > 0) {
        Eigen::VectorXd diag(k), off(std::max(k - 1, 0));
        for (int j = 0; j < k; ++j) {
            diag(j) = 1.0 / alphas[j] + (j > 0 ? betas[j - 1] / alphas[j - 1] : 0.0);
            if (j + 1 < k) off(j) = std::sqrt(betas[j]) / alphas[j];
        }
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig;
        eig.computeFromTridiagonal(diag, off, Eigen::EigenvaluesOnly);
        const double lo = eig.eigenvalues().minCoeff();
        const double hi = eig.eigenvalues().maxCoeff();
        report.conditionEstimate = lo > 0.0 ? hi / lo : std::numeric_limits<double>::infinity();
    }
    report.iterations = iter;
    if (report.conditionEstimate > maxCondition)
        throw NumericalError("expansion normal system is ill-conditioned (condition ≈ " +
                             std::to_string(report.conditionEstimate) + "); use a smaller L or a larger grid");

    const Eigen::VectorXd a = x.cwiseProduct(scale);
    double res2 = 0.0;
    for (const auto& v : r) res2 += std::norm(v);
    report.relativeResidual = std::sqrt(res2 / rhsNorm2);

    Eigen::Index offset = 0;
    for (int l = 0; l <= basis.maxDegree; ++l) {
        auto& b = report.coefficients.block(l);
        for (Eigen::Index row = 0; row < b.rows(); ++row)
            for (Eigen::Index col = 0; col < b.cols(); ++col) b(row, col) = a(offset++);
    }
    return report;
}

} // namespace kam
