#include "kam/projector.hpp"
#include "kam/error.hpp"
#include "kam/parallel.hpp"

#include "fft.hpp"

#include <cmath>
#include <numbers>
#include <random>
#include <string>

namespace kam {

using cdouble = std::complex<double>;

namespace {

std::vector<double> uniformPhis(int nPhi) {
    std::vector<double> phis(nPhi);
    for (int j = 0; j < nPhi; ++j) phis[j] = 2.0 * std::numbers::pi * j / nPhi;
    return phis;
}

// J_l: nRings × S(l), [J]_{r,s} = j_ls(k_r).
Eigen::MatrixXd radialMatrix(const BasisSpec& basis, int l, const std::vector<double>& radii) {
    Eigen::MatrixXd j(static_cast<Eigen::Index>(radii.size()), basis.size(l));
    for (std::size_t r = 0; r < radii.size(); ++r)
        for (int s = 0; s < basis.size(l); ++s) j(r, s) = radialBasis(l, s + 1, radii[r], basis.bandlimit);
    return j;
}

} // namespace

PolarGridSpec PolarGridSpec::make(double bandlimit, int nRings, int nPhi) {
    if (!(bandlimit > 0.0)) throw ParameterError("bandlimit must be positive");
    if (nRings < 1 || nPhi < 1) throw ParameterError("polar grid needs at least one ring and one angle");
    PolarGridSpec g;
    g.bandlimit = bandlimit;
    std::vector<double> w;
    gaussLegendre(nRings, 0.0, bandlimit, g.radii, w);
    g.weights.resize(nRings);
    for (int r = 0; r < nRings; ++r) g.weights[r] = w[r] * g.radii[r] * 2.0 * std::numbers::pi / nPhi;
    g.phis = uniformPhis(nPhi);
    return g;
}

PolarGridSpec PolarGridSpec::forBasis(const BasisSpec& basis) {
    return make(basis.bandlimit, 2 * basis.size(0), std::max(2 * (2 * basis.maxDegree + 1), 64));
}

PolarGridSpec PolarGridSpec::fromRadii(double bandlimit, std::vector<double> radii, int nPhi) {
    if (radii.empty() || nPhi < 1) throw ParameterError("polar grid needs at least one ring and one angle");
    for (std::size_t i = 0; i < radii.size(); ++i) {
        if (!(radii[i] > 0.0 && radii[i] <= bandlimit) || (i > 0 && !(radii[i] > radii[i - 1])))
            throw ParameterError("polar radii must be strictly increasing within (0, c]");
    }
    PolarGridSpec gl = make(bandlimit, static_cast<int>(radii.size()), nPhi);
    bool matches = true;
    for (std::size_t i = 0; i < radii.size(); ++i) matches = matches && std::abs(gl.radii[i] - radii[i]) <= 1e-14 * bandlimit;
    if (matches) return gl;
    PolarGridSpec g;
    g.bandlimit = bandlimit;
    g.radii = std::move(radii);
    g.phis = uniformPhis(nPhi);
    const std::size_t n = g.radii.size();
    g.weights.assign(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        const double lo = i == 0 ? 0.0 : 0.5 * (g.radii[i - 1] + g.radii[i]);
        const double hi = i + 1 == n ? bandlimit : 0.5 * (g.radii[i] + g.radii[i + 1]);
        g.weights[i] = (hi - lo) * g.radii[i] * 2.0 * std::numbers::pi / nPhi;
    }
    return g;
}

PolarGridSpec PolarGridSpec::unweighted() const {
    PolarGridSpec g = *this;
    g.weights.assign(radii.size(), 1.0);
    return g;
}

bool PolarGridSpec::sameSampling(const PolarGridSpec& other) const {
    return bandlimit == other.bandlimit && radii == other.radii && phis.size() == other.phis.size();
}

double FourierSliceImage::power() const {
    if (values.size() == 0) return 0.0;
    return values.cwiseAbs2().mean();
}

FourierSliceImage projectClean(const VolumeCoefficients& coeffs, const Rotation& r, const PolarGridSpec& grid) {
    const auto& basis = coeffs.basis();
    for (double k : grid.radii) {
        if (k > basis.bandlimit * (1.0 + 1e-12)) throw DomainError("polar grid radius exceeds the bandlimit");
    }
    const int L = coeffs.maxDegree();
    const int nr = grid.rings();
    const int np = grid.angles();

    // Radial tables depend only on the ring; harmonics only on the angle.
    std::vector<Eigen::MatrixXd> radial(L + 1);
    for (int l = 0; l <= L; ++l) radial[l] = radialMatrix(basis, l, grid.radii) * coeffs.block(l);   // nr × (2l+1)

    const Eigen::Matrix3d rt = r.matrix().transpose();
    FourierSliceImage out{grid, Eigen::MatrixXcd::Zero(nr, np)};
    std::vector<double> y((L + 1) * (L + 1));
    for (int j = 0; j < np; ++j) {
        const Eigen::Vector3d d = rt * Eigen::Vector3d(std::cos(grid.phis[j]), std::sin(grid.phis[j]), 0.0);
        const double rxy = std::hypot(d.x(), d.y());
        realSphericalHarmonics(L, std::clamp(d.z(), -1.0, 1.0), rxy, rxy == 0.0 ? 0.0 : std::atan2(d.y(), d.x()), y.data());
        for (int l = 0; l <= L; ++l) {
            Eigen::VectorXd yl(2 * l + 1);
            for (int m = -l; m <= l; ++m) yl(m + l) = y[harmonicIndex(l, m)];
            const Eigen::VectorXd col = radial[l] * yl;
            if (l % 2 == 0)
                out.values.col(j).real() += col;
            else
                out.values.col(j).imag() += col;
        }
    }
    return out;
}

std::vector<int> activeColumns(int l) {
    std::vector<int> cols;
    for (int m = -l; m <= l; m += 2) cols.push_back(m + l);
    return cols;
}

SliceDesign::SliceDesign(const FactorSet& factors, const PolarGridSpec& grid) : maxDegree_(factors.maxDegree()), grid_(grid) {
    const auto& basis = factors.basis;
    if (static_cast<int>(factors.factors.size()) != maxDegree_ + 1)
        throw ParameterError("factor set must hold one factor per degree");
    for (int l = 0; l <= maxDegree_; ++l) {
        const auto& f = factors.factors[l];
        if (f.rows() != basis.size(l) || f.cols() != 2 * l + 1)
            throw ParameterError("factor F_" + std::to_string(l) + " must be S(l) × (2l+1)");
        const Eigen::MatrixXd j = radialMatrix(basis, l, grid.radii);
        if (l == 0) j0_ = j;
        m_.push_back(j * f);
        const Eigen::MatrixXd full = equatorialHarmonicMatrix(l, grid.phis);
        const auto cols = activeColumns(l);
        Eigen::MatrixXd act(static_cast<Eigen::Index>(cols.size()), full.cols());
        for (std::size_t i = 0; i < cols.size(); ++i) act.row(i) = full.row(cols[i]);
        yActive_.push_back(std::move(act));
    }
}

Eigen::MatrixXcd SliceDesign::contribution(int l, const Eigen::MatrixXd& o) const {
    if (l < 0 || l > maxDegree_) throw ParameterError("degree out of range");
    if (o.rows() != 2 * l + 1 || o.cols() != l + 1)
        throw ParameterError("candidate for degree " + std::to_string(l) + " must be (2l+1) × (l+1)");
    const Eigen::MatrixXd real = m_[l] * o * yActive_[l];
    Eigen::MatrixXcd out = Eigen::MatrixXcd::Zero(real.rows(), real.cols());
    if (l % 2 == 0)
        out.real() = real;
    else
        out.imag() = real;
    return out;
}

Eigen::MatrixXcd SliceDesign::isotropicTerm(const Eigen::VectorXd& a0) const {
    if (a0.size() != j0_.cols()) throw ParameterError("degree-0 coefficient column must have S(0) entries");
    const Eigen::MatrixXd real = (j0_ * a0) * yActive_[0];
    return real.cast<cdouble>();
}

Eigen::MatrixXcd SliceDesign::predict(const Eigen::VectorXd& a0, const std::vector<Eigen::MatrixXd>& halves) const {
    if (static_cast<int>(halves.size()) != maxDegree_) throw ParameterError("need one candidate per degree 1..L");
    Eigen::MatrixXcd out = isotropicTerm(a0);
    for (int l = 1; l <= maxDegree_; ++l) out += contribution(l, halves[l - 1]);
    return out;
}

FourierSliceImage addNoise(const FourierSliceImage& image, double snr, std::uint64_t seed) {
    if (!(snr > 0.0)) throw ParameterError("SNR must be positive");
    if (std::isinf(snr)) return image;
    const double sigma2 = image.power() / snr;
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, std::sqrt(0.5 * sigma2));
    FourierSliceImage out = image;
    const int np = image.grid.angles();
    const bool paired = np % 2 == 0;
    const int independent = paired ? np / 2 : np;
    for (Eigen::Index r = 0; r < out.values.rows(); ++r) {
        for (int j = 0; j < independent; ++j) {
            const cdouble n(normal(rng), normal(rng));
            out.values(r, j) += n;
            if (paired) out.values(r, j + np / 2) += std::conj(n);
        }
    }
    return out;
}

RealImage addNoise(const RealImage& image, double snr, std::uint64_t seed) {
    if (!(snr > 0.0)) throw ParameterError("SNR must be positive");
    if (std::isinf(snr) || image.data.empty()) return image;
    double power = 0.0;
    for (double v : image.data) power += v * v;
    power /= static_cast<double>(image.data.size());
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, std::sqrt(power / snr));
    RealImage out = image;
    for (double& v : out.data) v += normal(rng);
    return out;
}

std::vector<double> radialAverageProfile(const std::vector<FourierSliceImage>& images) {
    if (images.empty()) throw ParameterError("radial average needs at least one image");
    const auto& grid = images.front().grid;
    std::vector<double> profile(grid.rings(), 0.0);
    for (const auto& img : images) {
        if (!img.grid.sameSampling(grid)) throw ParameterError("radial average requires a common polar grid");
        for (int r = 0; r < grid.rings(); ++r) profile[r] += img.values.row(r).real().mean();
    }
    for (double& v : profile) v /= static_cast<double>(images.size());
    return profile;
}

double ctfValue(const CtfParams& p, double k) {
    const double volts = p.voltage * 1e3;
    const double lambda = 12.2643247 / std::sqrt(volts * (1.0 + 0.978466e-6 * volts));
    const double s = k / p.voxelSize;
    const double cs = p.sphericalAberration * 1e7;
    const double chi = std::numbers::pi * lambda * p.defocus * s * s -
                       0.5 * std::numbers::pi * cs * lambda * lambda * lambda * s * s * s * s;
    const double a = p.amplitudeContrast;
    return -(std::sqrt(1.0 - a * a) * std::sin(chi) + a * std::cos(chi));
}

FourierSliceImage applyCtf(const FourierSliceImage& image, const CtfParams& params) {
    FourierSliceImage out = image;
    for (int r = 0; r < image.grid.rings(); ++r) out.values.row(r) *= ctfValue(params, image.grid.radii[r]);
    return out;
}

RealImage renderProjection(const VolumeCoefficients& coeffs, const Rotation& r, int n) {
    if (n < 2) throw ParameterError("image side must be at least 2");
    const double c = coeffs.basis().bandlimit;
    const Eigen::Matrix3d rt = r.matrix().transpose();
    std::vector<cdouble> spectrum(static_cast<std::size_t>(n) * n, cdouble{});
    const int fmax = (n - 1) / 2;
    std::vector<std::pair<int, Eigen::Vector3d>> points;
    for (int fy = -fmax; fy <= fmax; ++fy)
        for (int fx = -fmax; fx <= fmax; ++fx) {
            const Eigen::Vector3d k(static_cast<double>(fx) / n, static_cast<double>(fy) / n, 0.0);
            if (k.norm() > c) continue;
            points.emplace_back(detail::wrapIndex(fy, n) * n + detail::wrapIndex(fx, n), rt * k);
        }
    std::vector<cdouble> values(points.size());
    parallelFor(points.size(), [&](std::size_t i) { values[i] = evaluateFourier(coeffs, points[i].second); });
    for (std::size_t i = 0; i < points.size(); ++i) spectrum[points[i].first] = values[i];
    detail::fft2d(spectrum, n, n, false);
    RealImage img{n, std::vector<double>(static_cast<std::size_t>(n) * n)};
    const int h = n / 2;
    const double scale = 1.0 / (static_cast<double>(n) * n);
    for (int y = 0; y < n; ++y)
        for (int x = 0; x < n; ++x)
            img.data[static_cast<std::size_t>(y) * n + x] =
                spectrum[detail::wrapIndex(y - h, n) * n + detail::wrapIndex(x - h, n)].real() * scale;
    return img;
}

FourierSliceImage sliceFromRealImage(const RealImage& image, const PolarGridSpec& grid) {
    const int n = image.size;
    if (n < 1 || image.data.size() != static_cast<std::size_t>(n) * n) throw ParameterError("image must be square");
    const int h = n / 2;
    FourierSliceImage out{grid, Eigen::MatrixXcd::Zero(grid.rings(), grid.angles())};
    Eigen::MatrixXd pixels(n, n);
    for (int y = 0; y < n; ++y)
        for (int x = 0; x < n; ++x) pixels(y, x) = image.data[static_cast<std::size_t>(y) * n + x];
    const Eigen::MatrixXcd pc = pixels.cast<cdouble>();
    const std::size_t total = static_cast<std::size_t>(grid.rings()) * grid.angles();
    parallelFor(total, [&](std::size_t idx) {
        const int r = static_cast<int>(idx / grid.angles());
        const int j = static_cast<int>(idx % grid.angles());
        const double kx = grid.radii[r] * std::cos(grid.phis[j]);
        const double ky = grid.radii[r] * std::sin(grid.phis[j]);
        Eigen::VectorXcd ex(n), ey(n);
        for (int i = 0; i < n; ++i) {
            ex(i) = std::polar(1.0, -2.0 * std::numbers::pi * kx * (i - h));
            ey(i) = std::polar(1.0, -2.0 * std::numbers::pi * ky * (i - h));
        }
        out.values(r, j) = ey.transpose() * (pc * ex);
    });
    return out;
}

} // namespace kam
