#pragma once

#include "kam/autocorr.hpp"
#include "kam/basis.hpp"
#include "kam/parallel.hpp"
#include "kam/projector.hpp"
#include "kam/so3.hpp"
#include "kam/volume.hpp"

#include <Eigen/Core>
#include <Eigen/QR>
#include <Eigen/SVD>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

namespace kam::test {

inline Eigen::MatrixXd randomOrthogonal(int n, std::mt19937_64& rng) {
    std::normal_distribution<double> nd;
    Eigen::MatrixXd g(n, n);
    for (Eigen::Index i = 0; i < g.size(); ++i) g.data()[i] = nd(rng);
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
    Eigen::MatrixXd q = qr.householderQ();
    const Eigen::MatrixXd r = qr.matrixQR().triangularView<Eigen::Upper>();
    for (int i = 0; i < n; ++i)
        if (r(i, i) < 0.0) q.col(i) *= -1.0;
    return q;
}

inline Eigen::MatrixXd randomMatrix(int rows, int cols, std::mt19937_64& rng) {
    std::normal_distribution<double> nd;
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = nd(rng);
    return m;
}

inline double relativeError(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
    return (a - b).norm() / std::max(b.norm(), 1e-300);
}

inline double relativeError(const Eigen::MatrixXcd& a, const Eigen::MatrixXcd& b) {
    return (a - b).norm() / std::max(b.norm(), 1e-300);
}

// Orthogonal O_l with F_l O_l = A_l (exact when F_l has full column rank),
// for l = 1..L at index l−1.
inline std::vector<Eigen::MatrixXd> gaugeOf(const FactorSet& f, const VolumeCoefficients& a) {
    std::vector<Eigen::MatrixXd> out;
    for (int l = 1; l <= a.maxDegree(); ++l) {
        Eigen::JacobiSVD<Eigen::MatrixXd> svd(f.factors[l].transpose() * a.block(l), Eigen::ComputeFullU | Eigen::ComputeFullV);
        out.push_back(svd.matrixU() * svd.matrixV().transpose());
    }
    return out;
}

// Columns m ≡ l (mod 2) of each O_l: the part a single slice sees.
inline std::vector<Eigen::MatrixXd> activeHalves(const std::vector<Eigen::MatrixXd>& orthogonal) {
    std::vector<Eigen::MatrixXd> out;
    for (std::size_t i = 0; i < orthogonal.size(); ++i) {
        const int l = static_cast<int>(i) + 1;
        const auto cols = activeColumns(l);
        Eigen::MatrixXd h(2 * l + 1, static_cast<Eigen::Index>(cols.size()));
        for (std::size_t j = 0; j < cols.size(); ++j) h.col(static_cast<Eigen::Index>(j)) = orthogonal[i].col(cols[j]);
        out.push_back(h);
    }
    return out;
}

// Ring values of the degree-0 part of the structure, which is what an
// infinite average of projections converges to.
inline std::vector<double> exactProfile(const VolumeCoefficients& coeffs, const PolarGridSpec& grid) {
    VolumeCoefficients iso(coeffs.basis());
    iso.block(0) = coeffs.block(0);
    const FourierSliceImage im = projectClean(iso, Rotation::identity(), grid);
    std::vector<double> out;
    for (int r = 0; r < grid.rings(); ++r) out.push_back(im.values(r, 0).real());
    return out;
}

// Synthetic two-image problem: random phantom, two clean projections whose
// relative angle lies in [0.3, π − 0.3], and the oracle spectrum.
struct Scenario {
    VolumeCoefficients phantom;
    Rotation first, second;
    PolarGridSpec grid;
    FourierSliceImage image1, image2;
    ClSpectrum spectrum;
    std::vector<double> profile;
};

inline Scenario makeScenario(std::uint64_t seed, int maxDegree = 6, double spectrumNoise = 0.0, double bandlimit = 0.25,
                             double radius = 32.0) {
    Scenario s;
    const BasisSpec basis = BasisSpec::make(bandlimit, radius, maxDegree);
    s.phantom = randomCoefficients(basis, deriveSeed(seed, 0));
    for (std::uint64_t k = 0;; ++k) {
        const auto rs = sampleUniformRotations(2, deriveSeed(seed, 10 + k));
        const double a = angularDistance(rs[0], rs[1]);
        if (a >= 0.3 && a <= M_PI - 0.3) {
            s.first = rs[0];
            s.second = rs[1];
            break;
        }
    }
    s.grid = PolarGridSpec::forBasis(basis);
    s.image1 = projectClean(s.phantom, s.first, s.grid);
    s.image2 = projectClean(s.phantom, s.second, s.grid);
    s.spectrum = clFromCoefficients(s.phantom);
    if (spectrumNoise > 0.0) s.spectrum = perturbSpectrum(s.spectrum, spectrumNoise, deriveSeed(seed, 5));
    s.profile = exactProfile(s.phantom, s.grid);
    return s;
}

// Fresh empty directory under the system temporary directory.
inline std::filesystem::path scratchDir(const std::string& name) {
    const auto dir = std::filesystem::temp_directory_path() / ("kam_test_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

} // namespace kam::test
