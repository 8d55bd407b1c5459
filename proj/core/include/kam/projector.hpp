#pragma once

#include "kam/autocorr.hpp"
#include "kam/so3.hpp"
#include "kam/volume.hpp"

#include <Eigen/Core>

#include <complex>
#include <cstdint>
#include <limits>
#include <vector>

namespace kam {

// Polar sampling of the central k_x k_y plane.
struct PolarGridSpec {
    double bandlimit = 0.25;
    std::vector<double> radii;     // strictly increasing, in (0, c]
    std::vector<double> weights;   // per-ring weight of the discrete L² norm on the disk
    std::vector<double> phis;      // φ_j = 2π j / nPhi

    int rings() const { return static_cast<int>(radii.size()); }
    int angles() const { return static_cast<int>(phis.size()); }

    // Gauss–Legendre radii on (0, c) with weights w_r k_r (2π / nPhi).
    static PolarGridSpec make(double bandlimit, int nRings, int nPhi);
    // nRings = 2 S(0) and nPhi = max(2(2L+1), 64).
    static PolarGridSpec forBasis(const BasisSpec& basis);
    // Arbitrary radii (e.g. read from a file). Weights fall back to the
    // trapezoidal rule in k unless the radii match the Gauss–Legendre rule.
    static PolarGridSpec fromRadii(double bandlimit, std::vector<double> radii, int nPhi);

    // Replaces the quadrature weights by uniform ones (unweighted Frobenius norm).
    PolarGridSpec unweighted() const;

    bool sameSampling(const PolarGridSpec& other) const;
};

// Fourier-plane image sampled on a polar grid: values(ring, angle).
struct FourierSliceImage {
    PolarGridSpec grid;
    Eigen::MatrixXcd values;

    double power() const;   // mean |value|²
};

// Square real-space image, origin at pixel (N/2, N/2), data[y * N + x].
struct RealImage {
    int size = 0;
    std::vector<double> data;
};

// Central slice phî(Rᵀ (k cos φ, k sin φ, 0)) on the polar grid.
FourierSliceImage projectClean(const VolumeCoefficients& coeffs, const Rotation& r, const PolarGridSpec& grid);

// Linear maps from candidate orthogonal factors to predicted slices at the
// identity orientation. For degree l, with M_l = J_l F_l ([J_l]_{r,s} = j_ls(k_r))
// and Ỹ_l the equatorially non-vanishing rows of Y_l(π/2, ·), a candidate
// o_l of size (2l+1) × (l+1) contributes i^(l mod 2) M_l o_l Ỹ_l.
class SliceDesign {
public:
    SliceDesign(const FactorSet& factors, const PolarGridSpec& grid);

    int maxDegree() const { return maxDegree_; }
    const PolarGridSpec& grid() const { return grid_; }
    // nRings × (2l+1).
    const Eigen::MatrixXd& radialFactor(int l) const { return m_[l]; }
    // (l+1) × nPhi, rows m = −l, −l+2, ..., l.
    const Eigen::MatrixXd& activeHarmonics(int l) const { return yActive_[l]; }

    // i^(l mod 2) M_l o Ỹ_l; o must be (2l+1) × (l+1).
    Eigen::MatrixXcd contribution(int l, const Eigen::MatrixXd& o) const;
    // Degree-0 term for the signed factor column a0 (S(0) entries).
    Eigen::MatrixXcd isotropicTerm(const Eigen::VectorXd& a0) const;
    // Full prediction Σ_l contributions, with halves[l-1] the candidate for l ≥ 1.
    Eigen::MatrixXcd predict(const Eigen::VectorXd& a0, const std::vector<Eigen::MatrixXd>& halves) const;

private:
    int maxDegree_;
    PolarGridSpec grid_;
    Eigen::MatrixXd j0_;
    std::vector<Eigen::MatrixXd> m_;
    std::vector<Eigen::MatrixXd> yActive_;
};

// The per-degree linear maps G_l of the design (l ≥ 1 usable).
inline SliceDesign sliceDesignOperators(const FactorSet& factors, const PolarGridSpec& grid) {
    return SliceDesign(factors, grid);
}

// Indices m + l of the columns of O_l that reach the equatorial plane,
// m ≡ l (mod 2), i.e. every other column including the first and last.
std::vector<int> activeColumns(int l);

inline constexpr double kNoiseless = std::numeric_limits<double>::infinity();

// Additive white Gaussian noise with variance (mean signal power) / snr. For
// polar images the noise is Hermitian across antipodal samples so that it
// corresponds to a real-space noise image. snr = ∞ leaves the image unchanged.
FourierSliceImage addNoise(const FourierSliceImage& image, double snr, std::uint64_t seed);
RealImage addNoise(const RealImage& image, double snr, std::uint64_t seed);

// Ring-wise mean over images and angles (real part).
std::vector<double> radialAverageProfile(const std::vector<FourierSliceImage>& images);

// Radially symmetric contrast transfer function, simulation only.
struct CtfParams {
    double defocus = 15000.0;         // Å, underfocus positive
    double voltage = 300.0;           // kV
    double sphericalAberration = 2.7; // mm
    double amplitudeContrast = 0.07;
    double voxelSize = 1.0;           // Å per pixel
};
double ctfValue(const CtfParams& params, double k);
FourierSliceImage applyCtf(const FourierSliceImage& image, const CtfParams& params);

// Real-space rendering of a central slice: samples the slice on the N × N
// Cartesian frequency grid inside the disk k ≤ c and inverse transforms.
RealImage renderProjection(const VolumeCoefficients& coeffs, const Rotation& r, int n);

// Polar Fourier samples of a real-space image, by direct evaluation of its
// discrete-space Fourier transform at each polar point.
FourierSliceImage sliceFromRealImage(const RealImage& image, const PolarGridSpec& grid);

} // namespace kam
