#pragma once

#include "kam/basis.hpp"
#include "kam/so3.hpp"

#include <Eigen/Core>

#include <complex>
#include <cstdint>
#include <vector>

namespace kam {

// Expansion coefficients a_lms of a real structure.
//
// Block l is an S(l) × (2l+1) real matrix A_l with rows s−1 and columns m+l.
// The complex coefficient is a_lms = i^(l mod 2) · A_l(s−1, m+l): real-valued
// densities have purely real even-degree and purely imaginary odd-degree
// coefficients, so the real storage loses nothing and makes every A_l A_lᵀ and
// every orthogonal gauge real.
class VolumeCoefficients {
public:
    VolumeCoefficients() = default;
    // Zero coefficients for the given basis.
    explicit VolumeCoefficients(BasisSpec basis);
    VolumeCoefficients(BasisSpec basis, std::vector<Eigen::MatrixXd> blocks);

    const BasisSpec& basis() const { return basis_; }
    int maxDegree() const { return basis_.maxDegree; }
    const Eigen::MatrixXd& block(int l) const { return blocks_.at(static_cast<std::size_t>(l)); }
    Eigen::MatrixXd& block(int l) { return blocks_.at(static_cast<std::size_t>(l)); }
    const std::vector<Eigen::MatrixXd>& blocks() const { return blocks_; }

    // Concatenation of all blocks, row-major within each block.
    Eigen::VectorXd flatten() const;
    double squaredNorm() const;

    VolumeCoefficients& operator+=(const VolumeCoefficients& rhs);
    VolumeCoefficients& operator*=(double s);
    friend VolumeCoefficients operator+(VolumeCoefficients a, const VolumeCoefficients& b) { return a += b; }
    friend VolumeCoefficients operator*(double s, VolumeCoefficients a) { return a *= s; }
    friend VolumeCoefficients operator-(const VolumeCoefficients& a) { return -1.0 * a; }

private:
    BasisSpec basis_;
    std::vector<Eigen::MatrixXd> blocks_;
};

// i.i.d. standard normal coefficients.
VolumeCoefficients randomCoefficients(const BasisSpec& basis, std::uint64_t seed);

// Coefficients of x ↦ phi(Rᵀx): block l becomes A_l D_l(R).
VolumeCoefficients rotateCoefficients(const VolumeCoefficients& coeffs, const Rotation& r);

// Coefficients of x ↦ phi(−x): block l is multiplied by (−1)^l.
VolumeCoefficients invertCoefficients(const VolumeCoefficients& coeffs);

// Frequency-space point in spherical coordinates.
struct SphericalPoint {
    double k;
    double theta;
    double phi;
};

// phî at each point. Throws DomainError when some k exceeds the bandlimit.
std::vector<std::complex<double>> evaluateFourier(const VolumeCoefficients& coeffs,
                                                  const std::vector<SphericalPoint>& points);
std::complex<double> evaluateFourier(const VolumeCoefficients& coeffs, const Eigen::Vector3d& frequency);

// Normalized inner product of the flattened coefficient vectors; throws
// NumericalError when either input has zero norm and ParameterError when
// the bases differ.
double coefficientCorrelation(const VolumeCoefficients& a, const VolumeCoefficients& b);

// N³ real voxel array, index (z, y, x) = data[(z N + y) N + x], origin at
// voxel (N/2, N/2, N/2).
struct VolumeGrid {
    int size = 0;
    double voxelSize = 1.0;   // Å per pixel
    std::vector<double> data;

    VolumeGrid() = default;
    VolumeGrid(int n, double voxel = 1.0) : size(n), voxelSize(voxel), data(static_cast<std::size_t>(n) * n * n, 0.0) {}
    double& operator()(int z, int y, int x) { return data[(static_cast<std::size_t>(z) * size + y) * size + x]; }
    double operator()(int z, int y, int x) const { return data[(static_cast<std::size_t>(z) * size + y) * size + x]; }
};

// Samples phî on the Cartesian frequency grid (spacing 1/N cycles per pixel)
// inside the ball k ≤ c, zero outside, and inverse transforms. Requires
// N ≥ 2R. Throws NumericalError when the discarded imaginary part exceeds
// 1e-10 of the real part.
VolumeGrid synthesizeRealGrid(const VolumeCoefficients& coeffs, int n);

struct ExpansionReport {
    VolumeCoefficients coefficients;
    double conditionEstimate = 1.0;   // of the normal matrix, from Lanczos
    int iterations = 0;
    double relativeResidual = 0.0;    // ‖Φa − F‖ / ‖F‖ over in-ball samples
};

// Least-squares fit of the grid's Fourier transform (inside the ball) onto
// the basis. Throws NumericalError when the estimated condition number of
// the normal system exceeds maxCondition.
ExpansionReport expandFromGrid(const VolumeGrid& grid, const BasisSpec& basis, double maxCondition = 1e8);

} // namespace kam
