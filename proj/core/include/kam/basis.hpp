#pragma once

#include <Eigen/Core>

#include <vector>

namespace kam {

// Truncated Fourier–Bessel basis on the ball of radius c in frequency space.
//
// The Fourier transform of a structure is expanded as
//   phî(k, θ, φ) = Σ_l Σ_m Σ_s a_lms Y_lm(θ, φ) j_ls(k),
// with 0 ≤ l ≤ maxDegree, −l ≤ m ≤ l and 1 ≤ s ≤ truncation[l].
struct BasisSpec {
    double bandlimit = 0.25;       // c, cycles per pixel, 0 < c ≤ 1/2
    int maxDegree = 0;             // L
    double supportRadius = 16.0;   // R, pixels
    std::vector<int> truncation;   // S(0..L), each ≥ 1, non-increasing

    int size(int l) const { return truncation.at(static_cast<std::size_t>(l)); }
    // Total number of real coefficients Σ_l S(l)(2l+1).
    int coefficientCount() const;
    // Throws ParameterError when the invariants above are violated.
    void validate() const;

    // Basis with S(l) chosen by truncationLimits; throws ParameterError if a
    // degree ≤ L would be empty.
    static BasisSpec make(double bandlimit, double supportRadius, int maxDegree);

    bool operator==(const BasisSpec& other) const = default;
};

// Spherical Bessel function of the first kind j_l(x), x ≥ 0.
double sphericalBessel(int l, double x);

// s-th positive zero of j_l (s ≥ 1); l ≤ 200, s ≤ 500. Results are cached
// process-wide behind a mutex, so concurrent callers are safe.
double sphericalBesselZero(int l, int s);

// Normalized radial function
//   j_ls(k) = √2 / (c^{3/2} |j_{l+1}(u_ls)|) · j_l(u_ls k / c),  0 ≤ k ≤ c,
// orthonormal on [0, c] under the weight k².
double radialBasis(int l, int s, double k, double bandlimit);

// Real orthonormal spherical harmonic without Condon–Shortley phase:
//   Y_l0  = N_l0 P_l(cos θ)
//   Y_lm  = √2 N_lm P_l^m(cos θ) cos(mφ)      m > 0
//   Y_l,-m = √2 N_lm P_l^m(cos θ) sin(mφ)     m > 0
// where N_lm = √((2l+1)/(4π) (l−m)!/(l+m)!) and P_l^m(x) = (1−x²)^{m/2} d^m P_l/dx^m.
double realSphericalHarmonic(int l, int m, double theta, double phi);

// All harmonics of degree ≤ L at one direction, indexed l² + l + m. Takes
// cos θ and sin θ directly so that the equator (0, 1) yields exact zeros.
void realSphericalHarmonics(int maxDegree, double cosTheta, double sinTheta, double phi,
                            double* out);
inline int harmonicIndex(int l, int m) { return l * l + l + m; }

struct TruncationResult {
    std::vector<int> limits;          // S(0..L); S(0) ≥ 1, later entries may be 0
    std::vector<int> emptyDegrees;    // degrees with S(l) = 0
};

// S(l) = max{s : u_ls ≤ 2π c R}, the number of radial modes whose
// real-space oscillation fits inside the support radius.
TruncationResult truncationLimits(double bandlimit, double supportRadius, int maxDegree);

// (2l+1) × nφ matrix with entry (m + l, j) = Y_lm(π/2, φ_j). Rows with l+m
// odd are exactly zero.
Eigen::MatrixXd equatorialHarmonicMatrix(int l, const std::vector<double>& phiGrid);

// Gauss–Legendre nodes and weights on [a, b].
void gaussLegendre(int n, double a, double b, std::vector<double>& nodes,
                   std::vector<double>& weights);

} // namespace kam
