#pragma once

#include "kam/volume.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <vector>

namespace kam {

// The per-degree Gram matrices C_l = A_l A_lᵀ (S(l) × S(l)), l = 0..L.
struct ClSpectrum {
    BasisSpec basis;
    std::vector<Eigen::MatrixXd> matrices;

    int maxDegree() const { return basis.maxDegree; }
    // Symmetry and shape checks; throws ParameterError.
    void validate() const;
};

// Factors F_l (S(l) × (2l+1)) with F_l F_lᵀ = C_l. Columns are ordered by
// decreasing eigenvalue; those beyond the numerical rank are zero.
struct FactorSet {
    BasisSpec basis;
    std::vector<Eigen::MatrixXd> factors;
    std::vector<int> ranks;

    int maxDegree() const { return basis.maxDegree; }
};

ClSpectrum clFromCoefficients(const VolumeCoefficients& coeffs);

// Eigendecomposition-based factorization with eigenvalues clamped at zero.
// Throws NumericalError when some eigenvalue is below −1e-6 ‖C_l‖.
FactorSet factorize(const ClSpectrum& spectrum);

// Adds a symmetric Gaussian perturbation with ‖ΔC_l‖_F = relNoise ‖C_l‖_F and
// projects the result back onto the PSD cone.
ClSpectrum perturbSpectrum(const ClSpectrum& spectrum, double relNoise, std::uint64_t seed);

} // namespace kam
