#pragma once

#include "kam/autocorr.hpp"
#include "kam/optimizer.hpp"
#include "kam/projector.hpp"
#include "kam/so3.hpp"
#include "kam/volume.hpp"

#include <Eigen/Core>

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace kam {

// ---------------------------------------------------------------------------
// Degree 0: the missing orthogonal factor is a sign, read off the isotropic
// (radially averaged) profile of the data.

struct IsotropicFit {
    int sign = 1;
    Eigen::VectorXd coefficients;     // σ F_0, S(0) entries
    double relativeResidual = 0.0;    // ‖σ p̂ − p‖ / ‖p‖
    bool ambiguous = false;           // both signs leave residual > 0.5
};

// profile holds one value per ring of grid.
IsotropicFit recoverIsotropicComponent(const Eigen::MatrixXd& f0, const PolarGridSpec& grid,
                                       const std::vector<double>& profile, const BasisSpec& basis);

// ---------------------------------------------------------------------------
// Single-image matching over ∏_l St(2l+1, l+1).

// Weighted squared distance between the slice predicted by candidates
// o_1..o_L and a target image, with analytic Euclidean gradient.
class MatchingCost {
public:
    MatchingCost(const SliceDesign& design, const FourierSliceImage& image, const Eigen::VectorXd& a0);
    double operator()(const StiefelPoint& halves, StiefelPoint* gradient) const;
    // The cost splits exactly into even-degree (real part) and odd-degree
    // (imaginary part) terms.
    std::array<double, 2> parityCosts(const StiefelPoint& halves) const;
    // Σ w |Î|², the cost of predicting nothing but the target.
    double targetEnergy() const { return energy_; }
    // Gauss–Newton direction restricted to the tangent space: solves
    // (Bᵀ H B) c = Bᵀ g with H the (constant) Hessian of the cost in the
    // ambient coordinates and B an orthonormal tangent basis.
    StiefelPoint precondition(const StiefelPoint& halves, const StiefelPoint& gradient) const;

    // M_lᵀ W M_k and Ỹ_l Ỹ_kᵀ for degrees of equal parity.
    const Eigen::MatrixXd& radialCross(int l, int k) const { return radialCross_[index(l, k)]; }
    const Eigen::MatrixXd& harmonicCross(int l, int k) const { return harmonicCross_[index(l, k)]; }

private:
    std::size_t index(int l, int k) const { return static_cast<std::size_t>(l * (design_->maxDegree() + 1) + k); }

    const SliceDesign* design_;
    Eigen::MatrixXd targetRe_, targetIm_;
    Eigen::VectorXd weights_;
    double energy_ = 0.0;
    std::vector<Eigen::MatrixXd> radialCross_, harmonicCross_;
    Eigen::MatrixXd hessian_;
    std::vector<Eigen::Index> offsets_;
};

struct MatchOptions {
    int starts = 8;
    // Further batches of `starts` run until both parities reach exactResidual
    // or maxStarts starts have run. maxStarts ≤ starts disables this.
    int maxStarts = 0;
    double exactResidual = 1e-8;
    std::uint64_t seed = 1;
    OptimizeOptions optimizer{.maxIterations = 200, .relativeGradTol = 1e-10};
};

struct HalfAssignment {
    std::vector<Eigen::MatrixXd> halves;   // o_l for l = 1..L at index l−1
    double cost = 0.0;
    double relativeResidual = 0.0;         // √(cost / Σ w|Î|²)
    // Even and odd degrees are chosen independently from the starts.
    std::array<int, 2> bestStarts{0, 0};
    std::vector<double> startCosts;
    int startsUsed = 0;
};

HalfAssignment matchSingleImage(const SliceDesign& design, const FourierSliceImage& image, const Eigen::VectorXd& a0,
                                const MatchOptions& options);
HalfAssignment matchSingleImage(const FactorSet& factors, const FourierSliceImage& image, const Eigen::VectorXd& a0,
                                const MatchOptions& options);

// ---------------------------------------------------------------------------
// Merging the two halves.

// Orthogonal O minimizing ‖O D − B‖_F, O = U Vᵀ from B Dᵀ = U Σ Vᵀ.
Eigen::MatrixXd procrustes(const Eigen::MatrixXd& d, const Eigen::MatrixXd& b);

struct MergeCandidate {
    Rotation rotation;
    double score = 0.0;
    std::vector<Eigen::MatrixXd> orthogonal;   // O_l for l = 1..L at index l−1
};

struct MergeOptions {
    int candidates = 1;
    // Candidates closer than this (radians) to a better one are skipped.
    double separation = 0.3;
    // Degrees that contribute to the score; empty means all.
    std::vector<int> scoredDegrees;
    // Continuously minimize the score over the rotation, starting from each
    // selected grid point.
    bool polish = false;
};

struct MergeResult {
    std::vector<MergeCandidate> candidates;   // best first
    std::size_t gridSize = 0;
    const MergeCandidate& best() const { return candidates.front(); }
};

// Procrustes misfit Σ_l min_{O_l} ‖O_l [Ĩ | D̃_l(R)] − [o_l;1 | o_l;2]‖² and its
// gradient with respect to the unit quaternion of R (when non-null).
double mergeScore(const HalfAssignment& first, const HalfAssignment& second, const std::vector<int>& degrees,
                  const Eigen::Vector4d& quaternion, Eigen::Vector4d* gradient = nullptr);

// For each grid rotation R, Σ_l min_{O_l} ‖O_l [Ĩ | D̃_l(R)] − [o_l;1 | o_l;2]‖²,
// where ~ keeps the columns m ≡ l (mod 2).
MergeResult mergeByGridSearch(const HalfAssignment& first, const HalfAssignment& second,
                              const std::vector<Rotation>& grid, const MergeOptions& options = {});

// ---------------------------------------------------------------------------
// Joint refinement over ∏_l O(2l+1) × SO(3).

// Sum of the two image discrepancies as a function of (O_1..O_L, q), with q
// a unit quaternion stored as the last 4 × 1 factor.
class JointCost {
public:
    JointCost(const SliceDesign& design, const FourierSliceImage& first, const FourierSliceImage& second,
              const Eigen::VectorXd& a0);
    double operator()(const StiefelPoint& point, StiefelPoint* gradient) const;
    double targetEnergy() const { return first_.targetEnergy() + secondEnergy_; }
    // Gauss–Newton direction in the tangent space, with the rotation
    // parametrized by body-frame increments.
    StiefelPoint precondition(const StiefelPoint& point, const StiefelPoint& gradient) const;

private:
    const SliceDesign* design_;
    MatchingCost first_;
    Eigen::MatrixXd secondRe_, secondIm_;
    Eigen::VectorXd weights_;
    double secondEnergy_ = 0.0;
    std::vector<std::array<Eigen::MatrixXd, 3>> generators_;
};

StiefelPoint jointPoint(const std::vector<Eigen::MatrixXd>& orthogonal, const Rotation& r);

struct RefineResult {
    Rotation rotation;
    std::vector<Eigen::MatrixXd> orthogonal;
    double initialCost = 0.0;
    double cost = 0.0;
    double relativeResidual = 0.0;
    int iterations = 0;
    StopReason reason = StopReason::MaxIterations;
};

RefineResult refineJoint(const SliceDesign& design, const FourierSliceImage& first, const FourierSliceImage& second,
                         const Rotation& initRotation, const std::vector<Eigen::MatrixXd>& initOrthogonal,
                         const Eigen::VectorXd& a0, const OptimizeOptions& options = {.maxIterations = 300, .relativeGradTol = 1e-10});

// A_0 = a0 and A_l = F_l O_l.
VolumeCoefficients assembleCoefficients(const FactorSet& factors, const Eigen::VectorXd& a0,
                                        const std::vector<Eigen::MatrixXd>& orthogonal);

// ---------------------------------------------------------------------------
// Full pipeline.

struct ReconstructOptions {
    double gridResolution = 0.15;
    int starts = 8;
    int maxStarts = 96;
    int candidates = 5;
    std::uint64_t seed = 1;
    bool weighted = true;
    // Refinement stops visiting candidates once one reaches this residual.
    double acceptResidual = 1e-8;
    // Procrustes re-solves at the refined rotation per candidate.
    int orientationRestarts = 3;
    OptimizeOptions matchOptimizer{.maxIterations = 200, .relativeGradTol = 1e-10};
    OptimizeOptions refineOptimizer{.maxIterations = 300, .relativeGradTol = 1e-10};
};

struct RetrievalResult {
    VolumeCoefficients coefficients;
    std::vector<Eigen::MatrixXd> orthogonal;   // O_l, l = 1..L at index l−1
    Rotation rotation;                         // orientation of the second image
    int sign = 1;
    // Ordered key=value diagnostics (stage residuals, chosen sign, grid size,
    // settings, timings).
    std::vector<std::pair<std::string, std::string>> diagnostics;
};

// factorize → sign recovery → two single-image matches → grid-search merge →
// joint refinement of the best candidates. Errors are rethrown with the
// failing stage prefixed.
RetrievalResult reconstruct(const ClSpectrum& spectrum, const FourierSliceImage& first,
                            const FourierSliceImage& second, const std::vector<double>& radialProfile,
                            const ReconstructOptions& options = {});

} // namespace kam
