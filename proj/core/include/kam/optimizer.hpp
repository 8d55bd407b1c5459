#pragma once

#include <Eigen/Core>

#include <functional>
#include <vector>

namespace kam {

// A point on a product of Stiefel manifolds St(n_i, p_i): each matrix has
// orthonormal columns. Square factors are orthogonal groups; a 4 × 1 factor
// is the unit-quaternion sphere covering SO(3).
using StiefelPoint = std::vector<Eigen::MatrixXd>;

// Returns the cost and, when gradient is non-null, writes the Euclidean
// (ambient) gradient with the same shapes as the point. Must be pure.
using CostFunction = std::function<double(const StiefelPoint& point, StiefelPoint* gradient)>;

// G − X sym(XᵀG): orthogonal projection onto the tangent space at X.
Eigen::MatrixXd tangentProject(const Eigen::MatrixXd& x, const Eigen::MatrixXd& g);

// QR retraction of X + step·T, with the R factor's diagonal made positive.
// step = 0 returns X unchanged. Throws NumericalError on rank collapse.
Eigen::MatrixXd retract(const Eigen::MatrixXd& x, const Eigen::MatrixXd& t, double step);

// Orthonormal basis of the tangent space at X as columns of vec(T)
// (column-major), of dimension p(p−1)/2 + (n−p)p.
Eigen::MatrixXd tangentBasis(const Eigen::MatrixXd& x);

StiefelPoint tangentProject(const StiefelPoint& x, const StiefelPoint& g);
StiefelPoint retract(const StiefelPoint& x, const StiefelPoint& t, double step);
double inner(const StiefelPoint& a, const StiefelPoint& b);

// Max over factors of ‖XᵀX − I‖_F.
double feasibilityError(const StiefelPoint& x);

struct OptimizeOptions {
    int maxIterations = 500;
    // Stop once ‖grad‖ ≤ relativeGradTol · ‖grad₀‖ (or ≤ absoluteGradTol).
    double relativeGradTol = 1e-8;
    double absoluteGradTol = 0.0;
    double armijoFactor = 0.5;
    double sufficientDecrease = 1e-4;
    int maxBacktracks = 60;
    // Length of the very first trial step, measured in the ambient norm.
    double initialStepLength = 0.1;
    // With a preconditioner every iteration starts from this step instead
    // of a Barzilai–Borwein estimate.
    double preconditionedStep = 1.0;
};

enum class StopReason { GradientTolerance, MaxIterations, Stalled };
const char* toString(StopReason reason);

struct OptimizeReport {
    StiefelPoint point;
    double cost = 0.0;
    double gradientNorm = 0.0;
    int iterations = 0;
    StopReason reason = StopReason::MaxIterations;
    std::vector<double> costHistory;   // cost at every accepted iterate, starting with the initial point
};

// Maps the Riemannian gradient at a point to a tangent search direction
// (before negation). Must satisfy ⟨g, P(g)⟩ > 0 for g ≠ 0; when it does not,
// the plain gradient is used for that iteration.
using Preconditioner = std::function<StiefelPoint(const StiefelPoint& point, const StiefelPoint& gradient)>;

// Riemannian gradient descent with Barzilai–Borwein trial steps and
// monotone Armijo backtracking, optionally preconditioned. Throws
// NumericalError when the cost or gradient at an accepted point is not finite.
OptimizeReport minimize(const CostFunction& cost, StiefelPoint init, const OptimizeOptions& options = {},
                        const Preconditioner& preconditioner = {});

} // namespace kam
