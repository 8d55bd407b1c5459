#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <array>
#include <cstdint>
#include <vector>

namespace kam {

// Element of SO(3) stored as a unit quaternion (w, x, y, z) with w ≥ 0.
class Rotation {
public:
    Rotation() = default;
    // Normalizes and canonicalizes; throws ParameterError on a zero quaternion.
    Rotation(double w, double x, double y, double z);
    static Rotation fromMatrix(const Eigen::Matrix3d& m);
    static Rotation fromAxisAngle(const Eigen::Vector3d& axis, double angle);
    // R = R_z(alpha) R_y(beta) R_z(gamma).
    static Rotation fromZyz(double alpha, double beta, double gamma);
    static Rotation identity() { return {}; }

    Eigen::Matrix3d matrix() const;
    const Eigen::Vector4d& quaternion() const { return q_; }
    Rotation inverse() const;
    Rotation operator*(const Rotation& rhs) const;
    // Rotation angle in [0, π].
    double angle() const;

private:
    Eigen::Vector4d q_{1.0, 0.0, 0.0, 0.0};
};

// Geodesic distance on SO(3), the angle of a⁻¹b.
double angularDistance(const Rotation& a, const Rotation& b);

// n Haar-distributed rotations from normalized 4D Gaussian vectors.
std::vector<Rotation> sampleUniformRotations(std::size_t n, std::uint64_t seed);

// Layered Hopf-fibration covering of SO(3): a spiral cover of S² for the
// viewing axis times an evenly spaced in-plane angle. Every rotation is
// within `resolution` radians of some element; the identity is always the
// first element.
std::vector<Rotation> so3Grid(double resolution);

// Real Wigner D-matrix of degree l, with rows and columns indexed m + l.
// Defined by Y_l(R⁻¹ω) = D_l(R) Y_l(ω) for the column vector Y_l of real
// harmonics. In this convention D_l(R₁R₂) = D_l(R₂) D_l(R₁), and rotating a
// coefficient block A_l (rows s, columns m) by R gives A_l D_l(R).
Eigen::MatrixXd realWignerD(int l, const Rotation& r);

// D_0..D_L at once (Ivanic–Ruedenberg recursion shares the lower degrees).
std::vector<Eigen::MatrixXd> realWignerDAll(int maxDegree, const Rotation& r);

// Skew-symmetric generators G_{l,i} = d/dt D_l(exp(t [e_i]×)) at t = 0, for
// i = x, y, z. With this convention D_l(R exp(t[ξ]×)) = (I + t Σ ξ_i G_{l,i}) D_l(R) + O(t²).
std::array<Eigen::MatrixXd, 3> wignerGenerators(int l);

// Largest supported degree for realWignerD.
inline constexpr int kMaxWignerDegree = 64;

} // namespace kam
