#include "kam/so3.hpp"
#include "kam/error.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <string>

namespace kam {

Rotation::Rotation(double w, double x, double y, double z) {
    Eigen::Vector4d q(w, x, y, z);
    const double n = q.norm();
    if (!(n > 0.0) || !std::isfinite(n)) throw ParameterError("rotation quaternion must be non-zero and finite");
    q /= n;
    if (q(0) < 0.0) q = -q;
    q_ = q;
}

Rotation Rotation::fromMatrix(const Eigen::Matrix3d& m) {
    Eigen::Quaterniond q(m);
    return {q.w(), q.x(), q.y(), q.z()};
}

Rotation Rotation::fromAxisAngle(const Eigen::Vector3d& axis, double angle) {
    const Eigen::Vector3d a = axis.normalized();
    const double s = std::sin(0.5 * angle);
    return {std::cos(0.5 * angle), s * a.x(), s * a.y(), s * a.z()};
}

Rotation Rotation::fromZyz(double alpha, double beta, double gamma) {
    const Rotation a = fromAxisAngle(Eigen::Vector3d::UnitZ(), alpha);
    const Rotation b = fromAxisAngle(Eigen::Vector3d::UnitY(), beta);
    const Rotation c = fromAxisAngle(Eigen::Vector3d::UnitZ(), gamma);
    return a * b * c;
}

Eigen::Matrix3d Rotation::matrix() const {
    return Eigen::Quaterniond(q_(0), q_(1), q_(2), q_(3)).toRotationMatrix();
}

Rotation Rotation::inverse() const { return {q_(0), -q_(1), -q_(2), -q_(3)}; }

Rotation Rotation::operator*(const Rotation& rhs) const {
    const auto& a = q_;
    const auto& b = rhs.q_;
    return {a(0) * b(0) - a(1) * b(1) - a(2) * b(2) - a(3) * b(3),
            a(0) * b(1) + a(1) * b(0) + a(2) * b(3) - a(3) * b(2),
            a(0) * b(2) - a(1) * b(3) + a(2) * b(0) + a(3) * b(1),
            a(0) * b(3) + a(1) * b(2) - a(2) * b(1) + a(3) * b(0)};
}

double Rotation::angle() const {
    const double v = q_.tail<3>().norm();
    return 2.0 * std::atan2(v, std::abs(q_(0)));
}

double angularDistance(const Rotation& a, const Rotation& b) {
    const double d = std::min(1.0, std::abs(a.quaternion().dot(b.quaternion())));
    return 2.0 * std::acos(d);
}

std::vector<Rotation> sampleUniformRotations(std::size_t n, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<Rotation> out;
    out.reserve(n);
    while (out.size() < n) {
        const double w = normal(rng), x = normal(rng), y = normal(rng), z = normal(rng);
        if (w * w + x * x + y * y + z * z < 1e-12) continue;
        out.emplace_back(w, x, y, z);
    }
    return out;
}

std::vector<Rotation> so3Grid(double resolution) {
    if (!(resolution > 0.0 && resolution <= std::numbers::pi))
        throw ParameterError("SO(3) grid resolution must lie in (0, π]");
    // Half the budget goes to the viewing axis, half to the in-plane angle.
    const double axisRadius = 0.5 * resolution;
    const int nPsi = std::max(2, static_cast<int>(std::ceil(std::numbers::pi / (0.5 * resolution))));
    // A spherical Fibonacci lattice with n points has covering radius close
    // to 1.7/√n on the unit sphere.
    const int nAxes = std::max(2, static_cast<int>(std::ceil(std::pow(1.7 / axisRadius, 2))));

    std::vector<Eigen::Vector3d> axes;
    axes.reserve(nAxes + 1);
    axes.emplace_back(0.0, 0.0, 1.0);
    const double golden = std::numbers::pi * (3.0 - std::sqrt(5.0));
    for (int i = 0; i < nAxes; ++i) {
        const double z = 1.0 - (2.0 * i + 1.0) / nAxes;
        const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
        const double phi = golden * i;
        axes.emplace_back(r * std::cos(phi), r * std::sin(phi), z);
    }

    std::vector<Rotation> grid;
    grid.reserve(axes.size() * nPsi);
    for (const auto& a : axes) {
        const double beta = std::acos(std::clamp(a.z(), -1.0, 1.0));
        const double alpha = (std::abs(a.x()) + std::abs(a.y()) > 0.0) ? std::atan2(a.y(), a.x()) : 0.0;
        for (int k = 0; k < nPsi; ++k) {
            const double psi = 2.0 * std::numbers::pi * k / nPsi;
            grid.push_back(Rotation::fromZyz(alpha, beta, psi - alpha));
        }
    }
    return grid;
}

namespace {

// Centered access r(m, n) with m, n in [-l, l].
inline double at(const Eigen::MatrixXd& r, int l, int m, int n) { return r(m + l, n + l); }

double recursionP(int i, int a, int b, int l, const Eigen::MatrixXd& r1, const Eigen::MatrixXd& rl1) {
    const int lp = l - 1;
    if (b == l) return at(r1, 1, i, 1) * at(rl1, lp, a, lp) - at(r1, 1, i, -1) * at(rl1, lp, a, -lp);
    if (b == -l) return at(r1, 1, i, 1) * at(rl1, lp, a, -lp) + at(r1, 1, i, -1) * at(rl1, lp, a, lp);
    return at(r1, 1, i, 0) * at(rl1, lp, a, b);
}

// One degree of the Ivanic–Ruedenberg recursion (with the published errata).
Eigen::MatrixXd nextDegree(int l, const Eigen::MatrixXd& r1, const Eigen::MatrixXd& rl1) {
    Eigen::MatrixXd out(2 * l + 1, 2 * l + 1);
    for (int m = -l; m <= l; ++m) {
        for (int n = -l; n <= l; ++n) {
            const double d = m == 0 ? 1.0 : 0.0;
            const double denom = std::abs(n) == l ? 2.0 * l * (2.0 * l - 1.0) : static_cast<double>(l + n) * (l - n);
            const double u = std::sqrt(static_cast<double>(l + m) * (l - m) / denom);
            const double v = 0.5 * std::sqrt((1.0 + d) * (l + std::abs(m) - 1.0) * (l + std::abs(m)) / denom) * (1.0 - 2.0 * d);
            const double w = -0.5 * std::sqrt((l - std::abs(m) - 1.0) * (l - std::abs(m)) / denom) * (1.0 - d);
            double value = 0.0;
            if (u != 0.0) value += u * recursionP(0, m, n, l, r1, rl1);
            if (v != 0.0) {
                double V;
                if (m == 0) {
                    V = recursionP(1, 1, n, l, r1, rl1) + recursionP(-1, -1, n, l, r1, rl1);
                } else if (m > 0) {
                    V = recursionP(1, m - 1, n, l, r1, rl1) * std::sqrt(m == 1 ? 2.0 : 1.0) -
                        (m == 1 ? 0.0 : recursionP(-1, -m + 1, n, l, r1, rl1));
                } else {
                    V = (m == -1 ? 0.0 : recursionP(1, m + 1, n, l, r1, rl1)) +
                        recursionP(-1, -m - 1, n, l, r1, rl1) * std::sqrt(m == -1 ? 2.0 : 1.0);
                }
                value += v * V;
            }
            if (w != 0.0) {
                double W;
                if (m > 0)
                    W = recursionP(1, m + 1, n, l, r1, rl1) + recursionP(-1, -m - 1, n, l, r1, rl1);
                else
                    W = recursionP(1, m - 1, n, l, r1, rl1) - recursionP(-1, -m + 1, n, l, r1, rl1);
                value += w * W;
            }
            out(m + l, n + l) = value;
        }
    }
    return out;
}

} // namespace

std::vector<Eigen::MatrixXd> realWignerDAll(int maxDegree, const Rotation& r) {
    if (maxDegree < 0 || maxDegree > kMaxWignerDegree)
        throw ParameterError("Wigner-D degree out of supported range: " + std::to_string(maxDegree));
    std::vector<Eigen::MatrixXd> out;
    out.reserve(maxDegree + 1);
    out.push_back(Eigen::MatrixXd::Identity(1, 1));
    if (maxDegree == 0) return out;
    // Degree-1 real harmonics are proportional to (y, z, x); D_1 = P Rᵀ Pᵀ.
    const Eigen::Matrix3d rt = r.matrix().transpose();
    constexpr int perm[3] = {1, 2, 0};
    Eigen::MatrixXd d1(3, 3);
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) d1(i, j) = rt(perm[i], perm[j]);
    out.push_back(d1);
    for (int l = 2; l <= maxDegree; ++l) out.push_back(nextDegree(l, out[1], out[l - 1]));
    return out;
}

Eigen::MatrixXd realWignerD(int l, const Rotation& r) {
    if (l < 0 || l > kMaxWignerDegree) throw ParameterError("Wigner-D degree out of supported range: " + std::to_string(l));
    if (l == 0) return Eigen::MatrixXd::Identity(1, 1);
    return realWignerDAll(l, r).back();
}

std::array<Eigen::MatrixXd, 3> wignerGenerators(int l) {
    if (l < 0 || l > kMaxWignerDegree) throw ParameterError("Wigner-D degree out of supported range: " + std::to_string(l));
    const int n = 2 * l + 1;
    // About z: Y_lm(θ, φ − t) mixes the (m, −m) pair by angle m t.
    Eigen::MatrixXd gz = Eigen::MatrixXd::Zero(n, n);
    for (int m = 1; m <= l; ++m) {
        gz(m + l, -m + l) = m;
        gz(-m + l, m + l) = -m;
    }
    // exp(t[e_x]) = Q exp(t[e_z]) Q⁻¹ with Q e_z = e_x, and likewise for y.
    // The reversed composition law gives G_x = D(Q)ᵀ G_z D(Q).
    const Rotation toX = Rotation::fromAxisAngle(Eigen::Vector3d::UnitY(), 0.5 * std::numbers::pi);
    const Rotation toY = Rotation::fromAxisAngle(Eigen::Vector3d::UnitX(), -0.5 * std::numbers::pi);
    const Eigen::MatrixXd dx = realWignerD(l, toX);
    const Eigen::MatrixXd dy = realWignerD(l, toY);
    return {dx.transpose() * gz * dx, dy.transpose() * gz * dy, gz};
}

} // namespace kam
