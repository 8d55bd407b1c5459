#include "kam/autocorr.hpp"
#include "kam/error.hpp"
#include "kam/parallel.hpp"

#include <Eigen/Eigenvalues>

#include <cmath>
#include <random>
#include <string>

namespace kam {

void ClSpectrum::validate() const {
    basis.validate();
    if (static_cast<int>(matrices.size()) != basis.maxDegree + 1)
        throw ParameterError("spectrum must hold one matrix per degree 0..L");
    for (int l = 0; l <= basis.maxDegree; ++l) {
        const auto& c = matrices[l];
        if (c.rows() != basis.size(l) || c.cols() != basis.size(l))
            throw ParameterError("C_" + std::to_string(l) + " must be S(l) × S(l)");
        const double scale = std::max(c.norm(), 1e-300);
        if ((c - c.transpose()).norm() > 1e-12 * scale)
            throw ParameterError("C_" + std::to_string(l) + " is not symmetric");
    }
}

ClSpectrum clFromCoefficients(const VolumeCoefficients& coeffs) {
    ClSpectrum out{coeffs.basis(), {}};
    for (int l = 0; l <= coeffs.maxDegree(); ++l) {
        const auto& a = coeffs.block(l);
        Eigen::MatrixXd c = a * a.transpose();
        out.matrices.push_back(0.5 * (c + c.transpose()));
    }
    return out;
}

FactorSet factorize(const ClSpectrum& spectrum) {
    spectrum.validate();
    FactorSet out{spectrum.basis, {}, {}};
    for (int l = 0; l <= spectrum.maxDegree(); ++l) {
        const auto& c = spectrum.matrices[l];
        const int S = static_cast<int>(c.rows());
        const int width = 2 * l + 1;
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(c);
        const Eigen::VectorXd& lambda = eig.eigenvalues();   // ascending
        const double scale = lambda.cwiseAbs().maxCoeff();
        if (lambda(0) < -1e-6 * scale)
            throw NumericalError("C_" + std::to_string(l) + " is not positive semidefinite (eigenvalue " +
                                 std::to_string(lambda(0)) + ")");
        Eigen::MatrixXd f = Eigen::MatrixXd::Zero(S, width);
        int rank = 0;
        const double cutoff = 1e-13 * scale;
        for (int j = 0; j < std::min(S, width); ++j) {
            const int idx = S - 1 - j;
            const double v = lambda(idx);
            if (!(v > cutoff)) break;
            Eigen::VectorXd col = eig.eigenvectors().col(idx) * std::sqrt(v);
            Eigen::Index imax;
            col.cwiseAbs().maxCoeff(&imax);
            if (col(imax) < 0) col = -col;
            f.col(j) = col;
            ++rank;
        }
        out.factors.push_back(std::move(f));
        out.ranks.push_back(rank);
    }
    return out;
}

ClSpectrum perturbSpectrum(const ClSpectrum& spectrum, double relNoise, std::uint64_t seed) {
    if (!(relNoise >= 0.0)) throw ParameterError("relative noise must be non-negative");
    spectrum.validate();
    if (relNoise == 0.0) return spectrum;
    ClSpectrum out = spectrum;
    for (int l = 0; l <= spectrum.maxDegree(); ++l) {
        const auto& c = spectrum.matrices[l];
        std::mt19937_64 rng(deriveSeed(seed, static_cast<std::uint64_t>(l)));
        std::normal_distribution<double> normal(0.0, 1.0);
        Eigen::MatrixXd g(c.rows(), c.cols());
        for (Eigen::Index i = 0; i < g.rows(); ++i)
            for (Eigen::Index j = 0; j < g.cols(); ++j) g(i, j) = normal(rng);
        Eigen::MatrixXd e = 0.5 * (g + g.transpose());
        const double en = e.norm();
        if (en > 0.0) e *= relNoise * c.norm() / en;
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(c + e);
        const Eigen::VectorXd clamped = eig.eigenvalues().cwiseMax(0.0);
        Eigen::MatrixXd p = eig.eigenvectors() * clamped.asDiagonal() * eig.eigenvectors().transpose();
        out.matrices[l] = 0.5 * (p + p.transpose());
    }
    return out;
}

} // namespace kam
