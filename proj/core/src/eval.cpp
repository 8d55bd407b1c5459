#include "kam/eval.hpp"

#include "fft.hpp"
#include "kam/error.hpp"
#include "kam/optimizer.hpp"
#include "kam/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>
#include <numeric>

namespace kam {
namespace {

// P_l = B_lᵀ A_l so that ⟨A_l, B_l D_l⟩ = ⟨P_l, D_l⟩.
struct AlignTerms {
    std::vector<Eigen::MatrixXd> p;
    double scale = 0.0;
};

AlignTerms alignTerms(const VolumeCoefficients& a, const VolumeCoefficients& b, int hand) {
    AlignTerms t;
    for (int l = 0; l <= a.maxDegree(); ++l) {
        const double s = (hand == -1 && l % 2 == 1) ? -1.0 : 1.0;
        t.p.push_back(s * b.block(l).transpose() * a.block(l));
    }
    t.scale = std::sqrt(a.squaredNorm() * b.squaredNorm());
    return t;
}

double alignScore(const AlignTerms& t, const std::vector<Eigen::MatrixXd>& d) {
    double v = 0.0;
    for (std::size_t l = 0; l < t.p.size(); ++l) v += (t.p[l].array() * d[l].array()).sum();
    return v / t.scale;
}

} // namespace

VolumeCoefficients applyAlignment(const VolumeCoefficients& b, const Alignment& alignment) {
    return rotateCoefficients(alignment.hand == -1 ? invertCoefficients(b) : b, alignment.rotation);
}

Alignment alignGlobally(const VolumeCoefficients& a, const VolumeCoefficients& b, const AlignOptions& options) {
    if (!(a.basis() == b.basis())) throw ParameterError("alignment needs coefficients on the same basis");
    if (!(a.squaredNorm() > 0.0) || !(b.squaredNorm() > 0.0)) throw ParameterError("cannot align a zero volume");
    const int lmax = a.maxDegree();
    const std::vector<int> hands = options.allowReflection ? std::vector<int>{1, -1} : std::vector<int>{1};
    const auto grid = so3Grid(options.gridResolution);

    std::vector<AlignTerms> terms;
    for (int h : hands) terms.push_back(alignTerms(a, b, h));
    std::vector<double> scores(grid.size() * hands.size());
    parallelFor(grid.size(), [&](std::size_t g) {
        const auto d = realWignerDAll(lmax, grid[g]);
        for (std::size_t h = 0; h < hands.size(); ++h) scores[g * hands.size() + h] = alignScore(terms[h], d);
    });

    std::vector<std::array<Eigen::MatrixXd, 3>> gens;
    for (int l = 0; l <= lmax; ++l) gens.push_back(wignerGenerators(l));

    Alignment best;
    best.correlation = -std::numeric_limits<double>::infinity();
    for (std::size_t h = 0; h < hands.size(); ++h) {
        std::vector<std::size_t> order(grid.size());
        std::iota(order.begin(), order.end(), std::size_t{0});
        const int k = std::min<int>(std::max(options.refinements, 1), static_cast<int>(grid.size()));
        std::partial_sort(order.begin(), order.begin() + k, order.end(), [&](std::size_t x, std::size_t y) {
            return scores[x * hands.size() + h] > scores[y * hands.size() + h];
        });
        const AlignTerms& t = terms[h];
        const CostFunction cost = [&](const StiefelPoint& x, StiefelPoint* grad) {
            const Eigen::Vector4d q = x[0].col(0);
            const auto d = realWignerDAll(lmax, Rotation(q(0), q(1), q(2), q(3)));
            if (grad) {
                Eigen::Vector3d gx = Eigen::Vector3d::Zero();
                for (int l = 1; l <= lmax; ++l)
                    for (int i = 0; i < 3; ++i) gx(i) -= (t.p[l].array() * (gens[l][i] * d[l]).array()).sum() / t.scale;
                Eigen::Matrix4d lm;
                lm << q(0), -q(1), -q(2), -q(3), q(1), q(0), -q(3), q(2), q(2), q(3), q(0), -q(1), q(3), -q(2), q(1), q(0);
                grad->assign(1, Eigen::MatrixXd(2.0 * lm * Eigen::Vector4d(0.0, gx(0), gx(1), gx(2))));
            }
            return -alignScore(t, d);
        };
        for (int i = 0; i < k; ++i) {
            const Rotation& start = grid[order[i]];
            const auto rep = minimize(cost, {Eigen::MatrixXd(start.quaternion())},
                                      {.maxIterations = 300, .relativeGradTol = 1e-9});
            const Eigen::MatrixXd& q = rep.point[0];
            const double corr = std::clamp(-rep.cost, -1.0, 1.0);
            if (corr > best.correlation) {
                best.correlation = corr;
                best.hand = hands[h];
                best.rotation = Rotation(q(0, 0), q(1, 0), q(2, 0), q(3, 0));
            }
        }
    }
    return best;
}

FscCurve fsc(const VolumeGrid& a, const VolumeGrid& b, int nShells) {
    if (a.size != b.size || a.size < 2) throw ParameterError("FSC needs two grids of equal size");
    const int n = a.size;
    if (a.data.size() != static_cast<std::size_t>(n) * n * n || b.data.size() != a.data.size())
        throw ParameterError("grid data does not match its size");
    if (nShells <= 0) nShells = n / 2;
    std::vector<std::complex<double>> fa(a.data.begin(), a.data.end()), fb(b.data.begin(), b.data.end());
    detail::fft3d(fa, n, true);
    detail::fft3d(fb, n, true);
    std::vector<double> num(static_cast<std::size_t>(nShells), 0.0), da(num), db(num);
    FscCurve c;
    c.counts.assign(static_cast<std::size_t>(nShells), 0);
    for (int z = 0; z < n; ++z)
        for (int y = 0; y < n; ++y)
            for (int x = 0; x < n; ++x) {
                const double fz = detail::signedFrequency(z, n), fy = detail::signedFrequency(y, n),
                             fx = detail::signedFrequency(x, n);
                const long shell = std::lround(std::sqrt(fx * fx + fy * fy + fz * fz));
                if (shell >= nShells) continue;
                const std::size_t i = (static_cast<std::size_t>(z) * n + y) * n + x;
                const auto s = static_cast<std::size_t>(shell);
                num[s] += (fa[i] * std::conj(fb[i])).real();
                da[s] += std::norm(fa[i]);
                db[s] += std::norm(fb[i]);
                ++c.counts[s];
            }
    // Shells holding only rounding error count as empty.
    const double floorA = kEmptyShellPower * *std::max_element(da.begin(), da.end());
    const double floorB = kEmptyShellPower * *std::max_element(db.begin(), db.end());
    for (int s = 0; s < nShells; ++s) {
        c.frequencies.push_back(static_cast<double>(s) / n);
        const bool empty = !(da[s] > floorA) || !(db[s] > floorB);
        c.values.push_back(empty ? std::numeric_limits<double>::quiet_NaN() : num[s] / std::sqrt(da[s] * db[s]));
    }
    return c;
}

Resolution resolutionAtThreshold(const FscCurve& curve, double threshold, double voxelSize) {
    if (!(voxelSize > 0.0)) throw ParameterError("voxel size must be positive");
    if (curve.values.size() != curve.frequencies.size()) throw ParameterError("malformed FSC curve");
    Resolution r;
    std::size_t prev = curve.values.size();
    for (std::size_t i = 0; i < curve.values.size(); ++i) {
        const double v = curve.values[i];
        if (std::isnan(v)) continue;
        if (v <= threshold) {
            double f = curve.frequencies[i];
            if (prev < curve.values.size()) {
                const double v0 = curve.values[prev], f0 = curve.frequencies[prev];
                if (v0 != v) f = f0 + (v0 - threshold) / (v0 - v) * (curve.frequencies[i] - f0);
            }
            if (f > 0.0) {
                r.frequency = f;
                r.angstrom = voxelSize / f;
                return r;
            }
        }
        prev = i;
    }
    r.nyquistLimited = true;
    r.frequency = 0.5;
    r.angstrom = 2.0 * voxelSize;
    return r;
}

} // namespace kam
