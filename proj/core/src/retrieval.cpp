#include "kam/retrieval.hpp"

#include "kam/basis.hpp"
#include "kam/error.hpp"
#include "kam/parallel.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>

#include <algorithm>
#include <chrono>
#include <limits>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <numeric>
#include <random>

namespace kam {
namespace {

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return buf;
}

Eigen::MatrixXd radialMatrix(int l, const std::vector<double>& radii, const BasisSpec& basis) {
    const int s = basis.size(l);
    Eigen::MatrixXd j(static_cast<Eigen::Index>(radii.size()), s);
    for (std::size_t r = 0; r < radii.size(); ++r)
        for (int i = 0; i < s; ++i) j(static_cast<Eigen::Index>(r), i) = radialBasis(l, i + 1, radii[r], basis.bandlimit);
    return j;
}

Eigen::MatrixXd randomStiefel(int n, int p, std::mt19937_64& rng) {
    std::normal_distribution<double> normal;
    Eigen::MatrixXd g(n, p);
    for (Eigen::Index j = 0; j < g.cols(); ++j)
        for (Eigen::Index i = 0; i < g.rows(); ++i) g(i, j) = normal(rng);
    return retract(Eigen::MatrixXd::Zero(n, p), g, 1.0);
}

Eigen::MatrixXd activeSubmatrix(const Eigen::MatrixXd& m, const std::vector<int>& cols) {
    Eigen::MatrixXd out(m.rows(), static_cast<Eigen::Index>(cols.size()));
    for (std::size_t i = 0; i < cols.size(); ++i) out.col(static_cast<Eigen::Index>(i)) = m.col(cols[i]);
    return out;
}

double weightedEnergy(const Eigen::MatrixXcd& values, const Eigen::VectorXd& w) {
    return (w.asDiagonal() * values.cwiseAbs2()).sum();
}

Eigen::VectorXd ringWeights(const PolarGridSpec& grid) {
    return Eigen::Map<const Eigen::VectorXd>(grid.weights.data(), static_cast<Eigen::Index>(grid.weights.size()));
}

void checkImage(const SliceDesign& design, const FourierSliceImage& image) {
    if (!design.grid().sameSampling(image.grid)) throw ParameterError("image is not sampled on the design grid");
    if (image.values.rows() != design.grid().rings() || image.values.cols() != design.grid().angles())
        throw ParameterError("image values do not match the polar grid");
}

// Left quaternion multiplication matrix: q ⊗ p = L(q) p.
Eigen::Matrix4d leftMultiplication(const Eigen::Vector4d& q) {
    Eigen::Matrix4d m;
    m << q(0), -q(1), -q(2), -q(3),
         q(1), q(0), -q(3), q(2),
         q(2), q(3), q(0), -q(1),
         q(3), -q(2), q(1), q(0);
    return m;
}

// vec(A ⊗ B) layout: column-major vec(X) of a B-rows × A-rows matrix.
Eigen::MatrixXd kron(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
    Eigen::MatrixXd out(a.rows() * b.rows(), a.cols() * b.cols());
    for (Eigen::Index i = 0; i < a.rows(); ++i)
        for (Eigen::Index j = 0; j < a.cols(); ++j) out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
    return out;
}

Eigen::VectorXd vec(const Eigen::MatrixXd& m) { return Eigen::Map<const Eigen::VectorXd>(m.data(), m.size()); }

Eigen::MatrixXd unvec(const Eigen::VectorXd& v, Eigen::Index rows, Eigen::Index cols) {
    return Eigen::Map<const Eigen::MatrixXd>(v.data(), rows, cols);
}

// Solves (A + μI) c = r for positive semidefinite A with a small relative μ.
Eigen::VectorXd dampedSolve(const Eigen::MatrixXd& a, const Eigen::VectorXd& r) {
    const double top = a.diagonal().cwiseAbs().maxCoeff();
    Eigen::MatrixXd m = a;
    m.diagonal().array() += 1e-10 * top + 1e-300;
    return m.ldlt().solve(r);
}

// Placement of the active columns: P_l with P_l e_i = e_{cols[i]}.
Eigen::MatrixXd activePlacement(int l) {
    const auto cols = activeColumns(l);
    Eigen::MatrixXd p = Eigen::MatrixXd::Zero(2 * l + 1, static_cast<Eigen::Index>(cols.size()));
    for (std::size_t i = 0; i < cols.size(); ++i) p(cols[i], static_cast<Eigen::Index>(i)) = 1.0;
    return p;
}

Rotation rotationOf(const Eigen::MatrixXd& q) { return {q(0, 0), q(1, 0), q(2, 0), q(3, 0)}; }

// Residual of a slice prediction split by parity, and the per-degree
// gradient 2 M_lᵀ W E_p Ỹ_lᵀ with respect to the active block.
double sliceResidual(const SliceDesign& design, const Eigen::VectorXd& w, const Eigen::MatrixXd& targetRe,
                     const Eigen::MatrixXd& targetIm, const std::vector<Eigen::MatrixXd>& active,
                     std::vector<Eigen::MatrixXd>* gradient) {
    Eigen::MatrixXd eRe = -targetRe;
    Eigen::MatrixXd eIm = -targetIm;
    for (int l = 1; l <= design.maxDegree(); ++l) {
        const Eigen::MatrixXd p = (design.radialFactor(l) * active[l - 1]) * design.activeHarmonics(l);
        if (l % 2 == 0) eRe += p;
        else eIm += p;
    }
    const double cost = (w.asDiagonal() * (eRe.cwiseAbs2() + eIm.cwiseAbs2())).sum();
    if (gradient) {
        const Eigen::MatrixXd wRe = w.asDiagonal() * eRe;
        const Eigen::MatrixXd wIm = w.asDiagonal() * eIm;
        gradient->resize(static_cast<std::size_t>(design.maxDegree()));
        for (int l = 1; l <= design.maxDegree(); ++l) {
            const Eigen::MatrixXd& we = (l % 2 == 0) ? wRe : wIm;
            (*gradient)[l - 1] = 2.0 * design.radialFactor(l).transpose() * (we * design.activeHarmonics(l).transpose());
        }
    }
    return cost;
}

template <class F>
auto stage(const char* name, F&& f) -> decltype(f()) {
    try {
        return f();
    } catch (const NumericalError& e) {
        throw NumericalError(std::string(name) + ": " + e.what());
    } catch (const ParameterError& e) {
        throw ParameterError(std::string(name) + ": " + e.what());
    } catch (const DomainError& e) {
        throw DomainError(std::string(name) + ": " + e.what());
    }
}

} // namespace

IsotropicFit recoverIsotropicComponent(const Eigen::MatrixXd& f0, const PolarGridSpec& grid,
                                       const std::vector<double>& profile, const BasisSpec& basis) {
    if (static_cast<int>(profile.size()) != grid.rings()) throw ParameterError("radial profile must have one value per ring");
    if (f0.rows() != basis.size(0) || f0.cols() != 1) throw ParameterError("degree-0 factor must be S(0) x 1");
    const double y00 = 0.5 / std::sqrt(std::numbers::pi);
    const Eigen::VectorXd pHat = y00 * (radialMatrix(0, grid.radii, basis) * f0.col(0));
    const Eigen::VectorXd p = Eigen::Map<const Eigen::VectorXd>(profile.data(), grid.rings());
    const Eigen::VectorXd w = ringWeights(grid);
    const auto wnorm = [&](const Eigen::VectorXd& v) { return std::sqrt(v.cwiseAbs2().dot(w)); };
    const double pn = wnorm(p);
    IsotropicFit fit;
    if (!(pn > 0.0)) {
        fit.coefficients = f0.col(0);
        fit.relativeResidual = 0.0;
        fit.ambiguous = pHat.norm() > 0.0;
        return fit;
    }
    const double rPlus = wnorm(pHat - p) / pn;
    const double rMinus = wnorm(-pHat - p) / pn;
    fit.sign = rMinus < rPlus ? -1 : 1;
    fit.relativeResidual = std::min(rPlus, rMinus);
    fit.ambiguous = fit.relativeResidual > 0.5;
    fit.coefficients = fit.sign * f0.col(0);
    return fit;
}

MatchingCost::MatchingCost(const SliceDesign& design, const FourierSliceImage& image, const Eigen::VectorXd& a0)
    : design_(&design) {
    checkImage(design, image);
    const Eigen::MatrixXcd target = image.values - design.isotropicTerm(a0);
    targetRe_ = target.real();
    targetIm_ = target.imag();
    weights_ = ringWeights(design.grid());
    energy_ = weightedEnergy(image.values, weights_);
    const int lmax = design.maxDegree();
    radialCross_.resize(static_cast<std::size_t>((lmax + 1) * (lmax + 1)));
    harmonicCross_.resize(radialCross_.size());
    offsets_.assign(static_cast<std::size_t>(lmax + 2), 0);
    for (int l = 1; l <= lmax; ++l) offsets_[l + 1] = offsets_[l] + (2 * l + 1) * (l + 1);
    hessian_ = Eigen::MatrixXd::Zero(offsets_[lmax + 1], offsets_[lmax + 1]);
    for (int l = 1; l <= lmax; ++l)
        for (int k = l % 2 == 0 ? 2 : 1; k <= lmax; k += 2) {
            const Eigen::MatrixXd& ml = design.radialFactor(l);
            const Eigen::MatrixXd& mk = design.radialFactor(k);
            radialCross_[index(l, k)] = ml.transpose() * weights_.asDiagonal() * mk;
            harmonicCross_[index(l, k)] = design.activeHarmonics(l) * design.activeHarmonics(k).transpose();
            hessian_.block(offsets_[l], offsets_[k], (2 * l + 1) * (l + 1), (2 * k + 1) * (k + 1)) =
                2.0 * kron(harmonicCross_[index(l, k)], radialCross_[index(l, k)]);
        }
}

std::array<double, 2> MatchingCost::parityCosts(const StiefelPoint& halves) const {
    Eigen::MatrixXd eRe = -targetRe_;
    Eigen::MatrixXd eIm = -targetIm_;
    for (int l = 1; l <= design_->maxDegree(); ++l) {
        const Eigen::MatrixXd p = (design_->radialFactor(l) * halves[l - 1]) * design_->activeHarmonics(l);
        (l % 2 == 0 ? eRe : eIm) += p;
    }
    return {(weights_.asDiagonal() * eRe.cwiseAbs2()).sum(), (weights_.asDiagonal() * eIm.cwiseAbs2()).sum()};
}

StiefelPoint MatchingCost::precondition(const StiefelPoint& halves, const StiefelPoint& gradient) const {
    const int lmax = design_->maxDegree();
    std::vector<Eigen::MatrixXd> basis(static_cast<std::size_t>(lmax + 1));
    std::vector<Eigen::Index> toff(static_cast<std::size_t>(lmax + 2), 0);
    for (int l = 1; l <= lmax; ++l) {
        basis[l] = tangentBasis(halves[l - 1]);
        toff[l + 1] = toff[l] + basis[l].cols();
    }
    Eigen::MatrixXd a = Eigen::MatrixXd::Zero(toff[lmax + 1], toff[lmax + 1]);
    Eigen::VectorXd r(toff[lmax + 1]);
    for (int l = 1; l <= lmax; ++l) {
        r.segment(toff[l], basis[l].cols()) = basis[l].transpose() * vec(gradient[l - 1]);
        for (int k = l % 2 == 0 ? 2 : 1; k <= lmax; k += 2) {
            const auto h = hessian_.block(offsets_[l], offsets_[k], basis[l].rows(), basis[k].rows());
            a.block(toff[l], toff[k], basis[l].cols(), basis[k].cols()) = basis[l].transpose() * h * basis[k];
        }
    }
    const Eigen::VectorXd c = dampedSolve(a, r);
    StiefelPoint out(gradient.size());
    for (int l = 1; l <= lmax; ++l)
        out[l - 1] = unvec(basis[l] * c.segment(toff[l], basis[l].cols()), 2 * l + 1, l + 1);
    return out;
}

double MatchingCost::operator()(const StiefelPoint& halves, StiefelPoint* gradient) const {
    if (static_cast<int>(halves.size()) != design_->maxDegree()) throw ParameterError("need one candidate per degree 1..L");
    return sliceResidual(*design_, weights_, targetRe_, targetIm_, halves, gradient);
}

HalfAssignment matchSingleImage(const SliceDesign& design, const FourierSliceImage& image, const Eigen::VectorXd& a0,
                                const MatchOptions& options) {
    if (options.starts < 1) throw ParameterError("need at least one start");
    const int lmax = design.maxDegree();
    if (lmax < 1) throw ParameterError("matching needs L >= 1");
    const MatchingCost cost(design, image, a0);
    const CostFunction fn = [&cost](const StiefelPoint& x, StiefelPoint* g) { return cost(x, g); };
    const Preconditioner pre = [&cost](const StiefelPoint& x, const StiefelPoint& g) { return cost.precondition(x, g); };

    const double energy = cost.targetEnergy();
    const int limit = std::max(options.starts, options.maxStarts);
    std::vector<OptimizeReport> reports;
    HalfAssignment out;
    std::array<double, 2> bestCost{std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity()};
    const auto exact = [&] {
        return std::max(bestCost[0], bestCost[1]) <= options.exactResidual * options.exactResidual * energy;
    };
    while (static_cast<int>(reports.size()) < limit && (reports.empty() || !exact())) {
        const std::size_t begin = reports.size();
        const std::size_t end = std::min<std::size_t>(begin + static_cast<std::size_t>(options.starts), static_cast<std::size_t>(limit));
        reports.resize(end);
        parallelFor(end - begin, [&](std::size_t i) {
            const std::size_t k = begin + i;
            std::mt19937_64 rng(deriveSeed(options.seed, k));
            StiefelPoint init;
            for (int l = 1; l <= lmax; ++l) init.push_back(randomStiefel(2 * l + 1, l + 1, rng));
            reports[k] = minimize(fn, std::move(init), options.optimizer, pre);
        });
        for (std::size_t k = begin; k < end; ++k) {
            out.startCosts.push_back(reports[k].cost);
            const auto pc = cost.parityCosts(reports[k].point);
            for (int p = 0; p < 2; ++p)
                if (pc[p] < bestCost[p]) {
                    bestCost[p] = pc[p];
                    out.bestStarts[p] = static_cast<int>(k);
                }
        }
    }
    out.startsUsed = static_cast<int>(reports.size());
    for (int l = 1; l <= lmax; ++l) out.halves.push_back(reports[out.bestStarts[l % 2]].point[l - 1]);
    out.cost = cost(out.halves, nullptr);
    out.relativeResidual = energy > 0.0 ? std::sqrt(std::max(out.cost, 0.0) / energy) : 0.0;
    return out;
}

HalfAssignment matchSingleImage(const FactorSet& factors, const FourierSliceImage& image, const Eigen::VectorXd& a0,
                                const MatchOptions& options) {
    const SliceDesign design(factors, image.grid);
    return matchSingleImage(design, image, a0, options);
}

Eigen::MatrixXd procrustes(const Eigen::MatrixXd& d, const Eigen::MatrixXd& b) {
    if (d.rows() != b.rows() || d.cols() != b.cols()) throw ParameterError("procrustes operands must have equal shape");
    const Eigen::JacobiSVD<Eigen::MatrixXd> svd(b * d.transpose(), Eigen::ComputeFullU | Eigen::ComputeFullV);
    return svd.matrixU() * svd.matrixV().transpose();
}

double mergeScore(const HalfAssignment& first, const HalfAssignment& second, const std::vector<int>& degrees,
                  const Eigen::Vector4d& quaternion, Eigen::Vector4d* gradient) {
    if (degrees.empty()) throw ParameterError("no degrees to score");
    const int ltop = *std::max_element(degrees.begin(), degrees.end());
    const auto d = realWignerDAll(ltop, Rotation(quaternion(0), quaternion(1), quaternion(2), quaternion(3)));
    double total = 0.0;
    Eigen::Vector3d gXi = Eigen::Vector3d::Zero();
    for (int l : degrees) {
        const auto cols = activeColumns(l);
        const Eigen::MatrixXd& o2 = second.halves[l - 1];
        Eigen::MatrixXd x = o2 * activeSubmatrix(d[l], cols).transpose();
        for (std::size_t i = 0; i < cols.size(); ++i) x.col(cols[i]) += first.halves[l - 1].col(static_cast<Eigen::Index>(i));
        const Eigen::JacobiSVD<Eigen::MatrixXd> svd(x, Eigen::ComputeFullU | Eigen::ComputeFullV);
        total += 4.0 * (l + 1) - 2.0 * svd.singularValues().sum();
        if (gradient) {
            const Eigen::MatrixXd o = svd.matrixU() * svd.matrixV().transpose();
            const auto gens = wignerGenerators(l);
            for (int i = 0; i < 3; ++i)
                gXi(i) -= 2.0 * (o.array() * (o2 * activeSubmatrix(gens[i] * d[l], cols).transpose()).array()).sum();
        }
    }
    if (gradient) *gradient = 2.0 * leftMultiplication(quaternion) * Eigen::Vector4d(0.0, gXi(0), gXi(1), gXi(2));
    return total;
}

MergeResult mergeByGridSearch(const HalfAssignment& first, const HalfAssignment& second,
                              const std::vector<Rotation>& grid, const MergeOptions& options) {
    const int lmax = static_cast<int>(first.halves.size());
    if (lmax < 1 || static_cast<int>(second.halves.size()) != lmax) throw ParameterError("half assignments must cover degrees 1..L");
    if (grid.empty()) throw ParameterError("rotation grid is empty");
    if (options.candidates < 1) throw ParameterError("need at least one candidate");
    std::vector<int> scored = options.scoredDegrees;
    if (scored.empty()) {
        scored.resize(static_cast<std::size_t>(lmax));
        std::iota(scored.begin(), scored.end(), 1);
    }
    for (int l : scored)
        if (l < 1 || l > lmax) throw ParameterError("scored degree out of range");
    const int ltop = *std::max_element(scored.begin(), scored.end());

    // o_l;1 Ĩᵀ places the first half in the active columns.
    std::vector<Eigen::MatrixXd> firstPlaced(static_cast<std::size_t>(lmax + 1));
    for (int l = 1; l <= lmax; ++l) {
        const auto cols = activeColumns(l);
        Eigen::MatrixXd p = Eigen::MatrixXd::Zero(2 * l + 1, 2 * l + 1);
        for (std::size_t i = 0; i < cols.size(); ++i) p.col(cols[i]) = first.halves[l - 1].col(static_cast<Eigen::Index>(i));
        firstPlaced[l] = std::move(p);
    }

    const auto cross = [&](int l, const Eigen::MatrixXd& dl) {
        const auto cols = activeColumns(l);
        return Eigen::MatrixXd(firstPlaced[l] + second.halves[l - 1] * activeSubmatrix(dl, cols).transpose());
    };

    std::vector<double> scores(grid.size());
    parallelFor(grid.size(), [&](std::size_t g) {
        const auto d = realWignerDAll(ltop, grid[g]);
        double total = 0.0;
        for (int l : scored) {
            const Eigen::MatrixXd x = cross(l, d[l]);
            const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(x.transpose() * x, Eigen::EigenvaluesOnly);
            double nuclear = 0.0;
            for (Eigen::Index i = 0; i < eig.eigenvalues().size(); ++i) nuclear += std::sqrt(std::max(eig.eigenvalues()(i), 0.0));
            total += std::max(4.0 * (l + 1) - 2.0 * nuclear, 0.0);
        }
        scores[g] = total;
    });

    std::vector<std::size_t> order(grid.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

    MergeResult result;
    result.gridSize = grid.size();
    for (std::size_t idx : order) {
        if (static_cast<int>(result.candidates.size()) >= options.candidates) break;
        const bool close = std::any_of(result.candidates.begin(), result.candidates.end(), [&](const MergeCandidate& c) {
            return angularDistance(c.rotation, grid[idx]) <= options.separation;
        });
        if (close) continue;
        MergeCandidate c;
        c.rotation = grid[idx];
        c.score = scores[idx];
        if (options.polish) {
            const CostFunction fn = [&](const StiefelPoint& x, StiefelPoint* g) {
                Eigen::Vector4d gq;
                const double v = mergeScore(first, second, scored, x[0].col(0), g ? &gq : nullptr);
                if (g) g->assign(1, Eigen::MatrixXd(gq));
                return v;
            };
            const auto rep = minimize(fn, {Eigen::MatrixXd(c.rotation.quaternion())}, {.maxIterations = 200, .relativeGradTol = 1e-8});
            if (rep.cost < c.score) {
                c.rotation = rotationOf(rep.point[0]);
                c.score = std::max(rep.cost, 0.0);
            }
        }
        const auto d = realWignerDAll(lmax, c.rotation);
        for (int l = 1; l <= lmax; ++l) {
            const auto cols = activeColumns(l);
            const Eigen::Index h = static_cast<Eigen::Index>(cols.size());
            Eigen::MatrixXd dm = Eigen::MatrixXd::Zero(2 * l + 1, 2 * h);
            for (Eigen::Index i = 0; i < h; ++i) dm(cols[static_cast<std::size_t>(i)], i) = 1.0;
            dm.rightCols(h) = activeSubmatrix(d[l], cols);
            Eigen::MatrixXd bm(2 * l + 1, 2 * h);
            bm << first.halves[l - 1], second.halves[l - 1];
            c.orthogonal.push_back(procrustes(dm, bm));
        }
        result.candidates.push_back(std::move(c));
    }
    return result;
}

JointCost::JointCost(const SliceDesign& design, const FourierSliceImage& first, const FourierSliceImage& second,
                     const Eigen::VectorXd& a0)
    : design_(&design), first_(design, first, a0) {
    checkImage(design, second);
    const Eigen::MatrixXcd target = second.values - design.isotropicTerm(a0);
    secondRe_ = target.real();
    secondIm_ = target.imag();
    weights_ = ringWeights(design.grid());
    secondEnergy_ = weightedEnergy(second.values, weights_);
    for (int l = 0; l <= design.maxDegree(); ++l) generators_.push_back(wignerGenerators(l));
}

double JointCost::operator()(const StiefelPoint& point, StiefelPoint* gradient) const {
    const int lmax = design_->maxDegree();
    if (static_cast<int>(point.size()) != lmax + 1) throw ParameterError("joint point needs O_1..O_L and a quaternion");
    const Eigen::MatrixXd& q = point.back();
    if (q.rows() != 4 || q.cols() != 1) throw ParameterError("last factor must be a 4 x 1 quaternion");
    const auto d = realWignerDAll(lmax, rotationOf(q));

    std::vector<Eigen::MatrixXd> active1, active2, dAct;
    for (int l = 1; l <= lmax; ++l) {
        const auto cols = activeColumns(l);
        const Eigen::MatrixXd& o = point[l - 1];
        if (o.rows() != 2 * l + 1 || o.cols() != 2 * l + 1) throw ParameterError("O_l must be (2l+1) x (2l+1)");
        active1.push_back(activeSubmatrix(o, cols));
        dAct.push_back(activeSubmatrix(d[l], cols));
        active2.push_back(o * dAct.back());
    }

    StiefelPoint g1, g2;
    const double c1 = first_(active1, gradient ? &g1 : nullptr);
    const double c2 = sliceResidual(*design_, weights_, secondRe_, secondIm_, active2, gradient ? &g2 : nullptr);
    if (gradient) {
        gradient->assign(point.size(), Eigen::MatrixXd());
        Eigen::Vector3d gXi = Eigen::Vector3d::Zero();
        for (int l = 1; l <= lmax; ++l) {
            const auto cols = activeColumns(l);
            Eigen::MatrixXd go = g2[l - 1] * dAct[l - 1].transpose();
            for (std::size_t i = 0; i < cols.size(); ++i) go.col(cols[i]) += g1[l - 1].col(static_cast<Eigen::Index>(i));
            (*gradient)[l - 1] = std::move(go);
            const Eigen::MatrixXd h = point[l - 1].transpose() * g2[l - 1];
            for (int i = 0; i < 3; ++i) {
                const Eigen::MatrixXd gd = generators_[l][i] * d[l];
                gXi(i) += (h.array() * activeSubmatrix(gd, cols).array()).sum();
            }
        }
        Eigen::Vector4d pure(0.0, gXi(0), gXi(1), gXi(2));
        const Eigen::Vector4d qv = q.col(0);
        (*gradient)[lmax] = 2.0 * leftMultiplication(qv) * pure;
    }
    return c1 + c2;
}

StiefelPoint JointCost::precondition(const StiefelPoint& point, const StiefelPoint& gradient) const {
    const int lmax = design_->maxDegree();
    const Eigen::MatrixXd& q = point.back();
    const auto d = realWignerDAll(lmax, rotationOf(q));
    const int nr = design_->grid().rings(), np = design_->grid().angles();

    std::vector<Eigen::MatrixXd> dAct(static_cast<std::size_t>(lmax + 1)), place(dAct.size()), basis(dAct.size());
    std::vector<Eigen::Index> toff(static_cast<std::size_t>(lmax + 2), 0);
    // Derivative images of the second residual along the three body-frame
    // rotation increments, split by parity.
    std::array<Eigen::MatrixXd, 3> jRe, jIm;
    for (int i = 0; i < 3; ++i) {
        jRe[i] = Eigen::MatrixXd::Zero(nr, np);
        jIm[i] = Eigen::MatrixXd::Zero(nr, np);
    }
    for (int l = 1; l <= lmax; ++l) {
        const auto cols = activeColumns(l);
        dAct[l] = activeSubmatrix(d[l], cols);
        place[l] = activePlacement(l);
        basis[l] = tangentBasis(point[l - 1]);
        toff[l + 1] = toff[l] + basis[l].cols();
        const Eigen::MatrixXd mo = design_->radialFactor(l) * point[l - 1];
        for (int i = 0; i < 3; ++i) {
            const Eigen::MatrixXd p = mo * activeSubmatrix(generators_[l][i] * d[l], cols) * design_->activeHarmonics(l);
            (l % 2 == 0 ? jRe[i] : jIm[i]) += p;
        }
    }
    const Eigen::Index nq = toff[lmax + 1];
    Eigen::MatrixXd a = Eigen::MatrixXd::Zero(nq + 3, nq + 3);
    Eigen::VectorXd r(nq + 3);
    for (int l = 1; l <= lmax; ++l) {
        r.segment(toff[l], basis[l].cols()) = basis[l].transpose() * vec(gradient[l - 1]);
        for (int k = l % 2 == 0 ? 2 : 1; k <= lmax; k += 2) {
            const Eigen::MatrixXd& kk = first_.harmonicCross(l, k);
            const Eigen::MatrixXd right = place[l] * kk * place[k].transpose() + dAct[l] * kk * dAct[k].transpose();
            const Eigen::MatrixXd h = 2.0 * kron(right, first_.radialCross(l, k));
            a.block(toff[l], toff[k], basis[l].cols(), basis[k].cols()) = basis[l].transpose() * h * basis[k];
        }
        const Eigen::MatrixXd& ml = design_->radialFactor(l);
        for (int i = 0; i < 3; ++i) {
            const Eigen::MatrixXd& ji = l % 2 == 0 ? jRe[i] : jIm[i];
            const Eigen::MatrixXd cross =
                2.0 * ml.transpose() * weights_.asDiagonal() * (ji * design_->activeHarmonics(l).transpose()) * dAct[l].transpose();
            const Eigen::VectorXd col = basis[l].transpose() * vec(cross);
            a.block(toff[l], nq + i, basis[l].cols(), 1) = col;
            a.block(nq + i, toff[l], 1, basis[l].cols()) = col.transpose();
        }
    }
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j)
            a(nq + i, nq + j) = 2.0 * (weights_.asDiagonal() * (jRe[i].cwiseProduct(jRe[j]) + jIm[i].cwiseProduct(jIm[j]))).sum();
    const Eigen::Vector4d qv = q.col(0);
    const Eigen::Matrix4d lq = leftMultiplication(qv);
    const Eigen::Vector4d gq = lq.transpose() * gradient.back().col(0);
    r.tail<3>() = 0.5 * gq.tail<3>();

    const Eigen::VectorXd c = dampedSolve(a, r);
    StiefelPoint out(point.size());
    for (int l = 1; l <= lmax; ++l)
        out[l - 1] = unvec(basis[l] * c.segment(toff[l], basis[l].cols()), 2 * l + 1, 2 * l + 1);
    out.back() = 0.5 * lq * Eigen::Vector4d(0.0, c(nq), c(nq + 1), c(nq + 2));
    return out;
}

StiefelPoint jointPoint(const std::vector<Eigen::MatrixXd>& orthogonal, const Rotation& r) {
    StiefelPoint p = orthogonal;
    p.emplace_back(r.quaternion());
    return p;
}

RefineResult refineJoint(const SliceDesign& design, const FourierSliceImage& first, const FourierSliceImage& second,
                         const Rotation& initRotation, const std::vector<Eigen::MatrixXd>& initOrthogonal,
                         const Eigen::VectorXd& a0, const OptimizeOptions& options) {
    if (static_cast<int>(initOrthogonal.size()) != design.maxDegree()) throw ParameterError("need O_l for every degree 1..L");
    const JointCost cost(design, first, second, a0);
    const CostFunction fn = [&cost](const StiefelPoint& x, StiefelPoint* g) { return cost(x, g); };
    const Preconditioner pre = [&cost](const StiefelPoint& x, const StiefelPoint& g) { return cost.precondition(x, g); };
    OptimizeReport rep = minimize(fn, jointPoint(initOrthogonal, initRotation), options, pre);
    RefineResult out;
    out.initialCost = rep.costHistory.front();
    out.cost = rep.cost;
    out.iterations = rep.iterations;
    out.reason = rep.reason;
    out.rotation = rotationOf(rep.point.back());
    rep.point.pop_back();
    out.orthogonal = std::move(rep.point);
    const double e = cost.targetEnergy();
    out.relativeResidual = e > 0.0 ? std::sqrt(std::max(out.cost, 0.0) / e) : 0.0;
    return out;
}

VolumeCoefficients assembleCoefficients(const FactorSet& factors, const Eigen::VectorXd& a0,
                                        const std::vector<Eigen::MatrixXd>& orthogonal) {
    const int lmax = factors.maxDegree();
    if (static_cast<int>(orthogonal.size()) != lmax) throw ParameterError("need O_l for every degree 1..L");
    std::vector<Eigen::MatrixXd> blocks;
    blocks.emplace_back(a0);
    for (int l = 1; l <= lmax; ++l) blocks.push_back(factors.factors[l] * orthogonal[l - 1]);
    return {factors.basis, std::move(blocks)};
}

RetrievalResult reconstruct(const ClSpectrum& spectrum, const FourierSliceImage& first,
                            const FourierSliceImage& second, const std::vector<double>& radialProfile,
                            const ReconstructOptions& options) {
    using Clock = std::chrono::steady_clock;
    const auto seconds = [](Clock::time_point a, Clock::time_point b) {
        return std::chrono::duration<double>(b - a).count();
    };
    if (options.candidates < 1 || options.starts < 1) throw ParameterError("starts and candidates must be positive");
    if (!(options.gridResolution > 0.0)) throw ParameterError("grid resolution must be positive");
    if (!first.grid.sameSampling(second.grid)) throw ParameterError("the two images use different polar grids");

    RetrievalResult result;
    auto& diag = result.diagnostics;
    const int lmax = spectrum.maxDegree();
    if (lmax < 1) throw ParameterError("reconstruction needs L >= 1");

    auto t0 = Clock::now();
    const FactorSet factors = stage("factorize", [&] {
        spectrum.validate();
        return factorize(spectrum);
    });
    const PolarGridSpec grid = options.weighted ? first.grid : first.grid.unweighted();
    const IsotropicFit iso = stage("isotropic", [&] {
        return recoverIsotropicComponent(factors.factors[0], first.grid, radialProfile, factors.basis);
    });
    auto t1 = Clock::now();

    const SliceDesign design(factors, grid);
    FourierSliceImage im1 = first, im2 = second;
    im1.grid = grid;
    im2.grid = grid;
    MatchOptions mo;
    mo.starts = options.starts;
    mo.maxStarts = options.maxStarts;
    mo.optimizer = options.matchOptimizer;
    mo.seed = deriveSeed(options.seed, 1);
    const HalfAssignment h1 = stage("match-first", [&] { return matchSingleImage(design, im1, iso.coefficients, mo); });
    mo.seed = deriveSeed(options.seed, 2);
    const HalfAssignment h2 = stage("match-second", [&] { return matchSingleImage(design, im2, iso.coefficients, mo); });
    auto t2 = Clock::now();

    MergeOptions merge;
    merge.candidates = options.candidates;
    merge.separation = 2.0 * options.gridResolution;
    for (int l = 1; l <= lmax; ++l)
        if (factors.ranks[l] == 2 * l + 1) merge.scoredDegrees.push_back(l);
    const auto rotations = so3Grid(options.gridResolution);
    const MergeResult raw = stage("merge", [&] { return mergeByGridSearch(h1, h2, rotations, merge); });
    merge.polish = true;
    const MergeResult polished = stage("merge", [&] { return mergeByGridSearch(h1, h2, rotations, merge); });
    const MergeResult& merged = polished;
    auto t3 = Clock::now();

    // Polished and raw starts alternate, best grid score first.
    std::vector<const MergeCandidate*> starts;
    for (std::size_t k = 0; k < polished.candidates.size(); ++k) {
        starts.push_back(&polished.candidates[k]);
        if (k < raw.candidates.size()) starts.push_back(&raw.candidates[k]);
    }
    std::vector<RefineResult> refined;
    stage("refine", [&] {
        const auto signature = [](const std::vector<Eigen::MatrixXd>& o) {
            std::vector<bool> s;
            for (const auto& m : o) s.push_back(m.determinant() > 0.0);
            return s;
        };
        MergeOptions at = merge;
        at.polish = false;
        at.candidates = 1;
        for (const MergeCandidate* c : starts) {
            RefineResult r = refineJoint(design, im1, im2, c->rotation, c->orthogonal, iso.coefficients,
                                         options.refineOptimizer);
            // Gradient steps cannot change det O_l; re-solve the Procrustes
            // problem at the refined rotation and continue from there.
            for (int k = 0; k < options.orientationRestarts && r.relativeResidual > options.acceptResidual; ++k) {
                const MergeCandidate next = mergeByGridSearch(h1, h2, {r.rotation}, at).best();
                if (signature(next.orthogonal) == signature(r.orthogonal)) break;
                RefineResult again = refineJoint(design, im1, im2, next.rotation, next.orthogonal, iso.coefficients,
                                                 options.refineOptimizer);
                if (!(again.cost < r.cost)) break;
                again.initialCost = r.initialCost;
                r = std::move(again);
            }
            refined.push_back(std::move(r));
            if (refined.back().relativeResidual <= options.acceptResidual) break;
        }
        return 0;
    });
    std::size_t best = 0;
    for (std::size_t k = 1; k < refined.size(); ++k)
        if (refined[k].cost < refined[best].cost) best = k;
    auto t4 = Clock::now();

    const RefineResult& r = refined[best];
    result.orthogonal = r.orthogonal;
    result.rotation = r.rotation;
    result.sign = iso.sign;
    result.coefficients = assembleCoefficients(factors, iso.coefficients, r.orthogonal);

    std::string ranks, scored;
    for (int l = 0; l <= lmax; ++l) ranks += (l ? "," : "") + std::to_string(factors.ranks[l]);
    for (std::size_t i = 0; i < merge.scoredDegrees.size(); ++i)
        scored += (i ? "," : "") + std::to_string(merge.scoredDegrees[i]);
    const auto& q = r.rotation.quaternion();
    diag = {
        {"max_degree", std::to_string(lmax)},
        {"bandlimit", fmt(factors.basis.bandlimit)},
        {"support_radius", fmt(factors.basis.supportRadius)},
        {"factor_ranks", ranks},
        {"isotropic_sign", std::to_string(iso.sign)},
        {"isotropic_residual", fmt(iso.relativeResidual)},
        {"isotropic_ambiguous", iso.ambiguous ? "true" : "false"},
        {"match1_residual", fmt(h1.relativeResidual)},
        {"match1_best_starts", std::to_string(h1.bestStarts[0]) + "," + std::to_string(h1.bestStarts[1])},
        {"match1_starts_used", std::to_string(h1.startsUsed)},
        {"match2_residual", fmt(h2.relativeResidual)},
        {"match2_best_starts", std::to_string(h2.bestStarts[0]) + "," + std::to_string(h2.bestStarts[1])},
        {"match2_starts_used", std::to_string(h2.startsUsed)},
        {"merge_grid_size", std::to_string(merged.gridSize)},
        {"merge_scored_degrees", scored},
        {"merge_best_score", fmt(merged.best().score)},
        {"merge_candidates", std::to_string(merged.candidates.size())},
        {"refine_selected", std::to_string(best)},
        {"refine_tried", std::to_string(refined.size())},
        {"refine_initial_cost", fmt(r.initialCost)},
        {"refine_cost", fmt(r.cost)},
        {"refine_residual", fmt(r.relativeResidual)},
        {"refine_iterations", std::to_string(r.iterations)},
        {"refine_stop", toString(r.reason)},
        {"rotation", fmt(q(0)) + "," + fmt(q(1)) + "," + fmt(q(2)) + "," + fmt(q(3))},
        {"grid_resolution", fmt(options.gridResolution)},
        {"starts", std::to_string(options.starts)},
        {"max_starts", std::to_string(options.maxStarts)},
        {"seed", std::to_string(options.seed)},
        {"weighted", options.weighted ? "true" : "false"},
        {"time_factorize_s", fmt(seconds(t0, t1))},
        {"time_match_s", fmt(seconds(t1, t2))},
        {"time_merge_s", fmt(seconds(t2, t3))},
        {"time_refine_s", fmt(seconds(t3, t4))},
    };
    return result;
}

} // namespace kam
