#include "kam/optimizer.hpp"
#include "kam/error.hpp"

#include <Eigen/QR>

#include <cmath>
#include <string>

namespace kam {

Eigen::MatrixXd tangentProject(const Eigen::MatrixXd& x, const Eigen::MatrixXd& g) {
    if (x.rows() != g.rows() || x.cols() != g.cols()) throw ParameterError("tangent projection shape mismatch");
    const Eigen::MatrixXd xtg = x.transpose() * g;
    return g - x * (0.5 * (xtg + xtg.transpose()));
}

Eigen::MatrixXd retract(const Eigen::MatrixXd& x, const Eigen::MatrixXd& t, double step) {
    if (x.rows() != t.rows() || x.cols() != t.cols()) throw ParameterError("retraction shape mismatch");
    if (step == 0.0) return x;
    const Eigen::MatrixXd y = x + step * t;
    const Eigen::Index n = y.rows(), p = y.cols();
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(y);
    const Eigen::MatrixXd r = qr.matrixQR().topLeftCorner(p, p).triangularView<Eigen::Upper>();
    const double scale = r.diagonal().cwiseAbs().maxCoeff();
    if (!(scale > 0.0) || !std::isfinite(scale) || r.diagonal().cwiseAbs().minCoeff() < 1e-12 * scale)
        throw NumericalError("QR retraction lost rank; retry with a smaller step");
    Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(n, p);
    for (Eigen::Index j = 0; j < p; ++j)
        if (r(j, j) < 0.0) q.col(j) = -q.col(j);
    return q;
}

Eigen::MatrixXd tangentBasis(const Eigen::MatrixXd& x) {
    const Eigen::Index n = x.rows(), p = x.cols();
    if (p > n || p < 1) throw ParameterError("Stiefel factor must have 1 <= p <= n");
    const Eigen::MatrixXd full = Eigen::HouseholderQR<Eigen::MatrixXd>(x).householderQ() * Eigen::MatrixXd::Identity(n, n);
    const Eigen::MatrixXd perp = full.rightCols(n - p);
    Eigen::MatrixXd b = Eigen::MatrixXd::Zero(n * p, p * (p - 1) / 2 + (n - p) * p);
    Eigen::Index k = 0;
    const double h = std::sqrt(0.5);
    for (Eigen::Index a = 0; a < p; ++a)
        for (Eigen::Index c = a + 1; c < p; ++c, ++k) {
            b.col(k).segment(c * n, n) = h * x.col(a);
            b.col(k).segment(a * n, n) = -h * x.col(c);
        }
    for (Eigen::Index j = 0; j < p; ++j)
        for (Eigen::Index i = 0; i < n - p; ++i, ++k) b.col(k).segment(j * n, n) = perp.col(i);
    return b;
}

StiefelPoint tangentProject(const StiefelPoint& x, const StiefelPoint& g) {
    if (x.size() != g.size()) throw ParameterError("tangent projection factor count mismatch");
    StiefelPoint out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = tangentProject(x[i], g[i]);
    return out;
}

StiefelPoint retract(const StiefelPoint& x, const StiefelPoint& t, double step) {
    if (x.size() != t.size()) throw ParameterError("retraction factor count mismatch");
    StiefelPoint out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = retract(x[i], t[i], step);
    return out;
}

double inner(const StiefelPoint& a, const StiefelPoint& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i].cwiseProduct(b[i]).sum();
    return s;
}

double feasibilityError(const StiefelPoint& x) {
    double worst = 0.0;
    for (const auto& m : x) {
        const Eigen::MatrixXd e = m.transpose() * m - Eigen::MatrixXd::Identity(m.cols(), m.cols());
        worst = std::max(worst, e.norm());
    }
    return worst;
}

const char* toString(StopReason reason) {
    switch (reason) {
    case StopReason::GradientTolerance: return "gradient-tolerance";
    case StopReason::MaxIterations: return "max-iterations";
    case StopReason::Stalled: return "stalled";
    }
    return "unknown";
}

namespace {

bool finite(const StiefelPoint& p) {
    for (const auto& m : p)
        if (!m.allFinite()) return false;
    return true;
}

} // namespace

OptimizeReport minimize(const CostFunction& costFn, StiefelPoint init, const OptimizeOptions& options,
                        const Preconditioner& preconditioner) {
    if (feasibilityError(init) > 1e-8) throw ParameterError("initial point is not on the manifold");

    OptimizeReport report;
    report.point = std::move(init);
    StiefelPoint egrad;
    report.cost = costFn(report.point, &egrad);
    if (!std::isfinite(report.cost) || !finite(egrad))
        throw NumericalError("non-finite cost or gradient at the initial point");
    StiefelPoint grad = tangentProject(report.point, egrad);
    report.gradientNorm = std::sqrt(inner(grad, grad));
    report.costHistory.push_back(report.cost);
    const double tolerance = std::max(options.absoluteGradTol, options.relativeGradTol * report.gradientNorm);

    // Search direction (before negation) and its slope ⟨g, d⟩.
    const auto direction = [&](const StiefelPoint& x, const StiefelPoint& g, double& slope) {
        if (preconditioner) {
            StiefelPoint d = tangentProject(x, preconditioner(x, g));
            slope = inner(g, d);
            if (finite(d) && slope > 0.0) return d;
        }
        slope = inner(g, g);
        return g;
    };

    StiefelPoint prevPoint, prevGrad;
    double slope = 0.0;
    StiefelPoint dir = direction(report.point, grad, slope);
    const double dirNorm = std::sqrt(inner(dir, dir));
    double step = preconditioner ? options.preconditionedStep
                                 : (dirNorm > 0.0 ? options.initialStepLength / dirNorm : 0.0);
    report.reason = StopReason::MaxIterations;

    for (int iter = 0; iter < options.maxIterations; ++iter) {
        if (report.gradientNorm <= tolerance) {
            report.reason = StopReason::GradientTolerance;
            break;
        }
        if (preconditioner) {
            step = options.preconditionedStep;
        } else if (iter > 0) {
            // Barzilai–Borwein step from ambient differences.
            double ss = 0.0, sy = 0.0;
            for (std::size_t i = 0; i < grad.size(); ++i) {
                const Eigen::MatrixXd s = report.point[i] - prevPoint[i];
                const Eigen::MatrixXd y = grad[i] - prevGrad[i];
                ss += s.squaredNorm();
                sy += s.cwiseProduct(y).sum();
            }
            step = sy > 0.0 ? ss / sy : 2.0 * step;
        }
        bool accepted = false;
        StiefelPoint trial;
        double trialCost = 0.0;
        StiefelPoint negDir = dir;
        for (auto& d : negDir) d = -d;
        for (int bt = 0; bt < options.maxBacktracks; ++bt, step *= options.armijoFactor) {
            try {
                trial = retract(report.point, negDir, step);
            } catch (const NumericalError&) {
                continue;
            }
            trialCost = costFn(trial, nullptr);
            if (std::isfinite(trialCost) && trialCost <= report.cost - options.sufficientDecrease * step * slope) {
                accepted = true;
                break;
            }
        }
        if (!accepted) {
            report.reason = StopReason::Stalled;
            break;
        }
        prevPoint = std::move(report.point);
        prevGrad = std::move(grad);
        report.point = std::move(trial);
        report.cost = costFn(report.point, &egrad);
        if (!std::isfinite(report.cost) || !finite(egrad))
            throw NumericalError("non-finite cost or gradient at iteration " + std::to_string(iter + 1));
        grad = tangentProject(report.point, egrad);
        report.gradientNorm = std::sqrt(inner(grad, grad));
        report.costHistory.push_back(report.cost);
        report.iterations = iter + 1;
        dir = direction(report.point, grad, slope);
    }
    if (report.reason == StopReason::MaxIterations && report.gradientNorm <= tolerance)
        report.reason = StopReason::GradientTolerance;
    return report;
}

} // namespace kam
