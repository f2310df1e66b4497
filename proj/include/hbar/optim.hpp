#pragma once

// Small numerical kernels shared by the fitters: a Nelder-Mead simplex, a
// trust-region Levenberg-Marquardt driver over Eigen's MINPACK port, a
// Lawson-Hanson non-negative least squares solver and ordinary linear regression.

#include <Eigen/Dense>
#include <unsupported/Eigen/NonLinearOptimization>
#include <unsupported/Eigen/NumericalDiff>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <span>
#include <vector>

#include "hbar/error.hpp"

namespace hbar::optim {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

struct NelderMeadOptions {
    int max_evaluations = 20000;
    double value_tolerance = 1e-14;  // relative spread of simplex values
    double step_tolerance = 1e-12;   // simplex diameter, in parameter units
    double value_floor = 0.0;        // absolute spread below which the simplex has converged
};

struct NelderMeadResult {
    Vector x;
    double value = std::numeric_limits<double>::infinity();
    int evaluations = 0;
    bool converged = false;
};

template <class Objective>
NelderMeadResult nelder_mead(Objective&& objective, const Vector& x0, const Vector& steps,
                             const NelderMeadOptions& opt = {}) {
    const Eigen::Index n = x0.size();
    if (steps.size() != n) throw ValidationError("nelder_mead: step vector size mismatch");
    std::vector<Vector> simplex(n + 1, x0);
    std::vector<double> values(n + 1);
    NelderMeadResult out;
    auto eval = [&](const Vector& x) {
        ++out.evaluations;
        const double v = objective(x);
        return std::isfinite(v) ? v : std::numeric_limits<double>::max();
    };
    for (Eigen::Index i = 0; i < n; ++i) simplex[i + 1][i] += steps[i];
    for (Eigen::Index i = 0; i <= n; ++i) values[i] = eval(simplex[i]);

    std::vector<std::size_t> order(n + 1);
    while (out.evaluations < opt.max_evaluations) {
        std::iota(order.begin(), order.end(), 0);
        std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
        const std::size_t best = order.front();
        const std::size_t worst = order.back();
        const std::size_t second = order[n - 1];

        double diameter = 0.0;
        for (Eigen::Index i = 0; i <= n; ++i)
            diameter = std::max(diameter, (simplex[i] - simplex[best]).lpNorm<Eigen::Infinity>());
        const double spread = values[worst] - values[best];
        if (spread <= opt.value_floor ||
            (spread <= opt.value_tolerance * std::abs(values[best]) && diameter <= opt.step_tolerance * 1e4) ||
            diameter <= opt.step_tolerance) {
            out.converged = true;
            break;
        }

        Vector centroid = Vector::Zero(n);
        for (Eigen::Index i = 0; i <= n; ++i)
            if (static_cast<std::size_t>(i) != worst) centroid += simplex[i];
        centroid /= static_cast<double>(n);

        const Vector reflected = centroid + (centroid - simplex[worst]);
        const double fr = eval(reflected);
        if (fr < values[best]) {
            const Vector expanded = centroid + 2.0 * (centroid - simplex[worst]);
            const double fe = eval(expanded);
            if (fe < fr) {
                simplex[worst] = expanded;
                values[worst] = fe;
            } else {
                simplex[worst] = reflected;
                values[worst] = fr;
            }
            continue;
        }
        if (fr < values[second]) {
            simplex[worst] = reflected;
            values[worst] = fr;
            continue;
        }
        const bool outside = fr < values[worst];
        const Vector contracted =
            outside ? Vector(centroid + 0.5 * (reflected - centroid)) : Vector(centroid + 0.5 * (simplex[worst] - centroid));
        const double fc = eval(contracted);
        if (fc < std::min(fr, values[worst])) {
            simplex[worst] = contracted;
            values[worst] = fc;
            continue;
        }
        for (Eigen::Index i = 0; i <= n; ++i) {
            if (static_cast<std::size_t>(i) == best) continue;
            simplex[i] = simplex[best] + 0.5 * (simplex[i] - simplex[best]);
            values[i] = eval(simplex[i]);
        }
    }
    const auto it = std::min_element(values.begin(), values.end());
    out.x = simplex[static_cast<std::size_t>(it - values.begin())];
    out.value = *it;
    return out;
}

// Residual callback: fills r (size m) from x.
using ResidualFn = std::function<void(const Vector& x, Vector& r)>;

struct LeastSquaresOptions {
    double step_tolerance = 1e-10;
    double value_tolerance = 1e-14;
    int max_evaluations = 4000;
    bool central_differences = false;
    double difference_step = 0.0;  // relative; 0 selects sqrt(machine epsilon)
    double initial_step_bound = 100.0;  // MINPACK "factor"
    // Stop, counted as converged, once the cost falls by less than
    // stall_fraction * cost over stall_window iterations. 0 disables.
    double stall_fraction = 0.0;
    int stall_window = 10;
};

struct LeastSquaresResult {
    Vector x;
    Vector residual;
    double cost = 0.0;  // sum of squared residuals
    int evaluations = 0;
    bool converged = false;
};

namespace detail {
struct ResidualFunctor {
    using Scalar = double;
    using InputType = Vector;
    using ValueType = Vector;
    using JacobianType = Matrix;
    enum { InputsAtCompileTime = Eigen::Dynamic, ValuesAtCompileTime = Eigen::Dynamic };

    const ResidualFn* fn = nullptr;
    int n = 0;
    int m = 0;
    int inputs() const { return n; }
    int values() const { return m; }
    int operator()(const Vector& x, Vector& r) const {
        r.resize(m);
        (*fn)(x, r);
        for (Eigen::Index i = 0; i < r.size(); ++i)
            if (!std::isfinite(r[i])) r[i] = 1e150;
        return 0;
    }
};

struct AnalyticFunctor : ResidualFunctor {
    const std::function<void(const Vector&, Matrix&)>* jac = nullptr;
    int df(const Vector& x, Matrix& J) const {
        J.resize(m, n);
        (*jac)(x, J);
        return 0;
    }
};

template <class Functor>
LeastSquaresResult run_lm(Functor& functor, const Vector& x0, const LeastSquaresOptions& opt) {
    Eigen::LevenbergMarquardt<Functor, double> lm(functor);
    lm.parameters.xtol = opt.step_tolerance;
    lm.parameters.ftol = opt.value_tolerance;
    lm.parameters.maxfev = opt.max_evaluations;
    lm.parameters.factor = opt.initial_step_bound;
    Vector x = x0;
    using Status = Eigen::LevenbergMarquardtSpace::Status;
    Status status = lm.minimizeInit(x);
    bool stalled = false;
    if (status != Status::ImproperInputParameters) {
        std::vector<double> history;
        do {
            status = lm.minimizeOneStep(x);
            history.push_back(lm.fnorm * lm.fnorm);
            const std::size_t w = static_cast<std::size_t>(std::max(1, opt.stall_window));
            if (status == Status::Running && opt.stall_fraction > 0.0 && history.size() > w) {
                const double now = history.back();
                if (history[history.size() - 1 - w] - now < opt.stall_fraction * now) stalled = true;
            }
        } while (status == Status::Running && !stalled);
    }

    LeastSquaresResult out;
    out.x = x;
    functor(x, out.residual);
    out.cost = out.residual.squaredNorm();
    out.evaluations = static_cast<int>(lm.nfev);
    out.converged = stalled || status == Status::RelativeReductionTooSmall || status == Status::RelativeErrorTooSmall ||
                    status == Status::RelativeErrorAndReductionTooSmall || status == Status::CosinusTooSmall ||
                    status == Status::FtolTooSmall || status == Status::XtolTooSmall ||
                    status == Status::GtolTooSmall;
    return out;
}
}  // namespace detail

inline LeastSquaresResult levenberg_marquardt(const ResidualFn& fn, const Vector& x0, int m,
                                              const LeastSquaresOptions& opt = {}) {
    detail::ResidualFunctor functor;
    functor.fn = &fn;
    functor.n = static_cast<int>(x0.size());
    functor.m = m;
    const double eps = opt.difference_step > 0.0 ? opt.difference_step * opt.difference_step : 0.0;
    if (opt.central_differences) {
        Eigen::NumericalDiff<detail::ResidualFunctor, Eigen::Central> numeric(functor, eps);
        return detail::run_lm(numeric, x0, opt);
    }
    Eigen::NumericalDiff<detail::ResidualFunctor, Eigen::Forward> numeric(functor, eps);
    return detail::run_lm(numeric, x0, opt);
}

// Jacobian callback: fills J (m x n) at x.
using JacobianFn = std::function<void(const Vector& x, Matrix& J)>;

inline LeastSquaresResult levenberg_marquardt(const ResidualFn& fn, const JacobianFn& jac, const Vector& x0, int m,
                                              const LeastSquaresOptions& opt = {}) {
    detail::AnalyticFunctor functor;
    functor.fn = &fn;
    functor.jac = &jac;
    functor.n = static_cast<int>(x0.size());
    functor.m = m;
    return detail::run_lm(functor, x0, opt);
}

// Finite-difference Jacobian with per-parameter steps (forward or central).
inline Matrix numeric_jacobian(const ResidualFn& fn, const Vector& x, int m, double relative_step = 1e-7,
                               bool central = false) {
    Vector r0(m);
    fn(x, r0);
    Matrix J(m, x.size());
    for (Eigen::Index j = 0; j < x.size(); ++j) {
        const double h = relative_step * std::max(1.0, std::abs(x[j]));
        Vector xp = x;
        xp[j] += h;
        Vector r1(m);
        fn(xp, r1);
        if (central) {
            Vector xm = x;
            xm[j] -= h;
            Vector r2(m);
            fn(xm, r2);
            J.col(j) = (r1 - r2) / (2.0 * h);
        } else {
            J.col(j) = (r1 - r0) / h;
        }
    }
    return J;
}

struct Covariance {
    Matrix matrix;                 // infinite on degenerate parameters
    Vector sigma;                  // 1 sigma, +inf where the problem is flat
    double condition_number = 1.0;
    std::vector<Vector> null_directions;
};

// s^2 (J^T J)^-1 through the SVD of J. Singular directions below rcond * s_max are
// treated as flat; any parameter with weight on them gets an infinite sigma.
// Columns are equilibrated to unit norm before the SVD, so rcond and the
// condition number refer to the scaled problem.
inline Covariance covariance_from_jacobian(const Matrix& J, double residual_variance, double rcond = 1e-10) {
    const Eigen::Index n = J.cols();
    Vector scale(n);
    for (Eigen::Index k = 0; k < n; ++k) {
        const double norm = J.col(k).norm();
        scale[k] = norm > 0.0 ? norm : 1.0;
    }
    const Matrix Js = J * scale.cwiseInverse().asDiagonal();
    Eigen::JacobiSVD<Matrix> svd(Js, Eigen::ComputeThinV);
    const Vector s = svd.singularValues();
    const Matrix& V = svd.matrixV();
    Covariance c;
    Matrix scaled = Matrix::Zero(n, n);
    c.sigma = Vector::Zero(n);
    const double s_max = s.size() > 0 ? s[0] : 0.0;
    std::vector<bool> flat(static_cast<std::size_t>(n), false);
    for (Eigen::Index k = 0; k < n; ++k) {
        const double sk = k < s.size() ? s[k] : 0.0;
        if (!(sk > rcond * s_max) || sk == 0.0) {
            Vector dir = scale.cwiseInverse().asDiagonal() * V.col(k);
            dir.normalize();
            c.null_directions.push_back(dir);
            for (Eigen::Index i = 0; i < n; ++i)
                if (std::abs(V(i, k)) > 1e-6) flat[static_cast<std::size_t>(i)] = true;
            continue;
        }
        scaled += V.col(k) * V.col(k).transpose() * (residual_variance / (sk * sk));
    }
    c.matrix = scale.cwiseInverse().asDiagonal() * scaled * scale.cwiseInverse().asDiagonal();
    const double s_min = s.size() > 0 ? s[s.size() - 1] : 0.0;
    c.condition_number = s_min > 0.0 ? s_max / s_min : std::numeric_limits<double>::infinity();
    const double inf = std::numeric_limits<double>::infinity();
    for (Eigen::Index i = 0; i < n; ++i) {
        if (flat[static_cast<std::size_t>(i)]) {
            c.sigma[i] = inf;
            c.matrix.row(i).setConstant(inf);
            c.matrix.col(i).setConstant(inf);
        } else {
            c.sigma[i] = std::sqrt(std::max(0.0, c.matrix(i, i)));
        }
    }
    return c;
}

struct NnlsResult {
    Vector x;
    std::vector<bool> free;  // true where x > 0 (constraint inactive)
    double residual_norm = 0.0;
    int iterations = 0;
};

// Lawson-Hanson active set: minimise |A x - b| subject to x >= 0.
inline NnlsResult nnls(const Matrix& A, const Vector& b, int max_iterations = 0) {
    const Eigen::Index m = A.rows();
    const Eigen::Index n = A.cols();
    if (b.size() != m) throw ValidationError("nnls: right-hand side size mismatch");
    if (max_iterations <= 0) max_iterations = static_cast<int>(30 * n + 30);
    // Gradient entries carry the units of A^T b.
    const double tol = 10.0 * std::numeric_limits<double>::epsilon() * A.norm() * b.norm() *
                       static_cast<double>(std::max(m, n));

    NnlsResult out;
    out.x = Vector::Zero(n);
    out.free.assign(static_cast<std::size_t>(n), false);
    auto solve_free = [&]() {
        std::vector<Eigen::Index> idx;
        for (Eigen::Index j = 0; j < n; ++j)
            if (out.free[static_cast<std::size_t>(j)]) idx.push_back(j);
        if (idx.empty()) return Vector(Vector::Zero(n));
        Matrix Ap(m, static_cast<Eigen::Index>(idx.size()));
        for (std::size_t k = 0; k < idx.size(); ++k) Ap.col(static_cast<Eigen::Index>(k)) = A.col(idx[k]);
        const Vector zp = Ap.colPivHouseholderQr().solve(b);
        Vector z = Vector::Zero(n);
        for (std::size_t k = 0; k < idx.size(); ++k) z[idx[k]] = zp[static_cast<Eigen::Index>(k)];
        return z;
    };

    Vector w = A.transpose() * (b - A * out.x);
    while (out.iterations < max_iterations) {
        Eigen::Index t = -1;
        double wmax = tol;
        for (Eigen::Index j = 0; j < n; ++j) {
            if (!out.free[static_cast<std::size_t>(j)] && w[j] > wmax) {
                wmax = w[j];
                t = j;
            }
        }
        if (t < 0) break;
        out.free[static_cast<std::size_t>(t)] = true;
        while (out.iterations++ < max_iterations) {
            const Vector z = solve_free();
            bool feasible = true;
            for (Eigen::Index j = 0; j < n; ++j)
                if (out.free[static_cast<std::size_t>(j)] && z[j] <= 0.0) feasible = false;
            if (feasible) {
                out.x = z;
                break;
            }
            double alpha = std::numeric_limits<double>::infinity();
            Eigen::Index blocking = -1;
            for (Eigen::Index j = 0; j < n; ++j) {
                if (out.free[static_cast<std::size_t>(j)] && z[j] <= 0.0) {
                    const double a = out.x[j] / (out.x[j] - z[j]);
                    if (a < alpha) {
                        alpha = a;
                        blocking = j;
                    }
                }
            }
            out.x += alpha * (z - out.x);
            if (blocking >= 0) out.x[blocking] = 0.0;
            for (Eigen::Index j = 0; j < n; ++j) {
                if (out.free[static_cast<std::size_t>(j)] && out.x[j] <= 0.0) {
                    out.free[static_cast<std::size_t>(j)] = false;
                    out.x[j] = 0.0;
                }
            }
        }
        w = A.transpose() * (b - A * out.x);
    }
    for (Eigen::Index j = 0; j < n; ++j) out.free[static_cast<std::size_t>(j)] = out.x[j] > 0.0;
    out.residual_norm = (A * out.x - b).norm();
    return out;
}

struct LinearRegression {
    double intercept = 0.0;
    double slope = 0.0;
    double sigma_intercept = 0.0;
    double sigma_slope = 0.0;
    double residual_variance = 0.0;
};

// Ordinary least squares y = intercept + slope x. With weights, 1/sigma_i^2 weighting
// and the parameter covariance scaled by the reduced chi-square.
inline LinearRegression linear_regression(std::span<const double> x, std::span<const double> y,
                                          std::span<const double> weights = {}) {
    const std::size_t n = x.size();
    if (y.size() != n) throw ValidationError("linear_regression: x and y sizes differ");
    if (!weights.empty() && weights.size() != n) throw ValidationError("linear_regression: weight size differs");
    if (n < 3) throw ValidationError("linear_regression: need at least 3 points");
    double sw = 0.0, sx = 0.0, sy = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double w = weights.empty() ? 1.0 : weights[i];
        sw += w;
        sx += w * x[i];
        sy += w * y[i];
    }
    const double mx = sx / sw;
    const double my = sy / sw;
    double sxx = 0.0, sxy = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double w = weights.empty() ? 1.0 : weights[i];
        sxx += w * (x[i] - mx) * (x[i] - mx);
        sxy += w * (x[i] - mx) * (y[i] - my);
    }
    if (!(sxx > 0.0)) throw DegenerateEvaluation("linear_regression: x values are all equal");
    LinearRegression out;
    out.slope = sxy / sxx;
    out.intercept = my - out.slope * mx;
    double chi2 = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double w = weights.empty() ? 1.0 : weights[i];
        const double r = y[i] - out.intercept - out.slope * x[i];
        chi2 += w * r * r;
    }
    const double dof = static_cast<double>(n) - 2.0;
    out.residual_variance = chi2 / dof;
    const double scale = out.residual_variance;
    out.sigma_slope = std::sqrt(scale / sxx);
    out.sigma_intercept = std::sqrt(scale * (1.0 / sw + mx * mx / sxx));
    return out;
}

}  // namespace hbar::optim
