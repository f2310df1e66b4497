#pragma once

// Fitting measured mode combs to the reduced multilayer model, and extracting
// per-layer loss tangents from measured quality factors by non-negative linear
// least squares over participation ratios.

#include <boost/math/tools/minima.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <future>
#include <limits>
#include <mutex>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "hbar/constants.hpp"
#include "hbar/error.hpp"
#include "hbar/optim.hpp"
#include "hbar/participation.hpp"
#include "hbar/stack_model.hpp"

namespace hbar {

// Only transit times and impedance ratios enter the mode condition. The defect
// impedance is the unit. beta_d = 0 selects the two-layer model, in which case
// zb_over_zd is ignored and the piezo/bulk ratio is zp_over_zd / zb_over_zd.
struct ReducedStackParams {
    double beta_p = 0.0;      // s
    double beta_d = 0.0;      // s
    double beta_b = 0.0;      // s
    double zp_over_zd = 1.0;
    double zb_over_zd = 1.0;
    double psi = 0.0;         // Hz

    static constexpr std::size_t kCount = 6;
    static constexpr std::array<const char*, kCount> kNames = {"beta_p", "beta_d", "beta_b",
                                                               "zp_over_zd", "zb_over_zd", "psi"};

    std::array<double, kCount> to_array() const { return {beta_p, beta_d, beta_b, zp_over_zd, zb_over_zd, psi}; }
    static ReducedStackParams from_array(const std::array<double, kCount>& a) {
        return {a[0], a[1], a[2], a[3], a[4], a[5]};
    }

    AcousticLine line() const {
        AcousticLine l;
        if (beta_d > 0.0) {
            l.count = 3;
            l.transit = {beta_p, beta_d, beta_b};
            l.impedance = {zp_over_zd, 1.0, zb_over_zd};
        } else {
            l.count = 2;
            l.transit = {beta_p, beta_b, 0.0};
            l.impedance = {zp_over_zd, zb_over_zd, 0.0};
        }
        return l;
    }
};

inline void validate(const ReducedStackParams& p) {
    if (!(p.beta_p > 0.0) || !(p.beta_b > 0.0) || !(p.beta_d >= 0.0))
        throw ValidationError("reduced params: beta values must be > 0 (beta_d >= 0)");
    if (!(p.zp_over_zd > 0.0) || !(p.zb_over_zd > 0.0))
        throw ValidationError("reduced params: impedance ratios must be > 0");
    if (!std::isfinite(p.psi)) throw ValidationError("reduced params: psi must be finite");
}

inline ReducedStackParams reduce(const StackModel& stack) {
    ReducedStackParams p;
    const auto& layers = stack.layers();
    if (layers.size() < 2) throw ValidationError("reduce: stack needs a piezo and a bulk layer");
    p.beta_p = stack.piezo().transit_time();
    p.beta_b = stack.bulk().transit_time();
    const double zref = stack.has_defect() ? stack.defect().impedance() : stack.bulk().impedance();
    if (stack.has_defect()) p.beta_d = stack.defect().transit_time();
    p.zp_over_zd = stack.piezo().impedance() / zref;
    p.zb_over_zd = stack.bulk().impedance() / zref;
    p.psi = stack.gouy_shift();
    return p;
}

struct CombMode {
    double frequency = 0.0;  // Hz
    std::optional<double> q_i;
    std::optional<double> q_i_sigma;
};

struct ModeComb {
    std::vector<CombMode> modes;
    double fsr = 0.0;  // Delta_0, Hz; 0 means estimate from the data

    std::vector<double> frequencies() const {
        std::vector<double> f;
        f.reserve(modes.size());
        for (const auto& m : modes) f.push_back(m.frequency);
        return f;
    }
};

inline void validate(const ModeComb& comb) {
    for (std::size_t i = 0; i < comb.modes.size(); ++i) {
        if (!(comb.modes[i].frequency > 0.0) || !std::isfinite(comb.modes[i].frequency))
            throw ValidationError("comb: frequency at row " + std::to_string(i) + " must be finite and > 0");
        if (i > 0 && !(comb.modes[i].frequency > comb.modes[i - 1].frequency))
            throw ValidationError("comb: frequencies must be strictly increasing (row " + std::to_string(i) + ")");
    }
    if (!(comb.fsr >= 0.0)) throw ValidationError("comb: fsr must be >= 0");
}

// Mean spacing of a comb with possible gaps: integer mode offsets from the median
// spacing, then the least-squares slope of frequency against offset.
inline double estimate_fsr(const std::vector<double>& f) {
    if (f.size() < 2) throw ValidationError("estimate_fsr: need at least 2 modes");
    std::vector<double> d;
    for (std::size_t i = 1; i < f.size(); ++i) d.push_back(f[i] - f[i - 1]);
    std::sort(d.begin(), d.end());
    double step = d[d.size() / 2];
    for (int pass = 0; pass < 2; ++pass) {
        std::vector<double> n;
        for (double x : f) n.push_back(std::nearbyint((x - f.front()) / step));
        if (f.size() < 3) return (f.back() - f.front()) / n.back();
        step = optim::linear_regression(n, f).slope;
    }
    return step;
}

inline double comb_fsr(const ModeComb& comb) {
    return comb.fsr > 0.0 ? comb.fsr : estimate_fsr(comb.frequencies());
}

namespace detail {

inline double median_copy(std::vector<double> v) {
    const auto mid = v.begin() + static_cast<std::ptrdiff_t>(v.size() / 2);
    std::nth_element(v.begin(), mid, v.end());
    return *mid;
}

// Illinois regula falsi on a sign-changing bracket, to a few ulps.
template <class Residual>
double refine_root(Residual&& r, double a, double b, double ra, double rb) {
    int side = 0;
    for (int it = 0; it < 200; ++it) {
        if (b - a <= 4.0 * std::numeric_limits<double>::epsilon() * std::abs(b)) break;
        double c = (a * rb - b * ra) / (rb - ra);
        if (!(c > a && c < b)) {
            c = 0.5 * (a + b);
            side = 0;
        }
        const double rc = r(c);
        if (rc == 0.0) return c;
        if ((rc < 0.0) == (rb < 0.0)) {
            b = c;
            rb = rc;
            if (side == -1) ra *= 0.5;
            side = -1;
        } else {
            a = c;
            ra = rc;
            if (side == 1) rb *= 0.5;
            side = 1;
        }
    }
    return std::abs(ra) < std::abs(rb) ? a : b;
}

}  // namespace detail

// Root of the line's mode condition nearest to target, searching at most half a
// mean FSR either side. Returns NaN when there is none.
inline double nearest_root(const AcousticLine& line, double target) {
    const double fsr = line.fsr_mean();
    const double h = fsr / 40.0;
    auto r = [&](double f) { return characteristic_residual(line, f); };
    const double r0 = r(target);
    if (r0 == 0.0) return target;
    double left_f = target, left_r = r0, right_f = target, right_r = r0;
    for (int k = 1; k <= 21; ++k) {
        const double lf = target - k * h;
        const double rf = target + k * h;
        const double lr = lf > 0.0 ? r(lf) : left_r;
        const double rr = r(rf);
        const bool left_hit = lf > 0.0 && (lr == 0.0 || (lr < 0.0) != (left_r < 0.0));
        const bool right_hit = rr == 0.0 || (rr < 0.0) != (right_r < 0.0);
        double best = std::numeric_limits<double>::quiet_NaN();
        if (left_hit) best = lr == 0.0 ? lf : detail::refine_root(r, lf, left_f, lr, left_r);
        if (right_hit) {
            const double cand = rr == 0.0 ? rf : detail::refine_root(r, right_f, rf, right_r, rr);
            if (!std::isfinite(best) || std::abs(cand - target) < std::abs(best - target)) best = cand;
        }
        if (std::isfinite(best)) return best;
        left_f = lf;
        left_r = lr;
        right_f = rf;
        right_r = rr;
    }
    return std::numeric_limits<double>::quiet_NaN();
}

// d f_root / d(beta_p, beta_d, beta_b, zp_over_zd, zb_over_zd) at a root f of the
// model, from the implicit function theorem on the mode condition.
inline std::array<double, 5> root_sensitivity(const ReducedStackParams& p, double f) {
    const AcousticLine line = p.line();
    const InterfaceState s = interface_state(line, f);
    const double w = kTwoPi * f;
    const double a = s.piezo_phase;
    const double g = s.gamma;
    const double rho = line.impedance[0] / s.reference_impedance;
    const double dr_da = rho * std::cos(a) * std::cos(g) + std::sin(a) * std::sin(g);
    const double dr_dg = -rho * std::sin(a) * std::sin(g) - std::cos(a) * std::cos(g);
    const double dr_drho = std::sin(a) * std::cos(g);
    std::array<double, 5> dr{};
    double dr_df = 0.0;
    if (line.count == 3) {
        const double c = std::cos(s.bulk_phase);
        const double sn = std::sin(s.bulk_phase);
        const double zb = p.zb_over_zd;
        const double den = c * c + zb * zb * sn * sn;
        const double phi_theta = -zb / den;
        const double phi_zb = -sn * c / den;
        dr_df = kTwoPi * (dr_da * p.beta_p + dr_dg * (phi_theta * p.beta_b - p.beta_d));
        dr = {w * dr_da, -w * dr_dg, w * dr_dg * phi_theta, dr_drho, dr_dg * phi_zb};
    } else {
        dr_df = kTwoPi * (dr_da * p.beta_p - dr_dg * p.beta_b);
        dr = {w * dr_da, 0.0, -w * dr_dg, dr_drho / p.zb_over_zd,
              -dr_drho * p.zp_over_zd / (p.zb_over_zd * p.zb_over_zd)};
    }
    std::array<double, 5> out{};
    for (std::size_t j = 0; j < 5; ++j) out[j] = -dr[j] / dr_df;
    return out;
}

struct MatchResult {
    double epsilon = 0.0;                 // Hz^2 over matched modes
    std::size_t matched = 0;
    std::size_t unmatched = 0;
    std::vector<long> index;              // per measured mode
    std::vector<double> model_frequency;  // NaN when unmatched
    std::vector<double> residual;         // f_n - psi - f'_n, NaN when unmatched
};

// Model roots are seeded at each measured frequency minus psi and both sets are
// indexed by integer division with Delta_0, the model after adding psi.
inline MatchResult match_modes(const ModeComb& measured, const ReducedStackParams& params, double fsr,
                               double max_fsr_mismatch = std::numeric_limits<double>::infinity()) {
    const AcousticLine line = params.line();
    validate(line);
    MatchResult out;
    const std::size_t n = measured.modes.size();
    out.index.resize(n);
    out.model_frequency.assign(n, std::numeric_limits<double>::quiet_NaN());
    out.residual.assign(n, std::numeric_limits<double>::quiet_NaN());
    if (std::abs(line.fsr_mean() / fsr - 1.0) > max_fsr_mismatch) {
        // A model with a different mode density matches by accident, if at all.
        for (std::size_t i = 0; i < n; ++i) out.index[i] = assign_mode_index(measured.modes[i].frequency, fsr);
        out.unmatched = n;
        return out;
    }
    for (std::size_t i = 0; i < n; ++i) {
        const double f = measured.modes[i].frequency;
        out.index[i] = assign_mode_index(f, fsr);
        const double target = f - params.psi;
        if (!(target > 0.0)) {
            ++out.unmatched;
            continue;
        }
        const double fm = nearest_root(line, target);
        if (!std::isfinite(fm) || assign_mode_index(fm + params.psi, fsr) != out.index[i]) {
            ++out.unmatched;
            continue;
        }
        out.model_frequency[i] = fm;
        out.residual[i] = target - fm;
        out.epsilon += out.residual[i] * out.residual[i];
        ++out.matched;
    }
    return out;
}

inline MatchResult matching_error(const ModeComb& measured, const ReducedStackParams& params) {
    validate(measured);
    validate(params);
    if (measured.modes.size() < 5) throw ValidationError("matching_error: need at least 5 measured modes");
    const MatchResult m = match_modes(measured, params, comb_fsr(measured));
    if (m.matched == 0) throw DegenerateEvaluation("matching_error: no overlapping mode indices");
    return m;
}

// Model comb (plus psi) between two frequencies, for synthetic data.
inline ModeComb synthesize_comb(const ReducedStackParams& params, double f_min, double f_max) {
    validate(params);
    ModeComb comb;
    SolveOptions opt;
    opt.relative_tolerance = 1e-15;
    for (double f : find_roots(params.line(), f_min, f_max, opt)) comb.modes.push_back({f + params.psi, {}, {}});
    return comb;
}

struct StackFitConstraints {
    std::array<bool, ReducedStackParams::kCount> pinned{};  // pinned entries keep their initial value
    bool anchor_fsr = true;  // rescale the initial beta_b so the model mean FSR equals Delta_0
    bool fit_psi_first = true;
    int restarts = 4;        // rounds
    int starts_per_round = 4;
    unsigned seed = 12345;
    int jobs = 1;            // worker threads; results do not depend on it
    double huber_factor = 5.0;
};

struct StackFitResult {
    ReducedStackParams params;
    std::array<double, ReducedStackParams::kCount> sigma{};  // +inf on flat directions
    std::vector<std::array<double, ReducedStackParams::kCount>> degenerate_directions;
    double epsilon = 0.0;
    double rms_residual = 0.0;  // Hz, matched modes
    std::size_t matched = 0;
    std::size_t unmatched = 0;
    double fsr = 0.0;
    int evaluations = 0;
    bool converged = false;
    std::vector<double> residual;
};

namespace detail {

// Free parameters live in an internal vector: logs of betas and ratios, psi / Delta_0.
struct StackCoordinates {
    ReducedStackParams base;
    std::vector<std::size_t> free;
    double fsr = 1.0;

    optim::Vector encode(const ReducedStackParams& p) const {
        const auto a = p.to_array();
        optim::Vector u(static_cast<Eigen::Index>(free.size()));
        for (std::size_t k = 0; k < free.size(); ++k) {
            const std::size_t j = free[k];
            u[static_cast<Eigen::Index>(k)] = j == 5 ? a[j] / fsr : std::log(a[j]);
        }
        return u;
    }
    ReducedStackParams decode(const optim::Vector& u) const {
        auto a = base.to_array();
        for (std::size_t k = 0; k < free.size(); ++k) {
            const std::size_t j = free[k];
            const double v = u[static_cast<Eigen::Index>(k)];
            a[j] = j == 5 ? v * fsr : std::exp(v);
        }
        return ReducedStackParams::from_array(a);
    }
};

}  // namespace detail

inline StackFitResult fit_stack(const ModeComb& measured, const ReducedStackParams& init,
                                const StackFitConstraints& constraints = {}) {
    validate(measured);
    validate(init);
    if (measured.modes.size() < 5) throw ValidationError("fit_stack: need at least 5 measured modes");
    const double fsr = comb_fsr(measured);
    const std::size_t n = measured.modes.size();
    const int m = static_cast<int>(n);

    auto pinned = constraints.pinned;
    if (init.beta_d == 0.0) {
        pinned[1] = true;
        pinned[4] = true;
    }
    auto free_of = [&](std::initializer_list<std::size_t> wanted) {
        std::vector<std::size_t> out;
        for (std::size_t j : wanted)
            if (!pinned[j]) out.push_back(j);
        return out;
    };
    const std::vector<std::size_t> all_free = free_of({0, 1, 2, 3, 4, 5});

    ReducedStackParams start = init;
    if (constraints.anchor_fsr && !pinned[2]) {
        const double target = 0.5 / fsr - start.beta_p - start.beta_d;
        if (target > 0.0) start.beta_b = target;
    }
    if (constraints.fit_psi_first && !pinned[5]) {
        // Offset of each measured mode from its nearest model root.
        ReducedStackParams zero = start;
        zero.psi = 0.0;
        const AcousticLine line = zero.line();
        std::vector<double> off;
        for (const auto& mode : measured.modes) {
            const double fm = nearest_root(line, mode.frequency);
            if (std::isfinite(fm)) off.push_back(mode.frequency - fm);
        }
        if (!off.empty()) start.psi = detail::median_copy(off);
    }

    constexpr double kFsrGuard = 0.05;
    const double penalty = 0.25 * fsr * fsr;
    auto guarded_match = [&](const ReducedStackParams& p) {
        try {
            return match_modes(measured, p, fsr, kFsrGuard);
        } catch (const ValidationError&) {
            MatchResult none;
            none.index.assign(n, 0);
            none.model_frequency.assign(n, std::numeric_limits<double>::quiet_NaN());
            none.residual = none.model_frequency;
            none.unmatched = n;
            return none;
        }
    };
    int evaluations = 0;
    std::mutex count_mutex;
    auto count = [&](int k) {
        std::lock_guard<std::mutex> lock(count_mutex);
        evaluations += k;
    };

    auto finish = [&](const ReducedStackParams& p, bool converged) {
        StackFitResult r;
        const MatchResult mr = match_modes(measured, p, fsr);
        r.params = p;
        r.epsilon = mr.epsilon;
        r.matched = mr.matched;
        r.unmatched = mr.unmatched;
        r.residual = mr.residual;
        r.rms_residual = mr.matched > 0 ? std::sqrt(mr.epsilon / static_cast<double>(mr.matched)) : 0.0;
        r.fsr = fsr;
        r.converged = converged && mr.matched > 0;
        return r;
    };
    if (all_free.empty()) {
        StackFitResult r = finish(start, true);
        if (r.matched == 0) throw ConvergenceError("fit_stack: no measured mode matched the model");
        return r;
    }

    auto objective = [&](const ReducedStackParams& p) {
        const MatchResult mr = guarded_match(p);
        return mr.epsilon + penalty * static_cast<double>(mr.unmatched);
    };

    struct Refined {
        ReducedStackParams params;
        optim::LeastSquaresResult lm;
        double value = 0.0;
    };
    // A candidate replaces the incumbent only if it lowers chi^2 by more than one
    // unit of the incumbent's per-mode residual variance.
    const double dof = std::max(1.0, static_cast<double>(n) - static_cast<double>(all_free.size()));
    auto significant = [&](const Refined& candidate, const Refined& incumbent) {
        return candidate.value < incumbent.value - incumbent.value / dof;
    };

    // Levenberg-Marquardt on per-mode residuals over a subset of parameters, with
    // the implicit-function Jacobian of the matched roots and optional Huber passes.
    auto refine = [&](const ReducedStackParams& from, const std::vector<std::size_t>& free, bool robust) {
        detail::StackCoordinates coords;
        coords.base = from;
        coords.free = free;
        coords.fsr = fsr;
        const std::size_t dim = free.size();
        std::vector<double> weights(n, 1.0);
        int local = 0;
        optim::ResidualFn residual = [&](const optim::Vector& u, optim::Vector& r) {
            ++local;
            const MatchResult mr = guarded_match(coords.decode(u));
            for (std::size_t i = 0; i < n; ++i) {
                const double ri = std::isfinite(mr.residual[i]) ? mr.residual[i] : 0.5 * fsr;
                r[static_cast<Eigen::Index>(i)] = std::sqrt(weights[i]) * ri;
            }
        };
        optim::JacobianFn jacobian = [&](const optim::Vector& u, optim::Matrix& J) {
            const ReducedStackParams p = coords.decode(u);
            const auto values = p.to_array();
            const MatchResult mr = guarded_match(p);
            J.setZero(m, static_cast<Eigen::Index>(dim));
            for (std::size_t i = 0; i < n; ++i) {
                if (!std::isfinite(mr.model_frequency[i])) continue;
                const auto d = root_sensitivity(p, mr.model_frequency[i]);
                const double sw = std::sqrt(weights[i]);
                for (std::size_t k = 0; k < dim; ++k) {
                    const std::size_t j = free[k];
                    const double v = j == 5 ? -fsr : -d[j] * values[j];
                    J(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = sw * v;
                }
            }
        };
        optim::LeastSquaresOptions lso;
        lso.step_tolerance = 1e-15;
        lso.value_tolerance = 1e-16;
        lso.initial_step_bound = 1.0;
        lso.max_evaluations = 2000;
        lso.stall_fraction = 1.0 / dof;
        optim::Vector u = coords.encode(from);
        Refined out;
        for (int pass = 0; pass < (robust ? 6 : 1); ++pass) {
            out.lm = optim::levenberg_marquardt(residual, jacobian, u, m, lso);
            u = out.lm.x;
            if (!robust) break;
            const MatchResult mr = match_modes(measured, coords.decode(u), fsr);
            std::vector<double> abs_r;
            for (double r : mr.residual)
                if (std::isfinite(r)) abs_r.push_back(std::abs(r));
            if (abs_r.empty()) break;
            const double k = std::max(constraints.huber_factor * detail::median_copy(abs_r), 1e-9 * fsr);
            bool changed = false;
            for (std::size_t i = 0; i < n; ++i) {
                const double ri = std::isfinite(mr.residual[i]) ? std::abs(mr.residual[i]) : 0.5 * fsr;
                const double w = ri <= k ? 1.0 : k / ri;
                if (std::abs(w - weights[i]) > 1e-6) changed = true;
                weights[i] = w;
            }
            if (!changed) break;
        }
        out.params = coords.decode(u);
        out.value = objective(out.params);
        count(local);
        return out;
    };

    // Stages release the parameters in order of how strongly they move the comb.
    auto staged = [&](ReducedStackParams p, std::size_t held, bool robust) {
        auto without = [&](std::vector<std::size_t> v) {
            v.erase(std::remove(v.begin(), v.end(), held), v.end());
            return v;
        };
        for (const auto& stage : {free_of({2, 5}), free_of({0, 2, 5}), free_of({0, 2, 3, 4, 5})}) {
            const auto f = without(stage);
            if (!f.empty()) p = refine(p, f, false).params;
        }
        return refine(p, without(all_free), robust);
    };

    // Unweighted Jacobian of the matched residuals in fit coordinates.
    auto jacobian_at = [&](const ReducedStackParams& p, const std::vector<std::size_t>& free) {
        const MatchResult mr = match_modes(measured, p, fsr);
        const auto values = p.to_array();
        optim::Matrix J = optim::Matrix::Zero(m, static_cast<Eigen::Index>(free.size()));
        for (std::size_t i = 0; i < n; ++i) {
            if (!std::isfinite(mr.model_frequency[i])) continue;
            const auto d = root_sensitivity(p, mr.model_frequency[i]);
            for (std::size_t k = 0; k < free.size(); ++k) {
                const std::size_t j = free[k];
                J(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = j == 5 ? -fsr : -d[j] * values[j];
            }
        }
        return J;
    };

    // The thin-defect combinations leave a curved valley that a single local
    // solve follows poorly. Scan the parameter that dominates the weakest
    // direction, solving the others at each value, then polish everything.
    auto profile = [&](const Refined& from) {
        std::vector<std::size_t> candidates;
        for (std::size_t j : all_free)
            if (j != 5) candidates.push_back(j);
        if (candidates.size() < 2) return from;
        const optim::Matrix J = jacobian_at(from.params, all_free);
        Eigen::JacobiSVD<optim::Matrix> svd(J, Eigen::ComputeThinV);
        const Eigen::Index weakest = svd.singularValues().size() - 1;
        std::size_t held = candidates.front();
        double loading = -1.0;
        for (std::size_t k = 0; k < all_free.size(); ++k) {
            const double v = std::abs(svd.matrixV()(static_cast<Eigen::Index>(k), weakest));
            if (all_free[k] != 5 && v > loading) {
                loading = v;
                held = all_free[k];
            }
        }
        const double centre = from.params.to_array()[held];
        ReducedStackParams warm = from.params;
        auto at = [&](double x) {
            auto a = warm.to_array();
            a[held] = centre * std::exp(x);
            Refined r = staged(ReducedStackParams::from_array(a), held, false);
            warm = r.params;
            return r;
        };
        constexpr int kHalf = 6;
        constexpr double kStep = 0.05;
        std::vector<Refined> scan(2 * kHalf + 1);
        scan[kHalf] = at(0.0);
        for (int side : {-1, 1}) {
            warm = scan[kHalf].params;
            for (int k = 1; k <= kHalf; ++k) scan[static_cast<std::size_t>(kHalf + side * k)] = at(side * k * kStep);
        }
        std::size_t lowest = 0;
        for (std::size_t k = 1; k < scan.size(); ++k)
            if (scan[k].value < scan[lowest].value) lowest = k;
        const double x0 = (static_cast<double>(lowest) - kHalf) * kStep;
        warm = scan[lowest].params;
        Refined inner = scan[lowest];
        const auto found = boost::math::tools::brent_find_minima(
            [&](double x) {
                Refined r = at(x);
                if (r.value < inner.value) inner = r;
                return r.value;
            },
            x0 - kStep, x0 + kStep, 40);
        (void)found;
        Refined polished = refine(inner.params, all_free, true);
        return significant(polished, inner) ? polished : inner;
    };

    auto simplex = [&](const ReducedStackParams& from, double scale) {
        detail::StackCoordinates coords;
        coords.base = from;
        coords.free = all_free;
        coords.fsr = fsr;
        optim::Vector steps(static_cast<Eigen::Index>(all_free.size()));
        for (std::size_t k = 0; k < all_free.size(); ++k)
            steps[static_cast<Eigen::Index>(k)] = scale * (all_free[k] == 5 ? 0.5 : 1.0);
        optim::NelderMeadOptions nmo;
        nmo.max_evaluations = 1500;
        nmo.step_tolerance = 1e-9;
        int local = 0;
        auto obj = [&](const optim::Vector& u) {
            ++local;
            return objective(coords.decode(u));
        };
        const auto res = optim::nelder_mead(obj, coords.encode(from), steps, nmo);
        count(local);
        return coords.decode(res.x);
    };

    Refined best = staged(start, ReducedStackParams::kCount, true);
    {
        Refined profiled = profile(best);
        if (significant(profiled, best)) best = std::move(profiled);
    }
    // Restarts: a simplex from randomly displaced copies of the best point, each
    // followed by the full refinement. Stops once a round brings no improvement.
    const int jobs = std::max(1, constraints.jobs);
    const int starts = std::max(1, constraints.starts_per_round);
    for (int round = 0; round < constraints.restarts; ++round) {
        std::vector<ReducedStackParams> seeds;
        for (int j = 0; j < starts; ++j) {
            std::mt19937_64 rng(constraints.seed + 7919u * static_cast<unsigned>(round * starts + j));
            std::normal_distribution<double> g(0.0, 1.0);
            auto a = best.params.to_array();
            for (std::size_t k : all_free) a[k] = k == 5 ? a[k] + 0.05 * fsr * g(rng) : a[k] * std::exp(0.02 * g(rng));
            seeds.push_back(ReducedStackParams::from_array(a));
        }
        std::vector<Refined> results;
        for (std::size_t first = 0; first < seeds.size(); first += static_cast<std::size_t>(jobs)) {
            std::vector<std::future<Refined>> futures;
            const std::size_t last = std::min(seeds.size(), first + static_cast<std::size_t>(jobs));
            for (std::size_t j = first; j < last; ++j) {
                futures.push_back(std::async(jobs > 1 ? std::launch::async : std::launch::deferred,
                                             [&, j] { return refine(simplex(seeds[j], 0.02), all_free, true); }));
            }
            for (auto& fut : futures) results.push_back(fut.get());
        }
        bool improved = false;
        for (auto& r : results) {
            if (significant(r, best)) {
                improved = true;
                best = std::move(r);
            }
        }
        if (!improved) break;
    }

    StackFitResult out = finish(best.params, best.lm.converged);
    out.evaluations = evaluations;
    if (out.matched == 0) throw ConvergenceError("fit_stack: no measured mode matched the fitted model");

    // Covariance from the unweighted analytic Jacobian at the solution.
    const std::size_t dim = all_free.size();
    const auto values = out.params.to_array();
    const optim::Matrix J = jacobian_at(out.params, all_free);
    const optim::Covariance cov = optim::covariance_from_jacobian(J, out.epsilon / dof, 1e-9);
    for (std::size_t k = 0; k < dim; ++k) {
        const std::size_t j = all_free[k];
        const double s = cov.sigma[static_cast<Eigen::Index>(k)];
        out.sigma[j] = j == 5 ? s * fsr : s * values[j];
    }
    for (const auto& v : cov.null_directions) {
        std::array<double, ReducedStackParams::kCount> dir{};
        for (std::size_t k = 0; k < dim; ++k) dir[all_free[k]] = v[static_cast<Eigen::Index>(k)];
        out.degenerate_directions.push_back(dir);
    }
    return out;
}

// Local FSR f_{k+1} - f_k of consecutive modes minus its mean, paired with the
// midpoint frequency.
struct FsrResidual {
    std::vector<double> frequency;
    std::vector<double> deviation;
};

inline FsrResidual fsr_residual(const std::vector<double>& f) {
    if (f.size() < 3) throw ValidationError("fsr_residual: need at least 3 modes");
    FsrResidual out;
    double mean = (f.back() - f.front()) / static_cast<double>(f.size() - 1);
    for (std::size_t i = 1; i < f.size(); ++i) {
        out.frequency.push_back(0.5 * (f[i] + f[i - 1]));
        out.deviation.push_back(f[i] - f[i - 1] - mean);
    }
    return out;
}

// Material assumptions used to turn reduced parameters back into layers.
struct LayerMaterial {
    std::string name;
    double velocity = 0.0;  // m/s
    double density = 0.0;   // kg/m^3
};

struct LayerExpansion {
    std::vector<Layer> layers;
    double impedance_consistency = 1.0;  // ratio of the two defect-impedance estimates
};

// Piezo and bulk materials are pinned; the defect thickness is assumed. The defect
// impedance is the geometric mean of the estimates implied by each pinned material.
inline LayerExpansion expand_to_layers(const ReducedStackParams& p, const LayerMaterial& piezo,
                                       const LayerMaterial& bulk, double defect_thickness,
                                       const std::string& defect_name = "D") {
    validate(p);
    if (!(piezo.velocity > 0.0) || !(piezo.density > 0.0) || !(bulk.velocity > 0.0) || !(bulk.density > 0.0))
        throw ValidationError("expand_to_layers: pinned materials need velocity and density > 0");
    LayerExpansion out;
    Layer lp{piezo.name, p.beta_p * piezo.velocity, piezo.velocity, piezo.density};
    Layer lb{bulk.name, p.beta_b * bulk.velocity, bulk.velocity, bulk.density};
    out.layers.push_back(lp);
    if (p.beta_d > 0.0) {
        if (!(defect_thickness > 0.0)) throw ValidationError("expand_to_layers: defect_thickness must be > 0");
        const double zd_from_p = lp.impedance() / p.zp_over_zd;
        const double zd_from_b = lb.impedance() / p.zb_over_zd;
        const double zd = std::sqrt(zd_from_p * zd_from_b);
        const double vd = defect_thickness / p.beta_d;
        out.layers.push_back(Layer{defect_name, defect_thickness, vd, zd / vd});
        out.impedance_consistency = zd_from_p / zd_from_b;
    } else {
        out.impedance_consistency = (lp.impedance() / lb.impedance()) / (p.zp_over_zd / p.zb_over_zd);
    }
    out.layers.push_back(lb);
    return out;
}

// Participation-weighted linear loss fits.

struct LinearLossSample {
    std::vector<double> participation;  // one column per layer
    double q_inv = 0.0;                 // measured loss to be explained
    double sigma = 0.0;                 // 1 sigma of q_inv; 0 means unweighted
};

struct TangentFit {
    std::vector<std::string> names;
    std::vector<double> tangent;        // 1/Q_X, >= 0
    std::vector<double> sigma;
    std::vector<bool> at_bound;         // tangent pinned at zero by the constraint
    std::vector<double> lower_bound_q;  // single-layer attribution, Q_X,min
    double condition_number = 1.0;
    bool ill_conditioned = false;
    double residual_norm = 0.0;
    double chi2_reduced = 0.0;
};

struct TangentFitOptions {
    std::vector<bool> pinned_zero;       // per layer; pinned layers are fixed at 0
    double condition_threshold = 1e3;    // above this, sigmas are widened
};

namespace detail {

inline TangentFit fit_linear_tangents(const std::vector<LinearLossSample>& samples, std::size_t layers,
                                      const TangentFitOptions& opt, std::vector<std::string> names) {
    if (samples.empty()) throw ValidationError("tangent fit: no samples");
    for (const auto& s : samples)
        if (s.participation.size() != layers)
            throw ValidationError("tangent fit: participation size differs from the layer count");
    std::vector<std::size_t> cols;
    for (std::size_t j = 0; j < layers; ++j)
        if (opt.pinned_zero.empty() || !opt.pinned_zero[j]) cols.push_back(j);
    if (samples.size() < cols.size() + 1) throw ValidationError("tangent fit: need more samples than free layers");

    const auto m = static_cast<Eigen::Index>(samples.size());
    const auto k = static_cast<Eigen::Index>(cols.size());
    optim::Matrix A(m, k);
    optim::Vector b(m);
    std::vector<double> w(samples.size());
    for (std::size_t i = 0; i < samples.size(); ++i) {
        w[i] = samples[i].sigma > 0.0 ? 1.0 / samples[i].sigma : 1.0;
        for (std::size_t c = 0; c < cols.size(); ++c)
            A(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) = w[i] * samples[i].participation[cols[c]];
        b[static_cast<Eigen::Index>(i)] = w[i] * samples[i].q_inv;
    }

    TangentFit out;
    out.names = std::move(names);
    out.tangent.assign(layers, 0.0);
    out.sigma.assign(layers, 0.0);
    out.at_bound.assign(layers, true);
    out.lower_bound_q.assign(layers, std::numeric_limits<double>::infinity());
    if (k == 0) return out;

    const optim::NnlsResult nn = optim::nnls(A, b);
    out.residual_norm = nn.residual_norm;
    const double dof = std::max(1.0, static_cast<double>(m - k));
    const double s2 = nn.residual_norm * nn.residual_norm / dof;
    out.chi2_reduced = s2;
    // Sample sigmas given: covariance in absolute units. Unweighted: scale by residual variance.
    const bool weighted = std::any_of(samples.begin(), samples.end(), [](const auto& s) { return s.sigma > 0.0; });
    const double scale = weighted ? std::max(1.0, s2) : s2;

    optim::Matrix An = A;
    for (Eigen::Index c = 0; c < k; ++c) {
        const double norm = A.col(c).norm();
        if (norm > 0.0) An.col(c) /= norm;
    }
    Eigen::JacobiSVD<optim::Matrix> svd(An);
    const auto sv = svd.singularValues();
    out.condition_number = sv[sv.size() - 1] > 0.0 ? sv[0] / sv[sv.size() - 1] : std::numeric_limits<double>::infinity();
    out.ill_conditioned = out.condition_number > opt.condition_threshold;

    const optim::Covariance full = optim::covariance_from_jacobian(A, scale, 1e-14);
    std::vector<Eigen::Index> free_idx;
    for (Eigen::Index c = 0; c < k; ++c)
        if (nn.free[static_cast<std::size_t>(c)]) free_idx.push_back(c);
    optim::Vector projected = optim::Vector::Zero(k);
    if (!free_idx.empty()) {
        optim::Matrix Af(m, static_cast<Eigen::Index>(free_idx.size()));
        for (std::size_t c = 0; c < free_idx.size(); ++c) Af.col(static_cast<Eigen::Index>(c)) = A.col(free_idx[c]);
        const optim::Covariance face = optim::covariance_from_jacobian(Af, scale, 1e-14);
        for (std::size_t c = 0; c < free_idx.size(); ++c)
            projected[free_idx[c]] = face.sigma[static_cast<Eigen::Index>(c)];
    }
    for (Eigen::Index c = 0; c < k; ++c) {
        const std::size_t j = cols[static_cast<std::size_t>(c)];
        out.tangent[j] = nn.x[c];
        out.at_bound[j] = !nn.free[static_cast<std::size_t>(c)];
        double s = out.at_bound[j] ? full.sigma[c] : projected[c];
        if (out.ill_conditioned) s = std::max(s, full.sigma[c]);
        out.sigma[j] = s;

        double num = 0.0, den = 0.0;
        for (Eigen::Index i = 0; i < m; ++i) {
            num += A(i, c) * b[i];
            den += A(i, c) * A(i, c);
        }
        const double single = den > 0.0 ? num / den : 0.0;
        out.lower_bound_q[j] = single > 0.0 ? 1.0 / single : std::numeric_limits<double>::infinity();
    }
    return out;
}

}  // namespace detail

struct AbsorptionSample {
    ParticipationRecord participation;
    double q_inv_measured = 0.0;
    double q_inv_scatter = 0.0;
    double sigma = 0.0;
};

// Non-negative fit of 1/Q_i - 1/Q_sigma against total participation. lower_bound_q
// holds Q_X,min from attributing all residual loss to that layer alone.
inline TangentFit fit_absorption_tangents(const std::vector<AbsorptionSample>& modes,
                                          const TangentFitOptions& opt = {}) {
    if (modes.empty()) throw ValidationError("fit_absorption_tangents: no modes");
    const std::size_t layers = modes.front().participation.size();
    if (modes.size() < 3 * layers)
        throw ValidationError("fit_absorption_tangents: need at least 3x more modes than layers");
    std::vector<LinearLossSample> rows;
    for (const auto& s : modes) {
        if (s.participation.size() != layers) throw ValidationError("fit_absorption_tangents: layer count differs");
        rows.push_back({s.participation.p_tot, s.q_inv_measured - s.q_inv_scatter, s.sigma});
    }
    return detail::fit_linear_tangents(rows, layers, opt, modes.front().participation.names);
}

struct TlsSample {
    std::vector<double> p_pot;
    double q_inv_tls = 0.0;
    double sigma = 0.0;
};

// Bulk (last layer) pinned to zero unless opt.pinned_zero says otherwise.
inline TangentFit fit_tls_tangents(const std::vector<TlsSample>& modes, TangentFitOptions opt = {},
                                   std::vector<std::string> names = {}) {
    if (modes.empty()) throw ValidationError("fit_tls_tangents: no modes");
    const std::size_t layers = modes.front().p_pot.size();
    if (opt.pinned_zero.empty()) {
        opt.pinned_zero.assign(layers, false);
        opt.pinned_zero.back() = true;
    }
    if (opt.pinned_zero.size() != layers) throw ValidationError("fit_tls_tangents: pinned mask size differs");
    std::vector<LinearLossSample> rows;
    for (const auto& s : modes) rows.push_back({s.p_pot, s.q_inv_tls, s.sigma});
    if (names.size() != layers) names.assign(layers, "");
    return detail::fit_linear_tangents(rows, layers, opt, std::move(names));
}

struct DissipativeTangent {
    double value = 0.0;
    bool floored = false;  // the raw difference was negative
};

inline DissipativeTangent tls_dissipative_tangent(double q_inv_single_phonon, double q_inv_high_power) {
    if (!(q_inv_single_phonon >= 0.0) || !(q_inv_high_power >= 0.0))
        throw ValidationError("tls_dissipative_tangent: inputs must be >= 0");
    const double d = q_inv_single_phonon - q_inv_high_power;
    return d < 0.0 ? DissipativeTangent{0.0, true} : DissipativeTangent{d, false};
}

}  // namespace hbar
