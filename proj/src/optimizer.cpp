#include "msmspline/optimizer.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <map>

#include "msmspline/error.hpp"

namespace msms {

Vector solve_trust_subproblem(const Matrix& Hp, const Vector& gp, double delta, double* predicted) {
    const int W = static_cast<int>(gp.size());
    if (predicted) *predicted = 0.0;

    Eigen::SelfAdjointEigenSolver<Matrix> es(-Hp);  // minimize e'Be/2 - g'e with B = -Hp
    const Vector lam = es.eigenvalues();
    const Matrix& V = es.eigenvectors();
    const Vector gh = V.transpose() * gp;
    const double lam_min = lam.minCoeff();

    auto step_for = [&](double nu) {
        Vector eh(W);
        for (int i = 0; i < W; ++i) eh[i] = gh[i] / (lam[i] + nu);
        return eh;
    };
    auto finish = [&](const Vector& eh) {
        Vector e = V * eh;
        if (predicted) *predicted = gp.dot(e) + 0.5 * e.dot(Hp * e);
        return e;
    };

    if (lam_min > 0.0) {
        Vector eh = step_for(0.0);
        if (eh.norm() <= delta) return finish(eh);  // interior Newton point
    }

    // boundary solution: ||e(nu)|| = delta with nu > nu_floor
    const double nu_floor = std::max(0.0, -lam_min);
    const double eps_nu = 1e-12 * (1.0 + std::abs(lam_min));

    if (lam_min <= 0.0) {
        // hard case: gradient orthogonal to the minimal eigenspace
        double g_edge2 = 0.0;
        for (int i = 0; i < W; ++i)
            if (std::abs(lam[i] - lam_min) <= 1e-10 * (1.0 + std::abs(lam_min))) g_edge2 += gh[i] * gh[i];
        if (g_edge2 <= 1e-28 * (1.0 + gh.squaredNorm())) {
            Vector eh = Vector::Zero(W);
            for (int i = 0; i < W; ++i) {
                const double d = lam[i] + nu_floor;
                if (std::abs(d) > eps_nu) eh[i] = gh[i] / d;
            }
            if (eh.norm() <= delta) {
                const double tau = std::sqrt(std::max(0.0, delta * delta - eh.squaredNorm()));
                int imin = 0;
                lam.minCoeff(&imin);
                eh[imin] += tau;
                return finish(eh);
            }
        }
    }

    // phi(nu) = 1/delta - 1/||e(nu)|| decreases from positive to -inf on
    // (nu_floor, inf); safeguarded Newton with a bisection bracket
    double lo = nu_floor + eps_nu;
    double hi = std::max(1.0, 2.0 * nu_floor + 1.0);
    while (step_for(hi).norm() > delta && hi < 1e18) hi *= 4.0;
    double nu = std::min(hi, std::max(lo, gh.norm() / delta - lam_min));
    for (int it = 0; it < 200; ++it) {
        const Vector eh = step_for(nu);
        const double nrm = eh.norm();
        if (std::abs(nrm - delta) <= 1e-9 * delta) break;
        if (nrm > delta)
            lo = nu;
        else
            hi = nu;
        double s3 = 0.0;
        for (int i = 0; i < W; ++i) {
            const double d = lam[i] + nu;
            s3 += gh[i] * gh[i] / (d * d * d);
        }
        const double phi = 1.0 / delta - 1.0 / nrm;
        const double dphi = -s3 / (nrm * nrm * nrm);
        double nu_next = nu - phi / std::min(dphi, -1e-300);
        if (!(nu_next > lo) || !(nu_next < hi)) nu_next = 0.5 * (lo + hi);
        nu = nu_next;
    }
    Vector eh = step_for(nu);
    if (eh.norm() > delta) eh *= delta / eh.norm();
    return finish(eh);
}

TrustState trust_step(const TrustState& state, const Objective& objective,
                      const TrustRegionOptions& opts, bool* accepted) {
    TrustState next = state;
    next.iter = state.iter + 1;
    if (accepted) *accepted = false;

    double predicted = 0.0;
    Vector e = solve_trust_subproblem(state.eval.Hp, state.eval.gp, state.delta, &predicted);
    const double scale = 0.1 + std::abs(state.eval.lp);
    if (e.norm() == 0.0 || predicted <= 1e-15 * scale) {
        // stationary to numerical precision; nothing to move
        if (accepted) *accepted = true;
        return next;
    }

    bool eval_ok = true;
    PenalizedObjective trial;
    try {
        trial = objective(state.theta + e);
        eval_ok = std::isfinite(trial.lp);
    } catch (const Error&) {
        eval_ok = false;
    }

    const double rho = eval_ok ? (trial.lp - state.eval.lp) / predicted
                               : -std::numeric_limits<double>::infinity();
    const bool hit_boundary = e.norm() >= 0.99 * state.delta;

    if (eval_ok && rho > opts.eta_accept) {
        next.theta = state.theta + e;
        next.eval = std::move(trial);
        if (accepted) *accepted = true;
    }
    if (rho < opts.eta_shrink) {
        next.delta = std::max(opts.delta_min, state.delta / 4.0);
    } else if (rho > opts.eta_grow && hit_boundary) {
        next.delta = std::min(opts.delta_max, 2.0 * state.delta);
    }
    return next;
}

Vector starting_values(const Panel& panel, const ModelSpec& spec, const ParameterLayout& layout) {
    const int C = spec.n_states;
    Matrix counts = Matrix::Zero(C, C);
    Vector exposure = Vector::Zero(C);
    for (const auto& rec : panel) {
        exposure[rec.z_prev] += rec.t_cur - rec.t_prev;
        if (rec.kind != ObsKind::CensoredState && rec.z_cur != rec.z_prev)
            counts(rec.z_prev, rec.z_cur) += 1.0;
    }
    Vector theta = Vector::Constant(layout.W(), 1e-3);
    for (const auto& key : layout.transition_order()) {
        const double T = exposure[key.from];
        if (T <= 0.0)
            fail(ErrorKind::Validation, "no-exposure",
                 "state " + std::to_string(key.from + 1) + " has outgoing transitions but no exposure time");
        const double n = counts(key.from, key.to);
        theta[layout.intercept_index(key)] = std::log((n > 0.0 ? n : 0.5) / T);
    }
    return theta;
}

std::pair<TrustState, ConvergenceReport> fit_inner(const Objective& objective, Vector theta0,
                                                   const TrustRegionOptions& opts) {
    TrustState state;
    state.theta = std::move(theta0);
    state.delta = opts.delta0;
    state.eval = objective(state.theta);

    ConvergenceReport report;
    int consecutive_rejects = 0;
    bool stalled = false;

    auto grad_ok = [&](const TrustState& s) {
        return s.eval.gp.cwiseAbs().maxCoeff() <= opts.grad_tol * (1.0 + std::abs(s.eval.lp));
    };

    int flat_accepts = 0;
    for (int it = 0; it < opts.max_iter; ++it) {
        bool accepted = false;
        const double lp_before = state.eval.lp;
        state = trust_step(state, objective, opts, &accepted);
        if (!accepted) {
            ++report.rejected;
            if (++consecutive_rejects >= opts.max_rejects) {
                stalled = true;
                break;
            }
            continue;
        }
        consecutive_rejects = 0;
        const double rel = std::abs(state.eval.lp - lp_before) / (0.1 + std::abs(state.eval.lp));
        if (rel < opts.rel_tol) {
            if (grad_ok(state)) break;
            // flat progress with a live gradient: keep going, but not forever
            if (++flat_accepts > 50) break;
        } else {
            flat_accepts = 0;
        }
    }

    report.iterations = state.iter;
    report.max_abs_grad = state.eval.gp.cwiseAbs().maxCoeff();
    report.max_intensity = state.eval.max_intensity;
    Eigen::SelfAdjointEigenSolver<Matrix> es(-state.eval.Hp);
    report.min_eig_neg_hess = es.eigenvalues().minCoeff();
    report.converged = grad_ok(state) && report.min_eig_neg_hess > 0.0;
    if (stalled)
        report.message = "stalled: " + std::to_string(opts.max_rejects) + " consecutive rejected steps";
    else if (!report.converged)
        report.message = "stopping rule reached without meeting the gradient/curvature check";
    else
        report.message = "converged";
    return {std::move(state), std::move(report)};
}

}  // namespace msms
