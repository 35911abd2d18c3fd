#pragma once

#include <functional>
#include <string>
#include <utility>

#include "msmspline/model.hpp"
#include "msmspline/panel.hpp"
#include "msmspline/types.hpp"

namespace msms {

struct TrustRegionOptions {
    double delta0 = 1.0;
    double delta_min = 1e-10;
    double delta_max = 1e6;
    double eta_accept = 0.05;
    double eta_shrink = 0.25;
    double eta_grow = 0.75;
    int max_iter = 500;
    int max_rejects = 10;     // consecutive rejections before reporting a stall
    double rel_tol = 1e-7;    // |lp' - lp| / (0.1 + |lp'|)
    double grad_tol = 1e-5;   // scaled by 1 + |lp|
};

// One evaluation of the penalized objective; evaluation failures inside a
// trial step (overflow and the like) are signalled by exceptions and treated
// as rejected proposals.
struct PenalizedObjective {
    double lp = 0.0;
    Vector gp;
    Matrix Hp;
    double max_intensity = 0.0;
};

using Objective = std::function<PenalizedObjective(const Vector&)>;

struct TrustState {
    Vector theta;
    double delta = 1.0;
    int iter = 0;
    PenalizedObjective eval;
};

struct ConvergenceReport {
    bool converged = false;
    double max_abs_grad = 0.0;
    double min_eig_neg_hess = 0.0;
    double max_intensity = 0.0;
    int iterations = 0;
    int rejected = 0;
    std::string message;
};

// Maximizes g'e + e'He/2 over ||e|| <= delta via the eigendecomposition of
// -H and a safeguarded Newton solve of the radius equation (hard case
// included). Returns the step; *predicted receives the model improvement.
Vector solve_trust_subproblem(const Matrix& Hp, const Vector& gp, double delta, double* predicted);

// One proposal/acceptance cycle. Returns the updated state; *accepted tells
// whether the proposal was taken.
TrustState trust_step(const TrustState& state, const Objective& objective,
                      const TrustRegionOptions& opts, bool* accepted);

// Crude starting values: transition intercepts from the covariate-free
// time-homogeneous rates log(events/exposure), everything else 1e-3.
Vector starting_values(const Panel& panel, const ModelSpec& spec, const ParameterLayout& layout);

std::pair<TrustState, ConvergenceReport> fit_inner(const Objective& objective, Vector theta0,
                                                   const TrustRegionOptions& opts = {});

}  // namespace msms
