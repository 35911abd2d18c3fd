#pragma once

#include <array>
#include <string>
#include <vector>

#include "msmspline/expmd.hpp"
#include "msmspline/model.hpp"
#include "msmspline/panel.hpp"
#include "msmspline/types.hpp"

namespace msms {

struct Contribution {
    double L = 0.0;
    Vector dL;
    Matrix d2L;
};

// Reference per-record contribution from dense bundles. qb is the interval's
// left-endpoint bundle; qb_event carries the intensity evaluation at the
// event time and is required for the exactly observed kinds.
Contribution contribution(const ObservationRecord& rec, const PBundle& pb, const QBundle& qb,
                          const QBundle* qb_event);

struct LikelihoodResult {
    double ll = 0.0;
    Vector grad;
    Matrix hess;
    std::array<int, 4> kind_counts{};  // indexed by ObsKind
    int floored = 0;                   // contributions clamped at the floor
    double max_intensity = 0.0;
};

struct LikelihoodOptions {
    bool approx_hessian = false;  // first-order approximation (comparison fixture)
    int threads = 0;
    int grid_refine = 0;          // extra piecewise-constant breakpoints per interval
};

/**
 * Precomputes design rows and groups records that share an interval (same
 * left-endpoint rows and length) so each group needs a single probability
 * bundle per evaluation; identical contributions within a group carry a
 * multiplicity. Groups are sorted canonically, and the reduction runs over
 * fixed blocks in order, so results are deterministic and invariant to
 * subject permutation regardless of the worker count.
 */
class LikelihoodEvaluator {
public:
    LikelihoodEvaluator(const ModelSpec& spec, const ParameterLayout& layout, const Panel& panel);

    LikelihoodResult eval(const Vector& theta, const LikelihoodOptions& opts = {}) const;

    int n_obs() const { return n_obs_; }
    int W() const;

    static constexpr double kFloor = 1e-300;

private:
    struct Entry {
        ObsKind kind;
        int z_prev, z_cur;
        std::vector<int> state_set;
        std::vector<Vector> event_rows;  // rows at the event time (exact kinds)
        double t_event = 0.0;
        int count = 0;
        std::string subject;  // representative, for diagnostics
    };
    struct Group {
        double dt = 0.0;
        double t_left = 0.0;
        std::vector<Vector> left_rows;
        std::vector<double> refine_times;  // sub-interval left endpoints (refined grid)
        std::map<std::string, double> covs;
        std::vector<Entry> entries;
    };

    void accumulate_group(const Group& g, const Vector& theta, const LikelihoodOptions& opts,
                          double& ll, Vector& grad, Matrix& hess, std::array<int, 4>& counts,
                          int& floored, double& max_q) const;

    const ModelSpec* spec_;
    const ParameterLayout* layout_;
    std::vector<Group> groups_;
    int n_obs_ = 0;
};

struct PenalizedEval {
    double lp = 0.0;
    Vector gp;
    Matrix Hp;
};

// lp = ll - theta'S theta / 2, gp = g - S theta, Hp = H - S.
PenalizedEval penalized(const Vector& theta, const Matrix& S, const LikelihoodResult& lik);

}  // namespace msms
