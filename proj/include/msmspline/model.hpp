#pragma once

#include <compare>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "msmspline/panel.hpp"
#include "msmspline/splines.hpp"
#include "msmspline/types.hpp"

namespace msms {

// The time variable is addressed by this name in formulas; panel covariate
// columns may not reuse it.
inline constexpr const char* kTimeName = "t";

struct TransitionKey {
    int from = 0;  // 0-based
    int to = 0;
    auto operator<=>(const TransitionKey&) const = default;
};

std::string to_string(const TransitionKey& k);  // "r->s", 1-based

struct SmoothTerm {
    std::string cov;
    int J = 10;
    KnotRule rule = KnotRule::Quantile;
};

struct LinearTerm {
    std::string cov;
};

struct TransitionFormula {
    std::vector<SmoothTerm> smooths;
    std::vector<LinearTerm> linears;
};

struct ModelSpec {
    int n_states = 0;
    std::map<TransitionKey, TransitionFormula> transitions;  // the allowed set
    bool death = false;   // highest state is an exactly observed absorbing state
    int cens_code = -99;
    std::vector<std::string> shared;  // linear covariates constrained equal across transitions

    bool is_allowed(int from, int to) const { return transitions.count(TransitionKey{from, to}) > 0; }
    bool is_absorbing(int state) const;
    std::vector<int> living_states() const;  // non-absorbing states
    bool is_shared(const std::string& cov) const;
};

// Checks structural validity of a panel against the model: state ranges,
// interval ordering, kinds consistent with the transition structure, and
// reachability of the observed state pairs. Errors are row-addressed.
void validate_panel(const Panel& panel, const ModelSpec& spec);

struct SmoothBlock {
    TransitionKey trans;
    std::string cov;
    int offset = 0;  // first global coefficient index
    int dim = 0;     // J-1 after centering
    PenalizedBlock block;
};

/**
 * Global coefficient layout for the per-transition additive predictors:
 * [intercept | smooth blocks | linear terms] per transition, in row-major
 * transition order. Shared linear covariates are allocated once and aliased
 * by every transition that uses them. Spline bases and their centering are
 * constructed from the panel's interval rows.
 */
class ParameterLayout {
public:
    ParameterLayout(const ModelSpec& spec, const Panel& panel);
    // Rebuild from serialized components (fit files); blocks must carry the
    // same transition order as spec.transitions.
    ParameterLayout(const ModelSpec& spec, std::vector<SmoothBlock> blocks);

    int W() const { return W_; }
    int n_states() const { return spec_->n_states; }
    int n_transitions() const { return static_cast<int>(order_.size()); }
    const std::vector<TransitionKey>& transition_order() const { return order_; }
    const std::vector<SmoothBlock>& smooths() const { return smooths_; }

    int intercept_index(const TransitionKey& key) const;
    int linear_index(const TransitionKey& key, const std::string& cov) const;
    const std::vector<int>& pattern(int trans_index) const { return patterns_[trans_index]; }
    int trans_index(const TransitionKey& key) const;

    // Design-row values for one transition, aligned with pattern(trans_index).
    Vector row_values(int trans_index, double time, const std::map<std::string, double>& covs) const;

    // Names aligned with the global coefficient vector (for summaries).
    std::vector<std::string> coefficient_names() const;

private:
    void index_terms(const ModelSpec& spec);

    const ModelSpec* spec_;
    std::vector<TransitionKey> order_;
    std::vector<std::vector<int>> patterns_;           // per transition: global indices
    std::vector<int> intercepts_;                      // per transition
    std::vector<std::vector<int>> smooth_ids_;         // per transition: indices into smooths_
    std::vector<std::vector<std::pair<std::string, int>>> linears_;  // per transition
    std::vector<SmoothBlock> smooths_;
    int W_ = 0;
};

// Generator matrix with the factored derivative structure: for each allowed
// transition the intensity q, its owning row/column, and the design row
// through which every parameter enters. dQ/d2Q are materialized on demand.
struct QBundle {
    Matrix Q;
    double dt = 0.0;
    int W = 0;

    struct PerTransition {
        TransitionKey key;
        double q = 0.0;
        const std::vector<int>* index = nullptr;  // global parameter indices
        Vector x;                                 // design-row values
    };
    std::vector<PerTransition> trans;

    double max_intensity() const;
    Matrix dQ(int w) const;
    Matrix d2Q(int w, int wp) const;
};

// rows: per-transition design rows aligned with layout.transition_order().
// Throws "intensity-overflow" when a predictor exceeds 700.
QBundle assemble_Q(const ParameterLayout& layout, const Vector& theta,
                   const std::vector<Vector>& rows, double dt);

// Convenience: builds the rows at (time, covs) first.
QBundle assemble_Q_at(const ParameterLayout& layout, const Vector& theta, double time,
                      const std::map<std::string, double>& covs, double dt);

}  // namespace msms
