#include "msmspline/model.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "msmspline/error.hpp"

namespace msms {

std::string to_string(const TransitionKey& k) {
    return std::to_string(k.from + 1) + "->" + std::to_string(k.to + 1);
}

bool ModelSpec::is_absorbing(int state) const {
    for (const auto& [key, f] : transitions)
        if (key.from == state) return false;
    return true;
}

std::vector<int> ModelSpec::living_states() const {
    std::vector<int> out;
    for (int s = 0; s < n_states; ++s)
        if (!is_absorbing(s)) out.push_back(s);
    return out;
}

bool ModelSpec::is_shared(const std::string& cov) const {
    return std::find(shared.begin(), shared.end(), cov) != shared.end();
}

static std::vector<std::vector<bool>> reachability(const ModelSpec& spec) {
    const int C = spec.n_states;
    std::vector<std::vector<bool>> reach(C, std::vector<bool>(C, false));
    for (int s = 0; s < C; ++s) reach[s][s] = true;
    for (const auto& [key, f] : spec.transitions) reach[key.from][key.to] = true;
    for (int k = 0; k < C; ++k)
        for (int i = 0; i < C; ++i)
            for (int j = 0; j < C; ++j)
                if (reach[i][k] && reach[k][j]) reach[i][j] = true;
    return reach;
}

void validate_panel(const Panel& panel, const ModelSpec& spec) {
    const int C = spec.n_states;
    const auto reach = reachability(spec);
    std::set<std::string> formula_covs;
    for (const auto& [key, f] : spec.transitions) {
        for (const auto& s : f.smooths)
            if (s.cov != kTimeName) formula_covs.insert(s.cov);
        for (const auto& l : f.linears)
            if (l.cov != kTimeName) formula_covs.insert(l.cov);
    }

    for (std::size_t i = 0; i < panel.size(); ++i) {
        const auto& rec = panel[i];
        auto where = [&] { return "subject " + rec.subject + ", record " + std::to_string(i); };
        if (!(rec.t_cur > rec.t_prev))
            fail(ErrorKind::Validation, "zero-length-interval", where() + ": times must strictly increase");
        if (rec.z_prev < 0 || rec.z_prev >= C)
            fail(ErrorKind::Validation, "unknown-state", where() + ": state out of range");
        if (spec.is_absorbing(rec.z_prev))
            fail(ErrorKind::Validation, "absorbing-origin", where() + ": interval starts in an absorbing state");
        switch (rec.kind) {
            case ObsKind::IntervalCensored:
                if (rec.z_cur < 0 || rec.z_cur >= C)
                    fail(ErrorKind::Validation, "unknown-state", where() + ": state out of range");
                if (!reach[rec.z_prev][rec.z_cur])
                    fail(ErrorKind::Validation, "unreachable-state",
                         where() + ": no path " + std::to_string(rec.z_prev + 1) + "->" +
                             std::to_string(rec.z_cur + 1) + " in the transition structure");
                break;
            case ObsKind::ExactLiving:
                if (rec.z_cur < 0 || rec.z_cur >= C)
                    fail(ErrorKind::Validation, "unknown-state", where() + ": state out of range");
                if (rec.z_cur == rec.z_prev)
                    fail(ErrorKind::Validation, "exact-self-transition",
                         where() + ": exactly observed rows must record a state change");
                if (!spec.is_allowed(rec.z_prev, rec.z_cur))
                    fail(ErrorKind::Validation, "unreachable-state",
                         where() + ": transition " + to_string(TransitionKey{rec.z_prev, rec.z_cur}) +
                             " is not allowed");
                break;
            case ObsKind::CensoredState: {
                if (rec.state_set.empty())
                    fail(ErrorKind::Validation, "empty-state-set", where() + ": censored state set is empty");
                bool any = false;
                for (int c : rec.state_set) {
                    if (c < 0 || c >= C)
                        fail(ErrorKind::Validation, "unknown-state", where() + ": censor set state out of range");
                    any = any || reach[rec.z_prev][c];
                }
                if (!any)
                    fail(ErrorKind::Validation, "unreachable-state",
                         where() + ": no censor-set state reachable from " + std::to_string(rec.z_prev + 1));
                break;
            }
            case ObsKind::ExactDeath: {
                if (rec.z_cur < 0 || rec.z_cur >= C)
                    fail(ErrorKind::Validation, "unknown-state", where() + ": state out of range");
                if (!spec.is_absorbing(rec.z_cur))
                    fail(ErrorKind::Validation, "not-absorbing",
                         where() + ": exact death state " + std::to_string(rec.z_cur + 1) + " is not absorbing");
                bool any = false;
                for (int c = 0; c < C; ++c)
                    if (c != rec.z_cur && reach[rec.z_prev][c] && spec.is_allowed(c, rec.z_cur)) any = true;
                if (!any)
                    fail(ErrorKind::Validation, "unreachable-state",
                         where() + ": death state unreachable from " + std::to_string(rec.z_prev + 1));
                break;
            }
        }
        for (const auto& cov : formula_covs) {
            auto it = rec.covariates.find(cov);
            if (it == rec.covariates.end())
                fail(ErrorKind::Validation, "missing-covariate", where() + ": covariate '" + cov + "' not present");
            if (!std::isfinite(it->second))
                fail(ErrorKind::Validation, "non-finite-covariate", where() + ": covariate '" + cov + "' not finite");
        }
    }
}

void ParameterLayout::index_terms(const ModelSpec& spec) {
    std::map<std::string, int> shared_index;
    int next = 0;
    int smooth_id = 0;
    for (const auto& [key, formula] : spec.transitions) {
        order_.push_back(key);
        intercepts_.push_back(next++);
        std::vector<int> sids;
        for (std::size_t k = 0; k < formula.smooths.size(); ++k) {
            smooths_[smooth_id].offset = next;
            next += smooths_[smooth_id].dim;
            sids.push_back(smooth_id);
            ++smooth_id;
        }
        smooth_ids_.push_back(std::move(sids));
        std::vector<std::pair<std::string, int>> lin;
        for (const auto& l : formula.linears) {
            if (spec.is_shared(l.cov)) {
                auto it = shared_index.find(l.cov);
                if (it == shared_index.end()) it = shared_index.emplace(l.cov, next++).first;
                lin.emplace_back(l.cov, it->second);
            } else {
                lin.emplace_back(l.cov, next++);
            }
        }
        linears_.push_back(std::move(lin));
    }
    W_ = next;

    patterns_.resize(order_.size());
    for (std::size_t t = 0; t < order_.size(); ++t) {
        auto& p = patterns_[t];
        p.push_back(intercepts_[t]);
        for (int sid : smooth_ids_[t])
            for (int j = 0; j < smooths_[sid].dim; ++j) p.push_back(smooths_[sid].offset + j);
        for (const auto& [cov, idx] : linears_[t]) p.push_back(idx);
    }
}

ParameterLayout::ParameterLayout(const ModelSpec& spec, const Panel& panel) : spec_(&spec) {
    if (spec.n_states < 2) fail(ErrorKind::Config, "bad-model", "need at least 2 states");
    validate_panel(panel, spec);

    // construction samples for the smooth bases: interval rows (left endpoints)
    std::map<std::string, std::vector<double>> samples;
    for (const auto& [key, formula] : spec.transitions)
        for (const auto& s : formula.smooths) samples.emplace(s.cov, std::vector<double>{});
    for (const auto& rec : panel) {
        for (auto& [cov, vals] : samples) {
            if (cov == kTimeName) {
                vals.push_back(rec.t_prev);
            } else {
                auto it = rec.covariates.find(cov);
                if (it == rec.covariates.end())
                    fail(ErrorKind::Validation, "missing-covariate",
                         "covariate '" + cov + "' not present for subject " + rec.subject);
                vals.push_back(it->second);
            }
        }
    }

    for (const auto& [key, formula] : spec.transitions) {
        for (const auto& s : formula.smooths) {
            KnotVector knots = build_knots(samples.at(s.cov), s.J, s.rule);
            PenalizedBlock block = crs_basis_and_penalty(knots, samples.at(s.cov));
            smooths_.push_back(SmoothBlock{key, s.cov, 0, block.dim(), std::move(block)});
        }
    }
    index_terms(spec);
}

ParameterLayout::ParameterLayout(const ModelSpec& spec, std::vector<SmoothBlock> blocks)
    : spec_(&spec), smooths_(std::move(blocks)) {
    for (auto& b : smooths_) b.dim = b.block.dim();
    index_terms(spec);
}

int ParameterLayout::trans_index(const TransitionKey& key) const {
    auto it = std::find(order_.begin(), order_.end(), key);
    if (it == order_.end()) fail(ErrorKind::Config, "bad-transition", "transition " + to_string(key) + " not in model");
    return static_cast<int>(it - order_.begin());
}

int ParameterLayout::intercept_index(const TransitionKey& key) const { return intercepts_[trans_index(key)]; }

int ParameterLayout::linear_index(const TransitionKey& key, const std::string& cov) const {
    for (const auto& [c, idx] : linears_[trans_index(key)])
        if (c == cov) return idx;
    fail(ErrorKind::Config, "bad-term", "no linear term '" + cov + "' in " + to_string(key));
}

Vector ParameterLayout::row_values(int t, double time, const std::map<std::string, double>& covs) const {
    auto value_of = [&](const std::string& cov) -> double {
        if (cov == kTimeName) return time;
        auto it = covs.find(cov);
        if (it == covs.end())
            fail(ErrorKind::Validation, "missing-covariate", "covariate '" + cov + "' not supplied");
        return it->second;
    };
    Vector out(patterns_[t].size());
    int pos = 0;
    out[pos++] = 1.0;
    for (int sid : smooth_ids_[t]) {
        const auto& sb = smooths_[sid];
        Vector b = sb.block.basis_row(value_of(sb.cov));
        out.segment(pos, sb.dim) = b;
        pos += sb.dim;
    }
    for (const auto& [cov, idx] : linears_[t]) out[pos++] = value_of(cov);
    return out;
}

std::vector<std::string> ParameterLayout::coefficient_names() const {
    std::vector<std::string> names(W_);
    for (std::size_t t = 0; t < order_.size(); ++t) {
        const std::string key = to_string(order_[t]);
        names[intercepts_[t]] = key + ":(intercept)";
        for (int sid : smooth_ids_[t]) {
            const auto& sb = smooths_[sid];
            for (int j = 0; j < sb.dim; ++j)
                names[sb.offset + j] = key + ":s(" + sb.cov + ")." + std::to_string(j + 1);
        }
        for (const auto& [cov, idx] : linears_[t]) {
            if (names[idx].empty())
                names[idx] = (spec_->is_shared(cov) ? "shared:" : key + ":") + cov;
        }
    }
    return names;
}

double QBundle::max_intensity() const {
    double m = 0.0;
    for (const auto& tr : trans) m = std::max(m, tr.q);
    return m;
}

Matrix QBundle::dQ(int w) const {
    Matrix out = Matrix::Zero(Q.rows(), Q.cols());
    for (const auto& tr : trans) {
        for (std::size_t i = 0; i < tr.index->size(); ++i) {
            if ((*tr.index)[i] == w) {
                const double v = tr.q * tr.x[static_cast<int>(i)];
                out(tr.key.from, tr.key.to) += v;
                out(tr.key.from, tr.key.from) -= v;
            }
        }
    }
    return out;
}

Matrix QBundle::d2Q(int w, int wp) const {
    Matrix out = Matrix::Zero(Q.rows(), Q.cols());
    for (const auto& tr : trans) {
        double xw = 0.0, xwp = 0.0;
        for (std::size_t i = 0; i < tr.index->size(); ++i) {
            if ((*tr.index)[i] == w) xw += tr.x[static_cast<int>(i)];
            if ((*tr.index)[i] == wp) xwp += tr.x[static_cast<int>(i)];
        }
        const double v = tr.q * xw * xwp;
        if (v != 0.0) {
            out(tr.key.from, tr.key.to) += v;
            out(tr.key.from, tr.key.from) -= v;
        }
    }
    return out;
}

QBundle assemble_Q(const ParameterLayout& layout, const Vector& theta,
                   const std::vector<Vector>& rows, double dt) {
    QBundle qb;
    qb.dt = dt;
    qb.W = layout.W();
    qb.Q = Matrix::Zero(layout.n_states(), layout.n_states());
    qb.trans.reserve(layout.n_transitions());
    for (int t = 0; t < layout.n_transitions(); ++t) {
        const auto& key = layout.transition_order()[t];
        const auto& pattern = layout.pattern(t);
        const Vector& x = rows[t];
        double eta = 0.0;
        for (std::size_t i = 0; i < pattern.size(); ++i) eta += x[static_cast<int>(i)] * theta[pattern[i]];
        if (eta > 700.0)
            fail(ErrorKind::Numeric, "intensity-overflow",
                 "predictor for transition " + to_string(key) + " exceeds 700 (eta=" + std::to_string(eta) + ")");
        const double q = std::exp(eta);
        qb.Q(key.from, key.to) += q;
        qb.Q(key.from, key.from) -= q;
        qb.trans.push_back(QBundle::PerTransition{key, q, &pattern, x});
    }
    return qb;
}

QBundle assemble_Q_at(const ParameterLayout& layout, const Vector& theta, double time,
                      const std::map<std::string, double>& covs, double dt) {
    std::vector<Vector> rows(layout.n_transitions());
    for (int t = 0; t < layout.n_transitions(); ++t) rows[t] = layout.row_values(t, time, covs);
    return assemble_Q(layout, theta, rows, dt);
}

}  // namespace msms
