#include "msmspline/likelihood.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <tuple>

#include "msmspline/error.hpp"
#include "msmspline/parallel.hpp"

namespace msms {

namespace {

[[noreturn]] void degenerate(const std::string& subject, double t_prev, double t_cur, double L) {
    fail(ErrorKind::Numeric, "degenerate-contribution",
         "subject " + subject + ", interval (" + std::to_string(t_prev) + ", " + std::to_string(t_cur) +
             "): contribution " + std::to_string(L) + " is not a positive finite value");
}

}  // namespace

Contribution contribution(const ObservationRecord& rec, const PBundle& pb, const QBundle& qb,
                          const QBundle* qb_event) {
    const int W = qb.W;
    const int C = static_cast<int>(qb.Q.rows());
    Contribution out;
    out.dL = Vector::Zero(W);
    out.d2L = Matrix::Zero(W, W);

    switch (rec.kind) {
        case ObsKind::IntervalCensored:
        case ObsKind::CensoredState: {
            const std::vector<int> states =
                rec.kind == ObsKind::IntervalCensored ? std::vector<int>{rec.z_cur} : rec.state_set;
            const int r = rec.z_prev;
            for (int c : states) out.L += pb.P(r, c);
            for (int w = 0; w < W; ++w)
                for (int c : states) out.dL[w] += pb.dP[w](r, c);
            for (int w = 0; w < W; ++w)
                for (int wp = w; wp < W; ++wp) {
                    double v = 0.0;
                    for (int c : states) v += pb.d2(w, wp)(r, c);
                    out.d2L(w, wp) = v;
                    out.d2L(wp, w) = v;
                }
            break;
        }
        case ObsKind::ExactDeath: {
            const int r = rec.z_prev, d = rec.z_cur;
            std::vector<Matrix> dqe(W);
            for (int w = 0; w < W; ++w) dqe[w] = qb_event->dQ(w);
            for (int c = 0; c < C; ++c)
                if (c != d) out.L += pb.P(r, c) * qb_event->Q(c, d);
            for (int w = 0; w < W; ++w) {
                double v = 0.0;
                for (int c = 0; c < C; ++c) {
                    if (c == d) continue;
                    v += pb.dP[w](r, c) * qb_event->Q(c, d) + pb.P(r, c) * dqe[w](c, d);
                }
                out.dL[w] = v;
            }
            for (int w = 0; w < W; ++w)
                for (int wp = w; wp < W; ++wp) {
                    const Matrix d2qe = qb_event->d2Q(w, wp);
                    double v = 0.0;
                    for (int c = 0; c < C; ++c) {
                        if (c == d) continue;
                        v += pb.d2(w, wp)(r, c) * qb_event->Q(c, d) + pb.dP[w](r, c) * dqe[wp](c, d) +
                             pb.dP[wp](r, c) * dqe[w](c, d) + pb.P(r, c) * d2qe(c, d);
                    }
                    out.d2L(w, wp) = v;
                    out.d2L(wp, w) = v;
                }
            break;
        }
        case ObsKind::ExactLiving: {
            const int r = rec.z_prev, s = rec.z_cur;
            const double dt = rec.t_cur - rec.t_prev;
            const double I = qb.Q(r, r) * dt;  // single-piece survival integral
            const double eI = std::exp(I);
            const double qe = qb_event->Q(r, s);
            Vector dI(W);
            std::vector<Matrix> dqe(W);
            for (int w = 0; w < W; ++w) {
                dI[w] = qb.dQ(w)(r, r) * dt;
                dqe[w] = qb_event->dQ(w);
            }
            out.L = eI * qe;
            for (int w = 0; w < W; ++w) out.dL[w] = eI * (dqe[w](r, s) + qe * dI[w]);
            for (int w = 0; w < W; ++w)
                for (int wp = w; wp < W; ++wp) {
                    const double d2I = qb.d2Q(w, wp)(r, r) * dt;
                    const double d2qe = qb_event->d2Q(w, wp)(r, s);
                    const double v = eI * (d2qe + dqe[w](r, s) * dI[wp] + dqe[wp](r, s) * dI[w] +
                                           qe * (dI[w] * dI[wp] + d2I));
                    out.d2L(w, wp) = v;
                    out.d2L(wp, w) = v;
                }
            break;
        }
    }
    if (!std::isfinite(out.L) || out.L < 0.0) degenerate(rec.subject, rec.t_prev, rec.t_cur, out.L);
    return out;
}

LikelihoodEvaluator::LikelihoodEvaluator(const ModelSpec& spec, const ParameterLayout& layout,
                                         const Panel& panel)
    : spec_(&spec), layout_(&layout) {
    validate_panel(panel, spec);
    n_obs_ = static_cast<int>(panel.size());
    const int nt = layout.n_transitions();

    using GroupKey = std::vector<double>;
    using EntryKey = std::tuple<int, int, int, std::vector<int>, std::vector<double>>;
    std::map<GroupKey, std::size_t> group_index;
    std::vector<std::map<EntryKey, std::size_t>> entry_index;

    for (const auto& rec : panel) {
        const double dt = rec.t_cur - rec.t_prev;
        std::vector<Vector> left(nt);
        GroupKey key;
        key.push_back(dt);
        for (int t = 0; t < nt; ++t) {
            left[t] = layout.row_values(t, rec.t_prev, rec.covariates);
            for (int i = 0; i < left[t].size(); ++i) key.push_back(left[t][i]);
        }
        auto [git, inserted] = group_index.try_emplace(key, groups_.size());
        if (inserted) {
            Group g;
            g.dt = dt;
            g.t_left = rec.t_prev;
            g.left_rows = std::move(left);
            g.covs = rec.covariates;
            groups_.push_back(std::move(g));
            entry_index.emplace_back();
        }
        Group& g = groups_[git->second];
        auto& entries = entry_index[git->second];

        const bool exact = rec.kind == ObsKind::ExactLiving || rec.kind == ObsKind::ExactDeath;
        std::vector<Vector> event_rows;
        std::vector<double> event_key;
        if (exact) {
            event_rows.resize(nt);
            for (int t = 0; t < nt; ++t) {
                event_rows[t] = layout.row_values(t, rec.t_cur, rec.covariates);
                for (int i = 0; i < event_rows[t].size(); ++i) event_key.push_back(event_rows[t][i]);
            }
        }
        EntryKey ekey{static_cast<int>(rec.kind), rec.z_prev,
                      rec.kind == ObsKind::CensoredState ? -1 : rec.z_cur, rec.state_set, event_key};
        auto [eit, enew] = entries.try_emplace(ekey, g.entries.size());
        if (enew) {
            Entry e;
            e.kind = rec.kind;
            e.z_prev = rec.z_prev;
            e.z_cur = rec.z_cur;
            e.state_set = rec.state_set;
            e.event_rows = std::move(event_rows);
            e.t_event = rec.t_cur;
            e.count = 0;
            e.subject = rec.subject;
            g.entries.push_back(std::move(e));
        }
        g.entries[eit->second].count += 1;
    }

    // canonical order: groups by key, entries by sub-key, so the fixed-order
    // reduction does not depend on the panel ordering
    std::vector<Group> sorted;
    sorted.reserve(groups_.size());
    for (const auto& [key, idx] : group_index) {
        Group g = std::move(groups_[idx]);
        std::vector<Entry> ents;
        ents.reserve(g.entries.size());
        for (const auto& [ekey, eidx] : entry_index[idx]) ents.push_back(std::move(g.entries[eidx]));
        g.entries = std::move(ents);
        sorted.push_back(std::move(g));
    }
    groups_ = std::move(sorted);
}

int LikelihoodEvaluator::W() const { return layout_->W(); }

namespace {

// dense product-rule bundle over a refined piecewise-constant grid
PBundle product_bundle(const std::vector<PBundle>& pieces) {
    const int n = static_cast<int>(pieces.size());
    const int W = pieces[0].W;
    const int C = static_cast<int>(pieces[0].P.rows());
    // mid[i][j] = P_i ... P_{j-1}, empty product = I
    std::vector<std::vector<Matrix>> mid(n + 1, std::vector<Matrix>(n + 1));
    for (int i = 0; i <= n; ++i) {
        mid[i][i] = Matrix::Identity(C, C);
        for (int j = i + 1; j <= n; ++j) mid[i][j] = mid[i][j - 1] * pieces[j - 1].P;
    }
    PBundle out;
    out.W = W;
    out.P = mid[0][n];
    out.dP.assign(W, Matrix::Zero(C, C));
    for (int w = 0; w < W; ++w)
        for (int i = 0; i < n; ++i) out.dP[w] += mid[0][i] * pieces[i].dP[w] * mid[i + 1][n];
    out.d2P.assign(static_cast<std::size_t>(W) * (W + 1) / 2, Matrix());
    for (int w = 0; w < W; ++w)
        for (int wp = w; wp < W; ++wp) {
            Matrix acc = Matrix::Zero(C, C);
            for (int i = 0; i < n; ++i) acc += mid[0][i] * pieces[i].d2(w, wp) * mid[i + 1][n];
            for (int i = 0; i < n; ++i)
                for (int j = i + 1; j < n; ++j) {
                    acc += mid[0][i] * pieces[i].dP[w] * mid[i + 1][j] * pieces[j].dP[wp] * mid[j + 1][n];
                    acc += mid[0][i] * pieces[i].dP[wp] * mid[i + 1][j] * pieces[j].dP[w] * mid[j + 1][n];
                }
            out.d2(w, wp) = acc;
        }
    return out;
}

// embeds q_b * x_b of one transition block into a dense W-vector
Vector embed_block(int W, const QBundle::PerTransition& tr, double scale) {
    Vector v = Vector::Zero(W);
    const auto& pat = *tr.index;
    for (std::size_t i = 0; i < pat.size(); ++i) v[pat[i]] += scale * tr.x[static_cast<int>(i)];
    return v;
}

// rank-structured symmetric accumulation: out += coef * embedded(x_b x_b')
void add_block_outer(Matrix& out, int W, const QBundle::PerTransition& tr, double coef) {
    (void)W;
    const auto& pat = *tr.index;
    for (std::size_t i = 0; i < pat.size(); ++i) {
        const double ci = coef * tr.x[static_cast<int>(i)];
        for (std::size_t j = 0; j < pat.size(); ++j)
            out(pat[i], pat[j]) += ci * tr.x[static_cast<int>(j)];
    }
}

}  // namespace

void LikelihoodEvaluator::accumulate_group(const Group& g, const Vector& theta,
                                           const LikelihoodOptions& opts, double& ll, Vector& grad,
                                           Matrix& hess, std::array<int, 4>& counts, int& floored,
                                           double& max_q) const {
    const int W = layout_->W();
    const int nt = layout_->n_transitions();

    auto consume = [&](const Entry& e, double L, const Vector& dL, const Matrix* d2L) {
        counts[static_cast<int>(e.kind)] += e.count;
        const double n = e.count;
        if (!std::isfinite(L) || L < 0.0) degenerate(e.subject, g.t_left, g.t_left + g.dt, L);
        if (L < kFloor) {
            // floored: the contribution is treated as locally flat so the
            // trust region can retreat instead of seeing -inf
            ll += n * std::log(kFloor);
            floored += e.count;
            return;
        }
        ll += n * std::log(L);
        grad += (n / L) * dL;
        const double c2 = n / (L * L);
        for (int i = 0; i < W; ++i)
            for (int j = i; j < W; ++j) hess(i, j) -= c2 * dL[i] * dL[j];
        if (d2L != nullptr) {
            const double c1 = n / L;
            for (int i = 0; i < W; ++i)
                for (int j = i; j < W; ++j) hess(i, j) += c1 * (*d2L)(i, j);
        }
    };

    QBundle qb = assemble_Q(*layout_, theta, g.left_rows, g.dt);
    max_q = std::max(max_q, qb.max_intensity());

    bool need_p = false;
    for (const auto& e : g.entries) need_p = need_p || e.kind != ObsKind::ExactLiving;

    auto event_bundle = [&](const Entry& e) {
        QBundle qe = assemble_Q(*layout_, theta, e.event_rows, 0.0);
        max_q = std::max(max_q, qe.max_intensity());
        return qe;
    };

    auto dense_entry = [&](const Entry& e, const PBundle& pb) {
        ObservationRecord rec;
        rec.subject = e.subject;
        rec.t_prev = g.t_left;
        rec.t_cur = e.kind == ObsKind::ExactLiving || e.kind == ObsKind::ExactDeath ? e.t_event
                                                                                    : g.t_left + g.dt;
        rec.z_prev = e.z_prev;
        rec.z_cur = e.z_cur;
        rec.kind = e.kind;
        rec.state_set = e.state_set;
        QBundle qe;
        const bool exact = e.kind == ObsKind::ExactLiving || e.kind == ObsKind::ExactDeath;
        if (exact) qe = event_bundle(e);
        Contribution c = contribution(rec, pb, qb, exact ? &qe : nullptr);
        consume(e, c.L, c.dL, opts.approx_hessian ? nullptr : &c.d2L);
    };

    if (opts.grid_refine > 0) {
        const int npieces = opts.grid_refine + 1;
        const double delta = g.dt / npieces;
        std::vector<QBundle> qbs(npieces);
        for (int j = 0; j < npieces; ++j) {
            if (j == 0) {
                qbs[0] = assemble_Q(*layout_, theta, g.left_rows, delta);
            } else {
                std::vector<Vector> rows(nt);
                for (int t = 0; t < nt; ++t)
                    rows[t] = layout_->row_values(t, g.t_left + j * delta, g.covs);
                qbs[j] = assemble_Q(*layout_, theta, rows, delta);
            }
            max_q = std::max(max_q, qbs[j].max_intensity());
        }
        PBundle pb_total;
        if (need_p) {
            std::vector<PBundle> pieces(npieces);
            for (int j = 0; j < npieces; ++j) pieces[j] = pbundle(qbs[j]);
            pb_total = product_bundle(pieces);
        }
        for (const auto& e : g.entries) {
            if (e.kind != ObsKind::ExactLiving) {
                dense_entry(e, pb_total);
                continue;
            }
            // survival integral becomes the sum over sub-pieces
            const int r = e.z_prev, s = e.z_cur;
            QBundle qe = event_bundle(e);
            double I = 0.0;
            Vector dI = Vector::Zero(W);
            Matrix d2I = Matrix::Zero(W, W);
            for (int j = 0; j < npieces; ++j) {
                I += qbs[j].Q(r, r) * delta;
                for (int b = 0; b < static_cast<int>(qbs[j].trans.size()); ++b) {
                    const auto& tr = qbs[j].trans[b];
                    if (tr.key.from != r) continue;
                    dI -= embed_block(W, tr, tr.q * delta);
                    add_block_outer(d2I, W, tr, -tr.q * delta);
                }
            }
            const double eI = std::exp(I);
            int be = -1;
            for (int b = 0; b < static_cast<int>(qe.trans.size()); ++b)
                if (qe.trans[b].key.from == r && qe.trans[b].key.to == s) be = b;
            const double qev = qe.trans[be].q;
            const Vector ve = embed_block(W, qe.trans[be], qev);
            const double L = eI * qev;
            const Vector dL = eI * (ve + qev * dI);
            Matrix d2L;
            if (!opts.approx_hessian) {
                d2L = Matrix::Zero(W, W);
                add_block_outer(d2L, W, qe.trans[be], qev);
                d2L += ve * dI.transpose() + dI * ve.transpose() +
                       qev * (dI * dI.transpose() + d2I);
                d2L *= eI;
            }
            consume(e, L, dL, opts.approx_hessian ? nullptr : &d2L);
        }
        return;
    }

    FactoredPBundle fp;
    if (need_p) {
        fp = factored_pbundle(qb);
        if (fp.fallback) {
            for (const auto& e : g.entries) dense_entry(e, *fp.dense);
            return;
        }
    }

    const int nb = static_cast<int>(qb.trans.size());
    const int C = static_cast<int>(qb.Q.rows());

    // embedded per-block gradient directions of Q
    std::vector<Vector> wb(nb);
    for (int b = 0; b < nb; ++b) wb[b] = embed_block(W, qb.trans[b], qb.trans[b].q);

    for (const auto& e : g.entries) {
        if (e.kind == ObsKind::ExactLiving) {
            const int r = e.z_prev, s = e.z_cur;
            QBundle qe = event_bundle(e);
            const double I = qb.Q(r, r) * g.dt;
            const double eI = std::exp(I);
            int be = -1;
            for (int b = 0; b < static_cast<int>(qe.trans.size()); ++b)
                if (qe.trans[b].key.from == r && qe.trans[b].key.to == s) be = b;
            const double qev = qe.trans[be].q;
            const Vector ve = embed_block(W, qe.trans[be], qev);

            Vector dI = Vector::Zero(W);
            for (int b = 0; b < nb; ++b)
                if (qb.trans[b].key.from == r) dI -= g.dt * wb[b];
            const double L = eI * qev;
            const Vector dL = eI * (ve + qev * dI);
            Matrix d2L;
            if (!opts.approx_hessian) {
                d2L = Matrix::Zero(W, W);
                add_block_outer(d2L, W, qe.trans[be], qev);  // d2qe
                for (int b = 0; b < nb; ++b)                 // qe * d2I
                    if (qb.trans[b].key.from == r) add_block_outer(d2L, W, qb.trans[b], -qev * qb.trans[b].q * g.dt);
                d2L += ve * dI.transpose() + dI * ve.transpose() + qev * (dI * dI.transpose());
                d2L *= eI;
            }
            consume(e, L, dL, opts.approx_hessian ? nullptr : &d2L);
            continue;
        }

        // P-dependent kinds: weighted sum over destination columns
        const int r = e.z_prev;
        Vector v = Vector::Zero(C);
        QBundle qe;
        bool have_event = false;
        if (e.kind == ObsKind::IntervalCensored) {
            v[e.z_cur] = 1.0;
        } else if (e.kind == ObsKind::CensoredState) {
            for (int c : e.state_set) v[c] = 1.0;
        } else {
            qe = event_bundle(e);
            have_event = true;
            for (int c = 0; c < C; ++c)
                if (c != e.z_cur) v[c] = qe.Q(c, e.z_cur);
        }

        double L = fp.P.row(r).dot(v);
        Vector t1sel(nb);
        for (int b = 0; b < nb; ++b) t1sel[b] = fp.T1[b].row(r).dot(v);
        Matrix t2sel(nb, nb);
        for (int b1 = 0; b1 < nb; ++b1)
            for (int b2 = b1; b2 < nb; ++b2) {
                const double val = fp.T2[b1][b2].row(r).dot(v) + fp.T2[b2][b1].row(r).dot(v);
                t2sel(b1, b2) = val;
                t2sel(b2, b1) = val;
            }

        Vector dL = Vector::Zero(W);
        for (int b = 0; b < nb; ++b) dL += t1sel[b] * wb[b];

        std::vector<int> death_blocks;
        std::vector<Vector> ve_list;
        if (have_event) {
            for (int b = 0; b < static_cast<int>(qe.trans.size()); ++b) {
                const auto& key = qe.trans[b].key;
                if (key.to == e.z_cur && key.from != e.z_cur) {
                    death_blocks.push_back(b);
                    ve_list.push_back(embed_block(W, qe.trans[b], qe.trans[b].q));
                    dL += fp.P(r, key.from) * ve_list.back();
                }
            }
        }

        Matrix d2L;
        if (!opts.approx_hessian) {
            d2L = Matrix::Zero(W, W);
            for (int b = 0; b < nb; ++b) add_block_outer(d2L, W, qb.trans[b], qb.trans[b].q * t1sel[b]);
            for (int b1 = 0; b1 < nb; ++b1)
                for (int b2 = 0; b2 < nb; ++b2)
                    d2L += t2sel(b1, b2) * (wb[b1] * wb[b2].transpose());
            if (have_event) {
                for (std::size_t k = 0; k < death_blocks.size(); ++k) {
                    const int b_event = death_blocks[k];
                    const int from = qe.trans[b_event].key.from;
                    const Vector& ve = ve_list[k];
                    Vector dPcol = Vector::Zero(W);  // dP_w(r, from)
                    for (int b = 0; b < nb; ++b) dPcol += fp.T1[b](r, from) * wb[b];
                    d2L += dPcol * ve.transpose() + ve * dPcol.transpose();
                    add_block_outer(d2L, W, qe.trans[b_event], fp.P(r, from) * qe.trans[b_event].q);
                }
            }
        }
        consume(e, L, dL, opts.approx_hessian ? nullptr : &d2L);
    }
}

LikelihoodResult LikelihoodEvaluator::eval(const Vector& theta, const LikelihoodOptions& opts) const {
    const int W = layout_->W();
    const int n_groups = static_cast<int>(groups_.size());
    constexpr int kBlock = 4;
    const int n_blocks = (n_groups + kBlock - 1) / kBlock;

    struct Partial {
        double ll = 0.0;
        Vector grad;
        Matrix hess;
        std::array<int, 4> counts{};
        int floored = 0;
        double max_q = 0.0;
    };
    std::vector<Partial> partials(std::max(1, n_blocks));

    parallel_for(
        n_blocks,
        [&](int blk) {
            Partial& p = partials[blk];
            p.grad = Vector::Zero(W);
            p.hess = Matrix::Zero(W, W);
            const int lo = blk * kBlock;
            const int hi = std::min(n_groups, lo + kBlock);
            for (int gi = lo; gi < hi; ++gi)
                accumulate_group(groups_[gi], theta, opts, p.ll, p.grad, p.hess, p.counts, p.floored,
                                 p.max_q);
        },
        opts.threads);

    LikelihoodResult out;
    out.grad = Vector::Zero(W);
    out.hess = Matrix::Zero(W, W);
    if (n_blocks > 0) {
        for (const auto& p : partials) {
            out.ll += p.ll;
            out.grad += p.grad;
            out.hess += p.hess;
            for (int k = 0; k < 4; ++k) out.kind_counts[k] += p.counts[k];
            out.floored += p.floored;
            out.max_intensity = std::max(out.max_intensity, p.max_q);
        }
    }
    for (int i = 0; i < W; ++i)
        for (int j = i + 1; j < W; ++j) out.hess(j, i) = out.hess(i, j);
    return out;
}

PenalizedEval penalized(const Vector& theta, const Matrix& S, const LikelihoodResult& lik) {
    if (S.rows() != theta.size() || lik.grad.size() != theta.size())
        fail(ErrorKind::Config, "dimension-mismatch", "penalty and parameter dimensions disagree");
    PenalizedEval out;
    const Vector St = S * theta;
    out.lp = lik.ll - 0.5 * theta.dot(St);
    out.gp = lik.grad - St;
    out.Hp = lik.hess - S;
    return out;
}

}  // namespace msms
