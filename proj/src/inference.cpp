#include "msmspline/inference.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>

#include "msmspline/error.hpp"
#include "msmspline/expmd.hpp"
#include "msmspline/parallel.hpp"
#include "msmspline/rng.hpp"

namespace msms {

Matrix FitResult::covariance() const {
    Eigen::LLT<Matrix> llt(-Hp);
    if (llt.info() != Eigen::Success)
        fail(ErrorKind::Numeric, "non-positive-definite",
             "-Hp is not positive definite; the fit has not identified all parameters "
             "(a nearest-PD repair of -Hp, e.g. eigenvalue clamping, may help)");
    return llt.solve(Matrix::Identity(Hp.rows(), Hp.cols()));
}

EdfInfo edf_aic_bic(const Matrix& H, const Matrix& Hp, double ll, int n_obs,
                    const PenaltyLayout* penalties) {
    const int W = static_cast<int>(H.rows());
    Eigen::SelfAdjointEigenSolver<Matrix> es(-H);
    Vector ev = es.eigenvalues();
    for (int i = 0; i < W; ++i) ev[i] = std::max(ev[i], 1e-8);
    const Matrix root = es.eigenvectors() * ev.cwiseSqrt().asDiagonal() * es.eigenvectors().transpose();

    Eigen::LDLT<Matrix> ldlt(-Hp);
    if (ldlt.info() != Eigen::Success || !ldlt.isPositive())
        fail(ErrorKind::Numeric, "non-identifiable", "-Hp singular; effective degrees of freedom undefined");
    const Matrix X = ldlt.solve(root);
    const Matrix O = root * X;

    EdfInfo out;
    out.edf = O.trace();
    out.aic = -2.0 * ll + 2.0 * out.edf;
    out.bic = -2.0 * ll + std::log(static_cast<double>(n_obs)) * out.edf;
    if (penalties != nullptr) {
        out.block_edf = Vector::Zero(penalties->n_lambda());
        for (int k = 0; k < penalties->n_lambda(); ++k) {
            const auto& b = penalties->blocks[k];
            out.block_edf[k] = O.diagonal().segment(b.offset, b.dim).sum();
        }
    }
    return out;
}

double quantile_type7(std::vector<double> values, double p) {
    std::sort(values.begin(), values.end());
    const double h = (static_cast<double>(values.size()) - 1.0) * p;
    const auto lo = static_cast<std::size_t>(std::floor(h));
    if (lo + 1 >= values.size()) return values.back();
    const double g = h - static_cast<double>(lo);
    return values[lo] * (1.0 - g) + values[lo + 1] * g;
}

namespace {

// Cholesky factor of the posterior covariance; a zero matrix is allowed and
// collapses the band onto the point estimate.
Matrix posterior_root(const FitResult& fit) {
    const Matrix V = fit.covariance();
    Eigen::LLT<Matrix> llt(V);
    if (llt.info() != Eigen::Success) {
        if (V.cwiseAbs().maxCoeff() == 0.0) return Matrix::Zero(V.rows(), V.cols());
        fail(ErrorKind::Numeric, "non-positive-definite",
             "posterior covariance not positive definite; consider a nearest-PD repair");
    }
    return llt.matrixL();
}

Matrix ck_product(const FitResult& fit, const Vector& theta, double t0, double t1, double step,
                  const Profile& profile, std::vector<double>* times, std::vector<Matrix>* substeps) {
    if (!(t1 > t0) || !(step > 0.0))
        fail(ErrorKind::Config, "bad-interval", "need t1 > t0 and a positive step");
    const int C = fit.spec.n_states;
    Matrix P = Matrix::Identity(C, C);
    for (double t = t0; t < t1 - 1e-12; t += step) {
        const double dt = std::min(step, t1 - t);
        QBundle qb = assemble_Q_at(*fit.layout, theta, t, profile, dt);
        Matrix Pj = series_expm(dt * qb.Q);
        if (times) times->push_back(t);
        if (substeps) substeps->push_back(Pj);
        P = (P * Pj).eval();
    }
    return P;
}

}  // namespace

IntervalBand posterior_sim_q(const FitResult& fit, const TransitionKey& key, const Profile& profile,
                             const Vector& grid, int n_sim, double alpha, std::uint64_t seed) {
    if (n_sim < 2) fail(ErrorKind::Config, "bad-nsim", "need at least 2 posterior draws");
    const int t = fit.layout->trans_index(key);
    const auto& pattern = fit.layout->pattern(t);
    const int G = static_cast<int>(grid.size());

    IntervalBand band;
    band.grid = grid;
    band.estimate.resize(G);
    band.lower.resize(G);
    band.upper.resize(G);

    std::vector<Vector> rows(G);
    for (int i = 0; i < G; ++i) rows[i] = fit.layout->row_values(t, grid[i], profile);
    auto q_of = [&](const Vector& theta, int i) {
        double eta = 0.0;
        for (std::size_t k = 0; k < pattern.size(); ++k) eta += rows[i][static_cast<int>(k)] * theta[pattern[k]];
        return std::exp(eta);
    };
    for (int i = 0; i < G; ++i) band.estimate[i] = q_of(fit.theta, i);

    const Matrix root = posterior_root(fit);
    Matrix draws(n_sim, G);
    parallel_for(n_sim, [&](int s) {
        Rng rng = Rng::substream(seed, static_cast<std::uint64_t>(s));
        Vector z(fit.theta.size());
        for (int i = 0; i < z.size(); ++i) z[i] = rng.normal();
        const Vector theta_s = fit.theta + root * z;
        for (int i = 0; i < G; ++i) draws(s, i) = q_of(theta_s, i);
    });

    for (int i = 0; i < G; ++i) {
        std::vector<double> col(draws.col(i).data(), draws.col(i).data() + n_sim);
        band.lower[i] = quantile_type7(col, alpha / 2.0);
        band.upper[i] = quantile_type7(std::move(col), 1.0 - alpha / 2.0);
    }
    return band;
}

PMatrixBand chapman_kolmogorov(const FitResult& fit, double t0, double t1, double step,
                               const Profile& profile, int n_sim, double alpha, std::uint64_t seed) {
    PMatrixBand out;
    out.estimate = ck_product(fit, fit.theta, t0, t1, step, profile, &out.times, &out.substeps);
    const int C = fit.spec.n_states;
    if (n_sim <= 0) return out;

    const Matrix root = posterior_root(fit);
    std::vector<Matrix> sims(n_sim);
    parallel_for(n_sim, [&](int s) {
        Rng rng = Rng::substream(seed, static_cast<std::uint64_t>(s));
        Vector z(fit.theta.size());
        for (int i = 0; i < z.size(); ++i) z[i] = rng.normal();
        const Vector theta_s = fit.theta + root * z;
        sims[s] = ck_product(fit, theta_s, t0, t1, step, profile, nullptr, nullptr);
    });
    out.lower.resize(C, C);
    out.upper.resize(C, C);
    std::vector<double> col(n_sim);
    for (int r = 0; r < C; ++r)
        for (int c = 0; c < C; ++c) {
            for (int s = 0; s < n_sim; ++s) col[s] = sims[s](r, c);
            out.lower(r, c) = quantile_type7(col, alpha / 2.0);
            out.upper(r, c) = quantile_type7(col, 1.0 - alpha / 2.0);
        }
    return out;
}

std::vector<WaldRow> wald_table(const FitResult& fit) {
    std::vector<WaldRow> rows;
    const Matrix V = fit.covariance();
    const auto names = fit.layout->coefficient_names();
    // intercepts and linear terms only; spline coefficients are summarized by edf
    std::vector<bool> is_smooth(fit.theta.size(), false);
    for (const auto& sb : fit.layout->smooths())
        for (int j = 0; j < sb.dim; ++j) is_smooth[sb.offset + j] = true;
    for (int w = 0; w < fit.theta.size(); ++w) {
        if (is_smooth[w]) continue;
        WaldRow row;
        row.name = names[w];
        row.estimate = fit.theta[w];
        row.se = std::sqrt(std::max(0.0, V(w, w)));
        row.z = row.se > 0.0 ? row.estimate / row.se : 0.0;
        rows.push_back(std::move(row));
    }
    return rows;
}

}  // namespace msms
