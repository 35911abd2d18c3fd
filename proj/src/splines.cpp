#include "msmspline/splines.hpp"

#include <algorithm>
#include <cmath>

#include "msmspline/error.hpp"

namespace msms {

KnotVector::KnotVector(std::vector<double> k) : knots(std::move(k)) {
    if (knots.size() < 3) fail(ErrorKind::Config, "insufficient-support", "need at least 3 knots");
    for (std::size_t j = 1; j < knots.size(); ++j)
        if (!(knots[j] > knots[j - 1]))
            fail(ErrorKind::Config, "insufficient-support", "knots must be strictly increasing");
}

// type-7 empirical quantile of sorted values
static double quantile7(const std::vector<double>& x, double p) {
    const double h = (static_cast<double>(x.size()) - 1.0) * p;
    const auto lo = static_cast<std::size_t>(std::floor(h));
    if (lo + 1 >= x.size()) return x.back();
    const double g = h - static_cast<double>(lo);
    return x[lo] * (1.0 - g) + x[lo + 1] * g;
}

KnotVector build_knots(std::vector<double> values, int J, KnotRule rule) {
    if (J < 3) fail(ErrorKind::Config, "insufficient-support", "basis dimension must be at least 3");
    std::sort(values.begin(), values.end());
    std::vector<double> distinct = values;
    distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
    if (static_cast<int>(distinct.size()) < J)
        fail(ErrorKind::Validation, "insufficient-support",
             "fewer distinct covariate values (" + std::to_string(distinct.size()) +
                 ") than requested knots (" + std::to_string(J) + ")");

    const double range = distinct.back() - distinct.front();
    std::vector<double> knots(J);
    if (rule == KnotRule::Even) {
        for (int i = 0; i < J; ++i)
            knots[i] = distinct.front() + range * static_cast<double>(i) / (J - 1);
    } else {
        for (int i = 0; i < J; ++i)
            knots[i] = quantile7(distinct, static_cast<double>(i) / (J - 1));
    }
    // safeguard against coincident placements
    const double eps = 1e-8 * range;
    for (int i = 1; i < J; ++i)
        if (knots[i] <= knots[i - 1]) knots[i] = knots[i - 1] + eps;
    return KnotVector(knots);
}

CubicRegressionSpline::CubicRegressionSpline(KnotVector knots) : knots_(std::move(knots)) {
    const int J = knots_.size();
    const auto& u = knots_.knots;
    Vector h(J - 1);
    for (int j = 0; j + 1 < J; ++j) h[j] = u[j + 1] - u[j];

    // Tridiagonal system B m = D beta for the interior second derivatives m.
    const int ni = J - 2;
    Matrix B = Matrix::Zero(ni, ni);
    Matrix D = Matrix::Zero(ni, J);
    for (int i = 0; i < ni; ++i) {
        B(i, i) = (h[i] + h[i + 1]) / 3.0;
        if (i + 1 < ni) {
            B(i, i + 1) = h[i + 1] / 6.0;
            B(i + 1, i) = h[i + 1] / 6.0;
        }
        D(i, i) = 1.0 / h[i];
        D(i, i + 1) = -1.0 / h[i] - 1.0 / h[i + 1];
        D(i, i + 2) = 1.0 / h[i + 1];
    }
    Eigen::LLT<Matrix> llt(B);
    if (llt.info() != Eigen::Success)
        fail(ErrorKind::Numeric, "spline-system", "tridiagonal spline system not positive definite");
    Matrix F = llt.solve(D);  // ni x J

    curvature_ = Matrix::Zero(J, J);
    curvature_.block(1, 0, ni, J) = F;

    // beta' D' B^{-1} D beta equals the integral of (s'')^2; the piecewise
    // linear second derivative makes the form exact.
    penalty_ = D.transpose() * F;
    penalty_ = ((penalty_ + penalty_.transpose()) / 2.0).eval();

    // boundary slopes (natural end conditions) for linear extrapolation
    d1_left_ = Vector::Zero(J);
    d1_left_[0] = -1.0 / h[0];
    d1_left_[1] = 1.0 / h[0];
    d1_left_ -= (h[0] / 6.0) * curvature_.row(1).transpose();

    d1_right_ = Vector::Zero(J);
    d1_right_[J - 2] = -1.0 / h[J - 2];
    d1_right_[J - 1] = 1.0 / h[J - 2];
    d1_right_ += (h[J - 2] / 6.0) * curvature_.row(J - 2).transpose();
}

Vector CubicRegressionSpline::basis_row(double x, int deriv) const {
    const int J = knots_.size();
    const auto& u = knots_.knots;
    Vector row = Vector::Zero(J);

    if (x < u.front()) {
        if (deriv == 0) {
            row = (x - u.front()) * d1_left_;
            row[0] += 1.0;
        } else if (deriv == 1) {
            row = d1_left_;
        }
        return row;
    }
    if (x > u.back()) {
        if (deriv == 0) {
            row = (x - u.back()) * d1_right_;
            row[J - 1] += 1.0;
        } else if (deriv == 1) {
            row = d1_right_;
        }
        return row;
    }

    auto it = std::upper_bound(u.begin(), u.end(), x);
    int j = static_cast<int>(it - u.begin()) - 1;
    j = std::clamp(j, 0, J - 2);
    const double hj = u[j + 1] - u[j];
    const double dl = x - u[j], dr = u[j + 1] - x;

    if (deriv == 0) {
        row[j] += dr / hj;
        row[j + 1] += dl / hj;
        const double cl = (dr * dr * dr / hj - hj * dr) / 6.0;
        const double cr = (dl * dl * dl / hj - hj * dl) / 6.0;
        row += cl * curvature_.row(j).transpose() + cr * curvature_.row(j + 1).transpose();
    } else if (deriv == 1) {
        row[j] -= 1.0 / hj;
        row[j + 1] += 1.0 / hj;
        const double cl = (-3.0 * dr * dr / hj + hj) / 6.0;
        const double cr = (3.0 * dl * dl / hj - hj) / 6.0;
        row += cl * curvature_.row(j).transpose() + cr * curvature_.row(j + 1).transpose();
    } else if (deriv == 2) {
        row = (dr / hj) * curvature_.row(j).transpose() + (dl / hj) * curvature_.row(j + 1).transpose();
    }
    return row;
}

Vector PenalizedBlock::basis_row(double x, int deriv) const {
    return centering.transpose() * spline.basis_row(x, deriv);
}

PenalizedBlock crs_basis_and_penalty(const KnotVector& knots, const std::vector<double>& sample) {
    CubicRegressionSpline spline(knots);
    const int J = spline.dim();

    Vector c = Vector::Zero(J);
    if (sample.empty()) {
        for (double u : knots.knots) c += spline.basis_row(u);
    } else {
        for (double x : sample) c += spline.basis_row(x);
    }

    // orthonormal basis of the null space of c' via a Householder QR of c
    Eigen::HouseholderQR<Matrix> qr(c);
    Matrix Q = qr.householderQ();
    Matrix Z = Q.rightCols(J - 1);

    Matrix Dc = Z.transpose() * spline.penalty() * Z;
    Dc = ((Dc + Dc.transpose()) / 2.0).eval();
    return PenalizedBlock{std::move(spline), std::move(Z), std::move(Dc)};
}

}  // namespace msms
