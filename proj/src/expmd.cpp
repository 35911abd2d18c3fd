#include "msmspline/expmd.hpp"

#include <Eigen/Eigenvalues>
#include <cmath>

#include "msmspline/error.hpp"

namespace msms {

double coincidence_tol(const CVector& gamma) {
    double m = 0.0;
    for (int i = 0; i < gamma.size(); ++i) m = std::max(m, std::abs(gamma[i]));
    return 1e-7 * (1.0 + m);
}

EigenSystem eigendecompose(const Matrix& Q) {
    EigenSystem eig;
    Eigen::ComplexEigenSolver<CMatrix> solver(Q.cast<Complex>(), /*computeEigenvectors=*/true);
    if (solver.info() != Eigen::Success)
        fail(ErrorKind::Numeric, "near-defective", "eigendecomposition failed; use the series fallback");
    eig.A = solver.eigenvectors();
    eig.gamma = solver.eigenvalues();

    Eigen::PartialPivLU<CMatrix> lu(eig.A);
    eig.Ainv = lu.inverse();
    const double norm_A = eig.A.cwiseAbs().rowwise().sum().maxCoeff();
    const double norm_Ainv = eig.Ainv.cwiseAbs().rowwise().sum().maxCoeff();
    eig.cond = norm_A * norm_Ainv;
    eig.tau = coincidence_tol(eig.gamma);

    if (!(eig.cond < 1e10))
        fail(ErrorKind::Numeric, "near-defective",
             "eigenvector condition " + std::to_string(eig.cond) + " exceeds 1e10; use the series fallback");

    const double resid =
        (eig.A * eig.gamma.asDiagonal() * eig.Ainv - Q.cast<Complex>()).cwiseAbs().maxCoeff();
    const double scale = 1.0 + Q.cwiseAbs().rowwise().sum().maxCoeff();
    if (!(resid <= 1e-8 * scale))
        fail(ErrorKind::Numeric, "near-defective",
             "eigendecomposition residual " + std::to_string(resid) + " too large; use the series fallback");
    return eig;
}

// complex expm1, stable near the origin
static Complex cexpm1(Complex z) {
    const double x = z.real(), y = z.imag();
    const double s = std::sin(0.5 * y);
    return Complex(std::expm1(x) * std::cos(y) - 2.0 * s * s, std::exp(x) * std::sin(y));
}

Complex exp_dd1(Complex a, Complex b, double dt, double tau) {
    if (std::abs(a - b) <= tau) {
        const Complex mid = 0.5 * (a + b);
        return dt * std::exp(mid * dt);
    }
    if (a.real() < b.real()) std::swap(a, b);  // exp(b*dt) carries the small factor
    return std::exp(b * dt) * cexpm1((a - b) * dt) / (a - b);
}

int exp_dd2_case(Complex a, Complex b, Complex c, double tau) {
    const bool ab = std::abs(a - b) <= tau;
    const bool bc = std::abs(b - c) <= tau;
    const bool ac = std::abs(a - c) <= tau;
    if ((ab && bc) || (ab && ac) || (bc && ac)) return 5;
    if (ab) return 2;
    if (bc) return 3;
    if (ac) return 4;
    return 1;
}

Complex exp_dd2(Complex a, Complex b, Complex c, double dt, double tau) {
    switch (exp_dd2_case(a, b, c, tau)) {
        case 5: {
            const Complex mid = (a + b + c) / 3.0;
            return 0.5 * dt * dt * std::exp(mid * dt);
        }
        case 2: {  // a = b: (dt e^{a dt} - dd1(a, c)) / (a - c)
            const Complex m = 0.5 * (a + b);
            return (dt * std::exp(m * dt) - exp_dd1(m, c, dt, tau)) / (m - c);
        }
        case 3: {  // b = c: (dd1(a, b) - dt e^{b dt}) / (a - b)
            const Complex m = 0.5 * (b + c);
            return (exp_dd1(a, m, dt, tau) - dt * std::exp(m * dt)) / (a - m);
        }
        case 4: {  // a = c: (dt e^{a dt} - dd1(a, b)) / (a - b)
            const Complex m = 0.5 * (a + c);
            return (dt * std::exp(m * dt) - exp_dd1(m, b, dt, tau)) / (m - b);
        }
        default:
            return (exp_dd1(a, b, dt, tau) - exp_dd1(b, c, dt, tau)) / (a - c);
    }
}

CMatrix emat(const CVector& gamma, double dt, double tau) {
    const int C = static_cast<int>(gamma.size());
    CMatrix E(C, C);
    for (int l = 0; l < C; ++l)
        for (int m = 0; m < C; ++m) E(l, m) = exp_dd1(gamma[l], gamma[m], dt, tau);
    return E;
}

int PBundle::packed_index(int w, int wp, int W) {
    if (w > wp) std::swap(w, wp);
    return w * W - w * (w - 1) / 2 + (wp - w);
}

const Matrix& PBundle::d2(int w, int wp) const { return d2P[packed_index(w, wp, W)]; }
Matrix& PBundle::d2(int w, int wp) { return d2P[packed_index(w, wp, W)]; }

// imaginary parts must wash out once A ... A^{-1} is applied
static Matrix real_checked(const CMatrix& M, const char* what) {
    const double imag = M.imag().cwiseAbs().maxCoeff();
    if (!(imag <= 1e-8))
        fail(ErrorKind::Numeric, "complex-residual",
             std::string(what) + ": imaginary residual " + std::to_string(imag) +
                 " exceeds 1e-8 (ill-conditioned eigensystem)");
    return M.real();
}

static Matrix p_from_eig(const EigenSystem& eig, double dt) {
    const int C = static_cast<int>(eig.gamma.size());
    CVector egdt(C);
    for (int i = 0; i < C; ++i) egdt[i] = std::exp(eig.gamma[i] * dt);
    Matrix P = real_checked(eig.A * egdt.asDiagonal() * eig.Ainv, "P");
    for (int r = 0; r < C; ++r)
        for (int s = 0; s < C; ++s) P(r, s) = std::min(1.0, std::max(0.0, P(r, s)));
    return P;
}

PBundle pbundle(const EigenSystem& eig, const std::vector<Matrix>& dQ, const D2Fn& d2Q, double dt) {
    const int C = static_cast<int>(eig.gamma.size());
    const int W = static_cast<int>(dQ.size());
    PBundle pb;
    pb.W = W;
    pb.P = p_from_eig(eig, dt);

    const CMatrix E = emat(eig.gamma, dt, eig.tau);

    // second divided differences over all eigenvalue triples
    std::vector<Complex> dd2(static_cast<std::size_t>(C) * C * C);
    for (int l = 0; l < C; ++l)
        for (int y = 0; y < C; ++y)
            for (int m = 0; m < C; ++m)
                dd2[(static_cast<std::size_t>(l) * C + y) * C + m] =
                    exp_dd2(eig.gamma[l], eig.gamma[y], eig.gamma[m], dt, eig.tau);
    auto W2 = [&](int l, int y, int m) { return dd2[(static_cast<std::size_t>(l) * C + y) * C + m]; };

    std::vector<CMatrix> G(W);
    std::vector<bool> zero(W, false);
    pb.dP.resize(W);
    for (int w = 0; w < W; ++w) {
        zero[w] = dQ[w].size() == 0 || dQ[w].cwiseAbs().maxCoeff() == 0.0;
        if (zero[w]) {
            pb.dP[w] = Matrix::Zero(C, C);
            continue;
        }
        G[w] = eig.Ainv * dQ[w].cast<Complex>() * eig.A;
        pb.dP[w] = real_checked(eig.A * G[w].cwiseProduct(E) * eig.Ainv, "dP");
    }

    pb.d2P.assign(static_cast<std::size_t>(W) * (W + 1) / 2, Matrix());
    CMatrix S(C, C), Udot(C, C);
    for (int w = 0; w < W; ++w) {
        for (int wp = w; wp < W; ++wp) {
            Matrix& out = pb.d2(w, wp);
            if (zero[w] || zero[wp]) {
                const Matrix* d2q = (zero[w] && zero[wp]) ? nullptr : d2Q(w, wp);
                if (d2q && d2q->size() != 0 && d2q->cwiseAbs().maxCoeff() != 0.0) {
                    CMatrix Gc = eig.Ainv * d2q->cast<Complex>() * eig.A;
                    out = real_checked(eig.A * Gc.cwiseProduct(E) * eig.Ainv, "d2P");
                } else {
                    out = Matrix::Zero(C, C);
                }
                continue;
            }
            S.setZero();
            const Matrix* d2q = d2Q(w, wp);
            if (d2q && d2q->size() != 0) {
                CMatrix Gc = eig.Ainv * d2q->cast<Complex>() * eig.A;
                S = Gc.cwiseProduct(E);
            }
            // U-dot terms in both parameter orders
            for (int l = 0; l < C; ++l) {
                for (int m = 0; m < C; ++m) {
                    Complex acc(0.0, 0.0);
                    for (int y = 0; y < C; ++y)
                        acc += (G[w](l, y) * G[wp](y, m) + G[wp](l, y) * G[w](y, m)) * W2(l, y, m);
                    Udot(l, m) = acc;
                }
            }
            S += Udot;
            out = real_checked(eig.A * S * eig.Ainv, "d2P");
        }
    }
    return pb;
}

Matrix series_expm(const Matrix& M) {
    const double norm = M.cwiseAbs().colwise().sum().maxCoeff();
    int squarings = 0;
    if (norm > 0.5) squarings = static_cast<int>(std::ceil(std::log2(norm / 0.5)));
    const Matrix A = M / std::pow(2.0, squarings);

    const int C = static_cast<int>(M.rows());
    Matrix out = Matrix::Identity(C, C);
    Matrix term = Matrix::Identity(C, C);
    for (int k = 1; k <= 60; ++k) {
        term = (term * A / static_cast<double>(k)).eval();
        out += term;
        if (term.cwiseAbs().maxCoeff() < 1e-18) break;
    }
    for (int s = 0; s < squarings; ++s) out = (out * out).eval();
    return out;
}

Matrix series_expm_oracle(const Matrix& Q, double dt) { return series_expm(dt * Q); }

PBundle pbundle_series_fd(const QBundle& qb) {
    const int C = static_cast<int>(qb.Q.rows());
    const int W = qb.W;
    PBundle pb;
    pb.W = W;
    pb.fallback = true;
    pb.P = series_expm(qb.dt * qb.Q);

    auto pexp = [&](const Matrix& Q) { return series_expm(qb.dt * Q); };
    const double h = 1e-5;

    std::vector<Matrix> dq(W);
    std::vector<bool> zero(W, true);
    for (int w = 0; w < W; ++w) {
        dq[w] = qb.dQ(w);
        zero[w] = dq[w].cwiseAbs().maxCoeff() == 0.0;
    }

    pb.dP.resize(W);
    for (int w = 0; w < W; ++w)
        pb.dP[w] = zero[w] ? Matrix::Zero(C, C)
                           : Matrix(((pexp(qb.Q + h * dq[w]) - pexp(qb.Q - h * dq[w])) / (2.0 * h)));

    pb.d2P.assign(static_cast<std::size_t>(W) * (W + 1) / 2, Matrix());
    for (int w = 0; w < W; ++w) {
        for (int wp = w; wp < W; ++wp) {
            Matrix& out = pb.d2(w, wp);
            out = Matrix::Zero(C, C);
            if (!zero[w] && !zero[wp]) {
                // bilinear term of the second directional derivative
                out += (pexp(qb.Q + h * dq[w] + h * dq[wp]) - pexp(qb.Q + h * dq[w] - h * dq[wp]) -
                        pexp(qb.Q - h * dq[w] + h * dq[wp]) + pexp(qb.Q - h * dq[w] - h * dq[wp])) /
                       (4.0 * h * h);
            }
            Matrix d2q = qb.d2Q(w, wp);
            if (d2q.cwiseAbs().maxCoeff() != 0.0) {
                // first-order term through the curvature of Q itself
                out += (pexp(qb.Q + h * d2q) - pexp(qb.Q - h * d2q)) / (2.0 * h);
            }
        }
    }
    return pb;
}

static bool wants_series_fallback(const Error& e) {
    return e.code() == "near-defective" || e.code() == "complex-residual";
}

PBundle pbundle(const QBundle& qb) {
    EigenSystem eig;
    try {
        eig = eigendecompose(qb.Q);
    } catch (const Error& e) {
        if (wants_series_fallback(e)) return pbundle_series_fd(qb);
        throw;
    }
    const int W = qb.W;
    std::vector<Matrix> dq(W);
    for (int w = 0; w < W; ++w) dq[w] = qb.dQ(w);
    std::vector<Matrix> d2q_store;
    d2q_store.reserve(static_cast<std::size_t>(W) * (W + 1) / 2);
    std::vector<const Matrix*> d2q_ptr(static_cast<std::size_t>(W) * (W + 1) / 2, nullptr);
    for (int w = 0; w < W; ++w)
        for (int wp = w; wp < W; ++wp) {
            Matrix m = qb.d2Q(w, wp);
            if (m.cwiseAbs().maxCoeff() != 0.0) {
                d2q_store.push_back(std::move(m));
                d2q_ptr[PBundle::packed_index(w, wp, W)] = &d2q_store.back();
            }
        }
    auto d2fn = [&](int w, int wp) { return d2q_ptr[PBundle::packed_index(w, wp, W)]; };
    try {
        return pbundle(eig, dq, d2fn, qb.dt);
    } catch (const Error& e) {
        if (wants_series_fallback(e)) return pbundle_series_fd(qb);
        throw;
    }
}

static FactoredPBundle factored_fallback(const QBundle& qb) {
    FactoredPBundle fp;
    fp.fallback = true;
    fp.dense = std::make_shared<PBundle>(pbundle_series_fd(qb));
    fp.P = fp.dense->P;
    return fp;
}

static FactoredPBundle factored_pbundle_eig(const QBundle& qb, const EigenSystem& eig) {
    FactoredPBundle fp;
    const int C = static_cast<int>(eig.gamma.size());
    const int nb = static_cast<int>(qb.trans.size());
    const double dt = qb.dt;
    fp.P = p_from_eig(eig, dt);

    const CMatrix E = emat(eig.gamma, dt, eig.tau);
    std::vector<Complex> dd2(static_cast<std::size_t>(C) * C * C);
    for (int l = 0; l < C; ++l)
        for (int y = 0; y < C; ++y)
            for (int m = 0; m < C; ++m)
                dd2[(static_cast<std::size_t>(l) * C + y) * C + m] =
                    exp_dd2(eig.gamma[l], eig.gamma[y], eig.gamma[m], dt, eig.tau);

    // u_b: column of A^{-1} for the origin row; s_b: eigenvector row difference
    std::vector<CVector> u(nb), s(nb);
    for (int b = 0; b < nb; ++b) {
        const auto& key = qb.trans[b].key;
        u[b] = eig.Ainv.col(key.from);
        s[b] = (eig.A.row(key.to) - eig.A.row(key.from)).transpose();
    }

    fp.T1.resize(nb);
    CMatrix M(C, C);
    for (int b = 0; b < nb; ++b) {
        for (int l = 0; l < C; ++l)
            for (int m = 0; m < C; ++m) M(l, m) = u[b][l] * s[b][m] * E(l, m);
        fp.T1[b] = real_checked(eig.A * M * eig.Ainv, "dP");
    }

    fp.T2.assign(nb, std::vector<Matrix>(nb));
    CMatrix K(C, C);
    for (int b1 = 0; b1 < nb; ++b1) {
        for (int b2 = 0; b2 < nb; ++b2) {
            for (int l = 0; l < C; ++l) {
                for (int m = 0; m < C; ++m) {
                    Complex acc(0.0, 0.0);
                    for (int y = 0; y < C; ++y)
                        acc += s[b1][y] * u[b2][y] * dd2[(static_cast<std::size_t>(l) * C + y) * C + m];
                    K(l, m) = u[b1][l] * s[b2][m] * acc;
                }
            }
            fp.T2[b1][b2] = real_checked(eig.A * K * eig.Ainv, "d2P");
        }
    }
    return fp;
}

FactoredPBundle factored_pbundle(const QBundle& qb) {
    try {
        return factored_pbundle_eig(qb, eigendecompose(qb.Q));
    } catch (const Error& e) {
        if (wants_series_fallback(e)) return factored_fallback(qb);
        throw;
    }
}

}  // namespace msms
