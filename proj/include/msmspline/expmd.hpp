#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "msmspline/model.hpp"
#include "msmspline/types.hpp"

namespace msms {

struct EigenSystem {
    CMatrix A;
    CMatrix Ainv;
    CVector gamma;
    double cond = 0.0;  // 1-norm condition of A
    double tau = 0.0;   // eigenvalue-coincidence tolerance
};

double coincidence_tol(const CVector& gamma);

// Complex eigendecomposition of a generator. Throws "near-defective" when the
// eigenvector condition exceeds 1e10 or the reconstruction residual is large;
// callers fall back to the series path.
EigenSystem eigendecompose(const Matrix& Q);

// First divided difference of x -> exp(x*dt) at (a, b); within tau of
// coincidence the limit dt*exp(a*dt) applies.
Complex exp_dd1(Complex a, Complex b, double dt, double tau);

// Second divided difference at (a, b, c), split into the five coincidence
// patterns. Case ids: 1 all distinct, 2 a=b, 3 b=c, 4 a=c, 5 all equal.
int exp_dd2_case(Complex a, Complex b, Complex c, double tau);
Complex exp_dd2(Complex a, Complex b, Complex c, double dt, double tau);

// E[l,m] = (exp(g_l dt) - exp(g_m dt)) / (g_l - g_m), with the confluent limit
// on (near-)coincident pairs.
CMatrix emat(const CVector& gamma, double dt, double tau);

// Dense transition-probability bundle: P plus first and second derivatives
// with respect to every parameter. Second derivatives are stored as the upper
// triangle (w <= w').
struct PBundle {
    Matrix P;
    std::vector<Matrix> dP;
    std::vector<Matrix> d2P;  // packed, index via d2()
    int W = 0;
    bool fallback = false;  // series/finite-difference route was taken

    const Matrix& d2(int w, int wp) const;
    Matrix& d2(int w, int wp);
    static int packed_index(int w, int wp, int W);
};

// d2Q(w, wp) may return nullptr for structurally zero blocks.
using D2Fn = std::function<const Matrix*(int, int)>;

PBundle pbundle(const EigenSystem& eig, const std::vector<Matrix>& dQ, const D2Fn& d2Q, double dt);

// Assembles dQ/d2Q from the bundle and dispatches to the eigendecomposition
// path, or to the series fallback for (near-)defective generators.
PBundle pbundle(const QBundle& qb);

// Series fallback: P by scaling-and-squaring, derivatives by directional
// central differences through the series map.
PBundle pbundle_series_fd(const QBundle& qb);

/**
 * Factored per-interval representation. dQ for a coefficient of transition
 * (r,r') is rank one, so dP_w and d2P_{w w'} are linear/bilinear in per-block
 * base matrices:
 *   dP_w        = sum_b c_{w,b} T1[b]
 *   d2P_{w w'}  = sum_b q_b x_w x_w' T1[b] + sum_{b,b'} c_{w,b} c_{w',b'} (T2[b][b'] + T2[b'][b])
 * with c_{w,b} = q_b x_{w,b}. Evaluating a likelihood contribution then costs
 * O(1) per parameter pair instead of a matrix product.
 */
struct FactoredPBundle {
    Matrix P;
    std::vector<Matrix> T1;               // per transition block
    std::vector<std::vector<Matrix>> T2;  // ordered block pairs
    bool fallback = false;
    std::shared_ptr<PBundle> dense;       // populated on the fallback path
};

FactoredPBundle factored_pbundle(const QBundle& qb);

// Taylor evaluation of exp(M) with scaling and squaring; accurate to ~1e-12
// for ||M||_1 <= 50. Independent of the eigendecomposition path.
Matrix series_expm(const Matrix& M);
Matrix series_expm_oracle(const Matrix& Q, double dt);

}  // namespace msms
