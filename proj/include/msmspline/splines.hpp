#pragma once

#include <vector>

#include "msmspline/types.hpp"

namespace msms {

enum class KnotRule { Quantile, Even };

struct KnotVector {
    std::vector<double> knots;  // strictly increasing, at least 3

    explicit KnotVector(std::vector<double> k);
    int size() const { return static_cast<int>(knots.size()); }
    double front() const { return knots.front(); }
    double back() const { return knots.back(); }
};

// Knot placement over observed covariate values. The quantile rule puts knots
// at probabilities i/(J-1), i = 0..J-1, of the distinct sorted values
// (type-7 interpolation); the even rule partitions [min, max] uniformly.
// Coincident knots are nudged apart by 1e-8 of the data range.
KnotVector build_knots(std::vector<double> values, int J, KnotRule rule);

/**
 * Natural cubic spline in the value-at-knot parameterization: coefficient j is
 * the function value at knot u_j, the second derivative vanishes at both
 * boundary knots, and evaluation outside [u_1, u_J] continues the end pieces
 * linearly. The knot second derivatives solve a tridiagonal system in the
 * coefficients, which also yields the exact integral of the squared second
 * derivative as a quadratic form (the curvature penalty).
 */
class CubicRegressionSpline {
public:
    explicit CubicRegressionSpline(KnotVector knots);

    int dim() const { return knots_.size(); }
    const KnotVector& knots() const { return knots_; }

    // Row b(x) such that s(x) = b(x) . beta; deriv = 1, 2 give the same for
    // s'(x) and s''(x).
    Vector basis_row(double x, int deriv = 0) const;

    // J x J quadratic form: beta' P beta = int (s'')^2 over the knot range.
    const Matrix& penalty() const { return penalty_; }

private:
    KnotVector knots_;
    Matrix curvature_;  // J x J, maps coefficients to second derivatives at the knots
    Matrix penalty_;
    Vector d1_left_, d1_right_;  // boundary slope rows for linear extrapolation
};

// Centered smooth block: the sum-to-zero constraint over the construction
// sample is absorbed into an orthonormal null-space reparameterization,
// dropping one coefficient (J -> J-1).
struct PenalizedBlock {
    CubicRegressionSpline spline;
    Matrix centering;  // J x (J-1), orthonormal columns
    Matrix penalty;    // (J-1) x (J-1), symmetric PSD

    int dim() const { return static_cast<int>(centering.cols()); }
    Vector basis_row(double x, int deriv = 0) const;
};

// sample: covariate values defining the centering constraint. An empty sample
// falls back to the knot locations.
PenalizedBlock crs_basis_and_penalty(const KnotVector& knots, const std::vector<double>& sample);

}  // namespace msms
