#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "msmspline/likelihood.hpp"
#include "msmspline/model.hpp"
#include "msmspline/optimizer.hpp"
#include "msmspline/penalty.hpp"
#include "msmspline/types.hpp"

namespace msms {

struct FitResult {
    ModelSpec spec;
    std::shared_ptr<ParameterLayout> layout;
    PenaltyLayout penalties;

    Vector theta;
    Vector lambda;
    double ll = 0.0;
    double lp = 0.0;
    Matrix H;
    Matrix Hp;
    double edf = 0.0;
    Vector block_edf;  // per smooth term
    double aic = 0.0;
    double bic = 0.0;
    int n_obs = 0;
    int outer_cycles = 0;
    ConvergenceReport report;
    std::vector<std::string> warnings;

    // -Hp^{-1}; throws when the penalized information is not positive definite
    Matrix covariance() const;
};

struct EdfInfo {
    double edf = 0.0;
    double aic = 0.0;
    double bic = 0.0;
    Vector block_edf;
};

// edf = tr(O) with O = sqrt(-H) (-Hp)^{-1} sqrt(-H); negative eigenvalues of
// -H are clamped at 1e-8 before the symmetric square root. block_edf splits
// the diagonal of O over the penalty blocks when a layout is given.
EdfInfo edf_aic_bic(const Matrix& H, const Matrix& Hp, double ll, int n_obs,
                    const PenaltyLayout* penalties = nullptr);

struct IntervalBand {
    Vector grid;
    Vector estimate;
    Vector lower;
    Vector upper;
};

using Profile = std::map<std::string, double>;

// Pointwise posterior-simulation band for the intensity q^{(key)}(t) over a
// time grid at covariate values `profile`.
IntervalBand posterior_sim_q(const FitResult& fit, const TransitionKey& key, const Profile& profile,
                             const Vector& grid, int n_sim, double alpha, std::uint64_t seed);

struct PMatrixBand {
    Matrix estimate;
    Matrix lower;
    Matrix upper;
    std::vector<double> times;     // sub-interval left endpoints
    std::vector<Matrix> substeps;  // per-sub-interval probability matrices
};

// Probability matrix over (t0, t1) as the ordered product of per-sub-interval
// matrix exponentials, intensities evaluated at each sub-interval's left
// endpoint. n_sim = 0 skips the bands.
PMatrixBand chapman_kolmogorov(const FitResult& fit, double t0, double t1, double step,
                               const Profile& profile, int n_sim = 0, double alpha = 0.05,
                               std::uint64_t seed = 1);

// Wald table for linear coefficients: estimate, se, z.
struct WaldRow {
    std::string name;
    double estimate = 0.0;
    double se = 0.0;
    double z = 0.0;
};
std::vector<WaldRow> wald_table(const FitResult& fit);

// type-7 quantile of unsorted data (linear interpolation of order statistics)
double quantile_type7(std::vector<double> values, double p);

}  // namespace msms
