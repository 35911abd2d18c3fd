#include "msmspline/penalty.hpp"

#include <Eigen/Eigenvalues>

#include "msmspline/error.hpp"

namespace msms {

PenaltyLayout penalty_layout(const ParameterLayout& layout) {
    PenaltyLayout out;
    out.W = layout.W();
    for (const auto& sb : layout.smooths()) {
        PenaltyLayout::Block b;
        b.trans = sb.trans;
        b.cov = sb.cov;
        b.offset = sb.offset;
        b.dim = sb.dim;
        b.D = sb.block.penalty;
        Eigen::SelfAdjointEigenSolver<Matrix> es(b.D);
        const double thresh = 1e-10 * std::max(1.0, es.eigenvalues().cwiseAbs().maxCoeff());
        b.rank = static_cast<int>((es.eigenvalues().array() > thresh).count());
        out.blocks.push_back(std::move(b));
    }
    return out;
}

Matrix s_lambda(const PenaltyLayout& layout, const Vector& lambda) {
    if (lambda.size() != layout.n_lambda())
        fail(ErrorKind::Config, "dimension-mismatch", "smoothing parameter count does not match the layout");
    Matrix S = Matrix::Zero(layout.W, layout.W);
    for (int k = 0; k < layout.n_lambda(); ++k) {
        if (lambda[k] < 0.0)
            fail(ErrorKind::Config, "negative-lambda", "smoothing parameters must be nonnegative");
        const auto& b = layout.blocks[k];
        S.block(b.offset, b.offset, b.dim, b.dim) += lambda[k] * b.D;
    }
    return S;
}

Matrix ds_dlambda(const PenaltyLayout& layout, int k) {
    if (k < 0 || k >= layout.n_lambda())
        fail(ErrorKind::Config, "bad-term", "smoothing parameter index out of range");
    Matrix S = Matrix::Zero(layout.W, layout.W);
    const auto& b = layout.blocks[k];
    S.block(b.offset, b.offset, b.dim, b.dim) = b.D;
    return S;
}

}  // namespace msms
