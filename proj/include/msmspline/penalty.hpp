#pragma once

#include <string>
#include <vector>

#include "msmspline/model.hpp"
#include "msmspline/types.hpp"

namespace msms {

// Block-diagonal layout of the overall penalty: one block per smooth term,
// addressed by its global coefficient range. Intercepts and linear terms
// carry no penalty. The smoothing-parameter index of a block is its position.
struct PenaltyLayout {
    struct Block {
        TransitionKey trans;
        std::string cov;
        int offset = 0;
        int dim = 0;
        Matrix D;
        int rank = 0;
    };
    std::vector<Block> blocks;
    int W = 0;

    int n_lambda() const { return static_cast<int>(blocks.size()); }
};

PenaltyLayout penalty_layout(const ParameterLayout& layout);

// S_lambda, the W x W block-diagonal embedding of lambda_k D_k.
Matrix s_lambda(const PenaltyLayout& layout, const Vector& lambda);

// dS/dlambda_k: the embedding of D_k alone.
Matrix ds_dlambda(const PenaltyLayout& layout, int k);

}  // namespace msms
