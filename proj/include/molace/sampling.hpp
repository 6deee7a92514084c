#pragma once

#include <Eigen/Dense>

#include <span>

#include "molace/common.hpp"
#include "molace/model.hpp"

namespace molace {

/// softmax(logits / temperature), computed with max subtraction.
Distribution softmax(const Eigen::VectorXd& logits, double temperature = 1.0);

/// Nucleus filter: sort descending (ties by lower token id), keep the smallest
/// prefix whose cumulative mass reaches top_p (the crossing token is kept),
/// renormalize. Entries outside the kept set become exactly 0.
Distribution nucleus_filter(std::span<const double> probs, double top_p);

/// Inverse-CDF draw over a distribution using one uniform01 draw.
TokenId sample_token(std::span<const double> probs, Rng& rng);

/// Applies the nucleus filter to an already tempered distribution and samples from it.
TokenId sample_nucleus(std::span<const double> probs, double top_p, Rng& rng);

bool is_distribution(std::span<const double> probs, double tol = 1e-9);

}  // namespace molace
