#ifndef DWL_METRICS_HPP
#define DWL_METRICS_HPP

#include <optional>
#include <vector>

#include "dwl/tensor.hpp"

namespace dwl {

/// Degree of alignment: squared Euclidean norm of the difference between the
/// two domains' feature means. 0 means identical means.
double mmd(const Tensor& source_features, const Tensor& target_features);

/// Between-class (S_b) and within-class (S_w) scatter matrices, row-major
/// [d x d], plus per-class sample counts.
struct ScatterPair {
    std::size_t dim = 0;
    std::vector<double> between; // S_b
    std::vector<double> within;  // S_w
    std::vector<std::size_t> class_counts;
};

ScatterPair scatter(const Tensor& features, const std::vector<int>& labels,
                    std::size_t num_classes);

/// Degree of discriminability: trace((S_w + eps*I)^-1 S_b), the ratio-trace
/// value of the LDA criterion. Larger means better class separation.
double lda_criterion(const ScatterPair& pair, double eps);

/// Running min/max extrema of the two estimators plus the current balance
/// factor. tau stays at its 0.5 starting value until both estimators have a
/// defined min-max normalization (two distinct observations each).
struct BalanceState {
    double mmd_min = 0.0, mmd_max = 0.0;
    double j_min = 0.0, j_max = 0.0;
    std::size_t observation_count = 0;
    double tau = 0.5;

    // Normalized values from the latest update, when defined.
    std::optional<double> mmd_normalized;
    std::optional<double> j_normalized;
};

/// Folds a new (MMD, J) observation into the extrema and recomputes
/// tau = m~ / (m~ + (1 - j~)). The degenerate denominator (m~ = 0 and
/// j~ = 1: both objectives at their observed best) yields the neutral 0.5.
void update_and_balance(BalanceState& state, double mmd_value, double j_value);

} // namespace dwl

#endif
