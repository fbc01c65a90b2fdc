#include "dwl/metrics.hpp"

#include <cmath>

namespace dwl {

double mmd(const Tensor& source_features, const Tensor& target_features) {
    if (source_features.rank() != 2 || target_features.rank() != 2) {
        throw ShapeError("mmd: feature matrices must be rank-2");
    }
    if (source_features.rows() == 0 || target_features.rows() == 0) {
        throw ShapeError("mmd: empty feature matrix");
    }
    if (source_features.cols() != target_features.cols()) {
        throw ShapeError("mmd: width mismatch " + shape_str(source_features.shape()) + " vs " +
                         shape_str(target_features.shape()));
    }
    const std::size_t d = source_features.cols();
    std::vector<double> mean_s(d, 0.0), mean_t(d, 0.0);
    for (std::size_t i = 0; i < source_features.rows(); ++i)
        for (std::size_t j = 0; j < d; ++j) mean_s[j] += source_features.at(i, j);
    for (std::size_t i = 0; i < target_features.rows(); ++i)
        for (std::size_t j = 0; j < d; ++j) mean_t[j] += target_features.at(i, j);
    double acc = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
        const double diff = mean_s[j] / static_cast<double>(source_features.rows()) -
                            mean_t[j] / static_cast<double>(target_features.rows());
        acc += diff * diff;
    }
    return acc;
}

ScatterPair scatter(const Tensor& features, const std::vector<int>& labels,
                    std::size_t num_classes) {
    if (features.rank() != 2) throw ShapeError("scatter: features must be rank-2");
    const std::size_t n = features.rows(), d = features.cols();
    if (n == 0) throw ShapeError("scatter: empty input");
    if (labels.size() != n) {
        throw ShapeError("scatter: " + std::to_string(labels.size()) + " labels for " +
                         std::to_string(n) + " rows");
    }
    if (num_classes == 0) throw ConfigError("scatter: num_classes must be >= 1");
    for (int y : labels) {
        if (y < 0 || static_cast<std::size_t>(y) >= num_classes) {
            throw ConfigError("scatter: label " + std::to_string(y) + " outside [0, " +
                              std::to_string(num_classes) + ")");
        }
    }

    ScatterPair out;
    out.dim = d;
    out.between.assign(d * d, 0.0);
    out.within.assign(d * d, 0.0);
    out.class_counts.assign(num_classes, 0);

    std::vector<double> class_means(num_classes * d, 0.0);
    std::vector<double> global_mean(d, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        const auto k = static_cast<std::size_t>(labels[i]);
        ++out.class_counts[k];
        for (std::size_t j = 0; j < d; ++j) {
            class_means[k * d + j] += features.at(i, j);
            global_mean[j] += features.at(i, j);
        }
    }
    for (std::size_t k = 0; k < num_classes; ++k) {
        if (out.class_counts[k] == 0) continue;
        for (std::size_t j = 0; j < d; ++j) {
            class_means[k * d + j] /= static_cast<double>(out.class_counts[k]);
        }
    }
    for (std::size_t j = 0; j < d; ++j) global_mean[j] /= static_cast<double>(n);

    std::vector<double> dev(d);
    for (std::size_t i = 0; i < n; ++i) {
        const auto k = static_cast<std::size_t>(labels[i]);
        for (std::size_t j = 0; j < d; ++j) dev[j] = features.at(i, j) - class_means[k * d + j];
        for (std::size_t a = 0; a < d; ++a)
            for (std::size_t b = 0; b < d; ++b) out.within[a * d + b] += dev[a] * dev[b];
    }
    for (std::size_t k = 0; k < num_classes; ++k) {
        if (out.class_counts[k] == 0) continue;
        for (std::size_t j = 0; j < d; ++j) dev[j] = class_means[k * d + j] - global_mean[j];
        const double nk = static_cast<double>(out.class_counts[k]);
        for (std::size_t a = 0; a < d; ++a)
            for (std::size_t b = 0; b < d; ++b) out.between[a * d + b] += nk * dev[a] * dev[b];
    }
    return out;
}

namespace {

// Cholesky factorization of the SPD matrix A (in place, lower triangle).
// With the eps*I shift a failure indicates a programming error, hence the
// hard NumericError rather than a recoverable path.
void cholesky(std::vector<double>& a, std::size_t d) {
    for (std::size_t i = 0; i < d; ++i) {
        for (std::size_t j = 0; j <= i; ++j) {
            double s = a[i * d + j];
            for (std::size_t k = 0; k < j; ++k) s -= a[i * d + k] * a[j * d + k];
            if (i == j) {
                if (s <= 0.0) {
                    throw NumericError("lda-criterion: regularized within-class scatter is not "
                                       "positive definite (pivot " + format_double(s) + ")");
                }
                a[i * d + i] = std::sqrt(s);
            } else {
                a[i * d + j] = s / a[j * d + j];
            }
        }
    }
}

// Solves L L^T x = b for one column b (forward then back substitution).
void cholesky_solve(const std::vector<double>& l, std::size_t d, std::vector<double>& b) {
    for (std::size_t i = 0; i < d; ++i) {
        double s = b[i];
        for (std::size_t k = 0; k < i; ++k) s -= l[i * d + k] * b[k];
        b[i] = s / l[i * d + i];
    }
    for (std::size_t i = d; i-- > 0;) {
        double s = b[i];
        for (std::size_t k = i + 1; k < d; ++k) s -= l[k * d + i] * b[k];
        b[i] = s / l[i * d + i];
    }
}

} // namespace

double lda_criterion(const ScatterPair& pair, double eps) {
    if (!(eps > 0.0)) throw ConfigError("lda-criterion: eps must be > 0");
    const std::size_t d = pair.dim;
    if (pair.between.size() != d * d || pair.within.size() != d * d) {
        throw ShapeError("lda-criterion: inconsistent scatter pair");
    }
    std::vector<double> reg = pair.within;
    for (std::size_t i = 0; i < d; ++i) reg[i * d + i] += eps;
    cholesky(reg, d);

    // trace((S_w + eps I)^-1 S_b) = sum_j [solve(S_w + eps I, S_b[:,j])]_j
    double trace = 0.0;
    std::vector<double> col(d);
    for (std::size_t j = 0; j < d; ++j) {
        for (std::size_t i = 0; i < d; ++i) col[i] = pair.between[i * d + j];
        cholesky_solve(reg, d, col);
        trace += col[j];
    }
    return trace;
}

void update_and_balance(BalanceState& state, double mmd_value, double j_value) {
    if (!std::isfinite(mmd_value) || !std::isfinite(j_value)) {
        throw NumericError("update_and_balance: non-finite observation");
    }
    if (mmd_value < 0.0 || j_value < 0.0) {
        throw NumericError("update_and_balance: estimator values must be >= 0");
    }
    if (state.observation_count == 0) {
        state.mmd_min = state.mmd_max = mmd_value;
        state.j_min = state.j_max = j_value;
    } else {
        state.mmd_min = std::min(state.mmd_min, mmd_value);
        state.mmd_max = std::max(state.mmd_max, mmd_value);
        state.j_min = std::min(state.j_min, j_value);
        state.j_max = std::max(state.j_max, j_value);
    }
    ++state.observation_count;

    state.mmd_normalized.reset();
    state.j_normalized.reset();
    if (state.mmd_max > state.mmd_min) {
        state.mmd_normalized = (mmd_value - state.mmd_min) / (state.mmd_max - state.mmd_min);
    }
    if (state.j_max > state.j_min) {
        state.j_normalized = (j_value - state.j_min) / (state.j_max - state.j_min);
    }
    if (!state.mmd_normalized || !state.j_normalized) {
        state.tau = 0.5; // normalization not defined yet
        return;
    }
    const double m = *state.mmd_normalized;
    const double j = *state.j_normalized;
    const double denom = m + (1.0 - j);
    state.tau = denom == 0.0 ? 0.5 : m / denom;
}

} // namespace dwl
