#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "facd/data.hpp"
#include "facd/errors.hpp"
#include "facd/grid.hpp"
#include "facd/rng.hpp"

namespace facd {

/// Orthonormalized shifted Legendre polynomials on [0, 1]: the kth function
/// is sqrt(2k + 1) P_k(2t - 1), so the family is exactly orthonormal in
/// L2([0, 1]).
inline Eigen::VectorXd legendre_basis_values(double t, int n_basis) {
    if (n_basis < 1) throw InvalidConfigError("basis count must be positive");
    Eigen::VectorXd phi(n_basis);
    const double u = 2.0 * t - 1.0;
    double prev = 1.0;
    double cur = u;
    phi[0] = 1.0;
    if (n_basis > 1) phi[1] = std::sqrt(3.0) * u;
    for (int k = 2; k < n_basis; ++k) {
        const double next =
            ((2.0 * k - 1.0) * u * cur - (k - 1.0) * prev) / static_cast<double>(k);
        prev = cur;
        cur = next;
        phi[k] = std::sqrt(2.0 * k + 1.0) * cur;
    }
    return phi;
}

struct SimulationConfig {
    int n_subjects = 200;
    int p = 100;
    int q = 100;
    int rank = 20;
    int n_active_x = 10;
    int n_active_y = 10;
    int n_basis = 10;
    int n_min = 5;
    int n_max = 8;
    double noise_sd = 0.1;
    // Score moments per component (1-based r): Var(z_r) = r^{-variance_exponent},
    // Cov(z_r across the two sides) = decay_base * r^{-decay_exponent}. With
    // decay_exponent >= variance_exponent both the cross-covariance and the
    // correlation decay in r while staying a valid bivariate normal.
    double decay_base = 0.9;
    double decay_exponent = 1.25;
    double variance_exponent = 1.0;
    int noise_rank = 4;
    double ar_coefficient = 0.5;
    std::vector<double> fixed_times;  // when nonempty every subject observes these times
    int grid_size = 201;
    std::uint64_t seed = 0;

    double decay(int r) const { return decay_base * std::pow(r + 1.0, -decay_exponent); }
    double score_variance(int r) const { return std::pow(r + 1.0, -variance_exponent); }

    void validate() const {
        if (n_subjects < 1) throw InvalidConfigError("need at least one subject");
        if (p < 1 || q < 1) throw InvalidConfigError("feature counts must be positive");
        if (rank < 1) throw InvalidConfigError("rank must be positive");
        if (n_basis < 1) throw InvalidConfigError("basis count must be positive");
        if (n_active_x < 1 || n_active_x > p || n_active_y < 1 || n_active_y > q)
            throw InvalidConfigError("active feature counts must lie in [1, p] and [1, q]");
        if (rank > n_active_x * n_basis || rank > n_active_y * n_basis)
            throw InvalidConfigError("rank exceeds the span of the active coefficient space");
        if (fixed_times.empty()) {
            if (n_min < 1 || n_max < n_min)
                throw InvalidConfigError("visit count range must satisfy 1 <= n_min <= n_max");
        } else {
            for (double t : fixed_times)
                if (!(t >= 0.0 && t <= 1.0))
                    throw InvalidConfigError("fixed times must lie in [0, 1]");
        }
        if (!(noise_sd >= 0.0)) throw InvalidConfigError("noise sd must be nonnegative");
        if (!(decay_base > 0.0 && decay_base <= 1.0))
            throw InvalidConfigError("decay base must lie in (0, 1]");
        if (!(variance_exponent >= 0.0))
            throw InvalidConfigError("variance exponent must be nonnegative");
        if (!(decay_exponent >= variance_exponent))
            throw InvalidConfigError(
                "decay exponent must be at least the variance exponent so correlations stay in (0, 1]");
        if (noise_rank < 1) throw InvalidConfigError("noise factor rank must be positive");
        if (!(ar_coefficient > -1.0 && ar_coefficient < 1.0))
            throw InvalidConfigError("AR coefficient must lie in (-1, 1)");
        if (grid_size < 2) throw InvalidConfigError("grid size must be at least 2");
    }
};

/// Everything the generator knows that an estimator would have to recover.
/// Loading coefficients are stored per component as p x n_basis matrices in
/// the Legendre basis; rows outside the support are identically zero. The
/// component coefficient blocks are orthonormal across components within each
/// side, so the planted loadings form the exact singular system of the
/// population cross-covariance with singular values decay(r).
struct GroundTruth {
    Grid grid{2};
    std::vector<Eigen::MatrixXd> coefficients_x;  // rank entries, p x n_basis
    std::vector<Eigen::MatrixXd> coefficients_y;  // rank entries, q x n_basis
    std::vector<Eigen::MatrixXd> loadings_x;      // rank entries, p x grid_size
    std::vector<Eigen::MatrixXd> loadings_y;      // rank entries, q x grid_size
    Eigen::MatrixXd scores_x;                     // n x rank
    Eigen::MatrixXd scores_y;                     // n x rank
    std::vector<int> support_x;
    std::vector<int> support_y;
    std::vector<double> cross_covariances;  // decay(r), strictly decreasing

    int rank() const { return static_cast<int>(coefficients_x.size()); }
    int n_basis() const {
        return coefficients_x.empty() ? 0 : static_cast<int>(coefficients_x.front().cols());
    }

    double loading_value_x(int r, int j, double t) const {
        return coefficients_x[static_cast<std::size_t>(r)].row(j).dot(
            legendre_basis_values(t, n_basis()));
    }
    double loading_value_y(int r, int m, double t) const {
        return coefficients_y[static_cast<std::size_t>(r)].row(m).dot(
            legendre_basis_values(t, n_basis()));
    }
};

struct SimulatedData {
    LongitudinalDataset x;
    LongitudinalDataset y;
    GroundTruth truth;
};

namespace detail {

/// Random coefficient blocks for one side, orthonormalized across components
/// by modified Gram-Schmidt over the stacked active entries. Each block then
/// satisfies sum_j ||coef_rj||^2 = 1 exactly, giving unit-norm vector-valued
/// loadings.
inline std::vector<Eigen::MatrixXd> draw_loading_coefficients(Rng& rng, int n_features,
                                                              int n_active, int n_basis,
                                                              int rank) {
    Eigen::MatrixXd stacked(rank, n_active * n_basis);
    for (int r = 0; r < rank; ++r)
        for (int c = 0; c < stacked.cols(); ++c) stacked(r, c) = rng.normal();
    for (int r = 0; r < rank; ++r) {
        for (int s = 0; s < r; ++s)
            stacked.row(r) -= stacked.row(r).dot(stacked.row(s)) * stacked.row(s);
        const double norm = stacked.row(r).norm();
        if (!(norm > 1e-12))
            throw DegenerateDesignError("loading coefficient draw collapsed during orthogonalization");
        stacked.row(r) /= norm;
    }
    std::vector<Eigen::MatrixXd> coefficients;
    coefficients.reserve(static_cast<std::size_t>(rank));
    for (int r = 0; r < rank; ++r) {
        Eigen::MatrixXd block = Eigen::MatrixXd::Zero(n_features, n_basis);
        for (int j = 0; j < n_active; ++j)
            for (int k = 0; k < n_basis; ++k) block(j, k) = stacked(r, j * n_basis + k);
        coefficients.push_back(std::move(block));
    }
    return coefficients;
}

/// Feature rows of the noise factor loading matrix are scaled to `noise_sd`,
/// so every feature's noise has that marginal standard deviation while
/// features stay correlated through the shared factors.
inline Eigen::MatrixXd draw_noise_loadings(Rng& rng, int n_features, int noise_rank,
                                           double noise_sd) {
    Eigen::MatrixXd lambda(n_features, noise_rank);
    for (int j = 0; j < n_features; ++j)
        for (int f = 0; f < noise_rank; ++f) lambda(j, f) = rng.normal();
    for (int j = 0; j < n_features; ++j) {
        const double norm = lambda.row(j).norm();
        if (!(norm > 1e-12)) throw DegenerateDesignError("noise loading row collapsed");
        lambda.row(j) *= noise_sd / norm;
    }
    return lambda;
}

/// Stationary AR(1) factor paths over the (sorted) visit order, unit
/// marginal variance per factor.
inline Eigen::MatrixXd draw_ar_factors(Rng& rng, int noise_rank, int n_visits, double ar) {
    Eigen::MatrixXd w(noise_rank, n_visits);
    const double innovation = std::sqrt(1.0 - ar * ar);
    for (int f = 0; f < noise_rank; ++f) {
        w(f, 0) = rng.normal();
        for (int g = 1; g < n_visits; ++g) w(f, g) = ar * w(f, g - 1) + innovation * rng.normal();
    }
    return w;
}

inline std::vector<double> draw_visit_times(Rng& rng, const SimulationConfig& config) {
    if (!config.fixed_times.empty()) return config.fixed_times;
    const int count = config.n_min + static_cast<int>(rng.below(
                                         static_cast<std::uint64_t>(config.n_max - config.n_min + 1)));
    std::vector<double> times(static_cast<std::size_t>(count));
    for (double& t : times) t = rng.uniform01();
    std::sort(times.begin(), times.end());
    return times;
}

inline std::vector<Observation> compose_side(const std::vector<double>& times,
                                             const std::vector<Eigen::MatrixXd>& coefficients,
                                             const Eigen::VectorXd& scores,
                                             const Eigen::MatrixXd& noise, int n_basis) {
    const int n_features = static_cast<int>(coefficients.front().rows());
    const int rank = static_cast<int>(coefficients.size());
    std::vector<Observation> out;
    out.reserve(times.size());
    for (std::size_t g = 0; g < times.size(); ++g) {
        const Eigen::VectorXd phi = legendre_basis_values(times[g], n_basis);
        Observation obs;
        obs.time = times[g];
        obs.values.resize(n_features);
        for (int j = 0; j < n_features; ++j) {
            double value = 0.0;
            for (int r = 0; r < rank; ++r)
                value += scores[r] * coefficients[static_cast<std::size_t>(r)].row(j).dot(phi);
            obs.values[j] = value + noise(j, static_cast<Eigen::Index>(g));
        }
        out.push_back(std::move(obs));
    }
    return out;
}

}  // namespace detail

/// Paired longitudinal data with planted sparse time-varying components.
/// Per-subject randomness lives in its own derived seed stream, so output is
/// identical regardless of generation order.
inline SimulatedData generate(const SimulationConfig& config) {
    config.validate();

    Rng structural(derive_seed(config.seed, 0));
    GroundTruth truth;
    truth.grid = Grid(config.grid_size);
    truth.coefficients_x = detail::draw_loading_coefficients(structural, config.p,
                                                             config.n_active_x, config.n_basis,
                                                             config.rank);
    truth.coefficients_y = detail::draw_loading_coefficients(structural, config.q,
                                                             config.n_active_y, config.n_basis,
                                                             config.rank);
    const Eigen::MatrixXd lambda_x =
        detail::draw_noise_loadings(structural, config.p, config.noise_rank, config.noise_sd);
    const Eigen::MatrixXd lambda_y =
        detail::draw_noise_loadings(structural, config.q, config.noise_rank, config.noise_sd);

    Eigen::MatrixXd basis_on_grid(config.n_basis, config.grid_size);
    for (int g = 0; g < config.grid_size; ++g)
        basis_on_grid.col(g) = legendre_basis_values(truth.grid.point(g), config.n_basis);
    for (int r = 0; r < config.rank; ++r) {
        truth.loadings_x.push_back(truth.coefficients_x[static_cast<std::size_t>(r)] *
                                   basis_on_grid);
        truth.loadings_y.push_back(truth.coefficients_y[static_cast<std::size_t>(r)] *
                                   basis_on_grid);
        truth.cross_covariances.push_back(config.decay(r));
    }
    for (int j = 0; j < config.n_active_x; ++j) truth.support_x.push_back(j);
    for (int m = 0; m < config.n_active_y; ++m) truth.support_y.push_back(m);
    truth.scores_x.resize(config.n_subjects, config.rank);
    truth.scores_y.resize(config.n_subjects, config.rank);

    SimulatedData out;
    out.x.label = "x";
    out.x.n_features = config.p;
    out.y.label = "y";
    out.y.n_features = config.q;
    for (int j = 0; j < config.p; ++j) out.x.feature_names.push_back("x" + std::to_string(j + 1));
    for (int m = 0; m < config.q; ++m) out.y.feature_names.push_back("y" + std::to_string(m + 1));

    for (int i = 0; i < config.n_subjects; ++i) {
        Rng rng(derive_seed(config.seed, 1 + static_cast<std::uint64_t>(i)));
        const std::vector<double> times_x = detail::draw_visit_times(rng, config);
        const std::vector<double> times_y = detail::draw_visit_times(rng, config);
        Eigen::VectorXd zx(config.rank), zy(config.rank);
        for (int r = 0; r < config.rank; ++r) {
            const double scale = std::sqrt(config.score_variance(r));
            const double rho = config.decay(r) / config.score_variance(r);
            const double g1 = rng.normal();
            const double g2 = rng.normal();
            zx[r] = scale * g1;
            zy[r] = scale * (rho * g1 + std::sqrt(1.0 - rho * rho) * g2);
        }
        truth.scores_x.row(i) = zx;
        truth.scores_y.row(i) = zy;
        const Eigen::MatrixXd noise_x =
            lambda_x * detail::draw_ar_factors(rng, config.noise_rank,
                                               static_cast<int>(times_x.size()),
                                               config.ar_coefficient);
        const Eigen::MatrixXd noise_y =
            lambda_y * detail::draw_ar_factors(rng, config.noise_rank,
                                               static_cast<int>(times_y.size()),
                                               config.ar_coefficient);
        const std::string id = "s" + std::to_string(i + 1);
        out.x.subject_ids.push_back(id);
        out.y.subject_ids.push_back(id);
        out.x.observations.push_back(
            detail::compose_side(times_x, truth.coefficients_x, zx, noise_x, config.n_basis));
        out.y.observations.push_back(
            detail::compose_side(times_y, truth.coefficients_y, zy, noise_y, config.n_basis));
    }
    out.truth = std::move(truth);
    return out;
}

}  // namespace facd
