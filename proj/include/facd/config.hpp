#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "facd/errors.hpp"

namespace facd {

inline std::vector<double> log_spaced(double lo, double hi, int count) {
    if (!(lo > 0.0) || !(hi > lo) || count < 2)
        throw InvalidConfigError("log-spaced grid needs 0 < lo < hi and at least two points");
    std::vector<double> grid(static_cast<std::size_t>(count));
    const double llo = std::log10(lo);
    const double lhi = std::log10(hi);
    for (int i = 0; i < count; ++i)
        grid[static_cast<std::size_t>(i)] =
            std::pow(10.0, llo + (lhi - llo) * static_cast<double>(i) / static_cast<double>(count - 1));
    return grid;
}

/// Knobs for a full decomposition run. Defaults reproduce the reference
/// configuration used throughout the tests.
struct RunConfig {
    int mean_basis_dim = 10;
    int kernel_basis_dim = 10;
    int spline_order = 4;

    int gcv_grid_size = 30;
    double gcv_grid_min = 1e-8;
    double gcv_grid_max = 1e2;

    int grid_size = 201;

    double kappa_threshold = 0.95;
    int kappa_override = 0;          // > 0 forces the retained basis count
    double max_block_entries = 1e7;  // cap on (p kappa_x) * (q kappa_y)

    int n_components = 1;

    int cv_folds = 5;
    int rho_grid_size = 8;
    double rho_grid_min_frac = 1e-4;
    double rho_grid_max_frac = 1.0;
    double rho_x_override = -1.0;  // >= 0 skips cross-validation on the X side
    double rho_y_override = -1.0;

    double tol = 1e-6;
    int max_iter = 500;

    std::uint64_t seed = 0;
    bool standardize = false;

    std::vector<double> gcv_grid() const {
        return log_spaced(gcv_grid_min, gcv_grid_max, gcv_grid_size);
    }

    void validate() const {
        if (mean_basis_dim < spline_order || kernel_basis_dim < spline_order)
            throw InvalidConfigError("basis dimension must be at least the spline order");
        if (spline_order < 2) throw InvalidConfigError("spline order must be at least 2");
        if (grid_size < 2) throw InvalidConfigError("grid size must be at least 2");
        if (!(kappa_threshold > 0.0) || kappa_threshold > 1.0)
            throw InvalidConfigError("kappa threshold must lie in (0, 1]");
        if (kappa_override < 0) throw InvalidConfigError("kappa override must be nonnegative");
        if (n_components < 1) throw InvalidConfigError("at least one component is required");
        if (cv_folds < 2) throw InvalidConfigError("cross-validation needs at least two folds");
        if (rho_grid_size < 1) throw InvalidConfigError("rho grid must not be empty");
        if (!(rho_grid_min_frac > 0.0) || !(rho_grid_max_frac >= rho_grid_min_frac))
            throw InvalidConfigError("rho grid fractions must satisfy 0 < min <= max");
        if (!(tol > 0.0)) throw InvalidConfigError("tolerance must be positive");
        if (max_iter < 1) throw InvalidConfigError("iteration cap must be positive");
        if (!(max_block_entries >= 1.0))
            throw InvalidConfigError("block entry cap must be at least 1");
        gcv_grid();  // validates the GCV grid parameters
    }
};

}  // namespace facd
