#pragma once

#include <Eigen/Dense>

#include "facd/errors.hpp"

namespace facd {

/// Uniform evaluation grid on [0, 1] with trapezoid quadrature weights.
/// All smoothed curves and surfaces in the pipeline are tabulated on one of
/// these; eigenfunctions are stored as grid columns and read back by linear
/// interpolation.
class Grid {
public:
    Grid() : Grid(201) {}

    explicit Grid(int size) {
        if (size < 2) throw InvalidConfigError("grid size must be at least 2");
        points_.resize(size);
        weights_.resize(size);
        const double h = 1.0 / static_cast<double>(size - 1);
        for (int i = 0; i < size; ++i) {
            points_[i] = static_cast<double>(i) * h;
            weights_[i] = (i == 0 || i == size - 1) ? 0.5 * h : h;
        }
        points_[size - 1] = 1.0;
    }

    int size() const { return static_cast<int>(points_.size()); }
    const Eigen::VectorXd& points() const { return points_; }
    const Eigen::VectorXd& weights() const { return weights_; }
    double point(int i) const { return points_[i]; }
    double weight(int i) const { return weights_[i]; }
    double step() const { return points_[1] - points_[0]; }

    /// Trapezoid approximation of the integral of a tabulated function.
    double integrate(const Eigen::VectorXd& values) const {
        if (values.size() != points_.size())
            throw InvalidInputError("grid integrate: length mismatch");
        return weights_.dot(values);
    }

    /// Trapezoid approximation of the L2 inner product of two tabulated
    /// functions.
    double inner(const Eigen::VectorXd& f, const Eigen::VectorXd& g) const {
        if (f.size() != points_.size() || g.size() != points_.size())
            throw InvalidInputError("grid inner: length mismatch");
        return (f.array() * g.array() * weights_.array()).sum();
    }

    /// Linear interpolation of a tabulated function at t in [0, 1].
    double interpolate(const Eigen::VectorXd& values, double t) const {
        if (values.size() != points_.size())
            throw InvalidInputError("grid interpolate: length mismatch");
        if (t < 0.0 || t > 1.0) throw DomainError("interpolation point outside [0, 1]");
        const int n = size();
        const double pos = t * static_cast<double>(n - 1);
        int lo = static_cast<int>(pos);
        if (lo >= n - 1) return values[n - 1];
        const double frac = pos - static_cast<double>(lo);
        return values[lo] * (1.0 - frac) + values[lo + 1] * frac;
    }

    bool operator==(const Grid& other) const { return size() == other.size(); }

private:
    Eigen::VectorXd points_;
    Eigen::VectorXd weights_;
};

}  // namespace facd
