#include <catch2/catch_amalgamated.hpp>

#include <Eigen/Dense>
#include <Eigen/SVD>
#include <cmath>
#include <vector>

#include "facd/rng.hpp"
#include "facd/sparse_svd.hpp"

namespace {

Eigen::MatrixXd random_matrix(std::uint64_t seed, int rows, int cols) {
    facd::Rng rng(seed);
    Eigen::MatrixXd m(rows, cols);
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) m(r, c) = rng.normal();
    return m;
}

// Matrix with prescribed singular values via random orthogonal factors.
Eigen::MatrixXd prescribed_svd(std::uint64_t seed, int rows, int cols,
                               const std::vector<double>& sigma, Eigen::MatrixXd* u_out = nullptr,
                               Eigen::MatrixXd* v_out = nullptr) {
    const Eigen::HouseholderQR<Eigen::MatrixXd> qr_u(random_matrix(seed, rows, rows));
    const Eigen::HouseholderQR<Eigen::MatrixXd> qr_v(random_matrix(seed + 1, cols, cols));
    const Eigen::MatrixXd u = qr_u.householderQ();
    const Eigen::MatrixXd v = qr_v.householderQ();
    Eigen::MatrixXd d = Eigen::MatrixXd::Zero(rows, cols);
    for (std::size_t k = 0; k < sigma.size(); ++k)
        d(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(k)) = sigma[k];
    if (u_out) *u_out = u;
    if (v_out) *v_out = v;
    return u * d * v.transpose();
}

double group_norm(const Eigen::VectorXd& vec, int n_groups, int kappa, int j) {
    double total = 0.0;
    for (int k = 0; k < kappa; ++k) total += vec[k * n_groups + j] * vec[k * n_groups + j];
    return std::sqrt(total);
}

}  // namespace

TEST_CASE("unpenalized extraction matches a dense SVD", "[sparse_svd]") {
    for (std::uint64_t seed : {3ULL, 17ULL, 55ULL}) {
        Eigen::MatrixXd u, v;
        const Eigen::MatrixXd gamma =
            prescribed_svd(seed, 12, 10, {3.0, 1.5, 0.8, 0.4, 0.2}, &u, &v);
        const facd::SingularTriple triple = facd::rank1_sparse(gamma, 0.0, 0.0, 3, 2, 1e-13, 50000);
        REQUIRE(triple.converged);
        REQUIRE(triple.objective_monotone);
        REQUIRE(std::abs(triple.a.norm() - 1.0) <= 1e-10);
        REQUIRE(std::abs(triple.b.norm() - 1.0) <= 1e-10);
        REQUIRE(triple.eta == Catch::Approx(3.0).epsilon(1e-9));
        REQUIRE(std::abs(triple.a.dot(u.col(0))) == Catch::Approx(1.0).margin(1e-8));
        REQUIRE(std::abs(triple.b.dot(v.col(0))) == Catch::Approx(1.0).margin(1e-8));
        REQUIRE(triple.support_x.size() == 4);  // p = 12 / 3
        REQUIRE(triple.support_y.size() == 5);  // q = 10 / 2
    }
}

TEST_CASE("converged sparse solutions satisfy the stationarity conditions", "[sparse_svd]") {
    const Eigen::MatrixXd gamma = random_matrix(71, 12, 10);
    const int kappa_x = 3, kappa_y = 2, p = 4, q = 5;
    const double rho_x = 0.8, rho_y = 0.6;
    const facd::SingularTriple triple =
        facd::rank1_sparse(gamma, rho_x, rho_y, kappa_x, kappa_y, 1e-12, 50000);
    REQUIRE(triple.converged);
    REQUIRE(!triple.support_x.empty());
    REQUIRE(!triple.support_y.empty());

    // a side: on active groups c_j - (rho/2) a_j / ||a_j|| = lambda a_j with a
    // common multiplier; inactive groups satisfy ||c_j|| <= rho/2.
    const Eigen::VectorXd c = gamma * triple.b;
    std::vector<double> lambdas;
    for (int j = 0; j < p; ++j) {
        Eigen::VectorXd cj(kappa_x), aj(kappa_x);
        for (int k = 0; k < kappa_x; ++k) {
            cj[k] = c[k * p + j];
            aj[k] = triple.a[k * p + j];
        }
        if (aj.squaredNorm() > 0.0) {
            const Eigen::VectorXd resid = cj - 0.5 * rho_x * aj / aj.norm();
            const double lambda = resid.dot(aj) / aj.squaredNorm();
            REQUIRE((resid - lambda * aj).norm() <= 1e-6 * c.norm());
            lambdas.push_back(lambda);
        } else {
            REQUIRE(cj.norm() <= 0.5 * rho_x + 1e-8);
        }
    }
    for (double l : lambdas) REQUIRE(l == Catch::Approx(lambdas.front()).epsilon(1e-6));

    const Eigen::VectorXd d = gamma.transpose() * triple.a;
    for (int m = 0; m < q; ++m) {
        Eigen::VectorXd dm(kappa_y), bm(kappa_y);
        for (int k = 0; k < kappa_y; ++k) {
            dm[k] = d[k * q + m];
            bm[k] = triple.b[k * q + m];
        }
        if (bm.squaredNorm() > 0.0) {
            const Eigen::VectorXd resid = dm - 0.5 * rho_y * bm / bm.norm();
            const double lambda = resid.dot(bm) / bm.squaredNorm();
            REQUIRE((resid - lambda * bm).norm() <= 1e-6 * d.norm());
        } else {
            REQUIRE(dm.norm() <= 0.5 * rho_y + 1e-8);
        }
    }
}

TEST_CASE("group thresholding recovers a planted sparse component", "[sparse_svd]") {
    const int p = 6, kappa_x = 2, q = 5, kappa_y = 2;
    Eigen::VectorXd a_true = Eigen::VectorXd::Zero(p * kappa_x);
    a_true[0 * p + 1] = 0.6;
    a_true[1 * p + 1] = -0.3;
    a_true[0 * p + 3] = 0.5;
    a_true[1 * p + 3] = 0.55;
    a_true /= a_true.norm();
    Eigen::VectorXd b_true = Eigen::VectorXd::Zero(q * kappa_y);
    b_true[0 * q + 0] = 0.7;
    b_true[1 * q + 0] = 0.2;
    b_true[0 * q + 2] = -0.66;
    b_true /= b_true.norm();
    const Eigen::MatrixXd gamma =
        2.0 * a_true * b_true.transpose() + 0.01 * random_matrix(5, p * kappa_x, q * kappa_y);

    const facd::SingularTriple triple = facd::rank1_sparse(gamma, 0.3, 0.3, kappa_x, kappa_y);
    REQUIRE(triple.converged);
    REQUIRE(triple.support_x == std::vector<int>{1, 3});
    REQUIRE(triple.support_y == std::vector<int>{0, 2});
    for (int j : {0, 2, 4, 5}) REQUIRE(group_norm(triple.a, p, kappa_x, j) == 0.0);
    for (int m : {1, 3, 4}) REQUIRE(group_norm(triple.b, q, kappa_y, m) == 0.0);
    REQUIRE(std::abs(triple.a.dot(a_true)) >= 0.99);
    REQUIRE(std::abs(triple.b.dot(b_true)) >= 0.99);
    REQUIRE(std::abs(triple.a.norm() - 1.0) <= 1e-10);
}

TEST_CASE("excessive penalties shrink everything to zero", "[sparse_svd]") {
    const Eigen::MatrixXd gamma = random_matrix(9, 8, 6);
    const facd::SingularTriple triple = facd::rank1_sparse(gamma, 1e4, 1e4, 2, 2);
    REQUIRE(triple.converged);
    REQUIRE(triple.eta == 0.0);
    REQUIRE(triple.a.norm() == 0.0);
    REQUIRE(triple.b.norm() == 0.0);
    REQUIRE(triple.support_x.empty());
    REQUIRE(triple.support_y.empty());
    REQUIRE_FALSE(triple.zero_matrix);
}

TEST_CASE("a zero matrix reports the zero-input flag", "[sparse_svd]") {
    const Eigen::MatrixXd gamma = Eigen::MatrixXd::Zero(6, 4);
    const facd::SingularTriple triple = facd::rank1_sparse(gamma, 0.1, 0.1, 2, 2);
    REQUIRE(triple.zero_matrix);
    REQUIRE(triple.eta == 0.0);
    REQUIRE(triple.a.norm() == 0.0);
    REQUIRE(triple.converged);
}

TEST_CASE("deflation removes components one singular value at a time", "[sparse_svd]") {
    const Eigen::MatrixXd gamma = prescribed_svd(23, 12, 12, {2.5, 1.2, 0.5});
    const facd::SingularTriple t1 = facd::rank1_sparse(gamma, 0.0, 0.0, 3, 3, 1e-13, 50000);
    const Eigen::MatrixXd g1 = facd::deflate(gamma, t1);
    // Exact arithmetic identity.
    const Eigen::MatrixXd manual = gamma - t1.eta * t1.a * t1.b.transpose();
    REQUIRE((g1 - manual).lpNorm<Eigen::Infinity>() == 0.0);

    const facd::SingularTriple t2 = facd::rank1_sparse(g1, 0.0, 0.0, 3, 3, 1e-13, 50000);
    REQUIRE(t2.eta == Catch::Approx(1.2).epsilon(1e-6));
    const Eigen::MatrixXd g2 = facd::deflate(g1, t2);
    const facd::SingularTriple t3 = facd::rank1_sparse(g2, 0.0, 0.0, 3, 3, 1e-13, 50000);
    REQUIRE(t3.eta == Catch::Approx(0.5).epsilon(1e-6));
    // Residual after removing all three directions is numerically zero.
    const Eigen::MatrixXd g3 = facd::deflate(g2, t3);
    REQUIRE(g3.lpNorm<Eigen::Infinity>() <= 1e-9);
}

TEST_CASE("the penalized objective never increases along the iterations", "[sparse_svd]") {
    for (std::uint64_t seed : {1ULL, 2ULL, 3ULL, 4ULL}) {
        const Eigen::MatrixXd gamma = random_matrix(seed, 15, 12);
        for (double rho : {0.0, 0.2, 1.0, 3.0}) {
            const facd::SingularTriple triple = facd::rank1_sparse(gamma, rho, 0.5 * rho, 3, 3);
            REQUIRE(triple.objective_monotone);
            for (std::size_t t = 1; t < triple.objective_trace.size(); ++t)
                REQUIRE(triple.objective_trace[t] <=
                        triple.objective_trace[t - 1] +
                            1e-9 * std::max(1.0, std::abs(triple.objective_trace[t - 1])));
        }
    }
}

TEST_CASE("cross-validation matches a hand-rolled fold loop", "[sparse_svd]") {
    facd::Rng rng(99);
    const int n = 17, kappa_x = 2, kappa_y = 2, p = 4, q = 3;
    std::vector<Eigen::MatrixXd> subjects;
    Eigen::VectorXd a_true = random_matrix(201, p * kappa_x, 1);
    Eigen::VectorXd b_true = random_matrix(202, q * kappa_y, 1);
    a_true /= a_true.norm();
    b_true /= b_true.norm();
    for (int i = 0; i < n; ++i) {
        const double score = 1.0 + 0.3 * rng.normal();
        subjects.push_back(score * a_true * b_true.transpose() +
                           0.3 * random_matrix(300 + static_cast<std::uint64_t>(i), p * kappa_x,
                                               q * kappa_y));
    }
    std::vector<std::pair<double, double>> grid;
    for (double rx : {0.05, 0.3, 1.0})
        for (double ry : {0.05, 0.3, 1.0}) grid.emplace_back(rx, ry);

    const int folds = 4;
    const std::uint64_t seed = 12345;
    const facd::SparsityTuning tuning =
        facd::select_rho_cv(subjects, grid, folds, seed, kappa_x, kappa_y);

    // Reference: same fold assignment, fits run through the public dense
    // entry point on each training mean.
    const std::vector<int> fold = facd::detail::cv_fold_assignment(n, folds, seed);
    REQUIRE(tuning.fold_assignment == fold);
    std::vector<double> objectives(grid.size(), 0.0);
    for (int g = 0; g < folds; ++g) {
        Eigen::MatrixXd train = Eigen::MatrixXd::Zero(p * kappa_x, q * kappa_y);
        Eigen::MatrixXd test = train;
        int n_train = 0, n_test = 0;
        for (int i = 0; i < n; ++i) {
            if (fold[static_cast<std::size_t>(i)] == g) {
                test += subjects[static_cast<std::size_t>(i)];
                ++n_test;
            } else {
                train += subjects[static_cast<std::size_t>(i)];
                ++n_train;
            }
        }
        train /= static_cast<double>(n_train);
        test /= static_cast<double>(n_test);
        for (std::size_t idx = 0; idx < grid.size(); ++idx) {
            const facd::SingularTriple t =
                facd::rank1_sparse(train, grid[idx].first, grid[idx].second, kappa_x, kappa_y);
            objectives[idx] += t.a.dot(test * t.b);
        }
    }
    for (std::size_t idx = 0; idx < grid.size(); ++idx)
        REQUIRE(tuning.objectives[idx] == Catch::Approx(objectives[idx]).margin(1e-13));
    std::size_t best = 0;
    for (std::size_t idx = 1; idx < grid.size(); ++idx)
        if (objectives[idx] > objectives[best]) best = idx;
    REQUIRE(tuning.rho_x == grid[best].first);
    REQUIRE(tuning.rho_y == grid[best].second);
    REQUIRE(tuning.cv_objective == objectives[best]);
}

TEST_CASE("factored cross-validation agrees with the dense path", "[sparse_svd]") {
    const int n = 14, kappa_x = 2, kappa_y = 3, p = 5, q = 4;
    Eigen::MatrixXd fx = random_matrix(41, p * kappa_x, n);
    Eigen::MatrixXd fy = random_matrix(42, q * kappa_y, n);

    // One prior component to deflate.
    facd::SingularTriple prior;
    prior.eta = 0.7;
    prior.a = random_matrix(43, p * kappa_x, 1);
    prior.a /= prior.a.norm();
    prior.b = random_matrix(44, q * kappa_y, 1);
    prior.b /= prior.b.norm();

    std::vector<Eigen::MatrixXd> dense;
    for (int i = 0; i < n; ++i)
        dense.push_back(fx.col(i) * fy.col(i).transpose() -
                        prior.eta * prior.a * prior.b.transpose());

    std::vector<std::pair<double, double>> grid;
    for (double rx : {0.1, 0.6})
        for (double ry : {0.1, 0.6}) grid.emplace_back(rx, ry);

    const facd::SparsityTuning dense_tuning =
        facd::select_rho_cv(dense, grid, 3, 7, kappa_x, kappa_y);
    const facd::SparsityTuning factor_tuning =
        facd::select_rho_cv_factors(fx, fy, {prior}, grid, 3, 7, kappa_x, kappa_y);

    REQUIRE(dense_tuning.rho_x == factor_tuning.rho_x);
    REQUIRE(dense_tuning.rho_y == factor_tuning.rho_y);
    for (std::size_t idx = 0; idx < grid.size(); ++idx)
        REQUIRE(factor_tuning.objectives[idx] ==
                Catch::Approx(dense_tuning.objectives[idx]).margin(1e-9));
}

TEST_CASE("exact objective ties resolve toward the heaviest penalty", "[sparse_svd]") {
    // All-zero subjects score zero everywhere, so every grid cell ties.
    std::vector<Eigen::MatrixXd> subjects(6, Eigen::MatrixXd::Zero(4, 4));
    std::vector<std::pair<double, double>> grid{{0.1, 0.1}, {0.5, 0.2}, {0.2, 0.5}, {0.4, 0.3}};
    const facd::SparsityTuning tuning = facd::select_rho_cv(subjects, grid, 2, 1, 2, 2);
    REQUIRE(tuning.cv_objective == 0.0);
    REQUIRE(tuning.rho_x == 0.5);
    REQUIRE(tuning.rho_y == 0.2);
}

TEST_CASE("group norm bounds match a manual scan", "[sparse_svd]") {
    const Eigen::MatrixXd gamma = random_matrix(77, 6, 6);
    const auto [sx, sy] = facd::group_norm_bounds(gamma, 2, 3);
    double expected_x = 0.0;
    for (int j = 0; j < 3; ++j)
        expected_x = std::max(expected_x,
                              std::sqrt(gamma.row(j).squaredNorm() + gamma.row(3 + j).squaredNorm()));
    REQUIRE(sx == Catch::Approx(expected_x).margin(1e-14));
    double expected_y = 0.0;
    for (int m = 0; m < 2; ++m)
        expected_y = std::max(expected_y, std::sqrt(gamma.col(m).squaredNorm() +
                                                    gamma.col(2 + m).squaredNorm() +
                                                    gamma.col(4 + m).squaredNorm()));
    REQUIRE(sy == Catch::Approx(expected_y).margin(1e-14));
}

TEST_CASE("argument validation", "[sparse_svd]") {
    const Eigen::MatrixXd gamma = random_matrix(1, 6, 6);
    REQUIRE_THROWS_AS(facd::rank1_sparse(gamma, -0.1, 0.0, 2, 2), facd::InvalidConfigError);
    REQUIRE_THROWS_AS(facd::rank1_sparse(gamma, 0.0, 0.0, 2, 2, 0.0), facd::InvalidConfigError);
    REQUIRE_THROWS_AS(facd::rank1_sparse(gamma, 0.0, 0.0, 2, 2, 1e-6, 0), facd::InvalidConfigError);
    REQUIRE_THROWS_AS(facd::rank1_sparse(gamma, 0.0, 0.0, 4, 2), facd::InvalidInputError);

    std::vector<Eigen::MatrixXd> subjects(3, gamma);
    const std::vector<std::pair<double, double>> grid{{0.1, 0.1}};
    REQUIRE_THROWS_AS(facd::select_rho_cv(subjects, grid, 5, 0, 2, 2), facd::InvalidInputError);
    REQUIRE_THROWS_AS(facd::select_rho_cv(subjects, {}, 2, 0, 2, 2), facd::InvalidConfigError);

    facd::SingularTriple bad;
    bad.a = Eigen::VectorXd::Zero(3);
    bad.b = Eigen::VectorXd::Zero(6);
    REQUIRE_THROWS_AS(facd::deflate(gamma, bad), facd::InvalidInputError);
}
