#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <numeric>
#include <vector>

#include "facd/metrics.hpp"
#include "facd/pipeline.hpp"
#include "facd/simulate.hpp"

namespace {

// Independent re-implementation of the evaluation criteria using nothing from
// the library: explicit trapezoid weights, index loops, and a textbook
// correlation. The main suite is frozen against this.
struct OracleReport {
    double error_x = 0.0, error_y = 0.0;
    double fpr_x = 0.0, fpr_y = 0.0, fnr_x = 0.0, fnr_y = 0.0;
    double corr_x = 0.0, corr_y = 0.0;
};

double oracle_pearson(const std::vector<double>& u, const std::vector<double>& v) {
    const std::size_t n = u.size();
    double mu = 0.0, mv = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        mu += u[i];
        mv += v[i];
    }
    mu /= static_cast<double>(n);
    mv /= static_cast<double>(n);
    double suu = 0.0, svv = 0.0, suv = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        suu += (u[i] - mu) * (u[i] - mu);
        svv += (v[i] - mv) * (v[i] - mv);
        suv += (u[i] - mu) * (v[i] - mv);
    }
    const double denom = std::sqrt(suu * svv);
    return denom > 0.0 ? suv / denom : 0.0;
}

OracleReport oracle_evaluate(const facd::CanonicalComponent& comp,
                             const facd::GroundTruth& truth, int r) {
    const int g = truth.grid.size();
    std::vector<double> w(static_cast<std::size_t>(g));
    const double h = 1.0 / static_cast<double>(g - 1);
    for (int i = 0; i < g; ++i) w[static_cast<std::size_t>(i)] = (i == 0 || i == g - 1) ? 0.5 * h : h;

    const Eigen::MatrixXd& tx = truth.loadings_x[static_cast<std::size_t>(r)];
    const Eigen::MatrixXd& ty = truth.loadings_y[static_cast<std::size_t>(r)];
    double align = 0.0;
    for (int j = 0; j < tx.rows(); ++j)
        for (int i = 0; i < g; ++i) align += w[static_cast<std::size_t>(i)] * comp.loadings_x(j, i) * tx(j, i);
    for (int m = 0; m < ty.rows(); ++m)
        for (int i = 0; i < g; ++i) align += w[static_cast<std::size_t>(i)] * comp.loadings_y(m, i) * ty(m, i);
    const double s = align < 0.0 ? -1.0 : 1.0;

    OracleReport out;
    auto side = [&](const Eigen::MatrixXd& est, const Eigen::MatrixXd& tru,
                    const std::vector<int>& support, double& err, double& fpr, double& fnr) {
        const int p = static_cast<int>(tru.rows());
        std::vector<bool> active(static_cast<std::size_t>(p), false);
        for (int j : support) active[static_cast<std::size_t>(j)] = true;
        int fp = 0, fn = 0;
        for (int j = 0; j < p; ++j) {
            double sq = 0.0, norm2 = 0.0;
            for (int i = 0; i < g; ++i) {
                const double e = s * est(j, i);
                const double d = e - tru(j, i);
                sq += w[static_cast<std::size_t>(i)] * d * d;
                norm2 += w[static_cast<std::size_t>(i)] * e * e;
            }
            err += sq;
            const bool selected = std::sqrt(norm2) > 1e-10;
            if (active[static_cast<std::size_t>(j)] && !selected) ++fn;
            if (!active[static_cast<std::size_t>(j)] && selected) ++fp;
        }
        const int n_active = static_cast<int>(support.size());
        const int n_inactive = p - n_active;
        fpr = n_inactive > 0 ? 100.0 * static_cast<double>(fp) / static_cast<double>(n_inactive) : 0.0;
        fnr = n_active > 0 ? 100.0 * static_cast<double>(fn) / static_cast<double>(n_active) : 0.0;
    };
    side(comp.loadings_x, tx, truth.support_x, out.error_x, out.fpr_x, out.fnr_x);
    side(comp.loadings_y, ty, truth.support_y, out.error_y, out.fpr_y, out.fnr_y);

    const auto n = static_cast<std::size_t>(truth.scores_x.rows());
    std::vector<double> zx(n), zy(n), ex(n), ey(n);
    for (std::size_t i = 0; i < n; ++i) {
        zx[i] = truth.scores_x(static_cast<int>(i), r);
        zy[i] = truth.scores_y(static_cast<int>(i), r);
        ex[i] = s * comp.scores_x[static_cast<int>(i)];
        ey[i] = s * comp.scores_y[static_cast<int>(i)];
    }
    out.corr_x = oracle_pearson(zx, ex);
    out.corr_y = oracle_pearson(zy, ey);
    return out;
}

facd::CanonicalComponent component_from_truth(const facd::GroundTruth& truth, int r) {
    facd::CanonicalComponent comp;
    comp.rank_index = r;
    comp.loadings_x = truth.loadings_x[static_cast<std::size_t>(r)];
    comp.loadings_y = truth.loadings_y[static_cast<std::size_t>(r)];
    comp.scores_x = truth.scores_x.col(r);
    comp.scores_y = truth.scores_y.col(r);
    comp.support_x = truth.support_x;
    comp.support_y = truth.support_y;
    return comp;
}

facd::SimulationConfig tiny_config() {
    facd::SimulationConfig config;
    config.n_subjects = 30;
    config.p = 6;
    config.q = 5;
    config.rank = 2;
    config.n_active_x = 3;
    config.n_active_y = 3;
    config.n_basis = 4;
    config.noise_sd = 0.4;
    config.seed = 7;
    return config;
}

}  // namespace

TEST_CASE("perfect estimate reports zero error and unit correlations", "[metrics]") {
    const facd::SimulatedData sim = facd::generate(tiny_config());
    const facd::CanonicalComponent comp = component_from_truth(sim.truth, 1);
    const facd::EvaluationReport report = facd::evaluate(comp, sim.truth, 1);
    REQUIRE(report.rank_index == 1);
    REQUIRE(report.loading_error_x == 0.0);
    REQUIRE(report.loading_error_y == 0.0);
    REQUIRE(report.fpr_x == 0.0);
    REQUIRE(report.fpr_y == 0.0);
    REQUIRE(report.fnr_x == 0.0);
    REQUIRE(report.fnr_y == 0.0);
    REQUIRE(report.score_corr_x == Catch::Approx(1.0).margin(1e-12));
    REQUIRE(report.score_corr_y == Catch::Approx(1.0).margin(1e-12));
}

TEST_CASE("all-zero estimate misses every active feature", "[metrics]") {
    const facd::SimulatedData sim = facd::generate(tiny_config());
    const int g = sim.truth.grid.size();
    facd::CanonicalComponent comp;
    comp.loadings_x = Eigen::MatrixXd::Zero(6, g);
    comp.loadings_y = Eigen::MatrixXd::Zero(5, g);
    comp.scores_x = Eigen::VectorXd::Zero(30);
    comp.scores_y = Eigen::VectorXd::Zero(30);
    comp.zero_component = true;
    const facd::EvaluationReport report = facd::evaluate(comp, sim.truth, 0);
    REQUIRE(report.fnr_x == 100.0);
    REQUIRE(report.fnr_y == 100.0);
    REQUIRE(report.fpr_x == 0.0);
    REQUIRE(report.fpr_y == 0.0);
    REQUIRE(report.score_corr_x == 0.0);
    REQUIRE(report.score_corr_y == 0.0);

    // Error reduces to the total squared size of the planted curves.
    double expected = 0.0;
    for (int j = 0; j < 6; ++j)
        expected += sim.truth.grid.inner(sim.truth.loadings_x[0].row(j),
                                         sim.truth.loadings_x[0].row(j));
    REQUIRE(report.loading_error_x == Catch::Approx(expected).epsilon(1e-12));
}

TEST_CASE("hand-assembled two-feature case matches worked arithmetic", "[metrics]") {
    facd::GroundTruth truth;
    truth.grid = facd::Grid(3);
    truth.loadings_x = {(Eigen::MatrixXd(2, 3) << 1, 1, 1, 0, 0, 0).finished()};
    truth.loadings_y = {(Eigen::MatrixXd(2, 3) << 2, 2, 2, 0, 0, 0).finished()};
    truth.coefficients_x = {Eigen::MatrixXd::Zero(2, 1)};  // only rank() uses this here
    truth.coefficients_y = {Eigen::MatrixXd::Zero(2, 1)};
    truth.support_x = {0};
    truth.support_y = {0};
    truth.scores_x = (Eigen::MatrixXd(4, 1) << 1, 2, 3, 4).finished();
    truth.scores_y = (Eigen::MatrixXd(4, 1) << 2, 1, 4, 3).finished();

    facd::CanonicalComponent comp;
    comp.loadings_x = (Eigen::MatrixXd(2, 3) << 0.5, 0.5, 0.5, 0.1, 0.1, 0.1).finished();
    comp.loadings_y = (Eigen::MatrixXd(2, 3) << 1, 1, 1, 0, 0, 0).finished();
    comp.scores_x = (Eigen::VectorXd(4) << 1, 2, 3, 5).finished();
    comp.scores_y = (Eigen::VectorXd(4) << 2, 1, 4, 3).finished();

    const facd::EvaluationReport report = facd::evaluate(comp, truth, 0);
    // err_x = (1 - 0.5)^2 + (0 - 0.1)^2 = 0.26, err_y = (2 - 1)^2 = 1.
    REQUIRE(report.loading_error_x == Catch::Approx(0.26).margin(1e-14));
    REQUIRE(report.loading_error_y == Catch::Approx(1.0).margin(1e-14));
    // Feature 2 on the X side is a false positive; the single active feature
    // on each side is recovered.
    REQUIRE(report.fpr_x == 100.0);
    REQUIRE(report.fnr_x == 0.0);
    REQUIRE(report.fpr_y == 0.0);
    REQUIRE(report.fnr_y == 0.0);
    REQUIRE(report.score_corr_x == Catch::Approx(6.5 / std::sqrt(43.75)).margin(1e-14));
    REQUIRE(report.score_corr_y == Catch::Approx(1.0).margin(1e-14));
}

TEST_CASE("joint sign flip leaves the report unchanged", "[metrics]") {
    const facd::SimulatedData sim = facd::generate(tiny_config());
    facd::CanonicalComponent comp = component_from_truth(sim.truth, 0);
    // Perturb so the estimate is not exactly the truth.
    comp.loadings_x.array() += 0.05;
    comp.loadings_y.array() -= 0.03;
    const facd::EvaluationReport base = facd::evaluate(comp, sim.truth, 0);

    facd::CanonicalComponent flipped = comp;
    flipped.loadings_x = -comp.loadings_x;
    flipped.loadings_y = -comp.loadings_y;
    flipped.scores_x = -comp.scores_x;
    flipped.scores_y = -comp.scores_y;
    const facd::EvaluationReport mirrored = facd::evaluate(flipped, sim.truth, 0);

    REQUIRE(mirrored.loading_error_x == base.loading_error_x);
    REQUIRE(mirrored.loading_error_y == base.loading_error_y);
    REQUIRE(mirrored.fpr_x == base.fpr_x);
    REQUIRE(mirrored.fnr_x == base.fnr_x);
    REQUIRE(mirrored.fpr_y == base.fpr_y);
    REQUIRE(mirrored.fnr_y == base.fnr_y);
    REQUIRE(mirrored.score_corr_x == base.score_corr_x);
    REQUIRE(mirrored.score_corr_y == base.score_corr_y);
}

TEST_CASE("consistent feature permutation leaves metrics unchanged", "[metrics]") {
    const facd::SimulatedData sim = facd::generate(tiny_config());
    facd::CanonicalComponent comp = component_from_truth(sim.truth, 0);
    comp.loadings_x.array() += 0.02;
    const facd::EvaluationReport base = facd::evaluate(comp, sim.truth, 0);

    const std::vector<int> perm_x = {4, 2, 0, 5, 1, 3};
    const std::vector<int> perm_y = {3, 0, 4, 1, 2};
    facd::GroundTruth truth = sim.truth;
    facd::CanonicalComponent shuffled = comp;
    for (int j = 0; j < 6; ++j) {
        truth.loadings_x[0].row(perm_x[static_cast<std::size_t>(j)]) = sim.truth.loadings_x[0].row(j);
        shuffled.loadings_x.row(perm_x[static_cast<std::size_t>(j)]) = comp.loadings_x.row(j);
    }
    for (int m = 0; m < 5; ++m) {
        truth.loadings_y[0].row(perm_y[static_cast<std::size_t>(m)]) = sim.truth.loadings_y[0].row(m);
        shuffled.loadings_y.row(perm_y[static_cast<std::size_t>(m)]) = comp.loadings_y.row(m);
    }
    truth.support_x.clear();
    for (int j : sim.truth.support_x) truth.support_x.push_back(perm_x[static_cast<std::size_t>(j)]);
    truth.support_y.clear();
    for (int m : sim.truth.support_y) truth.support_y.push_back(perm_y[static_cast<std::size_t>(m)]);

    const facd::EvaluationReport moved = facd::evaluate(shuffled, truth, 0);
    REQUIRE(moved.loading_error_x == Catch::Approx(base.loading_error_x).epsilon(1e-12));
    REQUIRE(moved.loading_error_y == Catch::Approx(base.loading_error_y).epsilon(1e-12));
    REQUIRE(moved.fpr_x == base.fpr_x);
    REQUIRE(moved.fnr_x == base.fnr_x);
    REQUIRE(moved.fpr_y == base.fpr_y);
    REQUIRE(moved.fnr_y == base.fnr_y);
    REQUIRE(moved.score_corr_x == base.score_corr_x);
    REQUIRE(moved.score_corr_y == base.score_corr_y);
}

TEST_CASE("degenerate supports fall back to zero rates", "[metrics]") {
    facd::GroundTruth truth;
    truth.grid = facd::Grid(3);
    truth.loadings_x = {Eigen::MatrixXd::Ones(2, 3)};
    truth.loadings_y = {Eigen::MatrixXd::Ones(2, 3)};
    truth.coefficients_x = {Eigen::MatrixXd::Zero(2, 1)};
    truth.coefficients_y = {Eigen::MatrixXd::Zero(2, 1)};
    truth.support_x = {0, 1};  // every feature active: no false positives possible
    truth.support_y = {};      // none active: no false negatives possible
    truth.scores_x = Eigen::MatrixXd::Ones(3, 1);
    truth.scores_y = Eigen::MatrixXd::Ones(3, 1);

    facd::CanonicalComponent comp;
    comp.loadings_x = Eigen::MatrixXd::Ones(2, 3);
    comp.loadings_y = Eigen::MatrixXd::Ones(2, 3);
    comp.scores_x = Eigen::VectorXd::Ones(3);
    comp.scores_y = Eigen::VectorXd::Ones(3);

    const facd::EvaluationReport report = facd::evaluate(comp, truth, 0);
    REQUIRE(report.fpr_x == 0.0);
    REQUIRE(report.fnr_x == 0.0);
    REQUIRE(report.fpr_y == 100.0);  // everything selected, nothing planted
    REQUIRE(report.fnr_y == 0.0);
}

TEST_CASE("report matches the independent oracle on a fitted model", "[metrics][slow]") {
    facd::SimulationConfig sim_config;  // reference scale: n=200, p=q=100
    sim_config.seed = 11;
    const facd::SimulatedData sim = facd::generate(sim_config);

    facd::RunConfig config;
    config.n_components = 2;
    config.kernel_basis_dim = 6;
    config.gcv_grid_size = 10;
    config.rho_grid_size = 2;
    config.cv_folds = 3;
    config.seed = 11;
    const facd::FacdModel model = facd::fit(sim.x, sim.y, config);
    REQUIRE(model.grid == sim.truth.grid);

    for (int r = 0; r < 2; ++r) {
        const facd::EvaluationReport report = facd::evaluate(model.components[static_cast<std::size_t>(r)], sim.truth, r);
        const OracleReport oracle = oracle_evaluate(model.components[static_cast<std::size_t>(r)], sim.truth, r);
        REQUIRE(report.rank_index == r);
        REQUIRE(report.loading_error_x == Catch::Approx(oracle.error_x).margin(1e-10));
        REQUIRE(report.loading_error_y == Catch::Approx(oracle.error_y).margin(1e-10));
        REQUIRE(report.fpr_x == oracle.fpr_x);
        REQUIRE(report.fpr_y == oracle.fpr_y);
        REQUIRE(report.fnr_x == oracle.fnr_x);
        REQUIRE(report.fnr_y == oracle.fnr_y);
        REQUIRE(report.score_corr_x == Catch::Approx(oracle.corr_x).margin(1e-10));
        REQUIRE(report.score_corr_y == Catch::Approx(oracle.corr_y).margin(1e-10));
    }
}

TEST_CASE("evaluation rejects mismatched shapes and ranks", "[metrics]") {
    const facd::SimulatedData sim = facd::generate(tiny_config());
    const facd::CanonicalComponent comp = component_from_truth(sim.truth, 0);
    REQUIRE_THROWS_AS(facd::evaluate(comp, sim.truth, -1), facd::InvalidInputError);
    REQUIRE_THROWS_AS(facd::evaluate(comp, sim.truth, sim.truth.rank()), facd::InvalidInputError);

    facd::CanonicalComponent short_rows = comp;
    short_rows.loadings_x = comp.loadings_x.topRows(4);
    REQUIRE_THROWS_AS(facd::evaluate(short_rows, sim.truth, 0), facd::InvalidInputError);

    facd::CanonicalComponent short_grid = comp;
    short_grid.loadings_y = comp.loadings_y.leftCols(10);
    REQUIRE_THROWS_AS(facd::evaluate(short_grid, sim.truth, 0), facd::InvalidInputError);

    facd::CanonicalComponent short_scores = comp;
    short_scores.scores_x = comp.scores_x.head(5);
    REQUIRE_THROWS_AS(facd::evaluate(short_scores, sim.truth, 0), facd::InvalidInputError);
}
