#pragma once

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <CLI11.hpp>

#include "facd/io.hpp"
#include "facd/metrics.hpp"
#include "facd/pipeline.hpp"
#include "facd/simulate.hpp"

namespace facd {
namespace detail {

/// Reorders dataset features to match the order recorded in a fitted model;
/// new data files may list the same features in any order.
inline void align_features(LongitudinalDataset& data, const std::vector<std::string>& expected,
                           const std::string& side) {
    if (expected.empty()) return;
    if (data.feature_names.empty()) {
        if (data.n_features != static_cast<int>(expected.size()))
            throw InvalidInputError("dataset '" + side + "' has " +
                                    std::to_string(data.n_features) + " features; model expects " +
                                    std::to_string(expected.size()));
        return;
    }
    if (data.feature_names.size() != expected.size())
        throw InvalidInputError("dataset '" + side + "' has " +
                                std::to_string(data.feature_names.size()) +
                                " features; model expects " + std::to_string(expected.size()));
    std::unordered_map<std::string, int> position;
    for (std::size_t k = 0; k < expected.size(); ++k)
        position.emplace(expected[k], static_cast<int>(k));
    std::vector<int> dest(data.feature_names.size());
    for (std::size_t j = 0; j < data.feature_names.size(); ++j) {
        const auto it = position.find(data.feature_names[j]);
        if (it == position.end())
            throw InvalidInputError("feature '" + data.feature_names[j] +
                                    "' was not present when the model was fitted");
        dest[j] = it->second;
    }
    bool already_ordered = true;
    for (std::size_t j = 0; j < dest.size(); ++j)
        already_ordered = already_ordered && dest[j] == static_cast<int>(j);
    if (already_ordered) return;

    for (auto& subject : data.observations)
        for (Observation& obs : subject) {
            Eigen::VectorXd values = Eigen::VectorXd::Zero(data.n_features);
            std::vector<std::uint8_t> mask(static_cast<std::size_t>(data.n_features), 0);
            for (int j = 0; j < data.n_features; ++j) {
                values[dest[static_cast<std::size_t>(j)]] = obs.missing(j) ? 0.0 : obs.values[j];
                mask[static_cast<std::size_t>(dest[static_cast<std::size_t>(j)])] =
                    obs.missing(j) ? 1 : 0;
            }
            bool any_missing = false;
            for (const std::uint8_t m : mask) any_missing = any_missing || m != 0;
            obs.values = std::move(values);
            if (any_missing)
                obs.mask = std::move(mask);
            else
                obs.mask.clear();
        }
    data.feature_names = expected;
}

inline ComponentScores training_scores(const FacdModel& model) {
    ComponentScores scores;
    const auto n = static_cast<Eigen::Index>(model.subject_ids.size());
    scores.x.resize(n, model.n_components());
    scores.y.resize(n, model.n_components());
    for (int r = 0; r < model.n_components(); ++r) {
        scores.x.col(r) = model.components[static_cast<std::size_t>(r)].scores_x;
        scores.y.col(r) = model.components[static_cast<std::size_t>(r)].scores_y;
    }
    return scores;
}

// Minimal static SVG rendering; enough to eyeball curves and score clouds.

inline const std::vector<std::string>& svg_palette() {
    static const std::vector<std::string> palette = {
        "#1b6ca8", "#d1495b", "#2e933c", "#e08d18", "#6f42c1",
        "#17a2b8", "#8b5e34", "#c2185b", "#5d6d7e", "#3f51b5"};
    return palette;
}

inline std::string svg_num(double v) {
    char buffer[32];
    std::snprintf(buffer, sizeof(buffer), "%.2f", v);
    return std::string(buffer);
}

inline std::string svg_label(double v) {
    char buffer[32];
    std::snprintf(buffer, sizeof(buffer), "%.3g", v);
    return std::string(buffer);
}

struct SvgFrame {
    double x0 = 60.0, x1 = 620.0, y0 = 380.0, y1 = 20.0;
    double v_min = 0.0, v_max = 1.0, t_min = 0.0, t_max = 1.0;

    double map_t(double t) const { return x0 + (t - t_min) / (t_max - t_min) * (x1 - x0); }
    double map_v(double v) const { return y0 + (v - v_min) / (v_max - v_min) * (y1 - y0); }
};

inline void svg_open(std::ofstream& out, const std::string& title, SvgFrame& frame) {
    if (frame.v_max <= frame.v_min) {
        frame.v_min -= 1.0;
        frame.v_max += 1.0;
    } else {
        const double pad = 0.05 * (frame.v_max - frame.v_min);
        frame.v_min -= pad;
        frame.v_max += pad;
    }
    if (frame.t_max <= frame.t_min) {
        frame.t_min -= 1.0;
        frame.t_max += 1.0;
    }
    out << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
        << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"640\" height=\"420\" "
           "viewBox=\"0 0 640 420\">\n"
        << "<rect width=\"640\" height=\"420\" fill=\"white\"/>\n"
        << "<text x=\"320\" y=\"14\" text-anchor=\"middle\" font-family=\"sans-serif\" "
           "font-size=\"13\">"
        << title << "</text>\n"
        << "<rect x=\"" << svg_num(frame.x0) << "\" y=\"" << svg_num(frame.y1) << "\" width=\""
        << svg_num(frame.x1 - frame.x0) << "\" height=\"" << svg_num(frame.y0 - frame.y1)
        << "\" fill=\"none\" stroke=\"#333333\"/>\n";
    for (int k = 0; k <= 4; ++k) {
        const double ft = static_cast<double>(k) / 4.0;
        const double t = frame.t_min + ft * (frame.t_max - frame.t_min);
        const double v = frame.v_min + ft * (frame.v_max - frame.v_min);
        out << "<text x=\"" << svg_num(frame.map_t(t)) << "\" y=\"398\" text-anchor=\"middle\" "
            << "font-family=\"sans-serif\" font-size=\"10\">" << svg_label(t) << "</text>\n"
            << "<text x=\"" << svg_num(frame.x0 - 6.0) << "\" y=\"" << svg_num(frame.map_v(v) + 3.0)
            << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"10\">" << svg_label(v)
            << "</text>\n";
    }
}

inline void plot_curves(const std::string& title,
                        const std::vector<std::vector<std::pair<double, double>>>& series,
                        const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open '" + path + "' for writing");
    SvgFrame frame;
    bool first = true;
    for (const auto& curve : series)
        for (const auto& [t, v] : curve) {
            if (first) {
                frame.t_min = frame.t_max = t;
                frame.v_min = frame.v_max = v;
                first = false;
            }
            frame.t_min = std::min(frame.t_min, t);
            frame.t_max = std::max(frame.t_max, t);
            frame.v_min = std::min(frame.v_min, v);
            frame.v_max = std::max(frame.v_max, v);
        }
    svg_open(out, title, frame);
    const auto& palette = svg_palette();
    for (std::size_t s = 0; s < series.size(); ++s) {
        out << "<polyline fill=\"none\" stroke=\"" << palette[s % palette.size()]
            << "\" stroke-width=\"1.2\" points=\"";
        for (const auto& [t, v] : series[s])
            out << svg_num(frame.map_t(t)) << ',' << svg_num(frame.map_v(v)) << ' ';
        out << "\"/>\n";
    }
    out << "</svg>\n";
    if (!out) throw IoError("failed while writing '" + path + "'");
}

inline void plot_scatter(const std::string& title,
                         const std::vector<std::pair<double, double>>& points,
                         const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open '" + path + "' for writing");
    SvgFrame frame;
    bool first = true;
    for (const auto& [x, y] : points) {
        if (first) {
            frame.t_min = frame.t_max = x;
            frame.v_min = frame.v_max = y;
            first = false;
        }
        frame.t_min = std::min(frame.t_min, x);
        frame.t_max = std::max(frame.t_max, x);
        frame.v_min = std::min(frame.v_min, y);
        frame.v_max = std::max(frame.v_max, y);
    }
    if (frame.t_max <= frame.t_min) {
        frame.t_min -= 1.0;
        frame.t_max += 1.0;
    } else {
        const double pad = 0.05 * (frame.t_max - frame.t_min);
        frame.t_min -= pad;
        frame.t_max += pad;
    }
    svg_open(out, title, frame);
    for (const auto& [x, y] : points)
        out << "<circle cx=\"" << svg_num(frame.map_t(x)) << "\" cy=\"" << svg_num(frame.map_v(y))
            << "\" r=\"3\" fill=\"" << svg_palette()[0] << "\" fill-opacity=\"0.7\"/>\n";
    out << "</svg>\n";
    if (!out) throw IoError("failed while writing '" + path + "'");
}

inline std::vector<std::vector<std::string>> read_csv_rows(const std::string& path,
                                                           const std::string& expected_header) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open '" + path + "' for reading");
    std::string line;
    if (!std::getline(in, line) || trim(line) != expected_header)
        throw IoError("'" + path + "': expected header " + expected_header);
    std::vector<std::vector<std::string>> rows;
    while (std::getline(in, line)) {
        if (trim(line).empty()) continue;
        rows.push_back(split_fields(line));
    }
    return rows;
}

inline void run_plot(const std::string& loadings_csv, const std::string& scores_csv,
                     const std::string& out_dir) {
    namespace fs = std::filesystem;
    if (loadings_csv.empty() && scores_csv.empty())
        throw InvalidInputError("plot needs --loadings and/or --scores");
    fs::create_directories(out_dir);

    if (!loadings_csv.empty()) {
        const auto rows = read_csv_rows(loadings_csv, "side,component,feature,time,value");
        // (side, component) -> feature -> curve, orders preserved
        std::map<std::pair<std::string, std::string>, std::vector<std::string>> order;
        std::map<std::pair<std::string, std::string>,
                 std::map<std::string, std::vector<std::pair<double, double>>>>
            curves;
        for (const auto& row : rows) {
            if (row.size() != 5) throw IoError("'" + loadings_csv + "': malformed row");
            double t = 0.0, v = 0.0;
            if (!parse_double(row[3], t) || !parse_double(row[4], v))
                throw IoError("'" + loadings_csv + "': malformed numeric field");
            const auto key = std::make_pair(row[0], row[1]);
            auto& group = curves[key];
            if (group.find(row[2]) == group.end()) order[key].push_back(row[2]);
            group[row[2]].emplace_back(t, v);
        }
        for (const auto& [key, group] : curves) {
            std::vector<std::vector<std::pair<double, double>>> series;
            for (const std::string& name : order[key]) series.push_back(group.at(name));
            const std::string name = "loadings_" + key.first + "_c" + key.second + ".svg";
            plot_curves("component " + key.second + " loadings, side " + key.first, series,
                        (fs::path(out_dir) / name).string());
        }
    }

    if (!scores_csv.empty()) {
        const auto rows = read_csv_rows(scores_csv, "subject,component,score_x,score_y");
        std::map<std::string, std::vector<std::pair<double, double>>> clouds;
        for (const auto& row : rows) {
            if (row.size() != 4) throw IoError("'" + scores_csv + "': malformed row");
            double sx = 0.0, sy = 0.0;
            if (!parse_double(row[2], sx) || !parse_double(row[3], sy))
                throw IoError("'" + scores_csv + "': malformed numeric field");
            clouds[row[1]].emplace_back(sx, sy);
        }
        for (const auto& [component, points] : clouds)
            plot_scatter("component " + component + " scores",
                         points, (fs::path(out_dir) / ("scores_c" + component + ".svg")).string());
    }
}

}  // namespace detail

/// Entry point behind the command line binary; returns the process exit
/// code (0 success, 1 user error, 2 internal error).
inline int run_cli(const std::vector<std::string>& args) {
    namespace fs = std::filesystem;

    CLI::App app{"sparse time-varying cross-covariance decomposition for paired "
                 "longitudinal datasets"};
    app.name("facd");
    app.require_subcommand(1);

    SimulationConfig sim_config;
    std::string sim_out;
    std::vector<double> sim_fixed_times;
    CLI::App* sim_cmd = app.add_subcommand("simulate", "generate a synthetic paired dataset");
    sim_cmd->add_option("--out", sim_out, "output directory")->required();
    sim_cmd->add_option("--subjects", sim_config.n_subjects, "number of subjects");
    sim_cmd->add_option("--p", sim_config.p, "features in the first dataset");
    sim_cmd->add_option("--q", sim_config.q, "features in the second dataset");
    sim_cmd->add_option("--rank", sim_config.rank, "number of planted components");
    sim_cmd->add_option("--active-x", sim_config.n_active_x, "active features, first dataset");
    sim_cmd->add_option("--active-y", sim_config.n_active_y, "active features, second dataset");
    sim_cmd->add_option("--n-basis", sim_config.n_basis, "polynomial basis size for loadings");
    sim_cmd->add_option("--visits-min", sim_config.n_min, "minimum visits per subject");
    sim_cmd->add_option("--visits-max", sim_config.n_max, "maximum visits per subject");
    sim_cmd->add_option("--noise-sd", sim_config.noise_sd, "noise standard deviation");
    sim_cmd->add_option("--decay-base", sim_config.decay_base, "cross-covariance decay base");
    sim_cmd->add_option("--decay-exponent", sim_config.decay_exponent,
                        "cross-covariance power-law exponent");
    sim_cmd->add_option("--variance-exponent", sim_config.variance_exponent,
                        "score variance power-law exponent");
    sim_cmd->add_option("--noise-rank", sim_config.noise_rank, "noise factor rank");
    sim_cmd->add_option("--ar", sim_config.ar_coefficient, "noise autocorrelation across visits");
    sim_cmd->add_option("--fixed-times", sim_fixed_times, "shared visit times for every subject")
        ->delimiter(',');
    sim_cmd->add_option("--grid-size", sim_config.grid_size, "evaluation grid size");
    sim_cmd->add_option("--seed", sim_config.seed, "random seed");

    RunConfig run_config;
    std::string fit_x, fit_y, fit_out, fit_loadings, fit_scores;
    CLI::App* fit_cmd = app.add_subcommand("fit", "estimate the decomposition from two CSVs");
    fit_cmd->add_option("--x", fit_x, "first dataset CSV")->required();
    fit_cmd->add_option("--y", fit_y, "second dataset CSV")->required();
    fit_cmd->add_option("--out", fit_out, "output model file")->required();
    fit_cmd->add_option("--loadings", fit_loadings, "optional loading curves CSV");
    fit_cmd->add_option("--scores", fit_scores, "optional training scores CSV");
    fit_cmd->add_option("--components", run_config.n_components, "components to extract");
    fit_cmd->add_option("--mean-dim", run_config.mean_basis_dim, "mean smoothing basis size");
    fit_cmd->add_option("--kernel-dim", run_config.kernel_basis_dim, "kernel smoothing basis size");
    fit_cmd->add_option("--spline-order", run_config.spline_order, "spline order");
    fit_cmd->add_option("--gcv-size", run_config.gcv_grid_size, "smoothing search grid size");
    fit_cmd->add_option("--gcv-min", run_config.gcv_grid_min, "smallest smoothing level");
    fit_cmd->add_option("--gcv-max", run_config.gcv_grid_max, "largest smoothing level");
    fit_cmd->add_option("--grid-size", run_config.grid_size, "evaluation grid size");
    fit_cmd->add_option("--kappa-threshold", run_config.kappa_threshold,
                        "retained eigenvalue share");
    fit_cmd->add_option("--kappa", run_config.kappa_override, "force the retained basis count");
    fit_cmd->add_option("--max-block-entries", run_config.max_block_entries,
                        "memory cap on the assembled block");
    fit_cmd->add_option("--folds", run_config.cv_folds, "cross-validation folds");
    fit_cmd->add_option("--rho-grid", run_config.rho_grid_size, "penalty grid size per side");
    fit_cmd->add_option("--rho-min-frac", run_config.rho_grid_min_frac,
                        "penalty grid lower fraction");
    fit_cmd->add_option("--rho-max-frac", run_config.rho_grid_max_frac,
                        "penalty grid upper fraction");
    fit_cmd->add_option("--rho-x", run_config.rho_x_override, "fixed penalty, first dataset");
    fit_cmd->add_option("--rho-y", run_config.rho_y_override, "fixed penalty, second dataset");
    fit_cmd->add_option("--tol", run_config.tol, "convergence tolerance");
    fit_cmd->add_option("--max-iter", run_config.max_iter, "iteration cap");
    fit_cmd->add_option("--seed", run_config.seed, "random seed");
    fit_cmd->add_flag("--standardize", run_config.standardize,
                      "z-score each feature before fitting");

    std::string scores_model, scores_x, scores_y, scores_out;
    CLI::App* scores_cmd = app.add_subcommand("scores", "project new subjects onto a model");
    scores_cmd->add_option("--model", scores_model, "fitted model file")->required();
    scores_cmd->add_option("--x", scores_x, "first dataset CSV")->required();
    scores_cmd->add_option("--y", scores_y, "second dataset CSV")->required();
    scores_cmd->add_option("--out", scores_out, "output scores CSV")->required();

    std::string eval_model, eval_truth, eval_out, eval_replicate = "0", eval_label = "facd";
    CLI::App* eval_cmd = app.add_subcommand("evaluate", "compare a model against planted truth");
    eval_cmd->add_option("--model", eval_model, "fitted model file")->required();
    eval_cmd->add_option("--truth", eval_truth, "ground truth file")->required();
    eval_cmd->add_option("--out", eval_out, "output report CSV")->required();
    eval_cmd->add_option("--replicate", eval_replicate, "replicate label for the report rows");
    eval_cmd->add_option("--label", eval_label, "configuration label for the report rows");

    std::string net_model, net_out;
    CLI::App* net_cmd = app.add_subcommand("network", "export feature-pair correlations");
    net_cmd->add_option("--model", net_model, "fitted model file")->required();
    net_cmd->add_option("--out", net_out, "output edge list CSV")->required();

    std::string plot_loadings, plot_scores, plot_dir;
    CLI::App* plot_cmd = app.add_subcommand("plot", "render loading/score CSVs as SVG files");
    plot_cmd->add_option("--loadings", plot_loadings, "loading curves CSV");
    plot_cmd->add_option("--scores", plot_scores, "scores CSV");
    plot_cmd->add_option("--out-dir", plot_dir, "directory for the SVG files")->required();

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    }

    try {
        if (sim_cmd->parsed()) {
            sim_config.fixed_times = sim_fixed_times;
            sim_config.validate();
            const SimulatedData sim = generate(sim_config);
            fs::create_directories(sim_out);
            write_long_csv(sim.x, (fs::path(sim_out) / "x.csv").string());
            write_long_csv(sim.y, (fs::path(sim_out) / "y.csv").string());
            save_truth(sim.truth, (fs::path(sim_out) / "truth.json").string());
        } else if (fit_cmd->parsed()) {
            const IngestedPair pair = ingest_pair(fit_x, fit_y);
            const FacdModel model = fit(pair.x, pair.y, run_config);
            for (const std::string& warning : model.warnings)
                std::cerr << "warning: " << warning << '\n';
            save_model(model, pair.mapping, fit_out);
            if (!fit_loadings.empty()) write_loadings_csv(model, fit_loadings);
            if (!fit_scores.empty())
                write_scores_csv(model.subject_ids, detail::training_scores(model), fit_scores);
        } else if (scores_cmd->parsed()) {
            const StoredModel stored = load_model(scores_model);
            LongitudinalDataset data_x = ingest_with_mapping(scores_x, "x", stored.mapping);
            LongitudinalDataset data_y = ingest_with_mapping(scores_y, "y", stored.mapping);
            detail::align_features(data_x, stored.model.feature_names_x, "x");
            detail::align_features(data_y, stored.model.feature_names_y, "y");
            const ComponentScores result = scores(stored.model, data_x, data_y);
            write_scores_csv(data_x.subject_ids, result, scores_out);
        } else if (eval_cmd->parsed()) {
            const StoredModel stored = load_model(eval_model);
            const GroundTruth truth = load_truth(eval_truth);
            const int n_eval = std::min(stored.model.n_components(), truth.rank());
            std::vector<EvaluationReport> reports;
            for (int r = 0; r < n_eval; ++r)
                reports.push_back(
                    evaluate(stored.model.components[static_cast<std::size_t>(r)], truth, r));
            write_report_csv(reports, eval_replicate, eval_label, eval_out);
        } else if (net_cmd->parsed()) {
            const StoredModel stored = load_model(net_model);
            write_network_csv(stored.model, net_out);
        } else if (plot_cmd->parsed()) {
            detail::run_plot(plot_loadings, plot_scores, plot_dir);
        }
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << '\n';
        return 2;
    }
    return 0;
}

inline int run_cli(int argc, char** argv) {
    std::vector<std::string> args;
    for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
    return run_cli(args);
}

}  // namespace facd
