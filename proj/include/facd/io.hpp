#pragma once

#include <charconv>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "facd/data.hpp"
#include "facd/errors.hpp"
#include "facd/metrics.hpp"
#include "facd/pipeline.hpp"
#include "facd/simulate.hpp"

namespace facd {

/// Shared affine map taking raw observation times onto [0, 1]:
/// t -> (t - offset) / scale. Fitted once from the pooled range of both
/// input files and reused verbatim when scoring new data.
struct TimeMapping {
    double offset = 0.0;
    double scale = 1.0;

    bool identity() const { return offset == 0.0 && scale == 1.0; }
    double apply(double t) const { return (t - offset) / scale; }
};

struct IngestedPair {
    LongitudinalDataset x;
    LongitudinalDataset y;
    TimeMapping mapping;
};

namespace detail {

inline std::string format_double(double value) {
    char buffer[32];
    const auto result = std::to_chars(buffer, buffer + sizeof(buffer), value);
    return std::string(buffer, result.ptr);
}

inline bool parse_double(const std::string& text, double& out) {
    const char* first = text.data();
    const char* last = text.data() + text.size();
    const auto result = std::from_chars(first, last, out);
    return result.ec == std::errc() && result.ptr == last;
}

inline std::string trim(const std::string& text) {
    std::size_t begin = 0;
    std::size_t end = text.size();
    while (begin < end && (text[begin] == ' ' || text[begin] == '\t')) ++begin;
    while (end > begin && (text[end - 1] == ' ' || text[end - 1] == '\t' || text[end - 1] == '\r'))
        --end;
    return text.substr(begin, end - begin);
}

inline std::vector<std::string> split_fields(const std::string& line) {
    std::vector<std::string> fields;
    std::size_t start = 0;
    while (true) {
        const std::size_t comma = line.find(',', start);
        if (comma == std::string::npos) {
            fields.push_back(trim(line.substr(start)));
            break;
        }
        fields.push_back(trim(line.substr(start, comma - start)));
        start = comma + 1;
    }
    return fields;
}

// Parsed long table with raw (unmapped) times, orders preserved as seen.
struct RawLongTable {
    std::vector<std::string> subjects;
    std::vector<std::string> features;
    // per subject: time -> (feature index -> value)
    std::vector<std::map<double, std::map<int, double>>> visits;
    double t_min = std::numeric_limits<double>::infinity();
    double t_max = -std::numeric_limits<double>::infinity();
};

inline RawLongTable read_long_table(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open '" + path + "' for reading");

    RawLongTable table;
    std::unordered_map<std::string, std::size_t> subject_index;
    std::unordered_map<std::string, int> feature_index;

    std::string line;
    long row = 0;
    if (!std::getline(in, line)) throw IoError("'" + path + "' is empty");
    ++row;
    {
        const std::vector<std::string> header = split_fields(line);
        if (header != std::vector<std::string>{"subject", "time", "feature", "value"})
            throw IoError("'" + path + "': expected header subject,time,feature,value");
    }

    while (std::getline(in, line)) {
        ++row;
        if (trim(line).empty()) continue;
        const std::vector<std::string> fields = split_fields(line);
        const std::string where = "'" + path + "' row " + std::to_string(row);
        if (fields.size() != 4) throw IoError(where + ": expected 4 comma-separated fields");
        if (fields[0].empty()) throw IoError(where + ": empty subject id");
        if (fields[2].empty()) throw IoError(where + ": empty feature name");
        double time = 0.0, value = 0.0;
        if (!parse_double(fields[1], time) || !std::isfinite(time))
            throw IoError(where + ": cannot parse time '" + fields[1] + "'");
        if (!parse_double(fields[3], value) || !std::isfinite(value))
            throw IoError(where + ": cannot parse value '" + fields[3] + "'");

        auto [sub_it, sub_new] = subject_index.try_emplace(fields[0], table.subjects.size());
        if (sub_new) {
            table.subjects.push_back(fields[0]);
            table.visits.emplace_back();
        }
        auto [feat_it, feat_new] =
            feature_index.try_emplace(fields[2], static_cast<int>(table.features.size()));
        if (feat_new) table.features.push_back(fields[2]);

        auto& visit = table.visits[sub_it->second][time];
        const auto [val_it, inserted] = visit.try_emplace(feat_it->second, value);
        if (!inserted && val_it->second != value)
            throw ConflictError(where + ": duplicate observation of feature '" + fields[2] +
                                "' for subject '" + fields[0] + "' with a different value");
        table.t_min = std::min(table.t_min, time);
        table.t_max = std::max(table.t_max, time);
    }
    if (table.subjects.empty()) throw IoError("'" + path + "' contains no observations");
    return table;
}

inline LongitudinalDataset assemble_dataset(const RawLongTable& table, const std::string& label,
                                            const TimeMapping& mapping) {
    LongitudinalDataset data;
    data.label = label;
    data.n_features = static_cast<int>(table.features.size());
    data.subject_ids = table.subjects;
    data.feature_names = table.features;
    data.observations.resize(table.subjects.size());
    for (std::size_t i = 0; i < table.subjects.size(); ++i) {
        for (const auto& [raw_time, featmap] : table.visits[i]) {
            const double t = mapping.apply(raw_time);
            if (t < 0.0 || t > 1.0)
                throw InvalidInputError("subject '" + table.subjects[i] + "': time " +
                                        format_double(raw_time) +
                                        " falls outside the fitted time range");
            Observation obs;
            obs.time = t;
            obs.values = Eigen::VectorXd::Zero(data.n_features);
            obs.mask.assign(static_cast<std::size_t>(data.n_features), 1);
            for (const auto& [j, value] : featmap) {
                obs.values[j] = value;
                obs.mask[static_cast<std::size_t>(j)] = 0;
            }
            bool any_missing = false;
            for (const std::uint8_t m : obs.mask) any_missing = any_missing || m != 0;
            if (!any_missing) obs.mask.clear();
            data.observations[i].push_back(std::move(obs));
        }
    }
    data.validate();
    return data;
}

}  // namespace detail

/// Reads two paired long-format CSVs and maps their pooled time range onto
/// [0, 1]. Times already inside the unit interval are passed through
/// unchanged so that writing and re-reading a dataset is exact.
inline IngestedPair ingest_pair(const std::string& path_x, const std::string& path_y) {
    const detail::RawLongTable raw_x = detail::read_long_table(path_x);
    const detail::RawLongTable raw_y = detail::read_long_table(path_y);
    const double t_min = std::min(raw_x.t_min, raw_y.t_min);
    const double t_max = std::max(raw_x.t_max, raw_y.t_max);

    TimeMapping mapping;
    if (t_min >= 0.0 && t_max <= 1.0) {
        // Already on the unit interval: do not stretch.
    } else if (t_max > t_min) {
        mapping.offset = t_min;
        mapping.scale = t_max - t_min;
    } else {
        throw IoError("all observation times are identical; cannot map onto [0, 1]");
    }

    IngestedPair pair;
    pair.mapping = mapping;
    pair.x = detail::assemble_dataset(raw_x, "x", mapping);
    pair.y = detail::assemble_dataset(raw_y, "y", mapping);
    return pair;
}

/// Reads one long-format CSV applying a previously fitted time mapping;
/// times that land outside [0, 1] under that mapping are rejected.
inline LongitudinalDataset ingest_with_mapping(const std::string& path, const std::string& label,
                                               const TimeMapping& mapping) {
    return detail::assemble_dataset(detail::read_long_table(path), label, mapping);
}

/// Writes a dataset in the long format read by ingest_pair. Values use the
/// shortest round-tripping decimal form, so read-back is bitwise exact.
inline void write_long_csv(const LongitudinalDataset& data, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open '" + path + "' for writing");
    out << "subject,time,feature,value\n";
    for (std::size_t i = 0; i < data.observations.size(); ++i) {
        for (const Observation& obs : data.observations[i]) {
            for (int j = 0; j < data.n_features; ++j) {
                if (obs.missing(j)) continue;
                const std::string name = data.feature_names.empty()
                                             ? "f" + std::to_string(j + 1)
                                             : data.feature_names[static_cast<std::size_t>(j)];
                out << data.subject_ids[i] << ',' << detail::format_double(obs.time) << ',' << name
                    << ',' << detail::format_double(obs.values[j]) << '\n';
            }
        }
    }
    if (!out) throw IoError("failed while writing '" + path + "'");
}

namespace detail {

using nlohmann::json;

inline json vec_to_json(const Eigen::VectorXd& v) {
    json out = json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v[i]);
    return out;
}

inline Eigen::VectorXd vec_from_json(const json& j) {
    Eigen::VectorXd v(static_cast<Eigen::Index>(j.size()));
    for (std::size_t i = 0; i < j.size(); ++i) v[static_cast<Eigen::Index>(i)] = j[i].get<double>();
    return v;
}

inline json mat_to_json(const Eigen::MatrixXd& m) {
    json rows = json::array();
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        json row = json::array();
        for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
        rows.push_back(std::move(row));
    }
    return rows;
}

inline Eigen::MatrixXd mat_from_json(const json& j, Eigen::Index cols_if_empty = 0) {
    const auto rows = static_cast<Eigen::Index>(j.size());
    if (rows == 0) return Eigen::MatrixXd(0, cols_if_empty);
    const auto cols = static_cast<Eigen::Index>(j[0].size());
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r)
        for (Eigen::Index c = 0; c < cols; ++c)
            m(r, c) = j[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)].get<double>();
    return m;
}

inline json config_to_json(const RunConfig& c) {
    json j;
    j["mean_basis_dim"] = c.mean_basis_dim;
    j["kernel_basis_dim"] = c.kernel_basis_dim;
    j["spline_order"] = c.spline_order;
    j["gcv_grid_size"] = c.gcv_grid_size;
    j["gcv_grid_min"] = c.gcv_grid_min;
    j["gcv_grid_max"] = c.gcv_grid_max;
    j["grid_size"] = c.grid_size;
    j["kappa_threshold"] = c.kappa_threshold;
    j["kappa_override"] = c.kappa_override;
    j["max_block_entries"] = c.max_block_entries;
    j["n_components"] = c.n_components;
    j["cv_folds"] = c.cv_folds;
    j["rho_grid_size"] = c.rho_grid_size;
    j["rho_grid_min_frac"] = c.rho_grid_min_frac;
    j["rho_grid_max_frac"] = c.rho_grid_max_frac;
    j["rho_x_override"] = c.rho_x_override;
    j["rho_y_override"] = c.rho_y_override;
    j["tol"] = c.tol;
    j["max_iter"] = c.max_iter;
    j["seed"] = c.seed;
    j["standardize"] = c.standardize;
    return j;
}

inline RunConfig config_from_json(const json& j) {
    RunConfig c;
    c.mean_basis_dim = j.at("mean_basis_dim").get<int>();
    c.kernel_basis_dim = j.at("kernel_basis_dim").get<int>();
    c.spline_order = j.at("spline_order").get<int>();
    c.gcv_grid_size = j.at("gcv_grid_size").get<int>();
    c.gcv_grid_min = j.at("gcv_grid_min").get<double>();
    c.gcv_grid_max = j.at("gcv_grid_max").get<double>();
    c.grid_size = j.at("grid_size").get<int>();
    c.kappa_threshold = j.at("kappa_threshold").get<double>();
    c.kappa_override = j.at("kappa_override").get<int>();
    c.max_block_entries = j.at("max_block_entries").get<double>();
    c.n_components = j.at("n_components").get<int>();
    c.cv_folds = j.at("cv_folds").get<int>();
    c.rho_grid_size = j.at("rho_grid_size").get<int>();
    c.rho_grid_min_frac = j.at("rho_grid_min_frac").get<double>();
    c.rho_grid_max_frac = j.at("rho_grid_max_frac").get<double>();
    c.rho_x_override = j.at("rho_x_override").get<double>();
    c.rho_y_override = j.at("rho_y_override").get<double>();
    c.tol = j.at("tol").get<double>();
    c.max_iter = j.at("max_iter").get<int>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.standardize = j.at("standardize").get<bool>();
    return c;
}

inline json standardization_to_json(const StandardizationParams& s) {
    json j;
    j["center"] = vec_to_json(s.center);
    j["scale"] = vec_to_json(s.scale);
    return j;
}

inline StandardizationParams standardization_from_json(const json& j) {
    StandardizationParams s;
    s.center = vec_from_json(j.at("center"));
    s.scale = vec_from_json(j.at("scale"));
    return s;
}

inline json means_to_json(const MeanFunctions& m) {
    json j;
    j["dimension"] = m.basis.dimension();
    j["order"] = m.basis.order();
    json coef = json::array();
    for (const Eigen::VectorXd& c : m.coefficients) coef.push_back(vec_to_json(c));
    j["coefficients"] = std::move(coef);
    j["nu"] = m.nu;
    return j;
}

inline MeanFunctions means_from_json(const json& j) {
    MeanFunctions m;
    m.basis = SplineBasis::create(j.at("dimension").get<int>(), j.at("order").get<int>());
    for (const json& c : j.at("coefficients")) m.coefficients.push_back(vec_from_json(c));
    m.nu = j.at("nu").get<std::vector<double>>();
    return m;
}

inline json kernel_to_json(const KernelEstimate& k) {
    json j;
    j["side"] = std::string(1, k.side);
    j["dimension"] = k.basis.dimension();
    j["order"] = k.basis.order();
    j["coefficients"] = vec_to_json(k.coefficients);
    j["nu"] = k.nu;
    return j;
}

inline KernelEstimate kernel_from_json(const json& j) {
    KernelEstimate k;
    k.side = j.at("side").get<std::string>().at(0);
    k.basis = SplineBasis::create(j.at("dimension").get<int>(), j.at("order").get<int>());
    k.coefficients = vec_from_json(j.at("coefficients"));
    k.nu = j.at("nu").get<double>();
    return k;
}

// Only the retained eigenfunction columns are stored; that is all the score
// projections ever read.
inline json eigen_to_json(const EigenSystem& e) {
    json j;
    j["eigenvalues"] = vec_to_json(e.eigenvalues);
    j["trace_total"] = e.trace_total;
    j["kappa"] = e.kappa;
    json funcs = json::array();
    for (int k = 0; k < e.kappa; ++k) funcs.push_back(vec_to_json(e.eigenfunctions.col(k)));
    j["eigenfunctions"] = std::move(funcs);
    return j;
}

inline EigenSystem eigen_from_json(const json& j, const Grid& grid) {
    EigenSystem e;
    e.grid = grid;
    e.eigenvalues = vec_from_json(j.at("eigenvalues"));
    e.trace_total = j.at("trace_total").get<double>();
    e.kappa = j.at("kappa").get<int>();
    e.eigenfunctions.resize(grid.size(), e.kappa);
    const json& funcs = j.at("eigenfunctions");
    for (int k = 0; k < e.kappa; ++k)
        e.eigenfunctions.col(k) = vec_from_json(funcs[static_cast<std::size_t>(k)]);
    return e;
}

inline json component_to_json(const CanonicalComponent& c) {
    json j;
    j["rank_index"] = c.rank_index;
    j["eta"] = c.eta;
    j["rho_x"] = c.rho_x;
    j["rho_y"] = c.rho_y;
    j["a"] = vec_to_json(c.a);
    j["b"] = vec_to_json(c.b);
    j["loadings_x"] = mat_to_json(c.loadings_x);
    j["loadings_y"] = mat_to_json(c.loadings_y);
    j["scores_x"] = vec_to_json(c.scores_x);
    j["scores_y"] = vec_to_json(c.scores_y);
    j["support_x"] = c.support_x;
    j["support_y"] = c.support_y;
    j["zero_component"] = c.zero_component;
    return j;
}

inline CanonicalComponent component_from_json(const json& j) {
    CanonicalComponent c;
    c.rank_index = j.at("rank_index").get<int>();
    c.eta = j.at("eta").get<double>();
    c.rho_x = j.at("rho_x").get<double>();
    c.rho_y = j.at("rho_y").get<double>();
    c.a = vec_from_json(j.at("a"));
    c.b = vec_from_json(j.at("b"));
    c.loadings_x = mat_from_json(j.at("loadings_x"));
    c.loadings_y = mat_from_json(j.at("loadings_y"));
    c.scores_x = vec_from_json(j.at("scores_x"));
    c.scores_y = vec_from_json(j.at("scores_y"));
    c.support_x = j.at("support_x").get<std::vector<int>>();
    c.support_y = j.at("support_y").get<std::vector<int>>();
    c.zero_component = j.at("zero_component").get<bool>();
    return c;
}

inline json tuning_to_json(const SparsityTuning& t) {
    json j;
    j["rho_x"] = t.rho_x;
    j["rho_y"] = t.rho_y;
    j["cv_objective"] = t.cv_objective;
    json grid = json::array();
    for (const auto& [rx, ry] : t.grid) grid.push_back(json::array({rx, ry}));
    j["grid"] = std::move(grid);
    j["objectives"] = t.objectives;
    j["fold_assignment"] = t.fold_assignment;
    return j;
}

inline SparsityTuning tuning_from_json(const json& j) {
    SparsityTuning t;
    t.rho_x = j.at("rho_x").get<double>();
    t.rho_y = j.at("rho_y").get<double>();
    t.cv_objective = j.at("cv_objective").get<double>();
    for (const json& cell : j.at("grid"))
        t.grid.emplace_back(cell[0].get<double>(), cell[1].get<double>());
    t.objectives = j.at("objectives").get<std::vector<double>>();
    t.fold_assignment = j.at("fold_assignment").get<std::vector<int>>();
    return t;
}

inline json load_json_file(const std::string& path, const char* expected_format) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path + "' for reading");
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw IoError("'" + path + "' is not valid JSON: " + e.what());
    }
    if (!j.is_object() || j.value("format", "") != expected_format || j.value("version", 0) != 1)
        throw IoError("'" + path + "' is not a " + std::string(expected_format) + " version 1 file");
    return j;
}

inline void write_json_file(const json& j, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open '" + path + "' for writing");
    out << j.dump(1) << '\n';
    if (!out) throw IoError("failed while writing '" + path + "'");
}

}  // namespace detail

struct StoredModel {
    FacdModel model;
    TimeMapping mapping;
};

/// Serializes a fitted model (plus the time mapping used at ingestion) as a
/// versioned JSON document. Numbers use shortest round-tripping decimals, so
/// loading restores every coefficient bitwise; GCV diagnostic traces are the
/// only fields not persisted.
inline void save_model(const FacdModel& model, const TimeMapping& mapping,
                       const std::string& path) {
    using detail::json;
    json j;
    j["format"] = "facd-model";
    j["version"] = 1;
    j["config"] = detail::config_to_json(model.config);
    j["time_mapping"] = {{"offset", mapping.offset}, {"scale", mapping.scale}};
    j["grid_size"] = model.grid.size();
    j["subjects"] = model.subject_ids;
    j["features_x"] = model.feature_names_x;
    j["features_y"] = model.feature_names_y;
    j["standardize_x"] = detail::standardization_to_json(model.standardize_x);
    j["standardize_y"] = detail::standardization_to_json(model.standardize_y);
    j["means_x"] = detail::means_to_json(model.means_x);
    j["means_y"] = detail::means_to_json(model.means_y);
    j["kernel_x"] = detail::kernel_to_json(model.kernel_x);
    j["kernel_y"] = detail::kernel_to_json(model.kernel_y);
    j["eigen_x"] = detail::eigen_to_json(model.eig_x);
    j["eigen_y"] = detail::eigen_to_json(model.eig_y);
    json comps = json::array();
    for (const CanonicalComponent& c : model.components)
        comps.push_back(detail::component_to_json(c));
    j["components"] = std::move(comps);
    json tunings = json::array();
    for (const SparsityTuning& t : model.tunings) tunings.push_back(detail::tuning_to_json(t));
    j["tunings"] = std::move(tunings);
    j["warnings"] = model.warnings;
    detail::write_json_file(j, path);
}

inline StoredModel load_model(const std::string& path) {
    using detail::json;
    const json j = detail::load_json_file(path, "facd-model");
    StoredModel stored;
    try {
        stored.mapping.offset = j.at("time_mapping").at("offset").get<double>();
        stored.mapping.scale = j.at("time_mapping").at("scale").get<double>();
        FacdModel& m = stored.model;
        m.config = detail::config_from_json(j.at("config"));
        m.grid = Grid(j.at("grid_size").get<int>());
        m.subject_ids = j.at("subjects").get<std::vector<std::string>>();
        m.feature_names_x = j.at("features_x").get<std::vector<std::string>>();
        m.feature_names_y = j.at("features_y").get<std::vector<std::string>>();
        m.standardize_x = detail::standardization_from_json(j.at("standardize_x"));
        m.standardize_y = detail::standardization_from_json(j.at("standardize_y"));
        m.means_x = detail::means_from_json(j.at("means_x"));
        m.means_y = detail::means_from_json(j.at("means_y"));
        m.kernel_x = detail::kernel_from_json(j.at("kernel_x"));
        m.kernel_y = detail::kernel_from_json(j.at("kernel_y"));
        m.eig_x = detail::eigen_from_json(j.at("eigen_x"), m.grid);
        m.eig_y = detail::eigen_from_json(j.at("eigen_y"), m.grid);
        for (const json& c : j.at("components"))
            m.components.push_back(detail::component_from_json(c));
        for (const json& t : j.at("tunings")) m.tunings.push_back(detail::tuning_from_json(t));
        m.warnings = j.at("warnings").get<std::vector<std::string>>();
    } catch (const detail::json::exception& e) {
        throw IoError("'" + path + "' is missing model fields: " + e.what());
    }
    return stored;
}

/// Persists planted ground truth. Loading curves are reconstructed from the
/// stored basis coefficients with the same matrix product the generator
/// used, so the round trip is bitwise exact.
inline void save_truth(const GroundTruth& truth, const std::string& path) {
    using detail::json;
    json j;
    j["format"] = "facd-truth";
    j["version"] = 1;
    j["grid_size"] = truth.grid.size();
    j["n_basis"] = truth.n_basis();
    json cx = json::array(), cy = json::array();
    for (const Eigen::MatrixXd& c : truth.coefficients_x) cx.push_back(detail::mat_to_json(c));
    for (const Eigen::MatrixXd& c : truth.coefficients_y) cy.push_back(detail::mat_to_json(c));
    j["coefficients_x"] = std::move(cx);
    j["coefficients_y"] = std::move(cy);
    j["scores_x"] = detail::mat_to_json(truth.scores_x);
    j["scores_y"] = detail::mat_to_json(truth.scores_y);
    j["support_x"] = truth.support_x;
    j["support_y"] = truth.support_y;
    j["cross_covariances"] = truth.cross_covariances;
    detail::write_json_file(j, path);
}

inline GroundTruth load_truth(const std::string& path) {
    using detail::json;
    const json j = detail::load_json_file(path, "facd-truth");
    GroundTruth truth;
    try {
        truth.grid = Grid(j.at("grid_size").get<int>());
        const int n_basis = j.at("n_basis").get<int>();
        for (const json& c : j.at("coefficients_x"))
            truth.coefficients_x.push_back(detail::mat_from_json(c, n_basis));
        for (const json& c : j.at("coefficients_y"))
            truth.coefficients_y.push_back(detail::mat_from_json(c, n_basis));
        truth.scores_x = detail::mat_from_json(j.at("scores_x"));
        truth.scores_y = detail::mat_from_json(j.at("scores_y"));
        truth.support_x = j.at("support_x").get<std::vector<int>>();
        truth.support_y = j.at("support_y").get<std::vector<int>>();
        truth.cross_covariances = j.at("cross_covariances").get<std::vector<double>>();

        Eigen::MatrixXd basis_on_grid(n_basis, truth.grid.size());
        for (int g = 0; g < truth.grid.size(); ++g)
            basis_on_grid.col(g) = legendre_basis_values(truth.grid.point(g), n_basis);
        for (int r = 0; r < truth.rank(); ++r) {
            truth.loadings_x.push_back(truth.coefficients_x[static_cast<std::size_t>(r)] *
                                       basis_on_grid);
            truth.loadings_y.push_back(truth.coefficients_y[static_cast<std::size_t>(r)] *
                                       basis_on_grid);
        }
    } catch (const detail::json::exception& e) {
        throw IoError("'" + path + "' is missing truth fields: " + e.what());
    }
    return truth;
}

namespace detail {

inline std::string feature_label(const std::vector<std::string>& names, char prefix, int j) {
    if (!names.empty()) return names[static_cast<std::size_t>(j)];
    return std::string(1, prefix) + std::to_string(j + 1);
}

}  // namespace detail

/// Long-format export of every fitted loading curve on the model grid.
inline void write_loadings_csv(const FacdModel& model, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open '" + path + "' for writing");
    out << "side,component,feature,time,value\n";
    for (const CanonicalComponent& comp : model.components) {
        for (int j = 0; j < model.p(); ++j)
            for (int g = 0; g < model.grid.size(); ++g)
                out << "x," << comp.rank_index << ','
                    << detail::feature_label(model.feature_names_x, 'x', j) << ','
                    << detail::format_double(model.grid.point(g)) << ','
                    << detail::format_double(comp.loadings_x(j, g)) << '\n';
        for (int m = 0; m < model.q(); ++m)
            for (int g = 0; g < model.grid.size(); ++g)
                out << "y," << comp.rank_index << ','
                    << detail::feature_label(model.feature_names_y, 'y', m) << ','
                    << detail::format_double(model.grid.point(g)) << ','
                    << detail::format_double(comp.loadings_y(m, g)) << '\n';
    }
    if (!out) throw IoError("failed while writing '" + path + "'");
}

inline void write_scores_csv(const std::vector<std::string>& subjects,
                             const ComponentScores& scores, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open '" + path + "' for writing");
    out << "subject,component,score_x,score_y\n";
    for (Eigen::Index r = 0; r < scores.x.cols(); ++r)
        for (std::size_t i = 0; i < subjects.size(); ++i)
            out << subjects[i] << ',' << r << ','
                << detail::format_double(scores.x(static_cast<Eigen::Index>(i), r)) << ','
                << detail::format_double(scores.y(static_cast<Eigen::Index>(i), r)) << '\n';
    if (!out) throw IoError("failed while writing '" + path + "'");
}

/// One flat row per evaluated component, tagged with free-form replicate and
/// configuration labels so rows from many runs can be concatenated.
inline void write_report_csv(const std::vector<EvaluationReport>& reports,
                             const std::string& replicate, const std::string& config_label,
                             const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open '" + path + "' for writing");
    out << "replicate,config,component,loading_error_x,loading_error_y,fpr_x,fpr_y,fnr_x,fnr_y,"
           "score_corr_x,score_corr_y\n";
    for (const EvaluationReport& r : reports)
        out << replicate << ',' << config_label << ',' << r.rank_index << ','
            << detail::format_double(r.loading_error_x) << ','
            << detail::format_double(r.loading_error_y) << ',' << detail::format_double(r.fpr_x)
            << ',' << detail::format_double(r.fpr_y) << ',' << detail::format_double(r.fnr_x)
            << ',' << detail::format_double(r.fnr_y) << ','
            << detail::format_double(r.score_corr_x) << ','
            << detail::format_double(r.score_corr_y) << '\n';
    if (!out) throw IoError("failed while writing '" + path + "'");
}

/// Edge list of time-integrated feature-pair correlations, one row per
/// (component, X feature, Y feature).
inline void write_network_csv(const FacdModel& model, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open '" + path + "' for writing");
    out << "component,feature_x,feature_y,correlation\n";
    for (int r = 0; r < model.n_components(); ++r) {
        const CorrelationMatrix corr = time_integrated_correlation(model, r);
        for (int j = 0; j < model.p(); ++j)
            for (int m = 0; m < model.q(); ++m)
                out << r << ',' << detail::feature_label(model.feature_names_x, 'x', j) << ','
                    << detail::feature_label(model.feature_names_y, 'y', m) << ','
                    << detail::format_double(corr.values(j, m)) << '\n';
    }
    if (!out) throw IoError("failed while writing '" + path + "'");
}

}  // namespace facd
