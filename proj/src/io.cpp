#include "lexee/io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include <json.hpp>

#include "lexee/csv.hpp"
#include "lexee/errors.hpp"
#include "lexee/moments.hpp"
#include "lexee/simulation.hpp"

namespace lexee {

namespace {

using ordered_json = nlohmann::ordered_json;

std::string full_precision(double v) {
    if (std::isnan(v)) return "";
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

void check_header_set(const CsvTable& table, std::vector<std::string> expected) {
    std::vector<std::string> got = table.header;
    for (std::size_t i = 0; i < got.size(); ++i)
        for (std::size_t j = i + 1; j < got.size(); ++j)
            if (got[i] == got[j])
                throw ParseError(table.source, 1, -1,
                                 "duplicate column '" + got[i] + "' in header");
    std::sort(got.begin(), got.end());
    std::sort(expected.begin(), expected.end());
    if (got != expected) {
        std::string want, have;
        for (const auto& n : expected) want += (want.empty() ? "" : ", ") + n;
        for (const auto& n : table.header) have += (have.empty() ? "" : ", ") + n;
        throw ParseError(table.source, 1, -1,
                         "header mismatch: expected columns {" + want + "}, found {" + have +
                             "}");
    }
}

// Rows of one subject's outcome block, before occasion ordering.
struct OutcomeRow {
    long occasion = 0;
    long line = 0;
    double y = 0.0;
    Eigen::VectorXd z;
};

double nan_or(const Eigen::VectorXd& v, int i) {
    return i < v.size() ? v[i] : std::numeric_limits<double>::quiet_NaN();
}

ordered_json matrix_to_json(const Eigen::MatrixXd& m) {
    ordered_json rows = ordered_json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        ordered_json row = ordered_json::array();
        for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
        rows.push_back(std::move(row));
    }
    return rows;
}

Eigen::MatrixXd matrix_from_json(const ordered_json& j, const std::string& where) {
    if (!j.is_array()) throw ParseError("report", -1, -1, where + " must be an array");
    const Eigen::Index rows = static_cast<Eigen::Index>(j.size());
    Eigen::MatrixXd m(rows, rows == 0 ? 0 : static_cast<Eigen::Index>(j.at(0).size()));
    for (Eigen::Index i = 0; i < rows; ++i) {
        const auto& row = j.at(static_cast<std::size_t>(i));
        if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != m.cols())
            throw ParseError("report", -1, -1, where + " must be rectangular");
        for (Eigen::Index c = 0; c < m.cols(); ++c)
            m(i, c) = row.at(static_cast<std::size_t>(c)).get<double>();
    }
    return m;
}

double number_or_nan(const ordered_json& j) {
    return j.is_null() ? std::numeric_limits<double>::quiet_NaN() : j.get<double>();
}

ordered_json nan_to_null(double v) {
    if (std::isnan(v)) return nullptr;
    return v;
}

bool same_number(double a, double b) {
    if (std::isnan(a) && std::isnan(b)) return true;
    return a == b;
}

bool same_matrix(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) return false;
    for (Eigen::Index i = 0; i < a.rows(); ++i)
        for (Eigen::Index j = 0; j < a.cols(); ++j)
            if (!same_number(a(i, j), b(i, j))) return false;
    return true;
}

}  // namespace

Dataset load_data(const std::string& subjects_path, const std::string& outcomes_path,
                  const ModelSpec& spec) {
    validate_spec(spec);
    const CsvTable subjects = read_csv_file(subjects_path);
    const CsvTable outcomes = read_csv_file(outcomes_path);

    std::vector<std::string> subject_cols = {"id"};
    subject_cols.insert(subject_cols.end(), spec.w_names.begin(), spec.w_names.end());
    subject_cols.insert(subject_cols.end(), spec.surrogate_names.begin(),
                        spec.surrogate_names.end());
    check_header_set(subjects, subject_cols);

    std::vector<std::string> outcome_cols = {"id", "occasion", spec.outcome_name};
    outcome_cols.insert(outcome_cols.end(), spec.z_names.begin(), spec.z_names.end());
    check_header_set(outcomes, outcome_cols);

    const int p = spec.p(), r = spec.r(), q = spec.q();
    const int id_col = subjects.require_column("id");
    std::vector<int> w_cols, x_cols;
    for (const auto& n : spec.w_names) w_cols.push_back(subjects.require_column(n));
    for (const auto& n : spec.surrogate_names) x_cols.push_back(subjects.require_column(n));

    Dataset data;
    data.p = p;
    data.r = r;
    data.q = q;
    std::map<std::string, std::size_t> by_id;
    for (std::size_t row = 0; row < subjects.rows.size(); ++row) {
        const auto& cells = subjects.rows[row];
        const long line = subjects.row_lines[row];
        SubjectData s;
        s.id = cells[static_cast<std::size_t>(id_col)];
        if (s.id.empty())
            throw ParseError(subjects.source, line, id_col + 1, "empty subject id");
        if (by_id.count(s.id))
            throw ParseError(subjects.source, line, id_col + 1,
                             "duplicate subject id '" + s.id + "'");
        s.w.resize(r);
        for (int c = 0; c < r; ++c) {
            const std::string& cell = cells[static_cast<std::size_t>(w_cols[c])];
            if (cell.empty())
                throw MissingCovariate("subject '" + s.id + "': covariate '" + spec.w_names[c] +
                                       "' is empty (" + subjects.source + ":" +
                                       std::to_string(line) + ")");
            s.w[c] = parse_double_cell(cell, subjects.source, line, w_cols[c]);
        }
        s.x.resize(p);
        s.x_mask.assign(static_cast<std::size_t>(p), true);
        for (int c = 0; c < p; ++c) {
            const std::string& cell = cells[static_cast<std::size_t>(x_cols[c])];
            if (cell.empty()) {
                s.x[c] = 0.0;
                s.x_mask[static_cast<std::size_t>(c)] = false;
            } else {
                s.x[c] = parse_double_cell(cell, subjects.source, line, x_cols[c]);
            }
        }
        s.y.resize(0);
        s.z.resize(0, q);
        by_id[s.id] = data.subjects.size();
        data.subjects.push_back(std::move(s));
    }

    const int oid_col = outcomes.require_column("id");
    const int occ_col = outcomes.require_column("occasion");
    const int y_col = outcomes.require_column(spec.outcome_name);
    std::vector<int> z_cols;
    for (const auto& n : spec.z_names) z_cols.push_back(outcomes.require_column(n));

    std::map<std::string, std::vector<OutcomeRow>> blocks;
    for (std::size_t row = 0; row < outcomes.rows.size(); ++row) {
        const auto& cells = outcomes.rows[row];
        const long line = outcomes.row_lines[row];
        const std::string& id = cells[static_cast<std::size_t>(oid_col)];
        if (!by_id.count(id))
            throw JoinError("outcomes row at " + outcomes.source + ":" + std::to_string(line) +
                            " references unknown subject id '" + id + "'");
        OutcomeRow o;
        o.line = line;
        o.occasion = parse_long_cell(cells[static_cast<std::size_t>(occ_col)], outcomes.source,
                                     line, occ_col);
        o.y = parse_double_cell(cells[static_cast<std::size_t>(y_col)], outcomes.source, line,
                                y_col);
        o.z.resize(q);
        for (int c = 0; c < q; ++c) {
            const std::string& cell = cells[static_cast<std::size_t>(z_cols[c])];
            if (cell.empty())
                throw MissingCovariate("subject '" + id + "', occasion " +
                                       std::to_string(o.occasion) + ": covariate '" +
                                       spec.z_names[c] + "' is empty (" + outcomes.source + ":" +
                                       std::to_string(line) + ")");
            o.z[c] = parse_double_cell(cell, outcomes.source, line, z_cols[c]);
        }
        blocks[id].push_back(std::move(o));
    }

    for (auto& [id, rows] : blocks) {
        std::sort(rows.begin(), rows.end(),
                  [](const OutcomeRow& a, const OutcomeRow& b) { return a.occasion < b.occasion; });
        SubjectData& s = data.subjects[by_id.at(id)];
        const int n = static_cast<int>(rows.size());
        s.y.resize(n);
        s.z.resize(n, q);
        for (int j = 0; j < n; ++j) {
            if (rows[static_cast<std::size_t>(j)].occasion != j + 1)
                throw ParseError(outcomes.source, rows[static_cast<std::size_t>(j)].line, -1,
                                 "subject '" + id + "' occasions must be 1.." +
                                     std::to_string(n) + " without gaps or repeats (saw " +
                                     std::to_string(rows[static_cast<std::size_t>(j)].occasion) +
                                     " in position " + std::to_string(j + 1) + ")");
            s.y[j] = rows[static_cast<std::size_t>(j)].y;
            s.z.row(j) = rows[static_cast<std::size_t>(j)].z.transpose();
        }
    }
    return data;
}

void write_dataset(const std::string& subjects_path, const std::string& outcomes_path,
                   const Dataset& data, const ModelSpec& spec) {
    validate_spec(spec);
    if (data.p != spec.p() || data.r != spec.r() || data.q != spec.q())
        throw BadParam("dataset dimensions do not match the model declaration");

    std::vector<std::string> subject_header = {"id"};
    subject_header.insert(subject_header.end(), spec.w_names.begin(), spec.w_names.end());
    subject_header.insert(subject_header.end(), spec.surrogate_names.begin(),
                          spec.surrogate_names.end());
    std::vector<std::vector<std::string>> subject_rows;
    for (const SubjectData& s : data.subjects) {
        std::vector<std::string> row = {s.id};
        for (int c = 0; c < data.r; ++c) row.push_back(full_precision(s.w[c]));
        for (int c = 0; c < data.p; ++c)
            row.push_back(s.x_mask[static_cast<std::size_t>(c)] ? full_precision(s.x[c]) : "");
        subject_rows.push_back(std::move(row));
    }
    write_csv_file(subjects_path, subject_header, subject_rows);

    std::vector<std::string> outcome_header = {"id", "occasion", spec.outcome_name};
    outcome_header.insert(outcome_header.end(), spec.z_names.begin(), spec.z_names.end());
    std::vector<std::vector<std::string>> outcome_rows;
    for (const SubjectData& s : data.subjects) {
        for (int j = 0; j < s.n_occasions(); ++j) {
            std::vector<std::string> row = {s.id, std::to_string(j + 1),
                                            full_precision(s.y[j])};
            for (int c = 0; c < data.q; ++c) row.push_back(full_precision(s.z(j, c)));
            outcome_rows.push_back(std::move(row));
        }
    }
    write_csv_file(outcomes_path, outcome_header, outcome_rows);
}

std::vector<std::string> scores_header(const ModelSpec& spec) {
    std::vector<std::string> header = {"id"};
    for (const auto& name : spec.latent_names) header.push_back("score_" + name);
    for (const auto& name : spec.latent_names) header.push_back("score_var_" + name);
    return header;
}

std::vector<std::vector<std::string>> scores_rows(const ParamLayout& layout,
                                                  const Eigen::VectorXd& full_values,
                                                  const Dataset& data) {
    const MomentContext ctx(layout.spec(), layout.theta3_view(full_values));
    std::vector<std::vector<std::string>> rows;
    rows.reserve(data.subjects.size());
    for (const SubjectData& s : data.subjects) {
        const EbScores scores = ctx.eb(s.x, s.x_mask, s.w);
        std::vector<std::string> row = {s.id};
        for (Eigen::Index c = 0; c < scores.u_tilde.size(); ++c)
            row.push_back(full_precision(scores.u_tilde[c]));
        for (Eigen::Index c = 0; c < scores.u_tilde.size(); ++c)
            row.push_back(full_precision(scores.psi_tilde(c, c)));
        rows.push_back(std::move(row));
    }
    return rows;
}

std::string report_json(const FitReport& report) {
    ordered_json j;
    j["tool"] = "lexee";
    j["version"] = report.version;
    j["method"] = report.method;
    if (!report.beta_star.empty()) j["beta_star"] = report.beta_star;
    j["deterministic"] = report.deterministic;
    ordered_json prov;
    prov["config_hash"] = report.config_hash;
    prov["data_x_hash"] = report.data_x_hash;
    prov["data_y_hash"] = report.data_y_hash;
    j["provenance"] = prov;
    j["config"] = ordered_json::parse(report.config_echo);

    ordered_json fit;
    fit["converged"] = report.converged;
    fit["iterations"] = report.iterations;
    fit["loglik"] = nan_to_null(report.loglik);
    fit["equation_norm"] = nan_to_null(report.ee_norm);
    ordered_json params = ordered_json::array();
    for (std::size_t i = 0; i < report.names.size(); ++i) {
        ordered_json p;
        p["name"] = report.names[i];
        p["estimate"] = report.estimates[static_cast<Eigen::Index>(i)];
        p["se"] = nan_to_null(nan_or(report.se, static_cast<int>(i)));
        params.push_back(std::move(p));
    }
    fit["parameters"] = params;
    j["fit"] = fit;

    ordered_json wald = ordered_json::array();
    for (const WaldRow& row : report.wald.rows) {
        ordered_json w;
        w["name"] = row.name;
        w["estimate"] = row.estimate;
        w["se"] = row.se;
        w["z"] = row.z;
        w["p_two_sided"] = row.p_two_sided;
        w["p_one_sided"] = row.p_one_sided;
        w["ci_low"] = row.ci_low;
        w["ci_high"] = row.ci_high;
        wald.push_back(std::move(w));
    }
    j["wald"] = wald;

    ordered_json variance;
    variance["regression_block"] = matrix_to_json(report.theta1_covariance);
    variance["regression_naive"] = matrix_to_json(report.theta1_naive);
    variance["regression_correction"] = matrix_to_json(report.theta1_correction);
    j["variance"] = variance;
    return j.dump(2) + "\n";
}

FitReport report_from_json(const std::string& text) {
    ordered_json j;
    try {
        j = ordered_json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw ParseError("report", -1, -1, std::string("not valid JSON: ") + e.what());
    }
    try {
        FitReport r;
        r.version = j.at("version").get<std::string>();
        r.method = j.at("method").get<std::string>();
        if (j.contains("beta_star"))
            r.beta_star = j.at("beta_star").get<std::vector<double>>();
        r.deterministic = j.at("deterministic").get<bool>();
        const ordered_json& prov = j.at("provenance");
        r.config_hash = prov.at("config_hash").get<std::string>();
        r.data_x_hash = prov.at("data_x_hash").get<std::string>();
        r.data_y_hash = prov.at("data_y_hash").get<std::string>();
        r.config_echo = j.at("config").dump(2) + "\n";
        const ordered_json& fit = j.at("fit");
        r.converged = fit.at("converged").get<bool>();
        r.iterations = fit.at("iterations").get<int>();
        r.loglik = number_or_nan(fit.at("loglik"));
        r.ee_norm = number_or_nan(fit.at("equation_norm"));
        const ordered_json& params = fit.at("parameters");
        r.estimates.resize(static_cast<Eigen::Index>(params.size()));
        r.se.resize(static_cast<Eigen::Index>(params.size()));
        Eigen::Index at = 0;
        for (const auto& p : params) {
            r.names.push_back(p.at("name").get<std::string>());
            r.estimates[at] = p.at("estimate").get<double>();
            r.se[at] = number_or_nan(p.at("se"));
            ++at;
        }
        for (const auto& w : j.at("wald")) {
            WaldRow row;
            row.name = w.at("name").get<std::string>();
            row.estimate = w.at("estimate").get<double>();
            row.se = w.at("se").get<double>();
            row.z = w.at("z").get<double>();
            row.p_two_sided = w.at("p_two_sided").get<double>();
            row.p_one_sided = w.at("p_one_sided").get<double>();
            row.ci_low = w.at("ci_low").get<double>();
            row.ci_high = w.at("ci_high").get<double>();
            r.wald.rows.push_back(std::move(row));
        }
        const ordered_json& variance = j.at("variance");
        r.theta1_covariance = matrix_from_json(variance.at("regression_block"),
                                               "variance.regression_block");
        r.theta1_naive =
            matrix_from_json(variance.at("regression_naive"), "variance.regression_naive");
        r.theta1_correction = matrix_from_json(variance.at("regression_correction"),
                                               "variance.regression_correction");
        return r;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError("report", -1, -1, std::string("malformed report: ") + e.what());
    }
}

bool report_equal(const FitReport& a, const FitReport& b) {
    if (a.version != b.version || a.method != b.method || a.beta_star != b.beta_star ||
        a.deterministic != b.deterministic || a.config_hash != b.config_hash ||
        a.data_x_hash != b.data_x_hash || a.data_y_hash != b.data_y_hash ||
        a.config_echo != b.config_echo || a.converged != b.converged ||
        a.iterations != b.iterations || !same_number(a.loglik, b.loglik) ||
        !same_number(a.ee_norm, b.ee_norm) || a.names != b.names)
        return false;
    if (!same_matrix(a.estimates, b.estimates) || !same_matrix(a.se, b.se)) return false;
    if (a.wald.rows.size() != b.wald.rows.size()) return false;
    for (std::size_t i = 0; i < a.wald.rows.size(); ++i) {
        const WaldRow& x = a.wald.rows[i];
        const WaldRow& y = b.wald.rows[i];
        if (x.name != y.name || !same_number(x.estimate, y.estimate) ||
            !same_number(x.se, y.se) || !same_number(x.z, y.z) ||
            !same_number(x.p_two_sided, y.p_two_sided) ||
            !same_number(x.p_one_sided, y.p_one_sided) || !same_number(x.ci_low, y.ci_low) ||
            !same_number(x.ci_high, y.ci_high))
            return false;
    }
    return same_matrix(a.theta1_covariance, b.theta1_covariance) &&
           same_matrix(a.theta1_naive, b.theta1_naive) &&
           same_matrix(a.theta1_correction, b.theta1_correction);
}

std::string report_table(const FitReport& report) {
    std::ostringstream out;
    char line[256];
    out << "method: " << report.method;
    if (!report.beta_star.empty()) {
        out << " (fixed weights:";
        for (double v : report.beta_star) {
            std::snprintf(line, sizeof(line), " %.4f", v);
            out << line;
        }
        out << ")";
    }
    out << "\nconverged: " << (report.converged ? "yes" : "no")
        << "  iterations: " << report.iterations;
    if (!std::isnan(report.loglik)) {
        std::snprintf(line, sizeof(line), "  loglik: %.4f", report.loglik);
        out << line;
    }
    if (!std::isnan(report.ee_norm)) {
        std::snprintf(line, sizeof(line), "  equation norm: %.3e", report.ee_norm);
        out << line;
    }
    out << "\n\n";
    std::snprintf(line, sizeof(line), "%-18s %12s %12s %8s %10s %12s %12s\n", "parameter",
                  "estimate", "se", "z", "p", "ci_low", "ci_high");
    out << line;
    if (report.wald.rows.empty()) {
        out << "  (no interval estimates: fit did not converge)\n";
    } else {
        for (const WaldRow& row : report.wald.rows) {
            std::snprintf(line, sizeof(line), "%-18s %12.4f %12.4f %8.3f %10.4f %12.4f %12.4f\n",
                          row.name.c_str(), row.estimate, row.se, row.z, row.p_two_sided,
                          row.ci_low, row.ci_high);
            out << line;
        }
    }
    out << "\nother parameters\n";
    for (std::size_t i = 0; i < report.names.size(); ++i) {
        bool in_wald = false;
        for (const WaldRow& row : report.wald.rows) in_wald = in_wald || row.name == report.names[i];
        if (in_wald) continue;
        const double se = nan_or(report.se, static_cast<int>(i));
        if (std::isnan(se))
            std::snprintf(line, sizeof(line), "%-18s %12.4f\n", report.names[i].c_str(),
                          report.estimates[static_cast<Eigen::Index>(i)]);
        else
            std::snprintf(line, sizeof(line), "%-18s %12.4f %12.4f\n", report.names[i].c_str(),
                          report.estimates[static_cast<Eigen::Index>(i)], se);
        out << line;
    }
    return out.str();
}

std::string file_hash_hex(const std::string& path) { return text_hash_hex(read_text_file(path)); }

std::string text_hash_hex(const std::string& text) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%016llx",
                  static_cast<unsigned long long>(fnv1a_hash(text)));
    return buf;
}

std::string read_text_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError(path, -1, -1, "cannot open file");
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return buffer.str();
}

void write_text_file(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw BadParam("cannot open '" + path + "' for writing");
    out << text;
    if (!out) throw BadParam("failed while writing '" + path + "'");
}

}  // namespace lexee
