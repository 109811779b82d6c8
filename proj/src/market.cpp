#include "caosd/market.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <utility>

#include <json.hpp>

#include "caosd/errors.hpp"
#include "caosd/linprog.hpp"
#include "caosd/simplex_decomp.hpp"

namespace caosd {

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string field;
    std::stringstream ss(line);
    while (std::getline(ss, field, ',')) fields.push_back(field);
    if (!line.empty() && line.back() == ',') fields.emplace_back();
    return fields;
}

double parse_price(const std::string& field) {
    double value = 0.0;
    const char* first = field.data();
    const char* last = field.data() + field.size();
    const auto [ptr, ec] = std::from_chars(first, last, value);
    if (ec != std::errc() || ptr != last) throw invalid_input("incomplete series");
    if (!(value > 0.0) || !std::isfinite(value)) throw invalid_input("invalid price");
    return value;
}

}  // namespace

PriceTable ingest_prices(const std::string& csv_text) {
    std::vector<std::string> lines;
    std::stringstream ss(csv_text);
    std::string line;
    while (std::getline(ss, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (!line.empty()) lines.push_back(line);
    }
    if (lines.empty()) throw invalid_input("incomplete series");

    const std::vector<std::string> header = split_csv_line(lines[0]);
    if (header.size() < 2 || header[0] != "date") {
        throw invalid_input("price csv must start with a `date,LABEL...` header");
    }
    PriceTable table;
    table.labels.assign(header.begin() + 1, header.end());
    for (const std::string& label : table.labels) {
        if (label.empty()) throw invalid_input("price csv has an empty asset label");
    }

    const std::size_t n_rows = lines.size() - 1;
    if (n_rows == 0) throw invalid_input("incomplete series");
    const std::size_t n_cols = table.labels.size();
    table.prices.resize(static_cast<Eigen::Index>(n_rows), static_cast<Eigen::Index>(n_cols));
    table.dates.reserve(n_rows);
    for (std::size_t r = 0; r < n_rows; ++r) {
        const std::vector<std::string> fields = split_csv_line(lines[r + 1]);
        if (fields.size() != n_cols + 1) throw invalid_input("incomplete series");
        const std::string& date = fields[0];
        if (date.empty()) throw invalid_input("incomplete series");
        if (!table.dates.empty() && !(date > table.dates.back())) {
            throw invalid_input("unsorted input");
        }
        table.dates.push_back(date);
        for (std::size_t c = 0; c < n_cols; ++c) {
            if (fields[c + 1].empty()) throw invalid_input("incomplete series");
            table.prices(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) =
                parse_price(fields[c + 1]);
        }
    }
    return table;
}

PriceTable load_prices(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw invalid_input("cannot open price file: " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return ingest_prices(ss.str());
}

Eigen::MatrixXd to_returns(const PriceTable& table) {
    if (table.n_rows() < 2) throw invalid_input("price table needs at least two rows for returns");
    const Eigen::Index t = table.n_rows() - 1;
    Eigen::MatrixXd returns(t, table.n_assets());
    for (Eigen::Index r = 0; r < t; ++r) {
        returns.row(r) =
            (table.prices.row(r + 1).cwiseQuotient(table.prices.row(r)).array() - 1.0).matrix();
    }
    return returns;
}

void MarketModel::validate() const {
    if (n_states < 1) throw invalid_input("market model: n_states must be at least 1");
    const Eigen::Index h = n_states;
    const Eigen::Index n = means.cols();
    if (n < 1) throw invalid_input("market model: empty asset universe");
    if (means.rows() != h) throw invalid_input("market model: means shape mismatch");
    if (transition.rows() != h || transition.cols() != h) {
        throw invalid_input("market model: transition shape mismatch");
    }
    if (static_cast<Eigen::Index>(covariances.size()) != h) {
        throw invalid_input("market model: covariance count mismatch");
    }
    if (initial_dist.size() != h) throw invalid_input("market model: initial_dist size mismatch");

    for (Eigen::Index i = 0; i < h; ++i) {
        if (transition.row(i).minCoeff() < -1e-12 ||
            std::abs(transition.row(i).sum() - 1.0) > 1e-10) {
            throw invalid_input("market model: transition rows must be distributions");
        }
    }
    if (initial_dist.minCoeff() < -1e-12 || std::abs(initial_dist.sum() - 1.0) > 1e-10) {
        throw invalid_input("market model: initial_dist must be a distribution");
    }
    for (Eigen::Index s = 0; s < h; ++s) {
        const Eigen::MatrixXd& cov = covariances[static_cast<std::size_t>(s)];
        if (cov.rows() != n || cov.cols() != n) {
            throw invalid_input("market model: covariance shape mismatch");
        }
        if ((cov - cov.transpose()).cwiseAbs().maxCoeff() > 1e-9) {
            throw invalid_input("market model: covariance not symmetric");
        }
        const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
        const double scale = std::max(1.0, cov.cwiseAbs().maxCoeff());
        if (es.eigenvalues().minCoeff() < -1e-8 * scale) {
            throw invalid_input("market model: covariance not positive semidefinite");
        }
        if (cash_enabled) {
            if (means(s, 0) != 0.0 || cov.row(0).cwiseAbs().maxCoeff() != 0.0 ||
                cov.col(0).cwiseAbs().maxCoeff() != 0.0) {
                throw invalid_input("market model: cash asset must have zero mean and variance");
            }
        }
    }
}

namespace {

// Parameters in the risky-asset coordinates used during fitting.
struct HmmParams {
    Eigen::MatrixXd transition;
    Eigen::MatrixXd means;
    std::vector<Eigen::MatrixXd> covs;
    Eigen::VectorXd pi;
};

struct GaussianDensity {
    Eigen::VectorXd mean;
    Eigen::MatrixXd inv;
    double log_norm = 0.0;
};

// Regularizes a collapsed covariance once (+1e-6 on the diagonal) before
// giving up.
GaussianDensity make_density(const Eigen::VectorXd& mean, Eigen::MatrixXd cov) {
    const Eigen::Index d = cov.rows();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
    if (es.eigenvalues().minCoeff() <= 1e-10) {
        cov += 1e-6 * Eigen::MatrixXd::Identity(d, d);
        es.compute(cov);
        if (es.eigenvalues().minCoeff() <= 1e-10) {
            throw numerical("fit_hmm: covariance singular after regularization");
        }
    }
    GaussianDensity g;
    g.mean = mean;
    g.inv = es.eigenvectors() * es.eigenvalues().cwiseInverse().asDiagonal() *
            es.eigenvectors().transpose();
    const double logdet = es.eigenvalues().array().log().sum();
    g.log_norm = -0.5 * (static_cast<double>(d) * std::log(2.0 * M_PI) + logdet);
    return g;
}

double log_pdf(const GaussianDensity& g, const Eigen::VectorXd& x) {
    const Eigen::VectorXd diff = x - g.mean;
    return g.log_norm - 0.5 * diff.dot(g.inv * diff);
}

struct ForwardBackward {
    double log_likelihood = 0.0;
    Eigen::MatrixXd gamma;   // T x H posteriors
    Eigen::MatrixXd xi_sum;  // H x H expected transition counts
};

ForwardBackward forward_backward(const Eigen::MatrixXd& data, const HmmParams& params,
                                 const std::vector<GaussianDensity>& densities) {
    const Eigen::Index t_len = data.rows();
    const Eigen::Index h = params.transition.rows();

    Eigen::MatrixXd log_b(t_len, h);
    for (Eigen::Index t = 0; t < t_len; ++t) {
        for (Eigen::Index s = 0; s < h; ++s) {
            log_b(t, s) = log_pdf(densities[static_cast<std::size_t>(s)], data.row(t).transpose());
        }
    }
    // Per-step max shift keeps the scaled recursions in range even for
    // outlier rows whose raw densities underflow.
    Eigen::VectorXd shift(t_len);
    Eigen::MatrixXd w(t_len, h);
    for (Eigen::Index t = 0; t < t_len; ++t) {
        shift(t) = log_b.row(t).maxCoeff();
        w.row(t) = (log_b.row(t).array() - shift(t)).exp().matrix();
    }

    Eigen::MatrixXd alpha(t_len, h);
    Eigen::VectorXd scale(t_len);
    ForwardBackward out;
    Eigen::VectorXd v = params.pi.cwiseProduct(w.row(0).transpose());
    scale(0) = v.sum();
    if (!(scale(0) > 0.0)) throw numerical("fit_hmm: forward pass underflow");
    alpha.row(0) = v.transpose() / scale(0);
    out.log_likelihood = shift(0) + std::log(scale(0));
    for (Eigen::Index t = 1; t < t_len; ++t) {
        const Eigen::VectorXd pred = params.transition.transpose() * alpha.row(t - 1).transpose();
        v = pred.cwiseProduct(w.row(t).transpose());
        scale(t) = v.sum();
        if (!(scale(t) > 0.0)) throw numerical("fit_hmm: forward pass underflow");
        alpha.row(t) = v.transpose() / scale(t);
        out.log_likelihood += shift(t) + std::log(scale(t));
    }

    Eigen::MatrixXd beta = Eigen::MatrixXd::Ones(t_len, h);
    for (Eigen::Index t = t_len - 2; t >= 0; --t) {
        const Eigen::VectorXd wb = w.row(t + 1).transpose().cwiseProduct(beta.row(t + 1).transpose());
        beta.row(t) = (params.transition * wb).transpose() / scale(t + 1);
    }

    out.gamma.resize(t_len, h);
    for (Eigen::Index t = 0; t < t_len; ++t) {
        Eigen::VectorXd g = alpha.row(t).cwiseProduct(beta.row(t)).transpose();
        const double total = g.sum();
        if (!(total > 0.0)) throw numerical("fit_hmm: posterior underflow");
        out.gamma.row(t) = g.transpose() / total;
    }

    out.xi_sum = Eigen::MatrixXd::Zero(h, h);
    for (Eigen::Index t = 0; t + 1 < t_len; ++t) {
        Eigen::MatrixXd xi(h, h);
        for (Eigen::Index i = 0; i < h; ++i) {
            for (Eigen::Index j = 0; j < h; ++j) {
                xi(i, j) = alpha(t, i) * params.transition(i, j) * w(t + 1, j) * beta(t + 1, j);
            }
        }
        const double total = xi.sum();
        if (total > 0.0) out.xi_sum += xi / total;
    }
    return out;
}

std::vector<GaussianDensity> build_densities(const HmmParams& params) {
    std::vector<GaussianDensity> densities;
    densities.reserve(params.covs.size());
    for (std::size_t s = 0; s < params.covs.size(); ++s) {
        densities.push_back(make_density(params.means.row(static_cast<Eigen::Index>(s)).transpose(),
                                         params.covs[s]));
    }
    return densities;
}

Eigen::MatrixXd mle_covariance(const Eigen::MatrixXd& data, const Eigen::VectorXd& mean,
                               const Eigen::VectorXd& weights, bool diagonal) {
    const Eigen::Index d = data.cols();
    Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(d, d);
    for (Eigen::Index t = 0; t < data.rows(); ++t) {
        const Eigen::VectorXd diff = data.row(t).transpose() - mean;
        cov += weights(t) * diff * diff.transpose();
    }
    cov /= weights.sum();
    if (diagonal) {
        const Eigen::VectorXd variances = cov.diagonal();
        cov = variances.asDiagonal();
    }
    return cov;
}

HmmParams init_params(const Eigen::MatrixXd& data, int n_states, bool diagonal, Rng& rng) {
    const Eigen::Index t_len = data.rows();
    const Eigen::Index d = data.cols();
    const Eigen::Index h = n_states;

    HmmParams params;
    params.means.resize(h, d);
    const Eigen::VectorXd global_mean = data.colwise().mean().transpose();
    const Eigen::VectorXd ones = Eigen::VectorXd::Ones(t_len);
    Eigen::MatrixXd global_cov = mle_covariance(data, global_mean, ones, diagonal);
    global_cov += 1e-8 * Eigen::MatrixXd::Identity(d, d);
    const Eigen::VectorXd sigma = global_cov.diagonal().cwiseSqrt();

    const std::vector<int> picks =
        rng.sample_without_replacement(static_cast<int>(t_len), n_states);
    for (Eigen::Index s = 0; s < h; ++s) {
        params.means.row(s) = data.row(picks[static_cast<std::size_t>(s)]);
        for (Eigen::Index j = 0; j < d; ++j) {
            params.means(s, j) += 1e-3 * sigma(j) * rng.normal();
        }
    }
    params.covs.assign(static_cast<std::size_t>(h), global_cov);
    if (h == 1) {
        params.transition = Eigen::MatrixXd::Ones(1, 1);
    } else {
        const double off = 0.2 / static_cast<double>(h - 1);
        params.transition = Eigen::MatrixXd::Constant(h, h, off);
        params.transition.diagonal().setConstant(0.8);
    }
    params.pi = Eigen::VectorXd::Constant(h, 1.0 / static_cast<double>(h));
    return params;
}

struct EmRun {
    HmmParams params;
    std::vector<double> ll_trace;
};

EmRun run_em(const Eigen::MatrixXd& data, HmmParams params, const HmmFitOptions& options) {
    const Eigen::Index t_len = data.rows();
    const Eigen::Index h = params.transition.rows();
    EmRun run;
    std::vector<GaussianDensity> densities = build_densities(params);
    double prev_ll = -std::numeric_limits<double>::infinity();
    for (int iter = 0; iter < options.max_iters; ++iter) {
        const ForwardBackward fb = forward_backward(data, params, densities);
        run.ll_trace.push_back(fb.log_likelihood);
        if (iter > 0 && fb.log_likelihood - prev_ll < options.tol) break;
        prev_ll = fb.log_likelihood;

        params.pi = fb.gamma.row(0).transpose();
        const Eigen::VectorXd occupancy = fb.gamma.colwise().sum().transpose();
        const Eigen::VectorXd trans_denom =
            fb.gamma.topRows(t_len - 1).colwise().sum().transpose();
        for (Eigen::Index i = 0; i < h; ++i) {
            if (trans_denom(i) > 1e-12) {
                params.transition.row(i) = fb.xi_sum.row(i) / trans_denom(i);
                params.transition.row(i) /= params.transition.row(i).sum();
            }
            if (occupancy(i) > 1e-10) {
                const Eigen::VectorXd weights = fb.gamma.col(i);
                params.means.row(i) = (weights.transpose() * data) / occupancy(i);
                params.covs[static_cast<std::size_t>(i)] = mle_covariance(
                    data, params.means.row(i).transpose(), weights, !options.full_covariance);
            }
        }
        densities = build_densities(params);
    }
    run.params = std::move(params);
    return run;
}

MarketModel embed_with_cash(const HmmParams& params) {
    const Eigen::Index h = params.transition.rows();
    const Eigen::Index d = params.means.cols();
    MarketModel model;
    model.n_states = static_cast<int>(h);
    model.cash_enabled = true;
    model.transition = params.transition;
    model.initial_dist = params.pi;
    model.means = Eigen::MatrixXd::Zero(h, d + 1);
    model.means.rightCols(d) = params.means;
    model.covariances.reserve(static_cast<std::size_t>(h));
    for (Eigen::Index s = 0; s < h; ++s) {
        Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(d + 1, d + 1);
        cov.bottomRightCorner(d, d) = params.covs[static_cast<std::size_t>(s)];
        model.covariances.push_back(std::move(cov));
    }
    return model;
}

}  // namespace

HmmFitResult fit_hmm(const Eigen::MatrixXd& returns, int n_states, std::uint64_t seed,
                     const HmmFitOptions& options) {
    if (n_states < 1) throw invalid_input("fit_hmm: n_states must be at least 1");
    if (returns.cols() < 1) throw invalid_input("fit_hmm: empty return matrix");
    if (returns.rows() < 10 * static_cast<Eigen::Index>(n_states)) {
        throw invalid_input("fit_hmm: needs at least 10 rows per state");
    }
    if (options.restarts < 1 || options.max_iters < 1 || !(options.tol > 0.0)) {
        throw invalid_input("fit_hmm: invalid fit options");
    }

    if (n_states == 1) {
        HmmParams params;
        params.transition = Eigen::MatrixXd::Ones(1, 1);
        params.pi = Eigen::VectorXd::Ones(1);
        params.means = returns.colwise().mean();
        const Eigen::VectorXd ones = Eigen::VectorXd::Ones(returns.rows());
        params.covs = {mle_covariance(returns, params.means.row(0).transpose(), ones,
                                      !options.full_covariance)};
        const std::vector<GaussianDensity> densities = build_densities(params);
        const ForwardBackward fb = forward_backward(returns, params, densities);
        HmmFitResult result;
        result.model = embed_with_cash(params);
        result.log_likelihood = fb.log_likelihood;
        result.ll_trace = {fb.log_likelihood};
        result.model.validate();
        return result;
    }

    HmmFitResult best;
    bool have_best = false;
    std::exception_ptr last_failure;
    for (int restart = 0; restart < options.restarts; ++restart) {
        Rng rng(seed + 0x9E3779B97F4A7C15ull * static_cast<std::uint64_t>(restart));
        try {
            HmmParams init = init_params(returns, n_states, !options.full_covariance, rng);
            EmRun run = run_em(returns, std::move(init), options);
            const double ll = run.ll_trace.back();
            if (!have_best || ll > best.log_likelihood) {
                best.model = embed_with_cash(run.params);
                best.log_likelihood = ll;
                best.ll_trace = std::move(run.ll_trace);
                have_best = true;
            }
        } catch (const Error& e) {
            if (e.code() != ErrorCode::Numerical) throw;
            last_failure = std::current_exception();
        }
    }
    if (!have_best) std::rethrow_exception(last_failure);
    best.model.validate();
    return best;
}

Eigen::MatrixXd return_sampling_factor(const MarketModel& model, int state) {
    if (state < 0 || state >= model.n_states) throw invalid_input("market model: state out of range");
    const Eigen::MatrixXd& cov = model.covariances[static_cast<std::size_t>(state)];
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
    const Eigen::VectorXd roots = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    return es.eigenvectors() * roots.asDiagonal();
}

namespace {

// Consumes exactly n_assets normal draws regardless of the cash flag so a
// model edit never shifts the downstream stream.
Eigen::VectorXd draw_state_returns(const MarketModel& model, int state,
                                   const Eigen::MatrixXd& factor, Rng& rng) {
    const Eigen::Index n = model.n_assets();
    Eigen::VectorXd z(n);
    for (Eigen::Index i = 0; i < n; ++i) z(i) = rng.normal();
    Eigen::VectorXd theta = model.means.row(state).transpose() + factor * z;
    if (model.cash_enabled) theta(0) = 0.0;
    return theta;
}

}  // namespace

std::pair<int, Eigen::VectorXd> simulate_step(const MarketModel& model, int state, Rng& rng) {
    const Eigen::MatrixXd factor = return_sampling_factor(model, state);
    Eigen::VectorXd theta = draw_state_returns(model, state, factor, rng);
    const int next = rng.categorical(model.transition.row(state).transpose());
    return {next, std::move(theta)};
}

int sample_initial_state(const MarketModel& model, Rng& rng) {
    return rng.categorical(model.initial_dist);
}

namespace {

nlohmann::json matrix_json(const Eigen::MatrixXd& m) {
    nlohmann::json rows = nlohmann::json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        nlohmann::json row = nlohmann::json::array();
        for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
        rows.push_back(std::move(row));
    }
    return rows;
}

Eigen::MatrixXd matrix_from_json(const nlohmann::json& j, const char* what) {
    if (!j.is_array() || j.empty()) throw invalid_input(std::string("model json: bad ") + what);
    const std::size_t rows = j.size();
    const std::size_t cols = j[0].is_array() ? j[0].size() : 0;
    if (cols == 0) throw invalid_input(std::string("model json: bad ") + what);
    Eigen::MatrixXd m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    for (std::size_t i = 0; i < rows; ++i) {
        if (!j[i].is_array() || j[i].size() != cols) {
            throw invalid_input(std::string("model json: ragged ") + what);
        }
        for (std::size_t c = 0; c < cols; ++c) {
            m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) = j[i][c].get<double>();
        }
    }
    return m;
}

Eigen::VectorXd vector_from_json(const nlohmann::json& j, const char* what) {
    if (!j.is_array() || j.empty()) throw invalid_input(std::string("model json: bad ") + what);
    Eigen::VectorXd v(static_cast<Eigen::Index>(j.size()));
    for (std::size_t i = 0; i < j.size(); ++i) v(static_cast<Eigen::Index>(i)) = j[i].get<double>();
    return v;
}

}  // namespace

std::string model_to_json(const MarketModel& model) {
    nlohmann::json j;
    j["n_states"] = model.n_states;
    j["cash_enabled"] = model.cash_enabled;
    j["transition"] = matrix_json(model.transition);
    j["means"] = matrix_json(model.means);
    nlohmann::json covs = nlohmann::json::array();
    for (const Eigen::MatrixXd& cov : model.covariances) covs.push_back(matrix_json(cov));
    j["covariances"] = std::move(covs);
    nlohmann::json pi = nlohmann::json::array();
    for (Eigen::Index i = 0; i < model.initial_dist.size(); ++i) pi.push_back(model.initial_dist(i));
    j["initial_dist"] = std::move(pi);
    return j.dump(2);
}

MarketModel model_from_json(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw invalid_input(std::string("model json: ") + e.what());
    }
    MarketModel model;
    try {
        model.n_states = j.at("n_states").get<int>();
        model.cash_enabled = j.value("cash_enabled", true);
        model.transition = matrix_from_json(j.at("transition"), "transition");
        model.means = matrix_from_json(j.at("means"), "means");
        for (const nlohmann::json& cov : j.at("covariances")) {
            model.covariances.push_back(matrix_from_json(cov, "covariances"));
        }
        model.initial_dist = vector_from_json(j.at("initial_dist"), "initial_dist");
    } catch (const nlohmann::json::exception& e) {
        throw invalid_input(std::string("model json: ") + e.what());
    }
    model.validate();
    return model;
}

MarketModel load_model(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw invalid_input("cannot open model file: " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return model_from_json(ss.str());
}

void save_model(const MarketModel& model, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw invalid_input("cannot open model file for writing: " + path);
    out << model_to_json(model) << "\n";
}

Eigen::VectorXd Observation::features() const {
    const Eigen::Index n = allocation.size();
    if (last_returns.size() != n) throw invalid_input("observation length mismatch");
    Eigen::VectorXd f(1 + 2 * n);
    f(0) = wealth;
    f.segment(1, n) = allocation;
    f.segment(1 + n, n) = last_returns;
    return f;
}

MarketEnv::MarketEnv(ConstraintConfig config, MarketModel model, std::uint64_t seed,
                     EnvOptions options)
    : config_(std::move(config)),
      options_(options),
      model_(std::move(model)),
      rng_(seed) {
    model_.validate();
    if (config_.n_assets() != static_cast<int>(model_.n_assets())) {
        throw invalid_input("config and market model disagree on the number of assets");
    }
    if (options_.horizon < 1 || !(options_.kappa >= 0.0)) {
        throw invalid_input("invalid environment options");
    }
    polytope_ = to_h_polytope(config_);
    sampling_factors_.reserve(static_cast<std::size_t>(model_.n_states));
    for (int s = 0; s < model_.n_states; ++s) {
        sampling_factors_.push_back(return_sampling_factor(model_, s));
    }
}

MarketEnv::MarketEnv(ConstraintConfig config, Eigen::MatrixXd realized_returns,
                     EnvOptions options)
    : config_(std::move(config)),
      options_(options),
      replay_(true),
      rng_(0),
      realized_(std::move(realized_returns)) {
    if (realized_.cols() != config_.n_assets()) {
        throw invalid_input("realized returns and config disagree on the number of assets");
    }
    if (options_.horizon < 1 || !(options_.kappa >= 0.0)) {
        throw invalid_input("invalid environment options");
    }
    if (realized_.rows() < options_.horizon) throw invalid_input("insufficient rows");
    polytope_ = to_h_polytope(config_);
}

const Observation& MarketEnv::reset() {
    const Eigen::Index n = config_.n_assets();
    obs_.wealth = 1.0;
    obs_.allocation = Eigen::VectorXd::Zero(n);
    obs_.allocation(0) = 1.0;
    obs_.last_returns = Eigen::VectorXd::Zero(n);
    episode_ = EpisodeRecord{};
    step_index_ = 0;
    if (!replay_) hidden_state_ = sample_initial_state(model_, rng_);
    episode_active_ = true;
    return obs_;
}

Eigen::VectorXd MarketEnv::draw_returns() {
    if (replay_) return realized_.row(step_index_).transpose();
    Eigen::VectorXd theta = draw_state_returns(
        model_, hidden_state_, sampling_factors_[static_cast<std::size_t>(hidden_state_)], rng_);
    hidden_state_ = rng_.categorical(model_.transition.row(hidden_state_).transpose());
    return theta;
}

// L1 projection back into the action space, solved as a linear program
// over the variables [x, e] with e bounding |x - a| per coordinate.
Eigen::VectorXd MarketEnv::admissible_action(const Eigen::VectorXd& action) {
    const Eigen::Index n = action.size();
    const Eigen::Index m = polytope_.a_matrix.rows();
    LpProblem lp;
    lp.c = Eigen::VectorXd::Zero(2 * n);
    lp.c.tail(n).setOnes();
    lp.a_eq = Eigen::MatrixXd::Zero(1, 2 * n);
    lp.a_eq.row(0).head(n).setOnes();
    lp.b_eq = Eigen::VectorXd::Ones(1);
    lp.a_ge = Eigen::MatrixXd::Zero(m + 2 * n, 2 * n);
    lp.b_ge = Eigen::VectorXd::Zero(m + 2 * n);
    lp.a_ge.topLeftCorner(m, n) = polytope_.a_matrix;
    lp.b_ge.head(m) = polytope_.b_vector;
    for (Eigen::Index i = 0; i < n; ++i) {
        lp.a_ge(m + 2 * i, i) = -1.0;
        lp.a_ge(m + 2 * i, n + i) = 1.0;
        lp.b_ge(m + 2 * i) = -action(i);
        lp.a_ge(m + 2 * i + 1, i) = 1.0;
        lp.a_ge(m + 2 * i + 1, n + i) = 1.0;
        lp.b_ge(m + 2 * i + 1) = action(i);
    }
    const LpResult sol = solve_lp(lp);
    if (sol.status == LpStatus::Infeasible) throw infeasible("infeasible configuration");
    if (sol.status != LpStatus::Optimal) throw numerical("action projection failed");
    Eigen::VectorXd x = sol.x.head(n).cwiseMax(0.0);
    const double total = x.sum();
    if (!(total > 0.0)) throw numerical("action projection failed");
    return x / total;
}

MarketEnv::StepResult MarketEnv::step(const Eigen::VectorXd& action) {
    if (!episode_active_) throw invalid_input("step called on a finished episode; call reset");
    Eigen::VectorXd a = action;
    if (!membership(config_, a, options_.membership_tol)) {
        if (options_.strict_membership) {
            throw invalid_input("action violates the constraint configuration");
        }
        ++violations_;
        a = admissible_action(a);
    }

    const double tc = options_.kappa * (a - obs_.allocation).lpNorm<1>();
    const Eigen::VectorXd theta = draw_returns();
    const double portfolio_return = a.dot(theta);
    const double reward = portfolio_return - tc;

    EpisodeStep record;
    record.observation = obs_;
    record.allocation = a;
    record.returns = theta;
    record.transaction_cost = tc;
    record.reward = reward;
    episode_.steps.push_back(std::move(record));
    episode_.nu += reward;

    // Holdings drift with realized gross returns before the next rebalance;
    // a wiped-out portfolio falls back to cash.
    const Eigen::VectorXd gross = (theta.array() + 1.0).max(0.0).matrix();
    const double denom = a.dot(gross);
    Eigen::VectorXd drifted(a.size());
    if (denom > 1e-9) {
        drifted = a.cwiseProduct(gross) / denom;
        drifted /= drifted.sum();
    } else {
        drifted = Eigen::VectorXd::Zero(a.size());
        drifted(0) = 1.0;
    }
    obs_.wealth = std::max(obs_.wealth * (1.0 + reward), 1e-12);
    obs_.allocation = std::move(drifted);
    obs_.last_returns = theta;

    ++step_index_;
    const bool done = step_index_ >= options_.horizon;
    if (done) episode_active_ = false;
    return {obs_, reward, done};
}

EpisodeRecord run_backtest(const PriceTable& prices, const PolicyFn& policy,
                           const ConstraintConfig& config, const EnvOptions& options) {
    if (config.n_assets() != static_cast<int>(prices.n_assets()) + 1) {
        throw invalid_input("config universe must cover cash plus the price table's assets");
    }
    if (prices.n_rows() < options.horizon + 1) throw invalid_input("insufficient rows");
    const Eigen::MatrixXd risky = to_returns(prices);
    Eigen::MatrixXd full = Eigen::MatrixXd::Zero(options.horizon, config.n_assets());
    full.rightCols(prices.n_assets()) = risky.topRows(options.horizon);

    MarketEnv env(config, std::move(full), options);
    Observation obs = env.reset();
    for (int t = 0; t < options.horizon; ++t) {
        const Eigen::VectorXd a = policy(obs);
        const MarketEnv::StepResult res = env.step(a);
        obs = res.observation;
    }
    return env.episode();
}

}  // namespace caosd
