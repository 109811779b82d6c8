#include "caosd/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "caosd/errors.hpp"
#include "caosd/polytope_sampler.hpp"

namespace caosd {

namespace {

constexpr unsigned long long kCaosdEvalOffset = 10000019ull;
constexpr unsigned long long kRandomChainOffset = 20000003ull;
constexpr unsigned long long kRandomEnvOffset = 30000001ull;

double mean_of(const std::vector<double>& xs) {
    double s = 0.0;
    for (double x : xs) s += x;
    return s / static_cast<double>(xs.size());
}

double sample_var(const std::vector<double>& xs, double mean) {
    if (xs.size() < 2) return 0.0;
    double ss = 0.0;
    for (double x : xs) ss += (x - mean) * (x - mean);
    return ss / static_cast<double>(xs.size() - 1);
}

std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::string external_path(const std::string& approach) {
    const auto eq = approach.find('=');
    if (eq == std::string::npos || eq + 1 == approach.size()) {
        throw invalid_input("external approach needs a results file: " + approach);
    }
    return approach.substr(eq + 1);
}

std::string approach_label(const std::string& approach) {
    if (approach.rfind("EXTERNAL:", 0) == 0) {
        const auto eq = approach.find('=');
        return eq == std::string::npos ? approach : approach.substr(0, eq);
    }
    return approach;
}

} // namespace

void ExperimentSpec::validate() const {
    if (eval_episodes < 2) throw invalid_input("eval_episodes must be at least 2");
    if (approaches.empty()) throw invalid_input("no approaches selected");
    if (!is_feasible(config).feasible) throw infeasible("infeasible configuration");
    market.validate();
}

nlohmann::json metrics_to_json(const MetricsReport& report) {
    nlohmann::json rows = nlohmann::json::array();
    for (const ApproachMetrics& a : report.approaches) {
        nlohmann::json row{{"approach", a.approach}, {"episodes", a.episodes},
                           {"mean_nu", a.mean_nu},   {"ci_lo", a.ci_lo},
                           {"ci_hi", a.ci_hi}};
        if (a.has_delta) {
            row["delta_vs_random"] = a.delta_vs_random;
            row["delta_ci_lo"] = a.delta_ci_lo;
            row["delta_ci_hi"] = a.delta_ci_hi;
        }
        rows.push_back(std::move(row));
    }
    return nlohmann::json{{"environment", report.environment}, {"approaches", rows}};
}

MetricsReport metrics_from_json(const nlohmann::json& j) {
    MetricsReport report;
    try {
        report.environment = j.at("environment").get<std::string>();
        for (const nlohmann::json& row : j.at("approaches")) {
            ApproachMetrics a;
            a.approach = row.at("approach").get<std::string>();
            a.episodes = row.at("episodes").get<int>();
            a.mean_nu = row.at("mean_nu").get<double>();
            a.ci_lo = row.at("ci_lo").get<double>();
            a.ci_hi = row.at("ci_hi").get<double>();
            if (row.contains("delta_vs_random")) {
                a.has_delta = true;
                a.delta_vs_random = row.at("delta_vs_random").get<double>();
                a.delta_ci_lo = row.at("delta_ci_lo").get<double>();
                a.delta_ci_hi = row.at("delta_ci_hi").get<double>();
            }
            report.approaches.push_back(std::move(a));
        }
    } catch (const nlohmann::json::exception&) {
        throw invalid_input("malformed metrics report");
    }
    return report;
}

std::vector<double> evaluate_random_sim(const ConstraintConfig& cfg, const MarketModel& model,
                                        const EnvOptions& opts, int episodes,
                                        unsigned long long seed) {
    PolytopeSampler sampler(cfg, seed + kRandomChainOffset);
    std::vector<double> nus;
    nus.reserve(episodes);
    for (int j = 0; j < episodes; ++j) {
        MarketEnv env(cfg, model, seed + kRandomEnvOffset + static_cast<unsigned long long>(j),
                      opts);
        env.reset();
        while (true) {
            if (env.step(sampler.next()).done) break;
        }
        nus.push_back(env.episode().nu);
    }
    return nus;
}

double backtest_policy(const PriceTable& prices, const DirichletPolicy& policy,
                       const ConstraintConfig& cfg, const EnvOptions& opts) {
    const PolicyFn fn = [&policy](const Observation& obs) {
        return policy.deterministic_action(obs);
    };
    return run_backtest(prices, fn, cfg, opts).nu;
}

std::vector<double> backtest_random(const PriceTable& prices, const ConstraintConfig& cfg,
                                    const EnvOptions& opts, int episodes,
                                    unsigned long long seed) {
    PolytopeSampler sampler(cfg, seed + kRandomChainOffset);
    const PolicyFn fn = [&sampler](const Observation&) { return sampler.next(); };
    std::vector<double> nus;
    nus.reserve(episodes);
    for (int j = 0; j < episodes; ++j) nus.push_back(run_backtest(prices, fn, cfg, opts).nu);
    return nus;
}

std::vector<double> load_external_nus(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw invalid_input("cannot open external results: " + path);
    std::vector<double> nus;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        if (nus.empty() && line == "nu") continue;
        std::size_t used = 0;
        double v = 0.0;
        try {
            v = std::stod(line, &used);
        } catch (const std::exception&) {
            throw invalid_input("invalid external results row: " + line);
        }
        if (used != line.size() || !std::isfinite(v)) {
            throw invalid_input("invalid external results row: " + line);
        }
        nus.push_back(v);
    }
    if (nus.empty()) throw invalid_input("empty external results: " + path);
    return nus;
}

std::vector<double> evaluate_approach(const std::string& approach, const ExperimentSpec& spec,
                                      const DirichletPolicy* policy, const PriceTable* prices) {
    if (approach == "CAOSD") {
        if (policy == nullptr) throw invalid_input("missing checkpoint for CAOSD");
        if (prices != nullptr) {
            return {backtest_policy(*prices, *policy, spec.config, spec.env_options)};
        }
        return run_deterministic_episodes(*policy, spec.market, spec.config, spec.env_options,
                                          spec.eval_episodes, spec.seed + kCaosdEvalOffset);
    }
    if (approach == "RANDOM") {
        if (prices != nullptr) {
            return backtest_random(*prices, spec.config, spec.env_options, spec.eval_episodes,
                                   spec.seed);
        }
        return evaluate_random_sim(spec.config, spec.market, spec.env_options, spec.eval_episodes,
                                   spec.seed);
    }
    if (approach.rfind("EXTERNAL:", 0) == 0) return load_external_nus(external_path(approach));
    throw invalid_input("unknown approach: " + approach);
}

MetricsReport build_report(const std::string& environment,
                           const std::vector<std::pair<std::string, std::vector<double>>>& nus) {
    if (environment != "sim" && environment != "bt") {
        throw invalid_input("environment must be sim or bt");
    }
    const std::vector<double>* random_nus = nullptr;
    for (const auto& [name, values] : nus) {
        if (approach_label(name) == "RANDOM") random_nus = &values;
    }

    MetricsReport report;
    report.environment = environment;
    for (const auto& [name, values] : nus) {
        if (values.empty()) throw invalid_input("no episodes recorded for " + name);
        ApproachMetrics a;
        a.approach = approach_label(name);
        a.episodes = static_cast<int>(values.size());
        a.mean_nu = mean_of(values);
        const double half =
            1.96 * std::sqrt(sample_var(values, a.mean_nu) / static_cast<double>(values.size()));
        a.ci_lo = a.mean_nu - half;
        a.ci_hi = a.mean_nu + half;
        if (random_nus != nullptr) {
            a.has_delta = true;
            if (a.approach == "RANDOM") {
                a.delta_vs_random = 0.0;
                a.delta_ci_lo = 0.0;
                a.delta_ci_hi = 0.0;
            } else {
                const double random_mean = mean_of(*random_nus);
                a.delta_vs_random = a.mean_nu - random_mean;
                const double var =
                    sample_var(values, a.mean_nu) / static_cast<double>(values.size()) +
                    sample_var(*random_nus, random_mean) /
                        static_cast<double>(random_nus->size());
                const double dhalf = 1.96 * std::sqrt(var);
                a.delta_ci_lo = a.delta_vs_random - dhalf;
                a.delta_ci_hi = a.delta_vs_random + dhalf;
            }
        }
        report.approaches.push_back(std::move(a));
    }
    return report;
}

AggregateSummary aggregate(const std::vector<MetricsReport>& reports) {
    if (reports.empty()) throw invalid_input("no reports to aggregate");
    const std::string environment = reports.front().environment;
    std::vector<std::string> names;
    for (const ApproachMetrics& a : reports.front().approaches) names.push_back(a.approach);
    const std::set<std::string> name_set(names.begin(), names.end());

    for (const MetricsReport& r : reports) {
        std::set<std::string> other;
        for (const ApproachMetrics& a : r.approaches) other.insert(a.approach);
        if (r.environment != environment || other != name_set) {
            throw invalid_input("mismatched experiment sets across approaches");
        }
    }

    AggregateSummary summary;
    summary.environment = environment;
    for (const std::string& name : names) {
        AggregateRow row;
        row.approach = name;
        std::vector<double> thetas, deltas;
        bool all_have_delta = true;
        for (const MetricsReport& r : reports) {
            for (const ApproachMetrics& a : r.approaches) {
                if (a.approach != name) continue;
                thetas.push_back(a.mean_nu);
                if (a.has_delta) {
                    deltas.push_back(a.delta_vs_random);
                } else {
                    all_have_delta = false;
                }
            }
        }
        row.n_experiments = static_cast<int>(thetas.size());
        row.theta_mean = mean_of(thetas);
        const double thalf = 1.96 * std::sqrt(sample_var(thetas, row.theta_mean) /
                                              static_cast<double>(thetas.size()));
        row.theta_ci_lo = row.theta_mean - thalf;
        row.theta_ci_hi = row.theta_mean + thalf;
        if (all_have_delta && !deltas.empty()) {
            row.has_delta = true;
            row.delta_mean = mean_of(deltas);
            const double dhalf = 1.96 * std::sqrt(sample_var(deltas, row.delta_mean) /
                                                  static_cast<double>(deltas.size()));
            row.delta_ci_lo = row.delta_mean - dhalf;
            row.delta_ci_hi = row.delta_mean + dhalf;
        }
        summary.rows.push_back(std::move(row));
    }
    return summary;
}

void write_summary_csv(const std::string& path, const AggregateSummary& summary) {
    std::ofstream out(path);
    if (!out) throw invalid_input("cannot write summary file: " + path);
    out << "environment,approach,n_experiments,theta_mean,theta_ci_lo,theta_ci_hi,"
           "delta_mean,delta_ci_lo,delta_ci_hi\n";
    for (const AggregateRow& r : summary.rows) {
        out << summary.environment << "," << r.approach << "," << r.n_experiments << ","
            << format_double(r.theta_mean) << "," << format_double(r.theta_ci_lo) << ","
            << format_double(r.theta_ci_hi) << ",";
        if (r.has_delta) {
            out << format_double(r.delta_mean) << "," << format_double(r.delta_ci_lo) << ","
                << format_double(r.delta_ci_hi);
        } else {
            out << ",,";
        }
        out << "\n";
    }
    if (!out) throw invalid_input("cannot write summary file: " + path);
}

nlohmann::json summary_to_json(const AggregateSummary& summary) {
    nlohmann::json rows = nlohmann::json::array();
    for (const AggregateRow& r : summary.rows) {
        nlohmann::json row{{"approach", r.approach},
                           {"n_experiments", r.n_experiments},
                           {"theta_mean", r.theta_mean},
                           {"theta_ci_lo", r.theta_ci_lo},
                           {"theta_ci_hi", r.theta_ci_hi}};
        if (r.has_delta) {
            row["delta_mean"] = r.delta_mean;
            row["delta_ci_lo"] = r.delta_ci_lo;
            row["delta_ci_hi"] = r.delta_ci_hi;
        }
        rows.push_back(std::move(row));
    }
    return nlohmann::json{{"environment", summary.environment}, {"rows", rows}};
}

MatrixResult run_experiment_matrix(const std::vector<ExperimentSpec>& specs,
                                   const TrainConfig& tconf, const EncoderConfig& enc,
                                   const std::string& out_dir) {
    namespace fs = std::filesystem;
    if (specs.empty()) throw invalid_input("no experiments specified");
    fs::create_directories(out_dir);

    MatrixResult result;
    std::vector<MetricsReport> reports;
    for (std::size_t i = 0; i < specs.size(); ++i) {
        char name[32];
        std::snprintf(name, sizeof(name), "exp_%03zu", i);
        ExperimentOutcome outcome;
        outcome.directory = out_dir + "/" + name;
        try {
            const ExperimentSpec& spec = specs[i];
            spec.validate();
            fs::create_directories(outcome.directory);
            {
                std::ofstream cfg_out(outcome.directory + "/config.json");
                cfg_out << config_to_json(spec.config) << "\n";
            }

            TrainConfig tc = tconf;
            tc.seed = tconf.seed + i;
            const TrainResult trained =
                train(spec.config, spec.market, tc, enc, spec.env_options, outcome.directory);

            DirichletPolicy policy(spec.config, enc, tc.seed);
            policy.params() = trained.best_params;

            std::vector<std::pair<std::string, std::vector<double>>> nus;
            for (const std::string& approach : spec.approaches) {
                nus.emplace_back(approach, evaluate_approach(approach, spec, &policy));
            }
            outcome.metrics = build_report("sim", nus);
            {
                std::ofstream metrics_out(outcome.directory + "/metrics.json");
                metrics_out << metrics_to_json(outcome.metrics).dump(2) << "\n";
            }
            reports.push_back(outcome.metrics);
        } catch (const std::exception& e) {
            outcome.failed = true;
            outcome.error = e.what();
        }
        result.experiments.push_back(std::move(outcome));
    }

    if (!reports.empty()) {
        result.summary = aggregate(reports);
        write_summary_csv(out_dir + "/summary.csv", result.summary);
        std::ofstream json_out(out_dir + "/summary.json");
        json_out << summary_to_json(result.summary).dump(2) << "\n";
    }
    return result;
}

AggregateSummary summarize_directory(const std::string& dir) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(dir)) throw invalid_input("not a directory: " + dir);
    std::vector<std::string> paths;
    for (const fs::directory_entry& entry : fs::directory_iterator(dir)) {
        if (!entry.is_directory()) continue;
        const std::string base = entry.path().filename().string();
        if (base.rfind("exp_", 0) != 0) continue;
        const fs::path metrics = entry.path() / "metrics.json";
        if (fs::exists(metrics)) paths.push_back(metrics.string());
    }
    std::sort(paths.begin(), paths.end());
    if (paths.empty()) throw invalid_input("no experiment metrics under: " + dir);

    std::vector<MetricsReport> reports;
    for (const std::string& path : paths) {
        std::ifstream in(path);
        if (!in) throw invalid_input("cannot open metrics file: " + path);
        nlohmann::json j;
        try {
            in >> j;
        } catch (const nlohmann::json::exception&) {
            throw invalid_input("malformed metrics report");
        }
        reports.push_back(metrics_from_json(j));
    }
    return aggregate(reports);
}

} // namespace caosd
