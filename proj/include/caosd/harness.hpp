#pragma once

#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "caosd/constraints.hpp"
#include "caosd/market.hpp"
#include "caosd/policy.hpp"
#include "caosd/trainer.hpp"

namespace caosd {

// Approach labels: "CAOSD", "RANDOM", or "EXTERNAL:name=path.csv" where the
// CSV holds one per-episode nu value per line.
struct ExperimentSpec {
    ConstraintConfig config;
    MarketModel market;
    std::vector<std::string> approaches = {"CAOSD", "RANDOM"};
    int eval_episodes = 1000;
    unsigned long long seed = 0;
    EnvOptions env_options{};

    void validate() const;
};

struct ApproachMetrics {
    std::string approach;
    int episodes = 0;
    double mean_nu = 0.0;
    double ci_lo = 0.0; // 95%, across trajectories
    double ci_hi = 0.0;
    bool has_delta = false;
    double delta_vs_random = 0.0;
    double delta_ci_lo = 0.0; // 95%, across trajectories of both approaches
    double delta_ci_hi = 0.0;
};

struct MetricsReport {
    std::string environment; // "sim" or "bt"
    std::vector<ApproachMetrics> approaches;
};

nlohmann::json metrics_to_json(const MetricsReport& report);
MetricsReport metrics_from_json(const nlohmann::json& j);

// Uniform-random baseline: one hit-and-run chain supplies every action.
std::vector<double> evaluate_random_sim(const ConstraintConfig& cfg, const MarketModel& model,
                                        const EnvOptions& opts, int episodes,
                                        unsigned long long seed);
double backtest_policy(const PriceTable& prices, const DirichletPolicy& policy,
                       const ConstraintConfig& cfg, const EnvOptions& opts);
std::vector<double> backtest_random(const PriceTable& prices, const ConstraintConfig& cfg,
                                    const EnvOptions& opts, int episodes, unsigned long long seed);
std::vector<double> load_external_nus(const std::string& path);

// Dispatch on the approach label. CAOSD needs `policy`; passing `prices`
// switches every approach to backtest mode (single deterministic run for
// CAOSD, `eval_episodes` runs for RANDOM).
std::vector<double> evaluate_approach(const std::string& approach, const ExperimentSpec& spec,
                                      const DirichletPolicy* policy = nullptr,
                                      const PriceTable* prices = nullptr);

// Per-approach means with across-trajectory CIs plus per-experiment deltas
// against RANDOM when it is present.
MetricsReport build_report(const std::string& environment,
                           const std::vector<std::pair<std::string, std::vector<double>>>& nus);

struct AggregateRow {
    std::string approach;
    int n_experiments = 0;
    double theta_mean = 0.0;
    double theta_ci_lo = 0.0; // 95%, across experiments
    double theta_ci_hi = 0.0;
    bool has_delta = false;
    double delta_mean = 0.0;
    double delta_ci_lo = 0.0; // 95%, across experiments
    double delta_ci_hi = 0.0;
};

struct AggregateSummary {
    std::string environment;
    std::vector<AggregateRow> rows;
};

// Cross-experiment reduction; every report must cover the same environment
// and the same approach set.
AggregateSummary aggregate(const std::vector<MetricsReport>& reports);

void write_summary_csv(const std::string& path, const AggregateSummary& summary);
nlohmann::json summary_to_json(const AggregateSummary& summary);

struct ExperimentOutcome {
    std::string directory;
    bool failed = false;
    std::string error;
    MetricsReport metrics;
};

struct MatrixResult {
    std::vector<ExperimentOutcome> experiments;
    AggregateSummary summary; // over the successful experiments
};

// Trains CAOSD per spec, evaluates every approach in simulation, and writes
// exp_NNN/{config.json, curve.csv, checkpoint_final, checkpoint_best,
// metrics.json} plus top-level summary.csv and summary.json. A failing
// experiment is recorded and the matrix continues.
MatrixResult run_experiment_matrix(const std::vector<ExperimentSpec>& specs,
                                   const TrainConfig& tconf, const EncoderConfig& enc,
                                   const std::string& out_dir);

// Recomputes the summary from the exp_*/metrics.json files under dir.
AggregateSummary summarize_directory(const std::string& dir);

} // namespace caosd
