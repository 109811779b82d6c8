#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "caosd/constraints.hpp"
#include "caosd/rng.hpp"

namespace caosd {

// Monthly closing prices for the risky assets; cash is not a column here.
struct PriceTable {
    std::vector<std::string> dates;
    Eigen::MatrixXd prices;
    std::vector<std::string> labels;

    Eigen::Index n_rows() const { return prices.rows(); }
    Eigen::Index n_assets() const { return prices.cols(); }
};

// CSV schema: header `date,LABEL1,...,LABELk`, ISO dates, positive floats.
PriceTable ingest_prices(const std::string& csv_text);
PriceTable load_prices(const std::string& path);

// Simple returns p_{t+1}/p_t - 1, (T-1) x k; the cash column is appended
// at index 0 downstream, not here.
Eigen::MatrixXd to_returns(const PriceTable& table);

// Gaussian hidden-Markov return model over the full universe (cash at
// index 0). Immutable after fitting; shareable across environments.
struct MarketModel {
    int n_states = 1;
    // When set, index 0 is cash: zero mean, zero covariance, draws are
    // exactly 0. Synthetic models used in tests may turn this off.
    bool cash_enabled = true;
    Eigen::MatrixXd transition;
    Eigen::MatrixXd means;
    std::vector<Eigen::MatrixXd> covariances;
    Eigen::VectorXd initial_dist;

    Eigen::Index n_assets() const { return means.cols(); }
    void validate() const;
};

struct HmmFitOptions {
    int restarts = 5;
    int max_iters = 500;
    double tol = 1e-6;
    bool full_covariance = false;
};

struct HmmFitResult {
    MarketModel model;
    double log_likelihood = 0.0;
    // Per-iteration log-likelihood of the winning restart; nondecreasing.
    std::vector<double> ll_trace;
};

// Baum-Welch EM on risky-asset returns (T x k); the fitted model prepends
// the cash asset, so model.n_assets() == k + 1.
HmmFitResult fit_hmm(const Eigen::MatrixXd& returns, int n_states, std::uint64_t seed,
                     const HmmFitOptions& options = {});

// PSD square root used to draw correlated returns: theta = mean + F * z.
Eigen::MatrixXd return_sampling_factor(const MarketModel& model, int state);

// Draws this state's return vector, then advances the chain, consuming
// the rng in that order.
std::pair<int, Eigen::VectorXd> simulate_step(const MarketModel& model, int state, Rng& rng);

int sample_initial_state(const MarketModel& model, Rng& rng);

std::string model_to_json(const MarketModel& model);
MarketModel model_from_json(const std::string& text);
MarketModel load_model(const std::string& path);
void save_model(const MarketModel& model, const std::string& path);

struct Observation {
    double wealth = 1.0;
    Eigen::VectorXd allocation;
    Eigen::VectorXd last_returns;

    // Flat feature layout consumed by policies: [wealth, allocation, last_returns].
    Eigen::VectorXd features() const;
};

struct EpisodeStep {
    Observation observation;
    Eigen::VectorXd allocation;
    Eigen::VectorXd returns;
    double transaction_cost = 0.0;
    double reward = 0.0;
};

struct EpisodeRecord {
    std::vector<EpisodeStep> steps;
    double nu = 0.0;
};

struct EnvOptions {
    double kappa = 0.001;
    int horizon = 12;
    // Strict mode rejects non-member actions; lenient mode projects them
    // back into the action space and counts the violation.
    bool strict_membership = false;
    double membership_tol = 1e-9;
};

class MarketEnv {
public:
    struct StepResult {
        Observation observation;
        double reward = 0.0;
        bool done = false;
    };

    MarketEnv(ConstraintConfig config, MarketModel model, std::uint64_t seed,
              EnvOptions options = {});
    // Replay mode: realized_returns is T x N including the cash column.
    MarketEnv(ConstraintConfig config, Eigen::MatrixXd realized_returns,
              EnvOptions options = {});

    const Observation& reset();
    StepResult step(const Eigen::VectorXd& action);

    const ConstraintConfig& config() const { return config_; }
    const EnvOptions& options() const { return options_; }
    const EpisodeRecord& episode() const { return episode_; }
    bool episode_active() const { return episode_active_; }
    // Observation the next step() will act on; valid while an episode is active.
    const Observation& observation() const { return obs_; }
    // Cumulative across episodes; the trainer reports it.
    long violation_count() const { return violations_; }

private:
    Eigen::VectorXd draw_returns();
    Eigen::VectorXd admissible_action(const Eigen::VectorXd& action);

    ConstraintConfig config_;
    EnvOptions options_;
    bool replay_ = false;
    MarketModel model_;
    std::vector<Eigen::MatrixXd> sampling_factors_;
    Rng rng_;
    int hidden_state_ = 0;
    Eigen::MatrixXd realized_;
    HPolytope polytope_;
    Observation obs_;
    EpisodeRecord episode_;
    int step_index_ = 0;
    bool episode_active_ = false;
    long violations_ = 0;
};

using PolicyFn = std::function<Eigen::VectorXd(const Observation&)>;

// Single deterministic trajectory over the first `horizon` realized
// returns of the price table; cfg must cover the table's assets plus cash.
EpisodeRecord run_backtest(const PriceTable& prices, const PolicyFn& policy,
                           const ConstraintConfig& config, const EnvOptions& options = {});

}  // namespace caosd
