#pragma once

#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "caosd/market.hpp"
#include "caosd/policy.hpp"
#include "caosd/rng.hpp"

namespace caosd {

struct TrainConfig {
    long total_env_steps = 100000;
    int rollout_length = 768;
    int minibatch_size = 64;
    int epochs_per_batch = 4;
    double clip_epsilon = 0.2;
    double gamma = 0.99;
    double gae_lambda = 0.95;
    double learning_rate = 3e-4;
    double entropy_coef = 0.0;
    double value_coef = 0.5;
    unsigned long long seed = 0;
    long eval_interval = 5000;
    int eval_episodes = 200;
    double kl_threshold = 0.05;
    double grad_norm_clip = 0.5;

    void validate() const;
};

nlohmann::json train_config_to_json(const TrainConfig& t);
TrainConfig train_config_from_json(const nlohmann::json& j);

struct Adam {
    Adam(int n_params, double lr);

    void step(Eigen::VectorXd& params, const Eigen::VectorXd& grad);

    double lr;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    long t = 0;
    Eigen::VectorXd m, v;
};

struct RolloutBatch {
    std::vector<Observation> observations;
    std::vector<SurrogateAction> surrogates;
    std::vector<double> log_probs; // recorded at collection time
    std::vector<double> rewards;
    std::vector<double> values;
    std::vector<char> episode_ends; // done flag per transition
    double bootstrap_value = 0.0;   // V of the state after the last step, 0 if done

    Eigen::VectorXd advantages; // raw GAE values; normalization happens in the update
    Eigen::VectorXd returns;

    int size() const { return static_cast<int>(rewards.size()); }
};

// Steps the (persistent) environment rollout_length times, resetting at
// episode boundaries. Log-probs and values are recorded under the current
// parameters.
RolloutBatch collect_rollouts(MarketEnv& env, const DirichletPolicy& policy, int rollout_length,
                              Rng& rng);

// Fills batch.advantages and batch.returns with the recursive estimator,
// resetting at episode ends and bootstrapping the non-terminal tail.
void compute_gae(RolloutBatch& batch, double gamma, double lambda);

struct UpdateStats {
    double policy_loss = 0.0;
    double value_loss = 0.0;
    double entropy = 0.0;
    double approx_kl = 0.0;          // of the last processed minibatch
    double first_ratio_max_dev = 0.0; // max |rho - 1| over the first minibatch
    int minibatches_processed = 0;
    bool early_stopped = false;
    bool aborted = false;
    std::string diagnostics;
};

// Clipped-surrogate update over shuffled minibatches. Advantages are
// normalized per batch (sigma guard 1e-8). A minibatch whose KL estimate
// exceeds kl_threshold is not applied and ends the update; a non-finite
// loss aborts the update with diagnostics.
UpdateStats ppo_update(DirichletPolicy& policy, Adam& opt, const RolloutBatch& batch,
                       const TrainConfig& tconf, Rng& rng);

// nu of J deterministic-policy episodes on freshly seeded simulated envs.
std::vector<double> run_deterministic_episodes(const DirichletPolicy& policy,
                                               const MarketModel& model,
                                               const ConstraintConfig& cfg,
                                               const EnvOptions& env_opts, int episodes,
                                               unsigned long long seed_base);

struct CurvePoint {
    long step = 0;
    double mean_nu = 0.0;
    double ci_lo = 0.0;
    double ci_hi = 0.0;
};

struct TrainResult {
    std::vector<CurvePoint> curve;
    Eigen::VectorXd final_params;
    Eigen::VectorXd best_params;
    double best_mean_nu = 0.0;
    long best_step = 0;
    long env_steps = 0;
    long violations = 0;
};

// Full training loop: rollouts, GAE, clipped updates, periodic deterministic
// evaluation. When out_dir is non-empty, writes curve.csv, checkpoint_final
// and checkpoint_best there.
TrainResult train(const ConstraintConfig& cfg, const MarketModel& model, const TrainConfig& tconf,
                  const EncoderConfig& enc = {}, const EnvOptions& env_opts = {},
                  const std::string& out_dir = "");

void write_curve_csv(const std::string& path, const std::vector<CurvePoint>& curve);

} // namespace caosd
