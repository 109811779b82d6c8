#include "caosd/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>

#include "caosd/errors.hpp"

namespace caosd {

namespace {

std::vector<int> shuffled_indices(int n, Rng& rng) {
    std::vector<int> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    for (int i = n - 1; i > 0; --i) {
        const int j = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(i) + 1));
        std::swap(idx[i], idx[j]);
    }
    return idx;
}

double mean_of(const std::vector<double>& xs) {
    return std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
}

double sample_std(const std::vector<double>& xs, double mean) {
    if (xs.size() < 2) return 0.0;
    double ss = 0.0;
    for (double x : xs) ss += (x - mean) * (x - mean);
    return std::sqrt(ss / static_cast<double>(xs.size() - 1));
}

std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

} // namespace

void TrainConfig::validate() const {
    if (total_env_steps < 1) throw invalid_input("total_env_steps must be positive");
    if (rollout_length < 1) throw invalid_input("rollout_length must be positive");
    if (minibatch_size < 1) throw invalid_input("minibatch_size must be positive");
    if (epochs_per_batch < 1) throw invalid_input("epochs_per_batch must be positive");
    if (!(clip_epsilon > 0.0 && clip_epsilon < 1.0)) {
        throw invalid_input("clip_epsilon must lie in (0, 1)");
    }
    if (!(gamma > 0.0 && gamma <= 1.0)) throw invalid_input("gamma must lie in (0, 1]");
    if (!(gae_lambda > 0.0 && gae_lambda <= 1.0)) {
        throw invalid_input("gae_lambda must lie in (0, 1]");
    }
    if (!(learning_rate > 0.0)) throw invalid_input("learning_rate must be positive");
    if (!(value_coef >= 0.0)) throw invalid_input("value_coef must be nonnegative");
    if (!(entropy_coef >= 0.0)) throw invalid_input("entropy_coef must be nonnegative");
    if (eval_interval < 1) throw invalid_input("eval_interval must be positive");
    if (eval_episodes < 1) throw invalid_input("eval_episodes must be positive");
    if (!(kl_threshold > 0.0)) throw invalid_input("kl_threshold must be positive");
    if (!(grad_norm_clip > 0.0)) throw invalid_input("grad_norm_clip must be positive");
}

nlohmann::json train_config_to_json(const TrainConfig& t) {
    return nlohmann::json{{"total_env_steps", t.total_env_steps},
                          {"rollout_length", t.rollout_length},
                          {"minibatch_size", t.minibatch_size},
                          {"epochs_per_batch", t.epochs_per_batch},
                          {"clip_epsilon", t.clip_epsilon},
                          {"gamma", t.gamma},
                          {"gae_lambda", t.gae_lambda},
                          {"learning_rate", t.learning_rate},
                          {"entropy_coef", t.entropy_coef},
                          {"value_coef", t.value_coef},
                          {"seed", t.seed},
                          {"eval_interval", t.eval_interval},
                          {"eval_episodes", t.eval_episodes},
                          {"kl_threshold", t.kl_threshold},
                          {"grad_norm_clip", t.grad_norm_clip}};
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
    TrainConfig t;
    try {
        if (!j.is_object()) throw invalid_input("malformed train config");
        if (j.contains("total_env_steps")) t.total_env_steps = j.at("total_env_steps").get<long>();
        if (j.contains("rollout_length")) t.rollout_length = j.at("rollout_length").get<int>();
        if (j.contains("minibatch_size")) t.minibatch_size = j.at("minibatch_size").get<int>();
        if (j.contains("epochs_per_batch")) {
            t.epochs_per_batch = j.at("epochs_per_batch").get<int>();
        }
        if (j.contains("clip_epsilon")) t.clip_epsilon = j.at("clip_epsilon").get<double>();
        if (j.contains("gamma")) t.gamma = j.at("gamma").get<double>();
        if (j.contains("gae_lambda")) t.gae_lambda = j.at("gae_lambda").get<double>();
        if (j.contains("learning_rate")) t.learning_rate = j.at("learning_rate").get<double>();
        if (j.contains("entropy_coef")) t.entropy_coef = j.at("entropy_coef").get<double>();
        if (j.contains("value_coef")) t.value_coef = j.at("value_coef").get<double>();
        if (j.contains("seed")) t.seed = j.at("seed").get<unsigned long long>();
        if (j.contains("eval_interval")) t.eval_interval = j.at("eval_interval").get<long>();
        if (j.contains("eval_episodes")) t.eval_episodes = j.at("eval_episodes").get<int>();
        if (j.contains("kl_threshold")) t.kl_threshold = j.at("kl_threshold").get<double>();
        if (j.contains("grad_norm_clip")) t.grad_norm_clip = j.at("grad_norm_clip").get<double>();
    } catch (const nlohmann::json::exception&) {
        throw invalid_input("malformed train config");
    }
    t.validate();
    return t;
}

Adam::Adam(int n_params, double lr_in) : lr(lr_in) {
    m = Eigen::VectorXd::Zero(n_params);
    v = Eigen::VectorXd::Zero(n_params);
}

void Adam::step(Eigen::VectorXd& params, const Eigen::VectorXd& grad) {
    if (grad.size() != m.size() || params.size() != m.size()) {
        throw invalid_input("optimizer size mismatch");
    }
    ++t;
    m = beta1 * m + (1.0 - beta1) * grad;
    v = beta2 * v + (1.0 - beta2) * grad.cwiseProduct(grad);
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
    params -= (lr / bc1) * m.cwiseQuotient(((v / bc2).cwiseSqrt().array() + eps).matrix());
}

RolloutBatch collect_rollouts(MarketEnv& env, const DirichletPolicy& policy, int rollout_length,
                              Rng& rng) {
    if (rollout_length < 1) throw invalid_input("rollout_length must be positive");
    RolloutBatch batch;
    batch.observations.reserve(rollout_length);
    batch.surrogates.reserve(rollout_length);
    batch.log_probs.reserve(rollout_length);
    batch.rewards.reserve(rollout_length);
    batch.values.reserve(rollout_length);
    batch.episode_ends.reserve(rollout_length);

    for (int t = 0; t < rollout_length; ++t) {
        const Observation obs = env.episode_active() ? env.observation() : env.reset();
        PolicyOutput out = policy.sample_action(obs, rng);
        batch.observations.push_back(obs);
        batch.log_probs.push_back(out.joint_log_prob);
        batch.values.push_back(policy.value(obs));
        batch.surrogates.push_back(std::move(out.surrogate));
        const MarketEnv::StepResult sr = env.step(out.action);
        batch.rewards.push_back(sr.reward);
        batch.episode_ends.push_back(sr.done ? 1 : 0);
    }
    batch.bootstrap_value = batch.episode_ends.back() ? 0.0 : policy.value(env.observation());
    return batch;
}

void compute_gae(RolloutBatch& batch, double gamma, double lambda) {
    const int n = batch.size();
    if (n == 0) throw invalid_input("empty rollout batch");
    if (static_cast<int>(batch.values.size()) != n ||
        static_cast<int>(batch.episode_ends.size()) != n) {
        throw invalid_input("inconsistent rollout batch");
    }
    batch.advantages.resize(n);
    batch.returns.resize(n);
    double next_advantage = 0.0;
    for (int t = n - 1; t >= 0; --t) {
        const bool done = batch.episode_ends[t] != 0;
        const double v_next = done ? 0.0
                                   : (t + 1 < n ? batch.values[t + 1] : batch.bootstrap_value);
        const double delta = batch.rewards[t] + gamma * v_next - batch.values[t];
        next_advantage = delta + (done ? 0.0 : gamma * lambda * next_advantage);
        batch.advantages[t] = next_advantage;
        batch.returns[t] = next_advantage + batch.values[t];
    }
}

UpdateStats ppo_update(DirichletPolicy& policy, Adam& opt, const RolloutBatch& batch,
                       const TrainConfig& tconf, Rng& rng) {
    tconf.validate();
    const int n = batch.size();
    if (n == 0) throw invalid_input("empty rollout batch");
    if (batch.advantages.size() != n || batch.returns.size() != n) {
        throw invalid_input("advantages not computed");
    }

    const double adv_mean = batch.advantages.mean();
    const double adv_sigma =
        std::sqrt((batch.advantages.array() - adv_mean).square().sum() / n);
    const Eigen::VectorXd adv =
        (batch.advantages.array() - adv_mean) / std::max(adv_sigma, 1e-8);

    UpdateStats stats;
    Eigen::VectorXd grad(policy.param_count());
    double loss_pol_sum = 0.0, loss_val_sum = 0.0, entropy_sum = 0.0;
    bool first_minibatch = true;

    for (int epoch = 0; epoch < tconf.epochs_per_batch; ++epoch) {
        const std::vector<int> order = shuffled_indices(n, rng);
        for (int start = 0; start < n; start += tconf.minibatch_size) {
            const int count = std::min(tconf.minibatch_size, n - start);
            grad.setZero();
            double mb_pol = 0.0, mb_val = 0.0, mb_ent = 0.0, mb_kl = 0.0;
            double ratio_dev = 0.0;

            for (int k = 0; k < count; ++k) {
                const int i = order[start + k];
                const Observation& obs = batch.observations[i];
                const SurrogateAction& sur = batch.surrogates[i];

                const double lp_new = policy.log_prob(obs, sur);
                const double rho = std::exp(lp_new - batch.log_probs[i]);
                const double a = adv[i];
                const double unclipped = rho * a;
                const double clipped =
                    std::clamp(rho, 1.0 - tconf.clip_epsilon, 1.0 + tconf.clip_epsilon) * a;
                const double pol_coeff = unclipped <= clipped ? a * rho : 0.0;
                mb_pol -= std::min(unclipped, clipped);
                mb_kl += batch.log_probs[i] - lp_new;
                ratio_dev = std::max(ratio_dev, std::abs(rho - 1.0));

                const double v_new = policy.value(obs);
                const double v_old = batch.values[i];
                const double ret = batch.returns[i];
                const double v_clip =
                    v_old + std::clamp(v_new - v_old, -tconf.clip_epsilon, tconf.clip_epsilon);
                const double l_un = (v_new - ret) * (v_new - ret);
                const double l_cl = (v_clip - ret) * (v_clip - ret);
                mb_val += 0.5 * std::max(l_un, l_cl);
                const double v_coeff = l_un >= l_cl ? (v_new - ret) : 0.0;

                double ent = 0.0;
                policy.log_prob_backward(obs, sur, -pol_coeff / count, grad,
                                         -tconf.entropy_coef / count, &ent);
                mb_ent += ent;
                policy.value_backward(obs, tconf.value_coef * v_coeff / count, grad);
            }

            mb_pol /= count;
            mb_val /= count;
            mb_ent /= count;
            mb_kl /= count;
            const double total_loss =
                mb_pol + tconf.value_coef * mb_val - tconf.entropy_coef * mb_ent;
            if (!std::isfinite(total_loss) || !grad.allFinite()) {
                stats.aborted = true;
                stats.diagnostics = "non-finite loss or gradient; update aborted";
                return stats;
            }
            if (first_minibatch) {
                stats.first_ratio_max_dev = ratio_dev;
                first_minibatch = false;
            }
            stats.approx_kl = mb_kl;
            if (mb_kl > tconf.kl_threshold) {
                stats.early_stopped = true;
                return stats;
            }

            const double norm = grad.norm();
            if (norm > tconf.grad_norm_clip) grad *= tconf.grad_norm_clip / norm;
            opt.step(policy.params(), grad);

            loss_pol_sum += mb_pol;
            loss_val_sum += mb_val;
            entropy_sum += mb_ent;
            ++stats.minibatches_processed;
        }
    }

    if (stats.minibatches_processed > 0) {
        stats.policy_loss = loss_pol_sum / stats.minibatches_processed;
        stats.value_loss = loss_val_sum / stats.minibatches_processed;
        stats.entropy = entropy_sum / stats.minibatches_processed;
    }
    return stats;
}

std::vector<double> run_deterministic_episodes(const DirichletPolicy& policy,
                                               const MarketModel& model,
                                               const ConstraintConfig& cfg,
                                               const EnvOptions& env_opts, int episodes,
                                               unsigned long long seed_base) {
    std::vector<double> nus;
    nus.reserve(episodes);
    for (int j = 0; j < episodes; ++j) {
        MarketEnv env(cfg, model, seed_base + static_cast<unsigned long long>(j), env_opts);
        Observation obs = env.reset();
        while (true) {
            const MarketEnv::StepResult sr = env.step(policy.deterministic_action(obs));
            if (sr.done) break;
            obs = sr.observation;
        }
        nus.push_back(env.episode().nu);
    }
    return nus;
}

TrainResult train(const ConstraintConfig& cfg, const MarketModel& model, const TrainConfig& tconf,
                  const EncoderConfig& enc, const EnvOptions& env_opts,
                  const std::string& out_dir) {
    tconf.validate();
    if (!is_feasible(cfg).feasible) throw infeasible("infeasible configuration");

    DirichletPolicy policy(cfg, enc, tconf.seed);
    Adam opt(policy.param_count(), tconf.learning_rate);
    MarketEnv env(cfg, model, tconf.seed + 1, env_opts);
    Rng action_rng(tconf.seed + 2);
    Rng shuffle_rng(tconf.seed + 3);
    const unsigned long long eval_base = tconf.seed + 1000000007ull;

    TrainResult result;
    const long total_rows = tconf.total_env_steps / tconf.eval_interval;
    long next_row = 1;
    long steps = 0;
    double best = -std::numeric_limits<double>::infinity();

    while (steps < tconf.total_env_steps) {
        RolloutBatch batch = collect_rollouts(env, policy, tconf.rollout_length, action_rng);
        steps += batch.size();
        compute_gae(batch, tconf.gamma, tconf.gae_lambda);
        ppo_update(policy, opt, batch, tconf, shuffle_rng);

        while (next_row <= total_rows && steps >= next_row * tconf.eval_interval) {
            const std::vector<double> nus = run_deterministic_episodes(
                policy, model, cfg, env_opts,
                tconf.eval_episodes,
                eval_base + static_cast<unsigned long long>(next_row - 1) *
                                static_cast<unsigned long long>(tconf.eval_episodes));
            const double mean = mean_of(nus);
            const double half =
                1.96 * sample_std(nus, mean) / std::sqrt(static_cast<double>(nus.size()));
            result.curve.push_back(
                {next_row * tconf.eval_interval, mean, mean - half, mean + half});
            if (mean > best) {
                best = mean;
                result.best_params = policy.params();
                result.best_mean_nu = mean;
                result.best_step = next_row * tconf.eval_interval;
            }
            ++next_row;
        }
    }

    result.final_params = policy.params();
    if (result.best_params.size() == 0) {
        result.best_params = result.final_params;
        result.best_mean_nu = 0.0;
        result.best_step = steps;
    }
    result.env_steps = steps;
    result.violations = env.violation_count();

    if (!out_dir.empty()) {
        std::filesystem::create_directories(out_dir);
        write_curve_csv(out_dir + "/curve.csv", result.curve);
        policy.save_checkpoint_file(out_dir + "/checkpoint_final");
        DirichletPolicy best_policy(cfg, enc, tconf.seed);
        best_policy.params() = result.best_params;
        best_policy.save_checkpoint_file(out_dir + "/checkpoint_best");
    }
    return result;
}

void write_curve_csv(const std::string& path, const std::vector<CurvePoint>& curve) {
    std::ofstream out(path);
    if (!out) throw invalid_input("cannot write curve file: " + path);
    out << "step,mean_nu,ci_lo,ci_hi\n";
    for (const CurvePoint& p : curve) {
        out << p.step << "," << format_double(p.mean_nu) << "," << format_double(p.ci_lo) << ","
            << format_double(p.ci_hi) << "\n";
    }
    if (!out) throw invalid_input("cannot write curve file: " + path);
}

} // namespace caosd
