#include "caosd/caosd.h"

#include <cstring>
#include <fstream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "caosd/constraints.hpp"
#include "caosd/errors.hpp"
#include "caosd/harness.hpp"
#include "caosd/market.hpp"
#include "caosd/policy.hpp"
#include "caosd/polytope_sampler.hpp"
#include "caosd/simplex_decomp.hpp"
#include "caosd/trainer.hpp"

struct caosd_config {
    caosd::ConstraintConfig cfg;
};

struct caosd_model {
    caosd::MarketModel model;
};

struct caosd_policy {
    caosd::DirichletPolicy policy;
};

struct caosd_sampler {
    caosd::PolytopeSampler sampler;
};

namespace {

thread_local std::string g_last_error;

template <typename Fn>
caosd_status guarded(Fn&& fn) {
    try {
        fn();
        g_last_error.clear();
        return CAOSD_OK;
    } catch (const caosd::Error& e) {
        g_last_error = e.what();
        return static_cast<caosd_status>(e.code());
    } catch (const std::exception& e) {
        g_last_error = e.what();
        return CAOSD_NUMERICAL;
    }
}

void require(bool ok, const char* what) {
    if (!ok) throw caosd::invalid_input(what);
}

char* copy_string(const std::string& text) {
    char* out = new char[text.size() + 1];
    std::memcpy(out, text.c_str(), text.size() + 1);
    return out;
}

nlohmann::json parse_json(const char* text, const char* what) {
    try {
        return nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception&) {
        throw caosd::invalid_input(std::string("malformed ") + what);
    }
}

Eigen::VectorXd map_vector(const double* data, int n) {
    return Eigen::Map<const Eigen::VectorXd>(data, n);
}

std::vector<std::string> split_approaches(const char* approaches) {
    require(approaches != nullptr, "approaches must be provided");
    std::vector<std::string> out;
    std::string token;
    std::istringstream stream(approaches);
    while (std::getline(stream, token, ',')) {
        if (!token.empty()) out.push_back(token);
    }
    require(!out.empty(), "no approaches selected");
    return out;
}

std::string run_evaluation(const caosd::ExperimentSpec& spec, const char* checkpoint_path,
                           const caosd::PriceTable* prices) {
    std::optional<caosd::DirichletPolicy> policy;
    if (checkpoint_path != nullptr) {
        policy = caosd::load_policy_checkpoint(spec.config, checkpoint_path);
    }
    std::vector<std::pair<std::string, std::vector<double>>> nus;
    for (const std::string& approach : spec.approaches) {
        nus.emplace_back(approach,
                         caosd::evaluate_approach(approach, spec,
                                                  policy ? &*policy : nullptr, prices));
    }
    const caosd::MetricsReport report =
        caosd::build_report(prices != nullptr ? "bt" : "sim", nus);
    return caosd::metrics_to_json(report).dump(2) + "\n";
}

} // namespace

extern "C" {

const char* caosd_last_error(void) { return g_last_error.c_str(); }

void caosd_string_free(char* text) { delete[] text; }

caosd_status caosd_config_generate(int n_assets, unsigned long long seed, caosd_config** out) {
    return guarded([&] {
        require(out != nullptr, "missing output argument");
        const caosd::AssetUniverse universe = caosd::AssetUniverse::make_default(n_assets);
        *out = new caosd_config{
            caosd::generate_random_config(universe, static_cast<std::int64_t>(seed))};
    });
}

caosd_status caosd_config_parse(const char* json_text, caosd_config** out) {
    return guarded([&] {
        require(json_text != nullptr && out != nullptr, "missing argument");
        *out = new caosd_config{caosd::config_from_json(json_text)};
    });
}

caosd_status caosd_config_load(const char* path, caosd_config** out) {
    return guarded([&] {
        require(path != nullptr && out != nullptr, "missing argument");
        *out = new caosd_config{caosd::load_config(path)};
    });
}

caosd_status caosd_config_render(const caosd_config* cfg, char** out_json) {
    return guarded([&] {
        require(cfg != nullptr && out_json != nullptr, "missing argument");
        *out_json = copy_string(caosd::config_to_json(cfg->cfg));
    });
}

int caosd_config_n_assets(const caosd_config* cfg) {
    return cfg == nullptr ? -1 : cfg->cfg.universe.n_assets;
}

caosd_status caosd_config_check_feasible(const caosd_config* cfg, int* out_feasible) {
    return guarded([&] {
        require(cfg != nullptr && out_feasible != nullptr, "missing argument");
        *out_feasible = caosd::is_feasible(cfg->cfg).feasible ? 1 : 0;
    });
}

void caosd_config_free(caosd_config* cfg) { delete cfg; }

caosd_status caosd_compose(const caosd_config* cfg, const double* sub_values,
                           double* out_allocation, double* out_weights) {
    return guarded([&] {
        require(cfg != nullptr && sub_values != nullptr && out_allocation != nullptr,
                "missing argument");
        const int n = cfg->cfg.universe.n_assets;
        const caosd::Decomposition decomp = caosd::build_decomposition(cfg->cfg);
        std::array<Eigen::VectorXd, 4> subs;
        for (int j = 0; j < 4; ++j) subs[j] = map_vector(sub_values + j * n, n);
        caosd::WeightVector weights;
        const Eigen::VectorXd allocation = caosd::compose(decomp, subs, &weights);
        Eigen::Map<Eigen::VectorXd>(out_allocation, n) = allocation;
        if (out_weights != nullptr) {
            Eigen::Map<Eigen::Vector4d> w(out_weights);
            w = weights.as_vector();
        }
    });
}

caosd_status caosd_decompose(const caosd_config* cfg, const double* allocation,
                             double* out_sub_values, double* out_weights) {
    return guarded([&] {
        require(cfg != nullptr && allocation != nullptr && out_sub_values != nullptr,
                "missing argument");
        const int n = cfg->cfg.universe.n_assets;
        const caosd::Preimage pre = caosd::decompose(cfg->cfg, map_vector(allocation, n));
        for (int j = 0; j < 4; ++j) {
            Eigen::Map<Eigen::VectorXd>(out_sub_values + j * n, n) = pre.subs[j].values;
        }
        if (out_weights != nullptr) {
            Eigen::Map<Eigen::Vector4d> w(out_weights);
            w = pre.weights.as_vector();
        }
    });
}

caosd_status caosd_membership(const caosd_config* cfg, const double* allocation, double tol,
                              int* out_member) {
    return guarded([&] {
        require(cfg != nullptr && allocation != nullptr && out_member != nullptr,
                "missing argument");
        const int n = cfg->cfg.universe.n_assets;
        *out_member = caosd::membership(cfg->cfg, map_vector(allocation, n), tol) ? 1 : 0;
    });
}

caosd_status caosd_sampler_create(const caosd_config* cfg, unsigned long long seed, int burn_in,
                                  int thinning, caosd_sampler** out) {
    return guarded([&] {
        require(cfg != nullptr && out != nullptr, "missing argument");
        caosd::SamplerOptions options;
        if (burn_in > 0) options.burn_in = burn_in;
        if (thinning > 0) options.thinning = thinning;
        *out = new caosd_sampler{caosd::PolytopeSampler(cfg->cfg, seed, options)};
    });
}

caosd_status caosd_sampler_next(caosd_sampler* sampler, double* out_allocation) {
    return guarded([&] {
        require(sampler != nullptr && out_allocation != nullptr, "missing argument");
        const Eigen::VectorXd draw = sampler->sampler.next();
        Eigen::Map<Eigen::VectorXd>(out_allocation, draw.size()) = draw;
    });
}

void caosd_sampler_free(caosd_sampler* sampler) { delete sampler; }

caosd_status caosd_fit_hmm(const char* prices_csv_path, int n_states, unsigned long long seed,
                           int restarts, int full_covariance, caosd_model** out) {
    return guarded([&] {
        require(prices_csv_path != nullptr && out != nullptr, "missing argument");
        const caosd::PriceTable prices = caosd::load_prices(prices_csv_path);
        caosd::HmmFitOptions options;
        if (restarts > 0) options.restarts = restarts;
        options.full_covariance = full_covariance != 0;
        const caosd::HmmFitResult fit =
            caosd::fit_hmm(caosd::to_returns(prices), n_states, seed, options);
        *out = new caosd_model{fit.model};
    });
}

caosd_status caosd_model_parse(const char* json_text, caosd_model** out) {
    return guarded([&] {
        require(json_text != nullptr && out != nullptr, "missing argument");
        *out = new caosd_model{caosd::model_from_json(json_text)};
    });
}

caosd_status caosd_model_load(const char* path, caosd_model** out) {
    return guarded([&] {
        require(path != nullptr && out != nullptr, "missing argument");
        *out = new caosd_model{caosd::load_model(path)};
    });
}

caosd_status caosd_model_render(const caosd_model* model, char** out_json) {
    return guarded([&] {
        require(model != nullptr && out_json != nullptr, "missing argument");
        *out_json = copy_string(caosd::model_to_json(model->model));
    });
}

int caosd_model_n_assets(const caosd_model* model) {
    return model == nullptr ? -1 : static_cast<int>(model->model.n_assets());
}

void caosd_model_free(caosd_model* model) { delete model; }

caosd_status caosd_policy_load(const caosd_config* cfg, const char* checkpoint_path,
                               caosd_policy** out) {
    return guarded([&] {
        require(cfg != nullptr && checkpoint_path != nullptr && out != nullptr,
                "missing argument");
        *out = new caosd_policy{caosd::load_policy_checkpoint(cfg->cfg, checkpoint_path)};
    });
}

caosd_status caosd_policy_act(const caosd_policy* policy, double wealth, const double* allocation,
                              const double* last_returns, double* out_allocation) {
    return guarded([&] {
        require(policy != nullptr && allocation != nullptr && last_returns != nullptr &&
                    out_allocation != nullptr,
                "missing argument");
        const int n = policy->policy.config().universe.n_assets;
        caosd::Observation obs;
        obs.wealth = wealth;
        obs.allocation = map_vector(allocation, n);
        obs.last_returns = map_vector(last_returns, n);
        Eigen::Map<Eigen::VectorXd>(out_allocation, n) = policy->policy.deterministic_action(obs);
    });
}

void caosd_policy_free(caosd_policy* policy) { delete policy; }

caosd_status caosd_train(const caosd_config* cfg, const caosd_model* model,
                         const char* train_config_json, const char* encoder_json, double kappa,
                         int horizon, int strict_membership, const char* out_dir,
                         char** out_result_json) {
    return guarded([&] {
        require(cfg != nullptr && model != nullptr, "missing argument");
        caosd::TrainConfig tconf;
        if (train_config_json != nullptr) {
            tconf = caosd::train_config_from_json(parse_json(train_config_json, "train config"));
        }
        caosd::EncoderConfig enc;
        if (encoder_json != nullptr) {
            enc = caosd::encoder_config_from_json(parse_json(encoder_json, "encoder config"));
        }
        caosd::EnvOptions env_opts;
        env_opts.kappa = kappa;
        if (horizon > 0) env_opts.horizon = horizon;
        env_opts.strict_membership = strict_membership != 0;
        const caosd::TrainResult result =
            caosd::train(cfg->cfg, model->model, tconf, enc, env_opts,
                         out_dir != nullptr ? out_dir : "");
        if (out_result_json != nullptr) {
            nlohmann::json j{{"env_steps", result.env_steps},
                             {"violations", result.violations},
                             {"best_step", result.best_step},
                             {"best_mean_nu", result.best_mean_nu},
                             {"curve_rows", result.curve.size()}};
            *out_result_json = copy_string(j.dump(2) + "\n");
        }
    });
}

caosd_status caosd_evaluate(const caosd_config* cfg, const caosd_model* model,
                            const char* approaches, const char* checkpoint_path, int episodes,
                            unsigned long long seed, double kappa, int horizon,
                            int strict_membership, char** out_metrics_json) {
    return guarded([&] {
        require(cfg != nullptr && model != nullptr && out_metrics_json != nullptr,
                "missing argument");
        caosd::ExperimentSpec spec;
        spec.config = cfg->cfg;
        spec.market = model->model;
        spec.approaches = split_approaches(approaches);
        spec.eval_episodes = episodes;
        spec.seed = seed;
        spec.env_options.kappa = kappa;
        if (horizon > 0) spec.env_options.horizon = horizon;
        spec.env_options.strict_membership = strict_membership != 0;
        spec.validate();
        *out_metrics_json = copy_string(run_evaluation(spec, checkpoint_path, nullptr));
    });
}

caosd_status caosd_backtest(const caosd_config* cfg, const char* prices_csv_path,
                            const char* approaches, const char* checkpoint_path, int episodes,
                            unsigned long long seed, double kappa, int strict_membership,
                            char** out_metrics_json) {
    return guarded([&] {
        require(cfg != nullptr && prices_csv_path != nullptr && out_metrics_json != nullptr,
                "missing argument");
        const caosd::PriceTable prices = caosd::load_prices(prices_csv_path);
        caosd::ExperimentSpec spec;
        spec.config = cfg->cfg;
        spec.approaches = split_approaches(approaches);
        spec.eval_episodes = episodes;
        spec.seed = seed;
        spec.env_options.kappa = kappa;
        spec.env_options.strict_membership = strict_membership != 0;
        *out_metrics_json = copy_string(run_evaluation(spec, checkpoint_path, &prices));
    });
}

caosd_status caosd_summarize(const char* experiments_dir, int write_outputs,
                             char** out_summary_json) {
    return guarded([&] {
        require(experiments_dir != nullptr, "missing argument");
        const std::string dir = experiments_dir;
        const caosd::AggregateSummary summary = caosd::summarize_directory(dir);
        const std::string text = caosd::summary_to_json(summary).dump(2) + "\n";
        if (write_outputs != 0) {
            caosd::write_summary_csv(dir + "/summary.csv", summary);
            std::ofstream json_out(dir + "/summary.json");
            if (!json_out) throw caosd::invalid_input("cannot write summary under: " + dir);
            json_out << text;
        }
        if (out_summary_json != nullptr) *out_summary_json = copy_string(text);
    });
}

} // extern "C"
