#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "caosd/caosd.h"

namespace {

using ConfigPtr = std::unique_ptr<caosd_config, decltype(&caosd_config_free)>;
using ModelPtr = std::unique_ptr<caosd_model, decltype(&caosd_model_free)>;
using SamplerPtr = std::unique_ptr<caosd_sampler, decltype(&caosd_sampler_free)>;

[[noreturn]] void fail(int code, const std::string& message) {
    std::cerr << "error: " << message << "\n";
    throw CLI::RuntimeError(code);
}

void check(caosd_status status) {
    if (status != CAOSD_OK) fail(static_cast<int>(status), caosd_last_error());
}

std::string grab(char* text) {
    std::string out = text;
    caosd_string_free(text);
    return out;
}

std::string read_text_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) fail(2, "cannot open file: " + path);
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return buffer.str();
}

void write_text_file(const std::string& path, const std::string& text) {
    std::ofstream out(path);
    if (!out) fail(2, "cannot write output file: " + path);
    out << text;
    if (!out) fail(2, "cannot write output file: " + path);
}

ConfigPtr load_config_handle(const std::string& path) {
    caosd_config* cfg = nullptr;
    check(caosd_config_load(path.c_str(), &cfg));
    return ConfigPtr(cfg, &caosd_config_free);
}

ModelPtr load_model_handle(const std::string& path) {
    caosd_model* model = nullptr;
    check(caosd_model_load(path.c_str(), &model));
    return ModelPtr(model, &caosd_model_free);
}

std::string render_config(const caosd_config* cfg) {
    char* text = nullptr;
    check(caosd_config_render(cfg, &text));
    return grab(text);
}

// Default outputs land in --out-dir; an explicit --out wins as given.
std::string resolve_out(const std::string& out_dir, const std::string& explicit_out,
                        const std::string& default_name) {
    if (!explicit_out.empty()) return explicit_out;
    std::filesystem::create_directories(out_dir);
    return out_dir + "/" + default_name;
}

std::string format_value(double v) {
    char buffer[40];
    std::snprintf(buffer, sizeof(buffer), "%.17g", v);
    return buffer;
}

std::vector<double> parse_point(const std::string& text) {
    std::vector<double> values;
    std::string token;
    std::istringstream stream(text);
    while (std::getline(stream, token, ',')) {
        try {
            std::size_t used = 0;
            values.push_back(std::stod(token, &used));
            if (used != token.size()) throw std::invalid_argument(token);
        } catch (const std::exception&) {
            fail(2, "invalid point component: " + token);
        }
    }
    if (values.empty()) fail(2, "empty point");
    return values;
}

void print_metrics(const std::string& metrics_json) {
    const nlohmann::json j = nlohmann::json::parse(metrics_json);
    for (const nlohmann::json& row : j.at("approaches")) {
        std::printf("%-24s episodes=%-6d mean_nu=%.6g ci=[%.6g, %.6g]",
                    row.at("approach").get<std::string>().c_str(),
                    row.at("episodes").get<int>(), row.at("mean_nu").get<double>(),
                    row.at("ci_lo").get<double>(), row.at("ci_hi").get<double>());
        if (row.contains("delta_vs_random")) {
            std::printf("  delta=%.6g [%.6g, %.6g]", row.at("delta_vs_random").get<double>(),
                        row.at("delta_ci_lo").get<double>(), row.at("delta_ci_hi").get<double>());
        }
        std::printf("\n");
    }
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Constrained portfolio allocation toolkit: simplex decomposition, "
                 "uniform polytope sampling, HMM market fitting, Dirichlet policy "
                 "training and evaluation"};
    app.require_subcommand(1);

    unsigned long long seed = 0;
    std::string out_dir = ".";
    bool strict_membership = false;
    CLI::Option* seed_opt = app.add_option("--seed", seed, "Seed for every stochastic step");
    seed_opt->capture_default_str();
    app.add_option("--out-dir", out_dir, "Directory for default-named outputs")
        ->capture_default_str();
    app.add_flag("--strict-membership", strict_membership,
                 "Reject actions outside the constraint set instead of projecting them");

    // gen-config
    auto* gen = app.add_subcommand("gen-config", "Generate random feasible constraint configs");
    int gen_assets = 5;
    int gen_count = 1;
    std::string gen_out;
    gen->add_option("--n-assets", gen_assets, "Universe size including cash")
        ->capture_default_str();
    gen->add_option("--count", gen_count, "Number of configs")->capture_default_str();
    gen->add_option("--out", gen_out, "Output JSON file (default <out-dir>/config.json)");
    gen->callback([&] {
        if (gen_count < 1) fail(2, "count must be positive");
        const std::string path = resolve_out(out_dir, gen_out, "config.json");
        std::string text;
        if (gen_count == 1) {
            caosd_config* cfg = nullptr;
            check(caosd_config_generate(gen_assets, seed, &cfg));
            ConfigPtr holder(cfg, &caosd_config_free);
            text = render_config(cfg) + "\n";
        } else {
            nlohmann::json array = nlohmann::json::array();
            for (int i = 0; i < gen_count; ++i) {
                caosd_config* cfg = nullptr;
                check(caosd_config_generate(gen_assets, seed + i, &cfg));
                ConfigPtr holder(cfg, &caosd_config_free);
                array.push_back(nlohmann::json::parse(render_config(cfg)));
            }
            text = array.dump(2) + "\n";
        }
        write_text_file(path, text);
        std::printf("wrote %d config%s to %s\n", gen_count, gen_count == 1 ? "" : "s",
                    path.c_str());
    });

    // fit-hmm
    auto* fit = app.add_subcommand("fit-hmm", "Fit a Gaussian HMM to a price CSV");
    std::string fit_prices;
    int fit_states = 4;
    int fit_restarts = 5;
    bool fit_full_cov = false;
    std::string fit_out;
    fit->add_option("--prices", fit_prices, "CSV of date,price,... rows")->required();
    fit->add_option("--states", fit_states, "Number of hidden states")->capture_default_str();
    fit->add_option("--restarts", fit_restarts, "EM restarts")->capture_default_str();
    fit->add_flag("--full-covariance", fit_full_cov, "Fit full covariance matrices");
    fit->add_option("--out", fit_out, "Output model file (default <out-dir>/model.json)");
    fit->callback([&] {
        caosd_model* model = nullptr;
        check(caosd_fit_hmm(fit_prices.c_str(), fit_states, seed, fit_restarts,
                            fit_full_cov ? 1 : 0, &model));
        ModelPtr holder(model, &caosd_model_free);
        char* text = nullptr;
        check(caosd_model_render(model, &text));
        const std::string path = resolve_out(out_dir, fit_out, "model.json");
        write_text_file(path, grab(text) + "\n");
        std::printf("wrote model (%d assets) to %s\n", caosd_model_n_assets(model), path.c_str());
    });

    // train
    auto* train = app.add_subcommand("train", "Train the decomposition policy on a fitted market");
    std::string train_config_path, train_model_path, train_tconf_path, train_encoder_path;
    double train_kappa = 0.001;
    int train_horizon = 12;
    long train_steps = 0;
    int train_rollout = 0, train_minibatch = 0, train_epochs = 0, train_eval_episodes = 0;
    long train_eval_interval = 0;
    double train_lr = 0.0, train_entropy = 0.0, train_clip = 0.0;
    train->add_option("--config", train_config_path, "Constraint config JSON")->required();
    train->add_option("--model", train_model_path, "Market model JSON")->required();
    train->add_option("--train-config", train_tconf_path, "Training hyperparameter JSON");
    train->add_option("--encoder", train_encoder_path, "Encoder architecture JSON");
    train->add_option("--kappa", train_kappa, "Transaction cost rate")->capture_default_str();
    train->add_option("--horizon", train_horizon, "Episode length")->capture_default_str();
    CLI::Option* steps_opt = train->add_option("--steps", train_steps, "Total environment steps");
    CLI::Option* rollout_opt = train->add_option("--rollout", train_rollout, "Rollout length");
    CLI::Option* minibatch_opt = train->add_option("--minibatch", train_minibatch,
                                                   "Minibatch size");
    CLI::Option* epochs_opt = train->add_option("--epochs", train_epochs, "Epochs per batch");
    CLI::Option* lr_opt = train->add_option("--lr", train_lr, "Learning rate");
    CLI::Option* entropy_opt = train->add_option("--entropy-coef", train_entropy,
                                                 "Entropy bonus coefficient");
    CLI::Option* clip_opt = train->add_option("--clip", train_clip, "Clipping epsilon");
    CLI::Option* eval_interval_opt = train->add_option("--eval-interval", train_eval_interval,
                                                       "Steps between curve evaluations");
    CLI::Option* eval_episodes_opt = train->add_option("--eval-episodes", train_eval_episodes,
                                                       "Episodes per curve evaluation");
    train->callback([&] {
        ConfigPtr cfg = load_config_handle(train_config_path);
        ModelPtr model = load_model_handle(train_model_path);

        nlohmann::json tconf = nlohmann::json::object();
        if (!train_tconf_path.empty()) {
            try {
                tconf = nlohmann::json::parse(read_text_file(train_tconf_path));
            } catch (const nlohmann::json::exception&) {
                fail(2, "malformed train config: " + train_tconf_path);
            }
        }
        if (steps_opt->count() > 0) tconf["total_env_steps"] = train_steps;
        if (rollout_opt->count() > 0) tconf["rollout_length"] = train_rollout;
        if (minibatch_opt->count() > 0) tconf["minibatch_size"] = train_minibatch;
        if (epochs_opt->count() > 0) tconf["epochs_per_batch"] = train_epochs;
        if (lr_opt->count() > 0) tconf["learning_rate"] = train_lr;
        if (entropy_opt->count() > 0) tconf["entropy_coef"] = train_entropy;
        if (clip_opt->count() > 0) tconf["clip_epsilon"] = train_clip;
        if (eval_interval_opt->count() > 0) tconf["eval_interval"] = train_eval_interval;
        if (eval_episodes_opt->count() > 0) tconf["eval_episodes"] = train_eval_episodes;
        if (seed_opt->count() > 0 || !tconf.contains("seed")) tconf["seed"] = seed;

        std::string encoder_text;
        if (!train_encoder_path.empty()) encoder_text = read_text_file(train_encoder_path);

        std::filesystem::create_directories(out_dir);
        char* result = nullptr;
        check(caosd_train(cfg.get(), model.get(), tconf.dump().c_str(),
                          encoder_text.empty() ? nullptr : encoder_text.c_str(), train_kappa,
                          train_horizon, strict_membership ? 1 : 0, out_dir.c_str(), &result));
        const std::string result_text = grab(result);
        write_text_file(out_dir + "/train_result.json", result_text);
        std::printf("%s", result_text.c_str());
        std::printf("wrote curve.csv, checkpoint_final, checkpoint_best to %s\n",
                    out_dir.c_str());
    });

    // evaluate
    auto* eval = app.add_subcommand("evaluate", "Evaluate approaches on the simulated market");
    std::string eval_config_path, eval_model_path, eval_checkpoint, eval_approaches, eval_out;
    int eval_episodes = 1000;
    double eval_kappa = 0.001;
    int eval_horizon = 12;
    eval->add_option("--config", eval_config_path, "Constraint config JSON")->required();
    eval->add_option("--model", eval_model_path, "Market model JSON")->required();
    eval->add_option("--checkpoint", eval_checkpoint, "Policy checkpoint (needed for CAOSD)");
    eval->add_option("--approaches", eval_approaches,
                     "Comma-separated from CAOSD,RANDOM,EXTERNAL:name=file.csv")
        ->default_val("CAOSD,RANDOM");
    eval->add_option("--episodes", eval_episodes, "Evaluation episodes per approach")
        ->capture_default_str();
    eval->add_option("--kappa", eval_kappa, "Transaction cost rate")->capture_default_str();
    eval->add_option("--horizon", eval_horizon, "Episode length")->capture_default_str();
    eval->add_option("--out", eval_out, "Metrics file (default <out-dir>/metrics.json)");
    eval->callback([&] {
        ConfigPtr cfg = load_config_handle(eval_config_path);
        ModelPtr model = load_model_handle(eval_model_path);
        char* text = nullptr;
        check(caosd_evaluate(cfg.get(), model.get(), eval_approaches.c_str(),
                             eval_checkpoint.empty() ? nullptr : eval_checkpoint.c_str(),
                             eval_episodes, seed, eval_kappa, eval_horizon,
                             strict_membership ? 1 : 0, &text));
        const std::string metrics = grab(text);
        const std::string path = resolve_out(out_dir, eval_out, "metrics.json");
        write_text_file(path, metrics);
        print_metrics(metrics);
        std::printf("wrote %s\n", path.c_str());
    });

    // backtest
    auto* bt = app.add_subcommand("backtest", "Replay approaches against a historical price CSV");
    std::string bt_config_path, bt_prices, bt_checkpoint, bt_approaches, bt_out;
    int bt_episodes = 1000;
    double bt_kappa = 0.001;
    bt->add_option("--config", bt_config_path, "Constraint config JSON")->required();
    bt->add_option("--prices", bt_prices, "CSV of date,price,... rows")->required();
    bt->add_option("--checkpoint", bt_checkpoint, "Policy checkpoint (needed for CAOSD)");
    bt->add_option("--approaches", bt_approaches,
                   "Comma-separated from CAOSD,RANDOM,EXTERNAL:name=file.csv")
        ->default_val("CAOSD,RANDOM");
    bt->add_option("--episodes", bt_episodes, "Resampled trajectories for RANDOM")
        ->capture_default_str();
    bt->add_option("--kappa", bt_kappa, "Transaction cost rate")->capture_default_str();
    bt->add_option("--out", bt_out, "Metrics file (default <out-dir>/backtest_metrics.json)");
    bt->callback([&] {
        ConfigPtr cfg = load_config_handle(bt_config_path);
        char* text = nullptr;
        check(caosd_backtest(cfg.get(), bt_prices.c_str(), bt_approaches.c_str(),
                             bt_checkpoint.empty() ? nullptr : bt_checkpoint.c_str(), bt_episodes,
                             seed, bt_kappa, strict_membership ? 1 : 0, &text));
        const std::string metrics = grab(text);
        const std::string path = resolve_out(out_dir, bt_out, "backtest_metrics.json");
        write_text_file(path, metrics);
        print_metrics(metrics);
        std::printf("wrote %s\n", path.c_str());
    });

    // sample-polytope
    auto* sample = app.add_subcommand("sample-polytope",
                                      "Draw uniform samples from the constraint polytope");
    std::string sample_config_path, sample_out;
    int sample_count = 100;
    int sample_burn_in = 1000;
    int sample_thinning = 10;
    sample->add_option("--config", sample_config_path, "Constraint config JSON")->required();
    sample->add_option("--count", sample_count, "Number of samples")->capture_default_str();
    sample->add_option("--burn-in", sample_burn_in, "Chain burn-in steps")->capture_default_str();
    sample->add_option("--thinning", sample_thinning, "Chain steps per sample")
        ->capture_default_str();
    sample->add_option("--out", sample_out, "Output CSV (default <out-dir>/samples.csv)");
    sample->callback([&] {
        if (sample_count < 1) fail(2, "count must be positive");
        ConfigPtr cfg = load_config_handle(sample_config_path);
        const int n = caosd_config_n_assets(cfg.get());
        const nlohmann::json meta = nlohmann::json::parse(render_config(cfg.get()));
        const std::vector<std::string> labels = meta.at("universe");

        caosd_sampler* raw = nullptr;
        check(caosd_sampler_create(cfg.get(), seed, sample_burn_in, sample_thinning, &raw));
        SamplerPtr sampler(raw, &caosd_sampler_free);

        std::string csv;
        for (int i = 0; i < n; ++i) csv += (i ? "," : "") + labels[i];
        csv += "\n";
        std::vector<double> point(n);
        for (int row = 0; row < sample_count; ++row) {
            check(caosd_sampler_next(sampler.get(), point.data()));
            for (int i = 0; i < n; ++i) {
                if (i) csv += ",";
                csv += format_value(point[i]);
            }
            csv += "\n";
        }
        const std::string path = resolve_out(out_dir, sample_out, "samples.csv");
        write_text_file(path, csv);
        std::printf("wrote %d samples to %s\n", sample_count, path.c_str());
    });

    // decompose
    auto* dec = app.add_subcommand(
        "decompose", "Show the weight vector and sub-simplex preimage of an allocation");
    std::string dec_config_path, dec_point, dec_out;
    dec->add_option("--config", dec_config_path, "Constraint config JSON")->required();
    dec->add_option("--point", dec_point, "Allocation as comma-separated weights")->required();
    dec->add_option("--out", dec_out, "Optional JSON output file");
    dec->callback([&] {
        ConfigPtr cfg = load_config_handle(dec_config_path);
        const int n = caosd_config_n_assets(cfg.get());
        const std::vector<double> point = parse_point(dec_point);
        if (static_cast<int>(point.size()) != n) {
            fail(2, "point has " + std::to_string(point.size()) + " components; config has " +
                        std::to_string(n) + " assets");
        }
        std::vector<double> sub_values(4 * n), weights(4);
        check(caosd_decompose(cfg.get(), point.data(), sub_values.data(), weights.data()));

        nlohmann::json j;
        j["weights"] = weights;
        nlohmann::json subs = nlohmann::json::array();
        for (int k = 0; k < 4; ++k) {
            subs.push_back(std::vector<double>(sub_values.begin() + k * n,
                                               sub_values.begin() + (k + 1) * n));
        }
        j["sub_actions"] = subs;
        const std::string text = j.dump(2) + "\n";
        std::printf("%s", text.c_str());
        if (!dec_out.empty()) write_text_file(dec_out, text);
    });

    // summarize
    auto* sum = app.add_subcommand("summarize",
                                   "Aggregate experiment metrics under a matrix directory");
    std::string sum_dir;
    sum->add_option("--dir", sum_dir, "Experiment directory (default --out-dir)");
    sum->callback([&] {
        const std::string dir = sum_dir.empty() ? out_dir : sum_dir;
        char* text = nullptr;
        check(caosd_summarize(dir.c_str(), 1, &text));
        std::printf("%s", grab(text).c_str());
        std::printf("wrote %s/summary.csv and %s/summary.json\n", dir.c_str(), dir.c_str());
    });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        if (code == 0) return 0;
        if (dynamic_cast<const CLI::RuntimeError*>(&e) != nullptr) return code;
        return 2;
    }
    return 0;
}
