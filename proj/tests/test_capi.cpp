#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "caosd/caosd.h"

namespace {

std::string grab(char* text) {
    REQUIRE(text != nullptr);
    std::string out = text;
    caosd_string_free(text);
    return out;
}

void write_price_csv(const std::string& path, int rows) {
    std::ofstream out(path);
    out << "date,EQ,BND\n";
    double p1 = 100.0, p2 = 50.0;
    char line[96];
    for (int m = 0; m < rows; ++m) {
        p1 *= 1.0 + 0.012 * ((m % 3) - 1);
        p2 *= 1.004;
        std::snprintf(line, sizeof(line), "%04d-%02d-01,%.8f,%.8f\n", 2019 + m / 12, m % 12 + 1,
                      p1, p2);
        out << line;
    }
}

std::string infeasible_config_json() {
    nlohmann::json j;
    j["universe"] = {"CASH", "A1", "A2"};
    j["v1"] = {1};
    j["c1"] = 0.8;
    j["v2"] = {2};
    j["c2"] = 0.8;
    j["seed"] = 0;
    return j.dump();
}

} // namespace

TEST_CASE("config handles generate, render and reject bad input") {
    caosd_config* cfg = nullptr;
    REQUIRE(caosd_config_generate(5, 42, &cfg) == CAOSD_OK);
    CHECK(caosd_config_n_assets(cfg) == 5);
    CHECK(std::string(caosd_last_error()).empty());

    int feasible = -1;
    REQUIRE(caosd_config_check_feasible(cfg, &feasible) == CAOSD_OK);
    CHECK(feasible == 1);

    char* text = nullptr;
    REQUIRE(caosd_config_render(cfg, &text) == CAOSD_OK);
    const std::string rendered = grab(text);

    caosd_config* reparsed = nullptr;
    REQUIRE(caosd_config_parse(rendered.c_str(), &reparsed) == CAOSD_OK);
    REQUIRE(caosd_config_render(reparsed, &text) == CAOSD_OK);
    CHECK(grab(text) == rendered);
    caosd_config_free(reparsed);
    caosd_config_free(cfg);

    caosd_config* bad = nullptr;
    CHECK(caosd_config_parse("not json", &bad) == CAOSD_INVALID_INPUT);
    CHECK(!std::string(caosd_last_error()).empty());
    CHECK(caosd_config_generate(0, 1, &bad) == CAOSD_INVALID_INPUT);
    CHECK(caosd_config_n_assets(nullptr) == -1);

    caosd_config* infeasible = nullptr;
    REQUIRE(caosd_config_parse(infeasible_config_json().c_str(), &infeasible) == CAOSD_OK);
    REQUIRE(caosd_config_check_feasible(infeasible, &feasible) == CAOSD_OK);
    CHECK(feasible == 0);
    caosd_config_free(infeasible);
}

TEST_CASE("sampled points decompose and recompose through the boundary") {
    caosd_config* cfg = nullptr;
    REQUIRE(caosd_config_generate(6, 9, &cfg) == CAOSD_OK);
    const int n = caosd_config_n_assets(cfg);

    caosd_sampler* sampler = nullptr;
    REQUIRE(caosd_sampler_create(cfg, 7, 200, 5, &sampler) == CAOSD_OK);

    std::vector<double> point(n), sub_values(4 * n), weights(4), recomposed(n);
    for (int draw = 0; draw < 20; ++draw) {
        REQUIRE(caosd_sampler_next(sampler, point.data()) == CAOSD_OK);
        int member = 0;
        REQUIRE(caosd_membership(cfg, point.data(), 1e-9, &member) == CAOSD_OK);
        CHECK(member == 1);

        REQUIRE(caosd_decompose(cfg, point.data(), sub_values.data(), weights.data()) ==
                CAOSD_OK);
        CHECK(std::abs(weights[0] + weights[1] + weights[2] + weights[3] - 1.0) < 1e-12);

        REQUIRE(caosd_compose(cfg, sub_values.data(), recomposed.data(), weights.data()) ==
                CAOSD_OK);
        for (int i = 0; i < n; ++i) CHECK(std::abs(recomposed[i] - point[i]) < 1e-6);
    }

    CHECK(caosd_sampler_next(nullptr, point.data()) == CAOSD_INVALID_INPUT);
    caosd_sampler_free(sampler);
    caosd_config_free(cfg);
}

TEST_CASE("market models fit from csv and roundtrip as json") {
    write_price_csv("capi_prices.csv", 30);

    caosd_model* model = nullptr;
    REQUIRE(caosd_fit_hmm("capi_prices.csv", 1, 3, 2, 0, &model) == CAOSD_OK);
    CHECK(caosd_model_n_assets(model) == 3);

    char* text = nullptr;
    REQUIRE(caosd_model_render(model, &text) == CAOSD_OK);
    const std::string rendered = grab(text);

    caosd_model* reparsed = nullptr;
    REQUIRE(caosd_model_parse(rendered.c_str(), &reparsed) == CAOSD_OK);
    REQUIRE(caosd_model_render(reparsed, &text) == CAOSD_OK);
    CHECK(grab(text) == rendered);
    caosd_model_free(reparsed);
    caosd_model_free(model);

    CHECK(caosd_fit_hmm("missing_prices.csv", 1, 3, 2, 0, &model) == CAOSD_INVALID_INPUT);
}

TEST_CASE("training, evaluation and backtests flow through the c api") {
    namespace fs = std::filesystem;
    write_price_csv("capi_prices.csv", 30);

    caosd_config* cfg = nullptr;
    REQUIRE(caosd_config_generate(3, 21, &cfg) == CAOSD_OK);
    caosd_model* model = nullptr;
    REQUIRE(caosd_fit_hmm("capi_prices.csv", 2, 3, 2, 0, &model) == CAOSD_OK);

    const char* tconf = R"({"total_env_steps": 600, "rollout_length": 300,
        "minibatch_size": 100, "epochs_per_batch": 2, "eval_interval": 600,
        "eval_episodes": 4, "seed": 5})";
    const char* enc = R"({"hidden_sizes": [8], "embedding_size": 6,
        "branch_hidden": [6], "value_hidden": [4]})";

    char* text = nullptr;
    REQUIRE(caosd_train(cfg, model, tconf, enc, 0.001, 0, 0, "capi_train_out", &text) ==
            CAOSD_OK);
    const nlohmann::json result = nlohmann::json::parse(grab(text));
    CHECK(result.at("env_steps").get<long>() == 600);
    CHECK(result.at("curve_rows").get<int>() == 1);
    CHECK(fs::exists("capi_train_out/curve.csv"));
    CHECK(fs::exists("capi_train_out/checkpoint_best"));

    caosd_policy* policy = nullptr;
    REQUIRE(caosd_policy_load(cfg, "capi_train_out/checkpoint_best", &policy) == CAOSD_OK);
    const std::vector<double> alloc = {1.0, 0.0, 0.0};
    const std::vector<double> rets = {0.0, 0.0, 0.0};
    std::vector<double> action(3);
    REQUIRE(caosd_policy_act(policy, 1.0, alloc.data(), rets.data(), action.data()) == CAOSD_OK);
    int member = 0;
    REQUIRE(caosd_membership(cfg, action.data(), 1e-9, &member) == CAOSD_OK);
    CHECK(member == 1);
    caosd_policy_free(policy);
    CHECK(caosd_policy_load(cfg, "no_such_checkpoint", &policy) == CAOSD_INVALID_INPUT);

    REQUIRE(caosd_evaluate(cfg, model, "CAOSD,RANDOM", "capi_train_out/checkpoint_best", 10, 3,
                           0.001, 0, 0, &text) == CAOSD_OK);
    const std::string metrics_text = grab(text);
    const nlohmann::json metrics = nlohmann::json::parse(metrics_text);
    CHECK(metrics.at("environment") == "sim");
    REQUIRE(metrics.at("approaches").size() == 2);
    for (const auto& row : metrics.at("approaches")) {
        CHECK(row.at("ci_lo").get<double>() <= row.at("mean_nu").get<double>());
        CHECK(row.at("mean_nu").get<double>() <= row.at("ci_hi").get<double>());
    }
    REQUIRE(caosd_evaluate(cfg, model, "CAOSD,RANDOM", "capi_train_out/checkpoint_best", 10, 3,
                           0.001, 0, 0, &text) == CAOSD_OK);
    CHECK(grab(text) == metrics_text);

    REQUIRE(caosd_backtest(cfg, "capi_prices.csv", "CAOSD,RANDOM",
                           "capi_train_out/checkpoint_best", 5, 1, 0.0, 0, &text) == CAOSD_OK);
    const nlohmann::json bt = nlohmann::json::parse(grab(text));
    CHECK(bt.at("environment") == "bt");
    CHECK(bt.at("approaches")[0].at("episodes").get<int>() == 1);
    CHECK(bt.at("approaches")[1].at("episodes").get<int>() == 5);

    CHECK(caosd_evaluate(cfg, model, "CAOSD,RANDOM", nullptr, 10, 3, 0.001, 0, 0, &text) ==
          CAOSD_INVALID_INPUT);

    caosd_config* infeasible = nullptr;
    REQUIRE(caosd_config_parse(infeasible_config_json().c_str(), &infeasible) == CAOSD_OK);
    CHECK(caosd_train(infeasible, model, tconf, enc, 0.001, 0, 0, nullptr, nullptr) ==
          CAOSD_INFEASIBLE);
    CHECK(std::string(caosd_last_error()) == "infeasible configuration");
    caosd_config_free(infeasible);

    caosd_model_free(model);
    caosd_config_free(cfg);
    fs::remove_all("capi_train_out");
    fs::remove("capi_prices.csv");
}

TEST_CASE("summaries aggregate metrics files written through the c api") {
    namespace fs = std::filesystem;
    write_price_csv("capi_prices.csv", 30);

    caosd_config* cfg = nullptr;
    REQUIRE(caosd_config_generate(3, 21, &cfg) == CAOSD_OK);
    caosd_model* model = nullptr;
    REQUIRE(caosd_fit_hmm("capi_prices.csv", 1, 3, 2, 0, &model) == CAOSD_OK);

    fs::create_directories("capi_matrix/exp_000");
    fs::create_directories("capi_matrix/exp_001");
    char* text = nullptr;
    for (int i = 0; i < 2; ++i) {
        REQUIRE(caosd_evaluate(cfg, model, "RANDOM", nullptr, 12, 100 + i, 0.001, 0, 0, &text) ==
                CAOSD_OK);
        std::ofstream out("capi_matrix/exp_00" + std::to_string(i) + "/metrics.json");
        out << grab(text);
    }

    REQUIRE(caosd_summarize("capi_matrix", 1, &text) == CAOSD_OK);
    const nlohmann::json summary = nlohmann::json::parse(grab(text));
    CHECK(summary.at("environment") == "sim");
    REQUIRE(summary.at("rows").size() == 1);
    CHECK(summary.at("rows")[0].at("n_experiments").get<int>() == 2);
    CHECK(fs::exists("capi_matrix/summary.csv"));
    CHECK(fs::exists("capi_matrix/summary.json"));

    CHECK(caosd_summarize("capi_matrix_missing", 0, &text) == CAOSD_INVALID_INPUT);

    caosd_model_free(model);
    caosd_config_free(cfg);
    fs::remove_all("capi_matrix");
    fs::remove("capi_prices.csv");
}
