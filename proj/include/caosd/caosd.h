#ifndef CAOSD_H
#define CAOSD_H

/* C interface to the constrained-allocation toolkit. Handles are opaque;
 * every fallible call returns a status and leaves a message retrievable
 * through caosd_last_error() on failure. Strings returned through out
 * parameters are owned by the caller and released with caosd_string_free.
 */

#ifdef __cplusplus
extern "C" {
#endif

typedef enum caosd_status {
    CAOSD_OK = 0,
    CAOSD_INVALID_INPUT = 2,
    CAOSD_INFEASIBLE = 3,
    CAOSD_NUMERICAL = 4
} caosd_status;

/* Message from the most recent failing call on this thread; empty after a
 * success. The pointer stays valid until the next library call. */
const char* caosd_last_error(void);

void caosd_string_free(char* text);

typedef struct caosd_config caosd_config;
typedef struct caosd_model caosd_model;
typedef struct caosd_policy caosd_policy;
typedef struct caosd_sampler caosd_sampler;

/* Constraint configurations. Allocations are length n_assets; sub-action
 * buffers hold the four padded sub-simplex vectors row-major (4 * n_assets);
 * weight buffers hold the four Minkowski weights. */
caosd_status caosd_config_generate(int n_assets, unsigned long long seed, caosd_config** out);
caosd_status caosd_config_parse(const char* json_text, caosd_config** out);
caosd_status caosd_config_load(const char* path, caosd_config** out);
caosd_status caosd_config_render(const caosd_config* cfg, char** out_json);
int caosd_config_n_assets(const caosd_config* cfg);
caosd_status caosd_config_check_feasible(const caosd_config* cfg, int* out_feasible);
void caosd_config_free(caosd_config* cfg);

caosd_status caosd_compose(const caosd_config* cfg, const double* sub_values,
                           double* out_allocation, double* out_weights);
caosd_status caosd_decompose(const caosd_config* cfg, const double* allocation,
                             double* out_sub_values, double* out_weights);
caosd_status caosd_membership(const caosd_config* cfg, const double* allocation, double tol,
                              int* out_member);

/* Uniform sampling over the constrained allocation polytope. Non-positive
 * burn_in or thinning fall back to the defaults (1000 and 10). */
caosd_status caosd_sampler_create(const caosd_config* cfg, unsigned long long seed, int burn_in,
                                  int thinning, caosd_sampler** out);
caosd_status caosd_sampler_next(caosd_sampler* sampler, double* out_allocation);
void caosd_sampler_free(caosd_sampler* sampler);

/* Market models. Fitting reads a date,price,... CSV; the fitted model
 * prepends the cash asset, so it covers one more asset than the file. */
caosd_status caosd_fit_hmm(const char* prices_csv_path, int n_states, unsigned long long seed,
                           int restarts, int full_covariance, caosd_model** out);
caosd_status caosd_model_parse(const char* json_text, caosd_model** out);
caosd_status caosd_model_load(const char* path, caosd_model** out);
caosd_status caosd_model_render(const caosd_model* model, char** out_json);
int caosd_model_n_assets(const caosd_model* model);
void caosd_model_free(caosd_model* model);

/* Policies restored from training checkpoints. caosd_policy_act fills the
 * deterministic allocation for an observation (wealth, current allocation,
 * last per-asset returns; the arrays are length n_assets). */
caosd_status caosd_policy_load(const caosd_config* cfg, const char* checkpoint_path,
                               caosd_policy** out);
caosd_status caosd_policy_act(const caosd_policy* policy, double wealth, const double* allocation,
                              const double* last_returns, double* out_allocation);
void caosd_policy_free(caosd_policy* policy);

/* Trains a policy on the simulated market. train_config_json and
 * encoder_json may be NULL for defaults; when out_dir is non-NULL the
 * learning curve and checkpoints are written there. The result JSON reports
 * env_steps, violations, best_step and best_mean_nu. */
caosd_status caosd_train(const caosd_config* cfg, const caosd_model* model,
                         const char* train_config_json, const char* encoder_json, double kappa,
                         int horizon, int strict_membership, const char* out_dir,
                         char** out_result_json);

/* Evaluation. `approaches` is comma-separated from {CAOSD, RANDOM,
 * EXTERNAL:name=results.csv}; checkpoint_path may be NULL when CAOSD is not
 * requested. The metrics JSON carries per-approach mean returns with
 * confidence intervals and deltas against RANDOM. */
caosd_status caosd_evaluate(const caosd_config* cfg, const caosd_model* model,
                            const char* approaches, const char* checkpoint_path, int episodes,
                            unsigned long long seed, double kappa, int horizon,
                            int strict_membership, char** out_metrics_json);

/* Backtest over a historical price CSV: one deterministic trajectory for
 * CAOSD, `episodes` resampled trajectories for RANDOM. */
caosd_status caosd_backtest(const caosd_config* cfg, const char* prices_csv_path,
                            const char* approaches, const char* checkpoint_path, int episodes,
                            unsigned long long seed, double kappa, int strict_membership,
                            char** out_metrics_json);

/* Aggregates the per-experiment metrics files under a matrix output
 * directory; when write_outputs is nonzero, rewrites summary.csv and
 * summary.json there. */
caosd_status caosd_summarize(const char* experiments_dir, int write_outputs,
                             char** out_summary_json);

#ifdef __cplusplus
}
#endif

#endif
