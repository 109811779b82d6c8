#pragma once

#include <array>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "caosd/market.hpp"
#include "caosd/nets.hpp"
#include "caosd/rng.hpp"
#include "caosd/simplex_decomp.hpp"

namespace caosd {

struct EncoderConfig {
    std::vector<int> hidden_sizes = {512, 256, 128};
    int embedding_size = 64;
    bool use_attention = false;
    std::vector<int> branch_hidden = {64, 32};
    std::vector<int> value_hidden = {64, 32};
};

struct SurrogateAction {
    std::array<SubAction, 4> subs;
};

struct PolicyOutput {
    SurrogateAction surrogate;
    double joint_log_prob = 0.0;
    std::array<double, 4> per_branch_log_prob{};
    Eigen::VectorXd action;
    WeightVector weights;
};

// Autoregressive Dirichlet policy over the four sub-simplices of a feasible
// config. A shared encoder maps the observation to a latent; branch j maps
// [latent; padded values of sub-actions 1..j-1] to concentration parameters
// over K_j. Branches with |K_j| <= 1 carry no parameters, contribute
// log-prob 0 and are excluded from entropy.
class DirichletPolicy {
public:
    DirichletPolicy(const ConstraintConfig& cfg, const EncoderConfig& enc = {},
                    unsigned long long init_seed = 0);

    const ConstraintConfig& config() const { return decomp_.config; }
    const EncoderConfig& encoder_config() const { return enc_; }
    const Decomposition& decomposition() const { return decomp_; }

    Eigen::VectorXd& params() { return params_; }
    const Eigen::VectorXd& params() const { return params_; }
    int param_count() const { return static_cast<int>(params_.size()); }

    Eigen::VectorXd encode(const Observation& obs) const;

    // j is 1-based; predecessors are read from subs[0..j-2]. Branches with
    // |K_j| <= 1 return a ones vector of that size.
    Eigen::VectorXd branch_alpha(int j, const Eigen::VectorXd& latent,
                                 const std::array<SubAction, 4>& subs) const;

    PolicyOutput sample_action(const Observation& obs, Rng& rng) const;
    Eigen::VectorXd deterministic_action(const Observation& obs) const;

    // Joint log-density of the surrogate under the conditional branch
    // distributions. Support entries are clamped to [1e-9, 1-1e-9] and
    // renormalized for the density evaluation; the conditioning prefixes use
    // the stored values unchanged.
    double log_prob(const Observation& obs, const SurrogateAction& surrogate) const;

    // Accumulates coeff * d(log_prob)/dparams + entropy_coeff * d(entropy)/dparams
    // into grad; returns the joint log-prob. entropy_out, when given, receives
    // the summed branch entropies.
    double log_prob_backward(const Observation& obs, const SurrogateAction& surrogate,
                             double coeff, Eigen::VectorXd& grad,
                             double entropy_coeff = 0.0, double* entropy_out = nullptr) const;

    // Sum of analytic Dirichlet entropies of the active branches, conditioned
    // on the surrogate's realized predecessors.
    double entropy(const Observation& obs, const SurrogateAction& surrogate) const;

    double value(const Observation& obs) const;
    // Accumulates coeff * d(value)/dparams into grad; returns the value.
    double value_backward(const Observation& obs, double coeff, Eigen::VectorXd& grad) const;

    nlohmann::json to_checkpoint() const;
    void load_checkpoint(const nlohmann::json& j);
    void save_checkpoint_file(const std::string& path) const;
    void load_checkpoint_file(const std::string& path);

private:
    struct EncoderTrace;

    Eigen::VectorXd encode_traced(const Eigen::VectorXd& features, EncoderTrace& trace) const;
    void encode_backward(const EncoderTrace& trace, const Eigen::VectorXd& d_latent,
                         Eigen::VectorXd& grad) const;
    Eigen::VectorXd features_checked(const Observation& obs) const;
    Eigen::VectorXd branch_input(int j, const Eigen::VectorXd& latent,
                                 const std::array<SubAction, 4>& subs) const;
    Eigen::VectorXd alpha_from_raw(const Eigen::VectorXd& raw) const;
    Eigen::VectorXd clamped_support(const SubAction& sub) const;

    Decomposition decomp_;
    EncoderConfig enc_;
    int n_assets_ = 0;

    Linear proj_wealth_, proj_alloc_, proj_returns_;
    SelfAttention attn_;
    Mlp encoder_;
    std::array<Mlp, 4> branches_;
    std::array<bool, 4> branch_active_{};
    Mlp value_net_;

    Eigen::VectorXd params_;
};

nlohmann::json encoder_config_to_json(const EncoderConfig& enc);
// Accepts a partial object; absent keys fall back to `base`, unknown keys are
// rejected.
EncoderConfig encoder_config_from_json(const nlohmann::json& j, const EncoderConfig& base = {});

// Rebuilds the encoder shape from the checkpoint header so callers can load
// a policy knowing only the constraint configuration.
DirichletPolicy load_policy_checkpoint(const ConstraintConfig& cfg, const std::string& path);

} // namespace caosd
