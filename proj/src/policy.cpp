#include "caosd/policy.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "caosd/errors.hpp"
#include "caosd/mathutil.hpp"

namespace caosd {

namespace {

constexpr int kTokenDim = 32;
constexpr double kAlphaFloor = 1e-3;
constexpr double kAlphaMax = 1e4;
constexpr double kSupportClamp = 1e-9;
// softplus(bias) = 1 so fresh branches start near the uniform Dirichlet.
constexpr double kBranchBias = 0.5413248546129181; // log(e - 1)

void check_positive_widths(const std::vector<int>& widths, const char* what) {
    for (int w : widths) {
        if (w < 1) throw invalid_input(std::string(what) + " widths must be positive");
    }
}

void init_branch_mlp(const Mlp& net, Eigen::VectorXd& params, Rng& rng) {
    for (std::size_t l = 0; l + 1 < net.layers.size(); ++l) {
        const Linear& layer = net.layers[l];
        init_linear(layer, params, rng, std::sqrt(2.0 / layer.in));
    }
    const Linear& last = net.layers.back();
    init_linear(last, params, rng, 0.01);
    params.segment(last.offset + last.out * last.in, last.out).setConstant(kBranchBias);
}

void init_value_mlp(const Mlp& net, Eigen::VectorXd& params, Rng& rng) {
    for (std::size_t l = 0; l + 1 < net.layers.size(); ++l) {
        const Linear& layer = net.layers[l];
        init_linear(layer, params, rng, std::sqrt(2.0 / layer.in));
    }
    init_linear(net.layers.back(), params, rng, 0.01);
}

} // namespace

struct DirichletPolicy::EncoderTrace {
    Eigen::VectorXd features;
    SelfAttention::Trace attn;
    Mlp::Trace mlp;
};

DirichletPolicy::DirichletPolicy(const ConstraintConfig& cfg, const EncoderConfig& enc,
                                 unsigned long long init_seed)
    : decomp_(build_decomposition(cfg)), enc_(enc), n_assets_(cfg.n_assets()) {
    if (enc_.embedding_size < 1) throw invalid_input("embedding size must be positive");
    check_positive_widths(enc_.hidden_sizes, "encoder");
    check_positive_widths(enc_.branch_hidden, "branch");
    check_positive_widths(enc_.value_hidden, "value head");

    const int n = n_assets_;
    NetBuilder b;
    if (enc_.use_attention) {
        proj_wealth_ = b.linear(1, kTokenDim);
        proj_alloc_ = b.linear(n, kTokenDim);
        proj_returns_ = b.linear(n, kTokenDim);
        attn_ = b.attention(kTokenDim);
        encoder_ = b.mlp(3 * kTokenDim, enc_.hidden_sizes, enc_.embedding_size);
    } else {
        encoder_ = b.mlp(1 + 2 * n, enc_.hidden_sizes, enc_.embedding_size);
    }
    for (int j = 1; j <= 4; ++j) {
        const int size = decomp_.specs[j - 1].size();
        branch_active_[j - 1] = size >= 2;
        if (branch_active_[j - 1]) {
            branches_[j - 1] = b.mlp(enc_.embedding_size + (j - 1) * n, enc_.branch_hidden, size);
        }
    }
    value_net_ = b.mlp(enc_.embedding_size, enc_.value_hidden, 1);

    params_ = Eigen::VectorXd::Zero(b.total());
    Rng rng(init_seed);
    if (enc_.use_attention) {
        init_linear(proj_wealth_, params_, rng, std::sqrt(2.0));
        init_linear(proj_alloc_, params_, rng, std::sqrt(2.0 / n));
        init_linear(proj_returns_, params_, rng, std::sqrt(2.0 / n));
        const double attn_scale = 1.0 / std::sqrt(static_cast<double>(kTokenDim));
        init_linear(attn_.wq, params_, rng, attn_scale);
        init_linear(attn_.wk, params_, rng, attn_scale);
        init_linear(attn_.wv, params_, rng, attn_scale);
    }
    init_mlp(encoder_, params_, rng);
    for (int j = 0; j < 4; ++j) {
        if (branch_active_[j]) init_branch_mlp(branches_[j], params_, rng);
    }
    init_value_mlp(value_net_, params_, rng);
}

Eigen::VectorXd DirichletPolicy::features_checked(const Observation& obs) const {
    Eigen::VectorXd f = obs.features();
    if (f.size() != 1 + 2 * n_assets_) throw invalid_input("observation length mismatch");
    if (!f.allFinite()) throw invalid_input("non-finite observation");
    return f;
}

Eigen::VectorXd DirichletPolicy::encode_traced(const Eigen::VectorXd& features,
                                               EncoderTrace& trace) const {
    trace.features = features;
    if (!enc_.use_attention) return encoder_.forward(params_, features, &trace.mlp);

    const int n = n_assets_;
    Eigen::MatrixXd tokens(3, kTokenDim);
    tokens.row(0) = proj_wealth_.forward(params_, features.head(1)).transpose();
    tokens.row(1) = proj_alloc_.forward(params_, features.segment(1, n)).transpose();
    tokens.row(2) = proj_returns_.forward(params_, features.tail(n)).transpose();
    const Eigen::MatrixXd mixed = attn_.forward(params_, tokens, &trace.attn);
    Eigen::VectorXd flat(3 * kTokenDim);
    for (int r = 0; r < 3; ++r) flat.segment(r * kTokenDim, kTokenDim) = mixed.row(r).transpose();
    return encoder_.forward(params_, flat, &trace.mlp);
}

void DirichletPolicy::encode_backward(const EncoderTrace& trace, const Eigen::VectorXd& d_latent,
                                      Eigen::VectorXd& grad) const {
    const Eigen::VectorXd d_in = encoder_.backward(params_, trace.mlp, d_latent, grad);
    if (!enc_.use_attention) return;

    const int n = n_assets_;
    Eigen::MatrixXd d_mixed(3, kTokenDim);
    for (int r = 0; r < 3; ++r) d_mixed.row(r) = d_in.segment(r * kTokenDim, kTokenDim).transpose();
    const Eigen::MatrixXd d_tokens = attn_.backward(params_, trace.attn, d_mixed, grad);
    proj_wealth_.backward(params_, trace.features.head(1), d_tokens.row(0).transpose(), grad);
    proj_alloc_.backward(params_, trace.features.segment(1, n), d_tokens.row(1).transpose(), grad);
    proj_returns_.backward(params_, trace.features.tail(n), d_tokens.row(2).transpose(), grad);
}

Eigen::VectorXd DirichletPolicy::encode(const Observation& obs) const {
    EncoderTrace trace;
    return encode_traced(features_checked(obs), trace);
}

Eigen::VectorXd DirichletPolicy::branch_input(int j, const Eigen::VectorXd& latent,
                                              const std::array<SubAction, 4>& subs) const {
    const int n = n_assets_;
    Eigen::VectorXd x(enc_.embedding_size + (j - 1) * n);
    x.head(enc_.embedding_size) = latent;
    for (int p = 0; p < j - 1; ++p) {
        auto seg = x.segment(enc_.embedding_size + p * n, n);
        if (subs[p].values.size() == n) {
            seg = subs[p].values;
        } else if (subs[p].values.size() == 0) {
            seg.setZero();
        } else {
            throw invalid_input("invalid sub-action");
        }
    }
    return x;
}

Eigen::VectorXd DirichletPolicy::alpha_from_raw(const Eigen::VectorXd& raw) const {
    Eigen::VectorXd alpha(raw.size());
    for (int i = 0; i < raw.size(); ++i) {
        alpha[i] = std::min(softplus(raw[i]) + kAlphaFloor, kAlphaMax);
    }
    return alpha;
}

Eigen::VectorXd DirichletPolicy::branch_alpha(int j, const Eigen::VectorXd& latent,
                                              const std::array<SubAction, 4>& subs) const {
    if (j < 1 || j > 4) throw invalid_input("branch index out of range");
    const int size = decomp_.specs[j - 1].size();
    if (!branch_active_[j - 1]) return Eigen::VectorXd::Ones(size);
    return alpha_from_raw(branches_[j - 1].forward(params_, branch_input(j, latent, subs)));
}

Eigen::VectorXd DirichletPolicy::clamped_support(const SubAction& sub) const {
    const auto& idx = sub.spec.index_set;
    Eigen::VectorXd y(static_cast<int>(idx.size()));
    for (std::size_t i = 0; i < idx.size(); ++i) {
        y[static_cast<int>(i)] =
            std::clamp(sub.values[idx[i]], kSupportClamp, 1.0 - kSupportClamp);
    }
    y /= y.sum();
    return y;
}

PolicyOutput DirichletPolicy::sample_action(const Observation& obs, Rng& rng) const {
    const Eigen::VectorXd latent = encode(obs);
    const int n = n_assets_;

    PolicyOutput out;
    for (int j = 1; j <= 4; ++j) {
        const PaddedSimplexSpec& spec = decomp_.specs[j - 1];
        if (spec.empty()) {
            out.surrogate.subs[j - 1] = SubAction{Eigen::VectorXd::Zero(n), spec};
            continue;
        }
        if (spec.size() == 1) {
            Eigen::VectorXd unit = Eigen::VectorXd::Zero(n);
            unit[spec.index_set[0]] = 1.0;
            out.surrogate.subs[j - 1] = SubAction{unit, spec};
            continue;
        }
        const Eigen::VectorXd alpha = branch_alpha(j, latent, out.surrogate.subs);
        Eigen::VectorXd draw = rng.dirichlet(alpha);
        if (!draw.allFinite() || !(draw.minCoeff() >= 0.0)) {
            draw = Eigen::VectorXd::Constant(spec.size(), 1.0 / spec.size());
        }
        Eigen::VectorXd padded = Eigen::VectorXd::Zero(n);
        for (int i = 0; i < spec.size(); ++i) padded[spec.index_set[i]] = draw[i];
        out.surrogate.subs[j - 1] = make_sub_action(spec, padded);
        out.per_branch_log_prob[j - 1] =
            dirichlet_log_pdf(alpha, clamped_support(out.surrogate.subs[j - 1]));
    }

    const std::array<Eigen::VectorXd, 4> values = {
        out.surrogate.subs[0].values, out.surrogate.subs[1].values,
        out.surrogate.subs[2].values, out.surrogate.subs[3].values};
    out.action = compose(decomp_, values, &out.weights);
    out.joint_log_prob = out.per_branch_log_prob[0] + out.per_branch_log_prob[1] +
                         out.per_branch_log_prob[2] + out.per_branch_log_prob[3];
    return out;
}

Eigen::VectorXd DirichletPolicy::deterministic_action(const Observation& obs) const {
    const Eigen::VectorXd latent = encode(obs);
    const int n = n_assets_;

    std::array<SubAction, 4> subs;
    for (int j = 1; j <= 4; ++j) {
        const PaddedSimplexSpec& spec = decomp_.specs[j - 1];
        if (spec.empty()) {
            subs[j - 1] = SubAction{Eigen::VectorXd::Zero(n), spec};
            continue;
        }
        if (spec.size() == 1) {
            Eigen::VectorXd unit = Eigen::VectorXd::Zero(n);
            unit[spec.index_set[0]] = 1.0;
            subs[j - 1] = SubAction{unit, spec};
            continue;
        }
        const Eigen::VectorXd point = dirichlet_mode_or_mean(branch_alpha(j, latent, subs));
        Eigen::VectorXd padded = Eigen::VectorXd::Zero(n);
        for (int i = 0; i < spec.size(); ++i) padded[spec.index_set[i]] = point[i];
        subs[j - 1] = make_sub_action(spec, padded);
    }

    const std::array<Eigen::VectorXd, 4> values = {subs[0].values, subs[1].values, subs[2].values,
                                                   subs[3].values};
    return compose(decomp_, values, nullptr);
}

double DirichletPolicy::log_prob(const Observation& obs, const SurrogateAction& surrogate) const {
    const Eigen::VectorXd latent = encode(obs);
    double joint = 0.0;
    for (int j = 1; j <= 4; ++j) {
        if (!branch_active_[j - 1]) continue;
        const Eigen::VectorXd alpha = branch_alpha(j, latent, surrogate.subs);
        joint += dirichlet_log_pdf(alpha, clamped_support(surrogate.subs[j - 1]));
    }
    return joint;
}

double DirichletPolicy::log_prob_backward(const Observation& obs, const SurrogateAction& surrogate,
                                          double coeff, Eigen::VectorXd& grad,
                                          double entropy_coeff, double* entropy_out) const {
    if (grad.size() != params_.size()) throw invalid_input("gradient buffer size mismatch");
    EncoderTrace trace;
    const Eigen::VectorXd latent = encode_traced(features_checked(obs), trace);
    Eigen::VectorXd d_latent = Eigen::VectorXd::Zero(enc_.embedding_size);
    const bool need_entropy = entropy_coeff != 0.0 || entropy_out != nullptr;

    double joint = 0.0;
    double entropy_sum = 0.0;
    for (int j = 1; j <= 4; ++j) {
        if (!branch_active_[j - 1]) continue;
        const Eigen::VectorXd x = branch_input(j, latent, surrogate.subs);
        Mlp::Trace btrace;
        const Eigen::VectorXd raw = branches_[j - 1].forward(params_, x, &btrace);
        const Eigen::VectorXd alpha = alpha_from_raw(raw);
        const Eigen::VectorXd y = clamped_support(surrogate.subs[j - 1]);
        joint += dirichlet_log_pdf(alpha, y);

        Eigen::VectorXd d_alpha = coeff * dirichlet_log_pdf_grad_alpha(alpha, y);
        if (need_entropy) {
            entropy_sum += dirichlet_entropy(alpha);
            if (entropy_coeff != 0.0) {
                d_alpha += entropy_coeff * dirichlet_entropy_grad_alpha(alpha);
            }
        }
        Eigen::VectorXd d_raw(raw.size());
        for (int i = 0; i < raw.size(); ++i) {
            const bool clamped = softplus(raw[i]) + kAlphaFloor >= kAlphaMax;
            d_raw[i] = clamped ? 0.0 : d_alpha[i] * sigmoid(raw[i]);
        }
        const Eigen::VectorXd dx = branches_[j - 1].backward(params_, btrace, d_raw, grad);
        d_latent += dx.head(enc_.embedding_size);
    }

    encode_backward(trace, d_latent, grad);
    if (entropy_out != nullptr) *entropy_out = entropy_sum;
    return joint;
}

double DirichletPolicy::entropy(const Observation& obs, const SurrogateAction& surrogate) const {
    const Eigen::VectorXd latent = encode(obs);
    double total = 0.0;
    for (int j = 1; j <= 4; ++j) {
        if (!branch_active_[j - 1]) continue;
        total += dirichlet_entropy(branch_alpha(j, latent, surrogate.subs));
    }
    return total;
}

double DirichletPolicy::value(const Observation& obs) const {
    EncoderTrace trace;
    const Eigen::VectorXd latent = encode_traced(features_checked(obs), trace);
    return value_net_.forward(params_, latent)[0];
}

double DirichletPolicy::value_backward(const Observation& obs, double coeff,
                                       Eigen::VectorXd& grad) const {
    if (grad.size() != params_.size()) throw invalid_input("gradient buffer size mismatch");
    EncoderTrace trace;
    const Eigen::VectorXd latent = encode_traced(features_checked(obs), trace);
    Mlp::Trace vtrace;
    const double v = value_net_.forward(params_, latent, &vtrace)[0];
    Eigen::VectorXd dy(1);
    dy[0] = coeff;
    const Eigen::VectorXd d_latent = value_net_.backward(params_, vtrace, dy, grad);
    encode_backward(trace, d_latent, grad);
    return v;
}

nlohmann::json DirichletPolicy::to_checkpoint() const {
    nlohmann::json j;
    j["format"] = 1;
    j["n_assets"] = n_assets_;
    j["encoder"] = encoder_config_to_json(enc_);
    j["branch_sizes"] = {decomp_.specs[0].size(), decomp_.specs[1].size(),
                         decomp_.specs[2].size(), decomp_.specs[3].size()};
    j["params"] = std::vector<double>(params_.data(), params_.data() + params_.size());
    return j;
}

void DirichletPolicy::load_checkpoint(const nlohmann::json& j) {
    int format = 0;
    int n_assets = 0;
    std::vector<int> branch_sizes;
    std::vector<double> params;
    EncoderConfig enc;
    try {
        format = j.at("format").get<int>();
        n_assets = j.at("n_assets").get<int>();
        branch_sizes = j.at("branch_sizes").get<std::vector<int>>();
        params = j.at("params").get<std::vector<double>>();
        const nlohmann::json& e = j.at("encoder");
        enc.hidden_sizes = e.at("hidden_sizes").get<std::vector<int>>();
        enc.embedding_size = e.at("embedding_size").get<int>();
        enc.use_attention = e.at("use_attention").get<bool>();
        enc.branch_hidden = e.at("branch_hidden").get<std::vector<int>>();
        enc.value_hidden = e.at("value_hidden").get<std::vector<int>>();
    } catch (const nlohmann::json::exception&) {
        throw invalid_input("malformed checkpoint");
    }

    std::vector<int> expected_sizes;
    for (const auto& spec : decomp_.specs) expected_sizes.push_back(spec.size());
    const bool matches = format == 1 && n_assets == n_assets_ && branch_sizes == expected_sizes &&
                         enc.hidden_sizes == enc_.hidden_sizes &&
                         enc.embedding_size == enc_.embedding_size &&
                         enc.use_attention == enc_.use_attention &&
                         enc.branch_hidden == enc_.branch_hidden &&
                         enc.value_hidden == enc_.value_hidden &&
                         static_cast<int>(params.size()) == param_count();
    if (!matches) throw invalid_input("checkpoint does not match the constraint configuration");
    params_ = Eigen::Map<const Eigen::VectorXd>(params.data(), params.size());
}

void DirichletPolicy::save_checkpoint_file(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw invalid_input("cannot write checkpoint file: " + path);
    out << to_checkpoint().dump(2) << "\n";
    if (!out) throw invalid_input("cannot write checkpoint file: " + path);
}

void DirichletPolicy::load_checkpoint_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw invalid_input("cannot open checkpoint file: " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception&) {
        throw invalid_input("malformed checkpoint");
    }
    load_checkpoint(j);
}

nlohmann::json encoder_config_to_json(const EncoderConfig& enc) {
    return {{"hidden_sizes", enc.hidden_sizes},
            {"embedding_size", enc.embedding_size},
            {"use_attention", enc.use_attention},
            {"branch_hidden", enc.branch_hidden},
            {"value_hidden", enc.value_hidden}};
}

EncoderConfig encoder_config_from_json(const nlohmann::json& j, const EncoderConfig& base) {
    static const char* const kKeys[] = {"hidden_sizes", "embedding_size", "use_attention",
                                        "branch_hidden", "value_hidden"};
    if (!j.is_object()) throw invalid_input("malformed encoder config");
    for (const auto& item : j.items()) {
        bool known = false;
        for (const char* key : kKeys) known = known || item.key() == key;
        if (!known) throw invalid_input("malformed encoder config");
    }
    EncoderConfig enc = base;
    try {
        enc.hidden_sizes = j.value("hidden_sizes", base.hidden_sizes);
        enc.embedding_size = j.value("embedding_size", base.embedding_size);
        enc.use_attention = j.value("use_attention", base.use_attention);
        enc.branch_hidden = j.value("branch_hidden", base.branch_hidden);
        enc.value_hidden = j.value("value_hidden", base.value_hidden);
    } catch (const nlohmann::json::exception&) {
        throw invalid_input("malformed encoder config");
    }
    return enc;
}

DirichletPolicy load_policy_checkpoint(const ConstraintConfig& cfg, const std::string& path) {
    std::ifstream in(path);
    if (!in) throw invalid_input("cannot open checkpoint file: " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception&) {
        throw invalid_input("malformed checkpoint");
    }
    EncoderConfig enc;
    try {
        enc = encoder_config_from_json(j.at("encoder"));
    } catch (const nlohmann::json::exception&) {
        throw invalid_input("malformed checkpoint");
    }
    DirichletPolicy policy(cfg, enc);
    policy.load_checkpoint(j);
    return policy;
}

} // namespace caosd
