#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstdio>
#include <vector>

#include "caosd/constraints.hpp"
#include "caosd/errors.hpp"
#include "caosd/mathutil.hpp"
#include "caosd/nets.hpp"
#include "caosd/policy.hpp"
#include "caosd/rng.hpp"
#include "caosd/simplex_decomp.hpp"

using namespace caosd;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

Observation make_obs(int n, double wealth = 1.0) {
    Observation obs;
    obs.wealth = wealth;
    obs.allocation = VectorXd::Zero(n);
    obs.allocation[0] = 1.0;
    obs.last_returns = VectorXd::Zero(n);
    return obs;
}

Observation varied_obs(int n, unsigned long long seed) {
    Rng rng(seed);
    Observation obs;
    obs.wealth = 0.5 + rng.uniform01();
    obs.allocation = rng.dirichlet(VectorXd::Constant(n, 2.0));
    obs.last_returns = VectorXd::Zero(n);
    for (int i = 0; i < n; ++i) obs.last_returns[i] = 0.05 * rng.normal();
    return obs;
}

EncoderConfig small_encoder() {
    EncoderConfig enc;
    enc.hidden_sizes = {8};
    enc.embedding_size = 6;
    enc.branch_hidden = {5};
    enc.value_hidden = {4};
    return enc;
}

// Four active branches: K1 = {2,3}, K2 = {0..3}, K3 = {2..5}, K4 = all six.
ConstraintConfig overlap_config() {
    return make_config(AssetUniverse::make_default(6),
                       {{0, 1, 2, 3}, 0.5, ConstraintDirection::GreaterEqual},
                       {{2, 3, 4, 5}, 0.3, ConstraintDirection::GreaterEqual});
}

// Singleton constraint sets leave branch 4 as the only branch with a
// distribution over it.
ConstraintConfig single_branch_config(int n, double c1, double c2) {
    return make_config(AssetUniverse::make_default(n),
                       {{0}, c1, ConstraintDirection::GreaterEqual},
                       {{1}, c2, ConstraintDirection::GreaterEqual});
}

SubAction scatter_sub(const PaddedSimplexSpec& spec, const VectorXd& support_values) {
    VectorXd padded = VectorXd::Zero(spec.dimension);
    for (int i = 0; i < spec.size(); ++i) padded[spec.index_set[i]] = support_values[i];
    return make_sub_action(spec, padded);
}

double digamma_fd(double x) {
    const double h = 1e-6 * std::max(1.0, x);
    return (std::lgamma(x + h) - std::lgamma(x - h)) / (2.0 * h);
}

double max_rel_err(const VectorXd& analytic, const VectorXd& fd) {
    double worst = 0.0;
    for (int i = 0; i < analytic.size(); ++i) {
        const double scale = std::max({1e-3, std::abs(analytic[i]), std::abs(fd[i])});
        worst = std::max(worst, std::abs(analytic[i] - fd[i]) / scale);
    }
    return worst;
}

// Raw-output bias producing alpha exactly `target` after the softplus floor.
double bias_for_alpha(double target) { return std::log(std::expm1(target - 1e-3)); }

} // namespace

TEST_CASE("digamma and trigamma match known values and lgamma differences") {
    CHECK(digamma(1.0) == doctest::Approx(-0.5772156649015329).epsilon(1e-12));
    CHECK(digamma(0.5) == doctest::Approx(-1.9635100260214235).epsilon(1e-12));
    CHECK(digamma(2.0) == doctest::Approx(0.4227843350984671).epsilon(1e-12));

    const double pi2 = M_PI * M_PI;
    CHECK(trigamma(1.0) == doctest::Approx(pi2 / 6.0).epsilon(1e-12));
    CHECK(trigamma(0.5) == doctest::Approx(pi2 / 2.0).epsilon(1e-12));
    CHECK(trigamma(2.0) == doctest::Approx(pi2 / 6.0 - 1.0).epsilon(1e-12));

    for (double x : {0.05, 0.3, 1.7, 4.2, 11.0, 123.4}) {
        CHECK(digamma(x) == doctest::Approx(digamma_fd(x)).epsilon(1e-6));
        const double h = 1e-6 * std::max(1.0, x);
        const double tri_fd = (digamma(x + h) - digamma(x - h)) / (2.0 * h);
        CHECK(trigamma(x) == doctest::Approx(tri_fd).epsilon(1e-6));
    }

    CHECK_THROWS_AS(digamma(0.0), Error);
    CHECK_THROWS_AS(digamma(-1.5), Error);
    CHECK_THROWS_AS(trigamma(0.0), Error);
}

TEST_CASE("softplus and sigmoid stay stable across the full range") {
    CHECK(softplus(0.0) == doctest::Approx(std::log(2.0)).epsilon(1e-15));
    CHECK(softplus(50.0) == doctest::Approx(50.0).epsilon(1e-12));
    CHECK(softplus(1000.0) == 1000.0);
    CHECK(softplus(-50.0) == doctest::Approx(std::exp(-50.0)).epsilon(1e-10));
    CHECK(softplus(-1000.0) >= 0.0);
    CHECK(std::isfinite(softplus(-1000.0)));

    CHECK(sigmoid(0.0) == 0.5);
    CHECK(sigmoid(1000.0) == 1.0);
    CHECK(sigmoid(-1000.0) >= 0.0);
    for (double x : {-5.0, -0.7, 0.0, 0.3, 4.0}) {
        const double h = 1e-6;
        const double fd = (softplus(x + h) - softplus(x - h)) / (2.0 * h);
        CHECK(sigmoid(x) == doctest::Approx(fd).epsilon(1e-8));
    }
}

TEST_CASE("dirichlet density, entropy and their alpha gradients") {
    VectorXd ones3 = VectorXd::Ones(3);
    VectorXd y3(3);
    y3 << 0.2, 0.3, 0.5;
    CHECK(dirichlet_log_pdf(ones3, y3) == doctest::Approx(std::log(2.0)).epsilon(1e-12));

    VectorXd a22(2), y22(2);
    a22 << 2.0, 2.0;
    y22 << 0.3, 0.7;
    CHECK(dirichlet_log_pdf(a22, y22) == doctest::Approx(std::log(6.0 * 0.3 * 0.7)).epsilon(1e-12));

    Rng rng(7);
    for (int rep = 0; rep < 20; ++rep) {
        const int k = 2 + rep % 3;
        VectorXd alpha(k);
        for (int i = 0; i < k; ++i) alpha[i] = 0.3 + 3.0 * rng.uniform01();
        const VectorXd y = rng.dirichlet(VectorXd::Constant(k, 2.0));

        VectorXd grad_fd(k);
        for (int i = 0; i < k; ++i) {
            const double h = 1e-6 * std::max(1.0, alpha[i]);
            VectorXd ap = alpha, am = alpha;
            ap[i] += h;
            am[i] -= h;
            grad_fd[i] = (dirichlet_log_pdf(ap, y) - dirichlet_log_pdf(am, y)) / (2.0 * h);
        }
        CHECK(max_rel_err(dirichlet_log_pdf_grad_alpha(alpha, y), grad_fd) <= 1e-5);

        VectorXd ent_fd(k);
        for (int i = 0; i < k; ++i) {
            const double h = 1e-6 * std::max(1.0, alpha[i]);
            VectorXd ap = alpha, am = alpha;
            ap[i] += h;
            am[i] -= h;
            ent_fd[i] = (dirichlet_entropy(ap) - dirichlet_entropy(am)) / (2.0 * h);
        }
        CHECK(max_rel_err(dirichlet_entropy_grad_alpha(alpha), ent_fd) <= 1e-5);
    }

    VectorXd a11(2);
    a11 << 1.0, 1.0;
    CHECK(dirichlet_entropy(a11) == doctest::Approx(0.0).epsilon(1e-14));
    CHECK(dirichlet_entropy(10.0 * a11) < dirichlet_entropy(a11));
    CHECK(dirichlet_entropy(ones3) == doctest::Approx(-std::log(2.0)).epsilon(1e-12));

    VectorXd a23(2);
    a23 << 2.0, 3.0;
    const int m = 200000;
    double h_num = 0.0;
    for (int i = 0; i < m; ++i) {
        const double t = (i + 0.5) / m;
        VectorXd y(2);
        y << t, 1.0 - t;
        const double lp = dirichlet_log_pdf(a23, y);
        h_num -= std::exp(lp) * lp / m;
    }
    CHECK(dirichlet_entropy(a23) == doctest::Approx(h_num).epsilon(1e-6));
}

TEST_CASE("dirichlet mode or mean hybrid") {
    VectorXd a(2);
    a << 2.0, 2.0;
    VectorXd mode = dirichlet_mode_or_mean(a);
    CHECK(mode[0] == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(mode[1] == doctest::Approx(0.5).epsilon(1e-15));

    VectorXd b(3);
    b << 5.0, 1.0001, 1.0001;
    const double denom = b.sum() - 3.0;
    VectorXd expect = (b.array() - 1.0) / denom;
    VectorXd got = dirichlet_mode_or_mean(b);
    for (int i = 0; i < 3; ++i) CHECK(got[i] == doctest::Approx(expect[i]).epsilon(1e-14));
    CHECK(got[0] == doctest::Approx(0.9999500024998750).epsilon(1e-12));
    CHECK(got.sum() == doctest::Approx(1.0).epsilon(1e-12));

    VectorXd c(2);
    c << 0.5, 2.0;
    VectorXd mean = dirichlet_mode_or_mean(c);
    CHECK(mean[0] == doctest::Approx(0.2).epsilon(1e-15));
    CHECK(mean[1] == doctest::Approx(0.8).epsilon(1e-15));
}

TEST_CASE("mlp backward matches finite differences") {
    NetBuilder b;
    Mlp net = b.mlp(3, {5, 4}, 2);
    VectorXd params = VectorXd::Zero(b.total());
    Rng rng(11);
    init_mlp(net, params, rng);

    VectorXd x(3);
    x << 0.4, -1.2, 0.7;
    VectorXd c(2);
    c << 1.3, -0.8;

    auto loss = [&](const VectorXd& p, const VectorXd& in) { return c.dot(net.forward(p, in)); };

    Mlp::Trace trace;
    net.forward(params, x, &trace);
    VectorXd grad = VectorXd::Zero(params.size());
    const VectorXd dx = net.backward(params, trace, c, grad);

    VectorXd grad_fd(params.size());
    for (int i = 0; i < params.size(); ++i) {
        VectorXd pp = params, pm = params;
        pp[i] += 1e-6;
        pm[i] -= 1e-6;
        grad_fd[i] = (loss(pp, x) - loss(pm, x)) / 2e-6;
    }
    CHECK(max_rel_err(grad, grad_fd) <= 1e-6);

    VectorXd dx_fd(x.size());
    for (int i = 0; i < x.size(); ++i) {
        VectorXd xp = x, xm = x;
        xp[i] += 1e-6;
        xm[i] -= 1e-6;
        dx_fd[i] = (loss(params, xp) - loss(params, xm)) / 2e-6;
    }
    CHECK(max_rel_err(dx, dx_fd) <= 1e-6);
}

TEST_CASE("self-attention backward matches finite differences") {
    NetBuilder b;
    SelfAttention attn = b.attention(4);
    VectorXd params = VectorXd::Zero(b.total());
    Rng rng(13);
    init_linear(attn.wq, params, rng, 0.5);
    init_linear(attn.wk, params, rng, 0.5);
    init_linear(attn.wv, params, rng, 0.5);

    MatrixXd tokens(3, 4);
    tokens << 0.2, -0.5, 0.9, 0.1, 1.1, 0.3, -0.2, 0.4, -0.7, 0.8, 0.5, -0.3;
    MatrixXd c(3, 4);
    c << 0.3, -1.0, 0.2, 0.8, -0.4, 0.6, 1.2, -0.1, 0.5, 0.9, -0.6, 0.7;

    auto loss = [&](const VectorXd& p, const MatrixXd& in) {
        return (attn.forward(p, in).array() * c.array()).sum();
    };

    SelfAttention::Trace trace;
    attn.forward(params, tokens, &trace);
    VectorXd grad = VectorXd::Zero(params.size());
    const MatrixXd d_tokens = attn.backward(params, trace, c, grad);

    VectorXd grad_fd(params.size());
    for (int i = 0; i < params.size(); ++i) {
        VectorXd pp = params, pm = params;
        pp[i] += 1e-6;
        pm[i] -= 1e-6;
        grad_fd[i] = (loss(pp, tokens) - loss(pm, tokens)) / 2e-6;
    }
    CHECK(max_rel_err(grad, grad_fd) <= 1e-6);

    double worst = 0.0;
    for (int r = 0; r < tokens.rows(); ++r) {
        for (int col = 0; col < tokens.cols(); ++col) {
            MatrixXd tp = tokens, tm = tokens;
            tp(r, col) += 1e-6;
            tm(r, col) -= 1e-6;
            const double fd = (loss(params, tp) - loss(params, tm)) / 2e-6;
            const double scale = std::max({1e-3, std::abs(fd), std::abs(d_tokens(r, col))});
            worst = std::max(worst, std::abs(fd - d_tokens(r, col)) / scale);
        }
    }
    CHECK(worst <= 1e-6);
}

TEST_CASE("encode is deterministic, rejects bad input, and zeroes out with zero weights") {
    DirichletPolicy policy(overlap_config(), small_encoder(), 3);
    const Observation obs = varied_obs(6, 17);

    const VectorXd a = policy.encode(obs);
    const VectorXd b = policy.encode(obs);
    CHECK(a.size() == 6);
    CHECK((a - b).cwiseAbs().maxCoeff() == 0.0);
    CHECK(a.allFinite());

    policy.params().setZero();
    CHECK(policy.encode(obs).cwiseAbs().maxCoeff() == 0.0);

    Observation bad = obs;
    bad.wealth = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_WITH_AS(policy.encode(bad), "non-finite observation", Error);
    Observation short_obs = obs;
    short_obs.last_returns = VectorXd::Zero(3);
    CHECK_THROWS_AS(policy.encode(short_obs), Error);
}

TEST_CASE("branch alphas respect the floor and the autoregressive order") {
    const ConstraintConfig cfg = overlap_config();
    DirichletPolicy policy(cfg, small_encoder(), 5);
    const auto& specs = policy.decomposition().specs;
    REQUIRE(specs[0].size() == 2);
    REQUIRE(specs[1].size() == 4);
    REQUIRE(specs[2].size() == 4);
    REQUIRE(specs[3].size() == 6);

    Rng rng(23);
    const Observation obs = varied_obs(6, 29);
    const VectorXd latent = policy.encode(obs);
    const PolicyOutput out = policy.sample_action(obs, rng);

    for (int j = 1; j <= 4; ++j) {
        const VectorXd alpha = policy.branch_alpha(j, latent, out.surrogate.subs);
        CHECK(alpha.size() == specs[j - 1].size());
        CHECK(alpha.minCoeff() >= 1e-3);
        CHECK(alpha.maxCoeff() <= 1e4);
        // Fresh output layers sit near the uniform concentration.
        CHECK(alpha.minCoeff() > 0.5);
        CHECK(alpha.maxCoeff() < 2.0);
    }

    auto replaced = [&](int slot, const VectorXd& support) {
        auto subs = out.surrogate.subs;
        subs[slot] = scatter_sub(specs[slot], support);
        return subs;
    };

    VectorXd alt1(2);
    alt1 << 0.9, 0.1;
    VectorXd alt2(4);
    alt2 << 0.7, 0.1, 0.1, 0.1;
    VectorXd alt3(4);
    alt3 << 0.1, 0.2, 0.3, 0.4;
    VectorXd alt4(6);
    alt4 << 0.3, 0.1, 0.1, 0.2, 0.2, 0.1;

    const auto subs_alt1 = replaced(0, alt1);
    const auto subs_alt2 = replaced(1, alt2);
    const auto subs_alt3 = replaced(2, alt3);
    const auto subs_alt4 = replaced(3, alt4);

    // Branch 1 has no predecessors.
    CHECK(policy.branch_alpha(1, latent, subs_alt1) == policy.branch_alpha(1, latent, out.surrogate.subs));
    CHECK(policy.branch_alpha(1, latent, subs_alt4) == policy.branch_alpha(1, latent, out.surrogate.subs));

    // Branch j reacts to strictly earlier sub-actions only.
    CHECK((policy.branch_alpha(2, latent, subs_alt1) - policy.branch_alpha(2, latent, out.surrogate.subs))
              .cwiseAbs()
              .maxCoeff() > 0.0);
    CHECK(policy.branch_alpha(2, latent, subs_alt2) == policy.branch_alpha(2, latent, out.surrogate.subs));
    CHECK(policy.branch_alpha(2, latent, subs_alt3) == policy.branch_alpha(2, latent, out.surrogate.subs));
    CHECK((policy.branch_alpha(3, latent, subs_alt2) - policy.branch_alpha(3, latent, out.surrogate.subs))
              .cwiseAbs()
              .maxCoeff() > 0.0);
    CHECK(policy.branch_alpha(3, latent, subs_alt3) == policy.branch_alpha(3, latent, out.surrogate.subs));
    CHECK(policy.branch_alpha(3, latent, subs_alt4) == policy.branch_alpha(3, latent, out.surrogate.subs));
    CHECK(policy.branch_alpha(4, latent, subs_alt4) == policy.branch_alpha(4, latent, out.surrogate.subs));

    CHECK_THROWS_AS(policy.branch_alpha(0, latent, out.surrogate.subs), Error);
    CHECK_THROWS_AS(policy.branch_alpha(5, latent, out.surrogate.subs), Error);
}

TEST_CASE("sampled actions satisfy the constraints and factorize the joint") {
    const ConstraintConfig cfg =
        make_config(AssetUniverse::make_default(5), {{1, 3}, 0.3, ConstraintDirection::GreaterEqual},
                    {{2, 4}, 0.5, ConstraintDirection::GreaterEqual});
    DirichletPolicy policy(cfg, small_encoder(), 7);
    REQUIRE(policy.decomposition().specs[0].empty());

    Rng rng(31);
    const Observation obs = make_obs(5);
    for (int rep = 0; rep < 10000; ++rep) {
        const PolicyOutput out = policy.sample_action(obs, rng);
        if (rep < 200) {
            CHECK(out.surrogate.subs[0].values.cwiseAbs().maxCoeff() == 0.0);
            CHECK(out.per_branch_log_prob[0] == 0.0);
            const double sum = out.per_branch_log_prob[0] + out.per_branch_log_prob[1] +
                               out.per_branch_log_prob[2] + out.per_branch_log_prob[3];
            CHECK(out.joint_log_prob == doctest::Approx(sum).epsilon(1e-10));
            CHECK(policy.log_prob(obs, out.surrogate) ==
                  doctest::Approx(out.joint_log_prob).epsilon(1e-12));
            CHECK(out.weights.sum() == doctest::Approx(1.0).epsilon(1e-12));
        }
        CHECK(membership(cfg, out.action, 1e-9));
    }
}

TEST_CASE("zero thresholds reduce the action to the final branch") {
    const ConstraintConfig cfg = single_branch_config(4, 0.0, 0.0);
    DirichletPolicy policy(cfg, small_encoder(), 9);
    Rng rng(37);
    const Observation obs = varied_obs(4, 41);
    for (int rep = 0; rep < 50; ++rep) {
        const PolicyOutput out = policy.sample_action(obs, rng);
        CHECK((out.action - out.surrogate.subs[3].values).cwiseAbs().maxCoeff() <= 1e-15);
        CHECK(membership(cfg, out.action, 1e-9));
    }
}

TEST_CASE("sampling is reproducible for a fixed seed") {
    DirichletPolicy policy(overlap_config(), small_encoder(), 11);
    const Observation obs = varied_obs(6, 43);

    Rng r1(99), r2(99), r3(100);
    const PolicyOutput a = policy.sample_action(obs, r1);
    const PolicyOutput b = policy.sample_action(obs, r2);
    const PolicyOutput c = policy.sample_action(obs, r3);
    CHECK((a.action - b.action).cwiseAbs().maxCoeff() == 0.0);
    CHECK(a.joint_log_prob == b.joint_log_prob);
    CHECK((a.action - c.action).cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("uniform concentrations recover the flat simplex density") {
    // Only branch 4 is active: sizes (0, 1, 1, 3). With no hidden layers the
    // parameter layout is one encoder layer, one branch layer, one value layer.
    const ConstraintConfig cfg = single_branch_config(3, 0.2, 0.3);
    EncoderConfig enc;
    enc.hidden_sizes = {};
    enc.embedding_size = 4;
    enc.branch_hidden = {};
    enc.value_hidden = {};
    DirichletPolicy policy(cfg, enc, 13);

    const int enc_count = 4 * (1 + 2 * 3 + 1);
    const int branch_in = 4 + 3 * 3;
    const int bias_offset = enc_count + 3 * branch_in;
    REQUIRE(policy.param_count() > bias_offset + 3);

    policy.params().setZero();
    policy.params().segment(bias_offset, 3).setConstant(bias_for_alpha(1.0));

    const Observation obs = varied_obs(3, 47);
    Rng rng(53);
    PolicyOutput out = policy.sample_action(obs, rng);
    const VectorXd latent = policy.encode(obs);
    const VectorXd alpha = policy.branch_alpha(4, latent, out.surrogate.subs);
    CHECK((alpha - VectorXd::Ones(3)).cwiseAbs().maxCoeff() <= 1e-12);

    VectorXd interior(3);
    interior << 0.2, 0.3, 0.5;
    out.surrogate.subs[3] = scatter_sub(policy.decomposition().specs[3], interior);
    CHECK(policy.log_prob(obs, out.surrogate) == doctest::Approx(std::log(2.0)).epsilon(1e-9));
}

TEST_CASE("the joint density integrates to one on a single-branch config") {
    const ConstraintConfig cfg = single_branch_config(2, 0.3, 0.2);
    EncoderConfig enc;
    enc.hidden_sizes = {};
    enc.embedding_size = 4;
    enc.branch_hidden = {};
    enc.value_hidden = {};
    DirichletPolicy policy(cfg, enc, 17);

    const int enc_count = 4 * (1 + 2 * 2 + 1);
    const int branch_in = 4 + 3 * 2;
    const int bias_offset = enc_count + 2 * branch_in;
    policy.params().setZero();
    policy.params()[bias_offset] = bias_for_alpha(2.0);
    policy.params()[bias_offset + 1] = bias_for_alpha(3.0);

    const Observation obs = make_obs(2);
    Rng rng(59);
    PolicyOutput out = policy.sample_action(obs, rng);

    const int m = 20001;
    double integral = 0.0;
    for (int i = 0; i < m; ++i) {
        const double t = (i + 0.5) / m;
        VectorXd support(2);
        support << t, 1.0 - t;
        out.surrogate.subs[3] = scatter_sub(policy.decomposition().specs[3], support);
        integral += std::exp(policy.log_prob(obs, out.surrogate)) / m;
    }
    CHECK(integral == doctest::Approx(1.0).epsilon(1e-3));
}

TEST_CASE("log-prob, entropy and value gradients match finite differences") {
    const ConstraintConfig cfg =
        make_config(AssetUniverse::make_default(4), {{0, 1}, 0.4, ConstraintDirection::GreaterEqual},
                    {{1, 2}, 0.3, ConstraintDirection::GreaterEqual});
    EncoderConfig enc;
    enc.hidden_sizes = {7};
    enc.embedding_size = 5;
    enc.branch_hidden = {6};
    enc.value_hidden = {4};
    DirichletPolicy policy(cfg, enc, 19);

    Rng rng(61);
    for (int rep = 0; rep < 5; ++rep) {
        const Observation obs = varied_obs(4, 67 + rep);
        const PolicyOutput out = policy.sample_action(obs, rng);
        const VectorXd params0 = policy.params();

        VectorXd grad = VectorXd::Zero(policy.param_count());
        const double joint = policy.log_prob_backward(obs, out.surrogate, 1.0, grad);
        CHECK(joint == doctest::Approx(policy.log_prob(obs, out.surrogate)).epsilon(1e-12));

        VectorXd grad_fd(policy.param_count());
        for (int i = 0; i < policy.param_count(); ++i) {
            policy.params()[i] = params0[i] + 1e-6;
            const double up = policy.log_prob(obs, out.surrogate);
            policy.params()[i] = params0[i] - 1e-6;
            const double dn = policy.log_prob(obs, out.surrogate);
            policy.params()[i] = params0[i];
            grad_fd[i] = (up - dn) / 2e-6;
        }
        CHECK(max_rel_err(grad, grad_fd) <= 1e-4);

        VectorXd egrad = VectorXd::Zero(policy.param_count());
        double ent = 0.0;
        policy.log_prob_backward(obs, out.surrogate, 0.0, egrad, 1.0, &ent);
        CHECK(ent == doctest::Approx(policy.entropy(obs, out.surrogate)).epsilon(1e-12));
        VectorXd egrad_fd(policy.param_count());
        for (int i = 0; i < policy.param_count(); ++i) {
            policy.params()[i] = params0[i] + 1e-6;
            const double up = policy.entropy(obs, out.surrogate);
            policy.params()[i] = params0[i] - 1e-6;
            const double dn = policy.entropy(obs, out.surrogate);
            policy.params()[i] = params0[i];
            egrad_fd[i] = (up - dn) / 2e-6;
        }
        CHECK(max_rel_err(egrad, egrad_fd) <= 1e-4);

        VectorXd vgrad = VectorXd::Zero(policy.param_count());
        const double v = policy.value_backward(obs, 1.0, vgrad);
        CHECK(v == doctest::Approx(policy.value(obs)).epsilon(1e-12));
        VectorXd vgrad_fd(policy.param_count());
        for (int i = 0; i < policy.param_count(); ++i) {
            policy.params()[i] = params0[i] + 1e-6;
            const double up = policy.value(obs);
            policy.params()[i] = params0[i] - 1e-6;
            const double dn = policy.value(obs);
            policy.params()[i] = params0[i];
            vgrad_fd[i] = (up - dn) / 2e-6;
        }
        CHECK(max_rel_err(vgrad, vgrad_fd) <= 1e-4);
    }

    VectorXd wrong = VectorXd::Zero(3);
    Rng rng2(71);
    const Observation obs = varied_obs(4, 73);
    const PolicyOutput out = policy.sample_action(obs, rng2);
    CHECK_THROWS_AS(policy.log_prob_backward(obs, out.surrogate, 1.0, wrong), Error);
}

TEST_CASE("attention encoder works end to end with correct gradients") {
    EncoderConfig enc;
    enc.hidden_sizes = {8};
    enc.embedding_size = 6;
    enc.use_attention = true;
    enc.branch_hidden = {5};
    enc.value_hidden = {4};
    const ConstraintConfig cfg = single_branch_config(3, 0.1, 0.2);
    DirichletPolicy policy(cfg, enc, 23);

    const Observation obs = varied_obs(3, 79);
    CHECK(policy.encode(obs).allFinite());

    Rng rng(83);
    const PolicyOutput out = policy.sample_action(obs, rng);
    CHECK(membership(cfg, out.action, 1e-9));

    const VectorXd params0 = policy.params();
    VectorXd grad = VectorXd::Zero(policy.param_count());
    policy.log_prob_backward(obs, out.surrogate, 1.0, grad);
    VectorXd grad_fd(policy.param_count());
    for (int i = 0; i < policy.param_count(); ++i) {
        policy.params()[i] = params0[i] + 1e-6;
        const double up = policy.log_prob(obs, out.surrogate);
        policy.params()[i] = params0[i] - 1e-6;
        const double dn = policy.log_prob(obs, out.surrogate);
        policy.params()[i] = params0[i];
        grad_fd[i] = (up - dn) / 2e-6;
    }
    CHECK(max_rel_err(grad, grad_fd) <= 1e-4);

    VectorXd vgrad = VectorXd::Zero(policy.param_count());
    policy.value_backward(obs, 1.0, vgrad);
    VectorXd vgrad_fd(policy.param_count());
    for (int i = 0; i < policy.param_count(); ++i) {
        policy.params()[i] = params0[i] + 1e-6;
        const double up = policy.value(obs);
        policy.params()[i] = params0[i] - 1e-6;
        const double dn = policy.value(obs);
        policy.params()[i] = params0[i];
        vgrad_fd[i] = (up - dn) / 2e-6;
    }
    CHECK(max_rel_err(vgrad, vgrad_fd) <= 1e-4);
}

TEST_CASE("deterministic actions are stable and feasible") {
    for (std::int64_t seed : {1, 2, 3, 4, 5}) {
        const int n = 3 + static_cast<int>(seed);
        const ConstraintConfig cfg =
            generate_random_config(AssetUniverse::make_default(n), seed);
        DirichletPolicy policy(cfg, small_encoder(), 29 + seed);
        const Observation obs = varied_obs(n, 89 + seed);

        const VectorXd a = policy.deterministic_action(obs);
        const VectorXd b = policy.deterministic_action(obs);
        CHECK((a - b).cwiseAbs().maxCoeff() == 0.0);
        CHECK(membership(cfg, a, 1e-9));

        Rng rng(97 + seed);
        for (int rep = 0; rep < 50; ++rep) {
            CHECK(membership(cfg, policy.sample_action(obs, rng).action, 1e-9));
        }
    }
}

TEST_CASE("policy entropy sums the active branch entropies") {
    DirichletPolicy policy(overlap_config(), small_encoder(), 31);
    const Observation obs = varied_obs(6, 101);
    Rng rng(103);
    const PolicyOutput out = policy.sample_action(obs, rng);

    const VectorXd latent = policy.encode(obs);
    double expected = 0.0;
    for (int j = 1; j <= 4; ++j) {
        expected += dirichlet_entropy(policy.branch_alpha(j, latent, out.surrogate.subs));
    }
    CHECK(policy.entropy(obs, out.surrogate) == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("checkpoints roundtrip and reject mismatched shapes") {
    const ConstraintConfig cfg = overlap_config();
    const EncoderConfig enc = small_encoder();
    DirichletPolicy a(cfg, enc, 41);
    DirichletPolicy b(cfg, enc, 42);
    REQUIRE((a.params() - b.params()).cwiseAbs().maxCoeff() > 0.0);

    b.load_checkpoint(a.to_checkpoint());
    CHECK((a.params() - b.params()).cwiseAbs().maxCoeff() == 0.0);

    const Observation obs = varied_obs(6, 107);
    CHECK((a.deterministic_action(obs) - b.deterministic_action(obs)).cwiseAbs().maxCoeff() == 0.0);
    Rng r1(109), r2(109);
    CHECK((a.sample_action(obs, r1).action - b.sample_action(obs, r2).action).cwiseAbs().maxCoeff() ==
          0.0);

    const char* path = "policy_checkpoint_roundtrip.json";
    a.save_checkpoint_file(path);
    DirichletPolicy c(cfg, enc, 43);
    c.load_checkpoint_file(path);
    CHECK((a.params() - c.params()).cwiseAbs().maxCoeff() == 0.0);
    std::remove(path);

    DirichletPolicy other_n(single_branch_config(4, 0.1, 0.1), enc, 44);
    CHECK_THROWS_WITH_AS(other_n.load_checkpoint(a.to_checkpoint()),
                         "checkpoint does not match the constraint configuration", Error);

    EncoderConfig wider = enc;
    wider.embedding_size = 8;
    DirichletPolicy other_e(cfg, wider, 45);
    CHECK_THROWS_WITH_AS(other_e.load_checkpoint(a.to_checkpoint()),
                         "checkpoint does not match the constraint configuration", Error);

    nlohmann::json broken = a.to_checkpoint();
    broken.erase("params");
    DirichletPolicy d(cfg, enc, 46);
    CHECK_THROWS_WITH_AS(d.load_checkpoint(broken), "malformed checkpoint", Error);

    nlohmann::json truncated = a.to_checkpoint();
    truncated["params"] = std::vector<double>{1.0, 2.0};
    CHECK_THROWS_WITH_AS(d.load_checkpoint(truncated),
                         "checkpoint does not match the constraint configuration", Error);
}
