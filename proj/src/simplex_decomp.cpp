#include "caosd/simplex_decomp.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <utility>

#include "caosd/errors.hpp"
#include "caosd/linprog.hpp"

namespace caosd {

namespace {

// Compensated (Neumaier) sum; keeps the weight closure exact for the
// worked-example rationals where naive left-to-right rounding would not.
double compensated_sum4(double a, double b, double c, double d) {
    double s = a;
    double comp = 0.0;
    for (double x : {b, c, d}) {
        const double t = s + x;
        if (std::abs(s) >= std::abs(x)) {
            comp += (s - t) + x;
        } else {
            comp += (x - t) + s;
        }
        s = t;
    }
    return s + comp;
}

void check_spec(const PaddedSimplexSpec& spec) {
    if (spec.dimension <= 0) throw invalid_input("invalid sub-action");
    int prev = -1;
    for (int i : spec.index_set) {
        if (i <= prev || i >= spec.dimension) throw invalid_input("invalid sub-action");
        prev = i;
    }
}

void check_normalized(const ConstraintConfig& cfg) {
    if (cfg.c1.direction != ConstraintDirection::GreaterEqual ||
        cfg.c2.direction != ConstraintDirection::GreaterEqual) {
        throw invalid_input("constraints must be normalized; construct configs through make_config");
    }
}

// Trusted-structure variant of make_sub_action for LP recovery: clamps
// negatives, renormalizes whatever mass is present, never rejects.
SubAction normalized_sub_action(const PaddedSimplexSpec& spec, const Eigen::VectorXd& scaled) {
    if (spec.empty()) return {Eigen::VectorXd::Zero(spec.dimension), spec};
    Eigen::VectorXd v = scaled.cwiseMax(0.0);
    const double sum = v.sum();
    if (sum <= 0.0) {
        SubAction s;
        s.values = Eigen::VectorXd::Zero(spec.dimension);
        for (int i : spec.index_set) s.values[i] = 1.0 / spec.size();
        s.spec = spec;
        return s;
    }
    return {v / sum, spec};
}

} // namespace

double WeightVector::operator[](int j) const {
    switch (j) {
        case 0: return z1;
        case 1: return z2;
        case 2: return z3;
        case 3: return z4;
        default: throw invalid_input("weight index out of range");
    }
}

Decomposition build_decomposition(const ConstraintConfig& cfg) {
    check_normalized(cfg);
    const int n = cfg.n_assets();
    if (n <= 0) throw invalid_input("empty asset universe");

    const auto& v1 = cfg.c1.assets;
    const auto& v2 = cfg.c2.assets;
    std::vector<int> k1;
    std::set_intersection(v1.begin(), v1.end(), v2.begin(), v2.end(), std::back_inserter(k1));

    const bool bad = (v1.empty() && cfg.c1.threshold > 0.0) ||
                     (v2.empty() && cfg.c2.threshold > 0.0) ||
                     (k1.empty() && cfg.c1.threshold + cfg.c2.threshold > 1.0);
    if (bad) throw infeasible("infeasible configuration");

    std::vector<int> all(static_cast<std::size_t>(n));
    std::iota(all.begin(), all.end(), 0);

    Decomposition d;
    d.config = cfg;
    d.specs[0] = PaddedSimplexSpec{std::move(k1), n};
    d.specs[1] = PaddedSimplexSpec{v1, n};
    d.specs[2] = PaddedSimplexSpec{v2, n};
    d.specs[3] = PaddedSimplexSpec{std::move(all), n};
    return d;
}

SubAction make_sub_action(const PaddedSimplexSpec& spec, const Eigen::VectorXd& values) {
    check_spec(spec);
    if (values.size() != spec.dimension) throw invalid_input("invalid sub-action");

    Eigen::VectorXd v = values;
    for (int i = 0; i < v.size(); ++i) {
        if (v[i] < -1e-12) throw invalid_input("invalid sub-action");
        if (v[i] < 1e-15) v[i] = 0.0;
    }

    double sum = 0.0;
    std::size_t k = 0;
    for (int i = 0; i < v.size(); ++i) {
        const bool member = k < spec.index_set.size() && spec.index_set[k] == i;
        if (member) {
            sum += v[i];
            ++k;
        } else if (v[i] != 0.0) {
            throw invalid_input("invalid sub-action");
        }
    }

    if (spec.empty()) return {std::move(v), spec};
    if (std::abs(sum - 1.0) > 1e-9) throw invalid_input("invalid sub-action");
    if (sum != 1.0) v /= sum;
    return {std::move(v), spec};
}

SubAction uniform_sub_action(const PaddedSimplexSpec& spec) {
    check_spec(spec);
    SubAction s;
    s.values = Eigen::VectorXd::Zero(spec.dimension);
    for (int i : spec.index_set) s.values[i] = 1.0 / spec.size();
    s.spec = spec;
    return s;
}

WeightVector compute_weights(const Decomposition& decomp, const Eigen::VectorXd& sub2_values) {
    const double c1 = decomp.config.c1.threshold;
    const double c2 = decomp.config.c2.threshold;

    WeightVector w;
    w.z1 = std::max(0.0, c1 + c2 - 1.0);
    w.z2 = std::max(0.0, c1 - w.z1);
    double cap = 0.0;
    for (int i : decomp.specs[0].index_set) cap += sub2_values[i];
    w.z3 = std::max(0.0, c2 - w.z1 - w.z2 * cap);
    w.z4 = std::max(0.0, compensated_sum4(1.0, -w.z1, -w.z2, -w.z3));
    return w;
}

WeightVector compute_weights(const ConstraintConfig& cfg, const SubAction& sub1, const SubAction& sub2) {
    const Decomposition d = build_decomposition(cfg);
    if (sub1.spec.index_set != d.specs[0].index_set || sub2.spec.index_set != d.specs[1].index_set)
        throw invalid_input("invalid sub-action");
    const SubAction s2 = make_sub_action(d.specs[1], sub2.values);
    make_sub_action(d.specs[0], sub1.values);
    return compute_weights(d, s2.values);
}

Eigen::VectorXd compose(const Decomposition& decomp, const std::array<Eigen::VectorXd, 4>& sub_values,
                        WeightVector* weights_out) {
    std::array<SubAction, 4> subs;
    for (int j = 0; j < 4; ++j) subs[j] = make_sub_action(decomp.specs[j], sub_values[j]);

    const WeightVector w = compute_weights(decomp, subs[1].values);
    Eigen::VectorXd a = w.z1 * subs[0].values + w.z2 * subs[1].values +
                        w.z3 * subs[2].values + w.z4 * subs[3].values;
    if (weights_out) *weights_out = w;
    return a;
}

Eigen::VectorXd compose(const ConstraintConfig& cfg, const std::array<SubAction, 4>& subs) {
    const Decomposition d = build_decomposition(cfg);
    for (int j = 0; j < 4; ++j) {
        if (subs[j].spec.index_set != d.specs[j].index_set) throw invalid_input("invalid sub-action");
    }
    return compose(d, {subs[0].values, subs[1].values, subs[2].values, subs[3].values}, nullptr);
}

Preimage decompose(const ConstraintConfig& cfg, const Eigen::VectorXd& allocation) {
    return decompose(build_decomposition(cfg), allocation);
}

Preimage decompose(const Decomposition& decomp, const Eigen::VectorXd& allocation) {
    const ConstraintConfig& cfg = decomp.config;
    const int n = cfg.n_assets();
    if (allocation.size() != n || !membership(cfg, allocation, 1e-9))
        throw infeasible("point not in action space");

    const double c1 = cfg.c1.threshold;
    const double c2 = cfg.c2.threshold;
    const double z1 = std::max(0.0, c1 + c2 - 1.0);
    const double z2 = std::max(0.0, c1 - z1);

    const auto& k1 = decomp.specs[0].index_set;
    const auto& k2 = decomp.specs[1].index_set;
    const auto& k3 = decomp.specs[2].index_set;
    const int n1 = static_cast<int>(k1.size());
    const int n2 = static_cast<int>(k2.size());
    const int n3 = static_cast<int>(k3.size());

    // Scaled variables u_j = z_j * y_j keep every schedule constraint linear.
    // Two cases for the single data-dependent max: z3 = 0 and z3 > 0.
    for (int use_z3 = 0; use_z3 <= 1; ++use_z3) {
        const int m3 = use_z3 ? n3 : 0;
        const int off1 = 0;
        const int off2 = n1;
        const int off3 = n1 + n2;
        const int off4 = n1 + n2 + m3;
        const int n_cols = off4 + n;

        const bool row1 = n1 > 0;
        const bool row2 = n2 > 0;
        const int n_eq = n + (row1 ? 1 : 0) + (row2 ? 1 : 0) + (use_z3 ? 2 : 1);

        LpProblem lp;
        lp.c = Eigen::VectorXd::Zero(n_cols);
        lp.a_eq = Eigen::MatrixXd::Zero(n_eq, n_cols);
        lp.b_eq = Eigen::VectorXd::Zero(n_eq);

        // Coordinate balance: sum_j u_j,i = a_i.
        for (int t = 0; t < n1; ++t) lp.a_eq(k1[t], off1 + t) = 1.0;
        for (int t = 0; t < n2; ++t) lp.a_eq(k2[t], off2 + t) = 1.0;
        if (use_z3) {
            for (int t = 0; t < n3; ++t) lp.a_eq(k3[t], off3 + t) = 1.0;
        }
        for (int i = 0; i < n; ++i) {
            lp.a_eq(i, off4 + i) = 1.0;
            lp.b_eq[i] = allocation[i];
        }

        int r = n;
        if (row1) {
            for (int t = 0; t < n1; ++t) lp.a_eq(r, off1 + t) = 1.0;
            lp.b_eq[r] = z1;
            ++r;
        }
        if (row2) {
            for (int t = 0; t < n2; ++t) lp.a_eq(r, off2 + t) = 1.0;
            lp.b_eq[r] = z2;
            ++r;
        }

        // u2 columns sitting on K1; their sum is w = z2 * z_{2,cap}.
        std::vector<int> cap_cols;
        for (int t = 0, s = 0; t < n2 && s < n1; ++t) {
            if (k2[t] == k1[s]) {
                cap_cols.push_back(off2 + t);
                ++s;
            }
        }

        if (use_z3) {
            // z3 = c2 - z1 - w  =>  sum(u3) + w = c2 - z1; u3 >= 0 keeps z3 >= 0.
            for (int t = 0; t < n3; ++t) lp.a_eq(r, off3 + t) = 1.0;
            for (int c : cap_cols) lp.a_eq(r, c) = 1.0;
            lp.b_eq[r] = c2 - z1;
            ++r;
            // sum(u4) = z4 = 1 - z1 - z2 - z3  =>  sum(u4) - w = 1 - z2 - c2.
            for (int i = 0; i < n; ++i) lp.a_eq(r, off4 + i) = 1.0;
            for (int c : cap_cols) lp.a_eq(r, c) -= 1.0;
            lp.b_eq[r] = 1.0 - z2 - c2;
        } else {
            for (int i = 0; i < n; ++i) lp.a_eq(r, off4 + i) = 1.0;
            lp.b_eq[r] = 1.0 - z1 - z2;
            // z3 = 0 requires c2 - z1 - w <= 0.
            lp.a_ge = Eigen::MatrixXd::Zero(1, n_cols);
            lp.b_ge = Eigen::VectorXd::Zero(1);
            for (int c : cap_cols) lp.a_ge(0, c) = 1.0;
            lp.b_ge[0] = c2 - z1;
        }

        const LpResult sol = solve_lp(lp);
        if (sol.status != LpStatus::Optimal) continue;

        auto embed = [n](int off, const std::vector<int>& assets, const Eigen::VectorXd& x) {
            Eigen::VectorXd v = Eigen::VectorXd::Zero(n);
            for (std::size_t t = 0; t < assets.size(); ++t) v[assets[t]] = x[off + static_cast<int>(t)];
            return v;
        };

        Preimage p;
        p.subs[0] = normalized_sub_action(decomp.specs[0], embed(off1, k1, sol.x));
        p.subs[1] = normalized_sub_action(decomp.specs[1], embed(off2, k2, sol.x));
        p.subs[2] = use_z3 ? normalized_sub_action(decomp.specs[2], embed(off3, k3, sol.x))
                           : uniform_sub_action(decomp.specs[2]);
        p.subs[3] = normalized_sub_action(decomp.specs[3], embed(off4, decomp.specs[3].index_set, sol.x));
        p.weights = compute_weights(decomp, p.subs[1].values);
        return p;
    }

    throw numerical("decompose: no schedule case admits the point");
}

bool membership(const ConstraintConfig& cfg, const Eigen::VectorXd& allocation, double tol) {
    const int n = cfg.n_assets();
    if (allocation.size() != n) throw invalid_input("allocation length mismatch");

    double total = 0.0;
    for (int i = 0; i < n; ++i) {
        if (allocation[i] < -tol) return false;
        total += allocation[i];
    }
    if (std::abs(total - 1.0) > tol) return false;

    double s1 = 0.0;
    for (int i : cfg.c1.assets) s1 += allocation[i];
    if (s1 < cfg.c1.threshold - tol) return false;

    double s2 = 0.0;
    for (int i : cfg.c2.assets) s2 += allocation[i];
    return s2 >= cfg.c2.threshold - tol;
}

} // namespace caosd
