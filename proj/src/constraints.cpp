#include "caosd/constraints.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "caosd/errors.hpp"
#include "caosd/linprog.hpp"
#include "caosd/rng.hpp"

namespace caosd {

namespace {

void validate_constraint(const AllocationConstraint& c, const AssetUniverse& universe) {
    if (c.threshold < 0.0 || c.threshold > 1.0)
        throw invalid_input("constraint threshold must lie in [0,1]");
    std::set<int> seen;
    for (int i : c.assets) {
        if (i < 0 || i >= universe.n_assets) throw invalid_input("constraint asset index out of range");
        if (!seen.insert(i).second) throw invalid_input("constraint asset indices must be unique");
    }
}

std::vector<int> sorted_unique(std::vector<int> v) {
    std::sort(v.begin(), v.end());
    v.erase(std::unique(v.begin(), v.end()), v.end());
    return v;
}

} // namespace

AssetUniverse AssetUniverse::make_default(int n) {
    AssetUniverse u;
    u.n_assets = n;
    u.labels.reserve(static_cast<size_t>(n));
    u.labels.push_back("CASH");
    for (int i = 1; i < n; ++i) u.labels.push_back("A" + std::to_string(i));
    u.validate();
    return u;
}

void AssetUniverse::validate() const {
    if (n_assets < 2) throw invalid_input("universe needs at least 2 assets");
    if (static_cast<int>(labels.size()) != n_assets)
        throw invalid_input("universe label count does not match n_assets");
    std::set<std::string> seen(labels.begin(), labels.end());
    if (static_cast<int>(seen.size()) != n_assets) throw invalid_input("universe labels must be unique");
}

AllocationConstraint normalize_constraint(const AllocationConstraint& c,
                                          const AssetUniverse& universe) {
    validate_constraint(c, universe);
    if (c.direction == ConstraintDirection::GreaterEqual) {
        AllocationConstraint out = c;
        out.assets = sorted_unique(out.assets);
        return out;
    }
    // LessEqual (V, c)  <=>  GreaterEqual (I \ V, 1 - c)
    if (static_cast<int>(c.assets.size()) == universe.n_assets)
        throw invalid_input("degenerate complement");
    std::set<int> in(c.assets.begin(), c.assets.end());
    AllocationConstraint out;
    out.direction = ConstraintDirection::GreaterEqual;
    out.threshold = 1.0 - c.threshold;
    for (int i = 0; i < universe.n_assets; ++i)
        if (!in.count(i)) out.assets.push_back(i);
    return out;
}

ConstraintConfig make_config(const AssetUniverse& universe, const AllocationConstraint& c1,
                             const AllocationConstraint& c2, std::int64_t seed) {
    universe.validate();
    ConstraintConfig cfg;
    cfg.universe = universe;
    cfg.c1 = normalize_constraint(c1, universe);
    cfg.c2 = normalize_constraint(c2, universe);
    cfg.seed = seed;
    return cfg;
}

HPolytope to_h_polytope(const ConstraintConfig& cfg) {
    const int n = cfg.n_assets();
    HPolytope p;
    p.a_matrix = Eigen::MatrixXd::Zero(n + 2, n);
    p.b_vector = Eigen::VectorXd::Zero(n + 2);
    p.a_matrix.topRows(n) = Eigen::MatrixXd::Identity(n, n); // x_i >= 0
    for (int i : cfg.c1.assets) p.a_matrix(n, i) = 1.0;
    p.b_vector[n] = cfg.c1.threshold;
    for (int i : cfg.c2.assets) p.a_matrix(n + 1, i) = 1.0;
    p.b_vector[n + 1] = cfg.c2.threshold;
    p.eq_row = Eigen::VectorXd::Ones(n);
    p.eq_value = 1.0;
    return p;
}

FeasibilityResult is_feasible(const ConstraintConfig& cfg) {
    const HPolytope poly = to_h_polytope(cfg);
    const int n = cfg.n_assets();
    const int m = static_cast<int>(poly.a_matrix.rows());

    if (n == 1) {
        // Single point x = (1); the slice tangent space is zero-dimensional.
        FeasibilityResult res;
        Eigen::VectorXd x = Eigen::VectorXd::Ones(1);
        res.feasible = ((poly.a_matrix * x - poly.b_vector).array() >= -1e-12).all();
        if (res.feasible) res.point = x;
        res.degenerate = res.feasible;
        return res;
    }

    // Chebyshev center within the affine slice sum(x)=1: the effective norm of
    // each row is the norm of its projection onto the tangent space {d: sum d = 0}.
    // Variables: x (n, nonneg) and the radius rho (1, nonneg); maximize rho.
    LpProblem lp;
    lp.c = Eigen::VectorXd::Zero(n + 1);
    lp.c[n] = -1.0;
    lp.a_eq = Eigen::MatrixXd::Zero(1, n + 1);
    lp.a_eq.row(0).head(n).setOnes();
    lp.b_eq = Eigen::VectorXd::Ones(1);
    lp.a_ge = Eigen::MatrixXd::Zero(m, n + 1);
    lp.b_ge = Eigen::VectorXd::Zero(m);
    for (int i = 0; i < m; ++i) {
        const Eigen::VectorXd row = poly.a_matrix.row(i);
        const Eigen::VectorXd proj = row.array() - row.mean();
        lp.a_ge.row(i).head(n) = row;
        lp.a_ge(i, n) = -proj.norm();
        lp.b_ge[i] = poly.b_vector[i];
    }

    FeasibilityResult res;
    const LpResult sol = solve_lp(lp);
    if (sol.status == LpStatus::Unbounded) throw numerical("is_feasible: radius LP unbounded");
    if (sol.status != LpStatus::Optimal) return res;
    res.feasible = true;
    res.point = sol.x.head(n);
    res.radius = std::max(0.0, sol.x[n]);
    res.degenerate = res.radius < 1e-9;
    return res;
}

ConstraintConfig generate_random_config(const AssetUniverse& universe, std::int64_t seed,
                                        int max_attempts, bool require_interior) {
    universe.validate();
    const int n = universe.n_assets;
    if (n < 3) throw invalid_input("generate_random_config needs at least 3 assets");
    if (max_attempts < 1) throw invalid_input("max_attempts must be positive");

    Rng rng(static_cast<std::uint64_t>(seed));
    for (int attempt = 0; attempt < max_attempts; ++attempt) {
        ConstraintConfig cfg;
        cfg.universe = universe;
        cfg.seed = seed;
        AllocationConstraint* cs[2] = {&cfg.c1, &cfg.c2};
        for (auto* c : cs) {
            const int k = 1 + static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(n - 1)));
            c->assets = rng.sample_without_replacement(n, k);
            c->threshold = rng.uniform01();
            c->direction = ConstraintDirection::GreaterEqual;
        }
        const FeasibilityResult feas = is_feasible(cfg);
        if (feas.feasible && (!require_interior || !feas.degenerate)) return cfg;
    }
    throw infeasible("no feasible configuration found");
}

std::string config_to_json(const ConstraintConfig& cfg) {
    nlohmann::json j;
    j["universe"] = cfg.universe.labels;
    j["v1"] = cfg.c1.assets;
    j["c1"] = cfg.c1.threshold;
    j["v2"] = cfg.c2.assets;
    j["c2"] = cfg.c2.threshold;
    j["seed"] = cfg.seed;
    return j.dump(2);
}

ConstraintConfig config_from_json(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw invalid_input(std::string("config JSON parse error: ") + e.what());
    }
    try {
        AssetUniverse u;
        u.labels = j.at("universe").get<std::vector<std::string>>();
        u.n_assets = static_cast<int>(u.labels.size());
        AllocationConstraint c1, c2;
        c1.assets = j.at("v1").get<std::vector<int>>();
        c1.threshold = j.at("c1").get<double>();
        c2.assets = j.at("v2").get<std::vector<int>>();
        c2.threshold = j.at("c2").get<double>();
        const std::int64_t seed = j.value("seed", std::int64_t{0});
        return make_config(u, c1, c2, seed);
    } catch (const nlohmann::json::exception& e) {
        throw invalid_input(std::string("config JSON field error: ") + e.what());
    }
}

ConstraintConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw invalid_input("cannot open config file: " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return config_from_json(ss.str());
}

void save_config(const ConstraintConfig& cfg, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw invalid_input("cannot write config file: " + path);
    out << config_to_json(cfg) << "\n";
}

} // namespace caosd
