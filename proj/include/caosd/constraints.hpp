#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace caosd {

class Rng;

struct AssetUniverse {
    int n_assets = 0;
    std::vector<std::string> labels; // index 0 is "CASH" when the cash convention is on

    // "CASH", "A1", "A2", ...: the generic universe used by gen-config.
    static AssetUniverse make_default(int n);

    void validate() const;
};

enum class ConstraintDirection { GreaterEqual, LessEqual };

// "At least / at most `threshold` of the portfolio in the assets of `assets`".
struct AllocationConstraint {
    std::vector<int> assets; // sorted, unique
    double threshold = 0.0;
    ConstraintDirection direction = ConstraintDirection::GreaterEqual;
};

// A two-constraint allocation task. Both constraints are stored in
// GreaterEqual form; construct through make_config so that holds.
struct ConstraintConfig {
    AssetUniverse universe;
    AllocationConstraint c1;
    AllocationConstraint c2;
    std::int64_t seed = 0;

    int n_assets() const { return universe.n_assets; }
};

// Half-space representation: a_matrix * x >= b_vector, plus the simplex
// equality sum(x) = 1 kept as a separate row.
struct HPolytope {
    Eigen::MatrixXd a_matrix;
    Eigen::VectorXd b_vector;
    Eigen::VectorXd eq_row;
    double eq_value = 1.0;
};

struct FeasibilityResult {
    bool feasible = false;
    Eigen::VectorXd point;  // Chebyshev center when feasible
    double radius = 0.0;    // inscribed-ball radius within the simplex slice
    bool degenerate = false; // feasible but with empty interior (radius ~ 0)
};

// Rewrites a LessEqual constraint (V, c) as GreaterEqual (I\V, 1-c).
// GreaterEqual inputs pass through unchanged.
AllocationConstraint normalize_constraint(const AllocationConstraint& c,
                                          const AssetUniverse& universe);

// Validates and normalizes both constraints into a config.
ConstraintConfig make_config(const AssetUniverse& universe,
                             const AllocationConstraint& c1,
                             const AllocationConstraint& c2,
                             std::int64_t seed = 0);

HPolytope to_h_polytope(const ConstraintConfig& cfg);

// Nonemptiness via the Chebyshev-center LP restricted to the sum(x)=1 slice.
FeasibilityResult is_feasible(const ConstraintConfig& cfg);

// Randomly generated task per the two-constraint recipe: |V_j| uniform on
// {1..N-1}, members without replacement, c_j uniform on [0,1]; the whole
// config is resampled until feasible. Deterministic given the seed.
ConstraintConfig generate_random_config(const AssetUniverse& universe, std::int64_t seed,
                                        int max_attempts = 1000, bool require_interior = false);

std::string config_to_json(const ConstraintConfig& cfg);
ConstraintConfig config_from_json(const std::string& text);
ConstraintConfig load_config(const std::string& path);
void save_config(const ConstraintConfig& cfg, const std::string& path);

} // namespace caosd
