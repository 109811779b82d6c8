#pragma once

#include <array>
#include <vector>

#include <Eigen/Dense>

#include "caosd/constraints.hpp"

namespace caosd {

// Standard simplex over an index subset, embedded in R^dimension with zeros
// elsewhere. An empty index set is the degenerate {0} simplex.
struct PaddedSimplexSpec {
    std::vector<int> index_set; // sorted ascending
    int dimension = 0;

    int size() const { return static_cast<int>(index_set.size()); }
    bool empty() const { return index_set.empty(); }
};

struct SubAction {
    Eigen::VectorXd values; // zero off the index set; sums to 1 unless the set is empty
    PaddedSimplexSpec spec;
};

// Minkowski weights of the decomposition. z1, z2 are config constants; z3
// depends on the realized second sub-action; z4 closes the sum to 1.
struct WeightVector {
    double z1 = 0.0, z2 = 0.0, z3 = 0.0, z4 = 0.0;

    double operator[](int j) const;
    double sum() const { return z1 + z2 + z3 + z4; }
    Eigen::Vector4d as_vector() const { return {z1, z2, z3, z4}; }
};

// The four sub-simplices of a feasible config:
// K1 = V1 n V2, K2 = V1, K3 = V2, K4 = all assets.
struct Decomposition {
    ConstraintConfig config;
    std::array<PaddedSimplexSpec, 4> specs;
};

struct Preimage {
    std::array<SubAction, 4> subs;
    WeightVector weights;
};

Decomposition build_decomposition(const ConstraintConfig& cfg);

// Validates values against the spec (support, nonnegativity, sum), clamps
// entries below 1e-15 to zero and renormalizes. Violations beyond numerical
// fuzz raise "invalid sub-action".
SubAction make_sub_action(const PaddedSimplexSpec& spec, const Eigen::VectorXd& values);

// 1/|K| on the index set; the zero vector when the set is empty.
SubAction uniform_sub_action(const PaddedSimplexSpec& spec);

WeightVector compute_weights(const Decomposition& decomp, const Eigen::VectorXd& sub2_values);
WeightVector compute_weights(const ConstraintConfig& cfg, const SubAction& sub1, const SubAction& sub2);

// a = z1*s1 + z2*s2 + z3*s3 + z4*s4, weights evaluated in schedule order.
Eigen::VectorXd compose(const Decomposition& decomp, const std::array<Eigen::VectorXd, 4>& sub_values,
                        WeightVector* weights_out = nullptr);
Eigen::VectorXd compose(const ConstraintConfig& cfg, const std::array<SubAction, 4>& subs);

// Constructive preimage: sub-actions and weights whose composition returns
// the given allocation. Non-unique; any valid preimage may be returned.
Preimage decompose(const ConstraintConfig& cfg, const Eigen::VectorXd& allocation);
Preimage decompose(const Decomposition& decomp, const Eigen::VectorXd& allocation);

// True iff every half-space row and the sum(x)=1 equality hold within tol.
bool membership(const ConstraintConfig& cfg, const Eigen::VectorXd& allocation, double tol = 1e-9);

} // namespace caosd
