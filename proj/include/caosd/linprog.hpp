#pragma once

#include <vector>

#include <Eigen/Dense>

namespace caosd {

enum class LpStatus { Optimal, Infeasible, Unbounded };

// General-form linear program:
//   minimize    c^T x
//   subject to  a_eq x  = b_eq
//               a_ge x >= b_ge
//               x_i >= 0 for every i with nonneg[i] (default: all)
//
// Intended for the small, dense problems this library produces (tens of
// variables); solved exactly by a two-phase tableau simplex.
struct LpProblem {
    Eigen::VectorXd c;
    Eigen::MatrixXd a_eq;
    Eigen::VectorXd b_eq;
    Eigen::MatrixXd a_ge;
    Eigen::VectorXd b_ge;
    std::vector<bool> nonneg; // empty means all nonnegative

    int n_vars() const { return static_cast<int>(c.size()); }
};

struct LpResult {
    LpStatus status = LpStatus::Infeasible;
    Eigen::VectorXd x;
    double objective = 0.0;
};

LpResult solve_lp(const LpProblem& problem);

} // namespace caosd
