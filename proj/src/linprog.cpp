#include "caosd/linprog.hpp"

#include <cmath>
#include <limits>

#include "caosd/errors.hpp"

namespace caosd {
namespace {

constexpr double kTol = 1e-9;
constexpr double kPivotTol = 1e-10;

// Tableau simplex over rows 0..m-1 plus objective row m. Only the first
// n_cols columns may enter the basis; the RHS lives in column rhs_col.
// Bland-style tie-breaking on the leaving choice limits cycling.
// Returns false when the problem is unbounded in the current phase.
bool run_simplex(Eigen::MatrixXd& t, std::vector<int>& basis, int n_cols, int rhs_col) {
    const Eigen::Index m = t.rows() - 1;
    const long max_iters = 2000L + 200L * static_cast<long>(n_cols);
    for (long iter = 0; iter <= max_iters; ++iter) {
        int entering = -1;
        for (int j = 0; j < n_cols; ++j) {
            if (t(m, j) < -kTol) {
                entering = j;
                break;
            }
        }
        if (entering < 0) return true; // optimal

        Eigen::Index leaving = -1;
        double best_ratio = std::numeric_limits<double>::infinity();
        for (Eigen::Index i = 0; i < m; ++i) {
            if (t(i, entering) > kPivotTol) {
                const double ratio = t(i, rhs_col) / t(i, entering);
                if (ratio < best_ratio - kTol ||
                    (ratio < best_ratio + kTol && (leaving < 0 || basis[i] < basis[leaving]))) {
                    best_ratio = ratio;
                    leaving = i;
                }
            }
        }
        if (leaving < 0) return false; // unbounded ray

        const double piv = t(leaving, entering);
        t.row(leaving) /= piv;
        for (Eigen::Index i = 0; i <= m; ++i) {
            if (i == leaving) continue;
            const double f = t(i, entering);
            if (f != 0.0) t.row(i) -= f * t.row(leaving);
        }
        basis[leaving] = entering;
    }
    throw numerical("solve_lp: simplex iteration cap exceeded");
}

void rebuild_cost_row(Eigen::MatrixXd& t, const std::vector<int>& basis,
                      const Eigen::VectorXd& cost, int n_cols) {
    const int m = static_cast<int>(t.rows()) - 1;
    t.row(m).setZero();
    for (int j = 0; j < n_cols; ++j) t(m, j) = cost[j];
    for (int i = 0; i < m; ++i) {
        const double cb = cost[basis[i]];
        if (cb != 0.0) t.row(m) -= cb * t.row(i);
    }
}

} // namespace

LpResult solve_lp(const LpProblem& problem) {
    const int n = problem.n_vars();
    const int m_eq = static_cast<int>(problem.a_eq.rows());
    const int m_ge = static_cast<int>(problem.a_ge.rows());
    const int m = m_eq + m_ge;
    if (m_eq > 0 && problem.a_eq.cols() != n) throw invalid_input("solve_lp: a_eq shape mismatch");
    if (m_ge > 0 && problem.a_ge.cols() != n) throw invalid_input("solve_lp: a_ge shape mismatch");

    std::vector<bool> nonneg = problem.nonneg;
    if (nonneg.empty()) nonneg.assign(static_cast<size_t>(n), true);
    if (static_cast<int>(nonneg.size()) != n) throw invalid_input("solve_lp: nonneg size mismatch");

    // Standard-form columns: one per nonnegative variable, a +/- pair per free
    // variable, then one surplus column per >= row.
    int n_free = 0;
    for (bool b : nonneg)
        if (!b) ++n_free;
    const int n_std = n + n_free + m_ge;

    std::vector<int> pos_col(n), neg_col(n, -1);
    {
        int next = n;
        for (int j = 0; j < n; ++j) {
            pos_col[j] = j;
            if (!nonneg[j]) neg_col[j] = next++;
        }
    }

    Eigen::MatrixXd a = Eigen::MatrixXd::Zero(m, n_std);
    Eigen::VectorXd b(m);
    for (int i = 0; i < m; ++i) {
        const bool is_eq = i < m_eq;
        const auto row = is_eq ? problem.a_eq.row(i) : problem.a_ge.row(i - m_eq);
        for (int j = 0; j < n; ++j) {
            a(i, pos_col[j]) = row[j];
            if (neg_col[j] >= 0) a(i, neg_col[j]) = -row[j];
        }
        if (!is_eq) a(i, n + n_free + (i - m_eq)) = -1.0; // surplus
        b[i] = is_eq ? problem.b_eq[i] : problem.b_ge[i - m_eq];
        if (b[i] < 0.0) {
            a.row(i) = -a.row(i);
            b[i] = -b[i];
        }
    }

    Eigen::VectorXd cost = Eigen::VectorXd::Zero(n_std);
    for (int j = 0; j < n; ++j) {
        cost[pos_col[j]] += problem.c[j];
        if (neg_col[j] >= 0) cost[neg_col[j]] -= problem.c[j];
    }

    // Phase 1 tableau with one artificial per row.
    const int n_total = n_std + m;
    Eigen::MatrixXd t = Eigen::MatrixXd::Zero(m + 1, n_total + 1);
    t.block(0, 0, m, n_std) = a;
    std::vector<int> basis(static_cast<size_t>(m));
    for (int i = 0; i < m; ++i) {
        t(i, n_std + i) = 1.0;
        t(i, n_total) = b[i];
        basis[i] = n_std + i;
    }
    Eigen::VectorXd phase1_cost = Eigen::VectorXd::Zero(n_total);
    phase1_cost.tail(m).setOnes();
    rebuild_cost_row(t, basis, phase1_cost, n_total);

    if (!run_simplex(t, basis, n_total, n_total)) throw numerical("solve_lp: phase-1 unbounded");

    LpResult result;
    if (t(m, n_total) < -1e-7) {
        // Objective row carries -sum(artificials); a solidly negative value
        // means no feasible point exists.
        result.status = LpStatus::Infeasible;
        return result;
    }

    // Drive any artificial still in the basis out (or recognize the row as
    // redundant and neutralize it).
    for (int i = 0; i < m; ++i) {
        if (basis[i] < n_std) continue;
        int piv = -1;
        for (int j = 0; j < n_std; ++j) {
            if (std::abs(t(i, j)) > kPivotTol) {
                piv = j;
                break;
            }
        }
        if (piv < 0) {
            t.row(i).setZero(); // redundant constraint
            continue;
        }
        const double p = t(i, piv);
        t.row(i) /= p;
        for (int r = 0; r <= m; ++r) {
            if (r == i) continue;
            const double f = t(r, piv);
            if (f != 0.0) t.row(r) -= f * t.row(i);
        }
        basis[i] = piv;
    }

    // Phase 2 on the original cost, with artificial columns frozen out.
    Eigen::VectorXd phase2_cost = Eigen::VectorXd::Zero(n_total);
    phase2_cost.head(n_std) = cost;
    rebuild_cost_row(t, basis, phase2_cost, n_total);
    if (!run_simplex(t, basis, n_std, n_total)) {
        result.status = LpStatus::Unbounded;
        return result;
    }

    Eigen::VectorXd x_std = Eigen::VectorXd::Zero(n_std);
    for (int i = 0; i < m; ++i) {
        if (basis[i] < n_std) x_std[basis[i]] = t(i, n_total);
    }
    result.x = Eigen::VectorXd::Zero(n);
    for (int j = 0; j < n; ++j) {
        result.x[j] = x_std[pos_col[j]];
        if (neg_col[j] >= 0) result.x[j] -= x_std[neg_col[j]];
    }
    result.objective = problem.c.dot(result.x);
    result.status = LpStatus::Optimal;
    return result;
}

} // namespace caosd
