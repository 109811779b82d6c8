#include "caosd/mathutil.hpp"

#include <cmath>

#include "caosd/errors.hpp"

namespace caosd {

double digamma(double x) {
    if (!(x > 0.0)) throw invalid_input("digamma: argument must be positive");
    double result = 0.0;
    while (x < 10.0) {
        result -= 1.0 / x;
        x += 1.0;
    }
    const double inv = 1.0 / x;
    const double inv2 = inv * inv;
    result += std::log(x) - 0.5 * inv -
              inv2 * (1.0 / 12.0 -
                      inv2 * (1.0 / 120.0 - inv2 * (1.0 / 252.0 - inv2 * (1.0 / 240.0))));
    return result;
}

double trigamma(double x) {
    if (!(x > 0.0)) throw invalid_input("trigamma: argument must be positive");
    double result = 0.0;
    while (x < 10.0) {
        result += 1.0 / (x * x);
        x += 1.0;
    }
    const double inv = 1.0 / x;
    const double inv2 = inv * inv;
    result += inv + 0.5 * inv2 +
              inv * inv2 *
                  (1.0 / 6.0 - inv2 * (1.0 / 30.0 - inv2 * (1.0 / 42.0 - inv2 / 30.0)));
    return result;
}

double softplus(double x) {
    return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

double sigmoid(double x) {
    return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

namespace {

void check_dirichlet_args(const Eigen::VectorXd& alpha, const Eigen::VectorXd& y) {
    if (alpha.size() != y.size() || alpha.size() < 1) {
        throw invalid_input("dirichlet: size mismatch");
    }
    if (!(alpha.minCoeff() > 0.0) || !(y.minCoeff() > 0.0)) {
        throw invalid_input("dirichlet: arguments must be strictly positive");
    }
}

}  // namespace

double dirichlet_log_pdf(const Eigen::VectorXd& alpha, const Eigen::VectorXd& y) {
    check_dirichlet_args(alpha, y);
    const double alpha0 = alpha.sum();
    double value = std::lgamma(alpha0);
    for (Eigen::Index i = 0; i < alpha.size(); ++i) {
        value += (alpha(i) - 1.0) * std::log(y(i)) - std::lgamma(alpha(i));
    }
    return value;
}

Eigen::VectorXd dirichlet_log_pdf_grad_alpha(const Eigen::VectorXd& alpha,
                                             const Eigen::VectorXd& y) {
    check_dirichlet_args(alpha, y);
    const double psi0 = digamma(alpha.sum());
    Eigen::VectorXd grad(alpha.size());
    for (Eigen::Index i = 0; i < alpha.size(); ++i) {
        grad(i) = std::log(y(i)) - digamma(alpha(i)) + psi0;
    }
    return grad;
}

double dirichlet_entropy(const Eigen::VectorXd& alpha) {
    if (alpha.size() < 1 || !(alpha.minCoeff() > 0.0)) {
        throw invalid_input("dirichlet: alpha must be strictly positive");
    }
    const double alpha0 = alpha.sum();
    const double k = static_cast<double>(alpha.size());
    double log_beta = -std::lgamma(alpha0);
    double weighted_psi = 0.0;
    for (Eigen::Index i = 0; i < alpha.size(); ++i) {
        log_beta += std::lgamma(alpha(i));
        weighted_psi += (alpha(i) - 1.0) * digamma(alpha(i));
    }
    return log_beta + (alpha0 - k) * digamma(alpha0) - weighted_psi;
}

Eigen::VectorXd dirichlet_entropy_grad_alpha(const Eigen::VectorXd& alpha) {
    if (alpha.size() < 1 || !(alpha.minCoeff() > 0.0)) {
        throw invalid_input("dirichlet: alpha must be strictly positive");
    }
    const double alpha0 = alpha.sum();
    const double k = static_cast<double>(alpha.size());
    const double common = (alpha0 - k) * trigamma(alpha0);
    Eigen::VectorXd grad(alpha.size());
    for (Eigen::Index i = 0; i < alpha.size(); ++i) {
        grad(i) = common - (alpha(i) - 1.0) * trigamma(alpha(i));
    }
    return grad;
}

Eigen::VectorXd dirichlet_mode_or_mean(const Eigen::VectorXd& alpha) {
    if (alpha.size() < 1 || !(alpha.minCoeff() > 0.0)) {
        throw invalid_input("dirichlet: alpha must be strictly positive");
    }
    const double alpha0 = alpha.sum();
    if (alpha.minCoeff() > 1.0) {
        const double k = static_cast<double>(alpha.size());
        return (alpha.array() - 1.0).matrix() / (alpha0 - k);
    }
    return alpha / alpha0;
}

}  // namespace caosd
