#pragma once

#include <Eigen/Dense>

namespace caosd {

// Digamma and trigamma for positive arguments, via upward recurrence into
// the asymptotic range.
double digamma(double x);
double trigamma(double x);

// Numerically stable log(1 + exp(x)) and its derivative.
double softplus(double x);
double sigmoid(double x);

// Dirichlet density on the open simplex; y must be strictly positive and
// sum to 1, alpha strictly positive.
double dirichlet_log_pdf(const Eigen::VectorXd& alpha, const Eigen::VectorXd& y);
Eigen::VectorXd dirichlet_log_pdf_grad_alpha(const Eigen::VectorXd& alpha,
                                             const Eigen::VectorXd& y);
double dirichlet_entropy(const Eigen::VectorXd& alpha);
Eigen::VectorXd dirichlet_entropy_grad_alpha(const Eigen::VectorXd& alpha);

// Mode (alpha_i - 1)/(sum - k) when every alpha_i > 1, otherwise the mean
// alpha / sum.
Eigen::VectorXd dirichlet_mode_or_mean(const Eigen::VectorXd& alpha);

}  // namespace caosd
