#include "caosd/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "caosd/errors.hpp"

namespace caosd {

std::uint64_t Rng::uniform_int(std::uint64_t n) {
    if (n == 0) throw invalid_input("uniform_int: n must be positive");
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t x;
    do {
        x = engine_();
    } while (x >= limit);
    return x % n;
}

double Rng::normal() {
    if (have_spare_) {
        have_spare_ = false;
        return spare_;
    }
    double u, v, s;
    do {
        u = 2.0 * uniform01() - 1.0;
        v = 2.0 * uniform01() - 1.0;
        s = u * u + v * v;
    } while (s >= 1.0 || s == 0.0);
    const double m = std::sqrt(-2.0 * std::log(s) / s);
    spare_ = v * m;
    have_spare_ = true;
    return u * m;
}

double Rng::gamma(double alpha) {
    if (!(alpha > 0.0)) throw invalid_input("gamma: alpha must be positive");
    if (alpha < 1.0) {
        // Gamma(a) = Gamma(a+1) * U^{1/a}
        const double u = std::max(uniform01(), 1e-300);
        return gamma(alpha + 1.0) * std::pow(u, 1.0 / alpha);
    }
    const double d = alpha - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
        double x, v;
        do {
            x = normal();
            v = 1.0 + c * x;
        } while (v <= 0.0);
        v = v * v * v;
        const double u = uniform01();
        if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
        if (u > 0.0 && std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
    }
}

Eigen::VectorXd Rng::dirichlet(const Eigen::VectorXd& alpha) {
    Eigen::VectorXd y(alpha.size());
    double total = 0.0;
    for (Eigen::Index i = 0; i < alpha.size(); ++i) {
        y[i] = gamma(alpha[i]);
        total += y[i];
    }
    if (total <= 0.0) {
        // All gammas underflowed; fall back to the argmax vertex.
        Eigen::Index imax;
        alpha.maxCoeff(&imax);
        y.setZero();
        y[imax] = 1.0;
        return y;
    }
    return y / total;
}

std::vector<int> Rng::sample_without_replacement(int n, int k) {
    if (k < 0 || k > n) throw invalid_input("sample_without_replacement: k out of range");
    std::vector<int> pool(n);
    std::iota(pool.begin(), pool.end(), 0);
    for (int i = 0; i < k; ++i) {
        const int j = i + static_cast<int>(uniform_int(static_cast<std::uint64_t>(n - i)));
        std::swap(pool[i], pool[j]);
    }
    std::vector<int> out(pool.begin(), pool.begin() + k);
    std::sort(out.begin(), out.end());
    return out;
}

int Rng::categorical(const Eigen::VectorXd& probs) {
    const double u = uniform01();
    double acc = 0.0;
    for (Eigen::Index i = 0; i < probs.size(); ++i) {
        acc += probs[i];
        if (u < acc) return static_cast<int>(i);
    }
    return static_cast<int>(probs.size() - 1);
}

} // namespace caosd
