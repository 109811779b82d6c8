#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include <Eigen/Dense>

namespace caosd {

// Deterministic RNG. The engine (mt19937_64) is bit-exact across platforms;
// all variate transforms are implemented here instead of relying on
// std::*_distribution, whose output is implementation-defined.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    // Uniform on [0, 1) with 53 random bits.
    double uniform01() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    // Uniform on [lo, hi).
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

    // Uniform integer in {0, ..., n-1}, rejection-sampled to avoid modulo bias.
    std::uint64_t uniform_int(std::uint64_t n);

    // Standard normal via the polar method.
    double normal();

    // Gamma(alpha, 1) via Marsaglia-Tsang, with the U^{1/alpha} boost for alpha < 1.
    double gamma(double alpha);

    // Dirichlet(alpha) as normalized independent Gamma draws.
    Eigen::VectorXd dirichlet(const Eigen::VectorXd& alpha);

    // k distinct indices from {0, ..., n-1} via partial Fisher-Yates, returned sorted.
    std::vector<int> sample_without_replacement(int n, int k);

    // Categorical draw from a probability vector (assumed to sum to ~1).
    int categorical(const Eigen::VectorXd& probs);

private:
    std::mt19937_64 engine_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

} // namespace caosd
