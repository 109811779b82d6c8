#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Dense>

#include "caosd/constraints.hpp"
#include "caosd/rng.hpp"

namespace caosd {

struct SamplerOptions {
    int burn_in = 1000;
    int thinning = 10;
};

// Hit-and-run chain over the constraint polytope, confined to the sum(x)=1
// slice. Asymptotically uniform; burn-in runs once before the first sample.
class PolytopeSampler {
public:
    PolytopeSampler(const ConstraintConfig& cfg, std::uint64_t seed, SamplerOptions options = {});

    Eigen::VectorXd next();
    std::vector<Eigen::VectorXd> sample(int count);

    const Eigen::VectorXd& current_point() const { return point_; }

private:
    void step();

    HPolytope poly_;
    SamplerOptions options_;
    Rng rng_;
    Eigen::VectorXd point_;
    bool warmed_ = false;
};

// Isotropic unit direction in the tangent space {d : sum(d) = 0}.
Eigen::VectorXd tangent_direction(int n, Rng& rng);

} // namespace caosd
