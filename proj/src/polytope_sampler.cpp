#include "caosd/polytope_sampler.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "caosd/errors.hpp"

namespace caosd {

Eigen::VectorXd tangent_direction(int n, Rng& rng) {
    if (n < 2) throw invalid_input("tangent space needs at least two assets");
    Eigen::VectorXd d(n);
    double norm = 0.0;
    do {
        for (int i = 0; i < n; ++i) d[i] = rng.normal();
        d.array() -= d.mean();
        norm = d.norm();
    } while (norm < 1e-12);
    return d / norm;
}

PolytopeSampler::PolytopeSampler(const ConstraintConfig& cfg, std::uint64_t seed, SamplerOptions options)
    : poly_(to_h_polytope(cfg)), options_(options), rng_(seed) {
    if (options_.burn_in < 0 || options_.thinning < 1) throw invalid_input("invalid sampler options");
    const FeasibilityResult fr = is_feasible(cfg);
    if (!fr.feasible) throw infeasible("infeasible configuration");
    if (fr.degenerate) throw invalid_input("degenerate polytope; sampler unsupported");
    point_ = fr.point;
}

void PolytopeSampler::step() {
    const int n = static_cast<int>(point_.size());
    const Eigen::VectorXd d = tangent_direction(n, rng_);

    // Chord {point + t*d}: each row a.x >= b gives slack s >= 0 and slope g,
    // bounding t at -s/g on whichever side g points.
    double lo = -std::numeric_limits<double>::infinity();
    double hi = std::numeric_limits<double>::infinity();
    for (int i = 0; i < poly_.a_matrix.rows(); ++i) {
        const double g = poly_.a_matrix.row(i).dot(d);
        const double s = poly_.a_matrix.row(i).dot(point_) - poly_.b_vector[i];
        if (g > 1e-14) {
            lo = std::max(lo, -s / g);
        } else if (g < -1e-14) {
            hi = std::min(hi, -s / g);
        }
    }
    if (!std::isfinite(lo) || !std::isfinite(hi) || hi < lo) return;

    point_ += rng_.uniform(lo, hi) * d;
    point_ /= point_.sum();
}

Eigen::VectorXd PolytopeSampler::next() {
    if (!warmed_) {
        for (int i = 0; i < options_.burn_in; ++i) step();
        warmed_ = true;
    }
    for (int i = 0; i < options_.thinning; ++i) step();
    return point_;
}

std::vector<Eigen::VectorXd> PolytopeSampler::sample(int count) {
    if (count < 0) throw invalid_input("negative sample count");
    std::vector<Eigen::VectorXd> out;
    out.reserve(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i) out.push_back(next());
    return out;
}

} // namespace caosd
