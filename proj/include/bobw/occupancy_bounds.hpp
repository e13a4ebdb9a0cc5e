#pragma once

#include <span>
#include <vector>

#include "bobw/mdp.hpp"
#include "bobw/transition_estimation.hpp"

namespace bobw::uob {

/// Per-entry box [max(0, c - w), min(1, c + w)] intersected with the simplex.
struct BoxSimplex {
    std::span<const double> center;
    std::span<const double> halfwidth;

    double lower(std::size_t j) const;
    double upper(std::size_t j) const;
};

struct LinearMax {
    double value = 0.0;
    std::vector<double> argmax;
};

/**
 * max <p, f> over p in the simplex with lo <= p <= hi.
 *
 * Greedy: start from p = lo, then pour the remaining mass 1 - sum(lo) into
 * successors in descending f (ties by index) up to hi. This is the exact LP
 * optimum. Throws std::logic_error on an infeasible box.
 */
LinearMax max_linear_over_box_simplex(const BoxSimplex& box, std::span<const double> f);

/// Allocation-free variant returning only the value. `order` is scratch space.
double max_linear_value(const BoxSimplex& box, std::span<const double> f, std::vector<int>& order);

struct UpperOccupancy {
    std::vector<double> state;  // u(s), with u(s_0) = u(s_L) = 1
    std::vector<double> pair;   // u(s,a) = pi(a|s) u(s)
};

/**
 * Largest visit probability of every state over all kernels in the confidence
 * set, one backward pass per target state; f-values are clipped to [0,1]
 * after each layer.
 */
UpperOccupancy upper_occupancy(const estimation::ConfidenceSet& set,
                               const mdp::StochasticPolicy& policy);

/// u(s,a) >= q(s,a) - 1e-9 for every pair.
bool dominance_check(const UpperOccupancy& u, const mdp::OccupancyMeasure& q_true);

}  // namespace bobw::uob
