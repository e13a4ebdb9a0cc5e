#pragma once

#include <memory>
#include <random>
#include <vector>

#include "bobw/mdp.hpp"
#include "oracles.hpp"

namespace testing {

inline bobw::mdp::StructurePtr layout(std::vector<int> layers, int actions) {
    return std::make_shared<const bobw::mdp::LayerStructure>(std::move(layers), actions);
}

inline bobw::mdp::StochasticPolicy random_policy(const bobw::mdp::LayerStructure& ls, std::mt19937_64& gen) {
    return {bobw::oracle::random_policy(ls, gen)};
}

inline std::vector<double> random_table(int n, std::mt19937_64& gen, double lo = 0.0, double hi = 1.0) {
    std::uniform_real_distribution<double> u(lo, hi);
    std::vector<double> out(n);
    for (double& x : out) x = u(gen);
    return out;
}

inline double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

}  // namespace testing
