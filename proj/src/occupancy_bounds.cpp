#include "bobw/occupancy_bounds.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>

namespace bobw::uob {

double BoxSimplex::lower(std::size_t j) const { return std::max(0.0, center[j] - halfwidth[j]); }
double BoxSimplex::upper(std::size_t j) const { return std::min(1.0, center[j] + halfwidth[j]); }

namespace {

// Fills p (if non-null) and returns <p, f>.
double greedy(const BoxSimplex& box, std::span<const double> f, std::vector<int>& order,
              std::vector<double>* p) {
    const std::size_t n = f.size();
    if (box.center.size() != n || box.halfwidth.size() != n)
        throw std::logic_error("box and objective sizes differ");

    double lo_sum = 0.0, hi_sum = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
        lo_sum += box.lower(j);
        hi_sum += box.upper(j);
    }
    if (lo_sum > 1.0 + 1e-12 || hi_sum < 1.0 - 1e-12)
        throw std::logic_error("box-simplex is infeasible");

    order.resize(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return f[a] > f[b]; });

    if (p) p->assign(n, 0.0);
    double value = 0.0;
    double remaining = 1.0 - lo_sum;
    for (std::size_t j = 0; j < n; ++j) {
        const double lo = box.lower(j);
        value += lo * f[j];
        if (p) (*p)[j] = lo;
    }
    for (int j : order) {
        if (remaining <= 0.0) break;
        const double add = std::min(remaining, box.upper(j) - box.lower(j));
        value += add * f[j];
        if (p) (*p)[j] += add;
        remaining -= add;
    }
    return value;
}

}  // namespace

LinearMax max_linear_over_box_simplex(const BoxSimplex& box, std::span<const double> f) {
    LinearMax out;
    std::vector<int> order;
    out.value = greedy(box, f, order, &out.argmax);
    return out;
}

double max_linear_value(const BoxSimplex& box, std::span<const double> f, std::vector<int>& order) {
    return greedy(box, f, order, nullptr);
}

UpperOccupancy upper_occupancy(const estimation::ConfidenceSet& set,
                               const mdp::StochasticPolicy& policy) {
    const auto& ls = set.center.structure();
    const int A = ls.num_actions();
    if (static_cast<int>(policy.probs.size()) != ls.num_pairs())
        throw StructuralError("policy size does not match the confidence set");

    UpperOccupancy out{std::vector<double>(ls.num_states(), 0.0),
                       std::vector<double>(ls.num_pairs(), 0.0)};
    out.state[ls.initial_state()] = 1.0;
    out.state[ls.terminal_state()] = 1.0;

    std::vector<double> f(ls.num_states(), 0.0);
    std::vector<int> order;
    for (int target = 1; target < ls.terminal_state(); ++target) {
        const int kt = ls.layer_of(target);
        std::fill(f.begin() + ls.layer_begin(kt), f.begin() + ls.layer_end(kt), 0.0);
        f[target] = 1.0;
        for (int k = kt - 1; k >= 0; --k) {
            const int next_begin = ls.layer_begin(k + 1);
            const std::span<const double> next_f(f.data() + next_begin,
                                                 static_cast<std::size_t>(ls.layer_size(k + 1)));
            for (int x = ls.layer_begin(k); x < ls.layer_end(k); ++x) {
                double value = 0.0;
                for (int a = 0; a < A; ++a) {
                    const double pa = policy.probs[ls.pair(x, a)];
                    if (pa == 0.0) continue;
                    const BoxSimplex box{set.center.row(x, a), set.width_row(x, a)};
                    value += pa * max_linear_value(box, next_f, order);
                }
                f[x] = std::clamp(value, 0.0, 1.0);
            }
        }
        out.state[target] = f[ls.initial_state()];
    }
    for (int s = 0; s < ls.terminal_state(); ++s)
        for (int a = 0; a < A; ++a)
            out.pair[ls.pair(s, a)] = policy.probs[ls.pair(s, a)] * out.state[s];
    return out;
}

bool dominance_check(const UpperOccupancy& u, const mdp::OccupancyMeasure& q_true) {
    if (u.pair.size() != q_true.q.size()) throw StructuralError("table sizes differ");
    for (std::size_t i = 0; i < u.pair.size(); ++i)
        if (u.pair[i] < q_true.q[i] - 1e-9) return false;
    return true;
}

}  // namespace bobw::uob
