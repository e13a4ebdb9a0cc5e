#include "bobw/ftrl.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <Eigen/Dense>
#include <fmt/format.h>
#include <fmt/ostream.h>

namespace bobw::ftrl {

namespace {

double ln_pairs(const mdp::LayerStructure& ls) {
    return std::log(static_cast<double>(ls.num_states()) * ls.num_actions());
}

}  // namespace

RegularizerSpec RegularizerSpec::shannon_unknown(const mdp::LayerStructure& ls) {
    RegularizerSpec spec;
    spec.kind = RegularizerKind::kShannon;
    spec.schedule = EtaSchedule::kShannonAdaptive;
    spec.horizon = ls.horizon();
    spec.log_pairs = ln_pairs(ls);
    spec.shannon_constant = 64.0 * std::pow(ls.horizon(), 5);
    return spec;
}

RegularizerSpec RegularizerSpec::shannon_known(const mdp::LayerStructure& ls) {
    RegularizerSpec spec = shannon_unknown(ls);
    spec.shannon_constant = 64.0 * std::pow(ls.horizon(), 3);
    return spec;
}

RegularizerSpec RegularizerSpec::tsallis_unknown(const mdp::LayerStructure& ls) {
    RegularizerSpec spec;
    spec.kind = RegularizerKind::kTsallisLogBarrier;
    spec.schedule = EtaSchedule::kEpochInverseSqrt;
    spec.horizon = ls.horizon();
    spec.log_pairs = ln_pairs(ls);
    spec.beta = 128.0 * std::pow(ls.horizon(), 4);
    return spec;
}

RegularizerSpec RegularizerSpec::tsallis_known(const mdp::LayerStructure& ls, double gamma) {
    RegularizerSpec spec;
    spec.kind = RegularizerKind::kTsallisLogBarrier;
    spec.schedule = EtaSchedule::kGlobalInverseSqrt;
    spec.horizon = ls.horizon();
    spec.log_pairs = ln_pairs(ls);
    spec.beta = 64.0 * ls.horizon();
    spec.gamma = gamma;
    return spec;
}

void RegularizerSpec::validate() const {
    if (horizon < 1) throw ConfigError("regulariser horizon must be positive");
    if (beta < 0.0) throw ConfigError("log-barrier weight must be non-negative");
    if (schedule == EtaSchedule::kShannonAdaptive && !(shannon_constant > 0.0 && log_pairs > 0.0))
        throw ConfigError("adaptive Shannon schedule needs positive constants");
    if (schedule == EtaSchedule::kGlobalInverseSqrt && !(gamma > 0.0))
        throw ConfigError("gamma must be positive");
}

double shannon_eta(const RegularizerSpec& spec, double accumulated_m) {
    return std::sqrt(spec.horizon * spec.log_pairs /
                     (spec.shannon_constant * spec.log_pairs + accumulated_m));
}

double learning_rate(const RegularizerSpec& spec, long long t, long long epoch_start,
                     double accumulated_m) {
    switch (spec.schedule) {
    case EtaSchedule::kShannonAdaptive:
        return shannon_eta(spec, accumulated_m);
    case EtaSchedule::kEpochInverseSqrt:
        return 1.0 / std::sqrt(static_cast<double>(t - epoch_start + 1));
    case EtaSchedule::kGlobalInverseSqrt:
        return spec.gamma / std::sqrt(static_cast<double>(t));
    }
    return 0.0;
}

double shannon_increment(const mdp::TransitionKernel& kernel, std::span<const double> q,
                         std::span<const double> loss, const mdp::StochasticPolicy& policy) {
    const auto& ls = kernel.structure();
    const auto vf = mdp::value_functions(kernel, loss, policy);
    double squared_loss = 0.0, squared_advantage = 0.0;
    for (int s = 0; s < ls.terminal_state(); ++s)
        for (int a = 0; a < ls.num_actions(); ++a) {
            const int p = ls.pair(s, a);
            const double adv = vf.q_values[p] - vf.v_values[s];
            squared_loss += q[p] * loss[p] * loss[p];
            squared_advantage += q[p] * adv * adv;
        }
    return std::min(squared_loss, squared_advantage);
}

std::vector<double> loss_shift(const mdp::TransitionKernel& kernel, const mdp::StochasticPolicy& policy,
                               std::span<const double> loss) {
    const auto& ls = kernel.structure();
    const auto vf = mdp::value_functions(kernel, loss, policy);
    std::vector<double> g(ls.num_pairs());
    for (int s = 0; s < ls.terminal_state(); ++s)
        for (int a = 0; a < ls.num_actions(); ++a) {
            const int p = ls.pair(s, a);
            g[p] = vf.q_values[p] - vf.v_values[s] - loss[p];
        }
    return g;
}

double Regularizer::value(std::span<const double> q) const {
    double total = 0.0;
    if (kind == RegularizerKind::kShannon) {
        for (double x : q)
            if (x > 0.0) total += x * std::log(x);
        return total / eta;
    }
    double sqrt_sum = 0.0, log_sum = 0.0;
    for (double x : q) {
        if (x == 0.0) continue;  // pair outside the reachable support
        if (!(x > 0.0)) return std::numeric_limits<double>::infinity();
        sqrt_sum += std::sqrt(x);
        log_sum += std::log(x);
    }
    return -sqrt_sum / eta - beta * log_sum;
}

double objective(std::span<const double> cumulative_loss, const Regularizer& reg,
                 std::span<const double> q) {
    return mdp::inner(q, cumulative_loss) + reg.value(q);
}

namespace {

constexpr double kFloor = 4.248354255291589e-18;  // e^-40

// Scalar minimiser of q B + phi(q) and its derivatives.
struct ScalarSolution {
    double q = 0.0;
    double psi = 0.0;     // min value
    double weight = 0.0;  // -dq/dB
};

inline ScalarSolution scalar_min(RegularizerKind kind, double eta, double beta, double b) {
    ScalarSolution out;
    if (kind == RegularizerKind::kShannon) {
        out.q = std::exp(-eta * b - 1.0);
        out.psi = -out.q / eta;
        out.weight = eta * out.q;
        return out;
    }
    if (!(b > 0.0)) {
        out.q = std::numeric_limits<double>::quiet_NaN();
        out.psi = -std::numeric_limits<double>::infinity();
        return out;
    }
    // x = 1/sqrt(q) solves beta x^2 + x/(2 eta) - b = 0.
    const double h = 0.5 / eta;
    const double x = 2.0 * b / (h + std::sqrt(h * h + 4.0 * beta * b));
    out.q = 1.0 / (x * x);
    out.psi = out.q * b - 1.0 / (x * eta) + 2.0 * beta * std::log(x);
    out.weight = 1.0 / (x * x * x / (4.0 * eta) + beta * x * x * x * x);
    return out;
}

// Inverse of scalar_min(...).q: the B at which the minimiser equals q.
inline double b_for_mass(RegularizerKind kind, double eta, double beta, double q) {
    if (kind == RegularizerKind::kShannon) return (-std::log(q) - 1.0) / eta;
    const double x = 1.0 / std::sqrt(q);
    return x / (2.0 * eta) + beta * x * x;
}

// States with positive visit probability under some policy. Pairs at other
// states are fixed to zero: the flow constraints force it, and the
// regulariser is taken over the reachable support only.
std::vector<char> reachable_states(const mdp::TransitionKernel& kernel) {
    const auto& ls = kernel.structure();
    std::vector<char> reach(ls.num_states(), 0);
    reach[ls.initial_state()] = 1;
    for (int s = 0; s < ls.terminal_state(); ++s) {
        if (!reach[s]) continue;
        const int next_begin = ls.layer_begin(ls.layer_of(s) + 1);
        for (int a = 0; a < ls.num_actions(); ++a) {
            const auto row = kernel.row(s, a);
            for (std::size_t j = 0; j < row.size(); ++j)
                if (row[j] > 0.0) reach[next_begin + static_cast<int>(j)] = 1;
        }
    }
    return reach;
}

class DualProblem {
public:
    DualProblem(const mdp::TransitionKernel& kernel, std::span<const double> cost, RegularizerKind kind,
                double eta, double beta)
        : kernel_(kernel), ls_(kernel.structure()), cost_(cost), kind_(kind), eta_(eta), beta_(beta),
          n_(ls_.terminal_state()), active_(reachable_states(kernel)), b_(ls_.num_pairs()),
          sol_(ls_.num_pairs()) {}

    int dim() const { return n_; }

    // Fills b_ and sol_; returns the dual value (-inf outside the domain).
    double evaluate(const Eigen::VectorXd& v) {
        double total = -v[ls_.initial_state()];
        for (int s = 0; s < n_; ++s) {
            if (!active_[s]) {
                for (int a = 0; a < ls_.num_actions(); ++a) sol_[ls_.pair(s, a)] = ScalarSolution{};
                continue;
            }
            const int next_begin = ls_.layer_begin(ls_.layer_of(s) + 1);
            const bool next_terminal = ls_.layer_of(s) + 1 == ls_.horizon();
            for (int a = 0; a < ls_.num_actions(); ++a) {
                const int p = ls_.pair(s, a);
                double cont = 0.0;
                if (!next_terminal) {
                    const auto row = kernel_.row(s, a);
                    for (std::size_t j = 0; j < row.size(); ++j)
                        cont += row[j] * v[next_begin + static_cast<int>(j)];
                }
                b_[p] = cost_[p] + v[s] - cont;
                sol_[p] = scalar_min(kind_, eta_, beta_, b_[p]);
                total += sol_[p].psi;
            }
        }
        return std::isfinite(total) ? total : -std::numeric_limits<double>::infinity();
    }

    // Gradient (= flow residual) at the last evaluated point.
    void gradient(Eigen::VectorXd& g) const {
        g.setZero(n_);
        g[ls_.initial_state()] = -1.0;
        for (int s = 0; s < n_; ++s) {
            const int next_begin = ls_.layer_begin(ls_.layer_of(s) + 1);
            const bool next_terminal = ls_.layer_of(s) + 1 == ls_.horizon();
            for (int a = 0; a < ls_.num_actions(); ++a) {
                const double q = sol_[ls_.pair(s, a)].q;
                g[s] += q;
                if (next_terminal) continue;
                const auto row = kernel_.row(s, a);
                for (std::size_t j = 0; j < row.size(); ++j) g[next_begin + static_cast<int>(j)] -= q * row[j];
            }
        }
    }

    // Negated Hessian sum_p w_p e_p e_p^T at the last evaluated point.
    void neg_hessian(Eigen::MatrixXd& h) const {
        h.setZero(n_, n_);
        for (int s = 0; s < n_; ++s) {
            if (!active_[s]) {
                h(s, s) = 1.0;  // zero gradient there, so the step is zero
                continue;
            }
            const int next_begin = ls_.layer_begin(ls_.layer_of(s) + 1);
            const bool next_terminal = ls_.layer_of(s) + 1 == ls_.horizon();
            for (int a = 0; a < ls_.num_actions(); ++a) {
                const double w = sol_[ls_.pair(s, a)].weight;
                h(s, s) += w;
                if (next_terminal) continue;
                const auto row = kernel_.row(s, a);
                for (std::size_t i = 0; i < row.size(); ++i) {
                    const int xi = next_begin + static_cast<int>(i);
                    const double wi = w * row[i];
                    h(s, xi) -= wi;
                    h(xi, s) -= wi;
                    for (std::size_t j = 0; j < row.size(); ++j)
                        h(xi, next_begin + static_cast<int>(j)) += wi * row[j];
                }
            }
        }
    }

    // Multipliers with every B >= kappa, where kappa puts mass 1/|A| on a pair.
    Eigen::VectorXd cold_start() const {
        const double kappa = b_for_mass(kind_, eta_, beta_, 1.0 / ls_.num_actions());
        Eigen::VectorXd v = Eigen::VectorXd::Zero(n_);
        for (int k = ls_.horizon() - 1; k >= 0; --k) {
            const int next_begin = ls_.layer_begin(k + 1);
            for (int s = ls_.layer_begin(k); s < ls_.layer_end(k); ++s) {
                double best = -std::numeric_limits<double>::infinity();
                for (int a = 0; a < ls_.num_actions(); ++a) {
                    double cont = 0.0;
                    if (k + 1 < ls_.horizon()) {
                        const auto row = kernel_.row(s, a);
                        for (std::size_t j = 0; j < row.size(); ++j)
                            cont += row[j] * v[next_begin + static_cast<int>(j)];
                    }
                    best = std::max(best, cont - cost_[ls_.pair(s, a)]);
                }
                v[s] = best + kappa;
            }
        }
        return v;
    }

    std::vector<double> masses() const {
        std::vector<double> q(sol_.size());
        for (std::size_t i = 0; i < q.size(); ++i) q[i] = sol_[i].q;
        return q;
    }

private:
    const mdp::TransitionKernel& kernel_;
    const mdp::LayerStructure& ls_;
    std::span<const double> cost_;
    RegularizerKind kind_;
    double eta_;
    double beta_;
    int n_;
    std::vector<char> active_;
    std::vector<double> b_;
    std::vector<ScalarSolution> sol_;
};

}  // namespace

SolveResult solve_regularized(const mdp::TransitionKernel& kernel,
                              std::span<const double> cumulative_loss, const Regularizer& reg,
                              const std::vector<double>* warm_dual, const SolverOptions& options) {
    const auto& ls = kernel.structure();
    if (static_cast<int>(cumulative_loss.size()) != ls.num_pairs())
        throw StructuralError("cumulative loss size does not match the layout");
    if (!(reg.eta > 0.0)) throw ConfigError("learning rate must be positive");
    if (reg.kind == RegularizerKind::kTsallisLogBarrier && reg.beta < 0.0)
        throw ConfigError("log-barrier weight must be non-negative");

    // Shannon: solve with losses scaled to unit max norm and eta scaled up by
    // the same factor; the argmin is unchanged.
    double scale = 1.0;
    std::vector<double> scaled;
    std::span<const double> cost = cumulative_loss;
    if (reg.kind == RegularizerKind::kShannon) {
        for (double c : cumulative_loss) scale = std::max(scale, std::abs(c));
        if (scale > 1.0) {
            scaled.resize(cumulative_loss.size());
            for (std::size_t i = 0; i < scaled.size(); ++i) scaled[i] = cumulative_loss[i] / scale;
            cost = scaled;
        }
    }
    DualProblem dual(kernel, cost, reg.kind, reg.eta * scale, reg.beta);
    const int n = dual.dim();

    Eigen::VectorXd v;
    double value = -std::numeric_limits<double>::infinity();
    if (warm_dual && static_cast<int>(warm_dual->size()) == n) {
        v = Eigen::Map<const Eigen::VectorXd>(warm_dual->data(), n) / scale;
        value = dual.evaluate(v);
    }
    if (!std::isfinite(value)) {
        v = dual.cold_start();
        value = dual.evaluate(v);
    }
    if (!std::isfinite(value)) throw SolverError("dual cold start is outside the domain", 0, INFINITY);

    Eigen::VectorXd grad(n), step(n), trial(n);
    Eigen::MatrixXd hess(n, n);
    dual.gradient(grad);
    double residual = grad.lpNorm<Eigen::Infinity>();
    int iter = 0;
    for (; iter < options.max_iterations && residual > options.residual_tol; ++iter) {
        dual.neg_hessian(hess);
        const double ridge = 1e-15 * std::max(hess.diagonal().maxCoeff(), 1e-300);
        hess.diagonal().array() += ridge;
        Eigen::LDLT<Eigen::MatrixXd> ldlt(hess);
        step = ldlt.solve(grad);
        if (!step.allFinite()) step = grad;
        const double slope = grad.dot(step);

        double alpha = 1.0;
        bool accepted = false;
        for (int ls_iter = 0; ls_iter < 60; ++ls_iter, alpha *= 0.5) {
            trial = v + alpha * step;
            const double trial_value = dual.evaluate(trial);
            if (!std::isfinite(trial_value)) continue;
            if (trial_value >= value + 1e-4 * alpha * slope) {
                accepted = true;
                v = trial;
                value = trial_value;
                break;
            }
            // Near the optimum the dual value stalls at rounding level; accept
            // steps that still shrink the residual.
            Eigen::VectorXd trial_grad(n);
            dual.gradient(trial_grad);
            if (trial_value >= value - 1e-13 * std::max(1.0, std::abs(value)) &&
                trial_grad.lpNorm<Eigen::Infinity>() < residual) {
                accepted = true;
                v = trial;
                value = trial_value;
                break;
            }
        }
        if (!accepted) {
            dual.evaluate(v);
            break;
        }
        dual.gradient(grad);
        residual = grad.lpNorm<Eigen::Infinity>();
    }

    SolveResult result;
    result.iterations = iter;
    result.q.q = dual.masses();
    result.flow_residual = mdp::flow_residual(kernel, result.q.q);
    if (!(result.flow_residual <= options.accept_residual))
        throw SolverError(fmt::format("FTRL dual solver stopped after {} iterations with flow residual {:.3e}",
                                      iter, result.flow_residual),
                          iter, result.flow_residual);
    result.dual.assign(v.data(), v.data() + n);
    for (double& x : result.dual) x *= scale;
    result.objective = objective(cumulative_loss, reg, result.q.q);
    result.stationarity = projected_gradient_norm(kernel, cumulative_loss, reg, result.q.q);
    result.floor_breach = std::any_of(result.q.q.begin(), result.q.q.end(),
                                      [](double x) { return x > 0.0 && x < kFloor; });
    return result;
}

double projected_gradient_norm(const mdp::TransitionKernel& kernel,
                               std::span<const double> cumulative_loss, const Regularizer& reg,
                               std::span<const double> q) {
    const auto& ls = kernel.structure();
    const int n = ls.terminal_state();
    const int np = ls.num_pairs();

    // Only pairs in the support of q and the flow rows of reachable states.
    std::vector<int> col(np, -1), row(n, -1);
    int nc = 0, nr = 0;
    for (int p = 0; p < np; ++p)
        if (q[p] > 0.0) col[p] = nc++;
    for (int s = 0; s < n; ++s)
        for (int act = 0; act < ls.num_actions(); ++act)
            if (col[ls.pair(s, act)] >= 0 && row[s] < 0) row[s] = nr++;

    Eigen::VectorXd grad(nc);
    for (int p = 0; p < np; ++p) {
        if (col[p] < 0) continue;
        const double x = q[p];
        const double dphi = reg.kind == RegularizerKind::kShannon
                                ? (std::log(x) + 1.0) / reg.eta
                                : -0.5 / (reg.eta * std::sqrt(x)) - reg.beta / x;
        grad[col[p]] = cumulative_loss[p] + dphi;
    }
    Eigen::MatrixXd a = Eigen::MatrixXd::Zero(nr, nc);
    for (int s = 0; s < n; ++s) {
        const int next_begin = ls.layer_begin(ls.layer_of(s) + 1);
        const bool next_terminal = ls.layer_of(s) + 1 == ls.horizon();
        for (int act = 0; act < ls.num_actions(); ++act) {
            const int p = ls.pair(s, act);
            if (col[p] < 0) continue;
            a(row[s], col[p]) += 1.0;
            if (next_terminal) continue;
            const auto krow = kernel.row(s, act);
            for (std::size_t j = 0; j < krow.size(); ++j) {
                const int r = row[next_begin + static_cast<int>(j)];
                if (r >= 0) a(r, col[p]) -= krow[j];
            }
        }
    }
    const Eigen::VectorXd mult = (a * a.transpose()).ldlt().solve(a * grad);
    const Eigen::VectorXd projected = grad - a.transpose() * mult;
    return projected.lpNorm<Eigen::Infinity>() / std::max(1.0, grad.lpNorm<Eigen::Infinity>());
}

FtrlState::FtrlState(std::shared_ptr<const mdp::TransitionKernel> kernel, RegularizerSpec spec,
                     long long start_episode)
    : kernel_(std::move(kernel)), spec_(spec), start_(start_episode),
      cumulative_(kernel_->structure().num_pairs(), 0.0) {
    spec_.validate();
}

SolveResult FtrlState::solve(long long t, const SolverOptions& options) {
    const Regularizer reg{spec_.kind, eta(t), spec_.beta};
    auto result = solve_regularized(*kernel_, cumulative_, reg, warm_.empty() ? nullptr : &warm_, options);
    warm_ = result.dual;
    return result;
}

SolveResult FtrlState::solve_cold(long long t, const SolverOptions& options) const {
    const Regularizer reg{spec_.kind, eta(t), spec_.beta};
    return solve_regularized(*kernel_, cumulative_, reg, nullptr, options);
}

void FtrlState::accumulate(std::span<const double> loss) {
    if (loss.size() != cumulative_.size()) throw StructuralError("loss size does not match the layout");
    for (std::size_t i = 0; i < loss.size(); ++i) cumulative_[i] += loss[i];
    ++count_;
}

void write_solver_diagnostics_header(std::ostream& out) {
    out << "t,iterations,flow_residual,objective\n";
}

void write_solver_diagnostics_row(std::ostream& out, long long t, const SolveResult& r) {
    fmt::print(out, "{},{},{:.17g},{:.17g}\n", t, r.iterations, r.flow_residual, r.objective);
}

}  // namespace bobw::ftrl
