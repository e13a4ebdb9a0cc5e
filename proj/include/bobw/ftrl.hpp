#pragma once

#include <memory>
#include <optional>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "bobw/mdp.hpp"

namespace bobw::ftrl {

enum class RegularizerKind { kShannon, kTsallisLogBarrier };

enum class EtaSchedule {
    kShannonAdaptive,   // sqrt(L ln(|S||A|) / (c ln(|S||A|) + M))
    kEpochInverseSqrt,  // 1 / sqrt(t - t_i + 1)
    kGlobalInverseSqrt, // gamma / sqrt(t)
};

/**
 * Regulariser and learning-rate schedule of one learner.
 *
 *   Shannon:           (1/eta) sum q ln q
 *   Tsallis + barrier: -(1/eta) sum sqrt(q) + beta sum ln(1/q)
 */
struct RegularizerSpec {
    RegularizerKind kind = RegularizerKind::kShannon;
    EtaSchedule schedule = EtaSchedule::kShannonAdaptive;
    int horizon = 1;            // L
    double log_pairs = 0.0;     // ln(|S||A|)
    double shannon_constant = 0.0;  // 64 L^5 (unknown transition) or 64 L^3 (known)
    double beta = 0.0;
    double gamma = 1.0;

    static RegularizerSpec shannon_unknown(const mdp::LayerStructure& ls);
    static RegularizerSpec shannon_known(const mdp::LayerStructure& ls);
    static RegularizerSpec tsallis_unknown(const mdp::LayerStructure& ls);
    static RegularizerSpec tsallis_known(const mdp::LayerStructure& ls, double gamma = 1.0);

    void validate() const;
};

/// Learning rate of the adaptive Shannon schedule given the accumulated M.
double shannon_eta(const RegularizerSpec& spec, double accumulated_m);

/**
 * Learning rate for episode t of an epoch that started at epoch_start, with
 * accumulated M (only used by the Shannon schedule).
 */
double learning_rate(const RegularizerSpec& spec, long long t, long long epoch_start,
                     double accumulated_m);

/**
 * Per-episode increment of M:
 * min{ sum q l^2, sum q (Q - V)^2 } with Q, V the value functions of
 * (kernel, loss, policy).
 */
double shannon_increment(const mdp::TransitionKernel& kernel, std::span<const double> q,
                         std::span<const double> loss, const mdp::StochasticPolicy& policy);

/// g(s,a) = Q(s,a) - V(s) - loss(s,a); <q, g> = -V(s_0) on the whole polytope.
std::vector<double> loss_shift(const mdp::TransitionKernel& kernel, const mdp::StochasticPolicy& policy,
                               std::span<const double> loss);

/// Scalar regulariser parameters for one solve.
struct Regularizer {
    RegularizerKind kind = RegularizerKind::kShannon;
    double eta = 1.0;
    double beta = 0.0;

    double value(std::span<const double> q) const;
};

struct SolverOptions {
    int max_iterations = 500;
    double residual_tol = 1e-12;      // target flow residual
    double accept_residual = 1e-10;   // worst residual accepted at max_iterations
};

struct SolveResult {
    mdp::OccupancyMeasure q;
    std::vector<double> dual;  // multiplier per non-terminal state
    int iterations = 0;
    double flow_residual = 0.0;
    double objective = 0.0;
    double stationarity = 0.0;
    bool floor_breach = false;  // some entry below e^-40
};

/// Non-convergence of the dual solver; carries the last residuals.
class SolverError : public std::runtime_error {
public:
    SolverError(const std::string& what, int iterations, double residual)
        : std::runtime_error(what), iterations_(iterations), residual_(residual) {}
    int iterations() const { return iterations_; }
    double residual() const { return residual_; }

private:
    int iterations_;
    double residual_;
};

/**
 * argmin over Omega(kernel) of <q, cumulative_loss> + reg(q).
 *
 * Solved by damped Newton ascent on the concave Lagrangian dual of the flow
 * constraints (one multiplier per non-terminal state); each q(s,a) is the
 * closed-form minimiser of its scalar stationarity equation given the
 * multipliers. `warm_dual` is used when it lies in the dual domain.
 */
SolveResult solve_regularized(const mdp::TransitionKernel& kernel,
                              std::span<const double> cumulative_loss, const Regularizer& reg,
                              const std::vector<double>* warm_dual = nullptr,
                              const SolverOptions& options = {});

/// Norm of the objective gradient projected on the null space of the flow constraints.
double projected_gradient_norm(const mdp::TransitionKernel& kernel,
                               std::span<const double> cumulative_loss, const Regularizer& reg,
                               std::span<const double> q);

/// FTRL objective <q, c> + reg(q).
double objective(std::span<const double> cumulative_loss, const Regularizer& reg,
                 std::span<const double> q);

/**
 * One FTRL instance over a fixed kernel: accumulates (estimated) losses and
 * the Shannon M statistic from the start of the instance, and warm-starts
 * each solve from the previous multipliers.
 */
class FtrlState {
public:
    FtrlState(std::shared_ptr<const mdp::TransitionKernel> kernel, RegularizerSpec spec,
              long long start_episode);

    const mdp::TransitionKernel& kernel() const { return *kernel_; }
    const RegularizerSpec& spec() const { return spec_; }
    long long start_episode() const { return start_; }
    const std::vector<double>& cumulative_loss() const { return cumulative_; }
    double accumulated_m() const { return accumulated_m_; }
    long long episodes_accumulated() const { return count_; }

    double eta(long long t) const { return learning_rate(spec_, t, start_, accumulated_m_); }

    /// Solve for episode t (t >= start_episode()).
    SolveResult solve(long long t, const SolverOptions& options = {});
    /// Solve from the cold-start point, ignoring the stored multipliers.
    SolveResult solve_cold(long long t, const SolverOptions& options = {}) const;

    void accumulate(std::span<const double> loss);
    void add_m(double increment) { accumulated_m_ += increment; }

private:
    std::shared_ptr<const mdp::TransitionKernel> kernel_;
    RegularizerSpec spec_;
    long long start_;
    std::vector<double> cumulative_;
    double accumulated_m_ = 0.0;
    long long count_ = 0;
    std::vector<double> warm_;
};

/// CSV columns t,iterations,flow_residual,objective.
void write_solver_diagnostics_header(std::ostream& out);
void write_solver_diagnostics_row(std::ostream& out, long long t, const SolveResult& r);

}  // namespace bobw::ftrl
