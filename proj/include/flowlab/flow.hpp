#pragma once

#include <cstddef>
#include <vector>

#include "flowlab/schedule.hpp"
#include "flowlab/theory.hpp"

namespace flowlab {

// Drift A and sources S of the summary-statistic ODEs
//   dM/dt = A M + S_m,  dQ^ξ/dt = A Q^ξ + S_xi,  dQ^η/dt = A Q^η + S_eta,
// written with the α² factors of 1 − ĉβ and m_t cancelled so that every field
// is finite at α(1) = 0.
struct FlowCoefficients {
    double A = 0.0;
    double S_m = 0.0;
    double S_xi = 0.0;
    double S_eta = 0.0;
};

FlowCoefficients learnt_coefficients(const ModelParams& params, const SchedulePoint& sp);

struct SummaryState {
    double t = 0.0;
    double M = 0.0;
    double Q_xi = 0.0;
    double Q_eta = 0.0;
    double log_Qperp = 0.0;

    // Squared norm of the span(μ, ξ, η) component, M² + nQ^ξ² + nσ²Q^η².
    double span_norm(const ModelParams& params) const;
    // ∥X_t∥²/d = span_norm + exp(log_Qperp).
    double q_total(const ModelParams& params) const;
};

enum class Scheme { Euler, RK4 };

class TimeGrid {
public:
    // nodes must start at 0, end at 1 and increase strictly.
    TimeGrid(std::vector<double> nodes, Scheme scheme);

    static TimeGrid uniform(std::size_t steps, Scheme scheme = Scheme::Euler);

    const std::vector<double>& nodes() const noexcept { return nodes_; }
    Scheme scheme() const noexcept { return scheme_; }
    std::size_t steps() const noexcept { return nodes_.size() - 1; }
    double dt(std::size_t k) const { return nodes_[k + 1] - nodes_[k]; }

private:
    std::vector<double> nodes_;
    Scheme scheme_;
};

// Euler follows the discrete-flow recursions exactly, including
// log Q⊥ ← log Q⊥ + 2 log|1 + A δt|; RK4 integrates the continuous ODEs.
// sign = ±1 selects the branch. Throws StepSizeError when 1 + A δt <= 0.
std::vector<SummaryState> integrate_learnt(const ModelParams& params, ScheduleKind kind,
                                           const TimeGrid& grid, int sign = 1);

struct ExactState {
    double t = 0.0;
    double M_star = 0.0;
};

// μ-overlap of the flow driven by the exact (Tweedie) velocity field.
std::vector<ExactState> integrate_exact(double sigma, ScheduleKind kind, const TimeGrid& grid,
                                        int sign = 1);

struct NoSkipState {
    double t = 0.0;
    double M = 0.0;
    double Q_eta = 0.0;
};

// Flow of the DAE without skip connection, integrated as
// dM/dt = (α̇/α)(M − β m̄) + β̇ m̄ (same for Q^η with q̄).
std::vector<NoSkipState> integrate_noskip(const ModelParams& params, ScheduleKind kind,
                                          const TimeGrid& grid, int sign = 1);

struct FlowError {
    double t = 0.0;
    double eps_m = 0.0;
    double eps_xi = 0.0;
    double eps_eta = 0.0;
};

// Learnt minus exact flow on the + branch. The exact flow has no ξ or η
// component, so eps_xi = Q^ξ and eps_eta = Q^η.
std::vector<FlowError> integrate_error_flow(const ModelParams& params, ScheduleKind kind,
                                            const TimeGrid& grid);

struct GeneratedMeanMetrics {
    double mse = 0.0;
    double cosine = 0.0;
};

// ∥μ̂ − μ∥²/d and μ̂∠μ from the t = 1 state of the + branch. The cosine uses
// the norm of the cluster mean μ̂, i.e. span_norm; the orthogonal part of a
// sample averages out of the mean.
GeneratedMeanMetrics generated_mean_metrics(const SummaryState& final_state, const ModelParams& params);

}  // namespace flowlab
