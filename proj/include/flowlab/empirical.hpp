#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "flowlab/flow.hpp"
#include "flowlab/rng.hpp"
#include "flowlab/schedule.hpp"
#include "flowlab/theory.hpp"

namespace flowlab {

using Vec = std::vector<double>;

struct TrainingSet {
    std::size_t d = 0;
    int n = 0;
    Vec mu;               // ∥μ∥² = d
    std::vector<Vec> x1;  // s μ + z
    std::vector<Vec> x0;  // N(0, I)
    std::vector<int> s;   // cluster labels ±1
    Vec xi;               // Σ s x0
    Vec eta;              // Σ s (x1 − s μ)
};

// d ≥ 16. s = +1 with probability ρ.
TrainingSet sample_training_set(std::size_t d, const ModelParams& params, const RngSpec& rng);

enum class Activation { Tanh, Erf, Sign };

Activation parse_activation(std::string_view name);
std::string to_string(Activation phi);
double activate(Activation phi, double u);
// 0 everywhere for Sign.
double activate_derivative(Activation phi, double u);

// f(x) = c x + w φ(wᵀx); the c x term is absent when has_skip is false.
struct DaeParams {
    Vec w;
    double c = 0.0;
    bool has_skip = true;
    Activation phi = Activation::Tanh;
};

struct AdamConfig {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    std::size_t epochs = 20000;
};

// Σ_μ ∥f(x_t^μ) − x1^μ∥² + (λ/2)∥w∥²
double risk(const DaeParams& p, const TrainingSet& set, const SchedulePoint& sp, double lambda);

struct RiskGradient {
    Vec grad_w;
    double grad_c = 0.0;  // 0 without skip connection
};

RiskGradient risk_gradient(const DaeParams& p, const TrainingSet& set, const SchedulePoint& sp, double lambda);

// w ~ 0.1 N(0, I)/√d, so ∥w∥²/d ≈ 0.01; c = 0.
DaeParams initial_params(std::size_t d, Activation phi, bool has_skip, const RngSpec& rng);

// Full-batch Adam on the risk for cfg.epochs steps. An empty p0.w is replaced
// by initial_params(set.d, p0.phi, p0.has_skip, rng). Throws DivergenceError
// with the epoch index when the risk becomes non-finite.
DaeParams train_dae(const TrainingSet& set, const SchedulePoint& sp, double lambda, const AdamConfig& cfg,
                    const DaeParams& p0, const RngSpec& rng);

struct MeasuredWeights {
    TheoryWeights weights;
    double norm = 0.0;      // ∥w∥²/d
    double residual = 0.0;  // ∥w − P_span(μ,ξ,η) w∥²/d
};

MeasuredWeights measure_weights(const DaeParams& p, const TrainingSet& set, const ModelParams& params);

// f is invariant under w → −w; returns the representative with wᵀμ ≥ 0.
DaeParams fold_sign(const DaeParams& p, const TrainingSet& set);

// w = a_μ μ + a_ξ ξ + a_η η with coefficients chosen so that the overlaps
// measured on this set equal the closed forms exactly; c = ĉ_t (0 without
// skip connection, where the time-constant no-skip weights are used).
DaeParams theory_built_model(const TrainingSet& set, const ModelParams& params, const SchedulePoint& sp,
                             Activation phi, bool has_skip = true);

// Mean of ∥f(x_t) − x1∥²/d over fresh draws from the same mixture.
double denoiser_test_mse(const DaeParams& p, const TrainingSet& set, const ModelParams& params,
                         const SchedulePoint& sp, std::size_t samples, const RngSpec& rng);

// count base samples X0 ~ N(0, I_d); sample i uses rng.child(i).
std::vector<Vec> sample_base_batch(std::size_t d, std::size_t count, const RngSpec& rng);

struct TransportOptions {
    std::vector<Vec> probes;               // pᵀX/d recorded at every node
    std::vector<std::size_t> keep_nodes;   // full states stored at these nodes
};

struct Trajectory {
    std::vector<Vec> overlaps;  // [node][probe]
    Vec norm2;                  // ∥X∥²/d per node
    Vec preactivation;          // vᵀX/d at nodes 0..N−1, v the node's weight vector
    std::vector<Vec> kept;      // states at TransportOptions::keep_nodes
    Vec endpoint;
};

// Euler transport X_{k+1} = X_k + δt b̂(X_k, t_k) with
// b̂ = (W/α) f_k(x) + (α̇/α) x, one model per step. Requires an Euler grid.
// Throws DivergenceError with the node index on a non-finite state.
std::vector<Trajectory> transport(const std::vector<DaeParams>& models, const TimeGrid& grid, ScheduleKind kind,
                                  const std::vector<Vec>& x0_batch, const TransportOptions& options = {});

// Same stepper driven by the exact velocity field of the mixture,
// b = A* x + (Wα/(α²+β²σ²)) μ φ(μᵀx) with φ = tanh (or sign, its large-d limit).
std::vector<Trajectory> transport_exact(const Vec& mu, double sigma, const TimeGrid& grid, ScheduleKind kind,
                                        const std::vector<Vec>& x0_batch, const TransportOptions& options = {},
                                        Activation phi = Activation::Tanh);

struct PcaEstimate {
    Vec estimate;  // ∥·∥² = d, sign chosen so that estimateᵀμ ≥ 0
    double cosine_to_mu = 0.0;
    double eigenvalue = 0.0;  // top eigenvalue of the Gram matrix x1ᵀx1/d
};

// Top principal direction of the target samples via power iteration on the
// n×n Gram matrix. n ≥ 2. Throws ConvergenceError if the iteration stalls.
PcaEstimate pca_mean_estimate(const TrainingSet& set);

struct ClusterStats {
    std::size_t count = 0;
    double frac_plus = 0.0;
    double frac_minus = 0.0;
    // Folded mean μ̂ = mean of sign(μᵀX) X.
    double mse = 0.0;
    double cosine = 0.0;
    double M = 0.0;
    double Q_xi = 0.0;
    double Q_eta = 0.0;
    // Per-branch ∥μ̂± ∓ μ∥²/d; NaN for an empty branch.
    double mse_plus = 0.0;
    double mse_minus = 0.0;
};

ClusterStats generated_cluster_stats(const std::vector<Vec>& endpoints, const TrainingSet& set,
                                     const ModelParams& params);

double dot(const Vec& a, const Vec& b);

}  // namespace flowlab
