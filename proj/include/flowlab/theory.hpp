#pragma once

#include <cstddef>

#include "flowlab/schedule.hpp"

namespace flowlab {

// Sample count n, cluster std σ, ridge strength λ and weight ρ of the +μ
// cluster. Construction rejects parameter sets whose closed forms would
// divide by λ + n − 1 = 0.
class ModelParams {
public:
    ModelParams(int n, double sigma, double lambda, double rho = 0.5);

    int n() const noexcept { return n_; }
    double sigma() const noexcept { return sigma_; }
    double sigma2() const noexcept { return sigma_ * sigma_; }
    double lambda() const noexcept { return lambda_; }
    double rho() const noexcept { return rho_; }

    ModelParams with_n(int n) const { return {n, sigma_, lambda_, rho_}; }
    ModelParams with_lambda(double lambda) const { return {n_, sigma_, lambda, rho_}; }
    ModelParams with_rho(double rho) const { return {n_, sigma_, lambda_, rho}; }

    // λ(1+σ²) + (n−1)σ²
    double k_coef() const noexcept;
    // λ + n − 1
    double l_coef() const noexcept;

private:
    int n_;
    double sigma_;
    double lambda_;
    double rho_;
};

// Trained-DAE summary at time t. q_eta follows ŵᵀη/(ndσ²).
struct TheoryWeights {
    double t = 0.0;
    double m = 0.0;
    double q_xi = 0.0;
    double q_eta = 0.0;
    double c_hat = 0.0;
};

double skip_strength(const ModelParams& params, const SchedulePoint& sp);
TheoryWeights weight_components(const ModelParams& params, const SchedulePoint& sp);

// ∥ŵ∥²/d = m² + n q_ξ² + n σ² q_η²
double weight_norm(const TheoryWeights& w, const ModelParams& params);
// ŵ∠μ. Throws UndefinedValueError for all-zero weights (t = 1).
double weight_cosine(const TheoryWeights& w, const ModelParams& params);

struct SaddleOptions {
    double damping = 0.5;
    double tol = 1e-13;
    std::size_t max_iter = 100000;
};

// Converged point of the zero-gradient system, positive-ν branch. Here q_eta
// is the raw overlap wᵀη/(nd) (no 1/σ²), as the system is written.
struct SaddleSolution {
    double q = 0.0;
    double m = 0.0;
    double q_xi = 0.0;
    double q_eta = 0.0;
    double c = 0.0;
    double q_hat = 0.0;
    double m_hat = 0.0;
    double q_xi_hat = 0.0;
    double q_eta_hat = 0.0;
    std::size_t iterations = 0;
    double residual = 0.0;

    // Converts to the TheoryWeights convention (q_eta / σ²).
    TheoryWeights to_weights(const ModelParams& params, double t) const;
};

// Damped Picard iteration started at the closed form perturbed by +0.1.
// Throws ConvergenceError after max_iter sweeps.
SaddleSolution saddle_solve(const ModelParams& params, const SchedulePoint& sp,
                            const SaddleOptions& options = {});

struct NoSkipWeights {
    double m = 0.0;
    double q_eta = 0.0;
};

// Time-independent weights of the DAE without skip connection.
NoSkipWeights weights_noskip(const ModelParams& params);

struct BayesComponents {
    double m_star = 0.0;
    double q_eta_star = 0.0;
};

BayesComponents bayes_components(int n, double sigma);
double bayes_mse(int n, double sigma);
// μ̂*∠μ = m*/√(m*² + nσ² q*²) = √(n/(n+σ²))
double bayes_cosine(int n, double sigma);

// ∥μ̂ − μ∥²/d of the no-skip generated atoms, (λ² + nσ²)/(λ+n)².
double noskip_mean_mse(int n, double sigma, double lambda);

// Skip strength of the Tweedie denoiser, βσ²/(α²+β²σ²).
double exact_c(double sigma, const SchedulePoint& sp);

// Test MSE of the trained denoiser at time t.
double denoiser_mse(const ModelParams& params, const SchedulePoint& sp, const TheoryWeights& w);

// Test MSE of the Tweedie denoiser, α²σ²/(α²+β²σ²).
double oracle_mse(double sigma, const SchedulePoint& sp);

struct ConvergenceGaps {
    double gap_m = 0.0;
    double gap_c = 0.0;
    double q_xi = 0.0;
    double q_eta = 0.0;
};

// Distances of the trained weights to their n → ∞ limits. Throws DomainError
// at t = 0.
ConvergenceGaps convergence_gaps(const ModelParams& params, const SchedulePoint& sp);

}  // namespace flowlab
