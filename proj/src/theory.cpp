#include "flowlab/theory.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <string>

#include "flowlab/errors.hpp"

namespace flowlab {

ModelParams::ModelParams(int n, double sigma, double lambda, double rho)
    : n_(n), sigma_(sigma), lambda_(lambda), rho_(rho) {
    if (n < 1) throw DomainError("n must be >= 1, got " + std::to_string(n));
    if (!(sigma > 0.0) || !std::isfinite(sigma)) throw DomainError("sigma must be positive");
    if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw DomainError("lambda must be non-negative");
    if (!(rho > 0.0 && rho < 1.0)) throw DomainError("rho must lie in (0, 1)");
    if (!(lambda + n - 1 > 0.0)) {
        throw DomainError("lambda + n - 1 must be positive (lambda > 0 is required when n = 1)");
    }
}

double ModelParams::k_coef() const noexcept {
    return lambda_ * (1.0 + sigma2()) + (n_ - 1) * sigma2();
}

double ModelParams::l_coef() const noexcept { return lambda_ + n_ - 1; }

namespace {

// α²(λ+n−1) + β²K, strictly positive since α² + β² > 0 and both factors are.
double denominator(const ModelParams& p, const SchedulePoint& sp) {
    return sp.alpha * sp.alpha * p.l_coef() + sp.beta * sp.beta * p.k_coef();
}

}  // namespace

double skip_strength(const ModelParams& params, const SchedulePoint& sp) {
    return sp.beta * params.k_coef() / denominator(params, sp);
}

TheoryWeights weight_components(const ModelParams& params, const SchedulePoint& sp) {
    const double n = params.n();
    const double lam_n = params.lambda() + n;
    const double den = denominator(params, sp);
    const double a2l = sp.alpha * sp.alpha * params.l_coef() / den;

    TheoryWeights w;
    w.t = sp.t;
    w.m = n / lam_n * a2l;
    w.q_xi = -sp.alpha / lam_n * sp.beta * params.k_coef() / den;
    w.q_eta = a2l / lam_n;
    w.c_hat = skip_strength(params, sp);
    return w;
}

double weight_norm(const TheoryWeights& w, const ModelParams& params) {
    const double n = params.n();
    return w.m * w.m + n * w.q_xi * w.q_xi + n * params.sigma2() * w.q_eta * w.q_eta;
}

double weight_cosine(const TheoryWeights& w, const ModelParams& params) {
    const double norm = weight_norm(w, params);
    if (!(norm > 0.0)) throw UndefinedValueError("cosine of an all-zero weight vector");
    return w.m / std::sqrt(norm);
}

TheoryWeights SaddleSolution::to_weights(const ModelParams& params, double t) const {
    return TheoryWeights{t, m, q_xi, q_eta / params.sigma2(), c};
}

namespace {

// Order parameters iterated by the saddle solver.
struct SaddleState {
    double m, q_xi, q_eta, c, q;
};

struct Conjugates {
    double q_hat, m_hat, q_xi_hat, q_eta_hat;
};

Conjugates conjugates(const ModelParams& p, const SchedulePoint& sp, double c) {
    Conjugates h;
    h.q_hat = p.n();
    h.m_hat = p.n() * (1.0 - c * sp.beta);
    h.q_eta_hat = h.m_hat / p.n();
    h.q_xi_hat = -sp.alpha * c;
    return h;
}

SaddleState sweep(const ModelParams& p, const SchedulePoint& sp, const SaddleState& s) {
    const double s2 = p.sigma2();
    const Conjugates h = conjugates(p, sp, s.c);
    const double lq = p.lambda() + h.q_hat;

    SaddleState next;
    next.c = ((1.0 + s2) * sp.beta - (sp.beta * (s.m + s.q_eta) + sp.alpha * s.q_xi)) /
             (sp.alpha * sp.alpha + sp.beta * sp.beta * (1.0 + s2));
    next.m = h.m_hat / lq;
    next.q_xi = h.q_xi_hat / lq;
    next.q_eta = h.q_eta_hat * s2 / lq;
    next.q = (h.m_hat * h.m_hat + p.n() * (h.q_xi_hat * h.q_xi_hat + h.q_eta_hat * h.q_eta_hat * s2)) /
             (lq * lq);
    return next;
}

double max_diff(const SaddleState& a, const SaddleState& b) {
    const std::array<double, 5> d{a.m - b.m, a.q_xi - b.q_xi, a.q_eta - b.q_eta, a.c - b.c, a.q - b.q};
    double out = 0.0;
    for (double v : d) out = std::max(out, std::abs(v));
    return out;
}

}  // namespace

SaddleSolution saddle_solve(const ModelParams& params, const SchedulePoint& sp,
                            const SaddleOptions& options) {
    if (!(options.damping > 0.0 && options.damping <= 1.0)) {
        throw DomainError("saddle damping must lie in (0, 1]");
    }
    if (!(options.tol > 0.0)) throw DomainError("saddle tolerance must be positive");

    const TheoryWeights start = weight_components(params, sp);
    const double s2 = params.sigma2();
    SaddleState state{start.m + 0.1, start.q_xi + 0.1, start.q_eta * s2 + 0.1, start.c_hat + 0.1, 0.0};
    state.q = state.m * state.m + params.n() * (state.q_xi * state.q_xi + state.q_eta * state.q_eta / s2);

    const double mix = options.damping;
    double update = 0.0;
    std::size_t it = 0;
    for (; it < options.max_iter; ++it) {
        const SaddleState target = sweep(params, sp, state);
        const SaddleState next{(1 - mix) * state.m + mix * target.m,
                               (1 - mix) * state.q_xi + mix * target.q_xi,
                               (1 - mix) * state.q_eta + mix * target.q_eta,
                               (1 - mix) * state.c + mix * target.c,
                               (1 - mix) * state.q + mix * target.q};
        update = max_diff(next, state);
        state = next;
        if (update < options.tol) {
            ++it;
            break;
        }
    }
    const double residual = max_diff(sweep(params, sp, state), state);
    if (!(update < options.tol)) {
        throw ConvergenceError("saddle-point iteration did not converge", residual);
    }

    const Conjugates h = conjugates(params, sp, state.c);
    SaddleSolution sol;
    sol.q = state.q;
    sol.m = state.m;
    sol.q_xi = state.q_xi;
    sol.q_eta = state.q_eta;
    sol.c = state.c;
    sol.q_hat = h.q_hat;
    sol.m_hat = h.m_hat;
    sol.q_xi_hat = h.q_xi_hat;
    sol.q_eta_hat = h.q_eta_hat;
    sol.iterations = it;
    sol.residual = residual;
    return sol;
}

NoSkipWeights weights_noskip(const ModelParams& params) {
    const double lam_n = params.lambda() + params.n();
    return {params.n() / lam_n, 1.0 / lam_n};
}

namespace {

void check_bayes_args(int n, double sigma) {
    if (n < 1) throw DomainError("n must be >= 1");
    if (!(sigma > 0.0)) throw DomainError("sigma must be positive");
}

}  // namespace

BayesComponents bayes_components(int n, double sigma) {
    check_bayes_args(n, sigma);
    const double den = n + sigma * sigma;
    return {n / den, 1.0 / den};
}

double bayes_mse(int n, double sigma) {
    check_bayes_args(n, sigma);
    const double s2 = sigma * sigma;
    return s2 / (n + s2);
}

double bayes_cosine(int n, double sigma) {
    check_bayes_args(n, sigma);
    return std::sqrt(n / (n + sigma * sigma));
}

double noskip_mean_mse(int n, double sigma, double lambda) {
    if (n < 1) throw DomainError("n must be >= 1");
    if (!(lambda >= 0.0)) throw DomainError("lambda must be non-negative");
    const double lam_n = lambda + n;
    return (lambda * lambda + n * sigma * sigma) / (lam_n * lam_n);
}

double exact_c(double sigma, const SchedulePoint& sp) {
    if (!(sigma > 0.0)) throw DomainError("sigma must be positive");
    const double s2 = sigma * sigma;
    return sp.beta * s2 / (sp.alpha * sp.alpha + sp.beta * sp.beta * s2);
}

double denoiser_mse(const ModelParams& params, const SchedulePoint& sp, const TheoryWeights& w) {
    const double gap = 1.0 - w.c_hat * sp.beta;
    return weight_norm(w, params) - 2.0 * gap * w.m + gap * gap * (1.0 + params.sigma2()) +
           w.c_hat * w.c_hat * sp.alpha * sp.alpha;
}

double oracle_mse(double sigma, const SchedulePoint& sp) {
    if (!(sigma > 0.0)) throw DomainError("sigma must be positive");
    const double s2 = sigma * sigma;
    const double a2 = sp.alpha * sp.alpha;
    return a2 * s2 / (a2 + sp.beta * sp.beta * s2);
}

ConvergenceGaps convergence_gaps(const ModelParams& params, const SchedulePoint& sp) {
    if (!(sp.t > 0.0)) throw DomainError("convergence gaps require t > 0");
    const TheoryWeights w = weight_components(params, sp);
    const double a2 = sp.alpha * sp.alpha;
    const double m_limit = a2 / (a2 + sp.beta * sp.beta * params.sigma2());
    return {std::abs(w.m - m_limit), std::abs(w.c_hat - exact_c(params.sigma(), sp)), w.q_xi, w.q_eta};
}

}  // namespace flowlab
