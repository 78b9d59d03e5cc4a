#include "flowlab/flow.hpp"

#include <array>
#include <cmath>
#include <string>

#include "flowlab/errors.hpp"

namespace flowlab {

FlowCoefficients learnt_coefficients(const ModelParams& params, const SchedulePoint& sp) {
    const double n = params.n();
    const double lam_n = params.lambda() + n;
    const double l = params.l_coef();
    const double k = params.k_coef();
    const double den = sp.alpha * sp.alpha * l + sp.beta * sp.beta * k;
    const double c_hat = sp.beta * k / den;
    const double aw = sp.alpha * sp.wronskian / den;

    FlowCoefficients fc;
    fc.A = sp.beta_dot * c_hat + sp.alpha_dot * sp.alpha * l / den;
    fc.S_m = n * l / lam_n * aw;
    fc.S_xi = -k / lam_n * sp.beta * sp.wronskian / den;
    fc.S_eta = l / lam_n * aw;
    return fc;
}

double SummaryState::span_norm(const ModelParams& params) const {
    const double n = params.n();
    return M * M + n * Q_xi * Q_xi + n * params.sigma2() * Q_eta * Q_eta;
}

double SummaryState::q_total(const ModelParams& params) const {
    return span_norm(params) + std::exp(log_Qperp);
}

TimeGrid::TimeGrid(std::vector<double> nodes, Scheme scheme) : nodes_(std::move(nodes)), scheme_(scheme) {
    if (nodes_.size() < 2) throw DomainError("time grid needs at least one step");
    if (nodes_.front() != 0.0 || nodes_.back() != 1.0) {
        throw DomainError("time grid must start at 0 and end at 1");
    }
    for (std::size_t k = 0; k + 1 < nodes_.size(); ++k) {
        if (!(nodes_[k + 1] > nodes_[k])) throw DomainError("time grid must increase strictly");
    }
}

TimeGrid TimeGrid::uniform(std::size_t steps, Scheme scheme) {
    if (steps == 0) throw DomainError("time grid needs at least one step");
    std::vector<double> nodes(steps + 1);
    for (std::size_t k = 0; k <= steps; ++k) nodes[k] = static_cast<double>(k) / static_cast<double>(steps);
    nodes.back() = 1.0;
    return TimeGrid(std::move(nodes), scheme);
}

namespace {

void check_sign(int sign) {
    if (sign != 1 && sign != -1) throw DomainError("branch sign must be +1 or -1");
}

// Classic RK4 / forward Euler over the grid for a small state vector.
// drift(t, y) returns dy/dt.
template <std::size_t N, class Drift>
std::vector<std::array<double, N>> integrate(const TimeGrid& grid, std::array<double, N> y, Drift&& drift) {
    const auto& ts = grid.nodes();
    std::vector<std::array<double, N>> out;
    out.reserve(ts.size());
    out.push_back(y);
    for (std::size_t k = 0; k + 1 < ts.size(); ++k) {
        const double t = ts[k];
        const double h = grid.dt(k);
        if (grid.scheme() == Scheme::Euler) {
            const auto f = drift(t, y);
            for (std::size_t i = 0; i < N; ++i) y[i] += h * f[i];
        } else {
            auto stage = [&](const std::array<double, N>& base, const std::array<double, N>& slope, double w) {
                std::array<double, N> r;
                for (std::size_t i = 0; i < N; ++i) r[i] = base[i] + w * slope[i];
                return r;
            };
            const auto k1 = drift(t, y);
            const auto k2 = drift(t + 0.5 * h, stage(y, k1, 0.5 * h));
            const auto k3 = drift(t + 0.5 * h, stage(y, k2, 0.5 * h));
            // Land exactly on the next node so that t = 1 hits the pinned endpoint.
            const auto k4 = drift(ts[k + 1], stage(y, k3, h));
            for (std::size_t i = 0; i < N; ++i) y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        out.push_back(y);
    }
    return out;
}

// Midpoints of the RK4 stages may be rounded a hair outside [0, 1].
SchedulePoint schedule_at(ScheduleKind kind, double t) {
    return eval_schedule(kind, t < 0.0 ? 0.0 : (t > 1.0 ? 1.0 : t));
}

}  // namespace

std::vector<SummaryState> integrate_learnt(const ModelParams& params, ScheduleKind kind, const TimeGrid& grid,
                                           int sign) {
    check_sign(sign);
    const double sgn = sign;
    const auto& ts = grid.nodes();
    std::vector<SummaryState> out(ts.size());

    if (grid.scheme() == Scheme::Euler) {
        SummaryState s;
        for (std::size_t k = 0; k < ts.size(); ++k) {
            s.t = ts[k];
            out[k] = s;
            if (k + 1 == ts.size()) break;
            const double h = grid.dt(k);
            const FlowCoefficients fc = learnt_coefficients(params, schedule_at(kind, ts[k]));
            const double factor = 1.0 + fc.A * h;
            if (!(factor > 0.0)) {
                throw StepSizeError("Euler factor 1 + A*dt = " + std::to_string(factor) + " at step " +
                                        std::to_string(k) + " is not positive; reduce the step size",
                                    k);
            }
            s.M += h * (fc.A * s.M + sgn * fc.S_m);
            s.Q_xi += h * (fc.A * s.Q_xi + sgn * fc.S_xi);
            s.Q_eta += h * (fc.A * s.Q_eta + sgn * fc.S_eta);
            s.log_Qperp += 2.0 * std::log(factor);
        }
        return out;
    }

    const auto ys = integrate<4>(grid, {0.0, 0.0, 0.0, 0.0}, [&](double t, const std::array<double, 4>& y) {
        const FlowCoefficients fc = learnt_coefficients(params, schedule_at(kind, t));
        return std::array<double, 4>{fc.A * y[0] + sgn * fc.S_m, fc.A * y[1] + sgn * fc.S_xi,
                                     fc.A * y[2] + sgn * fc.S_eta, 2.0 * fc.A};
    });
    for (std::size_t k = 0; k < ts.size(); ++k) out[k] = {ts[k], ys[k][0], ys[k][1], ys[k][2], ys[k][3]};
    return out;
}

std::vector<ExactState> integrate_exact(double sigma, ScheduleKind kind, const TimeGrid& grid, int sign) {
    check_sign(sign);
    if (!(sigma > 0.0)) throw DomainError("sigma must be positive");
    const double s2 = sigma * sigma;
    const double sgn = sign;
    const auto ys = integrate<1>(grid, {0.0}, [&](double t, const std::array<double, 1>& y) {
        const SchedulePoint sp = schedule_at(kind, t);
        const double den = sp.alpha * sp.alpha + sp.beta * sp.beta * s2;
        const double drift = sp.beta_dot * sp.beta * s2 / den + sp.alpha_dot * sp.alpha / den;
        const double source = sp.wronskian * sp.alpha / den;
        return std::array<double, 1>{drift * y[0] + sgn * source};
    });
    const auto& ts = grid.nodes();
    std::vector<ExactState> out(ts.size());
    for (std::size_t k = 0; k < ts.size(); ++k) out[k] = {ts[k], ys[k][0]};
    return out;
}

std::vector<NoSkipState> integrate_noskip(const ModelParams& params, ScheduleKind kind, const TimeGrid& grid,
                                          int sign) {
    check_sign(sign);
    const NoSkipWeights w = weights_noskip(params);
    const double sgn = sign;
    const auto ys = integrate<2>(grid, {0.0, 0.0}, [&](double t, const std::array<double, 2>& y) {
        const SchedulePoint sp = schedule_at(kind, t);
        const double dev_m = y[0] - sgn * sp.beta * w.m;
        const double dev_q = y[1] - sgn * sp.beta * w.q_eta;
        // At α = 0 the homogeneous rate diverges; the bounded solution has zero
        // deviation there, so only the β̇ part survives.
        const double rate = sp.alpha > 0.0 ? sp.alpha_dot / sp.alpha : 0.0;
        return std::array<double, 2>{rate * dev_m + sgn * sp.beta_dot * w.m,
                                     rate * dev_q + sgn * sp.beta_dot * w.q_eta};
    });
    const auto& ts = grid.nodes();
    std::vector<NoSkipState> out(ts.size());
    for (std::size_t k = 0; k < ts.size(); ++k) out[k] = {ts[k], ys[k][0], ys[k][1]};
    return out;
}

std::vector<FlowError> integrate_error_flow(const ModelParams& params, ScheduleKind kind, const TimeGrid& grid) {
    const auto learnt = integrate_learnt(params, kind, grid, 1);
    const auto exact = integrate_exact(params.sigma(), kind, grid, 1);
    std::vector<FlowError> out(learnt.size());
    for (std::size_t k = 0; k < learnt.size(); ++k) {
        out[k] = {learnt[k].t, learnt[k].M - exact[k].M_star, learnt[k].Q_xi, learnt[k].Q_eta};
    }
    return out;
}

GeneratedMeanMetrics generated_mean_metrics(const SummaryState& final_state, const ModelParams& params) {
    const double q1 = final_state.span_norm(params);
    if (!(q1 > 0.0)) throw UndefinedValueError("generated mean has zero norm");
    const double m1 = final_state.M;
    return {q1 + 1.0 - 2.0 * m1, m1 / std::sqrt(q1)};
}

}  // namespace flowlab
