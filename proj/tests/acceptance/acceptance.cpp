// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fails.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "flowlab/empirical.hpp"
#include "flowlab/flow.hpp"
#include "flowlab/parallel.hpp"
#include "flowlab/theory.hpp"

using namespace flowlab;

namespace {

const ModelParams P0(4, 0.9, 0.1);
const std::vector<ScheduleKind> kKinds{ScheduleKind::Linear, ScheduleKind::Trigonometric};

struct Outcome {
    bool pass;
    std::string detail;
};

int failures = 0;

void criterion(const char* name, const std::function<Outcome()>& body) {
    const auto start = std::chrono::steady_clock::now();
    Outcome out{false, ""};
    try {
        out = body();
    } catch (const std::exception& e) {
        out = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::printf("%s %s: %s [%.2f s]\n", out.pass ? "PASS" : "FAIL", name, out.detail.c_str(), secs);
    std::fflush(stdout);
    failures += !out.pass;
}

std::string num(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3g", v);
    return buf;
}

double elapsed_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

double slope_loglog(const std::vector<double>& x, const std::vector<double>& y) {
    double mx = 0, my = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        mx += std::log(x[i]) / x.size();
        my += std::log(y[i]) / x.size();
    }
    double sxy = 0, sxx = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxy += (std::log(x[i]) - mx) * (std::log(y[i]) - my);
        sxx += (std::log(x[i]) - mx) * (std::log(x[i]) - mx);
    }
    return sxy / sxx;
}

// Branch-folded transport statistics at every node, plus branch fractions
// and the fraction of samples whose preactivation sign never flips.
struct Folded {
    std::vector<double> M, Q_xi, Q_eta, Q;
    double frac_plus = 0.0, steady = 0.0;
};

Folded fold(const std::vector<Trajectory>& tr, const ModelParams& p) {
    const std::size_t nodes = tr.front().norm2.size();
    const double cnt = static_cast<double>(tr.size());
    Folded f{std::vector<double>(nodes), std::vector<double>(nodes), std::vector<double>(nodes),
             std::vector<double>(nodes)};
    for (const auto& s : tr) {
        const double sgn = s.overlaps.back()[0] >= 0 ? 1.0 : -1.0;
        f.frac_plus += (sgn > 0) / cnt;
        for (std::size_t k = 0; k < nodes; ++k) {
            f.M[k] += sgn * s.overlaps[k][0] / cnt;
            f.Q_xi[k] += sgn * s.overlaps[k][1] / (p.n() * cnt);
            f.Q_eta[k] += sgn * s.overlaps[k][2] / (p.n() * p.sigma2() * cnt);
            f.Q[k] += s.norm2[k] / cnt;
        }
        bool same = true;
        for (double v : s.preactivation) same = same && ((v > 0) == (s.preactivation.front() > 0));
        f.steady += same / cnt;
    }
    return f;
}

// Transport `count` samples through theory-built sign models.
std::vector<Trajectory> theory_transport(const ModelParams& p, std::size_t d, std::size_t count, std::uint64_t seed) {
    const auto kind = ScheduleKind::Linear;
    const auto set = sample_training_set(d, p, {seed, 0});
    const auto grid = TimeGrid::uniform(100);
    std::vector<DaeParams> models(grid.steps());
    for (std::size_t k = 0; k < grid.steps(); ++k)
        models[k] = theory_built_model(set, p, eval_schedule(kind, grid.nodes()[k]), Activation::Sign);
    TransportOptions opt;
    opt.probes = {set.mu, set.xi, set.eta};
    return transport(models, grid, kind, sample_base_batch(d, count, {seed, 1}), opt);
}

Outcome oracle_grid() {
    const auto t0 = std::chrono::steady_clock::now();
    double worst = 0.0;
    for (int n : {2, 4, 8, 32})
        for (double sigma : {0.5, 0.9, 2.0})
            for (double lambda : {0.01, 0.1, 1.0})
                for (int i = 1; i <= 9; ++i) {
                    const ModelParams p(n, sigma, lambda);
                    const auto sp = eval_schedule(ScheduleKind::Linear, 0.1 * i);
                    const auto w = weight_components(p, sp);
                    const auto o = saddle_solve(p, sp).to_weights(p, sp.t);
                    worst = std::max({worst, std::abs(skip_strength(p, sp) - o.c_hat), std::abs(w.m - o.m),
                                      std::abs(w.q_xi - o.q_xi), std::abs(w.q_eta - o.q_eta)});
                }
    const double secs = elapsed_since(t0);
    return {worst < 1e-8 && secs < 5.0, "max |closed form - saddle| = " + num(worst) + " over 324 points"};
}

Outcome exact_endpoint() {
    const auto t0 = std::chrono::steady_clock::now();
    const auto grid = TimeGrid::uniform(10000, Scheme::RK4);
    double worst = 0.0;
    for (double sigma : {0.9, 2.0})
        for (auto kind : kKinds) worst = std::max(worst, std::abs(integrate_exact(sigma, kind, grid).back().M_star - 1.0));
    const double secs = elapsed_since(t0);
    return {worst < 1e-6 && secs < 1.0, "max |M*_1 - 1| = " + num(worst)};
}

Outcome noskip_closed_form() {
    double worst = 0.0;
    for (const auto& p : {P0, ModelParams(8, 1.5, 0.5), ModelParams(16, 2.0, 1.0)})
        for (auto kind : kKinds) {
            const std::size_t steps = kind == ScheduleKind::Linear ? 1000 : 10000;
            const auto nw = weights_noskip(p);
            for (const auto& s : integrate_noskip(p, kind, TimeGrid::uniform(steps, Scheme::RK4))) {
                const double b = eval_schedule(kind, s.t).beta;
                worst = std::max({worst, std::abs(s.M - b * nw.m), std::abs(s.Q_eta - b * nw.q_eta)});
            }
        }
    const double eps = std::numeric_limits<double>::epsilon();
    double gap = 0.0;
    bool minimum = true;
    for (int n : {1, 4, 16, 64})
        for (double sigma : {0.5, 0.9, 2.0}) {
            const double s2 = sigma * sigma;
            const double at = noskip_mean_mse(n, sigma, s2);
            const double bayes = bayes_mse(n, sigma);
            gap = std::max(gap, std::abs(at - bayes) / bayes);
            for (double f : {0.5, 0.9, 0.99, 0.999, 1.001, 1.01, 1.1, 2.0})
                minimum = minimum && noskip_mean_mse(n, sigma, f * s2) > at;
            minimum = minimum && noskip_mean_mse(n, sigma, 0.0) > at;
        }
    return {worst < 1e-8 && gap <= 4 * eps && minimum,
            "flow vs closed form " + num(worst) + ", relative gap to bayes at lambda = sigma^2 " + num(gap) +
                (minimum ? ", minimum at sigma^2" : ", minimum elsewhere")};
}

Outcome mse_rates() {
    const auto t0 = std::chrono::steady_clock::now();
    const auto grid = TimeGrid::uniform(1000, Scheme::RK4);
    const std::vector<int> ns{4, 8, 16, 32, 64};
    bool ok = true;
    std::string detail = "slopes";
    double ratio = std::numeric_limits<double>::infinity();
    for (double sigma : {0.9, 1.5, 2.0}) {
        std::vector<double> x, y;
        for (int n : ns) {
            const ModelParams p(n, sigma, 0.1);
            const double mse = generated_mean_metrics(integrate_learnt(p, ScheduleKind::Linear, grid).back(), p).mse;
            x.push_back(n);
            y.push_back(mse);
            ratio = std::min(ratio, mse / bayes_mse(n, sigma));
        }
        const double s = slope_loglog(x, y);
        ok = ok && std::abs(s + 1.0) <= 0.15;
        detail += " " + num(s);
    }
    const double secs = elapsed_since(t0);
    ok = ok && ratio >= 0.95 && secs < 10.0;
    return {ok, detail + "; min mse/bayes " + num(ratio)};
}

Outcome trained_weights() {
    const auto t0 = std::chrono::steady_clock::now();
    const std::size_t d = 2000;
    const auto set = sample_training_set(d, P0, {2024, 0});
    AdamConfig adam;
    adam.learning_rate = 1e-3;
    adam.epochs = 20000;
    std::vector<double> errs(9);
    parallel_for(9, [&](std::size_t k) {
        const auto sp = eval_schedule(ScheduleKind::Linear, 0.1 * (k + 1));
        DaeParams p0;
        p0.phi = Activation::Tanh;
        const auto trained = fold_sign(train_dae(set, sp, P0.lambda(), adam, p0, RngSpec{2024, 1}.child(k)), set);
        const auto mw = measure_weights(trained, set, P0).weights;
        const auto w = weight_components(P0, sp);
        errs[k] = std::max({std::abs(mw.m - w.m), std::abs(mw.q_xi - w.q_xi), std::abs(mw.q_eta - w.q_eta),
                            std::abs(mw.c_hat - w.c_hat)});
    });
    const double worst = *std::max_element(errs.begin(), errs.end());
    const double secs = elapsed_since(t0);
    return {worst < 0.05 && secs <= 600.0, "max |measured - closed form| = " + num(worst) + " over t = 0.1..0.9"};
}

Outcome transport_statistics() {
    const auto t0 = std::chrono::steady_clock::now();
    const ModelParams p(8, 1.5, 0.1);
    const auto f = fold(theory_transport(p, 5000, 200, 77), p);
    const auto theory = integrate_learnt(p, ScheduleKind::Linear, TimeGrid::uniform(100));
    double dm = 0, dx = 0, de = 0, dq = 0;
    for (std::size_t k = 0; k < theory.size(); ++k) {
        dm = std::max(dm, std::abs(f.M[k] - theory[k].M));
        dx = std::max(dx, std::abs(f.Q_xi[k] - theory[k].Q_xi));
        de = std::max(de, std::abs(f.Q_eta[k] - theory[k].Q_eta));
        dq = std::max(dq, std::abs(f.Q[k] - theory[k].q_total(p)));
    }
    const double worst = std::max({dm, dx, de, dq});
    const double secs = elapsed_since(t0);
    return {worst < 0.05 && std::abs(f.frac_plus - 0.5) <= 0.08 && secs <= 120.0,
            "max deviation over 101 nodes: M " + num(dm) + ", Q_xi " + num(dx) + ", Q_eta " + num(de) + ", Q " +
                num(dq) + "; frac_plus " + num(f.frac_plus)};
}

Outcome convergence() {
    std::vector<double> ns, gm, gc, eps;
    const auto sp = eval_schedule(ScheduleKind::Linear, 0.5);
    const auto grid = TimeGrid::uniform(1000, Scheme::RK4);
    for (int n = 32; n <= 512; n *= 2) {
        const ModelParams p = P0.with_n(n);
        const auto g = convergence_gaps(p, sp);
        ns.push_back(n);
        gm.push_back(g.gap_m);
        gc.push_back(g.gap_c);
        eps.push_back(std::abs(integrate_error_flow(p, ScheduleKind::Linear, grid).back().eps_m));
    }
    const double a = slope_loglog(ns, gm), b = slope_loglog(ns, gc), c = slope_loglog(ns, eps);
    const bool ok = std::abs(a + 1) <= 0.2 && std::abs(b + 1) <= 0.2 && std::abs(c + 1) <= 0.2;
    return {ok, "slopes gap_m " + num(a) + ", gap_c " + num(b) + ", |eps_m1| " + num(c)};
}

Outcome sign_stability() {
    const ModelParams p(8, 1.5, 0.1);
    const auto f = fold(theory_transport(p, 5000, 200, 91), p);
    return {f.steady >= 0.99, "never-flipping fraction " + num(f.steady)};
}

Outcome gradient_suite() {
    double worst = 0.0;
    int config = 0;
    for (auto phi : {Activation::Tanh, Activation::Erf})
        for (int rep = 0; rep < 10; ++rep, ++config) {
            const std::size_t d = 50;
            const ModelParams p(1 + (rep + 1) % 6, 0.4 + 0.25 * rep, 0.02 + 0.1 * rep);
            const auto set = sample_training_set(d, p, {500, static_cast<std::uint64_t>(config)});
            DaeParams dae{gaussian_vector(d, 0.8 / std::sqrt(double(d)), {501, static_cast<std::uint64_t>(config)}),
                          0.1 * rep - 0.3, rep % 4 != 1, phi};
            const auto sp = eval_schedule(rep % 2 ? ScheduleKind::Trigonometric : ScheduleKind::Linear, 0.07 + 0.09 * rep);
            const auto g = risk_gradient(dae, set, sp, p.lambda());
            const double h = 1e-6;
            auto fd = [&](double& x) {
                const double x0 = x;
                x = x0 + h;
                const double hi = risk(dae, set, sp, p.lambda());
                x = x0 - h;
                const double lo = risk(dae, set, sp, p.lambda());
                x = x0;
                return (hi - lo) / (2 * h);
            };
            Vec num_w(d);
            double scale = 0.0;
            for (std::size_t i = 0; i < d; ++i) {
                num_w[i] = fd(dae.w[i]);
                scale = std::max(scale, std::abs(num_w[i]));
            }
            for (std::size_t i = 0; i < d; ++i)
                worst = std::max(worst, std::abs(g.grad_w[i] - num_w[i]) / std::max(std::abs(num_w[i]), 1e-3 * scale));
            if (dae.has_skip) {
                const double nc = fd(dae.c);
                worst = std::max(worst, std::abs(g.grad_c - nc) / std::max(std::abs(nc), 1e-3));
            }
        }
    return {worst < 1e-4, "max relative error " + num(worst) + " over 20 configs"};
}

template <class T>
bool same_bits(const T& a, const T& b) {
    return std::memcmp(&a, &b, sizeof(T)) == 0;
}

Outcome imbalanced() {
    bool identical = true;
    for (auto kind : kKinds) {
        const ModelParams a = P0.with_rho(0.24), b = P0.with_rho(0.5);
        for (int i = 0; i <= 100; ++i) {
            const auto sp = eval_schedule(kind, 0.01 * i);
            const auto wa = weight_components(a, sp), wb = weight_components(b, sp);
            identical = identical && same_bits(wa.m, wb.m) && same_bits(wa.q_xi, wb.q_xi) &&
                        same_bits(wa.q_eta, wb.q_eta) && same_bits(wa.c_hat, wb.c_hat);
        }
        const auto fa = integrate_learnt(a, kind, TimeGrid::uniform(100));
        const auto fb = integrate_learnt(b, kind, TimeGrid::uniform(100));
        for (std::size_t k = 0; k < fa.size(); ++k)
            identical = identical && same_bits(fa[k].M, fb[k].M) && same_bits(fa[k].Q_xi, fb[k].Q_xi) &&
                        same_bits(fa[k].Q_eta, fb[k].Q_eta) && same_bits(fa[k].log_Qperp, fb[k].log_Qperp);
    }
    const ModelParams p = P0.with_rho(0.24).with_n(8);
    const auto f = fold(theory_transport(p, 5000, 200, 313), p);
    return {identical && std::abs(f.frac_plus - 0.5) <= 0.08,
            std::string(identical ? "theory bit-identical" : "theory differs") + ", frac_plus at rho 0.24 " +
                num(f.frac_plus)};
}

}  // namespace

int main() {
    criterion("closed-form-vs-saddle-oracle", oracle_grid);
    criterion("exact-flow-endpoint", exact_endpoint);
    criterion("noskip-closed-form", noskip_closed_form);
    criterion("mse-theta-1-over-n", mse_rates);
    criterion("trained-weights-desk-scale", trained_weights);
    criterion("transport-statistics-desk-scale", transport_statistics);
    criterion("convergence-slopes", convergence);
    criterion("sign-stability", sign_stability);
    criterion("gradient-suite", gradient_suite);
    criterion("imbalanced-invariance", imbalanced);
    std::printf("%d of 10 criteria failed\n", failures);
    return failures == 0 ? 0 : 1;
}
