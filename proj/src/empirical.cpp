#include "flowlab/empirical.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numbers>
#include <random>
#include <string>

#include "flowlab/errors.hpp"
#include "flowlab/parallel.hpp"

namespace flowlab {

double dot(const Vec& a, const Vec& b) {
    double s = 0.0;
    const std::size_t d = a.size();
    for (std::size_t i = 0; i < d; ++i) s += a[i] * b[i];
    return s;
}

namespace {

void check_dims(const Vec& w, const TrainingSet& set) {
    if (w.size() != set.d) {
        throw DomainError("weight dimension " + std::to_string(w.size()) + " does not match d = " +
                          std::to_string(set.d));
    }
}

Vec interpolate(const Vec& x0, const Vec& x1, const SchedulePoint& sp) {
    Vec xt(x0.size());
    for (std::size_t i = 0; i < xt.size(); ++i) xt[i] = sp.alpha * x0[i] + sp.beta * x1[i];
    return xt;
}

// Solves the 3×3 system g a = r by Gaussian elimination with partial pivoting.
std::array<double, 3> solve3(std::array<std::array<double, 3>, 3> g, std::array<double, 3> r) {
    for (int col = 0; col < 3; ++col) {
        int piv = col;
        for (int row = col + 1; row < 3; ++row)
            if (std::abs(g[row][col]) > std::abs(g[piv][col])) piv = row;
        if (g[piv][col] == 0.0) throw DomainError("span(mu, xi, eta) is degenerate");
        std::swap(g[col], g[piv]);
        std::swap(r[col], r[piv]);
        for (int row = col + 1; row < 3; ++row) {
            const double f = g[row][col] / g[col][col];
            for (int k = col; k < 3; ++k) g[row][k] -= f * g[col][k];
            r[row] -= f * r[col];
        }
    }
    std::array<double, 3> a{};
    for (int row = 2; row >= 0; --row) {
        double s = r[row];
        for (int k = row + 1; k < 3; ++k) s -= g[row][k] * a[k];
        a[row] = s / g[row][row];
    }
    return a;
}

std::array<std::array<double, 3>, 3> span_gram(const TrainingSet& set) {
    const std::array<const Vec*, 3> v{&set.mu, &set.xi, &set.eta};
    std::array<std::array<double, 3>, 3> g{};
    for (int i = 0; i < 3; ++i)
        for (int j = i; j < 3; ++j) g[i][j] = g[j][i] = dot(*v[i], *v[j]);
    return g;
}

}  // namespace

TrainingSet sample_training_set(std::size_t d, const ModelParams& params, const RngSpec& rng) {
    if (d < 16) throw DomainError("dimension must be at least 16");
    auto eng = make_engine(rng);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::bernoulli_distribution plus(params.rho());

    TrainingSet set;
    set.d = d;
    set.n = params.n();
    set.mu.resize(d);
    for (auto& x : set.mu) x = normal(eng);
    const double scale = std::sqrt(static_cast<double>(d) / dot(set.mu, set.mu));
    for (auto& x : set.mu) x *= scale;

    const double sigma = params.sigma();
    set.s.resize(params.n());
    set.x1.assign(params.n(), Vec(d));
    set.x0.assign(params.n(), Vec(d));
    for (int k = 0; k < params.n(); ++k) {
        set.s[k] = plus(eng) ? 1 : -1;
        for (std::size_t i = 0; i < d; ++i) set.x1[k][i] = set.s[k] * set.mu[i] + sigma * normal(eng);
        for (std::size_t i = 0; i < d; ++i) set.x0[k][i] = normal(eng);
    }
    set.xi.assign(d, 0.0);
    set.eta.assign(d, 0.0);
    for (int k = 0; k < params.n(); ++k) {
        const double s = set.s[k];
        for (std::size_t i = 0; i < d; ++i) {
            set.xi[i] += s * set.x0[k][i];
            set.eta[i] += s * (set.x1[k][i] - s * set.mu[i]);
        }
    }
    return set;
}

Activation parse_activation(std::string_view name) {
    if (name == "tanh") return Activation::Tanh;
    if (name == "erf") return Activation::Erf;
    if (name == "sign") return Activation::Sign;
    throw UsageError("unknown activation '" + std::string(name) + "' (expected tanh|erf|sign)");
}

std::string to_string(Activation phi) {
    switch (phi) {
    case Activation::Tanh: return "tanh";
    case Activation::Erf: return "erf";
    case Activation::Sign: return "sign";
    }
    return "?";
}

double activate(Activation phi, double u) {
    switch (phi) {
    case Activation::Tanh: return std::tanh(u);
    case Activation::Erf: return std::erf(u);
    case Activation::Sign: return u > 0.0 ? 1.0 : (u < 0.0 ? -1.0 : 0.0);
    }
    return 0.0;
}

double activate_derivative(Activation phi, double u) {
    switch (phi) {
    case Activation::Tanh: {
        const double th = std::tanh(u);
        return 1.0 - th * th;
    }
    case Activation::Erf: return 2.0 / std::sqrt(std::numbers::pi) * std::exp(-u * u);
    case Activation::Sign: return 0.0;
    }
    return 0.0;
}

double risk(const DaeParams& p, const TrainingSet& set, const SchedulePoint& sp, double lambda) {
    check_dims(p.w, set);
    const double c = p.has_skip ? p.c : 0.0;
    double total = 0.0;
    for (int k = 0; k < set.n; ++k) {
        const Vec xt = interpolate(set.x0[k], set.x1[k], sp);
        const double ph = activate(p.phi, dot(p.w, xt));
        for (std::size_t i = 0; i < set.d; ++i) {
            const double r = c * xt[i] + p.w[i] * ph - set.x1[k][i];
            total += r * r;
        }
    }
    return total + 0.5 * lambda * dot(p.w, p.w);
}

namespace {

// Scalars of one sample that the risk and its gradient depend on.
struct SampleTerms {
    double u;   // wᵀx
    double wy;  // wᵀy
    double xx;  // ∥x∥²
    double yx;  // yᵀx
    double yy;  // ∥y∥²
};

// Accumulates the gradient given per-sample inputs x and targets y:
// grad_w = Σ (a x + b y) + (2Σφ² + λ) w with a = 2(φc + (cu + φ∥w∥² − wᵀy)φ′), b = −2φ.
// Returns the risk as a by-product.
double gradient_pass(const DaeParams& p, const std::vector<Vec>& xs, const std::vector<Vec>& ys,
                     const std::vector<SampleTerms>& fixed, double lambda, Vec& grad_w, double& grad_c) {
    const std::size_t d = p.w.size();
    const double c = p.has_skip ? p.c : 0.0;
    const double ww = dot(p.w, p.w);
    std::fill(grad_w.begin(), grad_w.end(), 0.0);
    grad_c = 0.0;
    double phi_sq = 0.0;
    double loss = 0.0;
    for (std::size_t k = 0; k < xs.size(); ++k) {
        const Vec& x = xs[k];
        const Vec& y = ys[k];
        double u = 0.0, wy = 0.0;
        for (std::size_t i = 0; i < d; ++i) {
            u += p.w[i] * x[i];
            wy += p.w[i] * y[i];
        }
        const double ph = activate(p.phi, u);
        const double dph = activate_derivative(p.phi, u);
        const double a = 2.0 * (ph * c + (c * u + ph * ww - wy) * dph);
        const double b = -2.0 * ph;
        for (std::size_t i = 0; i < d; ++i) grad_w[i] += a * x[i] + b * y[i];
        phi_sq += ph * ph;
        const SampleTerms& f = fixed[k];
        if (p.has_skip) grad_c += 2.0 * (c * f.xx + ph * u - f.yx);
        loss += c * c * f.xx + ph * ph * ww + f.yy + 2.0 * c * ph * u - 2.0 * c * f.yx - 2.0 * ph * wy;
    }
    const double shrink = 2.0 * phi_sq + lambda;
    for (std::size_t i = 0; i < d; ++i) grad_w[i] += shrink * p.w[i];
    return loss + 0.5 * lambda * ww;
}

struct Batch {
    std::vector<Vec> xs;
    std::vector<Vec> ys;
    std::vector<SampleTerms> fixed;
};

Batch make_batch(const TrainingSet& set, const SchedulePoint& sp) {
    Batch b;
    for (int k = 0; k < set.n; ++k) {
        Vec xt = interpolate(set.x0[k], set.x1[k], sp);
        SampleTerms f{0.0, 0.0, dot(xt, xt), dot(set.x1[k], xt), dot(set.x1[k], set.x1[k])};
        b.fixed.push_back(f);
        b.xs.push_back(std::move(xt));
        b.ys.push_back(set.x1[k]);
    }
    return b;
}

}  // namespace

RiskGradient risk_gradient(const DaeParams& p, const TrainingSet& set, const SchedulePoint& sp, double lambda) {
    check_dims(p.w, set);
    const Batch b = make_batch(set, sp);
    RiskGradient g;
    g.grad_w.assign(set.d, 0.0);
    gradient_pass(p, b.xs, b.ys, b.fixed, lambda, g.grad_w, g.grad_c);
    return g;
}

DaeParams initial_params(std::size_t d, Activation phi, bool has_skip, const RngSpec& rng) {
    DaeParams p;
    p.w = gaussian_vector(d, 0.1 / std::sqrt(static_cast<double>(d)), rng);
    p.c = 0.0;
    p.has_skip = has_skip;
    p.phi = phi;
    return p;
}

DaeParams train_dae(const TrainingSet& set, const SchedulePoint& sp, double lambda, const AdamConfig& cfg,
                    const DaeParams& p0, const RngSpec& rng) {
    if (!(cfg.learning_rate > 0.0)) throw DomainError("learning rate must be positive");
    if (!(cfg.beta1 > 0.0 && cfg.beta1 < 1.0 && cfg.beta2 > 0.0 && cfg.beta2 < 1.0)) {
        throw DomainError("Adam betas must lie in (0, 1)");
    }
    DaeParams p = p0.w.empty() ? initial_params(set.d, p0.phi, p0.has_skip, rng) : p0;
    check_dims(p.w, set);
    if (!p.has_skip) p.c = 0.0;
    if (cfg.epochs == 0) return p;

    const Batch b = make_batch(set, sp);
    const std::size_t d = set.d;
    Vec grad(d), m1(d, 0.0), m2(d, 0.0);
    double gc = 0.0, c1 = 0.0, c2 = 0.0;
    double pow1 = 1.0, pow2 = 1.0;
    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        const double loss = gradient_pass(p, b.xs, b.ys, b.fixed, lambda, grad, gc);
        if (!std::isfinite(loss)) {
            throw DivergenceError("risk became non-finite at epoch " + std::to_string(epoch), epoch);
        }
        pow1 *= cfg.beta1;
        pow2 *= cfg.beta2;
        const double bc1 = 1.0 - pow1;
        const double bc2 = 1.0 - pow2;
        for (std::size_t i = 0; i < d; ++i) {
            m1[i] = cfg.beta1 * m1[i] + (1.0 - cfg.beta1) * grad[i];
            m2[i] = cfg.beta2 * m2[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
            p.w[i] -= cfg.learning_rate * (m1[i] / bc1) / (std::sqrt(m2[i] / bc2) + cfg.epsilon);
        }
        if (p.has_skip) {
            c1 = cfg.beta1 * c1 + (1.0 - cfg.beta1) * gc;
            c2 = cfg.beta2 * c2 + (1.0 - cfg.beta2) * gc * gc;
            p.c -= cfg.learning_rate * (c1 / bc1) / (std::sqrt(c2 / bc2) + cfg.epsilon);
        }
    }
    for (double x : p.w) {
        if (!std::isfinite(x)) throw DivergenceError("weights became non-finite", cfg.epochs);
    }
    return p;
}

MeasuredWeights measure_weights(const DaeParams& p, const TrainingSet& set, const ModelParams& params) {
    check_dims(p.w, set);
    const double d = static_cast<double>(set.d);
    const double n = params.n();
    const std::array<double, 3> proj{dot(p.w, set.mu), dot(p.w, set.xi), dot(p.w, set.eta)};

    MeasuredWeights out;
    out.weights.m = proj[0] / d;
    out.weights.q_xi = proj[1] / (n * d);
    out.weights.q_eta = proj[2] / (n * d * params.sigma2());
    out.weights.c_hat = p.has_skip ? p.c : 0.0;
    const double ww = dot(p.w, p.w);
    out.norm = ww / d;
    // ∥P w∥² = projᵀ G⁻¹ proj
    const auto a = solve3(span_gram(set), proj);
    const double in_span = a[0] * proj[0] + a[1] * proj[1] + a[2] * proj[2];
    out.residual = std::max(0.0, ww - in_span) / d;
    return out;
}

DaeParams fold_sign(const DaeParams& p, const TrainingSet& set) {
    check_dims(p.w, set);
    DaeParams q = p;
    if (dot(p.w, set.mu) < 0.0) {
        for (auto& x : q.w) x = -x;
    }
    return q;
}

DaeParams theory_built_model(const TrainingSet& set, const ModelParams& params, const SchedulePoint& sp,
                             Activation phi, bool has_skip) {
    const double d = static_cast<double>(set.d);
    const double n = params.n();
    double m, q_xi, q_eta, c;
    if (has_skip) {
        const TheoryWeights w = weight_components(params, sp);
        m = w.m;
        q_xi = w.q_xi;
        q_eta = w.q_eta;
        c = w.c_hat;
    } else {
        const NoSkipWeights w = weights_noskip(params);
        m = w.m;
        q_xi = 0.0;
        q_eta = w.q_eta;
        c = 0.0;
    }
    const auto a = solve3(span_gram(set), {d * m, n * d * q_xi, n * d * params.sigma2() * q_eta});
    DaeParams p;
    p.w.resize(set.d);
    for (std::size_t i = 0; i < set.d; ++i) p.w[i] = a[0] * set.mu[i] + a[1] * set.xi[i] + a[2] * set.eta[i];
    p.c = c;
    p.has_skip = has_skip;
    p.phi = phi;
    return p;
}

double denoiser_test_mse(const DaeParams& p, const TrainingSet& set, const ModelParams& params,
                         const SchedulePoint& sp, std::size_t samples, const RngSpec& rng) {
    check_dims(p.w, set);
    if (samples == 0) throw DomainError("need at least one test sample");
    auto eng = make_engine(rng);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::bernoulli_distribution plus(params.rho());
    const double c = p.has_skip ? p.c : 0.0;
    const std::size_t d = set.d;
    Vec x1(d), xt(d);
    double total = 0.0;
    for (std::size_t k = 0; k < samples; ++k) {
        const double s = plus(eng) ? 1.0 : -1.0;
        for (std::size_t i = 0; i < d; ++i) x1[i] = s * set.mu[i] + params.sigma() * normal(eng);
        for (std::size_t i = 0; i < d; ++i) xt[i] = sp.alpha * normal(eng) + sp.beta * x1[i];
        const double ph = activate(p.phi, dot(p.w, xt));
        double err = 0.0;
        for (std::size_t i = 0; i < d; ++i) {
            const double r = c * xt[i] + p.w[i] * ph - x1[i];
            err += r * r;
        }
        total += err / static_cast<double>(d);
    }
    return total / static_cast<double>(samples);
}

std::vector<Vec> sample_base_batch(std::size_t d, std::size_t count, const RngSpec& rng) {
    std::vector<Vec> out(count);
    for (std::size_t i = 0; i < count; ++i) out[i] = gaussian_vector(d, 1.0, rng.child(i));
    return out;
}

namespace {

// One Euler node: X ← X + δt (a X + b v φ(vᵀX)).
struct NodeStep {
    double a = 0.0;
    double b = 0.0;
    const Vec* v = nullptr;
    Activation phi = Activation::Tanh;
};

std::vector<Trajectory> run_transport(const std::vector<NodeStep>& steps, const TimeGrid& grid,
                                      const std::vector<Vec>& x0_batch, const TransportOptions& options) {
    const std::size_t nodes = grid.nodes().size();
    for (std::size_t k : options.keep_nodes) {
        if (k >= nodes) throw DomainError("keep node index out of range");
    }
    std::vector<Trajectory> out(x0_batch.size());
    parallel_for(x0_batch.size(), [&](std::size_t s) {
        Vec x = x0_batch[s];
        const std::size_t d = x.size();
        const double dd = static_cast<double>(d);
        for (const auto& probe : options.probes) {
            if (probe.size() != d) throw DomainError("probe dimension mismatch");
        }
        Trajectory tr;
        tr.overlaps.reserve(nodes);
        tr.norm2.reserve(nodes);
        auto record = [&](std::size_t k) {
            Vec ov(options.probes.size());
            for (std::size_t j = 0; j < ov.size(); ++j) ov[j] = dot(options.probes[j], x) / dd;
            tr.overlaps.push_back(std::move(ov));
            tr.norm2.push_back(dot(x, x) / dd);
            if (std::find(options.keep_nodes.begin(), options.keep_nodes.end(), k) != options.keep_nodes.end()) {
                tr.kept.push_back(x);
            }
        };
        record(0);
        for (std::size_t k = 0; k + 1 < nodes; ++k) {
            const NodeStep& st = steps[k];
            if (st.v->size() != d) throw DomainError("model dimension mismatch");
            const double pre = dot(*st.v, x);
            tr.preactivation.push_back(pre / dd);
            const double h = grid.dt(k);
            const double gain = 1.0 + h * st.a;
            const double push = h * st.b * activate(st.phi, pre);
            bool finite = true;
            for (std::size_t i = 0; i < d; ++i) {
                x[i] = gain * x[i] + push * (*st.v)[i];
                finite = finite && std::isfinite(x[i]);
            }
            if (!finite) {
                throw DivergenceError("transported state became non-finite at node " + std::to_string(k + 1), k + 1);
            }
            record(k + 1);
        }
        tr.endpoint = std::move(x);
        out[s] = std::move(tr);
    });
    return out;
}

void check_euler(const TimeGrid& grid) {
    if (grid.scheme() != Scheme::Euler) throw DomainError("transport requires an Euler grid");
}

}  // namespace

std::vector<Trajectory> transport(const std::vector<DaeParams>& models, const TimeGrid& grid, ScheduleKind kind,
                                  const std::vector<Vec>& x0_batch, const TransportOptions& options) {
    check_euler(grid);
    if (models.size() != grid.steps()) {
        throw DomainError("need one model per step: " + std::to_string(grid.steps()) + " steps, " +
                          std::to_string(models.size()) + " models");
    }
    std::vector<NodeStep> steps(models.size());
    for (std::size_t k = 0; k < models.size(); ++k) {
        const SchedulePoint sp = eval_schedule(kind, grid.nodes()[k]);
        const double c = models[k].has_skip ? models[k].c : 0.0;
        const double rate = sp.alpha_dot / sp.alpha;
        steps[k] = {sp.beta_dot * c + rate * (1.0 - c * sp.beta), sp.wronskian / sp.alpha, &models[k].w,
                    models[k].phi};
    }
    return run_transport(steps, grid, x0_batch, options);
}

std::vector<Trajectory> transport_exact(const Vec& mu, double sigma, const TimeGrid& grid, ScheduleKind kind,
                                        const std::vector<Vec>& x0_batch, const TransportOptions& options,
                                        Activation phi) {
    check_euler(grid);
    if (!(sigma > 0.0)) throw DomainError("sigma must be positive");
    const double s2 = sigma * sigma;
    std::vector<NodeStep> steps(grid.steps());
    for (std::size_t k = 0; k < steps.size(); ++k) {
        const SchedulePoint sp = eval_schedule(kind, grid.nodes()[k]);
        const double den = sp.alpha * sp.alpha + sp.beta * sp.beta * s2;
        const double drift = sp.beta_dot * sp.beta * s2 / den + sp.alpha_dot * sp.alpha / den;
        steps[k] = {drift, sp.wronskian * sp.alpha / den, &mu, phi};
    }
    return run_transport(steps, grid, x0_batch, options);
}

PcaEstimate pca_mean_estimate(const TrainingSet& set) {
    const int n = set.n;
    if (n < 2) throw DomainError("PCA estimate needs n >= 2");
    const double d = static_cast<double>(set.d);
    std::vector<double> gram(static_cast<std::size_t>(n) * n);
    for (int i = 0; i < n; ++i)
        for (int j = i; j < n; ++j)
            gram[i * n + j] = gram[j * n + i] = dot(set.x1[i], set.x1[j]) / d;

    // Fixed, generic start vector (not orthogonal to any structured eigenvector).
    std::vector<double> v(n), next(n);
    for (int i = 0; i < n; ++i) v[i] = 1.0 + static_cast<double>(splitmix64(i) >> 11) * 0x1.0p-53;
    auto normalize = [](std::vector<double>& x) {
        double s = 0.0;
        for (double e : x) s += e * e;
        s = std::sqrt(s);
        for (double& e : x) e /= s;
        return s;
    };
    normalize(v);
    const int max_iter = 100000;
    double eig = 0.0, change = 1.0;
    int it = 0;
    for (; it < max_iter; ++it) {
        for (int i = 0; i < n; ++i) {
            double s = 0.0;
            for (int j = 0; j < n; ++j) s += gram[i * n + j] * v[j];
            next[i] = s;
        }
        eig = normalize(next);
        change = 0.0;
        for (int i = 0; i < n; ++i) change = std::max(change, std::abs(next[i] - v[i]));
        v.swap(next);
        if (change < 1e-13) break;
    }
    if (it == max_iter) throw ConvergenceError("PCA power iteration did not converge", change);

    PcaEstimate out;
    out.eigenvalue = eig;
    out.estimate.assign(set.d, 0.0);
    for (int k = 0; k < n; ++k)
        for (std::size_t i = 0; i < set.d; ++i) out.estimate[i] += v[k] * set.x1[k][i];
    const double norm2 = dot(out.estimate, out.estimate);
    if (!(norm2 > 0.0)) throw UndefinedValueError("PCA direction is zero");
    double scale = std::sqrt(d / norm2);
    if (dot(out.estimate, set.mu) < 0.0) scale = -scale;
    for (auto& x : out.estimate) x *= scale;
    out.cosine_to_mu = dot(out.estimate, set.mu) / d;
    return out;
}

ClusterStats generated_cluster_stats(const std::vector<Vec>& endpoints, const TrainingSet& set,
                                     const ModelParams& params) {
    ClusterStats st;
    st.count = endpoints.size();
    const std::size_t d = set.d;
    const double dd = static_cast<double>(d);
    Vec plus(d, 0.0), minus(d, 0.0);
    std::size_t np = 0, nm = 0;
    for (const auto& x : endpoints) {
        if (x.size() != d) throw DomainError("endpoint dimension mismatch");
        if (dot(x, set.mu) >= 0.0) {
            ++np;
            for (std::size_t i = 0; i < d; ++i) plus[i] += x[i];
        } else {
            ++nm;
            for (std::size_t i = 0; i < d; ++i) minus[i] += x[i];
        }
    }
    const double nan = std::numeric_limits<double>::quiet_NaN();
    if (st.count == 0) {
        st.mse = st.cosine = st.M = st.Q_xi = st.Q_eta = st.mse_plus = st.mse_minus = nan;
        return st;
    }
    st.frac_plus = static_cast<double>(np) / st.count;
    st.frac_minus = static_cast<double>(nm) / st.count;

    auto branch_mse = [&](const Vec& sum, std::size_t cnt, double sgn) {
        if (cnt == 0) return nan;
        double e = 0.0;
        for (std::size_t i = 0; i < d; ++i) {
            const double r = sum[i] / cnt - sgn * set.mu[i];
            e += r * r;
        }
        return e / dd;
    };
    st.mse_plus = branch_mse(plus, np, 1.0);
    st.mse_minus = branch_mse(minus, nm, -1.0);

    Vec mean(d);
    for (std::size_t i = 0; i < d; ++i) mean[i] = (plus[i] - minus[i]) / st.count;
    double e = 0.0;
    for (std::size_t i = 0; i < d; ++i) e += (mean[i] - set.mu[i]) * (mean[i] - set.mu[i]);
    st.mse = e / dd;
    const double mm = dot(mean, mean);
    st.M = dot(mean, set.mu) / dd;
    st.cosine = mm > 0.0 ? st.M / std::sqrt(mm / dd) : nan;
    st.Q_xi = dot(mean, set.xi) / (params.n() * dd);
    st.Q_eta = dot(mean, set.eta) / (params.n() * dd * params.sigma2());
    return st;
}

}  // namespace flowlab
