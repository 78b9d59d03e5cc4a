#include "flowlab/harness.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <ostream>
#include <random>
#include <sstream>
#include <stdexcept>

#include "flowlab/errors.hpp"
#include "flowlab/flow.hpp"
#include "flowlab/parallel.hpp"
#include "flowlab/theory.hpp"
#include "json.hpp"

#ifndef FLOWLAB_VERSION
#define FLOWLAB_VERSION "0.0.0"
#endif

namespace flowlab {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::string fmt(double v) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return buf;
}

// A CSV cell: numbers go through fmt, strings are written verbatim.
struct Cell {
    Cell(double v) : text(fmt(v)) {}
    Cell(int v) : text(std::to_string(v)) {}
    Cell(std::size_t v) : text(std::to_string(v)) {}
    Cell(const char* s) : text(s) {}
    Cell(std::string s) : text(std::move(s)) {}
    std::string text;
};

class Table {
public:
    explicit Table(std::vector<std::string> header) : header_(std::move(header)) {}

    void row(std::vector<Cell> cells) {
        if (cells.size() != header_.size()) throw std::logic_error("CSV row width does not match header");
        std::string line;
        for (std::size_t i = 0; i < cells.size(); ++i) {
            if (i) line += ',';
            line += cells[i].text;
        }
        rows_.push_back(std::move(line));
    }

    std::string str() const {
        std::string out;
        for (std::size_t i = 0; i < header_.size(); ++i) {
            if (i) out += ',';
            out += header_[i];
        }
        out += '\n';
        for (const auto& r : rows_) out += r + '\n';
        return out;
    }

private:
    std::vector<std::string> header_;
    std::vector<std::string> rows_;
};

void write_atomic(const fs::path& path, const std::string& content) {
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) throw std::runtime_error("cannot write " + tmp.string());
        f << content;
        if (!f.flush()) throw std::runtime_error("write failed for " + tmp.string());
    }
    fs::rename(tmp, path);
}

struct Run {
    const ExperimentConfig& cfg;
    ModelParams params;
    std::vector<std::string> files;

    void write(const std::string& group, const Table& table) {
        const std::string name = cfg.experiment + "_" + group + ".csv";
        write_atomic(fs::path(cfg.out_dir) / name, table.str());
        files.push_back(name);
    }

    RngSpec rng(std::uint64_t stream) const { return RngSpec{cfg.seed, 0}.child(stream); }
    bool simulate() const { return cfg.batch > 0; }
};

double slope_loglog(const std::vector<double>& x, const std::vector<double>& y) {
    const std::size_t k = x.size();
    if (k < 2) return kNaN;
    double mx = 0, my = 0;
    for (std::size_t i = 0; i < k; ++i) {
        mx += std::log(x[i]) / k;
        my += std::log(y[i]) / k;
    }
    double sxy = 0, sxx = 0;
    for (std::size_t i = 0; i < k; ++i) {
        sxy += (std::log(x[i]) - mx) * (std::log(y[i]) - my);
        sxx += (std::log(x[i]) - mx) * (std::log(x[i]) - mx);
    }
    return sxy / sxx;
}

double cosine_or_nan(const TheoryWeights& w, const ModelParams& p) {
    return weight_norm(w, p) > 0.0 ? weight_cosine(w, p) : kNaN;
}

std::vector<double> uniform_times(std::size_t steps) {
    std::vector<double> t(steps + 1);
    for (std::size_t k = 0; k <= steps; ++k) t[k] = static_cast<double>(k) / steps;
    t.back() = 1.0;
    return t;
}

// One model per transport step, either built from the closed forms or
// trained by Adam on the shared training set.
std::vector<DaeParams> node_models(const Run& run, const TrainingSet& set, const ModelParams& params,
                                   const TimeGrid& grid, bool has_skip, std::uint64_t stream) {
    const auto& cfg = run.cfg;
    std::vector<DaeParams> models(grid.steps());
    parallel_for(grid.steps(), [&](std::size_t k) {
        const SchedulePoint sp = eval_schedule(cfg.kind, grid.nodes()[k]);
        if (cfg.models == "trained") {
            DaeParams p0;
            p0.phi = cfg.phi;
            p0.has_skip = has_skip;
            models[k] = fold_sign(train_dae(set, sp, params.lambda(), cfg.adam, p0, run.rng(stream).child(k)), set);
        } else {
            models[k] = theory_built_model(set, params, sp, cfg.phi, has_skip);
        }
    });
    return models;
}

// Branch-folded averages of the transported summary statistics at each node.
struct FoldedStats {
    std::vector<double> M, Q_xi, Q_eta, Q, angle;
    double sign_stable = 0.0;
};

FoldedStats fold_trajectories(const std::vector<Trajectory>& tr, const ModelParams& params) {
    FoldedStats out;
    if (tr.empty()) return out;
    const std::size_t nodes = tr.front().norm2.size();
    const double cnt = static_cast<double>(tr.size());
    out.M.assign(nodes, 0.0);
    out.Q_xi.assign(nodes, 0.0);
    out.Q_eta.assign(nodes, 0.0);
    out.Q.assign(nodes, 0.0);
    out.angle.assign(nodes, 0.0);
    std::size_t stable = 0;
    for (const auto& s : tr) {
        const double sgn = s.overlaps.back()[0] >= 0.0 ? 1.0 : -1.0;
        for (std::size_t k = 0; k < nodes; ++k) {
            const auto& ov = s.overlaps[k];
            out.M[k] += sgn * ov[0] / cnt;
            out.Q_xi[k] += sgn * ov[1] / (params.n() * cnt);
            out.Q_eta[k] += sgn * ov[2] / (params.n() * params.sigma2() * cnt);
            out.Q[k] += s.norm2[k] / cnt;
            out.angle[k] += sgn * ov[0] / std::sqrt(s.norm2[k]) / cnt;
        }
        bool same = true;
        for (double v : s.preactivation) same = same && ((v > 0.0) == (s.preactivation.front() > 0.0));
        stable += same;
    }
    out.sign_stable = stable / cnt;
    return out;
}

// Top-k principal directions (unit d-vectors) of a centred point cloud,
// by orthogonal iteration on the N×N Gram matrix.
std::vector<Vec> principal_directions(const std::vector<const Vec*>& pts, std::size_t k, Vec& mean) {
    const std::size_t n = pts.size();
    const std::size_t d = pts.front()->size();
    mean.assign(d, 0.0);
    for (const Vec* p : pts)
        for (std::size_t i = 0; i < d; ++i) mean[i] += (*p)[i] / n;
    std::vector<Vec> centred(n, Vec(d));
    for (std::size_t a = 0; a < n; ++a)
        for (std::size_t i = 0; i < d; ++i) centred[a][i] = (*pts[a])[i] - mean[i];
    std::vector<double> gram(n * n);
    parallel_for(n, [&](std::size_t a) {
        for (std::size_t b = a; b < n; ++b) gram[a * n + b] = dot(centred[a], centred[b]);
    });
    for (std::size_t a = 0; a < n; ++a)
        for (std::size_t b = 0; b < a; ++b) gram[a * n + b] = gram[b * n + a];

    std::vector<Vec> v(k, Vec(n));
    for (std::size_t j = 0; j < k; ++j)
        for (std::size_t a = 0; a < n; ++a) v[j][a] = static_cast<double>(splitmix64(a * 31 + j) >> 11) * 0x1.0p-53 - 0.5;
    auto orthonormalise = [&](std::vector<Vec>& vs) {
        for (std::size_t j = 0; j < vs.size(); ++j) {
            for (std::size_t i = 0; i < j; ++i) {
                const double c = dot(vs[j], vs[i]);
                for (std::size_t a = 0; a < n; ++a) vs[j][a] -= c * vs[i][a];
            }
            const double nv = std::sqrt(dot(vs[j], vs[j]));
            for (auto& x : vs[j]) x /= nv;
        }
    };
    orthonormalise(v);
    for (int it = 0; it < 20000; ++it) {
        std::vector<Vec> next(k, Vec(n, 0.0));
        for (std::size_t j = 0; j < k; ++j)
            for (std::size_t a = 0; a < n; ++a) {
                double s = 0.0;
                for (std::size_t b = 0; b < n; ++b) s += gram[a * n + b] * v[j][b];
                next[j][a] = s;
            }
        orthonormalise(next);
        double change = 0.0;
        for (std::size_t j = 0; j < k; ++j) change = std::max(change, 1.0 - std::abs(dot(next[j], v[j])));
        v.swap(next);
        if (change < 1e-14) break;
    }
    std::vector<Vec> dirs(k, Vec(d, 0.0));
    for (std::size_t j = 0; j < k; ++j) {
        for (std::size_t a = 0; a < n; ++a)
            for (std::size_t i = 0; i < d; ++i) dirs[j][i] += v[j][a] * centred[a][i];
        const double nd = std::sqrt(dot(dirs[j], dirs[j]));
        for (auto& x : dirs[j]) x /= nd;
        // Deterministic orientation: largest-magnitude coordinate positive.
        const auto big = std::max_element(dirs[j].begin(), dirs[j].end(),
                                          [](double a, double b) { return std::abs(a) < std::abs(b); });
        if (*big < 0)
            for (auto& x : dirs[j]) x = -x;
    }
    return dirs;
}

std::pair<double, double> project2(const Vec& x, const Vec& mean, const std::vector<Vec>& dirs) {
    double a = 0.0, b = 0.0;
    const double scale = 1.0 / std::sqrt(static_cast<double>(x.size()));
    for (std::size_t i = 0; i < x.size(); ++i) {
        a += (x[i] - mean[i]) * dirs[0][i];
        b += (x[i] - mean[i]) * dirs[1][i];
    }
    return {a * scale, b * scale};
}

// Fresh target-mixture samples around the training set's μ.
std::vector<Vec> target_samples(const TrainingSet& set, const ModelParams& params, std::size_t count,
                                const RngSpec& rng) {
    auto eng = make_engine(rng);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::bernoulli_distribution plus(params.rho());
    std::vector<Vec> out(count, Vec(set.d));
    for (auto& x : out) {
        const double s = plus(eng) ? 1.0 : -1.0;
        for (std::size_t i = 0; i < set.d; ++i) x[i] = s * set.mu[i] + params.sigma() * normal(eng);
    }
    return out;
}

Vec span_vector(const TrainingSet& set, double M, double Q_xi, double Q_eta, double sign) {
    Vec v(set.d);
    for (std::size_t i = 0; i < set.d; ++i) v[i] = sign * (M * set.mu[i] + Q_xi * set.xi[i] + Q_eta * set.eta[i]);
    return v;
}

// ---------------------------------------------------------------- experiments

// Trained-weight components against the closed forms (with or without skip).
void weights_experiment(Run& run, bool has_skip) {
    const auto& cfg = run.cfg;
    const ModelParams& p = run.params;
    Table theory({"t", "m", "q_xi", "q_eta", "c_hat", "norm", "cosine"});
    for (double t : uniform_times(100)) {
        const SchedulePoint sp = eval_schedule(cfg.kind, t);
        TheoryWeights w;
        if (has_skip) {
            w = weight_components(p, sp);
        } else {
            const auto ns = weights_noskip(p);
            w = {t, ns.m, 0.0, ns.q_eta, 0.0};
        }
        theory.row({t, w.m, w.q_xi, w.q_eta, w.c_hat, weight_norm(w, p), cosine_or_nan(w, p)});
    }
    run.write("theory", theory);
    if (!run.simulate()) return;

    const TrainingSet set = sample_training_set(cfg.d, p, run.rng(1));
    std::vector<MeasuredWeights> measured(cfg.times.size());
    parallel_for(cfg.times.size(), [&](std::size_t k) {
        const SchedulePoint sp = eval_schedule(cfg.kind, cfg.times[k]);
        DaeParams p0;
        p0.phi = cfg.phi;
        p0.has_skip = has_skip;
        const DaeParams trained = fold_sign(train_dae(set, sp, p.lambda(), cfg.adam, p0, run.rng(2).child(k)), set);
        measured[k] = measure_weights(trained, set, p);
    });
    Table sim({"t", "theory_m", "theory_q_xi", "theory_q_eta", "theory_c_hat", "theory_norm", "theory_cosine", "sim_m",
               "sim_q_xi", "sim_q_eta", "sim_c_hat", "sim_norm", "sim_cosine", "sim_residual"});
    for (std::size_t k = 0; k < cfg.times.size(); ++k) {
        const double t = cfg.times[k];
        const SchedulePoint sp = eval_schedule(cfg.kind, t);
        TheoryWeights w;
        if (has_skip) {
            w = weight_components(p, sp);
        } else {
            const auto ns = weights_noskip(p);
            w = {t, ns.m, 0.0, ns.q_eta, 0.0};
        }
        const auto& mw = measured[k];
        const double sim_cos = mw.norm > 0 ? mw.weights.m / std::sqrt(mw.norm) : kNaN;
        sim.row({t, w.m, w.q_xi, w.q_eta, w.c_hat, weight_norm(w, p), cosine_or_nan(w, p), mw.weights.m,
                 mw.weights.q_xi, mw.weights.q_eta, mw.weights.c_hat, mw.norm, sim_cos, mw.residual});
    }
    run.write("sim", sim);
}

// Transports a batch through the per-node models and returns the raw trajectories.
struct TransportRun {
    TrainingSet set;
    std::vector<Trajectory> traj;
};

TransportRun simulate_flow(const Run& run, const ModelParams& params, const TimeGrid& grid, bool has_skip,
                           std::uint64_t stream, const std::vector<std::size_t>& keep = {}) {
    const auto& cfg = run.cfg;
    TransportRun out{sample_training_set(cfg.d, params, run.rng(stream)), {}};
    const auto models = node_models(run, out.set, params, grid, has_skip, stream + 1);
    const auto x0 = sample_base_batch(cfg.d, cfg.batch, run.rng(stream + 2));
    TransportOptions opt;
    opt.probes = {out.set.mu, out.set.xi, out.set.eta};
    opt.keep_nodes = keep;
    out.traj = transport(models, grid, cfg.kind, x0, opt);
    return out;
}

void flow_stats(Run& run) {
    const auto& cfg = run.cfg;
    const ModelParams& p = run.params;
    const TimeGrid grid = TimeGrid::uniform(cfg.grid_n, Scheme::Euler);
    const auto disc = integrate_learnt(p, cfg.kind, grid, 1);
    const auto ode = integrate_learnt(p, cfg.kind, TimeGrid::uniform(cfg.grid_n, Scheme::RK4), 1);
    Table theory({"t", "M", "Q_xi", "Q_eta", "Q", "angle", "log_Qperp", "M_ode", "Q_xi_ode", "Q_eta_ode", "Q_ode",
                  "angle_ode"});
    for (std::size_t k = 0; k < disc.size(); ++k) {
        const auto& a = disc[k];
        const auto& b = ode[k];
        const double qa = a.q_total(p), qb = b.q_total(p);
        theory.row({a.t, a.M, a.Q_xi, a.Q_eta, qa, a.M / std::sqrt(qa), a.log_Qperp, b.M, b.Q_xi, b.Q_eta, qb,
                    b.M / std::sqrt(qb)});
    }
    run.write("theory", theory);
    if (!run.simulate()) return;

    const auto sim_run = simulate_flow(run, p, grid, true, 10);
    const auto folded = fold_trajectories(sim_run.traj, p);
    Table sim({"t", "theory_M", "theory_Q_xi", "theory_Q_eta", "theory_Q", "theory_angle", "sim_M", "sim_Q_xi",
               "sim_Q_eta", "sim_Q", "sim_angle"});
    for (std::size_t k = 0; k < disc.size(); ++k) {
        const auto& a = disc[k];
        const double qa = a.q_total(p);
        sim.row({a.t, a.M, a.Q_xi, a.Q_eta, qa, a.M / std::sqrt(qa), folded.M[k], folded.Q_xi[k], folded.Q_eta[k],
                 folded.Q[k], folded.angle[k]});
    }
    run.write("sim", sim);

    std::vector<Vec> ends;
    for (const auto& s : sim_run.traj) ends.push_back(s.endpoint);
    const auto cs = generated_cluster_stats(ends, sim_run.set, p);
    const auto gm = generated_mean_metrics(disc.back(), p);
    Table summary({"quantity", "value"});
    summary.row({"frac_plus", cs.frac_plus});
    summary.row({"frac_minus", cs.frac_minus});
    summary.row({"sign_stable_fraction", folded.sign_stable});
    summary.row({"theory_mse", gm.mse});
    summary.row({"sim_mse", cs.mse});
    summary.row({"theory_cosine", gm.cosine});
    summary.row({"sim_cosine", cs.cosine});
    run.write("summary", summary);
}

void flow_pca(Run& run) {
    const auto& cfg = run.cfg;
    const ModelParams& p = run.params;
    const TimeGrid grid = TimeGrid::uniform(cfg.grid_n, Scheme::Euler);
    const auto disc = integrate_learnt(p, cfg.kind, grid, 1);
    // Cluster-mean trajectory, one row per node.
    Table theory({"t", "M", "Q_xi", "Q_eta"});
    for (const auto& s : disc) theory.row({s.t, s.M, s.Q_xi, s.Q_eta});
    run.write("theory", theory);

    std::vector<int> sweep = cfg.n_sweep;
    Table sweep_theory({"n", "M", "Q_xi", "Q_eta", "mse", "cosine"});
    for (int n : sweep) {
        const ModelParams pn = p.with_n(n);
        const auto fin = integrate_learnt(pn, cfg.kind, grid, 1).back();
        const auto gm = generated_mean_metrics(fin, pn);
        sweep_theory.row({n, fin.M, fin.Q_xi, fin.Q_eta, gm.mse, gm.cosine});
    }
    run.write("sweep_theory", sweep_theory);
    if (!run.simulate()) return;

    // Snapshot nodes at t = 0, 0.2, …, 1 (nearest grid node).
    std::vector<std::size_t> keep;
    for (int j = 0; j <= 5; ++j) {
        const std::size_t k = static_cast<std::size_t>(std::lround(j * 0.2 * cfg.grid_n));
        if (keep.empty() || keep.back() != k) keep.push_back(k);
    }
    const auto sim_run = simulate_flow(run, p, grid, true, 20, keep);
    const auto targets = target_samples(sim_run.set, p, cfg.batch, run.rng(23));
    std::vector<const Vec*> pool;
    for (const auto& x : targets) pool.push_back(&x);
    for (const auto& s : sim_run.traj) pool.push_back(&s.endpoint);
    Vec centre;
    const auto dirs = principal_directions(pool, 2, centre);

    Table points({"kind", "t", "sample", "pc1", "pc2"});
    for (std::size_t j = 0; j < keep.size(); ++j) {
        const double t = grid.nodes()[keep[j]];
        for (std::size_t s = 0; s < sim_run.traj.size(); ++s) {
            const auto [a, b] = project2(sim_run.traj[s].kept[j], centre, dirs);
            points.row({"flow", t, s, a, b});
        }
    }
    for (std::size_t s = 0; s < targets.size(); ++s) {
        const auto [a, b] = project2(targets[s], centre, dirs);
        points.row({"target", 1.0, s, a, b});
    }
    run.write("points", points);

    Table means({"kind", "t", "branch", "pc1", "pc2"});
    for (std::size_t j = 0; j < keep.size(); ++j) {
        const auto& st = disc[keep[j]];
        for (double sgn : {1.0, -1.0}) {
            const auto [a, b] = project2(span_vector(sim_run.set, st.M, st.Q_xi, st.Q_eta, sgn), centre, dirs);
            means.row({"theory", st.t, static_cast<int>(sgn), a, b});
        }
    }
    for (double sgn : {1.0, -1.0}) {
        const auto [a, b] = project2(span_vector(sim_run.set, 1.0, 0.0, 0.0, sgn), centre, dirs);
        means.row({"target", 1.0, static_cast<int>(sgn), a, b});
    }
    run.write("means", means);

    // Generated densities for each n, each in its own pooled basis.
    Table sweep_points({"n", "kind", "sample", "pc1", "pc2"});
    Table sweep_means({"n", "kind", "branch", "pc1", "pc2"});
    for (std::size_t j = 0; j < sweep.size(); ++j) {
        const ModelParams pn = p.with_n(sweep[j]);
        const auto r = simulate_flow(run, pn, grid, true, 100 + 10 * j);
        const auto tg = target_samples(r.set, pn, cfg.batch, run.rng(103 + 10 * j));
        std::vector<const Vec*> pl;
        for (const auto& x : tg) pl.push_back(&x);
        for (const auto& s : r.traj) pl.push_back(&s.endpoint);
        Vec c;
        const auto dj = principal_directions(pl, 2, c);
        for (std::size_t s = 0; s < r.traj.size(); ++s) {
            const auto [a, b] = project2(r.traj[s].endpoint, c, dj);
            sweep_points.row({sweep[j], "generated", s, a, b});
        }
        for (std::size_t s = 0; s < tg.size(); ++s) {
            const auto [a, b] = project2(tg[s], c, dj);
            sweep_points.row({sweep[j], "target", s, a, b});
        }
        const auto fin = integrate_learnt(pn, cfg.kind, grid, 1).back();
        for (double sgn : {1.0, -1.0}) {
            const auto [a, b] = project2(span_vector(r.set, fin.M, fin.Q_xi, fin.Q_eta, sgn), c, dj);
            sweep_means.row({sweep[j], "theory", static_cast<int>(sgn), a, b});
            const auto [e, f] = project2(span_vector(r.set, 1.0, 0.0, 0.0, sgn), c, dj);
            sweep_means.row({sweep[j], "target", static_cast<int>(sgn), e, f});
        }
    }
    run.write("sweep_points", sweep_points);
    run.write("sweep_means", sweep_means);
}

void mse_scaling(Run& run) {
    const auto& cfg = run.cfg;
    const ModelParams& p = run.params;
    const TimeGrid fine = TimeGrid::uniform(1000, Scheme::RK4);
    const TimeGrid grid = TimeGrid::uniform(cfg.grid_n, Scheme::Euler);
    std::vector<double> ns, mses, gaps, bayes;
    std::vector<GeneratedMeanMetrics> ode, disc;
    for (int n : cfg.n_sweep) {
        const ModelParams pn = p.with_n(n);
        ode.push_back(generated_mean_metrics(integrate_learnt(pn, cfg.kind, fine, 1).back(), pn));
        disc.push_back(generated_mean_metrics(integrate_learnt(pn, cfg.kind, grid, 1).back(), pn));
        ns.push_back(n);
        mses.push_back(ode.back().mse);
        gaps.push_back(1.0 - ode.back().cosine);
        bayes.push_back(bayes_mse(n, p.sigma()));
    }
    const double mse_slope = slope_loglog(ns, mses);
    const double cos_slope = slope_loglog(ns, gaps);
    Table theory({"n", "theory_mse", "theory_cosine", "discrete_mse", "discrete_cosine", "bayes_mse", "bayes_cosine",
                  "theory_mse_slope", "theory_cosine_gap_slope"});
    for (std::size_t j = 0; j < ns.size(); ++j) {
        const int n = cfg.n_sweep[j];
        theory.row({n, ode[j].mse, ode[j].cosine, disc[j].mse, disc[j].cosine, bayes[j], bayes_cosine(n, p.sigma()),
                    mse_slope, cos_slope});
    }
    run.write("theory", theory);

    Table summary({"quantity", "value"});
    summary.row({"theory_mse_slope", mse_slope});
    summary.row({"theory_cosine_gap_slope", cos_slope});
    summary.row({"bayes_mse_slope", slope_loglog(ns, bayes)});
    if (run.simulate()) {
        Table sim({"n", "theory_mse", "theory_cosine", "sim_mse", "sim_cosine", "pca_mse", "pca_cosine", "frac_plus"});
        std::vector<double> sim_mses;
        for (std::size_t j = 0; j < ns.size(); ++j) {
            const ModelParams pn = p.with_n(cfg.n_sweep[j]);
            const auto r = simulate_flow(run, pn, grid, true, 200 + 10 * j);
            std::vector<Vec> ends;
            for (const auto& s : r.traj) ends.push_back(s.endpoint);
            const auto cs = generated_cluster_stats(ends, r.set, pn);
            double pca_cos = kNaN;
            if (pn.n() >= 2) pca_cos = pca_mean_estimate(r.set).cosine_to_mu;
            // Optimally rescaled PCA direction: min_s ∥s v − μ∥²/d = 1 − cos².
            sim.row({cfg.n_sweep[j], ode[j].mse, ode[j].cosine, cs.mse, cs.cosine, 1.0 - pca_cos * pca_cos, pca_cos,
                     cs.frac_plus});
            sim_mses.push_back(cs.mse);
        }
        run.write("sim", sim);
        summary.row({"sim_mse_slope", slope_loglog(ns, sim_mses)});
    }
    run.write("summary", summary);
}

void denoiser_experiment(Run& run) {
    const auto& cfg = run.cfg;
    const ModelParams& base = run.params;
    Table theory({"n", "t", "denoiser_mse", "oracle_mse", "cosine", "c_hat"});
    for (int n : cfg.n_sweep) {
        const ModelParams p = base.with_n(n);
        for (double t : uniform_times(50)) {
            const SchedulePoint sp = eval_schedule(cfg.kind, t);
            const auto w = weight_components(p, sp);
            theory.row({n, t, denoiser_mse(p, sp, w), oracle_mse(p.sigma(), sp), cosine_or_nan(w, p), w.c_hat});
        }
    }
    run.write("theory", theory);
    if (!run.simulate()) return;

    Table sim({"n", "t", "theory_mse", "oracle_mse", "theory_cosine", "theory_train_risk", "sim_test_mse",
               "sim_train_risk", "sim_cosine"});
    for (std::size_t j = 0; j < cfg.n_sweep.size(); ++j) {
        const ModelParams p = base.with_n(cfg.n_sweep[j]);
        const TrainingSet set = sample_training_set(cfg.d, p, run.rng(300 + 10 * j));
        struct Out {
            double test, train, cosine;
        };
        std::vector<Out> outs(cfg.times.size());
        parallel_for(cfg.times.size(), [&](std::size_t k) {
            const SchedulePoint sp = eval_schedule(cfg.kind, cfg.times[k]);
            DaeParams p0;
            p0.phi = cfg.phi;
            const DaeParams trained =
                fold_sign(train_dae(set, sp, p.lambda(), cfg.adam, p0, run.rng(301 + 10 * j).child(k)), set);
            const auto mw = measure_weights(trained, set, p);
            outs[k] = {denoiser_test_mse(trained, set, p, sp, std::max<std::size_t>(cfg.batch, 1),
                                         run.rng(302 + 10 * j).child(k)),
                       risk(trained, set, sp, p.lambda()) / (p.n() * static_cast<double>(cfg.d)),
                       mw.norm > 0 ? mw.weights.m / std::sqrt(mw.norm) : kNaN};
        });
        for (std::size_t k = 0; k < cfg.times.size(); ++k) {
            const SchedulePoint sp = eval_schedule(cfg.kind, cfg.times[k]);
            const auto w = weight_components(p, sp);
            const double c = w.c_hat, g = 1.0 - c * sp.beta;
            // Training risk per sample and dimension at the closed-form minimiser.
            const double train = weight_norm(w, p) - 2 * g * (w.m + p.sigma2() * w.q_eta) + g * g * (1 + p.sigma2()) +
                                 c * c * sp.alpha * sp.alpha + 2 * c * sp.alpha * w.q_xi +
                                 0.5 * p.lambda() * weight_norm(w, p) / p.n();
            sim.row({p.n(), sp.t, denoiser_mse(p, sp, w), oracle_mse(p.sigma(), sp), cosine_or_nan(w, p), train,
                     outs[k].test, outs[k].train, outs[k].cosine});
        }
    }
    run.write("sim", sim);
}

void imbalanced(Run& run) {
    weights_experiment(run, true);
    if (!run.simulate()) return;
    const auto& cfg = run.cfg;
    const TimeGrid grid = TimeGrid::uniform(cfg.grid_n, Scheme::Euler);
    const auto r = simulate_flow(run, run.params, grid, true, 30);
    std::vector<Vec> ends;
    for (const auto& s : r.traj) ends.push_back(s.endpoint);
    const auto cs = generated_cluster_stats(ends, r.set, run.params);
    int plus = 0;
    for (int s : r.set.s) plus += s > 0;
    Table summary({"quantity", "value"});
    summary.row({"rho", run.params.rho()});
    summary.row({"train_label_fraction_plus", static_cast<double>(plus) / r.set.n});
    summary.row({"frac_plus", cs.frac_plus});
    summary.row({"frac_minus", cs.frac_minus});
    summary.row({"count", cs.count});
    summary.row({"sim_mse", cs.mse});
    run.write("summary", summary);
}

void noskip(Run& run) {
    weights_experiment(run, false);
    const auto& cfg = run.cfg;
    const ModelParams& p = run.params;
    const TimeGrid grid = TimeGrid::uniform(cfg.grid_n, Scheme::Euler);
    const auto flow = integrate_noskip(p, cfg.kind, grid, 1);
    const auto nw = weights_noskip(p);

    std::vector<Trajectory> traj;
    FoldedStats folded;
    if (run.simulate()) {
        traj = simulate_flow(run, p, grid, false, 40).traj;
        folded = fold_trajectories(traj, p);
    }
    std::vector<std::string> head{"t", "M", "Q_eta", "M_closed", "Q_eta_closed"};
    if (run.simulate()) {
        for (const char* c : {"sim_M", "sim_Q_eta", "sim_Q"}) head.push_back(c);
    }
    Table ft(head);
    for (std::size_t k = 0; k < flow.size(); ++k) {
        const double b = eval_schedule(cfg.kind, flow[k].t).beta;
        std::vector<Cell> row{flow[k].t, flow[k].M, flow[k].Q_eta, b * nw.m, b * nw.q_eta};
        if (run.simulate()) {
            row.emplace_back(folded.M[k]);
            row.emplace_back(folded.Q_eta[k]);
            row.emplace_back(folded.Q[k]);
        }
        ft.row(row);
    }
    run.write("flow", ft);

    Table lam({"lambda", "noskip_mean_mse", "bayes_mse"});
    const double top = 3.0 * p.sigma2();
    double best = std::numeric_limits<double>::infinity(), arg = 0.0;
    for (int k = 0; k <= 600; ++k) {
        const double l = top * k / 600.0;
        if (p.n() == 1 && l == 0.0) continue;
        const double v = noskip_mean_mse(p.n(), p.sigma(), l);
        if (v < best) {
            best = v;
            arg = l;
        }
        lam.row({l, v, bayes_mse(p.n(), p.sigma())});
    }
    run.write("lambda", lam);
    Table summary({"quantity", "value"});
    summary.row({"lambda_argmin_grid", arg});
    summary.row({"sigma_squared", p.sigma2()});
    summary.row({"mse_at_sigma_squared", noskip_mean_mse(p.n(), p.sigma(), p.sigma2())});
    summary.row({"bayes_mse", bayes_mse(p.n(), p.sigma())});
    if (run.simulate()) summary.row({"sign_stable_fraction", folded.sign_stable});
    run.write("summary", summary);
}

void convergence_rates(Run& run) {
    const auto& cfg = run.cfg;
    const ModelParams& p = run.params;
    const double t = cfg.times.empty() ? 0.5 : cfg.times.front();
    const SchedulePoint sp = eval_schedule(cfg.kind, t);
    const TimeGrid fine = TimeGrid::uniform(1000, Scheme::RK4);
    Table theory({"n", "t", "gap_m", "gap_c", "abs_q_xi", "q_eta", "abs_eps_m1", "abs_eps_xi1", "eps_eta1"});
    std::vector<double> ns;
    std::map<std::string, std::vector<double>> cols;
    for (int n : cfg.n_sweep) {
        const ModelParams pn = p.with_n(n);
        const auto g = convergence_gaps(pn, sp);
        const auto e = integrate_error_flow(pn, cfg.kind, fine).back();
        theory.row({n, t, g.gap_m, g.gap_c, std::abs(g.q_xi), g.q_eta, std::abs(e.eps_m), std::abs(e.eps_xi),
                    e.eps_eta});
        ns.push_back(n);
        cols["gap_m"].push_back(g.gap_m);
        cols["gap_c"].push_back(g.gap_c);
        cols["abs_q_xi"].push_back(std::abs(g.q_xi));
        cols["q_eta"].push_back(g.q_eta);
        cols["abs_eps_m1"].push_back(std::abs(e.eps_m));
        cols["abs_eps_xi1"].push_back(std::abs(e.eps_xi));
        cols["eps_eta1"].push_back(e.eps_eta);
    }
    run.write("theory", theory);
    Table fit({"quantity", "slope"});
    for (const auto& [name, ys] : cols) fit.row({name, slope_loglog(ns, ys)});
    run.write("fit", fit);
}

const std::map<std::string, void (*)(Run&)>& registry() {
    static const std::map<std::string, void (*)(Run&)> reg{
        {"components-vs-time", [](Run& r) { weights_experiment(r, true); }},
        {"flow-stats", flow_stats},
        {"flow-pca", flow_pca},
        {"mse-scaling", mse_scaling},
        {"denoiser-mse", denoiser_experiment},
        {"imbalanced", imbalanced},
        {"noskip", noskip},
        {"convergence-rates", convergence_rates},
    };
    return reg;
}

json config_to_json(const ExperimentConfig& c) {
    return json{{"experiment", c.experiment},
                {"d", c.d},
                {"n", c.n},
                {"sigma", c.sigma},
                {"lambda", c.lambda},
                {"rho", c.rho},
                {"schedule", to_string(c.kind)},
                {"phi", to_string(c.phi)},
                {"grid", c.grid_n},
                {"lr", c.adam.learning_rate},
                {"epochs", c.adam.epochs},
                {"batch", c.batch},
                {"n_sweep", c.n_sweep},
                {"seed", c.seed},
                {"models", c.models},
                {"t", c.times}};
}

}  // namespace

const std::vector<std::string>& experiment_names() {
    static const std::vector<std::string> names = [] {
        std::vector<std::string> v;
        for (const auto& [k, _] : registry()) v.push_back(k);
        return v;
    }();
    return names;
}

ExperimentConfig default_config(const std::string& experiment) {
    if (!registry().count(experiment)) {
        std::string known;
        for (const auto& n : experiment_names()) known += (known.empty() ? "" : ", ") + n;
        throw UsageError("unknown experiment '" + experiment + "' (known: " + known + ")");
    }
    ExperimentConfig c;
    c.experiment = experiment;
    const std::vector<double> nine{0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};
    if (experiment == "components-vs-time" || experiment == "imbalanced" || experiment == "noskip") {
        c.d = 2000;
        c.n = 4;
        c.sigma = 0.9;
        c.lambda = 0.1;
        c.phi = Activation::Tanh;
        c.adam.learning_rate = experiment == "components-vs-time" ? 1e-4 : 1e-3;
        c.adam.epochs = experiment == "components-vs-time" ? 40000 : 20000;
        c.times = nine;
        if (experiment == "imbalanced") c.rho = 0.24;
    } else if (experiment == "flow-stats") {
        c.n = 8;
        c.sigma = 1.5;
        c.adam.learning_rate = 1e-2;
        c.adam.epochs = 2000;
    } else if (experiment == "flow-pca") {
        c.n = 16;
        c.sigma = 2.0;
        c.adam.learning_rate = 1e-2;
        c.adam.epochs = 2000;
        c.n_sweep = {4, 8, 16, 32, 64};
    } else if (experiment == "mse-scaling") {
        c.adam.learning_rate = 4e-2;
        c.adam.epochs = 6000;
        c.n_sweep = {4, 8, 16, 32, 64};
    } else if (experiment == "denoiser-mse") {
        c.d = 500;
        c.sigma = 0.3;
        c.kind = ScheduleKind::Trigonometric;
        c.phi = Activation::Tanh;
        c.adam.learning_rate = 1e-2;
        c.adam.epochs = 2000;
        c.n_sweep = {2, 4, 8, 16};
        c.times = nine;
    } else if (experiment == "convergence-rates") {
        c.n_sweep = {32, 64, 128, 256, 512};
        c.times = {0.5};
        c.batch = 0;
    }
    return c;
}

std::string tool_version() { return std::string("flowlab ") + FLOWLAB_VERSION; }

std::string sha256_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot read " + path);
    EVP_MD_CTX* ctx = EVP_MD_CTX_new();
    EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
    char buf[1 << 16];
    while (f.read(buf, sizeof buf) || f.gcount() > 0) EVP_DigestUpdate(ctx, buf, static_cast<std::size_t>(f.gcount()));
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_DigestFinal_ex(ctx, md, &len);
    EVP_MD_CTX_free(ctx);
    std::string hex;
    char h[3];
    for (unsigned int i = 0; i < len; ++i) {
        std::snprintf(h, sizeof h, "%02x", md[i]);
        hex += h;
    }
    return hex;
}

RunManifest run_experiment(const ExperimentConfig& cfg) {
    const auto it = registry().find(cfg.experiment);
    if (it == registry().end()) default_config(cfg.experiment);  // throws the usage error
    if (cfg.models != "theory" && cfg.models != "trained") {
        throw UsageError("--models must be theory or trained, got '" + cfg.models + "'");
    }
    if (cfg.grid_n == 0) throw UsageError("--grid must be at least 1");
    for (double t : cfg.times) {
        if (!(t >= 0.0 && t <= 1.0)) throw UsageError("--t values must lie in [0, 1]");
    }
    for (int n : cfg.n_sweep) {
        if (n < 1) throw UsageError("--n-sweep values must be positive");
    }

    const auto start = std::chrono::steady_clock::now();
    std::error_code ec;
    fs::create_directories(cfg.out_dir, ec);
    if (!fs::is_directory(cfg.out_dir)) throw UsageError("output directory '" + cfg.out_dir + "' is not writable");

    const std::string ctx = cfg.experiment + ": ";
    Run run{cfg, ModelParams(4, 1.0, 0.1), {}};
    try {
        run.params = ModelParams(cfg.n, cfg.sigma, cfg.lambda, cfg.rho);
        it->second(run);
    } catch (const UsageError& e) {
        throw UsageError(ctx + e.what());
    } catch (const DomainError& e) {
        throw DomainError(ctx + e.what());
    } catch (const DivergenceError& e) {
        throw DivergenceError(ctx + e.what(), e.index());
    } catch (const ConvergenceError& e) {
        throw ConvergenceError(ctx + e.what(), e.residual());
    } catch (const std::exception& e) {
        throw std::runtime_error(ctx + e.what());
    }
    const double elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

    RunManifest m;
    m.tool_version = tool_version();
    m.runtime_seconds = elapsed;
    json files = json::array();
    for (const auto& name : run.files) {
        FileRecord rec{name, sha256_file((fs::path(cfg.out_dir) / name).string())};
        files.push_back({{"name", rec.name}, {"sha256", rec.sha256}});
        m.files.push_back(rec);
    }
    const json cfg_json = config_to_json(cfg);
    m.config_json = cfg_json.dump();
    const json doc{{"config", cfg_json}, {"files", files}, {"runtime_seconds", elapsed}, {"tool_version", m.tool_version}};
    write_atomic(fs::path(cfg.out_dir) / "manifest.json", doc.dump(2) + "\n");
    return m;
}

namespace {

TheoryQuery checked(const TheoryQuery& q) {
    if (q.has_t && q.has_grid) throw UsageError("--t and --grid are mutually exclusive (hint: pick one)");
    if (q.has_t && !(q.t >= 0.0 && q.t <= 1.0)) {
        throw UsageError("--t must lie in [0, 1], got " + fmt(q.t));
    }
    if (q.has_grid && q.grid_n == 0) throw UsageError("--grid must be at least 1");
    if (q.sign != 1 && q.sign != -1) throw UsageError("--sign must be 1 or -1");
    return q;
}

std::vector<double> query_times(const TheoryQuery& q) {
    if (q.has_t) return {q.t};
    return uniform_times(q.has_grid ? q.grid_n : 10);
}

}  // namespace

void theory_eval(const std::string& sub, const TheoryQuery& query, std::ostream& out) {
    const TheoryQuery q = checked(query);
    ModelParams p = [&] {
        try {
            return ModelParams(q.n, q.sigma, q.lambda, q.rho);
        } catch (const DomainError& e) {
            throw UsageError(e.what());
        }
    }();
    if (sub == "weights") {
        Table t({"t", "m", "q_xi", "q_eta", "c_hat", "norm", "cosine"});
        for (double time : query_times(q)) {
            const auto w = weight_components(p, eval_schedule(q.kind, time));
            t.row({time, w.m, w.q_xi, w.q_eta, w.c_hat, weight_norm(w, p), cosine_or_nan(w, p)});
        }
        out << t.str();
    } else if (sub == "flow") {
        if (q.has_t) throw UsageError("flow integrates over [0, 1]; use --grid instead of --t");
        const TimeGrid grid = TimeGrid::uniform(q.has_grid ? q.grid_n : 100, q.rk4 ? Scheme::RK4 : Scheme::Euler);
        Table t({"t", "M", "Q_xi", "Q_eta", "log_Qperp", "Q", "angle"});
        for (const auto& s : integrate_learnt(p, q.kind, grid, q.sign)) {
            const double qt = s.q_total(p);
            t.row({s.t, s.M, s.Q_xi, s.Q_eta, s.log_Qperp, qt, s.M / std::sqrt(qt)});
        }
        out << t.str();
    } else if (sub == "bayes") {
        const auto b = bayes_components(p.n(), p.sigma());
        Table t({"n", "sigma", "m_star", "q_eta_star", "bayes_mse", "bayes_cosine"});
        t.row({p.n(), p.sigma(), b.m_star, b.q_eta_star, bayes_mse(p.n(), p.sigma()), bayes_cosine(p.n(), p.sigma())});
        out << t.str();
    } else if (sub == "noskip") {
        const auto w = weights_noskip(p);
        Table t({"n", "sigma", "lambda", "m", "q_eta", "noskip_mean_mse", "bayes_mse"});
        t.row({p.n(), p.sigma(), p.lambda(), w.m, w.q_eta, noskip_mean_mse(p.n(), p.sigma(), p.lambda()),
               bayes_mse(p.n(), p.sigma())});
        out << t.str();
    } else if (sub == "oracle-mse") {
        Table t({"t", "oracle_mse", "denoiser_mse"});
        for (double time : query_times(q)) {
            const auto sp = eval_schedule(q.kind, time);
            t.row({time, oracle_mse(p.sigma(), sp), denoiser_mse(p, sp, weight_components(p, sp))});
        }
        out << t.str();
    } else {
        throw UsageError("unknown theory table '" + sub + "' (expected weights|flow|bayes|noskip|oracle-mse)");
    }
}

}  // namespace flowlab
