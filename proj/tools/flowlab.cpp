// Command-line front end: `flowlab experiment <name>` and `flowlab theory <sub>`.
#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "flowlab/errors.hpp"
#include "flowlab/harness.hpp"

namespace {

constexpr int kUsageExit = 2;

flowlab::ScheduleKind schedule_flag(const std::string& s) {
    try {
        return flowlab::parse_schedule(s);
    } catch (const flowlab::DomainError& e) {
        throw flowlab::UsageError(e.what());
    }
}

flowlab::Activation phi_flag(const std::string& s) {
    try {
        return flowlab::parse_activation(s);
    } catch (const flowlab::DomainError& e) {
        throw flowlab::UsageError(e.what());
    }
}

// Flags shared by both subcommands, stored as optionals so experiment
// defaults survive unless the user overrides them.
struct Flags {
    std::size_t d = 0;
    int n = 0;
    double sigma = 0, lambda = 0, rho = 0, lr = 0, t = 0;
    std::string schedule, phi, out, models;
    std::size_t grid = 0, epochs = 0, batch = 0;
    std::uint64_t seed = 0;
    int sign = 1;
    std::vector<int> n_sweep;
    std::vector<double> times;
    bool rk4 = false;
};

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Summary-statistics theory and simulations of flow-based generative models on Gaussian mixtures"};
    app.set_version_flag("--version", flowlab::tool_version());
    app.require_subcommand(1);
    Flags f;

    std::string exp_name;
    auto* exp = app.add_subcommand("experiment", "run a named experiment and write CSVs plus manifest.json");
    exp->add_option("name", exp_name, "experiment name")->required();
    auto* o_d = exp->add_option("--d", f.d, "dimension");
    auto* o_n = exp->add_option("--n", f.n, "number of training samples");
    auto* o_sigma = exp->add_option("--sigma", f.sigma, "cluster width");
    auto* o_lambda = exp->add_option("--lambda", f.lambda, "ridge strength");
    auto* o_rho = exp->add_option("--rho", f.rho, "weight of the +mu cluster");
    auto* o_sched = exp->add_option("--schedule", f.schedule, "linear|trig");
    auto* o_phi = exp->add_option("--phi", f.phi, "tanh|erf|sign");
    auto* o_grid = exp->add_option("--grid", f.grid, "number of Euler steps");
    auto* o_lr = exp->add_option("--lr", f.lr, "Adam learning rate");
    auto* o_epochs = exp->add_option("--epochs", f.epochs, "Adam epochs");
    auto* o_batch = exp->add_option("--batch", f.batch, "transported samples (0 disables simulation)");
    auto* o_seed = exp->add_option("--seed", f.seed, "master seed");
    auto* o_sweep = exp->add_option("--n-sweep", f.n_sweep, "list of n values")->delimiter(',');
    auto* o_out = exp->add_option("--out", f.out, "output directory");
    auto* o_models = exp->add_option("--models", f.models, "theory|trained per-node denoisers");
    auto* o_times = exp->add_option("--t", f.times, "list of training times")->delimiter(',');

    std::string sub;
    flowlab::TheoryQuery q;
    std::string q_sched = "linear";
    auto* th = app.add_subcommand("theory", "print closed-form tables as CSV on stdout");
    th->add_option("sub", sub, "weights|flow|bayes|noskip|oracle-mse")->required();
    th->add_option("--n", q.n, "number of training samples");
    th->add_option("--sigma", q.sigma, "cluster width");
    th->add_option("--lambda", q.lambda, "ridge strength");
    th->add_option("--rho", q.rho, "weight of the +mu cluster");
    th->add_option("--schedule", q_sched, "linear|trig");
    auto* q_t = th->add_option("--t", q.t, "single time in [0, 1]");
    auto* q_grid = th->add_option("--grid", q.grid_n, "uniform grid with this many steps");
    th->add_flag("--rk4", q.rk4, "integrate the flow with RK4 instead of Euler");
    th->add_option("--sign", q.sign, "branch sign for the flow (1 or -1)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kUsageExit;
    }

    try {
        if (*exp) {
            flowlab::ExperimentConfig cfg = flowlab::default_config(exp_name);
            if (*o_d) cfg.d = f.d;
            if (*o_n) cfg.n = f.n;
            if (*o_sigma) cfg.sigma = f.sigma;
            if (*o_lambda) cfg.lambda = f.lambda;
            if (*o_rho) cfg.rho = f.rho;
            if (*o_sched) cfg.kind = schedule_flag(f.schedule);
            if (*o_phi) cfg.phi = phi_flag(f.phi);
            if (*o_grid) cfg.grid_n = f.grid;
            if (*o_lr) cfg.adam.learning_rate = f.lr;
            if (*o_epochs) cfg.adam.epochs = f.epochs;
            if (*o_batch) cfg.batch = f.batch;
            if (*o_seed) cfg.seed = f.seed;
            if (*o_sweep) cfg.n_sweep = f.n_sweep;
            if (*o_out) cfg.out_dir = f.out;
            if (*o_models) cfg.models = f.models;
            if (*o_times) cfg.times = f.times;
            const auto m = flowlab::run_experiment(cfg);
            for (const auto& file : m.files) std::cout << file.name << ' ' << file.sha256 << '\n';
            std::fprintf(stderr, "%s finished in %.1f s\n", exp_name.c_str(), m.runtime_seconds);
        } else {
            q.kind = schedule_flag(q_sched);
            q.has_t = static_cast<bool>(*q_t);
            q.has_grid = static_cast<bool>(*q_grid);
            flowlab::theory_eval(sub, q, std::cout);
        }
    } catch (const flowlab::UsageError& e) {
        std::cerr << "usage error: " << e.what() << '\n';
        return kUsageExit;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
