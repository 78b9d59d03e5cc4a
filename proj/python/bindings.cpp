#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "flowlab/errors.hpp"
#include "flowlab/flow.hpp"
#include "flowlab/harness.hpp"
#include "flowlab/schedule.hpp"
#include "flowlab/theory.hpp"

namespace py = pybind11;
using namespace flowlab;

namespace {

ScheduleKind kind_of(const std::string& s) { return parse_schedule(s); }

TimeGrid grid_of(std::size_t steps, const std::string& scheme) {
    if (scheme == "euler") return TimeGrid::uniform(steps, Scheme::Euler);
    if (scheme == "rk4") return TimeGrid::uniform(steps, Scheme::RK4);
    throw DomainError("scheme must be 'euler' or 'rk4'");
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Closed-form summary statistics and experiment harness of flowlab";

    auto base = py::register_exception<DomainError>(m, "DomainError", PyExc_ValueError);
    py::register_exception<UsageError>(m, "UsageError", PyExc_ValueError);
    py::register_exception<ConvergenceError>(m, "ConvergenceError", PyExc_RuntimeError);
    py::register_exception<StepSizeError>(m, "StepSizeError", PyExc_RuntimeError);
    py::register_exception<DivergenceError>(m, "DivergenceError", PyExc_RuntimeError);
    py::register_exception<UndefinedValueError>(m, "UndefinedValueError", PyExc_ArithmeticError);
    (void)base;

    py::class_<SchedulePoint>(m, "SchedulePoint")
        .def_readonly("t", &SchedulePoint::t)
        .def_readonly("alpha", &SchedulePoint::alpha)
        .def_readonly("beta", &SchedulePoint::beta)
        .def_readonly("alpha_dot", &SchedulePoint::alpha_dot)
        .def_readonly("beta_dot", &SchedulePoint::beta_dot)
        .def_readonly("wronskian", &SchedulePoint::wronskian);
    m.def("eval_schedule", [](const std::string& kind, double t) { return eval_schedule(kind_of(kind), t); },
          py::arg("kind"), py::arg("t"));

    py::class_<ModelParams>(m, "ModelParams")
        .def(py::init<int, double, double, double>(), py::arg("n"), py::arg("sigma"), py::arg("lam"),
             py::arg("rho") = 0.5)
        .def_property_readonly("n", &ModelParams::n)
        .def_property_readonly("sigma", &ModelParams::sigma)
        .def_property_readonly("lam", &ModelParams::lambda)
        .def_property_readonly("rho", &ModelParams::rho)
        .def("__repr__", [](const ModelParams& p) {
            std::ostringstream s;
            s << "ModelParams(n=" << p.n() << ", sigma=" << p.sigma() << ", lam=" << p.lambda() << ", rho=" << p.rho()
              << ")";
            return s.str();
        });

    py::class_<TheoryWeights>(m, "TheoryWeights")
        .def_readonly("t", &TheoryWeights::t)
        .def_readonly("m", &TheoryWeights::m)
        .def_readonly("q_xi", &TheoryWeights::q_xi)
        .def_readonly("q_eta", &TheoryWeights::q_eta)
        .def_readonly("c_hat", &TheoryWeights::c_hat);

    m.def("weight_components", [](const ModelParams& p, const std::string& kind, double t) {
        return weight_components(p, eval_schedule(kind_of(kind), t));
    });
    m.def("skip_strength", [](const ModelParams& p, const std::string& kind, double t) {
        return skip_strength(p, eval_schedule(kind_of(kind), t));
    });
    m.def("weight_norm", &weight_norm);
    m.def("weight_cosine", &weight_cosine);
    m.def(
        "saddle_solve",
        [](const ModelParams& p, const std::string& kind, double t) {
            const auto sp = eval_schedule(kind_of(kind), t);
            return saddle_solve(p, sp).to_weights(p, t);
        },
        "Saddle-point oracle, returned in the weight_components convention");
    m.def("bayes_mse", &bayes_mse);
    m.def("bayes_cosine", &bayes_cosine);
    m.def("noskip_mean_mse", &noskip_mean_mse);
    m.def("oracle_mse",
          [](double sigma, const std::string& kind, double t) { return oracle_mse(sigma, eval_schedule(kind_of(kind), t)); });
    m.def("denoiser_mse", [](const ModelParams& p, const std::string& kind, double t) {
        const auto sp = eval_schedule(kind_of(kind), t);
        return denoiser_mse(p, sp, weight_components(p, sp));
    });

    m.def(
        "integrate_learnt",
        [](const ModelParams& p, const std::string& kind, std::size_t steps, const std::string& scheme, int sign) {
            py::dict out;
            std::vector<double> t, M, X, E, L, Q;
            for (const auto& s : integrate_learnt(p, kind_of(kind), grid_of(steps, scheme), sign)) {
                t.push_back(s.t);
                M.push_back(s.M);
                X.push_back(s.Q_xi);
                E.push_back(s.Q_eta);
                L.push_back(s.log_Qperp);
                Q.push_back(s.q_total(p));
            }
            out["t"] = t;
            out["M"] = M;
            out["Q_xi"] = X;
            out["Q_eta"] = E;
            out["log_Qperp"] = L;
            out["Q"] = Q;
            return out;
        },
        py::arg("params"), py::arg("kind") = "linear", py::arg("steps") = 100, py::arg("scheme") = "euler",
        py::arg("sign") = 1);
    m.def(
        "generated_mean_metrics",
        [](const ModelParams& p, const std::string& kind, std::size_t steps, const std::string& scheme) {
            const auto g = generated_mean_metrics(integrate_learnt(p, kind_of(kind), grid_of(steps, scheme)).back(), p);
            return py::make_tuple(g.mse, g.cosine);
        },
        py::arg("params"), py::arg("kind") = "linear", py::arg("steps") = 1000, py::arg("scheme") = "rk4",
        "(mse, cosine) of the generated cluster mean");
    m.def(
        "exact_endpoint",
        [](double sigma, const std::string& kind, std::size_t steps) {
            return integrate_exact(sigma, kind_of(kind), grid_of(steps, "rk4")).back().M_star;
        },
        py::arg("sigma"), py::arg("kind") = "linear", py::arg("steps") = 10000);

    m.def("experiment_names", &experiment_names);
    m.def(
        "run_experiment",
        [](const std::string& name, const std::string& out_dir, const py::kwargs& overrides) {
            ExperimentConfig c = default_config(name);
            c.out_dir = out_dir;
            for (const auto& [key, value] : overrides) {
                const auto k = key.cast<std::string>();
                if (k == "d") c.d = value.cast<std::size_t>();
                else if (k == "n") c.n = value.cast<int>();
                else if (k == "sigma") c.sigma = value.cast<double>();
                else if (k == "lam") c.lambda = value.cast<double>();
                else if (k == "rho") c.rho = value.cast<double>();
                else if (k == "schedule") c.kind = kind_of(value.cast<std::string>());
                else if (k == "phi") c.phi = parse_activation(value.cast<std::string>());
                else if (k == "grid") c.grid_n = value.cast<std::size_t>();
                else if (k == "lr") c.adam.learning_rate = value.cast<double>();
                else if (k == "epochs") c.adam.epochs = value.cast<std::size_t>();
                else if (k == "batch") c.batch = value.cast<std::size_t>();
                else if (k == "seed") c.seed = value.cast<std::uint64_t>();
                else if (k == "n_sweep") c.n_sweep = value.cast<std::vector<int>>();
                else if (k == "models") c.models = value.cast<std::string>();
                else if (k == "t") c.times = value.cast<std::vector<double>>();
                else throw UsageError("unknown option '" + k + "'");
            }
            const auto man = run_experiment(c);
            py::dict files;
            for (const auto& f : man.files) files[py::str(f.name)] = f.sha256;
            return files;
        },
        py::arg("name"), py::arg("out_dir"), "Run a named experiment; returns {file name: sha256}");
    m.def(
        "theory_table",
        [](const std::string& sub, const ModelParams& p, const std::string& kind, py::object t) {
            TheoryQuery q;
            q.n = p.n();
            q.sigma = p.sigma();
            q.lambda = p.lambda();
            q.rho = p.rho();
            q.kind = kind_of(kind);
            if (!t.is_none()) {
                q.has_t = true;
                q.t = t.cast<double>();
            }
            std::ostringstream out;
            theory_eval(sub, q, out);
            return out.str();
        },
        py::arg("sub"), py::arg("params"), py::arg("kind") = "linear", py::arg("t") = py::none(),
        "CSV text of a closed-form table");
    m.attr("__version__") = tool_version();
}
