#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "flowlab/errors.hpp"
#include "flowlab/harness.hpp"
#include "json.hpp"

using namespace flowlab;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("flowlab_test_" + name);
    fs::remove_all(p);
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    std::stringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

std::vector<std::vector<std::string>> read_csv(const fs::path& p) {
    std::vector<std::vector<std::string>> rows;
    std::istringstream in(slurp(p));
    std::string line;
    while (std::getline(in, line)) {
        std::vector<std::string> cells;
        std::istringstream ls(line);
        std::string cell;
        while (std::getline(ls, cell, ',')) cells.push_back(cell);
        rows.push_back(cells);
    }
    return rows;
}

std::size_t column(const std::vector<std::vector<std::string>>& t, const std::string& name) {
    for (std::size_t i = 0; i < t.front().size(); ++i)
        if (t.front()[i] == name) return i;
    FAIL("missing column " << name);
    return 0;
}

ExperimentConfig small(const std::string& name, const fs::path& out) {
    ExperimentConfig c = default_config(name);
    c.d = 400;
    c.batch = 20;
    c.grid_n = 50;
    c.adam.epochs = 200;
    c.out_dir = out.string();
    return c;
}

}  // namespace

TEST_CASE("registry and usage errors") {
    CHECK(experiment_names().size() == 8);
    CHECK_THROWS_AS(default_config("no-such-experiment"), UsageError);
    ExperimentConfig c;
    c.experiment = "no-such-experiment";
    CHECK_THROWS_AS(run_experiment(c), UsageError);
    ExperimentConfig bad = default_config("flow-stats");
    bad.models = "guess";
    CHECK_THROWS_AS(run_experiment(bad), UsageError);
    bad = default_config("components-vs-time");
    bad.times = {0.5, 1.5};
    CHECK_THROWS_AS(run_experiment(bad), UsageError);
}

TEST_CASE("sub-module errors carry the experiment name") {
    ExperimentConfig c = small("flow-stats", scratch("ctx"));
    c.sigma = -1.0;
    try {
        run_experiment(c);
        FAIL("expected an error");
    } catch (const DomainError& e) {
        CHECK(std::string(e.what()).rfind("flow-stats: ", 0) == 0);
    }
}

TEST_CASE("every experiment writes headed CSVs and one manifest") {
    for (const auto& name : experiment_names()) {
        CAPTURE(name);
        const fs::path out = scratch("all_" + name);
        ExperimentConfig c = small(name, out);
        if (!c.n_sweep.empty()) c.n_sweep = {4, 8};
        if (!c.times.empty()) c.times = {0.3, 0.7};
        const RunManifest m = run_experiment(c);
        REQUIRE(fs::exists(out / "manifest.json"));
        const auto doc = nlohmann::json::parse(slurp(out / "manifest.json"));
        CHECK(doc.contains("config"));
        CHECK(doc.contains("runtime_seconds"));
        CHECK(doc["tool_version"] == tool_version());
        CHECK(doc["files"].size() == m.files.size());
        std::size_t csvs = 0;
        for (const auto& entry : fs::directory_iterator(out)) {
            if (entry.path().extension() == ".csv") ++csvs;
            CHECK(entry.path().extension() != ".tmp");
        }
        CHECK(csvs == m.files.size());
        for (const auto& f : m.files) {
            CHECK(f.name.rfind(name + "_", 0) == 0);
            CHECK(f.sha256 == sha256_file((out / f.name).string()));
            const auto table = read_csv(out / f.name);
            REQUIRE(table.size() >= 2);
            for (const auto& row : table) CHECK(row.size() == table.front().size());
        }
    }
}

TEST_CASE("reruns are byte-identical, also across thread counts") {
    const fs::path a = scratch("det_a"), b = scratch("det_b");
    ExperimentConfig c = small("flow-stats", a);
    c.models = "trained";
    const auto ma = run_experiment(c);
    setenv("FLOWLAB_THREADS", "1", 1);
    c.out_dir = b.string();
    const auto mb = run_experiment(c);
    unsetenv("FLOWLAB_THREADS");
    REQUIRE(ma.files.size() == mb.files.size());
    for (std::size_t i = 0; i < ma.files.size(); ++i) {
        CHECK(ma.files[i].name == mb.files[i].name);
        CHECK(ma.files[i].sha256 == mb.files[i].sha256);
    }
}

TEST_CASE("theory columns do not depend on the seed") {
    const fs::path a = scratch("seed_a"), b = scratch("seed_b");
    ExperimentConfig c = small("flow-stats", a);
    run_experiment(c);
    c.seed = 12345;
    c.out_dir = b.string();
    run_experiment(c);
    CHECK(slurp(a / "flow-stats_theory.csv") == slurp(b / "flow-stats_theory.csv"));
    const auto ta = read_csv(a / "flow-stats_sim.csv"), tb = read_csv(b / "flow-stats_sim.csv");
    bool sim_differs = false;
    for (std::size_t j = 0; j < ta.front().size(); ++j) {
        const bool theory = ta.front()[j] == "t" || ta.front()[j].rfind("theory_", 0) == 0;
        for (std::size_t r = 1; r < ta.size(); ++r) {
            if (theory) CHECK(ta[r][j] == tb[r][j]);
            else sim_differs = sim_differs || ta[r][j] != tb[r][j];
        }
    }
    CHECK(sim_differs);
}

TEST_CASE("batch 0 gives theory-only output") {
    const fs::path out = scratch("batch0");
    ExperimentConfig c = default_config("flow-stats");
    c.batch = 0;
    c.out_dir = out.string();
    const auto m = run_experiment(c);
    REQUIRE(m.files.size() == 1);
    CHECK(m.files.front().name == "flow-stats_theory.csv");
    const auto table = read_csv(out / m.files.front().name);
    for (const auto& h : table.front()) CHECK(h.rfind("sim_", 0) != 0);
}

TEST_CASE("mse-scaling theory slope") {
    const fs::path out = scratch("mse");
    ExperimentConfig c = default_config("mse-scaling");
    c.batch = 0;
    c.out_dir = out.string();
    run_experiment(c);
    const auto t = read_csv(out / "mse-scaling_theory.csv");
    REQUIRE(t.size() == 6);
    const double slope = std::stod(t[1][column(t, "theory_mse_slope")]);
    CHECK(slope == doctest::Approx(-1.0).epsilon(0.15));
    // Generated-mean MSE never beats the Bayes MSE.
    for (std::size_t r = 1; r < t.size(); ++r) {
        CHECK(std::stod(t[r][column(t, "theory_mse")]) >= std::stod(t[r][column(t, "bayes_mse")]));
    }
}

TEST_CASE("noskip lambda scan locates sigma squared") {
    const fs::path out = scratch("noskip");
    ExperimentConfig c = default_config("noskip");
    c.batch = 0;
    c.out_dir = out.string();
    run_experiment(c);
    const auto s = read_csv(out / "noskip_summary.csv");
    CHECK(s[1][0] == "lambda_argmin_grid");
    CHECK(std::stod(s[1][1]) == doctest::Approx(0.81).epsilon(1e-9));
    CHECK(s[3][1] == s[4][1]);
}

TEST_CASE("convergence-rates slopes") {
    const fs::path out = scratch("rates");
    ExperimentConfig c = default_config("convergence-rates");
    c.out_dir = out.string();
    run_experiment(c);
    const auto fit = read_csv(out / "convergence-rates_fit.csv");
    REQUIRE(fit.size() == 8);
    for (std::size_t r = 1; r < fit.size(); ++r) {
        CAPTURE(fit[r][0]);
        CHECK(std::stod(fit[r][1]) == doctest::Approx(-1.0).epsilon(0.05));
    }
}

TEST_CASE("theory_eval tables") {
    std::ostringstream out;
    TheoryQuery q;
    q.has_t = true;
    q.t = 0.5;
    theory_eval("weights", q, out);
    CHECK(out.str() ==
          "t,m,q_xi,q_eta,c_hat,norm,cosine\n"
          "0.5,0.529572797,-0.1115092398,0.1323931993,0.9143757661,0.3869751774,0.8513029028\n");

    std::ostringstream bayes;
    theory_eval("bayes", TheoryQuery{}, bayes);
    const auto line = bayes.str().substr(bayes.str().find('\n') + 1);
    CHECK(line.find(",0.1683991684,") != std::string::npos);

    std::ostringstream flow;
    TheoryQuery g;
    g.has_grid = true;
    g.grid_n = 4;
    theory_eval("flow", g, flow);
    const std::string text = flow.str();
    CHECK(std::count(text.begin(), text.end(), '\n') == 6);

    std::ostringstream sink;
    q.t = 1.5;
    CHECK_THROWS_AS(theory_eval("weights", q, sink), UsageError);
    q.t = 0.5;
    q.has_grid = true;
    CHECK_THROWS_AS(theory_eval("weights", q, sink), UsageError);
    CHECK_THROWS_AS(theory_eval("nonsense", TheoryQuery{}, sink), UsageError);
    TheoryQuery neg;
    neg.sigma = -1.0;
    CHECK_THROWS_AS(theory_eval("bayes", neg, sink), UsageError);
}

TEST_CASE("sha256 of a known string") {
    const fs::path p = scratch("sha");
    fs::create_directories(p);
    std::ofstream(p / "abc.txt", std::ios::binary) << "abc";
    CHECK(sha256_file((p / "abc.txt").string()) ==
          "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}
