#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "flowlab/empirical.hpp"
#include "flowlab/schedule.hpp"

namespace flowlab {

struct ExperimentConfig {
    std::string experiment;
    std::size_t d = 5000;
    int n = 4;
    double sigma = 0.9;
    double lambda = 0.1;
    double rho = 0.5;
    ScheduleKind kind = ScheduleKind::Linear;
    Activation phi = Activation::Sign;
    std::size_t grid_n = 100;
    AdamConfig adam;
    // Transported samples; 0 turns every simulation off.
    std::size_t batch = 200;
    std::vector<int> n_sweep;
    std::uint64_t seed = 0;
    std::string out_dir = ".";
    // "theory": per-node models built from the closed forms on the sampled
    // training set; "trained": one Adam-trained DAE per node.
    std::string models = "theory";
    // Times at which DAEs are trained for the weight experiments.
    std::vector<double> times;
};

const std::vector<std::string>& experiment_names();

// Defaults of the named experiment, with d reduced to desk scale.
// Throws UsageError for an unknown name.
ExperimentConfig default_config(const std::string& experiment);

struct FileRecord {
    std::string name;
    std::string sha256;
};

struct RunManifest {
    std::string config_json;
    std::vector<FileRecord> files;
    double runtime_seconds = 0.0;
    std::string tool_version;
};

std::string tool_version();

// Writes <out_dir>/<experiment>_<group>.csv files, then manifest.json
// (atomically, last). Sub-module errors are rethrown with the experiment
// name prepended.
RunManifest run_experiment(const ExperimentConfig& cfg);

struct TheoryQuery {
    int n = 4;
    double sigma = 0.9;
    double lambda = 0.1;
    double rho = 0.5;
    ScheduleKind kind = ScheduleKind::Linear;
    bool has_t = false;
    double t = 0.5;
    bool has_grid = false;
    std::size_t grid_n = 100;
    bool rk4 = false;
    int sign = 1;
};

// weights | flow | bayes | noskip | oracle-mse, printed as CSV.
void theory_eval(const std::string& sub, const TheoryQuery& query, std::ostream& out);

std::string sha256_file(const std::string& path);

}  // namespace flowlab
