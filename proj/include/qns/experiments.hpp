#pragma once

#include "qns/analysis.hpp"
#include "qns/flow.hpp"
#include "qns/linalg.hpp"
#include "qns/model.hpp"
#include "qns/sgd.hpp"

#include "json.hpp"

#include <cstdint>
#include <limits>
#include <map>
#include <string>
#include <vector>

namespace qns {

class ConfigError : public Error {
public:
    using Error::Error;
};

enum class RunKind { gf_closed, gf_rk4, gd_population, sgd_stiefel, sgd_euclidean };

struct RunConfig {
    RunKind kind = RunKind::gf_closed;
    int d = 0;
    int r = 0;
    int r_s = 0;
    double alpha = 1.0;
    std::string teacher = "standard";  // or "haar"
    double eta = std::numeric_limits<double>::quiet_NaN();  // NaN: schedule_eta
    double eta_c = 0.5;
    double c_alpha = 0.0;
    long steps = 0;
    double horizon = 0.0;  // GF kinds: end of the grid in rescaled time
    int points = 100;      // GF kinds: grid size
    bool log_grid = false;
    double rk4_dt = 0.0;   // 0: default
    int batch = 1;
    std::string param = "plain";
    std::vector<std::uint64_t> seeds{0};
    long record_every = 1;
    int log_points = 0;
    std::vector<int> tracked;
    bool all_alignments = false;
    std::string output = ".";
    std::string name = "run";

    static RunConfig from_json(const nlohmann::json& j);
    nlohmann::json to_json() const;
    void validate() const;
};

std::string kind_name(RunKind k);

struct TrajectoryRow {
    long step = 0;
    double time_raw = 0.0;
    double time_rescaled = 0.0;
    double compute = 0.0;
    double risk = 0.0;
    double risk_normalized = 0.0;
    std::vector<double> align;
};

struct RunOutput {
    std::uint64_t seed = 0;
    std::vector<int> tracked;
    std::vector<TrajectoryRow> rows;
    Mat final_w;
};

// Executes one seed of the configuration.
RunOutput run_single(const RunConfig& cfg, std::uint64_t seed);

std::string format_csv(const RunOutput& out);
std::string format_sidecar(const RunConfig& cfg, std::uint64_t seed);
std::uint64_t config_hash(const RunConfig& cfg, std::uint64_t seed);
std::string git_describe();

// Writes `content` to `path` through a temporary file and a rename.
void write_atomic(const std::string& path, const std::string& content);

// Runs every seed (worker count from QNS_THREADS, seed from QNS_SEED when
// set) and returns the CSV paths written.
std::vector<std::string> run_all(const RunConfig& cfg);

struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<double>> columns;
    const std::vector<double>& column(const std::string& name) const;
    bool has(const std::string& name) const;
};
CsvTable read_csv(const std::string& path);

struct CheckResult {
    std::string name;
    bool pass = false;
    double residual = 0.0;
    double tolerance = 0.0;
    std::string detail;
};

struct SuiteOptions {
    int dim = 0;        // 0: suite default
    int trials = 0;     // 0: suite default
    long steps = 0;     // 0: suite default
    bool euler = false; // monotone suite: test plain Euler instead
    std::uint64_t seed = 0;
};

std::vector<CheckResult> verify_suite(const std::string& suite, const SuiteOptions& opts);
nlohmann::json checks_to_json(const std::string& suite, const std::vector<CheckResult>& checks);

struct PlotOptions {
    bool loglog = false;
    bool theory = false;
    std::string x = "time_rescaled";
    std::string y = "risk_normalized";
};
std::string render_svg(const std::vector<std::string>& csv_paths, const PlotOptions& opts,
                       std::vector<std::string>* warnings = nullptr);

}  // namespace qns
