#include "qns/experiments.hpp"

#include "qns/finetune.hpp"
#include "qns/riccati.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <thread>

#ifndef QNS_GIT_DESCRIBE
#define QNS_GIT_DESCRIBE "unknown"
#endif

namespace qns {

using nlohmann::json;

std::string kind_name(RunKind k) {
    switch (k) {
        case RunKind::gf_closed: return "gf-closed";
        case RunKind::gf_rk4: return "gf-rk4";
        case RunKind::gd_population: return "gd-population";
        case RunKind::sgd_stiefel: return "sgd-stiefel";
        case RunKind::sgd_euclidean: return "sgd-euclidean";
    }
    return "?";
}

static RunKind parse_kind(const std::string& s) {
    for (RunKind k : {RunKind::gf_closed, RunKind::gf_rk4, RunKind::gd_population, RunKind::sgd_stiefel,
                      RunKind::sgd_euclidean})
        if (kind_name(k) == s) return k;
    throw ConfigError("config field 'kind': unknown run kind '" + s +
                      "' (expected gf-closed, gf-rk4, gd-population, sgd-stiefel or sgd-euclidean)");
}

namespace {

[[noreturn]] void field_error(const std::string& field, const std::string& msg) {
    throw ConfigError("config field '" + field + "': " + msg);
}

template <class T>
T get_field(const json& j, const std::string& field) {
    try {
        return j.at(field).get<T>();
    } catch (const json::exception&) {
        field_error(field, "wrong type");
    }
}

long get_integer(const json& j, const std::string& field) {
    const json& v = j.at(field);
    if (!v.is_number_integer()) field_error(field, "must be an integer");
    return v.get<long>();
}

double get_number(const json& j, const std::string& field) {
    const json& v = j.at(field);
    if (!v.is_number()) field_error(field, "must be a number");
    return v.get<double>();
}

}  // namespace

RunConfig RunConfig::from_json(const json& j) {
    if (!j.is_object()) throw ConfigError("config: top level must be a JSON object");
    static const std::set<std::string> known{"kind", "d", "r", "r_s", "alpha", "teacher", "eta", "eta_c", "c_alpha",
                                             "steps", "horizon", "points", "log_grid", "rk4_dt", "batch", "param",
                                             "seeds", "seed", "record_every", "log_points", "tracked",
                                             "all_alignments", "output", "name"};
    for (auto it = j.begin(); it != j.end(); ++it)
        if (!known.count(it.key())) field_error(it.key(), "unknown field");
    RunConfig c;
    if (!j.contains("kind")) field_error("kind", "missing");
    if (!j.at("kind").is_string()) field_error("kind", "must be a string");
    c.kind = parse_kind(j.at("kind").get<std::string>());
    for (const char* f : {"d", "r", "r_s"})
        if (!j.contains(f)) field_error(f, "missing");
    c.d = static_cast<int>(get_integer(j, "d"));
    c.r = static_cast<int>(get_integer(j, "r"));
    c.r_s = static_cast<int>(get_integer(j, "r_s"));
    if (j.contains("alpha")) c.alpha = get_number(j, "alpha");
    if (j.contains("teacher")) c.teacher = get_field<std::string>(j, "teacher");
    if (j.contains("eta") && !j.at("eta").is_null()) c.eta = get_number(j, "eta");
    if (j.contains("eta_c")) c.eta_c = get_number(j, "eta_c");
    if (j.contains("c_alpha")) c.c_alpha = get_number(j, "c_alpha");
    if (j.contains("steps")) c.steps = get_integer(j, "steps");
    if (j.contains("horizon")) c.horizon = get_number(j, "horizon");
    if (j.contains("points")) c.points = static_cast<int>(get_integer(j, "points"));
    if (j.contains("log_grid")) c.log_grid = get_field<bool>(j, "log_grid");
    if (j.contains("rk4_dt")) c.rk4_dt = get_number(j, "rk4_dt");
    if (j.contains("batch")) c.batch = static_cast<int>(get_integer(j, "batch"));
    if (j.contains("param")) c.param = get_field<std::string>(j, "param");
    if (j.contains("seeds") && j.contains("seed")) field_error("seed", "give either 'seed' or 'seeds'");
    if (j.contains("seeds")) {
        const json& s = j.at("seeds");
        if (!s.is_array()) field_error("seeds", "must be an array of non-negative integers");
        c.seeds.clear();
        for (const json& v : s) {
            if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<long long>() >= 0))
                field_error("seeds", "must be an array of non-negative integers");
            c.seeds.push_back(v.get<std::uint64_t>());
        }
    }
    if (j.contains("seed")) {
        const json& v = j.at("seed");
        if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<long long>() >= 0))
            field_error("seed", "must be a non-negative integer");
        c.seeds = {v.get<std::uint64_t>()};
    }
    if (j.contains("record_every")) c.record_every = get_integer(j, "record_every");
    if (j.contains("log_points")) c.log_points = static_cast<int>(get_integer(j, "log_points"));
    if (j.contains("tracked")) {
        const json& t = j.at("tracked");
        if (!t.is_array()) field_error("tracked", "must be an array of integers");
        for (const json& v : t) {
            if (!v.is_number_integer()) field_error("tracked", "must be an array of integers");
            c.tracked.push_back(v.get<int>());
        }
    }
    if (j.contains("all_alignments")) c.all_alignments = get_field<bool>(j, "all_alignments");
    if (j.contains("output")) c.output = get_field<std::string>(j, "output");
    if (j.contains("name")) c.name = get_field<std::string>(j, "name");
    c.validate();
    return c;
}

json RunConfig::to_json() const {
    json j;
    j["kind"] = kind_name(kind);
    j["d"] = d;
    j["r"] = r;
    j["r_s"] = r_s;
    j["alpha"] = alpha;
    j["teacher"] = teacher;
    if (std::isnan(eta))
        j["eta"] = nullptr;
    else
        j["eta"] = eta;
    j["eta_c"] = eta_c;
    j["c_alpha"] = c_alpha;
    j["steps"] = steps;
    j["horizon"] = horizon;
    j["points"] = points;
    j["log_grid"] = log_grid;
    j["rk4_dt"] = rk4_dt;
    j["batch"] = batch;
    j["param"] = param;
    j["seeds"] = seeds;
    j["record_every"] = record_every;
    j["log_points"] = log_points;
    j["tracked"] = tracked;
    j["all_alignments"] = all_alignments;
    j["output"] = output;
    j["name"] = name;
    return j;
}

void RunConfig::validate() const {
    if (d < 2) field_error("d", "must be at least 2");
    if (r < 1) field_error("r", "must be at least 1");
    if (r > d) field_error("r", "must not exceed d");
    if (r_s < 1) field_error("r_s", "must be at least 1");
    if (r_s >= d) field_error("r_s", "must be smaller than d");
    if (!std::isfinite(alpha) || alpha < 0.0) field_error("alpha", "must be a finite non-negative number");
    if (alpha == 0.5) field_error("alpha", "0.5 is excluded (boundary between regimes)");
    if (teacher != "standard" && teacher != "haar") field_error("teacher", "must be 'standard' or 'haar'");
    if (!std::isnan(eta) && !(eta > 0.0 && std::isfinite(eta))) field_error("eta", "must be positive");
    if (!(eta_c > 0.0)) field_error("eta_c", "must be positive");
    if (c_alpha < 0.0) field_error("c_alpha", "must be non-negative");
    if (steps < 0) field_error("steps", "must be non-negative");
    if (horizon < 0.0 || !std::isfinite(horizon)) field_error("horizon", "must be finite and non-negative");
    if (points < 2) field_error("points", "must be at least 2");
    if (rk4_dt < 0.0) field_error("rk4_dt", "must be non-negative");
    if (batch < 1) field_error("batch", "must be at least 1");
    if (param != "plain" && param != "two-homogeneous") field_error("param", "must be 'plain' or 'two-homogeneous'");
    if (kind == RunKind::sgd_stiefel && param != "plain") field_error("param", "the Stiefel mode requires 'plain'");
    if (seeds.empty()) field_error("seeds", "must not be empty");
    if (record_every < 1) field_error("record_every", "must be at least 1");
    if (log_points < 0) field_error("log_points", "must be non-negative");
    for (int j : tracked)
        if (j < 1 || j > r) field_error("tracked", "indices must lie in 1..r");
    if (name.empty() || name.find('/') != std::string::npos) field_error("name", "must be a plain file stem");
}

namespace {

struct RunContext {
    TeacherModel teacher;
    FlowParams flow;
    EffectiveScales scales;
    double time_unit = 1.0;  // κ_eff T_eff
    std::vector<int> tracked;
};

RunContext make_context(const RunConfig& cfg, std::uint64_t seed) {
    RunContext ctx;
    const PowerLawSpectrum spec = PowerLawSpectrum::power_law(cfg.r, cfg.alpha);
    if (cfg.teacher == "haar") {
        Rng trng(seed, 7);
        ctx.teacher = TeacherModel::haar(cfg.d, spec, trng);
    } else {
        ctx.teacher = TeacherModel::standard(cfg.d, spec);
    }
    ctx.flow = FlowParams::make(spec, cfg.d, cfg.r_s);
    ctx.scales = effective_scales(cfg.d, cfg.r_s, cfg.r, cfg.alpha);
    ctx.time_unit = ctx.scales.kappa_eff * ctx.scales.t_eff;
    if (cfg.all_alignments) {
        for (int j = 1; j <= cfg.r; ++j) ctx.tracked.push_back(j);
    } else if (!cfg.tracked.empty()) {
        ctx.tracked = cfg.tracked;
    } else {
        ctx.tracked = default_tracked(cfg.r, std::max(1, ctx.scales.r_eff));
    }
    return ctx;
}

std::vector<double> gf_grid(const RunConfig& cfg, const RunContext& ctx) {
    double horizon = cfg.horizon;
    if (horizon == 0.0) {
        if (cfg.alpha < 0.5)
            horizon = 2.0;
        else
            horizon = 1.5 / ctx.teacher.spectrum.lambdas(std::max(1, std::min(ctx.scales.r_eff, cfg.r)) - 1);
    }
    std::vector<double> u(static_cast<std::size_t>(cfg.points));
    const int n = cfg.points;
    for (int i = 0; i < n; ++i) {
        if (!cfg.log_grid) {
            u[static_cast<std::size_t>(i)] = horizon * i / (n - 1);
        } else {
            const double lo = std::log(horizon * 1e-3), hi = std::log(horizon);
            u[static_cast<std::size_t>(i)] = i == 0 ? 0.0 : std::exp(lo + (hi - lo) * (i - 1) / std::max(1, n - 2));
        }
    }
    return u;
}

TrajectoryRow gf_row(const RunContext& ctx, const Mat& w, long index, double t_raw, int r_s) {
    TrajectoryRow row;
    row.step = index;
    row.time_raw = t_raw;
    row.time_rescaled = t_raw / ctx.time_unit;
    row.compute = t_raw * ctx.teacher.d * r_s;
    const StudentState s(w);
    row.risk_normalized = population_risk(ctx.teacher, s, true);
    row.risk = row.risk_normalized / 8.0;
    row.align = alignments(ctx.teacher, s, ctx.tracked);
    return row;
}

}  // namespace

RunOutput run_single(const RunConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    const RunContext ctx = make_context(cfg, seed);
    RunOutput out;
    out.seed = seed;
    out.tracked = ctx.tracked;

    if (cfg.kind == RunKind::gf_closed || cfg.kind == RunKind::gf_rk4) {
        Rng rng(seed, 1);
        const Mat w0 = sample_gaussian_mat(cfg.d, cfg.r_s, 1.0 / cfg.d, rng);
        const std::vector<double> grid = gf_grid(cfg, ctx);
        if (cfg.kind == RunKind::gf_closed) {
            for (std::size_t i = 0; i < grid.size(); ++i) {
                const double t = grid[i] * ctx.time_unit;
                const Mat w = closed_form_weight_factor(w0, t, ctx.flow);
                if (!w.allFinite()) throw DivergenceError("gf-closed: non-finite state at t = " + std::to_string(t));
                out.rows.push_back(gf_row(ctx, w, static_cast<long>(i), t, cfg.r_s));
                out.final_w = w;
            }
        } else {
            const double dt = cfg.rk4_dt > 0.0 ? cfg.rk4_dt : default_rk4_dt(ctx.flow);
            const TeacherModel& teacher = ctx.teacher;
            const std::function<Mat(const Mat&)> rhs = [&teacher](const Mat& w) {
                return Mat(-population_grad(teacher, w));
            };
            Mat w = w0;
            double t = 0.0;
            for (std::size_t i = 0; i < grid.size(); ++i) {
                const double target = grid[i] * ctx.time_unit;
                const double span = target - t;
                if (span > 0.0) {
                    const long n = std::max(1L, static_cast<long>(std::ceil(span / dt - 1e-9)));
                    const double h = span / static_cast<double>(n);
                    for (long k = 0; k < n; ++k) {
                        w = rk4_step<Mat>(rhs, w, h);
                        if (!w.allFinite() || w.norm() > 1e3)
                            throw DivergenceError("gf-rk4: divergence before t = " + std::to_string(target));
                    }
                }
                t = target;
                out.rows.push_back(gf_row(ctx, w, static_cast<long>(i), t, cfg.r_s));
            }
            out.final_w = w;
        }
        return out;
    }

    SgdConfig sc;
    sc.mode = cfg.kind == RunKind::gd_population ? SgdMode::euclidean_population
              : cfg.kind == RunKind::sgd_stiefel ? SgdMode::stiefel_online
                                                  : SgdMode::euclidean_online;
    sc.param = cfg.param == "plain" ? Param::plain : Param::two_homogeneous;
    sc.eta = std::isnan(cfg.eta) ? schedule_eta(cfg.d, cfg.r, cfg.r_s, cfg.alpha, cfg.eta_c, cfg.c_alpha) : cfg.eta;
    sc.batch = cfg.batch;
    sc.steps = cfg.steps;
    sc.record_every = cfg.record_every;
    sc.log_points = cfg.log_points;
    sc.seed = seed;
    sc.tracked = ctx.tracked;
    const Trajectory traj = run_training(ctx.teacher, cfg.r_s, sc);
    for (const StepRecord& rec : traj.records) {
        TrajectoryRow row;
        row.step = rec.step;
        row.time_raw = sc.eta * static_cast<double>(rec.step);
        row.time_rescaled = row.time_raw / ctx.time_unit;
        row.compute = rec.compute;
        row.risk_normalized = rec.risk;
        row.risk = rec.risk / 8.0;
        row.align = rec.alignments;
        out.rows.push_back(std::move(row));
    }
    out.final_w = traj.final_w;
    return out;
}

static std::string fmt17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string format_csv(const RunOutput& out) {
    std::ostringstream os;
    os << "step,time_raw,time_rescaled,compute,risk,risk_normalized";
    for (int j : out.tracked) os << ",align_" << j;
    os << "\n";
    for (const TrajectoryRow& r : out.rows) {
        os << r.step << ',' << fmt17(r.time_raw) << ',' << fmt17(r.time_rescaled) << ',' << fmt17(r.compute) << ','
           << fmt17(r.risk) << ',' << fmt17(r.risk_normalized);
        for (double a : r.align) os << ',' << fmt17(a);
        os << "\n";
    }
    return os.str();
}

std::uint64_t config_hash(const RunConfig& cfg, std::uint64_t seed) {
    const std::string text = cfg.to_json().dump() + "#seed=" + std::to_string(seed);
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : text) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

std::string git_describe() { return QNS_GIT_DESCRIBE; }

std::string format_sidecar(const RunConfig& cfg, std::uint64_t seed) {
    json j;
    j["config"] = cfg.to_json();
    j["seed"] = seed;
    j["git_describe"] = git_describe();
    char buf[24];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(config_hash(cfg, seed)));
    j["config_hash"] = buf;
    return j.dump(2) + "\n";
}

void write_atomic(const std::string& path, const std::string& content) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) throw ConfigError("cannot write " + tmp);
        f << content;
        f.flush();
        if (!f) throw ConfigError("write failed for " + tmp);
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw ConfigError("cannot rename " + tmp + " to " + path + ": " + ec.message());
}

static int env_int(const char* name, int fallback) {
    const char* v = std::getenv(name);
    if (!v || !*v) return fallback;
    char* end = nullptr;
    const long x = std::strtol(v, &end, 10);
    if (*end != '\0' || x < 0) throw ConfigError(std::string("environment variable ") + name + " must be a non-negative integer");
    return static_cast<int>(x);
}

std::vector<std::string> run_all(const RunConfig& cfg_in) {
    RunConfig cfg = cfg_in;
    if (const char* s = std::getenv("QNS_SEED"); s && *s) {
        char* end = nullptr;
        const unsigned long long v = std::strtoull(s, &end, 10);
        if (*end != '\0') throw ConfigError("environment variable QNS_SEED must be a non-negative integer");
        cfg.seeds = {static_cast<std::uint64_t>(v)};
    }
    cfg.validate();
    std::error_code ec;
    std::filesystem::create_directories(cfg.output, ec);
    if (ec) throw ConfigError("cannot create output directory " + cfg.output + ": " + ec.message());

    const std::size_t n = cfg.seeds.size();
    const int hw = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
    int workers = env_int("QNS_THREADS", hw);
    if (workers < 1) workers = 1;
    workers = std::min<int>(workers, static_cast<int>(n));

    std::vector<std::string> paths(n);
    std::vector<std::exception_ptr> errors(n);
    auto job = [&](std::size_t i) {
        try {
            const std::uint64_t seed = cfg.seeds[i];
            const RunOutput out = run_single(cfg, seed);
            const std::string stem = cfg.output + "/" + cfg.name + "_s" + std::to_string(seed);
            write_atomic(stem + ".csv", format_csv(out));
            write_atomic(stem + ".json", format_sidecar(cfg, seed));
            paths[i] = stem + ".csv";
        } catch (...) {
            errors[i] = std::current_exception();
        }
    };
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) job(i);
    } else {
        std::vector<std::thread> pool;
        for (int w = 0; w < workers; ++w)
            pool.emplace_back([&, w] {
                for (std::size_t i = static_cast<std::size_t>(w); i < n; i += static_cast<std::size_t>(workers)) job(i);
            });
        for (auto& t : pool) t.join();
    }
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
    return paths;
}

const std::vector<double>& CsvTable::column(const std::string& name) const {
    for (std::size_t i = 0; i < header.size(); ++i)
        if (header[i] == name) return columns[i];
    throw ConfigError("CSV has no column '" + name + "'");
}

bool CsvTable::has(const std::string& name) const {
    return std::find(header.begin(), header.end(), name) != header.end();
}

CsvTable read_csv(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot read " + path);
    CsvTable t;
    std::string line;
    if (!std::getline(f, line)) throw ConfigError(path + ": empty file");
    {
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) t.header.push_back(cell);
    }
    t.columns.resize(t.header.size());
    long lineno = 1;
    while (std::getline(f, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string cell;
        std::size_t c = 0;
        while (std::getline(ss, cell, ',')) {
            if (c >= t.header.size()) throw ConfigError(path + ":" + std::to_string(lineno) + ": too many cells");
            char* end = nullptr;
            const double v = std::strtod(cell.c_str(), &end);
            if (end == cell.c_str() || *end != '\0')
                throw ConfigError(path + ":" + std::to_string(lineno) + ": not a number: '" + cell + "'");
            t.columns[c++].push_back(v);
        }
        if (c != t.header.size()) throw ConfigError(path + ":" + std::to_string(lineno) + ": too few cells");
    }
    return t;
}

// ---------------------------------------------------------------- verify

namespace {

CheckResult check(const std::string& name, double residual, double tol, const std::string& detail = {}) {
    CheckResult c;
    c.name = name;
    c.residual = residual;
    c.tolerance = tol;
    c.pass = std::isfinite(residual) && residual <= tol;
    c.detail = detail;
    return c;
}

double rel_max(const Mat& a, const Mat& b) {
    const double scale = std::max(b.cwiseAbs().maxCoeff(), 1e-300);
    return (a - b).cwiseAbs().maxCoeff() / scale;
}

Vec random_positive(Eigen::Index n, Rng& rng, double lo, double hi) {
    Vec v(n);
    for (Eigen::Index i = 0; i < n; ++i) v(i) = lo + (hi - lo) * rng.uniform();
    return v;
}

Mat random_psd(Eigen::Index n, Eigen::Index rank, double scale, Rng& rng) {
    const Mat f = sample_gaussian_mat(n, rank, scale / static_cast<double>(rank), rng);
    return f * f.transpose();
}

std::vector<CheckResult> suite_riccati(const SuiteOptions& o) {
    std::vector<CheckResult> out;
    Rng rng(o.seed, 11);
    const int r = o.dim > 0 ? o.dim : 8;
    const int r_s = std::max(1, r / 2);
    const int d = 4 * r;
    const PowerLawSpectrum spec = PowerLawSpectrum::power_law(r, 1.0);
    const FlowParams p = FlowParams::make(spec, d, r_s);
    const Mat u = sample_stiefel(d, r_s, rng);
    const Mat tu = u.topRows(r);
    const SymMat g0 = SymMat::symmetrize(tu * tu.transpose());
    const auto traj = integrate_rk4([&p](const SymMat& g) { return gram_rhs_align(g, p); }, g0, 5.0, 1e-3, 500);
    double worst = 0.0;
    for (std::size_t i = 0; i < traj.times.size(); ++i)
        worst = std::max(worst, rel_max(closed_form_align_gram(g0, traj.times[i], p).mat(), traj.grams[i].mat()));
    out.push_back(check("closed_form_align_gram_vs_rk4", worst, 1e-6));

    const SymMat g0p = SymMat::symmetrize(1.25 * g0.mat() + 0.01 * Mat::Identity(r, r));
    double order = 0.0;
    for (double t : {0.25, 0.5, 1.0, 2.0, 5.0}) {
        const SymMat hi = closed_form_align_gram(g0p, t, p), lo = closed_form_align_gram(g0, t, p);
        order = std::max(order, std::max(0.0, -min_eigenvalue(SymMat::symmetrize(hi.mat() - lo.mat()))));
    }
    out.push_back(check("closed_form_monotone_in_init", order, 1e-9));

    const int trials = o.trials > 0 ? o.trials : 20;
    double r2a = 0.0, r2b = 0.0, c1 = 0.0, b4 = 0.0;
    for (int k = 0; k < trials; ++k) {
        const int n = 1 + static_cast<int>(rng.uniform() * 6);
        const Vec lh = random_positive(n, rng, 0.1, 2.0);
        const double eta = 0.02 + 0.3 * rng.uniform();
        for (long t = 0; t <= 100; t += 7) {
            const RiccatiBlocks b = riccati_blocks(lh, eta, t);
            for (Eigen::Index i = 0; i < n; ++i) {
                const double lhs = b.a11(i) + eta * lh(i) * b.a12(i);
                r2a = std::max(r2a, std::abs(lhs - b.a22(i)) / std::max(std::abs(b.a22(i)), 1.0));
                const double det = b.a22(i) * b.a11(i) - b.a12(i) * b.a12(i);
                const double scale = b.log_scale(i) == 0.0 ? 1.0 : std::exp(-2.0 * b.log_scale(i));
                r2b = std::max(r2b, std::abs(det - scale) / std::max(b.a22(i) * b.a11(i), 1.0));
            }
            // Power closed form against repeated 2×2 products.
            const PowerBlocks pb = zero_diag_power_blocks(lh, eta, t);
            for (Eigen::Index i = 0; i < n; ++i) {
                Eigen::Matrix2d m, acc = Eigen::Matrix2d::Identity();
                m << 1.0, eta, eta * lh(i) * lh(i), 1.0;
                for (long s = 0; s < t; ++s) acc = acc * m;
                Eigen::Matrix2d cf;
                cf << pb.b11(i), pb.b12(i), pb.b21(i), pb.b22(i);
                c1 = std::max(c1, (cf - acc).cwiseAbs().maxCoeff() / acc.cwiseAbs().maxCoeff());
            }
        }
        const Vec l1 = random_positive(n, rng, 0.1, 1.5), l2 = random_positive(n, rng, 0.5, 1.5);
        const SymMat g(random_psd(n, n, 1.0, rng));
        const Vec h = l2.cwiseSqrt();
        Mat v = 2.0 * h.asDiagonal() * g.mat() * h.asDiagonal();
        v.diagonal() -= l1;
        SymMat vs = SymMat::symmetrize(v);
        for (long t = 1; t <= 200; ++t) {
            vs = v_update(vs, lh, eta);
            if (t % 25 != 0) continue;
            Mat back = vs.mat();
            back.diagonal() += l1;
            const Mat gi = 0.5 * h.cwiseInverse().asDiagonal() * back * h.cwiseInverse().asDiagonal();
            b4 = std::max(b4, rel_max(closed_form_discrete_gram(g, l1, l2, lh, eta, t).mat(), gi));
        }
    }
    out.push_back(check("blocks_sum_identity", r2a, 1e-12));
    out.push_back(check("blocks_determinant_identity", r2b, 1e-12));
    out.push_back(check("zero_diag_power_closed_form", c1, 1e-12));
    out.push_back(check("discrete_closed_form_vs_iteration", b4, 1e-10));
    return out;
}

std::vector<CheckResult> suite_monotone(const SuiteOptions& o) {
    Rng rng(o.seed, 12);
    const int trials = o.trials > 0 ? o.trials : 1000;
    const int max_dim = o.dim > 0 ? o.dim : 16;
    double worst = 0.0;
    int violations = 0;
    double consistency = 0.0;
    for (int k = 0; k < trials; ++k) {
        const int n = 1 + static_cast<int>(rng.uniform() * max_dim);
        const Vec lam = random_positive(n, rng, 0.05, 2.0);
        const double eta = (0.5 / lam.maxCoeff()) * (0.05 + 0.9 * rng.uniform());
        const double scale = std::pow(10.0, -1.0 + 2.0 * rng.uniform());
        const Mat lo = random_psd(n, 1 + static_cast<int>(rng.uniform() * n), scale, rng);
        const Mat gap = random_psd(n, 1 + static_cast<int>(rng.uniform() * n), scale * rng.uniform(), rng);
        const SymMat gl = SymMat::symmetrize(lo), gh = SymMat::symmetrize(lo + gap);
        const SymMat nl = o.euler ? euler_update(gl, lam, eta) : monotone_update(gl, lam, eta);
        const SymMat nh = o.euler ? euler_update(gh, lam, eta) : monotone_update(gh, lam, eta);
        const double m = min_eigenvalue(SymMat::symmetrize(nh.mat() - nl.mat()));
        if (m < -1e-10) ++violations;
        worst = std::max(worst, -m);
        if (!o.euler) {
            // Change of variables V = Λ^{1/2}(2G − I)Λ^{1/2} with Λ̂ = √2 Λ.
            const Vec h = lam.cwiseSqrt();
            auto to_v = [&](const SymMat& g) {
                Mat b = 2.0 * g.mat();
                b.diagonal().array() -= 1.0;
                return SymMat::symmetrize(h.asDiagonal() * b * h.asDiagonal());
            };
            const SymMat via_v = v_update(to_v(gl), std::sqrt(2.0) * lam, eta);
            const SymMat direct = to_v(nl);
            consistency = std::max(consistency, rel_max(via_v.mat(), direct.mat()));
        }
    }
    std::vector<CheckResult> out;
    std::ostringstream os;
    os << violations << " violation(s) in " << trials << " trials";
    out.push_back(check(o.euler ? "euler_preserves_order" : "monotone_update_preserves_order", std::max(0.0, worst),
                        1e-10, os.str()));
    if (!o.euler) out.push_back(check("monotone_vs_v_update", consistency, 1e-12));
    return out;
}

std::vector<CheckResult> suite_retraction(const SuiteOptions& o) {
    Rng rng(o.seed, 13);
    const int d = o.dim > 0 ? o.dim : 64;
    const int r_s = std::max(1, std::min(4, d / 2));
    const int trials = o.trials > 0 ? o.trials : 200;
    const TeacherModel t = TeacherModel::standard(d, PowerLawSpectrum::power_law(std::min(8, d), 1.0));
    double fast = 0.0, tangency = 0.0, ortho = 0.0;
    for (int k = 0; k < trials; ++k) {
        const Mat w = sample_stiefel(d, r_s, rng);
        const Sample s = draw_sample(t, rng);
        const double eta = 0.5 * rng.uniform();
        const Mat a = stiefel_step_rank1(w, s, eta);
        const Mat b = stiefel_step_dense(w, {s}, eta);
        fast = std::max(fast, (a - b).cwiseAbs().maxCoeff());
        const Mat g = stiefel_grad(StudentState(w), s);
        const Mat tg = w.transpose() * g;
        tangency = std::max(tangency, (tg + tg.transpose()).cwiseAbs().maxCoeff());
    }
    const long steps = o.steps > 0 ? o.steps : 2000;
    Mat w = sample_stiefel(d, r_s, rng);
    for (long k = 0; k < steps; ++k) {
        w = stiefel_step_rank1(w, draw_sample(t, rng), 1.0 / d);
        ortho = std::max(ortho, (w.transpose() * w - Mat::Identity(r_s, r_s)).cwiseAbs().maxCoeff());
    }
    return {check("rank1_vs_dense_retraction", fast, 1e-10), check("stiefel_gradient_tangency", tangency, 1e-10),
            check("orthonormality_after_steps", ortho, 1e-9)};
}

std::vector<CheckResult> suite_finetune(const SuiteOptions& o) {
    Rng rng(o.seed, 14);
    const int d = o.dim > 0 ? o.dim : 64;
    const int r_s = 4;
    const int trials = o.trials > 0 ? o.trials : 50;
    const TeacherModel t = TeacherModel::standard(d, PowerLawSpectrum::power_law(std::min(8, d), 1.0));
    double ident = 0.0, adj = 0.0, idem = 0.0, root = 0.0;
    for (int k = 0; k < trials; ++k) {
        const Mat w = sample_stiefel(d, r_s, rng);
        const Mat om = sample_gaussian_mat(r_s, r_s, 1.0, rng);
        ident = std::max(ident, std::abs(population_risk(t, Mat(w * om), true) - two_term_risk(t, w, om)));
        const StudentState s(w);
        const FineTuneBatch b = collect_batch(t, s, 20, rng);
        const SymMat x = SymMat::symmetrize(sample_gaussian_mat(r_s, r_s, 1.0, rng));
        const SymMat y = SymMat::symmetrize(sample_gaussian_mat(r_s, r_s, 1.0, rng));
        const double lhs = y.mat().cwiseProduct(l_operator_apply(b, x).mat()).sum();
        const double rhs = x.mat().cwiseProduct(l_operator_apply(b, y).mat()).sum();
        adj = std::max(adj, std::abs(lhs - rhs) / std::max(1.0, std::abs(lhs)));
        const SymMat pr = psd_project(x);
        idem = std::max(idem, (psd_project(pr).mat() - pr.mat()).cwiseAbs().maxCoeff());
        const FineTuneResult res = finetune(t, s, 50, rng);
        root = std::max(root, (res.omega_hat * res.omega_hat.transpose() - res.s_hat.mat()).cwiseAbs().maxCoeff());
    }
    return {check("two_term_risk_identity", ident, 1e-10), check("l_operator_self_adjoint", adj, 1e-10),
            check("psd_projection_idempotent", idem, 1e-12), check("omega_square_root", root, 1e-9)};
}

std::vector<CheckResult> suite_bounds(const SuiteOptions& o) {
    std::vector<CheckResult> out;
    const long steps = o.steps > 0 ? o.steps : 10000;
    const int d = o.dim > 0 ? o.dim : 64;
    for (double alpha : {1.0, 0.25}) {
        Rng rng(o.seed, 15);
        const int r = 8, r_s = 4;
        const PowerLawSpectrum spec = PowerLawSpectrum::power_law(r, alpha);
        BoundingConfig cfg;
        cfg.d = d;
        cfg.r_s = r_s;
        const double eta_max = spec.lambdas(r - 1) * std::sqrt(static_cast<double>(r_s)) / (cfg.c_shift * spec.frob * d);
        cfg.eta = 0.5 * eta_max;
        const Mat w = sample_stiefel(d, r_s, rng);
        const Mat tw = w.topRows(r);
        const SymMat g0 = SymMat::symmetrize(tw * tw.transpose());
        BoundingState st = bounding_init(g0, spec, cfg);
        const BoundingSystem sys = make_bounding_system(spec, cfg);
        double lower = 0.0, upper = 0.0, floor = 0.0, order = 0.0;
        long first_bad = -1;
        for (long k = 0; k <= steps; ++k) {
            if (k > 0) st = bounding_step(st, spec, cfg);
            const SandwichReport rep = check_sandwich(st, sys, 1e-8);
            lower = std::max(lower, -rep.lower_margin);
            upper = std::max(upper, -rep.upper_margin);
            floor = std::max(floor, -rep.floor_margin);
            order = std::max(order, -min_eigenvalue(SymMat::symmetrize(upper_gram(st, sys).mat() - lower_gram(st, sys).mat())));
            if (!rep.ok && first_bad < 0) first_bad = k;
        }
        const std::string tag = alpha < 0.5 ? "heavy" : "light";
        const std::string detail = first_bad < 0 ? "" : "first violation at step " + std::to_string(first_bad);
        out.push_back(check("bounds_" + tag + "_lower_sandwich", std::max(0.0, lower), 1e-8, detail));
        out.push_back(check("bounds_" + tag + "_upper_sandwich", std::max(0.0, upper), 1e-8, detail));
        out.push_back(check("bounds_" + tag + "_bounds_ordered", std::max(0.0, order), 1e-8));
        out.push_back(check("bounds_" + tag + "_reference_floor", std::max(0.0, floor), 1e-8));
    }
    return out;
}

}  // namespace

std::vector<CheckResult> verify_suite(const std::string& suite, const SuiteOptions& opts) {
    if (suite == "riccati") return suite_riccati(opts);
    if (suite == "monotone") return suite_monotone(opts);
    if (suite == "retraction") return suite_retraction(opts);
    if (suite == "finetune") return suite_finetune(opts);
    if (suite == "bounds") return suite_bounds(opts);
    throw ConfigError("unknown suite '" + suite + "' (expected riccati, monotone, retraction, finetune or bounds)");
}

json checks_to_json(const std::string& suite, const std::vector<CheckResult>& checks) {
    json j;
    j["suite"] = suite;
    bool all = true;
    j["checks"] = json::array();
    for (const CheckResult& c : checks) {
        json e;
        e["name"] = c.name;
        e["pass"] = c.pass;
        e["residual"] = c.residual;
        e["tolerance"] = c.tolerance;
        if (!c.detail.empty()) e["detail"] = c.detail;
        j["checks"].push_back(e);
        all = all && c.pass;
    }
    j["pass"] = all;
    return j;
}

// ---------------------------------------------------------------- plot

namespace {

std::string sidecar_for(const std::string& csv) {
    std::filesystem::path p(csv);
    p.replace_extension(".json");
    return p.string();
}

struct Series {
    std::vector<double> x, y;
    bool dashed = false;
};

std::string num(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3f", v);
    return buf;
}

}  // namespace

std::string render_svg(const std::vector<std::string>& csv_paths, const PlotOptions& opts,
                       std::vector<std::string>* warnings) {
    std::vector<Series> series;
    auto warn = [&](const std::string& m) {
        if (warnings) warnings->push_back(m);
    };
    for (const std::string& path : csv_paths) {
        const CsvTable t = read_csv(path);
        Series s;
        const auto& xs = t.column(opts.x);
        const auto& ys = t.column(opts.y);
        for (std::size_t i = 0; i < xs.size(); ++i) {
            if (opts.loglog && (!(xs[i] > 0.0) || !(ys[i] > 0.0))) continue;
            s.x.push_back(xs[i]);
            s.y.push_back(ys[i]);
        }
        if (s.x.empty()) warn(path + ": empty series");
        series.push_back(s);
        if (opts.theory && opts.x == "time_rescaled" && opts.y == "risk_normalized" && !s.x.empty()) {
            std::ifstream f(sidecar_for(path));
            if (!f) {
                warn(path + ": no sidecar, theory overlay skipped");
                continue;
            }
            const json side = json::parse(f, nullptr, false);
            if (side.is_discarded() || !side.contains("config")) {
                warn(path + ": unreadable sidecar, theory overlay skipped");
                continue;
            }
            const RunConfig cfg = RunConfig::from_json(side["config"]);
            const PowerLawSpectrum spec = PowerLawSpectrum::power_law(cfg.r, cfg.alpha);
            const EffectiveScales sc = effective_scales(cfg.d, cfg.r_s, cfg.r, cfg.alpha);
            Series th;
            th.dashed = true;
            for (double u : s.x) {
                th.x.push_back(u);
                th.y.push_back(cfg.alpha < 0.5
                                   ? theory_limit_risk(u, cfg.alpha, static_cast<double>(cfg.r_s) / cfg.r, Regime::heavy)
                                   : theory_risk_curve(u, sc, spec));
            }
            if (opts.loglog) {
                Series keep;
                keep.dashed = true;
                for (std::size_t i = 0; i < th.x.size(); ++i)
                    if (th.x[i] > 0.0 && th.y[i] > 0.0) {
                        keep.x.push_back(th.x[i]);
                        keep.y.push_back(th.y[i]);
                    }
                th = keep;
            }
            series.push_back(th);
        }
    }
    auto tx = [&](double v) { return opts.loglog ? std::log10(v) : v; };
    double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
    for (const Series& s : series)
        for (std::size_t i = 0; i < s.x.size(); ++i) {
            xmin = std::min(xmin, tx(s.x[i]));
            xmax = std::max(xmax, tx(s.x[i]));
            ymin = std::min(ymin, tx(s.y[i]));
            ymax = std::max(ymax, tx(s.y[i]));
        }
    if (xmin > xmax) xmin = 0.0, xmax = 1.0, ymin = 0.0, ymax = 1.0;
    if (xmax == xmin) xmax = xmin + 1.0;
    if (ymax == ymin) ymax = ymin + 1.0;
    const double w = 640, h = 400, ml = 60, mr = 20, mt = 20, mb = 50;
    auto px = [&](double v) { return ml + (tx(v) - xmin) / (xmax - xmin) * (w - ml - mr); };
    auto py = [&](double v) { return h - mb - (tx(v) - ymin) / (ymax - ymin) * (h - mt - mb); };
    static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2"};
    std::ostringstream os;
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h << "\" viewBox=\"0 0 " << w
       << ' ' << h << "\">\n";
    os << "<rect x=\"0\" y=\"0\" width=\"" << w << "\" height=\"" << h << "\" fill=\"white\"/>\n";
    os << "<line x1=\"" << ml << "\" y1=\"" << h - mb << "\" x2=\"" << w - mr << "\" y2=\"" << h - mb
       << "\" stroke=\"black\"/>\n";
    os << "<line x1=\"" << ml << "\" y1=\"" << mt << "\" x2=\"" << ml << "\" y2=\"" << h - mb << "\" stroke=\"black\"/>\n";
    const std::string xl = opts.loglog ? "log10 " + opts.x : opts.x;
    const std::string yl = opts.loglog ? "log10 " + opts.y : opts.y;
    os << "<text x=\"" << w / 2 << "\" y=\"" << h - 15 << "\" text-anchor=\"middle\" font-size=\"12\">" << xl << " ["
       << num(xmin) << ", " << num(xmax) << "]</text>\n";
    os << "<text x=\"15\" y=\"" << h / 2 << "\" text-anchor=\"middle\" font-size=\"12\" transform=\"rotate(-90 15 "
       << h / 2 << ")\">" << yl << " [" << num(ymin) << ", " << num(ymax) << "]</text>\n";
    std::size_t solid = 0;
    for (const Series& s : series) {
        if (s.x.empty()) continue;
        const char* color = colors[(s.dashed ? (solid ? solid - 1 : 0) : solid) % 7];
        os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\"";
        if (s.dashed) os << " stroke-dasharray=\"6 4\"";
        os << " points=\"";
        for (std::size_t i = 0; i < s.x.size(); ++i) os << (i ? " " : "") << num(px(s.x[i])) << ',' << num(py(s.y[i]));
        os << "\"/>\n";
        if (!s.dashed) ++solid;
    }
    os << "</svg>\n";
    return os.str();
}

}  // namespace qns
