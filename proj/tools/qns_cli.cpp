#include "qns/analysis.hpp"
#include "qns/experiments.hpp"

#include "CLI11.hpp"
#include "json.hpp"

#include <fstream>
#include <iostream>

using nlohmann::json;

namespace {

int cmd_run(const std::string& path, const std::vector<std::string>& sets, const std::string& output,
            const std::vector<std::uint64_t>& seeds) {
    std::ifstream f(path);
    if (!f) {
        std::cerr << "error: cannot read config " << path << "\n";
        return 2;
    }
    json j = json::parse(f, nullptr, false);
    if (j.is_discarded()) {
        std::cerr << "error: " << path << " is not valid JSON\n";
        return 2;
    }
    for (const std::string& s : sets) {
        const auto eq = s.find('=');
        if (eq == std::string::npos || eq == 0) {
            std::cerr << "error: --set expects key=value, got '" << s << "'\n";
            return 2;
        }
        const std::string key = s.substr(0, eq), value = s.substr(eq + 1);
        json v = json::parse(value, nullptr, false);
        j[key] = v.is_discarded() ? json(value) : v;
    }
    if (!output.empty()) j["output"] = output;
    if (!seeds.empty()) {
        j.erase("seed");
        j["seeds"] = seeds;
    }
    const qns::RunConfig cfg = qns::RunConfig::from_json(j);
    for (const std::string& p : qns::run_all(cfg)) std::cout << p << "\n";
    return 0;
}

int cmd_fit(const std::vector<std::string>& paths, const std::vector<double>& window, bool autowin,
            const std::string& xcol, const std::string& ycol, double min_decades) {
    json out;
    out["files"] = json::array();
    std::vector<double> exps;
    for (const std::string& p : paths) {
        const qns::CsvTable t = qns::read_csv(p);
        std::vector<double> xs, ys;
        const auto& cx = t.column(xcol);
        const auto& cy = t.column(ycol);
        for (std::size_t i = 0; i < cx.size(); ++i)
            if (cx[i] > 0.0 && cy[i] > 0.0) {
                xs.push_back(cx[i]);
                ys.push_back(cy[i]);
            }
        qns::FitResult fit;
        if (!window.empty()) {
            fit = qns::fit_power_law(xs, ys, std::make_pair(window[0], window[1]));
        } else if (autowin) {
            qns::AutoWindow aw;
            aw.min_decades = min_decades;
            fit = qns::fit_power_law_auto(xs, ys, aw);
        } else {
            fit = qns::fit_power_law(xs, ys);
        }
        json e;
        e["file"] = p;
        e["exponent"] = fit.exponent;
        e["intercept"] = fit.intercept;
        e["r2"] = fit.r2;
        e["window"] = {fit.lo, fit.hi};
        e["points"] = fit.points;
        out["files"].push_back(e);
        exps.push_back(fit.exponent);
    }
    out["median_exponent"] = qns::median(exps);
    std::cout << out.dump(2) << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Quadratic-network scaling experiments"};
    app.require_subcommand(1);

    auto* run = app.add_subcommand("run", "Run an experiment from a JSON config");
    std::string config;
    std::vector<std::string> sets;
    std::string output;
    std::vector<std::uint64_t> seeds;
    run->add_option("config", config, "Config file")->required();
    run->add_option("--set", sets, "Override a config field (key=value, value parsed as JSON when possible)");
    run->add_option("-o,--output", output, "Output directory");
    run->add_option("--seed", seeds, "Seeds (override the config)");

    auto* fit = app.add_subcommand("fit", "Fit power-law exponents to trajectory files");
    std::vector<std::string> fit_paths;
    std::vector<double> window;
    bool autowin = false;
    std::string xcol = "compute", ycol = "risk_normalized";
    double min_decades = 1.0;
    fit->add_option("csv", fit_paths, "Trajectory CSV files")->required();
    auto* wopt = fit->add_option("--window", window, "Fit window lo hi on the x column")->expected(2);
    fit->add_flag("--auto", autowin, "Select the window automatically")->excludes(wopt);
    fit->add_option("--x", xcol, "x column");
    fit->add_option("--y", ycol, "y column");
    fit->add_option("--decades", min_decades, "Minimum window span for --auto");

    auto* verify = app.add_subcommand("verify", "Run a verification suite");
    std::string suite;
    qns::SuiteOptions sopts;
    verify->add_option("suite", suite, "riccati | monotone | retraction | finetune | bounds")->required();
    verify->add_option("--dim", sopts.dim, "Problem size");
    verify->add_option("--trials", sopts.trials, "Random trials");
    verify->add_option("--steps", sopts.steps, "Steps (bounds, retraction)");
    verify->add_option("--seed", sopts.seed, "Seed");
    verify->add_flag("--euler", sopts.euler, "monotone: test the plain Euler step instead");

    auto* plot = app.add_subcommand("plot", "Plot trajectory files to SVG");
    std::vector<std::string> plot_paths;
    std::string svg_out;
    qns::PlotOptions popts;
    plot->add_option("csv", plot_paths, "Trajectory CSV files")->required();
    plot->add_option("-o,--out", svg_out, "Output SVG")->required();
    plot->add_flag("--loglog", popts.loglog, "Log-log axes");
    plot->add_flag("--theory", popts.theory, "Overlay the theory curve");
    plot->add_option("--x", popts.x, "x column");
    plot->add_option("--y", popts.y, "y column");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (run->parsed()) return cmd_run(config, sets, output, seeds);
        if (fit->parsed()) return cmd_fit(fit_paths, window, autowin, xcol, ycol, min_decades);
        if (verify->parsed()) {
            const auto checks = qns::verify_suite(suite, sopts);
            const json j = qns::checks_to_json(suite, checks);
            std::cout << j.dump(2) << "\n";
            return j["pass"].get<bool>() ? 0 : 1;
        }
        if (plot->parsed()) {
            std::vector<std::string> warnings;
            const std::string svg = qns::render_svg(plot_paths, popts, &warnings);
            for (const auto& w : warnings) std::cerr << "warning: " << w << "\n";
            qns::write_atomic(svg_out, svg);
            return 0;
        }
    } catch (const qns::ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const qns::DivergenceError& e) {
        std::cerr << "divergence: " << e.what() << "\n";
        return 3;
    } catch (const qns::Error& e) {
        // Errors raised by the numerics (singular solves, non-finite states).
        std::cerr << "numeric error: " << e.what() << "\n";
        return fit->parsed() ? 2 : 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 2;
}
