#include "qns/analysis.hpp"
#include "qns/experiments.hpp"
#include "qns/finetune.hpp"
#include "qns/flow.hpp"
#include "qns/riccati.hpp"
#include "qns/sgd.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

using namespace qns;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

struct Criterion {
    int id;
    std::string title;
    double budget_s;  // 0: no time limit
    std::function<Outcome()> run;
};

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

double rel_max(const Mat& a, const Mat& b) { return (a - b).cwiseAbs().maxCoeff() / b.cwiseAbs().maxCoeff(); }

Vec random_positive(int n, Rng& rng, double lo, double hi) {
    Vec v(n);
    for (int i = 0; i < n; ++i) v(i) = lo + (hi - lo) * rng.uniform();
    return v;
}

SymMat random_psd(int n, Rng& rng, double scale) {
    const Mat f = sample_gaussian_mat(n, n, scale / n, rng);
    return SymMat::symmetrize(f * f.transpose());
}

SymMat stiefel_gram(int r, int d, int r_s, Rng& rng) {
    const Mat u = sample_stiefel(d, r_s, rng);
    const Mat tu = u.topRows(r);
    return SymMat::symmetrize(tu * tu.transpose());
}

Outcome ac1() {
    Rng rng(1);
    const int d = 64, r = 16, r_s = 8;
    const FlowParams p = FlowParams::make(PowerLawSpectrum::power_law(r, 1.0), d, r_s);
    const SymMat g0 = stiefel_gram(r, d, r_s, rng);
    const GramTrajectory tr =
        integrate_rk4([&p](const SymMat& g) { return gram_rhs_align(g, p); }, g0, 10.0, 1e-3, 100);
    double worst = 0.0;
    for (std::size_t i = 0; i < tr.times.size(); ++i)
        worst = std::max(worst, rel_max(closed_form_align_gram(g0, tr.times[i], p).mat(), tr.grams[i].mat()));
    return {worst <= 1e-6, "max relative error " + fmt("%.3e", worst) + " over " +
                               std::to_string(tr.times.size()) + " times"};
}

FlowParams two_direction_params(int d) {
    Vec lam(2);
    lam << 2.0, 1.0;
    return FlowParams::make(PowerLawSpectrum::from_values(lam), d, 2);
}

Outcome ac2() {
    const FlowParams p = two_direction_params(8);
    Rng rng(2);
    const SymMat g0 = stiefel_gram(2, 8, 2, rng);
    const SymMat g1 = SymMat::symmetrize(1.25 * g0.mat());
    double worst = 0.0;
    for (double t : {0.0, 0.25, 0.5})
        worst = std::max(worst, -min_eigenvalue(SymMat::symmetrize(closed_form_align_gram(g1, t, p).mat() -
                                                                   closed_form_align_gram(g0, t, p).mat())));
    return {worst <= 1e-9, "largest order violation " + fmt("%.3e", std::max(0.0, worst)) + " (slack 1e-9)"};
}

Outcome ac3() {
    const FlowParams p = two_direction_params(1024);
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        Rng rng(seed, 3);
        const SymMat g0 = stiefel_gram(2, 1024, 2, rng);
        std::vector<double> ts;
        std::vector<SymMat> gs;
        for (int i = 0; i <= 4000; ++i) {
            ts.push_back(i * 0.01);
            gs.push_back(closed_form_align_gram(g0, ts.back(), p));
        }
        int extremum = -1;
        for (std::size_t i = 1; i + 1 < gs.size() && extremum < 0; ++i) {
            const double a = gs[i](1, 1) - gs[i - 1](1, 1), b = gs[i + 1](1, 1) - gs[i](1, 1);
            if (a * b < 0.0 && std::abs(a) > 1e-12 && std::abs(b) > 1e-12) extremum = static_cast<int>(i);
        }
        if (extremum < 0) continue;
        // A later time whose Gram does not dominate an earlier one.
        for (std::size_t i = 0; i < gs.size(); i += 10)
            for (std::size_t j = i + 10; j < gs.size(); j += 10)
                if (min_eigenvalue(SymMat::symmetrize(gs[j].mat() - gs[i].mat())) < -1e-6)
                    return {true, "seed " + std::to_string(seed) + ": G22 extremum at t=" + fmt("%.2f", ts[extremum]) +
                                      ", G(" + fmt("%.2f", ts[j]) + ") not above G(" + fmt("%.2f", ts[i]) + ")"};
    }
    return {false, "no witness found in 50 seeds"};
}

Outcome ac4() {
    Rng rng(4);
    double r2a = 0.0, r2b = 0.0, c1 = 0.0, b4 = 0.0;
    for (int k = 0; k < 20; ++k) {
        const int n = 1 + k % 6;
        const Vec lh = random_positive(n, rng, 0.1, 2.0);
        const double eta = 0.02 + 0.3 * rng.uniform();
        for (long t = 0; t <= 100; ++t) {
            const RiccatiBlocks b = riccati_blocks(lh, eta, t);
            const PowerBlocks pb = zero_diag_power_blocks(lh, eta, t);
            for (int i = 0; i < n; ++i) {
                r2a = std::max(r2a, std::abs(b.a11(i) + eta * lh(i) * b.a12(i) - b.a22(i)) / b.a22(i));
                r2b = std::max(r2b, std::abs(b.a22(i) * b.a11(i) - b.a12(i) * b.a12(i) - 1.0) /
                                        (b.a22(i) * b.a11(i)));
                Eigen::Matrix2d m, acc = Eigen::Matrix2d::Identity();
                m << 1.0, eta, eta * lh(i) * lh(i), 1.0;
                for (long s = 0; s < t; ++s) acc = acc * m;
                Eigen::Matrix2d cf;
                cf << pb.b11(i), pb.b12(i), pb.b21(i), pb.b22(i);
                c1 = std::max(c1, (cf - acc).cwiseAbs().maxCoeff() / acc.cwiseAbs().maxCoeff());
            }
        }
        const Vec l1 = random_positive(n, rng, 0.1, 1.5), l2 = random_positive(n, rng, 0.5, 1.5);
        const SymMat g0 = random_psd(n, rng, 1.0);
        const Vec h = l2.cwiseSqrt();
        Mat v = 2.0 * h.asDiagonal() * g0.mat() * h.asDiagonal();
        v.diagonal() -= l1;
        SymMat vs = SymMat::symmetrize(v);
        for (long t = 1; t <= 200; ++t) {
            vs = v_update(vs, lh, eta);
            Mat back = vs.mat();
            back.diagonal() += l1;
            const Mat g = 0.5 * h.cwiseInverse().asDiagonal() * back * h.cwiseInverse().asDiagonal();
            b4 = std::max(b4, rel_max(closed_form_discrete_gram(g0, l1, l2, lh, eta, t).mat(), g));
        }
    }
    const bool ok = r2a <= 1e-12 && r2b <= 1e-12 && c1 <= 1e-12 && b4 <= 1e-10;
    return {ok, "block identities " + fmt("%.1e", r2a) + "/" + fmt("%.1e", r2b) + ", power closed form " +
                    fmt("%.1e", c1) + ", discrete closed form " + fmt("%.1e", b4)};
}

Outcome ac5() {
    Rng rng(5);
    double worst = 0.0;
    int euler_cex = 0;
    for (int k = 0; k < 1000; ++k) {
        const int n = 1 + static_cast<int>(rng.uniform() * 16);
        const Vec lam = random_positive(n, rng, 0.05, 2.0);
        const double eta = 0.5 / lam.maxCoeff() * (0.05 + 0.9 * rng.uniform());
        const SymMat lo = random_psd(n, rng, std::pow(10.0, -1 + 2 * rng.uniform()));
        const SymMat hi = SymMat::symmetrize(lo.mat() + random_psd(n, rng, rng.uniform()).mat());
        worst = std::max(worst, -min_eigenvalue(SymMat::symmetrize(monotone_update(hi, lam, eta).mat() -
                                                                   monotone_update(lo, lam, eta).mat())));
        if (min_eigenvalue(SymMat::symmetrize(euler_update(hi, lam, eta).mat() - euler_update(lo, lam, eta).mat())) <
            -1e-10)
            ++euler_cex;
    }
    return {worst <= 1e-10 && euler_cex >= 1, "monotone worst " + fmt("%.2e", std::max(0.0, worst)) + ", " +
                                                  std::to_string(euler_cex) + " Euler counterexamples"};
}

Outcome ac6() {
    const int d = 4000, r = 8, r_s = 8;
    const TeacherModel t = TeacherModel::standard(d, PowerLawSpectrum::power_law(r, 1.0));
    const FlowParams p = FlowParams::make(t.spectrum, d, r_s);
    const EffectiveScales sc = effective_scales(d, r_s, r, 1.0);
    const double unit = sc.kappa_eff * sc.t_eff;
    Rng rng(6, 1);
    const Mat w0 = sample_gaussian_mat(d, r_s, 1.0 / d, rng);
    std::vector<double> u;
    std::vector<std::vector<double>> align(r);
    std::vector<Vec> pdr;
    const std::vector<int> js{1, 2, 3, 4, 5, 6, 7, 8};
    for (int i = 0; i <= 1250; ++i) {
        u.push_back(i * 0.02);
        const Mat w = closed_form_weight_factor(w0, u.back() * unit, p);
        const std::vector<double> a = alignments(t, StudentState(w), js);
        for (int j = 0; j < r; ++j) align[j].push_back(a[j]);
        pdr.push_back(per_direction_risk(t, w));
    }
    const TransitionReport rep = extract_transitions(u, js, align, t.spectrum);
    double worst_cross = 0.0, worst_drop = 0.0;
    std::string per_j;
    bool ok = rep.ordered;
    for (const Transition& tr : rep.items) {
        if (tr.censored) {
            ok = false;
            continue;
        }
        worst_cross = std::max(worst_cross, tr.rel_error);
        per_j += " " + fmt("%.2f", tr.rel_error);
        // Risk carried by direction j released across [c/2, 2c] around its crossing c.
        const double c = tr.measured;
        std::vector<double> series;
        for (const Vec& v : pdr) series.push_back(v(tr.j - 1));
        const double before = interpolate(u, series, c / 2), after = interpolate(u, series, std::min(2 * c, u.back()));
        const double expected = std::pow(t.spectrum.lambdas(tr.j - 1), 2) / t.spectrum.frob_sq;
        worst_drop = std::max(worst_drop, std::abs((before - after) / expected - 1.0));
    }
    ok = ok && worst_cross <= 0.2 && worst_drop <= 0.2;
    return {ok, "crossing error " + fmt("%.3f", worst_cross) + " (per j:" + per_j + "), risk decrement error " +
                    fmt("%.3f", worst_drop)};
}

Outcome ac7() {
    const int d = 1000, r = 600;
    const double eta = 0.5 / std::sqrt(double(r));
    std::ostringstream detail;
    bool ok = true;
    for (auto [alpha, lo, hi, umax] : {std::tuple{1.0, -1.3, -0.8, 20.0}, std::tuple{1.5, -1.7, -1.0, 30.0}}) {
        const TeacherModel t = TeacherModel::standard(d, PowerLawSpectrum::power_law(r, alpha));
        std::vector<double> exps;
        for (int r_s : {16, 32, 64, 128}) {
            const EffectiveScales sc = effective_scales(d, r_s, r, alpha);
            SgdConfig cfg;
            cfg.mode = SgdMode::euclidean_population;
            cfg.eta = eta;
            cfg.steps = std::lround(umax * sc.kappa_eff * sc.t_eff / eta);
            cfg.log_points = 120;
            cfg.tracked = {1};
            cfg.seed = 7;
            const Trajectory tr = run_training(t, r_s, cfg);
            std::vector<double> xs, ys;
            for (const StepRecord& rec : tr.records)
                if (rec.step > 0) {
                    xs.push_back(rec.compute);
                    ys.push_back(rec.risk);
                }
            exps.push_back(fit_power_law_auto(xs, ys).exponent);
        }
        const double med = median(exps);
        const bool pass = med >= lo && med <= hi;
        ok = ok && pass;
        detail << "alpha=" << alpha << " median " << fmt("%.3f", med) << " in [" << lo << "," << hi << "] (";
        for (std::size_t i = 0; i < exps.size(); ++i) detail << (i ? " " : "") << fmt("%.2f", exps[i]);
        detail << ") ";
    }
    return {ok, detail.str()};
}

Outcome ac8() {
    const int d = 512, r = 8, r_s = 4;
    const TeacherModel t = TeacherModel::standard(d, PowerLawSpectrum::power_law(r, 1.0));
    const FlowParams p = FlowParams::make(t.spectrum, d, r_s);
    const EffectiveScales sc = effective_scales(d, r_s, r, 1.0);
    const double unit = sc.kappa_eff * sc.t_eff;
    SgdConfig cfg;
    cfg.eta = 0.1 / d;
    cfg.steps = std::lround(8.0 * unit / cfg.eta);
    cfg.record_every = cfg.steps / 400;
    cfg.seed = 8;
    cfg.tracked = {1, 2, 3, 4};
    cfg.record_gram = false;
    Rng init(cfg.seed, 1);
    const Mat w0 = sample_stiefel(d, r_s, init);
    const Trajectory tr = run_training(t, r_s, cfg, &w0);
    const Mat tw = w0.topRows(r);
    const SymMat g0 = SymMat::symmetrize(tw * tw.transpose());

    std::vector<double> u;
    std::vector<std::vector<double>> gf(cfg.tracked.size()), sgd(cfg.tracked.size());
    for (const StepRecord& rec : tr.records) {
        const double time = cfg.eta * rec.step;
        u.push_back(time / unit);
        const SymMat g = closed_form_align_gram(g0, time, p);
        for (std::size_t k = 0; k < cfg.tracked.size(); ++k) {
            gf[k].push_back(g(cfg.tracked[k] - 1, cfg.tracked[k] - 1));
            sgd[k].push_back(rec.alignments[k]);
        }
    }
    std::vector<double> crossings;
    for (const auto& s : gf) {
        const double c = crossing_time(u, s);
        if (std::isfinite(c)) crossings.push_back(c);
    }
    double worst = 0.0;
    for (std::size_t k = 0; k < gf.size(); ++k) {
        const LimitGap g = compare_to_limit(
            u, sgd[k], [&](double x) { return interpolate(u, gf[k], x); }, crossings, 0.1);
        worst = std::max(worst, g.sup_gap);
    }
    return {worst <= 0.05, std::to_string(cfg.steps) + " steps, worst alignment gap " + fmt("%.4f", worst) + ", " +
                               std::to_string(crossings.size()) + " transitions excluded"};
}

Outcome ac9() {
    const int d = 256, r = 16, r_s = 4;
    const TeacherModel t = TeacherModel::standard(d, PowerLawSpectrum::power_law(r, 1.0));
    const EffectiveScales sc = effective_scales(d, r_s, r, 1.0);
    SgdConfig cfg;
    cfg.eta = 0.5 / d;
    cfg.steps = std::lround(6.0 * sc.kappa_eff * sc.t_eff / cfg.eta);
    cfg.record_every = cfg.steps;
    cfg.seed = 9;
    const Trajectory tr = run_training(t, r_s, cfg);
    const StudentState s(tr.final_w);
    Rng rng(9, 3);
    const FineTuneResult ft = finetune(t, s, default_n_ft(d, r_s), rng);
    const double risk = population_risk(t, ft.w_final, true);
    const double bound = feature_risk(t, s.w()) + 0.1;
    const double ident = std::abs(two_term_risk(t, s.w(), ft.omega_hat) - risk);

    // Small-scale ERM oracle by projected gradient.
    const TeacherModel small = TeacherModel::standard(16, PowerLawSpectrum::power_law(6, 1.0));
    Rng srng(9, 4);
    const StudentState ss(sample_stiefel(16, 3, srng));
    const FineTuneBatch b = collect_batch(small, ss, 4000, srng);
    const Mat l = l_operator_matrix(b);
    const Vec bv = sym_to_vec(s_glob_estimate(b));
    const double step = 1.0 / sym_eigen(SymMat::symmetrize(l)).values(0);
    Vec sv = Vec::Zero(bv.size());
    for (int k = 0; k < 3000; ++k) sv = sym_to_vec(psd_project(vec_to_sym(sv - step * (l * sv - bv), 3)));
    const double eps = l_minus_id_norm(b);
    const SymMat proj = psd_project(s_glob_estimate(b));
    const double gap = (vec_to_sym(sv, 3).mat() - proj.mat()).norm();
    const double allowed = 2 * eps / (1 - eps) * proj.mat().norm();

    const bool ok = risk <= bound && ident <= 1e-10 && eps < 1 && gap <= allowed;
    return {ok, "risk " + fmt("%.4f", risk) + " <= " + fmt("%.4f", bound) + ", identity " + fmt("%.1e", ident) +
                    ", ERM gap " + fmt("%.4f", gap) + " <= " + fmt("%.4f", allowed)};
}

Outcome ac10() {
    const int d = 2000, r = 200, r_s = 100;
    const double alpha = 0.25;
    const TeacherModel t = TeacherModel::standard(d, PowerLawSpectrum::power_law(r, alpha));
    const FlowParams p = FlowParams::make(t.spectrum, d, r_s);
    const EffectiveScales sc = effective_scales(d, r_s, r, alpha);
    Rng rng(10, 1);
    const Mat w0 = sample_gaussian_mat(d, r_s, 1.0 / d, rng);
    const double target = std::max(0.0, 1.0 - std::pow(0.5, 1.0 - 2 * alpha));
    double worst = 0.0, last = 0.0;
    for (double u : {20.0, 50.0, 100.0}) {
        last = population_risk(t, closed_form_weight_factor(w0, u * sc.kappa_eff * sc.t_eff, p), true);
        worst = std::max(worst, std::abs(last - target));
    }
    return {worst <= 0.05, "late risk " + fmt("%.4f", last) + " vs plateau " + fmt("%.4f", target) +
                               " (worst gap " + fmt("%.4f", worst) + ")"};
}

Outcome ac11() {
    SuiteOptions o;
    o.steps = 10000;
    const auto checks = verify_suite("bounds", o);
    bool ok = true;
    std::string failed;
    for (const CheckResult& c : checks)
        if (!c.pass) {
            ok = false;
            failed += " " + c.name + "=" + fmt("%.2e", c.residual);
        }
    return {ok, ok ? "light and heavy, 10^4 steps, all margins within 1e-8" : "failed:" + failed};
}

std::string slurp(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    std::stringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

Outcome ac12() {
    namespace fs = std::filesystem;
    const fs::path base = fs::temp_directory_path() / "qns_acceptance_determinism";
    fs::remove_all(base);
    std::vector<nlohmann::json> configs{
        {{"kind", "gf-closed"}, {"d", 200}, {"r", 16}, {"r_s", 8}, {"alpha", 1.0}},
        {{"kind", "gf-rk4"}, {"d", 60}, {"r", 8}, {"r_s", 4}, {"alpha", 0.25}, {"points", 20}},
        {{"kind", "sgd-stiefel"}, {"d", 64}, {"r", 8}, {"r_s", 4}, {"steps", 20000}, {"log_points", 50}},
        {{"kind", "sgd-euclidean"}, {"d", 64}, {"r", 8}, {"r_s", 4}, {"steps", 5000}, {"batch", 4}},
        {{"kind", "gd-population"}, {"d", 64}, {"r", 8}, {"r_s", 4}, {"steps", 5000}, {"seeds", {1, 2}}}};
    int files = 0;
    for (std::size_t i = 0; i < configs.size(); ++i) {
        std::vector<std::string> first;
        for (int rep = 0; rep < 2; ++rep) {
            nlohmann::json j = configs[i];
            j["output"] = base.string();
            j["name"] = "c" + std::to_string(i);
            const auto paths = run_all(RunConfig::from_json(j));
            for (std::size_t k = 0; k < paths.size(); ++k) {
                const std::string csv = slurp(paths[k]);
                const std::string side = slurp(paths[k].substr(0, paths[k].size() - 4) + ".json");
                if (rep == 0) {
                    first.push_back(csv);
                    first.push_back(side);
                } else {
                    if (csv != first[2 * k] || side != first[2 * k + 1])
                        return {false, "config " + std::to_string(i) + " differs between runs"};
                    files += 2;
                }
            }
        }
    }
    fs::remove_all(base);
    return {true, std::to_string(files) + " files byte-identical across repeated runs"};
}

}  // namespace

int main() {
    const std::vector<Criterion> criteria{
        {1, "Riccati closed form vs RK4", 10, ac1},
        {2, "Monotonicity in the initialization", 0, ac2},
        {3, "Non-monotonicity in time", 0, ac3},
        {4, "Discrete identities", 5, ac4},
        {5, "Monotone map vs Euler", 0, ac5},
        {6, "Gradient-flow staircase", 60, ac6},
        {7, "Scaling exponents", 600, ac7},
        {8, "SGD tracks gradient flow", 300, ac8},
        {9, "Fine-tuning", 0, ac9},
        {10, "Heavy-tail plateau", 0, ac10},
        {11, "Bounding harness", 0, ac11},
        {12, "Determinism", 0, ac12},
    };
    int failures = 0;
    for (const Criterion& c : criteria) {
        const auto start = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = c.run();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        if (c.budget_s > 0 && secs > c.budget_s) {
            o.pass = false;
            o.detail += "; over the " + fmt("%.0f", c.budget_s) + " s budget";
        }
        if (!o.pass) ++failures;
        std::printf("%s AC%d %s: %s [%.1f s]\n", o.pass ? "PASS" : "FAIL", c.id, c.title.c_str(), o.detail.c_str(),
                    secs);
        std::fflush(stdout);
    }
    std::printf("%d/%zu criteria passed\n", static_cast<int>(criteria.size()) - failures, criteria.size());
    return failures == 0 ? 0 : 1;
}
