#include "qns/sgd.hpp"

#include "qns/flow.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

namespace qns {

static double grad_coeff(const Mat& w, const Sample& sample) {
    const double rs = static_cast<double>(w.cols());
    return -(sample.y - student_output(w, sample.x)) / (4.0 * std::sqrt(rs));
}

Mat euclidean_grad(const StudentState& s, const Sample& sample) {
    if (sample.x.size() != s.d()) throw Error("euclidean_grad: sample dimension mismatch");
    const Mat& w = s.w();
    const Vec p = w.transpose() * sample.x;
    return grad_coeff(w, sample) * sample.x * p.transpose();
}

static void require_orthonormal(const Mat& w, const char* who) {
    const double dev = (w.transpose() * w - Mat::Identity(w.cols(), w.cols())).cwiseAbs().maxCoeff();
    if (dev > 1e-8) {
        std::ostringstream os;
        os << who << ": W is not orthonormal (max |WᵀW − I| = " << dev << ")";
        throw Error(os.str());
    }
}

Mat stiefel_project(const Mat& w, const Mat& g) {
    const Mat wg = w.transpose() * g;
    return g - 0.5 * w * (wg + wg.transpose());
}

Mat stiefel_grad(const StudentState& s, const Sample& sample) {
    require_orthonormal(s.w(), "stiefel_grad");
    return stiefel_project(s.w(), euclidean_grad(s, sample));
}

Mat polar_retract(const Mat& w_tilde) {
    try {
        return inv_sqrt_gram(w_tilde);
    } catch (const Error& e) {
        throw Error(std::string("polar retraction failed: ") + e.what());
    }
}

Mat stiefel_step_rank1(const Mat& w, const Sample& sample, double eta) {
    const Vec p = w.transpose() * sample.x;
    const double c0 = grad_coeff(w, sample);
    const Vec v = sample.x - w * p;  // (I − WWᵀ)x
    const double pp = p.squaredNorm();
    Mat out = w - (eta * c0) * v * p.transpose();
    if (pp == 0.0 || eta == 0.0) return out;
    // W̃ᵀW̃ = I + β ppᵀ, whose inverse square root is I + γ ppᵀ/‖p‖².
    const double beta = eta * eta * c0 * c0 * v.squaredNorm();
    const double gamma = 1.0 / std::sqrt(1.0 + beta * pp) - 1.0;
    const Vec wp = w * p - (eta * c0 * pp) * v;
    out.noalias() += (gamma / pp) * wp * p.transpose();
    return out;
}

static Mat batch_euclidean_grad(const Mat& w, const std::vector<Sample>& batch) {
    if (batch.empty()) throw Error("sgd: empty batch");
    const Eigen::Index d = w.rows();
    const Eigen::Index n = static_cast<Eigen::Index>(batch.size());
    Mat x(d, n);
    Vec c(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const Sample& s = batch[static_cast<std::size_t>(i)];
        if (s.x.size() != d) throw Error("sgd: sample dimension mismatch");
        x.col(i) = s.x;
        c(i) = grad_coeff(w, s);
    }
    const Mat p = w.transpose() * x;  // r_s × n
    return (x * c.asDiagonal() * p.transpose()) / static_cast<double>(n);
}

Mat stiefel_step_dense(const Mat& w, const std::vector<Sample>& batch, double eta) {
    const Mat g = stiefel_project(w, batch_euclidean_grad(w, batch));
    return polar_retract(w - eta * g);
}

Mat euclidean_step(const Mat& w, const std::vector<Sample>& batch, double eta) {
    // Off the Stiefel manifold ‖W‖_F² is not constant, so the loss gradient
    // carries the extra −c·W term that the tangent projection removes.
    double c_mean = 0.0;
    for (const Sample& s : batch) c_mean += grad_coeff(w, s);
    c_mean /= static_cast<double>(batch.size());
    return w - eta * (batch_euclidean_grad(w, batch) - c_mean * w);
}

Mat population_grad(const TeacherModel& t, const Mat& w, Param) {
    // The two-homogeneous form ‖w‖²(⟨w̄, x⟩² − 1) is the same function of W
    // for the quadratic activation, so both parameterizations share ∇R.
    if (w.rows() != t.d) throw Error("population_grad: dimension mismatch");
    const double rs = static_cast<double>(w.cols());
    const double frob = t.spectrum.frob;
    const Mat tw = t.spectrum.lambdas.asDiagonal() * t.project(w);
    Mat g = (frob / std::sqrt(rs)) * (w * (w.transpose() * w));
    if (t.basis)
        g.topRows(t.r()) -= tw;
    else
        g.noalias() -= t.theta * tw;
    return g / (2.0 * std::sqrt(rs) * frob);
}

Mat population_gd_step(const TeacherModel& t, const Mat& w, double eta, Param param) {
    return w - eta * population_grad(t, w, param);
}

Mat global_minimizer(const TeacherModel& t, int r_s) {
    if (r_s < 1 || r_s > t.r()) throw Error("global_minimizer: requires 1 ≤ r_s ≤ r");
    const double rs = std::sqrt(static_cast<double>(r_s));
    const Vec scale = (rs * t.spectrum.lambdas.head(r_s) / t.spectrum.frob).cwiseSqrt();
    return t.theta.leftCols(r_s) * scale.asDiagonal();
}

double schedule_eta(int d, int r, int r_s, double alpha, double c, double c_alpha) {
    if (alpha == 0.5) throw Error("schedule_eta: alpha = 0.5 is excluded");
    if (d < 1 || r < 1 || r_s < 1) throw Error("schedule_eta: dimensions must be positive");
    const double dd = static_cast<double>(d);
    if (alpha < 0.5) {
        const double poly = c_alpha == 0.0 ? 1.0 : std::pow(std::log1p(dd / r_s), c_alpha);
        return c / (dd * std::pow(static_cast<double>(r), alpha) * poly);
    }
    const double poly = c_alpha == 0.0 ? 1.0 : std::pow(std::log(dd), c_alpha);
    return c / (dd * poly);
}

std::vector<int> default_tracked(int r, int r_eff) {
    std::set<int> js;
    for (int j = 1; j <= r; j *= 2) js.insert(j);
    if (r_eff >= 1 && r_eff <= r) js.insert(r_eff);
    return {js.begin(), js.end()};
}

std::vector<long> record_steps(long steps, long record_every, int log_points) {
    std::set<long> out{0, steps};
    if (log_points > 0) {
        const double top = std::log(static_cast<double>(std::max(1L, steps)));
        for (int k = 0; k < log_points; ++k) {
            const double f = log_points > 1 ? static_cast<double>(k) / (log_points - 1) : 1.0;
            out.insert(std::min(steps, std::lround(std::exp(f * top))));
        }
    } else {
        const long every = std::max(1L, record_every);
        for (long s = every; s < steps; s += every) out.insert(s);
    }
    return {out.begin(), out.end()};
}

StepRecord make_record(const TeacherModel& t, const StudentState& s, const std::vector<int>& tracked, long step,
                       long samples, int batch, bool with_gram) {
    StepRecord rec;
    rec.step = step;
    rec.samples = samples;
    rec.compute = static_cast<double>(step) * batch * s.d() * s.r_s();
    rec.risk = population_risk(t, s, true);
    rec.alignments = alignments(t, s, tracked);
    if (with_gram) {
        const Mat tw = t.project(s.w());
        rec.gram = SymMat::symmetrize(tw * tw.transpose());
    }
    return rec;
}

static void guard(const Mat& w, long step) {
    const double n = w.norm();
    if (!std::isfinite(n) || n > 1e3) {
        std::ostringstream os;
        os << "divergence at step " << step << ": ‖W‖_F = " << n;
        throw DivergenceError(os.str());
    }
}

Trajectory run_training(const TeacherModel& t, int r_s, const SgdConfig& cfg, const Mat* w0) {
    if (!(cfg.eta >= 0.0) || !std::isfinite(cfg.eta)) throw Error("run_training: eta must be finite and non-negative");
    if (cfg.batch < 1) throw Error("run_training: batch must be at least 1");
    if (cfg.steps < 0) throw Error("run_training: steps must be non-negative");
    if (r_s < 1 || r_s > t.d) throw Error("run_training: invalid student width");
    if (cfg.mode == SgdMode::stiefel_online && cfg.param != Param::plain)
        throw Error("run_training: the Stiefel mode requires the plain parameterization");

    Rng rng(cfg.seed, 1);
    Mat w;
    if (w0) {
        if (w0->rows() != t.d || w0->cols() != r_s) throw Error("run_training: initial W has wrong shape");
        w = *w0;
    } else if (cfg.mode == SgdMode::stiefel_online) {
        w = sample_stiefel(t.d, r_s, rng);
    } else {
        w = sample_gaussian_mat(t.d, r_s, 1.0 / t.d, rng);
    }
    if (cfg.mode == SgdMode::stiefel_online) require_orthonormal(w, "run_training");

    Trajectory traj;
    if (cfg.tracked.empty()) {
        int r_eff = std::min(r_s, t.r());
        const double a = t.spectrum.alpha;
        if (std::isfinite(a) && a != 0.5 && t.d > r_s) r_eff = std::max(1, effective_scales(t.d, r_s, t.r(), a).r_eff);
        traj.tracked = default_tracked(t.r(), r_eff);
    } else {
        traj.tracked = cfg.tracked;
    }
    for (int j : traj.tracked)
        if (j < 1 || j > t.r()) throw Error("run_training: tracked index outside 1..r");

    const std::vector<long> marks = record_steps(cfg.steps, cfg.record_every, cfg.log_points);
    std::size_t next_mark = 0;
    Rng sample_rng(cfg.seed, 2);
    long samples = 0;
    std::vector<Sample> batch(static_cast<std::size_t>(cfg.batch));

    StudentState s(w);
    for (long step = 0;; ++step) {
        if (next_mark < marks.size() && marks[next_mark] == step) {
            s.set_w(w);
            traj.records.push_back(make_record(t, s, traj.tracked, step, samples, cfg.batch, cfg.record_gram));
            ++next_mark;
        }
        if (step == cfg.steps) break;
        if (cfg.mode == SgdMode::euclidean_population) {
            w = population_gd_step(t, w, cfg.eta, cfg.param);
        } else {
            for (auto& b : batch) b = draw_sample(t, sample_rng);
            samples += cfg.batch;
            if (cfg.mode == SgdMode::stiefel_online) {
                if (cfg.batch == 1 && cfg.fast_retraction) {
                    w = stiefel_step_rank1(w, batch[0], cfg.eta);
                    // Rank-1 updates accumulate rounding; re-polarize now and then.
                    if ((step + 1) % 4096 == 0) w = polar_retract(w);
                } else {
                    w = stiefel_step_dense(w, batch, cfg.eta);
                }
            } else {
                w = euclidean_step(w, batch, cfg.eta);
            }
        }
        guard(w, step + 1);
    }
    traj.final_w = w;
    return traj;
}

}  // namespace qns
