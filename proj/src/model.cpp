#include "qns/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace qns {

PowerLawSpectrum PowerLawSpectrum::power_law(int r, double alpha) {
    if (r < 1) throw Error("spectrum: r must be at least 1");
    if (!(alpha >= 0.0)) throw Error("spectrum: alpha must be non-negative");
    PowerLawSpectrum s;
    s.r = r;
    s.alpha = alpha;
    s.lambdas.resize(r);
    for (int j = 0; j < r; ++j) s.lambdas(j) = std::pow(static_cast<double>(j + 1), -alpha);
    s.frob_sq = s.lambdas.squaredNorm();
    s.frob = std::sqrt(s.frob_sq);
    return s;
}

PowerLawSpectrum PowerLawSpectrum::from_values(const Vec& lambdas) {
    if (lambdas.size() < 1) throw Error("spectrum: empty coefficient vector");
    for (Eigen::Index j = 0; j < lambdas.size(); ++j) {
        if (!(lambdas(j) > 0.0)) throw Error("spectrum: coefficients must be positive");
        if (j > 0 && lambdas(j) > lambdas(j - 1)) throw Error("spectrum: coefficients must be non-increasing");
    }
    PowerLawSpectrum s;
    s.r = static_cast<int>(lambdas.size());
    s.alpha = std::numeric_limits<double>::quiet_NaN();
    s.lambdas = lambdas;
    s.frob_sq = s.lambdas.squaredNorm();
    s.frob = std::sqrt(s.frob_sq);
    return s;
}

TeacherModel TeacherModel::standard(int d, const PowerLawSpectrum& spectrum) {
    if (spectrum.r > d) throw Error("teacher: r exceeds d");
    TeacherModel t;
    t.d = d;
    t.spectrum = spectrum;
    t.theta = Mat::Identity(d, spectrum.r);
    t.basis = true;
    return t;
}

TeacherModel TeacherModel::haar(int d, const PowerLawSpectrum& spectrum, Rng& rng) {
    if (spectrum.r > d) throw Error("teacher: r exceeds d");
    TeacherModel t;
    t.d = d;
    t.spectrum = spectrum;
    t.theta = sample_stiefel(d, spectrum.r, rng);
    t.basis = false;
    return t;
}

Vec TeacherModel::project(const Vec& v) const {
    if (basis) return v.head(spectrum.r);
    return theta.transpose() * v;
}

Mat TeacherModel::project(const Mat& m) const {
    if (basis) return m.topRows(spectrum.r);
    return theta.transpose() * m;
}

Mat TeacherModel::target_dense() const {
    return theta * spectrum.lambdas.asDiagonal() * theta.transpose();
}

void StudentState::set_w(Mat w) {
    w_ = std::move(w);
    u_.reset();
    q_.reset();
}

void StudentState::refresh() const {
    q_ = SymMat::symmetrize(w_.transpose() * w_);
    u_ = inv_sqrt_gram(w_);
}

const Mat& StudentState::u() const {
    if (!u_) refresh();
    return *u_;
}

const SymMat& StudentState::q() const {
    if (!q_) refresh();
    return *q_;
}

static void check_dim(const char* what, Eigen::Index got, Eigen::Index want) {
    if (got != want) {
        std::ostringstream os;
        os << what << ": dimension mismatch (" << got << " vs " << want << ")";
        throw Error(os.str());
    }
}

double teacher_output(const TeacherModel& t, const Vec& x) {
    check_dim("teacher_output", x.size(), t.d);
    const Vec p = t.project(x);
    return (t.spectrum.lambdas.array() * (p.array().square() - 1.0)).sum() / t.spectrum.frob;
}

double student_output(const Mat& w, const Vec& x) {
    check_dim("student_output", x.size(), w.rows());
    if (w.cols() == 0) return 0.0;
    const Vec p = w.transpose() * x;
    return (p.squaredNorm() - w.squaredNorm()) / std::sqrt(static_cast<double>(w.cols()));
}

double student_output(const StudentState& s, const Vec& x) { return student_output(s.w(), x); }

double instantaneous_loss(const StudentState& s, const Sample& sample) {
    const double e = sample.y - student_output(s, sample.x);
    return e * e / 16.0;
}

Sample draw_sample(const TeacherModel& t, Rng& rng) {
    Sample s;
    s.x.resize(t.d);
    for (int i = 0; i < t.d; ++i) s.x(i) = rng.normal();
    s.y = teacher_output(t, s.x);
    return s;
}

double population_risk(const TeacherModel& t, const Mat& w, bool normalized) {
    check_dim("population_risk", w.rows(), t.d);
    const double rs = static_cast<double>(w.cols());
    const Mat tw = t.project(w);
    const double gram = rs > 0 ? (w.transpose() * w).squaredNorm() / rs : 0.0;
    const double cross = rs > 0
        ? 2.0 * (t.spectrum.lambdas.asDiagonal() * tw).cwiseProduct(tw).sum() / (std::sqrt(rs) * t.spectrum.frob)
        : 0.0;
    const double v = std::max(0.0, gram - cross + 1.0);
    return normalized ? v : v / 8.0;
}

double population_risk(const TeacherModel& t, const StudentState& s, bool normalized) {
    return population_risk(t, s.w(), normalized);
}

SymMat alignment_gram(const TeacherModel& t, const StudentState& s) {
    const Mat tu = t.project(s.u());
    return SymMat::symmetrize(tu * tu.transpose());
}

double alignment(const TeacherModel& t, const StudentState& s, int j) {
    if (j < 1 || j > t.r()) throw Error("alignment: index out of range");
    if (t.spectrum.alpha == 0.0) {
        const Vec ev = sym_eigen(alignment_gram(t, s)).values;
        return std::clamp(ev(j - 1), 0.0, 1.0);
    }
    const Mat& u = s.u();
    const double v = t.basis ? u.row(j - 1).squaredNorm() : (t.theta.col(j - 1).transpose() * u).squaredNorm();
    return std::clamp(v, 0.0, 1.0);
}

std::vector<double> alignments(const TeacherModel& t, const StudentState& s, const std::vector<int>& js) {
    std::vector<double> out;
    out.reserve(js.size());
    if (t.spectrum.alpha == 0.0) {
        const Vec ev = sym_eigen(alignment_gram(t, s)).values;
        for (int j : js) {
            if (j < 1 || j > t.r()) throw Error("alignment: index out of range");
            out.push_back(std::clamp(ev(j - 1), 0.0, 1.0));
        }
        return out;
    }
    for (int j : js) out.push_back(alignment(t, s, j));
    return out;
}

double opt_risk(const PowerLawSpectrum& spectrum, int r_s) {
    if (r_s < 1) throw Error("opt_risk: r_s must be at least 1");
    const int k = std::min(r_s, spectrum.r);
    return spectrum.lambdas.tail(spectrum.r - k).squaredNorm() / spectrum.frob_sq;
}

}  // namespace qns
