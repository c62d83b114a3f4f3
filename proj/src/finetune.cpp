#include "qns/finetune.hpp"

#include <cmath>
#include <sstream>

namespace qns {

int default_n_ft(int d, int r_s) {
    if (d < 2 || r_s < 1) throw Error("default_n_ft: invalid dimensions");
    return r_s * r_s * static_cast<int>(std::ceil(std::pow(std::log(static_cast<double>(d)), 5.0)));
}

FineTuneBatch collect_batch(const TeacherModel& t, const StudentState& s, int n_ft, Rng& rng) {
    if (n_ft < 0) throw Error("collect_batch: negative sample count");
    if (s.d() != t.d) throw Error("collect_batch: dimension mismatch");
    FineTuneBatch b;
    b.n_ft = n_ft;
    b.a_mats.reserve(static_cast<std::size_t>(n_ft));
    b.ys.reserve(static_cast<std::size_t>(n_ft));
    const Mat& w = s.w();
    const Mat q = w.transpose() * w;
    for (int i = 0; i < n_ft; ++i) {
        const Sample smp = draw_sample(t, rng);
        const Vec z = w.transpose() * smp.x;
        b.a_mats.push_back(SymMat::symmetrize(z * z.transpose() - q));
        b.ys.push_back(smp.y);
    }
    return b;
}

static void require_nonempty(const FineTuneBatch& b, const char* who) {
    if (b.a_mats.empty()) throw Error(std::string(who) + ": empty batch");
}

SymMat l_operator_apply(const FineTuneBatch& batch, const SymMat& s_in) {
    require_nonempty(batch, "l_operator_apply");
    const Eigen::Index n = batch.a_mats.front().dim();
    if (s_in.dim() != n) throw Error("l_operator_apply: dimension mismatch");
    Mat acc = Mat::Zero(n, n);
    for (const SymMat& a : batch.a_mats) acc += a.mat().cwiseProduct(s_in.mat()).sum() * a.mat();
    return SymMat::symmetrize(acc / (2.0 * static_cast<double>(batch.a_mats.size())));
}

SymMat s_glob_estimate(const FineTuneBatch& batch) {
    require_nonempty(batch, "s_glob_estimate");
    const Eigen::Index n = batch.a_mats.front().dim();
    Mat acc = Mat::Zero(n, n);
    for (std::size_t j = 0; j < batch.a_mats.size(); ++j) acc += batch.ys[j] * batch.a_mats[j].mat();
    const double scale = std::sqrt(static_cast<double>(n)) / (2.0 * static_cast<double>(batch.a_mats.size()));
    return SymMat::symmetrize(scale * acc);
}

SymMat psd_project(const SymMat& m) {
    const EigenPair e = sym_eigen(m);
    const Vec clipped = e.values.cwiseMax(0.0);
    return SymMat::symmetrize(e.vectors * clipped.asDiagonal() * e.vectors.transpose());
}

Vec sym_to_vec(const SymMat& m) {
    const Eigen::Index n = m.dim();
    Vec v(n * (n + 1) / 2);
    Eigen::Index k = 0;
    for (Eigen::Index i = 0; i < n; ++i) v(k++) = m(i, i);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = i + 1; j < n; ++j) v(k++) = std::sqrt(2.0) * m(i, j);
    return v;
}

SymMat vec_to_sym(const Vec& v, Eigen::Index n) {
    if (v.size() != n * (n + 1) / 2) throw Error("vec_to_sym: length mismatch");
    Mat m(n, n);
    Eigen::Index k = 0;
    for (Eigen::Index i = 0; i < n; ++i) m(i, i) = v(k++);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = i + 1; j < n; ++j) m(i, j) = m(j, i) = v(k++) / std::sqrt(2.0);
    return SymMat(m);
}

Mat l_operator_matrix(const FineTuneBatch& batch) {
    require_nonempty(batch, "l_operator_matrix");
    const Eigen::Index n = batch.a_mats.front().dim();
    const Eigen::Index m = n * (n + 1) / 2;
    // Tr(S A) = ⟨vec S, vec A⟩ in this basis, so L = (1/2N) Σ vec(A) vec(A)ᵀ.
    Mat v(m, static_cast<Eigen::Index>(batch.a_mats.size()));
    for (std::size_t j = 0; j < batch.a_mats.size(); ++j) v.col(static_cast<Eigen::Index>(j)) = sym_to_vec(batch.a_mats[j]);
    Mat l = v * v.transpose() / (2.0 * static_cast<double>(batch.a_mats.size()));
    return 0.5 * (l + l.transpose());
}

double l_minus_id_norm(const FineTuneBatch& batch) {
    Mat l = l_operator_matrix(batch);
    l.diagonal().array() -= 1.0;
    return spectral_norm(l);
}

FineTuneResult finetune(const TeacherModel& t, const StudentState& s, int n_ft, Rng& rng) {
    if (n_ft <= 0) n_ft = default_n_ft(t.d, s.r_s());
    const FineTuneBatch batch = collect_batch(t, s, n_ft, rng);
    FineTuneResult res;
    res.s_hat = psd_project(s_glob_estimate(batch));
    res.omega_hat = psd_sqrt(res.s_hat).mat();
    res.op_gap = l_minus_id_norm(batch);
    res.w_final = s.w() * res.omega_hat;
    return res;
}

double feature_risk(const TeacherModel& t, const Mat& w) {
    const Mat tw = t.project(w);
    const Mat g = tw * tw.transpose();
    const Vec h = t.spectrum.lambdas.cwiseSqrt();
    const Mat k = h.asDiagonal() * g * h.asDiagonal();
    return 1.0 - k.squaredNorm() / t.spectrum.frob_sq;
}

double two_term_risk(const TeacherModel& t, const Mat& w, const Mat& omega) {
    if (w.rows() != t.d || omega.rows() != w.cols()) throw Error("two_term_risk: dimension mismatch");
    const double rs = static_cast<double>(w.cols());
    const Mat tw = t.project(w);
    const Mat m = tw.transpose() * t.spectrum.lambdas.asDiagonal() * tw;
    const Mat diff = omega * omega.transpose() - (std::sqrt(rs) / t.spectrum.frob) * m;
    return diff.squaredNorm() / rs + feature_risk(t, w);
}

}  // namespace qns
