#pragma once

#include "qns/linalg.hpp"
#include "qns/model.hpp"

#include <vector>

namespace qns {

struct FineTuneBatch {
    std::vector<SymMat> a_mats;  // Wᵀ(x xᵀ − I)W
    std::vector<double> ys;
    int n_ft = 0;
};

struct FineTuneResult {
    SymMat s_hat;    // Π(L(S_glob))
    Mat omega_hat;   // PSD square root of s_hat
    double op_gap = 0.0;
    Mat w_final;     // W Ω̂
};

int default_n_ft(int d, int r_s);

FineTuneBatch collect_batch(const TeacherModel& t, const StudentState& s, int n_ft, Rng& rng);
// (1/2N) Σ_j Tr(S A_j) A_j
SymMat l_operator_apply(const FineTuneBatch& batch, const SymMat& s_in);
// (√r_s/2N) Σ_j y_j A_j
SymMat s_glob_estimate(const FineTuneBatch& batch);
SymMat psd_project(const SymMat& m);

// Matrix of L in the orthonormal basis of symmetric matrices
// {E_ii} ∪ {(E_ij + E_ji)/√2, i < j}.
Mat l_operator_matrix(const FineTuneBatch& batch);
Vec sym_to_vec(const SymMat& m);
SymMat vec_to_sym(const Vec& v, Eigen::Index n);
// ‖L − Id‖ in operator norm over symmetric matrices.
double l_minus_id_norm(const FineTuneBatch& batch);

// n_ft ≤ 0 selects default_n_ft.
FineTuneResult finetune(const TeacherModel& t, const StudentState& s, int n_ft, Rng& rng);

// (1/r_s)‖ΩΩᵀ − (√r_s/‖Λ‖_F) WᵀΘΛΘᵀW‖_F² + 1 − ‖Λ^{1/2} G Λ^{1/2}‖_F²/‖Λ‖_F²,
// G = ΘᵀWWᵀΘ; equals the normalized risk of WΩ for orthonormal W.
double two_term_risk(const TeacherModel& t, const Mat& w, const Mat& omega);
// 1 − ‖Λ^{1/2} G Λ^{1/2}‖_F²/‖Λ‖_F²
double feature_risk(const TeacherModel& t, const Mat& w);

}  // namespace qns
