#pragma once

#include "qns/linalg.hpp"

#include <optional>
#include <vector>

namespace qns {

struct PowerLawSpectrum {
    int r = 0;
    double alpha = 0.0;
    Vec lambdas;
    double frob = 0.0;
    double frob_sq = 0.0;

    // λ_j = j^{-alpha}, j = 1..r
    static PowerLawSpectrum power_law(int r, double alpha);
    // Arbitrary positive non-increasing coefficients (alpha recorded as NaN).
    static PowerLawSpectrum from_values(const Vec& lambdas);
};

struct TeacherModel {
    int d = 0;
    PowerLawSpectrum spectrum;
    Mat theta;           // d×r, orthonormal columns
    bool basis = true;   // theta = first r standard basis vectors

    static TeacherModel standard(int d, const PowerLawSpectrum& spectrum);
    static TeacherModel haar(int d, const PowerLawSpectrum& spectrum, Rng& rng);

    int r() const { return spectrum.r; }
    // Θᵀ v for a d-vector, and ΘᵀM for a d×k matrix.
    Vec project(const Vec& v) const;
    Mat project(const Mat& m) const;
    // ΘΛΘᵀ as a dense d×d matrix (small d only).
    Mat target_dense() const;
};

class StudentState {
public:
    StudentState() = default;
    explicit StudentState(Mat w) : w_(std::move(w)) {}

    const Mat& w() const { return w_; }
    void set_w(Mat w);
    int d() const { return static_cast<int>(w_.rows()); }
    int r_s() const { return static_cast<int>(w_.cols()); }

    // Polar factors W = U Q^{1/2}, cached until W changes.
    const Mat& u() const;
    const SymMat& q() const;

private:
    void refresh() const;
    Mat w_;
    mutable std::optional<Mat> u_;
    mutable std::optional<SymMat> q_;
};

struct Sample {
    Vec x;
    double y = 0.0;
};

double teacher_output(const TeacherModel& t, const Vec& x);
double student_output(const StudentState& s, const Vec& x);
double student_output(const Mat& w, const Vec& x);
double instantaneous_loss(const StudentState& s, const Sample& sample);
Sample draw_sample(const TeacherModel& t, Rng& rng);

double population_risk(const TeacherModel& t, const Mat& w, bool normalized);
double population_risk(const TeacherModel& t, const StudentState& s, bool normalized);

// ΘᵀUUᵀΘ for the polar factor U of W.
SymMat alignment_gram(const TeacherModel& t, const StudentState& s);
// Alignment of direction j (1-based); for alpha = 0 the j-th largest
// eigenvalue of the alignment Gram.
double alignment(const TeacherModel& t, const StudentState& s, int j);
std::vector<double> alignments(const TeacherModel& t, const StudentState& s, const std::vector<int>& js);

double opt_risk(const PowerLawSpectrum& spectrum, int r_s);

}  // namespace qns
