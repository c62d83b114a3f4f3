#pragma once

#include "qns/linalg.hpp"
#include "qns/model.hpp"

#include <cstdint>
#include <optional>
#include <vector>

namespace qns {

enum class SgdMode { stiefel_online, euclidean_online, euclidean_population };
enum class Param { plain, two_homogeneous };

struct SgdConfig {
    double eta = 0.0;
    int batch = 1;
    long steps = 0;
    SgdMode mode = SgdMode::stiefel_online;
    Param param = Param::plain;
    long record_every = 1;
    int log_points = 0;  // > 0: about this many log-spaced records instead of record_every
    std::uint64_t seed = 0;
    std::vector<int> tracked;  // empty: default_tracked
    bool record_gram = false;
    bool fast_retraction = true;  // rank-1 retraction when batch = 1
};

struct StepRecord {
    long step = 0;
    long samples = 0;     // fresh samples consumed so far
    double compute = 0.0; // step·batch·d·r_s
    double risk = 0.0;    // normalized population risk
    std::vector<double> alignments;
    std::optional<SymMat> gram;
};

struct Trajectory {
    std::vector<int> tracked;
    std::vector<StepRecord> records;
    Mat final_w;
};

class DivergenceError : public Error {
public:
    using Error::Error;
};

// −(1/(4√r_s))(y − ŷ) x xᵀ W
Mat euclidean_grad(const StudentState& s, const Sample& sample);
// Projection of the Euclidean gradient onto the tangent space at W.
Mat stiefel_grad(const StudentState& s, const Sample& sample);
Mat stiefel_project(const Mat& w, const Mat& g);
// W̃ (W̃ᵀW̃)^{-1/2}
Mat polar_retract(const Mat& w_tilde);

// One Stiefel step from a single sample using the rank-1 form of W̃ᵀW̃.
Mat stiefel_step_rank1(const Mat& w, const Sample& sample, double eta);
// One Stiefel step with gradients averaged over `batch` and a dense retraction.
Mat stiefel_step_dense(const Mat& w, const std::vector<Sample>& batch, double eta);
// Step along the batch-averaged loss gradient −(1/(4√r_s))(y − ŷ)(x xᵀ − I)W.
Mat euclidean_step(const Mat& w, const std::vector<Sample>& batch, double eta);

// Euclidean gradient of the (unnormalized) population risk.
Mat population_grad(const TeacherModel& t, const Mat& w, Param param = Param::plain);
Mat population_gd_step(const TeacherModel& t, const Mat& w, double eta, Param param = Param::plain);

// Global minimiser Θ_{1:r_s} diag((√r_s λ_j/‖Λ‖_F)^{1/2}) for r_s ≤ r.
Mat global_minimizer(const TeacherModel& t, int r_s);

double schedule_eta(int d, int r, int r_s, double alpha, double c, double c_alpha = 0.0);

std::vector<int> default_tracked(int r, int r_eff);
std::vector<long> record_steps(long steps, long record_every, int log_points);

StepRecord make_record(const TeacherModel& t, const StudentState& s, const std::vector<int>& tracked, long step,
                       long samples, int batch, bool with_gram);

// Runs the configured loop from w0 (or a seeded default initialisation:
// uniform Stiefel for the Stiefel mode, N(0, 1/d) entries otherwise).
Trajectory run_training(const TeacherModel& t, int r_s, const SgdConfig& cfg, const Mat* w0 = nullptr);

}  // namespace qns
