#pragma once

#include "qns/linalg.hpp"
#include "qns/model.hpp"

#include <functional>
#include <optional>
#include <utility>
#include <vector>

namespace qns {

struct FitResult {
    double exponent = 0.0;
    double intercept = 0.0;  // natural log of the prefactor
    double r2 = 0.0;
    double lo = 0.0;  // window on the x axis
    double hi = 0.0;
    int points = 0;
};

struct AutoWindow {
    double min_decades = 1.0;
    int min_points = 8;
    double min_drop_decades = 0.5;  // required decrease of y across the window
};

// Least squares on (log x, log y) over points with lo ≤ x ≤ hi (all points
// when no window is given). Needs at least five points.
FitResult fit_power_law(const std::vector<double>& xs, const std::vector<double>& ys,
                        std::optional<std::pair<double, double>> window = std::nullopt);
// Sliding windows spanning the minimum number of decades; the best r² wins.
// Falls back to windows without the drop requirement when none qualifies.
FitResult fit_power_law_auto(const std::vector<double>& xs, const std::vector<double>& ys, const AutoWindow& opts = {});

double median(std::vector<double> v);

// First time the series reaches `level` (linear interpolation); NaN if never.
double crossing_time(const std::vector<double>& times, const std::vector<double>& values, double level = 0.5);

struct Transition {
    int j = 0;
    double measured = 0.0;  // rescaled time, NaN when censored
    double predicted = 0.0; // 1/λ_j
    double rel_error = 0.0;
    bool censored = false;
};

struct TransitionReport {
    std::vector<Transition> items;
    bool ordered = true;  // measured crossings non-decreasing in j
};

// `times` are already rescaled (t / (κ_eff T_eff)); series[k] belongs to js[k].
TransitionReport extract_transitions(const std::vector<double>& times, const std::vector<int>& js,
                                     const std::vector<std::vector<double>>& series, const PowerLawSpectrum& spectrum);

struct LimitGap {
    double sup_gap = 0.0;
    double at_time = 0.0;
    int points = 0;
};

// sup |values(t) − limit(t)| over the grid, skipping |t − c| < delta for
// every c in `exclude`.
LimitGap compare_to_limit(const std::vector<double>& times, const std::vector<double>& values,
                          const std::function<double(double)>& limit, const std::vector<double>& exclude,
                          double delta = 0.1);

double interpolate(const std::vector<double>& xs, const std::vector<double>& ys, double x);

// Risk carried by teacher direction j (1-based):
// w_j(WᵀW)w_jᵀ/r_s − 2λ_j(ΘᵀWWᵀΘ)_jj/(√r_s‖Λ‖_F) + λ_j²/‖Λ‖_F², w_j = θ_jᵀW.
Vec per_direction_risk(const TeacherModel& t, const Mat& w);

}  // namespace qns
