#pragma once

#include "qns/linalg.hpp"
#include "qns/model.hpp"

#include <cmath>
#include <functional>
#include <sstream>
#include <vector>

namespace qns {

struct FlowParams {
    PowerLawSpectrum spectrum;
    int d = 0;
    int r_s = 0;
    double t_w = 0.0;  // r_s
    double t_u = 0.0;  // √r_s ‖Λ‖_F

    static FlowParams make(const PowerLawSpectrum& spectrum, int d, int r_s);
};

struct EffectiveScales {
    double kappa_eff = 1.0;
    double t_eff = 0.0;
    int r_eff = 0;
};

enum class Regime { heavy, light };

struct GramTrajectory {
    std::vector<double> times;
    std::vector<SymMat> grams;
};

// Right-hand sides of the weight (d×d) and alignment (r×r) Gram ODEs.
SymMat gram_rhs_weight(const SymMat& g, const FlowParams& p);
SymMat gram_rhs_align(const SymMat& g, const FlowParams& p);

SymMat closed_form_align_gram(const SymMat& g0, double t, const FlowParams& p);
SymMat closed_form_weight_gram(const SymMat& g0, double t, const FlowParams& p);
// Returns W(t) (d×r_s, up to right rotation) with W(t)W(t)ᵀ the weight
// Gram at time t started from W0 W0ᵀ. Avoids forming d×d matrices.
Mat closed_form_weight_factor(const Mat& w0, double t, const FlowParams& p);

// Solution of ∂_τ G = AG + GA − 2GBG for diagonal A = diag(a), B = diag(b)
// with G(0) = F0 F0ᵀ, returned as a factor F with G(τ) = F Fᵀ.
Mat riccati_factor(const Mat& f0, const Vec& a, const Vec& b, double tau);

double default_rk4_dt(const FlowParams& p);

template <class State>
State rk4_step(const std::function<State(const State&)>& rhs, const State& y, double dt) {
    const State k1 = rhs(y);
    const State k2 = rhs(State(y + (0.5 * dt) * k1));
    const State k3 = rhs(State(y + (0.5 * dt) * k2));
    const State k4 = rhs(State(y + dt * k3));
    return State(y + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4));
}

// Classical RK4 on symmetric-matrix states. Records every `record_every`
// steps and always the final state.
GramTrajectory integrate_rk4(const std::function<SymMat(const SymMat&)>& rhs, const SymMat& g0,
                             double t_end, double dt, int record_every = 1);

EffectiveScales effective_scales(int d, int r_s, int r, double alpha);

// Asymptotic predictions in rescaled time t / T_eff.
int theory_alignment(double t, int j, const EffectiveScales& scales, const PowerLawSpectrum& spectrum);
double theory_risk_curve(double t, const EffectiveScales& scales, const PowerLawSpectrum& spectrum);
bool at_transition(double t, const EffectiveScales& scales, const PowerLawSpectrum& spectrum);

// Large-d limit risk. Heavy: phi_or_rs is r_s/r, t is rescaled by κ_eff.
// Light: phi_or_rs is r_s; teacher_width = 0 normalises by Σ_{j≥1} j^{-2α}.
double theory_limit_risk(double t, double alpha, double phi_or_rs, Regime regime, double c = 1.0,
                         int teacher_width = 0);

double zeta(double s);

}  // namespace qns
