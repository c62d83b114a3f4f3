#pragma once

#include "qns/linalg.hpp"
#include "qns/model.hpp"

#include <limits>

namespace qns {

// G − (η/2)(2G−I)Λ(2G−I)(I+ηΛ(2G−I))^{-1} + ηΛ
SymMat monotone_update(const SymMat& g, const Vec& lambda, double eta);
// G + η(ΛG + GΛ − 2GΛG)
SymMat euler_update(const SymMat& g, const Vec& lambda, double eta);
// V − ηV²(I+ηV)^{-1} + ηΛ̂²
SymMat v_update(const SymMat& v, const Vec& lambda_hat, double eta);

// Diagonal blocks of (I+ηH)^t = [[A11, Λ̂^{-1}A12], [Λ̂A12, A22]] with
// H = [[0, I], [Λ̂², ηΛ̂²]]. When log_scale(i) is non-zero the stored
// entries of coordinate i are scaled by exp(-log_scale(i)).
struct RiccatiBlocks {
    Vec a11, a12, a22;
    Vec log_scale;
    double eta = 0.0;
    Vec lambda_hat;
};

RiccatiBlocks riccati_blocks(const Vec& lambda_hat, double eta, long t);

// Blocks of [[I, ηI], [ηΛ̂², I]]^t in closed form:
// b11 = b22 = ((I+ηΛ̂)^t + (I−ηΛ̂)^t)/2, b12 = Λ̂^{-1}((I+ηΛ̂)^t − (I−ηΛ̂)^t)/2,
// b21 = Λ̂²·b12.
struct PowerBlocks {
    Vec b11, b12, b21, b22;
};
PowerBlocks zero_diag_power_blocks(const Vec& lambda_hat, double eta, long t);

// G_t after t steps of the v-recursion started at V0 = 2Λ2^{1/2}G0Λ2^{1/2} − Λ1,
// read back through G = Λ2^{-1/2}(V + Λ1)Λ2^{-1/2}/2.
SymMat closed_form_discrete_gram(const SymMat& g0, const Vec& lambda1, const Vec& lambda2, const Vec& lambda_hat,
                                 double eta, long t);

struct BoundingConfig {
    int d = 0;
    int r_s = 0;
    double eta = 0.0;
    double kappa_d = std::numeric_limits<double>::quiet_NaN();  // NaN: regime default
    double c_tilde = 2.0;
    double c_shift = 2.0;  // constant in the Λ ± C‖Λ‖ηd/√r_s shift
};

// Diagonal coefficient sets of the bounding recursions.
struct BoundingSystem {
    int k = 0;  // block dimension
    bool heavy = true;
    double kappa_d = 0.0;
    double eta_eff = 0.0;  // (η/2)/(‖Λ‖_F √r_s)
    double c_tilde = 2.0;
    double frob_sq = 0.0;
    int r_s = 0;
    int d = 0;
    Vec lam_l1, lam_l2, lam_u1, lam_u2, lam;  // lam: Λ restricted to the block
};

struct BoundingState {
    SymMat t_ref;   // T_t
    SymMat lower;   // V̲_t
    SymMat upper;   // V̄_t
    SymMat truth;   // noise-free (or noise-fed) Gram tracked between the bounds
    double kappa_d = 0.0;
    double eta_eff = 0.0;
    long step = 0;
    bool violation = false;
};

double default_kappa_d(int d, double alpha);
BoundingSystem make_bounding_system(const PowerLawSpectrum& spectrum, const BoundingConfig& cfg);
BoundingState bounding_init(const SymMat& g0, const PowerLawSpectrum& spectrum, const BoundingConfig& cfg);
// One step of T, V̲, V̄ and the tracked Gram. `noise` (block-sized) is added
// to the tracked Gram when given.
BoundingState bounding_step(const BoundingState& state, const PowerLawSpectrum& spectrum, const BoundingConfig& cfg,
                            const SymMat* noise = nullptr);

SymMat lower_gram(const BoundingState& state, const BoundingSystem& sys);
SymMat upper_gram(const BoundingState& state, const BoundingSystem& sys);

struct SandwichReport {
    bool ok = true;
    double lower_margin = 0.0;  // min eig(G − G̲ − T)
    double upper_margin = 0.0;  // min eig(Ḡ − T − G)
    double floor_margin = 0.0;  // min eig(T − κ r_s/d I)
};
SandwichReport check_sandwich(const BoundingState& state, const BoundingSystem& sys, double slack);

}  // namespace qns
