#include "qns/riccati.hpp"

#include <cmath>
#include <sstream>

namespace qns {

static void check_diag(const char* who, const SymMat& g, const Vec& l) {
    if (g.dim() != l.size()) throw Error(std::string(who) + ": dimension mismatch");
}

static Mat solve_right(const Mat& a, const Mat& r, const char* who) {
    // a r^{-1}
    Eigen::PartialPivLU<Mat> lu(r.transpose());
    if (r.size() && !(lu.rcond() > 1e-14)) throw Error(std::string(who) + ": singular resolvent");
    return lu.solve(a.transpose()).transpose();
}

SymMat monotone_update(const SymMat& g, const Vec& lambda, double eta) {
    check_diag("monotone_update", g, lambda);
    const Eigen::Index n = g.dim();
    const Mat id = Mat::Identity(n, n);
    const Mat b = 2.0 * g.mat() - id;
    const Mat blb = b * lambda.asDiagonal() * b;
    const Mat res = id + eta * lambda.asDiagonal() * b;
    const Mat mid = solve_right(blb, res, "monotone_update");
    return SymMat::symmetrize(g.mat() - 0.5 * eta * mid + eta * Mat(lambda.asDiagonal()));
}

SymMat euler_update(const SymMat& g, const Vec& lambda, double eta) {
    check_diag("euler_update", g, lambda);
    const Mat& m = g.mat();
    const Mat lg = lambda.asDiagonal() * m;
    return SymMat::symmetrize(m + eta * (lg + lg.transpose() - 2.0 * m * lambda.asDiagonal() * m));
}

SymMat v_update(const SymMat& v, const Vec& lambda_hat, double eta) {
    check_diag("v_update", v, lambda_hat);
    const Eigen::Index n = v.dim();
    const Mat& m = v.mat();
    const Mat res = Mat::Identity(n, n) + eta * m;
    const Mat sq = solve_right(m * m, res, "v_update");
    return SymMat::symmetrize(m - eta * sq + eta * Mat(lambda_hat.array().square().matrix().asDiagonal()));
}

namespace {

// 2×2 matrix with an exact power-of-two scale: value = m · 2^e.
struct Scaled2 {
    double m[2][2];
    long e = 0;
};

Scaled2 mul(const Scaled2& a, const Scaled2& b) {
    Scaled2 c;
    for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 2; ++j) c.m[i][j] = a.m[i][0] * b.m[0][j] + a.m[i][1] * b.m[1][j];
    c.e = a.e + b.e;
    double top = 0.0;
    for (auto& row : c.m)
        for (double v : row) top = std::max(top, std::abs(v));
    int ex = 0;
    std::frexp(top, &ex);
    if (ex > 64 || ex < -64) {
        for (auto& row : c.m)
            for (double& v : row) v = std::ldexp(v, -ex);
        c.e += ex;
    }
    return c;
}

Scaled2 power(Scaled2 base, long t) {
    Scaled2 acc{{{1.0, 0.0}, {0.0, 1.0}}, 0};
    while (t > 0) {
        if (t & 1L) acc = mul(acc, base);
        t >>= 1;
        if (t) base = mul(base, base);
    }
    return acc;
}

}  // namespace

RiccatiBlocks riccati_blocks(const Vec& lambda_hat, double eta, long t) {
    if (t < 0) throw Error("riccati_blocks: negative step count");
    const Eigen::Index n = lambda_hat.size();
    RiccatiBlocks out;
    out.eta = eta;
    out.lambda_hat = lambda_hat;
    out.a11.resize(n);
    out.a12.resize(n);
    out.a22.resize(n);
    out.log_scale = Vec::Zero(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const double l = lambda_hat(i);
        Scaled2 m{{{1.0, eta}, {eta * l * l, 1.0 + eta * eta * l * l}}, 0};
        Scaled2 p = power(m, t);
        double a11 = p.m[0][0], a12 = l * p.m[0][1], a22 = p.m[1][1];
        const double ln = static_cast<double>(p.e) * std::log(2.0);
        if (ln < 600.0) {
            a11 = std::ldexp(a11, static_cast<int>(p.e));
            a12 = std::ldexp(a12, static_cast<int>(p.e));
            a22 = std::ldexp(a22, static_cast<int>(p.e));
        } else {
            out.log_scale(i) = ln;
        }
        out.a11(i) = a11;
        out.a12(i) = a12;
        out.a22(i) = a22;
    }
    return out;
}

PowerBlocks zero_diag_power_blocks(const Vec& lambda_hat, double eta, long t) {
    if (t < 0) throw Error("zero_diag_power_blocks: negative step count");
    const Eigen::Index n = lambda_hat.size();
    PowerBlocks b;
    b.b11.resize(n);
    b.b12.resize(n);
    b.b21.resize(n);
    b.b22.resize(n);
    const double tt = static_cast<double>(t);
    for (Eigen::Index i = 0; i < n; ++i) {
        const double l = lambda_hat(i);
        const double x = eta * l;
        double plus, minus, diff;
        if (std::abs(x) < 1.0) {
            const double lp = tt * std::log1p(x), lm = tt * std::log1p(-x);
            plus = std::exp(lp);
            minus = std::exp(lm);
            diff = minus * std::expm1(lp - lm);
        } else {
            plus = std::pow(1.0 + x, tt);
            minus = std::pow(1.0 - x, tt);
            diff = plus - minus;
        }
        b.b11(i) = 0.5 * (plus + minus);
        b.b22(i) = b.b11(i);
        b.b12(i) = l != 0.0 ? 0.5 * diff / l : eta * tt;
        b.b21(i) = 0.5 * l * diff;
    }
    return b;
}

SymMat closed_form_discrete_gram(const SymMat& g0, const Vec& lambda1, const Vec& lambda2, const Vec& lambda_hat,
                                 double eta, long t) {
    const Eigen::Index n = g0.dim();
    if (lambda1.size() != n || lambda2.size() != n || lambda_hat.size() != n)
        throw Error("closed_form_discrete_gram: dimension mismatch");
    if ((lambda2.array() <= 0.0).any() || (lambda_hat.array() <= 0.0).any())
        throw Error("closed_form_discrete_gram: lambda2 and lambda_hat must be positive");
    if (t == 0) return g0;
    const RiccatiBlocks blk = riccati_blocks(lambda_hat, eta, t);
    Vec r22 = blk.a22.cwiseQuotient(blk.a12);
    Vec r11 = blk.a11.cwiseQuotient(blk.a12);
    Vec inv12(n);
    for (Eigen::Index i = 0; i < n; ++i) inv12(i) = std::exp(-blk.log_scale(i)) / blk.a12(i);
    const Vec q1 = lambda1.cwiseQuotient(lambda2);
    const Vec qh = lambda_hat.cwiseQuotient(lambda2);
    const Vec outer = inv12.cwiseProduct(qh);  // A12^{-1} Λ̂ / Λ2
    Mat inner = g0.mat();
    inner.diagonal() += 0.5 * (qh.cwiseProduct(r11) - q1);
    Eigen::PartialPivLU<Mat> lu(inner);
    if (!(lu.rcond() > 1e-14)) {
        std::ostringstream os;
        os << "closed_form_discrete_gram: inner matrix not invertible at step " << t << " (rcond " << lu.rcond() << ")";
        throw Error(os.str());
    }
    const Mat inv = lu.inverse();
    Mat g = -0.25 * outer.asDiagonal() * inv * outer.asDiagonal();
    g.diagonal() += 0.5 * (q1 + r22.cwiseProduct(qh));
    return SymMat::symmetrize(g);
}

double default_kappa_d(int d, double alpha) {
    const double logd = std::log(static_cast<double>(d));
    if (alpha < 0.5) return 1.0 / std::pow(logd, 3.5);
    const double r_u = std::ceil(std::pow(logd, 2.5));
    return 1.0 / (r_u * std::pow(logd, 2.5));
}

BoundingSystem make_bounding_system(const PowerLawSpectrum& spectrum, const BoundingConfig& cfg) {
    if (cfg.d < 2 || cfg.r_s < 1) throw Error("bounding: invalid dimensions");
    if (!(cfg.eta > 0.0)) throw Error("bounding: eta must be positive");
    const double alpha = spectrum.alpha;
    if (std::isnan(alpha) || alpha == 0.5) throw Error("bounding: requires a power-law spectrum with alpha != 0.5");
    BoundingSystem s;
    s.heavy = alpha < 0.5;
    s.kappa_d = std::isnan(cfg.kappa_d) ? default_kappa_d(cfg.d, alpha) : cfg.kappa_d;
    if (!(s.kappa_d > 0.0 && s.kappa_d < 0.5)) throw Error("bounding: kappa_d must lie in (0, 0.5)");
    s.frob_sq = spectrum.frob_sq;
    s.r_s = cfg.r_s;
    s.d = cfg.d;
    s.c_tilde = cfg.c_tilde;
    s.eta_eff = 0.5 * cfg.eta / (spectrum.frob * std::sqrt(static_cast<double>(cfg.r_s)));
    const double shift = cfg.c_shift * spectrum.frob * cfg.eta * cfg.d / std::sqrt(static_cast<double>(cfg.r_s));
    double tail = 0.0;
    if (s.heavy) {
        s.k = spectrum.r;
    } else {
        const int r_u = static_cast<int>(std::ceil(std::pow(std::log(static_cast<double>(cfg.d)), 2.5)));
        s.k = std::min(r_u, spectrum.r);
        if (s.k < spectrum.r) tail = std::pow(static_cast<double>(s.k + 1), -alpha);
    }
    s.lam = spectrum.lambdas.head(s.k);
    s.lam_l1 = s.lam.array() - shift - tail;
    s.lam_u1 = s.lam.array() + shift;
    s.lam_l2 = s.lam.array() - tail;
    s.lam_u2 = s.lam;
    if ((s.lam_l1.array() <= 0.0).any() || (s.lam_l2.array() <= 0.0).any()) {
        std::ostringstream os;
        os << "bounding: shifted spectrum not positive (shift " << shift << ", tail " << tail
           << "); reduce eta or c_shift";
        throw Error(os.str());
    }
    return s;
}

static SymMat v_from_g(const SymMat& g, const Vec& l2, const Vec& l1, double denom) {
    const Vec h = l2.cwiseSqrt();
    Mat v = 2.0 * h.asDiagonal() * g.mat() * h.asDiagonal();
    v.diagonal() -= l1 / denom;
    return SymMat::symmetrize(v);
}

static SymMat g_from_v(const SymMat& v, const Vec& l2, const Vec& l1, double denom) {
    const Vec h = l2.cwiseSqrt().cwiseInverse();
    Mat k = v.mat();
    k.diagonal() += l1 / denom;
    return SymMat::symmetrize(0.5 * h.asDiagonal() * k * h.asDiagonal());
}

BoundingState bounding_init(const SymMat& g0, const PowerLawSpectrum& spectrum, const BoundingConfig& cfg) {
    const BoundingSystem sys = make_bounding_system(spectrum, cfg);
    if (g0.dim() != spectrum.r) throw Error("bounding_init: expected an r×r initial Gram");
    const Eigen::Index k = sys.k;
    const double t0 = sys.kappa_d * sys.r_s / sys.d;
    BoundingState st;
    st.kappa_d = sys.kappa_d;
    st.eta_eff = sys.eta_eff;
    st.t_ref = SymMat(Mat(t0 * Mat::Identity(k, k)));
    const Mat block = g0.mat().topLeftCorner(k, k);
    const SymMat g_lo = SymMat::symmetrize(block - st.t_ref.mat());
    const SymMat g_hi = SymMat::symmetrize(block + st.t_ref.mat());
    st.lower = v_from_g(g_lo, sys.lam_l2, sys.lam_l1, 1.0 + 2.0 * sys.kappa_d);
    st.upper = v_from_g(g_hi, sys.lam_u2, sys.lam_u1, 1.0 - 2.0 * sys.kappa_d);
    st.truth = g0;
    st.step = 0;
    st.violation = false;
    return st;
}

static SymMat resolvent_step(const SymMat& v, double a, const Vec& forcing) {
    const Eigen::Index n = v.dim();
    const Mat res = Mat::Identity(n, n) + a * v.mat();
    Mat out = solve_right(v.mat(), res, "bounding_step");
    out.diagonal() += a * forcing;
    return SymMat::symmetrize(out);
}

BoundingState bounding_step(const BoundingState& state, const PowerLawSpectrum& spectrum, const BoundingConfig& cfg,
                            const SymMat* noise) {
    const BoundingSystem sys = make_bounding_system(spectrum, cfg);
    const double k = sys.kappa_d;
    const double j = sys.eta_eff;
    BoundingState next = state;

    const Mat& tm = state.t_ref.mat();
    const double c = (3.0 * k + 1.0) / (k * (1.0 - 2.0 * k));
    Mat tn = tm + 2.0 * (1.0 - 2.0 * k) * j * (sys.lam_l1.asDiagonal() * tm - c * sys.lam_u2.asDiagonal() * tm * tm);
    next.t_ref = SymMat::symmetrize(tn);

    const double a_lo = j * (1.0 + 2.0 * k) / (1.0 - 1.2 * j);
    const double a_hi = j * (1.0 - 2.0 * k) / (1.0 + 1.2 * j);
    const double extra = sys.c_tilde * j * sys.frob_sq * sys.r_s;
    const Vec f_lo = sys.lam_l1.array().square() / ((1.0 + 2.0 * k) * (1.0 + 2.0 * k)) - extra * sys.lam_l1.array();
    const Vec f_hi = sys.lam_u1.array().square() / ((1.0 - 2.0 * k) * (1.0 - 2.0 * k)) + extra * sys.lam_u1.array();
    next.lower = resolvent_step(state.lower, a_lo, f_lo);
    next.upper = resolvent_step(state.upper, a_hi, f_hi);

    // Tracked Gram: G + ȷ(ΛG + GΛ − 2GΛG) (+ noise on the block).
    Mat g = euler_update(state.truth, spectrum.lambdas, j).mat();
    if (noise) {
        if (noise->dim() != sys.k) throw Error("bounding_step: noise must match the block dimension");
        g.topLeftCorner(sys.k, sys.k) += noise->mat();
    }
    next.truth = SymMat::symmetrize(g);
    next.step = state.step + 1;
    next.violation = !check_sandwich(next, sys, 1e-8).ok;
    return next;
}

SymMat lower_gram(const BoundingState& state, const BoundingSystem& sys) {
    return g_from_v(state.lower, sys.lam_l2, sys.lam_l1, 1.0 + 2.0 * sys.kappa_d);
}

SymMat upper_gram(const BoundingState& state, const BoundingSystem& sys) {
    return g_from_v(state.upper, sys.lam_u2, sys.lam_u1, 1.0 - 2.0 * sys.kappa_d);
}

SandwichReport check_sandwich(const BoundingState& state, const BoundingSystem& sys, double slack) {
    const Eigen::Index k = sys.k;
    const Mat g = state.truth.mat().topLeftCorner(k, k);
    const Mat& t = state.t_ref.mat();
    SandwichReport rep;
    rep.lower_margin = min_eigenvalue(SymMat::symmetrize(g - lower_gram(state, sys).mat() - t));
    rep.upper_margin = min_eigenvalue(SymMat::symmetrize(upper_gram(state, sys).mat() - t - g));
    rep.floor_margin = min_eigenvalue(SymMat::symmetrize(t - (sys.kappa_d * sys.r_s / sys.d) * Mat::Identity(k, k)));
    rep.ok = rep.lower_margin >= -slack && rep.upper_margin >= -slack && rep.floor_margin >= -slack;
    return rep;
}

}  // namespace qns
