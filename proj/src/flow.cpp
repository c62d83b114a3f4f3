#include "qns/flow.hpp"

#include <algorithm>
#include <numeric>

namespace qns {

FlowParams FlowParams::make(const PowerLawSpectrum& spectrum, int d, int r_s) {
    if (r_s < 1) throw Error("flow: r_s must be at least 1");
    if (spectrum.r > d) throw Error("flow: r exceeds d");
    FlowParams p;
    p.spectrum = spectrum;
    p.d = d;
    p.r_s = r_s;
    p.t_w = r_s;
    p.t_u = std::sqrt(static_cast<double>(r_s)) * spectrum.frob;
    return p;
}

static Vec embedded_lambdas(const FlowParams& p) {
    Vec l = Vec::Zero(p.d);
    l.head(p.spectrum.r) = p.spectrum.lambdas;
    return l;
}

SymMat gram_rhs_weight(const SymMat& g, const FlowParams& p) {
    if (g.dim() != p.d) throw Error("gram_rhs_weight: expected a d×d Gram matrix");
    const Vec l = embedded_lambdas(p);
    const double rs = std::sqrt(static_cast<double>(p.r_s));
    const Mat& m = g.mat();
    Mat lg = l.asDiagonal() * m;
    Mat out = (0.5 / (p.spectrum.frob * rs)) * (lg + lg.transpose() - (2.0 * p.spectrum.frob / rs) * (m * m));
    return SymMat::symmetrize(out);
}

SymMat gram_rhs_align(const SymMat& g, const FlowParams& p) {
    if (g.dim() != p.spectrum.r) throw Error("gram_rhs_align: expected an r×r Gram matrix");
    const Vec& l = p.spectrum.lambdas;
    const Mat& m = g.mat();
    Mat lg = l.asDiagonal() * m;
    Mat out = (0.5 / p.t_u) * (lg + lg.transpose() - 2.0 * m * l.asDiagonal() * m);
    return SymMat::symmetrize(out);
}

Mat riccati_factor(const Mat& f0, const Vec& a, const Vec& b, double tau) {
    const Eigen::Index n = f0.rows();
    const Eigen::Index k = f0.cols();
    if (a.size() != n || b.size() != n) throw Error("riccati_factor: coefficient size mismatch");
    if (tau < 0.0) throw Error("riccati_factor: negative time");
    if (tau == 0.0 || k == 0) return f0;

    // With K = ∫ 2 e^{As} B e^{As} ds the solution is
    // G = e^{Aτ} F0 (I + F0ᵀ K F0)^{-1} F0ᵀ e^{Aτ}. Stacking [I; K^{1/2} F0] = QR
    // gives G = (e^{Aτ} K^{-1/2} Q_b)(…)ᵀ, where Q_b is the lower block of Q.
    Vec kroot(n), scale(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const double x = 2.0 * a(i) * tau;
        double k_scaled;  // K_i e^{-2 a_i τ}
        if (a(i) == 0.0) {
            k_scaled = 2.0 * b(i) * tau;
            kroot(i) = std::sqrt(k_scaled);
        } else {
            k_scaled = -b(i) * std::expm1(-x) / a(i);
            // Past x = 600 the direction is saturated to double precision.
            const double xc = std::min(x, 600.0);
            const double e = xc > 40.0 ? std::exp(0.5 * xc) : std::sqrt(std::expm1(xc));
            kroot(i) = std::sqrt(b(i) / a(i)) * e;
        }
        if (!(k_scaled > 0.0) || !std::isfinite(kroot(i)))
            throw Error("riccati_factor: degenerate coefficient at index " + std::to_string(i));
        scale(i) = 1.0 / std::sqrt(k_scaled);
    }

    const Eigen::Index m = n + k;
    Mat stacked(m, k);
    stacked.topRows(k) = Mat::Identity(k, k);
    stacked.bottomRows(n) = kroot.asDiagonal() * f0;

    // Rows in decreasing norm keep Householder QR accurate under row scaling.
    std::vector<Eigen::Index> order(static_cast<std::size_t>(m));
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    Vec norms = stacked.rowwise().norm();
    std::stable_sort(order.begin(), order.end(), [&](Eigen::Index i, Eigen::Index j) { return norms(i) > norms(j); });
    Mat sorted(m, k);
    for (Eigen::Index i = 0; i < m; ++i) sorted.row(i) = stacked.row(order[static_cast<std::size_t>(i)]);

    Eigen::HouseholderQR<Mat> qr(sorted);
    const Mat r = qr.matrixQR().topRows(k).triangularView<Eigen::Upper>();
    const double rmin = r.diagonal().cwiseAbs().minCoeff();
    const double rmax = r.diagonal().cwiseAbs().maxCoeff();
    if (!(rmin > 0.0) || !std::isfinite(rmax)) {
        std::ostringstream os;
        os << "riccati_factor: singular inner matrix (diag(R) range " << rmin << " .. " << rmax << ")";
        throw Error(os.str());
    }
    const Mat q_sorted = qr.householderQ() * Mat::Identity(m, k);
    Mat qb(n, k);
    for (Eigen::Index i = 0; i < m; ++i) {
        const Eigen::Index src = order[static_cast<std::size_t>(i)];
        if (src >= k) qb.row(src - k) = q_sorted.row(i);
    }
    return scale.asDiagonal() * qb;
}

static Mat psd_factor(const SymMat& g0, const char* who) {
    const EigenPair e = sym_eigen(g0);
    const double top = std::max(1.0, e.values.size() ? std::abs(e.values(0)) : 0.0);
    if (e.values.size() && e.values.minCoeff() < -1e-10 * top)
        throw Error(std::string(who) + ": initial Gram is not positive semidefinite");
    std::vector<Eigen::Index> keep;
    for (Eigen::Index i = 0; i < e.values.size(); ++i)
        if (e.values(i) > 1e-14 * top) keep.push_back(i);
    Mat f(g0.dim(), static_cast<Eigen::Index>(keep.size()));
    for (std::size_t c = 0; c < keep.size(); ++c)
        f.col(static_cast<Eigen::Index>(c)) = e.vectors.col(keep[c]) * std::sqrt(e.values(keep[c]));
    return f;
}

SymMat closed_form_align_gram(const SymMat& g0, double t, const FlowParams& p) {
    if (g0.dim() != p.spectrum.r) throw Error("closed_form_align_gram: expected an r×r Gram matrix");
    if (t < 0.0) throw Error("closed_form_align_gram: negative time");
    if (t == 0.0) return g0;
    const Mat f0 = psd_factor(g0, "closed_form_align_gram");
    const Vec half = 0.5 * p.spectrum.lambdas;
    const Mat f = riccati_factor(f0, half, half, t / p.t_u);
    return SymMat::symmetrize(f * f.transpose());
}

static void weight_coefficients(const FlowParams& p, Vec& a, Vec& b) {
    const double scale = std::sqrt(static_cast<double>(p.r_s)) / p.spectrum.frob;
    a = 0.5 * scale * embedded_lambdas(p);
    b = Vec::Constant(p.d, 0.5);
}

Mat closed_form_weight_factor(const Mat& w0, double t, const FlowParams& p) {
    if (w0.rows() != p.d) throw Error("closed_form_weight_factor: expected d rows");
    if (t < 0.0) throw Error("closed_form_weight_factor: negative time");
    if (t == 0.0) return w0;
    Vec a, b;
    weight_coefficients(p, a, b);
    return riccati_factor(w0, a, b, t / p.t_w);
}

SymMat closed_form_weight_gram(const SymMat& g0, double t, const FlowParams& p) {
    if (g0.dim() != p.d) throw Error("closed_form_weight_gram: expected a d×d Gram matrix");
    if (t < 0.0) throw Error("closed_form_weight_gram: negative time");
    if (t == 0.0) return g0;
    const Mat f0 = psd_factor(g0, "closed_form_weight_gram");
    Vec a, b;
    weight_coefficients(p, a, b);
    const Mat f = riccati_factor(f0, a, b, t / p.t_w);
    return SymMat::symmetrize(f * f.transpose());
}

double default_rk4_dt(const FlowParams& p) {
    return std::min(0.01, 0.1 * p.t_u / p.spectrum.lambdas(0));
}

GramTrajectory integrate_rk4(const std::function<SymMat(const SymMat&)>& rhs, const SymMat& g0, double t_end,
                             double dt, int record_every) {
    if (!(dt > 0.0)) throw Error("integrate_rk4: dt must be positive");
    if (t_end < 0.0) throw Error("integrate_rk4: negative horizon");
    if (record_every < 1) record_every = 1;
    GramTrajectory traj;
    traj.times.push_back(0.0);
    traj.grams.push_back(g0);
    if (t_end == 0.0) return traj;
    const long n = std::max(1L, static_cast<long>(std::ceil(t_end / dt - 1e-9)));
    const double h = t_end / static_cast<double>(n);
    std::function<Mat(const Mat&)> f = [&rhs](const Mat& y) { return Mat(rhs(SymMat::symmetrize(y)).mat()); };
    Mat y = g0.mat();
    for (long s = 1; s <= n; ++s) {
        y = rk4_step<Mat>(f, y, h);
        if (!y.allFinite()) throw Error("integrate_rk4: non-finite state at step " + std::to_string(s));
        if (s % record_every == 0 || s == n) {
            traj.times.push_back(h * static_cast<double>(s));
            traj.grams.push_back(SymMat::symmetrize(y));
        }
    }
    return traj;
}

EffectiveScales effective_scales(int d, int r_s, int r, double alpha) {
    if (alpha == 0.5) throw Error("effective_scales: alpha = 0.5 is excluded");
    if (r_s < 1 || r < 1) throw Error("effective_scales: widths must be positive");
    if (d <= r_s) throw Error("effective_scales: requires d > r_s");
    const PowerLawSpectrum spec = PowerLawSpectrum::power_law(r, alpha);
    EffectiveScales s;
    const double logd = std::log(static_cast<double>(d));
    s.t_eff = std::sqrt(static_cast<double>(r_s)) * spec.frob * std::log(static_cast<double>(d) / r_s);
    if (alpha < 0.5) {
        s.kappa_eff = std::pow(static_cast<double>(r), alpha);
        const double w = static_cast<double>(r_s) * (1.0 - std::pow(logd, -0.125));
        s.r_eff = static_cast<int>(std::floor(std::min(w, static_cast<double>(r))));
    } else {
        s.kappa_eff = 1.0;
        s.r_eff = std::min(r_s, r);
    }
    return s;
}

int theory_alignment(double t, int j, const EffectiveScales& scales, const PowerLawSpectrum& spectrum) {
    if (j < 1 || j > scales.r_eff || j > spectrum.r) throw Error("theory_alignment: j outside 1..r_eff");
    return t >= 1.0 / spectrum.lambdas(j - 1) ? 1 : 0;
}

double theory_risk_curve(double t, const EffectiveScales& scales, const PowerLawSpectrum& spectrum) {
    double learned = 0.0;
    const int top = std::min(scales.r_eff, spectrum.r);
    for (int j = 1; j <= top; ++j) {
        const double l = spectrum.lambdas(j - 1);
        if (t >= 1.0 / l) learned += l * l;
    }
    return 1.0 - learned / spectrum.frob_sq;
}

bool at_transition(double t, const EffectiveScales& scales, const PowerLawSpectrum& spectrum) {
    const int top = std::min(scales.r_eff, spectrum.r);
    for (int j = 1; j <= top; ++j)
        if (t == 1.0 / spectrum.lambdas(j - 1)) return true;
    return false;
}

double zeta(double s) {
    if (!(s > 1.0)) throw Error("zeta: requires s > 1");
    const int n = 1000;
    double sum = 0.0;
    for (int j = n - 1; j >= 1; --j) sum += std::pow(static_cast<double>(j), -s);
    const double nn = n;
    // Euler–Maclaurin tail from n.
    sum += std::pow(nn, 1.0 - s) / (s - 1.0) + 0.5 * std::pow(nn, -s) + s * std::pow(nn, -s - 1.0) / 12.0 -
           s * (s + 1.0) * (s + 2.0) * std::pow(nn, -s - 3.0) / 720.0;
    return sum;
}

double theory_limit_risk(double t, double alpha, double phi_or_rs, Regime regime, double c, int teacher_width) {
    if (alpha == 0.5) throw Error("theory_limit_risk: alpha = 0.5 is excluded");
    if (t < 0.0) throw Error("theory_limit_risk: negative time");
    if (regime == Regime::heavy) {
        if (!(alpha < 0.5)) throw Error("theory_limit_risk: heavy regime requires alpha < 0.5");
        const double phi = phi_or_rs;
        if (alpha == 0.0) return 1.0 - std::min({t, phi, 1.0});
        const double curve = std::max(0.0, 1.0 - c * std::pow(t, (1.0 - 2.0 * alpha) / alpha));
        const double plateau = std::max(0.0, 1.0 - std::pow(phi, 1.0 - 2.0 * alpha));
        return std::max(curve, plateau);
    }
    if (!(alpha > 0.5)) throw Error("theory_limit_risk: light regime requires alpha > 0.5");
    const double rs = phi_or_rs;
    const double cutoff = std::min(std::pow(t, 1.0 / alpha), rs);
    double total;
    if (teacher_width > 0) {
        total = 0.0;
        for (int j = teacher_width; j >= 1; --j) total += std::pow(static_cast<double>(j), -2.0 * alpha);
    } else {
        total = zeta(2.0 * alpha);
    }
    double learned = 0.0;
    const long top = static_cast<long>(std::floor(cutoff + 1e-12));
    const long lim = teacher_width > 0 ? std::min<long>(top, teacher_width) : top;
    for (long j = lim; j >= 1; --j) learned += std::pow(static_cast<double>(j), -2.0 * alpha);
    return 1.0 - learned / total;
}

}  // namespace qns
