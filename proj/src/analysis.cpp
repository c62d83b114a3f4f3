#include "qns/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

namespace qns {

namespace {

struct LogPoints {
    std::vector<double> lx, ly;
};

LogPoints to_log(const std::vector<double>& xs, const std::vector<double>& ys) {
    if (xs.size() != ys.size()) throw Error("fit_power_law: xs and ys differ in length");
    std::vector<std::size_t> order(xs.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return xs[a] < xs[b]; });
    LogPoints p;
    for (std::size_t i : order) {
        if (!(xs[i] > 0.0) || !(ys[i] > 0.0)) {
            std::ostringstream os;
            os << "fit_power_law: nonpositive value at index " << i << " (x = " << xs[i] << ", y = " << ys[i] << ")";
            throw Error(os.str());
        }
        p.lx.push_back(std::log(xs[i]));
        p.ly.push_back(std::log(ys[i]));
    }
    return p;
}

// Running sums for O(1) least squares on index ranges.
struct Prefix {
    std::vector<double> sx, sy, sxx, syy, sxy;
    explicit Prefix(const LogPoints& p) {
        const std::size_t n = p.lx.size();
        sx.assign(n + 1, 0.0);
        sy = sxx = syy = sxy = sx;
        for (std::size_t i = 0; i < n; ++i) {
            sx[i + 1] = sx[i] + p.lx[i];
            sy[i + 1] = sy[i] + p.ly[i];
            sxx[i + 1] = sxx[i] + p.lx[i] * p.lx[i];
            syy[i + 1] = syy[i] + p.ly[i] * p.ly[i];
            sxy[i + 1] = sxy[i] + p.lx[i] * p.ly[i];
        }
    }
};

// Direct least squares on [a, b) with centring for accuracy.
FitResult fit_range(const LogPoints& p, std::size_t a, std::size_t b) {
    const double n = static_cast<double>(b - a);
    double mx = 0.0, my = 0.0;
    for (std::size_t i = a; i < b; ++i) {
        mx += p.lx[i];
        my += p.ly[i];
    }
    mx /= n;
    my /= n;
    double sxx = 0.0, sxy = 0.0, syy = 0.0;
    for (std::size_t i = a; i < b; ++i) {
        const double dx = p.lx[i] - mx, dy = p.ly[i] - my;
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    if (!(sxx > 0.0)) throw Error("fit_power_law: window has no spread in x");
    FitResult f;
    f.exponent = sxy / sxx;
    f.intercept = my - f.exponent * mx;
    const double ss_res = std::max(0.0, syy - f.exponent * sxy);
    const double scale = std::max(syy, 1e-300);
    f.r2 = syy <= 1e-28 * std::max(1.0, my * my) ? 1.0 : std::clamp(1.0 - ss_res / scale, 0.0, 1.0);
    f.lo = std::exp(p.lx[a]);
    f.hi = std::exp(p.lx[b - 1]);
    f.points = static_cast<int>(b - a);
    return f;
}

double quick_r2(const Prefix& s, std::size_t a, std::size_t b) {
    const double n = static_cast<double>(b - a);
    const double sx = s.sx[b] - s.sx[a], sy = s.sy[b] - s.sy[a];
    const double cxx = (s.sxx[b] - s.sxx[a]) - sx * sx / n;
    const double cyy = (s.syy[b] - s.syy[a]) - sy * sy / n;
    const double cxy = (s.sxy[b] - s.sxy[a]) - sx * sy / n;
    if (!(cxx > 0.0)) return -1.0;
    if (cyy <= 1e-24) return 1.0;
    return cxy * cxy / (cxx * cyy);
}

}  // namespace

FitResult fit_power_law(const std::vector<double>& xs, const std::vector<double>& ys,
                        std::optional<std::pair<double, double>> window) {
    std::vector<double> wx, wy;
    for (std::size_t i = 0; i < xs.size() && i < ys.size(); ++i) {
        if (window && (xs[i] < window->first || xs[i] > window->second)) continue;
        wx.push_back(xs[i]);
        wy.push_back(ys[i]);
    }
    if (xs.size() != ys.size()) throw Error("fit_power_law: xs and ys differ in length");
    if (window && !(window->first < window->second)) throw Error("fit_power_law: empty window");
    if (wx.size() < 5) {
        std::ostringstream os;
        os << "fit_power_law: " << wx.size() << " points in window, need at least 5";
        throw Error(os.str());
    }
    const LogPoints p = to_log(wx, wy);
    return fit_range(p, 0, p.lx.size());
}

FitResult fit_power_law_auto(const std::vector<double>& xs, const std::vector<double>& ys, const AutoWindow& opts) {
    const LogPoints p = to_log(xs, ys);
    const std::size_t n = p.lx.size();
    const Prefix pre(p);
    const double span = opts.min_decades * std::log(10.0);
    const double drop = opts.min_drop_decades * std::log(10.0);
    const std::size_t min_pts = static_cast<std::size_t>(std::max(5, opts.min_points));

    for (int pass = 0; pass < 2; ++pass) {
        double best = -1.0;
        std::size_t ba = 0, bb = 0;
        std::size_t b = 0;
        for (std::size_t a = 0; a < n; ++a) {
            b = std::max(b, a + min_pts);
            while (b <= n && p.lx[b - 1] - p.lx[a] < span) ++b;
            if (b > n) break;
            if (pass == 0 && p.ly[a] - p.ly[b - 1] < drop) continue;
            const double r2 = quick_r2(pre, a, b);
            if (r2 > best) {
                best = r2;
                ba = a;
                bb = b;
            }
        }
        if (best >= 0.0) return fit_range(p, ba, bb);
    }
    std::ostringstream os;
    os << "fit_power_law: no window spans " << opts.min_decades << " decade(s) with at least " << min_pts
       << " points";
    throw Error(os.str());
}

double median(std::vector<double> v) {
    if (v.empty()) throw Error("median: empty input");
    std::sort(v.begin(), v.end());
    const std::size_t m = v.size() / 2;
    return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

double crossing_time(const std::vector<double>& times, const std::vector<double>& values, double level) {
    if (times.size() != values.size()) throw Error("crossing_time: length mismatch");
    for (std::size_t i = 0; i < times.size(); ++i) {
        if (values[i] >= level) {
            if (i == 0) return times[0];
            const double v0 = values[i - 1], v1 = values[i];
            const double f = (level - v0) / (v1 - v0);
            return times[i - 1] + f * (times[i] - times[i - 1]);
        }
    }
    return std::numeric_limits<double>::quiet_NaN();
}

TransitionReport extract_transitions(const std::vector<double>& times, const std::vector<int>& js,
                                     const std::vector<std::vector<double>>& series, const PowerLawSpectrum& spectrum) {
    if (js.size() != series.size()) throw Error("extract_transitions: one series per tracked index expected");
    TransitionReport rep;
    double last = -std::numeric_limits<double>::infinity();
    int last_j = 0;
    std::vector<std::size_t> order(js.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return js[a] < js[b]; });
    for (std::size_t k : order) {
        const int j = js[k];
        if (j < 1 || j > spectrum.r) throw Error("extract_transitions: index outside 1..r");
        Transition tr;
        tr.j = j;
        tr.predicted = 1.0 / spectrum.lambdas(j - 1);
        tr.measured = crossing_time(times, series[k], 0.5);
        tr.censored = std::isnan(tr.measured);
        tr.rel_error = tr.censored ? std::numeric_limits<double>::quiet_NaN()
                                   : std::abs(tr.measured - tr.predicted) / tr.predicted;
        if (!tr.censored) {
            const bool strictly = last_j > 0 && spectrum.lambdas(j - 1) < spectrum.lambdas(last_j - 1);
            if (strictly && tr.measured < last) rep.ordered = false;
            last = tr.measured;
            last_j = j;
        }
        rep.items.push_back(tr);
    }
    return rep;
}

double interpolate(const std::vector<double>& xs, const std::vector<double>& ys, double x) {
    if (xs.empty() || xs.size() != ys.size()) throw Error("interpolate: invalid grid");
    if (x <= xs.front()) return ys.front();
    if (x >= xs.back()) return ys.back();
    const auto it = std::upper_bound(xs.begin(), xs.end(), x);
    const std::size_t i = static_cast<std::size_t>(it - xs.begin());
    const double f = (x - xs[i - 1]) / (xs[i] - xs[i - 1]);
    return ys[i - 1] + f * (ys[i] - ys[i - 1]);
}

LimitGap compare_to_limit(const std::vector<double>& times, const std::vector<double>& values,
                          const std::function<double(double)>& limit, const std::vector<double>& exclude,
                          double delta) {
    if (times.size() != values.size()) throw Error("compare_to_limit: length mismatch");
    LimitGap g;
    for (std::size_t i = 0; i < times.size(); ++i) {
        bool skip = false;
        for (double c : exclude)
            if (std::abs(times[i] - c) < delta) skip = true;
        if (skip) continue;
        const double gap = std::abs(values[i] - limit(times[i]));
        ++g.points;
        if (gap > g.sup_gap) {
            g.sup_gap = gap;
            g.at_time = times[i];
        }
    }
    return g;
}

Vec per_direction_risk(const TeacherModel& t, const Mat& w) {
    const double rs = static_cast<double>(w.cols());
    const Mat tw = t.project(w);  // r × r_s, rows w_j
    const Mat q = w.transpose() * w;
    Vec out(t.r());
    for (int j = 0; j < t.r(); ++j) {
        const Eigen::RowVectorXd row = tw.row(j);
        const double l = t.spectrum.lambdas(j);
        out(j) = (row * q * row.transpose())(0, 0) / rs - 2.0 * l * row.squaredNorm() / (std::sqrt(rs) * t.spectrum.frob) +
                 l * l / t.spectrum.frob_sq;
    }
    return out;
}

}  // namespace qns
