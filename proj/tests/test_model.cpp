#include "doctest.h"

#include "qns/model.hpp"
#include "qns/sgd.hpp"

#include <cmath>

using namespace qns;

TEST_CASE("spectrum") {
    const PowerLawSpectrum s = PowerLawSpectrum::power_law(4, 1.0);
    CHECK(s.lambdas(3) == doctest::Approx(0.25));
    CHECK(s.frob_sq == doctest::Approx(1 + 0.25 + 1.0 / 9 + 1.0 / 16));
    CHECK_THROWS_AS(PowerLawSpectrum::power_law(0, 1.0), Error);
    Vec bad(2);
    bad << 1, 2;
    CHECK_THROWS_AS(PowerLawSpectrum::from_values(bad), Error);
}

TEST_CASE("teacher and student outputs") {
    const TeacherModel t1 = TeacherModel::standard(5, PowerLawSpectrum::power_law(1, 0.0));
    Vec x = Vec::Zero(5);
    x(0) = 2;
    CHECK(teacher_output(t1, x) == doctest::Approx(3));

    const TeacherModel t3 = TeacherModel::standard(6, PowerLawSpectrum::power_law(3, 1.0));
    Vec z = Vec::Zero(6);
    z(5) = 1.7;
    CHECK(teacher_output(t3, z) == doctest::Approx(-(1 + 0.5 + 1.0 / 3) / t3.spectrum.frob));

    const TeacherModel t2 = TeacherModel::standard(4, PowerLawSpectrum::power_law(2, 1.0));
    Vec y = Vec::Zero(4);
    y(0) = y(1) = 1;
    CHECK(teacher_output(t2, y) == doctest::Approx(0.0));

    CHECK(student_output(Mat::Zero(5, 2), x) == 0.0);
    CHECK(student_output(Mat(Mat::Identity(5, 1)), x) == doctest::Approx(3));

    const StudentState s(Mat::Identity(5, 1));
    CHECK(instantaneous_loss(s, Sample{x, 3.0}) == doctest::Approx(0.0));
    CHECK(instantaneous_loss(s, Sample{x, 7.0}) == doctest::Approx(1.0));
}

TEST_CASE("Monte Carlo moments") {
    const int d = 32, n = 100000;
    const TeacherModel t = TeacherModel::standard(d, PowerLawSpectrum::power_law(8, 1.0));
    Rng rng(17);
    const Mat w = sample_stiefel(d, 4, rng);
    const StudentState s(w);
    double sy = 0, syy = 0, sh = 0, shh = 0, sl = 0, sll = 0;
    for (int i = 0; i < n; ++i) {
        const Sample smp = draw_sample(t, rng);
        const double h = student_output(s, smp.x);
        const double l = instantaneous_loss(s, smp);
        sy += smp.y;
        syy += smp.y * smp.y;
        sh += h;
        shh += h * h;
        sl += l;
        sll += l * l;
    }
    auto band = [n](double s1, double s2) {
        const double mean = s1 / n;
        return 3.0 * std::sqrt((s2 / n - mean * mean) / n);
    };
    CHECK(std::abs(sy / n) <= band(sy, syy));
    // E[y²] = 2 under this normalization.
    CHECK(std::abs(syy / n - 2.0) <= 0.05);
    CHECK(std::abs(sh / n) <= band(sh, shh));
    CHECK(std::abs(sl / n - population_risk(t, s, false)) <= band(sl, sll));
}

TEST_CASE("population risk") {
    const TeacherModel t = TeacherModel::standard(10, PowerLawSpectrum::power_law(6, 1.0));
    CHECK(population_risk(t, Mat(Mat::Zero(10, 3)), true) == doctest::Approx(1.0));
    const Mat wopt = global_minimizer(t, 3);
    CHECK(population_risk(t, wopt, true) == doctest::Approx(opt_risk(t.spectrum, 3)).epsilon(1e-12));
    CHECK(population_risk(t, global_minimizer(t, 6), true) == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(population_risk(t, wopt, false) == doctest::Approx(population_risk(t, wopt, true) / 8));

    Rng rng(4);
    const Mat w = sample_gaussian_mat(10, 3, 0.3, rng);
    const Mat o = sample_stiefel(3, 3, rng);
    CHECK(population_risk(t, Mat(w * o), true) == doctest::Approx(population_risk(t, w, true)).epsilon(1e-12));
}

TEST_CASE("alignment") {
    const TeacherModel t = TeacherModel::standard(8, PowerLawSpectrum::power_law(4, 1.0));
    const StudentState s(Mat::Identity(8, 2));
    CHECK(alignment(t, s, 1) == doctest::Approx(1));
    CHECK(alignment(t, s, 2) == doctest::Approx(1));
    CHECK(alignment(t, s, 3) == doctest::Approx(0));

    Mat perp = Mat::Zero(8, 2);
    perp(5, 0) = perp(6, 1) = 1;
    CHECK(alignment(t, StudentState(perp), 1) == 0.0);

    const TeacherModel t3 = TeacherModel::standard(3, PowerLawSpectrum::power_law(2, 1.0));
    Mat one = Mat::Zero(3, 1);
    one(0, 0) = one(1, 0) = 1 / std::sqrt(2.0);
    CHECK(alignment(t3, StudentState(one), 1) == doctest::Approx(0.5));
    CHECK(alignment(t3, StudentState(one), 2) == doctest::Approx(0.5));

    Rng rng(8);
    const StudentState rs(sample_gaussian_mat(8, 3, 1.0, rng));
    double total = 0;
    for (int j = 1; j <= 4; ++j) {
        const double a = alignment(t, rs, j);
        CHECK(a >= 0.0);
        CHECK(a <= 1.0);
        total += a;
    }
    CHECK(total <= 3.0 + 1e-12);
    CHECK_THROWS_AS(alignment(t, StudentState(Mat::Zero(8, 2)), 1), Error);
}

TEST_CASE("haar teacher gives rotation-invariant risk") {
    const PowerLawSpectrum spec = PowerLawSpectrum::power_law(4, 1.0);
    Rng rng(21);
    const TeacherModel h = TeacherModel::haar(12, spec, rng);
    const TeacherModel s = TeacherModel::standard(12, spec);
    const Mat w = sample_gaussian_mat(12, 3, 0.2, rng);
    CHECK(population_risk(h, Mat(h.theta * w.topRows(4)), true) ==
          doctest::Approx(population_risk(s, Mat(Mat::Identity(12, 4) * w.topRows(4)), true)).epsilon(1e-10));
}

TEST_CASE("opt_risk") {
    CHECK(opt_risk(PowerLawSpectrum::power_law(4, 1.0), 4) == 0.0);
    CHECK(opt_risk(PowerLawSpectrum::power_law(10, 0.0), 4) == doctest::Approx(0.6));
    CHECK(opt_risk(PowerLawSpectrum::power_law(4, 1.0), 2) == doctest::Approx(0.12195).epsilon(1e-4));
}
