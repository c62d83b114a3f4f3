#include "doctest.h"

#include "qns/linalg.hpp"

#include <cmath>

using namespace qns;

TEST_CASE("SymMat rejects bad input") {
    CHECK_THROWS_AS(SymMat(Mat::Zero(2, 3)), Error);
    Mat a(2, 2);
    a << 1, 2, 3, 4;
    CHECK_THROWS_AS(SymMat{a}, Error);
    a(0, 0) = NAN;
    CHECK_THROWS_AS(SymMat::symmetrize(a), Error);
    Mat b(2, 2);
    b << 1, 2, 3, 4;
    CHECK(SymMat::symmetrize(b)(0, 1) == doctest::Approx(2.5));
}

TEST_CASE("sym_eigen small cases") {
    const EigenPair d = sym_eigen(SymMat::diag(Vec::LinSpaced(2, 1, 3).reverse()));
    CHECK(d.values(0) == doctest::Approx(3));
    CHECK(d.values(1) == doctest::Approx(1));
    CHECK(std::abs(d.vectors(0, 0)) == doctest::Approx(1));

    Mat x(2, 2);
    x << 0, 1, 1, 0;
    const EigenPair e = sym_eigen(SymMat(x));
    CHECK(e.values(0) == doctest::Approx(1));
    CHECK(e.values(1) == doctest::Approx(-1));
    CHECK(std::abs(e.vectors(0, 0)) == doctest::Approx(1 / std::sqrt(2.0)));
    CHECK(e.vectors(0, 0) * e.vectors(1, 0) > 0);
    CHECK(e.vectors(0, 1) * e.vectors(1, 1) < 0);

    const EigenPair id = sym_eigen(SymMat::identity(7));
    CHECK((id.values.array() - 1.0).abs().maxCoeff() < 1e-15);
}

TEST_CASE("sym_eigen reconstructs random symmetric matrices") {
    Rng rng(3);
    for (int n : {1, 2, 5, 17, 40}) {
        const SymMat m = SymMat::symmetrize(sample_gaussian_mat(n, n, 1.0, rng));
        const EigenPair e = sym_eigen(m);
        const Mat back = e.vectors * e.values.asDiagonal() * e.vectors.transpose();
        CHECK((back - m.mat()).cwiseAbs().maxCoeff() <= 1e-10 * spectral_norm(m.mat()));
        for (Eigen::Index i = 1; i < n; ++i) CHECK(e.values(i) <= e.values(i - 1));
    }
}

TEST_CASE("psd_sqrt") {
    Vec d(2);
    d << 4, 9;
    const SymMat r = psd_sqrt(SymMat::diag(d));
    CHECK(r(0, 0) == doctest::Approx(2));
    CHECK(r(1, 1) == doctest::Approx(3));
    d << 1, -1e-14;
    const SymMat c = psd_sqrt(SymMat::diag(d), 1e-12);
    CHECK(c(1, 1) == 0.0);
    CHECK(c(0, 0) == doctest::Approx(1));

    Mat m(2, 2);
    m << 2, 1, 1, 2;
    const SymMat s = psd_sqrt(SymMat(m));
    const EigenPair e = sym_eigen(s);
    CHECK(e.values(0) == doctest::Approx(std::sqrt(3.0)));
    CHECK(e.values(1) == doctest::Approx(1.0));

    Rng rng(5);
    for (int k = 0; k < 10; ++k) {
        const Mat f = sample_gaussian_mat(6, 4, 1.0, rng);
        const SymMat p = SymMat::symmetrize(f * f.transpose());
        const SymMat q = psd_sqrt(p);
        CHECK((q.mat() * q.mat() - p.mat()).cwiseAbs().maxCoeff() <= 1e-9 * p.mat().cwiseAbs().maxCoeff());
    }
}

TEST_CASE("inv_sqrt_gram") {
    Rng rng(7);
    const Mat q = sample_stiefel(8, 4, rng);
    CHECK((inv_sqrt_gram(q) - q).cwiseAbs().maxCoeff() < 1e-12);

    const Mat two = 2.0 * Mat::Identity(6, 3);
    CHECK((inv_sqrt_gram(two) - Mat::Identity(6, 3)).cwiseAbs().maxCoeff() < 1e-14);

    const Mat g = sample_gaussian_mat(8, 4, 1.0, rng);
    const Mat u = inv_sqrt_gram(g);
    CHECK((u.transpose() * u - Mat::Identity(4, 4)).cwiseAbs().maxCoeff() <= 1e-10);
    CHECK((inv_sqrt_gram(u) - u).cwiseAbs().maxCoeff() <= 1e-9);

    Mat bad = Mat::Zero(5, 2);
    bad(0, 0) = 1.0;
    try {
        inv_sqrt_gram(bad);
        FAIL("expected an error");
    } catch (const Error& e) {
        CHECK(std::string(e.what()).find("smallest eigenvalue") != std::string::npos);
    }
}

TEST_CASE("loewner_geq") {
    CHECK(loewner_geq(SymMat(2.0 * Mat::Identity(3, 3)), SymMat::identity(3), 0.0));
    CHECK_FALSE(loewner_geq(SymMat::identity(3), SymMat(2.0 * Mat::Identity(3, 3)), 0.0));
    Mat a(2, 2);
    a << 1, 0.9, 0.9, 1;
    CHECK(loewner_geq(SymMat(a), SymMat(0.05 * Mat::Identity(2, 2)), 1e-12));
    CHECK_FALSE(loewner_geq(SymMat(a), SymMat(0.15 * Mat::Identity(2, 2)), 1e-12));

    Rng rng(9);
    for (int k = 0; k < 20; ++k) {
        const SymMat x = SymMat::symmetrize(sample_gaussian_mat(4, 4, 1.0, rng));
        const SymMat y = SymMat::symmetrize(sample_gaussian_mat(4, 4, 1.0, rng));
        CHECK(loewner_geq(x, x, 0.0));
        // Strict comparison with negative slack cannot hold both ways.
        CHECK_FALSE((loewner_geq(x, y, -1e-9) && loewner_geq(y, x, -1e-9)));
    }
}

TEST_CASE("sampling") {
    CHECK((sample_gaussian_mat(5, 3, 1.0, 42) - sample_gaussian_mat(5, 3, 1.0, 42)).cwiseAbs().maxCoeff() == 0.0);
    CHECK((sample_gaussian_mat(5, 3, 1.0, 42) - sample_gaussian_mat(5, 3, 1.0, 43)).cwiseAbs().maxCoeff() > 0.0);
    Rng a(1, 0), b(1, 1);
    CHECK(a.normal() != b.normal());

    const int d = 10000;
    const Mat g = sample_gaussian_mat(d, 1, 1.0 / d, 11);
    const double mean_sq = g.squaredNorm() / d;
    // Var(x²) = 2σ⁴ for x ~ N(0, σ²).
    const double sd = std::sqrt(2.0) / d / std::sqrt(static_cast<double>(d));
    CHECK(std::abs(mean_sq - 1.0 / d) <= 3 * sd);

    const Mat o = sample_stiefel(4, 4, 5);
    CHECK(std::abs(std::abs(o.determinant()) - 1.0) <= 1e-8);
    CHECK_THROWS_AS(sample_stiefel(3, 4, 5), Error);
}
