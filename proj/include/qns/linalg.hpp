#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace qns {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Symmetric matrix. The checked constructor rejects inputs whose asymmetry
// exceeds 1e-12 of the largest entry; `symmetrize` is for computed results.
class SymMat {
public:
    SymMat() = default;
    explicit SymMat(Mat m);

    static SymMat symmetrize(const Mat& m);
    static SymMat identity(Eigen::Index n);
    static SymMat zero(Eigen::Index n);
    static SymMat diag(const Vec& d);

    Eigen::Index dim() const { return m_.rows(); }
    const Mat& mat() const { return m_; }
    operator const Mat&() const { return m_; }
    double operator()(Eigen::Index i, Eigen::Index j) const { return m_(i, j); }

private:
    Mat m_;
};

struct EigenPair {
    Vec values;   // descending
    Mat vectors;  // columns, orthonormal
};

EigenPair sym_eigen(const SymMat& m);
double min_eigenvalue(const SymMat& m);
double max_eigenvalue(const SymMat& m);
double spectral_norm(const Mat& m);

// Eigenvalues below clip_tol are treated as zero.
SymMat psd_sqrt(const SymMat& m, double clip_tol = 1e-12);

// w (wᵀw)^{-1/2}
Mat inv_sqrt_gram(const Mat& w);

bool loewner_geq(const SymMat& a, const SymMat& b, double slack);
double default_loewner_slack(const SymMat& a, const SymMat& b);

// Seeded generator with independent substreams keyed by (seed, stream).
class Rng {
public:
    Rng(std::uint64_t seed, std::uint64_t stream = 0);

    double normal() { return normal_(eng_); }
    double uniform() { return uniform_(eng_); }

private:
    std::mt19937_64 eng_;
    std::normal_distribution<double> normal_{0.0, 1.0};
    std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

Mat sample_gaussian_mat(Eigen::Index rows, Eigen::Index cols, double variance, Rng& rng);
Mat sample_gaussian_mat(Eigen::Index rows, Eigen::Index cols, double variance, std::uint64_t seed);
Mat sample_stiefel(Eigen::Index rows, Eigen::Index cols, Rng& rng);
Mat sample_stiefel(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed);

}  // namespace qns
