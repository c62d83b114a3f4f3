#include "qns/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace qns {

SymMat::SymMat(Mat m) : m_(std::move(m)) {
    if (m_.rows() != m_.cols())
        throw Error("SymMat: matrix is not square");
    if (!m_.allFinite())
        throw Error("SymMat: non-finite entries");
    const double scale = m_.cwiseAbs().maxCoeff();
    const double asym = (m_ - m_.transpose()).cwiseAbs().maxCoeff();
    if (asym > 1e-12 * scale) {
        std::ostringstream os;
        os << "SymMat: asymmetry " << asym << " exceeds tolerance (max entry " << scale << ")";
        throw Error(os.str());
    }
}

SymMat SymMat::symmetrize(const Mat& m) {
    if (m.rows() != m.cols())
        throw Error("SymMat: matrix is not square");
    Mat s = 0.5 * (m + m.transpose());
    return SymMat(std::move(s));
}

SymMat SymMat::identity(Eigen::Index n) { return SymMat(Mat::Identity(n, n)); }
SymMat SymMat::zero(Eigen::Index n) { return SymMat(Mat::Zero(n, n)); }
SymMat SymMat::diag(const Vec& d) { return SymMat(Mat(d.asDiagonal())); }

EigenPair sym_eigen(const SymMat& m) {
    Eigen::SelfAdjointEigenSolver<Mat> es(m.mat());
    if (es.info() != Eigen::Success)
        throw Error("sym_eigen: eigensolver did not converge (dim " + std::to_string(m.dim()) + ")");
    EigenPair out;
    out.values = es.eigenvalues().reverse();
    out.vectors = es.eigenvectors().rowwise().reverse();
    return out;
}

double min_eigenvalue(const SymMat& m) {
    if (m.dim() == 0) return 0.0;
    Eigen::SelfAdjointEigenSolver<Mat> es(m.mat(), Eigen::EigenvaluesOnly);
    if (es.info() != Eigen::Success) throw Error("min_eigenvalue: no convergence");
    return es.eigenvalues()(0);
}

double max_eigenvalue(const SymMat& m) {
    if (m.dim() == 0) return 0.0;
    Eigen::SelfAdjointEigenSolver<Mat> es(m.mat(), Eigen::EigenvaluesOnly);
    if (es.info() != Eigen::Success) throw Error("max_eigenvalue: no convergence");
    return es.eigenvalues()(m.dim() - 1);
}

double spectral_norm(const Mat& m) {
    if (m.size() == 0) return 0.0;
    Eigen::JacobiSVD<Mat> svd(m);
    return svd.singularValues()(0);
}

SymMat psd_sqrt(const SymMat& m, double clip_tol) {
    EigenPair e = sym_eigen(m);
    Vec s = e.values.unaryExpr([clip_tol](double v) { return v < clip_tol ? 0.0 : std::sqrt(v); });
    return SymMat::symmetrize(e.vectors * s.asDiagonal() * e.vectors.transpose());
}

Mat inv_sqrt_gram(const Mat& w) {
    SymMat g = SymMat::symmetrize(w.transpose() * w);
    EigenPair e = sym_eigen(g);
    const double lo = e.values.size() ? e.values.minCoeff() : 1.0;
    if (!(lo > 1e-12)) {
        std::ostringstream os;
        os << "inv_sqrt_gram: Gram matrix is rank deficient, smallest eigenvalue " << lo;
        throw Error(os.str());
    }
    Vec s = e.values.cwiseSqrt().cwiseInverse();
    return w * (e.vectors * s.asDiagonal() * e.vectors.transpose());
}

bool loewner_geq(const SymMat& a, const SymMat& b, double slack) {
    if (a.dim() != b.dim()) throw Error("loewner_geq: dimension mismatch");
    return min_eigenvalue(SymMat::symmetrize(a.mat() - b.mat())) >= -slack;
}

double default_loewner_slack(const SymMat& a, const SymMat& b) {
    return 1e-10 * (spectral_norm(a.mat()) + spectral_norm(b.mat()));
}

Rng::Rng(std::uint64_t seed, std::uint64_t stream) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32),
                      0x71a3u};
    eng_.seed(seq);
}

Mat sample_gaussian_mat(Eigen::Index rows, Eigen::Index cols, double variance, Rng& rng) {
    const double sd = std::sqrt(variance);
    Mat m(rows, cols);
    // Row-major fill so the sequence does not depend on storage order.
    for (Eigen::Index i = 0; i < rows; ++i)
        for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = sd * rng.normal();
    return m;
}

Mat sample_gaussian_mat(Eigen::Index rows, Eigen::Index cols, double variance, std::uint64_t seed) {
    Rng rng(seed);
    return sample_gaussian_mat(rows, cols, variance, rng);
}

Mat sample_stiefel(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
    if (rows < cols) throw Error("sample_stiefel: rows < cols");
    return inv_sqrt_gram(sample_gaussian_mat(rows, cols, 1.0, rng));
}

Mat sample_stiefel(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed) {
    Rng rng(seed);
    return sample_stiefel(rows, cols, rng);
}

}  // namespace qns
