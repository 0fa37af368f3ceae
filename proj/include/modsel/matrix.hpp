#pragma once

#include <Eigen/Dense>
#include <stdexcept>
#include <utility>

namespace modsel {

inline constexpr double kPinvRelTol = 1e-10;
inline constexpr double kSqrtClampTol = 1e-8;

// Dense real symmetric matrix. Symmetry is enforced at construction by
// averaging with the transpose, so downstream eigendecompositions can assume
// an exactly symmetric input.
class SymMatrix {
public:
    explicit SymMatrix(const Eigen::MatrixXd& a) {
        if (a.rows() != a.cols() || a.rows() < 1) {
            throw std::invalid_argument("SymMatrix: input must be square with dim >= 1");
        }
        if (!a.allFinite()) {
            throw std::invalid_argument("SymMatrix: input has non-finite entries");
        }
        m_ = 0.5 * (a + a.transpose());
    }

    static SymMatrix identity(int dim) { return SymMatrix(Eigen::MatrixXd::Identity(dim, dim)); }

    static SymMatrix diagonal(const Eigen::VectorXd& d) {
        return SymMatrix(Eigen::MatrixXd(d.asDiagonal()));
    }

    int dim() const { return static_cast<int>(m_.rows()); }
    const Eigen::MatrixXd& data() const { return m_; }
    double operator()(int i, int j) const { return m_(i, j); }

private:
    Eigen::MatrixXd m_;
};

// One symmetric eigendecomposition shared between the pseudoinverse, the PSD
// square root, and extremal-eigenvalue queries.
class SymDecomposition {
public:
    explicit SymDecomposition(const SymMatrix& a) : solver_(a.data()) {
        if (solver_.info() != Eigen::Success) {
            throw std::runtime_error("SymDecomposition: eigendecomposition failed");
        }
    }

    double min_eigenvalue() const { return solver_.eigenvalues().minCoeff(); }
    double max_eigenvalue() const { return solver_.eigenvalues().maxCoeff(); }

    // Moore-Penrose pseudoinverse. Eigenvalues with |lambda| <= rel_tol * max|lambda|
    // are treated as zero.
    Eigen::MatrixXd pseudo_inverse(double rel_tol = kPinvRelTol) const {
        if (rel_tol < 0.0 || rel_tol >= 1.0) {
            throw std::invalid_argument("pseudo_inverse: rel_tol must lie in [0, 1)");
        }
        const Eigen::VectorXd& ev = solver_.eigenvalues();
        const double cut = rel_tol * ev.cwiseAbs().maxCoeff();
        Eigen::VectorXd inv = ev;
        for (int i = 0; i < inv.size(); ++i) {
            inv[i] = std::abs(ev[i]) <= cut ? 0.0 : 1.0 / ev[i];
        }
        return solver_.eigenvectors() * inv.asDiagonal() * solver_.eigenvectors().transpose();
    }

    // Symmetric PSD square root. Eigenvalues in [-clamp_tol * max, 0) are clamped
    // to zero; anything below that threshold is rejected.
    Eigen::MatrixXd psd_sqrt(double clamp_tol = kSqrtClampTol) const {
        const Eigen::VectorXd& ev = solver_.eigenvalues();
        const double top = std::max(ev.maxCoeff(), 0.0);
        if (ev.minCoeff() < -clamp_tol * top) {
            throw std::domain_error("psd_sqrt: matrix is not positive semidefinite");
        }
        Eigen::VectorXd root = ev.cwiseMax(0.0).cwiseSqrt();
        return solver_.eigenvectors() * root.asDiagonal() * solver_.eigenvectors().transpose();
    }

private:
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver_;
};

inline SymMatrix pseudo_inverse(const SymMatrix& a, double rel_tol = kPinvRelTol) {
    return SymMatrix(SymDecomposition(a).pseudo_inverse(rel_tol));
}

inline SymMatrix psd_sqrt(const SymMatrix& a, double clamp_tol = kSqrtClampTol) {
    return SymMatrix(SymDecomposition(a).psd_sqrt(clamp_tol));
}

inline double min_eigenvalue(const SymMatrix& a) { return SymDecomposition(a).min_eigenvalue(); }

inline double max_eigenvalue(const SymMatrix& a) { return SymDecomposition(a).max_eigenvalue(); }

}  // namespace modsel
