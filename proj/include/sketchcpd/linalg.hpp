#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <stdexcept>
#include <string>

namespace sketchcpd {

using Eigen::MatrixXd;
using Eigen::VectorXd;

/// Thrown when a Cholesky pivot is not strictly positive; carries the index
/// of the failing pivot (signals a rank-deficient projection upstream).
struct not_positive_definite : std::domain_error {
    explicit not_positive_definite(int pivot_index)
        : std::domain_error("matrix is not positive definite at pivot " +
                            std::to_string(pivot_index)),
          pivot(pivot_index) {}
    int pivot;
};

/// Lower-triangular square-root factor L of an SPD matrix S = L L^T.
/// All diagonal entries of L are strictly positive.
class SpdFactor {
public:
    SpdFactor() = default;
    explicit SpdFactor(MatrixXd lower) : lower_(std::move(lower)) {}

    int dim() const { return static_cast<int>(lower_.rows()); }
    const MatrixXd& lower_factor() const { return lower_; }

private:
    MatrixXd lower_;
};

/// Cholesky factorization of a symmetric positive-definite matrix.
/// Symmetry is required up to 1e-10 relative tolerance; a non-positive
/// pivot raises not_positive_definite with the failing index.
inline SpdFactor cholesky_spd(const MatrixXd& s) {
    const int n = static_cast<int>(s.rows());
    if (s.cols() != n) throw std::invalid_argument("cholesky_spd: matrix must be square");
    const double scale = s.cwiseAbs().maxCoeff();
    for (int i = 0; i < n; ++i) {
        for (int j = i + 1; j < n; ++j) {
            if (std::fabs(s(i, j) - s(j, i)) > 1e-10 * std::max(1.0, scale)) {
                throw std::invalid_argument("cholesky_spd: matrix is not symmetric");
            }
        }
    }
    MatrixXd l = MatrixXd::Zero(n, n);
    for (int j = 0; j < n; ++j) {
        double diag = s(j, j);
        for (int k = 0; k < j; ++k) diag -= l(j, k) * l(j, k);
        if (!(diag > 0.0)) throw not_positive_definite(j);
        const double ljj = std::sqrt(diag);
        l(j, j) = ljj;
        for (int i = j + 1; i < n; ++i) {
            double v = s(i, j);
            for (int k = 0; k < j; ++k) v -= l(i, k) * l(j, k);
            l(i, j) = v / ljj;
        }
    }
    return SpdFactor(std::move(l));
}

/// Forward substitution: solves L x = v.
inline VectorXd solve_lower(const SpdFactor& f, const VectorXd& v) {
    const MatrixXd& l = f.lower_factor();
    const int n = f.dim();
    if (v.size() != n) throw std::invalid_argument("solve_lower: dimension mismatch");
    VectorXd x(n);
    for (int i = 0; i < n; ++i) {
        double s = v(i);
        for (int k = 0; k < i; ++k) s -= l(i, k) * x(k);
        x(i) = s / l(i, i);
    }
    return x;
}

/// Back substitution: solves L^T x = v.
inline VectorXd solve_lower_transposed(const SpdFactor& f, const VectorXd& v) {
    const MatrixXd& l = f.lower_factor();
    const int n = f.dim();
    if (v.size() != n) throw std::invalid_argument("solve_lower_transposed: dimension mismatch");
    VectorXd x(n);
    for (int i = n - 1; i >= 0; --i) {
        double s = v(i);
        for (int k = i + 1; k < n; ++k) s -= l(k, i) * x(k);
        x(i) = s / l(i, i);
    }
    return x;
}

/// Solves (L L^T) x = v.
inline VectorXd solve_spd(const SpdFactor& f, const VectorXd& v) {
    return solve_lower_transposed(f, solve_lower(f, v));
}

/// Largest singular value by power iteration on A^T A, Rayleigh-quotient
/// convergence to relative tolerance `tol`.
inline double sigma_max_power_iteration(const MatrixXd& a, double tol = 1e-8,
                                        int max_iterations = 10000) {
    const int n = static_cast<int>(a.cols());
    VectorXd v = VectorXd::Ones(n);
    // deterministic tie-breaking perturbation so no start is orthogonal
    for (int i = 0; i < n; ++i) v(i) += 1e-3 * std::sin(1.0 + i);
    v.normalize();
    double lambda = 0.0;
    for (int it = 0; it < max_iterations; ++it) {
        VectorXd w = a.transpose() * (a * v);
        const double norm = w.norm();
        if (norm == 0.0) return 0.0;
        w /= norm;
        const double next = (a * w).squaredNorm();
        if (it > 0 && std::fabs(next - lambda) <= tol * std::max(1.0, next)) {
            return std::sqrt(next);
        }
        lambda = next;
        v = std::move(w);
    }
    return std::sqrt(lambda);
}

}  // namespace sketchcpd
