#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <optional>
#include <string>

#include "ltem/error.hpp"

namespace ltem {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Relative pivot threshold below which a symmetric matrix is treated as singular.
inline constexpr double kSingularPivotTol = 1e-12;

/// Factorization of a symmetric matrix. Cholesky is tried first; when the
/// leading-minor test fails it falls back to a fully pivoted LU. A matrix whose
/// smallest pivot is below kSingularPivotTol times its largest diagonal entry is
/// rejected with DegenerateModel.
class SymmetricFactor {
public:
    explicit SymmetricFactor(const Matrix& a, const std::string& context = "matrix") {
        if (a.rows() != a.cols()) {
            throw InvalidArgument(context + ": factorization requires a square matrix");
        }
        const double scale = a.rows() ? a.diagonal().cwiseAbs().maxCoeff() : 0.0;
        if (a.rows() == 0) {
            llt_.emplace(a);
            return;
        }
        if (!(scale > 0.0) || !std::isfinite(scale)) {
            throw DegenerateModel(context + " is singular (zero or non-finite diagonal)");
        }
        Eigen::LLT<Matrix> llt(a);
        if (llt.info() == Eigen::Success) {
            const Vector d = llt.matrixLLT().diagonal();
            if ((d.array() * d.array()).minCoeff() >= kSingularPivotTol * scale) {
                llt_.emplace(std::move(llt));
                return;
            }
        }
        Eigen::FullPivLU<Matrix> lu(a);
        const Matrix u = lu.matrixLU().triangularView<Eigen::Upper>();
        if (u.diagonal().cwiseAbs().minCoeff() < kSingularPivotTol * scale) {
            throw DegenerateModel(context + " is numerically singular");
        }
        lu_.emplace(std::move(lu));
    }

    [[nodiscard]] bool is_cholesky() const noexcept { return llt_.has_value(); }

    [[nodiscard]] Matrix solve(const Matrix& b) const {
        return llt_ ? Matrix(llt_->solve(b)) : Matrix(lu_->solve(b));
    }

    [[nodiscard]] Matrix inverse() const {
        const auto n = llt_ ? llt_->rows() : lu_->rows();
        return solve(Matrix::Identity(n, n));
    }

    /// log det; requires a positive determinant.
    [[nodiscard]] double log_det() const {
        if (llt_) {
            return 2.0 * llt_->matrixLLT().diagonal().array().log().sum();
        }
        const Matrix u = lu_->matrixLU().triangularView<Eigen::Upper>();
        double sign = static_cast<double>(lu_->permutationP().determinant() *
                                          lu_->permutationQ().determinant());
        double acc = 0.0;
        for (Eigen::Index i = 0; i < u.rows(); ++i) {
            const double p = u(i, i);
            if (p < 0) sign = -sign;
            acc += std::log(std::abs(p));
        }
        if (sign < 0) {
            throw DegenerateModel("log_det of a matrix with negative determinant");
        }
        return acc;
    }

    /// Lower Cholesky factor (only when is_cholesky()).
    [[nodiscard]] Matrix cholesky_lower() const {
        if (!llt_) throw DegenerateModel("matrix is not positive definite");
        return llt_->matrixL();
    }

private:
    std::optional<Eigen::LLT<Matrix>> llt_;
    std::optional<Eigen::FullPivLU<Matrix>> lu_;
};

/// Throws DegenerateModel unless `a` is symmetric positive definite.
inline Eigen::LLT<Matrix> require_spd(const Matrix& a, const std::string& context) {
    Eigen::LLT<Matrix> llt(a);
    if (llt.info() != Eigen::Success) {
        throw DegenerateModel(context + " is not positive definite");
    }
    const Vector d = llt.matrixLLT().diagonal();
    const double scale = a.diagonal().cwiseAbs().maxCoeff();
    if ((d.array() * d.array()).minCoeff() < kSingularPivotTol * scale) {
        throw DegenerateModel(context + " is numerically singular");
    }
    return llt;
}

}  // namespace ltem
