#pragma once

// Reference computations built from first principles, independent of the
// library's closed forms. Tests compare library results against these.

#include <cmath>
#include <functional>
#include <vector>

#include "ltem/ltem.hpp"

namespace oracle {

using ltem::Matrix;
using ltem::Vector;

/// Full covariance from the structural equations z = B z + D e, rooted at
/// node 0: Sigma = (I - B)^{-1} D D' (I - B)^{-T}. No path products involved.
inline Matrix structural_covariance(const ltem::ModelParams& p) {
    const auto& topo = p.topology();
    const auto n = static_cast<Eigen::Index>(topo.node_count());
    Matrix b = Matrix::Zero(n, n);
    Vector d = Vector::Zero(n);
    std::vector<std::size_t> parent(topo.node_count(), ltem::TreeTopology::npos);
    std::vector<std::size_t> stack{0};
    parent[0] = 0;
    d(0) = p.sigma(0);
    while (!stack.empty()) {
        const auto u = stack.back();
        stack.pop_back();
        for (const auto& [v, e] : topo.neighbors(u)) {
            if (parent[v] != ltem::TreeTopology::npos) continue;
            parent[v] = u;
            const double r = p.rho(e);
            b(static_cast<Eigen::Index>(v), static_cast<Eigen::Index>(u)) = p.sigma(v) * r / p.sigma(u);
            d(static_cast<Eigen::Index>(v)) = p.sigma(v) * std::sqrt(1.0 - r * r);
            stack.push_back(v);
        }
    }
    const Matrix inv = (Matrix::Identity(n, n) - b).inverse();
    return inv * d.cwiseAbs2().asDiagonal() * inv.transpose();
}

inline Matrix restrict(const Matrix& m, const std::vector<std::size_t>& rows, const std::vector<std::size_t>& cols) {
    Matrix out(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(cols.size()));
    for (std::size_t i = 0; i < rows.size(); ++i) {
        for (std::size_t j = 0; j < cols.size(); ++j) {
            out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
                m(static_cast<Eigen::Index>(rows[i]), static_cast<Eigen::Index>(cols[j]));
        }
    }
    return out;
}

/// Regression of latents on leaves by the covariance route:
/// Lambda = Sigma_yx Sigma_xx^{-1}, C = Sigma_yy - Lambda Sigma_xy.
inline std::pair<Matrix, Matrix> regression(const ltem::ModelParams& p) {
    const auto& topo = p.topology();
    const Matrix s = structural_covariance(p);
    const Matrix sxx = restrict(s, topo.leaves(), topo.leaves());
    const Matrix syx = restrict(s, topo.internals(), topo.leaves());
    const Matrix syy = restrict(s, topo.internals(), topo.internals());
    const Matrix lambda = sxx.llt().solve(syx.transpose()).transpose();
    return {lambda, syy - lambda * syx.transpose()};
}

/// One population EM step on a star by brute-force moment matching: build
/// E[x y] and E[y^2] under "leaves from the target, y from the current
/// conditional" and renormalize.
inline Vector star_em_step(const Vector& rho, const Vector& sigma_x, double sigma_y, const Matrix& target_cov) {
    std::vector<double> r(rho.data(), rho.data() + rho.size());
    std::vector<double> s(sigma_x.data(), sigma_x.data() + sigma_x.size());
    const auto model = ltem::make_star(r, s, sigma_y);
    const auto [lambda, cond] = regression(model);
    const Vector exy = target_cov * lambda.row(0).transpose();
    const double eyy = cond(0, 0) + lambda.row(0).dot(target_cov * lambda.row(0).transpose());
    Vector out(rho.size());
    for (Eigen::Index i = 0; i < rho.size(); ++i) out(i) = exy(i) / std::sqrt(target_cov(i, i) * eyy);
    return out;
}

/// KL between 1-D zero-mean Gaussians by trapezoidal integration of p log(p/q).
inline double kl_1d_numeric(double var_p, double var_q) {
    const double sp = std::sqrt(var_p);
    const double lo = -14.0 * sp;
    const double hi = 14.0 * sp;
    const int steps = 200000;
    const double h = (hi - lo) / steps;
    auto logpdf = [](double x, double v) { return -0.5 * std::log(2.0 * M_PI * v) - 0.5 * x * x / v; };
    double acc = 0.0;
    for (int k = 0; k <= steps; ++k) {
        const double x = lo + k * h;
        const double lp = logpdf(x, var_p);
        const double w = (k == 0 || k == steps) ? 0.5 : 1.0;
        acc += w * std::exp(lp) * (lp - logpdf(x, var_q));
    }
    return acc * h;
}

/// Determinant by cofactor expansion along the first row.
inline double cofactor_det(const Matrix& m) {
    const auto n = m.rows();
    if (n == 1) return m(0, 0);
    double acc = 0.0;
    for (Eigen::Index j = 0; j < n; ++j) {
        Matrix minor(n - 1, n - 1);
        for (Eigen::Index r = 1; r < n; ++r) {
            for (Eigen::Index c = 0, cc = 0; c < n; ++c) {
                if (c == j) continue;
                minor(r - 1, cc++) = m(r, c);
            }
        }
        acc += ((j % 2) ? -1.0 : 1.0) * m(0, j) * cofactor_det(minor);
    }
    return acc;
}

inline double linf(const Matrix& a, const Matrix& b) { return (a - b).cwiseAbs().maxCoeff(); }

inline std::vector<double> to_std(const Vector& v) { return {v.data(), v.data() + v.size()}; }

}  // namespace oracle
