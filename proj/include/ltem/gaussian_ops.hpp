#pragma once

#include <cmath>
#include <map>
#include <numbers>
#include <string>
#include <vector>

#include "ltem/error.hpp"
#include "ltem/linalg.hpp"
#include "ltem/model.hpp"

namespace ltem {

/// Zero-mean Gaussian given by its covariance over `ordering`.
struct GaussianMoments {
    std::vector<std::string> ordering;
    Matrix covariance;
};

inline GaussianMoments leaf_moments(const ModelParams& params) {
    auto view = leaf_covariance(params);
    return {std::move(view.ordering), std::move(view.matrix)};
}

/// KL(p || q) = 1/2 (log|Sq| - log|Sp| - n + tr(Sq^{-1} Sp)), evaluated with
/// Cholesky factors: tr(Sq^{-1} Sp) = ||Lq^{-1} Lp||_F^2.
inline double gaussian_kl(const GaussianMoments& p, const GaussianMoments& q) {
    if (p.covariance.rows() != q.covariance.rows() || p.covariance.cols() != q.covariance.cols() ||
        p.covariance.rows() != p.covariance.cols()) {
        throw InvalidArgument("gaussian_kl: dimension mismatch");
    }
    if (!p.ordering.empty() && !q.ordering.empty() && p.ordering != q.ordering) {
        throw InvalidArgument("gaussian_kl: orderings differ");
    }
    const auto lp = require_spd(p.covariance, "gaussian_kl (first argument)");
    const auto lq = require_spd(q.covariance, "gaussian_kl (second argument)");
    const Matrix lp_mat = lp.matrixL();
    const Matrix w = lq.matrixL().solve(lp_mat);
    const double logdet_p = 2.0 * lp_mat.diagonal().array().log().sum();
    const double logdet_q = 2.0 * Matrix(lq.matrixL()).diagonal().array().log().sum();
    const double n = static_cast<double>(p.covariance.rows());
    return std::max(0.0, 0.5 * (logdet_q - logdet_p - n + w.squaredNorm()));
}

/// Per-sample average log-likelihood of zero-mean data with second-moment
/// matrix `empirical` under a model with leaf covariance `sigma`:
///   -1/2 (n log(2 pi) + log|Sigma| + tr(Sigma^{-1} empirical)).
inline double gaussian_loglikelihood(const Matrix& sigma, const Matrix& empirical) {
    if (sigma.rows() != empirical.rows() || sigma.cols() != empirical.cols()) {
        throw InvalidArgument("loglikelihood: dimension mismatch");
    }
    const SymmetricFactor f(sigma, "leaf covariance");
    const double n = static_cast<double>(sigma.rows());
    const double trace = f.solve(empirical).trace();
    return -0.5 * (n * std::log(2.0 * std::numbers::pi) + f.log_det() + trace);
}

inline double leaf_loglikelihood(const ModelParams& params, const GaussianMoments& empirical) {
    params.require_nondegenerate("leaf_loglikelihood");
    const auto model = leaf_covariance(params);
    if (!empirical.ordering.empty() && empirical.ordering != model.ordering) {
        throw InvalidArgument("leaf_loglikelihood: empirical moments are not ordered by leaf names");
    }
    return gaussian_loglikelihood(model.matrix, empirical.covariance);
}

namespace detail {

inline void require_open_unit(const Vector& rho, const char* context) {
    for (Eigen::Index i = 0; i < rho.size(); ++i) {
        if (!(rho(i) >= 0.0)) throw InvalidArgument(std::string(context) + ": correlations must be nonnegative");
        if (!(rho(i) < 1.0)) {
            throw DegenerateModel(std::string(context) + ": degenerate model, correlation " + std::to_string(i + 1) +
                                  " equals 1");
        }
    }
}

}  // namespace detail

/// Inverse of diag(1 - rho^2) + rho rho' by Sherman-Morrison.
inline Matrix star_inverse(const Vector& rho) {
    detail::require_open_unit(rho, "star_inverse");
    const Vector d = (1.0 - rho.array().square()).inverse().matrix();
    const Vector dr = d.cwiseProduct(rho);
    const double denom = 1.0 + rho.dot(dr);
    Matrix out = -(dr * dr.transpose()) / denom;
    out.diagonal() += d;
    return out;
}

/// log det(diag(1 - rho^2) + rho rho') by the matrix determinant lemma:
/// (1 + sum rho_i^2/(1 - rho_i^2)) prod (1 - rho_i^2).
inline double star_logdet(const Vector& rho) {
    detail::require_open_unit(rho, "star_logdet");
    double log_prod = 0.0;
    double sum = 0.0;
    for (Eigen::Index i = 0; i < rho.size(); ++i) {
        const double one_minus = (1.0 - rho(i)) * (1.0 + rho(i));
        log_prod += std::log(one_minus);
        sum += rho(i) * rho(i) / one_minus;
    }
    return std::log1p(sum) + log_prod;
}

/// Central finite differences of leaf_loglikelihood with respect to each edge
/// correlation. With `richardson`, combines steps h and h/2 as (4 D(h/2) - D(h)) / 3.
inline std::map<EdgeKey, double> numeric_loglik_gradient(const ModelParams& params, const GaussianMoments& empirical,
                                                         double step = 1e-5, bool richardson = false) {
    if (!(step > 0.0)) throw InvalidArgument("numeric_loglik_gradient: step must be positive");
    const auto& topo = params.topology();
    for (std::size_t e = 0; e < topo.edge_count(); ++e) {
        const double r = params.rho(e);
        if (!(r - step > 0.0 && r + step < 1.0)) {
            const auto [a, b] = topo.edge_key(e);
            throw InvalidArgument("numeric_loglik_gradient: step too large for correlation on edge " + a + "-" + b);
        }
    }
    auto central = [&](std::size_t e, double h) {
        auto rho = params.rho();
        rho[e] = params.rho(e) + h;
        const double up = leaf_loglikelihood(params.with_rho(rho), empirical);
        rho[e] = params.rho(e) - h;
        const double down = leaf_loglikelihood(params.with_rho(rho), empirical);
        return (up - down) / (2.0 * h);
    };
    std::map<EdgeKey, double> out;
    for (std::size_t e = 0; e < topo.edge_count(); ++e) {
        const double d = central(e, step);
        out[topo.edge_key(e)] = richardson ? (4.0 * central(e, 0.5 * step) - d) / 3.0 : d;
    }
    return out;
}

inline double gradient_norm(const std::map<EdgeKey, double>& g) {
    double out = 0.0;
    for (const auto& [k, v] : g) out = std::max(out, std::abs(v));
    return out;
}

}  // namespace ltem
