#ifndef MSRM_DOMAIN_TRANSFORM_HPP
#define MSRM_DOMAIN_TRANSFORM_HPP

#include <cmath>
#include <variant>

#include <Eigen/Dense>

#include "msrm/errors.hpp"
#include "msrm/risk_factors.hpp"
#include "msrm/special.hpp"

namespace msrm {

/// Evaluation rule for the NIG mixing dimension.  LaplaceDensity divides the
/// integrand by the multivariate Laplace reference density evaluated at the
/// mapped point (bounded transformed integrand; the default).
/// ConditionalCancellation divides by the conditional Gaussian density given
/// the mixing draw; it integrates to the same value but its second moment is
/// unbounded near the cube faces for heavy-tailed parameter sets, so it is
/// kept only for comparison runs.
enum class NigRule { LaplaceDensity, ConditionalCancellation };

struct TransformConfig {
    double c_scale = 6.0;       // reference-density scale, > 1
    double xi_threshold = 1e-8; // amplitude threshold of the oscillation diagnostic
    NigRule nig_rule = NigRule::LaplaceDensity;

    void validate() const {
        if (!(c_scale > 1.0))
            throw std::invalid_argument("transform: c_scale must exceed 1");
    }
};

/// Reference shape matrix and its Cholesky factor for one marginal.
struct ShapeMatrix {
    Mat Sigma_tilde;
    Mat L_tilde;
    double log_det_L = 0.0;
};

inline ShapeMatrix shape_matrix(const RiskFactorModel& marg, const TransformConfig& cfg) {
    cfg.validate();
    Mat st;
    if (const auto* g = std::get_if<GaussianModel>(&marg)) {
        Eigen::LLT<Mat> llt(g->Sigma);
        if (llt.info() != Eigen::Success)
            throw SingularCovariance("shape_matrix: Sigma not positive definite");
        st = cfg.c_scale *
             llt.solve(Mat::Identity(g->dim(), g->dim()));
    } else {
        const auto& nig = std::get<NIGModel>(marg);
        Eigen::LLT<Mat> llt(nig.Gamma);
        if (llt.info() != Eigen::Success)
            throw SingularCovariance("shape_matrix: Gamma not positive definite");
        st = (2.0 * cfg.c_scale / (nig.delta * nig.delta)) *
             llt.solve(Mat::Identity(nig.dim(), nig.dim()));
    }
    st = 0.5 * (st + st.transpose());
    ShapeMatrix out;
    out.Sigma_tilde = st;
    Eigen::LLT<Mat> llt(st);
    if (llt.info() != Eigen::Success)
        throw SingularCovariance("shape_matrix: Sigma_tilde not positive definite");
    out.L_tilde = llt.matrixL();
    for (int j = 0; j < out.L_tilde.rows(); ++j)
        out.log_det_L += std::log(out.L_tilde(j, j));
    return out;
}

/// A mapped cube point: the frequency-space point u and the change-of-variable
/// weight so that integral over the cube of h(u(v)) * weight(v) equals the
/// integral of h over R^k.
struct MappedPoint {
    Vec u;
    double log_weight;
};

/// Gaussian-reference map (0,1)^k -> R^k: u = L~ Psi^{-1}(v), weight
/// |det L~| prod_j 1/phi(y_j), i.e. division by the N(0, Sigma~) density.
class GaussianCubeMap {
  public:
    GaussianCubeMap(ShapeMatrix shape, int k) : shape_(std::move(shape)), k_(k) {}

    int cube_dim() const { return k_; }
    int k() const { return k_; }

    MappedPoint map(const double* v) const {
        Vec y(k_);
        double logw = shape_.log_det_L;
        for (int j = 0; j < k_; ++j) {
            y[j] = inv_normal_cdf(v[j]);
            logw += 0.5 * y[j] * y[j] + 0.5 * std::log(two_pi);
        }
        return {shape_.L_tilde * y, logw};
    }

    const ShapeMatrix& shape() const { return shape_; }

  private:
    ShapeMatrix shape_;
    int k_;
};

/// NIG-reference map (0,1)^{k+1} -> R^k with auxiliary Exp(1) mixing draw
/// w = -log(1 - v_{k+1}) and u = sqrt(w) L~ Psi^{-1}(v_{1:k}).
class NigCubeMap {
  public:
    NigCubeMap(ShapeMatrix shape, int k, NigRule rule)
        : shape_(std::move(shape)), k_(k), rule_(rule) {
        nu_ = 1.0 - 0.5 * k_;
        log_norm_ = std::log(2.0) - 0.5 * k_ * std::log(two_pi) - shape_.log_det_L;
    }

    int cube_dim() const { return k_ + 1; }
    int k() const { return k_; }

    MappedPoint map(const double* v) const {
        Vec y(k_);
        double y2 = 0.0;
        for (int j = 0; j < k_; ++j) {
            y[j] = inv_normal_cdf(v[j]);
            y2 += y[j] * y[j];
        }
        double vk = std::min(std::max(v[k_], 1e-300), 1.0 - 1e-16);
        double w = -std::log1p(-vk);
        w = std::max(w, 1e-300);
        Vec u = std::sqrt(w) * (shape_.L_tilde * y);
        if (rule_ == NigRule::ConditionalCancellation) {
            double logw_jac = 0.5 * k_ * std::log(w) + shape_.log_det_L +
                              0.5 * y2 + 0.5 * k_ * std::log(two_pi);
            return {std::move(u), logw_jac};
        }
        // Laplace reference density of U = sqrt(W) L~ Y:
        //   f(u) = 2 (2pi)^{-k/2} |det L~|^{-1} (q^2/2)^{(2-k)/4} K_{1-k/2}(sqrt(2) q),
        // with q^2 = u' Sigma~^{-1} u = w |y|^2.
        double q = std::sqrt(w * y2);
        if (q < 1e-12) q = 1e-12;
        double logf = log_norm_ + 0.5 * nu_ * std::log(0.5 * q * q) +
                      log_bessel_k(nu_, std::sqrt(2.0) * q);
        return {std::move(u), -logf};
    }

    const ShapeMatrix& shape() const { return shape_; }

  private:
    ShapeMatrix shape_;
    int k_;
    NigRule rule_;
    double nu_;
    double log_norm_;
};

using CubeMap = std::variant<GaussianCubeMap, NigCubeMap>;

inline CubeMap make_cube_map(const RiskFactorModel& marg, const TransformConfig& cfg) {
    ShapeMatrix shape = shape_matrix(marg, cfg);
    int k = dim(marg);
    if (std::holds_alternative<GaussianModel>(marg))
        return GaussianCubeMap(std::move(shape), k);
    return NigCubeMap(std::move(shape), k, cfg.nig_rule);
}

inline int cube_dim(const CubeMap& map) {
    return std::visit([](const auto& m) { return m.cube_dim(); }, map);
}

inline MappedPoint map_point(const CubeMap& map, const double* v) {
    return std::visit([&](const auto& m) { return m.map(v); }, map);
}

// ---------------------------------------------------------------------------
// boundary-oscillation diagnostic
// ---------------------------------------------------------------------------

/// Estimated number of integrand oscillations accumulated near the worst cube
/// face. Diagnostic only; never gates computation. The face direction enters
/// through the largest projection |m' r_B| over the limit directions
/// +/- L~ e_j / |L~ e_j| of the inverse map, and the amplitude-threshold
/// radius contributes the log (NIG) or sqrt-log (Gaussian) factor.
inline double oscillation_diagnostic(const RiskFactorModel& marg, const Vec& m_kp,
                                     const TransformConfig& cfg) {
    cfg.validate();
    ShapeMatrix shape = shape_matrix(marg, cfg);
    const int k = dim(marg);
    if (m_kp.size() != k) throw DimensionMismatch("oscillation_diagnostic: m size");

    double proj = 0.0;
    for (int j = 0; j < k; ++j) {
        Vec dir = shape.L_tilde.col(j);
        double n = dir.norm();
        if (n <= 0.0) throw DegenerateEnvelope("oscillation_diagnostic: degenerate direction");
        proj = std::max(proj, std::abs(m_kp.dot(dir)) / n);
    }

    const double log_ratio =
        std::max(std::abs(shape.log_det_L) - std::log(cfg.xi_threshold), 0.0);

    if (const auto* g = std::get_if<GaussianModel>(&marg)) {
        Eigen::SelfAdjointEigenSolver<Mat> es(g->Sigma);
        double lmin = es.eigenvalues().minCoeff();
        if (lmin <= 0.0) throw DegenerateEnvelope("oscillation_diagnostic: lambda_min <= 0");
        return std::sqrt(log_ratio) * proj / (std::sqrt(2.0) * 3.141592653589793) /
               std::sqrt(lmin);
    }
    const auto& nig = std::get<NIGModel>(marg);
    Eigen::SelfAdjointEigenSolver<Mat> es(nig.Gamma);
    double lmin = es.eigenvalues().minCoeff();
    if (lmin <= 0.0) throw DegenerateEnvelope("oscillation_diagnostic: lambda_min <= 0");
    return log_ratio * proj / two_pi / (nig.delta * std::sqrt(lmin));
}

} // namespace msrm

#endif
