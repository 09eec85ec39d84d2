#ifndef MSRM_RISK_FACTORS_HPP
#define MSRM_RISK_FACTORS_HPP

#include <cmath>
#include <complex>
#include <random>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "msrm/errors.hpp"
#include "msrm/sobol.hpp"
#include "msrm/special.hpp"

namespace msrm {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
using CVec = Eigen::VectorXcd;
using Cplx = std::complex<double>;

/// Multivariate normal loss vector X ~ N(mu, Sigma).
struct GaussianModel {
    Vec mu;
    Mat Sigma;
    Mat chol;  // lower Cholesky factor of Sigma

    GaussianModel(Vec mu_, Mat Sigma_) : mu(std::move(mu_)), Sigma(std::move(Sigma_)) {
        if (Sigma.rows() != Sigma.cols() || Sigma.rows() != mu.size())
            throw DimensionMismatch("Gaussian model: mu/Sigma size mismatch");
        if (!Sigma.isApprox(Sigma.transpose(), 1e-12))
            throw SingularCovariance("Gaussian model: Sigma not symmetric");
        Eigen::LLT<Mat> llt(Sigma);
        if (llt.info() != Eigen::Success)
            throw SingularCovariance("Gaussian model: Sigma not positive definite");
        chol = llt.matrixL();
    }

    int dim() const { return static_cast<int>(mu.size()); }
};

/// Normal inverse Gaussian loss vector, parametrized as the generalized
/// hyperbolic law with index -1/2: X | W=w ~ N(mu + w Gamma beta, w Gamma),
/// W ~ GIG(-1/2, delta, gamma) (inverse Gaussian mixing).
struct NIGModel {
    double alpha;
    Vec beta;
    double delta;
    Vec mu;
    Mat Gamma;
    Mat chol;  // lower Cholesky factor of Gamma

    NIGModel(double alpha_, Vec beta_, double delta_, Vec mu_, Mat Gamma_)
        : alpha(alpha_), beta(std::move(beta_)), delta(delta_), mu(std::move(mu_)),
          Gamma(std::move(Gamma_)) {
        if (Gamma.rows() != Gamma.cols() || Gamma.rows() != mu.size() ||
            beta.size() != mu.size())
            throw DimensionMismatch("NIG model: parameter size mismatch");
        if (alpha <= 0.0 || delta <= 0.0)
            throw std::invalid_argument("NIG model: alpha and delta must be positive");
        if (!Gamma.isApprox(Gamma.transpose(), 1e-12))
            throw SingularCovariance("NIG model: Gamma not symmetric");
        Eigen::LLT<Mat> llt(Gamma);
        if (llt.info() != Eigen::Success)
            throw SingularCovariance("NIG model: Gamma not positive definite");
        chol = llt.matrixL();
        if (alpha * alpha <= beta.dot(Gamma * beta))
            throw std::invalid_argument("NIG model: admissibility alpha^2 > beta' Gamma beta violated");
    }

    int dim() const { return static_cast<int>(mu.size()); }
    double gamma() const { return std::sqrt(alpha * alpha - beta.dot(Gamma * beta)); }
};

using RiskFactorModel = std::variant<GaussianModel, NIGModel>;

inline int dim(const RiskFactorModel& model) {
    return std::visit([](const auto& m) { return m.dim(); }, model);
}

// ---------------------------------------------------------------------------
// extended characteristic functions
// ---------------------------------------------------------------------------

inline Cplx extended_cf(const GaussianModel& m, const CVec& y) {
    if (y.size() != m.mu.size()) throw DimensionMismatch("extended_cf: argument size");
    const Cplx i(0.0, 1.0);
    Cplx lin = i * (y.transpose() * m.mu.cast<Cplx>()).value();
    Cplx quad = (y.transpose() * (m.Sigma.cast<Cplx>() * y)).value();
    return std::exp(lin - 0.5 * quad);
}

inline Cplx extended_cf(const NIGModel& m, const CVec& y) {
    if (y.size() != m.mu.size()) throw DimensionMismatch("extended_cf: argument size");
    const Cplx i(0.0, 1.0);
    CVec z = m.beta.cast<Cplx>() + i * y;
    Cplx rad = Cplx(m.alpha * m.alpha, 0.0) - (z.transpose() * (m.Gamma.cast<Cplx>() * z)).value();
    // Strip guard: with K = Im(y) inside Table-2 strip the radicand keeps a
    // positive real part, so the principal branch never crosses the cut.
    if (rad.real() <= 0.0)
        throw StripViolation("NIG extended CF: radicand left the analyticity strip");
    Cplx lin = i * (y.transpose() * m.mu.cast<Cplx>()).value();
    return std::exp(lin + m.delta * (m.gamma() - std::sqrt(rad)));
}

inline Cplx extended_cf(const RiskFactorModel& model, const CVec& y) {
    return std::visit([&](const auto& m) { return extended_cf(m, y); }, model);
}

/// True iff K lies in the strip of analyticity of the extended CF.
inline bool cf_strip_contains(const GaussianModel&, const Vec&) { return true; }

inline bool cf_strip_contains(const NIGModel& m, const Vec& K) {
    Vec z = m.beta - K;
    return m.alpha * m.alpha - z.dot(m.Gamma * z) > 0.0;
}

inline bool cf_strip_contains(const RiskFactorModel& model, const Vec& K) {
    return std::visit([&](const auto& m) { return cf_strip_contains(m, K); }, model);
}

/// CF strip slack alpha^2 - (beta-K)' Gamma (beta-K); +inf for Gaussian.
inline double cf_strip_slack(const RiskFactorModel& model, const Vec& K) {
    if (const auto* nig = std::get_if<NIGModel>(&model)) {
        Vec z = nig->beta - K;
        return nig->alpha * nig->alpha - z.dot(nig->Gamma * z);
    }
    return std::numeric_limits<double>::infinity();
}

// ---------------------------------------------------------------------------
// marginals
// ---------------------------------------------------------------------------

inline void check_index_tuple(const std::vector<int>& p, int d) {
    if (p.empty() || static_cast<int>(p.size()) > d)
        throw InvalidIndexTuple("index tuple size out of range");
    for (std::size_t r = 0; r < p.size(); ++r) {
        if (p[r] < 0 || p[r] >= d) throw InvalidIndexTuple("index out of range");
        if (r > 0 && p[r] <= p[r - 1]) throw InvalidIndexTuple("indices must be strictly increasing");
    }
}

/// Marginal of the selected coordinates p (0-based, strictly increasing).
inline RiskFactorModel marginal(const GaussianModel& m, const std::vector<int>& p) {
    check_index_tuple(p, m.dim());
    const int k = static_cast<int>(p.size());
    Vec mu(k);
    Mat Sigma(k, k);
    for (int r = 0; r < k; ++r) {
        mu[r] = m.mu[p[r]];
        for (int c = 0; c < k; ++c) Sigma(r, c) = m.Sigma(p[r], p[c]);
    }
    return GaussianModel(std::move(mu), std::move(Sigma));
}

/// NIG marginal via the permutation/Schur split. The scale renormalization
/// keeps det(Gamma_kp) = 1-style normalization consistent: delta picks up
/// det(Gamma_11)^{1/(2k)} so that delta^2 Gamma and delta*sqrt(radicand)
/// are invariant; this is the variant that satisfies the CF embedding
/// identity Phi_{X_{k,p}}(u) = Phi_X(P' u) to machine precision for k >= 2.
inline RiskFactorModel marginal(const NIGModel& m, const std::vector<int>& p) {
    const int d = m.dim();
    check_index_tuple(p, d);
    const int k = static_cast<int>(p.size());

    std::vector<int> pc;
    {
        std::vector<char> sel(d, 0);
        for (int idx : p) sel[idx] = 1;
        for (int j = 0; j < d; ++j)
            if (!sel[j]) pc.push_back(j);
    }
    const int kc = static_cast<int>(pc.size());

    Mat G11(k, k), G12(k, kc), G22(kc, kc);
    Vec b1(k), b2(kc), mu1(k);
    for (int r = 0; r < k; ++r) {
        mu1[r] = m.mu[p[r]];
        b1[r] = m.beta[p[r]];
        for (int c = 0; c < k; ++c) G11(r, c) = m.Gamma(p[r], p[c]);
        for (int c = 0; c < kc; ++c) G12(r, c) = m.Gamma(p[r], pc[c]);
    }
    for (int r = 0; r < kc; ++r) {
        b2[r] = m.beta[pc[r]];
        for (int c = 0; c < kc; ++c) G22(r, c) = m.Gamma(pc[r], pc[c]);
    }

    Eigen::LLT<Mat> llt11(G11);
    if (llt11.info() != Eigen::Success)
        throw SingularCovariance("NIG marginal: Gamma block not positive definite");
    double det11 = 1.0;
    {
        Mat L = llt11.matrixL();
        for (int r = 0; r < k; ++r) det11 *= L(r, r) * L(r, r);
    }

    double alpha_kp, delta_kp;
    Vec beta_kp;
    Mat Gamma_kp;
    if (kc == 0) {
        alpha_kp = m.alpha;
        beta_kp = b1;
        delta_kp = m.delta;
        Gamma_kp = G11;
    } else {
        Mat schur = G22 - G12.transpose() * llt11.solve(G12);
        double tail = b2.dot(schur * b2);
        double scale = std::pow(det11, 1.0 / (2.0 * k));
        alpha_kp = std::sqrt(std::max(m.alpha * m.alpha - tail, 0.0)) / scale;
        beta_kp = b1 + llt11.solve(G12 * b2);
        delta_kp = scale * m.delta;
        Gamma_kp = G11 / (scale * scale);
    }
    return NIGModel(alpha_kp, std::move(beta_kp), delta_kp, std::move(mu1), std::move(Gamma_kp));
}

inline RiskFactorModel marginal(const RiskFactorModel& model, const std::vector<int>& p) {
    return std::visit([&](const auto& m) { return marginal(m, p); }, model);
}

// ---------------------------------------------------------------------------
// moments and sampling
// ---------------------------------------------------------------------------

inline Vec mean(const GaussianModel& m) { return m.mu; }

inline Vec mean(const NIGModel& m) { return m.mu + m.delta * (m.Gamma * m.beta) / m.gamma(); }

inline Vec mean(const RiskFactorModel& model) {
    return std::visit([](const auto& m) { return mean(m); }, model);
}

namespace detail {

/// Deterministic standard normal draws: inverse CDF applied to mt19937_64
/// uniforms (portable across standard libraries, byte-identical per seed).
class NormalSource {
  public:
    explicit NormalSource(std::uint64_t seed) : rng_(seed) {}
    double operator()() {
        // uniform in (0,1): 53-bit mantissa, offset away from 0
        double u = (static_cast<double>(rng_() >> 11) + 0.5) * (1.0 / 9007199254740992.0);
        return inv_normal_cdf(u);
    }
    double uniform() {
        return (static_cast<double>(rng_() >> 11) + 0.5) * (1.0 / 9007199254740992.0);
    }

  private:
    std::mt19937_64 rng_;
};

/// Inverse Gaussian IG(nu, lambda) sampler, Michael--Schucany--Haas transform.
inline double sample_inverse_gaussian(double nu, double lambda, NormalSource& src) {
    double z = src();
    double y = z * z;
    double x = nu + nu * nu * y / (2.0 * lambda) -
               nu / (2.0 * lambda) * std::sqrt(4.0 * nu * lambda * y + nu * nu * y * y);
    double u = src.uniform();
    if (u <= nu / (nu + x)) return x;
    return nu * nu / x;
}

} // namespace detail

/// n i.i.d. draws, one per row. Gaussian via Cholesky; NIG via the
/// normal-mixture representation with inverse-Gaussian mixing.
inline Mat sample(const GaussianModel& m, std::int64_t n, std::uint64_t seed) {
    if (n < 1) throw std::invalid_argument("sample: n must be >= 1");
    const int d = m.dim();
    detail::NormalSource src(seed);
    Mat out(n, d);
    Vec z(d);
    for (std::int64_t r = 0; r < n; ++r) {
        for (int j = 0; j < d; ++j) z[j] = src();
        out.row(r) = (m.mu + m.chol * z).transpose();
    }
    return out;
}

inline Mat sample(const NIGModel& m, std::int64_t n, std::uint64_t seed) {
    if (n < 1) throw std::invalid_argument("sample: n must be >= 1");
    const int d = m.dim();
    detail::NormalSource src(seed);
    const double nu = m.delta / m.gamma();     // IG mean
    const double lambda = m.delta * m.delta;   // IG shape
    Mat out(n, d);
    Vec z(d);
    for (std::int64_t r = 0; r < n; ++r) {
        double w = detail::sample_inverse_gaussian(nu, lambda, src);
        for (int j = 0; j < d; ++j) z[j] = src();
        out.row(r) = (m.mu + w * (m.Gamma * m.beta) + std::sqrt(w) * (m.chol * z)).transpose();
    }
    return out;
}

inline Mat sample(const RiskFactorModel& model, std::int64_t n, std::uint64_t seed) {
    return std::visit([&](const auto& m) { return sample(m, n, seed); }, model);
}

/// Coordinate-selection scatter: embeds a k-vector into R^d on indices p.
inline Vec scatter(const std::vector<int>& p, const Vec& x, int d) {
    Vec out = Vec::Zero(d);
    for (std::size_t r = 0; r < p.size(); ++r) out[p[r]] += x[static_cast<int>(r)];
    return out;
}

/// Gathers m onto the component coordinates p.
inline Vec gather(const std::vector<int>& p, const Vec& m) {
    Vec out(static_cast<int>(p.size()));
    for (std::size_t r = 0; r < p.size(); ++r) out[static_cast<int>(r)] = m[p[r]];
    return out;
}

} // namespace msrm

#endif
