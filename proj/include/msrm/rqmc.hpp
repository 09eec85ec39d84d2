#ifndef MSRM_RQMC_HPP
#define MSRM_RQMC_HPP

#include <cmath>
#include <complex>
#include <cstdint>
#include <functional>
#include <map>
#include <vector>

#include <Eigen/Dense>

#include "msrm/errors.hpp"
#include "msrm/risk_factors.hpp"
#include "msrm/sobol.hpp"
#include "msrm/special.hpp"

namespace msrm {

/// Randomized QMC design: Sobol base nets of size N (a power of two), S_shift
/// independent digital shifts, one base net per integrand dimension reused by
/// every component of that dimension.
struct RQMCDesign {
    std::uint64_t N = 2048;
    int S_shift = 32;
    std::uint64_t seed = 1;
    std::uint64_t N_min = 128;
    double rate_r = 1.0;
    double C_loc = 1.0;

    void validate() const {
        if (N == 0 || (N & (N - 1)) != 0)
            throw std::invalid_argument("rqmc: N must be a power of two");
        if (S_shift < 2) throw std::invalid_argument("rqmc: S_shift must be >= 2");
    }
};

/// Cache of unshifted base nets keyed by dimension. A net is rebuilt only
/// when a larger point count is requested; Gray-code ordering makes the first
/// N points of a larger net identical to the smaller one.
class NetCache {
  public:
    const SobolNet& get(int dim, std::uint64_t n) {
        auto it = nets_.find(dim);
        if (it == nets_.end() || it->second.size() < n) {
            std::uint64_t have = (it == nets_.end()) ? 0 : it->second.size();
            std::uint64_t want = std::max<std::uint64_t>(n, have);
            it = nets_.insert_or_assign(dim, SobolNet(dim, want)).first;
        }
        return it->second;
    }

  private:
    std::map<int, SobolNet> nets_;
};

/// One low-dimensional integrand mapped to the unit cube. `k` is the
/// interaction order (components of equal k share shifted nets); `cube_dim`
/// may be k+1 for a mixing dimension; `p` scatters results into R^d.
struct CubeIntegrand {
    int k = 0;
    int cube_dim = 0;
    std::vector<int> p;
    /// Evaluates at cube point v (cube_dim doubles). Writes the block value
    /// and, when the pointers are non-null, the gradient (k) and Hessian
    /// (k x k) blocks.
    std::function<void(const double*, Cplx&, Eigen::VectorXcd*, Eigen::MatrixXcd*)> eval;
};

/// Point estimate with retained per-shift means (real parts), grouped per
/// interaction order so the within-order net-sharing covariances survive.
struct RawEstimate {
    double g = 0.0;
    Vec grad;       // d
    Mat hess;       // d x d (zero unless requested)
    struct CovTerm {
        int k = 0;
        Vec g_shift;    // S
        Mat grad_shift; // S x d
    };
    std::vector<CovTerm> cov_terms;
    double imag_residual = 0.0;   // max |Im| of the shift-averaged estimates
    int S = 0;
    std::int64_t evals[3] = {0, 0, 0};

    void init(int d, int S_shift) {
        grad = Vec::Zero(d);
        hess = Mat::Zero(d, d);
        S = S_shift;
    }
};

namespace detail {

struct ComplexKahan {
    Kahan re, im;
    void add(Cplx z) {
        re.add(z.real());
        im.add(z.imag());
    }
    Cplx value() const { return {re.sum, im.sum}; }
};

} // namespace detail

/// Core RQMC sweep shared by the single-level estimator and the multilevel
/// difference estimator: components of equal interaction order are evaluated
/// on the same shifted net, per-shift means are retained, the real part is
/// taken after accumulation.
inline RawEstimate rqmc_estimate(const std::vector<CubeIntegrand>& integrands, int d,
                                 std::uint64_t N, int S_shift, std::uint64_t seed, int level,
                                 NetCache& nets, int max_nu) {
    if (S_shift < 2) throw std::invalid_argument("rqmc_estimate: S_shift must be >= 2");
    RawEstimate out;
    out.init(d, S_shift);

    std::map<int, std::vector<const CubeIntegrand*>> by_order;
    for (const auto& ci : integrands) by_order[ci.k].push_back(&ci);

    const double inv_n = 1.0 / static_cast<double>(N);
    const double inv_s = 1.0 / static_cast<double>(S_shift);

    for (auto& [k, group] : by_order) {
        const int cube_dim = group.front()->cube_dim;
        for (const auto* ci : group)
            if (ci->cube_dim != cube_dim)
                throw DimensionMismatch("rqmc_estimate: mixed cube dims within one order");
        const SobolNet& net = nets.get(cube_dim, N);
        ShiftSource shifts(seed, level, k);

        RawEstimate::CovTerm term;
        term.k = k;
        term.g_shift = Vec::Zero(S_shift);
        term.grad_shift = Mat::Zero(S_shift, d);

        std::vector<double> v(cube_dim);
        const std::size_t ncomp = group.size();
        std::vector<detail::ComplexKahan> acc0(ncomp);
        std::vector<std::vector<detail::ComplexKahan>> acc1(ncomp);
        std::vector<std::vector<detail::ComplexKahan>> acc2(ncomp);
        for (std::size_t c = 0; c < ncomp; ++c) {
            if (max_nu >= 1) acc1[c].resize(k);
            if (max_nu >= 2) acc2[c].resize(static_cast<std::size_t>(k) * k);
        }
        Eigen::VectorXcd g1(k);
        Eigen::MatrixXcd g2(k, k);

        Eigen::MatrixXcd hess_mean_sum = Eigen::MatrixXcd::Zero(d, d);
        Cplx g_mean_sum = 0.0;
        Eigen::VectorXcd grad_mean_sum = Eigen::VectorXcd::Zero(d);

        for (int s = 0; s < S_shift; ++s) {
            std::vector<std::uint64_t> delta = shifts.draw(cube_dim);
            for (std::size_t c = 0; c < ncomp; ++c) {
                acc0[c] = {};
                for (auto& a : acc1[c]) a = {};
                for (auto& a : acc2[c]) a = {};
            }
            for (std::uint64_t n = 0; n < N; ++n) {
                net.shifted_point(n, delta.data(), v.data());
                for (std::size_t c = 0; c < ncomp; ++c) {
                    Cplx v0;
                    group[c]->eval(v.data(), v0, max_nu >= 1 ? &g1 : nullptr,
                                   max_nu >= 2 ? &g2 : nullptr);
                    acc0[c].add(v0);
                    if (max_nu >= 1)
                        for (int j = 0; j < k; ++j) acc1[c][j].add(g1[j]);
                    if (max_nu >= 2)
                        for (int j = 0; j < k; ++j)
                            for (int l = 0; l < k; ++l)
                                acc2[c][static_cast<std::size_t>(j) * k + l].add(g2(j, l));
                }
            }
            for (std::size_t c = 0; c < ncomp; ++c) {
                const auto& p = group[c]->p;
                Cplx mean0 = acc0[c].value() * inv_n;
                term.g_shift[s] += mean0.real();
                g_mean_sum += mean0 * inv_s;
                if (max_nu >= 1)
                    for (int j = 0; j < k; ++j) {
                        Cplx mj = acc1[c][j].value() * inv_n;
                        term.grad_shift(s, p[j]) += mj.real();
                        grad_mean_sum[p[j]] += mj * inv_s;
                    }
                if (max_nu >= 2)
                    for (int j = 0; j < k; ++j)
                        for (int l = 0; l < k; ++l) {
                            Cplx mjl = acc2[c][static_cast<std::size_t>(j) * k + l].value() * inv_n;
                            hess_mean_sum(p[j], p[l]) += mjl * inv_s;
                        }
            }
            out.evals[0] += static_cast<std::int64_t>(N) * static_cast<std::int64_t>(ncomp);
            if (max_nu >= 1) out.evals[1] += static_cast<std::int64_t>(N) * static_cast<std::int64_t>(ncomp);
            if (max_nu >= 2) out.evals[2] += static_cast<std::int64_t>(N) * static_cast<std::int64_t>(ncomp);
        }

        out.g += g_mean_sum.real();
        out.imag_residual = std::max(out.imag_residual, std::abs(g_mean_sum.imag()));
        for (int j = 0; j < d; ++j) {
            out.grad[j] += grad_mean_sum[j].real();
            out.imag_residual = std::max(out.imag_residual, std::abs(grad_mean_sum[j].imag()));
        }
        if (max_nu >= 2) out.hess += hess_mean_sum.real();
        out.cov_terms.push_back(std::move(term));
    }
    if (max_nu >= 2) out.hess = 0.5 * (out.hess + out.hess.transpose());
    return out;
}

/// RMSE of a per-shift sample at confidence factor c_alpha (single-level
/// pattern: c_alpha * std / sqrt(S)).
inline double rmse_from_shifts(const Vec& shift_means, double c_alpha = 1.96) {
    const int S = static_cast<int>(shift_means.size());
    double mean = shift_means.mean();
    double var = (shift_means.array() - mean).square().sum() / (S - 1);
    return c_alpha * std::sqrt(var / S);
}

// ---------------------------------------------------------------------------
// level schedule
// ---------------------------------------------------------------------------

/// Iteration-indexed sample sizes for the multilevel estimator: full size N1
/// before the locally contracting regime, geometric decay with the observed
/// contraction factor afterwards, rounded to the nearest power of two and
/// clamped to [N_min, N1].
struct LevelSchedule {
    std::uint64_t N1 = 2048;
    std::uint64_t N_min = 128;
    double C_loc = 1.0;
    double eta = 0.5;
    double r = 1.0;
    int J_loc = -1;  // not yet detected

    std::uint64_t level_size(int j) const {
        if (J_loc < 0 || j < J_loc) return N1;
        double raw = C_loc * static_cast<double>(N1) *
                     std::pow(eta, 2.0 * (j - 1 - J_loc) / (2.0 * r + 1.0));
        raw = std::max(raw, 1.0);
        double l2 = std::round(std::log2(raw));
        std::uint64_t n = 1ULL << static_cast<int>(std::max(l2, 0.0));
        n = std::max(n, N_min);
        n = std::min(n, N1);
        return n;
    }
};

/// Detects the local-convergence index from the step-norm history: the first
/// iterate where the contraction ratio stays at or below 1/2 for two
/// consecutive iterations. eta is the running geometric mean of the ratios
/// observed afterwards, clamped to [0.05, 0.9].
struct ContractionTracker {
    std::vector<double> step_norms;
    int J_loc = -1;
    double eta = 0.5;

    void push(double step_norm) {
        step_norms.push_back(step_norm);
        const int j = static_cast<int>(step_norms.size());
        if (J_loc < 0 && j >= 3) {
            double r1 = step_norms[j - 2] / std::max(step_norms[j - 3], 1e-300);
            double r2 = step_norms[j - 1] / std::max(step_norms[j - 2], 1e-300);
            if (r1 <= 0.5 && r2 <= 0.5) J_loc = j;
        }
        if (J_loc > 0) {
            double logsum = 0.0;
            int count = 0;
            for (int i = std::max(J_loc - 1, 1); i < j; ++i) {
                double ratio = step_norms[i] / std::max(step_norms[i - 1], 1e-300);
                if (ratio > 0.0 && std::isfinite(ratio)) {
                    logsum += std::log(ratio);
                    ++count;
                }
            }
            if (count > 0) eta = std::clamp(std::exp(logsum / count), 0.05, 0.9);
        }
    }
};

// ---------------------------------------------------------------------------
// plug-in sandwich covariance
// ---------------------------------------------------------------------------

struct SolutionCovariance {
    Mat V;                 // (d+1) x (d+1)
    double eps_stat = 0.0;
    bool singular_hessian = false;
};

/// Sandwich covariance of the solution from the per-shift means of the
/// Lagrangian-gradient block and the bordered Hessian estimate. Per-shift
/// residual randomness is [lambda * grad_shift ; g_shift]; covariances add
/// across interaction orders and levels (independent randomizations), while
/// components within one order share nets and keep their cross terms.
inline SolutionCovariance assemble_solution_covariance(
    const std::vector<RawEstimate::CovTerm>& terms, const Mat& bordered_hessian, double lambda,
    int S_shift, double c_alpha = 1.96) {
    const int dz = static_cast<int>(bordered_hessian.rows());
    const int d = dz - 1;
    Mat cov = Mat::Zero(dz, dz);
    for (const auto& t : terms) {
        const int S = static_cast<int>(t.g_shift.size());
        Mat R(S, dz);
        for (int s = 0; s < S; ++s) {
            R.row(s).head(d) = lambda * t.grad_shift.row(s);
            R(s, d) = t.g_shift[s];
        }
        Eigen::RowVectorXd mean = R.colwise().mean();
        Mat centered = R.rowwise() - mean;
        cov += centered.transpose() * centered / (S - 1);
    }

    SolutionCovariance out;
    Eigen::FullPivLU<Mat> lu(bordered_hessian);
    if (!lu.isInvertible()) {
        out.singular_hessian = true;
        out.V = Mat::Constant(dz, dz, std::numeric_limits<double>::quiet_NaN());
        out.eps_stat = std::numeric_limits<double>::quiet_NaN();
        return out;
    }
    Mat Hinv = lu.inverse();
    out.V = Hinv * cov * Hinv.transpose();
    double max_diag = 0.0;
    for (int i = 0; i < dz; ++i) max_diag = std::max(max_diag, std::abs(out.V(i, i)));
    out.eps_stat = c_alpha / std::sqrt(static_cast<double>(S_shift)) * std::sqrt(max_diag);
    return out;
}

} // namespace msrm

#endif
