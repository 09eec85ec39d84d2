#ifndef MSRM_BASELINES_HPP
#define MSRM_BASELINES_HPP

#include <cmath>
#include <vector>

#include <Eigen/Dense>

#include "msrm/loss_models.hpp"
#include "msrm/risk_factors.hpp"
#include "msrm/solver.hpp"

namespace msrm {

struct SAAConfig {
    std::int64_t N_samples = 1 << 20;
    std::uint64_t seed = 1;
    SolverConfig solver;

    void validate() const {
        if (N_samples < 2) throw std::invalid_argument("saa: N_samples must be >= 2");
    }
};

struct SAConfig {
    double c = 2.0;
    double t = 10.0;
    double gamma = 0.7;
    std::int64_t iterations = 1 << 20;
    int replications = 20;
    std::uint64_t seed = 1;
    double lambda_min = 1e-6;
    double lambda_max = 1e6;
    Vec init_m;
    double init_lambda = 1.0;
    double c_alpha = 1.96;

    void validate() const {
        if (!(gamma > 0.5 && gamma <= 1.0))
            throw std::invalid_argument("sa: gamma must lie in (0.5, 1]");
        if (!(c > 0.0 && t > 0.0)) throw std::invalid_argument("sa: c, t must be positive");
    }
};

// ---------------------------------------------------------------------------
// sample-average approximation
// ---------------------------------------------------------------------------

/// SAA solve: a fixed Monte Carlo sample defines deterministic surrogates of
/// g and its allocation derivatives, optimized by the same SQP core. The
/// statistical error uses the sandwich covariance with per-sample Lagrangian
/// gradients and the a.e. sample Hessian.
inline SolutionReport solve_saa(const LossModel& loss, const RiskFactorModel& factors,
                                const SAAConfig& cfg) {
    cfg.validate();
    const int d = loss.d;
    Mat X = sample(factors, cfg.N_samples, cfg.seed);
    const auto n = static_cast<double>(cfg.N_samples);

    auto g_grad = [&](const Vec& m, double& g, Vec& grad) {
        Kahan gacc;
        Vec gr = Vec::Zero(d);
        Vec x(d);
        for (std::int64_t i = 0; i < cfg.N_samples; ++i) {
            x = X.row(i).transpose() - m;
            gacc.add(loss_value(loss, x));
            gr -= loss_grad_x(loss, x);  // allocation gradient
        }
        g = gacc.sum / n;
        grad = gr / n;
    };
    auto g_only = [&](const Vec& m) {
        Kahan gacc;
        Vec x(d);
        for (std::int64_t i = 0; i < cfg.N_samples; ++i) {
            x = X.row(i).transpose() - m;
            gacc.add(loss_value(loss, x));
        }
        return gacc.sum / n;
    };

    SqpOracle oracle;
    oracle.d = d;
    std::int64_t evals = 0;
    oracle.blocks = [&](const Vec& m, int, double& g, Vec& grad) {
        g_grad(m, g, grad);
        evals += 2 * cfg.N_samples;
    };
    oracle.merit_g = [&](const Vec& m, int) {
        evals += cfg.N_samples;
        return g_only(m);
    };
    oracle.finalize = [&](const Vec& m, double lambda, double) {
        FinalStats fin;
        Mat hess = Mat::Zero(d, d);
        Mat cov = Mat::Zero(d + 1, d + 1);
        Vec mean_r = Vec::Zero(d + 1);
        Mat R(cfg.N_samples, d + 1);
        Vec x(d);
        for (std::int64_t i = 0; i < cfg.N_samples; ++i) {
            x = X.row(i).transpose() - m;
            hess += loss_hess_x(loss, x);  // d/dm twice flips sign twice
            R.row(i).head(d) = -lambda * loss_grad_x(loss, x).transpose();
            R(i, d) = loss_value(loss, x);
        }
        evals += 3 * cfg.N_samples;
        hess /= n;
        Eigen::RowVectorXd mu = R.colwise().mean();
        Mat centered = R.rowwise() - mu;
        cov = centered.transpose() * centered / (n - 1.0);

        Mat H = Mat::Zero(d + 1, d + 1);
        Vec grad(d);
        double g;
        g_grad(m, g, grad);
        H.topLeftCorner(d, d) = lambda * hess;
        H.topRightCorner(d, 1) = grad;
        H.bottomLeftCorner(1, d) = grad.transpose();
        fin.bordered_hessian = H;
        Eigen::FullPivLU<Mat> lu(H);
        if (!lu.isInvertible()) {
            fin.singular_hessian = true;
            fin.eps_stat = std::numeric_limits<double>::quiet_NaN();
            return fin;
        }
        Mat Hinv = lu.inverse();
        fin.V = Hinv * cov * Hinv.transpose();
        double mx = 0.0;
        for (int i = 0; i <= d; ++i) mx = std::max(mx, std::abs(fin.V(i, i)));
        fin.eps_stat = cfg.solver.c_alpha / std::sqrt(n) * std::sqrt(mx);
        fin.final_error_N = static_cast<std::uint64_t>(cfg.N_samples);
        return fin;
    };

    Vec m0 = cfg.solver.init_m.size() == d ? cfg.solver.init_m
                                           : Vec(mean(factors).array() + 1.0);
    SolutionReport rep = sqp_solve(oracle, cfg.solver, std::move(m0));
    rep.evals[0] = evals;
    return rep;
}

// ---------------------------------------------------------------------------
// stochastic approximation (constrained Robbins--Monro with averaging)
// ---------------------------------------------------------------------------

/// Projected Robbins--Monro iteration on the KKT residual with step
/// a_j = c/(j+t)^gamma and Polyak--Ruppert averaging over the final half.
/// The statistical error comes from the spread of the averaged iterates over
/// independent replications.
inline SolutionReport solve_sa(const LossModel& loss, const RiskFactorModel& factors,
                               const SAConfig& cfg) {
    cfg.validate();
    const auto t0 = std::chrono::steady_clock::now();
    const int d = loss.d;
    Vec m_init = cfg.init_m.size() == d ? cfg.init_m : Vec(mean(factors).array() + 1.0);

    Mat avg_iterates(cfg.replications, d + 1);
    std::int64_t evals = 0;
    for (int rep_i = 0; rep_i < cfg.replications; ++rep_i) {
        Vec m = m_init;
        double lambda = cfg.init_lambda;
        Vec m_avg = Vec::Zero(d);
        double lambda_avg = 0.0;
        std::int64_t tail = 0;
        const std::int64_t half = cfg.iterations / 2;
        // one sample per step
        detail::NormalSource dummy(0);
        std::uint64_t rep_seed = splitmix64(cfg.seed + 0x9e37u * rep_i);
        // draw in blocks to amortize the sampler set-up
        const std::int64_t block = 8192;
        std::int64_t produced = 0;
        Mat Xblock;
        std::int64_t row = 0;
        for (std::int64_t j = 1; j <= cfg.iterations; ++j) {
            if (row == produced) {
                std::int64_t want = std::min<std::int64_t>(block, cfg.iterations - j + 1);
                Xblock = sample(factors, want, splitmix64(rep_seed + static_cast<std::uint64_t>(j)));
                produced = want;
                row = 0;
            }
            Vec x = Xblock.row(row++).transpose() - m;
            double a = cfg.c / std::pow(static_cast<double>(j) + cfg.t, cfg.gamma);
            Vec gl = loss_grad_x(loss, x);
            double lv = loss_value(loss, x);
            ++evals;
            // primal descent / dual ascent on the Lagrangian
            m -= a * (Vec::Ones(d) - lambda * gl);
            lambda += a * lv;
            lambda = std::clamp(lambda, cfg.lambda_min, cfg.lambda_max);
            if (m.norm() > 1e6) throw DivergenceDetected("sa: iterate norm exceeded 1e6");
            if (j > half) {
                m_avg += m;
                lambda_avg += lambda;
                ++tail;
            }
        }
        m_avg /= static_cast<double>(tail);
        lambda_avg /= static_cast<double>(tail);
        avg_iterates.row(rep_i).head(d) = m_avg.transpose();
        avg_iterates(rep_i, d) = lambda_avg;
    }

    SolutionReport rep;
    Eigen::RowVectorXd mu = avg_iterates.colwise().mean();
    rep.m_star = mu.head(d).transpose();
    rep.lambda_star = mu[d];
    rep.total_risk = rep.m_star.sum();
    Mat centered = avg_iterates.rowwise() - mu;
    Mat cov = centered.transpose() * centered / (cfg.replications - 1.0);
    rep.solution_cov = cov;
    double mx = 0.0;
    for (int i = 0; i <= d; ++i) mx = std::max(mx, std::abs(cov(i, i)));
    rep.eps_stat = cfg.c_alpha * std::sqrt(mx / cfg.replications);
    rep.ci_lower = rep.m_star.array() - rep.eps_stat;
    rep.ci_upper = rep.m_star.array() + rep.eps_stat;
    rep.iterations = static_cast<int>(
        std::min<std::int64_t>(cfg.iterations, std::numeric_limits<int>::max()));
    rep.converged = true;
    rep.evals[0] = evals;
    rep.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return rep;
}

// ---------------------------------------------------------------------------
// reference solutions
// ---------------------------------------------------------------------------

/// Closed-form symmetric solution of the bivariate Gaussian exponential-loss
/// problem with unit variances and correlation rho: with t = e^{-m},
/// e^{1/2} t + (alpha/(1+alpha)) ... reduces for alpha = beta = 1 to
/// 0.5 e^{1+rho} t^2 + e^{1/2} t = (alpha+d)/(alpha+1).
struct ReferenceSolution {
    Vec m;
    double lambda = 0.0;
    bool closed_form = false;
};

inline ReferenceSolution exp2d_closed_form(double rho) {
    // alpha = 1, beta = 1, d = 2, standard normal marginals
    const double A = 0.5 * std::exp(1.0 + rho);
    const double B = std::exp(0.5);
    const double C = -1.5;
    const double t = (-B + std::sqrt(B * B - 4.0 * A * C)) / (2.0 * A);
    const double m = -std::log(t);
    const double dg = -0.5 * (std::exp(0.5) * t + std::exp(1.0 + rho) * t * t);
    ReferenceSolution ref;
    ref.m = Vec::Constant(2, m);
    ref.lambda = -1.0 / dg;
    ref.closed_form = true;
    return ref;
}

} // namespace msrm

#endif
