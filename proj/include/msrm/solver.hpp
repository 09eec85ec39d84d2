#ifndef MSRM_SOLVER_HPP
#define MSRM_SOLVER_HPP

#include <chrono>
#include <cmath>
#include <functional>
#include <memory>
#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "msrm/rqmc.hpp"
#include "msrm/surrogates.hpp"

namespace msrm {

enum class SolveMode { SingleLevel, MultiLevel };

struct SolverConfig {
    double eps_total = 2e-3;
    double eps_opt = 0.0;  // defaults to eps_total / 2
    int max_iters = 60;
    double backtrack_factor = 0.5;
    double min_step = 9.5367431640625e-07;  // 2^-20
    double armijo = 1e-4;
    Vec init_m;            // empty: mean(X) + 1
    double init_lambda = 1.0;
    SolveMode mode = SolveMode::SingleLevel;
    int max_refinements = 3;
    double c_alpha = 1.96;

    double eps_opt_effective() const { return eps_opt > 0.0 ? eps_opt : 0.5 * eps_total; }
};

struct IterationDiag {
    int j = 0;
    double g_residual = 0.0;
    double kkt_residual = 0.0;
    double step_norm = 0.0;
    double lambda = 0.0;
    std::uint64_t N_used = 0;
    double step_alpha = 0.0;
};

struct SolutionReport {
    Vec m_star;
    double lambda_star = 0.0;
    double total_risk = 0.0;
    double eps_stat = 0.0;
    Vec ci_lower, ci_upper;
    int iterations = 0;
    int J_loc = -1;
    double eta = 0.0;
    std::vector<IterationDiag> diags;
    std::vector<double> level_variances;  // multilevel: per-level gradient-block variance scale
    std::vector<std::uint64_t> level_sizes;
    double wall_seconds = 0.0;
    std::int64_t evals[3] = {0, 0, 0};
    bool converged = false;
    bool damping_stalled = false;
    bool singular_hessian = false;
    bool qp_fallback_used = false;
    double imag_residual = 0.0;
    Mat bordered_hessian;
    Mat solution_cov;
    int refinements = 0;
    std::uint64_t final_error_N = 0;
};

// ---------------------------------------------------------------------------
// QP step
// ---------------------------------------------------------------------------

struct QpStep {
    Vec d;
    double p = 0.0;
    bool fallback = false;
};

/// Newton/SQP step on the KKT residual (1 + lambda grad; g):
///   [[lambda B, grad],[grad', 0]] (d, p) = -(1 + lambda grad; g).
/// Solved as a dense bordered system; a residual above 1e-10 relative flags
/// the fallback gradient step.
inline QpStep qp_step(const Mat& B, double lambda, double g, const Vec& grad) {
    const int d = static_cast<int>(grad.size());
    Mat A = Mat::Zero(d + 1, d + 1);
    A.topLeftCorner(d, d) = lambda * B;
    A.topRightCorner(d, 1) = grad;
    A.bottomLeftCorner(1, d) = grad.transpose();
    Vec rhs(d + 1);
    rhs.head(d) = -(Vec::Ones(d) + lambda * grad);
    rhs[d] = -g;

    QpStep out;
    Eigen::PartialPivLU<Mat> lu(A);
    Vec sol = lu.solve(rhs);
    double denom = rhs.norm();
    if (denom == 0.0) {
        out.d = Vec::Zero(d);
        out.p = 0.0;
        return out;
    }
    if ((A * sol - rhs).norm() > 1e-10 * denom) {
        Eigen::FullPivLU<Mat> flu(A);
        sol = flu.solve(rhs);
        if (!flu.isInvertible() || (A * sol - rhs).norm() > 1e-10 * denom) {
            // SingularKKT: gradient step on the Lagrangian with the multiplier frozen
            out.d = rhs.head(d) / std::max(lambda, 1e-8);
            out.p = 0.0;
            out.fallback = true;
            return out;
        }
    }
    out.d = sol.head(d);
    out.p = sol[d];
    return out;
}

/// Damped BFGS update of the curvature matrix B ~ lambda hess g. Skipped when
/// the curvature condition fails, preserving positive definiteness.
inline void bfgs_update(Mat& B, const Vec& s, const Vec& y) {
    double ys = y.dot(s);
    if (!(ys > 1e-10 * s.norm() * y.norm())) return;
    Vec Bs = B * s;
    double sBs = s.dot(Bs);
    if (!(sBs > 0.0)) return;
    B += (y * y.transpose()) / ys - (Bs * Bs.transpose()) / sBs;
}

// ---------------------------------------------------------------------------
// generic SQP core over a surrogate oracle
// ---------------------------------------------------------------------------

/// Final statistics supplied by the oracle at the accepted solution.
struct FinalStats {
    Mat bordered_hessian;
    Mat V;
    double eps_stat = 0.0;
    bool singular_hessian = false;
    int refinements = 0;
    std::uint64_t final_error_N = 0;
};

struct SqpOracle {
    int d = 0;
    /// Estimate (g, grad) at the accepted iterate j (1-based).
    std::function<void(const Vec& m, int j, double& g, Vec& grad)> blocks;
    /// g estimate for the merit function at a trial point of iteration j.
    std::function<double(const Vec& m_trial, int j)> merit_g;
    /// Notification that m_new was accepted as iterate j+1.
    std::function<void(const Vec& m_new, int j)> accepted = nullptr;
    /// Hessian + covariance + statistical error at the final iterate.
    std::function<FinalStats(const Vec& m, double lambda, double eps_target)> finalize;
    /// Per-iterate sample size, for diagnostics.
    std::function<std::uint64_t(int j)> level_N = nullptr;
};

inline SolutionReport sqp_solve(const SqpOracle& oracle, const SolverConfig& cfg, Vec m0,
                                ContractionTracker* tracker_out = nullptr) {
    const auto t0 = std::chrono::steady_clock::now();
    const int d = oracle.d;
    const double eps_opt = cfg.eps_opt_effective();

    SolutionReport rep;
    Vec m = std::move(m0);
    double lambda = cfg.init_lambda;
    Mat B = Mat::Identity(d, d);
    ContractionTracker tracker;

    double g = 0.0;
    Vec grad = Vec::Zero(d);
    oracle.blocks(m, 1, g, grad);

    for (int j = 1; j <= cfg.max_iters; ++j) {
        QpStep step = qp_step(B, lambda, g, grad);
        rep.qp_fallback_used = rep.qp_fallback_used || step.fallback;

        const double rho = 2.0 * std::max(lambda, 1.0);
        const double phi0 = m.sum() + rho * std::abs(g);
        const double slope = step.d.sum() - rho * std::abs(g);

        double alpha = 1.0;
        Vec m_t;
        double g_t = 0.0;
        bool accepted = false;
        while (alpha >= cfg.min_step) {
            m_t = m + alpha * step.d;
            g_t = oracle.merit_g(m_t, j);
            double phi_t = m_t.sum() + rho * std::abs(g_t);
            if (phi_t <= phi0 + cfg.armijo * alpha * slope) {
                accepted = true;
                break;
            }
            alpha *= cfg.backtrack_factor;
        }
        if (!accepted) {
            alpha = cfg.min_step;
            m_t = m + alpha * step.d;
            g_t = oracle.merit_g(m_t, j);
        }

        Vec dz(d + 1);
        dz.head(d) = alpha * step.d;
        dz[d] = alpha * step.p;
        const double step_norm = dz.norm();

        if (oracle.accepted) oracle.accepted(m_t, j);
        double lambda_old = lambda;
        Vec grad_old = grad;
        m = m_t;
        lambda = std::max(lambda + alpha * step.p, 1e-8);
        tracker.push(step_norm);

        oracle.blocks(m, j + 1, g, grad);
        bfgs_update(B, alpha * step.d, lambda * grad - lambda_old * grad_old);

        IterationDiag diag;
        diag.j = j;
        diag.g_residual = g;
        Vec r(d + 1);
        r.head(d) = Vec::Ones(d) + lambda * grad;
        r[d] = g;
        diag.kkt_residual = r.norm();
        diag.step_norm = step_norm;
        diag.lambda = lambda;
        diag.N_used = oracle.level_N ? oracle.level_N(j) : 0;
        diag.step_alpha = alpha;
        rep.diags.push_back(diag);
        rep.iterations = j;

        if (step_norm <= eps_opt) {
            rep.converged = true;
            break;
        }
    }

    FinalStats fin = oracle.finalize(m, lambda, cfg.eps_total);
    rep.m_star = m;
    rep.lambda_star = lambda;
    rep.total_risk = m.sum();
    rep.eps_stat = fin.eps_stat;
    rep.bordered_hessian = fin.bordered_hessian;
    rep.solution_cov = fin.V;
    rep.singular_hessian = fin.singular_hessian;
    rep.refinements = fin.refinements;
    rep.final_error_N = fin.final_error_N;
    rep.ci_lower = m.array() - fin.eps_stat;
    rep.ci_upper = m.array() + fin.eps_stat;
    rep.J_loc = tracker.J_loc;
    rep.eta = tracker.eta;
    if (tracker_out) *tracker_out = tracker;
    rep.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return rep;
}

// ---------------------------------------------------------------------------
// Fourier-RQMC solve (single-level and multilevel)
// ---------------------------------------------------------------------------

namespace detail {

struct FourierState {
    const SurrogateContext* ctx;
    SolverConfig cfg;
    // single-level: current blocks; multilevel: accumulated telescoping state
    KKTBlocks current;
    DampingAssignment damping;
    bool damping_stalled = false;
    double imag_residual = 0.0;
    std::int64_t evals[3] = {0, 0, 0};
    // multilevel
    ContractionTracker* tracker = nullptr;
    Vec current_m;
    std::optional<std::pair<Vec, KKTBlocks>> last_trial;
    std::vector<double> level_variances;
    std::vector<std::uint64_t> level_sizes;

    void absorb_counts(const KKTBlocks& b) {
        for (int i = 0; i < 3; ++i) evals[i] += b.evals[i];
        imag_residual = std::max(imag_residual, b.imag_residual);
    }

    std::uint64_t level_size(int level) const {
        LevelSchedule sched;
        sched.N1 = ctx->design.N;
        sched.N_min = ctx->design.N_min;
        sched.C_loc = ctx->design.C_loc;
        sched.r = ctx->design.rate_r;
        if (tracker) {
            sched.J_loc = tracker->J_loc;
            sched.eta = tracker->eta;
        }
        return sched.level_size(level);
    }

    static double gradient_block_variance(const KKTBlocks& b, double lambda) {
        // max-diagonal of the per-shift covariance of [lambda grad; g]
        double mx = 0.0;
        const int d = static_cast<int>(b.grad_hat.size());
        Mat cov = Mat::Zero(d + 1, d + 1);
        for (const auto& t : b.cov_terms) {
            const int S = static_cast<int>(t.g_shift.size());
            Mat R(S, d + 1);
            for (int s = 0; s < S; ++s) {
                R.row(s).head(d) = lambda * t.grad_shift.row(s);
                R(s, d) = t.g_shift[s];
            }
            Eigen::RowVectorXd mean = R.colwise().mean();
            Mat c = R.rowwise() - mean;
            cov += c.transpose() * c / (S - 1);
        }
        for (int i = 0; i < d + 1; ++i) mx = std::max(mx, cov(i, i));
        return mx;
    }
};

inline FinalStats fourier_finalize(const SurrogateContext& ctx, FourierState& st, const Vec& m,
                                   double lambda, double eps_target, double c_alpha,
                                   int max_refinements) {
    FinalStats fin;
    std::uint64_t N = ctx.design.N;
    DampingAssignment da = select_all_damping(ctx, m);
    for (int attempt = 0;; ++attempt) {
        KKTBlocks hb = evaluate_blocks(ctx, m, da, 2, /*level=*/0, N);
        st.absorb_counts(hb);
        Mat H = lagrangian_hessian(hb, lambda);
        std::vector<RawEstimate::CovTerm> terms;
        if (st.cfg.mode == SolveMode::MultiLevel) {
            terms = st.current.cov_terms;  // accumulated per-level terms
            if (attempt > 0) terms = hb.cov_terms;
        } else {
            terms = hb.cov_terms;
        }
        SolutionCovariance sc =
            assemble_solution_covariance(terms, H, lambda, hb.S, c_alpha);
        fin.bordered_hessian = H;
        fin.V = sc.V;
        fin.eps_stat = sc.eps_stat;
        fin.singular_hessian = sc.singular_hessian;
        fin.refinements = attempt;
        fin.final_error_N = N;
        if (sc.singular_hessian || !(sc.eps_stat > 0.5 * eps_target) ||
            attempt >= max_refinements)
            break;
        N *= 2;  // refine the error estimate only
    }
    return fin;
}

} // namespace detail

/// Solves the shortfall-risk KKT system on the Fourier-RQMC surrogates.
inline SolutionReport solve(const SurrogateContext& ctx, const SolverConfig& cfg) {
    auto st = std::make_shared<detail::FourierState>();
    st->ctx = &ctx;
    st->cfg = cfg;
    ContractionTracker tracker;
    st->tracker = &tracker;

    Vec m0 = cfg.init_m.size() == ctx.d ? cfg.init_m : Vec((ctx.factor_mean.array() + 1.0));

    SqpOracle oracle;
    oracle.d = ctx.d;

    if (cfg.mode == SolveMode::SingleLevel) {
        oracle.blocks = [st, &ctx](const Vec& m, int /*j*/, double& g, Vec& grad) {
            st->damping = select_all_damping(ctx, m);
            st->damping_stalled = st->damping_stalled || st->damping.stall_warning;
            st->current = evaluate_blocks(ctx, m, st->damping, 1, /*level=*/0);
            st->absorb_counts(st->current);
            g = st->current.g_hat;
            grad = st->current.grad_hat;
        };
        oracle.merit_g = [st, &ctx](const Vec& m_t, int /*j*/) {
            KKTBlocks b = evaluate_blocks(ctx, m_t, st->damping, 0, /*level=*/0);
            st->absorb_counts(b);
            return b.g_hat;
        };
        oracle.level_N = [&ctx](int) { return ctx.design.N; };
    } else {
        oracle.blocks = [st, &ctx](const Vec& m, int j, double& g, Vec& grad) {
            if (j == 1) {
                st->damping = select_all_damping(ctx, m);
                st->damping_stalled = st->damping_stalled || st->damping.stall_warning;
                st->current = evaluate_blocks(ctx, m, st->damping, 1, /*level=*/1,
                                              ctx.design.N);
                st->absorb_counts(st->current);
                st->current_m = m;
                st->level_sizes.assign(1, ctx.design.N);
                st->level_variances.assign(
                    1, detail::FourierState::gradient_block_variance(st->current, 1.0));
            }
            g = st->current.g_hat;
            grad = st->current.grad_hat;
        };
        oracle.merit_g = [st, &ctx](const Vec& m_t, int j) {
            const int level = j + 1;
            std::uint64_t Nl = st->level_size(level);
            DampingAssignment da = select_all_damping_diff(ctx, m_t, st->current_m);
            st->damping_stalled = st->damping_stalled || da.stall_warning;
            KKTBlocks diff =
                evaluate_difference_blocks(ctx, m_t, st->current_m, da, 1, level, Nl);
            st->absorb_counts(diff);
            double g_t = st->current.g_hat + diff.g_hat;
            st->last_trial = std::make_pair(m_t, std::move(diff));
            return g_t;
        };
        oracle.accepted = [st, &ctx](const Vec& m_new, int j) {
            KKTBlocks diff;
            if (st->last_trial && st->last_trial->first == m_new) {
                diff = std::move(st->last_trial->second);
            } else {
                const int level = j + 1;
                std::uint64_t Nl = st->level_size(level);
                DampingAssignment da = select_all_damping_diff(ctx, m_new, st->current_m);
                diff = evaluate_difference_blocks(ctx, m_new, st->current_m, da, 1, level, Nl);
                st->absorb_counts(diff);
            }
            st->level_variances.push_back(
                detail::FourierState::gradient_block_variance(diff, 1.0));
            st->level_sizes.push_back(st->level_size(j + 1));
            st->current.g_hat += diff.g_hat;
            st->current.grad_hat += diff.grad_hat;
            for (auto& t : diff.cov_terms) st->current.cov_terms.push_back(std::move(t));
            st->current_m = m_new;
            st->last_trial.reset();
        };
        oracle.level_N = [st](int j) { return st->level_size(j + 1); };
    }

    oracle.finalize = [st, &ctx, &cfg](const Vec& m, double lambda, double eps_target) {
        return detail::fourier_finalize(ctx, *st, m, lambda, eps_target, cfg.c_alpha,
                                        cfg.max_refinements);
    };

    SolutionReport rep = sqp_solve(oracle, cfg, std::move(m0), &tracker);
    rep.damping_stalled = st->damping_stalled;
    rep.imag_residual = st->imag_residual;
    for (int i = 0; i < 3; ++i) rep.evals[i] = st->evals[i];
    rep.level_variances = st->level_variances;
    rep.level_sizes = st->level_sizes;
    return rep;
}

} // namespace msrm

#endif
