#ifndef MSRM_SURROGATES_HPP
#define MSRM_SURROGATES_HPP

#include <cmath>
#include <complex>
#include <memory>
#include <vector>

#include <Eigen/Dense>

#include "msrm/damping.hpp"
#include "msrm/domain_transform.hpp"
#include "msrm/loss_models.hpp"
#include "msrm/risk_factors.hpp"
#include "msrm/rqmc.hpp"

namespace msrm {

/// One Fourier block bound to its marginal law and cube map.
struct PreparedComponent {
    ComponentSpec spec;
    RiskFactorModel marg;
    CubeMap map;
};

/// Everything needed to evaluate the Fourier-RQMC surrogates of g, grad g,
/// and hess g at an allocation. Immutable after construction except for the
/// net cache and the warm-start damping store.
struct SurrogateContext {
    LossModel loss;
    RiskFactorModel factors;
    TransformConfig transform;
    DampingConfig damping_cfg;
    RQMCDesign design;

    int d = 0;
    std::vector<ComponentSpec> comps;          // full decomposition
    std::vector<PreparedComponent> fourier;    // Fourier blocks only
    double const_part = 0.0;
    bool has_linear = false;
    Vec factor_mean;

    mutable NetCache nets;
    mutable DampingAssignment warm;  // previous iterate's selections
};

inline SurrogateContext make_context(LossModel loss, RiskFactorModel factors,
                                     TransformConfig transform, DampingConfig damping_cfg,
                                     RQMCDesign design) {
    if (loss.d != dim(factors))
        throw DimensionMismatch("surrogates: loss and factor dimensions differ");
    design.validate();
    transform.validate();
    damping_cfg.validate();
    SurrogateContext ctx{std::move(loss), std::move(factors), transform, damping_cfg, design};
    ctx.d = ctx.loss.d;
    ctx.comps = components(ctx.loss);
    ctx.factor_mean = mean(ctx.factors);
    for (const auto& s : ctx.comps) {
        if (s.kind == ComponentKind::ConstantClosedForm) {
            ctx.const_part += s.coeff;
        } else if (s.kind == ComponentKind::LinearClosedForm) {
            ctx.has_linear = true;
        } else {
            RiskFactorModel marg = marginal(ctx.factors, s.p);
            CubeMap map = make_cube_map(marg, ctx.transform);
            ctx.fourier.push_back({s, std::move(marg), std::move(map)});
        }
    }
    ctx.warm.by_component.resize(ctx.comps.size());
    return ctx;
}

// ---------------------------------------------------------------------------
// damping along the trajectory
// ---------------------------------------------------------------------------

/// Per-component contour selection at allocation m, warm-started from the
/// previous iterate's selections.
inline DampingAssignment select_all_damping(const SurrogateContext& ctx, const Vec& m) {
    DampingAssignment out;
    out.by_component.resize(ctx.comps.size());
    for (const auto& pc : ctx.fourier) {
        Vec m_kp = gather(pc.spec.p, m);
        const DampingSpec* ws = ctx.warm.by_component[pc.spec.id]
                                    ? &*ctx.warm.by_component[pc.spec.id]
                                    : nullptr;
        DampingResult res = select_damping(pc.spec, pc.marg, 0, m_kp, ctx.damping_cfg, ws);
        out.by_component[pc.spec.id] = res.spec;
        out.stall_warning = out.stall_warning || res.stalled;
    }
    ctx.warm = out;
    return out;
}

/// Single contour per component for the difference integrand between two
/// consecutive iterates.
inline DampingAssignment select_all_damping_diff(const SurrogateContext& ctx, const Vec& m_j,
                                                 const Vec& m_prev) {
    DampingAssignment out;
    out.by_component.resize(ctx.comps.size());
    for (const auto& pc : ctx.fourier) {
        Vec mj = gather(pc.spec.p, m_j);
        Vec mp = gather(pc.spec.p, m_prev);
        const DampingSpec* ws = ctx.warm.by_component[pc.spec.id]
                                    ? &*ctx.warm.by_component[pc.spec.id]
                                    : nullptr;
        DampingResult res =
            select_damping_for_difference(pc.spec, pc.marg, 0, mj, mp, ctx.damping_cfg, ws);
        out.by_component[pc.spec.id] = res.spec;
        out.stall_warning = out.stall_warning || res.stalled;
    }
    return out;
}

// ---------------------------------------------------------------------------
// component integrands
// ---------------------------------------------------------------------------

namespace detail {

/// Frequency-space integrand h^{(0)} of one component together with the
/// per-coordinate differentiation factors (K - i u) used for the gradient and
/// Hessian routes. The exponential family sums 2^k contour terms, each with
/// its own shift in both the prefactor and the CF argument.
struct ComponentEvaluator {
    const ComponentSpec* spec;
    const RiskFactorModel* marg;
    Vec m_kp;
    DampingSpec ds;
    double base;  // (2pi)^{-k}

    explicit ComponentEvaluator(const PreparedComponent& pc, const Vec& m, const DampingSpec& d)
        : spec(&pc.spec), marg(&pc.marg), m_kp(gather(pc.spec.p, m)), ds(d),
          base(std::pow(two_pi, -pc.spec.k)) {}

    void eval_u(const Vec& u, Cplx& v0, Eigen::VectorXcd* g1, Eigen::MatrixXcd* g2) const {
        const int k = spec->k;
        v0 = Cplx(0.0, 0.0);
        if (g1) g1->setZero(k);
        if (g2) g2->setZero(k, k);
        const Cplx i(0.0, 1.0);
        if (spec->kind == ComponentKind::QpcSquare || spec->kind == ComponentKind::QpcPair) {
            CVec y(k);
            Cplx tr = spec->coeff;
            Cplx phase = Cplx(ds.K.dot(m_kp), -u.dot(m_kp));
            for (int j = 0; j < k; ++j) {
                y[j] = Cplx(u[j], ds.K[j]);
                tr *= detail_qpc_factor(spec->theta, Cplx(-ds.K[j], u[j]));
            }
            Cplx val = base * std::exp(phase) * extended_cf(*marg, y) * tr;
            v0 = val;
            if (g1 || g2) {
                for (int j = 0; j < k; ++j) {
                    Cplx fj(ds.K[j], -u[j]);
                    if (g1) (*g1)[j] = fj * val;
                    if (g2)
                        for (int l = 0; l <= j; ++l) {
                            Cplx fl(ds.K[l], -u[l]);
                            (*g2)(j, l) = fj * fl * val;
                            (*g2)(l, j) = (*g2)(j, l);
                        }
                }
            }
            return;
        }
        // exponential family: 2^k contour terms
        const unsigned nt = 1u << k;
        CVec y(k);
        for (unsigned t = 0; t < nt; ++t) {
            Vec shift = exp_term_shift(*spec, ds, t);
            Cplx tr = spec->coeff;
            for (int j = 0; j < k; ++j) {
                y[j] = Cplx(u[j], shift[j]);
                if ((t >> j) & 1u)
                    tr *= 1.0 / Cplx(ds.K_plus[j] - spec->beta, u[j]);
                else
                    tr *= 1.0 / Cplx(spec->beta - ds.K_minus[j], -u[j]);
            }
            Cplx phase = Cplx(shift.dot(m_kp), -u.dot(m_kp));
            Cplx val = base * std::exp(phase) * extended_cf(*marg, y) * tr;
            v0 += val;
            if (g1 || g2) {
                for (int j = 0; j < k; ++j) {
                    Cplx fj(shift[j], -u[j]);
                    if (g1) (*g1)[j] += fj * val;
                    if (g2)
                        for (int l = 0; l <= j; ++l) {
                            Cplx fl(shift[l], -u[l]);
                            (*g2)(j, l) += fj * fl * val;
                            if (l != j) (*g2)(l, j) += fj * fl * val;
                        }
                }
            }
        }
    }

    static Cplx detail_qpc_factor(int theta, Cplx z) {
        static const double fact[3] = {1.0, 1.0, 2.0};
        return fact[theta] / std::pow(z, theta + 1);
    }
};

} // namespace detail

/// Frequency-space component integrand h^{(nu)}_{k,p} as a plain function of
/// u, for oracles and diagnostics.
inline std::function<void(const Vec&, Cplx&, Eigen::VectorXcd*, Eigen::MatrixXcd*)>
component_integrand_u(const PreparedComponent& pc, const Vec& m, const DampingSpec& ds) {
    auto ev = std::make_shared<detail::ComponentEvaluator>(pc, m, ds);
    return [ev](const Vec& u, Cplx& v0, Eigen::VectorXcd* g1, Eigen::MatrixXcd* g2) {
        ev->eval_u(u, v0, g1, g2);
    };
}

/// Cube-mapped integrand of one component at allocation m.
inline CubeIntegrand make_cube_integrand(const PreparedComponent& pc, const Vec& m,
                                         const DampingSpec& ds) {
    CubeIntegrand ci;
    ci.k = pc.spec.k;
    ci.cube_dim = cube_dim(pc.map);
    ci.p = pc.spec.p;
    auto ev = std::make_shared<detail::ComponentEvaluator>(pc, m, ds);
    const CubeMap* map = &pc.map;
    ci.eval = [ev, map](const double* v, Cplx& v0, Eigen::VectorXcd* g1, Eigen::MatrixXcd* g2) {
        MappedPoint mp = map_point(*map, v);
        ev->eval_u(mp.u, v0, g1, g2);
        const double w = std::exp(mp.log_weight);
        v0 *= w;
        if (g1) *g1 *= w;
        if (g2) *g2 *= w;
    };
    return ci;
}

/// Cube-mapped difference integrand h(.; m_new) - h(.; m_old) with a shared
/// contour selection.
inline CubeIntegrand make_cube_difference_integrand(const PreparedComponent& pc, const Vec& m_new,
                                                    const Vec& m_old, const DampingSpec& ds) {
    CubeIntegrand ci;
    ci.k = pc.spec.k;
    ci.cube_dim = cube_dim(pc.map);
    ci.p = pc.spec.p;
    auto ev_new = std::make_shared<detail::ComponentEvaluator>(pc, m_new, ds);
    auto ev_old = std::make_shared<detail::ComponentEvaluator>(pc, m_old, ds);
    const CubeMap* map = &pc.map;
    ci.eval = [ev_new, ev_old, map](const double* v, Cplx& v0, Eigen::VectorXcd* g1,
                                    Eigen::MatrixXcd* g2) {
        MappedPoint mp = map_point(*map, v);
        Cplx a0, b0;
        Eigen::VectorXcd a1, b1;
        Eigen::MatrixXcd a2, b2;
        ev_new->eval_u(mp.u, a0, g1 ? &a1 : nullptr, g2 ? &a2 : nullptr);
        ev_old->eval_u(mp.u, b0, g1 ? &b1 : nullptr, g2 ? &b2 : nullptr);
        const double w = std::exp(mp.log_weight);
        v0 = (a0 - b0) * w;
        if (g1) *g1 = (a1 - b1) * w;
        if (g2) *g2 = (a2 - b2) * w;
    };
    return ci;
}

// ---------------------------------------------------------------------------
// KKT blocks
// ---------------------------------------------------------------------------

/// Fourier-RQMC estimates of g, grad g (with respect to the allocation), and
/// optionally hess g, with retained per-shift means.
struct KKTBlocks {
    double g_hat = 0.0;
    Vec grad_hat;
    Mat hess_hat;
    bool has_hessian = false;
    std::vector<RawEstimate::CovTerm> cov_terms;
    int S = 0;
    double imag_residual = 0.0;
    std::int64_t evals[3] = {0, 0, 0};
};

/// Single-level evaluation at m. `level` seeds the digital shifts (the
/// single-level solver freezes them at 0; multilevel passes the level index).
inline KKTBlocks evaluate_blocks(const SurrogateContext& ctx, const Vec& m,
                                 const DampingAssignment& da, int max_nu, int level = 0,
                                 std::uint64_t N_override = 0) {
    if (m.size() != ctx.d) throw DimensionMismatch("evaluate_blocks: m size");
    std::vector<CubeIntegrand> cis;
    cis.reserve(ctx.fourier.size());
    for (const auto& pc : ctx.fourier)
        cis.push_back(make_cube_integrand(pc, m, da.at(pc.spec.id)));
    const std::uint64_t N = N_override ? N_override : ctx.design.N;
    RawEstimate raw = rqmc_estimate(cis, ctx.d, N, ctx.design.S_shift, ctx.design.seed, level,
                                    ctx.nets, max_nu);
    KKTBlocks out;
    out.g_hat = raw.g + ctx.const_part;
    out.grad_hat = raw.grad;
    out.hess_hat = raw.hess;
    out.has_hessian = max_nu >= 2;
    if (ctx.has_linear) {
        out.g_hat += (ctx.factor_mean - m).sum();
        out.grad_hat.array() -= 1.0;
    }
    out.cov_terms = std::move(raw.cov_terms);
    out.S = raw.S;
    out.imag_residual = raw.imag_residual;
    for (int i = 0; i < 3; ++i) out.evals[i] = raw.evals[i];
    return out;
}

/// Difference contribution between consecutive iterates (multilevel level
/// l >= 2): estimates of g(m_new)-g(m_old) and the gradient difference, with
/// fresh shifts keyed by `level`.
inline KKTBlocks evaluate_difference_blocks(const SurrogateContext& ctx, const Vec& m_new,
                                            const Vec& m_old, const DampingAssignment& da,
                                            int max_nu, int level, std::uint64_t N_level) {
    std::vector<CubeIntegrand> cis;
    cis.reserve(ctx.fourier.size());
    for (const auto& pc : ctx.fourier)
        cis.push_back(make_cube_difference_integrand(pc, m_new, m_old, da.at(pc.spec.id)));
    RawEstimate raw = rqmc_estimate(cis, ctx.d, N_level, ctx.design.S_shift, ctx.design.seed,
                                    level, ctx.nets, max_nu);
    KKTBlocks out;
    out.g_hat = raw.g;
    out.grad_hat = raw.grad;
    out.hess_hat = raw.hess;
    out.has_hessian = max_nu >= 2;
    if (ctx.has_linear) out.g_hat += (m_old - m_new).sum();  // linear closed-form difference
    out.cov_terms = std::move(raw.cov_terms);
    out.S = raw.S;
    out.imag_residual = raw.imag_residual;
    for (int i = 0; i < 3; ++i) out.evals[i] = raw.evals[i];
    return out;
}

// ---------------------------------------------------------------------------
// Lagrangian blocks (allocation-gradient convention)
// ---------------------------------------------------------------------------

/// KKT residual (1 + lambda * grad g ; g). Roots coincide with the first-order
/// conditions of min sum(m) s.t. g(m) <= 0 with an active constraint.
inline Vec lagrangian_gradient(const KKTBlocks& blocks, double lambda) {
    if (!(lambda > 0.0)) throw NonPositiveMultiplier("lagrangian_gradient: lambda must be > 0");
    const int d = static_cast<int>(blocks.grad_hat.size());
    Vec r(d + 1);
    r.head(d) = Vec::Ones(d) + lambda * blocks.grad_hat;
    r[d] = blocks.g_hat;
    return r;
}

/// Bordered Hessian [[lambda hess g, grad g],[grad g', 0]].
inline Mat lagrangian_hessian(const KKTBlocks& blocks, double lambda) {
    if (!(lambda > 0.0)) throw NonPositiveMultiplier("lagrangian_hessian: lambda must be > 0");
    const int d = static_cast<int>(blocks.grad_hat.size());
    Mat H = Mat::Zero(d + 1, d + 1);
    H.topLeftCorner(d, d) = lambda * blocks.hess_hat;
    H.topRightCorner(d, 1) = blocks.grad_hat;
    H.bottomLeftCorner(1, d) = blocks.grad_hat.transpose();
    return H;
}

} // namespace msrm

#endif
