#ifndef MSRM_LOSS_MODELS_HPP
#define MSRM_LOSS_MODELS_HPP

#include <cmath>
#include <complex>
#include <vector>

#include <Eigen/Dense>

#include "msrm/errors.hpp"
#include "msrm/risk_factors.hpp"

namespace msrm {

enum class LossFamily { Exponential, Qpc };

/// Multivariate loss function. The exponential (entropic-type) family uses
/// both alpha (systemic weight) and beta (risk aversion); the quadratic
/// pairwise coupling family (QPC) uses alpha only.
struct LossModel {
    LossFamily family;
    int d;
    double alpha;  // systemic weight, >= 0
    double beta;   // risk aversion, >= 0 (Exponential only)

    LossModel(LossFamily family_, int d_, double alpha_, double beta_ = 0.0)
        : family(family_), d(d_), alpha(alpha_), beta(beta_) {
        if (d < 1) throw DimensionMismatch("loss model: d must be >= 1");
        if (alpha < 0.0) throw std::invalid_argument("loss model: alpha must be >= 0");
        if (family == LossFamily::Exponential && beta < 0.0)
            throw std::invalid_argument("loss model: beta must be >= 0");
    }
};

enum class ComponentKind {
    ExpSingleton,       // c * exp(beta x), k = 1
    ExpCoupling,        // c * exp(beta 1'x), k = d
    QpcSquare,          // 1/2 (x+)^2, k = 1
    QpcPair,            // alpha x1+ x2+, k = 2
    LinearClosedForm,   // sum_k x_k, handled in closed form
    ConstantClosedForm, // additive constant
};

/// One interaction block of the loss decomposition.
struct ComponentSpec {
    ComponentKind kind;
    int k = 0;
    std::vector<int> p;  // 0-based, strictly increasing
    double coeff = 0.0;
    double beta = 0.0;   // Exponential blocks
    int theta = 0;       // QPC power per coordinate: 2 for squares, 1 for pairs
    int id = -1;         // stable index within components(model)

    bool is_fourier() const {
        return kind == ComponentKind::ExpSingleton || kind == ComponentKind::ExpCoupling ||
               kind == ComponentKind::QpcSquare || kind == ComponentKind::QpcPair;
    }
};

// ---------------------------------------------------------------------------
// pointwise evaluation (physical space; used by the SAA/SA baselines)
// ---------------------------------------------------------------------------

inline double loss_value(const LossModel& m, const Vec& x) {
    if (x.size() != m.d) throw DimensionMismatch("loss_value: x size");
    if (m.family == LossFamily::Exponential) {
        double s = 0.0, tot = 0.0;
        for (int j = 0; j < m.d; ++j) {
            tot += std::exp(m.beta * x[j]);
            s += x[j];
        }
        tot += m.alpha * std::exp(m.beta * s);
        return tot / (1.0 + m.alpha) - (m.alpha + m.d) / (m.alpha + 1.0);
    }
    double lin = 0.0, sq = 0.0, pair = 0.0;
    for (int j = 0; j < m.d; ++j) {
        lin += x[j];
        double xp = std::max(x[j], 0.0);
        sq += xp * xp;
    }
    for (int j = 0; j < m.d; ++j) {
        double xj = std::max(x[j], 0.0);
        if (xj == 0.0) continue;
        for (int l = j + 1; l < m.d; ++l) pair += xj * std::max(x[l], 0.0);
    }
    return lin + 0.5 * sq + m.alpha * pair - 1.0;
}

/// Gradient in x. The QPC positive part uses one-sided derivative 0 at x = 0.
inline Vec loss_grad_x(const LossModel& m, const Vec& x) {
    if (x.size() != m.d) throw DimensionMismatch("loss_grad_x: x size");
    Vec g(m.d);
    if (m.family == LossFamily::Exponential) {
        double s = x.sum();
        double coupling = m.alpha * m.beta * std::exp(m.beta * s);
        for (int j = 0; j < m.d; ++j)
            g[j] = (m.beta * std::exp(m.beta * x[j]) + coupling) / (1.0 + m.alpha);
        return g;
    }
    double sum_pos = 0.0;
    for (int j = 0; j < m.d; ++j) sum_pos += std::max(x[j], 0.0);
    for (int j = 0; j < m.d; ++j) {
        double xp = std::max(x[j], 0.0);
        double ind = x[j] > 0.0 ? 1.0 : 0.0;
        g[j] = 1.0 + xp + m.alpha * ind * (sum_pos - xp);
    }
    return g;
}

/// Hessian in x (a.e. version for QPC: the kink at 0 contributes nothing).
inline Mat loss_hess_x(const LossModel& m, const Vec& x) {
    if (x.size() != m.d) throw DimensionMismatch("loss_hess_x: x size");
    Mat h = Mat::Zero(m.d, m.d);
    if (m.family == LossFamily::Exponential) {
        double s = x.sum();
        double coupling = m.alpha * m.beta * m.beta * std::exp(m.beta * s) / (1.0 + m.alpha);
        h.setConstant(coupling);
        for (int j = 0; j < m.d; ++j)
            h(j, j) += m.beta * m.beta * std::exp(m.beta * x[j]) / (1.0 + m.alpha);
        return h;
    }
    for (int j = 0; j < m.d; ++j) {
        double indj = x[j] > 0.0 ? 1.0 : 0.0;
        h(j, j) = indj;
        for (int l = j + 1; l < m.d; ++l) {
            double v = m.alpha * indj * (x[l] > 0.0 ? 1.0 : 0.0);
            h(j, l) = v;
            h(l, j) = v;
        }
    }
    return h;
}

// ---------------------------------------------------------------------------
// componentwise decomposition
// ---------------------------------------------------------------------------

inline std::vector<ComponentSpec> components(const LossModel& m) {
    std::vector<ComponentSpec> out;
    int id = 0;
    if (m.family == LossFamily::Exponential) {
        const double c1 = 1.0 / (1.0 + m.alpha);
        for (int j = 0; j < m.d; ++j) {
            ComponentSpec s;
            s.kind = ComponentKind::ExpSingleton;
            s.k = 1;
            s.p = {j};
            s.coeff = c1;
            s.beta = m.beta;
            s.id = id++;
            out.push_back(std::move(s));
        }
        if (m.alpha > 0.0) {
            ComponentSpec s;
            s.kind = ComponentKind::ExpCoupling;
            s.k = m.d;
            s.p.resize(m.d);
            for (int j = 0; j < m.d; ++j) s.p[j] = j;
            s.coeff = m.alpha / (1.0 + m.alpha);
            s.beta = m.beta;
            s.id = id++;
            out.push_back(std::move(s));
        }
        ComponentSpec c;
        c.kind = ComponentKind::ConstantClosedForm;
        c.coeff = -(m.alpha + m.d) / (m.alpha + 1.0);
        c.id = id++;
        out.push_back(std::move(c));
        return out;
    }
    {
        ComponentSpec lin;
        lin.kind = ComponentKind::LinearClosedForm;
        lin.coeff = 1.0;
        lin.id = id++;
        out.push_back(std::move(lin));
    }
    for (int j = 0; j < m.d; ++j) {
        ComponentSpec s;
        s.kind = ComponentKind::QpcSquare;
        s.k = 1;
        s.p = {j};
        s.coeff = 0.5;
        s.theta = 2;
        s.id = id++;
        out.push_back(std::move(s));
    }
    if (m.alpha > 0.0) {
        for (int j = 0; j < m.d; ++j)
            for (int l = j + 1; l < m.d; ++l) {
                ComponentSpec s;
                s.kind = ComponentKind::QpcPair;
                s.k = 2;
                s.p = {j, l};
                s.coeff = m.alpha;
                s.theta = 1;
                s.id = id++;
                out.push_back(std::move(s));
            }
    }
    {
        ComponentSpec c;
        c.kind = ComponentKind::ConstantClosedForm;
        c.coeff = -1.0;
        c.id = id++;
        out.push_back(std::move(c));
    }
    return out;
}

/// Pointwise value of one Fourier block on its own coordinates.
inline double component_block_value(const ComponentSpec& s, const Vec& xk) {
    switch (s.kind) {
        case ComponentKind::ExpSingleton:
        case ComponentKind::ExpCoupling:
            return s.coeff * std::exp(s.beta * xk.sum());
        case ComponentKind::QpcSquare: {
            double xp = std::max(xk[0], 0.0);
            return s.coeff * xp * xp;
        }
        case ComponentKind::QpcPair:
            return s.coeff * std::max(xk[0], 0.0) * std::max(xk[1], 0.0);
        default:
            throw std::invalid_argument("component_block_value: not a Fourier block");
    }
}

// ---------------------------------------------------------------------------
// damping descriptors and analyticity strips
// ---------------------------------------------------------------------------

/// Contour-shift descriptor for one component. QPC blocks carry a single
/// vector K < 0. Exponential blocks carry per-coordinate pairs in the
/// K^- < beta < K^+ parametrization of the two-sided transform; the actual
/// contour shift of the (0,inf) term is -K^+ and of the (-inf,0) term -K^-.
struct DampingSpec {
    Vec K;        // QPC
    Vec K_minus;  // Exponential
    Vec K_plus;   // Exponential
    bool two_sided = false;
};

inline bool loss_strip_contains(const ComponentSpec& s, const DampingSpec& ds,
                                double margin = 0.0) {
    if (s.kind == ComponentKind::QpcSquare || s.kind == ComponentKind::QpcPair) {
        for (int j = 0; j < s.k; ++j)
            if (!(ds.K[j] <= -margin) || !(ds.K[j] < 0.0)) return false;
        return true;
    }
    if (s.kind == ComponentKind::ExpSingleton || s.kind == ComponentKind::ExpCoupling) {
        for (int j = 0; j < s.k; ++j) {
            if (!(ds.K_minus[j] <= s.beta - margin)) return false;
            if (!(ds.K_plus[j] >= s.beta + margin)) return false;
            if (!(ds.K_minus[j] < s.beta && s.beta < ds.K_plus[j])) return false;
        }
        return true;
    }
    return false;
}

/// Actual contour-shift vectors of the 2^k exponential terms. Bit j of the
/// term index selects the (0,inf) side (-K^+) when set, else the (-inf,0)
/// side (-K^-).
inline Vec exp_term_shift(const ComponentSpec& s, const DampingSpec& ds, unsigned term) {
    Vec shift(s.k);
    for (int j = 0; j < s.k; ++j)
        shift[j] = ((term >> j) & 1u) ? -ds.K_plus[j] : -ds.K_minus[j];
    return shift;
}

// ---------------------------------------------------------------------------
// componentwise damped Fourier transforms
// ---------------------------------------------------------------------------

namespace detail {

/// theta! / (-K + i u)^{theta - nu + 1} with z = -K + i u precomputed.
inline Cplx qpc_phi_hat(int theta, int nu, Cplx z) {
    static const double fact[3] = {1.0, 1.0, 2.0};
    return fact[theta] / std::pow(z, theta - nu + 1);
}

} // namespace detail

/// Fourier transform of one QPC block (single contour term, K < 0).
/// nu = 0 returns the scalar transform, nu = 1 the componentwise transform of
/// the x-gradient, nu = 2 the entrywise transform of the a.e./distributional
/// x-Hessian.
struct QpcTransform {
    Cplx value;                       // nu = 0
    Eigen::VectorXcd grad;            // nu = 1
    Eigen::MatrixXcd hess;            // nu = 2

    static QpcTransform evaluate(const ComponentSpec& s, const Vec& u, const Vec& K,
                                 int max_nu) {
        for (int j = 0; j < s.k; ++j)
            if (!(K[j] < 0.0)) throw StripViolation("QPC transform requires K < 0");
        QpcTransform out;
        std::vector<Cplx> z(s.k), f0(s.k), f1(s.k), f2(s.k);
        for (int j = 0; j < s.k; ++j) {
            z[j] = Cplx(-K[j], u[j]);
            f0[j] = detail::qpc_phi_hat(s.theta, 0, z[j]);
            if (max_nu >= 1) f1[j] = detail::qpc_phi_hat(s.theta, 1, z[j]);
            if (max_nu >= 2) f2[j] = detail::qpc_phi_hat(s.theta, 2, z[j]);
        }
        Cplx prod0 = s.coeff;
        for (int j = 0; j < s.k; ++j) prod0 *= f0[j];
        out.value = prod0;
        if (max_nu >= 1) {
            out.grad.resize(s.k);
            for (int j = 0; j < s.k; ++j) {
                Cplx v = s.coeff;
                for (int l = 0; l < s.k; ++l) v *= (l == j) ? f1[l] : f0[l];
                out.grad[j] = v;
            }
        }
        if (max_nu >= 2) {
            out.hess.resize(s.k, s.k);
            for (int j = 0; j < s.k; ++j)
                for (int l = 0; l < s.k; ++l) {
                    Cplx v = s.coeff;
                    if (j == l) {
                        for (int t = 0; t < s.k; ++t) v *= (t == j) ? f2[t] : f0[t];
                    } else {
                        for (int t = 0; t < s.k; ++t)
                            v *= (t == j || t == l) ? f1[t] : f0[t];
                    }
                    out.hess(j, l) = v;
                }
        }
        return out;
    }
};

/// Fourier transform of one exponential block, reported per contour term.
/// Term t carries the one-coordinate factors 1/(K^+ - beta + i u) on the
/// (0,inf) side and 1/(beta - K^- - i u) on the (-inf,0) side. The nu = 1
/// factors are the distributional derivatives beta*f +/- 1 (the boundary
/// jumps cancel across terms once integrated).
struct ExpTransformTerm {
    Vec shift;                      // actual contour shift of this term
    Cplx value;
    Eigen::VectorXcd grad;
    Eigen::MatrixXcd hess;
};

inline std::vector<ExpTransformTerm> exp_transform_terms(const ComponentSpec& s, const Vec& u,
                                                         const DampingSpec& ds, int max_nu) {
    if (!loss_strip_contains(s, ds))
        throw StripViolation("exponential transform requires K^- < beta < K^+");
    const unsigned n_terms = 1u << s.k;
    std::vector<ExpTransformTerm> terms(n_terms);
    for (unsigned t = 0; t < n_terms; ++t) {
        ExpTransformTerm& term = terms[t];
        term.shift = exp_term_shift(s, ds, t);
        std::vector<Cplx> f(s.k), df(s.k);
        for (int j = 0; j < s.k; ++j) {
            if ((t >> j) & 1u) {
                f[j] = 1.0 / Cplx(ds.K_plus[j] - s.beta, u[j]);
                if (max_nu >= 1) df[j] = s.beta * f[j] + 1.0;
            } else {
                f[j] = 1.0 / Cplx(s.beta - ds.K_minus[j], -u[j]);
                if (max_nu >= 1) df[j] = s.beta * f[j] - 1.0;
            }
        }
        Cplx prod0 = s.coeff;
        for (int j = 0; j < s.k; ++j) prod0 *= f[j];
        term.value = prod0;
        if (max_nu >= 1) {
            term.grad.resize(s.k);
            for (int j = 0; j < s.k; ++j) {
                Cplx v = s.coeff;
                for (int l = 0; l < s.k; ++l) v *= (l == j) ? df[l] : f[l];
                term.grad[j] = v;
            }
        }
        if (max_nu >= 2) {
            // Differentiation acts per coordinate as multiplication by
            // -(shift_j - i u_j), so the Hessian transform is the value times
            // the outer product of those operator factors.
            term.hess.resize(s.k, s.k);
            for (int j = 0; j < s.k; ++j) {
                Cplx oj = -Cplx(term.shift[j], -u[j]);
                for (int l = 0; l < s.k; ++l) {
                    Cplx ol = -Cplx(term.shift[l], -u[l]);
                    term.hess(j, l) = oj * ol * prod0;
                }
            }
        }
    }
    return terms;
}

} // namespace msrm

#endif
