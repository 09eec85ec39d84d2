#ifndef MSRM_DAMPING_HPP
#define MSRM_DAMPING_HPP

#include <cmath>
#include <functional>
#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "msrm/errors.hpp"
#include "msrm/loss_models.hpp"
#include "msrm/risk_factors.hpp"
#include "msrm/special.hpp"

namespace msrm {

struct DampingConfig {
    double penalty_lambda = 0.0;   // Tikhonov weight: 0 for Gaussian runs, 0.3 for NIG
    double strip_margin = 1e-3;    // distance kept from the loss-strip boundary
    double inner_tol = 1e-8;       // projected-gradient tolerance of the inner solver
    int max_inner_iters = 400;
    double nig_radicand_rel_floor = 1e-6;  // radicand >= floor * alpha^2

    void validate() const {
        if (penalty_lambda < 0.0) throw std::invalid_argument("damping: lambda must be >= 0");
        if (!(strip_margin > 0.0)) throw std::invalid_argument("damping: margin must be > 0");
    }
};

/// Per-component contour selections, indexed by ComponentSpec::id. One entry
/// is selected at nu = 0 and reused for nu = 1, 2 (the admissible domains of
/// these loss families coincide across derivative orders).
struct DampingAssignment {
    std::vector<std::optional<DampingSpec>> by_component;
    bool stall_warning = false;

    const DampingSpec& at(int id) const {
        if (id < 0 || id >= static_cast<int>(by_component.size()) || !by_component[id])
            throw std::out_of_range("damping assignment missing component " + std::to_string(id));
        return *by_component[id];
    }
};

namespace detail {

inline double log_cf_at_iK(const RiskFactorModel& marg, const Vec& K) {
    if (const auto* g = std::get_if<GaussianModel>(&marg))
        return -K.dot(g->mu) + 0.5 * K.dot(g->Sigma * K);
    const auto& nig = std::get<NIGModel>(marg);
    Vec t = nig.beta - K;
    double rad = nig.alpha * nig.alpha - t.dot(nig.Gamma * t);
    if (rad <= 0.0) throw StripViolation("damping: K outside NIG CF strip");
    return -K.dot(nig.mu) + nig.delta * (nig.gamma() - std::sqrt(rad));
}

inline Vec grad_log_cf_at_iK(const RiskFactorModel& marg, const Vec& K) {
    if (const auto* g = std::get_if<GaussianModel>(&marg))
        return -g->mu + g->Sigma * K;
    const auto& nig = std::get<NIGModel>(marg);
    Vec t = nig.beta - K;
    double rad = nig.alpha * nig.alpha - t.dot(nig.Gamma * t);
    if (rad <= 0.0) throw StripViolation("damping: K outside NIG CF strip");
    return -nig.mu - nig.delta * (nig.Gamma * t) / std::sqrt(rad);
}

inline double log_factorial3(int n) {
    static const double v[3] = {0.0, 0.0, 0.6931471805599453};
    return v[n];
}

/// log of the Euclidean norm of the QPC transform block at u = 0, in log space.
inline double qpc_log_transform_norm(const ComponentSpec& s, int nu, const Vec& K) {
    const int th = s.theta;
    // per-coordinate factors ln f^{(v)}_j = ln th! - (th-v+1) ln(-K_j)
    auto lf = [&](int v, int j) { return log_factorial3(th) - (th - v + 1) * std::log(-K[j]); };
    double logc = std::log(s.coeff);
    if (nu == 0) {
        double acc = logc;
        for (int j = 0; j < s.k; ++j) acc += lf(0, j);
        return acc;
    }
    if (nu == 1) {
        // vector with entries c * f1_j * prod_{l != j} f0_l
        double mx = -std::numeric_limits<double>::infinity();
        std::vector<double> lv(s.k);
        for (int j = 0; j < s.k; ++j) {
            double acc = logc;
            for (int l = 0; l < s.k; ++l) acc += (l == j) ? lf(1, l) : lf(0, l);
            lv[j] = acc;
            mx = std::max(mx, acc);
        }
        double ssum = 0.0;
        for (double v : lv) ssum += std::exp(2.0 * (v - mx));
        return mx + 0.5 * std::log(ssum);
    }
    // nu == 2: Frobenius norm of the entrywise transform
    double mx = -std::numeric_limits<double>::infinity();
    std::vector<double> lv;
    lv.reserve(static_cast<std::size_t>(s.k) * s.k);
    for (int j = 0; j < s.k; ++j)
        for (int l = 0; l < s.k; ++l) {
            double acc = logc;
            for (int t = 0; t < s.k; ++t) {
                int v = (t == j) + (t == l);
                acc += lf(v, t);
            }
            lv.push_back(acc);
            mx = std::max(mx, acc);
        }
    double ssum = 0.0;
    for (double v : lv) ssum += std::exp(2.0 * (v - mx));
    return mx + 0.5 * std::log(ssum);
}

/// log of the norm of one exponential contour term's transform at u = 0.
inline double exp_term_log_norm(const ComponentSpec& s, const DampingSpec& ds, unsigned term,
                                int nu) {
    double acc = std::log(s.coeff);
    for (int j = 0; j < s.k; ++j) {
        bool pos = (term >> j) & 1u;
        double f = pos ? 1.0 / (ds.K_plus[j] - s.beta) : 1.0 / (s.beta - ds.K_minus[j]);
        acc += std::log(f);
    }
    if (nu == 0) return acc;
    // distributional derivative factors beta*f +/- 1 replace one (nu=1) or two
    // (nu=2, via the squared operator factor) coordinate factors; at u = 0 the
    // operator factor is -shift_j.
    Vec shift = exp_term_shift(s, ds, term);
    if (nu == 1) {
        double mx = -std::numeric_limits<double>::infinity();
        std::vector<double> lv(s.k);
        for (int j = 0; j < s.k; ++j) {
            lv[j] = acc + std::log(std::abs(shift[j]) + 1e-300);
            mx = std::max(mx, lv[j]);
        }
        double ssum = 0.0;
        for (double v : lv) ssum += std::exp(2.0 * (v - mx));
        return mx + 0.5 * std::log(ssum);
    }
    double mx = -std::numeric_limits<double>::infinity();
    std::vector<double> lv;
    for (int j = 0; j < s.k; ++j)
        for (int l = 0; l < s.k; ++l) {
            double v = acc + std::log(std::abs(shift[j]) + 1e-300) +
                       std::log(std::abs(shift[l]) + 1e-300);
            lv.push_back(v);
            mx = std::max(mx, v);
        }
    double ssum = 0.0;
    for (double v : lv) ssum += std::exp(2.0 * (v - mx));
    return mx + 0.5 * std::log(ssum);
}

inline double log_sum_exp(const std::vector<double>& xs) {
    double mx = -std::numeric_limits<double>::infinity();
    for (double x : xs) mx = std::max(mx, x);
    if (!std::isfinite(mx)) return mx;
    double s = 0.0;
    for (double x : xs) s += std::exp(x - mx);
    return mx + std::log(s);
}

} // namespace detail

/// Log-peak objective: ln ||h^{(nu)}_{k,p}(0; m, K)||. For exponential blocks
/// the 2^k contour terms enter as a sum of magnitudes.
inline double peak_objective(const ComponentSpec& s, const RiskFactorModel& marg, int nu,
                             const DampingSpec& ds, const Vec& m_kp) {
    const double base = -s.k * std::log(two_pi);
    if (s.kind == ComponentKind::QpcSquare || s.kind == ComponentKind::QpcPair) {
        for (int j = 0; j < s.k; ++j)
            if (!(ds.K[j] < 0.0)) throw StripViolation("peak_objective: QPC needs K < 0");
        return base + ds.K.dot(m_kp) + detail::log_cf_at_iK(marg, ds.K) +
               detail::qpc_log_transform_norm(s, nu, ds.K);
    }
    if (s.kind == ComponentKind::ExpSingleton || s.kind == ComponentKind::ExpCoupling) {
        if (!loss_strip_contains(s, ds))
            throw StripViolation("peak_objective: exponential pair outside strip");
        std::vector<double> logs;
        const unsigned nt = 1u << s.k;
        logs.reserve(nt);
        for (unsigned t = 0; t < nt; ++t) {
            Vec shift = exp_term_shift(s, ds, t);
            logs.push_back(shift.dot(m_kp) + detail::log_cf_at_iK(marg, shift) +
                           detail::exp_term_log_norm(s, ds, t, nu));
        }
        return base + detail::log_sum_exp(logs);
    }
    throw std::invalid_argument("peak_objective: not a Fourier component");
}

struct DampingResult {
    DampingSpec spec;
    double objective = 0.0;  // penalized value at the returned point
    bool stalled = false;
};

namespace detail {

/// Weighting matrix of the Tikhonov term: dispersion matrix of the marginal.
inline Mat damping_weight_matrix(const RiskFactorModel& marg) {
    if (const auto* g = std::get_if<GaussianModel>(&marg)) return g->Sigma;
    return std::get<NIGModel>(marg).Gamma;
}

struct InnerProblem {
    std::function<double(const Vec&)> value;      // penalized objective
    std::function<bool(const Vec&)> feasible;     // margin-shrunk strip test
    std::function<Vec(const Vec&)> gradient;      // analytic or FD
    Vec x0;
};

/// Projected BFGS with a stay-feasible backtracking line search.
inline std::pair<Vec, bool> minimize_inner(const InnerProblem& prob, double tol, int max_iters) {
    Vec x = prob.x0;
    if (!prob.feasible(x)) throw StripEmpty("damping: infeasible starting point");
    const int n = static_cast<int>(x.size());
    Mat H = Mat::Identity(n, n);
    double fx = prob.value(x);
    Vec g = prob.gradient(x);
    Vec best_x = x;
    double best_f = fx;
    for (int it = 0; it < max_iters; ++it) {
        if (g.norm() <= tol) return {x, false};
        Vec dir = -(H * g);
        if (dir.dot(g) >= 0.0) dir = -g;
        // fraction to boundary, then Armijo
        double alpha = 1.0;
        int shrink = 0;
        while (shrink < 90 && !prob.feasible(x + alpha * dir)) {
            alpha *= 0.5;
            ++shrink;
        }
        if (shrink == 90) {
            dir = -g;
            alpha = 1.0;
            shrink = 0;
            while (shrink < 90 && !prob.feasible(x + alpha * dir)) {
                alpha *= 0.5;
                ++shrink;
            }
            if (shrink == 90) return {best_x, true};
        }
        const double slope = g.dot(dir);
        double fnew = 0.0;
        Vec xnew;
        bool accepted = false;
        while (alpha > 1e-18) {
            xnew = x + alpha * dir;
            if (prob.feasible(xnew)) {
                fnew = prob.value(xnew);
                if (fnew <= fx + 1e-4 * alpha * slope) {
                    accepted = true;
                    break;
                }
            }
            alpha *= 0.5;
        }
        if (!accepted) return {best_x, g.norm() > tol};
        Vec gnew = prob.gradient(xnew);
        Vec s = xnew - x;
        Vec y = gnew - g;
        double ys = y.dot(s);
        if (ys > 1e-12 * s.norm() * y.norm()) {
            // BFGS update of the inverse Hessian
            Mat I = Mat::Identity(n, n);
            Mat V = I - (s * y.transpose()) / ys;
            H = V * H * V.transpose() + (s * s.transpose()) / ys;
        }
        x = xnew;
        fx = fnew;
        g = gnew;
        if (fx < best_f) {
            best_f = fx;
            best_x = x;
        }
    }
    return {best_x, true};
}

inline Vec fd_gradient(const std::function<double(const Vec&)>& f,
                       const std::function<bool(const Vec&)>& feasible, const Vec& x) {
    const int n = static_cast<int>(x.size());
    Vec g(n);
    for (int j = 0; j < n; ++j) {
        double h = 1e-6 * std::max(1.0, std::abs(x[j]));
        Vec xp = x, xm = x;
        xp[j] += h;
        xm[j] -= h;
        if (feasible(xp) && feasible(xm)) {
            g[j] = (f(xp) - f(xm)) / (2.0 * h);
        } else if (feasible(xp)) {
            g[j] = (f(xp) - f(x)) / h;
        } else if (feasible(xm)) {
            g[j] = (f(x) - f(xm)) / h;
        } else {
            g[j] = 0.0;
        }
    }
    return g;
}

inline bool nig_slack_ok(const RiskFactorModel& marg, const Vec& K, double rel_floor) {
    if (const auto* nig = std::get_if<NIGModel>(&marg)) {
        Vec t = nig->beta - K;
        return nig->alpha * nig->alpha - t.dot(nig->Gamma * t) >=
               rel_floor * nig->alpha * nig->alpha;
    }
    return true;
}

} // namespace detail

/// Contour selection for one component at the current allocation: minimizes
/// the log-peak objective plus (lambda/2)||K||_W^2 over the margin-shrunk
/// strip. Selection always runs at nu = 0; the K is reused for nu = 1, 2.
inline DampingResult select_damping(const ComponentSpec& s, const RiskFactorModel& marg,
                                    int /*nu*/, const Vec& m_kp, const DampingConfig& cfg,
                                    const DampingSpec* warm = nullptr) {
    cfg.validate();
    const Mat W = detail::damping_weight_matrix(marg);
    const double lam = cfg.penalty_lambda;

    if (s.kind == ComponentKind::QpcSquare || s.kind == ComponentKind::QpcPair) {
        detail::InnerProblem prob;
        prob.feasible = [&](const Vec& K) {
            for (int j = 0; j < s.k; ++j)
                if (!(K[j] <= -cfg.strip_margin)) return false;
            return detail::nig_slack_ok(marg, K, cfg.nig_radicand_rel_floor);
        };
        prob.value = [&, m_kp](const Vec& K) {
            DampingSpec ds;
            ds.K = K;
            return peak_objective(s, marg, 0, ds, m_kp) + 0.5 * lam * K.dot(W * K);
        };
        prob.gradient = [&, m_kp](const Vec& K) {
            Vec g = m_kp + detail::grad_log_cf_at_iK(marg, K);
            for (int j = 0; j < s.k; ++j) g[j] += -(s.theta + 1.0) / K[j];
            if (lam > 0.0) g += lam * (W * K);
            return g;
        };
        Vec x0 = Vec::Constant(s.k, -1.0);
        if (warm && warm->K.size() == s.k && prob.feasible(warm->K)) x0 = warm->K;
        while (!prob.feasible(x0)) x0 *= 0.5;  // NIG ellipsoid can exclude K = -1
        prob.x0 = x0;
        auto [x, stalled] = detail::minimize_inner(prob, cfg.inner_tol, cfg.max_inner_iters);
        DampingResult out;
        out.spec.K = x;
        out.objective = prob.value(x);
        out.stalled = stalled;
        return out;
    }

    if (s.kind == ComponentKind::ExpSingleton || s.kind == ComponentKind::ExpCoupling) {
        // joint (K^-, K^+) problem in 2k variables, stacked [K^-; K^+]
        const int k = s.k;
        auto unpack = [k](const Vec& x) {
            DampingSpec ds;
            ds.two_sided = true;
            ds.K_minus = x.head(k);
            ds.K_plus = x.tail(k);
            return ds;
        };
        detail::InnerProblem prob;
        prob.feasible = [&, unpack](const Vec& x) {
            DampingSpec ds = unpack(x);
            for (int j = 0; j < k; ++j) {
                if (!(ds.K_minus[j] <= s.beta - cfg.strip_margin)) return false;
                if (!(ds.K_plus[j] >= s.beta + cfg.strip_margin)) return false;
            }
            const unsigned nt = 1u << k;
            for (unsigned t = 0; t < nt; ++t)
                if (!detail::nig_slack_ok(marg, exp_term_shift(s, ds, t),
                                          cfg.nig_radicand_rel_floor))
                    return false;
            return true;
        };
        prob.value = [&, unpack, m_kp](const Vec& x) {
            DampingSpec ds = unpack(x);
            double pen = 0.0;
            if (lam > 0.0)
                pen = 0.5 * lam *
                      (ds.K_minus.dot(W * ds.K_minus) + ds.K_plus.dot(W * ds.K_plus));
            return peak_objective(s, marg, 0, ds, m_kp) + pen;
        };
        prob.gradient = [&](const Vec& x) {
            return detail::fd_gradient(prob.value, prob.feasible, x);
        };
        Vec x0(2 * k);
        x0.head(k).setConstant(s.beta - 1.0);
        x0.tail(k).setConstant(s.beta + 1.0);
        if (warm && warm->two_sided && warm->K_minus.size() == k) {
            Vec w0(2 * k);
            w0 << warm->K_minus, warm->K_plus;
            if (prob.feasible(w0)) x0 = w0;
        }
        for (int tries = 0; tries < 60 && !prob.feasible(x0); ++tries) {
            // pull the pair toward beta until every contour term is admissible
            x0.head(k) = s.beta - 0.5 * (s.beta - x0.head(k).array());
            x0.tail(k) = s.beta + 0.5 * (x0.tail(k).array() - s.beta);
        }
        if (!prob.feasible(x0)) throw StripEmpty("damping: no admissible exponential pair");
        prob.x0 = x0;
        auto [x, stalled] = detail::minimize_inner(prob, cfg.inner_tol, cfg.max_inner_iters);
        DampingResult out;
        out.spec = unpack(x);
        out.objective = prob.value(x);
        out.stalled = stalled;
        return out;
    }
    throw std::invalid_argument("select_damping: not a Fourier component");
}

/// log |h(0; m_j, K) - h(0; m_prev, K)| for the multilevel difference
/// integrand (sum over contour terms for exponential blocks).
inline double difference_peak_objective(const ComponentSpec& s, const RiskFactorModel& marg,
                                        const DampingSpec& ds, const Vec& m_j,
                                        const Vec& m_prev) {
    const double base = -s.k * std::log(two_pi);
    if (s.kind == ComponentKind::QpcSquare || s.kind == ComponentKind::QpcPair) {
        double common = detail::log_cf_at_iK(marg, ds.K) +
                        detail::qpc_log_transform_norm(s, 0, ds.K);
        double a = ds.K.dot(m_j), b = ds.K.dot(m_prev);
        double mx = std::max(a, b);
        double diff = std::abs(std::exp(a - mx) - std::exp(b - mx));
        return base + common + mx + std::log(diff + 1e-300);
    }
    const unsigned nt = 1u << s.k;
    double total = 0.0;
    double scale = -std::numeric_limits<double>::infinity();
    std::vector<double> la(nt), lb(nt);
    for (unsigned t = 0; t < nt; ++t) {
        Vec shift = exp_term_shift(s, ds, t);
        double common = detail::log_cf_at_iK(marg, shift) + detail::exp_term_log_norm(s, ds, t, 0);
        la[t] = common + shift.dot(m_j);
        lb[t] = common + shift.dot(m_prev);
        scale = std::max(scale, std::max(la[t], lb[t]));
    }
    for (unsigned t = 0; t < nt; ++t) total += std::exp(la[t] - scale) - std::exp(lb[t] - scale);
    return base + scale + std::log(std::abs(total) + 1e-300);
}

/// Single contour selection for a difference integrand across consecutive
/// iterates: minimizes the peak of h(.; m_j) - h(.; m_prev) at u = 0 over the
/// shared strip. A vanishing difference at the starting point falls back to
/// select_damping at m_j.
inline DampingResult select_damping_for_difference(const ComponentSpec& s,
                                                   const RiskFactorModel& marg, int nu,
                                                   const Vec& m_j, const Vec& m_prev,
                                                   const DampingConfig& cfg,
                                                   const DampingSpec* warm = nullptr) {
    cfg.validate();
    DampingResult init = select_damping(s, marg, nu, m_j, cfg, warm);
    double d0 = difference_peak_objective(s, marg, init.spec, m_j, m_prev);
    if (d0 <= std::log(1e-300) + 1.0) return init;  // DegenerateDifference fallback

    const Mat W = detail::damping_weight_matrix(marg);
    const double lam = cfg.penalty_lambda;

    if (s.kind == ComponentKind::QpcSquare || s.kind == ComponentKind::QpcPair) {
        detail::InnerProblem prob;
        prob.feasible = [&](const Vec& K) {
            for (int j = 0; j < s.k; ++j)
                if (!(K[j] <= -cfg.strip_margin)) return false;
            return detail::nig_slack_ok(marg, K, cfg.nig_radicand_rel_floor);
        };
        prob.value = [&](const Vec& K) {
            DampingSpec ds;
            ds.K = K;
            return difference_peak_objective(s, marg, ds, m_j, m_prev) +
                   0.5 * lam * K.dot(W * K);
        };
        prob.gradient = [&](const Vec& x) {
            return detail::fd_gradient(prob.value, prob.feasible, x);
        };
        prob.x0 = init.spec.K;
        auto [x, stalled] = detail::minimize_inner(prob, std::max(cfg.inner_tol, 1e-7),
                                                   cfg.max_inner_iters);
        DampingResult out;
        out.spec.K = x;
        out.objective = prob.value(x);
        out.stalled = stalled;
        return out;
    }

    const int k = s.k;
    auto unpack = [k](const Vec& x) {
        DampingSpec ds;
        ds.two_sided = true;
        ds.K_minus = x.head(k);
        ds.K_plus = x.tail(k);
        return ds;
    };
    detail::InnerProblem prob;
    prob.feasible = [&, unpack](const Vec& x) {
        DampingSpec ds = unpack(x);
        for (int j = 0; j < k; ++j) {
            if (!(ds.K_minus[j] <= s.beta - cfg.strip_margin)) return false;
            if (!(ds.K_plus[j] >= s.beta + cfg.strip_margin)) return false;
        }
        const unsigned nt = 1u << k;
        for (unsigned t = 0; t < nt; ++t)
            if (!detail::nig_slack_ok(marg, exp_term_shift(s, ds, t),
                                      cfg.nig_radicand_rel_floor))
                return false;
        return true;
    };
    prob.value = [&, unpack](const Vec& x) {
        DampingSpec ds = unpack(x);
        double pen = 0.0;
        if (lam > 0.0)
            pen = 0.5 * lam * (ds.K_minus.dot(W * ds.K_minus) + ds.K_plus.dot(W * ds.K_plus));
        return difference_peak_objective(s, marg, ds, m_j, m_prev) + pen;
    };
    prob.gradient = [&](const Vec& x) {
        return detail::fd_gradient(prob.value, prob.feasible, x);
    };
    Vec x0(2 * k);
    x0 << init.spec.K_minus, init.spec.K_plus;
    prob.x0 = x0;
    auto [x, stalled] =
        detail::minimize_inner(prob, std::max(cfg.inner_tol, 1e-7), cfg.max_inner_iters);
    DampingResult out;
    out.spec = unpack(x);
    out.objective = prob.value(x);
    out.stalled = stalled;
    return out;
}

} // namespace msrm

#endif
