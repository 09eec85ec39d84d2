#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "msrm/damping.hpp"
#include "msrm/surrogates.hpp"

using namespace msrm;

namespace {

NIGModel nig3d() {
    Vec beta(3), mu(3);
    beta << -64.27, 41.45, 7.35;
    mu << 0.00084, 0.00024, 0.00055;
    Mat G(3, 3);
    G << 2.338, 1.796, 2.080, 1.796, 2.327, 2.088, 2.080, 2.088, 2.555;
    return NIGModel(365.78, beta, 0.373, mu, G);
}

ComponentSpec qpc_square() {
    LossModel q(LossFamily::Qpc, 1, 0.0);
    return components(q)[1];
}

} // namespace

TEST_CASE("peak objective closed form for the QPC square block") {
    // standard normal marginal, m = 0, K = -1:
    // -ln(2pi) + 0 + 1/2 + ln(1/2 * 2!/1) = -ln(2pi) + 1/2
    auto sq = qpc_square();
    GaussianModel marg(Vec::Zero(1), Mat::Identity(1, 1));
    DampingSpec ds;
    ds.K = Vec::Constant(1, -1.0);
    double v = peak_objective(sq, RiskFactorModel(marg), 0, ds, Vec::Zero(1));
    REQUIRE(v == Catch::Approx(-std::log(two_pi) + 0.5).margin(1e-12));
}

TEST_CASE("peak objective equals the log integrand magnitude at u = 0") {
    auto sq = qpc_square();
    RiskFactorModel marg = GaussianModel(Vec::Constant(1, 0.2), Mat::Constant(1, 1, 1.7));
    TransformConfig tc;
    PreparedComponent pc{sq, marg, make_cube_map(marg, tc)};
    std::mt19937_64 rng(21);
    std::uniform_real_distribution<double> ud(0.1, 3.0);
    for (int t = 0; t < 20; ++t) {
        DampingSpec ds;
        ds.K = Vec::Constant(1, -ud(rng));
        Vec m = Vec::Constant(1, ud(rng) - 1.5);
        double v = peak_objective(sq, marg, 0, ds, m);
        Cplx h0;
        component_integrand_u(pc, m, ds)(Vec::Zero(1), h0, nullptr, nullptr);
        REQUIRE(v == Catch::Approx(std::log(std::abs(h0))).margin(1e-12));
    }

    // exponential pair version: objective is the log of the summed magnitudes
    LossModel e(LossFamily::Exponential, 1, 0.0, 1.0);
    ComponentSpec se = components(e).front();
    DampingSpec ds;
    ds.two_sided = true;
    ds.K_minus = Vec::Constant(1, -0.3);
    ds.K_plus = Vec::Constant(1, 2.1);
    Vec m = Vec::Constant(1, 0.4);
    double v = peak_objective(se, marg, 0, ds, m);
    auto terms = exp_transform_terms(se, Vec::Zero(1), ds, 0);
    double total = 0.0;
    for (unsigned t = 0; t < terms.size(); ++t) {
        CVec y(1);
        y[0] = Cplx(0.0, terms[t].shift[0]);
        total += std::abs(std::exp(Cplx(terms[t].shift.dot(m), 0.0)) *
                          extended_cf(marg, y) * terms[t].value) /
                 two_pi;
    }
    REQUIRE(v == Catch::Approx(std::log(total)).margin(1e-12));
}

TEST_CASE("QPC/Gaussian selection matches a dense grid search") {
    auto sq = qpc_square();
    RiskFactorModel marg = GaussianModel(Vec::Zero(1), Mat::Identity(1, 1));
    DampingConfig cfg;
    cfg.penalty_lambda = 0.0;
    Vec m = Vec::Constant(1, 0.5);
    auto res = select_damping(sq, marg, 0, m, cfg);
    REQUIRE_FALSE(res.stalled);

    double best_k = 0.0, best_v = 1e300;
    for (int i = 1; i < 100000; ++i) {
        double k = -30.0 + 30.0 * (i / 100000.0);
        if (k > -1e-3) break;
        DampingSpec ds;
        ds.K = Vec::Constant(1, k);
        double v = peak_objective(sq, marg, 0, ds, m);
        if (v < best_v) {
            best_v = v;
            best_k = k;
        }
    }
    REQUIRE(res.spec.K[0] == Catch::Approx(best_k).margin(1e-3));
    REQUIRE(res.objective <= best_v + 1e-8);
}

TEST_CASE("selected point beats random strip probes") {
    auto sq = qpc_square();
    RiskFactorModel marg = marginal(nig3d(), {1});
    DampingConfig cfg;
    cfg.penalty_lambda = 0.3;
    Vec m = Vec::Constant(1, -0.4);
    auto res = select_damping(sq, marg, 0, m, cfg);
    const Mat W = std::get<NIGModel>(marg).Gamma;
    auto penalized = [&](const Vec& K) {
        DampingSpec ds;
        ds.K = K;
        return peak_objective(sq, marg, 0, ds, m) + 0.5 * cfg.penalty_lambda * K.dot(W * K);
    };
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> ud(1e-3, 60.0);
    int checked = 0;
    for (int t = 0; t < 400 && checked < 100; ++t) {
        Vec K = Vec::Constant(1, -ud(rng));
        if (!cf_strip_contains(marg, K)) continue;
        ++checked;
        REQUIRE(res.objective <= penalized(K) + 1e-9);
    }
    REQUIRE(checked >= 100);
}

TEST_CASE("NIG regularization pulls the optimum off the strip boundary") {
    auto sq = qpc_square();
    RiskFactorModel marg = marginal(nig3d(), {1});
    Vec m = Vec::Constant(1, -0.8);
    DampingConfig free_cfg;
    free_cfg.penalty_lambda = 0.0;
    free_cfg.max_inner_iters = 2000;
    DampingConfig reg_cfg;
    reg_cfg.penalty_lambda = 0.3;
    auto free_res = select_damping(sq, marg, 0, m, free_cfg);
    auto reg_res = select_damping(sq, marg, 0, m, reg_cfg);
    REQUIRE(std::abs(reg_res.spec.K[0]) < std::abs(free_res.spec.K[0]));
}

TEST_CASE("selection is deterministic") {
    auto sq = qpc_square();
    RiskFactorModel marg = GaussianModel(Vec::Zero(1), Mat::Identity(1, 1));
    DampingConfig cfg;
    Vec m = Vec::Constant(1, 0.3);
    auto a = select_damping(sq, marg, 0, m, cfg);
    auto b = select_damping(sq, marg, 0, m, cfg);
    REQUIRE(a.spec.K == b.spec.K);
}

TEST_CASE("exponential pair selection stays in the strip and beats probes") {
    LossModel e(LossFamily::Exponential, 2, 1.0, 1.0);
    const ComponentSpec* coup = nullptr;
    auto comps = components(e);
    for (auto& s : comps)
        if (s.kind == ComponentKind::ExpCoupling) coup = &s;
    Mat S(2, 2);
    S << 1.0, -0.5, -0.5, 1.0;
    RiskFactorModel marg = GaussianModel(Vec::Zero(2), S);
    DampingConfig cfg;
    Vec m = Vec::Constant(2, 0.4);
    auto res = select_damping(*coup, marg, 0, m, cfg);
    REQUIRE(loss_strip_contains(*coup, res.spec, cfg.strip_margin * 0.999));

    std::mt19937_64 rng(8);
    std::uniform_real_distribution<double> ud(0.0, 4.0);
    for (int t = 0; t < 100; ++t) {
        DampingSpec probe;
        probe.two_sided = true;
        probe.K_minus = Vec(2);
        probe.K_plus = Vec(2);
        for (int j = 0; j < 2; ++j) {
            probe.K_minus[j] = coup->beta - cfg.strip_margin - ud(rng);
            probe.K_plus[j] = coup->beta + cfg.strip_margin + ud(rng);
        }
        double v = peak_objective(*coup, marg, 0, probe, m);
        REQUIRE(res.objective <= v + 1e-9);
    }
}

TEST_CASE("ridge bound: integrand magnitude peaks at u = 0 at the selected K") {
    auto sq = qpc_square();
    RiskFactorModel marg = marginal(nig3d(), {2});
    DampingConfig cfg;
    cfg.penalty_lambda = 0.3;
    Vec m = Vec::Constant(1, -0.2);
    auto res = select_damping(sq, marg, 0, m, cfg);
    TransformConfig tc;
    tc.c_scale = 8.0;
    PreparedComponent pc{sq, marg, make_cube_map(marg, tc)};
    auto h = component_integrand_u(pc, m, res.spec);
    Cplx h0;
    h(Vec::Zero(1), h0, nullptr, nullptr);
    double peak = std::abs(h0);
    std::mt19937_64 rng(13);
    std::uniform_real_distribution<double> ud(-80.0, 80.0);
    for (int t = 0; t < 1000; ++t) {
        Cplx hu;
        h(Vec::Constant(1, ud(rng)), hu, nullptr, nullptr);
        REQUIRE(std::abs(hu) <= peak * (1.0 + 1e-12));
    }
}

TEST_CASE("difference damping: degenerate fallback and grid optimality") {
    auto sq = qpc_square();
    RiskFactorModel marg = GaussianModel(Vec::Zero(1), Mat::Identity(1, 1));
    DampingConfig cfg;
    Vec m = Vec::Constant(1, 0.5);

    // identical iterates fall back to the plain selection at m_j
    auto plain = select_damping(sq, marg, 0, m, cfg);
    auto degen = select_damping_for_difference(sq, marg, 0, m, m, cfg);
    REQUIRE(degen.spec.K[0] == Catch::Approx(plain.spec.K[0]).margin(1e-12));

    Vec m_prev = Vec::Constant(1, 0.4);
    auto res = select_damping_for_difference(sq, marg, 0, m, m_prev, cfg);
    REQUIRE(res.spec.K[0] <= -cfg.strip_margin);

    double best_k = 0.0, best_v = 1e300;
    for (int i = 1; i < 100000; ++i) {
        double k = -30.0 + 30.0 * (i / 100000.0);
        if (k > -1e-3) break;
        DampingSpec ds;
        ds.K = Vec::Constant(1, k);
        double v = difference_peak_objective(sq, marg, ds, m, m_prev);
        if (v < best_v) {
            best_v = v;
            best_k = k;
        }
    }
    REQUIRE(res.spec.K[0] == Catch::Approx(best_k).margin(1e-3));
}

TEST_CASE("warm start reproduces the cold-start optimum") {
    auto sq = qpc_square();
    RiskFactorModel marg = GaussianModel(Vec::Zero(1), Mat::Identity(1, 1));
    DampingConfig cfg;
    Vec m = Vec::Constant(1, 0.45);
    auto cold = select_damping(sq, marg, 0, m, cfg);
    DampingSpec warm_from;
    warm_from.K = Vec::Constant(1, -2.5);
    auto warm = select_damping(sq, marg, 0, m, cfg, &warm_from);
    REQUIRE(warm.spec.K[0] == Catch::Approx(cold.spec.K[0]).margin(1e-6));
}
