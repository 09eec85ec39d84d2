#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "msrm/surrogates.hpp"
#include "oracles.hpp"

using namespace msrm;

namespace {

// closed forms for the bivariate Gaussian exponential model, alpha = beta = 1,
// unit variances, correlation rho
struct Exp2dClosedForm {
    double rho;
    double g(const Vec& m) const {
        return 0.5 * (std::exp(0.5 - m[0]) + std::exp(0.5 - m[1]) +
                      std::exp(1.0 + rho - m[0] - m[1])) -
               1.5;
    }
    Vec grad(const Vec& m) const {
        Vec g(2);
        double c = std::exp(1.0 + rho - m[0] - m[1]);
        g[0] = -0.5 * (std::exp(0.5 - m[0]) + c);
        g[1] = -0.5 * (std::exp(0.5 - m[1]) + c);
        return g;
    }
    Mat hess(const Vec& m) const {
        Mat h(2, 2);
        double c = std::exp(1.0 + rho - m[0] - m[1]);
        h(0, 0) = 0.5 * (std::exp(0.5 - m[0]) + c);
        h(1, 1) = 0.5 * (std::exp(0.5 - m[1]) + c);
        h(0, 1) = h(1, 0) = 0.5 * c;
        return h;
    }
};

SurrogateContext exp2d_ctx(double rho, std::uint64_t N = 2048, int S = 32,
                           std::uint64_t seed = 1) {
    LossModel e(LossFamily::Exponential, 2, 1.0, 1.0);
    Mat Sg(2, 2);
    Sg << 1.0, rho, rho, 1.0;
    GaussianModel g(Vec::Zero(2), Sg);
    TransformConfig tc;
    tc.c_scale = 6.0;
    DampingConfig dc;
    RQMCDesign design;
    design.N = N;
    design.S_shift = S;
    design.seed = seed;
    return make_context(e, RiskFactorModel(g), tc, dc, design);
}

SurrogateContext nig_qpc_ctx(std::uint64_t N = 2048, int S = 32, std::uint64_t seed = 1) {
    Vec beta(3), mu(3);
    beta << -64.27, 41.45, 7.35;
    mu << 0.00084, 0.00024, 0.00055;
    Mat G(3, 3);
    G << 2.338, 1.796, 2.080, 1.796, 2.327, 2.088, 2.080, 2.088, 2.555;
    NIGModel nig(365.78, beta, 0.373, mu, G);
    LossModel q(LossFamily::Qpc, 3, 1.0);
    TransformConfig tc;
    tc.c_scale = 8.0;
    DampingConfig dc;
    dc.penalty_lambda = 0.3;
    RQMCDesign design;
    design.N = N;
    design.S_shift = S;
    design.seed = seed;
    return make_context(q, RiskFactorModel(nig), tc, dc, design);
}

} // namespace

TEST_CASE("assembled 1D integrand value at the QPC anchor point") {
    // (2pi)^-1 e^0 e^{1/2} * 1 at u = 0, m = 0, K = -1
    LossModel q(LossFamily::Qpc, 1, 0.0);
    GaussianModel g(Vec::Zero(1), Mat::Identity(1, 1));
    TransformConfig tc;
    auto marg = RiskFactorModel(g);
    PreparedComponent pc{components(q)[1], marg, make_cube_map(marg, tc)};
    DampingSpec ds;
    ds.K = Vec::Constant(1, -1.0);
    Cplx v0;
    component_integrand_u(pc, Vec::Zero(1), ds)(Vec::Zero(1), v0, nullptr, nullptr);
    REQUIRE(v0.real() == Catch::Approx(std::exp(0.5) / two_pi).epsilon(1e-12));
    REQUIRE(v0.imag() == Catch::Approx(0.0).margin(1e-15));
}

TEST_CASE("component integral equals the Monte Carlo block expectation") {
    // 1D exponential singleton block under N(0,1), m = 0.2
    LossModel e(LossFamily::Exponential, 1, 0.0, 1.0);
    GaussianModel g(Vec::Zero(1), Mat::Identity(1, 1));
    TransformConfig tc;
    auto marg = RiskFactorModel(g);
    PreparedComponent pc{components(e).front(), marg, make_cube_map(marg, tc)};
    DampingSpec ds;
    ds.two_sided = true;
    ds.K_minus = Vec::Constant(1, -0.7);
    ds.K_plus = Vec::Constant(1, 2.3);
    Vec m = Vec::Constant(1, 0.2);
    auto h = component_integrand_u(pc, m, ds);
    double fourier = oracles::quad_r([&](double u) {
        Cplx v0;
        h(Vec::Constant(1, u), v0, nullptr, nullptr);
        return v0.real();
    });
    // MC oracle over 10^7 draws
    const std::int64_t M = 10000000;
    Mat X = sample(marg, M, 31);
    double acc = 0.0, acc2 = 0.0;
    for (std::int64_t i = 0; i < M; ++i) {
        double v = std::exp(X(i, 0) - m[0]);
        acc += v;
        acc2 += v * v;
    }
    double mean = acc / M;
    double se = std::sqrt((acc2 / M - mean * mean) / M);
    REQUIRE(std::abs(fourier - mean) <= 3.0 * se);
}

TEST_CASE("surrogate g matches the closed form for the 2D exponential model") {
    for (double rho : {-0.5, 0.5}) {
        auto ctx = exp2d_ctx(rho);
        Exp2dClosedForm cf{rho};
        Vec m(2);
        m << 0.3868, 0.3868;
        DampingAssignment da = select_all_damping(ctx, m);
        KKTBlocks b = evaluate_blocks(ctx, m, da, 2);
        REQUIRE(b.g_hat == Catch::Approx(cf.g(m)).margin(2e-5));
        REQUIRE((b.grad_hat - cf.grad(m)).norm() < 5e-5);
        REQUIRE((b.hess_hat - cf.hess(m)).norm() < 2e-4);
        // imaginary parts cancel only in expectation; the residual must sit
        // at the estimator noise scale
        double noise = 0.0;
        for (const auto& ct : b.cov_terms) noise += rmse_from_shifts(ct.g_shift);
        REQUIRE(b.imag_residual < 10.0 * noise + 1e-12);

        // deep-capital direction check
        Vec deep = Vec::Constant(2, 10.0);
        DampingAssignment da2 = select_all_damping(ctx, deep);
        KKTBlocks b2 = evaluate_blocks(ctx, deep, da2, 0);
        REQUIRE(b2.g_hat < 0.0);
    }
}

TEST_CASE("gradient and Hessian agree with finite differences under shared shifts") {
    auto ctx = exp2d_ctx(-0.5);
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> ud(-0.2, 0.9);
    for (int t = 0; t < 20; ++t) {
        Vec m(2);
        m << ud(rng), ud(rng);
        DampingAssignment da = select_all_damping(ctx, m);
        KKTBlocks b = evaluate_blocks(ctx, m, da, 2);
        const double h = 1e-5;
        for (int j = 0; j < 2; ++j) {
            Vec mp = m, mm = m;
            mp[j] += h;
            mm[j] -= h;
            // shared damping and shifts across the stencil
            KKTBlocks bp = evaluate_blocks(ctx, mp, da, 1);
            KKTBlocks bm = evaluate_blocks(ctx, mm, da, 1);
            double fd = (bp.g_hat - bm.g_hat) / (2 * h);
            REQUIRE(std::abs(fd - b.grad_hat[j]) < 1e-4);
            Vec fdg = (bp.grad_hat - bm.grad_hat) / (2 * h);
            for (int l = 0; l < 2; ++l)
                REQUIRE(std::abs(fdg[l] - b.hess_hat(j, l)) < 1e-3);
        }
    }
}

TEST_CASE("NIG QPC surrogate derivatives are consistent too") {
    auto ctx = nig_qpc_ctx();
    Vec mu = mean(ctx.factors);
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> ud(-0.5, 0.5);
    for (int t = 0; t < 5; ++t) {
        Vec m = mu;
        for (int j = 0; j < 3; ++j) m[j] += ud(rng);
        DampingAssignment da = select_all_damping(ctx, m);
        KKTBlocks b = evaluate_blocks(ctx, m, da, 2);
        const double h = 1e-5;
        for (int j = 0; j < 3; ++j) {
            Vec mp = m, mm = m;
            mp[j] += h;
            mm[j] -= h;
            KKTBlocks bp = evaluate_blocks(ctx, mp, da, 1);
            KKTBlocks bm = evaluate_blocks(ctx, mm, da, 1);
            double fd = (bp.g_hat - bm.g_hat) / (2 * h);
            REQUIRE(std::abs(fd - b.grad_hat[j]) < 1e-4);
            Vec fdg = (bp.grad_hat - bm.grad_hat) / (2 * h);
            for (int l = 0; l < 3; ++l)
                REQUIRE(std::abs(fdg[l] - b.hess_hat(j, l)) < 1e-3);
        }
    }
}

TEST_CASE("Fourier estimates match physical-space sample averages") {
    auto ctx = exp2d_ctx(0.5);
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> ud(-0.1, 0.9);
    const std::int64_t M = 2000000;
    Mat X = sample(ctx.factors, M, 77);
    for (int t = 0; t < 5; ++t) {
        Vec m(2);
        m << ud(rng), ud(rng);
        DampingAssignment da = select_all_damping(ctx, m);
        KKTBlocks b = evaluate_blocks(ctx, m, da, 1);
        double acc = 0.0, acc2 = 0.0;
        Vec gacc = Vec::Zero(2), gacc2 = Vec::Zero(2);
        for (std::int64_t i = 0; i < M; ++i) {
            Vec x = X.row(i).transpose() - m;
            double lv = loss_value(ctx.loss, x);
            acc += lv;
            acc2 += lv * lv;
            Vec gl = -loss_grad_x(ctx.loss, x);
            gacc += gl;
            gacc2 += gl.cwiseProduct(gl);
        }
        double mc = acc / M;
        double se = std::sqrt((acc2 / M - mc * mc) / M);
        double rq = 0.0;
        for (const auto& ct : b.cov_terms) rq += rmse_from_shifts(ct.g_shift) / 1.96;
        REQUIRE(std::abs(b.g_hat - mc) <= 3.0 * (se + rq));
        Vec gmc = gacc / M;
        for (int j = 0; j < 2; ++j) {
            double gse = std::sqrt((gacc2[j] / M - gmc[j] * gmc[j]) / M);
            REQUIRE(std::abs(b.grad_hat[j] - gmc[j]) <= 3.0 * gse + 1e-4);
        }
    }
}

TEST_CASE("duality: (K - iu) route equals the explicit derivative transforms") {
    LossModel q(LossFamily::Qpc, 2, 1.0);
    GaussianModel g(Vec::Zero(2), Mat::Identity(2, 2));
    auto marg = RiskFactorModel(g);
    TransformConfig tc;
    const ComponentSpec* pair = nullptr;
    auto comps = components(q);
    for (auto& s : comps)
        if (s.kind == ComponentKind::QpcPair) pair = &s;
    PreparedComponent pc{*pair, marginal(marg, pair->p), CubeMap(make_cube_map(marg, tc))};
    DampingSpec ds;
    ds.K = Vec::Constant(2, -1.3);
    Vec m(2);
    m << 0.4, -0.2;
    auto h = component_integrand_u(pc, m, ds);
    std::mt19937_64 rng(9);
    std::uniform_real_distribution<double> ud(-3.0, 3.0);
    const double base = std::pow(two_pi, -2);
    for (int t = 0; t < 40; ++t) {
        Vec u(2);
        u << ud(rng), ud(rng);
        Cplx v0;
        Eigen::VectorXcd g1;
        h(u, v0, &g1, nullptr);
        // explicit l-hat^{(1)} route: the x-gradient transform integrand is the
        // negative of the allocation-gradient route
        auto tr = QpcTransform::evaluate(*pair, u, ds.K, 1);
        CVec y(2);
        for (int j = 0; j < 2; ++j) y[j] = Cplx(u[j], ds.K[j]);
        Cplx pref = base * std::exp(Cplx(ds.K.dot(m), -u.dot(m))) *
                    extended_cf(pc.marg, y);
        for (int j = 0; j < 2; ++j) {
            Cplx expl = -pref * tr.grad[j];
            REQUIRE(std::abs(g1[j] - expl) <= 1e-12 * (1.0 + std::abs(expl)));
        }
    }
}

TEST_CASE("Lagrangian residual and bordered Hessian") {
    KKTBlocks b;
    b.g_hat = 0.25;
    b.grad_hat = Vec(2);
    b.grad_hat << -0.5, -1.0;
    b.hess_hat = Mat::Identity(2, 2);
    b.has_hessian = true;

    Vec r = lagrangian_gradient(b, 2.0);
    REQUIRE(r[0] == Catch::Approx(1.0 + 2.0 * -0.5));
    REQUIRE(r[1] == Catch::Approx(1.0 + 2.0 * -1.0));
    REQUIRE(r[2] == Catch::Approx(0.25));

    Mat H = lagrangian_hessian(b, 2.0);
    REQUIRE(H.isApprox(H.transpose()));
    REQUIRE(H(0, 0) == Catch::Approx(2.0));
    REQUIRE(H(2, 0) == Catch::Approx(-0.5));
    REQUIRE(H(2, 2) == 0.0);

    REQUIRE_THROWS_AS(lagrangian_gradient(b, 0.0), NonPositiveMultiplier);
    REQUIRE_THROWS_AS(lagrangian_hessian(b, -1.0), NonPositiveMultiplier);
}

TEST_CASE("integrand peak magnitude matches the damping objective") {
    auto ctx = nig_qpc_ctx();
    Vec m = mean(ctx.factors);
    DampingAssignment da = select_all_damping(ctx, m);
    for (const auto& pc : ctx.fourier) {
        Vec m_kp = gather(pc.spec.p, m);
        double obj = peak_objective(pc.spec, pc.marg, 0, da.at(pc.spec.id), m_kp);
        Cplx h0;
        component_integrand_u(pc, m, da.at(pc.spec.id))(Vec::Zero(pc.spec.k), h0, nullptr,
                                                        nullptr);
        REQUIRE(std::log(std::abs(h0)) == Catch::Approx(obj).margin(1e-12));
    }
}
