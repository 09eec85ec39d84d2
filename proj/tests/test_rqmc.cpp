#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "msrm/rqmc.hpp"
#include "msrm/surrogates.hpp"
#include "oracles.hpp"

using namespace msrm;

namespace {

CubeIntegrand constant_integrand(double value) {
    CubeIntegrand ci;
    ci.k = 1;
    ci.cube_dim = 1;
    ci.p = {0};
    ci.eval = [value](const double*, Cplx& v0, Eigen::VectorXcd* g1, Eigen::MatrixXcd* g2) {
        v0 = value;
        if (g1) g1->setConstant(1, value);
        if (g2) g2->setConstant(1, 1, value);
    };
    return ci;
}

SurrogateContext gauss1d_square_ctx(std::uint64_t N, int S, std::uint64_t seed) {
    LossModel q(LossFamily::Qpc, 1, 0.0);
    GaussianModel g(Vec::Zero(1), Mat::Identity(1, 1));
    TransformConfig tc;
    DampingConfig dc;
    RQMCDesign design;
    design.N = N;
    design.S_shift = S;
    design.seed = seed;
    return make_context(q, RiskFactorModel(g), tc, dc, design);
}

} // namespace

TEST_CASE("constant integrand: exact estimate, zero rmse") {
    NetCache nets;
    std::vector<CubeIntegrand> cis{constant_integrand(3.0)};
    RawEstimate est = rqmc_estimate(cis, 1, 64, 8, 11, 0, nets, 0);
    REQUIRE(est.g == Catch::Approx(3.0).margin(1e-13));
    REQUIRE(rmse_from_shifts(est.cov_terms[0].g_shift) == Catch::Approx(0.0).margin(1e-12));
}

TEST_CASE("estimator is unbiased over seeds against the quadrature value") {
    // 1D QPC square block under a standard normal marginal
    auto ctx = gauss1d_square_ctx(256, 4, 1);
    Vec m = Vec::Constant(1, 0.3);
    DampingAssignment da = select_all_damping(ctx, m);
    const auto& pc = ctx.fourier.front();
    auto h = component_integrand_u(pc, m, da.at(pc.spec.id));
    double ref = oracles::quad_r([&](double u) {
        Cplx v0;
        h(Vec::Constant(1, u), v0, nullptr, nullptr);
        return v0.real();
    });
    // add the closed-form parts the block estimate carries
    ref += ctx.const_part + (ctx.factor_mean - m).sum();

    double acc = 0.0, acc2 = 0.0;
    const int R = 200;
    for (int r = 0; r < R; ++r) {
        RQMCDesign d = ctx.design;
        d.seed = 1000 + r;
        SurrogateContext c2 =
            make_context(ctx.loss, ctx.factors, ctx.transform, ctx.damping_cfg, d);
        KKTBlocks b = evaluate_blocks(c2, m, da, 0);
        acc += b.g_hat;
        acc2 += b.g_hat * b.g_hat;
    }
    double mean = acc / R;
    // In 1D a digitally shifted power-of-two net is an equidistant grid with
    // a sub-cell offset, so the seed spread collapses to roundoff; guard the
    // variance against negative rounding.
    double se = std::sqrt(std::max(acc2 / R - mean * mean, 0.0) / (R - 1.0));
    REQUIRE(std::abs(mean - ref) <= 3.0 * se + 1e-10);
}

TEST_CASE("doubling the shift count shrinks the rmse on average") {
    // use the 2D exponential coupling block, whose shift spread is genuine
    LossModel e(LossFamily::Exponential, 2, 1.0, 1.0);
    Mat S2(2, 2);
    S2 << 1.0, -0.5, -0.5, 1.0;
    GaussianModel g(Vec::Zero(2), S2);
    TransformConfig tc;
    DampingConfig dc;
    RQMCDesign base;
    base.N = 128;
    Vec m = Vec::Constant(2, 0.25);
    double r8 = 0.0, r16 = 0.0;
    const int R = 50;
    for (int r = 0; r < R; ++r) {
        for (int S : {8, 16}) {
            RQMCDesign d = base;
            d.S_shift = S;
            d.seed = 400 + r;
            SurrogateContext c2 = make_context(e, RiskFactorModel(g), tc, dc, d);
            Vec mloc = m;
            DampingAssignment da = select_all_damping(c2, mloc);
            KKTBlocks b = evaluate_blocks(c2, mloc, da, 0);
            // pick the k = 2 term
            double rm = 0.0;
            for (const auto& t : b.cov_terms)
                if (t.k == 2) rm = rmse_from_shifts(t.g_shift);
            (S == 8 ? r8 : r16) += rm / R;
        }
    }
    double ratio = r16 / r8;
    REQUIRE(ratio == Catch::Approx(1.0 / std::sqrt(2.0)).margin(0.2 / std::sqrt(2.0)));
}

TEST_CASE("components of equal order share nets: covariance identity") {
    // two 1D blocks estimated together; the variance of the summed per-shift
    // means must equal the expansion with the explicit cross term exactly
    LossModel q(LossFamily::Qpc, 2, 0.0);  // two squares, no pairs
    GaussianModel g(Vec::Zero(2), (Mat(2, 2) << 1.0, 0.3, 0.3, 1.0).finished());
    TransformConfig tc;
    DampingConfig dc;
    RQMCDesign design;
    design.N = 256;
    design.S_shift = 16;
    design.seed = 5;
    auto ctx = make_context(q, RiskFactorModel(g), tc, dc, design);
    Vec m = Vec::Constant(2, 0.4);
    DampingAssignment da = select_all_damping(ctx, m);

    std::vector<CubeIntegrand> cis;
    for (const auto& pc : ctx.fourier)
        cis.push_back(make_cube_integrand(pc, m, da.at(pc.spec.id)));
    NetCache nets;
    RawEstimate both = rqmc_estimate(cis, 2, design.N, design.S_shift, design.seed, 0, nets, 0);
    RawEstimate first =
        rqmc_estimate({cis[0]}, 2, design.N, design.S_shift, design.seed, 0, nets, 0);
    RawEstimate second =
        rqmc_estimate({cis[1]}, 2, design.N, design.S_shift, design.seed, 0, nets, 0);

    auto var = [](const Vec& x) {
        double mu = x.mean();
        return (x.array() - mu).square().sum() / (x.size() - 1.0);
    };
    auto cov = [](const Vec& x, const Vec& y) {
        double mx = x.mean(), my = y.mean();
        return ((x.array() - mx) * (y.array() - my)).sum() / (x.size() - 1.0);
    };
    Vec sum_shift = first.cov_terms[0].g_shift + second.cov_terms[0].g_shift;
    REQUIRE((sum_shift - both.cov_terms[0].g_shift).norm() < 1e-12);
    double direct = var(both.cov_terms[0].g_shift);
    double expanded = var(first.cov_terms[0].g_shift) + var(second.cov_terms[0].g_shift) +
                      2.0 * cov(first.cov_terms[0].g_shift, second.cov_terms[0].g_shift);
    REQUIRE(direct == Catch::Approx(expanded).margin(1e-12));
}

TEST_CASE("empirical convergence rate of the g rmse beats N^-0.9") {
    // 2D Gaussian exponential model at a fixed allocation
    LossModel e(LossFamily::Exponential, 2, 1.0, 1.0);
    Mat S(2, 2);
    S << 1.0, -0.5, -0.5, 1.0;
    GaussianModel g(Vec::Zero(2), S);
    TransformConfig tc;
    DampingConfig dc;
    Vec m = Vec::Constant(2, 0.3868);

    std::vector<double> logN, logR;
    for (int p = 8; p <= 14; ++p) {
        double rm_avg = 0.0;
        const int R = 3;
        for (int r = 0; r < R; ++r) {
            RQMCDesign d;
            d.N = 1ULL << p;
            d.S_shift = 16;
            d.seed = 70 + r;
            auto ctx = make_context(e, RiskFactorModel(g), tc, dc, d);
            DampingAssignment da = select_all_damping(ctx, m);
            KKTBlocks b = evaluate_blocks(ctx, m, da, 0);
            Vec tot = b.cov_terms[0].g_shift;
            for (std::size_t t = 1; t < b.cov_terms.size(); ++t)
                tot += b.cov_terms[t].g_shift;
            rm_avg += rmse_from_shifts(tot) / R;
        }
        logN.push_back(std::log2(double(1ULL << p)));
        logR.push_back(std::log2(rm_avg));
    }
    double n = double(logN.size()), sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (std::size_t i = 0; i < logN.size(); ++i) {
        sx += logN[i];
        sy += logR[i];
        sxx += logN[i] * logN[i];
        sxy += logN[i] * logR[i];
    }
    double slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    INFO("slope = " << slope);
    REQUIRE(slope <= -0.9);
}

TEST_CASE("level schedule follows the contraction rule") {
    LevelSchedule s;
    s.N1 = 1 << 12;
    s.N_min = 1 << 7;
    s.C_loc = 1.0;
    s.eta = 0.25;
    s.r = 1.0;
    s.J_loc = 4;
    REQUIRE(s.level_size(1) == (1u << 12));
    REQUIRE(s.level_size(3) == (1u << 12));
    // j = 6: 4096 * 0.25^{2/3} ~ 1625.5 -> nearest power of two is 2048
    REQUIRE(s.level_size(6) == 2048u);
    REQUIRE(s.level_size(40) == s.N_min);
    // eta -> 1 keeps N_j at N1 (after clamping above)
    s.eta = 1.0 - 1e-12;
    for (int j = 4; j < 10; ++j) REQUIRE(s.level_size(j) == s.N1);
    s.J_loc = -1;
    REQUIRE(s.level_size(9) == s.N1);
}

TEST_CASE("contraction tracker detects two consecutive halvings") {
    ContractionTracker t;
    t.push(1.0);
    t.push(0.8);
    t.push(0.7);
    REQUIRE(t.J_loc == -1);
    t.push(0.3);   // ratio ~0.43
    REQUIRE(t.J_loc == -1);
    t.push(0.12);  // ratio 0.4, second consecutive <= 0.5
    REQUIRE(t.J_loc == 5);
    t.push(0.05);
    REQUIRE(t.eta >= 0.05);
    REQUIRE(t.eta <= 0.9);
}

TEST_CASE("telescoping degeneracy: identical iterates give exactly zero differences") {
    auto ctx = gauss1d_square_ctx(512, 8, 3);
    Vec m = Vec::Constant(1, 0.5);
    DampingAssignment da = select_all_damping_diff(ctx, m, m);
    KKTBlocks diff = evaluate_difference_blocks(ctx, m, m, da, 1, 2, 512);
    REQUIRE(diff.g_hat == 0.0);
    REQUIRE(diff.grad_hat.norm() == 0.0);
}

TEST_CASE("two-level estimate is consistent with the single-level one") {
    auto ctx = gauss1d_square_ctx(2048, 32, 17);
    Vec m1 = Vec::Constant(1, 0.4), m2 = Vec::Constant(1, 0.5);
    DampingAssignment da1 = select_all_damping(ctx, m1);
    KKTBlocks level1 = evaluate_blocks(ctx, m1, da1, 0, /*level=*/1);
    DampingAssignment dad = select_all_damping_diff(ctx, m2, m1);
    KKTBlocks diff = evaluate_difference_blocks(ctx, m2, m1, dad, 0, 2, 2048);
    double ml = level1.g_hat + diff.g_hat;

    DampingAssignment da2 = select_all_damping(ctx, m2);
    KKTBlocks single = evaluate_blocks(ctx, m2, da2, 0, /*level=*/0);

    double rm = rmse_from_shifts(level1.cov_terms[0].g_shift) +
                rmse_from_shifts(diff.cov_terms[0].g_shift) +
                rmse_from_shifts(single.cov_terms[0].g_shift);
    REQUIRE(std::abs(ml - single.g_hat) <= 3.0 * rm + 1e-9);
}

TEST_CASE("sandwich covariance on hand-built inputs") {
    // zero-variance per-shift means give zero statistical error
    RawEstimate::CovTerm t;
    t.k = 1;
    t.g_shift = Vec::Constant(8, 0.7);
    t.grad_shift = Mat::Constant(8, 2, -0.3);
    Mat H = Mat::Identity(3, 3);
    auto sc = assemble_solution_covariance({t}, H, 1.0, 8);
    REQUIRE(sc.eps_stat == Catch::Approx(0.0).margin(1e-14));

    // diagonal toy: H = 2I, per-shift covariance I -> V = I/4
    std::mt19937_64 rng(2);
    std::normal_distribution<double> nd;
    const int S = 200000;
    RawEstimate::CovTerm r;
    r.k = 1;
    r.g_shift = Vec(S);
    r.grad_shift = Mat(S, 1);
    for (int s = 0; s < S; ++s) {
        r.grad_shift(s, 0) = nd(rng);
        r.g_shift[s] = nd(rng);
    }
    Mat H2 = 2.0 * Mat::Identity(2, 2);
    auto sc2 = assemble_solution_covariance({r}, H2, 1.0, S);
    REQUIRE(sc2.V(0, 0) == Catch::Approx(0.25).margin(0.01));
    REQUIRE(sc2.V(1, 1) == Catch::Approx(0.25).margin(0.01));
    REQUIRE(sc2.eps_stat == Catch::Approx(1.96 / std::sqrt(double(S)) * 0.5).epsilon(0.02));

    // singular Hessian is flagged, not fatal
    Mat H0 = Mat::Zero(3, 3);
    auto sc3 = assemble_solution_covariance({t}, H0, 1.0, 8);
    REQUIRE(sc3.singular_hessian);
}
