#include <catch2/catch_amalgamated.hpp>

#include <chrono>
#include <cmath>

#include "msrm/baselines.hpp"
#include "oracles.hpp"

using namespace msrm;

namespace {

LossModel exp2d_loss() { return LossModel(LossFamily::Exponential, 2, 1.0, 1.0); }

RiskFactorModel gauss2d(double rho) {
    Mat S(2, 2);
    S << 1.0, rho, rho, 1.0;
    return GaussianModel(Vec::Zero(2), S);
}

} // namespace

TEST_CASE("SAA reproduces the 2D closed form within its own confidence interval") {
    SAAConfig cfg;
    cfg.N_samples = 1000000;
    cfg.seed = 42;
    cfg.solver.eps_total = 1e-3;
    cfg.solver.eps_opt = 1e-5;
    SolutionReport rep = solve_saa(exp2d_loss(), gauss2d(-0.5), cfg);
    auto ref = exp2d_closed_form(-0.5);
    REQUIRE(rep.converged);
    for (int j = 0; j < 2; ++j)
        REQUIRE(std::abs(rep.m_star[j] - ref.m[j]) <= 3.0 * rep.eps_stat + 1e-5);
    REQUIRE(rep.eps_stat < 5e-3);
}

TEST_CASE("SAA estimator is unbiased at fixed m against quadrature") {
    // 1D quadrature oracle: E[l(X - m)] for the 1D exponential loss
    LossModel l1(LossFamily::Exponential, 1, 0.0, 1.0);
    GaussianModel g(Vec::Zero(1), Mat::Identity(1, 1));
    const double m = 0.4;
    // (e^{x-m} - 1) phi(x), multiplied in log space so the tail probes of the
    // adaptive rule cannot produce inf * 0
    double ref = oracles::quad_r([&](double x) {
        return std::exp(x - m - 0.5 * x * x) / std::sqrt(two_pi) - normal_pdf(x);
    });
    double acc = 0.0, acc2 = 0.0;
    const int R = 100;
    const std::int64_t N = 4096;
    for (int r = 0; r < R; ++r) {
        Mat X = sample(RiskFactorModel(g), N, 900 + r);
        double s = 0.0;
        for (std::int64_t i = 0; i < N; ++i)
            s += loss_value(l1, Vec::Constant(1, X(i, 0) - m));
        s /= N;
        acc += s;
        acc2 += s * s;
    }
    double mean = acc / R;
    double se = std::sqrt(std::max(acc2 / R - mean * mean, 0.0) / (R - 1.0));
    REQUIRE(std::abs(mean - ref) <= 3.0 * se + 1e-12);
}

TEST_CASE("SAA statistical error decays like N^{-1/2}") {
    std::vector<double> logN, logE;
    for (int p = 12; p <= 20; p += 2) {
        SAAConfig cfg;
        cfg.N_samples = 1LL << p;
        cfg.seed = 7;
        cfg.solver.eps_total = 1e-3;
        cfg.solver.eps_opt = 1e-6;
        SolutionReport rep = solve_saa(exp2d_loss(), gauss2d(-0.5), cfg);
        logN.push_back(std::log2(double(cfg.N_samples)));
        logE.push_back(std::log2(rep.eps_stat));
    }
    double n = double(logN.size()), sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (std::size_t i = 0; i < logN.size(); ++i) {
        sx += logN[i];
        sy += logE[i];
        sxx += logN[i] * logN[i];
        sxy += logN[i] * logE[i];
    }
    double slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    INFO("SAA slope = " << slope);
    REQUIRE(slope == Catch::Approx(-0.5).margin(0.1));
}

TEST_CASE("SAA runs are deterministic per seed") {
    SAAConfig cfg;
    cfg.N_samples = 1 << 14;
    cfg.seed = 3;
    cfg.solver.eps_total = 1e-3;
    auto a = solve_saa(exp2d_loss(), gauss2d(0.5), cfg);
    auto b = solve_saa(exp2d_loss(), gauss2d(0.5), cfg);
    REQUIRE(a.m_star == b.m_star);
    REQUIRE(a.eps_stat == b.eps_stat);
}

TEST_CASE("SA converges to the closed form with enough steps") {
    SAConfig cfg;
    cfg.iterations = 10000000;
    cfg.replications = 2;
    cfg.seed = 11;
    SolutionReport rep = solve_sa(exp2d_loss(), gauss2d(-0.5), cfg);
    auto ref = exp2d_closed_form(-0.5);
    for (int j = 0; j < 2; ++j)
        REQUIRE(rep.m_star[j] == Catch::Approx(ref.m[j]).margin(5e-3));
}

TEST_CASE("SA with a degenerate loss vector follows the deterministic flow") {
    // X == mu a.s.: the unique root is m = mu (the loss vanishes at zero)
    Vec mu(2);
    mu << 0.3, 0.3;
    RiskFactorModel degenerate = GaussianModel(mu, 1e-12 * Mat::Identity(2, 2));
    SAConfig cfg;
    cfg.iterations = 2000000;
    cfg.replications = 2;
    cfg.seed = 5;
    SolutionReport rep = solve_sa(exp2d_loss(), degenerate, cfg);
    for (int j = 0; j < 2; ++j) REQUIRE(rep.m_star[j] == Catch::Approx(mu[j]).margin(2e-3));
    REQUIRE(rep.eps_stat < 1e-6);
}

TEST_CASE("SA diverges loudly when the iterate escapes") {
    SAConfig cfg;
    cfg.iterations = 100000;
    cfg.replications = 1;
    cfg.c = 1e9;  // absurd step scale
    cfg.gamma = 0.51;
    REQUIRE_THROWS_AS(solve_sa(exp2d_loss(), gauss2d(0.0), cfg), DivergenceDetected);
}

TEST_CASE("runtime to a 1e-3 relative tolerance: SA is slower than SAA") {
    auto ref = exp2d_closed_form(-0.5);
    double zref = std::max(ref.m.maxCoeff(), ref.lambda);
    const double target = 1e-3 * zref;

    auto time_saa = [&]() {
        for (std::int64_t N = 1 << 16; N <= (1LL << 26); N *= 2) {
            SAAConfig cfg;
            cfg.N_samples = N;
            cfg.seed = 17;
            cfg.solver.eps_total = 2.0 * target;
            cfg.solver.eps_opt = 1e-6;
            auto t0 = std::chrono::steady_clock::now();
            SolutionReport rep = solve_saa(exp2d_loss(), gauss2d(-0.5), cfg);
            double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
                              .count();
            if (rep.eps_stat <= target) return secs;
        }
        return 1e9;
    };
    auto time_sa = [&]() {
        for (std::int64_t iters = 1 << 17; iters <= (1LL << 24); iters *= 2) {
            SAConfig cfg;
            cfg.iterations = iters;
            cfg.replications = 20;
            cfg.seed = 23;
            auto t0 = std::chrono::steady_clock::now();
            SolutionReport rep = solve_sa(exp2d_loss(), gauss2d(-0.5), cfg);
            double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
                              .count();
            if (rep.eps_stat <= target) return secs;
        }
        return 1e9;  // budget cap reached without hitting the tolerance
    };
    double t_saa = time_saa();
    double t_sa = time_sa();
    INFO("saa " << t_saa << "s vs sa " << t_sa << "s");
    REQUIRE(t_saa < 1e8);  // SAA must actually reach the tolerance
    REQUIRE(t_sa < 1e8);   // so must SA
    // Wall-clock ordering between the two baselines is hardware- and
    // implementation-bound; report it without gating on it.
    CHECK_NOFAIL(t_sa > t_saa);
}
