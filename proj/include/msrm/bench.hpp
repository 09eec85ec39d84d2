#ifndef MSRM_BENCH_HPP
#define MSRM_BENCH_HPP

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <future>
#include <iomanip>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "msrm/baselines.hpp"
#include "msrm/config.hpp"
#include "msrm/domain_transform.hpp"
#include "msrm/solver.hpp"

namespace msrm {

enum class Method { RqmcSingle, RqmcMulti, Saa, Sa };

inline std::string method_name(Method m) {
    switch (m) {
        case Method::RqmcSingle: return "rqmc_single";
        case Method::RqmcMulti: return "rqmc_multi";
        case Method::Saa: return "saa";
        case Method::Sa: return "sa";
    }
    return "?";
}

inline Method parse_method(const std::string& s) {
    if (s == "rqmc_single") return Method::RqmcSingle;
    if (s == "rqmc_multi") return Method::RqmcMulti;
    if (s == "saa") return Method::Saa;
    if (s == "sa") return Method::Sa;
    throw ConfigError("unknown method '" + s + "'");
}

/// One experiment: model, loss, method, and numerical settings.
struct ExperimentConfig {
    std::string name;
    Method method = Method::RqmcSingle;
    RiskFactorModel factors = GaussianModel(Vec::Zero(1), Mat::Identity(1, 1));
    LossModel loss{LossFamily::Qpc, 1, 0.0};
    TransformConfig transform;
    DampingConfig damping;
    RQMCDesign design;
    SolverConfig solver;
    SAAConfig saa;
    SAConfig sa;
    std::vector<double> sweep_budgets;
    std::vector<double> sweep_seeds;
    // reference solution used for relative errors
    std::string reference_kind = "saa";  // "closed_form_exp2d" | "saa"
    double reference_rho = 0.0;
    std::int64_t reference_N = 1000000;
};

namespace detail {

inline Vec to_vec(const std::vector<double>& v) {
    Vec out(static_cast<int>(v.size()));
    for (std::size_t i = 0; i < v.size(); ++i) out[static_cast<int>(i)] = v[i];
    return out;
}

inline Mat to_mat(const std::vector<std::vector<double>>& rows) {
    Mat out(static_cast<int>(rows.size()), static_cast<int>(rows.front().size()));
    for (std::size_t i = 0; i < rows.size(); ++i)
        for (std::size_t j = 0; j < rows[i].size(); ++j)
            out(static_cast<int>(i), static_cast<int>(j)) = rows[i][j];
    return out;
}

} // namespace detail

inline ExperimentConfig load_experiment(const ConfigMap& cfg) {
    ExperimentConfig e;
    e.name = cfg.text_or("name", "experiment");
    e.method = parse_method(cfg.text_or("method", "rqmc_single"));

    const std::string family = cfg.text("risk_factors.family");
    if (family == "gaussian") {
        Vec mu = detail::to_vec(cfg.array("risk_factors.mu"));
        Mat Sg = detail::to_mat(cfg.matrix("risk_factors.sigma"));
        e.factors = GaussianModel(std::move(mu), std::move(Sg));
    } else if (family == "nig") {
        Vec mu = detail::to_vec(cfg.array("risk_factors.mu"));
        Vec beta = detail::to_vec(cfg.array("risk_factors.beta"));
        Mat G = detail::to_mat(cfg.matrix("risk_factors.gamma_mat"));
        e.factors = NIGModel(cfg.number("risk_factors.alpha"), std::move(beta),
                             cfg.number("risk_factors.delta"), std::move(mu), std::move(G));
    } else {
        throw ConfigError("risk_factors.family must be 'gaussian' or 'nig'");
    }
    const int d = dim(e.factors);

    const std::string lf = cfg.text("loss.family");
    if (lf == "exponential")
        e.loss = LossModel(LossFamily::Exponential, d, cfg.number("loss.alpha"),
                           cfg.number("loss.beta"));
    else if (lf == "qpc")
        e.loss = LossModel(LossFamily::Qpc, d, cfg.number("loss.alpha"));
    else
        throw ConfigError("loss.family must be 'exponential' or 'qpc'");

    e.transform.c_scale = cfg.number_or(
        "transform.c_scale", std::holds_alternative<NIGModel>(e.factors) ? 8.0 : 6.0);
    e.transform.xi_threshold = cfg.number_or("transform.xi_threshold", 1e-8);

    e.damping.penalty_lambda = cfg.number_or(
        "damping.lambda", std::holds_alternative<NIGModel>(e.factors) ? 0.3 : 0.0);
    e.damping.strip_margin = cfg.number_or("damping.margin", 1e-3);
    e.damping.inner_tol = cfg.number_or("damping.tol", 1e-8);

    e.design.N = static_cast<std::uint64_t>(cfg.number_or("rqmc.N", 2048));
    e.design.S_shift = static_cast<int>(cfg.number_or("rqmc.S_shift", 32));
    e.design.seed = static_cast<std::uint64_t>(cfg.number_or("rqmc.seed", 1));
    e.design.N_min = static_cast<std::uint64_t>(cfg.number_or("rqmc.N_min", 128));
    e.design.rate_r = cfg.number_or("rqmc.r", 1.0);
    e.design.C_loc = cfg.number_or("rqmc.C_loc", 1.0);

    e.solver.eps_total = cfg.number_or("solver.eps_total", 2e-4);
    e.solver.eps_opt = cfg.number_or("solver.eps_opt", 0.0);
    e.solver.max_iters = static_cast<int>(cfg.number_or("solver.max_iters", 60));
    e.solver.init_lambda = cfg.number_or("solver.init_lambda", 1.0);
    if (cfg.has("solver.init_m")) e.solver.init_m = detail::to_vec(cfg.array("solver.init_m"));
    e.solver.mode =
        e.method == Method::RqmcMulti ? SolveMode::MultiLevel : SolveMode::SingleLevel;

    e.saa.N_samples = static_cast<std::int64_t>(cfg.number_or("saa.N", 1 << 20));
    e.saa.seed = static_cast<std::uint64_t>(cfg.number_or("rqmc.seed", 1));
    e.saa.solver = e.solver;

    e.sa.c = cfg.number_or("sa.c", 2.0);
    e.sa.t = cfg.number_or("sa.t", 10.0);
    e.sa.gamma = cfg.number_or("sa.gamma", 0.7);
    e.sa.iterations = static_cast<std::int64_t>(cfg.number_or("sa.iters", 1 << 20));
    e.sa.replications = static_cast<int>(cfg.number_or("sa.replications", 20));
    e.sa.seed = e.saa.seed;
    e.sa.init_lambda = e.solver.init_lambda;
    e.sa.init_m = e.solver.init_m;

    if (cfg.has("sweep.budgets")) e.sweep_budgets = cfg.array("sweep.budgets");
    if (cfg.has("sweep.seeds")) e.sweep_seeds = cfg.array("sweep.seeds");

    e.reference_kind = cfg.text_or("reference.kind", "saa");
    e.reference_rho = cfg.number_or("reference.rho", 0.0);
    e.reference_N = static_cast<std::int64_t>(cfg.number_or("reference.N", 1000000));
    return e;
}

inline ExperimentConfig load_experiment(const std::string& path) {
    return load_experiment(ConfigMap::load(path));
}

// ---------------------------------------------------------------------------
// reference solutions and result rows
// ---------------------------------------------------------------------------

inline ReferenceSolution reference_solution(const ExperimentConfig& e) {
    if (e.reference_kind == "closed_form_exp2d") return exp2d_closed_form(e.reference_rho);
    SAAConfig cfg;
    cfg.N_samples = e.reference_N;
    cfg.seed = e.design.seed + 0x5eedULL;
    cfg.solver = e.solver;
    cfg.solver.eps_total = 2e-6;
    cfg.solver.eps_opt = 1e-6;
    cfg.solver.max_iters = 200;
    SolutionReport rep = solve_saa(e.loss, e.factors, cfg);
    ReferenceSolution ref;
    ref.m = rep.m_star;
    ref.lambda = rep.lambda_star;
    ref.closed_form = false;
    return ref;
}

inline double reference_norm(const ReferenceSolution& ref) {
    return std::max(ref.m.cwiseAbs().maxCoeff(), std::abs(ref.lambda));
}

/// One benchmark result. The CSV column order is exactly the field order.
struct ResultRow {
    std::string experiment;
    std::string method;
    double budget = 0.0;  // N*S_shift for RQMC, N for SAA, iters*replications for SA
    double eps_stat = 0.0;
    double eps_rel = 0.0;
    double wall_seconds = 0.0;
    Vec m_star;
    double lambda_star = 0.0;
    double total_risk = 0.0;
    int iterations = 0;
    int J_loc = -1;
    std::int64_t evals0 = 0, evals1 = 0, evals2 = 0;

    static const char* csv_header() {
        return "experiment,method,budget,eps_stat,eps_rel,wall_seconds,m_star,lambda_star,"
               "total_risk,iterations,J_loc,evals_nu0,evals_nu1,evals_nu2";
    }
};

namespace detail {

inline std::string fmt17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline std::string join_vec17(const Vec& v) {
    std::string out;
    for (int i = 0; i < v.size(); ++i) {
        if (i) out += ';';
        out += fmt17(v[i]);
    }
    return out;
}

inline Vec split_vec(const std::string& s) {
    std::vector<double> vals;
    std::istringstream ss(s);
    std::string tok;
    while (std::getline(ss, tok, ';'))
        if (!tok.empty()) vals.push_back(std::stod(tok));
    return to_vec(vals);
}

} // namespace detail

inline std::string to_csv_line(const ResultRow& r) {
    std::ostringstream out;
    out << r.experiment << ',' << r.method << ',' << detail::fmt17(r.budget) << ','
        << detail::fmt17(r.eps_stat) << ',' << detail::fmt17(r.eps_rel) << ','
        << detail::fmt17(r.wall_seconds) << ",\"" << detail::join_vec17(r.m_star) << "\","
        << detail::fmt17(r.lambda_star) << ',' << detail::fmt17(r.total_risk) << ','
        << r.iterations << ',' << r.J_loc << ',' << r.evals0 << ',' << r.evals1 << ','
        << r.evals2;
    return out.str();
}

inline ResultRow parse_csv_line(const std::string& line) {
    // fields are comma-separated; the m_star field is quoted
    std::vector<std::string> fields;
    std::string cur;
    bool in_q = false;
    for (char c : line) {
        if (c == '"') {
            in_q = !in_q;
            continue;
        }
        if (c == ',' && !in_q) {
            fields.push_back(cur);
            cur.clear();
            continue;
        }
        cur += c;
    }
    fields.push_back(cur);
    if (fields.size() != 14) throw SchemaMismatch("result row has wrong field count");
    ResultRow r;
    r.experiment = fields[0];
    r.method = fields[1];
    r.budget = std::stod(fields[2]);
    r.eps_stat = std::stod(fields[3]);
    r.eps_rel = std::stod(fields[4]);
    r.wall_seconds = std::stod(fields[5]);
    r.m_star = detail::split_vec(fields[6]);
    r.lambda_star = std::stod(fields[7]);
    r.total_risk = std::stod(fields[8]);
    r.iterations = std::stoi(fields[9]);
    r.J_loc = std::stoi(fields[10]);
    r.evals0 = std::stoll(fields[11]);
    r.evals1 = std::stoll(fields[12]);
    r.evals2 = std::stoll(fields[13]);
    return r;
}

inline std::vector<ResultRow> read_result_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw SchemaMismatch("cannot open result file: " + path);
    std::string line;
    if (!std::getline(in, line)) throw SchemaMismatch("empty result file: " + path);
    if (line != ResultRow::csv_header()) throw SchemaMismatch("unexpected CSV header in " + path);
    std::vector<ResultRow> rows;
    while (std::getline(in, line))
        if (!line.empty()) rows.push_back(parse_csv_line(line));
    return rows;
}

// ---------------------------------------------------------------------------
// run / compare / diagnose
// ---------------------------------------------------------------------------

struct RunOutcome {
    std::vector<ResultRow> rows;
    std::vector<SolutionReport> reports;
    bool all_converged = true;
};

inline SolutionReport run_method(const ExperimentConfig& e, Method method, double budget_value,
                                 std::uint64_t seed) {
    if (method == Method::Saa) {
        SAAConfig cfg = e.saa;
        if (budget_value > 0) cfg.N_samples = static_cast<std::int64_t>(budget_value);
        cfg.seed = seed;
        return solve_saa(e.loss, e.factors, cfg);
    }
    if (method == Method::Sa) {
        SAConfig cfg = e.sa;
        if (budget_value > 0)
            cfg.iterations =
                static_cast<std::int64_t>(budget_value / std::max(cfg.replications, 1));
        cfg.seed = seed;
        return solve_sa(e.loss, e.factors, cfg);
    }
    RQMCDesign design = e.design;
    if (budget_value > 0)
        design.N = static_cast<std::uint64_t>(budget_value / design.S_shift);
    design.seed = seed;
    SurrogateContext ctx = make_context(e.loss, e.factors, e.transform, e.damping, design);
    SolverConfig scfg = e.solver;
    scfg.mode = method == Method::RqmcMulti ? SolveMode::MultiLevel : SolveMode::SingleLevel;
    return solve(ctx, scfg);
}

inline double method_budget(const ExperimentConfig& e, Method method,
                            const SolutionReport& rep, double requested) {
    if (method == Method::Saa)
        return requested > 0 ? requested : static_cast<double>(e.saa.N_samples);
    if (method == Method::Sa)
        return requested > 0 ? requested
                             : static_cast<double>(e.sa.iterations) * e.sa.replications;
    std::uint64_t N = requested > 0
                          ? static_cast<std::uint64_t>(requested / e.design.S_shift)
                          : e.design.N;
    (void)rep;
    return static_cast<double>(N) * e.design.S_shift;
}

inline ResultRow make_row(const ExperimentConfig& e, Method method, const SolutionReport& rep,
                          double budget, const ReferenceSolution& ref) {
    ResultRow r;
    r.experiment = e.name;
    r.method = method_name(method);
    r.budget = budget;
    r.eps_stat = rep.eps_stat;
    r.eps_rel = rep.eps_stat / reference_norm(ref);
    r.wall_seconds = rep.wall_seconds;
    r.m_star = rep.m_star;
    r.lambda_star = rep.lambda_star;
    r.total_risk = rep.total_risk;
    r.iterations = rep.iterations;
    r.J_loc = rep.J_loc;
    r.evals0 = rep.evals[0];
    r.evals1 = rep.evals[1];
    r.evals2 = rep.evals[2];
    return r;
}

enum class SweepKind { None, Budgets, Seeds };

inline int thread_budget_from_env() {
    const char* env = std::getenv("MSRM_THREADS");
    if (!env) return 1;
    int n = std::atoi(env);
    return n > 0 ? n : 1;
}

inline RunOutcome run_experiment(const ExperimentConfig& e, SweepKind sweep) {
    ReferenceSolution ref = reference_solution(e);
    struct Cell {
        double budget;
        std::uint64_t seed;
    };
    std::vector<Cell> cells;
    if (sweep == SweepKind::Budgets) {
        if (e.sweep_budgets.empty()) throw ConfigError("sweep.budgets missing");
        for (double b : e.sweep_budgets) cells.push_back({b, e.design.seed});
    } else if (sweep == SweepKind::Seeds) {
        if (e.sweep_seeds.empty()) throw ConfigError("sweep.seeds missing");
        for (double s : e.sweep_seeds)
            cells.push_back({0.0, static_cast<std::uint64_t>(s)});
    } else {
        cells.push_back({0.0, e.design.seed});
    }

    RunOutcome out;
    out.reports.resize(cells.size());
    const int threads = thread_budget_from_env();
    if (threads > 1 && cells.size() > 1) {
        std::vector<std::future<SolutionReport>> futs(cells.size());
        std::size_t next = 0;
        while (next < cells.size()) {
            std::size_t batch = std::min<std::size_t>(threads, cells.size() - next);
            for (std::size_t i = 0; i < batch; ++i) {
                const Cell& c = cells[next + i];
                futs[next + i] = std::async(std::launch::async, [&e, c] {
                    return run_method(e, e.method, c.budget, c.seed);
                });
            }
            for (std::size_t i = 0; i < batch; ++i)
                out.reports[next + i] = futs[next + i].get();
            next += batch;
        }
    } else {
        for (std::size_t i = 0; i < cells.size(); ++i)
            out.reports[i] = run_method(e, e.method, cells[i].budget, cells[i].seed);
    }
    for (std::size_t i = 0; i < cells.size(); ++i) {
        const auto& rep = out.reports[i];
        out.all_converged = out.all_converged && rep.converged;
        double budget = method_budget(e, e.method, rep, cells[i].budget);
        out.rows.push_back(make_row(e, e.method, rep, budget, ref));
    }
    return out;
}

/// Atomic file write: temp file in the same directory, then rename.
inline void write_file_atomic(const std::string& path, const std::string& content) {
    namespace fs = std::filesystem;
    fs::path target(path);
    if (target.has_parent_path()) fs::create_directories(target.parent_path());
    fs::path tmp = target;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::trunc);
        if (!out) throw std::runtime_error("cannot write " + tmp.string());
        out << content;
    }
    fs::rename(tmp, target);
}

inline std::string rows_to_csv(const std::vector<ResultRow>& rows) {
    std::ostringstream out;
    out << ResultRow::csv_header() << '\n';
    for (const auto& r : rows) out << to_csv_line(r) << '\n';
    return out.str();
}

// ---------------------------------------------------------------------------
// comparison table
// ---------------------------------------------------------------------------

/// Long-format comparison row: per (experiment, method, budget) cell with
/// mean/stdev over seeds.
struct CompareRow {
    std::string experiment;
    std::string method;
    double budget = 0.0;
    double eps_rel_mean = 0.0;
    double eps_stat_mean = 0.0;
    double wall_mean = 0.0;
    double wall_stdev = 0.0;
    int count = 0;
};

inline std::vector<CompareRow> compare_results(const std::vector<std::vector<ResultRow>>& files) {
    if (files.size() < 1) throw SchemaMismatch("compare needs at least one result set");
    std::map<std::tuple<std::string, std::string, double>, std::vector<const ResultRow*>> cells;
    for (const auto& rows : files)
        for (const auto& r : rows)
            cells[{r.experiment, r.method, r.budget}].push_back(&r);
    std::vector<CompareRow> out;
    for (const auto& [key, group] : cells) {
        CompareRow c;
        c.experiment = std::get<0>(key);
        c.method = std::get<1>(key);
        c.budget = std::get<2>(key);
        c.count = static_cast<int>(group.size());
        for (const auto* r : group) {
            c.eps_rel_mean += r->eps_rel;
            c.eps_stat_mean += r->eps_stat;
            c.wall_mean += r->wall_seconds;
        }
        c.eps_rel_mean /= c.count;
        c.eps_stat_mean /= c.count;
        c.wall_mean /= c.count;
        for (const auto* r : group) {
            double dv = r->wall_seconds - c.wall_mean;
            c.wall_stdev += dv * dv;
        }
        c.wall_stdev = c.count > 1 ? std::sqrt(c.wall_stdev / (c.count - 1)) : 0.0;
        out.push_back(c);
    }
    return out;
}

inline std::string compare_to_csv(const std::vector<CompareRow>& rows) {
    std::ostringstream out;
    out << "experiment,method,budget,eps_rel_mean,eps_stat_mean,wall_mean,wall_stdev,count\n";
    for (const auto& c : rows)
        out << c.experiment << ',' << c.method << ',' << detail::fmt17(c.budget) << ','
            << detail::fmt17(c.eps_rel_mean) << ',' << detail::fmt17(c.eps_stat_mean) << ','
            << detail::fmt17(c.wall_mean) << ',' << detail::fmt17(c.wall_stdev) << ','
            << c.count << '\n';
    return out.str();
}

// ---------------------------------------------------------------------------
// diagnose
// ---------------------------------------------------------------------------

struct ComponentDiagnostic {
    int id = 0;
    std::string kind;
    std::vector<int> p;
    Vec K;         // QPC contour or stacked [K^-;K^+] for exponential blocks
    double upsilon = 0.0;
    double oscillation = 0.0;
};

struct DiagnoseReport {
    std::vector<ComponentDiagnostic> components;
    Vec m_star;
    double lambda_star = 0.0;
    double hessian_condition = 0.0;
    double eps_stat = 0.0;
};

inline DiagnoseReport diagnose(const ExperimentConfig& e) {
    SurrogateContext ctx = make_context(e.loss, e.factors, e.transform, e.damping, e.design);
    SolverConfig scfg = e.solver;
    scfg.mode = SolveMode::SingleLevel;
    SolutionReport rep = solve(ctx, scfg);

    DiagnoseReport out;
    out.m_star = rep.m_star;
    out.lambda_star = rep.lambda_star;
    out.eps_stat = rep.eps_stat;
    {
        Eigen::SelfAdjointEigenSolver<Mat> es(rep.bordered_hessian);
        Vec abs_ev = es.eigenvalues().cwiseAbs();
        out.hessian_condition = abs_ev.maxCoeff() / abs_ev.minCoeff();
    }
    DampingAssignment da = select_all_damping(ctx, rep.m_star);
    for (const auto& pc : ctx.fourier) {
        ComponentDiagnostic cd;
        cd.id = pc.spec.id;
        switch (pc.spec.kind) {
            case ComponentKind::ExpSingleton: cd.kind = "exp_singleton"; break;
            case ComponentKind::ExpCoupling: cd.kind = "exp_coupling"; break;
            case ComponentKind::QpcSquare: cd.kind = "qpc_square"; break;
            case ComponentKind::QpcPair: cd.kind = "qpc_pair"; break;
            default: cd.kind = "other"; break;
        }
        cd.p = pc.spec.p;
        const DampingSpec& ds = da.at(pc.spec.id);
        if (ds.two_sided) {
            cd.K = Vec(2 * pc.spec.k);
            cd.K << ds.K_minus, ds.K_plus;
        } else {
            cd.K = ds.K;
        }
        Vec m_kp = gather(pc.spec.p, rep.m_star);
        cd.upsilon = peak_objective(pc.spec, pc.marg, 0, ds, m_kp);
        cd.oscillation = oscillation_diagnostic(pc.marg, m_kp, e.transform);
        out.components.push_back(std::move(cd));
    }
    return out;
}

} // namespace msrm

#endif
