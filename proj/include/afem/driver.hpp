// The adaptive loop: SOLVE -> ESTIMATE -> MARK -> REFINE, in two flavors.
// Exact mode runs the damped Newton solver to tolerance on every level
// (warm-started from the prolonged previous solution); inexact mode runs it
// only on the initial mesh and applies a single Newton update per refined
// level. Also hosts the empirical contraction / quasi-orthogonality /
// approximation-quality diagnostics.
#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <vector>

#include "afem/estimator.hpp"
#include "afem/fe.hpp"
#include "afem/mesh.hpp"
#include "afem/solver.hpp"

namespace afem {

enum class SolveMode { Exact, Inexact };

struct DiagnosticsFlags {
    bool contraction = false;          // contraction estimates need per-level errors
    bool quasi_orthogonality = false;  // per-step quasi-orthogonality constants
    bool approx_property = false;      // re-solve each level exactly, report ||u_k - u_hat_k||
    bool linf = false;                 // report the max-norm trace
};

struct AfemConfig {
    double theta = 0.5;
    std::size_t max_vertices = 100000;
    SolveMode mode = SolveMode::Inexact;
    DiagnosticsFlags diagnostics;
    SolverConfig solver;
    bool store_solutions = false;  // keep every level's solution (diagnostics, references)
    int assembly_quad_degree = 4;  // volume rule for loads and the nonlinearity
    int error_quad_degree = 4;     // quadrature degree for errors against a callable solution
    // Called once per level after ESTIMATE (used for dumps and mesh statistics).
    std::function<void(std::size_t level, const Mesh&, const FeFunction&, const ErrorIndicators&)>
        level_observer;

    void validate() const {
        AFEM_REQUIRE(theta > 0 && theta <= 1, "marking parameter must lie in (0, 1]");
        solver.validate();
    }
};

struct AfemRecord {
    std::size_t level = 0;
    std::size_t vertices = 0;
    std::size_t tets = 0;
    std::size_t marked = 0;
    double eta_total_sq = 0;
    // ||u - u_level||^2 in the energy norm against the exact solution (when
    // the problem has one) or against a reference solution (attached after
    // the run); NaN when neither is available.
    double energy_error_sq = std::numeric_limits<double>::quiet_NaN();
    // ||u_exact_discrete - u_level||^2; filled by the approx_property
    // diagnostic only.
    double energy_error_exact_discrete_sq = std::numeric_limits<double>::quiet_NaN();
    double max_norm_value = 0;
    int newton_iters = 0;
    std::size_t cg_iters = 0;
    std::size_t clamp_events = 0;
    double t_solve_ms = 0;
    double t_estimate_ms = 0;
    double t_mark_ms = 0;
    double t_refine_ms = 0;
    double t_assembly_ms = 0;  // assembly share of the solve phase
};

struct AfemResult {
    std::vector<AfemRecord> records;
    Mesh mesh;            // final mesh (the reference mesh after an extension)
    FeFunction solution;  // solution on `mesh`
    std::vector<FeFunction> level_solutions;  // per level, when stored
    std::vector<double> quasi_lambda;         // Lambda_k per step k -> k+1
    std::vector<double> approx_ratio;         // r_k = ||u_k - u_hat_k||^2 / eta_k^2 per level
    bool extended_for_reference = false;
};

namespace detail {

inline double record_energy_error(const FeSpace& space, const FeFunction& u,
                                  const ProblemSpec& spec, int degree) {
    if (!spec.exact) return std::numeric_limits<double>::quiet_NaN();
    return energy_error_sq(space, u, spec.exact->gradient, spec.coeff, degree);
}

// ||a - b||^2 in the energy norm for two functions on the same space.
inline double energy_diff_sq(const FeSpace& space, const FeFunction& a, const FeFunction& b,
                             const CoefficientField& coeff) {
    FeFunction d = a;
    for (std::size_t i = 0; i < d.values.size(); ++i) d.values[i] -= b.values[i];
    return energy_norm_sq(space, d, coeff);
}

}  // namespace detail

// Drives the loop from the state in `result` (mesh + solution + the solve
// stats for the current level in `pending`) until the vertex budget is
// passed, the estimator vanishes, or nothing gets marked. Appends one record
// per level visited.
inline void afem_loop(AfemResult& result, const ProblemSpec& spec, const AfemConfig& config,
                      std::unique_ptr<FeSpace>& space, std::size_t level, AfemRecord pending) {
    const bool store = config.store_solutions || config.diagnostics.quasi_orthogonality;
    while (true) {
        AfemRecord rec = pending;  // solve-phase stats for this level
        pending = AfemRecord{};
        rec.level = level;
        rec.vertices = result.mesh.vertex_count();
        rec.tets = result.mesh.tet_count();

        StopWatch est_watch;
        const ErrorIndicators ind = estimate(*space, result.solution, spec);
        rec.t_estimate_ms = est_watch.ms();
        rec.eta_total_sq = ind.total_sq;
        rec.max_norm_value = max_norm(result.solution);
        if (std::isnan(rec.energy_error_sq))
            rec.energy_error_sq =
                detail::record_energy_error(*space, result.solution, spec, config.error_quad_degree);

        if (config.level_observer)
            config.level_observer(level, result.mesh, result.solution, ind);

        if (config.diagnostics.approx_property) {
            // The current iterate may already satisfy the configured Newton
            // tolerance; force at least one further step so the re-solve
            // actually resolves the distance to the exact discrete solution.
            SolverConfig deep = config.solver;
            const double here = norm2(assemble_residual(*space, result.solution, spec));
            deep.newton_tol = std::min(deep.newton_tol, std::max(0.5 * here, 1e-300));
            double gap_sq = 0.0;
            try {
                auto [u_exact, rep] = nsolve(*space, spec, deep, &result.solution);
                (void)rep;
                gap_sq = detail::energy_diff_sq(*space, u_exact, result.solution, spec.coeff);
            } catch (const SolverError&) {
                // The iterate's residual is at the rounding floor; the
                // distance to the exact discrete solution is unresolvable.
            }
            rec.energy_error_exact_discrete_sq = gap_sq;
            result.approx_ratio.push_back(ind.total_sq > 0 ? gap_sq / ind.total_sq : 0.0);
        }

        result.records.push_back(rec);
        if (store) result.level_solutions.push_back(result.solution);

        // "Estimator vanished" up to floating point: eta is compared against
        // the solution's energy scale, since an exact zero is unreachable
        // once the solves themselves carry rounding.
        const double eta_floor =
            1e-10 * std::max(1.0, std::sqrt(energy_norm_sq(*space, result.solution, spec.coeff)));
        if (result.mesh.vertex_count() > config.max_vertices ||
            ind.total_sq <= eta_floor * eta_floor)
            return;

        StopWatch mark_watch;
        const MarkSet marks = dorfler_mark(ind, config.theta);
        result.records.back().t_mark_ms = mark_watch.ms();
        result.records.back().marked = marks.tets.size();
        if (marks.tets.empty()) return;

        StopWatch refine_watch;
        result.mesh.bisect_in_place(marks.tets);
        result.records.back().t_refine_ms = refine_watch.ms();

        const FeFunction u_prev = std::move(result.solution);
        space = std::make_unique<FeSpace>(result.mesh, config.assembly_quad_degree);

        StopWatch solve_watch;
        double assembly_ms = 0;
        SolveReport report;
        try {
            if (config.mode == SolveMode::Inexact) {
                auto [u, rep] = newton_update(u_prev, *space, spec, config.solver, &assembly_ms);
                result.solution = std::move(u);
                report = rep;
            } else {
                const FeFunction warm = prolongate(u_prev, result.mesh);
                auto [u, rep] = nsolve(*space, spec, config.solver, &warm, &assembly_ms);
                result.solution = std::move(u);
                report = rep;
            }
        } catch (const SolverError& e) {
            throw SolverError("level " + std::to_string(level + 1) + ": " + e.what());
        }
        pending.t_solve_ms = solve_watch.ms();
        pending.t_assembly_ms = assembly_ms;
        pending.newton_iters = report.newton_iters;
        pending.cg_iters = report.cg_iters_total;
        pending.clamp_events = report.clamp_events;

        if (config.diagnostics.quasi_orthogonality && spec.exact) {
            const FeFunction prev_here = prolongate(u_prev, result.mesh);
            const double e_prev = result.records.back().energy_error_sq;
            const double e_here = detail::record_energy_error(*space, result.solution, spec,
                                                              config.error_quad_degree);
            const double step_sq =
                detail::energy_diff_sq(*space, result.solution, prev_here, spec.coeff);
            result.quasi_lambda.push_back(
                e_prev > std::numeric_limits<double>::min() * 1e8
                    ? (e_here + step_sq) / e_prev
                    : std::numeric_limits<double>::quiet_NaN());
            pending.energy_error_sq = e_here;  // avoid recomputing at the next level
        }
        ++level;
    }
}

// Full adaptive run: a converged nonlinear solve on the initial mesh, then
// the loop in the configured mode.
inline AfemResult afem_run(const Mesh& mesh0, const ProblemSpec& spec, const AfemConfig& config) {
    config.validate();
    spec.validate();
    AfemResult result;
    result.mesh = mesh0;
    auto space = std::make_unique<FeSpace>(result.mesh, config.assembly_quad_degree);

    AfemRecord pending;
    StopWatch solve_watch;
    double assembly_ms = 0;
    auto [u0, report] = nsolve(*space, spec, config.solver, nullptr, &assembly_ms);
    result.solution = std::move(u0);
    pending.t_solve_ms = solve_watch.ms();
    pending.t_assembly_ms = assembly_ms;
    pending.newton_iters = report.newton_iters;
    pending.cg_iters = report.cg_iters_total;
    pending.clamp_events = report.clamp_events;

    afem_loop(result, spec, config, space, 0, pending);
    return result;
}

inline AfemResult afem_inexact(const Mesh& mesh0, const ProblemSpec& spec, AfemConfig config) {
    config.mode = SolveMode::Inexact;
    return afem_run(mesh0, spec, config);
}

inline AfemResult afem_exact(const Mesh& mesh0, const ProblemSpec& spec, AfemConfig config) {
    config.mode = SolveMode::Exact;
    return afem_run(mesh0, spec, config);
}

struct ContractionReport {
    double gamma = 0;                    // the gamma the per-step estimates were computed at
    std::vector<double> alpha;           // alpha_k for the step k -> k+1
    double best_gamma = 0;               // grid-search optimum over gamma in [1e-3, 1e3]
    double best_max_alpha = 0;           // max_{k >= k_min} alpha_k at best_gamma
    std::vector<double> alpha_at_best;
};

// Per-step contraction factors of the quasi-error Q_k = error^2 + gamma eta^2:
// alpha_k = sqrt(Q_{k+1} / Q_k). Requires recorded energy errors.
inline ContractionReport contraction_diagnostics(const std::vector<AfemRecord>& records,
                                                 double gamma, std::size_t k_min = 2) {
    AFEM_REQUIRE(records.size() >= 2, "contraction estimates need at least two levels");
    for (const auto& r : records)
        AFEM_REQUIRE(std::isfinite(r.energy_error_sq),
                     "contraction estimates need per-level energy errors");

    auto alphas_for = [&](double g) {
        std::vector<double> a(records.size() - 1);
        for (std::size_t k = 0; k + 1 < records.size(); ++k) {
            const double qk = records[k].energy_error_sq + g * records[k].eta_total_sq;
            const double qk1 = records[k + 1].energy_error_sq + g * records[k + 1].eta_total_sq;
            a[k] = std::sqrt(qk1 / qk);
        }
        return a;
    };

    ContractionReport rep;
    rep.gamma = gamma;
    rep.alpha = alphas_for(gamma);

    rep.best_max_alpha = std::numeric_limits<double>::infinity();
    for (int i = 0; i <= 60; ++i) {
        const double g = std::pow(10.0, -3.0 + i * 0.1);
        const auto a = alphas_for(g);
        double worst = 0;
        for (std::size_t k = k_min; k < a.size(); ++k) worst = std::max(worst, a[k]);
        if (worst < rep.best_max_alpha) {
            rep.best_max_alpha = worst;
            rep.best_gamma = g;
            rep.alpha_at_best = a;
        }
    }
    return rep;
}

// Per-step quasi-orthogonality constants from a finished run with stored
// solutions: Lambda_k = (E_{k+1}^2 + ||u_{k+1} - u_k||^2) / E_k^2, the
// smallest constant making the inequality tight at step k. The difference
// norm is evaluated on the final mesh, where prolongation embeds both
// levels exactly.
inline std::vector<double> quasi_orthogonality_check(const AfemResult& run,
                                                     const ProblemSpec& spec) {
    AFEM_REQUIRE(run.level_solutions.size() == run.records.size() && !run.records.empty(),
                 "quasi-orthogonality needs stored per-level solutions");
    for (const auto& r : run.records)
        AFEM_REQUIRE(std::isfinite(r.energy_error_sq),
                     "quasi-orthogonality needs per-level energy errors");

    const FeSpace space(run.mesh);
    std::vector<double> lambda(run.records.size() - 1);
    FeFunction prev = prolongate(run.level_solutions[0], run.mesh);
    for (std::size_t k = 0; k + 1 < run.records.size(); ++k) {
        FeFunction next = prolongate(run.level_solutions[k + 1], run.mesh);
        const double step_sq = detail::energy_diff_sq(space, next, prev, spec.coeff);
        const double e_prev = run.records[k].energy_error_sq;
        lambda[k] = e_prev > std::numeric_limits<double>::min() * 1e8
                        ? (run.records[k + 1].energy_error_sq + step_sq) / e_prev
                        : std::numeric_limits<double>::quiet_NaN();
        prev = std::move(next);
    }
    return lambda;
}

}  // namespace afem
