// Diagonally preconditioned conjugate gradients, the damped Newton solve
// used on the coarsest mesh, and the single Newton update applied after each
// refinement.
#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "afem/fe.hpp"
#include "afem/sparse.hpp"

namespace afem {

struct SolverConfig {
    double newton_tol = 1e-8;       // Euclidean norm of the residual over free vertices
    int newton_max_iter = 50;
    double cg_rel_tol = 1e-10;
    std::size_t cg_max_iter = 0;    // 0 selects 10*sqrt(n) + 1000
    int damping_max_halvings = 30;

    void validate() const {
        AFEM_REQUIRE(newton_tol > 0 && cg_rel_tol > 0, "tolerances must be positive");
        AFEM_REQUIRE(newton_max_iter >= 1 && damping_max_halvings >= 1, "iteration caps must be >= 1");
    }

    std::size_t cg_cap(std::size_t n) const {
        return cg_max_iter ? cg_max_iter
                           : static_cast<std::size_t>(10.0 * std::sqrt(double(n))) + 1000;
    }
};

struct SolveReport {
    int newton_iters = 0;
    std::size_t cg_iters_total = 0;
    double final_residual_norm = 0;
    int damping_events = 0;            // step halvings across all Newton iterations
    std::size_t clamp_events = 0;      // clamps while evaluating the returned iterate's residual
    std::size_t clamp_events_total = 0;
    double wall_time_ms = 0;
    std::vector<double> residual_history;  // accepted iterates, strictly decreasing
};

struct PcgResult {
    std::size_t iterations = 0;
    double rel_residual = 0;
    bool converged = false;
};

// CG with inverse-diagonal preconditioning. Convergence is declared on the
// true residual: ||Ax - b|| <= rel_tol * ||b||. The optional observer sees
// every iterate (used by tests).
inline PcgResult pcg_solve(const CsrMatrix& A, std::span<const double> b, std::vector<double>& x,
                           const SolverConfig& config,
                           const std::function<void(std::span<const double>)>& observer = {}) {
    const std::size_t n = A.rows();
    x.assign(n, 0.0);
    PcgResult res;

    const double bnorm = norm2(b);
    if (bnorm == 0.0) {
        res.converged = true;
        return res;
    }
    const double target = config.cg_rel_tol * bnorm;

    std::vector<double> inv_diag = A.diagonal();
    for (std::size_t i = 0; i < n; ++i) {
        AFEM_REQUIRE(inv_diag[i] > 0, "CG preconditioner needs a positive diagonal");
        inv_diag[i] = 1.0 / inv_diag[i];
    }

    std::vector<double> r(b.begin(), b.end());  // x = 0 initially
    std::vector<double> z(n), p(n), Ap(n);
    for (std::size_t i = 0; i < n; ++i) z[i] = inv_diag[i] * r[i];
    p = z;
    double rz = dot(r, z);

    const std::size_t cap = config.cg_cap(n);
    while (res.iterations < cap) {
        A.mult(p, Ap);
        const double alpha = rz / dot(p, Ap);
        axpy(alpha, p, x);
        axpy(-alpha, Ap, r);
        ++res.iterations;
        if (observer) observer(x);

        if (norm2(r) <= target) {
            // Guard against recurrence drift before declaring convergence.
            A.mult(x, Ap);
            for (std::size_t i = 0; i < n; ++i) r[i] = b[i] - Ap[i];
            if (norm2(r) <= target) break;
        }
        for (std::size_t i = 0; i < n; ++i) z[i] = inv_diag[i] * r[i];
        const double rz_next = dot(r, z);
        const double beta = rz_next / rz;
        rz = rz_next;
        for (std::size_t i = 0; i < n; ++i) p[i] = z[i] + beta * p[i];
    }
    res.rel_residual = norm2(r) / bnorm;
    res.converged = res.rel_residual <= config.cg_rel_tol;
    return res;
}

namespace detail {

// Residual norm over free vertices (assemble_residual already zeroes the
// Dirichlet rows).
inline double residual_norm(const std::vector<double>& r) { return norm2(r); }

inline void constrain_newton_system(const FeSpace& space, const ProblemSpec& spec, CsrMatrix& J,
                                    std::vector<double>& rhs) {
    if (spec.bc_type != BoundaryTag::Dirichlet) return;
    SparseSystem sys;
    sys.matrix = std::move(J);
    sys.rhs = std::move(rhs);
    sys.constrained.assign(space.dof_count(), 0);
    sys.constrained_values.assign(space.dof_count(), 0.0);  // the update vanishes on the boundary
    for (std::size_t i = 0; i < space.dof_count(); ++i) sys.constrained[i] = space.dirichlet_mask()[i];
    apply_dirichlet(sys);
    J = std::move(sys.matrix);
    rhs = std::move(sys.rhs);
}

}  // namespace detail

// Damped Newton iteration run to ||residual|| <= newton_tol. The step length
// is halved until the residual norm strictly decreases. Throws SolverError
// when an iteration or damping cap is hit.
inline std::pair<FeFunction, SolveReport> nsolve(const FeSpace& space, const ProblemSpec& spec,
                                                 const SolverConfig& config,
                                                 const FeFunction* initial_guess = nullptr,
                                                 double* assembly_ms = nullptr) {
    spec.validate();
    config.validate();
    StopWatch watch;

    FeFunction u = space.make_function();
    if (initial_guess) {
        space.check_function(*initial_guess);
        u.values = initial_guess->values;
    }
    set_dirichlet_values(space, spec, u);

    SolveReport report;
    StopWatch assembly_watch;
    const CsrMatrix stiffness = assemble_stiffness(space, spec.coeff);
    const std::vector<double> load = assemble_load(space, spec.rhs);

    std::size_t clamps = 0;
    std::vector<double> r = assemble_residual(space, u, spec, clamps, &stiffness, &load);
    report.clamp_events = clamps;
    report.clamp_events_total += clamps;
    double rnorm = detail::residual_norm(r);
    report.residual_history.push_back(rnorm);
    if (assembly_ms) *assembly_ms += assembly_watch.ms();

    FeFunction trial = space.make_function();
    while (rnorm > config.newton_tol) {
        if (report.newton_iters >= config.newton_max_iter)
            throw SolverError("Newton did not reach tolerance " +
                              std::to_string(config.newton_tol) + " in " +
                              std::to_string(config.newton_max_iter) +
                              " iterations (residual " + std::to_string(rnorm) + ")");

        StopWatch jac_watch;
        std::size_t jac_clamps = 0;
        CsrMatrix J = assemble_jacobian(space, u, spec.coeff, jac_clamps, &stiffness);
        report.clamp_events_total += jac_clamps;
        std::vector<double> rhs(r.size());
        for (std::size_t i = 0; i < r.size(); ++i) rhs[i] = -r[i];
        detail::constrain_newton_system(space, spec, J, rhs);
        if (assembly_ms) *assembly_ms += jac_watch.ms();

        std::vector<double> delta;
        const PcgResult cg = pcg_solve(J, rhs, delta, config);
        report.cg_iters_total += cg.iterations;
        if (!cg.converged)
            throw SolverError("CG stalled at relative residual " +
                              std::to_string(cg.rel_residual) + " after " +
                              std::to_string(cg.iterations) + " iterations");

        // Step halving until the residual strictly decreases.
        double lambda = 1.0;
        int halvings = 0;
        std::vector<double> r_trial;
        double rnorm_trial;
        while (true) {
            trial.values = u.values;
            axpy(lambda, delta, trial.values);
            StopWatch res_watch;
            clamps = 0;
            r_trial = assemble_residual(space, trial, spec, clamps, &stiffness, &load);
            if (assembly_ms) *assembly_ms += res_watch.ms();
            report.clamp_events_total += clamps;
            rnorm_trial = detail::residual_norm(r_trial);
            if (rnorm_trial < rnorm) break;
            if (++halvings > config.damping_max_halvings)
                throw SolverError("Newton damping failed to reduce the residual after " +
                                  std::to_string(config.damping_max_halvings) + " halvings");
            lambda *= 0.5;
            ++report.damping_events;
        }
        u.values.swap(trial.values);
        r.swap(r_trial);
        rnorm = rnorm_trial;
        report.residual_history.push_back(rnorm);
        report.clamp_events = clamps;
        ++report.newton_iters;
    }

    report.final_residual_norm = rnorm;
    report.wall_time_ms = watch.ms();
    return {std::move(u), report};
}

// Single Newton step on a refined mesh: prolongate the previous solution,
// reset its Dirichlet values to the nodal boundary data, and apply one
// linearized solve. No damping, no iteration.
inline std::pair<FeFunction, SolveReport> newton_update(const FeFunction& u_prev,
                                                        const FeSpace& fine_space,
                                                        const ProblemSpec& spec,
                                                        const SolverConfig& config,
                                                        double* assembly_ms = nullptr) {
    spec.validate();
    config.validate();
    StopWatch watch;

    FeFunction w = prolongate(u_prev, fine_space.mesh());
    set_dirichlet_values(fine_space, spec, w);

    SolveReport report;
    StopWatch assembly_watch;
    const CsrMatrix stiffness = assemble_stiffness(fine_space, spec.coeff);
    const std::vector<double> load = assemble_load(fine_space, spec.rhs);

    std::size_t clamps = 0;
    std::vector<double> r = assemble_residual(fine_space, w, spec, clamps, &stiffness, &load);
    report.clamp_events_total += clamps;
    for (auto& v : r) v = -v;

    CsrMatrix J = assemble_jacobian(fine_space, w, spec.coeff, clamps, &stiffness);
    report.clamp_events_total += clamps;
    detail::constrain_newton_system(fine_space, spec, J, r);
    if (assembly_ms) *assembly_ms += assembly_watch.ms();

    std::vector<double> delta;
    const PcgResult cg = pcg_solve(J, r, delta, config);
    report.cg_iters_total = cg.iterations;
    report.newton_iters = 1;
    if (!cg.converged)
        throw SolverError("CG stalled in the Newton update (relative residual " +
                          std::to_string(cg.rel_residual) + ")");

    axpy(1.0, delta, w.values);

    StopWatch res_watch;
    clamps = 0;
    const std::vector<double> r_final = assemble_residual(fine_space, w, spec, clamps, &stiffness, &load);
    if (assembly_ms) *assembly_ms += res_watch.ms();
    report.clamp_events = clamps;
    report.clamp_events_total += clamps;
    report.final_residual_norm = detail::residual_norm(r_final);
    report.wall_time_ms = watch.ms();
    return {std::move(w), report};
}

}  // namespace afem
