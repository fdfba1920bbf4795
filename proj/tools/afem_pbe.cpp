// Command-line front end: runs one of the three study problems in the exact
// and/or inexact solver mode and writes per-level CSVs, plot data and
// optional diagnostics into the output directory.
//
//   afem-pbe run --problem corner --mode both --theta 0.5
//       --max-vertices 200000 --out results/corner
//
// Exit codes: 0 success, 2 solver non-convergence, 3 budget exceeded,
// 4 invalid configuration.

#include <cstdio>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "afem/run.hpp"

namespace {

void print_summary(const char* label, const afem::ModeOutput& mo) {
    std::printf("%s: %zu levels, final N = %zu, final eta = %.6g\n", label,
                mo.run.records.size(), mo.run.records.back().vertices,
                std::sqrt(mo.run.records.back().eta_total_sq));
    if (mo.reference)
        std::printf("%s: reference mesh with %zu vertices (%zu extra refinements)\n", label,
                    mo.reference->reference_vertices, mo.reference->levels_added);
    if (mo.slope)
        std::printf("%s: fitted slope of log(error) vs log(N) = %.4f\n", label, *mo.slope);
    else
        std::printf("%s: slope not fitted (needs >= 4 levels in the window)\n", label);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Adaptive FEM for the regularized nonlinear Poisson-Boltzmann equation"};
    app.require_subcommand(1);

    CLI::App* run = app.add_subcommand("run", "Run a convergence study");
    std::string problem = "corner", mode = "both", out_dir = "out", diagnostics, config_path;
    double theta = -1, tol = -1, cg_tol = -1, multiplier = -1;
    long long max_vertices = -1;
    unsigned long seed = 0;
    bool dump_meshes = false;
    run->add_option("--problem", problem, "corner | pbe | pbe-jump");
    run->add_option("--mode", mode, "exact | inexact | both");
    run->add_option("--theta", theta, "bulk marking parameter in (0, 1]");
    run->add_option("--max-vertices", max_vertices, "vertex budget of the adaptive loop");
    run->add_option("--out", out_dir, "output directory");
    run->add_option("--diagnostics", diagnostics,
                    "comma list: contraction,quasi,approx,linf");
    run->add_option("--tol", tol, "Newton residual tolerance (default 1e-8)");
    run->add_option("--cg-tol", cg_tol, "CG relative tolerance (default 1e-10)");
    run->add_option("--reference-multiplier", multiplier,
                    "reference mesh size as a multiple of the finest level (default 10)");
    run->add_option("--seed", seed, "recorded in the outputs; runs are deterministic");
    run->add_option("--config", config_path, "flat key = value file; flags override it");
    run->add_flag("--dump-meshes", dump_meshes, "write per-level mesh/solution/indicator dumps");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 4;
    }

    try {
        afem::RunOptions opt;
        if (!config_path.empty()) {
            std::ifstream in(config_path);
            if (!in.good()) throw afem::ConfigError("cannot open config file '" + config_path + "'");
            afem::apply_config(afem::parse_config_file(in), opt);
        }
        // Command-line flags win over file values.
        if (run->count("--problem") || config_path.empty()) opt.problem = afem::parse_problem(problem);
        if (run->count("--mode") || config_path.empty()) opt.mode = afem::parse_mode(mode);
        if (theta > 0) opt.theta = theta;
        if (max_vertices >= 0) {
            opt.max_vertices = static_cast<std::size_t>(max_vertices);
            opt.max_vertices_set = true;
        }
        if (run->count("--out") || opt.out_dir.empty()) opt.out_dir = out_dir;
        if (!diagnostics.empty()) afem::parse_diagnostics_list(diagnostics, opt.diagnostics);
        if (tol > 0) opt.newton_tol = tol;
        if (cg_tol > 0) opt.cg_rel_tol = cg_tol;
        if (multiplier > 0) opt.reference_multiplier = multiplier;
        if (run->count("--seed")) opt.seed = seed;
        if (dump_meshes) opt.dump_levels = true;
        if (opt.theta <= 0 || opt.theta > 1)
            throw afem::ConfigError("theta must lie in (0, 1]");

        const afem::RunOutput out = afem::run_experiment(opt);
        if (out.exact) print_summary("exact", *out.exact);
        if (out.inexact) print_summary("inexact", *out.inexact);
        std::printf("outputs written to %s\n", opt.out_dir.c_str());
        return 0;
    } catch (const afem::ConfigError& e) {
        std::fprintf(stderr, "configuration error: %s\n", e.what());
        return 4;
    } catch (const afem::BudgetError& e) {
        std::fprintf(stderr, "budget exceeded: %s\n", e.what());
        return 3;
    } catch (const afem::SolverError& e) {
        std::fprintf(stderr, "solver failure: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
}
