// Orchestration of one experiment run: configuration (file + overrides),
// driving both solver modes, attaching reference errors, and writing the
// CSV / plot / diagnostics outputs.
#pragma once

#include <filesystem>
#include <fstream>
#include <sstream>
#include <map>
#include <optional>

#include "afem/experiments.hpp"

namespace afem {

enum class RunMode { Exact, Inexact, Both };

struct RunOptions {
    ExperimentId problem = ExperimentId::CornerSingularity;
    RunMode mode = RunMode::Both;
    double theta = 0.5;
    std::size_t max_vertices = 200000;
    bool max_vertices_set = false;  // tracks whether a per-problem default applies
    std::string out_dir = "out";
    bool dump_levels = false;
    DiagnosticsFlags diagnostics;
    double newton_tol = 1e-8;
    double cg_rel_tol = 1e-10;
    double reference_multiplier = 10;
    std::size_t slope_min_vertices = 10000;
    unsigned long seed = 0;  // recorded for reproducibility bookkeeping; the pipeline is deterministic
    ExperimentOptions experiment;
};

// Flat "key = value" configuration files; '#' starts a comment.
inline std::map<std::string, std::string> parse_config_file(std::istream& in) {
    std::map<std::string, std::string> kv;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        auto trim = [](std::string s) {
            const auto b = s.find_first_not_of(" \t\r");
            const auto e = s.find_last_not_of(" \t\r");
            return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
        };
        if (trim(line).empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
        const std::string key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
        if (key.empty() || value.empty())
            throw ConfigError("config line " + std::to_string(lineno) + ": empty key or value");
        kv[key] = value;
    }
    return kv;
}

inline ExperimentId parse_problem(const std::string& s) {
    if (s == "corner") return ExperimentId::CornerSingularity;
    if (s == "pbe") return ExperimentId::PbeCube;
    if (s == "pbe-jump") return ExperimentId::PbeJump;
    throw ConfigError("unknown problem '" + s + "' (expected corner | pbe | pbe-jump)");
}

inline RunMode parse_mode(const std::string& s) {
    if (s == "exact") return RunMode::Exact;
    if (s == "inexact") return RunMode::Inexact;
    if (s == "both") return RunMode::Both;
    throw ConfigError("unknown mode '" + s + "' (expected exact | inexact | both)");
}

inline void parse_diagnostics_list(const std::string& csv, DiagnosticsFlags& flags) {
    std::stringstream ss(csv);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (item == "contraction")
            flags.contraction = true;
        else if (item == "quasi")
            flags.quasi_orthogonality = true;
        else if (item == "approx")
            flags.approx_property = true;
        else if (item == "linf")
            flags.linf = true;
        else if (!item.empty())
            throw ConfigError("unknown diagnostic '" + item + "'");
    }
}

// Applies config-file entries; command-line flags are applied afterwards and
// therefore win.
inline void apply_config(const std::map<std::string, std::string>& kv, RunOptions& opt) {
    auto as_double = [](const std::string& k, const std::string& v) {
        try {
            std::size_t used = 0;
            const double d = std::stod(v, &used);
            if (used != v.size()) throw std::invalid_argument(v);
            return d;
        } catch (const std::exception&) {
            throw ConfigError("config key '" + k + "': '" + v + "' is not a number");
        }
    };
    for (const auto& [k, v] : kv) {
        if (k == "problem")
            opt.problem = parse_problem(v);
        else if (k == "mode")
            opt.mode = parse_mode(v);
        else if (k == "theta")
            opt.theta = as_double(k, v);
        else if (k == "max_vertices") {
            opt.max_vertices = static_cast<std::size_t>(as_double(k, v));
            opt.max_vertices_set = true;
        } else if (k == "out")
            opt.out_dir = v;
        else if (k == "dump_meshes")
            opt.dump_levels = v == "1" || v == "true";
        else if (k == "diagnostics")
            parse_diagnostics_list(v, opt.diagnostics);
        else if (k == "tol")
            opt.newton_tol = as_double(k, v);
        else if (k == "cg_tol")
            opt.cg_rel_tol = as_double(k, v);
        else if (k == "reference_multiplier")
            opt.reference_multiplier = as_double(k, v);
        else if (k == "slope_min_vertices")
            opt.slope_min_vertices = static_cast<std::size_t>(as_double(k, v));
        else if (k == "seed")
            opt.seed = static_cast<unsigned long>(as_double(k, v));
        else if (k == "corner_kappa2")
            opt.experiment.corner_kappa2 = as_double(k, v);
        else if (k == "pbe_rhs")
            opt.experiment.pbe_rhs = as_double(k, v);
        else if (k == "corner_u2_duplicate_x")
            opt.experiment.corner_u2_duplicate_x = v == "1" || v == "true";
        else if (k == "molecular_slab")
            opt.experiment.molecular_slab = v == "1" || v == "true";
        else if (k == "corner_initial_n")
            opt.experiment.corner_initial_n = static_cast<int>(as_double(k, v));
        else if (k == "pbe_initial_n")
            opt.experiment.pbe_initial_n = static_cast<int>(as_double(k, v));
        else
            throw ConfigError("unknown config key '" + k + "'");
    }
}

struct ModeOutput {
    AfemResult run;
    ConvergenceTable table;
    std::optional<double> slope;
    std::optional<ReferenceInfo> reference;
};

struct RunOutput {
    std::optional<ModeOutput> exact;
    std::optional<ModeOutput> inexact;
};

namespace detail {

inline void dump_level(const std::filesystem::path& dir, std::size_t level, const Mesh& mesh,
                       const FeFunction& u, const ErrorIndicators& ind) {
    std::ofstream mesh_out(dir / ("mesh_" + std::to_string(level) + ".txt"));
    save_mesh(mesh, mesh_out);
    std::ofstream u_out(dir / ("u_" + std::to_string(level) + ".txt"));
    save_fe_function(u, u_out);
    std::ofstream eta_out(dir / ("eta_" + std::to_string(level) + ".txt"));
    save_indicators(ind, eta_out);
}

inline ModeOutput run_one_mode(const RunOptions& opt, SolveMode mode, const ProblemSpec& spec,
                               const Mesh& mesh0, const std::filesystem::path& out) {
    const std::string tag =
        std::string(experiment_name(opt.problem)) + (mode == SolveMode::Exact ? "_exact" : "_inexact");

    AfemConfig config;
    config.theta = opt.theta;
    config.max_vertices = opt.max_vertices;
    config.mode = mode;
    config.diagnostics = opt.diagnostics;
    config.solver.newton_tol = opt.newton_tol;
    config.solver.cg_rel_tol = opt.cg_rel_tol;
    const bool needs_reference = !spec.exact.has_value();
    config.store_solutions = needs_reference || opt.diagnostics.quasi_orthogonality;

    std::filesystem::path dump_dir;
    if (opt.dump_levels) {
        dump_dir = out / tag;
        std::filesystem::create_directories(dump_dir);
        config.level_observer = [dump_dir](std::size_t level, const Mesh& m, const FeFunction& u,
                                           const ErrorIndicators& ind) {
            dump_level(dump_dir, level, m, u, ind);
        };
    }

    ModeOutput mo;
    mo.run = afem_run(mesh0, spec, config);
    if (needs_reference)
        mo.reference = attach_reference_errors(mo.run, spec, config, opt.reference_multiplier);
    mo.table = make_table(mo.run.records);
    mo.slope = try_fit_slope(mo.table, opt.slope_min_vertices);

    std::ofstream csv(out / (tag + ".csv"));
    write_records_csv(mo.run.records, csv);
    std::ofstream plot(out / ("plot_" + tag + ".dat"));
    write_plot_data(mo.table, plot);

    if (opt.diagnostics.contraction && mo.table.rows.size() >= 2) {
        const ContractionReport rep = contraction_diagnostics(mo.run.records, 1.0);
        std::ofstream dia(out / (tag + "_contraction.csv"));
        dia << "step,alpha_at_gamma1,alpha_at_best_gamma\n";
        for (std::size_t k = 0; k < rep.alpha.size(); ++k)
            dia << k << ',' << format_real(rep.alpha[k]) << ','
                << format_real(rep.alpha_at_best[k]) << "\n";
        dia << "# best_gamma = " << format_real(rep.best_gamma)
            << ", max_alpha(k>=2) = " << format_real(rep.best_max_alpha) << "\n";
    }
    if (opt.diagnostics.quasi_orthogonality && spec.exact) {
        const auto lambda = quasi_orthogonality_check(mo.run, spec);
        std::ofstream dia(out / (tag + "_quasi.csv"));
        dia << "step,lambda\n";
        for (std::size_t k = 0; k < lambda.size(); ++k)
            dia << k << ',' << format_real(lambda[k]) << "\n";
    }
    if (opt.diagnostics.approx_property && !mo.run.approx_ratio.empty()) {
        std::ofstream dia(out / (tag + "_approx.csv"));
        dia << "level,error_exact_discrete_sq,ratio_to_eta_sq\n";
        for (std::size_t k = 0; k < mo.run.approx_ratio.size(); ++k)
            dia << k << ','
                << format_real(mo.run.records[k].energy_error_exact_discrete_sq) << ','
                << format_real(mo.run.approx_ratio[k]) << "\n";
    }
    if (opt.diagnostics.linf) {
        std::ofstream dia(out / (tag + "_linf.txt"));
        for (const auto& r : mo.run.records)
            dia << r.level << ' ' << format_real(r.max_norm_value) << ' ' << r.clamp_events
                << "\n";
    }
    return mo;
}

}  // namespace detail

inline std::size_t default_max_vertices(ExperimentId id) {
    return id == ExperimentId::CornerSingularity ? 200000 : 30000;
}

inline RunOutput run_experiment(RunOptions opt) {
    if (!opt.max_vertices_set) opt.max_vertices = default_max_vertices(opt.problem);

    const std::filesystem::path out(opt.out_dir);
    std::filesystem::create_directories(out);

    auto [spec, mesh0] = make_problem(opt.problem, opt.experiment);

    RunOutput result;
    if (opt.mode == RunMode::Exact || opt.mode == RunMode::Both)
        result.exact = detail::run_one_mode(opt, SolveMode::Exact, spec, mesh0, out);
    if (opt.mode == RunMode::Inexact || opt.mode == RunMode::Both)
        result.inexact = detail::run_one_mode(opt, SolveMode::Inexact, spec, mesh0, out);

    // Reference guide line, anchored on whichever mode ran first.
    const ModeOutput* first = result.exact ? &*result.exact : &*result.inexact;
    std::ofstream ref(out / ("plot_" + std::string(experiment_name(opt.problem)) +
                             "_reference.dat"));
    write_reference_line(first->table, ref);
    return result;
}

}  // namespace afem
