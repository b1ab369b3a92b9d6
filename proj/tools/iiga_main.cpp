#include "iiga/io.hpp"
#include "iiga/multistep.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

namespace {

enum class LogLevel { Error = 0, Info = 1, Debug = 2 };

LogLevel log_level() {
    const char* env = std::getenv("IIGA_LOG_LEVEL");
    if (!env) return LogLevel::Info;
    const std::string s(env);
    if (s == "error") return LogLevel::Error;
    if (s == "debug") return LogLevel::Debug;
    return LogLevel::Info;
}

void info(const std::string& msg) {
    if (log_level() >= LogLevel::Info) std::cerr << "[iiga] " << msg << "\n";
}

void debug(const std::string& msg) {
    if (log_level() >= LogLevel::Debug) std::cerr << "[iiga:debug] " << msg << "\n";
}

struct CommonOpts {
    std::string config_path;
    std::string outdir = "out";
    int refine = -1;
    int threads = -1;
    std::string seed_middle;
};

void apply_overrides(iiga::RunConfig& cfg, const CommonOpts& opts) {
    if (opts.refine >= 0) cfg.settings.refine_levels = opts.refine;
    if (opts.threads >= 1) cfg.settings.threads = opts.threads;
    if (!opts.seed_middle.empty()) {
        iiga::Json j;
        j["file"] = opts.seed_middle;
        cfg.user_middle_surface = iiga::surface_from_json(j, "seed-middle", "");
    }
    cfg.validate();
}

int run_onestep(const iiga::RunConfig& cfg, const std::string& outdir) {
    const iiga::Configuration final_cfg = iiga::Configuration::make(
        *cfg.final_surface, iiga::ConfigTag::Final, cfg.material);
    const iiga::OneStepPipeline pipe = iiga::one_step_pipeline(
        final_cfg, cfg.material, cfg.process, cfg.settings, cfg.symmetry);
    const iiga::RunReport rep = iiga::report_from_onestep(pipe, cfg);
    iiga::write_report(rep, outdir, cfg.outputs);
    info("one-step solve " + std::string(pipe.result.converged ? "converged" : "did NOT converge") +
         " after " + std::to_string(pipe.result.iterations) + " iterations; report in " + outdir);
    return pipe.result.converged ? 0 : 2;
}

int run_multistep_cmd(const iiga::RunConfig& cfg, const std::string& outdir) {
    if (cfg.oneStepOnly()) {
        info("no user middle surface in the config; falling back to the one-step solver");
        return run_onestep(cfg, outdir);
    }
    const iiga::Configuration final_cfg = iiga::Configuration::make(
        *cfg.final_surface, iiga::ConfigTag::Final, cfg.material);
    const iiga::Configuration middle_cfg = iiga::Configuration::make(
        *cfg.user_middle_surface, iiga::ConfigTag::Middle, cfg.material);
    const iiga::MultiStepReport ms = iiga::run_multistep(
        final_cfg, middle_cfg, cfg.material, cfg.process, cfg.settings, cfg.symmetry);
    const iiga::RunReport rep = iiga::report_from_multistep(ms, cfg);
    iiga::write_report(rep, outdir, cfg.outputs);
    info("multi-step solve " + std::string(ms.converged ? "converged" : "did NOT converge") +
         " after " + std::to_string(ms.outer_iterations) + " outer iterations; report in " +
         outdir);
    return ms.converged ? 0 : 2;
}

int run_bench(const std::string& which, const CommonOpts& opts, int resolution) {
    iiga::RunConfig cfg;
    if (which == "box") {
        iiga::BoxBenchmarkParams bp;
        if (resolution > 0) bp.resolution = resolution;
        cfg = iiga::gen_box_benchmark(bp);
    } else {
        iiga::CupBenchmarkParams cp;
        if (resolution > 0) cp.resolution = resolution;
        cfg = iiga::gen_cup_benchmark(cp);
    }
    if (opts.refine >= 0) cfg.settings.refine_levels = opts.refine;
    if (opts.threads >= 1) cfg.settings.threads = opts.threads;

    std::filesystem::create_directories(opts.outdir);
    {
        std::ofstream out(opts.outdir + "/config.json");
        out << iiga::config_to_json(cfg).dump(2) << "\n";
    }

    const iiga::Configuration final_cfg = iiga::Configuration::make(
        *cfg.final_surface, iiga::ConfigTag::Final, cfg.material);
    const iiga::Configuration middle_cfg = iiga::Configuration::make(
        *cfg.user_middle_surface, iiga::ConfigTag::Middle, cfg.material);

    using Clock = std::chrono::steady_clock;
    const auto t0 = Clock::now();
    const iiga::OneStepPipeline one = iiga::one_step_pipeline(
        final_cfg, cfg.material, cfg.process, cfg.settings, cfg.symmetry);
    const auto t1 = Clock::now();
    const iiga::MultiStepReport multi = iiga::run_multistep(
        final_cfg, middle_cfg, cfg.material, cfg.process, cfg.settings, cfg.symmetry);
    const auto t2 = Clock::now();

    iiga::write_report(iiga::report_from_onestep(one, cfg), opts.outdir + "/onestep",
                       cfg.outputs);
    iiga::write_report(iiga::report_from_multistep(multi, cfg), opts.outdir + "/multistep",
                       cfg.outputs);

    const double sec_one = std::chrono::duration<double>(t1 - t0).count();
    const double sec_multi = std::chrono::duration<double>(t2 - t1).count();

    iiga::Json summary;
    summary["benchmark"] = which;
    summary["one_step"] = {{"converged", one.result.converged},
                           {"wall_seconds", sec_one}};
    summary["multi_step"] = {{"converged", multi.converged},
                             {"wall_seconds", sec_multi},
                             {"outer_iterations", multi.outer_iterations}};
    summary["cpu_time_ratio"] = sec_multi / std::max(sec_one, 1e-9);
    if (which == "cup") {
        summary["one_step"]["blank_diameter_mm"] =
            iiga::cup_blank_diameter(one.result.blank.surface);
        summary["multi_step"]["blank_diameter_mm"] =
            iiga::cup_blank_diameter(multi.blank.surface);
        summary["reference_blank_diameter_mm"] = cfg.metadata["reference_blank_diameter_mm"];
    }
    auto peak_exceedance = [&](std::span<const iiga::MaterialState> states) {
        double peak = 0.0;
        for (const auto& st : states)
            peak = std::max(peak, st.eps1 - iiga::forming_limit_major(cfg.material, st.eps2));
        return peak;
    };
    auto max_thinning = [&](std::span<const iiga::MaterialState> states) {
        double thin = 0.0;
        for (const auto& st : states) thin = std::max(thin, -st.eps3);
        return thin;
    };
    summary["one_step"]["peak_fld_exceedance"] = peak_exceedance(one.final_used.states);
    summary["one_step"]["max_thinning"] = max_thinning(one.final_used.states);
    summary["multi_step"]["peak_fld_exceedance"] = peak_exceedance(multi.final_states);
    summary["multi_step"]["max_thinning"] = max_thinning(multi.final_states);
    {
        std::ofstream out(opts.outdir + "/summary.json");
        out << summary.dump(2) << "\n";
    }
    info("benchmark '" + which + "' finished; summary in " + opts.outdir + "/summary.json");
    return (one.result.converged && multi.converged) ? 0 : 2;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Multi-step inverse isogeometric analysis of sheet metal stamping"};
    app.require_subcommand(1);

    CommonOpts opts;
    int bench_resolution = -1;

    auto add_common = [&](CLI::App* cmd, bool need_config) {
        if (need_config)
            cmd->add_option("--config", opts.config_path, "path to the JSON run configuration")
                ->required();
        cmd->add_option("--out", opts.outdir, "output directory (default: out)");
        cmd->add_option("--refine", opts.refine, "override the number of refinement passes");
        cmd->add_option("--seed-middle", opts.seed_middle,
                        "surface JSON file overriding the user middle surface");
        cmd->add_option("--threads", opts.threads, "worker threads for element loops");
    };

    CLI::App* cmd_run = app.add_subcommand("run", "full multi-step inverse solve");
    add_common(cmd_run, true);
    CLI::App* cmd_one = app.add_subcommand("onestep", "one-step inverse solve only");
    add_common(cmd_one, true);
    CLI::App* cmd_val = app.add_subcommand("validate", "parse and validate a configuration");
    cmd_val->add_option("--config", opts.config_path, "path to the JSON run configuration")
        ->required();
    CLI::App* cmd_bench = app.add_subcommand("bench", "generate and run a built-in benchmark");
    std::string bench_kind;
    cmd_bench->add_option("kind", bench_kind, "box or cup")->required();
    add_common(cmd_bench, false);
    cmd_bench->add_option("--resolution", bench_resolution,
                          "control points per direction at the coarsest level");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*cmd_val) {
            const iiga::RunConfig cfg = iiga::parse_config(opts.config_path);
            std::cout << iiga::config_to_json(cfg).dump(2) << "\n";
            info("configuration is valid (" +
                 std::string(cfg.oneStepOnly() ? "one-step-only mode" : "multi-step mode") + ")");
            return 0;
        }
        if (*cmd_run || *cmd_one) {
            iiga::RunConfig cfg = iiga::parse_config(opts.config_path);
            apply_overrides(cfg, opts);
            debug("configuration loaded from " + opts.config_path);
            return *cmd_one ? run_onestep(cfg, opts.outdir)
                            : run_multistep_cmd(cfg, opts.outdir);
        }
        if (*cmd_bench) {
            if (bench_kind != "box" && bench_kind != "cup") {
                std::cerr << "error: bench kind must be 'box' or 'cup'\n";
                return 1;
            }
            return run_bench(bench_kind, opts, bench_resolution);
        }
    } catch (const iiga::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "unexpected error: " << e.what() << "\n";
        return 1;
    }
    return 1;
}
