// amdflow: command-line driver for the discovery workflow.
//
// Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "amdflow/config.hpp"
#include "amdflow/engine.hpp"
#include "amdflow/hull.hpp"
#include "amdflow/workflow.hpp"

namespace fs = std::filesystem;
using namespace amdflow;

namespace {

constexpr int kOk = 0;
constexpr int kRuntime = 1;
constexpr int kUsage = 2;

void setup_logging()
{
    auto logger = spdlog::stderr_color_mt("amdflow");
    logger->set_pattern("[%H:%M:%S.%e] [%^%l%$] %v");
    spdlog::set_default_logger(logger);
    spdlog::set_level(spdlog::level::info);
    if (const char* env = std::getenv("AMDFLOW_LOG")) {
        const std::string level = env;
        if (level == "error")
            spdlog::set_level(spdlog::level::err);
        else if (level == "warn")
            spdlog::set_level(spdlog::level::warn);
        else if (level == "info")
            spdlog::set_level(spdlog::level::info);
        else if (level == "debug")
            spdlog::set_level(spdlog::level::debug);
        else
            spdlog::warn("AMDFLOW_LOG={} not recognised (error|warn|info|debug); using info", level);
    }
}

std::string slurp(const fs::path& p)
{
    std::ifstream in(p, std::ios::binary);
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

int print_config_error(const ConfigError& e)
{
    std::cerr << "amdflow: invalid configuration\n";
    for (const auto& d : e.diagnostics())
        std::cerr << "  " << d << "\n";
    return kUsage;
}

int execute(const RunConfig& cfg)
{
    const WorkflowReport r = run_workflow(cfg);
    std::cout << "candidates:   " << r.candidates << "\n"
              << "filtered:     " << r.filtered << "\n"
              << "calculations: " << r.calc_done << " done, " << r.calc_failed << " failed\n";
    if (!r.postprocess_done) {
        for (const auto& [key, cause] : r.failures)
            std::cerr << "failed " << key.substr(0, 12) << ": " << cause << "\n";
        std::cerr << "amdflow: post-processing did not complete\n";
        return kRuntime;
    }
    const WorkLayout work{cfg.work_dir};
    std::cout << "promoted:     " << r.thermo.promoted.size() << " (" << work.promoted().string() << ")\n"
              << "hull table:   " << work.hull_table().string() << "\n";
    if (r.thermo.notice.empty())
        std::cout << "phase diagram: " << work.phase_diagram().string() << "\n";
    else
        std::cout << "phase diagram: " << r.thermo.notice << "\n";
    if (r.executed == 0)
        std::cout << "nothing to do\n";
    return kOk;
}

int cmd_run(const fs::path& config_path)
{
    RunConfig cfg;
    try {
        cfg = load_config(config_path);
    } catch (const ConfigError& e) {
        return print_config_error(e);
    }
    const WorkLayout work{cfg.work_dir};
    const std::string snapshot = config_to_toml(cfg);
    if (fs::exists(work.ledger()) && fs::exists(work.snapshot()) && slurp(work.snapshot()) != snapshot) {
        std::cerr << "amdflow: " << work.root.string()
                  << " holds a run with a different configuration; use `amdflow resume` or a new work_dir\n";
        return kUsage;
    }
    WorkDirLock lock(cfg.work_dir);
    std::ofstream(work.snapshot(), std::ios::binary | std::ios::trunc) << snapshot;
    return execute(cfg);
}

int cmd_resume(const fs::path& dir)
{
    const WorkLayout work{fs::absolute(dir)};
    if (!fs::exists(work.ledger()) || !fs::exists(work.snapshot())) {
        std::cerr << "amdflow: " << dir.string() << " has no ledger and config snapshot to resume from\n";
        return kUsage;
    }
    RunConfig cfg;
    try {
        cfg = load_config(work.snapshot());
    } catch (const ConfigError& e) {
        return print_config_error(e);
    }
    cfg.work_dir = work.root;
    WorkDirLock lock(cfg.work_dir);
    return execute(cfg);
}

int cmd_status(const fs::path& dir)
{
    const WorkLayout work{dir};
    if (!fs::exists(work.ledger())) {
        std::cerr << "amdflow: no ledger in " << dir.string() << "\n";
        return kUsage;
    }
    std::cout << format_status(amdflow::status(work.ledger()));
    return kOk;
}

int cmd_report(const fs::path& dir)
{
    const WorkLayout work{fs::absolute(dir)};
    if (!fs::exists(work.snapshot())) {
        std::cerr << "amdflow: no config snapshot in " << dir.string() << "\n";
        return kUsage;
    }
    RunConfig cfg;
    try {
        cfg = load_config(work.snapshot());
    } catch (const ConfigError& e) {
        return print_config_error(e);
    }
    cfg.work_dir = work.root;
    WorkDirLock lock(cfg.work_dir);
    ThermoSummary t;
    try {
        t = run_report(cfg);
    } catch (const ResultsError& e) {
        std::cerr << "amdflow: " << e.what() << "\n";
        return kUsage;
    }
    std::cout << "entries:  " << t.entries << "\n"
              << "promoted: " << t.promoted.size() << "\n";
    if (!t.notice.empty())
        std::cout << t.notice << "\n";
    return kOk;
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"amdflow: high-throughput materials discovery workflow"};
    app.require_subcommand(1);

    std::string config;
    auto* run = app.add_subcommand("run", "Run the workflow described by a TOML config");
    run->add_option("-c,--config", config, "Config file")->required();

    std::string dir;
    auto* resume = app.add_subcommand("resume", "Resume an interrupted run from its work directory");
    resume->add_option("work_dir", dir, "Work directory")->required();
    auto* stat = app.add_subcommand("status", "Print task counts per stage and failures");
    stat->add_option("work_dir", dir, "Work directory")->required();
    auto* report = app.add_subcommand("report", "Recompute the hull, plot and promotions from stored results");
    report->add_option("work_dir", dir, "Work directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kUsage;
    }

    setup_logging();
    try {
        if (run->parsed())
            return cmd_run(config);
        if (resume->parsed())
            return cmd_resume(dir);
        if (stat->parsed())
            return cmd_status(dir);
        return cmd_report(dir);
    } catch (const ConfigError& e) {
        return print_config_error(e);
    } catch (const std::exception& e) {
        std::cerr << "amdflow: " << e.what() << "\n";
        return kRuntime;
    }
}
