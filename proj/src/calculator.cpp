#include "amdflow/calculator.hpp"

#include <cmath>
#include <fstream>
#include <map>
#include <thread>

#include "amdflow/poscar.hpp"
#include "amdflow/process.hpp"

namespace amdflow {

void CalcJobSpec::validate() const
{
    if (structure_id.empty())
        throw InvariantError("calculation job needs a structure id");
    if (kind == Kind::external && command.empty())
        throw InvariantError("external calculator needs a command");
    if (!(time_limit_seconds > 0))
        throw InvariantError("calculator time_limit must be positive");
}

namespace {

CalcResult failed(const CalcJobSpec& job, std::string cause, double wall)
{
    return CalcResult{job.structure_id, 0.0, job.structure, false, wall, std::move(cause)};
}

CalcResult run_external(const CalcJobSpec& job, const std::filesystem::path& dir)
{
    namespace fs = std::filesystem;
    fs::remove_all(dir);
    fs::create_directories(dir);
    write_poscar_file(dir / "POSCAR", job.structure.with_label(job.structure_id));

    ProcessResult proc;
    try {
        proc = run_process(job.command, dir, std::chrono::duration<double>(job.time_limit_seconds), "calc");
    } catch (const std::exception& e) {
        return failed(job, e.what(), 0.0);
    }
    const double wall = proc.wall_time.count();
    if (proc.timed_out)
        return failed(job, "timeout: " + proc.describe(), wall);
    if (!proc.ok())
        return failed(job, "calculator failed: " + proc.describe(), wall);

    std::ifstream in(dir / "result.tsv");
    if (!in)
        return failed(job, "parse: result.tsv missing", wall);
    std::map<std::string, std::string> kv;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r')
            line.pop_back();
        const auto tab = line.find('\t');
        if (line.empty() || tab == std::string::npos)
            continue;
        kv[line.substr(0, tab)] = line.substr(tab + 1);
    }
    if (!kv.count("energy"))
        return failed(job, "parse: result.tsv has no energy", wall);
    double energy = 0;
    try {
        std::size_t used = 0;
        energy = std::stod(kv["energy"], &used);
    } catch (const std::exception&) {
        return failed(job, "parse: bad energy '" + kv["energy"] + "'", wall);
    }
    if (!std::isfinite(energy))
        return failed(job, "parse: non-finite energy", wall);
    bool converged = true;
    if (kv.count("converged")) {
        const auto& c = kv["converged"];
        if (c == "false")
            converged = false;
        else if (c != "true")
            return failed(job, "parse: converged must be true or false", wall);
    }

    CrystalStructure final_structure = job.structure;
    if (fs::exists(dir / "CONTCAR")) {
        try {
            final_structure = read_poscar_file(dir / "CONTCAR").with_label(job.structure.label());
        } catch (const std::exception& e) {
            return failed(job, std::string("parse: CONTCAR: ") + e.what(), wall);
        }
    }
    CalcResult r{job.structure_id, energy, std::move(final_structure), converged, wall, {}};
    if (!converged)
        r.cause = "not converged";
    return r;
}

} // namespace

CalcResult run_calculation(const CalcJobSpec& job, const std::filesystem::path& job_dir)
{
    job.validate();
    if (job.kind == CalcJobSpec::Kind::external)
        return run_external(job, job_dir);

    // The mock reports its simulated duration so repeated runs compare equal.
    if (job.mock_delay.count() > 0)
        std::this_thread::sleep_for(job.mock_delay);
    const double energy = static_cast<double>(job.structure.size()) * surrogate_energy_per_atom(job.structure);
    const std::chrono::duration<double> wall = job.mock_delay;
    return CalcResult{job.structure_id, energy, job.structure, true, wall.count(), {}};
}

} // namespace amdflow
