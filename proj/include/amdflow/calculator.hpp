#pragma once

#include <chrono>
#include <filesystem>
#include <string>
#include <vector>

#include "amdflow/screening.hpp"
#include "amdflow/structure.hpp"

namespace amdflow {

struct CalcJobSpec {
    enum class Kind { mock, external };

    std::string structure_id;
    CrystalStructure structure;
    Kind kind = Kind::mock;
    std::vector<std::string> command;
    double time_limit_seconds = 3600.0;
    ResourceClass resource_class = ResourceClass::cpu;
    /// Mock only: wall time each mock calculation occupies, for scheduling experiments.
    std::chrono::milliseconds mock_delay{0};

    void validate() const;
};

/// Failures are data: a failed run has converged == false and a cause.
struct CalcResult {
    std::string structure_id;
    double total_energy = 0.0; // eV, whole cell
    CrystalStructure final_structure;
    bool converged = false;
    double wall_time = 0.0; // seconds
    std::string cause;      // empty on success
};

/// Runs one calculation. External jobs get a fresh `job_dir` holding POSCAR; the
/// command runs there and must leave result.tsv (and optionally CONTCAR).
/// The mock ignores `job_dir` and returns natoms * surrogate energy per atom.
CalcResult run_calculation(const CalcJobSpec& job, const std::filesystem::path& job_dir);

} // namespace amdflow
