#pragma once

#include <chrono>
#include <filesystem>
#include <string>
#include <vector>

namespace amdflow {

struct ProcessResult {
    int exit_code = -1;  // valid when exited
    bool exited = false; // normal termination
    bool timed_out = false;
    int signal = 0; // terminating signal, when not exited
    std::chrono::duration<double> wall_time{0};

    bool ok() const { return exited && exit_code == 0; }
    std::string describe() const;
};

/// Runs argv[0] (PATH lookup) with cwd set to `cwd`, stdout/stderr redirected to
/// files in `cwd`. The child gets its own process group; on timeout the whole
/// group is killed. Throws std::runtime_error if the process cannot be started.
ProcessResult run_process(const std::vector<std::string>& argv, const std::filesystem::path& cwd,
                          std::chrono::duration<double> timeout, const std::string& log_stem = "process");

} // namespace amdflow
