#include "amdflow/process.hpp"

#include <algorithm>
#include <cerrno>
#include <cstring>
#include <fcntl.h>
#include <signal.h>
#include <stdexcept>
#include <sys/wait.h>
#include <thread>
#include <unistd.h>

namespace amdflow {

std::string ProcessResult::describe() const
{
    if (timed_out)
        return "timeout after " + std::to_string(wall_time.count()) + " s";
    if (exited)
        return "exit code " + std::to_string(exit_code);
    return "killed by signal " + std::to_string(signal);
}

ProcessResult run_process(const std::vector<std::string>& argv, const std::filesystem::path& cwd,
                          std::chrono::duration<double> timeout, const std::string& log_stem)
{
    if (argv.empty())
        throw std::runtime_error("empty command");

    // Everything the child touches is prepared before fork.
    std::vector<char*> args;
    for (const auto& a : argv)
        args.push_back(const_cast<char*>(a.c_str()));
    args.push_back(nullptr);
    const std::string dir = cwd.string();
    const std::string out_path = (cwd / (log_stem + ".stdout")).string();
    const std::string err_path = (cwd / (log_stem + ".stderr")).string();

    int exec_pipe[2];
    if (pipe2(exec_pipe, O_CLOEXEC) != 0)
        throw std::runtime_error(std::string("pipe failed: ") + std::strerror(errno));

    const auto start = std::chrono::steady_clock::now();
    const pid_t pid = fork();
    if (pid < 0) {
        close(exec_pipe[0]);
        close(exec_pipe[1]);
        throw std::runtime_error(std::string("fork failed: ") + std::strerror(errno));
    }
    if (pid == 0) {
        setpgid(0, 0);
        int err = 0;
        if (chdir(dir.c_str()) != 0) {
            err = errno;
        } else {
            const int out = open(out_path.c_str(), O_WRONLY | O_CREAT | O_TRUNC, 0644);
            const int errf = open(err_path.c_str(), O_WRONLY | O_CREAT | O_TRUNC, 0644);
            const int devnull = open("/dev/null", O_RDONLY);
            if (out >= 0)
                dup2(out, STDOUT_FILENO);
            if (errf >= 0)
                dup2(errf, STDERR_FILENO);
            if (devnull >= 0)
                dup2(devnull, STDIN_FILENO);
            execvp(args[0], args.data());
            err = errno;
        }
        [[maybe_unused]] auto n = write(exec_pipe[1], &err, sizeof err);
        _exit(127);
    }
    setpgid(pid, pid);
    close(exec_pipe[1]);
    int exec_errno = 0;
    const bool exec_failed = read(exec_pipe[0], &exec_errno, sizeof exec_errno) == sizeof exec_errno;
    close(exec_pipe[0]);

    ProcessResult result;
    int status = 0;
    const auto deadline = start + std::chrono::duration_cast<std::chrono::steady_clock::duration>(timeout);
    auto sleep_for = std::chrono::milliseconds(1);
    for (;;) {
        const pid_t r = waitpid(pid, &status, WNOHANG);
        if (r == pid)
            break;
        if (r < 0 && errno != EINTR)
            throw std::runtime_error(std::string("waitpid failed: ") + std::strerror(errno));
        if (std::chrono::steady_clock::now() >= deadline) {
            kill(-pid, SIGKILL);
            kill(pid, SIGKILL);
            waitpid(pid, &status, 0);
            result.timed_out = true;
            break;
        }
        std::this_thread::sleep_for(sleep_for);
        sleep_for = std::min(sleep_for * 2, std::chrono::milliseconds(20));
    }
    result.wall_time = std::chrono::steady_clock::now() - start;
    if (exec_failed)
        throw std::runtime_error("cannot execute '" + argv[0] + "': " + std::strerror(exec_errno));
    if (!result.timed_out) {
        if (WIFEXITED(status)) {
            result.exited = true;
            result.exit_code = WEXITSTATUS(status);
        } else if (WIFSIGNALED(status)) {
            result.signal = WTERMSIG(status);
        }
    }
    return result;
}

} // namespace amdflow
