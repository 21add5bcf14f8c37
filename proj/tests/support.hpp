#pragma once

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <sys/wait.h>

#include "amdflow/structure.hpp"

namespace testing_support {

namespace fs = std::filesystem;

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    TempDir()
    {
        std::string pattern = (fs::temp_directory_path() / "amdflow-test-XXXXXX").string();
        if (!::mkdtemp(pattern.data()))
            throw std::runtime_error("mkdtemp failed");
        path_ = pattern;
    }
    ~TempDir()
    {
        std::error_code ec;
        fs::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const fs::path& path() const { return path_; }
    fs::path operator/(const std::string& rel) const { return path_ / rel; }

private:
    fs::path path_;
};

inline void write_text(const fs::path& path, const std::string& text)
{
    if (path.has_parent_path())
        fs::create_directories(path.parent_path());
    std::ofstream(path, std::ios::binary | std::ios::trunc) << text;
}

inline std::string read_text(const fs::path& path)
{
    std::ifstream in(path, std::ios::binary);
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

inline amdflow::Lattice cubic(double a)
{
    return amdflow::Lattice(amdflow::Mat3{{{a, 0, 0}, {0, a, 0}, {0, 0, a}}});
}

inline amdflow::CrystalStructure make(const amdflow::Lattice& lattice,
                                      const std::vector<std::pair<std::string, amdflow::Vec3>>& sites,
                                      std::string label = {})
{
    std::vector<amdflow::Site> out;
    for (const auto& [el, frac] : sites)
        out.push_back({amdflow::ElementSymbol(el), frac});
    return amdflow::CrystalStructure(lattice, std::move(out), std::move(label));
}

/// Random right-handed cell with reasonable shape, rows of length 2..6 Angstrom.
inline amdflow::Lattice random_lattice(std::mt19937_64& rng, double skew = 0.6)
{
    std::uniform_real_distribution<double> len(2.0, 6.0), off(-skew, skew);
    for (;;) {
        amdflow::Mat3 m{};
        for (int r = 0; r < 3; ++r)
            for (int c = 0; c < 3; ++c)
                m[r][c] = (r == c ? len(rng) : off(rng) * len(rng));
        const double det = amdflow::dot(m[0], amdflow::cross(m[1], m[2]));
        if (det > 1.0)
            return amdflow::Lattice(m);
    }
}

inline amdflow::Vec3 random_frac(std::mt19937_64& rng)
{
    std::uniform_real_distribution<double> u(0.0, 1.0);
    return {u(rng), u(rng), u(rng)};
}

struct CommandResult {
    int exit_code = -1;
    std::string output; // stdout and stderr interleaved
};

/// Runs a shell command line, capturing combined output.
inline CommandResult run_command(const std::string& command)
{
    CommandResult r;
    FILE* pipe = ::popen((command + " 2>&1").c_str(), "r");
    if (!pipe)
        return r;
    char buf[4096];
    std::size_t n;
    while ((n = std::fread(buf, 1, sizeof buf, pipe)) > 0)
        r.output.append(buf, n);
    const int status = ::pclose(pipe);
    r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return r;
}

inline std::string shell_quote(const std::string& s)
{
    std::string out = "'";
    for (char c : s) {
        if (c == '\'')
            out += "'\\''";
        else
            out += c;
    }
    return out + "'";
}

} // namespace testing_support
