#pragma once

#include <chrono>
#include <cstddef>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "amdflow/calculator.hpp"
#include "amdflow/fingerprint.hpp"
#include "amdflow/screening.hpp"
#include "amdflow/structure.hpp"

namespace amdflow {

struct PoolConfig {
    std::string name;
    ResourceClass resource_class = ResourceClass::cpu;
    std::size_t size = 1;
};

/// Defaults applied to every calculation job.
struct CalculatorConfig {
    CalcJobSpec::Kind kind = CalcJobSpec::Kind::mock;
    std::vector<std::string> command;
    double time_limit_seconds = 3600.0;
    ResourceClass resource_class = ResourceClass::cpu;
    std::chrono::milliseconds mock_delay{0};

    CalcJobSpec job(std::string id, CrystalStructure structure) const;
};

struct RunConfig {
    std::vector<ElementSymbol> system;
    std::filesystem::path templates_dir;
    std::filesystem::path work_dir;
    std::size_t max_candidates = 100000;
    bool allow_fewer = true;
    PredictorConfig predictor;
    CalculatorConfig calculator;
    FingerprintParams fingerprint;
    double dedup_threshold = 0.98;
    double e_cut_promote = 0.05;
    /// Optional `<element>\t<eV/atom>` file of elemental reference energies.
    std::optional<std::filesystem::path> references;
    std::vector<PoolConfig> pools;
    int max_attempts = 2;
};

/// Carries one "field: message" line per problem found.
class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(std::vector<std::string> diagnostics);
    const std::vector<std::string>& diagnostics() const { return diagnostics_; }

private:
    std::vector<std::string> diagnostics_;
};

/// Parses a TOML config. Relative paths are resolved against the file's directory.
/// Throws ConfigError listing every problem found.
RunConfig load_config(const std::filesystem::path& path);
RunConfig parse_config(const std::string& toml_text, const std::filesystem::path& base_dir);

/// Field-level problems; empty when the config is usable.
std::vector<std::string> validate_config(const RunConfig& cfg);

/// TOML text that load_config() reads back into an equal config (paths absolute).
std::string config_to_toml(const RunConfig& cfg);

} // namespace amdflow
