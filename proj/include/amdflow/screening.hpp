#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "amdflow/structure.hpp"

namespace amdflow {

enum class ResourceClass { cpu, accelerator };

std::string_view to_string(ResourceClass c);
/// Throws InvariantError for anything but "cpu" or "accelerator".
ResourceClass resource_class_from(std::string_view s);

/// 64-bit FNV-1a.
std::uint64_t fnv1a64(std::string_view bytes);
/// Advances `state` and returns the next splitmix64 output.
std::uint64_t splitmix64(std::uint64_t& state);
/// Top 53 bits of a 64-bit value as a double in [0, 1).
double unit_interval(std::uint64_t bits);

/// Pair parameters of the built-in surrogate, derived from the element-pair symbols.
struct PairParameters {
    double attraction; // A, eV, in [0.5, 2.0)
    double repulsion;  // B, eV, in [1.0, 4.0)
    double range;      // r0, Angstrom, in [1.5, 3.0)
};

PairParameters surrogate_pair_parameters(const ElementSymbol& a, const ElementSymbol& b);
/// Per-element energy shift of the surrogate, eV/atom, in [-6.0, -2.0).
double surrogate_element_shift(const ElementSymbol& e);

inline constexpr double kSurrogateCutoff = 6.0;

/// Pair term of the surrogate per atom: 1/(2N) sum over sites i and neighbor images j
/// within 6 A of  -A exp(-d/r0) + B exp(-2d/r0).
double surrogate_pair_energy_per_atom(const CrystalStructure& s);

/// Pair term plus the composition-weighted element shifts. The mock calculator's
/// total energy is natoms times this.
double surrogate_energy_per_atom(const CrystalStructure& s);

struct EnergyPrediction {
    std::string structure_id;
    double predicted_ef; // eV/atom
    std::string predictor_name;
};

struct PredictorConfig {
    enum class Kind { builtin, external };

    Kind kind = Kind::builtin;
    std::vector<std::string> command;
    std::size_t batch_size = 64;
    std::optional<double> threshold_ef = 0.0;
    std::optional<std::size_t> top_k;
    double timeout_seconds = 3600.0;
    ResourceClass resource_class = ResourceClass::cpu;

    void validate() const;
};

struct IdentifiedStructure {
    std::string id;
    CrystalStructure structure;
};

class PredictionError : public std::runtime_error {
public:
    PredictionError(const std::string& what, std::vector<std::string> ids)
        : std::runtime_error(what)
        , ids_(std::move(ids))
    {
    }
    /// Structures the failure applies to.
    const std::vector<std::string>& ids() const { return ids_; }

private:
    std::vector<std::string> ids_;
};

/// One prediction per input, in input order. External predictors run in
/// `scratch_dir` (created; must not be shared between concurrent batches).
std::vector<EnergyPrediction> predict_batch(const std::vector<IdentifiedStructure>& batch,
                                            const PredictorConfig& cfg,
                                            const std::filesystem::path& scratch_dir = {});

/// Ids with predicted_ef <= threshold (when set), limited to the top_k lowest
/// (when set), sorted by energy then id.
std::vector<std::string> select_candidates(const std::vector<EnergyPrediction>& predictions,
                                           const PredictorConfig& cfg);

} // namespace amdflow
