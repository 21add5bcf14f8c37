#pragma once

#include <cstddef>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "amdflow/structure.hpp"

namespace amdflow {

struct FingerprintParams {
    double cutoff = 10.0;        // Angstrom
    double bin_width = 0.1;      // Angstrom
    double smearing_sigma = 0.05; // Angstrom

    std::size_t bins() const;
    /// Throws InvariantError unless cutoff > 2 * bin_width and sigma > 0.
    void validate() const;

    bool operator==(const FingerprintParams&) const = default;
};

using ElementPair = std::pair<ElementSymbol, ElementSymbol>;

/// Smeared pair-distance histograms, one channel per unordered element pair.
struct StructureFingerprint {
    FingerprintParams params;
    std::map<ElementPair, std::vector<double>> channels; // key.first <= key.second
    std::size_t natoms = 0;
};

class FingerprintMismatch : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Every ordered site pair (periodic images included, self at zero excluded) with
/// d <= cutoff deposits a Gaussian of weight 1/natoms and width sigma, integrated
/// over each bin [b*w, (b+1)*w).
StructureFingerprint fingerprint(const CrystalStructure& s, const FingerprintParams& p = {});

/// Cosine similarity over the union of channels, clamped to [0, 1]. Two empty
/// fingerprints are identical (1). Throws FingerprintMismatch on differing params.
double similarity(const StructureFingerprint& a, const StructureFingerprint& b);

struct DedupItem {
    std::string id;
    double predicted_ef;
    Composition reduced_composition;
    StructureFingerprint fingerprint;
};

/// Greedy lowest-energy-first filter: an item survives iff its similarity to every
/// earlier survivor with the same reduced composition is below `threshold`.
/// Returns survivor ids in processing order (energy, then id).
std::vector<std::string> dedup(const std::vector<DedupItem>& items, double threshold);

} // namespace amdflow
