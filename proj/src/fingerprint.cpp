#include "amdflow/fingerprint.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace amdflow {

std::size_t FingerprintParams::bins() const
{
    return static_cast<std::size_t>(std::llround(cutoff / bin_width));
}

void FingerprintParams::validate() const
{
    if (!(bin_width > 0) || !(cutoff > 2 * bin_width))
        throw InvariantError("fingerprint cutoff must exceed twice the bin width");
    if (!(smearing_sigma > 0))
        throw InvariantError("fingerprint smearing sigma must be positive");
}

StructureFingerprint fingerprint(const CrystalStructure& s, const FingerprintParams& p)
{
    p.validate();
    StructureFingerprint fp;
    fp.params = p;
    fp.natoms = s.size();
    const std::size_t nbins = p.bins();
    const double weight = 1.0 / static_cast<double>(s.size());
    const double inv = 1.0 / (p.smearing_sigma * std::sqrt(2.0));
    // Bins farther than this from the peak receive less than 1e-20 of its mass.
    const double reach = 10.0 * p.smearing_sigma;

    for (std::size_t i = 0; i < s.size(); ++i) {
        const auto& ei = s.sites()[i].element;
        for_each_neighbor(s, i, p.cutoff, [&](std::size_t j, double d) {
            const auto& ej = s.sites()[j].element;
            auto& channel = fp.channels[ei <= ej ? ElementPair{ei, ej} : ElementPair{ej, ei}];
            if (channel.empty())
                channel.assign(nbins, 0.0);
            const auto first = static_cast<long>(std::floor((d - reach) / p.bin_width));
            const auto last = static_cast<long>(std::floor((d + reach) / p.bin_width));
            for (long b = std::max(0L, first); b <= std::min<long>(last, static_cast<long>(nbins) - 1); ++b) {
                const double lo = static_cast<double>(b) * p.bin_width;
                const double hi = lo + p.bin_width;
                channel[b] += weight * 0.5 * (std::erf((hi - d) * inv) - std::erf((lo - d) * inv));
            }
        });
    }
    return fp;
}

double similarity(const StructureFingerprint& a, const StructureFingerprint& b)
{
    if (!(a.params == b.params))
        throw FingerprintMismatch("fingerprints were computed with different parameters");
    double ab = 0.0, aa = 0.0, bb = 0.0;
    for (const auto& [key, va] : a.channels) {
        aa += std::inner_product(va.begin(), va.end(), va.begin(), 0.0);
        auto it = b.channels.find(key);
        if (it != b.channels.end())
            ab += std::inner_product(va.begin(), va.end(), it->second.begin(), 0.0);
    }
    for (const auto& [key, vb] : b.channels)
        bb += std::inner_product(vb.begin(), vb.end(), vb.begin(), 0.0);
    if (aa == 0.0 && bb == 0.0)
        return 1.0;
    if (aa == 0.0 || bb == 0.0)
        return 0.0;
    return std::clamp(ab / (std::sqrt(aa) * std::sqrt(bb)), 0.0, 1.0);
}

std::vector<std::string> dedup(const std::vector<DedupItem>& items, double threshold)
{
    if (!(threshold > 0.0 && threshold <= 1.0))
        throw InvariantError("dedup threshold must be in (0, 1]");
    std::vector<const DedupItem*> order;
    for (const auto& item : items)
        order.push_back(&item);
    std::sort(order.begin(), order.end(), [](const auto* a, const auto* b) {
        if (a->predicted_ef != b->predicted_ef)
            return a->predicted_ef < b->predicted_ef;
        return a->id < b->id;
    });

    std::vector<const DedupItem*> kept;
    for (const auto* item : order) {
        const bool duplicate = std::any_of(kept.begin(), kept.end(), [&](const auto* k) {
            return k->reduced_composition == item->reduced_composition &&
                   similarity(k->fingerprint, item->fingerprint) >= threshold;
        });
        if (!duplicate)
            kept.push_back(item);
    }
    std::vector<std::string> out;
    for (const auto* k : kept)
        out.push_back(k->id);
    return out;
}

} // namespace amdflow
