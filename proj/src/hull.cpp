#include "amdflow/hull.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <set>

namespace amdflow {

namespace {

constexpr double kPivotEpsilon = 1e-12;
constexpr double kWeightEpsilon = 1e-12;
constexpr double kLocateSlack = 1e-9;

/// LU factorisation with partial pivoting of a small dense square matrix.
class SmallLu {
public:
    explicit SmallLu(std::vector<std::vector<double>> a)
        : n_(a.size())
        , a_(std::move(a))
        , perm_(n_)
    {
        std::iota(perm_.begin(), perm_.end(), 0);
        for (std::size_t k = 0; k < n_; ++k) {
            std::size_t p = k;
            for (std::size_t r = k + 1; r < n_; ++r)
                if (std::abs(a_[r][k]) > std::abs(a_[p][k]))
                    p = r;
            if (std::abs(a_[p][k]) < kPivotEpsilon) {
                singular_ = true;
                return;
            }
            std::swap(a_[k], a_[p]);
            std::swap(perm_[k], perm_[p]);
            for (std::size_t r = k + 1; r < n_; ++r) {
                a_[r][k] /= a_[k][k];
                for (std::size_t c = k + 1; c < n_; ++c)
                    a_[r][c] -= a_[r][k] * a_[k][c];
            }
        }
    }

    bool singular() const { return singular_; }

    std::vector<double> solve(const std::vector<double>& b) const
    {
        std::vector<double> x(n_);
        for (std::size_t r = 0; r < n_; ++r) {
            double s = b[perm_[r]];
            for (std::size_t c = 0; c < r; ++c)
                s -= a_[r][c] * x[c];
            x[r] = s;
        }
        for (std::size_t r = n_; r-- > 0;) {
            double s = x[r];
            for (std::size_t c = r + 1; c < n_; ++c)
                s -= a_[r][c] * x[c];
            x[r] = s / a_[r][r];
        }
        return x;
    }

private:
    std::size_t n_;
    std::vector<std::vector<double>> a_;
    std::vector<std::size_t> perm_;
    bool singular_ = false;
};

/// Columns are the fraction vectors of the facet's points.
SmallLu facet_system(const std::vector<HullPoint>& points, const std::vector<std::size_t>& facet)
{
    const std::size_t n = facet.size();
    std::vector<std::vector<double>> m(n, std::vector<double>(n));
    for (std::size_t c = 0; c < n; ++c)
        for (std::size_t r = 0; r < n; ++r)
            m[r][c] = points[facet[c]].fractions[r];
    return SmallLu(std::move(m));
}

double interpolate(const std::vector<HullPoint>& points, const std::vector<std::size_t>& facet,
                   const std::vector<double>& weights)
{
    double e = 0.0;
    for (std::size_t j = 0; j < facet.size(); ++j)
        e += weights[j] * points[facet[j]].formation_energy;
    return e;
}

std::vector<std::vector<std::size_t>> binary_lower_hull(const std::vector<HullPoint>& points, double tol)
{
    std::vector<std::size_t> order(points.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return points[a].fractions[1] < points[b].fractions[1]; });

    // b is dropped when it is not strictly below the chord from a to p.
    auto not_below = [&](std::size_t a, std::size_t b, std::size_t p) {
        const double xa = points[a].fractions[1], xb = points[b].fractions[1], xp = points[p].fractions[1];
        const double t = (xb - xa) / (xp - xa);
        const double chord = (1.0 - t) * points[a].formation_energy + t * points[p].formation_energy;
        return points[b].formation_energy >= chord - tol;
    };
    std::vector<std::size_t> chain;
    for (std::size_t p : order) {
        while (chain.size() >= 2 && not_below(chain[chain.size() - 2], chain.back(), p))
            chain.pop_back();
        chain.push_back(p);
    }
    std::vector<std::vector<std::size_t>> facets;
    for (std::size_t k = 0; k + 1 < chain.size(); ++k) {
        std::vector<std::size_t> f{chain[k], chain[k + 1]};
        std::sort(f.begin(), f.end());
        facets.push_back(std::move(f));
    }
    std::sort(facets.begin(), facets.end());
    return facets;
}

/// Exact lower-facet enumeration. A point lying on a candidate plane within `tol`
/// is classified with the energies perturbed as E_i - eps_i, eps_0 >> eps_1 >> ...,
/// which triangulates coplanar faces consistently.
std::vector<std::vector<std::size_t>> general_lower_hull(const std::vector<HullPoint>& points, std::size_t corners,
                                                         double tol)
{
    const std::size_t n = points.front().fractions.size();
    std::vector<std::size_t> candidates;
    for (std::size_t i = 0; i < points.size(); ++i)
        if (i < corners || points[i].formation_energy <= tol)
            candidates.push_back(i);

    std::vector<std::vector<std::size_t>> facets;
    std::vector<std::size_t> pick(n);
    std::vector<bool> mask(candidates.size(), false);
    std::fill(mask.begin(), mask.begin() + static_cast<long>(std::min(n, candidates.size())), true);
    if (candidates.size() < n)
        return facets;

    do {
        std::size_t w = 0;
        for (std::size_t c = 0; c < candidates.size(); ++c)
            if (mask[c])
                pick[w++] = candidates[c];
        const SmallLu lu = facet_system(points, pick);
        if (lu.singular())
            continue;

        bool lower = true;
        for (std::size_t q : candidates) {
            if (std::find(pick.begin(), pick.end(), q) != pick.end())
                continue;
            const auto lambda = lu.solve(points[q].fractions);
            const double residual = points[q].formation_energy - interpolate(points, pick, lambda);
            if (residual < -tol) {
                lower = false;
                break;
            }
            if (residual > tol)
                continue;
            // Smallest index with a nonzero coefficient decides the perturbed sign.
            std::size_t deciding = q;
            double coefficient = -1.0;
            for (std::size_t j = 0; j < n; ++j) {
                if (std::abs(lambda[j]) > kWeightEpsilon && pick[j] < deciding) {
                    deciding = pick[j];
                    coefficient = lambda[j];
                }
            }
            if (coefficient < 0) {
                lower = false;
                break;
            }
        }
        if (lower)
            facets.push_back(pick);
    } while (std::prev_permutation(mask.begin(), mask.end()));

    std::sort(facets.begin(), facets.end());
    return facets;
}

} // namespace

ReferenceSet ReferenceSet::from_entries(const std::vector<PhaseEntry>& entries,
                                        const std::map<ElementSymbol, double>& user_refs)
{
    ReferenceSet refs;
    for (const auto& entry : entries) {
        if (!entry.composition.is_elemental())
            continue;
        const auto element = entry.composition.counts().begin()->first;
        const bool better = !refs.contains(element) || entry.energy_per_atom < refs.energy(element) ||
                            (entry.energy_per_atom == refs.energy(element) && entry.id < refs.source_id(element));
        if (better)
            refs.set(element, entry.energy_per_atom, entry.id);
    }
    for (const auto& [element, energy] : user_refs)
        if (!refs.contains(element) || energy < refs.energy(element))
            refs.set(element, energy, "reference:" + element.str());
    return refs;
}

void ReferenceSet::set(const ElementSymbol& e, double energy_per_atom, std::string source_id)
{
    energies_[e] = energy_per_atom;
    sources_[e] = std::move(source_id);
}

double ReferenceSet::energy(const ElementSymbol& e) const
{
    auto it = energies_.find(e);
    if (it == energies_.end())
        throw HullError("no elemental reference for " + e.str());
    return it->second;
}

const std::string& ReferenceSet::source_id(const ElementSymbol& e) const
{
    auto it = sources_.find(e);
    if (it == sources_.end())
        throw HullError("no elemental reference for " + e.str());
    return it->second;
}

std::map<ElementSymbol, double> read_references_tsv(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in)
        throw HullError("cannot read references file " + path.string());
    std::map<ElementSymbol, double> out;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r')
            line.pop_back();
        if (line.empty() || line.front() == '#')
            continue;
        const auto tab = line.find('\t');
        try {
            if (tab == std::string::npos)
                throw std::invalid_argument("missing tab");
            std::size_t used = 0;
            const double e = std::stod(line.substr(tab + 1), &used);
            if (!std::isfinite(e))
                throw std::invalid_argument("non-finite energy");
            out[ElementSymbol(line.substr(0, tab))] = e;
        } catch (const std::exception& e) {
            throw HullError(path.string() + " line " + std::to_string(lineno) + ": " + e.what());
        }
    }
    return out;
}

double formation_energy_per_atom(double total_energy, const Composition& comp, const ReferenceSet& refs)
{
    if (comp.empty())
        throw HullError("formation energy of an empty composition");
    double reference = 0.0;
    for (const auto& [element, n] : comp.counts())
        reference += static_cast<double>(n) * refs.energy(element);
    return (total_energy - reference) / static_cast<double>(comp.total());
}

double formation_energy(const PhaseEntry& entry, const ReferenceSet& refs)
{
    return formation_energy_per_atom(entry.energy_per_atom * static_cast<double>(entry.composition.total()),
                                     entry.composition, refs);
}

std::vector<double> ConvexHullResult::fractions_of(const Composition& comp) const
{
    for (const auto& e : comp.elements())
        if (std::find(elements_.begin(), elements_.end(), e) == elements_.end())
            throw HullError(comp.formula() + " contains " + e.str() + ", which is not in the hull system");
    std::vector<double> out;
    for (const auto& e : elements_)
        out.push_back(comp.fraction(e));
    return out;
}

double ConvexHullResult::formation_energy(const PhaseEntry& entry) const
{
    return amdflow::formation_energy(entry, refs_);
}

std::vector<std::vector<std::string>> ConvexHullResult::facet_ids() const
{
    std::vector<std::vector<std::string>> out;
    for (const auto& f : facets_) {
        std::vector<std::string> ids;
        for (std::size_t i : f)
            ids.push_back(points_[i].id);
        out.push_back(std::move(ids));
    }
    return out;
}

std::vector<std::string> ConvexHullResult::vertices() const
{
    std::set<std::size_t> used;
    for (const auto& f : facets_)
        used.insert(f.begin(), f.end());
    std::vector<std::string> out;
    for (std::size_t i : used)
        out.push_back(points_[i].id);
    return out;
}

ConvexHullResult::Location ConvexHullResult::locate(const std::vector<double>& fractions) const
{
    std::optional<Location> best;
    double best_min = -std::numeric_limits<double>::infinity();
    for (std::size_t f = 0; f < facets_.size(); ++f) {
        const SmallLu lu = facet_system(points_, facets_[f]);
        if (lu.singular())
            continue;
        auto w = lu.solve(fractions);
        const double lowest = *std::min_element(w.begin(), w.end());
        if (lowest > best_min) {
            best_min = lowest;
            best = Location{f, std::move(w)};
            if (lowest >= 0.0)
                break;
        }
    }
    if (!best || best_min < -kLocateSlack)
        throw HullError("composition lies outside every hull facet");
    return *best;
}

double ConvexHullResult::hull_energy(const Composition& comp) const
{
    const auto loc = locate(fractions_of(comp));
    return interpolate(points_, facets_[loc.facet], loc.weights);
}

double ConvexHullResult::energy_above_hull(const PhaseEntry& entry) const
{
    return formation_energy(entry) - hull_energy(entry.composition);
}

Decomposition ConvexHullResult::decompose(const Composition& comp) const
{
    const auto loc = locate(fractions_of(comp));
    const auto& facet = facets_[loc.facet];
    Decomposition d;
    d.hull_energy = interpolate(points_, facet, loc.weights);
    for (std::size_t j = 0; j < facet.size(); ++j)
        if (loc.weights[j] > kWeightEpsilon)
            d.parts.emplace_back(points_[facet[j]].id, loc.weights[j]);
    std::sort(d.parts.begin(), d.parts.end());
    return d;
}

ConvexHullResult build_hull(const std::vector<PhaseEntry>& entries, const ReferenceSet& refs,
                            const std::vector<ElementSymbol>& elements)
{
    ConvexHullResult hull;
    hull.refs_ = refs;
    if (elements.empty()) {
        std::set<ElementSymbol> all;
        for (const auto& e : entries)
            for (const auto& el : e.composition.elements())
                all.insert(el);
        hull.elements_.assign(all.begin(), all.end());
    } else {
        hull.elements_ = elements;
    }
    const std::size_t n = hull.elements_.size();
    if (n < 2)
        throw HullError("a hull needs at least 2 elements, got " + std::to_string(n));
    for (const auto& e : hull.elements_)
        refs.energy(e); // throws naming the missing element

    // Lowest formation energy per reduced composition; ties go to the smaller id.
    std::map<Composition, HullPoint> best;
    for (const auto& entry : entries) {
        const Composition comp = entry.composition.reduced();
        HullPoint p{entry.id, comp, hull.fractions_of(comp), formation_energy(entry, refs)};
        if (!std::isfinite(p.formation_energy))
            throw HullError("non-finite energy for " + entry.id);
        auto it = best.find(comp);
        if (it == best.end())
            best.emplace(comp, std::move(p));
        else if (p.formation_energy < it->second.formation_energy ||
                 (p.formation_energy == it->second.formation_energy && p.id < it->second.id))
            it->second = std::move(p);
    }

    for (const auto& element : hull.elements_) {
        const Composition corner({{element, 1}});
        auto it = best.find(corner);
        if (it != best.end() && it->second.formation_energy <= 0.0) {
            hull.points_.push_back(it->second);
            best.erase(it);
        } else {
            hull.points_.push_back(HullPoint{refs.source_id(element), corner, hull.fractions_of(corner), 0.0});
        }
    }
    std::vector<HullPoint> rest;
    for (auto& [comp, p] : best)
        rest.push_back(std::move(p));
    std::sort(rest.begin(), rest.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
    for (auto& p : rest)
        hull.points_.push_back(std::move(p));

    hull.facets_ = n == 2 ? binary_lower_hull(hull.points_, hull.tolerance_)
                          : general_lower_hull(hull.points_, n, hull.tolerance_);
    if (hull.facets_.empty())
        throw HullError("fewer than " + std::to_string(n) + " affinely independent compositions");
    return hull;
}

} // namespace amdflow
