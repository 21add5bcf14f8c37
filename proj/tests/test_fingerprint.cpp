#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "amdflow/fingerprint.hpp"
#include "support.hpp"

using namespace amdflow;
using testing_support::cubic;
using testing_support::make;

namespace {

// Independent oracle: enumerate translations in [-5,5]^3 and integrate each Gaussian
// over every bin, without any reach truncation.
std::vector<double> oracle_channel(const CrystalStructure& s, const FingerprintParams& p)
{
    std::vector<double> out(p.bins(), 0.0);
    const auto& L = s.lattice().rows();
    const double w = 1.0 / static_cast<double>(s.size());
    for (std::size_t i = 0; i < s.size(); ++i)
        for (std::size_t j = 0; j < s.size(); ++j)
            for (int a = -5; a <= 5; ++a)
                for (int b = -5; b <= 5; ++b)
                    for (int c = -5; c <= 5; ++c) {
                        if (i == j && a == 0 && b == 0 && c == 0)
                            continue;
                        const int t[3] = {a, b, c};
                        Vec3 cart{0, 0, 0};
                        for (int r = 0; r < 3; ++r) {
                            const double f = s.sites()[j].frac[r] - s.sites()[i].frac[r] + t[r];
                            for (int k = 0; k < 3; ++k)
                                cart[k] += f * L[r][k];
                        }
                        const double d = std::sqrt(dot(cart, cart));
                        if (d > p.cutoff)
                            continue;
                        for (std::size_t bin = 0; bin < out.size(); ++bin) {
                            const double lo = static_cast<double>(bin) * p.bin_width, hi = lo + p.bin_width;
                            const double z = p.smearing_sigma * std::sqrt(2.0);
                            out[bin] += w * 0.5 * (std::erf((hi - d) / z) - std::erf((lo - d) / z));
                        }
                    }
    return out;
}

CrystalStructure relabeled(const CrystalStructure& s, const std::string& from, const std::string& to)
{
    std::vector<Site> sites;
    for (const auto& site : s.sites())
        sites.push_back({site.element.str() == from ? ElementSymbol(to) : site.element, site.frac});
    return CrystalStructure(s.lattice(), sites);
}

CrystalStructure perturbed(const CrystalStructure& s, std::mt19937_64& rng, double eps)
{
    std::normal_distribution<double> g(0.0, eps);
    std::vector<Site> sites;
    for (const auto& site : s.sites())
        sites.push_back({site.element, {site.frac[0] + g(rng), site.frac[1] + g(rng), site.frac[2] + g(rng)}});
    return CrystalStructure(s.lattice(), sites);
}

StructureFingerprint raw(std::vector<double> v)
{
    StructureFingerprint fp;
    fp.params = {1.0, 0.25, 0.1};
    fp.natoms = 1;
    fp.channels[{ElementSymbol("Cu"), ElementSymbol("Cu")}] = std::move(v);
    return fp;
}

DedupItem item(const std::string& id, double ef, const CrystalStructure& s, const FingerprintParams& p)
{
    return {id, ef, composition_of(s).reduced(), fingerprint(s, p)};
}

const FingerprintParams kFast{6.0, 0.1, 0.05};

} // namespace

TEST(Fingerprint, CubicCopperMatchesNeighborOracle)
{
    const auto s = make(cubic(3.0), {{"Cu", {0, 0, 0}}});
    const FingerprintParams p;
    const auto fp = fingerprint(s, p);
    ASSERT_EQ(fp.channels.size(), 1u);
    const auto& v = fp.channels.at({ElementSymbol("Cu"), ElementSymbol("Cu")});
    ASSERT_EQ(v.size(), 100u);
    const auto expected = oracle_channel(s, p);
    for (std::size_t b = 0; b < v.size(); ++b)
        EXPECT_NEAR(v[b], expected[b], 1e-14) << "bin " << b;
    // 6 images at 3.0 spread symmetrically around the 2.9|3.0 bin edge; 12 at 4.2426 stay
    // within [3.8, 4.7), since the Gaussians are negligible beyond 8 sigma.
    auto range = [&](std::size_t lo, std::size_t hi) {
        double t = 0;
        for (std::size_t b = lo; b <= hi; ++b)
            t += v[b];
        return t;
    };
    EXPECT_NEAR(range(25, 34), 6.0, 1e-9);
    EXPECT_NEAR(range(25, 29), 3.0, 1e-9);
    EXPECT_NEAR(range(38, 46), 12.0, 1e-9);
    for (double x : v)
        EXPECT_GE(x, 0.0);
}

TEST(Fingerprint, MultiSpeciesMatchesOracleInTotal)
{
    const auto s = make(cubic(3.2), {{"Ce", {0, 0, 0}}, {"Fe", {0.5, 0.5, 0.5}}});
    const auto fp = fingerprint(s, kFast);
    EXPECT_EQ(fp.channels.size(), 3u);
    std::vector<double> sum(kFast.bins(), 0.0);
    for (const auto& [key, v] : fp.channels) {
        EXPECT_LE(key.first, key.second);
        for (std::size_t b = 0; b < v.size(); ++b)
            sum[b] += v[b];
    }
    const auto expected = oracle_channel(s, kFast);
    for (std::size_t b = 0; b < sum.size(); ++b)
        EXPECT_NEAR(sum[b], expected[b], 1e-13);
}

TEST(Fingerprint, TranslationReorderingAndRelabeling)
{
    std::mt19937_64 rng(17);
    for (int t = 0; t < 20; ++t) {
        const auto L = testing_support::random_lattice(rng, 0.3);
        std::vector<std::pair<std::string, Vec3>> sites;
        for (int i = 0; i < 3; ++i)
            sites.push_back({i == 0 ? "Cu" : "Fe", testing_support::random_frac(rng)});
        const auto s = make(L, sites);
        const auto fp = fingerprint(s, kFast);

        const Vec3 shift = testing_support::random_frac(rng);
        std::vector<std::pair<std::string, Vec3>> moved;
        for (auto it = sites.rbegin(); it != sites.rend(); ++it)
            moved.push_back({it->first, it->second + shift});
        const auto ft = fingerprint(make(L, moved), kFast);
        ASSERT_EQ(ft.channels.size(), fp.channels.size());
        for (const auto& [key, v] : fp.channels)
            for (std::size_t b = 0; b < v.size(); ++b)
                EXPECT_NEAR(ft.channels.at(key)[b], v[b], 1e-12);
        EXPECT_NEAR(similarity(fp, ft), 1.0, 1e-12);
    }

    const auto cu = make(cubic(3.0), {{"Cu", {0, 0, 0}}});
    const auto ni = relabeled(cu, "Cu", "Ni");
    EXPECT_EQ(fingerprint(ni).channels.at({ElementSymbol("Ni"), ElementSymbol("Ni")}),
              fingerprint(cu).channels.at({ElementSymbol("Cu"), ElementSymbol("Cu")}));
}

TEST(Similarity, Examples)
{
    const auto cu = make(cubic(3.0), {{"Cu", {0, 0, 0}}});
    const auto fe = make(cubic(3.0), {{"Fe", {0, 0, 0}}});
    const auto cu2 = make(cubic(3.05), {{"Cu", {0, 0, 0}}});
    const auto f = fingerprint(cu);
    EXPECT_NEAR(similarity(f, f), 1.0, 1e-12);
    EXPECT_EQ(similarity(f, fingerprint(fe)), 0.0);
    const double s = similarity(f, fingerprint(cu2));
    EXPECT_GT(s, 0.0);
    EXPECT_LT(s, 1.0);

    // Computed again from the oracle histograms.
    const auto a = oracle_channel(cu, FingerprintParams{});
    const auto b = oracle_channel(cu2, FingerprintParams{});
    double ab = 0, aa = 0, bb = 0;
    for (std::size_t k = 0; k < a.size(); ++k) {
        ab += a[k] * b[k];
        aa += a[k] * a[k];
        bb += b[k] * b[k];
    }
    EXPECT_NEAR(s, ab / std::sqrt(aa * bb), 1e-12);
}

TEST(Similarity, EmptyFingerprintsAndMismatch)
{
    // Cutoff shorter than any neighbor distance leaves every channel empty.
    const FingerprintParams tiny{1.0, 0.1, 0.05};
    const auto a = fingerprint(make(cubic(3.0), {{"Cu", {0, 0, 0}}}), tiny);
    const auto b = fingerprint(make(cubic(3.5), {{"Fe", {0, 0, 0}}}), tiny);
    EXPECT_EQ(similarity(a, b), 1.0);
    EXPECT_EQ(similarity(a, fingerprint(make(cubic(0.9), {{"Cu", {0, 0, 0}}}), tiny)), 0.0);
    EXPECT_THROW(similarity(a, fingerprint(make(cubic(3.0), {{"Cu", {0, 0, 0}}}))), FingerprintMismatch);
}

TEST(Similarity, SymmetricOnRandomPairs)
{
    std::mt19937_64 rng(23);
    for (int t = 0; t < 30; ++t) {
        const auto L = testing_support::random_lattice(rng, 0.3);
        const auto s1 = make(L, {{"Cu", testing_support::random_frac(rng)}, {"Fe", testing_support::random_frac(rng)}});
        const auto s2 = perturbed(s1, rng, 0.02);
        const auto f1 = fingerprint(s1, kFast), f2 = fingerprint(s2, kFast);
        const double x = similarity(f1, f2);
        EXPECT_NEAR(x, similarity(f2, f1), 1e-15);
        EXPECT_GE(x, 0.0);
        EXPECT_LE(x, 1.0);
    }
}

TEST(FingerprintParams, Validation)
{
    EXPECT_NO_THROW(FingerprintParams{}.validate());
    EXPECT_THROW((FingerprintParams{0.2, 0.1, 0.05}.validate()), InvariantError);
    EXPECT_THROW((FingerprintParams{5.0, 0.1, 0.0}.validate()), InvariantError);
    EXPECT_EQ(FingerprintParams{}.bins(), 100u);
}

TEST(Dedup, ExactDuplicateKeepsLowerEnergy)
{
    const auto s = make(cubic(3.2), {{"Ce", {0, 0, 0}}, {"Fe", {0.5, 0.5, 0.5}}});
    EXPECT_EQ(dedup({item("hi", -0.1, s, kFast), item("lo", -0.4, s, kFast)}, 0.98),
              (std::vector<std::string>{"lo"}));
    EXPECT_EQ(dedup({item("b", -0.4, s, kFast), item("a", -0.4, s, kFast)}, 0.98),
              (std::vector<std::string>{"a"}));
}

TEST(Dedup, CompositionGuard)
{
    auto a = item("a", -1.0, make(cubic(3.0), {{"Cu", {0, 0, 0}}}), kFast);
    auto b = a;
    b.id = "b";
    b.reduced_composition = Composition({{ElementSymbol("Fe"), 1}});
    EXPECT_EQ(similarity(a.fingerprint, b.fingerprint), 1.0);
    EXPECT_EQ(dedup({a, b}, 0.98), (std::vector<std::string>{"a", "b"}));
}

TEST(Dedup, GreedyChain)
{
    const Composition comp({{ElementSymbol("Cu"), 1}});
    const DedupItem A{"A", -3.0, comp, raw({1, 0, 0, 0})};
    const DedupItem B{"B", -2.0, comp, raw({1, 1, 0, 0})};
    const DedupItem C{"C", -1.0, comp, raw({0, 1, 0, 0})};
    // sim(A,B) = sim(B,C) = 0.7071, sim(A,C) = 0.
    EXPECT_EQ(dedup({C, B, A}, 0.7), (std::vector<std::string>{"A", "C"}));
    const DedupItem C2{"C", -1.0, comp, raw({0.9, 1, 0, 0})};
    EXPECT_GE(similarity(A.fingerprint, C2.fingerprint), 0.6);
    EXPECT_EQ(dedup({C2, B, A}, 0.6), (std::vector<std::string>{"A"}));
    EXPECT_THROW(dedup({A}, 0.0), InvariantError);
    EXPECT_THROW(dedup({A}, 1.5), InvariantError);
    EXPECT_TRUE(dedup({}, 0.5).empty());
}

// Randomized properties over structure pairs and perturbation clusters.
TEST(DedupProperties, IdempotenceMonotonicityAndDuplicateCollapse)
{
    std::mt19937_64 rng(31);
    const std::vector<double> thresholds{0.5, 0.8, 0.9, 0.95, 0.98, 0.99, 0.999, 1.0};
    const std::vector<double> eps{0.0, 1e-4, 1e-3, 0.01, 0.03, 0.08};
    int pairs = 0;
    for (int t = 0; t < 220; ++t) {
        const auto L = testing_support::random_lattice(rng, 0.3);
        std::vector<std::pair<std::string, Vec3>> sites;
        const int n = 2 + static_cast<int>(rng() % 2);
        for (int i = 0; i < n; ++i)
            sites.push_back({i % 2 ? "Fe" : "Ce", testing_support::random_frac(rng)});
        const auto base = make(L, sites);
        const auto other = perturbed(base, rng, eps[rng() % eps.size()]);
        std::uniform_real_distribution<double> e(-1.0, 0.0);
        const std::vector<DedupItem> items{item("p" + std::to_string(t) + "a", e(rng), base, kFast),
                                           item("p" + std::to_string(t) + "b", e(rng), other, kFast)};
        ++pairs;

        std::size_t previous = 0;
        for (double th : thresholds) {
            const auto kept = dedup(items, th);
            // Non-increasing as the threshold decreases, i.e. non-decreasing along this ascending grid.
            EXPECT_GE(kept.size(), previous) << "threshold " << th;
            previous = kept.size();

            std::vector<DedupItem> survivors;
            for (const auto& id : kept)
                survivors.push_back(*std::find_if(items.begin(), items.end(), [&](const auto& x) { return x.id == id; }));
            EXPECT_EQ(dedup(survivors, th), kept);
        }

        // Exact copy collapses to the lower-energy id.
        DedupItem copy = items[0];
        copy.id = "z-copy";
        copy.predicted_ef = items[0].predicted_ef + 0.5;
        const auto collapsed = dedup({copy, items[0]}, 0.98);
        ASSERT_EQ(collapsed.size(), 1u);
        EXPECT_EQ(collapsed[0], items[0].id);
    }
    EXPECT_GE(pairs, 200);
}

TEST(DedupProperties, ClustersAreIdempotentAndMonotone)
{
    std::mt19937_64 rng(47);
    const std::vector<double> thresholds{0.9, 0.95, 0.98, 0.99, 0.995, 0.999, 1.0};
    for (int t = 0; t < 40; ++t) {
        const auto L = testing_support::random_lattice(rng, 0.3);
        const auto base = make(L, {{"Ce", testing_support::random_frac(rng)}, {"Fe", testing_support::random_frac(rng)}});
        std::vector<DedupItem> items;
        std::uniform_real_distribution<double> e(-1.0, 0.0);
        for (int k = 0; k < 6; ++k)
            items.push_back(item("c" + std::to_string(k), e(rng), perturbed(base, rng, 0.002 * k), kFast));
        std::size_t previous = 0;
        for (double th : thresholds) {
            const auto kept = dedup(items, th);
            EXPECT_GE(kept.size(), previous) << "cluster " << t << " threshold " << th;
            previous = kept.size();
            std::vector<DedupItem> survivors;
            for (const auto& id : kept)
                survivors.push_back(*std::find_if(items.begin(), items.end(), [&](const auto& x) { return x.id == id; }));
            EXPECT_EQ(dedup(survivors, th), kept);
        }
    }
}
