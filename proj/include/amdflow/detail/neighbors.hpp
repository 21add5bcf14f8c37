#pragma once

#include <cmath>
#include <stdexcept>

namespace amdflow {

template <typename Visitor>
void for_each_neighbor(const CrystalStructure& s, std::size_t i, double cutoff, Visitor&& visit)
{
    if (i >= s.size())
        throw std::out_of_range("site index out of range");
    const auto& lattice = s.lattice();
    const auto bounds = image_search_bounds(lattice, cutoff);
    const Vec3& origin = s.sites()[i].frac;
    for (std::size_t j = 0; j < s.size(); ++j) {
        const Vec3 delta = s.sites()[j].frac - origin;
        for (int a = -bounds[0]; a <= bounds[0]; ++a)
            for (int b = -bounds[1]; b <= bounds[1]; ++b)
                for (int c = -bounds[2]; c <= bounds[2]; ++c) {
                    if (i == j && a == 0 && b == 0 && c == 0)
                        continue;
                    const Vec3 shifted{delta[0] + a, delta[1] + b, delta[2] + c};
                    const double d = norm(lattice.to_cartesian(shifted));
                    if (d <= cutoff)
                        visit(j, d);
                }
    }
}

} // namespace amdflow
