#ifndef FMLOC_LATTICE_HPP
#define FMLOC_LATTICE_HPP

#include <algorithm>
#include <array>
#include <cstdint>
#include <limits>
#include <string>
#include <unordered_map>
#include <vector>

#include "fmloc/common.hpp"
#include "fmloc/rng.hpp"

namespace fmloc {

// Lattice site in dimension dim (1..3). Unused coordinates stay zero so
// comparisons over the full array are well defined.
struct SitePoint {
    std::array<std::int64_t, 3> c{0, 0, 0};
    int dim = 1;

    SitePoint() = default;
    SitePoint(std::int64_t x) : c{x, 0, 0}, dim(1) {}
    SitePoint(std::int64_t x, std::int64_t y) : c{x, y, 0}, dim(2) {}
    SitePoint(std::int64_t x, std::int64_t y, std::int64_t z) : c{x, y, z}, dim(3) {}
    static SitePoint origin(int d) {
        SitePoint p;
        p.dim = d;
        return p;
    }

    std::int64_t operator[](int i) const { return c[static_cast<std::size_t>(i)]; }
    std::int64_t& operator[](int i) { return c[static_cast<std::size_t>(i)]; }

    friend bool operator==(const SitePoint& a, const SitePoint& b) {
        return a.dim == b.dim && a.c == b.c;
    }
    friend bool operator!=(const SitePoint& a, const SitePoint& b) { return !(a == b); }
    // Lexicographic; total order used everywhere a deterministic order is needed.
    friend bool operator<(const SitePoint& a, const SitePoint& b) {
        if (a.dim != b.dim) return a.dim < b.dim;
        return a.c < b.c;
    }

    friend SitePoint operator+(const SitePoint& a, const SitePoint& b) {
        SitePoint r = a;
        for (int i = 0; i < a.dim; ++i) r.c[i] += b.c[i];
        return r;
    }
    friend SitePoint operator-(const SitePoint& a, const SitePoint& b) {
        SitePoint r = a;
        for (int i = 0; i < a.dim; ++i) r.c[i] -= b.c[i];
        return r;
    }

    std::string str() const {
        std::string s = "(";
        for (int i = 0; i < dim; ++i) s += std::to_string(c[i]) + (i + 1 < dim ? "," : "");
        return s + ")";
    }
};

inline std::uint64_t hash_site(const SitePoint& p) {
    std::uint64_t h = splitmix64(0x5171CEull + static_cast<std::uint64_t>(p.dim));
    for (int i = 0; i < p.dim; ++i)
        h = splitmix64(h ^ static_cast<std::uint64_t>(p.c[i]));
    return h;
}

struct SitePointHash {
    std::size_t operator()(const SitePoint& p) const {
        return static_cast<std::size_t>(hash_site(p));
    }
};

inline std::int64_t linf_dist(const SitePoint& a, const SitePoint& b) {
    std::int64_t d = 0;
    for (int i = 0; i < a.dim; ++i) d = std::max(d, std::abs(a.c[i] - b.c[i]));
    return d;
}

inline std::int64_t linf_norm(const SitePoint& a) {
    return linf_dist(a, SitePoint::origin(a.dim));
}

// Finite ordered site set with a bijective site -> index map.
// Sites are kept in lexicographic order.
struct Region {
    int dim = 1;
    std::vector<SitePoint> sites;
    std::unordered_map<SitePoint, int, SitePointHash> index;

    Region() = default;
    Region(int d, std::vector<SitePoint> pts) : dim(d), sites(std::move(pts)) {
        std::sort(sites.begin(), sites.end());
        sites.erase(std::unique(sites.begin(), sites.end()), sites.end());
        for (std::size_t i = 0; i < sites.size(); ++i) {
            if (sites[i].dim != dim) throw ConfigError("region site dimension mismatch");
            index.emplace(sites[i], static_cast<int>(i));
        }
    }

    static Region box(const SitePoint& center, std::int64_t L) {
        if (L < 0) throw ConfigError("box radius must be >= 0");
        std::vector<SitePoint> pts;
        int d = center.dim;
        std::int64_t side = 2 * L + 1;
        std::int64_t count = 1;
        for (int i = 0; i < d; ++i) count *= side;
        pts.reserve(static_cast<std::size_t>(count));
        for (std::int64_t n = 0; n < count; ++n) {
            std::int64_t rem = n;
            SitePoint p = SitePoint::origin(d);
            for (int i = 0; i < d; ++i) {
                p.c[i] = center.c[i] - L + rem % side;
                rem /= side;
            }
            pts.push_back(p);
        }
        return Region(d, std::move(pts));
    }

    int size() const { return static_cast<int>(sites.size()); }
    bool contains(const SitePoint& p) const { return index.count(p) > 0; }
    int index_of(const SitePoint& p) const {
        auto it = index.find(p);
        if (it == index.end()) throw ConfigError("site " + p.str() + " not in region");
        return it->second;
    }

    Region without(const std::vector<SitePoint>& removed) const {
        std::vector<SitePoint> pts;
        pts.reserve(sites.size());
        for (const auto& p : sites) {
            bool drop = false;
            for (const auto& q : removed)
                if (p == q) {
                    drop = true;
                    break;
                }
            if (!drop) pts.push_back(p);
        }
        return Region(dim, std::move(pts));
    }

    Region without(const Region& w) const {
        std::vector<SitePoint> pts;
        pts.reserve(sites.size());
        for (const auto& p : sites)
            if (!w.contains(p)) pts.push_back(p);
        return Region(dim, std::move(pts));
    }

    std::uint64_t fingerprint() const {
        std::uint64_t h = splitmix64(0x9E6109F1ull + static_cast<std::uint64_t>(dim));
        for (const auto& p : sites) h = splitmix64(h ^ hash_site(p));
        return h;
    }
};

// Oriented bond <u,u'>: inner endpoint u in the cut region, outer u' beyond it.
struct Bond {
    SitePoint inner;
    SitePoint outer;
    friend bool operator==(const Bond& a, const Bond& b) {
        return a.inner == b.inner && a.outer == b.outer;
    }
    friend bool operator<(const Bond& a, const Bond& b) {
        if (!(a.inner == b.inner)) return a.inner < b.inner;
        return a.outer < b.outer;
    }
};

struct BondSet {
    std::vector<Bond> bonds;  // sorted, deterministic
    std::size_t size() const { return bonds.size(); }
    bool contains(const SitePoint& a, const SitePoint& b) const {
        for (const auto& bd : bonds)
            if ((bd.inner == a && bd.outer == b) || (bd.inner == b && bd.outer == a)) return true;
        return false;
    }
};

// Nearest-neighbor hop offsets +-e_i, deterministic order.
inline std::vector<SitePoint> nn_offsets(int dim) {
    std::vector<SitePoint> offs;
    for (int i = 0; i < dim; ++i) {
        SitePoint p = SitePoint::origin(dim);
        p.c[i] = 1;
        offs.push_back(p);
        p.c[i] = -1;
        offs.push_back(p);
    }
    std::sort(offs.begin(), offs.end());
    return offs;
}

// Gamma(W): bonds <u,u'> with u in W, u' in Z^d \ W reachable by one hop.
inline BondSet cut_set(const Region& w, const std::vector<SitePoint>& support) {
    BondSet out;
    for (const auto& u : w.sites)
        for (const auto& off : support) {
            SitePoint v = u + off;
            if (!w.contains(v)) out.bonds.push_back({u, v});
        }
    std::sort(out.bonds.begin(), out.bonds.end());
    return out;
}

// Gamma(W) restricted to an ambient region: bonds W -> Omega \ W.
inline BondSet cut_set_within(const Region& w, const Region& omega,
                              const std::vector<SitePoint>& support) {
    BondSet out;
    for (const auto& u : w.sites)
        for (const auto& off : support) {
            SitePoint v = u + off;
            if (!w.contains(v) && omega.contains(v)) out.bonds.push_back({u, v});
        }
    std::sort(out.bonds.begin(), out.bonds.end());
    return out;
}

// W+ : W together with every site one hop away.
inline Region region_plus(const Region& w, const std::vector<SitePoint>& support) {
    std::vector<SitePoint> pts = w.sites;
    for (const auto& u : w.sites)
        for (const auto& off : support) pts.push_back(u + off);
    return Region(w.dim, std::move(pts));
}

// Boundary of Omega: sites of Omega with at least one hop leading outside.
inline std::vector<SitePoint> boundary_sites(const Region& omega,
                                             const std::vector<SitePoint>& support) {
    std::vector<SitePoint> out;
    for (const auto& u : omega.sites)
        for (const auto& off : support)
            if (!omega.contains(u + off)) {
                out.push_back(u);
                break;
            }
    return out;
}

// dist_Omega(x,y) = min{ |x-y|_inf, dist(x,dOmega) + dist(y,dOmega) }.
// The boundary is treated as a single point.
inline std::int64_t dist_omega(const Region& omega, const SitePoint& x, const SitePoint& y,
                               const std::vector<SitePoint>& support) {
    if (!omega.contains(x)) throw ConfigError("dist_omega: " + x.str() + " not in region");
    if (!omega.contains(y)) throw ConfigError("dist_omega: " + y.str() + " not in region");
    auto bnd = boundary_sites(omega, support);
    auto dist_to_bnd = [&](const SitePoint& p) {
        std::int64_t best = std::numeric_limits<std::int64_t>::max();
        for (const auto& b : bnd) best = std::min(best, linf_dist(p, b));
        return best;
    };
    std::int64_t direct = linf_dist(x, y);
    if (bnd.empty()) return direct;  // no boundary: whole lattice covered
    return std::min(direct, dist_to_bnd(x) + dist_to_bnd(y));
}

}  // namespace fmloc

#endif
