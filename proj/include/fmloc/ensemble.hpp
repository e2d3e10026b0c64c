#ifndef FMLOC_ENSEMBLE_HPP
#define FMLOC_ENSEMBLE_HPP

#include <Eigen/Dense>
#include <Eigen/SparseCore>
#include <cmath>
#include <cstdint>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "fmloc/lattice.hpp"
#include "fmloc/quadrature.hpp"
#include "fmloc/rng.hpp"

namespace fmloc {

// Single-site disorder law. tau declares the R1(tau) exponent the law is
// used with (all supported kinds have bounded density, so tau = 1 is valid).
struct DisorderDistribution {
    enum class Kind { uniform, piecewise_linear, cauchy };
    Kind kind = Kind::uniform;
    double a = -1.0, b = 1.0;            // uniform
    std::vector<double> knot_v, knot_w;  // piecewise linear density
    double scale = 1.0;                  // cauchy
    double tau = 1.0;

    static DisorderDistribution uniform(double lo, double hi, double tau_ = 1.0) {
        if (!(hi > lo)) throw ConfigError("uniform: need b > a");
        DisorderDistribution d;
        d.kind = Kind::uniform;
        d.a = lo;
        d.b = hi;
        d.tau = tau_;
        return d;
    }

    static DisorderDistribution piecewise_linear(std::vector<double> v, std::vector<double> w,
                                                 double tau_ = 1.0) {
        if (v.size() != w.size() || v.size() < 2)
            throw ConfigError("piecewise_linear: need matching knot lists, length >= 2");
        for (std::size_t i = 1; i < v.size(); ++i)
            if (!(v[i] > v[i - 1])) throw ConfigError("piecewise_linear: knots must increase");
        for (double x : w)
            if (x < 0.0) throw ConfigError("piecewise_linear: weights must be >= 0");
        DisorderDistribution d;
        d.kind = Kind::piecewise_linear;
        d.knot_v = std::move(v);
        d.knot_w = std::move(w);
        d.tau = tau_;
        double mass = 0.0;
        for (std::size_t i = 1; i < d.knot_v.size(); ++i)
            mass += 0.5 * (d.knot_w[i] + d.knot_w[i - 1]) * (d.knot_v[i] - d.knot_v[i - 1]);
        if (!(mass > 0.0)) throw ConfigError("piecewise_linear: zero total mass");
        for (auto& x : d.knot_w) x /= mass;  // normalize to a probability density
        return d;
    }

    static DisorderDistribution cauchy(double scale_, double tau_ = 1.0) {
        if (!(scale_ > 0.0)) throw ConfigError("cauchy: scale must be > 0");
        DisorderDistribution d;
        d.kind = Kind::cauchy;
        d.scale = scale_;
        d.tau = tau_;
        return d;
    }

    bool bounded_support() const { return kind != Kind::cauchy; }

    // Uniform bound on the density; finite for every supported kind.
    double density_bound() const {
        switch (kind) {
            case Kind::uniform: return 1.0 / (b - a);
            case Kind::piecewise_linear: {
                double mx = 0.0;
                for (double w : knot_w) mx = std::max(mx, w);
                return mx;
            }
            default: return 1.0 / (M_PI * scale);
        }
    }

    // Decoupling-constant searches need bounded support.
    bool decoupling_available() const { return bounded_support(); }

    std::pair<double, double> support() const {
        switch (kind) {
            case Kind::uniform: return {a, b};
            case Kind::piecewise_linear: return {knot_v.front(), knot_v.back()};
            default: return {-std::numeric_limits<double>::infinity(),
                             std::numeric_limits<double>::infinity()};
        }
    }

    double density(double v) const {
        switch (kind) {
            case Kind::uniform: return (v >= a && v <= b) ? 1.0 / (b - a) : 0.0;
            case Kind::piecewise_linear: {
                if (v < knot_v.front() || v > knot_v.back()) return 0.0;
                for (std::size_t i = 1; i < knot_v.size(); ++i)
                    if (v <= knot_v[i]) {
                        double t = (v - knot_v[i - 1]) / (knot_v[i] - knot_v[i - 1]);
                        return knot_w[i - 1] + t * (knot_w[i] - knot_w[i - 1]);
                    }
                return 0.0;
            }
            default: {
                double r = v / scale;
                return 1.0 / (M_PI * scale * (1.0 + r * r));
            }
        }
    }

    double cdf(double v) const {
        switch (kind) {
            case Kind::uniform:
                if (v <= a) return 0.0;
                if (v >= b) return 1.0;
                return (v - a) / (b - a);
            case Kind::piecewise_linear: {
                if (v <= knot_v.front()) return 0.0;
                double acc = 0.0;
                for (std::size_t i = 1; i < knot_v.size(); ++i) {
                    double lo = knot_v[i - 1], hi = knot_v[i];
                    if (v >= hi) {
                        acc += 0.5 * (knot_w[i] + knot_w[i - 1]) * (hi - lo);
                    } else {
                        double t = (v - lo) / (hi - lo);
                        double wv = knot_w[i - 1] + t * (knot_w[i] - knot_w[i - 1]);
                        acc += 0.5 * (knot_w[i - 1] + wv) * (v - lo);
                        return acc;
                    }
                }
                return std::min(acc, 1.0);
            }
            default: return 0.5 + std::atan(v / scale) / M_PI;
        }
    }

    // Inverse CDF; exact per segment (quadratic solve for the linear density).
    double quantile(double u) const {
        switch (kind) {
            case Kind::uniform: return a + (b - a) * u;
            case Kind::piecewise_linear: {
                double acc = 0.0;
                for (std::size_t i = 1; i < knot_v.size(); ++i) {
                    double lo = knot_v[i - 1], hi = knot_v[i];
                    double w0 = knot_w[i - 1], w1 = knot_w[i];
                    double seg = 0.5 * (w0 + w1) * (hi - lo);
                    if (u > acc + seg && i + 1 < knot_v.size()) {
                        acc += seg;
                        continue;
                    }
                    double rest = std::max(0.0, u - acc);
                    double beta = (w1 - w0) / (hi - lo);
                    if (std::abs(beta) < 1e-300) {
                        return w0 > 0.0 ? lo + rest / w0 : hi;
                    }
                    // solve 0.5*beta*x^2 + w0*x = rest for x = v - lo
                    double disc = w0 * w0 + 2.0 * beta * rest;
                    double x = disc > 0.0 ? (-w0 + std::sqrt(disc)) / beta : 0.0;
                    if (x < 0.0) x = 0.0;
                    if (x > hi - lo) x = hi - lo;
                    return lo + x;
                }
                return knot_v.back();
            }
            default: return scale * std::tan(M_PI * (u - 0.5));
        }
    }

    // Density as a list of linear segments (alpha + beta*v on [lo,hi]);
    // empty for unbounded kinds.
    struct Segment {
        double lo, hi, alpha, beta;
    };
    std::vector<Segment> segments() const {
        std::vector<Segment> segs;
        if (kind == Kind::uniform) {
            segs.push_back({a, b, 1.0 / (b - a), 0.0});
        } else if (kind == Kind::piecewise_linear) {
            for (std::size_t i = 1; i < knot_v.size(); ++i) {
                double lo = knot_v[i - 1], hi = knot_v[i];
                double beta = (knot_w[i] - knot_w[i - 1]) / (hi - lo);
                double alpha = knot_w[i - 1] - beta * lo;
                segs.push_back({lo, hi, alpha, beta});
            }
        }
        return segs;
    }

    std::string fingerprint() const {
        std::ostringstream os;
        os.precision(17);
        switch (kind) {
            case Kind::uniform: os << "uniform(" << a << "," << b << ")"; break;
            case Kind::piecewise_linear: {
                os << "pwl(";
                for (std::size_t i = 0; i < knot_v.size(); ++i)
                    os << knot_v[i] << ":" << knot_w[i] << (i + 1 < knot_v.size() ? "," : "");
                os << ")";
                break;
            }
            default: os << "cauchy(" << scale << ")";
        }
        os << ";tau=" << tau;
        return os.str();
    }
};

// int |v - t|^{-s} rho(dv): exact for bounded piecewise-linear densities,
// numeric (tan substitution + singular absorption) for cauchy.
inline double rho_power_integral(const DisorderDistribution& dist, double s, double t,
                                 double tol = 1e-10) {
    if (!(s > 0.0 && s < 1.0)) throw ConfigError("rho_power_integral needs 0 < s < 1");
    if (dist.bounded_support()) {
        auto [lo, hi] = dist.support();
        double width = std::max(hi - lo, 1e-300);
        // Far singularity center: the exact antiderivative difference cancels
        // catastrophically; the per-segment midpoint value is exact to O((w/t)^2).
        if (t < lo - 1e6 * width || t > hi + 1e6 * width) {
            double acc = 0.0;
            for (const auto& seg : dist.segments()) {
                double mid = 0.5 * (seg.lo + seg.hi);
                double mass = (seg.alpha + seg.beta * mid) * (seg.hi - seg.lo);
                acc += mass * std::pow(std::abs(mid - t), -s);
            }
            return acc;
        }
        double acc = 0.0;
        for (const auto& seg : dist.segments()) {
            // rho(v) = alpha + beta*v = (alpha + beta*t) + beta*(v - t)
            acc += (seg.alpha + seg.beta * t) * power_moment0(seg.lo, seg.hi, t, s) +
                   seg.beta * power_moment1(seg.lo, seg.hi, t, s);
        }
        return acc;
    }
    // cauchy: the density is the Poisson kernel for the upper half plane, so
    // the integral is the harmonic extension of |u|^{-s}, which is the real
    // part of the analytic branch of (-iz)^{-s} at z = t + i*scale:
    //   (t^2 + g^2)^{-s/2} * cos(s * atan(t/g)) / cos(pi s / 2)
    (void)tol;
    double g = dist.scale;
    return std::pow(t * t + g * g, -0.5 * s) * std::cos(s * std::atan(t / g)) /
           std::cos(0.5 * M_PI * s);
}

// int f(v) rho(dv) for smooth f; tan substitution for the unbounded kind.
template <typename F>
double rho_integrate(const DisorderDistribution& dist, const F& f, double tol = 1e-8) {
    if (dist.bounded_support()) {
        double acc = 0.0;
        for (const auto& seg : dist.segments())
            acc += adaptive_simpson(
                [&](double v) { return f(v) * (seg.alpha + seg.beta * v); }, seg.lo, seg.hi, tol);
        return acc;
    }
    double g = dist.scale;
    return adaptive_simpson(
        [&](double th) {
            double v = g * std::tan(th);
            double sec2 = 1.0 / (std::cos(th) * std::cos(th));
            return f(v) * dist.density(v) * g * sec2;
        },
        -M_PI / 2 + 1e-12, M_PI / 2 - 1e-12, tol);
}

// int h(v) |v - v0|^{-s} rho(dv) with h smooth and bounded.
template <typename F>
double rho_weighted_power_integral(const DisorderDistribution& dist, double s, double v0,
                                   const F& h, double tol = 1e-8) {
    if (!(s > 0.0 && s < 1.0)) throw ConfigError("weighted power integral needs 0 < s < 1");
    if (dist.bounded_support()) {
        double acc = 0.0;
        for (const auto& seg : dist.segments())
            acc += integrate_power_singularity(
                [&](double v) { return h(v) * (seg.alpha + seg.beta * v); }, s, v0, seg.lo,
                seg.hi, tol);
        return acc;
    }
    // unbounded: theta substitution, re-expressing the weight in theta so the
    // singularity absorber sees a pure power
    double g = dist.scale;
    double th0 = std::atan(v0 / g);
    double a = -M_PI / 2 + 1e-12, b = M_PI / 2 - 1e-12;
    auto F_theta = [&](double th) {
        double v = g * std::tan(th);
        double sec2 = 1.0 / (std::cos(th) * std::cos(th));
        // |v - v0| = |theta - th0| * q(theta), q smooth and positive
        double dth = th - th0;
        double q;
        if (std::abs(dth) < 1e-9) {
            q = g / (std::cos(th0) * std::cos(th0));
        } else {
            double dv = g * std::sin(dth) / (std::cos(th) * std::cos(th0));
            q = std::abs(dv / dth);
        }
        return h(v) * dist.density(v) * g * sec2 * std::pow(q, -s);
    };
    return integrate_power_singularity(F_theta, s, th0, a, b, tol);
}

// Hopping amplitudes. nearest_neighbor: 1 on +-e_i. tempered: t0*exp(-m*|v|_inf)
// for 0 < |v|_inf <= range. Optional uniform magnetic flux per unit plaquette
// (d = 2 only), implemented as a Landau-gauge Peierls phase.
struct HoppingKernel {
    enum class Kind { nearest_neighbor, tempered };
    Kind kind = Kind::nearest_neighbor;
    double t0 = 1.0;
    double m = 1.0;
    std::int64_t range = 1;
    double peierls_flux = 0.0;
    bool has_flux = false;

    static HoppingKernel nearest_neighbor() { return HoppingKernel{}; }

    HoppingKernel with_flux(double flux) const {
        HoppingKernel k = *this;
        k.peierls_flux = flux;
        k.has_flux = true;
        return k;
    }

    static HoppingKernel tempered(double t0_, double m_, std::int64_t range_) {
        if (!(t0_ > 0.0) || !(m_ > 0.0) || range_ < 1)
            throw ConfigError("tempered hopping: need t0 > 0, m > 0, range >= 1");
        HoppingKernel k;
        k.kind = Kind::tempered;
        k.t0 = t0_;
        k.m = m_;
        k.range = range_;
        return k;
    }

    // Smallest range R with discarded tail of sum tau^s below
    // rel_tol * retained sum; the tail is what truncation drops.
    static HoppingKernel tempered_auto_range(double t0_, double m_, double s, int dim,
                                             double rel_tol = 1e-12) {
        std::int64_t R = 1;
        for (; R < 4096; ++R) {
            HoppingKernel k = tempered(t0_, m_, R);
            double kept = k.sum_tau_s(s, dim);
            if (k.truncation_error(s, dim) < rel_tol * kept) return k;
        }
        throw ConfigError("tempered hopping: auto range failed to converge");
    }

    double amplitude(const SitePoint& offset) const {
        std::int64_t r = linf_norm(offset);
        if (r == 0) return 0.0;
        if (kind == Kind::nearest_neighbor) {
            std::int64_t l1 = 0;
            for (int i = 0; i < offset.dim; ++i) l1 += std::abs(offset.c[i]);
            return (r == 1 && l1 == 1) ? 1.0 : 0.0;
        }
        return r <= range ? t0 * std::exp(-m * static_cast<double>(r)) : 0.0;
    }

    std::vector<SitePoint> support(int dim) const {
        if (kind == Kind::nearest_neighbor) return nn_offsets(dim);
        std::vector<SitePoint> offs;
        Region ball = Region::box(SitePoint::origin(dim), range);
        for (const auto& p : ball.sites)
            if (linf_norm(p) > 0) offs.push_back(p);
        return offs;  // box order is already lexicographic
    }

    // Landau-gauge line integral A(x->y); antisymmetric, so the assembled
    // matrix is Hermitian. A unit plaquette encloses phase = peierls_flux.
    double phase(const SitePoint& x, const SitePoint& y) const {
        if (!has_flux || peierls_flux == 0.0) return 0.0;
        if (x.dim != 2) throw ConfigError("peierls flux supported for d = 2 only");
        double dx2 = static_cast<double>(y.c[1] - x.c[1]);
        double mid1 = 0.5 * static_cast<double>(x.c[0] + y.c[0]);
        return peierls_flux * mid1 * dx2;
    }

    // Number of sites at linf distance exactly r in Z^dim.
    static double shell_count(std::int64_t r, int dim) {
        if (r == 0) return 1.0;
        double big = 1.0, small = 1.0;
        for (int i = 0; i < dim; ++i) {
            big *= static_cast<double>(2 * r + 1);
            small *= static_cast<double>(2 * r - 1);
        }
        return big - small;
    }

    double sum_tau_s(double s, int dim) const {
        if (kind == Kind::nearest_neighbor) return 2.0 * dim;
        double acc = 0.0;
        for (std::int64_t r = 1; r <= range; ++r)
            acc += shell_count(r, dim) * std::pow(t0 * std::exp(-m * r), s);
        return acc;
    }

    // Tail sum_{|v| > range} tau(v)^s the truncation discards.
    double truncation_error(double s, int dim) const {
        if (kind == Kind::nearest_neighbor) return 0.0;
        double acc = 0.0;
        for (std::int64_t r = range + 1;; ++r) {
            double term = shell_count(r, dim) * std::pow(t0 * std::exp(-m * r), s);
            acc += term;
            if (term < 1e-300 || term < 1e-16 * acc) break;
            if (r > range + 100000) break;
        }
        return acc;
    }

    std::string fingerprint() const {
        std::ostringstream os;
        os.precision(17);
        if (kind == Kind::nearest_neighbor)
            os << "nn";
        else
            os << "tempered(" << t0 << "," << m << "," << range << ")";
        if (has_flux) os << ";flux=" << peierls_flux;
        return os.str();
    }
};

// Xi_s(Lambda) = sum over bonds <u,u'> in Lambda x (Z^d \ Lambda) of tau(u-u')^s.
// For nearest-neighbor hopping this is the bond count |Gamma(Lambda)|.
inline double xi_s(const HoppingKernel& hop, const Region& lam, double s) {
    auto offs = hop.support(lam.dim);
    double acc = 0.0;
    for (const auto& u : lam.sites)
        for (const auto& off : offs) {
            if (lam.contains(u + off)) continue;
            acc += std::pow(hop.amplitude(off), s);
        }
    return acc;
}

// Periodic background potential; values indexed lexicographically by
// (x mod period) per coordinate.
struct PeriodicPotential {
    std::vector<std::int64_t> period;
    std::vector<double> values;

    double at(const SitePoint& p) const {
        std::int64_t idx = 0, stride = 1;
        for (int i = 0; i < p.dim; ++i) {
            std::int64_t per = period[static_cast<std::size_t>(i)];
            std::int64_t r = p.c[i] % per;
            if (r < 0) r += per;
            idx += r * stride;
            stride *= per;
        }
        return values[static_cast<std::size_t>(idx)];
    }

    void validate(int dim) const {
        if (static_cast<int>(period.size()) != dim)
            throw ConfigError("periodic potential: period length must equal dimension");
        std::int64_t need = 1;
        for (auto p : period) {
            if (p < 1) throw ConfigError("periodic potential: period entries must be >= 1");
            need *= p;
        }
        if (static_cast<std::int64_t>(values.size()) != need)
            throw ConfigError("periodic potential: values must have prod(period) entries");
    }
};

struct OperatorEnsemble {
    int dim = 1;
    HoppingKernel hopping;
    DisorderDistribution disorder;
    double lambda = 1.0;
    std::optional<PeriodicPotential> u_per;
    std::uint64_t master_seed = 0;

    void validate() const {
        if (dim < 1 || dim > 3) throw ConfigError("dimension must be 1, 2 or 3");
        if (!(lambda > 0.0)) throw ConfigError("lambda must be > 0");
        if (hopping.has_flux && dim != 2) throw ConfigError("peierls flux requires d = 2");
        if (u_per) u_per->validate(dim);
    }

    std::string fingerprint() const {
        std::ostringstream os;
        os << "d=" << dim << ";hop=" << hopping.fingerprint()
           << ";dis=" << disorder.fingerprint() << ";lambda=";
        os.precision(17);
        os << lambda << ";seed=" << master_seed;
        return os.str();
    }
};

// Potential value at `site` in sample `index`: a pure function of
// (master_seed, index, site), independent of region, call order and threads.
inline double potential_value(const OperatorEnsemble& ens, std::uint64_t index,
                              const SitePoint& site) {
    double u = keyed_uniform01(ens.master_seed, kStreamPotential, index, hash_site(site));
    return ens.disorder.quantile(u);
}

struct DisorderSample {
    Region region;
    std::vector<double> values;  // parallel to region.sites
    std::uint64_t sample_index = 0;

    double at(const SitePoint& p) const {
        return values[static_cast<std::size_t>(region.index_of(p))];
    }
};

inline DisorderSample sample_potential(const OperatorEnsemble& ens, const Region& region,
                                       std::uint64_t index) {
    DisorderSample s;
    s.region = region;
    s.sample_index = index;
    s.values.reserve(region.sites.size());
    for (const auto& p : region.sites) s.values.push_back(potential_value(ens, index, p));
    return s;
}

// Assemble H over the sample's region: diag = U_per + lambda*V, off-diag =
// hopping with Peierls phase. Bonds in `depleted` are zeroed in both
// orientations; a depletion bond with no endpoint in the region is rejected.
inline Eigen::SparseMatrix<cdouble> assemble(const OperatorEnsemble& ens,
                                             const DisorderSample& sample,
                                             const BondSet* depleted = nullptr) {
    const Region& region = sample.region;
    if (sample.values.size() != region.sites.size())
        throw ConfigError("assemble: sample does not cover its region");
    if (depleted)
        for (const auto& bd : depleted->bonds)
            if (!region.contains(bd.inner) && !region.contains(bd.outer))
                throw ConfigError("assemble: depletion bond has no endpoint in region");
    const int n = region.size();
    std::vector<Eigen::Triplet<cdouble>> trips;
    auto offs = ens.hopping.support(region.dim);
    trips.reserve(static_cast<std::size_t>(n) * (offs.size() + 1));
    for (int i = 0; i < n; ++i) {
        const SitePoint& x = region.sites[static_cast<std::size_t>(i)];
        double diag = ens.lambda * sample.values[static_cast<std::size_t>(i)];
        if (ens.u_per) diag += ens.u_per->at(x);
        trips.emplace_back(i, i, cdouble(diag, 0.0));
        for (const auto& off : offs) {
            SitePoint y = x + off;
            auto it = region.index.find(y);
            if (it == region.index.end()) continue;
            if (depleted && depleted->contains(x, y)) continue;
            double amp = ens.hopping.amplitude(off);
            if (amp == 0.0) continue;
            double ph = ens.hopping.phase(x, y);
            trips.emplace_back(i, it->second, amp * std::exp(cdouble(0.0, ph)));
        }
    }
    Eigen::SparseMatrix<cdouble> H(n, n);
    H.setFromTriplets(trips.begin(), trips.end());
    return H;
}

inline Eigen::MatrixXcd assemble_dense(const OperatorEnsemble& ens, const DisorderSample& sample,
                                       const BondSet* depleted = nullptr) {
    return Eigen::MatrixXcd(assemble(ens, sample, depleted));
}

// The hopping part that depletion removes: T^(G) = H - H^(G), supported on the
// depleted bonds (both orientations).
inline Eigen::SparseMatrix<cdouble> depleted_coupling(const OperatorEnsemble& ens,
                                                      const Region& region,
                                                      const BondSet& depleted) {
    const int n = region.size();
    std::vector<Eigen::Triplet<cdouble>> trips;
    std::set<std::pair<SitePoint, SitePoint>> seen;  // undirected, to not double-add
    for (const auto& bd : depleted.bonds) {
        auto ia = region.index.find(bd.inner);
        auto ib = region.index.find(bd.outer);
        if (ia == region.index.end() || ib == region.index.end()) continue;
        auto key = bd.inner < bd.outer ? std::make_pair(bd.inner, bd.outer)
                                       : std::make_pair(bd.outer, bd.inner);
        if (!seen.insert(key).second) continue;
        SitePoint off = bd.outer - bd.inner;
        double amp = ens.hopping.amplitude(off);
        if (amp == 0.0) continue;
        double ph = ens.hopping.phase(bd.inner, bd.outer);
        trips.emplace_back(ia->second, ib->second, amp * std::exp(cdouble(0.0, ph)));
        trips.emplace_back(ib->second, ia->second, amp * std::exp(cdouble(0.0, -ph)));
    }
    Eigen::SparseMatrix<cdouble> T(n, n);
    T.setFromTriplets(trips.begin(), trips.end());
    return T;
}

}  // namespace fmloc

#endif
