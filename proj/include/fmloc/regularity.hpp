#ifndef FMLOC_REGULARITY_HPP
#define FMLOC_REGULARITY_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <nlohmann/json.hpp>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "fmloc/common.hpp"
#include "fmloc/ensemble.hpp"
#include "fmloc/quadrature.hpp"
#include "fmloc/rng.hpp"

namespace fmloc {

// Smallest kappa with P(V in (a-eps, a+eps)) <= kappa * eps^tau, up to the
// declared 1% grid-refinement stability. Exact closed form for uniform laws.
inline double kappa_tau(const DisorderDistribution& dist, double tau) {
    if (!(tau > 0.0 && tau <= 1.0)) throw ConfigError("kappa: need 0 < tau <= 1");
    if (dist.kind == DisorderDistribution::Kind::uniform) {
        // mass(a, eps) = min(1, 2 eps / (b-a)) at best placement; the ratio
        // mass / eps^tau peaks at eps = (b-a)/2
        return std::pow(2.0 / (dist.b - dist.a), tau);
    }
    auto [lo, hi] = dist.support();
    double w;
    if (dist.bounded_support()) {
        w = hi - lo;
    } else {
        lo = -40.0 * dist.scale;
        hi = 40.0 * dist.scale;
        w = hi - lo;
    }
    auto ratio = [&](double a, double eps) {
        return (dist.cdf(a + eps) - dist.cdf(a - eps)) / std::pow(eps, tau);
    };
    double a_lo = lo, a_hi = hi, e_lo = 1e-7 * w, e_hi = w;
    double best = 0.0, best_a = 0.0, best_e = e_hi;
    double prev = -1.0;
    int shrinking_streak = 0;
    for (int round = 0; round < 16; ++round) {
        const int na = 129, ne = 41;
        for (int i = 0; i < na; ++i)
            for (int j = 0; j < ne; ++j) {
                double a = a_lo + (a_hi - a_lo) * i / (na - 1);
                double eps = e_lo * std::pow(e_hi / e_lo, static_cast<double>(j) / (ne - 1));
                double r = ratio(a, eps);
                if (r > best) {
                    best = r;
                    best_a = a;
                    best_e = eps;
                }
            }
        if (prev > 0.0 && best <= prev * 1.01) return best;
        if (prev > 0.0 && best_e <= 2.0 * e_lo && best > prev * 1.05) {
            if (++shrinking_streak >= 3) {
                std::ostringstream os;
                os << "distribution fails the declared regularity exponent tau = " << tau
                   << ": ratio still growing at a = " << best_a << ", eps = " << best_e;
                throw CheckError(os.str());
            }
        } else {
            shrinking_streak = 0;
        }
        prev = best;
        double da = (a_hi - a_lo) / 8.0;
        a_lo = best_a - da;
        a_hi = best_a + da;
        e_lo = std::max(best_e / 16.0, 1e-12 * w);
        e_hi = std::min(best_e * 16.0, w);
    }
    return best;
}

// Conditional fractional moment bound at exponent s. The source typography
// leaves the lambda placement ambiguous, so both readings are computed and
// the larger is used as the bound.
struct FracMomBound {
    double shared_exponent = 0.0;  // ((4 kappa) / lambda^s)^{s/tau}
    double direct_lambda = 0.0;    // (4 kappa)^{s/tau} / lambda^s
    double value = 0.0;            // tau/(tau-s) * max of the two
};

inline FracMomBound fracmom_bound(double s, double tau, double kappa, double lambda) {
    if (!(s > 0.0 && s < tau)) throw ConfigError("fractional moment bound: need 0 < s < tau");
    if (!(kappa > 0.0) || !(lambda > 0.0))
        throw ConfigError("fractional moment bound: need kappa > 0, lambda > 0");
    FracMomBound fb;
    fb.shared_exponent = std::pow(4.0 * kappa / std::pow(lambda, s), s / tau);
    fb.direct_lambda = std::pow(4.0 * kappa, s / tau) / std::pow(lambda, s);
    fb.value = tau / (tau - s) * std::max(fb.shared_exponent, fb.direct_lambda);
    return fb;
}

struct SupSearchResult {
    double value = 0.0;
    bool is_lower_bound = true;  // stochastic search never certifies the sup
    std::uint64_t seed = 0;
    int effort = 0;
    int candidates = 0;
    int refined = 0;
};

namespace detail {

constexpr std::uint64_t kSaltCs = 0xC5;
constexpr std::uint64_t kSaltDs = 0xD5;

// Generic deterministic sup search: a prefix-stable candidate stream with a
// fixed per-candidate refinement policy, so doubling the effort can only add
// candidates and the running max is monotone in effort.
template <typename MakeCand, typename Eval, typename Refine>
SupSearchResult sup_search(int n_candidates, int max_refined, std::uint64_t seed, int effort,
                           int threads, double seed_value, const MakeCand& make_cand,
                           const Eval& eval, const Refine& refine) {
    std::vector<double> raw(static_cast<std::size_t>(n_candidates));
    parallel_blocks(static_cast<std::size_t>(n_candidates), threads,
                    [&](std::size_t i) { raw[i] = eval(make_cand(i)); });
    // gate refinement on the prefix running max so the refined set for a
    // smaller effort is a subset of the refined set for a larger one
    std::vector<std::size_t> gated;
    double runmax = seed_value;
    for (std::size_t i = 0; i < raw.size(); ++i) {
        if (std::isfinite(raw[i]) && raw[i] >= 0.5 * runmax &&
            static_cast<int>(gated.size()) < max_refined)
            gated.push_back(i);
        runmax = std::max(runmax, std::isfinite(raw[i]) ? raw[i] : runmax);
    }
    std::vector<double> polished(gated.size());
    parallel_blocks(gated.size(), threads,
                    [&](std::size_t k) { polished[k] = refine(make_cand(gated[k])); });
    double best = seed_value;
    for (double v : raw)
        if (std::isfinite(v)) best = std::max(best, v);
    for (double v : polished)
        if (std::isfinite(v)) best = std::max(best, v);
    SupSearchResult res;
    res.value = best;
    res.seed = seed;
    res.effort = effort;
    res.candidates = n_candidates;
    res.refined = static_cast<int>(gated.size());
    return res;
}

// Coordinate pattern search, maximizing; accepts only improvements, so the
// result never falls below the starting value.
template <typename Eval, typename Project>
double pattern_refine(std::vector<double> x, double fx, const Eval& eval,
                      const Project& project, std::vector<double> step, int iters) {
    for (int it = 0; it < iters; ++it) {
        bool improved = false;
        for (std::size_t k = 0; k < x.size(); ++k) {
            for (double sgn : {+1.0, -1.0}) {
                std::vector<double> y = x;
                y[k] += sgn * step[k];
                project(y);
                double fy = eval(y);
                if (std::isfinite(fy) && fy > fx) {
                    x = y;
                    fx = fy;
                    improved = true;
                }
            }
        }
        if (!improved)
            for (auto& st : step) st *= 0.55;
    }
    return fx;
}

}  // namespace detail

// Sup over 2x2 self-adjoint A and entries (i,j) of
// int int rho(du) rho(dv) |[(A + diag(u,v))^{-1}]_{ij}|^s.
// A phase rotation makes the off-diagonal entry real without changing entry
// magnitudes, so A is parametrized by three reals (a, b, c). The inner
// integral is exact: with u0(v) = c^2/(b+v) - a,
//   int rho(du) |M_11|^s = int rho(du) |u - u0(v)|^{-s},
// and similarly for the other entries; only the outer integral is quadrature.
inline SupSearchResult constant_Cs(const DisorderDistribution& dist, double s, int effort = 1,
                                   std::uint64_t seed = 12345, int threads = 1) {
    if (!(s > 0.0 && s < dist.tau)) throw ConfigError("decay-constant search: need 0 < s < tau");
    if (effort < 1) throw ConfigError("decay-constant search: effort must be >= 1");
    auto [lo, hi] = dist.support();
    double half = dist.bounded_support() ? 0.5 * (hi - lo) : dist.scale;
    double mid = dist.bounded_support() ? 0.5 * (hi + lo) : 0.0;

    auto inner = [&](double u0) -> double {
        if (!std::isfinite(u0) || std::abs(u0) > 1e290) return 0.0;
        return rho_power_integral(dist, s, u0);
    };
    auto value_of = [&](const std::vector<double>& p) -> double {
        double a = p[0], b = p[1], c = p[2];
        if (std::abs(c) < 1e-14 * (1.0 + std::abs(a) + std::abs(b))) {
            return std::max(inner(-a), inner(-b));
        }
        auto u0_of = [&](double v) {
            double d = b + v;
            if (std::abs(d) < 1e-300) return std::numeric_limits<double>::infinity();
            return c * c / d - a;
        };
        auto v0_of = [&](double u) {
            double d = a + u;
            if (std::abs(d) < 1e-300) return std::numeric_limits<double>::infinity();
            return c * c / d - b;
        };
        double v11 = rho_integrate(dist, [&](double v) { return inner(u0_of(v)); }, 1e-7);
        double v22 = rho_integrate(dist, [&](double u) { return inner(v0_of(u)); }, 1e-7);
        double v12 = std::pow(std::abs(c), s) *
                     rho_weighted_power_integral(
                         dist, s, -b, [&](double v) { return inner(u0_of(v)); }, 1e-7);
        return std::max({v11, v22, v12});
    };

    constexpr int kSpecials = 3;
    auto make_cand = [&](std::size_t i) -> std::vector<double> {
        if (i == 0) return {0.0, 0.0, 0.0};            // exact diagonal slice
        if (i == 1) return {mid, mid, 0.0};            // centered diagonal slice
        if (i == 2) return {0.0, 0.0, half};           // off-diagonal dominated
        auto draw = [&](std::uint32_t d) {
            return keyed_uniform01(seed, kStreamSearch, i, detail::kSaltCs, d);
        };
        double scale = half * std::pow(10.0, 2.0 * draw(3) - 1.0);
        auto coord = [&](std::uint32_t d) { return scale * std::tan(M_PI * (draw(d) - 0.5)); };
        return {coord(0), coord(1), coord(2)};
    };
    auto refine = [&](std::vector<double> x) {
        double fx = value_of(x);
        std::vector<double> step(3);
        for (std::size_t k = 0; k < 3; ++k) step[k] = 0.25 * (half + std::abs(x[k]));
        return detail::pattern_refine(std::move(x), fx, value_of,
                                      [](std::vector<double>&) {}, std::move(step), 40);
    };

    int n = kSpecials + 24 * effort;
    return detail::sup_search(n, 8 * effort, seed, effort, threads, 0.0, make_cand, value_of,
                              refine);
}

// Sup over (z, w, zeta) in C^3 of gamma_s / (phi_s(zeta) psi_s(z, w)), with
//   phi_s(z)        = int |V - z|^{-s} rho(dV)
//   psi_s(z, w)     = int |V - z|^s |V - w|^{-s} rho(dV)
//   gamma_s(z,w,zeta) = int |V - z|^s |V - w|^{-s} |V - zeta|^{-s} rho(dV).
// Imaginary parts are floored at 1e-3 * half-width: as Im -> 0 the ratio can
// diverge for heavy singular alignments, and the floored search still yields
// a valid lower bound of the unrestricted sup. Requires bounded support.
inline SupSearchResult constant_Ds(const DisorderDistribution& dist, double s, int effort = 1,
                                   std::uint64_t seed = 12345, int threads = 1) {
    if (!dist.bounded_support())
        throw ConfigError(
            "decoupling-constant search requires bounded support; this distribution is "
            "unbounded and its decoupling constant is not available");
    if (!(s > 0.0)) throw ConfigError("decoupling-constant search: need s > 0");
    if (effort < 1) throw ConfigError("decoupling-constant search: effort must be >= 1");
    auto [lo, hi] = dist.support();
    double half = 0.5 * (hi - lo), mid = 0.5 * (hi + lo);
    double floor_im = 1e-3 * half;

    auto absc = [](double v, double re, double im) { return std::hypot(v - re, im); };
    // p = (z_re, z_im, w_re, w_im, zeta_re, zeta_im)
    auto ratio_of = [&](const std::vector<double>& p) -> double {
        double phi = rho_integrate(
            dist, [&](double v) { return std::pow(absc(v, p[4], p[5]), -s); }, 1e-8);
        double psi = rho_integrate(
            dist,
            [&](double v) {
                return std::pow(absc(v, p[0], p[1]), s) * std::pow(absc(v, p[2], p[3]), -s);
            },
            1e-8);
        double gam = rho_integrate(
            dist,
            [&](double v) {
                return std::pow(absc(v, p[0], p[1]), s) * std::pow(absc(v, p[2], p[3]), -s) *
                       std::pow(absc(v, p[4], p[5]), -s);
            },
            1e-8);
        double denom = phi * psi;
        if (!(denom > 0.0) || !std::isfinite(denom)) return 0.0;
        return gam / denom;
    };
    auto project = [&](std::vector<double>& p) {
        for (std::size_t k : {std::size_t{1}, std::size_t{3}, std::size_t{5}})
            if (std::abs(p[k]) < floor_im) p[k] = std::copysign(floor_im, p[k] == 0.0 ? 1.0 : p[k]);
    };

    constexpr int kSpecials = 4;
    auto make_cand = [&](std::size_t i) -> std::vector<double> {
        std::vector<double> p;
        if (i == 0) {
            p = {mid, floor_im, mid, floor_im, mid, floor_im};
        } else if (i == 1) {  // w = zeta at the center, z far away
            p = {mid + 100.0 * half, half, mid, floor_im, mid, floor_im};
        } else if (i == 2) {  // singular points at opposite support edges
            p = {mid, floor_im, lo, floor_im, hi, floor_im};
        } else if (i == 3) {  // z at an edge, w = zeta at the other
            p = {lo, floor_im, hi, floor_im, hi, floor_im};
        } else {
            auto draw = [&](std::uint32_t d) {
                return keyed_uniform01(seed, kStreamSearch, i, detail::kSaltDs, d);
            };
            p.resize(6);
            for (std::size_t k = 0; k < 3; ++k) {
                p[2 * k] = mid + half * std::tan(M_PI * (draw(static_cast<std::uint32_t>(2 * k)) - 0.5));
                double t = draw(static_cast<std::uint32_t>(2 * k + 1));
                double mag = half * std::pow(10.0, 4.0 * t - 3.0);  // 1e-3 h .. 10 h
                p[2 * k + 1] = (t > 0.5 ? 1.0 : -1.0) * mag;
            }
        }
        project(p);
        return p;
    };
    auto refine = [&](std::vector<double> x) {
        double fx = ratio_of(x);
        std::vector<double> step(6);
        for (std::size_t k = 0; k < 6; ++k) step[k] = 0.25 * (half + std::abs(x[k]));
        return detail::pattern_refine(std::move(x), fx, ratio_of, project, std::move(step), 40);
    };

    // The ratio tends to 1 as z, w, zeta go to infinity together, so 1 is a
    // provable lower bound and seeds the running max.
    int n = kSpecials + 48 * effort;
    return detail::sup_search(n, 8 * effort, seed, effort, threads, 1.0, make_cand, ratio_of,
                              refine);
}

// Transport of a decay bound A(s) e^{-mu(s) dist} to another exponent r.
// r <= s uses Jensen; r > s interpolates through t between r and tau, paying
// with the conditional t-moment bound.
struct ExponentInterpolation {
    double amplitude = 0.0;
    double rate = 0.0;
    double t = 0.0;  // intermediate exponent; 0 on the Jensen branch
    std::string branch;
};

inline ExponentInterpolation interpolate_exponent(double A_s, double mu_s, double s, double r,
                                                  double tau, double kappa, double lambda,
                                                  std::optional<double> t_override = std::nullopt) {
    if (!(s > 0.0 && s < tau)) throw ConfigError("exponent interpolation: need 0 < s < tau");
    if (!(r > 0.0)) throw ConfigError("exponent interpolation: need r > 0");
    if (r >= tau) throw ConfigError("exponent interpolation: target exponent must be < tau");
    if (!(A_s > 0.0) || mu_s < 0.0)
        throw ConfigError("exponent interpolation: need amplitude > 0 and rate >= 0");
    ExponentInterpolation out;
    if (r == s) {
        out.amplitude = A_s;
        out.rate = mu_s;
        out.branch = "identity";
        return out;
    }
    if (r < s) {
        // E|G|^r <= (E|G|^s)^{r/s}
        out.amplitude = std::pow(A_s, r / s);
        out.rate = mu_s * r / s;
        out.branch = "jensen";
        return out;
    }
    double t = t_override ? *t_override : 0.5 * (r + tau);
    if (!(t > r && t < tau))
        throw ConfigError("exponent interpolation: intermediate exponent must lie in (r, tau)");
    // E|G|^r <= (E|G|^s)^{(t-r)/(t-s)} * M_t^{(r-s)/(t-s)}
    double M_t = fracmom_bound(t, tau, kappa, lambda).value;
    double w1 = (t - r) / (t - s), w2 = (r - s) / (t - s);
    out.amplitude = std::pow(A_s, w1) * std::pow(M_t, w2);
    out.rate = mu_s * w1;
    out.t = t;
    out.branch = "holder";
    return out;
}

struct RegularityConstants {
    double tau = 1.0;
    double s = 0.5;
    double kappa = 1.0;
    double C_s = std::numeric_limits<double>::quiet_NaN();
    double D_s = std::numeric_limits<double>::quiet_NaN();
    double C_tilde = std::numeric_limits<double>::quiet_NaN();
    bool cs_is_lower_bound = true;
    bool ds_is_lower_bound = true;
    bool decoupling_unavailable = false;
    std::string provenance = "estimated";
    std::uint64_t seed = 0;
    int effort = 0;

    bool certified() const { return provenance == "user_supplied"; }

    void require_c() const {
        if (!std::isfinite(C_s)) throw ConfigError("constants: C at exponent s is not available");
    }
    void require_c_tilde() const {
        if (decoupling_unavailable || !std::isfinite(C_tilde))
            throw ConfigError(
                "constants: the decoupled constant is unavailable for this distribution");
    }
};

inline RegularityConstants estimate_constants(const DisorderDistribution& dist, double s,
                                              int effort = 1, std::uint64_t seed = 12345,
                                              int threads = 1) {
    RegularityConstants rc;
    rc.tau = dist.tau;
    rc.s = s;
    rc.kappa = kappa_tau(dist, dist.tau);
    rc.C_s = constant_Cs(dist, s, effort, seed, threads).value;
    rc.seed = seed;
    rc.effort = effort;
    if (dist.decoupling_available()) {
        rc.D_s = constant_Ds(dist, s, effort, seed, threads).value;
        rc.C_tilde = rc.C_s * rc.D_s * rc.D_s;
    } else {
        rc.decoupling_unavailable = true;
    }
    return rc;
}

inline RegularityConstants user_constants(double tau, double s, double kappa, double C_s,
                                          double D_s) {
    if (!(s > 0.0 && s < tau)) throw ConfigError("constants: need 0 < s < tau");
    if (!(kappa > 0.0 && C_s > 0.0 && D_s > 0.0))
        throw ConfigError("constants: kappa, C and D must be positive");
    RegularityConstants rc;
    rc.tau = tau;
    rc.s = s;
    rc.kappa = kappa;
    rc.C_s = C_s;
    rc.D_s = D_s;
    rc.C_tilde = C_s * D_s * D_s;
    rc.cs_is_lower_bound = false;
    rc.ds_is_lower_bound = false;
    rc.provenance = "user_supplied";
    return rc;
}

inline void to_json(nlohmann::json& j, const RegularityConstants& rc) {
    j = nlohmann::json{{"tau", rc.tau},
                       {"s", rc.s},
                       {"kappa", rc.kappa},
                       {"C_s", rc.C_s},
                       {"cs_is_lower_bound", rc.cs_is_lower_bound},
                       {"ds_is_lower_bound", rc.ds_is_lower_bound},
                       {"decoupling_unavailable", rc.decoupling_unavailable},
                       {"provenance", rc.provenance},
                       {"seed", rc.seed},
                       {"effort", rc.effort}};
    if (std::isfinite(rc.D_s)) j["D_s"] = rc.D_s;  // NaN would serialize as null
}

inline void from_json(const nlohmann::json& j, RegularityConstants& rc) {
    rc.tau = j.at("tau").get<double>();
    rc.s = j.at("s").get<double>();
    rc.kappa = j.at("kappa").get<double>();
    rc.C_s = j.at("C_s").get<double>();
    rc.cs_is_lower_bound = j.at("cs_is_lower_bound").get<bool>();
    rc.ds_is_lower_bound = j.at("ds_is_lower_bound").get<bool>();
    rc.decoupling_unavailable = j.at("decoupling_unavailable").get<bool>();
    rc.provenance = j.at("provenance").get<std::string>();
    rc.seed = j.at("seed").get<std::uint64_t>();
    rc.effort = j.at("effort").get<int>();
    if (j.contains("D_s")) {
        rc.D_s = j.at("D_s").get<double>();
        rc.C_tilde = rc.C_s * rc.D_s * rc.D_s;
    } else {
        rc.D_s = std::numeric_limits<double>::quiet_NaN();
        rc.C_tilde = std::numeric_limits<double>::quiet_NaN();
    }
}

// Constants cache: a JSON object mapping keys to records, written atomically.
inline std::string constants_cache_key(const DisorderDistribution& dist, double s, int effort,
                                       std::uint64_t seed) {
    std::ostringstream os;
    os.precision(17);
    os << dist.fingerprint() << "|s=" << s << "|effort=" << effort << "|seed=" << seed;
    return os.str();
}

inline nlohmann::json load_constants_cache(const std::string& path) {
    std::ifstream in(path);
    if (!in) return nlohmann::json::object();
    nlohmann::json j = nlohmann::json::parse(in, nullptr, false);
    if (j.is_discarded() || !j.is_object())
        throw ConfigError("constants cache is not a JSON object: " + path);
    return j;
}

inline void save_constants_cache(const std::string& path, const nlohmann::json& cache) {
    std::filesystem::path target(path);
    std::filesystem::path tmp = target;
    tmp += ".tmp";
    {
        std::ofstream out(tmp);
        if (!out) throw ConfigError("cannot write constants cache: " + tmp.string());
        out << cache.dump(2) << "\n";
    }
    std::filesystem::rename(tmp, target);
}

inline std::optional<RegularityConstants> cached_constants(const nlohmann::json& cache,
                                                           const std::string& key) {
    auto it = cache.find(key);
    if (it == cache.end()) return std::nullopt;
    return it->get<RegularityConstants>();
}

}  // namespace fmloc

#endif
