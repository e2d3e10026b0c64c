#ifndef FMLOC_MOMENTS_HPP
#define FMLOC_MOMENTS_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <nlohmann/json.hpp>
#include <sstream>
#include <string>
#include <vector>

#include "fmloc/common.hpp"
#include "fmloc/ensemble.hpp"
#include "fmloc/lattice.hpp"
#include "fmloc/resolvent.hpp"

namespace fmloc {

// Monte-Carlo estimate of E(|G(x, y; z)|^s). The point estimate is always the
// plain sample mean; the uncertainty scheme switches when 2s >= tau, where the
// summands can have infinite variance and the naive standard error is
// meaningless. There the stderr comes from spread of block means over
// k = ceil(sqrt(n)) blocks.
struct MomentEstimate {
    double mean = 0.0;
    double std_error = 0.0;
    std::int64_t n = 0;  // samples that entered the average
    std::string estimator;
    double s = 0.0;
    SpectralParameter z;
    SitePoint x, y;
    std::uint64_t region_fingerprint = 0;
    std::int64_t failures = 0;

    std::int64_t distance() const { return linf_dist(x, y); }
};

inline void to_json(nlohmann::json& j, const MomentEstimate& me) {
    std::vector<std::int64_t> xs, ys;
    for (int i = 0; i < me.x.dim; ++i) xs.push_back(me.x[i]);
    for (int i = 0; i < me.y.dim; ++i) ys.push_back(me.y[i]);
    j = nlohmann::json{{"mean", me.mean},
                       {"stderr", me.std_error},
                       {"n", me.n},
                       {"estimator", me.estimator},
                       {"s", me.s},
                       {"energy", me.z.e},
                       {"eta", me.z.eta},
                       {"half_plane", me.z.sign},
                       {"x", xs},
                       {"y", ys},
                       {"region_fingerprint", me.region_fingerprint},
                       {"failures", me.failures}};
}

namespace detail {

struct BlockStats {
    std::vector<double> sum, sumsq;
    std::int64_t count = 0;
    std::int64_t failures = 0;
    std::int64_t first_failed = -1;
    std::string failure_reason;
};

// Shared sampling engine: one factorization and one row solve per sample,
// every target read off the same solution. values_of maps the solved row to
// the per-target sample values.
template <typename RowToValues>
std::vector<BlockStats> accumulate_samples(const OperatorEnsemble& ens, const Region& region,
                                           int row_index, SpectralParameter z, std::int64_t n,
                                           std::size_t n_targets, int threads,
                                           const RowToValues& values_of) {
    const std::size_t k = sqrt_block_count(static_cast<std::size_t>(n));
    BlockLayout layout(static_cast<std::size_t>(n), k);
    std::vector<BlockStats> stats(k);
    parallel_blocks(k, threads, [&](std::size_t b) {
        auto& st = stats[b];
        st.sum.assign(n_targets, 0.0);
        st.sumsq.assign(n_targets, 0.0);
        std::vector<double> vals(n_targets);
        for (std::size_t i = layout.begin(b); i < layout.end(b); ++i) {
            auto sample = sample_potential(ens, region, static_cast<std::uint64_t>(i));
            try {
                auto H = assemble(ens, sample);
                GreenSolver solver(H, z);
                values_of(solver.row(row_index), vals);
                for (std::size_t t = 0; t < n_targets; ++t) {
                    st.sum[t] += vals[t];
                    st.sumsq[t] += vals[t] * vals[t];
                }
                ++st.count;
            } catch (const SolveError& e) {
                ++st.failures;
                if (st.first_failed < 0) {
                    st.first_failed = static_cast<std::int64_t>(i);
                    st.failure_reason = e.what();
                }
            }
        }
    });
    return stats;
}

// Folds per-block partials for one target into a MomentEstimate. The block
// granularity is fixed by n alone, so the result is identical for any thread
// count.
inline MomentEstimate reduce_target(const std::vector<BlockStats>& stats, std::size_t t,
                                    double s, double tau) {
    std::vector<double> sums, sumsqs, block_means;
    sums.reserve(stats.size());
    sumsqs.reserve(stats.size());
    std::int64_t count = 0;
    for (const auto& st : stats) {
        sums.push_back(st.sum[t]);
        sumsqs.push_back(st.sumsq[t]);
        count += st.count;
        if (st.count > 0) block_means.push_back(st.sum[t] / static_cast<double>(st.count));
    }
    MomentEstimate me;
    me.n = count;
    me.s = s;
    double total = pairwise_sum(sums);
    me.mean = total / static_cast<double>(count);
    if (2.0 * s < tau) {
        me.estimator = "plain_mean";
        if (count > 1) {
            double q = pairwise_sum(sumsqs) - static_cast<double>(count) * me.mean * me.mean;
            double var = std::max(0.0, q / static_cast<double>(count - 1));
            me.std_error = std::sqrt(var / static_cast<double>(count));
        }
    } else {
        std::size_t kb = block_means.size();
        me.estimator = "median_of_means(" + std::to_string(kb) + ")";
        if (kb > 1) {
            double bm = pairwise_sum(block_means) / static_cast<double>(kb);
            double ss = 0.0;
            for (double v : block_means) ss += (v - bm) * (v - bm);
            me.std_error = std::sqrt(ss / static_cast<double>(kb - 1) /
                                     static_cast<double>(kb));
        }
    }
    return me;
}

inline void check_failures(const std::vector<BlockStats>& stats, std::int64_t n) {
    std::int64_t failures = 0, first = -1;
    std::string reason;
    for (const auto& st : stats) {
        failures += st.failures;
        if (st.first_failed >= 0 && (first < 0 || st.first_failed < first)) {
            first = st.first_failed;
            reason = st.failure_reason;
        }
    }
    if (failures * 1000 > n) {
        std::ostringstream os;
        os << "moment estimation aborted: " << failures << " of " << n
           << " samples failed to solve (first at sample " << first << ": " << reason << ")";
        throw CheckError(os.str());
    }
}

inline std::int64_t total_failures(const std::vector<BlockStats>& stats) {
    std::int64_t f = 0;
    for (const auto& st : stats) f += st.failures;
    return f;
}

}  // namespace detail

// One factorization per sample serves every target: the solved row of the
// resolvent at x0 is shared. Entries match independent fractional_moment
// calls exactly because the disorder stream is keyed by site, not by target
// list.
inline std::vector<MomentEstimate> moment_profile(const OperatorEnsemble& ens,
                                                  const Region& region, const SitePoint& x0,
                                                  const std::vector<SitePoint>& targets,
                                                  SpectralParameter z, double s, std::int64_t n,
                                                  int threads = 1) {
    if (!(s > 0.0 && s < 1.0)) throw ConfigError("moment exponent must satisfy 0 < s < 1");
    if (n < 2) throw ConfigError("moment estimation needs n >= 2");
    if (targets.empty()) throw ConfigError("moment profile needs at least one target");
    threads = resolve_threads(threads);
    int ix0 = region.index_of(x0);
    std::vector<int> target_index;
    target_index.reserve(targets.size());
    for (const auto& y : targets) target_index.push_back(region.index_of(y));

    auto stats = detail::accumulate_samples(
        ens, region, ix0, z, n, targets.size(), threads,
        [&](const Eigen::VectorXcd& row, std::vector<double>& vals) {
            for (std::size_t t = 0; t < target_index.size(); ++t)
                vals[t] = std::pow(std::abs(row[target_index[t]]), s);
        });
    detail::check_failures(stats, n);

    std::vector<MomentEstimate> out;
    out.reserve(targets.size());
    for (std::size_t t = 0; t < targets.size(); ++t) {
        auto me = detail::reduce_target(stats, t, s, ens.disorder.tau);
        me.z = z;
        me.x = x0;
        me.y = targets[t];
        me.region_fingerprint = region.fingerprint();
        me.failures = detail::total_failures(stats);
        out.push_back(std::move(me));
    }
    return out;
}

inline MomentEstimate fractional_moment(const OperatorEnsemble& ens, const Region& region,
                                        const SitePoint& x, const SitePoint& y,
                                        SpectralParameter z, double s, std::int64_t n,
                                        int threads = 1) {
    return moment_profile(ens, region, x, {y}, z, s, n, threads).front();
}

// Shell-pooled profile: per sample, sites at equal distance from x0 are
// averaged first, then the per-sample shell values run through the usual
// estimator. Pooling inside the sample keeps the correlation between sites
// of one disorder realization out of the quoted uncertainty.
struct ShellAverage {
    std::int64_t distance = 0;
    int sites = 0;
    MomentEstimate est;
};

inline std::vector<ShellAverage> pooled_shell_profile(const OperatorEnsemble& ens,
                                                      const Region& region, const SitePoint& x0,
                                                      SpectralParameter z, double s,
                                                      std::int64_t n, int threads = 1) {
    if (!(s > 0.0 && s < 1.0)) throw ConfigError("moment exponent must satisfy 0 < s < 1");
    if (n < 2) throw ConfigError("moment estimation needs n >= 2");
    threads = resolve_threads(threads);
    int ix0 = region.index_of(x0);

    std::vector<std::int64_t> distances;  // sorted distinct shell radii
    for (const auto& p : region.sites) distances.push_back(linf_dist(x0, p));
    std::sort(distances.begin(), distances.end());
    distances.erase(std::unique(distances.begin(), distances.end()), distances.end());
    std::vector<std::size_t> shell_of(region.sites.size());
    std::vector<int> shell_sites(distances.size(), 0);
    for (std::size_t i = 0; i < region.sites.size(); ++i) {
        auto d = linf_dist(x0, region.sites[i]);
        auto it = std::lower_bound(distances.begin(), distances.end(), d);
        shell_of[i] = static_cast<std::size_t>(it - distances.begin());
        ++shell_sites[shell_of[i]];
    }

    auto stats = detail::accumulate_samples(
        ens, region, ix0, z, n, distances.size(), threads,
        [&](const Eigen::VectorXcd& row, std::vector<double>& vals) {
            std::fill(vals.begin(), vals.end(), 0.0);
            for (std::size_t i = 0; i < shell_of.size(); ++i)
                vals[shell_of[i]] += std::pow(std::abs(row[static_cast<int>(i)]), s);
            for (std::size_t sh = 0; sh < vals.size(); ++sh) vals[sh] /= shell_sites[sh];
        });
    detail::check_failures(stats, n);

    std::vector<ShellAverage> out;
    out.reserve(distances.size());
    for (std::size_t sh = 0; sh < distances.size(); ++sh) {
        ShellAverage row;
        row.distance = distances[sh];
        row.sites = shell_sites[sh];
        row.est = detail::reduce_target(stats, sh, s, ens.disorder.tau);
        row.est.z = z;
        row.est.x = x0;
        row.est.y = x0;  // pooled rows have no single target site
        row.est.region_fingerprint = region.fingerprint();
        row.est.failures = detail::total_failures(stats);
        out.push_back(std::move(row));
    }
    return out;
}

inline void to_json(nlohmann::json& j, const ShellAverage& sa) {
    j = nlohmann::json{{"distance", sa.distance}, {"sites", sa.sites}, {"estimate", sa.est}};
}

// Weighted least squares of ln(mean) against distance. Weights are inverse
// variances of ln(mean) by the delta method; if any point carries no usable
// uncertainty the fit falls back to equal weights.
struct DecayFit {
    double amplitude = 0.0;
    double rate = 0.0;
    double r_squared = 0.0;
    std::int64_t window_lo = 0, window_hi = 0;
    int points = 0;
    bool weighted = true;
};

inline void to_json(nlohmann::json& j, const DecayFit& f) {
    j = nlohmann::json{{"amplitude", f.amplitude},   {"rate", f.rate},
                       {"r_squared", f.r_squared},   {"window_lo", f.window_lo},
                       {"window_hi", f.window_hi},   {"points", f.points},
                       {"weighted", f.weighted}};
}

namespace detail {

struct FitPoint {
    double distance;
    double mean;
    double std_error;
};

inline DecayFit fit_loglinear(const std::vector<FitPoint>& pts, std::int64_t lo,
                              std::int64_t hi) {
    std::vector<FitPoint> in;
    for (const auto& p : pts)
        if (p.distance >= static_cast<double>(lo) && p.distance <= static_cast<double>(hi))
            in.push_back(p);
    std::vector<double> dists;
    for (const auto& p : in) dists.push_back(p.distance);
    std::sort(dists.begin(), dists.end());
    dists.erase(std::unique(dists.begin(), dists.end()), dists.end());
    if (dists.size() < 3)
        throw ConfigError("decay fit needs at least 3 distinct distances in the window");
    for (const auto& p : in)
        if (!(p.mean > 0.0)) {
            std::ostringstream os;
            os << "decay fit rejected: nonpositive mean " << p.mean << " at distance "
               << p.distance;
            throw ConfigError(os.str());
        }

    bool weighted = true;
    for (const auto& p : in)
        if (!(p.std_error > 0.0) || !std::isfinite(p.std_error / p.mean)) weighted = false;

    double W = 0, X = 0, Y = 0, XX = 0, XY = 0;
    for (const auto& p : in) {
        double w = weighted ? std::pow(p.mean / p.std_error, 2) : 1.0;
        double y = std::log(p.mean);
        W += w;
        X += w * p.distance;
        Y += w * y;
        XX += w * p.distance * p.distance;
        XY += w * p.distance * y;
    }
    double denom = W * XX - X * X;
    if (!(std::abs(denom) > 0.0)) throw ConfigError("decay fit is degenerate in distance");
    double slope = (W * XY - X * Y) / denom;
    double intercept = (Y - slope * X) / W;

    double ybar = Y / W, ss_res = 0, ss_tot = 0;
    for (const auto& p : in) {
        double w = weighted ? std::pow(p.mean / p.std_error, 2) : 1.0;
        double y = std::log(p.mean);
        double yhat = intercept + slope * p.distance;
        ss_res += w * (y - yhat) * (y - yhat);
        ss_tot += w * (y - ybar) * (y - ybar);
    }
    DecayFit f;
    f.amplitude = std::exp(intercept);
    f.rate = -slope;
    f.r_squared = ss_tot > 0.0 ? std::clamp(1.0 - ss_res / ss_tot, 0.0, 1.0) : 1.0;
    f.window_lo = lo;
    f.window_hi = hi;
    f.points = static_cast<int>(in.size());
    f.weighted = weighted;
    return f;
}

}  // namespace detail

inline DecayFit decay_fit(const std::vector<MomentEstimate>& profile, std::int64_t lo,
                          std::int64_t hi) {
    std::vector<detail::FitPoint> pts;
    for (const auto& me : profile)
        pts.push_back({static_cast<double>(me.distance()), me.mean, me.std_error});
    return detail::fit_loglinear(pts, lo, hi);
}

inline DecayFit decay_fit(const std::vector<ShellAverage>& profile, std::int64_t lo,
                          std::int64_t hi) {
    std::vector<detail::FitPoint> pts;
    for (const auto& row : profile)
        pts.push_back({static_cast<double>(row.distance), row.est.mean, row.est.std_error});
    return detail::fit_loglinear(pts, lo, hi);
}

// CSV with a fixed header; doubles at full round-trip precision.
inline std::string profile_csv(const std::vector<MomentEstimate>& profile) {
    std::ostringstream os;
    os.precision(17);
    os << "distance,mean,stderr,n\n";
    for (const auto& me : profile)
        os << me.distance() << "," << me.mean << "," << me.std_error << "," << me.n << "\n";
    return os.str();
}

inline std::string profile_csv(const std::vector<ShellAverage>& profile) {
    std::ostringstream os;
    os.precision(17);
    os << "distance,mean,stderr,n\n";
    for (const auto& row : profile)
        os << row.distance << "," << row.est.mean << "," << row.est.std_error << ","
           << row.est.n << "\n";
    return os.str();
}

}  // namespace fmloc

#endif
