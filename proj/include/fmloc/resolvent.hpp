#ifndef FMLOC_RESOLVENT_HPP
#define FMLOC_RESOLVENT_HPP

#include <Eigen/Dense>
#include <Eigen/SparseCore>
#include <Eigen/SparseLU>
#include <cmath>
#include <complex>
#include <limits>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "fmloc/common.hpp"
#include "fmloc/ensemble.hpp"
#include "fmloc/lattice.hpp"

namespace fmloc {

// z = e + sign * i * eta. eta = 0 is allowed for finite volumes: under
// continuous disorder the spectrum misses e almost surely, and the
// conditioning guard turns the exceptional collisions into explicit errors.
struct SpectralParameter {
    double e = 0.0;
    double eta = 0.0;
    int sign = +1;

    SpectralParameter() = default;
    SpectralParameter(double e_, double eta_, int sign_ = +1) : e(e_), eta(eta_), sign(sign_) {
        if (eta < 0.0) throw ConfigError("spectral parameter: eta must be >= 0");
        if (sign != +1 && sign != -1) throw ConfigError("spectral parameter: sign must be +-1");
    }

    static SpectralParameter upper(double e, double eta) { return {e, eta, +1}; }
    static SpectralParameter lower(double e, double eta) { return {e, eta, -1}; }

    cdouble z() const { return {e, sign > 0 ? eta : -eta}; }
    SpectralParameter conjugated() const { return {e, eta, -sign}; }

    std::string str() const {
        std::ostringstream os;
        os.precision(17);
        os << e << (sign > 0 ? "+" : "-") << eta << "i";
        return os.str();
    }
};

namespace detail {

// Hager-style 1-norm estimate of ||inv(A)||_1 using a solver's forward and
// adjoint solves. Complex variant: the sign vector becomes the phase vector.
template <typename SolveFwd, typename SolveAdj>
double inverse_norm1_estimate(int n, const SolveFwd& fwd, const SolveAdj& adj) {
    Eigen::VectorXcd x = Eigen::VectorXcd::Constant(n, cdouble(1.0 / n, 0.0));
    double est = 0.0;
    int last_j = -1;
    for (int iter = 0; iter < 5; ++iter) {
        Eigen::VectorXcd y = fwd(x);
        est = y.lpNorm<1>();
        Eigen::VectorXcd xi(n);
        for (int i = 0; i < n; ++i) {
            double m = std::abs(y[i]);
            xi[i] = m > 0.0 ? y[i] / m : cdouble(1.0, 0.0);
        }
        Eigen::VectorXcd g = adj(xi);
        int j = 0;
        double gmax = 0.0;
        for (int i = 0; i < n; ++i)
            if (std::abs(g[i]) > gmax) {
                gmax = std::abs(g[i]);
                j = i;
            }
        if (j == last_j || gmax <= std::real(g.dot(x)) + 1e-15) break;
        last_j = j;
        x.setZero();
        x[j] = 1.0;
    }
    return est;
}

}  // namespace detail

// Direct solver for (H - z). One factorization, columns/rows on demand with
// caching. Every solve is residual-checked; a breach raises SolveError
// carrying a condition estimate.
class GreenSolver {
  public:
    static constexpr double kResidualTol = 1e-10;
    static constexpr double kConditionLimit = 1e14;

    GreenSolver(const Eigen::SparseMatrix<cdouble>& H, SpectralParameter zp)
        : zp_(zp), n_(static_cast<int>(H.rows())) {
        Eigen::SparseMatrix<cdouble> A = H;
        cdouble z = zp.z();
        Eigen::SparseMatrix<cdouble> id(n_, n_);
        id.setIdentity();
        A = A - z * id;
        A.makeCompressed();
        anorm1_ = 0.0;
        for (int k = 0; k < A.outerSize(); ++k) {
            double col = 0.0;
            for (Eigen::SparseMatrix<cdouble>::InnerIterator it(A, k); it; ++it)
                col += std::abs(it.value());
            anorm1_ = std::max(anorm1_, col);
        }
        A_ = A;
        lu_.compute(A_);
        if (lu_.info() != Eigen::Success)
            throw SolveError("factorization of (H - z) failed at z = " + zp.str(),
                             std::numeric_limits<double>::infinity());
    }

    int size() const { return n_; }
    SpectralParameter spectral() const { return zp_; }

    // G(., y)
    const Eigen::VectorXcd& column(int y) {
        auto it = col_cache_.find(y);
        if (it != col_cache_.end()) return it->second;
        Eigen::VectorXcd b = Eigen::VectorXcd::Zero(n_);
        b[y] = 1.0;
        Eigen::VectorXcd g = lu_.solve(b);
        check_residual(A_ * g - b);
        return col_cache_.emplace(y, std::move(g)).first->second;
    }

    // G(x, .), via a transposed solve: row x of inv(A) is a column of inv(A^T).
    const Eigen::VectorXcd& row(int x) {
        auto it = row_cache_.find(x);
        if (it != row_cache_.end()) return it->second;
        Eigen::VectorXcd b = Eigen::VectorXcd::Zero(n_);
        b[x] = 1.0;
        Eigen::VectorXcd w = lu_.transpose().solve(b);
        check_residual(A_.transpose() * w - b);
        return row_cache_.emplace(x, std::move(w)).first->second;
    }

    cdouble entry(int x, int y) {
        auto itc = col_cache_.find(y);
        if (itc != col_cache_.end()) return itc->second[x];
        auto itr = row_cache_.find(x);
        if (itr != row_cache_.end()) return itr->second[y];
        return column(y)[x];
    }

    Eigen::VectorXcd solve(const Eigen::VectorXcd& b) {
        Eigen::VectorXcd g = lu_.solve(b);
        check_residual(A_ * g - b, b.lpNorm<Eigen::Infinity>());
        return g;
    }

    double condition_estimate() {
        if (cond_ < 0.0) {
            double inv1 = detail::inverse_norm1_estimate(
                n_, [&](const Eigen::VectorXcd& v) { return Eigen::VectorXcd(lu_.solve(v)); },
                [&](const Eigen::VectorXcd& v) {
                    return Eigen::VectorXcd(lu_.adjoint().solve(v));
                });
            cond_ = inv1 * anorm1_;
        }
        return cond_;
    }

  private:
    void check_residual(const Eigen::VectorXcd& r, double bnorm = 1.0) {
        double res = r.lpNorm<Eigen::Infinity>() / std::max(bnorm, 1e-300);
        if (!(res <= kResidualTol)) {
            double c;
            try {
                c = condition_estimate();
            } catch (...) {
                c = std::numeric_limits<double>::infinity();
            }
            std::ostringstream os;
            os << "solve at z = " << zp_.str() << " missed the residual tolerance (residual "
               << res << ")";
            throw SolveError(os.str(), c);
        }
    }

    SpectralParameter zp_;
    int n_;
    double anorm1_ = 0.0;
    double cond_ = -1.0;
    Eigen::SparseMatrix<cdouble> A_;
    Eigen::SparseLU<Eigen::SparseMatrix<cdouble>> lu_;
    std::unordered_map<int, Eigen::VectorXcd> col_cache_;
    std::unordered_map<int, Eigen::VectorXcd> row_cache_;
};

// Convenience single-entry Green function over a region.
inline cdouble green(const Eigen::SparseMatrix<cdouble>& H, const Region& region,
                     SpectralParameter z, const SitePoint& x, const SitePoint& y) {
    GreenSolver solver(H, z);
    return solver.entry(region.index_of(x), region.index_of(y));
}

// Dense oracle: full inverse of (H - z) by partial-pivot LU.
inline Eigen::MatrixXcd dense_inverse(const Eigen::MatrixXcd& H, cdouble z) {
    const auto n = H.rows();
    Eigen::MatrixXcd A = H - z * Eigen::MatrixXcd::Identity(n, n);
    Eigen::PartialPivLU<Eigen::MatrixXcd> lu(A);
    double rcond = lu.rcond();
    if (!(rcond > 1e-15))
        throw SolveError("dense inverse: matrix numerically singular", 1.0 / std::max(rcond, 1e-300));
    return lu.inverse();
}

// Green function of the operator with the potentials at two marked sites
// restored, computed from the resolvent of the operator with them zeroed.
// hat_solver must wrap H with V at both sites set to zero. ix = iy performs
// the one-site reduction. Returns G(ix, iy) of the restored operator.
inline cdouble krein_2x2(GreenSolver& hat_solver, int ix, int iy, double v_x, double v_y,
                         double lambda) {
    if (ix == iy) {
        cdouble a = hat_solver.entry(ix, ix);
        cdouble denom = 1.0 + lambda * v_x * a;
        if (std::abs(denom) < 1e-300)
            throw SolveError("one-site reduction: singular pivot",
                             std::numeric_limits<double>::infinity());
        return a / denom;
    }
    // A = 2x2 block of the hat resolvent on the marked sites
    cdouble a11 = hat_solver.entry(ix, ix);
    cdouble a12 = hat_solver.entry(ix, iy);
    cdouble a21 = hat_solver.entry(iy, ix);
    cdouble a22 = hat_solver.entry(iy, iy);
    cdouble det = a11 * a22 - a12 * a21;
    if (std::abs(det) < 1e-300)
        throw SolveError("two-site reduction: singular resolvent block",
                         std::numeric_limits<double>::infinity());
    // B = inv(A) + lambda * diag(v_x, v_y)
    cdouble b11 = a22 / det + lambda * v_x;
    cdouble b12 = -a12 / det;
    cdouble b21 = -a21 / det;
    cdouble b22 = a11 / det + lambda * v_y;
    cdouble detB = b11 * b22 - b12 * b21;
    if (std::abs(detB) < 1e-300)
        throw SolveError("two-site reduction: singular reduced matrix",
                         std::numeric_limits<double>::infinity());
    return -b12 / detB;  // (1,2) entry of inv(B)
}

struct IdentityReport {
    // max elementwise residuals, relative to the largest Green-function entry
    double first_order = 0.0;
    double second_order = 0.0;
    double three_factor = 0.0;
    // largest magnitude of the two expansion terms that decoupling kills
    double vanishing_terms = 0.0;
    int pairs_checked = 0;

    double max_residual() const {
        return std::max(first_order, std::max(second_order, three_factor));
    }
};

// Verifies, on one disorder realization, the two resolvent expansions and the
// three-factor boundary formula they produce, with depletion sets taken on W
// and on its one-hop enlargement. Evaluated densely; regions are small here.
inline IdentityReport identity_residuals(const OperatorEnsemble& ens,
                                         const DisorderSample& sample, const Region& W,
                                         SpectralParameter zp) {
    const Region& omega = sample.region;
    auto support = ens.hopping.support(omega.dim);
    for (const auto& p : W.sites)
        if (!omega.contains(p)) throw ConfigError("identity check: W must lie inside the region");

    Region wplus_ambient = region_plus(W, support);
    std::vector<SitePoint> wp_sites;
    for (const auto& p : wplus_ambient.sites)
        if (omega.contains(p)) wp_sites.push_back(p);
    Region wplus(omega.dim, wp_sites);

    BondSet gamma1 = cut_set_within(W, omega, support);
    BondSet gamma2 = cut_set_within(wplus, omega, support);
    if (gamma1.bonds.empty()) throw ConfigError("identity check: W has empty boundary in region");

    cdouble z = zp.z();
    Eigen::MatrixXcd G = dense_inverse(assemble_dense(ens, sample), z);
    Eigen::MatrixXcd G1 = dense_inverse(assemble_dense(ens, sample, &gamma1), z);
    Eigen::MatrixXcd G2 = dense_inverse(assemble_dense(ens, sample, &gamma2), z);
    Eigen::MatrixXcd T1 = Eigen::MatrixXcd(depleted_coupling(ens, omega, gamma1));
    Eigen::MatrixXcd T2 = Eigen::MatrixXcd(depleted_coupling(ens, omega, gamma2));

    double gmax = G.cwiseAbs().maxCoeff();
    double denom = std::max(gmax, 1e-300);

    IdentityReport rep;
    // G = G1 - G1 T1 G = G1 - G T1 G1
    rep.first_order = std::max(
        (G - (G1 - G1 * T1 * G)).cwiseAbs().maxCoeff() / denom,
        (G - (G1 - G * T1 * G1)).cwiseAbs().maxCoeff() / denom);
    // G = G1 - G1 T1 G2 + G1 T1 G T2 G2
    rep.second_order =
        (G - (G1 - G1 * T1 * G2 + G1 * T1 * G * T2 * G2)).cwiseAbs().maxCoeff() / denom;

    // Boundary formula for x in W, y outside the enlargement: the surviving
    // double-boundary term reproduces G(x,y) and the first two terms vanish.
    for (const auto& x : W.sites) {
        int ix = omega.index_of(x);
        for (const auto& y : omega.sites) {
            if (wplus.contains(y)) continue;
            int iy = omega.index_of(y);
            cdouble lhs = G(ix, iy);
            cdouble rhs = 0.0;
            for (const auto& b1 : gamma1.bonds) {
                int iu = omega.index_of(b1.inner);
                int iup = omega.index_of(b1.outer);
                cdouble t1 =
                    ens.hopping.amplitude(b1.outer - b1.inner) *
                    std::exp(cdouble(0.0, ens.hopping.phase(b1.inner, b1.outer)));
                for (const auto& b2 : gamma2.bonds) {
                    int iv = omega.index_of(b2.inner);
                    int ivp = omega.index_of(b2.outer);
                    cdouble t2 =
                        ens.hopping.amplitude(b2.outer - b2.inner) *
                        std::exp(cdouble(0.0, ens.hopping.phase(b2.inner, b2.outer)));
                    rhs += t1 * t2 * G1(ix, iu) * G(iup, iv) * G2(ivp, iy);
                }
            }
            rep.three_factor = std::max(rep.three_factor, std::abs(lhs - rhs) / denom);
            cdouble term1 = G1(ix, iy);
            cdouble term2 = (G1 * T1 * G2)(ix, iy);
            rep.vanishing_terms =
                std::max(rep.vanishing_terms, std::max(std::abs(term1), std::abs(term2)));
            ++rep.pairs_checked;
        }
    }
    if (rep.pairs_checked == 0)
        throw ConfigError("identity check: no test pairs (x in W, y outside enlarged W)");
    return rep;
}

}  // namespace fmloc

#endif
