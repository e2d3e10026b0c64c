#ifndef FMLOC_QUADRATURE_HPP
#define FMLOC_QUADRATURE_HPP

#include <cmath>
#include <functional>
#include <limits>

#include "fmloc/common.hpp"

namespace fmloc {

namespace detail {

inline double simpson(double a, double fa, double b, double fb, double fm) {
    return (b - a) / 6.0 * (fa + 4.0 * fm + fb);
}

template <class F>
double adaptive_rec(const F& f, double a, double fa, double b, double fb, double m, double fm,
                    double whole, double tol, int depth) {
    double lm = 0.5 * (a + m), rm = 0.5 * (m + b);
    double flm = f(lm), frm = f(rm);
    double left = simpson(a, fa, m, fm, flm);
    double right = simpson(m, fm, b, fb, frm);
    double delta = left + right - whole;
    if (depth <= 0 || std::abs(delta) <= 15.0 * tol)
        return left + right + delta / 15.0;
    return adaptive_rec(f, a, fa, m, fm, lm, flm, left, 0.5 * tol, depth - 1) +
           adaptive_rec(f, m, fm, b, fb, rm, frm, right, 0.5 * tol, depth - 1);
}

}  // namespace detail

template <class F>
double adaptive_simpson(const F& f, double a, double b, double tol = 1e-10, int max_depth = 48) {
    if (!(b > a)) return 0.0;
    double m = 0.5 * (a + b);
    double fa = f(a), fb = f(b), fm = f(m);
    double whole = detail::simpson(a, fa, b, fb, fm);
    return detail::adaptive_rec(f, a, fa, b, fb, m, fm, whole, tol, max_depth);
}

// int_a^b f(v) |v - v0|^{-s} dv for smooth f and 0 < s < 1.
// The substitution v = v0 +- w^{1/(1-s)} absorbs the singularity exactly:
// the transformed integrand is f(v0 +- w^{1/(1-s)}) / (1-s), which is bounded.
template <class F>
double integrate_power_singularity(const F& f, double s, double v0, double a, double b,
                                   double tol = 1e-10) {
    if (!(b > a)) return 0.0;
    if (!(s > 0.0 && s < 1.0)) throw ConfigError("power singularity needs 0 < s < 1");
    double q = 1.0 / (1.0 - s);
    double total = 0.0;
    if (v0 < b) {  // right part [max(a,v0), b]
        double lo = std::max(a, v0);
        double wmax = std::pow(b - v0, 1.0 - s);
        double wmin = lo > v0 ? std::pow(lo - v0, 1.0 - s) : 0.0;
        auto g = [&](double w) { return q * f(v0 + std::pow(w, q)); };
        total += adaptive_simpson(g, wmin, wmax, tol);
    }
    if (v0 > a) {  // left part [a, min(b,v0)]
        double hi = std::min(b, v0);
        double wmax = std::pow(v0 - a, 1.0 - s);
        double wmin = hi < v0 ? std::pow(v0 - hi, 1.0 - s) : 0.0;
        auto g = [&](double w) { return q * f(v0 - std::pow(w, q)); };
        total += adaptive_simpson(g, wmin, wmax, tol);
    }
    return total;
}

// Exact int_a^b |v-t|^{-s} dv and int_a^b (v-t)|v-t|^{-s} dv, 0 < s < 1.
inline double power_moment0(double a, double b, double t, double s) {
    if (!(b > a)) return 0.0;
    auto prim = [&](double x) {  // antiderivative of |v-t|^{-s} as function of v-t = x
        return std::copysign(std::pow(std::abs(x), 1.0 - s), x) / (1.0 - s);
    };
    return prim(b - t) - prim(a - t);
}

inline double power_moment1(double a, double b, double t, double s) {
    if (!(b > a)) return 0.0;
    auto prim = [&](double x) {  // antiderivative of x|x|^{-s}
        return std::pow(std::abs(x), 2.0 - s) / (2.0 - s);
    };
    return prim(b - t) - prim(a - t);
}

}  // namespace fmloc

#endif
