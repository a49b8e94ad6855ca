#pragma once

// Independent numerical oracles for the test suites. Everything here avoids
// the library's Gauss-Kronrod and incomplete-gamma code paths on purpose:
// integrals use adaptive Simpson, references use long double arithmetic.

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

namespace oracle {

namespace detail {

template <class F>
double simpson_rec(F& f, double a, double b, double fa, double fm, double fb, double whole,
                   double eps, int depth) {
    double m = 0.5 * (a + b);
    double lm = 0.5 * (a + m), rm = 0.5 * (m + b);
    double flm = f(lm), frm = f(rm);
    double left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    double right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    double delta = left + right - whole;
    if (depth <= 0 || std::abs(delta) <= 15.0 * eps)
        return left + right + delta / 15.0;
    return simpson_rec(f, a, m, fa, flm, fm, left, eps * 0.5, depth - 1) +
           simpson_rec(f, m, b, fm, frm, fb, right, eps * 0.5, depth - 1);
}

}  // namespace detail

// Adaptive Simpson on [a,b].
template <class F>
double integrate(F f, double a, double b, double eps = 1e-12, int depth = 48) {
    if (!(b > a)) return 0.0;
    double m = 0.5 * (a + b);
    double fa = f(a), fb = f(b), fm = f(m);
    double whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    return detail::simpson_rec(f, a, b, fa, fm, fb, whole, eps, depth);
}

// Piecewise wrapper with geometric panels toward 0, for integrands whose
// action sits near the origin.
template <class F>
double integrate_edge(F f, double a, double b, double eps = 1e-12) {
    std::vector<double> cuts{a};
    for (int i = 9; i >= 1; --i) {
        double c = a + (b - a) * std::pow(10.0, -i);
        if (c > cuts.back() && c < b) cuts.push_back(c);
    }
    cuts.push_back(b);
    double s = 0.0;
    for (std::size_t i = 0; i + 1 < cuts.size(); ++i)
        s += integrate(f, cuts[i], cuts[i + 1], eps / static_cast<double>(cuts.size()));
    return s;
}

// Regularized lower incomplete gamma by quadrature of the defining integral.
// For a < 1 the substitution s = t^a removes the endpoint singularity; for
// a >= 1 the integrand is smooth and integrated directly. Epsilons are scaled
// by Gamma so the returned value is accurate to ~1e-13 absolute.
inline double reg_gamma(double a, double x) {
    if (x <= 0.0) return 0.0;
    if (a < 1.0) {
        double v = integrate_edge([&](double s) { return std::exp(-std::pow(s, 1.0 / a)); },
                                  0.0, std::pow(x, a), 1e-13 * std::tgamma(a + 1.0));
        return v / std::tgamma(a + 1.0);  // the 1/a from ds and 1/Gamma(a) combine
    }
    double v = integrate_edge([&](double t) { return std::pow(t, a - 1.0) * std::exp(-t); },
                              0.0, x, 1e-13 * std::tgamma(a));
    return v / std::tgamma(a);
}

// B(k,h,beta) = int_0^1 x^h exp(-beta x^{2k}) dx via u = x^{h+1}.
inline double norm_B(double k, double h, double beta) {
    double p = 2.0 * k / (h + 1.0);
    double v = integrate_edge(
        [&](double u) { return std::exp(-beta * std::pow(u, p)); }, 0.0, 1.0, 1e-13);
    return v / (h + 1.0);
}

// G(lambda,beta) through the defining moment of f_{k,h,beta} with k=1, h=2*lambda-1
// when lambda >= 1/2, else k chosen to keep h >= 0.
inline double moment_G(double lambda, double beta) {
    double k = lambda >= 0.5 ? 1.0 : std::ceil(0.5 / lambda);
    double h = 2.0 * k * lambda - 1.0;
    return norm_B(k, 2.0 * k + h, beta) / norm_B(k, h, beta);
}

// Long-double reference for log B(k,h,beta) at large beta, where
// gamma(lambda,beta) = 1 to quad precision: log B = -lambda log beta
// + lgamma(lambda) - log(2k).
inline long double log_norm_B_large_beta(double k, double h, double beta) {
    long double lambda = (static_cast<long double>(h) + 1.0L) / (2.0L * k);
    return -lambda * std::log(static_cast<long double>(beta)) + lgammal(lambda) -
           std::log(2.0L * static_cast<long double>(k));
}

// Tensor-product Simpson on a rectangle with geometric panels toward the low
// edges, for the 2-D Gibbs functional and small evidence cases.
template <class F2>
double integrate2d(F2 f, double ax, double bx, double ay, double by, double eps = 1e-10) {
    auto outer = [&](double y) {
        return integrate_edge([&](double x) { return f(x, y); }, ax, bx, eps * 0.02);
    };
    return integrate_edge(outer, ay, by, eps);
}

// ---- Kolmogorov-Smirnov -------------------------------------------------------

// One-sample KS statistic against a cdf.
inline double ks_statistic(std::vector<double> xs, const std::function<double(double)>& cdf) {
    std::sort(xs.begin(), xs.end());
    double n = static_cast<double>(xs.size());
    double d = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        double c = cdf(xs[i]);
        d = std::max(d, std::abs(c - static_cast<double>(i) / n));
        d = std::max(d, std::abs(static_cast<double>(i + 1) / n - c));
    }
    return d;
}

// Asymptotic Kolmogorov p-value P(sqrt(n) D > t).
inline double ks_pvalue(double d, std::size_t n) {
    double t = d * std::sqrt(static_cast<double>(n));
    double s = 0.0;
    for (int k = 1; k <= 101; ++k)
        s += (k % 2 == 1 ? 2.0 : -2.0) * std::exp(-2.0 * k * k * t * t);
    return std::clamp(s, 0.0, 1.0);
}

// ---- misc ----------------------------------------------------------------------

inline double rel_err(double a, double b) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-300});
}

}  // namespace oracle
