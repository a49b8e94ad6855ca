#pragma once

#include <cmath>
#include <limits>

#include "normform/util.hpp"

// Special functions behind the evidence and ELBO formulas: the regularized
// lower incomplete gamma, the truncated-density normalizer B(k,h,beta) and
// the moment function G(lambda,beta). All of them admit log-space variants
// so that beta up to ~1e8 stays representable.

namespace normform {

namespace detail {

// Lower regularized gamma by power series; valid for x < a + 1.
// Returns log(gamma_reg(a, x)) so tiny x does not underflow.
inline double log_gamma_p_series(double a, double x) {
    // gamma(a,x) = x^a e^{-x} / Gamma(a) * sum_{n>=0} x^n / (a (a+1)...(a+n))
    double term = 1.0 / a;
    double sum = term;
    for (int n = 1; n < 600; ++n) {
        term *= x / (a + n);
        sum += term;
        if (term < sum * 1e-18) break;
    }
    return a * std::log(x) - x - std::lgamma(a) + std::log(sum);
}

// Upper regularized gamma Q(a,x) by Lentz continued fraction; x >= a + 1.
inline double gamma_q_contfrac(double a, double x) {
    const double tiny = 1e-300;
    double b = x + 1.0 - a;
    double c = 1.0 / tiny;
    double d = 1.0 / b;
    double h = d;
    for (int i = 1; i < 600; ++i) {
        double an = -i * (i - a);
        b += 2.0;
        d = an * d + b;
        if (std::abs(d) < tiny) d = tiny;
        c = b + an / c;
        if (std::abs(c) < tiny) c = tiny;
        d = 1.0 / d;
        double del = d * c;
        h *= del;
        if (std::abs(del - 1.0) < 1e-17) break;
    }
    double lg = -x + a * std::log(x) - std::lgamma(a);
    return std::exp(lg) * h;
}

}  // namespace detail

// Regularized lower incomplete gamma gamma(a,x) = (1/Gamma(a)) int_0^x t^{a-1} e^{-t} dt.
inline double reg_lower_inc_gamma(double a, double x) {
    if (!(a > 0.0)) throw domain_error("reg_lower_inc_gamma: a must be > 0");
    if (!(x >= 0.0)) throw domain_error("reg_lower_inc_gamma: x must be >= 0");
    if (x == 0.0) return 0.0;
    if (x < a + 1.0) {
        double v = std::exp(detail::log_gamma_p_series(a, x));
        return v > 1.0 ? 1.0 : v;
    }
    double q = detail::gamma_q_contfrac(a, x);
    return q < 0.0 ? 1.0 : 1.0 - q;
}

// log of the regularized lower incomplete gamma; stable for x << 1 where the
// plain value underflows (x^a can reach e^{-700} scales inside norm_B).
inline double log_reg_lower_inc_gamma(double a, double x) {
    if (!(a > 0.0)) throw domain_error("log_reg_lower_inc_gamma: a must be > 0");
    if (!(x >= 0.0)) throw domain_error("log_reg_lower_inc_gamma: x must be >= 0");
    if (x == 0.0) return -std::numeric_limits<double>::infinity();
    if (x < a + 1.0) return detail::log_gamma_p_series(a, x);
    double q = detail::gamma_q_contfrac(a, x);
    return q < 1e-14 ? -q * (1.0 + 0.5 * q) : std::log1p(-q);
}

// Residual of the downward recurrence gamma(a+1,x) = gamma(a,x) - x^a e^{-x}/Gamma(a+1).
// Test hook: exact zero in real arithmetic.
inline double gamma_recurrence_check(double a, double x) {
    if (!(a > 0.0) || !(x > 0.0)) throw domain_error("gamma_recurrence_check: need a>0, x>0");
    double lhs = reg_lower_inc_gamma(a + 1.0, x);
    double rhs = reg_lower_inc_gamma(a, x);
    double corr = std::exp(a * std::log(x) - x - std::lgamma(a + 1.0));
    return lhs - rhs + corr;
}

// Normalizer B(k,h,beta) = int_0^1 u^h exp(-beta u^{2k}) du
//                        = beta^{-lambda} Gamma(lambda) gamma(lambda,beta) / (2k),
// lambda = (h+1)/(2k). At beta = 0 this is the analytic limit 1/(h+1), which
// CAVI iterations started at beta = 0 rely on.
inline LogValue norm_B(double k, double h, double beta) {
    if (!(k > 0.0)) throw domain_error("norm_B: k must be > 0");
    if (!(h >= 0.0)) throw domain_error("norm_B: h must be >= 0");
    if (!(beta >= 0.0)) throw domain_error("norm_B: beta must be >= 0");
    const double lambda = (h + 1.0) / (2.0 * k);
    if (beta == 0.0) return LogValue::from_log(-std::log1p(h));
    double lg = -lambda * std::log(beta) + std::lgamma(lambda) +
                log_reg_lower_inc_gamma(lambda, beta) - std::log(2.0 * k);
    return LogValue::from_log(lg);
}

inline double log_norm_B(double k, double h, double beta) {
    return norm_B(k, h, beta).log_magnitude;
}

// Moment function G(lambda,beta) = E[u^{2k}] under f_{k,h,beta}; depends on
// (k,h) only through lambda. Equals (lambda/beta) gamma(lambda+1,beta)/gamma(lambda,beta),
// with limits G(lambda,0) = lambda/(lambda+1) and G ~ lambda/beta as beta -> inf.
inline double moment_G(double lambda, double beta) {
    if (!(lambda > 0.0)) throw domain_error("moment_G: lambda must be > 0");
    if (!(beta >= 0.0)) throw domain_error("moment_G: beta must be >= 0");
    if (beta == 0.0) return lambda / (lambda + 1.0);
    if (beta < 0.5) {
        // G = S(lambda+1,beta)/S(lambda,beta) with S the alternating series.
        auto S = [](double a, double x) {
            double fact_term = 1.0;  // (-x)^n / n!
            double sum = 1.0 / a;
            for (int n = 1; n < 200; ++n) {
                fact_term *= -x / n;
                double t = fact_term / (a + n);
                sum += t;
                if (std::abs(t) < 1e-18 * std::abs(sum)) break;
            }
            return sum;
        };
        return S(lambda + 1.0, beta) / S(lambda, beta);
    }
    double log_ratio = log_reg_lower_inc_gamma(lambda + 1.0, beta) -
                       log_reg_lower_inc_gamma(lambda, beta);
    return (lambda / beta) * std::exp(log_ratio);
}

}  // namespace normform
