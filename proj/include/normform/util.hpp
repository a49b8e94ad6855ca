#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace normform {

// Thrown on invalid arguments / malformed models (CLI maps this to exit 2).
class domain_error : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// Thrown when a model is structurally outside what an operation supports
// (e.g. a closed form that needs b == 1). CLI maps this to exit 2 as well.
class unsupported_model : public domain_error {
public:
    using domain_error::domain_error;
};

// Thrown on numerical failure: non-convergence, unreachable tolerance,
// ill-conditioned coefficient sets (CLI maps this to exit 3).
class numeric_error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// A positive quantity stored as its natural log. Evidence values reach
// n^{-lambda} e^{-beta} scales at n up to 1e8, so everything downstream of
// the special functions works on this representation.
struct LogValue {
    double log_magnitude = -std::numeric_limits<double>::infinity();

    static LogValue from_value(double v) {
        if (v < 0.0) throw domain_error("LogValue: negative magnitude");
        return LogValue{std::log(v)};
    }
    static LogValue from_log(double lg) { return LogValue{lg}; }
    double value() const { return std::exp(log_magnitude); }
};

inline LogValue operator*(LogValue a, LogValue b) {
    return LogValue{a.log_magnitude + b.log_magnitude};
}
inline LogValue operator/(LogValue a, LogValue b) {
    return LogValue{a.log_magnitude - b.log_magnitude};
}

// Compensated accumulator for long positive sums (quadrature, MC blocks).
class KahanSum {
public:
    void add(double x) {
        double y = x - c_;
        double t = s_ + y;
        c_ = (t - s_) - y;
        s_ = t;
    }
    double value() const { return s_; }

private:
    double s_ = 0.0;
    double c_ = 0.0;
};

struct LinearFit {
    std::vector<double> coef;  // one per column of the design matrix
    double r2 = 0.0;
    std::vector<double> residuals;
};

// Ordinary least squares via normal equations in long double; the designs
// here are tiny (2-3 columns, <= a few dozen rows).
inline LinearFit least_squares(const std::vector<std::vector<double>>& cols,
                               const std::vector<double>& y) {
    const std::size_t p = cols.size();
    const std::size_t n = y.size();
    if (p == 0 || n < p) throw domain_error("least_squares: degenerate system");
    for (const auto& c : cols)
        if (c.size() != n) throw domain_error("least_squares: ragged design");

    std::vector<long double> ata(p * p, 0.0L), aty(p, 0.0L);
    for (std::size_t i = 0; i < p; ++i) {
        for (std::size_t j = 0; j < p; ++j)
            for (std::size_t r = 0; r < n; ++r)
                ata[i * p + j] += static_cast<long double>(cols[i][r]) * cols[j][r];
        for (std::size_t r = 0; r < n; ++r)
            aty[i] += static_cast<long double>(cols[i][r]) * y[r];
    }
    // Gaussian elimination with partial pivoting.
    std::vector<std::size_t> piv(p);
    for (std::size_t i = 0; i < p; ++i) piv[i] = i;
    for (std::size_t c = 0; c < p; ++c) {
        std::size_t best = c;
        for (std::size_t r = c + 1; r < p; ++r)
            if (std::abs((double)ata[r * p + c]) > std::abs((double)ata[best * p + c])) best = r;
        if (ata[best * p + c] == 0.0L) throw numeric_error("least_squares: singular design");
        if (best != c) {
            for (std::size_t j = 0; j < p; ++j) std::swap(ata[c * p + j], ata[best * p + j]);
            std::swap(aty[c], aty[best]);
        }
        for (std::size_t r = c + 1; r < p; ++r) {
            long double f = ata[r * p + c] / ata[c * p + c];
            for (std::size_t j = c; j < p; ++j) ata[r * p + j] -= f * ata[c * p + j];
            aty[r] -= f * aty[c];
        }
    }
    std::vector<long double> beta(p, 0.0L);
    for (std::size_t c = p; c-- > 0;) {
        long double s = aty[c];
        for (std::size_t j = c + 1; j < p; ++j) s -= ata[c * p + j] * beta[j];
        beta[c] = s / ata[c * p + c];
    }

    LinearFit fit;
    fit.coef.resize(p);
    for (std::size_t i = 0; i < p; ++i) fit.coef[i] = static_cast<double>(beta[i]);
    fit.residuals.resize(n);
    double ybar = 0.0;
    for (double v : y) ybar += v;
    ybar /= static_cast<double>(n);
    double ss_res = 0.0, ss_tot = 0.0;
    for (std::size_t r = 0; r < n; ++r) {
        double pred = 0.0;
        for (std::size_t i = 0; i < p; ++i) pred += fit.coef[i] * cols[i][r];
        fit.residuals[r] = y[r] - pred;
        ss_res += fit.residuals[r] * fit.residuals[r];
        ss_tot += (y[r] - ybar) * (y[r] - ybar);
    }
    fit.r2 = ss_tot > 0.0 ? 1.0 - ss_res / ss_tot : 1.0;
    return fit;
}

// Bisection for a continuous function with a sign change on [lo, hi].
template <class F>
double bisect(F&& f, double lo, double hi, int iters = 200) {
    double flo = f(lo);
    double fhi = f(hi);
    if (flo == 0.0) return lo;
    if (fhi == 0.0) return hi;
    if ((flo > 0.0) == (fhi > 0.0))
        throw numeric_error("bisect: no sign change on bracket");
    for (int i = 0; i < iters; ++i) {
        double mid = 0.5 * (lo + hi);
        if (mid == lo || mid == hi) break;
        double fm = f(mid);
        if (fm == 0.0) return mid;
        if ((fm > 0.0) == (flo > 0.0)) {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
    }
    return 0.5 * (lo + hi);
}

}  // namespace normform
