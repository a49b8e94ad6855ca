#pragma once

#include <cmath>
#include <optional>
#include <span>
#include <vector>

#include "normform/model.hpp"
#include "normform/special.hpp"
#include "normform/util.hpp"

// Mean-field CAVI for the 2-D normal form. The iteration lives entirely in
// the scalar pair (mu1, mu2):
//   mu1 <- G(lambda2, n mu2),  mu2 <- G(lambda1, n mu1)   (sequential),
// the arms being f_{k_i, h_i, n mu_i}. Fixed points, their n-orders, the
// ELBO at an iterate, and the constraint equation z G(alpha, z) = beta.

namespace normform {

struct CaviState {
    NormalForm model;  // 2-D
    double n = 1.0;
    double mu1 = 0.0;
    double mu2 = 0.0;

    double lambda1() const { return (model.h[0] + 1.0) / (2.0 * model.k[0]); }
    double lambda2() const { return (model.h[1] + 1.0) / (2.0 * model.k[1]); }
};

inline CaviState make_cavi_state(const NormalForm& model, double n, double mu1, double mu2) {
    model.validate();
    if (model.dim() != 2) throw domain_error("cavi: model must be 2-D");
    if (model.k[0] == 0 || model.k[1] == 0)
        throw domain_error("cavi: both coordinates must be singular (k_j > 0)");
    if (!(n > 0.0)) throw domain_error("cavi: n must be > 0");
    if (!(mu1 >= 0.0) || !(mu2 >= 0.0)) throw domain_error("cavi: mu must be >= 0");
    return CaviState{model, n, mu1, mu2};
}

// One full sweep: mu1 first, then mu2 using the fresh mu1.
inline CaviState cavi_step(const CaviState& s) {
    CaviState out = s;
    out.mu1 = moment_G(s.lambda2(), s.n * s.mu2);
    out.mu2 = moment_G(s.lambda1(), s.n * out.mu1);
    return out;
}

// ELBO of the product state (f_{k1,h1,n mu1}, f_{k2,h2,n mu2}):
//   -n G1 G2 + n mu1 G1 + n mu2 G2 + log B1 + log B2 + log(1+h1) + log(1+h2),
// G_i = G(lambda_i, n mu_i). Identical functional to elbo_product; kept as
// the direct 2-D evaluation.
inline double elbo_at(const CaviState& s) {
    if (!s.model.has_unit_b())
        throw unsupported_model("elbo_at: closed form requires b == 1");
    double b1 = s.n * s.mu1, b2 = s.n * s.mu2;
    double G1 = moment_G(s.lambda1(), b1);
    double G2 = moment_G(s.lambda2(), b2);
    return -s.n * G1 * G2 + b1 * G1 + b2 * G2 + log_norm_B(s.model.k[0], s.model.h[0], b1) +
           log_norm_B(s.model.k[1], s.model.h[1], b2) + std::log1p(s.model.h[0]) +
           std::log1p(s.model.h[1]);
}

struct CaviIterate {
    int t = 0;
    double mu1 = 0.0, mu2 = 0.0, elbo = 0.0;
};

struct CaviTrace {
    std::vector<CaviIterate> iterates;
    bool converged = false;
    int iterations = 0;
    double mu1_star = 0.0, mu2_star = 0.0;
    bool symmetric = false;
};

namespace detail {

inline bool lambdas_symmetric(const NormalForm& m) {
    // (h1+1) k2 == (h2+1) k1 is exact in doubles for integer-valued h.
    double a = (m.h[0] + 1.0) * m.k[1];
    double b = (m.h[1] + 1.0) * m.k[0];
    return std::abs(a - b) <= 1e-12 * std::max(std::abs(a), std::abs(b));
}

}  // namespace detail

// Fixed point of the CAVI dynamics.
//
// Asymmetric rates: the composed maps contract (plateau slope lambda1/lambda2)
// and plain iteration converges from any start.
//
// Symmetric rates need care: for n beyond ~1e3 the map G(lambda, n x) equals
// lambda/(n x) to machine precision on the whole ridge mu1 mu2 = lambda/n, so
// iteration parks wherever it first lands. The true fixed point is the root
// of G(lambda, n x) = x, a well-conditioned 1-D problem (slope ~ -2), solved
// by bisection on [0, min(lambda/(lambda+1), sqrt(lambda/n))]. The bracket's
// upper end is the sqrt(lambda/n) envelope, so mu* <= sqrt(lambda/n) by
// construction.
inline CaviTrace solve_fixed_point(const NormalForm& model, double n, double tol = 1e-12,
                                   int max_iter = 10000,
                                   std::optional<double> init = std::nullopt) {
    if (!(tol > 0.0)) throw domain_error("solve_fixed_point: tol must be > 0");
    CaviState s = make_cavi_state(model, n, 0.0, init.value_or(0.0));  // validates the model
    double lam1 = s.lambda1(), lam2 = s.lambda2();
    double mu2_0 = init.value_or(lam2 / (2.0 * (lam2 + 1.0)));
    s.mu1 = moment_G(lam2, n * mu2_0);
    s.mu2 = moment_G(lam1, n * s.mu1);  // complete the first sweep

    CaviTrace trace;
    trace.symmetric = detail::lambdas_symmetric(model);
    trace.iterates.push_back({1, s.mu1, s.mu2, elbo_at(s)});
    int t = 1;
    bool reached = false;
    // In the symmetric case the answer comes from the 1-D root below; the
    // coupled sweep only supplies the trace, so cap its length.
    const int iter_cap = trace.symmetric ? std::min(max_iter, 256) : max_iter;
    while (t < iter_cap) {
        CaviState next = cavi_step(s);
        ++t;
        double delta = std::max(std::abs(next.mu1 - s.mu1), std::abs(next.mu2 - s.mu2));
        s = next;
        trace.iterates.push_back({t, s.mu1, s.mu2, elbo_at(s)});
        if (delta < tol) {
            reached = true;
            break;
        }
    }
    trace.iterations = t;
    trace.converged = reached;

    if (trace.symmetric) {
        double lam = lam1;
        double hi = std::min(lam / (lam + 1.0), std::sqrt(lam / n));
        // G(lam, n hi) - hi < 0 in exact arithmetic but only by an e^{-sqrt(lam n)}
        // margin at the sqrt(lam/n) end, which rounding can flip; pad the
        // bracket and clamp the root back to the mathematical bound.
        double root = bisect([&](double x) { return moment_G(lam, n * x) - x; }, 0.0,
                             hi * (1.0 + 1e-6));
        root = std::min(root, hi);
        // The refined root lives in the starred fields only; the iterate
        // sequence stays the literal sweep record (the ELBO is ridge-flat, so
        // the two agree in value even where the sweeps parked elsewhere).
        trace.mu1_star = root;
        trace.mu2_star = root;
        trace.converged = true;
    } else {
        trace.mu1_star = s.mu1;
        trace.mu2_star = s.mu2;
        // mu1* is a value of G(lambda2, .) and mu2* of G(lambda1, .), so the
        // fixed point must land in those ranges.
        if (trace.converged &&
            (trace.mu1_star > lam2 / (lam2 + 1.0) * (1.0 + 1e-10) ||
             trace.mu2_star > lam1 / (lam1 + 1.0) * (1.0 + 1e-10)))
            throw numeric_error("solve_fixed_point: fixed point escaped its range interval");
    }
    return trace;
}

// Root of z G(alpha, z) = beta. z G(alpha, z) increases from 0 to alpha, so a
// solution exists iff alpha > beta (and is unique); otherwise no-solution.
inline std::optional<double> solve_constraint(double alpha, double beta) {
    if (!(alpha > 0.0) || !(beta > 0.0)) throw domain_error("solve_constraint: need alpha, beta > 0");
    if (alpha <= beta) return std::nullopt;
    auto f = [&](double z) { return z * moment_G(alpha, z) - beta; };
    double hi = 1.0;
    while (f(hi) < 0.0) {
        hi *= 2.0;
        if (hi > 1e300) return std::nullopt;
    }
    double root = bisect(f, 0.0, hi);
    if (std::abs(f(root)) > 1e-10 * std::max(1.0, beta))
        throw numeric_error("solve_constraint: bisection residual too large");
    return root;
}

// Orders of the fixed points across an n-grid (3+ decades).
//   symmetric:  sqrt(n) mu*  stabilizes;
//   asymmetric: n mu2* -> c2 with c2 solving z G(lambda2, z) = lambda1, and
//               mu1* -> lambda1 / c2 = G(lambda2, c2).
// Always: n mu1* mu2* stabilizes.
struct OrderRow {
    double n = 0.0, mu1 = 0.0, mu2 = 0.0;
    double n_mu1_mu2 = 0.0;
    double norm1 = 0.0;  // symmetric: sqrt(n) mu*; asymmetric: mu1*
    double norm2 = 0.0;  // symmetric: sqrt(n) mu*; asymmetric: n mu2*
};

struct OrderReport {
    bool symmetric = false;
    std::vector<OrderRow> rows;
    // max/min - 1 over the top two decades of the grid.
    double variation_n_mu1_mu2 = 0.0;
    double variation_norm1 = 0.0;
    double variation_norm2 = 0.0;
    // Asymmetric limits predicted by the constraint equation.
    std::optional<double> c2_predicted;
    std::optional<double> mu1_limit_predicted;

    // All normalized sequences settled within 25% over the top two decades.
    bool stabilized() const {
        return variation_n_mu1_mu2 <= 0.25 && variation_norm1 <= 0.25 &&
               variation_norm2 <= 0.25;
    }
};

inline OrderReport fixed_point_orders(const NormalForm& model, std::span<const double> n_grid,
                                      double tol = 1e-12, int max_iter = 10000) {
    if (n_grid.size() < 3) throw domain_error("fixed_point_orders: need >= 3 grid points");
    if (std::log10(n_grid.back() / n_grid.front()) < 3.0 - 1e-9)
        throw domain_error("fixed_point_orders: grid must span >= 3 decades");
    double lam1 = (model.h[0] + 1.0) / (2.0 * model.k[0]);
    double lam2 = (model.h[1] + 1.0) / (2.0 * model.k[1]);

    OrderReport rep;
    rep.symmetric = detail::lambdas_symmetric(model);
    if (!rep.symmetric) {
        double lo = std::min(lam1, lam2), hi = std::max(lam1, lam2);
        rep.c2_predicted = solve_constraint(hi, lo);
        if (rep.c2_predicted) rep.mu1_limit_predicted = moment_G(hi, *rep.c2_predicted);
    }

    for (double n : n_grid) {
        CaviTrace tr = solve_fixed_point(model, n, tol, max_iter);
        if (!tr.converged) throw numeric_error("fixed_point_orders: non-convergence at n grid point");
        OrderRow row;
        row.n = n;
        row.mu1 = tr.mu1_star;
        row.mu2 = tr.mu2_star;
        row.n_mu1_mu2 = n * tr.mu1_star * tr.mu2_star;
        if (rep.symmetric) {
            row.norm1 = std::sqrt(n) * tr.mu1_star;
            row.norm2 = std::sqrt(n) * tr.mu2_star;
        } else {
            row.norm1 = tr.mu1_star;
            row.norm2 = n * tr.mu2_star;
        }
        rep.rows.push_back(row);
    }

    double top = n_grid.back() / 100.0;
    auto variation = [&](auto proj) {
        double lo = std::numeric_limits<double>::infinity(), hi = 0.0;
        for (const auto& r : rep.rows) {
            if (r.n < top) continue;
            double v = proj(r);
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
        return hi / lo - 1.0;
    };
    rep.variation_n_mu1_mu2 = variation([](const OrderRow& r) { return r.n_mu1_mu2; });
    rep.variation_norm1 = variation([](const OrderRow& r) { return r.norm1; });
    rep.variation_norm2 = variation([](const OrderRow& r) { return r.norm2; });
    return rep;
}

struct SlopeFit {
    double slope = 0.0;
    double intercept = 0.0;
    double r2 = 0.0;
    std::vector<double> grid;
    std::vector<double> elbo;
};

// ELBO at the fixed point regressed on log n over a 4+ decade grid; the slope
// recovers -min(lambda1, lambda2).
inline SlopeFit elbo_slope_fit(const NormalForm& model, std::span<const double> n_grid,
                               double tol = 1e-12, int max_iter = 10000) {
    if (n_grid.size() < 2) throw domain_error("elbo_slope_fit: need >= 2 grid points");
    if (std::log10(n_grid.back() / n_grid.front()) < 4.0 - 1e-9)
        throw domain_error("elbo_slope_fit: grid must span >= 4 decades");
    SlopeFit out;
    std::vector<double> ones, lnn, y;
    for (double n : n_grid) {
        CaviTrace tr = solve_fixed_point(model, n, tol, max_iter);
        if (!tr.converged) throw numeric_error("elbo_slope_fit: non-convergence");
        CaviState st = make_cavi_state(model, n, tr.mu1_star, tr.mu2_star);
        double e = elbo_at(st);
        out.grid.push_back(n);
        out.elbo.push_back(e);
        ones.push_back(1.0);
        lnn.push_back(std::log(n));
        y.push_back(e);
    }
    LinearFit fit = least_squares({ones, lnn}, y);
    out.intercept = fit.coef[0];
    out.slope = fit.coef[1];
    out.r2 = fit.r2;
    return out;
}

}  // namespace normform
