#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <queue>
#include <span>
#include <vector>

#include "normform/util.hpp"

// Adaptive Gauss-Kronrod (G7/K15) integration. Evidence integrands plateau
// along the coordinate hyperplanes xi_j = 0, so intervals can be seeded
// geometrically toward an edge before refinement takes over.

namespace normform {

struct QuadResult {
    double value = 0.0;
    double error = 0.0;
    std::size_t evals = 0;
    bool converged = true;
};

namespace detail {

// Kronrod abscissae (positive half) with Kronrod and Gauss weights.
// Gauss weight 0 marks Kronrod-only nodes.
struct GkNode {
    double x, wk, wg;
};
inline constexpr GkNode gk15_nodes[8] = {
    {0.000000000000000000, 0.209482141084727828, 0.417959183673469388},
    {0.207784955007898468, 0.204432940075298892, 0.0},
    {0.405845151377397167, 0.190350578064785410, 0.381830050505118945},
    {0.586087235467691130, 0.169004726639267903, 0.0},
    {0.741531185599394440, 0.140653259715525919, 0.279705391489276668},
    {0.864864423359769073, 0.104790010322250184, 0.0},
    {0.949107912342758525, 0.063092092629978553, 0.129484966168869693},
    {0.991455371120812639, 0.022935322010529225, 0.0},
};

template <class F>
inline void gk15(F&& f, double a, double b, double& value, double& error) {
    const double c = 0.5 * (a + b);
    const double hw = 0.5 * (b - a);
    double k = 0.0, g = 0.0;
    {
        double fc = f(c);
        k += gk15_nodes[0].wk * fc;
        g += gk15_nodes[0].wg * fc;
    }
    for (int i = 1; i < 8; ++i) {
        double dx = hw * gk15_nodes[i].x;
        double fs = f(c - dx) + f(c + dx);
        k += gk15_nodes[i].wk * fs;
        g += gk15_nodes[i].wg * fs;
    }
    value = k * hw;
    double diff = std::abs(k - g) * hw;
    // QUADPACK-style sharpened estimate.
    error = diff;
    if (diff > 0.0) {
        double e = 200.0 * diff;
        error = std::min(diff, std::sqrt(e) * e);
        if (!(error > 0.0)) error = diff;
    }
}

}  // namespace detail

// Geometric breakpoints accumulating toward `edge` (must be an endpoint of
// [a,b]); `levels` decades starting at width*1e-`levels`.
inline std::vector<double> edge_breaks(double a, double b, int levels = 8) {
    std::vector<double> out;
    double w = b - a;
    for (int i = levels; i >= 1; --i) out.push_back(a + w * std::pow(10.0, -i));
    return out;
}

template <class F>
QuadResult integrate_1d(F&& f, double a, double b, double abs_tol,
                        std::span<const double> breaks = {},
                        std::size_t max_intervals = 20000) {
    QuadResult res;
    if (!(b > a)) return res;

    struct Seg {
        double a, b, value, error;
        bool operator<(const Seg& o) const { return error < o.error; }
    };
    std::priority_queue<Seg> heap;

    double total = 0.0, total_err = 0.0;
    std::size_t evals = 0;
    auto push = [&](double lo, double hi) {
        Seg s{lo, hi, 0.0, 0.0};
        detail::gk15(f, lo, hi, s.value, s.error);
        evals += 15;
        total += s.value;
        total_err += s.error;
        heap.push(s);
    };

    double prev = a;
    for (double x : breaks) {
        if (x > prev && x < b) {
            push(prev, x);
            prev = x;
        }
    }
    push(prev, b);

    std::size_t n_int = heap.size();
    while (total_err > abs_tol && n_int < max_intervals) {
        Seg worst = heap.top();
        heap.pop();
        total -= worst.value;
        total_err -= worst.error;
        double mid = 0.5 * (worst.a + worst.b);
        if (mid <= worst.a || mid >= worst.b) {  // interval exhausted by fp resolution
            total += worst.value;
            total_err += worst.error;
            break;
        }
        push(worst.a, mid);
        push(mid, worst.b);
        ++n_int;
    }

    // Recompute totals from the heap with compensation; the incremental
    // running totals above only steer refinement.
    KahanSum sv, se;
    while (!heap.empty()) {
        sv.add(heap.top().value);
        se.add(heap.top().error);
        heap.pop();
    }
    res.value = sv.value();
    res.error = se.value();
    res.evals = evals;
    res.converged = res.error <= abs_tol * 1.0000001 || res.error <= std::abs(res.value) * 1e-14;
    return res;
}

// Nested tensor integration over a box, d <= 3. The innermost axis is
// integrated for each outer node, with edge-seeded intervals on every axis.
// Tolerance tiers: inner levels run at a small fraction of abs_tol so their
// noise stays below what the outer error estimator can resolve, and interval
// budgets are capped per level; accuracy beyond the cap is reported honestly
// through `error`.
inline QuadResult integrate_box(const std::function<double(std::span<const double>)>& f,
                                std::span<const double> lo, std::span<const double> hi,
                                double abs_tol, int edge_levels = 8) {
    const std::size_t d = lo.size();
    if (d == 0 || d > 3 || hi.size() != d)
        throw domain_error("integrate_box: dimension must be 1..3");

    // index 0 = innermost axis
    static constexpr double tier_frac[3][3] = {
        {0.9, 0.0, 0.0}, {0.04, 0.8, 0.0}, {0.01, 0.08, 0.7}};
    static constexpr std::size_t tier_cap[3] = {2000, 700, 500};
    const double* frac = tier_frac[d - 1];

    std::vector<double> point(d, 0.0);
    std::size_t evals = 0;
    bool all_ok = true;
    double outer_err = 0.0;

    std::function<double(std::size_t)> integrate_axis = [&](std::size_t axis) -> double {
        auto breaks = edge_breaks(lo[axis], hi[axis], axis == d - 1 ? edge_levels : 5);
        auto g = [&](double x) -> double {
            point[axis] = x;
            if (axis == 0) {
                ++evals;
                return f(point);
            }
            return integrate_axis(axis - 1);
        };
        QuadResult r =
            integrate_1d(g, lo[axis], hi[axis], abs_tol * frac[axis], breaks, tier_cap[axis]);
        if (axis == d - 1) {
            outer_err = r.error;
            if (!r.converged) all_ok = false;
        } else if (r.error > 20.0 * abs_tol * frac[axis] &&
                   r.error > 1e-13 * std::abs(r.value)) {
            all_ok = false;  // inner level grossly over budget
        }
        return r.value;
    };

    QuadResult out;
    out.value = integrate_axis(d - 1);
    out.error = outer_err + (d > 1 ? abs_tol * (1.0 - frac[d - 1]) : 0.0);
    out.evals = evals;
    out.converged = all_ok && out.error <= abs_tol * 1.2;
    return out;
}

}  // namespace normform
