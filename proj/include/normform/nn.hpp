#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "normform/evidence.hpp"
#include "normform/model.hpp"
#include "normform/quadrature.hpp"
#include "normform/rng.hpp"
#include "normform/special.hpp"
#include "normform/util.hpp"

// One-layer tanh regression worked example: y ~ N(theta1 tanh(theta2 x), 1)
// on [0,1]^2 with true parameter (0,0). The map
//   xi1 = theta1,  xi2 = theta2 sqrt(K0(theta2)/2),  K0(t) = int tanh^2(tx)/t^2 dx
// takes the KL divergence to the normal form xi1^2 xi2^2. This module holds
// the data simulation, the transform, CAVI in both coordinate systems, the
// centered log-likelihood-ratio process W_n, and the glue that feeds the
// evidence decomposition check.

namespace normform::nn {

// ---- data --------------------------------------------------------------------

struct NnDataset {
    std::vector<double> x;
    std::vector<double> y;
    std::uint64_t seed = 0;

    std::size_t size() const { return x.size(); }
};

inline NnDataset simulate(std::size_t n, std::uint64_t seed) {
    if (n < 1) throw domain_error("nn::simulate: n must be >= 1");
    NnDataset d;
    d.seed = seed;
    d.x.reserve(n);
    d.y.reserve(n);
    Rng rng = Rng::stream(seed, 0xD5EA5E7ULL);
    for (std::size_t i = 0; i < n; ++i) d.x.push_back(rng.uniform());
    for (std::size_t i = 0; i < n; ++i) d.y.push_back(rng.normal());
    return d;
}

// Binary cache: "NNDS" magic, u32 version, u64 n, u64 seed, x then y columns.
inline void save_dataset(const NnDataset& d, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw domain_error("nn::save_dataset: cannot open " + path);
    const char magic[4] = {'N', 'N', 'D', 'S'};
    std::uint32_t version = 1;
    std::uint64_t n = d.size(), seed = d.seed;
    out.write(magic, 4);
    out.write(reinterpret_cast<const char*>(&version), sizeof version);
    out.write(reinterpret_cast<const char*>(&n), sizeof n);
    out.write(reinterpret_cast<const char*>(&seed), sizeof seed);
    out.write(reinterpret_cast<const char*>(d.x.data()), std::streamsize(n * sizeof(double)));
    out.write(reinterpret_cast<const char*>(d.y.data()), std::streamsize(n * sizeof(double)));
    if (!out) throw numeric_error("nn::save_dataset: write failed");
}

inline NnDataset load_dataset(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw domain_error("nn::load_dataset: cannot open " + path);
    char magic[4];
    std::uint32_t version = 0;
    std::uint64_t n = 0, seed = 0;
    in.read(magic, 4);
    in.read(reinterpret_cast<char*>(&version), sizeof version);
    in.read(reinterpret_cast<char*>(&n), sizeof n);
    in.read(reinterpret_cast<char*>(&seed), sizeof seed);
    if (!in || std::memcmp(magic, "NNDS", 4) != 0)
        throw domain_error("nn::load_dataset: bad header in " + path);
    if (version != 1) throw domain_error("nn::load_dataset: unsupported format version");
    if (n == 0 || n > (1ULL << 32)) throw domain_error("nn::load_dataset: implausible n");
    NnDataset d;
    d.seed = seed;
    d.x.resize(n);
    d.y.resize(n);
    in.read(reinterpret_cast<char*>(d.x.data()), std::streamsize(n * sizeof(double)));
    in.read(reinterpret_cast<char*>(d.y.data()), std::streamsize(n * sizeof(double)));
    if (!in) throw domain_error("nn::load_dataset: truncated file");
    return d;
}

// ---- K0 and the normalizing transform ----------------------------------------

// K0(t) = int_0^1 tanh^2(tx)/t^2 dx = (1 - tanh(t)/t)/t^2, with the Taylor
// series taking over below t = 0.05 where the closed form cancels.
inline double K0(double t) {
    t = std::abs(t);  // even function
    double t2 = t * t;
    if (t < 0.05) {
        return 1.0 / 3.0 +
               t2 * (-2.0 / 15.0 +
                     t2 * (17.0 / 315.0 + t2 * (-62.0 / 2835.0 + t2 * (1382.0 / 155925.0))));
    }
    return (1.0 - std::tanh(t) / t) / t2;
}

inline double K0_prime(double t) {
    double t2 = t * t;
    if (std::abs(t) < 0.05) {
        return t * (-4.0 / 15.0 +
                    t2 * (68.0 / 315.0 + t2 * (-372.0 / 2835.0 + t2 * (11056.0 / 155925.0))));
    }
    double th = std::tanh(t);
    double sech2 = 1.0 - th * th;
    return (th - t * sech2) / (t2 * t2) - 2.0 * (1.0 - th / t) / (t2 * t);
}

inline double g_transform(double theta2) {
    if (!(theta2 >= 0.0 && theta2 <= 1.0)) throw domain_error("g_transform: theta2 outside [0,1]");
    return theta2 * std::sqrt(K0(theta2) / 2.0);
}

inline double g_prime(double theta2) {
    double k0 = K0(theta2);
    return std::sqrt(k0 / 2.0) * (1.0 + theta2 * K0_prime(theta2) / (2.0 * k0));
}

inline double g_upper() {  // g(1)
    static const double v = g_transform(1.0);
    return v;
}

inline double g_inverse(double xi2) {
    const double top = g_upper();
    if (!(xi2 >= -1e-15 && xi2 <= top * (1.0 + 1e-12)))
        throw domain_error("g_inverse: xi2 outside [0, g(1)]");
    if (xi2 <= 0.0) return 0.0;
    if (xi2 >= top) return 1.0;
    double lo = 0.0, hi = 1.0;
    for (int i = 0; i < 100; ++i) {
        double mid = 0.5 * (lo + hi);
        (g_transform(mid) < xi2 ? lo : hi) = mid;
    }
    return 0.5 * (lo + hi);
}

// Jacobian of the inverse map, J(xi2) = 1/g'(g^{-1}(xi2)).
inline double jacobian(double xi2) { return 1.0 / g_prime(g_inverse(xi2)); }

// F(x; t) = tanh(t x)/t with the series limit x at t = 0.
inline double F_ratio(double x, double t) {
    double u = t * x;
    if (std::abs(u) < 1e-6) return x * (1.0 - u * u / 3.0);
    return std::tanh(u) / t;
}

// ---- W_n process ---------------------------------------------------------------

// Centered per-observation terms in the transformed coordinates:
//   Ztilde_i = (1/2) xi1 t F^2(X_i;t) - Y_i F(X_i;t) - (1/2) xi1 t K0(t),
// t = g^{-1}(xi2); the last term centers the first so E* Ztilde_i = 0.
// W_n(xi) = n^{-1/2} sum_i Ztilde_i.
inline double wn_process(const NnDataset& data, double xi1, double xi2) {
    const double t = g_inverse(xi2);
    const double k0 = K0(t);
    const std::size_t n = data.size();
    KahanSum s;
    for (std::size_t i = 0; i < n; ++i) {
        double f = F_ratio(data.x[i], t);
        s.add(0.5 * xi1 * t * (f * f - k0) - data.y[i] * f);
    }
    return s.value() / std::sqrt(static_cast<double>(n));
}

// ---- decomposition-check glue ---------------------------------------------------

// The transformed domain is [0,1] x [0, g(1)]; rescaling xi2' = xi2/g(1)
// yields the k=(1,1), h=(0,0) model on the unit cube with effective sample
// size n g(1)^2 and W-process scaled by theta2/g(theta2). W is linear in xi1
// at fixed xi2', so per-xi2' coefficients are cached; the LHS quadrature then
// costs one data sweep per outer node.
struct Theorem23Problem {
    NormalForm model;      // k=(1,1), h=(0,0)
    double n_effective = 0.0;
    std::function<double(std::span<const double>)> wn;
};

inline Theorem23Problem theorem23_problem(const NnDataset& data) {
    Theorem23Problem prob;
    prob.model = make_model({1, 1}, {0.0, 0.0});
    const double top = g_upper();
    const double n = static_cast<double>(data.size());
    prob.n_effective = n * top * top;

    struct Coef {
        double p, q;
    };
    auto cache = std::make_shared<std::unordered_map<double, Coef>>();
    auto dataset = std::make_shared<NnDataset>(data);
    prob.wn = [cache, dataset, top, n](std::span<const double> xi) {
        double xi2s = xi[1];
        auto it = cache->find(xi2s);
        Coef c;
        if (it != cache->end()) {
            c = it->second;
        } else {
            double t = g_inverse(top * xi2s);
            double k0 = K0(t);
            double ratio = t > 1e-12 ? t / g_transform(t) : std::sqrt(2.0 / K0(0.0));
            KahanSum sp, sq;
            for (std::size_t i = 0; i < dataset->size(); ++i) {
                double f = F_ratio(dataset->x[i], t);
                sp.add(0.5 * t * (f * f - k0));
                sq.add(dataset->y[i] * f);
            }
            double root_n = std::sqrt(n);
            c = Coef{ratio * sp.value() / root_n, ratio * sq.value() / root_n};
            cache->emplace(xi2s, c);
        }
        return xi[0] * c.p - c.q;
    };
    return prob;
}

// ---- truncated-normal moments (error-function representation) -------------------

namespace detail {

// log of the upper-tail probability Q(x) of a standard normal.
inline double log_normal_q(double x) {
    if (x < 8.0) {
        double q = 0.5 * std::erfc(x * 0.7071067811865475244);
        if (q > 0.0) return std::log(q);
    }
    // Continued fraction Q(x) = phi(x) / (x + 1/(x + 2/(x + 3/(...))))
    double cf = 0.0;
    for (int k = 60; k >= 1; --k) cf = static_cast<double>(k) / (x + cf);
    cf = x + cf;
    return -0.5 * x * x - 0.91893853320467274178 - std::log(cf);
}

inline double log_phi(double x) { return -0.5 * x * x - 0.91893853320467274178; }

struct TruncNormalMoments {
    double m1 = 0.0;   // E X
    double m2 = 0.0;   // E X^2
    double log_mass = 0.0;  // log P(X0 in [0,1]) for X0 ~ N(mu, sigma^2)
};

// Moments of N(mu, sigma^2) truncated to [0,1], stable far into either tail.
inline TruncNormalMoments trunc_normal_01(double mu, double sigma) {
    double a = (0.0 - mu) / sigma;
    double b = (1.0 - mu) / sigma;
    double log_z;
    if (a > 0.0) {  // both tails right of the mean
        double la = log_normal_q(a), lb = log_normal_q(b);
        log_z = la + std::log1p(-std::exp(lb - la));
    } else if (b < 0.0) {
        double la = log_normal_q(-a), lb = log_normal_q(-b);
        log_z = lb + std::log1p(-std::exp(la - lb));
    } else {
        double z = 0.5 * (std::erf(b * 0.7071067811865475244) -
                          std::erf(a * 0.7071067811865475244));
        log_z = std::log(z);
    }
    double ra = std::exp(log_phi(a) - log_z);  // phi(a)/Z
    double rb = std::exp(log_phi(b) - log_z);
    double ew = ra - rb;
    double ew2 = 1.0 + a * ra - b * rb;
    TruncNormalMoments out;
    out.m1 = mu + sigma * ew;
    out.m2 = mu * mu + 2.0 * mu * sigma * ew + sigma * sigma * ew2;
    out.log_mass = log_z;
    // Deep-tail roundoff can push m2 a hair under m1^2.
    if (out.m2 < out.m1 * out.m1) out.m2 = out.m1 * out.m1;
    return out;
}

}  // namespace detail

// ---- CAVI, original coordinates -------------------------------------------------

struct NnOriginalIterate {
    int t = 0;
    double m1 = 0.0, m2 = 0.0, K1 = 0.0, K2 = 0.0, elbo = 0.0;
};

struct NnOriginalTrace {
    std::vector<NnOriginalIterate> iterates;
    bool converged = false;
    bool monotone_violation = false;
    int iterations = 0;
    double elbo_final = 0.0;
};

namespace detail {

// Fixed composite K15 grid on [0,1] for the theta2 quadratures; integrands
// are smooth with exponents of a few tens, 48 panels are ample.
struct Theta2Grid {
    std::vector<double> node, weight;
    Theta2Grid() {
        const int panels = 48;
        for (int p = 0; p < panels; ++p) {
            double a = static_cast<double>(p) / panels, b = static_cast<double>(p + 1) / panels;
            double c = 0.5 * (a + b), hw = 0.5 * (b - a);
            node.push_back(c);
            weight.push_back(normform::detail::gk15_nodes[0].wk * hw);
            for (int i = 1; i < 8; ++i) {
                double dx = hw * normform::detail::gk15_nodes[i].x;
                double w = normform::detail::gk15_nodes[i].wk * hw;
                node.push_back(c - dx);
                weight.push_back(w);
                node.push_back(c + dx);
                weight.push_back(w);
            }
        }
    }
};

}  // namespace detail

// Alternating exact updates on the exact likelihood:
//   q1 ~ truncated Gaussian on [0,1] from the (K1,K2) moments of q2,
//   q2 ~ exp{ n m1 T1(theta2) - (n m2/2) T2(theta2) } on [0,1],
// all theta2 moments by quadrature on a fixed node grid. Reported ELBO is
// E_q log p(Y|X,theta) + H(q1) + H(q2), comparable to the log evidence.
inline NnOriginalTrace cavi_original(const NnDataset& data, double tol = 1e-10,
                                     int max_iter = 200) {
    if (data.size() == 0) throw domain_error("nn::cavi_original: empty dataset");
    const double n = static_cast<double>(data.size());
    static const detail::Theta2Grid grid;
    const std::size_t nn = grid.node.size();

    // T1, T2 at the grid nodes: one data sweep per node.
    std::vector<double> t1(nn), t2(nn);
    double syy = 0.0;
    for (double yv : data.y) syy += yv * yv;
    for (std::size_t j = 0; j < nn; ++j) {
        double th = grid.node[j];
        KahanSum s1, s2;
        for (std::size_t i = 0; i < data.size(); ++i) {
            double tv = std::tanh(th * data.x[i]);
            s1.add(data.y[i] * tv);
            s2.add(tv * tv);
        }
        t1[j] = s1.value() / n;
        t2[j] = s2.value() / n;
    }

    // q2 moments for exponent coefficients (c1, c2): weights ~ exp(c1 t1 - c2 t2).
    auto q2_pass = [&](double c1, double c2, double& K1, double& K2, double& log_z2) {
        double emax = -std::numeric_limits<double>::infinity();
        std::vector<double> e(nn);
        for (std::size_t j = 0; j < nn; ++j) {
            e[j] = c1 * t1[j] - c2 * t2[j];
            emax = std::max(emax, e[j]);
        }
        KahanSum s0, s1, s2;
        for (std::size_t j = 0; j < nn; ++j) {
            double w = grid.weight[j] * std::exp(e[j] - emax);
            s0.add(w);
            s1.add(w * t1[j]);
            s2.add(w * t2[j]);
        }
        K1 = s1.value() / s0.value();
        K2 = s2.value() / s0.value();
        log_z2 = emax + std::log(s0.value());
    };

    NnOriginalTrace trace;
    double K1, K2, log_z2;
    q2_pass(0.0, 0.0, K1, K2, log_z2);  // q2 = prior
    double m1 = 0.0, m2 = 0.0;
    double prev_elbo = -std::numeric_limits<double>::infinity();

    for (int t = 1; t <= max_iter; ++t) {
        double K1_prev = K1, K2_prev = K2;
        // q1 update from (K1_prev, K2_prev)
        double mu = K1_prev / K2_prev;
        double sigma = 1.0 / std::sqrt(n * K2_prev);
        auto mom = detail::trunc_normal_01(mu, sigma);
        double m1_new = mom.m1, m2_new = mom.m2;
        double log_z1 = std::log(sigma) + 0.91893853320467274178 + mom.log_mass;

        // q2 update from (m1_new, m2_new)
        q2_pass(n * m1_new, 0.5 * n * m2_new, K1, K2, log_z2);

        double delta = std::max(std::max(std::abs(m1_new - m1), std::abs(m2_new - m2)),
                                std::max(std::abs(K1 - K1_prev), std::abs(K2 - K2_prev)));
        m1 = m1_new;
        m2 = m2_new;

        double i_p = -0.5 * n * std::log(2.0 * 3.14159265358979323846) - 0.5 * syy +
                     n * m1 * K1 - 0.5 * n * m2 * K2;
        double h1 = log_z1 + 0.5 * n * K2_prev * (m2 - 2.0 * m1 * mu + mu * mu);
        double h2 = log_z2 + 0.5 * n * m2 * K2 - n * m1 * K1;
        double elbo = i_p + h1 + h2;
        trace.iterates.push_back({t, m1, m2, K1, K2, elbo});
        if (elbo < prev_elbo - 1e-8) trace.monotone_violation = true;
        prev_elbo = elbo;
        trace.iterations = t;
        if (delta < tol && t > 1) {
            trace.converged = true;
            break;
        }
    }
    trace.elbo_final = prev_elbo;
    return trace;
}

// ---- CAVI, transformed coordinates ----------------------------------------------

struct NnTransformedIterate {
    int t = 0;
    double F1 = 0.0, F2 = 0.0, elbo = 0.0;
};

struct NnTransformedTrace {
    std::vector<NnTransformedIterate> iterates;
    bool converged = false;
    bool monotone_violation = false;
    int iterations = 0;
    double F1_star = 0.0, F2_star = 0.0;
    double elbo_final = 0.0;
};

inline double default_theta_sq_map(double theta) {
    double g = g_transform(theta);
    return g * g;
}

// CAVI on the concentrated form gamma ~ exp(-n xi1^2 xi2^2 + log J(xi2)) over
// [0,1] x [0, g(1)]. The xi1 arm is f_{1,0,nF2} (closed form); the xi2 arm is
// integrated in theta coordinates where the Jacobian cancels:
//   C2 = int_0^1 exp(-n F1 psi(theta)) dtheta,  psi = g^2.
// Per-iteration ELBO is the sequential Gibbs value
//   -n F1 F2 + b1 F1 + b2 F2 + log C1 + log C2,
// which telescopes to n F1* F2* + log C1* + log C2* at the fixed point.
// `theta_sq_map` defaults to the tanh-network psi; psi(theta) = theta^2
// reproduces the plain symmetric lambda = 1/2 system (J == 1).
inline NnTransformedTrace cavi_transformed(
    double n, double tol = 1e-10, int max_iter = 2000,
    const std::function<double(double)>& theta_sq_map = default_theta_sq_map) {
    if (!(n >= 1.0)) throw domain_error("nn::cavi_transformed: n must be >= 1");

    auto arm2_pass = [&](double b2, double& F2, double& log_c2) {
        auto f0 = [&](double th) {
            double e = b2 * theta_sq_map(th);
            return e > 745.0 ? 0.0 : std::exp(-e);
        };
        auto f1 = [&](double th) {
            double psi = theta_sq_map(th);
            double e = b2 * psi;
            return e > 745.0 ? 0.0 : psi * std::exp(-e);
        };
        auto br = edge_breaks(0.0, 1.0, 8);
        QuadResult i0 = integrate_1d(f0, 0.0, 1.0, 1e-14, br);
        i0 = integrate_1d(f0, 0.0, 1.0, std::max(i0.value, 1e-300) * 1e-12, br);
        QuadResult i1 = integrate_1d(f1, 0.0, 1.0, std::max(i0.value, 1e-300) * 1e-12, br);
        F2 = i1.value / i0.value;
        log_c2 = std::log(i0.value);
    };

    NnTransformedTrace trace;
    double F2, log_c2_prior;
    arm2_pass(0.0, F2, log_c2_prior);  // q2 = image of the uniform prior
    double F1 = 0.0;
    double prev_elbo = -std::numeric_limits<double>::infinity();

    for (int t = 1; t <= max_iter; ++t) {
        double b1 = n * F2;  // parameterizes q1
        double F1_new = moment_G(0.5, b1);
        double log_c1 = log_norm_B(1, 0.0, b1);
        double b2 = n * F1_new;
        double F2_new, log_c2;
        arm2_pass(b2, F2_new, log_c2);

        double delta = std::max(std::abs(F1_new - F1), std::abs(F2_new - F2));
        F1 = F1_new;
        F2 = F2_new;

        double elbo = -n * F1 * F2 + b1 * F1 + b2 * F2 + log_c1 + log_c2;
        trace.iterates.push_back({t, F1, F2, elbo});
        if (elbo < prev_elbo - 1e-8) trace.monotone_violation = true;
        prev_elbo = elbo;
        trace.iterations = t;
        if (delta < tol && t > 1) {
            trace.converged = true;
            break;
        }
    }
    trace.F1_star = F1;
    trace.F2_star = F2;
    trace.elbo_final = prev_elbo;
    return trace;
}

// ---- prior-factor registration ---------------------------------------------------

// Registers the rescaled transformed prior as a named b field: on the unit
// cube, the image of the uniform theta prior has xi2'-density
// g(1) J(g(1) xi2'), a bounded positive analytic factor.
inline void register_b_fields() {
    const double top = g_upper();
    double lower = std::numeric_limits<double>::infinity();
    for (int i = 0; i <= 200; ++i)
        lower = std::min(lower, top * jacobian(top * (static_cast<double>(i) / 200.0)));
    register_b_field(BField{
        "nn_jacobian",
        [top](std::span<const double> xi) { return top * jacobian(top * xi[1]); },
        lower * 0.999});
}

}  // namespace normform::nn
