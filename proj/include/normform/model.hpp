#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "normform/special.hpp"
#include "normform/util.hpp"

// Normal-crossing model K(xi) = xi^{2k} on [0,1]^d with prior
// phi(xi) proportional to b(xi) xi^h, plus the RLCT computation and the
// mean-field candidate state built from the f_{k,h,beta} arm family.

namespace normform {

// Optional analytic prior factor. `lower_bound` must certify b >= lower_bound > 0
// on the cube; analyticity itself is the caller's responsibility.
struct BField {
    std::string name;
    std::function<double(std::span<const double>)> fn;
    double lower_bound = 1.0;
};

struct NormalForm {
    std::vector<int> k;
    std::vector<double> h;
    std::optional<BField> b;  // absent means b == 1

    std::size_t dim() const { return k.size(); }
    bool has_unit_b() const { return !b.has_value(); }

    void validate() const {
        if (k.empty()) throw domain_error("NormalForm: d must be >= 1");
        if (h.size() != k.size()) throw domain_error("NormalForm: k and h sizes differ");
        bool any_positive = false;
        for (int kj : k) {
            if (kj < 0) throw domain_error("NormalForm: k entries must be >= 0");
            if (kj > 0) any_positive = true;
        }
        if (!any_positive) throw domain_error("NormalForm: k must have a positive entry");
        for (double hj : h)
            if (!(hj >= 0.0)) throw domain_error("NormalForm: h entries must be >= 0");
        if (b && !(b->lower_bound > 0.0))
            throw domain_error("NormalForm: b lower bound must be > 0");
    }

    double b_eval(std::span<const double> xi) const { return b ? b->fn(xi) : 1.0; }
};

inline NormalForm make_model(std::vector<int> k, std::vector<double> h) {
    NormalForm m{std::move(k), std::move(h), std::nullopt};
    m.validate();
    return m;
}

// Synthesizes a monomial model with prescribed per-coordinate rates:
// k_j = ceil(1/(2 lambda_j)) keeps h_j = 2 k_j lambda_j - 1 nonnegative for
// rates below 1/2 as well.
inline NormalForm model_from_lambdas(std::span<const double> lambdas) {
    std::vector<int> k;
    std::vector<double> h;
    for (double lam : lambdas) {
        if (!(lam > 0.0)) throw domain_error("model_from_lambdas: rates must be > 0");
        int kj = static_cast<int>(std::ceil(0.5 / lam - 1e-12));
        kj = std::max(kj, 1);
        k.push_back(kj);
        h.push_back(2.0 * kj * lam - 1.0);
    }
    return make_model(std::move(k), std::move(h));
}

struct RlctResult {
    double lambda = 0.0;
    int multiplicity = 0;
    std::vector<double> per_coord_lambda;  // +inf sentinel where k_j = 0
    std::vector<std::size_t> argmin_indices;
};

// lambda = min_j (h_j+1)/(2 k_j) over k_j > 0; multiplicity counts the argmin.
// Ties are detected at relative tolerance 1e-12 (h may be non-integer).
inline RlctResult compute_rlct(const NormalForm& model) {
    model.validate();
    RlctResult r;
    const double inf = std::numeric_limits<double>::infinity();
    r.per_coord_lambda.resize(model.dim(), inf);
    double best = inf;
    for (std::size_t j = 0; j < model.dim(); ++j) {
        if (model.k[j] == 0) continue;
        r.per_coord_lambda[j] = (model.h[j] + 1.0) / (2.0 * model.k[j]);
        best = std::min(best, r.per_coord_lambda[j]);
    }
    r.lambda = best;
    for (std::size_t j = 0; j < model.dim(); ++j) {
        double lj = r.per_coord_lambda[j];
        if (std::isfinite(lj) && lj <= best * (1.0 + 1e-12))
            r.argmin_indices.push_back(j);
    }
    r.multiplicity = static_cast<int>(r.argmin_indices.size());
    return r;
}

// K(xi) = prod_j xi_j^{2 k_j}; domain error off the unit cube.
inline double K_eval(const NormalForm& model, std::span<const double> xi) {
    if (xi.size() != model.dim()) throw domain_error("K_eval: dimension mismatch");
    double v = 1.0;
    for (std::size_t j = 0; j < model.dim(); ++j) {
        if (!(xi[j] >= 0.0 && xi[j] <= 1.0)) throw domain_error("K_eval: xi outside [0,1]^d");
        for (int p = 0; p < 2 * model.k[j]; ++p) v *= xi[j];
    }
    return v;
}

// One mean-field arm f_{k,h,beta}(u) = u^h exp(-beta u^{2k}) / B(k,h,beta).
struct VariationalArm {
    int k = 1;
    double h = 0.0;
    double beta = 0.0;

    double lambda() const { return (h + 1.0) / (2.0 * k); }
    double mean_monomial() const { return moment_G(lambda(), beta); }  // E[u^{2k}]
    double log_normalizer() const { return log_norm_B(k, h, beta); }
};

struct MeanFieldState {
    std::vector<VariationalArm> arms;
};

inline MeanFieldState make_state(const NormalForm& model, std::span<const double> betas) {
    if (betas.size() != model.dim()) throw domain_error("make_state: beta count != d");
    MeanFieldState st;
    st.arms.reserve(model.dim());
    for (std::size_t j = 0; j < model.dim(); ++j) {
        if (!(betas[j] >= 0.0)) throw domain_error("make_state: beta must be >= 0");
        st.arms.push_back({model.k[j], model.h[j], betas[j]});
    }
    return st;
}

// Candidate variational state: the smallest-index RLCT argmin coordinate gets
// beta = n, every other coordinate beta = 1. The smallest-index tie-break is a
// determinism convention.
inline MeanFieldState candidate_rho(const NormalForm& model, double n) {
    if (!(n >= 1.0)) throw domain_error("candidate_rho: n must be >= 1");
    RlctResult r = compute_rlct(model);
    std::vector<double> betas(model.dim(), 1.0);
    betas[r.argmin_indices.front()] = n;
    return make_state(model, betas);
}

// Gibbs functional Psi_n(rho) = -[ n int K drho + KL(rho || phi) ] for a
// product state, assembled from the closed forms:
//   n int K drho          = n prod_j G(lambda_j, beta_j)
//   KL(rho_j || phibar_j) = -beta_j G_j - log B_j - log(1+h_j)
// so that KL vanishes at beta_j = 0. Requires b == 1; with a general prior
// factor the closed form does not apply and the quadrature path must be used.
inline double elbo_product(const NormalForm& model, const MeanFieldState& state, double n) {
    model.validate();
    if (!model.has_unit_b())
        throw unsupported_model(
            "elbo_product: closed form requires b == 1; use the quadrature path");
    if (state.arms.size() != model.dim()) throw domain_error("elbo_product: arm count != d");
    if (!(n > 0.0)) throw domain_error("elbo_product: n must be > 0");

    double log_prod_G = 0.0;
    double kl_sum = 0.0;
    for (const auto& arm : state.arms) {
        double G = arm.mean_monomial();
        log_prod_G += std::log(G);
        kl_sum += -arm.beta * G - arm.log_normalizer() - std::log1p(arm.h);
    }
    return -std::exp(std::log(n) + log_prod_G) - kl_sum;
}

// ---- model files -----------------------------------------------------------
//
// JSON schema: {"k":[...], "h":[...], "d":<int optional>, "b":"one"|"named:<id>"}
// Named prior factors come from the registry below; modules with their own
// fields (the tanh-network example) add entries at startup.

inline std::map<std::string, BField>& b_field_registry() {
    static std::map<std::string, BField> reg = [] {
        std::map<std::string, BField> r;
        r["two_plus_sin_xi1"] = BField{
            "two_plus_sin_xi1",
            [](std::span<const double> xi) { return 2.0 + std::sin(xi.empty() ? 0.0 : xi[0]); },
            2.0};
        return r;
    }();
    return reg;
}

inline void register_b_field(BField field) {
    b_field_registry()[field.name] = std::move(field);
}

inline NormalForm model_from_json(const nlohmann::json& j) {
    NormalForm m;
    try {
        m.k = j.at("k").get<std::vector<int>>();
        m.h = j.at("h").get<std::vector<double>>();
        if (j.contains("d") && j.at("d").get<std::size_t>() != m.k.size())
            throw domain_error("model: field d inconsistent with k");
        std::string bspec = j.value("b", std::string("one"));
        if (bspec != "one") {
            if (bspec.rfind("named:", 0) != 0)
                throw domain_error("model: b must be \"one\" or \"named:<id>\"");
            std::string id = bspec.substr(6);
            auto it = b_field_registry().find(id);
            if (it == b_field_registry().end())
                throw domain_error("model: unknown named b field '" + id + "'");
            m.b = it->second;
        }
    } catch (const nlohmann::json::exception& e) {
        throw domain_error(std::string("model: malformed JSON: ") + e.what());
    }
    m.validate();
    return m;
}

}  // namespace normform
