#include <catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>

#include <json.hpp>

#include "normform/model.hpp"
#include "normform/rng.hpp"
#include "oracles.hpp"

using namespace normform;

TEST_CASE("compute_rlct: worked cases") {
    {
        auto r = compute_rlct(make_model({1, 1}, {0, 0}));
        CHECK(r.lambda == 0.5);
        CHECK(r.multiplicity == 2);
    }
    {
        auto r = compute_rlct(make_model({1, 2}, {0, 0}));
        CHECK(r.lambda == 0.25);
        CHECK(r.multiplicity == 1);
        CHECK(r.argmin_indices == std::vector<std::size_t>{1});
    }
    {
        // k_1 = 0 coordinate carries no lambda_j
        auto r = compute_rlct(make_model({0, 1}, {5, 0}));
        CHECK(r.lambda == 0.5);
        CHECK(r.multiplicity == 1);
        CHECK(std::isinf(r.per_coord_lambda[0]));
    }
    CHECK_THROWS_AS(make_model({0, 0}, {1, 1}), domain_error);
}

TEST_CASE("compute_rlct: permutation equivariance") {
    Rng rng(42);
    for (int it = 0; it < 200; ++it) {
        std::size_t d = 1 + static_cast<std::size_t>(rng.uniform() * 5.0);
        std::vector<int> k(d);
        std::vector<double> h(d);
        bool any = false;
        for (std::size_t j = 0; j < d; ++j) {
            k[j] = static_cast<int>(rng.uniform() * 4.0);
            any = any || k[j] > 0;
            h[j] = rng.uniform() * 3.0;
        }
        if (!any) k[0] = 1;
        auto base = compute_rlct(make_model(k, h));

        std::vector<std::size_t> perm(d);
        std::iota(perm.begin(), perm.end(), 0);
        for (std::size_t j = d; j > 1; --j)
            std::swap(perm[j - 1], perm[static_cast<std::size_t>(rng.uniform() * j)]);
        std::vector<int> kp(d);
        std::vector<double> hp(d);
        for (std::size_t j = 0; j < d; ++j) {
            kp[j] = k[perm[j]];
            hp[j] = h[perm[j]];
        }
        auto permuted = compute_rlct(make_model(kp, hp));
        CHECK(permuted.lambda == base.lambda);
        CHECK(permuted.multiplicity == base.multiplicity);
        for (std::size_t j = 0; j < d; ++j)
            CHECK(permuted.per_coord_lambda[j] == base.per_coord_lambda[perm[j]]);
    }
}

TEST_CASE("K_eval") {
    auto m = make_model({1, 2}, {0, 0});
    CHECK(K_eval(m, std::vector<double>{1.0, 1.0}) == 1.0);
    CHECK(K_eval(m, std::vector<double>{0.5, 0.5}) == Catch::Approx(0.015625).epsilon(1e-15));
    CHECK(K_eval(m, std::vector<double>{0.7, 0.0}) == 0.0);
    CHECK_THROWS_AS(K_eval(m, std::vector<double>{1.5, 0.5}), domain_error);
}

TEST_CASE("candidate_rho targets the RLCT argmin with beta = n") {
    {
        auto st = candidate_rho(make_model({1, 2}, {0, 0}), 100);
        CHECK(st.arms[0].beta == 1.0);
        CHECK(st.arms[1].beta == 100.0);  // g = 2, lambda_2 = 1/4 < 1/2
    }
    {
        auto st = candidate_rho(make_model({1, 1}, {0, 0}), 50);
        CHECK(st.arms[0].beta == 50.0);  // tie broken at the smallest index
        CHECK(st.arms[1].beta == 1.0);
    }
    {
        auto st = candidate_rho(make_model({1}, {0}), 10);
        CHECK(st.arms[0].beta == 10.0);
    }
}

TEST_CASE("elbo_product: beta = 0 reduces to the prior value") {
    auto m = make_model({1, 2}, {0.0, 1.0});
    std::vector<double> betas{0.0, 0.0};
    double l1 = 0.5, l2 = 0.5;
    double expect = -1000.0 * (l1 / (l1 + 1.0)) * (l2 / (l2 + 1.0));
    CHECK(elbo_product(m, make_state(m, betas), 1000.0) ==
          Catch::Approx(expect).epsilon(1e-12));
}

TEST_CASE("elbo_product matches an independent 2-D quadrature of the Gibbs functional") {
    auto m = make_model({1, 1}, {0.0, 0.0});
    double n = 1000.0;
    std::vector<double> betas{n, 1.0};
    double lib = elbo_product(m, make_state(m, betas), n);

    // rho_i = exp(-beta_i u^2)/B_i against the uniform prior; the cross term
    // is integrated as a genuine 2-D integral.
    double B1 = oracle::norm_B(1, 0, betas[0]);
    double B2 = oracle::norm_B(1, 0, betas[1]);
    double cross = oracle::integrate2d(
        [&](double u, double v) {
            return u * u * v * v * std::exp(-betas[0] * u * u) / B1 *
                   std::exp(-betas[1] * v * v) / B2;
        },
        0.0, 1.0, 0.0, 1.0, 1e-10);
    auto entropy = [&](double beta, double B) {
        return oracle::integrate_edge(
            [&](double u) {
                double rho = std::exp(-beta * u * u) / B;
                return rho > 0.0 ? rho * std::log(rho) : 0.0;
            },
            0.0, 1.0, 1e-12);
    };
    double psi = -n * cross - entropy(betas[0], B1) - entropy(betas[1], B2);
    CHECK(lib == Catch::Approx(psi).margin(1e-8));
}

TEST_CASE("candidate state ELBO has the -lambda log n order (bounded constant)") {
    auto m = make_model({1, 2}, {0.0, 0.0});
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (double n : {1e2, 1e4, 1e6, 1e8}) {
        double c = elbo_product(m, candidate_rho(m, n), n) + 0.25 * std::log(n);
        lo = std::min(lo, c);
        hi = std::max(hi, c);
    }
    CHECK(hi - lo < 1e-6);
}

TEST_CASE("elbo_product rejects non-unit b") {
    auto m = make_model({1, 1}, {0.0, 0.0});
    m.b = b_field_registry().at("two_plus_sin_xi1");
    std::vector<double> betas{1.0, 1.0};
    CHECK_THROWS_AS(elbo_product(m, make_state(m, betas), 10.0), unsupported_model);
}

TEST_CASE("model JSON round trip and validation") {
    auto j = nlohmann::json::parse(R"({"k":[1,2],"h":[0.0,1.5],"d":2,"b":"one"})");
    auto m = model_from_json(j);
    CHECK(m.k == std::vector<int>{1, 2});
    CHECK(m.h[1] == 1.5);
    CHECK(m.has_unit_b());

    auto jb = nlohmann::json::parse(R"({"k":[1,1],"h":[0,0],"b":"named:two_plus_sin_xi1"})");
    auto mb = model_from_json(jb);
    REQUIRE(mb.b.has_value());
    std::vector<double> xi{0.5, 0.5};
    CHECK(mb.b_eval(xi) == Catch::Approx(2.0 + std::sin(0.5)));

    CHECK_THROWS_AS(model_from_json(nlohmann::json::parse(R"({"k":[1],"h":[0],"d":3})")),
                    domain_error);
    CHECK_THROWS_AS(model_from_json(nlohmann::json::parse(R"({"k":[0,0],"h":[0,0]})")),
                    domain_error);
    CHECK_THROWS_AS(model_from_json(nlohmann::json::parse(R"({"k":[1],"h":[-1]})")),
                    domain_error);
    CHECK_THROWS_AS(
        model_from_json(nlohmann::json::parse(R"({"k":[1],"h":[0],"b":"named:nope"})")),
        domain_error);
}
