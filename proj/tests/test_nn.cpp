#include <catch_amalgamated.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <vector>

#include "normform/cavi.hpp"
#include "normform/evidence.hpp"
#include "normform/nn.hpp"
#include "oracles.hpp"

using namespace normform;

TEST_CASE("nn::simulate: determinism, moments, validation") {
    CHECK_THROWS_AS(nn::simulate(0, 1), domain_error);

    auto a = nn::simulate(100000, 7);
    auto b = nn::simulate(100000, 7);
    CHECK(a.x == b.x);
    CHECK(a.y == b.y);

    double mean_y = 0.0;
    for (double v : a.y) mean_y += v;
    mean_y /= static_cast<double>(a.size());
    CHECK(std::abs(mean_y) < 3.0 / std::sqrt(1e5));
    for (double v : a.x) {
        REQUIRE(v >= 0.0);
        REQUIRE(v <= 1.0);
    }
}

TEST_CASE("nn dataset cache round-trips") {
    auto d = nn::simulate(257, 12345);
    std::string path = (std::filesystem::temp_directory_path() / "nn_cache_test.bin").string();
    nn::save_dataset(d, path);
    auto back = nn::load_dataset(path);
    CHECK(back.seed == d.seed);
    CHECK(back.x == d.x);
    CHECK(back.y == d.y);
    std::filesystem::remove(path);
    CHECK_THROWS_AS(nn::load_dataset(path), domain_error);
}

TEST_CASE("K0: limit, oracle value, monotone decay") {
    CHECK(nn::K0(0.0) == Catch::Approx(1.0 / 3.0).epsilon(1e-15));
    double ref = oracle::integrate([](double x) { return std::tanh(x) * std::tanh(x); }, 0.0,
                                   1.0, 1e-13);
    CHECK(nn::K0(1.0) == Catch::Approx(ref).margin(1e-10));
    // quadrature of the defining integral at an interior point
    double t = 0.37;
    double ref2 = oracle::integrate(
        [&](double x) { return std::tanh(t * x) * std::tanh(t * x) / (t * t); }, 0.0, 1.0,
        1e-13);
    CHECK(nn::K0(t) == Catch::Approx(ref2).margin(1e-11));

    double prev = nn::K0(0.0);
    for (int i = 1; i <= 50; ++i) {
        double cur = nn::K0(i / 50.0);
        CHECK(cur < prev);
        prev = cur;
    }
    // series/closed-form splice is seamless
    CHECK(nn::K0(0.05 - 1e-9) == Catch::Approx(nn::K0(0.05 + 1e-9)).epsilon(1e-10));
}

TEST_CASE("K0_prime cross-validated against central differences") {
    for (double t : {0.01, 0.04, 0.06, 0.2, 0.5, 0.9}) {
        double (*f)(double) = nn::K0;
        double hstep = 1e-6 * std::max(0.05, t);
        double cd = (f(t + hstep) - f(t - hstep)) / (2.0 * hstep);
        CHECK(nn::K0_prime(t) == Catch::Approx(cd).margin(1e-8));
    }
}

TEST_CASE("g transform: endpoints, round trip, normal-form reduction") {
    CHECK(nn::g_transform(0.0) == 0.0);
    CHECK(nn::g_upper() == Catch::Approx(0.34525776171161967947).epsilon(1e-12));
    for (int i = 0; i <= 100; ++i) {
        double t = i / 100.0;
        CHECK(std::abs(nn::g_inverse(nn::g_transform(t)) - t) < 1e-10);
    }
    CHECK_THROWS_AS(nn::g_inverse(nn::g_upper() * 1.01), domain_error);

    // K(theta) = theta1^2 theta2^2 K0(theta2)/2 equals xi1^2 xi2^2 on a 50x50 grid
    double worst = 0.0;
    for (int i = 0; i <= 50; ++i) {
        for (int j = 0; j <= 50; ++j) {
            double t1 = i / 50.0, t2 = j / 50.0;
            double lhs = 0.5 * t1 * t1 * t2 * t2 * nn::K0(t2);
            double xi2 = nn::g_transform(t2);
            worst = std::max(worst, std::abs(lhs - t1 * t1 * xi2 * xi2));
        }
    }
    CHECK(worst < 1e-10);
}

TEST_CASE("jacobian inverts g_prime") {
    for (double t : {0.1, 0.4, 0.8, 1.0}) {
        double xi2 = nn::g_transform(t);
        CHECK(nn::jacobian(xi2) * nn::g_prime(t) == Catch::Approx(1.0).epsilon(1e-9));
        CHECK(nn::jacobian(xi2) > 0.0);
    }
}

TEST_CASE("wn_process: finite at xi2 = 0 with the series limit") {
    auto d = nn::simulate(200, 3);
    double direct = 0.0;
    for (std::size_t i = 0; i < d.size(); ++i) direct -= d.y[i] * d.x[i];
    direct /= std::sqrt(200.0);
    double w = nn::wn_process(d, 0.63, 0.0);
    CHECK(std::isfinite(w));
    CHECK(w == Catch::Approx(direct).margin(1e-12));
}

TEST_CASE("wn_process is centered: mean over datasets within 3 sigma") {
    const int reps = 200;
    const std::size_t nobs = 400;
    std::vector<std::pair<double, double>> points{
        {0.0, 0.0}, {0.5, 0.1}, {1.0, 0.3}, {0.3, 0.34}, {0.8, 0.2}};
    for (auto [x1, x2] : points) {
        double sum = 0.0, sum2 = 0.0;
        for (int r = 0; r < reps; ++r) {
            auto d = nn::simulate(nobs, 1000 + static_cast<std::uint64_t>(r));
            double w = nn::wn_process(d, x1, x2);
            sum += w;
            sum2 += w * w;
        }
        double mean = sum / reps;
        double sd = std::sqrt((sum2 - reps * mean * mean) / (reps - 1.0));
        CAPTURE(x1, x2, mean, sd);
        CHECK(std::abs(mean) < 3.0 * sd / std::sqrt(static_cast<double>(reps)));
    }
}

TEST_CASE("cavi_original: first-sweep moments match a direct quadrature oracle") {
    auto d = nn::simulate(500, 21);
    const double n = 500.0;

    // oracle K1, K2 under the uniform prior q2
    auto T1 = [&](double th) {
        double s = 0.0;
        for (std::size_t i = 0; i < d.size(); ++i) s += d.y[i] * std::tanh(th * d.x[i]);
        return s / n;
    };
    auto T2 = [&](double th) {
        double s = 0.0;
        for (std::size_t i = 0; i < d.size(); ++i) {
            double t = std::tanh(th * d.x[i]);
            s += t * t;
        }
        return s / n;
    };
    double K1 = oracle::integrate(T1, 0.0, 1.0, 1e-11);
    double K2 = oracle::integrate(T2, 0.0, 1.0, 1e-11);

    // oracle moments of q1 ~ exp(-(n K2 / 2)(theta - K1/K2)^2) on [0,1]
    double mu = K1 / K2;
    auto q1 = [&](double th) { return std::exp(-0.5 * n * K2 * (th - mu) * (th - mu)); };
    double z0 = oracle::integrate(q1, 0.0, 1.0, 1e-13);
    double m1 = oracle::integrate([&](double th) { return th * q1(th); }, 0.0, 1.0, 1e-13) / z0;
    double m2 =
        oracle::integrate([&](double th) { return th * th * q1(th); }, 0.0, 1.0, 1e-13) / z0;

    auto tr = nn::cavi_original(d, 1e-10, 50);
    REQUIRE(!tr.iterates.empty());
    CHECK(tr.iterates.front().m1 == Catch::Approx(m1).margin(1e-8));
    CHECK(tr.iterates.front().m2 == Catch::Approx(m2).margin(1e-8));
}

TEST_CASE("cavi_original: monotone ELBO, convergence, evidence upper bound") {
    auto d = nn::simulate(1000, 77);
    auto tr = nn::cavi_original(d);
    CHECK(tr.converged);
    CHECK_FALSE(tr.monotone_violation);
    for (std::size_t i = 1; i < tr.iterates.size(); ++i)
        CHECK(tr.iterates[i].elbo >= tr.iterates[i - 1].elbo - 1e-8);

    // 2-D quadrature oracle of the exact evidence int p(Y | X, theta) dtheta
    const double n = 1000.0;
    double syy = 0.0;
    for (double v : d.y) syy += v * v;
    auto log_lik_integral = [&]() {
        auto outer = [&](double th2) {
            double A = 0.0, B = 0.0;
            for (std::size_t i = 0; i < d.size(); ++i) {
                double t = std::tanh(th2 * d.x[i]);
                A += t * t;
                B += d.y[i] * t;
            }
            return oracle::integrate(
                [&](double th1) { return std::exp(th1 * B - 0.5 * th1 * th1 * A); }, 0.0, 1.0,
                1e-12);
        };
        return std::log(oracle::integrate(outer, 0.0, 1.0, 1e-10));
    };
    double log_evidence =
        -0.5 * n * std::log(2.0 * 3.14159265358979323846) - 0.5 * syy + log_lik_integral();
    CHECK(std::isfinite(tr.elbo_final));
    CHECK(tr.elbo_final <= log_evidence + 1e-6);
}

TEST_CASE("cavi_transformed with psi = theta^2 reduces to the symmetric system") {
    const double n = 100.0;
    auto tr = nn::cavi_transformed(n, 1e-13, 20000, [](double th) { return th * th; });
    REQUIRE(tr.converged);
    auto sym = solve_fixed_point(model_from_lambdas(std::vector{0.5, 0.5}), n);
    // (mu1, mu2) = (F2, F1), and the symmetric fixed point has mu1 = mu2
    CHECK(tr.F1_star == Catch::Approx(sym.mu1_star).margin(1e-8));
    CHECK(tr.F2_star == Catch::Approx(sym.mu2_star).margin(1e-8));
    // same Gibbs value through the two code paths (h = 0: no constant offset)
    double ref = elbo_at(make_cavi_state(model_from_lambdas(std::vector{0.5, 0.5}), n,
                                         sym.mu1_star, sym.mu2_star));
    CHECK(tr.elbo_final == Catch::Approx(ref).margin(1e-7));
}

TEST_CASE("cavi_transformed: monotone ELBO and stable n F1 F2") {
    double prev_scale = -1.0;
    for (double n : {1e3, 1e4, 1e5}) {
        auto tr = nn::cavi_transformed(n);
        CHECK_FALSE(tr.monotone_violation);
        double scale = std::sqrt(n * tr.F1_star * tr.F2_star);
        if (prev_scale > 0.0) CHECK(std::abs(scale / prev_scale - 1.0) < 0.25);
        prev_scale = scale;
    }
}

TEST_CASE("cavi_transformed ELBO slope is -1/2") {
    std::vector<double> lnn, elbo, ones;
    for (double n : {1e2, 1e3, 1e4, 1e5, 1e6}) {
        auto tr = nn::cavi_transformed(n);
        lnn.push_back(std::log(n));
        elbo.push_back(tr.elbo_final);
        ones.push_back(1.0);
    }
    auto fit = least_squares({ones, lnn}, elbo);
    CHECK(fit.coef[1] > -0.55);
    CHECK(fit.coef[1] < -0.45);
}

TEST_CASE("theorem23 glue: identity holds for a real dataset") {
    auto d = nn::simulate(200, 5);
    auto prob = nn::theorem23_problem(d);
    Theorem23Options opt;
    opt.samples = 150000;
    opt.seed = 31;
    auto rep = theorem23_check(prob.model, prob.n_effective, prob.wn, opt);
    CAPTURE(rep.lhs, rep.leading, rep.remainder, rep.total_se, rep.identity_gap);
    CHECK(rep.gap_over_se < 3.5);
    CHECK(rep.remainder_logn_cross == 0.0);
}

TEST_CASE("registered jacobian b field is positive and normalized") {
    nn::register_b_fields();
    auto& reg = b_field_registry();
    REQUIRE(reg.count("nn_jacobian") == 1);
    const auto& b = reg.at("nn_jacobian");
    CHECK(b.lower_bound > 0.0);
    double mass = oracle::integrate(
        [&](double u) {
            std::vector<double> xi{0.0, u};
            return b.fn(xi);
        },
        0.0, 1.0, 1e-11);
    CHECK(mass == Catch::Approx(1.0).epsilon(1e-8));
}
