// Command-line surface for the normal-form evidence library: every
// experiment is a reproducible run emitting CSV/JSON with the resolved
// configuration embedded.
//
// Exit codes: 0 success, 2 configuration/validation error, 3 numerical
// failure (non-convergence, unreachable tolerance, non-finite values).

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "normform/cavi.hpp"
#include "normform/evidence.hpp"
#include "normform/model.hpp"
#include "normform/nn.hpp"

namespace nf = normform;
using ojson = nlohmann::ordered_json;

namespace {

std::string fmt17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string now_iso8601() {
    auto now = std::chrono::system_clock::now();
    std::time_t t = std::chrono::system_clock::to_time_t(now);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
    return buf;
}

void write_file_atomic(const std::string& path, const std::string& content) {
    namespace fs = std::filesystem;
    fs::path target(path);
    fs::path tmp = target;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw nf::domain_error("cannot open output file: " + path);
        out << content;
        if (!out) throw nf::numeric_error("write failed: " + path);
    }
    fs::rename(tmp, target);
}

std::vector<double> split_doubles(const std::string& s, const char* what) {
    std::vector<double> out;
    std::stringstream ss(s);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        try {
            std::size_t pos = 0;
            double v = std::stod(tok, &pos);
            if (pos != tok.size()) throw std::invalid_argument(tok);
            out.push_back(v);
        } catch (const std::exception&) {
            throw nf::domain_error(std::string("cannot parse ") + what + " entry '" + tok + "'");
        }
    }
    if (out.empty()) throw nf::domain_error(std::string("empty ") + what + " list");
    return out;
}

// Grid syntax: "a:b:count" (count log-spaced points, inclusive) or a comma
// list. Values round to the nearest integer >= 1; ascending required.
std::vector<double> parse_grid(const std::string& spec) {
    std::vector<double> vals;
    if (spec.find(':') != std::string::npos) {
        std::vector<std::string> parts;
        std::stringstream ss(spec);
        std::string tok;
        while (std::getline(ss, tok, ':')) parts.push_back(tok);
        if (parts.size() != 3) throw nf::domain_error("grid spec must be a:b:count");
        double a = 0, b = 0;
        long count = 0;
        try {
            a = std::stod(parts[0]);
            b = std::stod(parts[1]);
            count = std::stol(parts[2]);
        } catch (const std::exception&) {
            throw nf::domain_error("cannot parse grid spec '" + spec + "'");
        }
        if (!(a > 0.0) || !(b >= a) || count < 1)
            throw nf::domain_error("grid spec needs 0 < a <= b and count >= 1");
        for (long i = 0; i < count; ++i) {
            double f = count == 1 ? 0.0 : static_cast<double>(i) / (count - 1);
            vals.push_back(std::pow(10.0, std::log10(a) + f * (std::log10(b) - std::log10(a))));
        }
    } else {
        vals = split_doubles(spec, "n-grid");
    }
    std::vector<double> out;
    for (double v : vals) {
        double r = std::max(1.0, std::round(v));
        if (out.empty() || r > out.back()) out.push_back(r);
        else if (r < out.back())
            throw nf::domain_error("n-grid must be ascending");
    }
    return out;
}

struct ModelOpts {
    std::string model_path;
    std::string k_list, h_list, lambda_list;

    void attach(CLI::App* cmd) {
        cmd->add_option("--model", model_path, "model JSON file {k, h, d, b}");
        cmd->add_option("--k", k_list, "comma list of nonnegative integer k exponents");
        cmd->add_option("--h", h_list, "comma list of nonnegative real h exponents");
        cmd->add_option("--lambda", lambda_list,
                        "comma list of rates; synthesizes k=ceil(1/(2 lambda)), h=2k lambda-1");
    }

    bool given() const {
        return !model_path.empty() || !k_list.empty() || !h_list.empty() ||
               !lambda_list.empty();
    }

    nf::NormalForm resolve() const {
        int sources = (!model_path.empty() ? 1 : 0) +
                      ((!k_list.empty() || !h_list.empty()) ? 1 : 0) +
                      (!lambda_list.empty() ? 1 : 0);
        if (sources != 1)
            throw nf::domain_error("specify exactly one of --model, --k/--h, --lambda");
        if (!model_path.empty()) {
            std::ifstream in(model_path);
            if (!in) throw nf::domain_error("cannot open model file: " + model_path);
            nlohmann::json j;
            try {
                in >> j;
            } catch (const nlohmann::json::exception& e) {
                throw nf::domain_error(std::string("model file parse error: ") + e.what());
            }
            return nf::model_from_json(j);
        }
        if (!lambda_list.empty())
            return nf::model_from_lambdas(split_doubles(lambda_list, "lambda"));
        if (k_list.empty() || h_list.empty())
            throw nf::domain_error("--k and --h must be given together");
        std::vector<int> k;
        for (double v : split_doubles(k_list, "k")) {
            if (v != std::floor(v)) throw nf::domain_error("k entries must be integers");
            k.push_back(static_cast<int>(v));
        }
        return nf::make_model(k, split_doubles(h_list, "h"));
    }

    ojson config() const {
        ojson j;
        if (!model_path.empty()) j["model"] = model_path;
        if (!k_list.empty()) j["k"] = k_list;
        if (!h_list.empty()) j["h"] = h_list;
        if (!lambda_list.empty()) j["lambda"] = lambda_list;
        return j;
    }
};

std::uint64_t default_seed() {
    if (const char* env = std::getenv("SE_SEED")) {
        try {
            return std::stoull(env);
        } catch (const std::exception&) {
            throw nf::domain_error("SE_SEED must be an unsigned integer");
        }
    }
    return 12345;
}

std::string csv_document(const ojson& config, bool no_timestamp,
                         const std::vector<std::string>& header,
                         const std::vector<std::vector<std::string>>& rows) {
    std::string out = "# config: " + config.dump() + "\n";
    if (!no_timestamp) out += "# timestamp: " + now_iso8601() + "\n";
    for (std::size_t i = 0; i < header.size(); ++i) out += (i ? "," : "") + header[i];
    out += "\n";
    for (const auto& row : rows) {
        for (std::size_t i = 0; i < row.size(); ++i) out += (i ? "," : "") + row[i];
        out += "\n";
    }
    return out;
}

std::string json_document(ojson body, const ojson& config, bool no_timestamp) {
    body["config"] = config;
    if (!no_timestamp) body["timestamp"] = now_iso8601();
    return body.dump(2) + "\n";
}

void emit(const std::string& out_path, const std::string& content, const ojson& summary) {
    if (!out_path.empty()) write_file_atomic(out_path, content);
    std::cout << summary.dump() << "\n";
}

// ---- subcommands ------------------------------------------------------------

int run_rlct(const ModelOpts& mo, const std::string& out_path, bool no_ts) {
    auto model = mo.resolve();
    auto r = nf::compute_rlct(model);
    ojson j;
    j["lambda"] = r.lambda;
    j["multiplicity"] = r.multiplicity;
    ojson per = ojson::array();
    for (double v : r.per_coord_lambda)
        per.push_back(std::isfinite(v) ? ojson(v) : ojson(nullptr));
    j["per_coord_lambda"] = per;
    j["argmin_indices"] = r.argmin_indices;
    if (!out_path.empty()) write_file_atomic(out_path, json_document(j, mo.config(), no_ts));
    std::cout << j.dump() << "\n";
    return 0;
}

int run_evidence(const ModelOpts& mo, const std::string& grid_spec, const std::string& methods,
                 std::size_t samples, std::uint64_t seed, double tol, int workers,
                 const std::string& out_path, bool no_ts) {
    auto model = mo.resolve();
    auto grid = parse_grid(grid_spec);
    bool all = methods == "all";
    bool want_exact = all || methods.find("exact") != std::string::npos;
    bool want_quad = all || methods.find("quad") != std::string::npos;
    bool want_mc = all || methods.find("mc") != std::string::npos;
    if (!(want_exact || want_quad || want_mc))
        throw nf::domain_error("--methods must name exact, quadrature and/or mc");

    std::vector<std::vector<std::string>> rows;
    bool numeric_trouble = false;
    std::string exact_note;
    for (double n : grid) {
        if (want_exact) {
            try {
                auto e = nf::evidence_exact_rep(model, n);
                rows.push_back({fmt17(n), fmt17(e.log_value), "exact_rep", fmt17(e.error), ""});
                if (!e.tolerance_reached) numeric_trouble = true;
            } catch (const nf::numeric_error& ex) {
                if (!all) throw;
                exact_note = ex.what();
            } catch (const nf::domain_error& ex) {
                if (!all) throw;
                exact_note = ex.what();
            }
        }
        if (want_quad) {
            auto e = nf::evidence_quadrature(model, n, tol, workers);
            rows.push_back({fmt17(n), fmt17(e.log_value), "quadrature", fmt17(e.error), ""});
            if (!e.tolerance_reached) numeric_trouble = true;
        }
        if (want_mc) {
            auto e = nf::evidence_mc(model, n, samples, seed, workers);
            rows.push_back({fmt17(n), fmt17(e.log_value), "monte_carlo", fmt17(e.error), ""});
        }
    }
    ojson config = mo.config();
    config["command"] = "evidence";
    config["n_grid"] = grid;
    config["methods"] = methods;
    config["samples"] = samples;
    config["seed"] = seed;
    config["tol"] = tol;
    config["workers"] = workers;
    std::string csv =
        csv_document(config, no_ts, {"n", "log_Z", "method", "error", "lambda_hat"}, rows);
    ojson summary;
    summary["rows"] = rows.size();
    if (!exact_note.empty()) summary["exact_rep_skipped"] = exact_note;
    emit(out_path, csv, summary);
    return numeric_trouble ? 3 : 0;
}

int run_bounds_fit(const ModelOpts& mo, const std::string& grid_spec, double tol,
                   const std::string& out_path, bool no_ts) {
    auto model = mo.resolve();
    auto grid = parse_grid(grid_spec);
    auto fit = nf::check_theorem21_bounds(model, grid, tol);

    std::vector<std::vector<std::string>> rows;
    for (const auto& r : fit.rows)
        rows.push_back({fmt17(r.n), fmt17(r.log_z), nf::to_string(r.method), fmt17(r.error),
                        fmt17(fit.lambda_hat)});
    ojson config = mo.config();
    config["command"] = "bounds-fit";
    config["n_grid"] = grid;
    config["tol"] = tol;
    std::string csv =
        csv_document(config, no_ts, {"n", "log_Z", "method", "error", "lambda_hat"}, rows);

    ojson summary;
    summary["lambda_hat"] = fit.lambda_hat;
    summary["loglog_coef"] = fit.loglog_coef;
    summary["intercept"] = fit.intercept;
    summary["r2"] = fit.r2;
    summary["sandwich_band"] = fit.sandwich_band;
    summary["lambda_true"] = fit.lambda_true;
    summary["multiplicity_true"] = fit.multiplicity_true;
    emit(out_path, csv, summary);
    return 0;
}

int run_cavi(const ModelOpts& mo, const std::string& grid_spec, double tol, int max_iter,
             std::optional<double> init, const std::string& out_path, bool no_ts) {
    auto model = mo.resolve();
    auto grid = parse_grid(grid_spec);
    std::vector<std::vector<std::string>> rows;
    bool trouble = false;
    for (double n : grid) {
        auto tr = nf::solve_fixed_point(model, n, tol, max_iter, init);
        if (!tr.converged) trouble = true;
        double e = nf::elbo_at(nf::make_cavi_state(model, n, tr.mu1_star, tr.mu2_star));
        rows.push_back({fmt17(n), fmt17(tr.mu1_star), fmt17(tr.mu2_star), fmt17(e),
                        std::to_string(tr.iterations)});
    }
    ojson config = mo.config();
    config["command"] = "cavi";
    config["n_grid"] = grid;
    config["tol"] = tol;
    config["max_iter"] = max_iter;
    if (init) config["init"] = *init;
    std::string csv =
        csv_document(config, no_ts, {"n", "mu1_star", "mu2_star", "elbo", "iterations"}, rows);
    ojson summary;
    summary["rows"] = rows.size();
    summary["converged"] = !trouble;
    emit(out_path, csv, summary);
    return trouble ? 3 : 0;
}

int run_slope_fit(const ModelOpts& mo, const std::string& grid_spec, double tol,
                  const std::string& out_path, bool no_ts) {
    auto model = mo.resolve();
    auto grid = parse_grid(grid_spec);
    auto fit = nf::elbo_slope_fit(model, grid, tol);
    ojson j;
    j["slope"] = fit.slope;
    j["intercept"] = fit.intercept;
    j["r2"] = fit.r2;
    j["grid"] = fit.grid;
    j["elbo"] = fit.elbo;
    ojson config = mo.config();
    config["command"] = "slope-fit";
    config["n_grid"] = grid;
    config["tol"] = tol;
    if (!out_path.empty()) write_file_atomic(out_path, json_document(j, config, no_ts));
    ojson summary;
    summary["slope"] = fit.slope;
    summary["intercept"] = fit.intercept;
    summary["r2"] = fit.r2;
    std::cout << summary.dump() << "\n";
    return 0;
}

int run_nn(const std::string& grid_spec, std::uint64_t seed, const std::string& coords,
           double tol, int max_iter, const std::string& cache_path, const std::string& out_path,
           bool no_ts) {
    auto grid = parse_grid(grid_spec);
    bool do_transformed = coords == "transformed" || coords == "both";
    bool do_original = coords == "original" || coords == "both";
    if (!do_transformed && !do_original)
        throw nf::domain_error("--coords must be transformed, original or both");
    if (!cache_path.empty() && grid.size() != 1)
        throw nf::domain_error("--cache needs a single-point n-grid");

    std::vector<std::vector<std::string>> rows;
    std::vector<double> lnn, elbos;
    bool trouble = false;
    for (double n : grid) {
        if (do_transformed) {
            auto tr = nf::nn::cavi_transformed(n, tol, max_iter);
            if (!tr.converged || tr.monotone_violation) trouble = true;
            rows.push_back({fmt17(n), std::to_string(seed), "transformed", fmt17(tr.elbo_final),
                            fmt17(tr.F1_star), fmt17(tr.F2_star),
                            std::to_string(tr.iterations)});
            lnn.push_back(std::log(n));
            elbos.push_back(tr.elbo_final);
        }
        if (do_original) {
            nf::nn::NnDataset data;
            if (!cache_path.empty() && std::filesystem::exists(cache_path)) {
                data = nf::nn::load_dataset(cache_path);
                if (data.size() != static_cast<std::size_t>(n))
                    throw nf::domain_error("cached dataset size differs from requested n");
            } else {
                data = nf::nn::simulate(static_cast<std::size_t>(n), seed);
                if (!cache_path.empty()) nf::nn::save_dataset(data, cache_path);
            }
            auto tr = nf::nn::cavi_original(data, tol, std::min(max_iter, 500));
            if (!tr.converged || tr.monotone_violation) trouble = true;
            const auto& last = tr.iterates.back();
            // F1/F2 columns carry the (m2, K2) second-moment pair here
            rows.push_back({fmt17(n), std::to_string(seed), "original", fmt17(tr.elbo_final),
                            fmt17(last.m2), fmt17(last.K2), std::to_string(tr.iterations)});
        }
    }
    ojson config;
    config["command"] = "nn";
    config["n_grid"] = grid;
    config["seed"] = seed;
    config["coords"] = coords;
    config["tol"] = tol;
    config["max_iter"] = max_iter;
    if (!cache_path.empty()) config["cache"] = cache_path;
    std::string csv = csv_document(
        config, no_ts, {"n", "seed", "coordinate_system", "elbo", "F1", "F2", "iterations"},
        rows);
    ojson summary;
    summary["rows"] = rows.size();
    if (do_transformed && lnn.size() >= 2) {
        std::vector<double> ones(lnn.size(), 1.0);
        auto fit = nf::least_squares({ones, lnn}, elbos);
        summary["transformed_slope"] = fit.coef[1];
    }
    emit(out_path, csv, summary);
    return trouble ? 3 : 0;
}

int run_theorem23(const ModelOpts& mo, double n, std::uint64_t seed, std::size_t samples,
                  int workers, std::optional<double> wn_const, const std::string& out_path,
                  bool no_ts) {
    nf::Theorem23Options opt;
    opt.samples = samples;
    opt.seed = seed;
    opt.workers = workers;

    nf::Theorem23Report rep;
    ojson config;
    config["command"] = "theorem23";
    config["n"] = n;
    config["seed"] = seed;
    config["samples"] = samples;
    if (mo.given()) {
        if (!wn_const)
            throw nf::domain_error("theorem23 with an explicit model needs --wn-const");
        opt.wn_constant = *wn_const;
        auto model = mo.resolve();
        ojson mcfg = mo.config();
        for (auto& [key, val] : mcfg.items()) config[key] = val;
        config["wn_const"] = *wn_const;
        rep = nf::theorem23_check(model, n, nullptr, opt);
    } else {
        // tanh-network mode: dataset of size n, unit-cube surrogate model
        auto data = nf::nn::simulate(static_cast<std::size_t>(n), seed);
        auto prob = nf::nn::theorem23_problem(data);
        config["mode"] = "nn";
        config["n_effective"] = prob.n_effective;
        rep = nf::theorem23_check(prob.model, prob.n_effective, prob.wn, opt);
    }

    ojson j;
    j["n"] = rep.n;
    j["lambda"] = rep.lambda;
    j["multiplicity"] = rep.multiplicity;
    j["lhs"] = rep.lhs;
    j["lhs_err"] = rep.lhs_err;
    j["leading"] = rep.leading;
    j["leading_se"] = rep.leading_se;
    j["remainder"] = rep.remainder;
    j["remainder_se"] = rep.remainder_se;
    j["remainder_logn_cross"] = rep.remainder_logn_cross;
    j["remainder_logn_cross_se"] = rep.remainder_logn_cross_se;
    j["identity_gap"] = rep.identity_gap;
    j["total_se"] = rep.total_se;
    j["gap_over_se"] = rep.gap_over_se;
    j["remainder_ratio"] = rep.remainder_ratio;
    j["extrapolation_dbar_eq_d"] = rep.extrapolation_dbar_eq_d;
    j["samples"] = rep.samples;
    j["seed"] = rep.seed;
    if (!out_path.empty()) write_file_atomic(out_path, json_document(j, config, no_ts));
    std::cout << j.dump() << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    nf::nn::register_b_fields();

    CLI::App app{"evidence, RLCT and mean-field CAVI experiments for normal-form models"};
    app.set_help_flag("--help", "print help");  // frees -h for the exponent list
    app.require_subcommand(1);

    try {
        std::uint64_t seed = default_seed();
        double tol = 1e-8;
        int workers = 1;
        int max_iter = 10000;
        std::size_t samples = 1'000'000;
        std::string grid_spec, out_path, methods = "all", coords = "transformed", cache_path;
        bool no_ts = false;
        double n_single = 500.0;
        double wn_const_val = 0.0;
        double init_val = 0.0;

        ModelOpts mo_rlct, mo_ev, mo_bf, mo_cavi, mo_sf, mo_t23;

        auto make_sub = [&](const char* name, const char* desc) {
            CLI::App* cmd = app.add_subcommand(name, desc);
            cmd->set_help_flag("--help", "print help");
            return cmd;
        };
        auto add_common = [&](CLI::App* cmd) {
            cmd->add_option("--out", out_path, "output file path");
            cmd->add_flag("--no-timestamp", no_ts, "suppress the timestamp header line");
            cmd->add_option("--workers", workers, "worker-count hint")
                ->check(CLI::PositiveNumber);
        };

        auto* rlct = make_sub("rlct", "RLCT and multiplicity of a model");
        mo_rlct.attach(rlct);
        add_common(rlct);

        auto* ev = make_sub("evidence", "log Z_K(n) by one or more methods");
        mo_ev.attach(ev);
        ev->add_option("--n-grid", grid_spec, "a:b:count log grid or comma list")->required();
        ev->add_option("--methods", methods, "all | comma list of exact,quadrature,mc");
        ev->add_option("--samples", samples, "Monte Carlo sample count");
        ev->add_option("--seed", seed, "RNG seed (default SE_SEED env or 12345)");
        ev->add_option("--tol", tol, "absolute log-error target for quadrature");
        add_common(ev);

        auto* bf = make_sub("bounds-fit", "order fit of log Z_K(n)");
        mo_bf.attach(bf);
        bf->add_option("--n-grid", grid_spec)->required();
        bf->add_option("--tol", tol);
        add_common(bf);

        auto* cv = make_sub("cavi", "CAVI fixed points across an n-grid");
        mo_cavi.attach(cv);
        cv->add_option("--n-grid", grid_spec)->required();
        double cavi_tol = 1e-12;
        cv->add_option("--tol", cavi_tol);
        cv->add_option("--max-iter", max_iter);
        auto* initopt = cv->add_option("--init", init_val, "initial mu2");
        add_common(cv);

        auto* sf = make_sub("slope-fit", "ELBO slope over log n");
        mo_sf.attach(sf);
        sf->add_option("--n-grid", grid_spec)->required();
        double slope_tol = 1e-12;
        sf->add_option("--tol", slope_tol);
        add_common(sf);

        auto* nncmd = make_sub("nn", "tanh-network CAVI experiments");
        nncmd->add_option("--n-grid", grid_spec)->required();
        nncmd->add_option("--seed", seed);
        nncmd->add_option("--coords", coords, "transformed | original | both");
        double nn_tol = 1e-10;
        nncmd->add_option("--tol", nn_tol);
        nncmd->add_option("--max-iter", max_iter);
        nncmd->add_option("--cache", cache_path, "dataset cache file (single-n runs)");
        add_common(nncmd);

        auto* t23 = make_sub("theorem23", "evidence decomposition check");
        mo_t23.attach(t23);
        t23->add_option("--n", n_single, "sample size");
        t23->add_option("--seed", seed);
        t23->add_option("--samples", samples);
        auto* wnopt =
            t23->add_option("--wn-const", wn_const_val, "constant W process (synthetic models)");
        add_common(t23);

        try {
            app.parse(argc, argv);
        } catch (const CLI::CallForHelp& h) {
            return app.exit(h);
        } catch (const CLI::ParseError& e) {
            app.exit(e);
            return 2;
        }

        if (rlct->parsed()) return run_rlct(mo_rlct, out_path, no_ts);
        if (ev->parsed())
            return run_evidence(mo_ev, grid_spec, methods, samples, seed, tol, workers,
                                out_path, no_ts);
        if (bf->parsed()) return run_bounds_fit(mo_bf, grid_spec, tol, out_path, no_ts);
        if (cv->parsed())
            return run_cavi(mo_cavi, grid_spec, cavi_tol, max_iter,
                            initopt->count() > 0 ? std::optional<double>(init_val)
                                                 : std::nullopt,
                            out_path, no_ts);
        if (sf->parsed()) return run_slope_fit(mo_sf, grid_spec, slope_tol, out_path, no_ts);
        if (nncmd->parsed())
            return run_nn(grid_spec, seed, coords, nn_tol, max_iter, cache_path, out_path,
                          no_ts);
        if (t23->parsed())
            return run_theorem23(mo_t23, n_single, seed, samples, workers,
                                 wnopt->count() > 0 ? std::optional<double>(wn_const_val)
                                                    : std::nullopt,
                                 out_path, no_ts);
        return 2;
    } catch (const nf::numeric_error& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return 3;
    } catch (const nf::domain_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}
