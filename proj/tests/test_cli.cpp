#include <catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

namespace fs = std::filesystem;

namespace {

struct RunResult {
    int exit_code = -1;
    std::string out;
};

RunResult run_cli(const std::string& args, const std::string& env = "") {
    static int counter = 0;
    fs::path tmp = fs::temp_directory_path() / ("cli_out_" + std::to_string(counter++) + ".txt");
    std::string cmd = env + std::string(NORMFORM_CLI_PATH) + " " + args + " > " +
                      tmp.string() + " 2>/dev/null";
    int status = std::system(cmd.c_str());
    RunResult r;
    r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    std::ifstream in(tmp);
    std::stringstream ss;
    ss << in.rdbuf();
    r.out = ss.str();
    fs::remove(tmp);
    return r;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

fs::path tmpfile(const std::string& name) { return fs::temp_directory_path() / name; }

}  // namespace

TEST_CASE("cli: rlct prints the worked-case JSON") {
    auto r = run_cli("rlct --k 1,2 --h 0,0");
    REQUIRE(r.exit_code == 0);
    auto j = nlohmann::json::parse(r.out);
    CHECK(j["lambda"] == 0.25);
    CHECK(j["multiplicity"] == 1);
}

TEST_CASE("cli: slope-fit recovers -min(lambda) on the documented grid") {
    auto r = run_cli("slope-fit --lambda 0.5,0.75 --n-grid 1e2:1e6:5");
    REQUIRE(r.exit_code == 0);
    auto j = nlohmann::json::parse(r.out);
    double slope = j["slope"].get<double>();
    CHECK(slope > -0.525);
    CHECK(slope < -0.475);
}

TEST_CASE("cli: validation failures exit 2 and leave no partial output") {
    auto bad_model = tmpfile("bad_model.json");
    {
        std::ofstream out(bad_model);
        out << "{\"k\": [0, 0], \"h\": [0, 0]}";
    }
    auto out_csv = tmpfile("should_not_exist.csv");
    fs::remove(out_csv);
    auto r = run_cli("evidence --model " + bad_model.string() +
                     " --n-grid 100,1000 --out " + out_csv.string());
    CHECK(r.exit_code == 2);
    CHECK_FALSE(fs::exists(out_csv));
    fs::remove(bad_model);

    // unparsable JSON
    auto garbled = tmpfile("garbled.json");
    {
        std::ofstream out(garbled);
        out << "{not json";
    }
    auto r2 = run_cli("rlct --model " + garbled.string());
    CHECK(r2.exit_code == 2);
    fs::remove(garbled);

    // degenerate grid
    auto r3 = run_cli("bounds-fit --k 1,1 --h 0,0 --n-grid 100,200,300");
    CHECK(r3.exit_code == 2);

    // unknown flag
    auto r4 = run_cli("rlct --k 1,1 --h 0,0 --definitely-not-a-flag 3");
    CHECK(r4.exit_code == 2);
}

TEST_CASE("cli: rerun with identical config and seed is byte-identical") {
    auto out1 = tmpfile("det1.csv"), out2 = tmpfile("det2.csv");
    std::string args =
        "evidence --k 1,2 --h 0,0.5 --n-grid 1e2:1e4:3 --samples 50000 --seed 99 "
        "--no-timestamp --out ";
    REQUIRE(run_cli(args + out1.string()).exit_code == 0);
    REQUIRE(run_cli(args + out2.string()).exit_code == 0);
    CHECK(slurp(out1) == slurp(out2));

    // worker count must not change the data (config line differs by design)
    auto out3 = tmpfile("det3.csv");
    REQUIRE(run_cli(args + out3.string() + " --workers 3").exit_code == 0);
    auto data_rows = [](const std::string& s) { return s.substr(s.find("\nn,")); };
    CHECK(data_rows(slurp(out1)) == data_rows(slurp(out3)));
    fs::remove(out1);
    fs::remove(out2);
    fs::remove(out3);
}

TEST_CASE("cli: timestamp header present unless suppressed") {
    auto out1 = tmpfile("ts1.csv");
    REQUIRE(run_cli("cavi --lambda 0.5,0.75 --n-grid 1e2:1e4:3 --out " + out1.string())
                .exit_code == 0);
    CHECK(slurp(out1).find("# timestamp:") != std::string::npos);
    auto out2 = tmpfile("ts2.csv");
    REQUIRE(run_cli("cavi --lambda 0.5,0.75 --n-grid 1e2:1e4:3 --no-timestamp --out " +
                    out2.string())
                .exit_code == 0);
    CHECK(slurp(out2).find("# timestamp:") == std::string::npos);
    CHECK(slurp(out2).find("# config:") != std::string::npos);
    fs::remove(out1);
    fs::remove(out2);
}

TEST_CASE("cli: SE_SEED overrides the default seed but not an explicit one") {
    auto out1 = tmpfile("seed1.csv");
    REQUIRE(run_cli("evidence --k 1,1 --h 0,0 --n-grid 100 --methods mc --samples 2000 "
                    "--no-timestamp --out " + out1.string(),
                    "SE_SEED=777 ")
                .exit_code == 0);
    CHECK(slurp(out1).find("\"seed\":777") != std::string::npos);

    auto out2 = tmpfile("seed2.csv");
    REQUIRE(run_cli("evidence --k 1,1 --h 0,0 --n-grid 100 --methods mc --samples 2000 "
                    "--seed 5 --no-timestamp --out " + out2.string(),
                    "SE_SEED=777 ")
                .exit_code == 0);
    CHECK(slurp(out2).find("\"seed\":5") != std::string::npos);
    fs::remove(out1);
    fs::remove(out2);
}

TEST_CASE("cli: theorem23 synthetic mode reports the empty cross sum at m = 2") {
    auto r = run_cli("theorem23 --k 1,1 --h 0,0 --wn-const 0 --n 300 --samples 20000 --seed 4");
    REQUIRE(r.exit_code == 0);
    auto j = nlohmann::json::parse(r.out);
    CHECK(j["remainder_logn_cross"] == 0.0);
    CHECK(j["multiplicity"] == 2);
    CHECK(j["gap_over_se"].get<double>() < 4.0);
}

TEST_CASE("cli: nn dataset cache round-trips through the CLI") {
    auto cache = tmpfile("nn_cli_cache.bin");
    fs::remove(cache);
    auto out1 = tmpfile("nn1.csv"), out2 = tmpfile("nn2.csv");
    std::string args = "nn --n-grid 300 --coords original --seed 11 --cache " + cache.string() +
                       " --no-timestamp --out ";
    REQUIRE(run_cli(args + out1.string()).exit_code == 0);
    REQUIRE(fs::exists(cache));
    REQUIRE(run_cli(args + out2.string()).exit_code == 0);  // second run loads the cache
    CHECK(slurp(out1) == slurp(out2));
    fs::remove(cache);
    fs::remove(out1);
    fs::remove(out2);
}

TEST_CASE("cli: explicitly requested exact method fails loudly when unsupported") {
    // repeated-but-not-all-equal rates have no exact representation
    auto r = run_cli("evidence --k 1,1,2 --h 0,0,2 --n-grid 100,1000,10000 --methods exact");
    CHECK(r.exit_code == 2);
    // under --methods all the run proceeds and reports the skip
    auto r2 = run_cli(
        "evidence --k 1,1,2 --h 0,0,2 --n-grid 100 --methods all --samples 2000 "
        "--no-timestamp");
    REQUIRE(r2.exit_code == 0);
    CHECK(r2.out.find("exact_rep_skipped") != std::string::npos);
}

TEST_CASE("cli: cavi --init converges to the same fixed point") {
    auto out1 = tmpfile("init1.csv"), out2 = tmpfile("init2.csv");
    REQUIRE(run_cli("cavi --lambda 0.5,0.75 --n-grid 1e3 --init 0.05 --no-timestamp --out " +
                    out1.string())
                .exit_code == 0);
    REQUIRE(run_cli("cavi --lambda 0.5,0.75 --n-grid 1e3 --init 0.4 --no-timestamp --out " +
                    out2.string())
                .exit_code == 0);
    auto grab_mu = [&](const fs::path& p) {
        std::string s = slurp(p);
        auto pos = s.rfind('\n', s.size() - 2);
        std::string row = s.substr(pos + 1);
        auto c1 = row.find(','), c2 = row.find(',', c1 + 1);
        return std::stod(row.substr(c1 + 1, c2 - c1 - 1));
    };
    CHECK(std::abs(grab_mu(out1) - grab_mu(out2)) < 1e-8);
    fs::remove(out1);
    fs::remove(out2);
}

TEST_CASE("cli: model file with a registered prior factor is accepted") {
    auto model = tmpfile("nnj_model.json");
    {
        std::ofstream out(model);
        out << R"({"k":[1,1],"h":[0,0],"b":"named:nn_jacobian"})";
    }
    auto r = run_cli("evidence --model " + model.string() +
                     " --n-grid 100 --methods quadrature --no-timestamp");
    CHECK(r.exit_code == 0);
    fs::remove(model);
}
