#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

#include "bigsel/matstore.hpp"
#include "bigsel/rng.hpp"
#include "testutil.hpp"

namespace {

struct RunResult {
    int exit_code = -1;
    std::string out;
    std::string err;
};

std::string slurp(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

RunResult run_cli(const testutil::TempDir& dir, const std::string& args) {
    const auto out_path = dir / "cli_stdout.txt";
    const auto err_path = dir / "cli_stderr.txt";
    const std::string cmd = std::string(BIGSEL_CLI_PATH) + " " + args + " > " +
                            out_path.string() + " 2> " + err_path.string();
    const int status = std::system(cmd.c_str());
    RunResult r;
    r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.out = slurp(out_path);
    r.err = slurp(err_path);
    return r;
}

// Small CSV dataset with a strong first predictor.
void write_csv_dataset(const std::filesystem::path& x_csv,
                       const std::filesystem::path& y_csv, std::size_t n,
                       std::size_t p, std::uint64_t seed) {
    bigsel::rng::NormalSampler normal(seed);
    std::vector<std::vector<double>> x(n, std::vector<double>(p));
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < p; ++j) x[i][j] = normal.next();
    std::ofstream xf(x_csv);
    xf.precision(17);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < p; ++j) xf << (j ? "," : "") << x[i][j];
        xf << "\n";
    }
    std::ofstream yf(y_csv);
    yf.precision(17);
    for (std::size_t i = 0; i < n; ++i)
        yf << 5.0 * x[i][0] + 3.0 * x[i][1] + 0.3 * normal.next() << "\n";
}

}  // namespace

TEST_CASE("select runs end to end on CSV inputs and reproduces byte-identically") {
    testutil::TempDir dir("cli");
    write_csv_dataset(dir / "X.csv", dir / "y.csv", 40, 20, 2024);

    const std::string base =
        "select --x " + (dir / "X.csv").string() + " --y " + (dir / "y.csv").string() +
        " --alpha 0.2 --k 6 --l 200 --strategy s1 --seed 7 --workdir " +
        (dir / "wd").string() + " --out " + (dir / "result.json").string();

    const RunResult first = run_cli(dir, base);
    CHECK(first.exit_code == 0);
    REQUIRE(std::filesystem::exists(dir / "result.json"));
    REQUIRE(std::filesystem::exists(dir / "wd" / "manifest.json"));

    const std::string result_one = slurp(dir / "result.json");
    const auto parsed = nlohmann::json::parse(result_one);
    CHECK(parsed.contains("selected"));
    CHECK(parsed.contains("v_star"));
    CHECK(parsed.contains("T_star"));
    CHECK(parsed.contains("fdp_trace"));
    const auto selected = parsed["selected"].get<std::vector<std::uint32_t>>();
    CHECK(std::find(selected.begin(), selected.end(), 0u) != selected.end());

    const RunResult second = run_cli(dir, base);
    CHECK(second.exit_code == 0);
    CHECK(slurp(dir / "result.json") == result_one);
}

TEST_CASE("l auto expands to ten times the variable count") {
    testutil::TempDir dir("cli");
    write_csv_dataset(dir / "X.csv", dir / "y.csv", 30, 12, 5);
    const RunResult r = run_cli(
        dir, "select --x " + (dir / "X.csv").string() + " --y " +
                 (dir / "y.csv").string() + " --alpha 0.2 --k 4 --l auto --seed 3" +
                 " --workdir " + (dir / "wd").string() + " --out " +
                 (dir / "r.json").string());
    CHECK(r.exit_code == 0);
    const auto manifest = nlohmann::json::parse(slurp(dir / "wd" / "manifest.json"));
    CHECK(manifest["config"]["L"].get<std::size_t>() == 120);
    CHECK(manifest["outcome"] == "ok");
}

TEST_CASE("missing required flags exit with code 2 naming the flag") {
    testutil::TempDir dir("cli");
    write_csv_dataset(dir / "X.csv", dir / "y.csv", 10, 4, 1);
    const RunResult r =
        run_cli(dir, "select --x " + (dir / "X.csv").string());
    CHECK(r.exit_code == 2);
    CHECK(r.err.find("--y") != std::string::npos);
}

TEST_CASE("storage problems exit with code 3") {
    testutil::TempDir dir("cli");
    const RunResult r = run_cli(
        dir, "select --x /nonexistent/X.fbm --y /nonexistent/y.csv --workdir " +
                 (dir / "wd").string());
    CHECK(r.exit_code == 3);
}

TEST_CASE("digest violations exit with code 4") {
    testutil::TempDir dir("cli");
    write_csv_dataset(dir / "X.csv", dir / "y.csv", 25, 10, 9);
    const std::string base =
        "select --x " + (dir / "X.csv").string() + " --y " + (dir / "y.csv").string() +
        " --alpha 0.2 --k 4 --l 40 --strategy fresh --seed 11 --workdir " +
        (dir / "wd").string() + " --out " + (dir / "r.json").string();
    REQUIRE(run_cli(dir, base).exit_code == 0);

    // Corrupt one dummy entry of experiment 1's enlarged design, then resume.
    {
        bigsel::StoredMatrix enlarged = bigsel::StoredMatrix::open(
            dir / "wd" / "enlarged_k1.fbm", bigsel::AccessMode::ReadWrite);
        enlarged.set(0, 10, enlarged.get(0, 10) + 0.5);
        enlarged.flush();
    }

    // A complete journal replays recorded rounds without touching matrices.
    const RunResult replay = run_cli(dir, base + " --resume");
    CHECK(replay.exit_code == 0);

    // Once real computation must resume, the tampering is detected.
    std::filesystem::remove(dir / "wd" / "progress.json");
    const RunResult r = run_cli(dir, base + " --resume");
    CHECK(r.exit_code == 4);
    CHECK(r.err.find("digest") != std::string::npos);
}

TEST_CASE("feasibility reproduces the dense-RAM headline number") {
    testutil::TempDir dir("cli");
    const RunResult r = run_cli(dir, "feasibility --n 10000 --p 1000000 --l p --k 20");
    CHECK(r.exit_code == 0);
    CHECK(r.out.find("74.5 GiB") != std::string::npos);
    // fresh: 8n(p + K*2p) bytes; permuted: 8n*3p bytes
    CHECK(r.out.find(std::to_string(8ull * 10000 * (1000000ull + 20 * 2000000ull))) !=
          std::string::npos);
    CHECK(r.out.find(std::to_string(8ull * 10000 * 3000000ull)) != std::string::npos);
}

TEST_CASE("import converts CSV to the binary format") {
    testutil::TempDir dir("cli");
    std::ofstream(dir / "m.csv") << "a,b\n1,2\n3,4\n5,6\n";
    const RunResult r = run_cli(dir, "import --csv " + (dir / "m.csv").string() +
                                         " --out " + (dir / "m.fbm").string());
    CHECK(r.exit_code == 0);
    bigsel::StoredMatrix m =
        bigsel::StoredMatrix::open(dir / "m.fbm", bigsel::AccessMode::ReadOnly);
    CHECK(m.rows() == 3);
    CHECK(m.cols() == 2);
    CHECK(m.get(2, 1) == 6.0);

    // Refusal to overwrite surfaces as a storage error.
    const RunResult again = run_cli(dir, "import --csv " + (dir / "m.csv").string() +
                                             " --out " + (dir / "m.fbm").string());
    CHECK(again.exit_code == 3);
}

TEST_CASE("validate-dummies reports the alignment deviation") {
    testutil::TempDir dir("cli");
    const RunResult r = run_cli(
        dir, "validate-dummies --strategy s2 --n 50 --l 60 --k-list 2,3 --seed 4 "
             "--out " + (dir / "qq.csv").string());
    CHECK(r.exit_code == 0);
    CHECK(r.out.find("max bulk deviation") != std::string::npos);
    REQUIRE(std::filesystem::exists(dir / "qq.csv"));
    std::ifstream qq(dir / "qq.csv");
    std::string header;
    std::getline(qq, header);
    CHECK(header == "k,permuted_quantile,fresh_quantile");
}

TEST_CASE("workdir falls back to the environment variable") {
    testutil::TempDir dir("cli");
    write_csv_dataset(dir / "X.csv", dir / "y.csv", 20, 6, 13);
    ::setenv("BIGSEL_WORKDIR", (dir / "env_wd").string().c_str(), 1);
    const RunResult r = run_cli(
        dir, "select --x " + (dir / "X.csv").string() + " --y " +
                 (dir / "y.csv").string() +
                 " --alpha 0.25 --k 4 --l 30 --seed 2 --out " +
                 (dir / "r.json").string());
    ::unsetenv("BIGSEL_WORKDIR");
    CHECK(r.exit_code == 0);
    CHECK(std::filesystem::exists(dir / "env_wd" / "manifest.json"));
}
