#include <catch_amalgamated.hpp>

#include <wzapprox/cli.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace wz;

namespace {

const fs::path kConfigs = WZ_CONFIG_DIR;

fs::path scratch(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / ("wz_cli_" + name);
    fs::remove_all(dir);
    return dir;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

struct Outcome {
    int code;
    std::string err;
};

Outcome run(std::vector<std::string> args) {
    args.insert(args.begin(), "wzsim");
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    std::ostringstream err;
    const int code = cli::dispatch(static_cast<int>(argv.size()), argv.data(), err);
    return {code, err.str()};
}

fs::path write_ini(const std::string& name, const std::string& body) {
    const fs::path p = fs::temp_directory_path() / name;
    std::ofstream(p) << body;
    return p;
}

}  // namespace

TEST_CASE("every subcommand is reproducible across runs and thread counts", "[cli]") {
    const std::vector<std::pair<std::string, std::vector<std::string>>> cmds{
        {"moments", {"moments.csv"}},          {"cjn", {"cjn.csv"}},
        {"sup", {"sup.csv"}},                  {"converge-sde", {"report.csv"}},
        {"converge-spde", {"report.csv"}},     {"decompose", {"decompose.csv"}},
        {"lemmas", {"lemmas.csv"}},
    };
    const std::string ini = (kConfigs / "smoke.ini").string();
    for (const auto& [cmd, files] : cmds) {
        const fs::path a = scratch(cmd + "_a"), b = scratch(cmd + "_b"), c = scratch(cmd + "_c");
        REQUIRE(run({cmd, "--config", ini, "--seed", "3", "--out", a.string()}).code == 0);
        REQUIRE(run({cmd, "--config", ini, "--seed", "3", "--out", b.string()}).code == 0);
        REQUIRE(run({cmd, "--config", ini, "--seed", "3", "--out", c.string(), "--threads", "4"}).code == 0);
        for (const auto& f : files) {
            INFO(cmd << " " << f);
            CHECK_FALSE(slurp(a / f).empty());
            CHECK(slurp(a / f) == slurp(b / f));
            CHECK(slurp(a / f) == slurp(c / f));
        }
        const auto manifest = nlohmann::json::parse(slurp(a / "manifest.json"));
        CHECK(manifest["status"] == "ok");
        CHECK(manifest["subcommand"] == cmd);
        CHECK(manifest["seed"] == 3);
        for (const auto& f : files) CHECK(std::find(manifest["outputs"].begin(), manifest["outputs"].end(), f) != manifest["outputs"].end());
        for (const auto& d : {a, b, c}) fs::remove_all(d);
    }
}

TEST_CASE("CLI report equals the library report", "[cli]") {
    const fs::path out = scratch("equiv");
    REQUIRE(run({"converge-sde", "--config", (kConfigs / "smoke.ini").string(), "--seed", "9", "--out", out.string()})
                .code == 0);
    ExperimentConfig cfg;
    cfg.system = "gbm";
    cfg.deltas = {0x1p-3, 0x1p-4, 0x1p-5};
    cfg.replicas = 64;
    cfg.ref_divisor = 4;
    cfg.seed = 9;
    std::ostringstream os;
    write_report_csv(os, run_convergence(cfg));
    CHECK(slurp(out / "report.csv") == os.str());
    fs::remove_all(out);
}

TEST_CASE("invalid input exits with code 1", "[cli]") {
    const fs::path out = scratch("bad");
    SECTION("missing config file names the path") {
        const Outcome o = run({"moments", "--config", "/nonexistent/x.ini", "--seed", "1", "--out", out.string()});
        CHECK(o.code == 1);
        CHECK(o.err.find("/nonexistent/x.ini") != std::string::npos);
        const auto manifest = nlohmann::json::parse(slurp(out / "manifest.json"));
        CHECK(manifest["status"] == "error");
        CHECK(manifest["outputs"].empty());
    }
    SECTION("unknown key") {
        const fs::path ini = write_ini("wz_unknown.ini", "[sup]\npaths = 10\nbogus = 1\n");
        const Outcome o = run({"sup", "--config", ini.string(), "--seed", "1", "--out", out.string()});
        CHECK(o.code == 1);
        CHECK(o.err.find("bogus") != std::string::npos);
    }
    SECTION("bad value") {
        const fs::path ini = write_ini("wz_badvalue.ini", "[converge-sde]\nreplicas = many\n");
        CHECK(run({"converge-sde", "--config", ini.string(), "--seed", "1", "--out", out.string()}).code == 1);
    }
    SECTION("missing seed") { CHECK(run({"moments", "--out", out.string()}).code == 1); }
    SECTION("unknown subcommand") { CHECK(run({"simulate", "--seed", "1"}).code == 1); }
    SECTION("thread count out of range") { CHECK(run({"moments", "--seed", "1", "--threads", "0"}).code == 1); }
    fs::remove_all(out);
}

TEST_CASE("numerical abort exits with code 2", "[cli]") {
    const fs::path out = scratch("abort");
    const fs::path ini = write_ini("wz_abort.ini",
                                   "[converge-spde]\ndeltas = 2^-3,2^-4,2^-5\nreplicas = 4\nbasis_size = 4\n"
                                   "ref_divisor = 4\nbound = 0.3\n");
    const Outcome o = run({"converge-spde", "--config", ini.string(), "--seed", "1", "--out", out.string()});
    CHECK(o.code == 2);
    CHECK(o.err.find("replica") != std::string::npos);
    const auto manifest = nlohmann::json::parse(slurp(out / "manifest.json"));
    CHECK(manifest["status"] == "numerical_abort");
    fs::remove_all(out);
}

TEST_CASE("the installed binary reports exit codes", "[cli]") {
    const std::string bin = WZSIM_PATH;
    const fs::path out = scratch("proc");
    auto status = [](const std::string& cmd) {
        const int raw = std::system((cmd + " >/dev/null 2>&1").c_str());
        return WEXITSTATUS(raw);
    };
    CHECK(status(bin + " --version") == 0);
    CHECK(status(bin + " sup --config " + (kConfigs / "smoke.ini").string() + " --seed 1 --out " + out.string()) == 0);
    CHECK(fs::exists(out / "sup.csv"));
    CHECK(status(bin + " sup --config /nonexistent.ini --seed 1 --out " + out.string()) == 1);
    fs::remove_all(out);
}
