#include <doctest.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include <unistd.h>

#include "capmfg/error.hpp"
#include "capmfg/scenario.hpp"
#include "fixtures.hpp"

using namespace capmfg;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

fs::path scratch(const std::string& leaf) {
    const fs::path dir = fs::temp_directory_path() / ("capmfg-test-" + std::to_string(::getpid())) / leaf;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

json small_ansatz_doc() {
    json params = fixtures::small_doc();
    return {{"name", "small-ansatz"},
            {"model", "heterogeneous"},
            {"method", "ansatz"},
            {"params", params},
            {"grids", {{"n_t", 401}, {"n_x", 101}}},
            {"solver", {{"rate_update", "local"}}}};
}

json hom_doc() {
    return {{"name", "hom"}, {"model", "homogeneous"}, {"method", "shooting"}, {"params", fixtures::base_doc()},
            {"grids", {{"n_t", 2001}}}, {"checks", json::array({{{"metric", "t_star"}, {"target", 0.25}, {"tol", 0.05}}})}};
}

std::string error_of(const json& doc) {
    try {
        parse_scenario(doc);
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::validation);
        return e.what();
    }
    return "";
}

json read_json(const fs::path& f) {
    std::ifstream in(f);
    return json::parse(in);
}

}  // namespace

TEST_CASE("bundled scenarios round-trip through the canonical form") {
    int seen = 0;
    for (const auto& entry : fs::directory_iterator(CAPMFG_SCENARIO_DIR)) {
        if (entry.path().extension() != ".json") continue;
        CAPTURE(entry.path().string());
        const ScenarioConfig c = load_scenario(entry.path());
        CHECK(parse_scenario(to_json(c)) == c);
        CHECK(to_json(parse_scenario(to_json(c))) == to_json(c));
        ++seen;
    }
    CHECK(seen >= 13);
}

TEST_CASE("config errors name the field path") {
    json doc = hom_doc();
    doc["params"].erase("price");
    CHECK(error_of(doc).find("params.price") != std::string::npos);

    doc = hom_doc();
    doc["solver"] = {{"outer_tol", 1e-6}, {"typo_knob", 1}};
    CHECK(error_of(doc).find("solver.typo_knob") != std::string::npos);

    doc = hom_doc();
    doc["params"]["units"]["alpha"] = "parsec";
    CHECK(error_of(doc).find("alpha") != std::string::npos);

    doc = hom_doc();
    doc["grids"]["n_t"] = "many";
    CHECK(error_of(doc).find("grids.n_t") != std::string::npos);

    doc = hom_doc();
    doc["method"] = "semi_explicit";
    doc["params"]["price"] = {{"kind", "inverse"}, {"p", 6.5e6}};
    CHECK_FALSE(error_of(doc).empty());

    doc = small_ansatz_doc();
    doc["method"] = "shooting";
    CHECK_FALSE(error_of(doc).empty());

    doc = small_ansatz_doc();
    doc["params"]["sigma"] = 0.2;
    CHECK_FALSE(error_of(doc).empty());
}

TEST_CASE("exit codes are a stable contract") {
    CHECK(exit_code(ErrorKind::validation) == 2);
    CHECK(exit_code(ErrorKind::convergence) == 3);
    CHECK(exit_code(ErrorKind::divergence) == 3);
    CHECK(exit_code(ErrorKind::stability) == 3);
    CHECK(exit_code(ErrorKind::io) == 4);
}

TEST_CASE("reruns give identical file digests") {
    const ScenarioConfig c = parse_scenario(hom_doc());
    const RunResult a = run_scenario(c, scratch("digest-a"));
    const RunResult b = run_scenario(c, scratch("digest-b"));
    REQUIRE(a.manifest.files.size() == b.manifest.files.size());
    for (std::size_t i = 0; i < a.manifest.files.size(); ++i) {
        CHECK(a.manifest.files[i].name == b.manifest.files[i].name);
        CHECK(a.manifest.files[i].sha256 == b.manifest.files[i].sha256);
    }
    CHECK(a.manifest.config_hash == b.manifest.config_hash);
    CHECK(a.manifest.summary.at("t_star") == doctest::Approx(0.25).epsilon(0.2));
    CHECK(sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST_CASE("manifest lists every emitted file with its digest") {
    const fs::path dir = scratch("manifest");
    run_scenario(parse_scenario(small_ansatz_doc()), dir);
    const json m = read_json(dir / "manifest.json");
    std::size_t listed = 0;
    for (const auto& f : m.at("files")) {
        const fs::path p = dir / f.at("name").get<std::string>();
        REQUIRE(fs::exists(p));
        std::ifstream in(p, std::ios::binary);
        std::ostringstream s;
        s << in.rdbuf();
        CHECK(sha256_hex(s.str()) == f.at("sha256").get<std::string>());
        ++listed;
    }
    std::size_t on_disk = 0;
    for (const auto& e : fs::directory_iterator(dir)) on_disk += e.path().filename() != "manifest.json";
    CHECK(listed == on_disk);
}

TEST_CASE("plot data: two series for homogeneous runs, four for population runs") {
    const fs::path hom = scratch("plot-hom");
    run_scenario(parse_scenario(hom_doc()), hom);
    CHECK(emit_plotdata(hom).size() == 2);

    const fs::path het = scratch("plot-het");
    run_scenario(parse_scenario(small_ansatz_doc()), het);
    const auto files = emit_plotdata(het);
    CHECK(files.size() == 4);
    const json grids = read_json(het / "meta.json").at("grids");
    const double dx = grids.at("x_max").get<double>() / (grids.at("n_x").get<double>() - 1);
    std::ifstream in(het / "plotdata" / "density_snapshots.csv");
    std::string line;
    std::getline(in, line);
    CHECK(line == "x,m_t0,m_T");
    double m0 = 0.0, mT = 0.0;
    while (std::getline(in, line)) {
        double x, a, b;
        char c1, c2;
        std::istringstream(line) >> x >> c1 >> a >> c2 >> b;
        m0 += a * dx;
        mT += b * dx;
    }
    CHECK(std::abs(m0 - 1) <= 1e-9);
    CHECK(std::abs(mT - 1) <= 1e-9);

    CHECK_THROWS_AS(emit_plotdata(scratch("empty")), Error);
}

TEST_CASE("non-convergence still writes the partial outputs") {
    json doc = small_ansatz_doc();
    doc["solver"]["max_outer"] = 1;
    doc["solver"]["outer"] = "picard";
    const fs::path dir = scratch("partial");
    try {
        run_scenario(parse_scenario(doc), dir);
        FAIL("converged in one step");
    } catch (const Error& e) {
        CHECK(exit_code(e.kind()) == 3);
    }
    CHECK(fs::exists(dir / "equilibrium.csv"));
    CHECK(fs::exists(dir / "manifest.json"));
    CHECK_FALSE(read_json(dir / "manifest.json").at("converged").get<bool>());
}

TEST_CASE("command line exit codes") {
    const fs::path dir = scratch("cli");
    auto run = [&](const std::string& args) {
        const std::string cmd = std::string(CAPMFG_CLI) + " " + args + " > " + (dir / "out.txt").string() + " 2>&1";
        const int status = std::system(cmd.c_str());
        return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    };
    auto write = [&](const std::string& name, const json& doc) {
        std::ofstream(dir / name) << doc.dump(2);
        return (dir / name).string();
    };

    CHECK(run("solve --config " + write("ok.json", hom_doc()) + " --out " + (dir / "ok").string()) == 0);
    CHECK(run("emit-plotdata --run " + (dir / "ok").string()) == 0);

    json no_price = hom_doc();
    no_price["params"].erase("price");
    CHECK(run("solve --config " + write("bad.json", no_price)) == 2);
    std::ifstream msg(dir / "out.txt");
    std::stringstream text;
    text << msg.rdbuf();
    CHECK(text.str().find("params.price") != std::string::npos);

    std::ofstream(dir / "broken.json") << "{ \"name\": ";
    CHECK(run("solve --config " + (dir / "broken.json").string()) == 2);
    CHECK(run("solve") == 2);

    json stuck = small_ansatz_doc();
    stuck["solver"]["max_outer"] = 1;
    stuck["solver"]["outer"] = "picard";
    CHECK(run("solve --config " + write("stuck.json", stuck) + " --out " + (dir / "stuck").string()) == 3);

    CHECK(run("solve --config " + write("io.json", hom_doc()) + " --out /proc/capmfg-nowhere") == 4);
    CHECK(run("emit-plotdata --run " + (dir / "missing").string()) == 4);
}
