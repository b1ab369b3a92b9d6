#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "iiga/io.hpp"
#include "test_surfaces.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

using namespace iiga;
namespace fs = std::filesystem;

namespace {

Json minimalConfig() {
    Json j;
    j["material"] = {{"K", 545.0}, {"n", 0.2562}, {"r", 1.1},
                     {"E", 206000.0}, {"nu", 0.3}, {"mu", 0.1}};
    j["process"] = {{"blank_holder_force", 10000.0}};
    j["final_surface"] = surface_to_json(testsurf::flatPatch(4, 4, 5.0, 5.0));
    return j;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::vector<std::vector<double>> readCsv(const fs::path& p) {
    std::ifstream in(p);
    std::string line;
    std::getline(in, line);  // header
    std::vector<std::vector<double>> rows;
    while (std::getline(in, line)) {
        std::vector<double> row;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) row.push_back(std::stod(cell));
        rows.push_back(std::move(row));
    }
    return rows;
}

}  // namespace

TEST_CASE("parse_config: minimal config with the reference material values") {
    const RunConfig cfg = parse_config_json(minimalConfig());
    CHECK(cfg.material.K == 545.0);
    CHECK(cfg.material.n == 0.2562);
    CHECK(cfg.material.r == 1.1);
    CHECK(cfg.material.E == 206000.0);
    CHECK(cfg.material.nu == 0.3);
    CHECK(cfg.material.mu == 0.1);
    CHECK(cfg.material.t0 == 1.0);  // defaulted and echoed
    CHECK(cfg.process.blank_holder_force == 10000.0);
    CHECK(cfg.oneStepOnly());
    CHECK(cfg.symmetry == SymmetryMode::None);
}

TEST_CASE("parse_config: schema violations carry field paths") {
    Json j = minimalConfig();
    j["material"].erase("K");
    try {
        parse_config_json(j);
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("material.K") != std::string::npos);
    }

    Json j2 = minimalConfig();
    j2["settings"] = {{"tol_iter", "not a number"}};
    CHECK_THROWS_AS(parse_config_json(j2), ConfigError);

    Json j3 = minimalConfig();
    j3["symmetry"] = "half";
    CHECK_THROWS_AS(parse_config_json(j3), ConfigError);
}

TEST_CASE("parse_config: zero weight is rejected with the offending index") {
    Json j = minimalConfig();
    j["final_surface"]["weights"][5] = 0.0;
    try {
        parse_config_json(j);
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("weight") != std::string::npos);
        CHECK(msg.find("5") != std::string::npos);
    }
}

TEST_CASE("parse_config: non-monotone knots are named precisely") {
    Json j = minimalConfig();
    j["final_surface"]["knots_u"] = {0, 0, 0, 0.7, 0.3, 1, 1, 1};
    try {
        parse_config_json(j);
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("knots_u") != std::string::npos);
    }
}

TEST_CASE("config round trip is the identity on all fields") {
    Json j = minimalConfig();
    j["user_middle_surface"] = surface_to_json(testsurf::flatPatch(4, 4, 6.0, 6.0));
    j["settings"] = {{"tol_iter", 2e-4}, {"max_outer", 17}, {"refine_levels", 1},
                     {"substep_fraction", 0.3}, {"threads", 2}};
    j["symmetry"] = "quarter_polar";
    j["path"] = {{"type", "diagonal"}, {"samples", 77}};
    j["process"]["flange_region"] = {{"shape", "annulus"}, {"center", {1.0, 2.0}},
                                     {"inner_radius", 3.0}, {"outer_radius", 4.0}};
    const RunConfig a = parse_config_json(j);
    const RunConfig b = parse_config_json(config_to_json(a));
    CHECK(config_to_json(a) == config_to_json(b));
    CHECK(b.settings.max_outer == 17);
    CHECK(b.path.samples == 77);
    CHECK(b.symmetry == SymmetryMode::QuarterPolar);
    CHECK(b.process.flange.inner_radius == 3.0);
}

TEST_CASE("surface file references resolve relative to the config") {
    const fs::path dir = fs::temp_directory_path() / "iiga_io_test";
    fs::create_directories(dir);
    {
        std::ofstream out(dir / "surf.json");
        out << surface_to_json(testsurf::flatPatch(4, 4, 5.0, 5.0)).dump();
    }
    Json j = minimalConfig();
    j["final_surface"] = Json{{"file", "surf.json"}};
    {
        std::ofstream out(dir / "config.json");
        out << j.dump();
    }
    const RunConfig cfg = parse_config((dir / "config.json").string());
    CHECK(cfg.final_surface->countU() == 4);
    fs::remove_all(dir);
}

TEST_CASE("benchmark generators are pure") {
    const RunConfig a = gen_cup_benchmark();
    const RunConfig b = gen_cup_benchmark();
    CHECK(config_to_json(a).dump() == config_to_json(b).dump());
    const RunConfig c = gen_box_benchmark();
    const RunConfig d = gen_box_benchmark();
    CHECK(config_to_json(c).dump() == config_to_json(d).dump());
}

TEST_CASE("generators honor the requested control-net resolution") {
    BoxBenchmarkParams bp;
    bp.resolution = 38;
    const RunConfig cfg = gen_box_benchmark(bp);
    CHECK(cfg.final_surface->countU() == 38);
    CHECK(cfg.final_surface->countV() == 38);
}

TEST_CASE("box generator: zero depth degenerates to a flat patch") {
    BoxBenchmarkParams bp;
    bp.depth = 0.0;
    bp.resolution = 8;
    const RunConfig cfg = gen_box_benchmark(bp);
    CHECK(!cfg.user_middle_surface.has_value());
    const auto pts = cfg.final_surface->net().points();
    CHECK(pts.col(2).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("generators reject incompatible dimensions") {
    BoxBenchmarkParams bp;
    bp.depth = 30.0;
    bp.flange_start = 10.0;  // fillets exceed the punch half-width
    CHECK_THROWS_AS(gen_box_benchmark(bp), GeometryError);

    CupBenchmarkParams cp;
    cp.flange_radius = 30.0;  // no flat flange left
    CHECK_THROWS_AS(gen_cup_benchmark(cp), GeometryError);
}

TEST_CASE("cup generator records the reference diameters as metadata") {
    const RunConfig cfg = gen_cup_benchmark();
    CHECK(cfg.metadata["reference_blank_diameter_mm"] == 100.0);
    CHECK(cfg.metadata["expected_one_step_diameter_mm"] == 99.19);
    CHECK(cfg.metadata["expected_two_step_diameter_mm"] == 99.31);
}

TEST_CASE("cup blank diameter: exact for a flat polar annular sector") {
    // Quarter annular sector of outer radius 31: the outer edge is a circle arc.
    const int n = 12;
    const KnotVector ku = testsurf::uniformKnots(2, n), kv = testsurf::uniformKnots(2, n);
    auto polar = [&](double u, double v) -> Vec3 {
        const double phi = 0.5 * M_PI * u;
        const double r = 2.0 + 29.0 * v;
        return {r * std::sin(phi), r * std::cos(phi), 0.0};
    };
    // Control points placed on the circle leave the curve slightly inside
    // its convex hull; allow that bias.
    MatX pts(n * n, 3);
    const auto gu = ku.greville();
    const auto gv = kv.greville();
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) pts.row(i * n + j) = polar(gu[i], gv[j]).transpose();
    NurbsSurface s(ku, kv, ControlNet(n, n, pts, VecX::Ones(n * n)));
    CHECK(cup_blank_diameter(s) == doctest::Approx(62.0).epsilon(5e-3));
}

TEST_CASE("format_double: shortest round-trip representation") {
    for (double v : {0.0, -0.0, 1.0, 0.1, 1e-17, -2.5e300, 99.31, 1.0 / 3.0}) {
        const std::string s = format_double(v);
        CHECK(std::stod(s) == v);
    }
    CHECK(format_double(-0.0) == "0");  // normalized
}

TEST_CASE("write_report: deterministic bytes and lossless CSV round trip") {
    RunReport rep;
    rep.mode = "onestep";
    rep.converged = true;
    rep.blank_contour = {Vec3(0, 0, 0), Vec3(1.0 / 3.0, 0.1, 0), Vec3(2, 3.7e-5, 0)};
    ElementRow row;
    row.id = 0;
    row.centroid = Vec3(1.23456789012345, -2, 0.5);
    row.eps1 = 0.123456789012345;
    row.eps2 = -0.05;
    row.eps3 = -row.eps1 - row.eps2;
    row.eq_strain = 0.17;
    row.eq_stress = 345.678901234;
    row.thickness = 0.93;
    row.fld_margin = 0.21;
    rep.elements = {row};
    rep.path_strain = {{0.0, 0.0}, {1.5, -0.01}, {3.1, -0.033333333333333331}};
    rep.fld_points = {{-0.05, 0.123456789012345, 0.42}};
    rep.convergence = {{"one-step", 0, 1, 0.5, 10, 2}};
    rep.metadata = {{"note", "test"}};
    rep.timings = {{"solve", 0.5}};

    const fs::path dir = fs::temp_directory_path() / "iiga_report_test";
    fs::remove_all(dir);
    write_report(rep, (dir / "a").string());
    write_report(rep, (dir / "b").string());
    for (const char* f : {"contour.csv", "elements.csv", "path_strain.csv", "fld.csv",
                          "run.json"}) {
        CHECK(slurp(dir / "a" / f) == slurp(dir / "b" / f));
        CHECK(!slurp(dir / "a" / f).empty());
    }

    const auto contour = readCsv(dir / "a" / "contour.csv");
    REQUIRE(contour.size() == 3);
    CHECK(contour[1][0] == 1.0 / 3.0);
    const auto elements = readCsv(dir / "a" / "elements.csv");
    REQUIRE(elements.size() == 1);
    CHECK(elements[0][4] == row.eps1);
    CHECK(elements[0][8] == row.eq_stress);
    const auto path = readCsv(dir / "a" / "path_strain.csv");
    CHECK(path[2][1] == -0.033333333333333331);
    fs::remove_all(dir);
}

TEST_CASE("write_report honors the outputs filter") {
    RunReport rep;
    rep.mode = "onestep";
    const fs::path dir = fs::temp_directory_path() / "iiga_filter_test";
    fs::remove_all(dir);
    write_report(rep, dir.string(), {"contour"});
    CHECK(fs::exists(dir / "contour.csv"));
    CHECK(!fs::exists(dir / "elements.csv"));
    CHECK(!fs::exists(dir / "run.json"));
    fs::remove_all(dir);
}

TEST_CASE("report builders populate blank contour, elements, path and fld tables") {
    BoxBenchmarkParams bp;
    bp.resolution = 10;
    bp.depth = 12.0;  // mild, fast
    bp.wall_angle_deg = 60.0;
    bp.die_radius = 2.5;
    bp.punch_radius = 2.5;
    bp.flange_start = 50.0;
    bp.corner_exponent = 6.0;
    RunConfig cfg = gen_box_benchmark(bp);
    cfg.settings.refine_levels = 0;
    const Configuration fc = Configuration::make(*cfg.final_surface, ConfigTag::Final,
                                                 cfg.material);
    const OneStepPipeline pipe =
        one_step_pipeline(fc, cfg.material, cfg.process, cfg.settings, cfg.symmetry);
    const RunReport rep = report_from_onestep(pipe, cfg);
    CHECK(rep.mode == "onestep");
    CHECK(rep.blank_contour.size() == 4 * 64);
    CHECK(rep.elements.size() == fc.elements.size());
    CHECK(rep.fld_points.size() == fc.elements.size());
    REQUIRE(rep.path_strain.size() == 200);
    // Arclength is nondecreasing along the path.
    for (size_t k = 1; k < rep.path_strain.size(); ++k)
        CHECK(rep.path_strain[k].first >= rep.path_strain[k - 1].first);
    CHECK(!rep.metadata["config"].is_null());
}
