#include "iiga/io.hpp"

#include <Eigen/Dense>

#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>

namespace iiga {

namespace fs = std::filesystem;

std::string format_double(double v) {
    if (v == 0.0) v = 0.0;  // normalize negative zero
    std::array<char, 40> buf{};
    const auto res = std::to_chars(buf.data(), buf.data() + buf.size(), v);
    return std::string(buf.data(), res.ptr);
}

namespace {

[[noreturn]] void fail(const std::string& path, const std::string& msg) {
    throw ConfigError(path + ": " + msg);
}

const Json& require(const Json& j, const std::string& path, const char* key) {
    if (!j.is_object()) fail(path, "expected an object");
    auto it = j.find(key);
    if (it == j.end()) fail(path + "." + key, "missing required field");
    return *it;
}

double asNumber(const Json& j, const std::string& path) {
    if (!j.is_number()) fail(path, "expected a number");
    return j.get<double>();
}

int asInt(const Json& j, const std::string& path) {
    if (!j.is_number_integer()) fail(path, "expected an integer");
    return j.get<int>();
}

std::string asString(const Json& j, const std::string& path) {
    if (!j.is_string()) fail(path, "expected a string");
    return j.get<std::string>();
}

double numberOr(const Json& j, const std::string& path, const char* key, double def) {
    if (!j.is_object() || !j.contains(key)) return def;
    return asNumber(j[key], path + "." + key);
}

int intOr(const Json& j, const std::string& path, const char* key, int def) {
    if (!j.is_object() || !j.contains(key)) return def;
    return asInt(j[key], path + "." + key);
}

std::vector<double> asDoubleArray(const Json& j, const std::string& path) {
    if (!j.is_array()) fail(path, "expected an array of numbers");
    std::vector<double> out;
    out.reserve(j.size());
    for (size_t i = 0; i < j.size(); ++i) out.push_back(asNumber(j[i], path + "[" + std::to_string(i) + "]"));
    return out;
}

Vec2 asVec2(const Json& j, const std::string& path) {
    auto v = asDoubleArray(j, path);
    if (v.size() != 2) fail(path, "expected 2 numbers");
    return {v[0], v[1]};
}

Vec3 asVec3(const Json& j, const std::string& path) {
    auto v = asDoubleArray(j, path);
    if (v.size() != 3) fail(path, "expected 3 numbers");
    return {v[0], v[1], v[2]};
}

}  // namespace

NurbsSurface surface_from_json(const Json& j, const std::string& field_path,
                               const std::string& base_dir) {
    if (j.is_object() && j.contains("file")) {
        const std::string rel = asString(j["file"], field_path + ".file");
        const fs::path p = base_dir.empty() ? fs::path(rel) : fs::path(base_dir) / rel;
        std::ifstream in(p);
        if (!in) throw IoError("cannot open surface file " + p.string());
        Json inner;
        try {
            in >> inner;
        } catch (const std::exception& e) {
            throw ConfigError(field_path + ": invalid JSON in " + p.string() + ": " + e.what());
        }
        return surface_from_json(inner, field_path + "<" + rel + ">", "");
    }

    const int du = asInt(require(j, field_path, "degree_u"), field_path + ".degree_u");
    const int dv = asInt(require(j, field_path, "degree_v"), field_path + ".degree_v");
    const auto knots_u = asDoubleArray(require(j, field_path, "knots_u"), field_path + ".knots_u");
    const auto knots_v = asDoubleArray(require(j, field_path, "knots_v"), field_path + ".knots_v");

    KnotVector ku = [&] {
        try {
            return KnotVector(knots_u, du);
        } catch (const ValidationError& e) {
            fail(field_path + ".knots_u", e.what());
        }
    }();
    KnotVector kv = [&] {
        try {
            return KnotVector(knots_v, dv);
        } catch (const ValidationError& e) {
            fail(field_path + ".knots_v", e.what());
        }
    }();

    const int n = ku.basisCount(), m = kv.basisCount();
    const Json& cps = require(j, field_path, "control_points");
    if (!cps.is_array() || static_cast<int>(cps.size()) != n * m)
        fail(field_path + ".control_points",
             "expected " + std::to_string(n * m) + " rows (row-major, u outer)");
    MatX pts(n * m, 3);
    for (int k = 0; k < n * m; ++k)
        pts.row(k) = asVec3(cps[k], field_path + ".control_points[" + std::to_string(k) + "]")
                         .transpose();

    VecX w = VecX::Ones(n * m);
    if (j.contains("weights")) {
        const auto wv = asDoubleArray(j["weights"], field_path + ".weights");
        if (static_cast<int>(wv.size()) != n * m)
            fail(field_path + ".weights", "expected " + std::to_string(n * m) + " entries");
        for (int k = 0; k < n * m; ++k) w[k] = wv[k];
    }
    try {
        return NurbsSurface(std::move(ku), std::move(kv), ControlNet(n, m, std::move(pts), std::move(w)));
    } catch (const ValidationError& e) {
        fail(field_path, e.what());
    }
}

Json surface_to_json(const NurbsSurface& s) {
    Json j;
    j["degree_u"] = s.degreeU();
    j["degree_v"] = s.degreeV();
    j["knots_u"] = s.knotU().knots();
    j["knots_v"] = s.knotV().knots();
    Json cps = Json::array();
    Json ws = Json::array();
    for (long k = 0; k < s.net().points().rows(); ++k) {
        const Vec3 p = s.net().points().row(k);
        cps.push_back(Json::array({p[0], p[1], p[2]}));
        ws.push_back(s.net().weights()[k]);
    }
    j["control_points"] = std::move(cps);
    j["weights"] = std::move(ws);
    return j;
}

void RunConfig::validate() const {
    material.validate();
    process.validate();
    settings.validate();
    if (!final_surface.has_value()) throw ConfigError("final_surface: missing");
    if (path.samples < 2) throw ConfigError("path.samples: need at least 2");
}

RunConfig parse_config_json(const Json& j, const std::string& base_dir) {
    RunConfig cfg;

    const Json& jm = require(j, "config", "material");
    cfg.material.K = asNumber(require(jm, "material", "K"), "material.K");
    cfg.material.n = asNumber(require(jm, "material", "n"), "material.n");
    cfg.material.r = asNumber(require(jm, "material", "r"), "material.r");
    cfg.material.E = asNumber(require(jm, "material", "E"), "material.E");
    cfg.material.nu = asNumber(require(jm, "material", "nu"), "material.nu");
    cfg.material.mu = asNumber(require(jm, "material", "mu"), "material.mu");
    cfg.material.t0 = numberOr(jm, "material", "t0", 1.0);
    try {
        cfg.material.validate();
    } catch (const ValidationError& e) {
        fail("material", e.what());
    }

    if (j.contains("process")) {
        const Json& jp = j["process"];
        cfg.process.blank_holder_force = numberOr(jp, "process", "blank_holder_force", 0.0);
        if (jp.contains("punch_axis"))
            cfg.process.punch_axis = asVec3(jp["punch_axis"], "process.punch_axis");
        cfg.process.die_profile_radius = numberOr(jp, "process", "die_profile_radius", 5.0);
        cfg.process.punch_profile_radius = numberOr(jp, "process", "punch_profile_radius", 5.0);
        if (jp.contains("flange_region")) {
            const Json& jf = jp["flange_region"];
            const std::string shape =
                asString(require(jf, "process.flange_region", "shape"), "process.flange_region.shape");
            if (shape == "none") {
                cfg.process.flange.shape = FlangeSpec::Shape::None;
            } else if (shape == "annulus") {
                cfg.process.flange.shape = FlangeSpec::Shape::Annulus;
                if (jf.contains("center"))
                    cfg.process.flange.center = asVec2(jf["center"], "process.flange_region.center");
                cfg.process.flange.inner_radius =
                    asNumber(require(jf, "process.flange_region", "inner_radius"),
                             "process.flange_region.inner_radius");
                cfg.process.flange.outer_radius =
                    asNumber(require(jf, "process.flange_region", "outer_radius"),
                             "process.flange_region.outer_radius");
            } else if (shape == "rectangle") {
                cfg.process.flange.shape = FlangeSpec::Shape::Rectangle;
                if (jf.contains("center"))
                    cfg.process.flange.center = asVec2(jf["center"], "process.flange_region.center");
                cfg.process.flange.inner_half =
                    asVec2(require(jf, "process.flange_region", "inner_half"),
                           "process.flange_region.inner_half");
                cfg.process.flange.outer_half =
                    asVec2(require(jf, "process.flange_region", "outer_half"),
                           "process.flange_region.outer_half");
            } else {
                fail("process.flange_region.shape", "expected none, annulus or rectangle");
            }
        }
        try {
            cfg.process.validate();
        } catch (const ValidationError& e) {
            fail("process", e.what());
        }
    }

    cfg.final_surface = surface_from_json(require(j, "config", "final_surface"),
                                          "final_surface", base_dir);
    if (j.contains("user_middle_surface"))
        cfg.user_middle_surface =
            surface_from_json(j["user_middle_surface"], "user_middle_surface", base_dir);

    if (j.contains("settings")) {
        const Json& js = j["settings"];
        cfg.settings.tol_iter = numberOr(js, "settings", "tol_iter", cfg.settings.tol_iter);
        cfg.settings.max_outer = intOr(js, "settings", "max_outer", cfg.settings.max_outer);
        cfg.settings.refine_levels =
            intOr(js, "settings", "refine_levels", cfg.settings.refine_levels);
        cfg.settings.substep_fraction =
            numberOr(js, "settings", "substep_fraction", cfg.settings.substep_fraction);
        cfg.settings.contour_tol = numberOr(js, "settings", "contour_tol", cfg.settings.contour_tol);
        cfg.settings.threads = intOr(js, "settings", "threads", cfg.settings.threads);
        try {
            cfg.settings.validate();
        } catch (const ValidationError& e) {
            fail("settings", e.what());
        }
    }

    if (j.contains("symmetry")) {
        const std::string sym = asString(j["symmetry"], "symmetry");
        if (sym == "none")
            cfg.symmetry = SymmetryMode::None;
        else if (sym == "quarter")
            cfg.symmetry = SymmetryMode::Quarter;
        else if (sym == "quarter_polar")
            cfg.symmetry = SymmetryMode::QuarterPolar;
        else
            fail("symmetry", "expected none, quarter or quarter_polar");
    }

    if (j.contains("path")) {
        const Json& jp = j["path"];
        const std::string type = asString(require(jp, "path", "type"), "path.type");
        if (type == "iso_u")
            cfg.path.type = PathSpec::Type::IsoU;
        else if (type == "iso_v")
            cfg.path.type = PathSpec::Type::IsoV;
        else if (type == "diagonal")
            cfg.path.type = PathSpec::Type::Diagonal;
        else
            fail("path.type", "expected iso_u, iso_v or diagonal");
        cfg.path.fixed = numberOr(jp, "path", "fixed", 0.0);
        cfg.path.samples = intOr(jp, "path", "samples", 200);
    }

    if (j.contains("outputs")) {
        const Json& jo = j["outputs"];
        if (!jo.is_array()) fail("outputs", "expected an array of artifact names");
        for (size_t i = 0; i < jo.size(); ++i)
            cfg.outputs.push_back(asString(jo[i], "outputs[" + std::to_string(i) + "]"));
    }
    if (j.contains("metadata")) cfg.metadata = j["metadata"];

    cfg.validate();
    return cfg;
}

RunConfig parse_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config file " + path);
    Json j;
    try {
        in >> j;
    } catch (const std::exception& e) {
        throw ConfigError(path + ": invalid JSON: " + std::string(e.what()));
    }
    return parse_config_json(j, fs::path(path).parent_path().string());
}

Json config_to_json(const RunConfig& cfg) {
    Json j;
    j["material"] = {{"K", cfg.material.K},   {"n", cfg.material.n},   {"r", cfg.material.r},
                     {"E", cfg.material.E},   {"nu", cfg.material.nu}, {"mu", cfg.material.mu},
                     {"t0", cfg.material.t0}};
    Json jp;
    jp["blank_holder_force"] = cfg.process.blank_holder_force;
    jp["punch_axis"] = {cfg.process.punch_axis[0], cfg.process.punch_axis[1],
                        cfg.process.punch_axis[2]};
    jp["die_profile_radius"] = cfg.process.die_profile_radius;
    jp["punch_profile_radius"] = cfg.process.punch_profile_radius;
    Json jf;
    switch (cfg.process.flange.shape) {
        case FlangeSpec::Shape::None:
            jf["shape"] = "none";
            break;
        case FlangeSpec::Shape::Annulus:
            jf["shape"] = "annulus";
            jf["center"] = {cfg.process.flange.center[0], cfg.process.flange.center[1]};
            jf["inner_radius"] = cfg.process.flange.inner_radius;
            jf["outer_radius"] = cfg.process.flange.outer_radius;
            break;
        case FlangeSpec::Shape::Rectangle:
            jf["shape"] = "rectangle";
            jf["center"] = {cfg.process.flange.center[0], cfg.process.flange.center[1]};
            jf["inner_half"] = {cfg.process.flange.inner_half[0], cfg.process.flange.inner_half[1]};
            jf["outer_half"] = {cfg.process.flange.outer_half[0], cfg.process.flange.outer_half[1]};
            break;
    }
    jp["flange_region"] = std::move(jf);
    j["process"] = std::move(jp);

    j["final_surface"] = surface_to_json(*cfg.final_surface);
    if (cfg.user_middle_surface)
        j["user_middle_surface"] = surface_to_json(*cfg.user_middle_surface);

    j["settings"] = {{"tol_iter", cfg.settings.tol_iter},
                     {"max_outer", cfg.settings.max_outer},
                     {"refine_levels", cfg.settings.refine_levels},
                     {"substep_fraction", cfg.settings.substep_fraction},
                     {"contour_tol", cfg.settings.contour_tol},
                     {"threads", cfg.settings.threads}};
    switch (cfg.symmetry) {
        case SymmetryMode::None: j["symmetry"] = "none"; break;
        case SymmetryMode::Quarter: j["symmetry"] = "quarter"; break;
        case SymmetryMode::QuarterPolar: j["symmetry"] = "quarter_polar"; break;
    }
    Json jpath;
    switch (cfg.path.type) {
        case PathSpec::Type::IsoU: jpath["type"] = "iso_u"; break;
        case PathSpec::Type::IsoV: jpath["type"] = "iso_v"; break;
        case PathSpec::Type::Diagonal: jpath["type"] = "diagonal"; break;
    }
    jpath["fixed"] = cfg.path.fixed;
    jpath["samples"] = cfg.path.samples;
    j["path"] = std::move(jpath);
    if (!cfg.outputs.empty()) j["outputs"] = cfg.outputs;
    if (!cfg.metadata.is_null()) j["metadata"] = cfg.metadata;
    return j;
}

// ---------------------------------------------------------------------------
// Benchmark geometry
// ---------------------------------------------------------------------------

namespace {

KnotVector uniform_knots(int degree, int num_cps) {
    const int spans = num_cps - degree;
    if (spans < 1) throw GeometryError("resolution too small for the requested degree");
    std::vector<double> knots;
    for (int k = 0; k <= degree; ++k) knots.push_back(0.0);
    for (int k = 1; k < spans; ++k) knots.push_back(static_cast<double>(k) / spans);
    for (int k = 0; k <= degree; ++k) knots.push_back(1.0);
    return KnotVector(std::move(knots), degree);
}

std::vector<double> lsqSampleParams(const KnotVector& kv, int per_span) {
    std::vector<double> out;
    for (const auto& s : kv.spans())
        for (int k = 0; k < per_span; ++k)
            out.push_back(s.lo + (s.hi - s.lo) * k / per_span);
    out.push_back(kv.maxParam());
    return out;
}

/// Tensor-product least-squares fit of a sampled map (unit weights). Denser
/// sampling than control points damps the steep-profile overshoot that exact
/// interpolation would fold into the surface.
NurbsSurface fit_grid(const KnotVector& ku, const KnotVector& kv,
                      const std::function<Vec3(double, double)>& f) {
    const int n = ku.basisCount(), m = kv.basisCount();
    const auto su = lsqSampleParams(ku, 4);
    const auto sv = lsqSampleParams(kv, 4);
    const int nsu = static_cast<int>(su.size()), nsv = static_cast<int>(sv.size());

    MatX au = MatX::Zero(nsu, n);
    for (int a = 0; a < nsu; ++a)
        for (const auto& [idx, val] : bspline_basis(ku, su[a])) au(a, idx) = val;
    MatX av = MatX::Zero(nsv, m);
    for (int a = 0; a < nsv; ++a)
        for (const auto& [idx, val] : bspline_basis(kv, sv[a])) av(a, idx) = val;
    const Eigen::LDLT<MatX> nrm_u((au.transpose() * au).eval());
    const Eigen::LDLT<MatX> nrm_v((av.transpose() * av).eval());

    MatX pts(n * m, 3);
    for (int c = 0; c < 3; ++c) {
        MatX q(nsu, nsv);
        for (int i = 0; i < nsu; ++i)
            for (int jj = 0; jj < nsv; ++jj) q(i, jj) = f(su[i], sv[jj])[c];
        const MatX stage1 = nrm_u.solve(au.transpose() * q);  // n x nsv
        const MatX fitted =
            nrm_v.solve(av.transpose() * stage1.transpose()).transpose();  // n x m
        for (int i = 0; i < n; ++i)
            for (int jj = 0; jj < m; ++jj) pts(i * m + jj, c) = fitted(i, jj);
    }
    return NurbsSurface(ku, kv, ControlNet(n, m, std::move(pts), VecX::Ones(n * m)));
}

/// Force the symmetry-edge control points exactly onto their mirror planes
/// (the least-squares fit leaves them off by its residual).
NurbsSurface snap_symmetry_edges(const NurbsSurface& s, SymmetryMode sym) {
    MatX pts = s.net().points();
    const int nu = s.countU(), nv = s.countV();
    if (sym == SymmetryMode::Quarter) {
        for (int j = 0; j < nv; ++j) pts(0 * nv + j, 0) = 0.0;
        for (int i = 0; i < nu; ++i) pts(i * nv + 0, 1) = 0.0;
    } else if (sym == SymmetryMode::QuarterPolar) {
        for (int j = 0; j < nv; ++j) pts(0 * nv + j, 0) = 0.0;
        for (int j = 0; j < nv; ++j) pts((nu - 1) * nv + j, 1) = 0.0;
    }
    return s.withPoints(std::move(pts));
}

/// Generated benchmark surfaces must not fold: det J1 > 0 on every element.
void check_unfolded(const NurbsSurface& s, const char* what) {
    for (const ElementSpan& e : extract_elements(s)) {
        try {
            jacobians(e, s, {e.umid(), e.vmid()});
        } catch (const Error&) {
            throw GeometryError(std::string(what) + ": generated surface folds at element " +
                                std::to_string(e.index) +
                                "; raise the resolution or soften the profile");
        }
    }
}

/// Arc-line-arc draw profile: die fillet from the flange plane, straight wall
/// at `wall_deg` from horizontal, punch fillet onto the bottom plane.
struct DrawProfile {
    double depth = 0, rd = 0, rp = 0, alpha = 0, run = 0;

    // Vertical drop (positive down) at horizontal distance s past the flange
    // start; 0 for s <= 0, `depth` for s >= run.
    double drop(double s) const {
        if (depth == 0.0 || s <= 0.0) return 0.0;
        if (s >= run) return depth;
        const double s1 = rd * std::sin(alpha);
        const double s2 = run - rp * std::sin(alpha);
        if (s <= s1) return rd - std::sqrt(std::max(rd * rd - s * s, 0.0));
        if (s >= s2) {
            const double t = run - s;
            return depth - (rp - std::sqrt(std::max(rp * rp - t * t, 0.0)));
        }
        return rd * (1.0 - std::cos(alpha)) + (s - s1) * std::tan(alpha);
    }
};

DrawProfile make_profile(double depth, double rd, double rp, double wall_deg) {
    DrawProfile p;
    p.depth = depth;
    p.rd = rd;
    p.rp = rp;
    p.alpha = wall_deg * M_PI / 180.0;
    if (depth == 0.0) {
        p.run = 0.0;
        return p;
    }
    const double fillet_drop = (rd + rp) * (1.0 - std::cos(p.alpha));
    if (fillet_drop > depth)
        throw GeometryError("profile fillets exceed the draw depth (increase depth or reduce "
                            "the profile radii)");
    p.run = (rd + rp) * std::sin(p.alpha) + (depth - fillet_drop) / std::tan(p.alpha);
    return p;
}

}  // namespace

RunConfig gen_box_benchmark(const BoxBenchmarkParams& bp) {
    if (bp.blank_side <= 0 || bp.depth < 0 || bp.plan_half_width <= 0)
        throw GeometryError("box benchmark: dimensions must be positive");
    if (bp.flange_start >= bp.plan_half_width)
        throw GeometryError("box benchmark: flange must start inside the plan");

    const DrawProfile prof =
        make_profile(bp.depth, bp.die_radius, bp.punch_radius, bp.wall_angle_deg);
    if (bp.depth > 0 && bp.flange_start - prof.run < 2.0)
        throw GeometryError("box benchmark: profile fillets exceed the punch half-width");

    const double eta = bp.corner_exponent;
    auto gauge = [](double x, double y, double ex) {
        return std::pow(std::pow(std::abs(x), ex) + std::pow(std::abs(y), ex), 1.0 / ex);
    };
    const double L = bp.plan_half_width;
    auto final_map = [&](double u, double v) -> Vec3 {
        const double x = L * u, y = L * v;
        return {x, y, -prof.drop(bp.flange_start - gauge(x, y, eta))};
    };

    const KnotVector ku = uniform_knots(2, bp.resolution);
    const KnotVector kv = uniform_knots(2, bp.resolution);

    RunConfig cfg;
    cfg.material = MaterialParams{};  // default sheet parameters
    cfg.material.t0 = bp.sheet_thickness;
    cfg.process.blank_holder_force = 10000.0;
    cfg.process.die_profile_radius = bp.die_radius;
    cfg.process.punch_profile_radius = bp.punch_radius;
    cfg.process.flange.shape = FlangeSpec::Shape::Rectangle;
    cfg.process.flange.center = Vec2::Zero();
    cfg.process.flange.inner_half = Vec2(bp.flange_start + 0.5, bp.flange_start + 0.5);
    cfg.process.flange.outer_half = Vec2(2.0 * L, 2.0 * L);
    cfg.final_surface =
        snap_symmetry_edges(fit_grid(ku, kv, final_map), SymmetryMode::Quarter);
    check_unfolded(*cfg.final_surface, "box final");
    if (bp.depth > 0) {
        // User middle: a partial-stroke state interpolated between the final
        // part and its own developed blank (slightly inflated so the
        // middle's blank surrounds the final's at every angle).
        SolverSettings gen_settings;
        gen_settings.tol_iter = 1e-6;
        gen_settings.max_outer = 120;
        gen_settings.refine_levels = 0;
        const Configuration final_cfg =
            Configuration::make(*cfg.final_surface, ConfigTag::Final, cfg.material);
        const OneStepResult dev = one_step_iiga(final_cfg, cfg.material, cfg.process,
                                                gen_settings, SymmetryMode::Quarter);
        const double g = bp.middle_depth_fraction;  // punch-travel fraction
        const double s = bp.middle_plan_scale;      // blank inflation for surround
        MatX mid_pts = g * cfg.final_surface->net().points() +
                       (1.0 - g) * s * dev.blank.surface.net().points();
        cfg.user_middle_surface = snap_symmetry_edges(
            cfg.final_surface->withPoints(std::move(mid_pts)), SymmetryMode::Quarter);
        check_unfolded(*cfg.user_middle_surface, "box middle");
    }
    cfg.symmetry = SymmetryMode::Quarter;
    cfg.settings.refine_levels = 1;
    cfg.path = {PathSpec::Type::Diagonal, 0.0, 200};
    cfg.metadata["benchmark"] = "box";
    cfg.metadata["blank_side_mm"] = bp.blank_side;
    cfg.metadata["depth_mm"] = bp.depth;
    cfg.metadata["note"] =
        "tool dimensions beyond blank size and depth are assumed defaults, not "
        "experiment-derived";
    cfg.validate();
    return cfg;
}

RunConfig gen_cup_benchmark(const CupBenchmarkParams& cp) {
    if (cp.punch1_radius <= cp.punch2_radius)
        throw GeometryError("cup benchmark: the first punch must be larger than the second");
    if (cp.depth2 <= cp.depth1) throw GeometryError("cup benchmark: depth2 must exceed depth1");

    const DrawProfile stage1 =
        make_profile(cp.depth1, cp.die_radius, cp.punch_radius, cp.wall_angle_deg);
    const DrawProfile stage2 = make_profile(cp.depth2 - cp.depth1, cp.die_radius,
                                            cp.punch_radius, cp.wall_angle_deg);
    const double b1 = cp.punch1_radius + stage1.run;  // stage-1 flange start radius
    const double b2 = cp.punch2_radius + stage2.run;  // stage-2 shoulder start radius
    if (b2 > cp.punch1_radius)
        throw GeometryError("cup benchmark: stage-2 profile does not fit inside the first punch");
    if (b1 + 1.0 > cp.flange_radius)
        throw GeometryError("cup benchmark: flange radius leaves no flat flange");

    auto final_z = [&](double r) {
        return -(stage1.drop(b1 - r) + stage2.drop(b2 - r));
    };
    // Polar annular-sector plan: u sweeps the quarter from the +y axis to the
    // +x axis, v runs radially from a small centre hole to the flange edge.
    // Avoids the parametric degeneracy a tensor quarter-disk patch would have.
    const double hole = cp.center_hole_radius;
    if (!(hole > 0) || hole >= cp.punch2_radius)
        throw GeometryError("cup benchmark: centre hole radius must be positive and lie "
                            "inside the second punch");
    auto polar = [&](double u, double v, double r_in, double r_out) -> Vec2 {
        const double phi = 0.5 * M_PI * u;  // 0 -> +y axis, 1 -> +x axis
        const double r = r_in + (r_out - r_in) * v;
        return {r * std::sin(phi), r * std::cos(phi)};
    };
    const double rf = cp.flange_radius;
    auto final_map = [&](double u, double v) -> Vec3 {
        const Vec2 p = polar(u, v, hole, rf);
        return {p[0], p[1], final_z(p.norm())};
    };

    const DrawProfile mid =
        make_profile(cp.middle_depth, cp.die_radius, cp.punch_radius, cp.wall_angle_deg);
    const double b1m = cp.punch1_radius + mid.run;
    if (b1m + 1.0 > cp.middle_flange_radius)
        throw GeometryError("cup benchmark: middle flange radius leaves no flat flange");
    // The user-middle blank must surround the final blank on every side, so
    // its plan carries a smaller hole and a larger flange.
    const double rfm = cp.middle_flange_radius;
    auto middle_map = [&](double u, double v) -> Vec3 {
        const Vec2 p = polar(u, v, 0.4 * hole, rfm);
        return {p[0], p[1], -mid.drop(b1m - p.norm())};
    };

    const KnotVector ku = uniform_knots(2, cp.resolution);
    const KnotVector kv = uniform_knots(2, cp.resolution);

    RunConfig cfg;
    cfg.material = MaterialParams{};
    cfg.process.blank_holder_force = 10000.0;
    cfg.process.die_profile_radius = cp.die_radius;
    cfg.process.punch_profile_radius = cp.punch_radius;
    cfg.process.flange.shape = FlangeSpec::Shape::Annulus;
    cfg.process.flange.center = Vec2::Zero();
    cfg.process.flange.inner_radius = b1 + 0.3;
    cfg.process.flange.outer_radius = cp.middle_flange_radius + 2.0;
    cfg.final_surface =
        snap_symmetry_edges(fit_grid(ku, kv, final_map), SymmetryMode::QuarterPolar);
    check_unfolded(*cfg.final_surface, "cup final");
    cfg.user_middle_surface =
        snap_symmetry_edges(fit_grid(ku, kv, middle_map), SymmetryMode::QuarterPolar);
    check_unfolded(*cfg.user_middle_surface, "cup middle");
    cfg.symmetry = SymmetryMode::QuarterPolar;
    cfg.settings.refine_levels = 1;
    cfg.path = {PathSpec::Type::IsoV, 0.0, 200};  // radial section along the y axis
    cfg.metadata["benchmark"] = "cup";
    cfg.metadata["reference_blank_diameter_mm"] = cp.reference_blank_diameter;
    cfg.metadata["expected_one_step_diameter_mm"] = 99.19;
    cfg.metadata["expected_two_step_diameter_mm"] = 99.31;
    cfg.metadata["note"] =
        "tool dimensions are assumed defaults; the reference diameters are comparison "
        "targets, not reproduction claims";
    cfg.validate();
    return cfg;
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

namespace {

int span_ordinal(const KnotVector& kv, double x) {
    const auto& spans = kv.spans();
    const int k = kv.findSpan(x);
    for (size_t s = 0; s < spans.size(); ++s)
        if (spans[s].knot_index == k) return static_cast<int>(s);
    return static_cast<int>(spans.size()) - 1;
}

std::vector<ElementRow> element_rows(const Configuration& cfg,
                                     std::span<const double> margins) {
    std::vector<ElementRow> rows;
    rows.reserve(cfg.elements.size());
    for (size_t e = 0; e < cfg.elements.size(); ++e) {
        const ElementSpan& el = cfg.elements[e];
        const MaterialState& st = cfg.states[e];
        ElementRow r;
        r.id = el.index;
        r.centroid = cfg.surface.evaluate({el.umid(), el.vmid()});
        r.eps1 = st.eps1;
        r.eps2 = st.eps2;
        r.eps3 = st.eps3;
        r.eq_strain = st.eq_strain;
        r.eq_stress = st.eq_stress;
        r.thickness = st.thickness;
        r.fld_margin = e < margins.size() ? margins[e] : 0.0;
        rows.push_back(r);
    }
    return rows;
}

std::vector<std::pair<double, double>> path_strains(const Configuration& final_cfg,
                                                    const PathSpec& path) {
    const NurbsSurface& s = final_cfg.surface;
    const int nsu = s.knotU().spanCount();
    const double u0 = s.knotU().minParam(), u1 = s.knotU().maxParam();
    const double v0 = s.knotV().minParam(), v1 = s.knotV().maxParam();

    auto paramAt = [&](double t) -> ParametricPoint {
        switch (path.type) {
            case PathSpec::Type::IsoU:
                return {u0 + t * (u1 - u0), std::clamp(path.fixed, v0, v1)};
            case PathSpec::Type::IsoV:
                return {std::clamp(path.fixed, u0, u1), v0 + t * (v1 - v0)};
            case PathSpec::Type::Diagonal:
            default:
                return {u0 + t * (u1 - u0), v0 + t * (v1 - v0)};
        }
    };

    std::vector<std::pair<double, double>> out;
    out.reserve(path.samples);
    double arc = 0.0;
    Vec3 prev = Vec3::Zero();
    for (int k = 0; k < path.samples; ++k) {
        const double t = static_cast<double>(k) / (path.samples - 1);
        const ParametricPoint pt = paramAt(t);
        const Vec3 pos = s.evaluate(pt);
        if (k > 0) arc += (pos - prev).norm();
        prev = pos;
        const int su = span_ordinal(s.knotU(), pt.u);
        const int sv = span_ordinal(s.knotV(), pt.v);
        const int e = sv * nsu + su;
        out.emplace_back(arc, final_cfg.states[e].eps3);
    }
    return out;
}

std::vector<std::array<double, 3>> fld_points(const Configuration& cfg,
                                              const MaterialParams& mat) {
    std::vector<std::array<double, 3>> out;
    out.reserve(cfg.states.size());
    for (const MaterialState& st : cfg.states)
        out.push_back({st.eps2, st.eps1, forming_limit_major(mat, st.eps2)});
    return out;
}

Json convergence_json(std::span<const ConvergenceRecord> log) {
    Json arr = Json::array();
    for (const auto& rec : log) {
        Json r;
        r["phase"] = rec.phase;
        r["refine_level"] = rec.refine_level;
        r["iteration"] = rec.iteration;
        r["max_movement"] = rec.max_movement;
        r["elastic_elements"] = rec.elastic_count;
        r["plastic_elements"] = rec.plastic_count;
        arr.push_back(std::move(r));
    }
    return arr;
}

}  // namespace

RunReport report_from_onestep(const OneStepPipeline& pipe, const RunConfig& cfg) {
    RunReport rep;
    rep.mode = "onestep";
    rep.converged = pipe.result.converged;
    rep.blank_contour = boundary_polyline(pipe.result.blank.surface, 64);
    const auto margins = fld_check(pipe.final_used.states, cfg.material);
    rep.elements = element_rows(pipe.final_used, margins);
    rep.path_strain = path_strains(pipe.final_used, cfg.path);
    rep.fld_points = fld_points(pipe.final_used, cfg.material);
    rep.convergence = pipe.log;
    rep.timings = pipe.timings;
    rep.metadata["mode"] = "onestep";
    rep.metadata["converged"] = pipe.result.converged;
    rep.metadata["iterations"] = pipe.result.iterations;
    rep.metadata["refine_levels_used"] = pipe.refine_levels_used;
    rep.metadata["config"] = config_to_json(cfg);
    return rep;
}

RunReport report_from_multistep(const MultiStepReport& ms, const RunConfig& cfg) {
    RunReport rep;
    rep.mode = "multistep";
    rep.converged = ms.converged;
    rep.blank_contour = boundary_polyline(ms.blank.surface, 64);
    rep.elements = element_rows(ms.final, ms.fld_margins);
    rep.middle_elements = element_rows(ms.middle, {});
    rep.path_strain = path_strains(ms.final, cfg.path);
    rep.fld_points = fld_points(ms.final, cfg.material);
    rep.convergence = ms.log;
    rep.timings = ms.timings;
    rep.metadata["mode"] = "multistep";
    rep.metadata["converged"] = ms.converged;
    rep.metadata["outer_iterations"] = ms.outer_iterations;
    rep.metadata["refine_levels_used"] = ms.refine_levels_used;
    rep.metadata["force_sign"] = ms.force_sign_note;
    rep.metadata["mapping"] = {{"nodes", ms.mapping.node_count},
                               {"max_inversion_residual_mm", ms.mapping.max_inversion_residual},
                               {"max_fit_error_mm", ms.mapping.max_fit_error},
                               {"regularized_fit", ms.mapping.regularized_fit}};
    rep.metadata["config"] = config_to_json(cfg);
    return rep;
}

namespace {

void write_file(const fs::path& p, const std::string& content) {
    std::ofstream out(p, std::ios::binary);
    if (!out) throw IoError("cannot open " + p.string() + " for writing");
    out << content;
    if (!out) throw IoError("write failed for " + p.string());
}

bool wanted(const std::vector<std::string>& outputs, const char* key) {
    if (outputs.empty()) return true;
    for (const auto& o : outputs)
        if (o == key) return true;
    return false;
}

}  // namespace

void write_report(const RunReport& report, const std::string& outdir,
                  const std::vector<std::string>& outputs) {
    const fs::path dir(outdir);
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create output directory " + dir.string());

    if (wanted(outputs, "contour")) {
        std::string csv = "x_mm,y_mm\n";
        for (const Vec3& p : report.blank_contour)
            csv += format_double(p[0]) + "," + format_double(p[1]) + "\n";
        write_file(dir / "contour.csv", csv);
    }
    if (wanted(outputs, "elements")) {
        std::string csv =
            "element_id,centroid_x_mm,centroid_y_mm,centroid_z_mm,eps1,eps2,eps3,"
            "eq_strain,eq_stress_MPa,thickness_mm,fld_margin\n";
        for (const ElementRow& r : report.elements) {
            csv += std::to_string(r.id);
            for (double v : {r.centroid[0], r.centroid[1], r.centroid[2], r.eps1, r.eps2, r.eps3,
                             r.eq_strain, r.eq_stress, r.thickness, r.fld_margin})
                csv += "," + format_double(v);
            csv += "\n";
        }
        write_file(dir / "elements.csv", csv);
        if (!report.middle_elements.empty()) {
            std::string mcsv =
                "element_id,centroid_x_mm,centroid_y_mm,centroid_z_mm,eps1,eps2,eps3,"
                "eq_strain,eq_stress_MPa,thickness_mm,fld_margin\n";
            for (const ElementRow& r : report.middle_elements) {
                mcsv += std::to_string(r.id);
                for (double v : {r.centroid[0], r.centroid[1], r.centroid[2], r.eps1, r.eps2,
                                 r.eps3, r.eq_strain, r.eq_stress, r.thickness, r.fld_margin})
                    mcsv += "," + format_double(v);
                mcsv += "\n";
            }
            write_file(dir / "middle_elements.csv", mcsv);
        }
    }
    if (wanted(outputs, "path")) {
        std::string csv = "arclength_mm,thickness_strain\n";
        for (const auto& [arc, eps3] : report.path_strain)
            csv += format_double(arc) + "," + format_double(eps3) + "\n";
        write_file(dir / "path_strain.csv", csv);
    }
    if (wanted(outputs, "fld")) {
        std::string csv = "eps2,eps1,flc_at_eps2\n";
        for (const auto& p : report.fld_points)
            csv += format_double(p[0]) + "," + format_double(p[1]) + "," + format_double(p[2]) +
                   "\n";
        write_file(dir / "fld.csv", csv);
    }
    if (wanted(outputs, "run")) {
        Json j;
        j["mode"] = report.mode;
        j["converged"] = report.converged;
        j["metadata"] = report.metadata;
        j["convergence"] = convergence_json(report.convergence);
        write_file(dir / "run.json", j.dump(2) + "\n");
    }
    if (wanted(outputs, "timings")) {
        // Wall-clock data; excluded from byte-determinism comparisons.
        std::string csv = "phase,seconds\n";
        for (const auto& t : report.timings)
            csv += t.phase + "," + format_double(t.seconds) + "\n";
        write_file(dir / "timings.csv", csv);
    }
}

double cup_blank_diameter(const NurbsSurface& blank) {
    // Outer boundary of a polar quarter blank: the v = max edge.
    const double u0 = blank.knotU().minParam(), u1 = blank.knotU().maxParam();
    const double v1 = blank.knotV().maxParam();
    const int n = 128;
    double sum = 0.0;
    for (int k = 0; k <= n; ++k) {
        const double t = static_cast<double>(k) / n;
        const Vec3 a = blank.evaluate({u0 + t * (u1 - u0), v1});
        sum += Vec2(a[0], a[1]).norm();
    }
    return 2.0 * sum / (n + 1);
}

}  // namespace iiga
