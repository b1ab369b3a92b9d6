#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "iiga/nurbs.hpp"
#include "test_surfaces.hpp"

#include <cmath>
#include <random>

using namespace iiga;

namespace {

// Independent naive Cox–de Boor recursion (the oracle for basis values).
double naiveBasis(const std::vector<double>& U, int i, int p, double xi) {
    const double last = U.back();
    if (p == 0) {
        if (U[i] <= xi && xi < U[i + 1]) return 1.0;
        if (xi == last && U[i + 1] == last && U[i] < U[i + 1]) return 1.0;  // closed last span
        return 0.0;
    }
    double a = 0.0, b = 0.0;
    if (U[i + p] > U[i]) a = (xi - U[i]) / (U[i + p] - U[i]) * naiveBasis(U, i, p - 1, xi);
    if (U[i + p + 1] > U[i + 1])
        b = (U[i + p + 1] - xi) / (U[i + p + 1] - U[i + 1]) * naiveBasis(U, i + 1, p - 1, xi);
    return a + b;
}

// Dense grid search refined by pattern shrinking (the point-inversion oracle).
ParametricPoint gridSearchClosest(const NurbsSurface& s, const Vec3& target) {
    const double u0 = s.knotU().minParam(), u1 = s.knotU().maxParam();
    const double v0 = s.knotV().minParam(), v1 = s.knotV().maxParam();
    double bu = u0, bv = v0, best = 1e300;
    const int n = 160;
    for (int i = 0; i <= n; ++i)
        for (int j = 0; j <= n; ++j) {
            const double u = u0 + (u1 - u0) * i / n;
            const double v = v0 + (v1 - v0) * j / n;
            const double d = (s.evaluate({u, v}) - target).squaredNorm();
            if (d < best) {
                best = d;
                bu = u;
                bv = v;
            }
        }
    double hu = (u1 - u0) / n, hv = (v1 - v0) / n;
    for (int iter = 0; iter < 60; ++iter) {
        bool improved = false;
        for (int di = -1; di <= 1; ++di)
            for (int dj = -1; dj <= 1; ++dj) {
                const double u = std::clamp(bu + di * hu, u0, u1);
                const double v = std::clamp(bv + dj * hv, v0, v1);
                const double d = (s.evaluate({u, v}) - target).squaredNorm();
                if (d < best) {
                    best = d;
                    bu = u;
                    bv = v;
                    improved = true;
                }
            }
        if (!improved) {
            hu *= 0.5;
            hv *= 0.5;
        }
    }
    return {bu, bv};
}

}  // namespace

TEST_CASE("bspline basis: clamped endpoint interpolates") {
    KnotVector kv({0, 0, 0, 1, 1, 1}, 2);
    auto b = bspline_basis(kv, 0.0);
    REQUIRE(b.size() == 3);
    CHECK(b[0].first == 0);
    CHECK(b[0].second == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(std::abs(b[1].second) < 1e-15);
    CHECK(std::abs(b[2].second) < 1e-15);
}

TEST_CASE("bspline basis: quadratic Bernstein values at midpoint") {
    KnotVector kv({0, 0, 0, 1, 1, 1}, 2);
    auto b = bspline_basis(kv, 0.5);
    CHECK(b[0].second == doctest::Approx(0.25).epsilon(1e-14));
    CHECK(b[1].second == doctest::Approx(0.5).epsilon(1e-14));
    CHECK(b[2].second == doctest::Approx(0.25).epsilon(1e-14));
}

TEST_CASE("bspline basis matches the naive recursion oracle") {
    const std::vector<double> knots{0, 0, 0, 0.5, 1, 1, 1};
    KnotVector kv(knots, 2);
    for (double xi : {0.25, 0.1, 0.5, 0.75, 0.999, 1.0}) {
        auto b = bspline_basis(kv, xi);
        for (auto& [idx, val] : b)
            CHECK(val == doctest::Approx(naiveBasis(knots, idx, 2, xi)).epsilon(1e-13));
        // And the functions outside the active span vanish.
        double total = 0.0;
        for (auto& [idx, val] : b) total += val;
        CHECK(total == doctest::Approx(1.0).epsilon(1e-13));
    }
}

TEST_CASE("bspline basis: partition of unity and non-negativity on random knots") {
    std::mt19937 rng(11);
    std::uniform_real_distribution<double> xi(0.0, 1.0);
    KnotVector kv({0, 0, 0, 0.2, 0.2, 0.55, 0.8, 1, 1, 1}, 2);
    for (int k = 0; k < 1000; ++k) {
        const double x = xi(rng);
        double sum = 0.0;
        for (auto& [idx, val] : bspline_basis(kv, x)) {
            CHECK(val >= -1e-15);
            sum += val;
        }
        CHECK(std::abs(sum - 1.0) <= 1e-12);
    }
}

TEST_CASE("bspline basis: out-of-range parameter is a domain error") {
    KnotVector kv({0, 0, 0, 1, 1, 1}, 2);
    CHECK_THROWS_AS(bspline_basis(kv, -0.1), DomainError);
    CHECK_THROWS_AS(bspline_basis(kv, 1.1), DomainError);
}

TEST_CASE("knot vector validation") {
    CHECK_THROWS_AS(KnotVector({0, 0, 1, 1}, 2), ValidationError);       // not clamped
    CHECK_THROWS_AS(KnotVector({0, 0, 0, -1, 1, 1, 1}, 2), ValidationError);  // decreasing
    CHECK_THROWS_AS(KnotVector({0, 0, 0, 0.5, 0.5, 0.5, 1, 1, 1}, 2),
                    ValidationError);  // interior multiplicity > degree
}

TEST_CASE("nurbs 1d basis: unit weights reduce to the B-spline basis") {
    KnotVector kv({0, 0, 0, 0.5, 1, 1, 1}, 2);
    std::vector<double> w{1, 1, 1, 1};
    for (double xi : {0.2, 0.5, 0.9}) {
        auto a = bspline_basis(kv, xi);
        auto b = nurbs_basis_1d(kv, w, xi);
        for (size_t k = 0; k < a.size(); ++k)
            CHECK(a[k].second == doctest::Approx(b[k].second).epsilon(1e-14));
    }
}

TEST_CASE("nurbs 1d basis: common weight scale cancels") {
    KnotVector kv({0, 0, 0, 0.5, 1, 1, 1}, 2);
    std::vector<double> w{1.0, 2.0, 0.5, 1.5};
    std::vector<double> w3{3.0, 6.0, 1.5, 4.5};
    for (double xi : {0.1, 0.6, 1.0}) {
        auto a = nurbs_basis_1d(kv, w, xi);
        auto b = nurbs_basis_1d(kv, w3, xi);
        for (size_t k = 0; k < a.size(); ++k)
            CHECK(a[k].second == doctest::Approx(b[k].second).epsilon(1e-14));
    }
}

TEST_CASE("nurbs 1d basis: hand-evaluated rational values") {
    // Bernstein numerators 0.25 / 0.5 / 0.25 with weights 1, 2, 1.
    KnotVector kv({0, 0, 0, 1, 1, 1}, 2);
    std::vector<double> w{1, 2, 1};
    auto b = nurbs_basis_1d(kv, w, 0.5);
    CHECK(b[0].second == doctest::Approx(1.0 / 6.0).epsilon(1e-14));
    CHECK(b[1].second == doctest::Approx(2.0 / 3.0).epsilon(1e-14));
    CHECK(b[2].second == doctest::Approx(1.0 / 6.0).epsilon(1e-14));
}

TEST_CASE("nurbs 1d basis: non-positive weight rejected") {
    KnotVector kv({0, 0, 0, 1, 1, 1}, 2);
    std::vector<double> w{1, 0, 1};
    CHECK_THROWS_AS(nurbs_basis_1d(kv, w, 0.5), ValidationError);
}

TEST_CASE("surface evaluation stays in the plane of a planar net") {
    auto s = testsurf::flatPatch(5, 7, 8.0, 6.0);
    std::mt19937 rng(3);
    std::uniform_real_distribution<double> t(0.0, 1.0);
    for (int k = 0; k < 50; ++k) {
        const Vec3 p = s.evaluate({t(rng), t(rng)});
        CHECK(std::abs(p[2]) < 1e-13);
    }
}

TEST_CASE("surface corners interpolate the corner control points") {
    auto s = testsurf::wavyPatch();
    CHECK((s.evaluate({0, 0}) - s.corner(0, 0)).norm() < 1e-13);
    CHECK((s.evaluate({1, 0}) - s.corner(1, 0)).norm() < 1e-13);
    CHECK((s.evaluate({0, 1}) - s.corner(0, 1)).norm() < 1e-13);
    CHECK((s.evaluate({1, 1}) - s.corner(1, 1)).norm() < 1e-13);
}

TEST_CASE("degree-2 net with collinear midpoints reproduces the bilinear map") {
    // Single-span Bezier patch whose middle control points are edge midpoints:
    // the parameterization collapses to the bilinear interpolation of corners.
    const Vec3 c00(0, 0, 0), c10(4, 0.5, 0), c01(0.5, 3, 1), c11(5, 4, 2);
    MatX pts(9, 3);
    auto lerp = [](const Vec3& a, const Vec3& b, double t) { return (1 - t) * a + t * b; };
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) {
            const Vec3 bottom = lerp(c00, c10, i / 2.0);
            const Vec3 top = lerp(c01, c11, i / 2.0);
            pts.row(i * 3 + j) = lerp(bottom, top, j / 2.0).transpose();
        }
    NurbsSurface s(KnotVector({0, 0, 0, 1, 1, 1}, 2), KnotVector({0, 0, 0, 1, 1, 1}, 2),
                   ControlNet(3, 3, pts, VecX::Ones(9)));
    std::mt19937 rng(5);
    std::uniform_real_distribution<double> t(0.0, 1.0);
    for (int k = 0; k < 30; ++k) {
        const double u = t(rng), v = t(rng);
        const Vec3 expect = lerp(lerp(c00, c10, u), lerp(c01, c11, u), v);
        CHECK((s.evaluate({u, v}) - expect).norm() < 1e-12);
    }
}

TEST_CASE("surface derivatives match central finite differences") {
    auto s = testsurf::wavyPatch(13);
    std::mt19937 rng(17);
    std::uniform_real_distribution<double> t(0.05, 0.95);
    const double h = 1e-6;
    for (int k = 0; k < 25; ++k) {
        const double u = t(rng), v = t(rng);
        const SurfaceDerivs d = surface_derivatives(s, {u, v});
        const Vec3 du = (s.evaluate({u + h, v}) - s.evaluate({u - h, v})) / (2 * h);
        const Vec3 dv = (s.evaluate({u, v + h}) - s.evaluate({u, v - h})) / (2 * h);
        CHECK((d.su - du).norm() <= 1e-6 * (1.0 + du.norm()));
        CHECK((d.sv - dv).norm() <= 1e-6 * (1.0 + dv.norm()));
    }
}

TEST_CASE("flat patch derivatives have no out-of-plane component") {
    auto s = testsurf::flatPatch();
    const SurfaceDerivs d = surface_derivatives(s, {0.37, 0.62});
    CHECK(std::abs(d.su[2]) < 1e-14);
    CHECK(std::abs(d.sv[2]) < 1e-14);
}

TEST_CASE("ruled surface: d/du constant along u at fixed v") {
    // Linear (degree 1) in u, so S_u depends on v only.
    const int m = 5;
    MatX pts(2 * m, 3);
    for (int j = 0; j < m; ++j) {
        pts.row(0 * m + j) << 0.0, 2.0 * j, 0.3 * j * j;
        pts.row(1 * m + j) << 6.0, 2.0 * j + 0.5, 1.0;
    }
    NurbsSurface s(KnotVector({0, 0, 1, 1}, 1), testsurf::uniformKnots(2, m),
                   ControlNet(2, m, pts, VecX::Ones(2 * m)));
    const double v = 0.41;
    const Vec3 a = surface_derivatives(s, {0.1, v}).su;
    const Vec3 b = surface_derivatives(s, {0.9, v}).su;
    CHECK((a - b).norm() < 1e-12);
}

TEST_CASE("point inversion round-trips random parameters") {
    auto s = testsurf::wavyPatch(23);
    std::mt19937 rng(29);
    std::uniform_real_distribution<double> t(0.02, 0.98);
    for (int k = 0; k < 20; ++k) {
        const ParametricPoint q{t(rng), t(rng)};
        const Vec3 target = s.evaluate(q);
        const ParametricPoint r = point_inversion(s, target, {0.5, 0.5});
        CHECK((s.evaluate(r) - target).norm() < 1e-8);
        CHECK(std::abs(r.u - q.u) < 1e-6);
        CHECK(std::abs(r.v - q.v) < 1e-6);
    }
}

TEST_CASE("point inversion: corner control point maps to the corner parameter") {
    auto s = testsurf::wavyPatch(31);
    const ParametricPoint r = point_inversion(s, s.corner(0, 0), {0.3, 0.3});
    CHECK(std::abs(r.u - 0.0) < 1e-8);
    CHECK(std::abs(r.v - 0.0) < 1e-8);
}

TEST_CASE("point inversion: offset along the normal keeps the foot parameter") {
    auto s = testsurf::domePatch(6, 6, 10, 10, 2.0);
    const ParametricPoint q{0.43, 0.58};
    const SurfaceDerivs d = s.derivatives(q, 1);
    const Vec3 n = d.su.cross(d.sv).normalized();
    const Vec3 target = d.point + 0.1 * n;

    const ParametricPoint mine = point_inversion(s, target, {0.5, 0.5});
    const ParametricPoint oracle = gridSearchClosest(s, target);
    CHECK(std::abs(mine.u - oracle.u) < 1e-6);
    CHECK(std::abs(mine.v - oracle.v) < 1e-6);
    CHECK(std::abs(mine.u - q.u) < 1e-6);
    CHECK(std::abs(mine.v - q.v) < 1e-6);
}

TEST_CASE("element extraction: knot vectors of the reference surface give 2x3 elements") {
    MatX pts(4 * 5, 3);
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 5; ++j) pts.row(i * 5 + j) << i, j, 0.0;
    NurbsSurface s(KnotVector({0, 0, 0, 0.5, 1, 1, 1}, 2),
                   KnotVector({0, 0, 0, 0.3, 0.6, 1, 1, 1}, 2),
                   ControlNet(4, 5, pts, VecX::Ones(20)));
    const auto elems = extract_elements(s);
    REQUIRE(elems.size() == 6);
    for (const auto& e : elems) CHECK(e.control_points.size() == 9);
    // First element spans [0, 0.5] x [0, 0.3].
    CHECK(elems[0].u0 == 0.0);
    CHECK(elems[0].u1 == 0.5);
    CHECK(elems[0].v0 == 0.0);
    CHECK(elems[0].v1 == doctest::Approx(0.3));
}

TEST_CASE("element extraction: single-span Bezier patch is one element") {
    MatX pts(9, 3);
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) pts.row(i * 3 + j) << i, j, 0.0;
    NurbsSurface s(KnotVector({0, 0, 0, 1, 1, 1}, 2), KnotVector({0, 0, 0, 1, 1, 1}, 2),
                   ControlNet(3, 3, pts, VecX::Ones(9)));
    CHECK(extract_elements(s).size() == 1);
}

TEST_CASE("uniform refinement multiplies the element count by 4") {
    auto s = testsurf::flatPatch(5, 5);
    const size_t before = extract_elements(s).size();
    std::vector<double> mu, mv;
    for (const auto& sp : s.knotU().spans()) mu.push_back(0.5 * (sp.lo + sp.hi));
    for (const auto& sp : s.knotV().spans()) mv.push_back(0.5 * (sp.lo + sp.hi));
    const auto refined = refine_knots(s, mu, mv);
    CHECK(extract_elements(refined).size() == 4 * before);
}

TEST_CASE("knot insertion preserves the surface geometry") {
    auto s = testsurf::wavyPatch(37);
    std::mt19937 rng(41);
    std::uniform_real_distribution<double> t(0.0, 1.0);

    SUBCASE("single insertion into a Bezier span") {
        std::vector<double> nu{0.5};
        const auto r = refine_knots(s, nu, {});
        for (int k = 0; k < 100; ++k) {
            const ParametricPoint q{t(rng), t(rng)};
            CHECK((r.evaluate(q) - s.evaluate(q)).norm() < 1e-10);
        }
    }
    SUBCASE("empty insertion is the identity") {
        const auto r = refine_knots(s, {}, {});
        CHECK(r.net().points().isApprox(s.net().points(), 1e-15));
    }
    SUBCASE("repeated insertion to full multiplicity") {
        std::vector<double> nu{0.4, 0.4};  // degree 2: multiplicity p reached
        const auto r = refine_knots(s, nu, {});
        for (int k = 0; k < 100; ++k) {
            const ParametricPoint q{t(rng), t(rng)};
            CHECK((r.evaluate(q) - s.evaluate(q)).norm() < 1e-10);
        }
        CHECK_THROWS_AS(refine_knots(r, std::vector<double>{0.4}, {}), ValidationError);
    }
    SUBCASE("knot outside the range is a domain error") {
        CHECK_THROWS_AS(refine_knots(s, std::vector<double>{1.5}, {}), DomainError);
    }
}

TEST_CASE("surface basis: partition of unity over 1000 random parameters") {
    auto s = testsurf::wavyPatch(43, 6, 7);
    std::mt19937 rng(47);
    std::uniform_real_distribution<double> t(0.0, 1.0);
    for (int k = 0; k < 1000; ++k) {
        const SurfaceBasis b = s.basis({t(rng), t(rng)}, false);
        CHECK(std::abs(b.values.sum() - 1.0) <= 1e-12);
        CHECK(b.values.minCoeff() >= -1e-15);
    }
}

TEST_CASE("local support: basis values vanish for functions outside the active span") {
    auto s = testsurf::flatPatch(7, 7);
    // Inside the first span only functions 0..2 per direction are active.
    const SurfaceBasis b = s.basis({0.05, 0.05}, false);
    for (int idx : b.indices) {
        const int i = idx / 7, j = idx % 7;
        CHECK(i <= 2);
        CHECK(j <= 2);
    }
}

TEST_CASE("affine invariance of surface evaluation") {
    auto s = testsurf::wavyPatch(53);
    const double c = std::cos(0.7), sn = std::sin(0.7);
    Mat3 rot;
    rot << c, -sn, 0, sn, c, 0, 0, 0, 1;
    const Vec3 shift(4.0, -2.0, 1.5);
    MatX moved = s.net().points();
    for (long k = 0; k < moved.rows(); ++k)
        moved.row(k) = (rot * Vec3(moved.row(k)) + shift).transpose();
    const NurbsSurface s2 = s.withPoints(moved);

    std::mt19937 rng(59);
    std::uniform_real_distribution<double> t(0.0, 1.0);
    for (int k = 0; k < 100; ++k) {
        const ParametricPoint q{t(rng), t(rng)};
        const Vec3 expect = rot * s.evaluate(q) + shift;
        CHECK((s2.evaluate(q) - expect).norm() < 1e-10);
    }
}

TEST_CASE("point inversion: iteration-starved solve raises an error with the best residual") {
    auto s = testsurf::wavyPatch(61);
    // A target well off the surface with no iteration budget cannot certify
    // a projection.
    InversionOptions opts;
    opts.max_iter = 0;
    opts.allow_boundary = false;
    try {
        point_inversion(s, Vec3(50.0, -40.0, 30.0), {0.5, 0.5}, opts);
        FAIL("expected InversionError");
    } catch (const InversionError& e) {
        CHECK(std::string(e.what()).find("residual") != std::string::npos);
    }
}
