#include "iiga/solver.hpp"

#include <Eigen/SparseCholesky>

#include <algorithm>
#include <cmath>
#include <functional>
#include <thread>

namespace iiga {

namespace {

void parallel_for(int n, int threads, const std::function<void(int)>& fn) {
    if (threads <= 1 || n < 4) {
        for (int i = 0; i < n; ++i) fn(i);
        return;
    }
    const int workers = std::min(threads, n);
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(workers);
    pool.reserve(workers);
    for (int w = 0; w < workers; ++w) {
        pool.emplace_back([&, w] {
            try {
                for (int i = w; i < n; i += workers) fn(i);
            } catch (...) {
                errors[w] = std::current_exception();
            }
        });
    }
    for (auto& t : pool) t.join();
    for (const auto& e : errors)
        if (e) std::rethrow_exception(e);
}

}  // namespace

Configuration Configuration::make(NurbsSurface s, ConfigTag tag, const MaterialParams& p) {
    Configuration c{std::move(s), {}, {}, tag};
    c.elements = extract_elements(c.surface);
    MaterialState fresh;
    fresh.thickness = p.t0;
    c.states.assign(c.elements.size(), fresh);
    return c;
}

NodeConstraint NodeConstraint::line(const VecX& direction) {
    const double n = direction.norm();
    if (!(n > 0)) throw ValidationError("node constraint: zero direction");
    MatX b(direction.size(), 1);
    b.col(0) = direction / n;
    return {b};
}

NodeConstraint NodeConstraint::plane(const Vec3& t1, const Vec3& t2) {
    MatX b(3, 2);
    b.col(0) = t1.normalized();
    // Gram-Schmidt so the basis stays orthonormal even for skew tangents.
    Vec3 s = t2 - t2.dot(b.col(0)) * Vec3(b.col(0));
    if (!(s.norm() > 1e-14)) throw ValidationError("node constraint: tangents are parallel");
    b.col(1) = s.normalized();
    return {b};
}

void SolverSettings::validate() const {
    if (!(tol_iter > 0)) throw ValidationError("settings: tol_iter must be positive");
    if (max_outer < 1) throw ValidationError("settings: max_outer must be positive");
    if (refine_levels < 0) throw ValidationError("settings: refine_levels must be non-negative");
    if (!(substep_fraction > 0)) throw ValidationError("settings: substep_fraction must be positive");
    if (!(contour_tol > 0)) throw ValidationError("settings: contour_tol must be positive");
    if (threads < 1) throw ValidationError("settings: threads must be >= 1");
}

bool FlangeSpec::contains(const Vec2& xy) const {
    switch (shape) {
        case Shape::None:
            return false;
        case Shape::Annulus: {
            const double r = (xy - center).norm();
            return r >= inner_radius && r <= outer_radius;
        }
        case Shape::Rectangle: {
            const Vec2 d = (xy - center).cwiseAbs();
            const bool inside_outer = d[0] <= outer_half[0] && d[1] <= outer_half[1];
            const bool inside_inner = d[0] < inner_half[0] && d[1] < inner_half[1];
            return inside_outer && !inside_inner;
        }
    }
    return false;
}

void ProcessParams::validate() const {
    if (!(blank_holder_force >= 0))
        throw ValidationError("process: blank-holder force must be non-negative");
    if (!(punch_axis.norm() > 0)) throw ValidationError("process: punch axis must be nonzero");
    if (!(die_profile_radius > 0) || !(punch_profile_radius > 0))
        throw ValidationError("process: profile radii must be positive");
    if (flange.shape == FlangeSpec::Shape::Annulus && !(flange.outer_radius > flange.inner_radius))
        throw ValidationError("process: flange annulus radii out of order");
    if (flange.shape == FlangeSpec::Shape::Rectangle &&
        !(flange.outer_half[0] > flange.inner_half[0] && flange.outer_half[1] > flange.inner_half[1]))
        throw ValidationError("process: flange rectangle extents out of order");
}

PlaneBasis plane_basis(const Vec3& punch_axis) {
    PlaneBasis p;
    p.axis = punch_axis.normalized();
    const Vec3 seed = std::abs(p.axis.dot(Vec3::UnitX())) < 0.9 ? Vec3::UnitX() : Vec3::UnitY();
    p.a1 = (seed - seed.dot(p.axis) * p.axis).normalized();
    p.a2 = p.axis.cross(p.a1);
    // Keep the exact global axes when the punch is along z.
    if ((p.axis - Vec3::UnitZ()).norm() < 1e-14) {
        p.a1 = Vec3::UnitX();
        p.a2 = Vec3::UnitY();
    }
    return p;
}

ElementOperators element_operators(const Configuration& cfg,
                                   std::span<const PropertyMatrix> dmats,
                                   const GaussRule& rule, int threads, bool with_stiffness) {
    const int ne = static_cast<int>(cfg.elements.size());
    if (with_stiffness && static_cast<int>(dmats.size()) != ne)
        throw ValidationError("element operators: property matrix count mismatch");

    ElementOperators ops;
    ops.frames.resize(ne);
    ops.transforms.resize(ne);
    ops.local_coords.resize(ne);
    if (with_stiffness) ops.k_local.resize(ne);

    parallel_for(ne, threads, [&](int e) {
        const ElementSpan& elem = cfg.elements[e];
        const LocalFrame frame = analysis_frame(element_nodes(elem, cfg.surface));
        ops.frames[e] = frame;
        ops.transforms[e] = transform_set(frame, static_cast<int>(elem.control_points.size()));
        ops.local_coords[e] = local_inplane_coords(elem, cfg.surface, frame);
        if (with_stiffness)
            ops.k_local[e] =
                element_stiffness(elem, cfg.surface, dmats[e], cfg.states[e].thickness, rule);
    });
    return ops;
}

Eigen::SparseMatrix<double> assemble_stiffness(int node_count,
                                               std::span<const ElementSpan> elements,
                                               std::span<const MatX> k_local,
                                               std::span<const TransformSet> transforms,
                                               int dof_per_node) {
    std::vector<Eigen::Triplet<double>> trips;
    for (size_t e = 0; e < elements.size(); ++e) {
        const auto& cps = elements[e].control_points;
        const int ncp = static_cast<int>(cps.size());
        const MatX kg = dof_per_node == 3 ? transforms[e].stiffnessToGlobal(k_local[e])
                                          : transforms[e].stiffnessToGlobal2d(k_local[e]);
        for (int ci = 0; ci < dof_per_node; ++ci)
            for (int cj = 0; cj < dof_per_node; ++cj)
                for (int a = 0; a < ncp; ++a)
                    for (int b = 0; b < ncp; ++b) {
                        const double v = kg(ci * ncp + a, cj * ncp + b);
                        if (v != 0.0)
                            trips.emplace_back(ci * node_count + cps[a],
                                               cj * node_count + cps[b], v);
                    }
    }
    Eigen::SparseMatrix<double> k(dof_per_node * node_count, dof_per_node * node_count);
    k.setFromTriplets(trips.begin(), trips.end());
    return k;
}

GlobalSystem assemble(const Configuration& config, std::span<const PropertyMatrix> dmats,
                      int dof_per_node, int threads) {
    if (config.states.size() != config.elements.size())
        throw ValidationError("assemble: state count does not match element count");
    const GaussRule rule =
        GaussRule::legendre(std::max(config.surface.degreeU(), config.surface.degreeV()) + 1);
    const ElementOperators ops = element_operators(config, dmats, rule, threads, true);
    const int nodes = config.surface.countU() * config.surface.countV();
    GlobalSystem sys;
    sys.dof_per_node = dof_per_node;
    sys.node_count = nodes;
    sys.stiffness =
        assemble_stiffness(nodes, config.elements, ops.k_local, ops.transforms, dof_per_node);
    sys.rhs = VecX::Zero(dof_per_node * nodes);
    sys.constraints.assign(nodes, NodeConstraint::free(dof_per_node));
    return sys;
}

std::vector<NodeConstraint> standard_constraints(const Configuration& cfg,
                                                 const PlaneBasis& plane, SymmetryMode sym,
                                                 int dof_per_node) {
    const int nu = cfg.surface.countU(), nv = cfg.surface.countV();
    const int nodes = nu * nv;
    std::vector<NodeConstraint> out(nodes, NodeConstraint::free(dof_per_node));

    if (sym == SymmetryMode::Quarter || sym == SymmetryMode::QuarterPolar) {
        auto zeroX = [&](int g) {  // control point confined to the x = 0 plane
            out[g] = dof_per_node == 2
                         ? NodeConstraint::line(Vec2(0, 1))
                         : NodeConstraint::plane(Vec3(0, 1, 0), Vec3(0, 0, 1));
        };
        auto zeroY = [&](int g) {
            out[g] = dof_per_node == 2
                         ? NodeConstraint::line(Vec2(1, 0))
                         : NodeConstraint::plane(Vec3(1, 0, 0), Vec3(0, 0, 1));
        };
        if (sym == SymmetryMode::Quarter) {
            for (int j = 0; j < nv; ++j) zeroX(0 * nv + j);
            for (int i = 0; i < nu; ++i) {
                if (i == 0) {  // shared corner: both mirrors apply
                    out[0] = dof_per_node == 2 ? NodeConstraint::fixed(2)
                                               : NodeConstraint::line(Vec3(0, 0, 1));
                } else {
                    zeroY(i * nv + 0);
                }
            }
        } else {
            for (int j = 0; j < nv; ++j) zeroX(0 * nv + j);
            for (int j = 0; j < nv; ++j) zeroY((nu - 1) * nv + j);
        }
        return out;
    }

    // Full model: pin the node nearest the plan centroid, then restrict the
    // best-levered neighbour to the line joining them.
    std::vector<Vec2> xy(nodes);
    Vec2 centroid = Vec2::Zero();
    for (int g = 0; g < nodes; ++g) {
        xy[g] = plane.project(cfg.surface.net().point(g));
        centroid += xy[g];
    }
    centroid /= nodes;
    int g0 = 0;
    double best = std::numeric_limits<double>::infinity();
    for (int g = 0; g < nodes; ++g) {
        const double d = (xy[g] - centroid).squaredNorm();
        if (d < best) {
            best = d;
            g0 = g;
        }
    }
    const int i0 = g0 / nv, j0 = g0 % nv;
    int g1 = -1;
    double lever = -1.0;
    for (const auto& [di, dj] : {std::pair{1, 0}, {0, 1}, {-1, 0}, {0, -1}}) {
        const int i = i0 + di, j = j0 + dj;
        if (i < 0 || i >= nu || j < 0 || j >= nv) continue;
        const int g = i * nv + j;
        const double arm = (xy[g] - xy[g0]).norm();
        if (arm > lever) {
            lever = arm;
            g1 = g;
        }
    }
    out[g0] = NodeConstraint::fixed(dof_per_node);
    if (g1 >= 0 && lever > 0) {
        const Vec2 dir = (xy[g1] - xy[g0]).normalized();
        if (dof_per_node == 2)
            out[g1] = NodeConstraint::line(Vec2(dir[0], dir[1]));
        else
            out[g1] = NodeConstraint::plane(Vec3(dir[0], dir[1], 0), Vec3(0, 0, 1));
    }
    return out;
}

ReducedSystem apply_constraints(const GlobalSystem& sys) {
    const int n = sys.node_count, dof = sys.dof_per_node;
    if (!sys.constraints.empty() && static_cast<int>(sys.constraints.size()) != n)
        throw ValidationError("apply_constraints: constraint list size mismatch");

    std::vector<Eigen::Triplet<double>> trips;
    int nred = 0;
    for (int g = 0; g < n; ++g) {
        const MatX& b = sys.constraints.empty() ? MatX(MatX::Identity(dof, dof))
                                                : sys.constraints[g].basis;
        if (b.rows() != dof)
            throw ValidationError("apply_constraints: constraint basis has wrong row count");
        for (int c = 0; c < b.cols(); ++c) {
            for (int comp = 0; comp < dof; ++comp)
                if (b(comp, c) != 0.0)
                    trips.emplace_back(comp * n + g, nred, b(comp, c));
            ++nred;
        }
    }
    ReducedSystem red;
    red.expansion.resize(dof * n, nred);
    red.expansion.setFromTriplets(trips.begin(), trips.end());
    red.stiffness = red.expansion.transpose() * sys.stiffness * red.expansion;
    red.rhs = red.expansion.transpose() * sys.rhs;
    return red;
}

VecX solve(const GlobalSystem& sys) {
    const ReducedSystem red = apply_constraints(sys);
    if (red.stiffness.rows() == 0) return VecX::Zero(sys.dof_per_node * sys.node_count);

    Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> ldlt;
    ldlt.compute(red.stiffness);
    if (ldlt.info() != Eigen::Success)
        throw SolveError("sparse factorization failed on the reduced system");

    const VecX D = ldlt.vectorD();
    const double dmax = D.cwiseAbs().maxCoeff();
    int null_dim = 0;
    for (long i = 0; i < D.size(); ++i)
        if (!(D[i] > 1e-12 * dmax)) ++null_dim;
    if (null_dim > 0)
        throw UnderConstrainedError("reduced system is singular (approximate null-space dimension " +
                                        std::to_string(null_dim) + ")",
                                    null_dim);

    VecX d = ldlt.solve(red.rhs);
    VecX resid = red.rhs - red.stiffness * d;
    const double fscale = std::max(red.rhs.norm(), 1e-300);
    if (resid.norm() / fscale > 1e-10) {
        d += ldlt.solve(resid);  // one round of iterative refinement
        resid = red.rhs - red.stiffness * d;
        if (resid.norm() / fscale > 1e-10)
            throw SolveError("linear solve residual " + std::to_string(resid.norm() / fscale) +
                             " exceeds 1e-10");
    }
    return red.expansion * d;
}

ForceVector friction_forces(const Configuration& cfg, const MaterialParams& mat,
                            const ProcessParams& proc,
                            std::span<const Vec2> inplane_displacement, int dof_per_node) {
    const int nodes = cfg.surface.countU() * cfg.surface.countV();
    ForceVector f = VecX::Zero(dof_per_node * nodes);
    if (mat.mu <= 0.0 || proc.blank_holder_force <= 0.0) return f;
    if (static_cast<int>(inplane_displacement.size()) != nodes)
        throw ValidationError("friction: displacement count does not match control points");

    const PlaneBasis plane = plane_basis(proc.punch_axis);
    const GaussRule rule =
        GaussRule::legendre(std::max(cfg.surface.degreeU(), cfg.surface.degreeV()) + 1);

    VecX tributary = VecX::Zero(nodes);
    double total = 0.0;
    for (const ElementSpan& elem : cfg.elements) {
        const double scale = 0.25 * (elem.u1 - elem.u0) * (elem.v1 - elem.v0);
        for (int gi = 0; gi < rule.nodes.size(); ++gi) {
            const double u = elem.u0 + 0.5 * (rule.nodes[gi] + 1.0) * (elem.u1 - elem.u0);
            for (int gj = 0; gj < rule.nodes.size(); ++gj) {
                const double v = elem.v0 + 0.5 * (rule.nodes[gj] + 1.0) * (elem.v1 - elem.v0);
                const SurfaceDerivs d = cfg.surface.derivatives({u, v}, 1);
                if (!proc.flange.contains(plane.project(d.point))) continue;
                const double darea =
                    d.su.cross(d.sv).norm() * scale * rule.weights[gi] * rule.weights[gj];
                const SurfaceBasis b = cfg.surface.basis({u, v}, false);
                for (size_t l = 0; l < b.indices.size(); ++l)
                    tributary[b.indices[l]] += b.values[l] * darea;
                total += darea;
            }
        }
    }
    if (!(total > 0.0))
        throw ConfigError("flange region has zero area on the surface but the blank-holder "
                          "force and friction coefficient are nonzero");

    const double pressure = proc.blank_holder_force / total;
    const double tiny = 1e-14 * cfg.surface.boundingBoxDiagonal();
    for (int g = 0; g < nodes; ++g) {
        if (tributary[g] <= 0.0) continue;
        const Vec2 disp = inplane_displacement[g];
        const double len = disp.norm();
        if (len <= tiny) continue;
        const Vec2 dir = -disp / len;  // oppose the forming displacement
        const double mag = mat.mu * pressure * tributary[g];
        f[0 * nodes + g] += mag * dir[0];
        f[1 * nodes + g] += mag * dir[1];
    }
    return f;
}

std::vector<MaterialState> update_states(const Configuration& reference,
                                         const Configuration& deformed,
                                         const MaterialParams& p, int threads) {
    if (reference.elements.size() != deformed.elements.size())
        throw TopologyError("update_states: configurations have different element counts");
    const int ne = static_cast<int>(reference.elements.size());
    std::vector<MaterialState> out(ne);
    parallel_for(ne, threads, [&](int e) {
        const ElementSpan& er = reference.elements[e];
        const ElementSpan& ed = deformed.elements[e];
        const LocalFrame fr = analysis_frame(element_nodes(er, reference.surface));
        const LocalFrame fd = analysis_frame(element_nodes(ed, deformed.surface));
        const int ncp = static_cast<int>(er.control_points.size());
        std::vector<Vec2> cr(ncp), cd(ncp);
        for (int a = 0; a < ncp; ++a) {
            cr[a] = fr.toLocal(reference.surface.net().point(er.control_points[a])).head<2>();
            cd[a] = fd.toLocal(deformed.surface.net().point(ed.control_points[a])).head<2>();
        }
        out[e] = state_from_strains(p, principal_strains(cr, cd));
    });
    return out;
}

namespace {

std::pair<int, int> regimeCounts(std::span<const MaterialState> states) {
    int el = 0, pl = 0;
    for (const auto& s : states) (s.regime == Regime::Elastic ? el : pl)++;
    return {el, pl};
}

}  // namespace

OneStepResult one_step_iiga(const Configuration& final_config, const MaterialParams& mat,
                            const ProcessParams& proc, const SolverSettings& settings,
                            SymmetryMode sym, const OneStepWarmStart* warm, int refine_level) {
    mat.validate();
    proc.validate();
    settings.validate();

    Configuration cur_final = final_config;
    const int nodes = cur_final.surface.countU() * cur_final.surface.countV();
    const int ne = static_cast<int>(cur_final.elements.size());
    const double diag = std::max(cur_final.surface.boundingBoxDiagonal(), 1e-12);
    const PlaneBasis plane = plane_basis(proc.punch_axis);
    const GaussRule rule = GaussRule::legendre(
        std::max(cur_final.surface.degreeU(), cur_final.surface.degreeV()) + 1);

    // Seed the flat blank from the projection of the final net onto the
    // punch-normal plane.
    std::vector<Vec2> proj(nodes);
    MatX bpts(nodes, 3);
    for (int g = 0; g < nodes; ++g) {
        proj[g] = plane.project(cur_final.surface.net().point(g));
        bpts.row(g) << proj[g][0], proj[g][1], 0.0;
    }
    if (warm) {
        if (warm->blank_points.rows() != nodes)
            throw TopologyError("one-step warm start has a different control-point count");
        bpts = warm->blank_points;
    }
    Configuration blank =
        Configuration::make(cur_final.surface.withPoints(bpts), ConfigTag::Blank, mat);
    if (warm && static_cast<int>(warm->states.size()) == ne) cur_final.states = warm->states;

    const std::vector<NodeConstraint> constraints =
        standard_constraints(blank, plane, sym, 2);

    OneStepResult result{std::move(blank), {}, {}, false, 0};
    std::vector<PropertyMatrix> dmats(ne);
    for (int iter = 1; iter <= settings.max_outer; ++iter) {
        for (int e = 0; e < ne; ++e)
            dmats[e] = property_matrix(mat, cur_final.states[e]);
        const ElementOperators finalOps =
            element_operators(cur_final, dmats, rule, settings.threads, true);
        const ElementOperators blankOps =
            element_operators(result.blank, {}, rule, settings.threads, false);

        // Development pull: each element drags its blank image toward the
        // isometric in-plane shape of the corresponding final element.
        ForceVector f = VecX::Zero(2 * nodes);
        for (int e = 0; e < ne; ++e) {
            const VecX fl =
                finalOps.k_local[e] * (finalOps.local_coords[e] - blankOps.local_coords[e]);
            const VecX fg = blankOps.transforms[e].forceToGlobal2d(fl);
            const auto& cps = cur_final.elements[e].control_points;
            const int ncp = static_cast<int>(cps.size());
            for (int a = 0; a < ncp; ++a) {
                f[cps[a]] += fg[a];
                f[nodes + cps[a]] += fg[ncp + a];
            }
        }
        std::vector<Vec2> drawdisp(nodes);
        for (int g = 0; g < nodes; ++g) {
            const Vec3 bp = result.blank.surface.net().point(g);
            drawdisp[g] = proj[g] - Vec2(bp[0], bp[1]);
        }
        f += friction_forces(cur_final, mat, proc, drawdisp, 2);

        GlobalSystem sys;
        sys.dof_per_node = 2;
        sys.node_count = nodes;
        sys.stiffness = assemble_stiffness(nodes, cur_final.elements, finalOps.k_local,
                                           blankOps.transforms, 2);
        sys.rhs = f;
        sys.constraints = constraints;
        const VecX d = solve(sys);

        MatX pts = result.blank.surface.net().points();
        double movement = 0.0;
        for (int g = 0; g < nodes; ++g) {
            const Vec2 dg(d[g], d[nodes + g]);
            movement = std::max(movement, dg.norm());
            pts(g, 0) += dg[0];
            pts(g, 1) += dg[1];
        }
        movement /= diag;
        result.blank.setPoints(std::move(pts));
        cur_final.states =
            update_states(result.blank, cur_final, mat, settings.threads);

        const auto [el, pl] = regimeCounts(cur_final.states);
        result.log.push_back({"one-step", refine_level, iter, movement, el, pl});
        result.iterations = iter;
        if (movement < settings.tol_iter) {
            result.converged = true;
            break;
        }
    }
    result.final_states = cur_final.states;
    return result;
}

std::vector<Vec3> boundary_polyline(const NurbsSurface& s, int samples_per_edge) {
    const double u0 = s.knotU().minParam(), u1 = s.knotU().maxParam();
    const double v0 = s.knotV().minParam(), v1 = s.knotV().maxParam();
    const int n = std::max(samples_per_edge, 2);
    std::vector<Vec3> out;
    out.reserve(4 * n);
    for (int k = 0; k < n; ++k)  // v = v0, u rising
        out.push_back(s.evaluate({u0 + (u1 - u0) * k / n, v0}));
    for (int k = 0; k < n; ++k)  // u = u1, v rising
        out.push_back(s.evaluate({u1, v0 + (v1 - v0) * k / n}));
    for (int k = 0; k < n; ++k)  // v = v1, u falling
        out.push_back(s.evaluate({u1 - (u1 - u0) * k / n, v1}));
    for (int k = 0; k < n; ++k)  // u = u0, v falling
        out.push_back(s.evaluate({u0, v1 - (v1 - v0) * k / n}));
    return out;
}

}  // namespace iiga
