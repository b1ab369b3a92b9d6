#include "iiga/multistep.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <map>
#include <sstream>

namespace iiga {

namespace {

class PhaseClock {
public:
    PhaseClock(std::vector<PhaseTiming>& sink, std::string phase)
        : sink_(sink), phase_(std::move(phase)), start_(std::chrono::steady_clock::now()) {}
    ~PhaseClock() {
        const auto dt = std::chrono::steady_clock::now() - start_;
        sink_.push_back({phase_, std::chrono::duration<double>(dt).count()});
    }

private:
    std::vector<PhaseTiming>& sink_;
    std::string phase_;
    std::chrono::steady_clock::time_point start_;
};

std::pair<int, int> regimeCounts(std::span<const MaterialState> states) {
    int el = 0, pl = 0;
    for (const auto& s : states) (s.regime == Regime::Elastic ? el : pl)++;
    return {el, pl};
}

}  // namespace

std::vector<PhysicalNode> physical_nodes(const Configuration& cfg) {
    std::vector<PhysicalNode> out;
    std::map<std::pair<double, double>, bool> seen;
    auto push = [&](double u, double v) {
        if (seen.emplace(std::make_pair(u, v), true).second)
            out.push_back({{u, v}, cfg.surface.evaluate({u, v})});
    };
    for (const ElementSpan& e : cfg.elements) {
        push(e.u0, e.v0);
        push(e.u1, e.v0);
        push(e.u1, e.v1);
        push(e.u0, e.v1);
        push(e.umid(), e.vmid());
    }
    return out;
}

std::pair<int, ParametricPoint> find_containing_element(const Configuration& blank,
                                                        const Vec2& point2d) {
    const NurbsSurface& s = blank.surface;
    const Vec3 target(point2d[0], point2d[1], 0.0);
    const ParametricPoint center{0.5 * (s.knotU().minParam() + s.knotU().maxParam()),
                                 0.5 * (s.knotV().minParam() + s.knotV().maxParam())};
    ParametricPoint pt;
    try {
        pt = point_inversion(s, target, center);
    } catch (const InversionError& e) {
        throw SearchError("containing-element search: inversion failed (" +
                          std::string(e.what()) + ")");
    }
    const double residual = (s.evaluate(pt) - target).norm();
    if (residual > 1e-8)
        throw SearchError("no element of the blank contains point (" +
                          std::to_string(point2d[0]) + ", " + std::to_string(point2d[1]) +
                          "); closest-point residual " + std::to_string(residual) + " mm");

    const double slack_u = 1e-10 * (s.knotU().maxParam() - s.knotU().minParam());
    const double slack_v = 1e-10 * (s.knotV().maxParam() - s.knotV().minParam());
    for (const ElementSpan& e : blank.elements) {
        if (pt.u >= e.u0 - slack_u && pt.u <= e.u1 + slack_u && pt.v >= e.v0 - slack_v &&
            pt.v <= e.v1 + slack_v)
            return {e.index, pt};
    }
    throw SearchError("inverted parameter lies in no element span");  // unreachable for valid data
}

ForceVector in_plane_forces(const Configuration& middle, const Configuration& final_config,
                            std::span<const PropertyMatrix> dmats, int threads) {
    const NurbsSurface& sm = middle.surface;
    const NurbsSurface& sf = final_config.surface;
    if (sm.degreeU() != sf.degreeU() || sm.degreeV() != sf.degreeV() ||
        sm.knotU().knots() != sf.knotU().knots() || sm.knotV().knots() != sf.knotV().knots() ||
        sm.countU() != sf.countU() || sm.countV() != sf.countV())
        throw TopologyError("in-plane forces: middle and final configurations do not share "
                            "knot structure");
    if (dmats.size() != final_config.elements.size())
        throw ValidationError("in-plane forces: property matrix count mismatch");

    const int nodes = sf.countU() * sf.countV();
    const GaussRule rule = GaussRule::legendre(std::max(sf.degreeU(), sf.degreeV()) + 1);
    const ElementOperators ops = element_operators(final_config, dmats, rule, threads, true);

    ForceVector f = VecX::Zero(3 * nodes);
    for (size_t e = 0; e < final_config.elements.size(); ++e) {
        const ElementSpan& elem = final_config.elements[e];
        const int ncp = static_cast<int>(elem.control_points.size());
        VecX xm(2 * ncp);
        for (int a = 0; a < ncp; ++a) {
            const Vec3 loc = ops.frames[e].toLocal(sm.net().point(elem.control_points[a]));
            xm[a] = loc[0];
            xm[ncp + a] = loc[1];
        }
        const VecX fl = ops.k_local[e] * (xm - ops.local_coords[e]);
        const VecX fg = ops.transforms[e].forceToGlobal(fl);
        for (int a = 0; a < ncp; ++a)
            for (int c = 0; c < 3; ++c)
                f[c * nodes + elem.control_points[a]] += fg[c * ncp + a];
    }
    return f;
}

SlidingFrameSet sliding_frames(const Configuration& middle) {
    const NurbsSurface& s = middle.surface;
    const auto gu = s.knotU().greville();
    const auto gv = s.knotV().greville();
    SlidingFrameSet set;
    const int nodes = s.countU() * s.countV();
    set.params.resize(nodes);
    set.normals.resize(nodes);
    set.frames.resize(nodes);
    for (int i = 0; i < s.countU(); ++i) {
        for (int j = 0; j < s.countV(); ++j) {
            const int g = i * s.countV() + j;
            const ParametricPoint pt{gu[i], gv[j]};
            const SurfaceDerivs d = s.derivatives(pt, 1);
            const Vec3 cross = d.su.cross(d.sv);
            if (!(cross.norm() > 1e-12 * d.su.norm() * d.sv.norm()))
                throw SlidingError("sliding frame: surface normal undefined at control point " +
                                   std::to_string(g));
            set.params[g] = pt;
            Vec3 n = cross.normalized();
            Vec3 t1 = d.su.normalized();
            Vec3 t2 = n.cross(t1);
            set.normals[g] = n;
            Mat3 f;
            f.col(0) = t1;
            f.col(1) = t2;
            f.col(2) = n;
            set.frames[g] = f;
        }
    }
    return set;
}

namespace {

// Pull the configuration's Greville nodes onto the target surface by moving
// each control point by its node error (Jacobi passes on the collocation
// system). Returns the final max node distance.
double snap_to_surface(Configuration& cfg, const NurbsSurface& target,
                       std::vector<ParametricPoint>& assoc, double tol, int max_passes,
                       SymmetryMode sym) {
    const NurbsSurface& s = cfg.surface;
    const int nu = s.countU(), nv = s.countV();
    const int nodes = nu * nv;
    const auto gu = s.knotU().greville();
    const auto gv = s.knotV().greville();
    if (static_cast<int>(assoc.size()) != nodes) {
        assoc.assign(nodes, {0.5 * (target.knotU().minParam() + target.knotU().maxParam()),
                             0.5 * (target.knotV().minParam() + target.knotV().maxParam())});
    }

    InversionOptions opts;
    opts.max_iter = 40;
    opts.point_tol = 0.25 * tol;  // anything this close already counts as on-surface
    double maxerr = 0.0;
    for (int pass = 0; pass < max_passes; ++pass) {
        MatX corrections = MatX::Zero(nodes, 3);
        maxerr = 0.0;
        for (int i = 0; i < nu; ++i) {
            for (int j = 0; j < nv; ++j) {
                const int g = i * nv + j;
                const Vec3 node = s.evaluate({gu[i], gv[j]});
                ParametricPoint pm;
                try {
                    pm = point_inversion(target, node, assoc[g], opts);
                } catch (const InversionError& e) {
                    throw SlidingError("surface snap: projection failed at control point " +
                                       std::to_string(g) + " (" + e.what() + ")");
                }
                assoc[g] = pm;
                Vec3 err = target.evaluate(pm) - node;
                if (sym == SymmetryMode::Quarter) {
                    if (i == 0) err[0] = 0.0;
                    if (j == 0) err[1] = 0.0;
                } else if (sym == SymmetryMode::QuarterPolar) {
                    if (i == 0) err[0] = 0.0;
                    if (i == nu - 1) err[1] = 0.0;
                }
                corrections.row(g) = err;
                maxerr = std::max(maxerr, err.norm());
            }
        }
        if (maxerr < tol) return maxerr;
        // Under-relax while corrections are large; full steps near the end.
        const double relax = maxerr > 20.0 * tol ? 0.7 : 1.0;
        cfg.setPoints(cfg.surface.net().points() + relax * corrections);
    }
    return maxerr;
}

VecX solveWithFallback(GlobalSystem& sys, bool& regularized) {
    try {
        return solve(sys);
    } catch (const Error&) {
        regularized = true;
        double mean_diag = 0.0;
        for (int k = 0; k < sys.stiffness.rows(); ++k)
            mean_diag += std::abs(sys.stiffness.coeff(k, k));
        mean_diag /= std::max<long>(sys.stiffness.rows(), 1);
        Eigen::SparseMatrix<double> eye(sys.stiffness.rows(), sys.stiffness.cols());
        eye.setIdentity();
        sys.stiffness += (1e-8 * mean_diag) * eye;
        return solve(sys);
    }
}

}  // namespace

SlidingResult sliding_update(const Configuration& middle, const Configuration& final_config,
                             std::span<const PropertyMatrix> dmats, const ForceVector& rhs,
                             const SlidingFrameSet& frames,
                             const NurbsSurface& constraint_surface,
                             const ProcessParams& proc, const SolverSettings& settings,
                             SymmetryMode sym, std::vector<ParametricPoint>* seed_cache) {
    const NurbsSurface& sf = final_config.surface;
    const int nu = sf.countU(), nv = sf.countV();
    const int nodes = nu * nv;
    const double diag = std::max(sf.boundingBoxDiagonal(), 1e-12);
    const GaussRule rule = GaussRule::legendre(std::max(sf.degreeU(), sf.degreeV()) + 1);
    const ElementOperators ops =
        element_operators(final_config, dmats, rule, settings.threads, true);

    GlobalSystem sys;
    sys.dof_per_node = 3;
    sys.node_count = nodes;
    sys.stiffness = assemble_stiffness(nodes, final_config.elements, ops.k_local,
                                       ops.transforms, 3);
    sys.rhs = rhs;
    sys.constraints.resize(nodes, NodeConstraint::free(3));
    for (int i = 0; i < nu; ++i) {
        for (int j = 0; j < nv; ++j) {
            const int g = i * nv + j;
            const Vec3 n = frames.normals[g];
            const Mat3& f = frames.frames[g];
            const bool on_x = (sym == SymmetryMode::Quarter && i == 0) ||
                              (sym == SymmetryMode::QuarterPolar && i == 0);
            const bool on_y = (sym == SymmetryMode::Quarter && j == 0) ||
                              (sym == SymmetryMode::QuarterPolar && i == nu - 1);
            if (on_x && on_y) {
                // Tangent direction surviving both mirror planes is +/- z.
                if (std::abs(n.dot(Vec3::UnitZ())) < 1e-8)
                    sys.constraints[g] = NodeConstraint::line(Vec3(0, 0, 1));
                else
                    sys.constraints[g] = NodeConstraint::fixed(3);
            } else if (on_x || on_y) {
                const Vec3 mirror = on_x ? Vec3::UnitX() : Vec3::UnitY();
                const Vec3 dir = n.cross(mirror);
                if (dir.norm() > 1e-8)
                    sys.constraints[g] = NodeConstraint::line(dir);
                else  // tangent plane coincides with the symmetry plane
                    sys.constraints[g] = NodeConstraint::plane(f.col(0), f.col(1));
            } else {
                sys.constraints[g] = NodeConstraint::plane(f.col(0), f.col(1));
            }
        }
    }

    SlidingResult result{middle, 0.0, 0, false, false};
    const VecX d = solveWithFallback(sys, result.regularized);

    double maxdisp = 0.0;
    for (int g = 0; g < nodes; ++g)
        maxdisp = std::max(maxdisp,
                           Vec3(d[g], d[nodes + g], d[2 * nodes + g]).norm());
    const double bound =
        settings.substep_fraction * std::min(proc.die_profile_radius, proc.punch_profile_radius);

    // A step already below the convergence threshold is indistinguishable
    // from equilibrium; applying it would only stir projection noise.
    if (maxdisp < settings.tol_iter * diag) {
        result.max_movement_rel = maxdisp / diag;
        result.substeps = 0;
        return result;
    }

    // Trust region: soft (nearly unconstrained-tangential) modes can blow the
    // raw solve step up without physical meaning; never apply more than a
    // few percent of the diagonal per outer iteration.
    const double trust = std::min(1.0, 0.05 * diag / maxdisp);

    const MatX pts0 = middle.surface.net().points();
    auto foldFree = [&rule](const Configuration& c) {
        for (const ElementSpan& e : c.elements) {
            try {
                const LocalFrame frame = analysis_frame(element_nodes(e, c.surface));
                for (int gi = 0; gi < rule.nodes.size(); ++gi)
                    for (int gj = 0; gj < rule.nodes.size(); ++gj) {
                        const double u =
                            e.u0 + 0.5 * (rule.nodes[gi] + 1.0) * (e.u1 - e.u0);
                        const double v =
                            e.v0 + 0.5 * (rule.nodes[gj] + 1.0) * (e.v1 - e.v0);
                        strain_displacement(e, c.surface, {u, v}, frame);
                    }
            } catch (const Error&) {
                return false;
            }
        }
        return true;
    };

    // Apply scale * d, substepped along the constraint surface; back off the
    // scale whenever the resulting net folds (the equilibrium step can
    // overshoot early in the outer loop).
    for (double scale = trust;; scale *= 0.5) {
        const int nsub =
            std::clamp(static_cast<int>(std::ceil(scale * maxdisp / bound)), 1, 500);
        MatX pts = pts0;
        Configuration trial = middle;
        SlidingFrameSet cur = frames;
        std::vector<ParametricPoint> assoc =
            seed_cache ? *seed_cache : std::vector<ParametricPoint>{};
        VecX rem = scale * d;
        bool ok = true;
        try {
            for (int k = nsub; k >= 1; --k) {
                const VecX step = rem / k;
                rem -= step;
                for (int g = 0; g < nodes; ++g) {
                    Vec3 sg(step[g], step[nodes + g], step[2 * nodes + g]);
                    sg -= sg.dot(cur.normals[g]) * cur.normals[g];
                    pts.row(g) += sg.transpose();
                }
                trial.setPoints(pts);
                snap_to_surface(trial, constraint_surface, assoc, 5e-4, 30, sym);
                pts = trial.surface.net().points();
                if (!foldFree(trial)) {
                    ok = false;
                    break;
                }
                if (k > 1) cur = sliding_frames(trial);
            }
        } catch (const Error&) {
            ok = false;
        }
        if (ok) {
            result.middle = std::move(trial);
            result.substeps = nsub;
            if (seed_cache) *seed_cache = std::move(assoc);
            break;
        }
        if (scale < trust / 64.0) {
            // The marginal parameterization cannot absorb any fraction of the
            // step; leave the middle in place and report the unapplied drive.
            result.middle = middle;
            result.max_movement_rel = maxdisp / diag;
            result.substeps = 0;
            result.stalled = true;
            return result;
        }
    }

    double movement = 0.0;
    const MatX& ptsNew = result.middle.surface.net().points();
    for (int g = 0; g < nodes; ++g)
        movement = std::max(movement, (ptsNew.row(g) - pts0.row(g)).norm());
    result.max_movement_rel = movement / diag;
    return result;
}

std::vector<PrincipalStrains> total_strains(std::span<const MaterialState> strains_fm,
                                            std::span<const MaterialState> strains_mb) {
    if (strains_fm.size() != strains_mb.size())
        throw TopologyError("total strains: element lists have different lengths");
    std::vector<PrincipalStrains> out(strains_fm.size());
    for (size_t e = 0; e < strains_fm.size(); ++e) {
        double a = strains_fm[e].eps1 + strains_mb[e].eps1;
        double b = strains_fm[e].eps2 + strains_mb[e].eps2;
        if (a < b) std::swap(a, b);  // keep the major/minor labelling
        out[e] = {a, b, strains_fm[e].eps3 + strains_mb[e].eps3};
    }
    return out;
}

namespace {

struct MappingInternal {
    MappingResult map;
    OneStepResult blank_final;
    OneStepResult blank_middle;
};

MappingInternal mapping_with_blanks(const Configuration& final_config,
                                    const Configuration& user_middle,
                                    const MaterialParams& mat, const ProcessParams& proc,
                                    const SolverSettings& settings, SymmetryMode sym,
                                    int refine_level) {
    MappingInternal out{{}, one_step_iiga(final_config, mat, proc, settings, sym, nullptr,
                                          refine_level),
                        one_step_iiga(user_middle, mat, proc, settings, sym, nullptr,
                                      refine_level)};

    const std::vector<PhysicalNode> nodes = physical_nodes(final_config);
    const int count = static_cast<int>(nodes.size());
    out.map.diagnostics.node_count = count;
    out.map.node_params_final.resize(count);
    out.map.node_params_middle.resize(count);

    MatX mapped(count, 3);
    for (int k = 0; k < count; ++k) {
        const ParametricPoint pf = nodes[k].param;
        out.map.node_params_final[k] = pf;
        const Vec3 onBlank = out.blank_final.blank.surface.evaluate(pf);
        const Vec2 pos(onBlank[0], onBlank[1]);
        std::pair<int, ParametricPoint> hit;
        try {
            hit = find_containing_element(out.blank_middle.blank, pos);
        } catch (const SearchError& e) {
            std::ostringstream os;
            os << "surround condition violated: node " << k << " of the final blank at ("
               << pos[0] << ", " << pos[1]
               << ") lies outside the user-middle blank [" << e.what() << "]";
            throw SurroundError(os.str());
        }
        out.map.node_params_middle[k] = hit.second;
        const double res =
            (out.blank_middle.blank.surface.evaluate(hit.second) - Vec3(pos[0], pos[1], 0))
                .norm();
        out.map.diagnostics.max_inversion_residual =
            std::max(out.map.diagnostics.max_inversion_residual, res);
        mapped.row(k) = user_middle.surface.evaluate(hit.second).transpose();
    }

    // Stage 5: least-squares fit of the middle net through the mapped nodes,
    // on the final part's knot structure. The corner/centre node family is
    // rank-deficient for the tensor-product basis, so the fit solves for the
    // displacement from the final net: data-determined directions follow the
    // mapped points, the null directions inherit the final's shape. A weak
    // second-difference term keeps the null-space displacement smooth.
    const NurbsSurface& sf = final_config.surface;
    const int nu = sf.countU(), nv = sf.countV();
    const int n = nu * nv;
    MatX ata = MatX::Zero(n, n);
    MatX aty = MatX::Zero(n, 3);
    const MatX& prior = sf.net().points();
    for (int k = 0; k < count; ++k) {
        const SurfaceBasis b = sf.basis(out.map.node_params_final[k], false);
        Eigen::RowVector3d prior_at = Eigen::RowVector3d::Zero();
        for (size_t l = 0; l < b.indices.size(); ++l)
            prior_at += b.values[l] * prior.row(b.indices[l]);
        const Eigen::RowVector3d delta = mapped.row(k) - prior_at;
        for (size_t l1 = 0; l1 < b.indices.size(); ++l1) {
            aty.row(b.indices[l1]) += b.values[l1] * delta;
            for (size_t l2 = 0; l2 < b.indices.size(); ++l2)
                ata(b.indices[l1], b.indices[l2]) += b.values[l1] * b.values[l2];
        }
    }
    const double lambda = 1e-10 * std::max(ata.trace() / n, 1e-12);
    auto addStencil = [&](int a, int b, int c) {
        const int idx[3] = {a, b, c};
        const double w[3] = {1.0, -2.0, 1.0};
        for (int x = 0; x < 3; ++x)
            for (int y = 0; y < 3; ++y) ata(idx[x], idx[y]) += lambda * w[x] * w[y];
    };
    for (int i = 0; i < nu; ++i)
        for (int j = 1; j + 1 < nv; ++j)
            addStencil(i * nv + j - 1, i * nv + j, i * nv + j + 1);
    for (int j = 0; j < nv; ++j)
        for (int i = 1; i + 1 < nu; ++i)
            addStencil((i - 1) * nv + j, i * nv + j, (i + 1) * nv + j);
    ata += lambda * MatX::Identity(n, n);  // pins the affine part of the null space

    Eigen::LDLT<MatX> ldlt(ata);
    if (ldlt.info() != Eigen::Success || !(ldlt.rcond() > 1e-14)) {
        out.map.diagnostics.regularized_fit = true;
        ata += (1e-8 * std::max(ata.trace() / n, 1.0)) * MatX::Identity(n, n);
        ldlt.compute(ata);
        if (ldlt.info() != Eigen::Success)
            throw MappingError("middle-net fit: normal equations could not be factorized");
    }
    out.map.middle_net = prior + ldlt.solve(aty);

    for (int k = 0; k < count; ++k) {
        const SurfaceBasis b = sf.basis(out.map.node_params_final[k], false);
        Vec3 fitted = Vec3::Zero();
        for (size_t l = 0; l < b.indices.size(); ++l)
            fitted += b.values[l] * Vec3(out.map.middle_net.row(b.indices[l]));
        out.map.diagnostics.max_fit_error =
            std::max(out.map.diagnostics.max_fit_error, (fitted - Vec3(mapped.row(k))).norm());
    }
    return out;
}

}  // namespace

MappingResult nurbs_mapping(const Configuration& final_config,
                            const Configuration& user_middle, const MaterialParams& mat,
                            const ProcessParams& proc, const SolverSettings& settings,
                            SymmetryMode sym) {
    return mapping_with_blanks(final_config, user_middle, mat, proc, settings, sym, 0).map;
}

Configuration refine_midpoints(const Configuration& cfg, const MaterialParams& mat) {
    std::vector<double> mu, mv;
    for (const auto& s : cfg.surface.knotU().spans()) mu.push_back(0.5 * (s.lo + s.hi));
    for (const auto& s : cfg.surface.knotV().spans()) mv.push_back(0.5 * (s.lo + s.hi));
    return Configuration::make(cfg.surface.refined(mu, mv), cfg.tag, mat);
}

namespace {

MultiStepReport run_multistep_level(const Configuration& final_in,
                                    const Configuration& user_middle,
                                    const MaterialParams& mat, const ProcessParams& proc,
                                    const SolverSettings& settings, SymmetryMode sym,
                                    int level, std::vector<PhaseTiming>& timings) {
    MappingInternal mapping = [&] {
        PhaseClock clock(timings, "mapping/level" + std::to_string(level));
        return mapping_with_blanks(final_in, user_middle, mat, proc, settings, sym, level);
    }();

    Configuration final_cfg = final_in;
    Configuration middle = Configuration::make(
        final_cfg.surface.withPoints(mapping.map.middle_net), ConfigTag::Middle, mat);

    // The fitted middle sits within the fit residual of the constraint
    // surface; the first sliding substep snaps it on. The projection seeds
    // stay live across the loop.
    std::vector<ParametricPoint> assoc;

    MultiStepReport rep{mapping.blank_final.blank, middle, final_cfg,
                        {}, {}, {}, {}, {}, mapping.map.diagnostics,
                        false, 0, level,
                        "in-plane force enters the solve negated: the middle is pulled "
                        "toward the final configuration"};
    rep.refine_levels_used = level;

    const PlaneBasis plane = plane_basis(proc.punch_axis);
    const int nodes = final_cfg.surface.countU() * final_cfg.surface.countV();
    const int ne = static_cast<int>(final_cfg.elements.size());

    OneStepWarmStart warm{mapping.blank_final.blank.surface.net().points(), {}};
    std::vector<PropertyMatrix> dmats(ne);
    std::vector<MaterialState> states_mb;
    double prev_applied = std::numeric_limits<double>::infinity();

    PhaseClock clock(timings, "outer-loop/level" + std::to_string(level));
    for (int iter = 1; iter <= settings.max_outer; ++iter) {
        for (int e = 0; e < ne; ++e)
            dmats[e] = property_matrix(mat, final_cfg.states[e]);

        const ForceVector f_in =
            in_plane_forces(middle, final_cfg, dmats, settings.threads);
        std::vector<Vec2> drawdisp(nodes);
        for (int g = 0; g < nodes; ++g)
            drawdisp[g] = plane.project(final_cfg.surface.net().point(g)) -
                          plane.project(middle.surface.net().point(g));
        ForceVector rhs = -f_in + friction_forces(final_cfg, mat, proc, drawdisp, 3);

        const SlidingFrameSet frames = sliding_frames(middle);
        SlidingResult slide =
            sliding_update(middle, final_cfg, dmats, rhs, frames, user_middle.surface, proc,
                           settings, sym, &assoc);
        if (slide.stalled && prev_applied > 10.0 * settings.tol_iter)
            throw SlidingError("sliding update folds the middle net at every step fraction "
                               "while the solution is still moving (last applied movement " +
                               std::to_string(prev_applied) + " of the diagonal)");
        if (!slide.stalled) prev_applied = slide.max_movement_rel;
        middle = std::move(slide.middle);

        const std::vector<MaterialState> states_fm =
            update_states(middle, final_cfg, mat, settings.threads);
        OneStepResult os_mid =
            one_step_iiga(middle, mat, proc, settings, sym, &warm, level);
        warm.blank_points = os_mid.blank.surface.net().points();
        warm.states = os_mid.final_states;
        states_mb = os_mid.final_states;

        const std::vector<PrincipalStrains> totals = total_strains(states_fm, states_mb);
        for (int e = 0; e < ne; ++e)
            final_cfg.states[e] = state_from_strains(mat, totals[e]);
        middle.states = states_mb;

        const auto [el, pl] = regimeCounts(final_cfg.states);
        rep.log.push_back({"multi-step", level, iter, slide.max_movement_rel, el, pl});
        rep.outer_iterations = iter;
        rep.blank = os_mid.blank;

        if (slide.max_movement_rel < settings.tol_iter || slide.stalled) {
            rep.converged = true;
            break;
        }
    }

    rep.middle = middle;
    rep.final = final_cfg;
    rep.middle_states = states_mb;
    rep.final_states = final_cfg.states;
    rep.fld_margins = fld_check(rep.final_states, mat);
    return rep;
}

}  // namespace

MultiStepReport run_multistep(const Configuration& final_config,
                              const Configuration& user_middle, const MaterialParams& mat,
                              const ProcessParams& proc, const SolverSettings& settings,
                              SymmetryMode sym) {
    mat.validate();
    proc.validate();
    settings.validate();

    Configuration f = final_config;
    Configuration mu = user_middle;
    std::vector<PhaseTiming> timings;
    std::vector<ConvergenceRecord> full_log;
    std::optional<std::vector<Vec3>> prev_contour;
    std::optional<MultiStepReport> last;

    for (int level = 0;; ++level) {
        if (level > 0) {
            f = refine_midpoints(f, mat);
            mu = refine_midpoints(mu, mat);
        }
        MultiStepReport rep =
            run_multistep_level(f, mu, mat, proc, settings, sym, level, timings);
        full_log.insert(full_log.end(), rep.log.begin(), rep.log.end());

        const auto contour = boundary_polyline(rep.blank.surface, 64);
        bool contour_converged = false;
        if (prev_contour) {
            double change = 0.0;
            for (size_t k = 0; k < contour.size(); ++k)
                change = std::max(change, (contour[k] - (*prev_contour)[k]).norm());
            contour_converged = change / f.surface.boundingBoxDiagonal() < settings.contour_tol;
        }
        prev_contour = contour;
        const int level_used = level;
        last = std::move(rep);
        if (contour_converged || level_used >= settings.refine_levels) break;
    }

    last->log = std::move(full_log);
    last->timings = std::move(timings);
    return std::move(*last);
}

OneStepPipeline one_step_pipeline(const Configuration& final_config, const MaterialParams& mat,
                                  const ProcessParams& proc, const SolverSettings& settings,
                                  SymmetryMode sym) {
    mat.validate();
    proc.validate();
    settings.validate();

    Configuration f = final_config;
    OneStepPipeline pipe{OneStepResult{final_config, {}, {}, false, 0}, final_config, {}, {}, 0};
    std::optional<std::vector<Vec3>> prev_contour;
    for (int level = 0;; ++level) {
        if (level > 0) f = refine_midpoints(f, mat);
        OneStepResult res = [&] {
            PhaseClock clock(pipe.timings, "one-step/level" + std::to_string(level));
            return one_step_iiga(f, mat, proc, settings, sym, nullptr, level);
        }();
        pipe.log.insert(pipe.log.end(), res.log.begin(), res.log.end());
        pipe.refine_levels_used = level;

        const auto contour = boundary_polyline(res.blank.surface, 64);
        bool contour_converged = false;
        if (prev_contour) {
            double change = 0.0;
            for (size_t k = 0; k < contour.size(); ++k)
                change = std::max(change, (contour[k] - (*prev_contour)[k]).norm());
            contour_converged = change / f.surface.boundingBoxDiagonal() < settings.contour_tol;
        }
        prev_contour = contour;
        f.states = res.final_states;
        pipe.final_used = f;
        pipe.result = std::move(res);
        if (contour_converged || level >= settings.refine_levels) break;
    }
    return pipe;
}

}  // namespace iiga
