#pragma once

#include "iiga/element.hpp"
#include "iiga/material.hpp"
#include "iiga/nurbs.hpp"
#include "iiga/types.hpp"

#include <Eigen/SparseCore>

#include <optional>
#include <span>
#include <string>
#include <vector>

namespace iiga {

enum class ConfigTag { Blank, Middle, Final };

/// A surface plus per-element material state.
struct Configuration {
    NurbsSurface surface;
    std::vector<ElementSpan> elements;
    std::vector<MaterialState> states;
    ConfigTag tag = ConfigTag::Final;

    static Configuration make(NurbsSurface s, ConfigTag tag, const MaterialParams& p);

    /// Replace the control points, keeping knots/weights; rebuilds nothing
    /// (the element spans depend only on the knots).
    void setPoints(MatX points) { surface = surface.withPoints(std::move(points)); }
};

/// Global force vector, component-major DOF layout: dof = comp * nodes + node.
using ForceVector = VecX;

/// Admissible displacement subspace of one control point. The basis columns
/// span the allowed directions; zero columns mean fully fixed.
struct NodeConstraint {
    MatX basis;  // dof x k, 0 <= k <= dof

    static NodeConstraint free(int dof) { return {MatX::Identity(dof, dof)}; }
    static NodeConstraint fixed(int dof) { return {MatX::Zero(dof, 0)}; }
    static NodeConstraint line(const VecX& direction);
    static NodeConstraint plane(const Vec3& t1, const Vec3& t2);
};

struct GlobalSystem {
    int dof_per_node = 0;
    int node_count = 0;
    Eigen::SparseMatrix<double> stiffness;
    ForceVector rhs;
    std::vector<NodeConstraint> constraints;  // size node_count; empty = all free
};

struct ReducedSystem {
    Eigen::SparseMatrix<double> stiffness;
    VecX rhs;
    Eigen::SparseMatrix<double> expansion;  // full displacement = expansion * reduced
};

struct SolverSettings {
    double tol_iter = 1e-4;        // relative control-point movement threshold
    int max_outer = 50;            // material-update iterations
    int refine_levels = 2;         // element-refinement passes
    double substep_fraction = 0.2; // sliding-constraint step bound
    double contour_tol = 0.005;    // refinement loop contour-change threshold
    int threads = 1;
    void validate() const;
};

struct ConvergenceRecord {
    std::string phase;
    int refine_level = 0;
    int iteration = 0;
    double max_movement = 0.0;  // relative to the part diagonal
    int elastic_count = 0;
    int plastic_count = 0;
};

/// Flat region clamped under the blank holder, specified in plan (x, y).
struct FlangeSpec {
    enum class Shape { None, Annulus, Rectangle };
    Shape shape = Shape::None;
    Vec2 center = Vec2::Zero();
    double inner_radius = 0.0, outer_radius = 0.0;  // annulus
    Vec2 inner_half = Vec2::Zero(), outer_half = Vec2::Zero();  // rectangle frame
    bool contains(const Vec2& xy) const;
};

struct ProcessParams {
    double blank_holder_force = 0.0;  // N
    Vec3 punch_axis = Vec3(0, 0, 1);
    double die_profile_radius = 5.0;    // mm
    double punch_profile_radius = 5.0;  // mm
    FlangeSpec flange;
    void validate() const;
};

/// Quarter: the i = 0 net edge lies in the x = 0 mirror plane and j = 0 in
/// y = 0 (Cartesian quarter plans). QuarterPolar: the i = 0 edge lies in
/// x = 0 and the i = max edge in y = 0 (polar quarter plans, e.g. an annular
/// sector swept in u).
enum class SymmetryMode { None, Quarter, QuarterPolar };

/// Orthonormal in-plane axes complementing the punch axis; blank-plane
/// coordinates are taken in this basis.
struct PlaneBasis {
    Vec3 a1, a2, axis;
    Vec2 project(const Vec3& x) const { return {a1.dot(x), a2.dot(x)}; }
    Vec3 unproject(const Vec2& x) const { return a1 * x[0] + a2 * x[1]; }
};
PlaneBasis plane_basis(const Vec3& punch_axis);

/// Per-element operators on one configuration: frame, transform, local
/// in-plane control coordinates, and (optionally) the local stiffness.
struct ElementOperators {
    std::vector<LocalFrame> frames;
    std::vector<TransformSet> transforms;
    std::vector<VecX> local_coords;  // 2 ncp each
    std::vector<MatX> k_local;       // empty unless stiffness requested
};

ElementOperators element_operators(const Configuration& cfg,
                                   std::span<const PropertyMatrix> dmats,
                                   const GaussRule& rule, int threads,
                                   bool with_stiffness);

/// Scatter element stiffnesses, transformed by the given per-element
/// transforms, into a global matrix with the requested DOFs per node.
Eigen::SparseMatrix<double> assemble_stiffness(int node_count,
                                               std::span<const ElementSpan> elements,
                                               std::span<const MatX> k_local,
                                               std::span<const TransformSet> transforms,
                                               int dof_per_node);

/// Whole-configuration assembly: element stiffnesses from the configuration's own
/// geometry and states, transformed by its own frames.
GlobalSystem assemble(const Configuration& config, std::span<const PropertyMatrix> dmats,
                      int dof_per_node, int threads = 1);

/// Symmetry / rigid-mode constraints. Quarter models constrain the i=0 net
/// edge to the x=0 plane and the j=0 edge to y=0; full models pin the node
/// nearest the centroid and restrict one neighbour to kill the in-plane
/// rotation.
std::vector<NodeConstraint> standard_constraints(const Configuration& cfg,
                                                 const PlaneBasis& plane, SymmetryMode sym,
                                                 int dof_per_node);

ReducedSystem apply_constraints(const GlobalSystem& sys);

/// Direct sparse symmetric solve of the constrained system; relative
/// residual at most 1e-10 or SolveError. Singular reduced systems raise
/// UnderConstrainedError carrying the null-space dimension estimate.
VecX solve(const GlobalSystem& sys);

/// Uniform-pressure Coulomb substitute for the blank-holder friction: force
/// magnitude mu * (holder force / flange area) * tributary area on flange
/// control points, directed against each point's in-plane displacement.
/// `inplane_displacement` is per control point in plan coordinates.
ForceVector friction_forces(const Configuration& cfg, const MaterialParams& mat,
                            const ProcessParams& proc,
                            std::span<const Vec2> inplane_displacement, int dof_per_node);

/// Principal-strain states between paired configurations (reference ->
/// deformed), element by element in their own local frames.
std::vector<MaterialState> update_states(const Configuration& reference,
                                         const Configuration& deformed,
                                         const MaterialParams& p, int threads = 1);

struct OneStepResult {
    Configuration blank;
    std::vector<MaterialState> final_states;
    std::vector<ConvergenceRecord> log;
    bool converged = false;
    int iterations = 0;
};

/// Optional warm start for repeated one-step solves on a drifting
/// configuration (same knot structure required).
struct OneStepWarmStart {
    MatX blank_points;
    std::vector<MaterialState> states;
};

/// One-step transfer-based inverse solve: develops the 3D configuration into
/// a flat blank (z = 0) through the iterated 2D equilibrium, returning the
/// blank and the configuration's accumulated states.
OneStepResult one_step_iiga(const Configuration& final_config, const MaterialParams& mat,
                            const ProcessParams& proc, const SolverSettings& settings,
                            SymmetryMode sym,
                            const OneStepWarmStart* warm = nullptr,
                            int refine_level = 0);

/// Ordered closed boundary polyline of a surface (parameter-rectangle edges
/// walked counter-clockwise; each edge contributes `samples_per_edge` points,
/// corners not duplicated).
std::vector<Vec3> boundary_polyline(const NurbsSurface& s, int samples_per_edge);

}  // namespace iiga
