#pragma once

#include "iiga/solver.hpp"

#include <optional>
#include <span>
#include <string>
#include <vector>

namespace iiga {

/// Deduplicated physical nodes of a configuration: the four corner nodes and
/// the centre node of every element, each with its surface parameter.
struct PhysicalNode {
    ParametricPoint param;
    Vec3 position;
};

std::vector<PhysicalNode> physical_nodes(const Configuration& cfg);

struct MappingDiagnostics {
    int node_count = 0;
    double max_inversion_residual = 0.0;  // mm, over all located nodes
    double max_fit_error = 0.0;           // mm, fitted surface vs mapped points
    bool regularized_fit = false;
};

/// Result of the five-stage NURBS-based mapping that seeds the middle
/// configuration.
struct MappingResult {
    MatX middle_net;  // fitted control points, final-part knot structure
    std::vector<ParametricPoint> node_params_final;
    std::vector<ParametricPoint> node_params_middle;  // located on the user-middle blank
    MappingDiagnostics diagnostics;
};

/// Per-control-point frames with the third axis normal to the middle
/// surface at the point's Greville abscissa.
struct SlidingFrameSet {
    std::vector<ParametricPoint> params;
    std::vector<Vec3> normals;
    std::vector<Mat3> frames;  // columns: t1, t2, normal
};

SlidingFrameSet sliding_frames(const Configuration& middle);

/// Element index and surface parameter of the element of a flat blank
/// containing a plan point; points on shared edges resolve to the
/// lower-index element. Throws SearchError when no element contains it.
std::pair<int, ParametricPoint> find_containing_element(const Configuration& blank,
                                                        const Vec2& point2d);

/// Stages 1-5: one-step solves of both inputs, node location on the
/// user-middle blank, pull-back onto the user middle, and the least-squares
/// fit of the middle net through the mapped nodes.
MappingResult nurbs_mapping(const Configuration& final_config,
                            const Configuration& user_middle, const MaterialParams& mat,
                            const ProcessParams& proc, const SolverSettings& settings,
                            SymmetryMode sym);

/// Assembled in-plane force vector (3 dofs per control point) between a
/// middle and final net sharing knot structure: both nets expressed in the
/// final element's frame, f = k_local * (X_middle - X_final) carried to
/// global components and summed.
ForceVector in_plane_forces(const Configuration& middle, const Configuration& final_config,
                            std::span<const PropertyMatrix> dmats, int threads = 1);

struct SlidingResult {
    Configuration middle;
    double max_movement_rel = 0.0;  // relative to the part diagonal
    int substeps = 0;
    bool regularized = false;  // diagonal boost was needed for the reduced solve
    /// Every backtracked step folded the marginal parameterization; the
    /// middle was left unchanged and max_movement_rel reports the solved
    /// (unapplied) step.
    bool stalled = false;
};

/// Solve the final-configuration system under per-point tangent-plane
/// constraints and carry the middle net along the constraint surface in
/// substeps, recomputing normals after each. `seed_cache` (optional) carries
/// warm projection seeds across calls.
SlidingResult sliding_update(const Configuration& middle, const Configuration& final_config,
                             std::span<const PropertyMatrix> dmats, const ForceVector& rhs,
                             const SlidingFrameSet& frames,
                             const NurbsSurface& constraint_surface,
                             const ProcessParams& proc, const SolverSettings& settings,
                             SymmetryMode sym,
                             std::vector<ParametricPoint>* seed_cache = nullptr);

std::vector<PrincipalStrains> total_strains(std::span<const MaterialState> strains_fm,
                                            std::span<const MaterialState> strains_mb);

struct PhaseTiming {
    std::string phase;
    double seconds = 0.0;
};

struct MultiStepReport {
    Configuration blank;
    Configuration middle;            // states: blank -> middle strains
    Configuration final;             // states: total strains
    std::vector<MaterialState> middle_states;
    std::vector<MaterialState> final_states;
    std::vector<double> fld_margins;
    std::vector<ConvergenceRecord> log;
    std::vector<PhaseTiming> timings;
    MappingDiagnostics mapping;
    bool converged = false;
    int outer_iterations = 0;
    int refine_levels_used = 0;
    /// Sign convention note: the assembled in-plane force enters the solve
    /// negated, pulling the middle toward the final configuration.
    std::string force_sign_note;
};

MultiStepReport run_multistep(const Configuration& final_config,
                              const Configuration& user_middle, const MaterialParams& mat,
                              const ProcessParams& proc, const SolverSettings& settings,
                              SymmetryMode sym);

struct OneStepPipeline {
    OneStepResult result;
    Configuration final_used;  // refined final configuration with states
    std::vector<ConvergenceRecord> log;
    std::vector<PhaseTiming> timings;
    int refine_levels_used = 0;
};

/// One-step solve wrapped in the same contour-convergence refinement loop
/// the multi-step solver uses.
OneStepPipeline one_step_pipeline(const Configuration& final_config, const MaterialParams& mat,
                                  const ProcessParams& proc, const SolverSettings& settings,
                                  SymmetryMode sym);

/// Uniform midpoint knot refinement of a configuration (states reset).
Configuration refine_midpoints(const Configuration& cfg, const MaterialParams& mat);

}  // namespace iiga
