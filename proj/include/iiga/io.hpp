#pragma once

#include "iiga/multistep.hpp"
#include "iiga/solver.hpp"

#include <json.hpp>

#include <array>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace iiga {

using Json = nlohmann::ordered_json;

/// Strain-extraction path on the final surface: an isoparametric line or the
/// u = v diagonal.
struct PathSpec {
    enum class Type { IsoU, IsoV, Diagonal };
    Type type = Type::IsoV;
    double fixed = 0.0;  // fixed parameter for iso paths
    int samples = 200;
};

struct RunConfig {
    MaterialParams material;
    ProcessParams process;
    std::optional<NurbsSurface> final_surface;
    std::optional<NurbsSurface> user_middle_surface;
    SolverSettings settings;
    SymmetryMode symmetry = SymmetryMode::None;
    PathSpec path;
    std::vector<std::string> outputs;  // default: contour, elements, path, fld, run
    Json metadata;                     // free-form, echoed into run.json

    bool oneStepOnly() const { return !user_middle_surface.has_value(); }
    void validate() const;
};

NurbsSurface surface_from_json(const Json& j, const std::string& field_path,
                               const std::string& base_dir = "");
Json surface_to_json(const NurbsSurface& s);

RunConfig parse_config(const std::string& path);
RunConfig parse_config_json(const Json& j, const std::string& base_dir = "");
Json config_to_json(const RunConfig& cfg);

/// Rectangular-box benchmark: quarter model of a deep-drawn box as a smooth
/// superelliptic height field with an arc-line-arc draw profile, plus a
/// shallower, wider user middle.
struct BoxBenchmarkParams {
    double blank_side = 128.0;       // mm, full blank edge (quarter model uses half)
    double depth = 36.0;             // mm
    double flange_start = 50.0;      // half-width where the flange begins
    double plan_half_width = 58.0;   // outer edge of the quarter plan
    double corner_exponent = 10.0;   // superellipse exponent of the plan sections
    double die_radius = 3.0;
    double punch_radius = 3.0;
    double wall_angle_deg = 80.0;    // wall inclination from horizontal
    double sheet_thickness = 0.6;    // mm (assumed)
    int resolution = 20;             // control points per direction at level 0
    double middle_depth_fraction = 0.70;  // punch-travel fraction of the user middle
    double middle_plan_scale = 1.26;      // blank inflation keeping the surround margin
};
RunConfig gen_box_benchmark(const BoxBenchmarkParams& params = {});

/// Two-step circular cup benchmark: quarter model of a stepped cup of
/// revolution (height field over a squared-disc plan), user middle = the
/// first-stage cup.
struct CupBenchmarkParams {
    double punch1_radius = 30.0;   // mm (first stage, diameter 60)
    double punch2_radius = 20.0;   // mm (second stage, diameter 40)
    double depth1 = 12.0;          // shoulder depth of the final part
    double depth2 = 22.0;          // total depth of the final part
    double flange_radius = 42.5;   // outer radius of the final part
    double die_radius = 3.0;
    double punch_radius = 3.0;
    double wall_angle_deg = 65.0;
    double center_hole_radius = 2.5;  // polar plan excludes a small centre disk
    int resolution = 20;
    double middle_depth = 14.0;       // first-stage cup depth
    double middle_flange_radius = 44.5;
    double reference_blank_diameter = 100.0;  // forward-FEM reference, metadata only
};
RunConfig gen_cup_benchmark(const CupBenchmarkParams& params = {});

struct ElementRow {
    int id = 0;
    Vec3 centroid = Vec3::Zero();
    double eps1 = 0, eps2 = 0, eps3 = 0;
    double eq_strain = 0, eq_stress = 0;
    double thickness = 0;
    double fld_margin = 0;
};

struct RunReport {
    std::string mode;  // "onestep" or "multistep"
    std::vector<Vec3> blank_contour;
    std::vector<ElementRow> elements;
    std::vector<ElementRow> middle_elements;  // multistep only
    std::vector<std::pair<double, double>> path_strain;  // arclength, thickness strain
    std::vector<std::array<double, 3>> fld_points;       // eps2, eps1, flc(eps2)
    std::vector<ConvergenceRecord> convergence;
    std::vector<PhaseTiming> timings;
    Json metadata;
    bool converged = false;
};

RunReport report_from_onestep(const OneStepPipeline& pipe, const RunConfig& cfg);
RunReport report_from_multistep(const MultiStepReport& rep, const RunConfig& cfg);

/// Emits contour.csv, elements.csv, path_strain.csv, fld.csv, run.json and
/// timings.csv under `outdir` (filtered by cfg outputs). All files except
/// timings.csv are byte-deterministic for identical reports.
void write_report(const RunReport& report, const std::string& outdir,
                  const std::vector<std::string>& outputs = {});

/// Shortest round-trip decimal rendering of a double (deterministic).
std::string format_double(double v);

/// Mean diameter of a quarter-blank's outer arc (samples on the u = max and
/// v = max edges).
double cup_blank_diameter(const NurbsSurface& blank);

}  // namespace iiga
