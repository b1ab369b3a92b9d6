#pragma once

#include "iiga/types.hpp"

#include <span>
#include <vector>

namespace iiga {

/// Sheet material and process constants. Units: MPa for moduli and strength,
/// mm for thickness; the rest dimensionless.
struct MaterialParams {
    double K = 545.0;      // strength coefficient, MPa
    double n = 0.2562;     // hardening exponent
    double r = 1.1;        // Lankford coefficient (normal anisotropy)
    double E = 206000.0;   // Young's modulus, MPa
    double nu = 0.3;       // Poisson ratio
    double mu = 0.1;       // Coulomb friction coefficient
    double t0 = 1.0;       // initial sheet thickness, mm

    void validate() const;

    /// Equivalent strain at which the hardening curve crosses the elastic
    /// line: (E/K)^(1/(n-1)); stress is continuous across the transition.
    double transitionStrain() const;
};

/// 3x3 plane-stress property matrix relating {eps_x, eps_y, gamma_xy} to
/// {sig_x, sig_y, tau_xy} (MPa).
using PropertyMatrix = Mat3;

enum class Regime { Elastic, Plastic };

/// Per-element accumulated state.
struct MaterialState {
    double eps1 = 0.0, eps2 = 0.0, eps3 = 0.0;  // principal log strains
    double eq_strain = 0.0;
    double eq_stress = 0.0;  // MPa
    double thickness = 0.0;  // mm
    Regime regime = Regime::Elastic;
};

/// Plane-stress isotropic elasticity.
PropertyMatrix elastic_matrix(const MaterialParams& p);

/// Deformation-theory secant property matrix with normal anisotropy,
/// D = ((1+r)/(1+2r)) * (sigma/eps) * [[1+r, r, 0], [r, 1+r, 0], [0, 0, 0.5]].
PropertyMatrix plastic_matrix(const MaterialParams& p, double eq_stress, double eq_strain);

/// Hollomon power-law hardening, sigma = K * eps^n.
double hardening(const MaterialParams& p, double eq_strain);

/// Work-conjugate Hill equivalent strain under plane stress with normal
/// anisotropy; reduces to von Mises at r = 1.
double hill_eq_strain(double eps1, double eps2, double r);

/// Hill equivalent stress, sigma^2 = s1^2 + s2^2 - (2r/(1+r)) s1 s2.
double hill_eq_stress(double sig1, double sig2, double r);

struct PrincipalStrains {
    double eps1 = 0.0, eps2 = 0.0, eps3 = 0.0;  // eps1 >= eps2, eps3 = -(eps1+eps2)
};

/// Logarithmic principal strains of the in-plane deformation gradient fitted
/// (least squares) between two local coordinate sets of the same element.
/// Exact for homogeneous deformations; throws on a non-invertible gradient.
PrincipalStrains principal_strains(std::span<const Vec2> reference_local,
                                   std::span<const Vec2> deformed_local);

/// Same from an explicit 2x2 in-plane deformation gradient.
PrincipalStrains principal_strains(const Mat2& deformation_gradient);

/// State assembled from principal strains: Hill equivalents, hardening (or
/// the elastic line below the transition strain), and thickness update.
MaterialState state_from_strains(const MaterialParams& p, const PrincipalStrains& eps);

/// Property matrix for the regime recorded in a state.
PropertyMatrix property_matrix(const MaterialParams& p, const MaterialState& state);

/// Bilinear Keeler–Brazier forming limit curve in true strains:
/// FLC0 = ln(1 + (23.3 + 14.13 t0) * (n/0.21) / 100), slope -1 on the left
/// branch and +0.358 on the right.
double forming_limit_major(const MaterialParams& p, double eps_minor);

/// Per-element margin FLC(eps2) - eps1; negative flags necking risk.
std::vector<double> fld_check(std::span<const MaterialState> states, const MaterialParams& p);

}  // namespace iiga
