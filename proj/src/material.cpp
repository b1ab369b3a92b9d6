#include "iiga/material.hpp"

#include <Eigen/Dense>
#include <cmath>

namespace iiga {

void MaterialParams::validate() const {
    if (!(K > 0)) throw ValidationError("material: strength coefficient K must be positive");
    if (!(n >= 0 && n < 1)) throw ValidationError("material: hardening exponent n must be in [0, 1)");
    if (!(r > 0)) throw ValidationError("material: Lankford coefficient r must be positive");
    if (!(E > 0)) throw ValidationError("material: Young's modulus E must be positive");
    if (!(nu >= 0 && nu < 0.5)) throw ValidationError("material: Poisson ratio must be in [0, 0.5)");
    if (!(mu >= 0)) throw ValidationError("material: friction coefficient must be non-negative");
    if (!(t0 > 0)) throw ValidationError("material: initial thickness must be positive");
}

double MaterialParams::transitionStrain() const {
    return std::pow(E / K, 1.0 / (n - 1.0));
}

PropertyMatrix elastic_matrix(const MaterialParams& p) {
    const double c = p.E / (1.0 - p.nu * p.nu);
    PropertyMatrix d;
    d << c, c * p.nu, 0.0, c * p.nu, c, 0.0, 0.0, 0.0, c * (1.0 - p.nu) / 2.0;
    return d;
}

PropertyMatrix plastic_matrix(const MaterialParams& p, double eq_stress, double eq_strain) {
    if (!(eq_strain > 0.0))
        throw ValidationError("plastic matrix requires a positive equivalent strain");
    const double r = p.r;
    const double c = (1.0 + r) / (1.0 + 2.0 * r) * eq_stress / eq_strain;
    PropertyMatrix d;
    d << c * (1.0 + r), c * r, 0.0, c * r, c * (1.0 + r), 0.0, 0.0, 0.0, 0.5 * c;
    return d;
}

double hardening(const MaterialParams& p, double eq_strain) {
    if (eq_strain < 0.0) throw ValidationError("hardening: negative equivalent strain");
    if (eq_strain == 0.0) return 0.0;
    return p.K * std::pow(eq_strain, p.n);
}

double hill_eq_strain(double eps1, double eps2, double r) {
    if (!(r > 0)) throw ValidationError("Hill equivalent: r must be positive");
    const double rad = eps1 * eps1 + eps2 * eps2 + (2.0 * r / (1.0 + r)) * eps1 * eps2;
    // rad >= (1 - r/(1+r))(e1^2+e2^2) > 0 for r > 0; guard against round-off.
    return (1.0 + r) / std::sqrt(1.0 + 2.0 * r) * std::sqrt(std::max(rad, 0.0));
}

double hill_eq_stress(double sig1, double sig2, double r) {
    if (!(r > 0)) throw ValidationError("Hill equivalent: r must be positive");
    const double rad = sig1 * sig1 + sig2 * sig2 - (2.0 * r / (1.0 + r)) * sig1 * sig2;
    return std::sqrt(std::max(rad, 0.0));
}

PrincipalStrains principal_strains(const Mat2& f) {
    const double det = f.determinant();
    if (!(det > 1e-12))
        throw DegenerateElementError("in-plane deformation gradient is not invertible (det = " +
                                     std::to_string(det) + ")");
    Eigen::JacobiSVD<Mat2> svd(f);
    const double l1 = svd.singularValues()[0];
    const double l2 = svd.singularValues()[1];
    PrincipalStrains out;
    out.eps1 = std::log(l1);
    out.eps2 = std::log(l2);
    out.eps3 = -(out.eps1 + out.eps2);
    return out;
}

PrincipalStrains principal_strains(std::span<const Vec2> reference_local,
                                   std::span<const Vec2> deformed_local) {
    if (reference_local.size() != deformed_local.size() || reference_local.size() < 3)
        throw ValidationError("principal strains: need matching coordinate sets of >= 3 points");
    const size_t n = reference_local.size();
    Vec2 cr = Vec2::Zero(), cd = Vec2::Zero();
    for (size_t i = 0; i < n; ++i) {
        cr += reference_local[i];
        cd += deformed_local[i];
    }
    cr /= static_cast<double>(n);
    cd /= static_cast<double>(n);

    // Least-squares fit of F: minimize sum |F (xr - cr) - (xd - cd)|^2.
    Mat2 a = Mat2::Zero();  // sum xr xr^T
    Mat2 b = Mat2::Zero();  // sum xd xr^T
    for (size_t i = 0; i < n; ++i) {
        const Vec2 xr = reference_local[i] - cr;
        const Vec2 xd = deformed_local[i] - cd;
        a += xr * xr.transpose();
        b += xd * xr.transpose();
    }
    const double detA = a.determinant();
    if (!(detA > 1e-20 * a.squaredNorm()))
        throw DegenerateElementError("principal strains: reference coordinates are collinear");
    const Mat2 f = b * a.inverse();
    return principal_strains(f);
}

MaterialState state_from_strains(const MaterialParams& p, const PrincipalStrains& eps) {
    MaterialState st;
    st.eps1 = eps.eps1;
    st.eps2 = eps.eps2;
    st.eps3 = eps.eps3;
    st.eq_strain = hill_eq_strain(eps.eps1, eps.eps2, p.r);
    if (st.eq_strain > p.transitionStrain()) {
        st.regime = Regime::Plastic;
        st.eq_stress = hardening(p, st.eq_strain);
    } else {
        st.regime = Regime::Elastic;
        st.eq_stress = p.E * st.eq_strain;
    }
    st.thickness = p.t0 * std::exp(st.eps3);
    return st;
}

PropertyMatrix property_matrix(const MaterialParams& p, const MaterialState& state) {
    if (state.regime == Regime::Plastic && state.eq_strain > 0.0)
        return plastic_matrix(p, state.eq_stress, state.eq_strain);
    return elastic_matrix(p);
}

double forming_limit_major(const MaterialParams& p, double eps_minor) {
    const double flc0_eng = (23.3 + 14.13 * p.t0) * (p.n / 0.21) / 100.0;
    const double flc0 = std::log(1.0 + flc0_eng);
    if (eps_minor <= 0.0) return flc0 - eps_minor;
    return flc0 + 0.358 * eps_minor;
}

std::vector<double> fld_check(std::span<const MaterialState> states, const MaterialParams& p) {
    std::vector<double> margins;
    margins.reserve(states.size());
    for (const MaterialState& st : states)
        margins.push_back(forming_limit_major(p, st.eps2) - st.eps1);
    return margins;
}

}  // namespace iiga
