#pragma once

#include "iiga/nurbs.hpp"
#include "iiga/types.hpp"

#include <span>
#include <utility>
#include <vector>

namespace iiga {

/// 1D Gauss–Legendre rule on [-1, 1]; weights sum to 2.
struct GaussRule {
    VecX nodes;
    VecX weights;
    static GaussRule legendre(int points);
};

/// Physical nodes of an element: the four span corners and the span-midpoint
/// centre.
struct ElementNodes {
    Vec3 p1, p2, p3, p4, pc;
};

/// Element-local orthonormal frame: e1 along the first corner edge, e3 the
/// corner-plane normal, e2 = e3 x e1; origin at the element centre.
struct LocalFrame {
    Vec3 origin;
    Vec3 e1, e2, e3;

    /// Direction-cosine matrix with the local axes as columns.
    Mat3 axes() const {
        Mat3 q;
        q.col(0) = e1;
        q.col(1) = e2;
        q.col(2) = e3;
        return q;
    }
    Vec3 toLocal(const Vec3& global) const { return axes().transpose() * (global - origin); }
    Vec3 toGlobal(const Vec3& local) const { return axes() * local + origin; }
};

/// Direction-cosine matrix Q plus the block translation matrix T between the
/// element's 2-DOF local system and the 3-DOF global system. T is
/// (3 ncp) x (2 ncp), built from Q(i,j)*I blocks; DOF stacking is
/// [all x, all y(, all z)].
struct TransformSet {
    Mat3 Q;
    int ncp = 0;

    MatX matrix() const;

    /// T * f_local: local in-plane force carried to global components.
    VecX forceToGlobal(const VecX& f_local) const;
    /// T^T * d_global: global displacement restricted to the local plane.
    VecX displacementToLocal(const VecX& d_global) const;
    /// T * k_local * T^T: element stiffness in the global frame (3 ncp dofs).
    MatX stiffnessToGlobal(const MatX& k_local) const;
    /// Planar variant for a 2-DOF global system (z ignored); the 2x2 corner
    /// of Q must be orthogonal, which holds whenever e3 is +/- the global z.
    MatX stiffnessToGlobal2d(const MatX& k_local) const;
    VecX forceToGlobal2d(const VecX& f_local) const;
};

ElementNodes element_nodes(const ElementSpan& elem, const NurbsSurface& s);

/// Frame from the corner nodes; throws DegenerateElementError when the
/// corner cross product falls under 1e-12 of the edge-length product.
LocalFrame local_frame(const Vec3& p1, const Vec3& p2, const Vec3& p4, const Vec3& pc);
LocalFrame local_frame(const ElementNodes& nodes);

/// Frame used by the analysis path (stiffness, strains, in-plane coords):
/// e3 from the corner diagonals, e1 from the averaged u-edges projected into
/// the plane. Unlike the three-corner frame, the flattening plane is
/// invariant under the dihedral relabelings of the corners, which keeps the
/// discretization mirror-equivariant.
LocalFrame analysis_frame(const ElementNodes& nodes);

TransformSet transform_set(const LocalFrame& frame, int ncp);

std::vector<Vec3> to_local(std::span<const Vec3> coords_global, const LocalFrame& frame);

/// In-plane local coordinates of the element's control points, stacked
/// [x_1..x_ncp, y_1..y_ncp].
VecX local_inplane_coords(const ElementSpan& elem, const NurbsSurface& s,
                          const LocalFrame& frame);

struct StrainDisplacement {
    MatX B;       // 3 x (2 ncp)
    double detJ1; // physical<->parametric area Jacobian in the frame plane
};

/// Membrane strain-displacement matrix at a parametric point inside the
/// span, with derivatives taken in the frame's in-plane coordinates.
StrainDisplacement strain_displacement(const ElementSpan& elem, const NurbsSurface& s,
                                       const ParametricPoint& pt, const LocalFrame& frame);

/// (det J1, det J2) at a point of the element; det J2 is the exact affine
/// span->[-1,1]^2 factor.
std::pair<double, double> jacobians(const ElementSpan& elem, const NurbsSurface& s,
                                    const ParametricPoint& pt);

/// k = t * integral of B^T D B det(J1) det(J2) over the integration square.
MatX element_stiffness(const ElementSpan& elem, const NurbsSurface& s, const Mat3& material,
                       double thickness, const GaussRule& rule);

}  // namespace iiga
