#include "iiga/element.hpp"

#include <cmath>

namespace iiga {

GaussRule GaussRule::legendre(int points) {
    if (points < 1) throw ValidationError("gauss rule: need at least one point");
    GaussRule rule;
    rule.nodes.resize(points);
    rule.weights.resize(points);
    const int n = points;
    for (int i = 1; i <= (n + 1) / 2; ++i) {
        double x = std::cos(M_PI * (i - 0.25) / (n + 0.5));
        double dp = 0.0;
        for (int it = 0; it < 100; ++it) {
            double p1 = 1.0, p2 = 0.0;
            for (int j = 1; j <= n; ++j) {
                const double p3 = p2;
                p2 = p1;
                p1 = ((2.0 * j - 1.0) * x * p2 - (j - 1.0) * p3) / j;
            }
            dp = n * (x * p1 - p2) / (x * x - 1.0);
            const double dx = p1 / dp;
            x -= dx;
            if (std::abs(dx) < 1e-15) break;
        }
        const double w = 2.0 / ((1.0 - x * x) * dp * dp);
        rule.nodes[i - 1] = -x;
        rule.nodes[n - i] = x;
        rule.weights[i - 1] = w;
        rule.weights[n - i] = w;
    }
    return rule;
}

ElementNodes element_nodes(const ElementSpan& elem, const NurbsSurface& s) {
    ElementNodes n;
    n.p1 = s.evaluate({elem.u0, elem.v0});
    n.p2 = s.evaluate({elem.u1, elem.v0});
    n.p3 = s.evaluate({elem.u1, elem.v1});
    n.p4 = s.evaluate({elem.u0, elem.v1});
    n.pc = s.evaluate({elem.umid(), elem.vmid()});
    return n;
}

LocalFrame local_frame(const Vec3& p1, const Vec3& p2, const Vec3& p4, const Vec3& pc) {
    const Vec3 a = p2 - p1;
    const Vec3 b = p4 - p1;
    const Vec3 cross = a.cross(b);
    const double scale = a.norm() * b.norm();
    if (!(a.norm() > 0.0) || cross.norm() <= 1e-12 * scale)
        throw DegenerateElementError("element corner nodes are coincident or collinear");
    LocalFrame f;
    f.origin = pc;
    f.e1 = a.normalized();
    f.e3 = cross.normalized();
    f.e2 = f.e3.cross(f.e1);
    return f;
}

LocalFrame local_frame(const ElementNodes& nodes) {
    return local_frame(nodes.p1, nodes.p2, nodes.p4, nodes.pc);
}

LocalFrame analysis_frame(const ElementNodes& n) {
    const Vec3 d1 = n.p3 - n.p1;
    const Vec3 d2 = n.p4 - n.p2;
    const Vec3 cross = d1.cross(d2);
    if (cross.norm() <= 1e-12 * d1.norm() * d2.norm())
        throw DegenerateElementError("element corner diagonals are collinear or degenerate");
    LocalFrame f;
    f.origin = n.pc;
    f.e3 = cross.normalized();
    const Vec3 a = (n.p2 - n.p1) + (n.p3 - n.p4);
    const Vec3 a_in = a - a.dot(f.e3) * f.e3;
    if (!(a_in.norm() > 1e-12 * a.norm()))
        throw DegenerateElementError("element u-edges are normal to the corner plane");
    f.e1 = a_in.normalized();
    f.e2 = f.e3.cross(f.e1);
    return f;
}

MatX TransformSet::matrix() const {
    MatX t = MatX::Zero(3 * ncp, 2 * ncp);
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 2; ++j)
            t.block(i * ncp, j * ncp, ncp, ncp) =
                Q(i, j) * MatX::Identity(ncp, ncp);
    return t;
}

VecX TransformSet::forceToGlobal(const VecX& f_local) const {
    VecX out = VecX::Zero(3 * ncp);
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 2; ++j)
            out.segment(i * ncp, ncp) += Q(i, j) * f_local.segment(j * ncp, ncp);
    return out;
}

VecX TransformSet::displacementToLocal(const VecX& d_global) const {
    VecX out = VecX::Zero(2 * ncp);
    for (int j = 0; j < 2; ++j)
        for (int i = 0; i < 3; ++i)
            out.segment(j * ncp, ncp) += Q(i, j) * d_global.segment(i * ncp, ncp);
    return out;
}

MatX TransformSet::stiffnessToGlobal(const MatX& k_local) const {
    MatX out = MatX::Zero(3 * ncp, 3 * ncp);
    for (int i = 0; i < 3; ++i)
        for (int i2 = 0; i2 < 3; ++i2)
            for (int j = 0; j < 2; ++j)
                for (int j2 = 0; j2 < 2; ++j2)
                    out.block(i * ncp, i2 * ncp, ncp, ncp) +=
                        Q(i, j) * Q(i2, j2) * k_local.block(j * ncp, j2 * ncp, ncp, ncp);
    return out;
}

MatX TransformSet::stiffnessToGlobal2d(const MatX& k_local) const {
    MatX out = MatX::Zero(2 * ncp, 2 * ncp);
    for (int i = 0; i < 2; ++i)
        for (int i2 = 0; i2 < 2; ++i2)
            for (int j = 0; j < 2; ++j)
                for (int j2 = 0; j2 < 2; ++j2)
                    out.block(i * ncp, i2 * ncp, ncp, ncp) +=
                        Q(i, j) * Q(i2, j2) * k_local.block(j * ncp, j2 * ncp, ncp, ncp);
    return out;
}

VecX TransformSet::forceToGlobal2d(const VecX& f_local) const {
    VecX out = VecX::Zero(2 * ncp);
    for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 2; ++j)
            out.segment(i * ncp, ncp) += Q(i, j) * f_local.segment(j * ncp, ncp);
    return out;
}

TransformSet transform_set(const LocalFrame& frame, int ncp) {
    return TransformSet{frame.axes(), ncp};
}

std::vector<Vec3> to_local(std::span<const Vec3> coords_global, const LocalFrame& frame) {
    std::vector<Vec3> out;
    out.reserve(coords_global.size());
    for (const Vec3& x : coords_global) out.push_back(frame.toLocal(x));
    return out;
}

VecX local_inplane_coords(const ElementSpan& elem, const NurbsSurface& s,
                          const LocalFrame& frame) {
    const int ncp = static_cast<int>(elem.control_points.size());
    VecX out(2 * ncp);
    for (int a = 0; a < ncp; ++a) {
        const Vec3 loc = frame.toLocal(s.net().point(elem.control_points[a]));
        out[a] = loc[0];
        out[ncp + a] = loc[1];
    }
    return out;
}

StrainDisplacement strain_displacement(const ElementSpan& elem, const NurbsSurface& s,
                                       const ParametricPoint& pt, const LocalFrame& frame) {
    const SurfaceBasis b = s.basis(pt, true);
    const SurfaceDerivs d = s.derivatives(pt, 1);
    const int ncp = static_cast<int>(elem.control_points.size());

    // In-plane metric of the parametric tangents in the element frame.
    Mat2 j1;
    j1 << d.su.dot(frame.e1), d.su.dot(frame.e2), d.sv.dot(frame.e1), d.sv.dot(frame.e2);
    const double det = j1.determinant();
    if (!(det > 0.0))
        throw SingularJacobianError("element Jacobian J1 is singular or negative (det = " +
                                    std::to_string(det) + ")");
    const Mat2 j1inv = j1.inverse();

    StrainDisplacement out;
    out.detJ1 = det;
    out.B = MatX::Zero(3, 2 * ncp);
    for (int a = 0; a < ncp; ++a) {
        const Vec2 gradXi(b.du[a], b.dv[a]);
        const Vec2 gradX = j1inv * gradXi;
        out.B(0, a) = gradX[0];
        out.B(1, ncp + a) = gradX[1];
        out.B(2, a) = gradX[1];
        out.B(2, ncp + a) = gradX[0];
    }
    return out;
}

std::pair<double, double> jacobians(const ElementSpan& elem, const NurbsSurface& s,
                                    const ParametricPoint& pt) {
    const LocalFrame frame = analysis_frame(element_nodes(elem, s));
    const SurfaceDerivs d = s.derivatives(pt, 1);
    Mat2 j1;
    j1 << d.su.dot(frame.e1), d.su.dot(frame.e2), d.sv.dot(frame.e1), d.sv.dot(frame.e2);
    const double detJ1 = j1.determinant();
    if (!(detJ1 > 0.0))
        throw DegenerateElementError("element has non-positive Jacobian det(J1)");
    const double detJ2 = 0.25 * (elem.u1 - elem.u0) * (elem.v1 - elem.v0);
    return {detJ1, detJ2};
}

MatX element_stiffness(const ElementSpan& elem, const NurbsSurface& s, const Mat3& material,
                       double thickness, const GaussRule& rule) {
    if ((material - material.transpose()).norm() > 1e-9 * (1.0 + material.norm()))
        throw ValidationError("material property matrix is not symmetric");
    const LocalFrame frame = analysis_frame(element_nodes(elem, s));
    const int ncp = static_cast<int>(elem.control_points.size());
    const double detJ2 = 0.25 * (elem.u1 - elem.u0) * (elem.v1 - elem.v0);

    MatX k = MatX::Zero(2 * ncp, 2 * ncp);
    for (int gi = 0; gi < rule.nodes.size(); ++gi) {
        const double u = elem.u0 + 0.5 * (rule.nodes[gi] + 1.0) * (elem.u1 - elem.u0);
        for (int gj = 0; gj < rule.nodes.size(); ++gj) {
            const double v = elem.v0 + 0.5 * (rule.nodes[gj] + 1.0) * (elem.v1 - elem.v0);
            const StrainDisplacement sd = strain_displacement(elem, s, {u, v}, frame);
            const double w = rule.weights[gi] * rule.weights[gj] * thickness * sd.detJ1 * detJ2;
            k.noalias() += w * sd.B.transpose() * material * sd.B;
        }
    }
    // Enforce exact symmetry against quadrature round-off.
    k = 0.5 * (k + k.transpose()).eval();
    return k;
}

}  // namespace iiga
