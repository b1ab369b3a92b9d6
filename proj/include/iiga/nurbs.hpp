#pragma once

#include "iiga/types.hpp"

#include <span>
#include <utility>
#include <vector>

namespace iiga {

/// Open (clamped) knot vector of a given polynomial degree.
///
/// Invariants enforced on construction: knots non-decreasing, first and
/// last knot each repeated exactly degree+1 times, interior multiplicity
/// at most degree. Evaluation at an interior knot uses the
/// right-continuous span convention; the maximum parameter maps to the
/// last nonzero span.
class KnotVector {
public:
    KnotVector(std::vector<double> knots, int degree);

    int degree() const { return degree_; }
    /// Number of basis functions n (= knots.size() - degree - 1).
    int basisCount() const { return static_cast<int>(knots_.size()) - degree_ - 1; }
    double minParam() const { return knots_.front(); }
    double maxParam() const { return knots_.back(); }
    bool contains(double xi) const { return xi >= minParam() && xi <= maxParam(); }
    const std::vector<double>& knots() const { return knots_; }

    struct Span {
        double lo, hi;
        int knot_index;  // index k with knots[k] = lo, knots[k+1] = hi
    };
    /// Nonzero spans, left to right.
    const std::vector<Span>& spans() const { return spans_; }
    int spanCount() const { return static_cast<int>(spans_.size()); }

    /// Knot index k such that knots[k] <= xi < knots[k+1]; xi == maxParam
    /// maps to the last nonzero span. Throws DomainError outside range.
    int findSpan(double xi) const;

    /// Greville abscissa of each basis function.
    std::vector<double> greville() const;

    /// Values of the degree+1 basis functions that are nonzero on the span
    /// containing xi. `first` receives the index of the first of them.
    void basisValues(double xi, int& first, std::span<double> out) const;

    /// Basis values and derivatives up to `order`. Row k of `ders` holds the
    /// k-th derivatives of the degree+1 active functions.
    void basisDerivatives(double xi, int order, int& first, MatX& ders) const;

    /// Knot vector with `xi` inserted once (interior, multiplicity <= degree
    /// afterwards). Used by surface refinement.
    KnotVector inserted(double xi) const;

private:
    std::vector<double> knots_;
    int degree_;
    std::vector<Span> spans_;
};

/// Cox–de Boor B-spline basis at xi: the p+1 (index, value) pairs active on
/// the containing span.
std::vector<std::pair<int, double>> bspline_basis(const KnotVector& kv, double xi);

/// One-dimensional rational basis with strictly positive weights.
std::vector<std::pair<int, double>> nurbs_basis_1d(const KnotVector& kv,
                                                   std::span<const double> weights,
                                                   double xi);

struct ParametricPoint {
    double u = 0.0;
    double v = 0.0;
};

/// Weighted control net of a surface: an n-by-m grid of 3D points (mm) with
/// strictly positive weights, stored row-major (u index outer).
class ControlNet {
public:
    ControlNet(int count_u, int count_v, MatX points, VecX weights);

    int countU() const { return n_; }
    int countV() const { return m_; }
    int flatIndex(int i, int j) const { return i * m_ + j; }
    Vec3 point(int i, int j) const { return points_.row(flatIndex(i, j)); }
    Vec3 point(int flat) const { return points_.row(flat); }
    double weight(int i, int j) const { return weights_[flatIndex(i, j)]; }
    double weight(int flat) const { return weights_[flat]; }
    const MatX& points() const { return points_; }
    const VecX& weights() const { return weights_; }
    void setPoints(MatX pts);

private:
    int n_, m_;
    MatX points_;   // (n*m) x 3
    VecX weights_;  // n*m
};

/// One nonzero knot-span cell of a surface: parametric bounds plus the flat
/// indices of the (p+1)(q+1) control points supporting it. Element order is
/// u-fastest: index = span_v * spanCountU + span_u. Local control-point
/// order is v-fastest: local = a*(q+1)+b for offsets (a,b) from the span
/// anchor.
struct ElementSpan {
    int index = 0;
    int span_u = 0, span_v = 0;  // span ordinals per direction
    double u0 = 0, u1 = 0, v0 = 0, v1 = 0;
    std::vector<int> control_points;

    double umid() const { return 0.5 * (u0 + u1); }
    double vmid() const { return 0.5 * (v0 + v1); }
    double parametricArea() const { return (u1 - u0) * (v1 - v0); }
};

/// Active rational basis data at one surface parameter.
struct SurfaceBasis {
    std::vector<int> indices;  // flat control-point indices, v-fastest
    VecX values;               // R
    VecX du, dv;               // dR/du, dR/dv (filled when requested)
};

struct SurfaceDerivs {
    Vec3 point;
    Vec3 su, sv;              // first parametric derivatives
    Vec3 suu, suv, svv;       // second derivatives (order >= 2 requests)
};

struct InversionOptions {
    int max_iter = 50;
    double point_tol = 1e-8;   // mm; coincidence criterion
    double cosine_tol = 1e-8;  // orthogonality criterion for off-surface targets
    bool allow_boundary = true;
};

/// Tensor-product NURBS surface: two clamped knot vectors and a weighted
/// control net.
class NurbsSurface {
public:
    NurbsSurface(KnotVector knot_u, KnotVector knot_v, ControlNet net);

    const KnotVector& knotU() const { return ku_; }
    const KnotVector& knotV() const { return kv_; }
    const ControlNet& net() const { return net_; }
    int countU() const { return net_.countU(); }
    int countV() const { return net_.countV(); }
    int degreeU() const { return ku_.degree(); }
    int degreeV() const { return kv_.degree(); }

    bool inDomain(const ParametricPoint& pt) const {
        return ku_.contains(pt.u) && kv_.contains(pt.v);
    }

    Vec3 evaluate(const ParametricPoint& pt) const;
    SurfaceDerivs derivatives(const ParametricPoint& pt, int order = 1) const;
    SurfaceBasis basis(const ParametricPoint& pt, bool with_derivatives) const;

    /// Corner control point (cu, cv in {0,1} select min/max ends).
    Vec3 corner(int cu, int cv) const;

    /// Diagonal of the control-net bounding box; the natural length scale.
    double boundingBoxDiagonal() const;

    /// Returns a geometry-identical surface with the given knots inserted.
    NurbsSurface refined(std::span<const double> new_knots_u,
                         std::span<const double> new_knots_v) const;

    /// Surface with the same knot structure but a replacement control net
    /// (same weights).
    NurbsSurface withPoints(MatX points) const;

private:
    KnotVector ku_, kv_;
    ControlNet net_;
};

Vec3 evaluate_surface(const NurbsSurface& s, const ParametricPoint& pt);
SurfaceDerivs surface_derivatives(const NurbsSurface& s, const ParametricPoint& pt);

/// Closest-point projection of `target` onto the surface by damped Newton on
/// the two tangent-residual equations, reseeded from a coarse parametric grid
/// on stall. Throws InversionError (with the best residual) on
/// non-convergence.
ParametricPoint point_inversion(const NurbsSurface& s, const Vec3& target,
                                const ParametricPoint& guess,
                                const InversionOptions& opts = {});

/// One element per pair of nonzero knot spans.
std::vector<ElementSpan> extract_elements(const NurbsSurface& s);

NurbsSurface refine_knots(const NurbsSurface& s, std::span<const double> new_knots_u,
                          std::span<const double> new_knots_v);

}  // namespace iiga
