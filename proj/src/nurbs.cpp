#include "iiga/nurbs.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <sstream>

namespace iiga {

namespace {

std::string fmtParam(double x) {
    std::ostringstream os;
    os << x;
    return os.str();
}

}  // namespace

KnotVector::KnotVector(std::vector<double> knots, int degree)
    : knots_(std::move(knots)), degree_(degree) {
    if (degree_ < 0) throw ValidationError("knot vector: negative degree");
    const int len = static_cast<int>(knots_.size());
    if (len < 2 * (degree_ + 1))
        throw ValidationError("knot vector: too short for degree " + std::to_string(degree_));
    for (int i = 0; i + 1 < len; ++i)
        if (knots_[i] > knots_[i + 1])
            throw ValidationError("knot vector: not non-decreasing at index " + std::to_string(i));
    if (knots_.front() == knots_.back())
        throw ValidationError("knot vector: zero-length parameter range");

    auto multiplicityAt = [&](int idx) {
        int c = 0;
        for (int i = 0; i < len; ++i)
            if (knots_[i] == knots_[idx]) ++c;
        return c;
    };
    if (multiplicityAt(0) != degree_ + 1 || multiplicityAt(len - 1) != degree_ + 1)
        throw ValidationError("knot vector: not clamped (end multiplicity must be degree+1)");
    for (int i = degree_ + 1; i < len - degree_ - 1; ++i) {
        int mult = 1;
        while (i + mult < len && knots_[i + mult] == knots_[i]) ++mult;
        if (mult > degree_)
            throw ValidationError("knot vector: interior knot multiplicity exceeds degree");
        i += mult - 1;
    }

    for (int k = degree_; k < len - degree_ - 1; ++k)
        if (knots_[k + 1] > knots_[k]) spans_.push_back({knots_[k], knots_[k + 1], k});
}

int KnotVector::findSpan(double xi) const {
    if (!contains(xi))
        throw DomainError("parameter " + fmtParam(xi) + " outside knot range [" +
                          fmtParam(minParam()) + ", " + fmtParam(maxParam()) + "]");
    const int n = basisCount();
    if (xi >= knots_[n]) return n - 1;  // last nonzero span
    // binary search: knots_[k] <= xi < knots_[k+1]
    int lo = degree_, hi = n;
    while (hi - lo > 1) {
        int mid = (lo + hi) / 2;
        if (xi < knots_[mid])
            hi = mid;
        else
            lo = mid;
    }
    return lo;
}

std::vector<double> KnotVector::greville() const {
    std::vector<double> g(basisCount());
    for (int i = 0; i < basisCount(); ++i) {
        double sum = 0;
        for (int j = 1; j <= degree_; ++j) sum += knots_[i + j];
        g[i] = degree_ > 0 ? sum / degree_ : 0.5 * (knots_[i] + knots_[i + 1]);
    }
    return g;
}

void KnotVector::basisValues(double xi, int& first, std::span<double> out) const {
    const int p = degree_;
    const int k = findSpan(xi);
    first = k - p;
    // Cox–de Boor, triangular scheme (only the p+1 nonzero functions).
    std::vector<double> left(p + 1), right(p + 1);
    out[0] = 1.0;
    for (int j = 1; j <= p; ++j) {
        left[j] = xi - knots_[k + 1 - j];
        right[j] = knots_[k + j] - xi;
        double saved = 0.0;
        for (int r = 0; r < j; ++r) {
            double temp = out[r] / (right[r + 1] + left[j - r]);
            out[r] = saved + right[r + 1] * temp;
            saved = left[j - r] * temp;
        }
        out[j] = saved;
    }
}

void KnotVector::basisDerivatives(double xi, int order, int& first, MatX& ders) const {
    const int p = degree_;
    const int k = findSpan(xi);
    first = k - p;
    const int nd = std::min(order, p);
    ders.setZero(order + 1, p + 1);

    // Knot-difference table (ndu) holding basis values and differences.
    MatX ndu(p + 1, p + 1);
    std::vector<double> left(p + 1), right(p + 1);
    ndu(0, 0) = 1.0;
    for (int j = 1; j <= p; ++j) {
        left[j] = xi - knots_[k + 1 - j];
        right[j] = knots_[k + j] - xi;
        double saved = 0.0;
        for (int r = 0; r < j; ++r) {
            ndu(j, r) = right[r + 1] + left[j - r];
            double temp = ndu(r, j - 1) / ndu(j, r);
            ndu(r, j) = saved + right[r + 1] * temp;
            saved = left[j - r] * temp;
        }
        ndu(j, j) = saved;
    }
    for (int j = 0; j <= p; ++j) ders(0, j) = ndu(j, p);

    MatX a(2, p + 1);
    for (int r = 0; r <= p; ++r) {
        int s1 = 0, s2 = 1;
        a(0, 0) = 1.0;
        for (int d = 1; d <= nd; ++d) {
            double acc = 0.0;
            const int rk = r - d, pk = p - d;
            if (r >= d) {
                a(s2, 0) = a(s1, 0) / ndu(pk + 1, rk);
                acc = a(s2, 0) * ndu(rk, pk);
            }
            const int j1 = (rk >= -1) ? 1 : -rk;
            const int j2 = (r - 1 <= pk) ? d - 1 : p - r;
            for (int j = j1; j <= j2; ++j) {
                a(s2, j) = (a(s1, j) - a(s1, j - 1)) / ndu(pk + 1, rk + j);
                acc += a(s2, j) * ndu(rk + j, pk);
            }
            if (r <= pk) {
                a(s2, d) = -a(s1, d - 1) / ndu(pk + 1, r);
                acc += a(s2, d) * ndu(r, pk);
            }
            ders(d, r) = acc;
            std::swap(s1, s2);
        }
    }
    double factor = p;
    for (int d = 1; d <= nd; ++d) {
        for (int j = 0; j <= p; ++j) ders(d, j) *= factor;
        factor *= (p - d);
    }
}

KnotVector KnotVector::inserted(double xi) const {
    if (xi <= minParam() || xi >= maxParam())
        throw DomainError("knot " + fmtParam(xi) + " to insert must lie strictly inside the range");
    std::vector<double> out = knots_;
    out.insert(std::upper_bound(out.begin(), out.end(), xi), xi);
    return KnotVector(std::move(out), degree_);
}

std::vector<std::pair<int, double>> bspline_basis(const KnotVector& kv, double xi) {
    const int p = kv.degree();
    std::vector<double> vals(p + 1);
    int first = 0;
    kv.basisValues(xi, first, vals);
    std::vector<std::pair<int, double>> out(p + 1);
    for (int j = 0; j <= p; ++j) out[j] = {first + j, vals[j]};
    return out;
}

std::vector<std::pair<int, double>> nurbs_basis_1d(const KnotVector& kv,
                                                   std::span<const double> weights,
                                                   double xi) {
    if (static_cast<int>(weights.size()) != kv.basisCount())
        throw ValidationError("nurbs basis: weight count does not match basis count");
    for (size_t i = 0; i < weights.size(); ++i)
        if (!(weights[i] > 0.0))
            throw ValidationError("nurbs basis: non-positive weight at index " + std::to_string(i));
    auto out = bspline_basis(kv, xi);
    double w = 0.0;
    for (auto& [idx, val] : out) {
        val *= weights[idx];
        w += val;
    }
    for (auto& [idx, val] : out) val /= w;
    return out;
}

ControlNet::ControlNet(int count_u, int count_v, MatX points, VecX weights)
    : n_(count_u), m_(count_v), points_(std::move(points)), weights_(std::move(weights)) {
    if (n_ < 1 || m_ < 1) throw ValidationError("control net: empty grid");
    if (points_.rows() != static_cast<long>(n_) * m_ || points_.cols() != 3)
        throw ValidationError("control net: point grid is " + std::to_string(points_.rows()) +
                              "x" + std::to_string(points_.cols()) + ", expected " +
                              std::to_string(n_ * m_) + "x3");
    if (weights_.size() != static_cast<long>(n_) * m_)
        throw ValidationError("control net: weight count does not match grid");
    for (long i = 0; i < weights_.size(); ++i)
        if (!(weights_[i] > 0.0))
            throw ValidationError("control net: non-positive weight at flat index " +
                                  std::to_string(i));
}

void ControlNet::setPoints(MatX pts) {
    if (pts.rows() != points_.rows() || pts.cols() != 3)
        throw ValidationError("control net: replacement points have wrong shape");
    points_ = std::move(pts);
}

NurbsSurface::NurbsSurface(KnotVector knot_u, KnotVector knot_v, ControlNet net)
    : ku_(std::move(knot_u)), kv_(std::move(knot_v)), net_(std::move(net)) {
    if (net_.countU() != ku_.basisCount() || net_.countV() != kv_.basisCount())
        throw ValidationError("surface: control net " + std::to_string(net_.countU()) + "x" +
                              std::to_string(net_.countV()) + " does not match basis counts " +
                              std::to_string(ku_.basisCount()) + "x" +
                              std::to_string(kv_.basisCount()));
}

SurfaceBasis NurbsSurface::basis(const ParametricPoint& pt, bool with_derivatives) const {
    if (!inDomain(pt))
        throw DomainError("surface parameter (" + fmtParam(pt.u) + ", " + fmtParam(pt.v) +
                          ") outside the parametric domain");
    const int p = ku_.degree(), q = kv_.degree();
    const int ncp = (p + 1) * (q + 1);
    int fu = 0, fv = 0;
    MatX du, dv;
    ku_.basisDerivatives(pt.u, with_derivatives ? 1 : 0, fu, du);
    kv_.basisDerivatives(pt.v, with_derivatives ? 1 : 0, fv, dv);

    SurfaceBasis out;
    out.indices.resize(ncp);
    out.values.resize(ncp);
    VecX raw(ncp), rawU(ncp), rawV(ncp);
    double w = 0, wu = 0, wv = 0;
    for (int a = 0; a <= p; ++a) {
        for (int b = 0; b <= q; ++b) {
            const int l = a * (q + 1) + b;
            const int flat = net_.flatIndex(fu + a, fv + b);
            out.indices[l] = flat;
            const double wgt = net_.weight(flat);
            raw[l] = du(0, a) * dv(0, b) * wgt;
            w += raw[l];
            if (with_derivatives) {
                rawU[l] = du(1, a) * dv(0, b) * wgt;
                rawV[l] = du(0, a) * dv(1, b) * wgt;
                wu += rawU[l];
                wv += rawV[l];
            }
        }
    }
    out.values = raw / w;
    if (with_derivatives) {
        out.du = (rawU - wu * out.values) / w;
        out.dv = (rawV - wv * out.values) / w;
    }
    return out;
}

Vec3 NurbsSurface::evaluate(const ParametricPoint& pt) const {
    const SurfaceBasis b = basis(pt, false);
    Vec3 out = Vec3::Zero();
    for (size_t l = 0; l < b.indices.size(); ++l) out += b.values[l] * net_.point(b.indices[l]);
    return out;
}

SurfaceDerivs NurbsSurface::derivatives(const ParametricPoint& pt, int order) const {
    if (!inDomain(pt))
        throw DomainError("surface parameter (" + fmtParam(pt.u) + ", " + fmtParam(pt.v) +
                          ") outside the parametric domain");
    const int p = ku_.degree(), q = kv_.degree();
    int fu = 0, fv = 0;
    MatX du, dv;
    ku_.basisDerivatives(pt.u, order, fu, du);
    kv_.basisDerivatives(pt.v, order, fv, dv);

    // Weighted numerator A(k,l) and denominator W(k,l) for derivative orders
    // (k in u, l in v); rational derivatives by the quotient rule.
    auto accumulate = [&](int ou, int ov, Vec3& A, double& W) {
        A.setZero();
        W = 0;
        for (int a = 0; a <= p; ++a)
            for (int b = 0; b <= q; ++b) {
                const int flat = net_.flatIndex(fu + a, fv + b);
                const double c = du(ou, a) * dv(ov, b) * net_.weight(flat);
                A += c * net_.point(flat);
                W += c;
            }
    };

    Vec3 A00, A10, A01, A20, A11, A02;
    double W00, W10, W01, W20, W11, W02;
    accumulate(0, 0, A00, W00);
    accumulate(1, 0, A10, W10);
    accumulate(0, 1, A01, W01);

    SurfaceDerivs d;
    d.point = A00 / W00;
    d.su = (A10 - W10 * d.point) / W00;
    d.sv = (A01 - W01 * d.point) / W00;
    d.suu.setZero();
    d.suv.setZero();
    d.svv.setZero();
    if (order >= 2) {
        accumulate(2, 0, A20, W20);
        accumulate(1, 1, A11, W11);
        accumulate(0, 2, A02, W02);
        d.suu = (A20 - 2.0 * W10 * d.su - W20 * d.point) / W00;
        d.suv = (A11 - W10 * d.sv - W01 * d.su - W11 * d.point) / W00;
        d.svv = (A02 - 2.0 * W01 * d.sv - W02 * d.point) / W00;
    }
    return d;
}

Vec3 NurbsSurface::corner(int cu, int cv) const {
    return net_.point(cu ? net_.countU() - 1 : 0, cv ? net_.countV() - 1 : 0);
}

double NurbsSurface::boundingBoxDiagonal() const {
    const Vec3 lo = net_.points().colwise().minCoeff();
    const Vec3 hi = net_.points().colwise().maxCoeff();
    return (hi - lo).norm();
}

NurbsSurface NurbsSurface::withPoints(MatX points) const {
    ControlNet net(net_.countU(), net_.countV(), std::move(points), net_.weights());
    return NurbsSurface(ku_, kv_, net);
}

Vec3 evaluate_surface(const NurbsSurface& s, const ParametricPoint& pt) {
    return s.evaluate(pt);
}

SurfaceDerivs surface_derivatives(const NurbsSurface& s, const ParametricPoint& pt) {
    return s.derivatives(pt, 1);
}

std::vector<ElementSpan> extract_elements(const NurbsSurface& s) {
    const auto& su = s.knotU().spans();
    const auto& sv = s.knotV().spans();
    const int p = s.degreeU(), q = s.degreeV();
    std::vector<ElementSpan> out;
    out.reserve(su.size() * sv.size());
    for (size_t jv = 0; jv < sv.size(); ++jv) {
        for (size_t iu = 0; iu < su.size(); ++iu) {
            ElementSpan e;
            e.index = static_cast<int>(out.size());
            e.span_u = static_cast<int>(iu);
            e.span_v = static_cast<int>(jv);
            e.u0 = su[iu].lo;
            e.u1 = su[iu].hi;
            e.v0 = sv[jv].lo;
            e.v1 = sv[jv].hi;
            const int fu = su[iu].knot_index - p;
            const int fv = sv[jv].knot_index - q;
            e.control_points.resize((p + 1) * (q + 1));
            for (int a = 0; a <= p; ++a)
                for (int b = 0; b <= q; ++b)
                    e.control_points[a * (q + 1) + b] =
                        (fu + a) * s.countV() + (fv + b);
            out.push_back(std::move(e));
        }
    }
    return out;
}

namespace {

// Boehm single-knot insertion on homogeneous rows. `stride` walks along the
// direction of insertion, `offset` selects the row; alphas are shared.
struct HomoNet {
    MatX pw;  // (n*m) x 4, homogeneous (w*x, w*y, w*z, w)
};

HomoNet toHomogeneous(const ControlNet& net) {
    HomoNet h;
    h.pw.resize(net.points().rows(), 4);
    for (long f = 0; f < net.points().rows(); ++f) {
        const double w = net.weight(static_cast<int>(f));
        h.pw.row(f) << net.point(static_cast<int>(f)).transpose() * w, w;
    }
    return h;
}

ControlNet fromHomogeneous(int n, int m, const MatX& pw) {
    MatX pts(pw.rows(), 3);
    VecX w(pw.rows());
    for (long f = 0; f < pw.rows(); ++f) {
        w[f] = pw(f, 3);
        if (!(w[f] > 0.0))
            throw ValidationError("knot insertion produced a non-positive weight");
        pts.row(f) = pw.row(f).head<3>() / w[f];
    }
    return ControlNet(n, m, std::move(pts), std::move(w));
}

// Insert one knot into the u direction of an n x m homogeneous grid.
void insertU(MatX& pw, int& n, int m, KnotVector& ku, double xi) {
    const int p = ku.degree();
    const auto& U = ku.knots();
    int mult = 0;
    for (double t : U)
        if (t == xi) ++mult;
    if (mult >= p)
        throw ValidationError("knot insertion would raise interior multiplicity beyond degree");
    const int k = ku.findSpan(xi);
    MatX out((n + 1) * static_cast<long>(m), 4);
    for (int j = 0; j < m; ++j) {
        for (int i = 0; i <= k - p; ++i) out.row(i * m + j) = pw.row(i * m + j);
        for (int i = k - p + 1; i <= k; ++i) {
            const double alpha = (xi - U[i]) / (U[i + p] - U[i]);
            out.row(i * m + j) =
                alpha * pw.row(i * m + j) + (1.0 - alpha) * pw.row((i - 1) * m + j);
        }
        for (int i = k + 1; i <= n; ++i) out.row(i * m + j) = pw.row((i - 1) * m + j);
    }
    pw = std::move(out);
    ku = ku.inserted(xi);
    ++n;
}

// Same along v; rows are contiguous so the index arithmetic differs.
void insertV(MatX& pw, int n, int& m, KnotVector& kv, double xi) {
    const int q = kv.degree();
    const auto& V = kv.knots();
    int mult = 0;
    for (double t : V)
        if (t == xi) ++mult;
    if (mult >= q)
        throw ValidationError("knot insertion would raise interior multiplicity beyond degree");
    const int k = kv.findSpan(xi);
    MatX out(static_cast<long>(n) * (m + 1), 4);
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j <= k - q; ++j) out.row(i * (m + 1) + j) = pw.row(i * m + j);
        for (int j = k - q + 1; j <= k; ++j) {
            const double alpha = (xi - V[j]) / (V[j + q] - V[j]);
            out.row(i * (m + 1) + j) =
                alpha * pw.row(i * m + j) + (1.0 - alpha) * pw.row(i * m + j - 1);
        }
        for (int j = k + 1; j <= m; ++j) out.row(i * (m + 1) + j) = pw.row(i * m + j - 1);
    }
    pw = std::move(out);
    kv = kv.inserted(xi);
    ++m;
}

}  // namespace

NurbsSurface NurbsSurface::refined(std::span<const double> new_knots_u,
                                   std::span<const double> new_knots_v) const {
    for (double x : new_knots_u)
        if (x <= ku_.minParam() || x >= ku_.maxParam())
            throw DomainError("refinement knot " + fmtParam(x) + " outside the u range");
    for (double x : new_knots_v)
        if (x <= kv_.minParam() || x >= kv_.maxParam())
            throw DomainError("refinement knot " + fmtParam(x) + " outside the v range");

    std::vector<double> us(new_knots_u.begin(), new_knots_u.end());
    std::vector<double> vs(new_knots_v.begin(), new_knots_v.end());
    std::sort(us.begin(), us.end());
    std::sort(vs.begin(), vs.end());

    HomoNet h = toHomogeneous(net_);
    KnotVector ku = ku_, kv = kv_;
    int n = countU(), m = countV();
    for (double x : us) insertU(h.pw, n, m, ku, x);
    for (double x : vs) insertV(h.pw, n, m, kv, x);
    return NurbsSurface(std::move(ku), std::move(kv), fromHomogeneous(n, m, h.pw));
}

NurbsSurface refine_knots(const NurbsSurface& s, std::span<const double> new_knots_u,
                          std::span<const double> new_knots_v) {
    return s.refined(new_knots_u, new_knots_v);
}

namespace {

struct NewtonState {
    ParametricPoint pt;
    double dist2;
};

double clampTo(double x, double lo, double hi) { return std::min(std::max(x, lo), hi); }

// One damped, domain-clamped Newton pass from a seed. Returns the best state
// reached and whether a convergence criterion fired.
bool newtonFromSeed(const NurbsSurface& s, const Vec3& target, ParametricPoint seed,
                    const InversionOptions& opts, int iters, NewtonState& best,
                    ParametricPoint& result) {
    const double ulo = s.knotU().minParam(), uhi = s.knotU().maxParam();
    const double vlo = s.knotV().minParam(), vhi = s.knotV().maxParam();
    const double uscale = uhi - ulo, vscale = vhi - vlo;

    // First-order stationarity on the parameter box: interior coordinates need
    // a small residual gradient, coordinates at a bound an outward one.
    auto stationary = [&](const ParametricPoint& pt, const Vec2& f, double dist,
                          const SurfaceDerivs& d, double rel_tol) {
        const double su_tol = rel_tol * dist * d.su.norm() + 1e-30;
        const double sv_tol = rel_tol * dist * d.sv.norm() + 1e-30;
        const bool at_ulo = pt.u - ulo < 1e-14 * uscale;
        const bool at_uhi = uhi - pt.u < 1e-14 * uscale;
        const bool at_vlo = pt.v - vlo < 1e-14 * vscale;
        const bool at_vhi = vhi - pt.v < 1e-14 * vscale;
        const bool ok_u = (at_ulo && f[0] >= -su_tol) || (at_uhi && f[0] <= su_tol) ||
                          std::abs(f[0]) <= su_tol;
        const bool ok_v = (at_vlo && f[1] >= -sv_tol) || (at_vhi && f[1] <= sv_tol) ||
                          std::abs(f[1]) <= sv_tol;
        return ok_u && ok_v;
    };

    ParametricPoint pt = seed;
    double prev_dist = std::numeric_limits<double>::infinity();
    int crawling = 0;
    for (int it = 0; it < iters; ++it) {
        const SurfaceDerivs d = s.derivatives(pt, 2);
        const Vec3 r = d.point - target;
        const double dist = r.norm();
        if (dist * dist < best.dist2) best = {pt, dist * dist};

        if (dist <= opts.point_tol) {
            result = pt;
            return true;
        }
        const Vec2 f(r.dot(d.su), r.dot(d.sv));
        // Strict certificate: the cosine criterion on interior coordinates,
        // outward residual gradient on active bounds.
        if (stationary(pt, f, dist, d, opts.cosine_tol)) {
            result = pt;
            return true;
        }
        // Distance decrease has flat-lined at the floating-point floor; a
        // loosely stationary point is the projection to machine accuracy.
        crawling = (dist > prev_dist * (1.0 - 1e-9)) ? crawling + 1 : 0;
        prev_dist = dist;
        if (crawling >= 3 && opts.allow_boundary && stationary(pt, f, dist, d, 1e-5)) {
            result = pt;
            return true;
        }

        Mat2 J;
        J << d.su.squaredNorm() + r.dot(d.suu), d.su.dot(d.sv) + r.dot(d.suv),
            d.su.dot(d.sv) + r.dot(d.suv), d.sv.squaredNorm() + r.dot(d.svv);
        Mat2 G;  // Gauss-Newton metric, always positive definite
        G << d.su.squaredNorm(), d.su.dot(d.sv), d.su.dot(d.sv), d.sv.squaredNorm();

        // Candidate directions: active-set-reduced Newton when a coordinate is
        // clamped at its bound, then full Newton, Gauss-Newton, steepest
        // descent.
        std::array<Vec2, 4> steps;
        int nsteps = 0;
        {
            const bool au = (pt.u - ulo < 1e-14 * uscale && f[0] > 0) ||
                            (uhi - pt.u < 1e-14 * uscale && f[0] < 0);
            const bool av = (pt.v - vlo < 1e-14 * vscale && f[1] > 0) ||
                            (vhi - pt.v < 1e-14 * vscale && f[1] < 0);
            if (au != av) {
                const int free_c = au ? 1 : 0;
                const double h =
                    J(free_c, free_c) > 0.1 * G(free_c, free_c) ? J(free_c, free_c)
                                                                : G(free_c, free_c);
                Vec2 red = Vec2::Zero();
                red[free_c] = -f[free_c] / h;
                steps[nsteps++] = red;
            }
        }
        if (std::abs(J.determinant()) > 1e-14 * J.norm() * J.norm())
            steps[nsteps++] = -J.inverse() * f;
        steps[nsteps++] = -G.inverse() * f;
        steps[nsteps++] = -f / std::max(G.norm(), 1e-30);

        ParametricPoint next = pt;
        bool accepted = false;
        for (int c = 0; c < nsteps && !accepted; ++c) {
            double lambda = 1.0;
            for (int half = 0; half < 30; ++half) {
                next.u = clampTo(pt.u + lambda * steps[c][0], ulo, uhi);
                next.v = clampTo(pt.v + lambda * steps[c][1], vlo, vhi);
                const Vec3 rn = s.evaluate(next) - target;
                if (rn.squaredNorm() <= dist * dist * (1.0 - 1e-12)) {
                    accepted = true;
                    break;
                }
                lambda *= 0.5;
            }
        }

        if (!accepted) {
            // No strictly improving feasible step: a box-stationary point is
            // the (possibly boundary) projection. The looser tolerance covers
            // plateaus at the floating-point floor.
            if (opts.allow_boundary &&
                stationary(pt, f, dist, d, 1e-5)) {
                result = pt;
                return true;
            }
            return false;
        }
        pt = next;
    }
    return false;
}

}  // namespace

ParametricPoint point_inversion(const NurbsSurface& s, const Vec3& target,
                                const ParametricPoint& guess, const InversionOptions& opts) {
    if (!s.inDomain(guess)) throw DomainError("point inversion: guess outside the domain");

    NewtonState best{guess, std::numeric_limits<double>::infinity()};
    ParametricPoint result;
    if (newtonFromSeed(s, target, guess, opts, opts.max_iter, best, result)) return result;

    // Stall: reseed from a coarse parametric grid and retry.
    const int per_span = s.degreeU() + 2;
    ParametricPoint bestSeed = best.pt;
    double bestSeedDist = std::numeric_limits<double>::infinity();
    for (const auto& su : s.knotU().spans()) {
        for (const auto& sv : s.knotV().spans()) {
            for (int a = 0; a <= per_span; ++a) {
                for (int b = 0; b <= per_span; ++b) {
                    ParametricPoint pt{su.lo + (su.hi - su.lo) * a / per_span,
                                       sv.lo + (sv.hi - sv.lo) * b / per_span};
                    const double d2 = (s.evaluate(pt) - target).squaredNorm();
                    if (d2 < bestSeedDist) {
                        bestSeedDist = d2;
                        bestSeed = pt;
                    }
                }
            }
        }
    }
    if (newtonFromSeed(s, target, bestSeed, opts, opts.max_iter, best, result)) return result;

    throw InversionError("point inversion failed to converge after " +
                             std::to_string(2 * opts.max_iter) + " iterations (best residual " +
                             std::to_string(std::sqrt(best.dist2)) + " mm)",
                         std::sqrt(best.dist2));
}

}  // namespace iiga
