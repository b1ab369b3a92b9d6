#pragma once

#include <Eigen/Dense>
#include <stdexcept>
#include <string>

namespace iiga {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat2 = Eigen::Matrix2d;
using Mat3 = Eigen::Matrix3d;
using MatX = Eigen::MatrixXd;
using VecX = Eigen::VectorXd;

/// Base class for all library errors.
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

/// A parametric coordinate lies outside the knot range, or a knot to be
/// inserted lies outside the existing range.
struct DomainError : Error {
    using Error::Error;
};

/// An input value violates a type invariant (non-monotone knots, zero
/// weight, inconsistent grid dimensions, ...).
struct ValidationError : Error {
    using Error::Error;
};

/// Point inversion did not converge; carries the best residual reached.
struct InversionError : Error {
    double best_residual;
    InversionError(const std::string& msg, double res)
        : Error(msg), best_residual(res) {}
};

/// Element geometry is degenerate (coincident or collinear corner nodes).
struct DegenerateElementError : Error {
    using Error::Error;
};

/// The physical-to-parametric Jacobian is singular or non-positive.
struct SingularJacobianError : Error {
    using Error::Error;
};

/// The constrained global system is singular; carries the estimated
/// null-space dimension.
struct UnderConstrainedError : Error {
    int null_space_dim;
    UnderConstrainedError(const std::string& msg, int dim)
        : Error(msg), null_space_dim(dim) {}
};

/// Linear solver breakdown on a system expected to be SPD.
struct SolveError : Error {
    using Error::Error;
};

/// A mapped node falls outside every element of the surrounding blank.
struct SurroundError : Error {
    using Error::Error;
};

/// NURBS-based mapping failure other than a surround violation.
struct MappingError : Error {
    using Error::Error;
};

/// A 2D point query found no containing element.
struct SearchError : Error {
    using Error::Error;
};

/// Sliding-constraint update failed (frame recomputation on degenerate
/// geometry, or the constrained step could not be completed).
struct SlidingError : Error {
    using Error::Error;
};

/// Two configurations expected to share knot structure do not.
struct TopologyError : Error {
    using Error::Error;
};

/// Run configuration is malformed or violates an invariant.
struct ConfigError : Error {
    using Error::Error;
};

/// Benchmark generator received incompatible dimensions.
struct GeometryError : Error {
    using Error::Error;
};

/// File I/O failure; message carries the offending path.
struct IoError : Error {
    using Error::Error;
};

}  // namespace iiga
