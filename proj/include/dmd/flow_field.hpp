#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <limits>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "dmd/types.hpp"

namespace dmd {

/// Node lattice of a flow field. Node (i,j,k) sits at origin + (i,j,k) * spacing
/// and the support of the interpolant is the closed box spanned by the nodes.
struct GridGeometry {
    Vec3i dims = Vec3i::Constant(2);
    Vec3 origin = Vec3::Zero();
    Vec3 spacing = Vec3::Ones();

    /// Throws PreconditionError unless dims >= 2 and spacing > 0 on every axis.
    void validate() const;

    std::size_t node_count() const
    {
        return static_cast<std::size_t>(dims[0]) * static_cast<std::size_t>(dims[1]) *
               static_cast<std::size_t>(dims[2]);
    }

    std::size_t node_index(int i, int j, int k) const
    {
        return (static_cast<std::size_t>(i) * static_cast<std::size_t>(dims[1]) +
                static_cast<std::size_t>(j)) *
                   static_cast<std::size_t>(dims[2]) +
               static_cast<std::size_t>(k);
    }

    Vec3 node_position(int i, int j, int k) const
    {
        return origin + Vec3(i * spacing[0], j * spacing[1], k * spacing[2]);
    }

    bool is_boundary(int i, int j, int k) const
    {
        return i == 0 || j == 0 || k == 0 || i == dims[0] - 1 || j == dims[1] - 1 ||
               k == dims[2] - 1;
    }

    Vec3 lower() const { return origin; }
    Vec3 upper() const { return origin + spacing.cwiseProduct((dims.array() - 1).cast<double>().matrix()); }

    bool contains(const Vec3& p) const
    {
        const Vec3 lo = lower(), hi = upper();
        return (p.array() >= lo.array()).all() && (p.array() <= hi.array()).all();
    }

    bool operator==(const GridGeometry& other) const
    {
        return dims == other.dims && origin == other.origin && spacing == other.spacing;
    }
};

/// Trilinear stencil of a world point: the eight corner nodes of its cell, their
/// weights and the spatial gradient of every weight.
struct Stencil {
    bool inside = false;
    std::array<std::size_t, 8> node{};
    std::array<double, 8> weight{};
    std::array<Vec3, 8> weight_gradient{};
};

Stencil locate(const GridGeometry& geometry, const Vec3& point, bool with_gradient = false);

/// Discrete flow U on a node lattice, 3-vector innermost. Scalar is the storage
/// type only; all evaluation happens in double.
template <typename Scalar>
class BasicFlowField {
public:
    using scalar_type = Scalar;

    BasicFlowField() = default;

    explicit BasicFlowField(const GridGeometry& geometry)
        : geometry_(geometry), data_(geometry.node_count() * 3, Scalar(0))
    {
        geometry_.validate();
    }

    BasicFlowField(const GridGeometry& geometry, std::vector<Scalar> data)
        : geometry_(geometry), data_(std::move(data))
    {
        geometry_.validate();
        if (data_.size() != geometry_.node_count() * 3)
            throw PreconditionError("flow field data size does not match grid dims");
    }

    const GridGeometry& geometry() const { return geometry_; }
    const std::vector<Scalar>& data() const { return data_; }
    std::vector<Scalar>& data() { return data_; }

    Eigen::Map<Vector3<Scalar>> node(std::size_t index) { return Eigen::Map<Vector3<Scalar>>(data_.data() + 3 * index); }
    Eigen::Map<const Vector3<Scalar>> node(std::size_t index) const
    {
        return Eigen::Map<const Vector3<Scalar>>(data_.data() + 3 * index);
    }
    Eigen::Map<Vector3<Scalar>> node(int i, int j, int k) { return node(geometry_.node_index(i, j, k)); }
    Eigen::Map<const Vector3<Scalar>> node(int i, int j, int k) const { return node(geometry_.node_index(i, j, k)); }

    Vec3 node_value(std::size_t index) const { return node(index).template cast<double>(); }

private:
    GridGeometry geometry_;
    std::vector<Scalar> data_;
};

using FlowField = BasicFlowField<float>;
using FlowFieldd = BasicFlowField<double>;

template <typename To, typename From>
BasicFlowField<To> field_cast(const BasicFlowField<From>& field)
{
    std::vector<To> data(field.data().begin(), field.data().end());
    return BasicFlowField<To>(field.geometry(), std::move(data));
}

/// Stability constants of the interpolant.
struct StabilityEstimate {
    Vec3 per_axis_lipschitz = Vec3::Zero();
    double lipschitz = 0;      // L, max over axes
    double max_speed = 0;      // M
    double lipschitz_safe = 0; // sqrt(3) * L, bounds the Euclidean Lipschitz constant
};

/// v(point). Zero outside the support.
template <typename Scalar>
Vec3 sample(const BasicFlowField<Scalar>& field, const Vec3& point)
{
    const Stencil s = locate(field.geometry(), point);
    Vec3 v = Vec3::Zero();
    if (!s.inside)
        return v;
    for (int c = 0; c < 8; ++c)
        v += s.weight[c] * field.node_value(s.node[c]);
    return v;
}

/// Spatial Jacobian dv/dx of the interpolant at point, using the same cell choice
/// as sample(). Zero outside the support.
template <typename Scalar>
Eigen::Matrix3d jacobian(const BasicFlowField<Scalar>& field, const Vec3& point)
{
    const Stencil s = locate(field.geometry(), point, true);
    Eigen::Matrix3d jac = Eigen::Matrix3d::Zero();
    if (!s.inside)
        return jac;
    for (int c = 0; c < 8; ++c)
        jac += field.node_value(s.node[c]) * s.weight_gradient[c].transpose();
    return jac;
}

/// Forward differences along each axis with zero padding past the last node;
/// L is the largest difference norm over spacing, M the largest node norm.
template <typename Scalar>
StabilityEstimate stability_estimate(const BasicFlowField<Scalar>& field)
{
    const GridGeometry& g = field.geometry();
    StabilityEstimate est;
    std::array<double, 3> max_diff{0.0, 0.0, 0.0};
    double max_norm = 0;
    for (int i = 0; i < g.dims[0]; ++i)
        for (int j = 0; j < g.dims[1]; ++j)
            for (int k = 0; k < g.dims[2]; ++k) {
                const Vec3 u = field.node_value(g.node_index(i, j, k));
                max_norm = std::max(max_norm, u.norm());
                const std::array<int, 3> idx{i, j, k};
                for (int axis = 0; axis < 3; ++axis) {
                    std::array<int, 3> next = idx;
                    ++next[axis];
                    Vec3 diff;
                    if (next[axis] < g.dims[axis])
                        diff = field.node_value(g.node_index(next[0], next[1], next[2])) - u;
                    else
                        diff = u;
                    max_diff[axis] = std::max(max_diff[axis], diff.norm());
                }
            }
    for (int axis = 0; axis < 3; ++axis)
        est.per_axis_lipschitz[axis] = max_diff[axis] / g.spacing[axis];
    est.lipschitz = est.per_axis_lipschitz.maxCoeff();
    est.max_speed = max_norm;
    est.lipschitz_safe = std::sqrt(3.0) * est.lipschitz;
    return est;
}

template <typename Scalar>
BasicFlowField<Scalar> enforce_zero_boundary(BasicFlowField<Scalar> field)
{
    const GridGeometry& g = field.geometry();
    for (int i = 0; i < g.dims[0]; ++i)
        for (int j = 0; j < g.dims[1]; ++j)
            for (int k = 0; k < g.dims[2]; ++k)
                if (g.is_boundary(i, j, k))
                    field.node(i, j, k).setZero();
    return field;
}

template <typename Scalar>
bool has_zero_boundary(const BasicFlowField<Scalar>& field)
{
    const GridGeometry& g = field.geometry();
    for (int i = 0; i < g.dims[0]; ++i)
        for (int j = 0; j < g.dims[1]; ++j)
            for (int k = 0; k < g.dims[2]; ++k)
                if (g.is_boundary(i, j, k) && !field.node(i, j, k).isZero(0))
                    return false;
    return true;
}

template <typename Scalar>
bool is_finite(const BasicFlowField<Scalar>& field)
{
    for (Scalar x : field.data())
        if (!std::isfinite(x))
            return false;
    return true;
}

/// Throws PreconditionError when the field is not finite or has a nonzero boundary node.
template <typename Scalar>
void check_field(const BasicFlowField<Scalar>& field)
{
    if (!is_finite(field))
        throw PreconditionError("flow field contains non-finite values");
    if (!has_zero_boundary(field))
        throw PreconditionError("flow field is nonzero on the grid boundary");
}

// DFF1 container ------------------------------------------------------------

class FlowFileError : public FormatError {
public:
    enum class Code { Io, BadMagic, BadDims, Truncated, NonFinite, BoundaryViolation };

    FlowFileError(Code code, const std::string& what) : FormatError(what), code_(code) {}
    Code code() const noexcept { return code_; }

private:
    Code code_;
};

struct FlowLoadOptions {
    /// Zero a nonzero boundary (with a warning) instead of rejecting the file.
    bool repair_boundary = false;
};

FlowField load_flow(const std::string& path, const FlowLoadOptions& options = {});
void store_flow(const FlowField& field, const std::string& path);

} // namespace dmd
