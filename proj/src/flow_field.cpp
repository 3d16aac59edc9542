#include "dmd/flow_field.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iostream>
#include <mutex>
#include <sstream>

namespace dmd {

namespace {

std::mutex warning_mutex;
WarningHandler warning_handler;

} // namespace

void set_warning_handler(WarningHandler handler)
{
    std::lock_guard<std::mutex> lock(warning_mutex);
    warning_handler = std::move(handler);
}

void warn(const std::string& message)
{
    std::lock_guard<std::mutex> lock(warning_mutex);
    if (warning_handler)
        warning_handler(message);
    else
        std::cerr << "warning: " << message << '\n';
}

void GridGeometry::validate() const
{
    for (int axis = 0; axis < 3; ++axis) {
        if (dims[axis] < 2)
            throw PreconditionError("grid dims must be >= 2 on every axis");
        if (!(spacing[axis] > 0) || !std::isfinite(spacing[axis]))
            throw PreconditionError("grid spacing must be positive and finite");
        if (!std::isfinite(origin[axis]))
            throw PreconditionError("grid origin must be finite");
    }
}

Stencil locate(const GridGeometry& geometry, const Vec3& point, bool with_gradient)
{
    Stencil s;
    std::array<int, 3> base{};
    std::array<double, 3> t{};
    for (int axis = 0; axis < 3; ++axis) {
        double g = (point[axis] - geometry.origin[axis]) / geometry.spacing[axis];
        const int last = geometry.dims[axis] - 1;
        // Snap coordinates that are a few ulps off a node so node positions
        // computed as origin + i * spacing reproduce node values exactly.
        const double r = std::nearbyint(g);
        if (std::abs(g - r) <= 64 * std::numeric_limits<double>::epsilon() * std::max(1.0, std::abs(g)))
            g = r;
        if (!(g >= 0.0 && g <= last))
            return s;
        int b = static_cast<int>(std::floor(g));
        if (b >= last)
            b = last - 1;
        base[axis] = b;
        t[axis] = g - b;
    }
    s.inside = true;
    for (int c = 0; c < 8; ++c) {
        const int di = (c >> 2) & 1, dj = (c >> 1) & 1, dk = c & 1;
        const double wi = di ? t[0] : 1.0 - t[0];
        const double wj = dj ? t[1] : 1.0 - t[1];
        const double wk = dk ? t[2] : 1.0 - t[2];
        s.node[c] = geometry.node_index(base[0] + di, base[1] + dj, base[2] + dk);
        s.weight[c] = wi * wj * wk;
        if (with_gradient) {
            const double si = (di ? 1.0 : -1.0) / geometry.spacing[0];
            const double sj = (dj ? 1.0 : -1.0) / geometry.spacing[1];
            const double sk = (dk ? 1.0 : -1.0) / geometry.spacing[2];
            s.weight_gradient[c] = Vec3(si * wj * wk, wi * sj * wk, wi * wj * sk);
        }
    }
    return s;
}

// DFF1 ----------------------------------------------------------------------

namespace {

constexpr char kMagic[4] = {'D', 'F', 'F', '1'};

template <typename T>
T to_little_endian(T value)
{
    if constexpr (std::endian::native == std::endian::little)
        return value;
    unsigned char bytes[sizeof(T)];
    std::memcpy(bytes, &value, sizeof(T));
    for (std::size_t i = 0; i < sizeof(T) / 2; ++i)
        std::swap(bytes[i], bytes[sizeof(T) - 1 - i]);
    std::memcpy(&value, bytes, sizeof(T));
    return value;
}

template <typename T>
void write_le(std::ostream& out, T value)
{
    value = to_little_endian(value);
    out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
bool read_le(std::istream& in, T& value)
{
    if (!in.read(reinterpret_cast<char*>(&value), sizeof(T)))
        return false;
    value = to_little_endian(value);
    return true;
}

} // namespace

FlowField load_flow(const std::string& path, const FlowLoadOptions& options)
{
    using Code = FlowFileError::Code;
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw FlowFileError(Code::Io, "cannot open flow file '" + path + "'");

    char magic[4];
    if (!in.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0)
        throw FlowFileError(Code::BadMagic, "bad magic in flow file '" + path + "' (expected DFF1)");

    std::uint32_t dims[3];
    for (auto& d : dims)
        if (!read_le(in, d))
            throw FlowFileError(Code::Truncated, "truncated header in '" + path + "'");
    GridGeometry geometry;
    for (int axis = 0; axis < 3; ++axis) {
        if (dims[axis] < 2 || dims[axis] > (1u << 16))
            throw FlowFileError(Code::BadDims, "invalid grid dims in '" + path + "'");
        geometry.dims[axis] = static_cast<int>(dims[axis]);
    }
    for (int axis = 0; axis < 3; ++axis)
        if (!read_le(in, geometry.origin[axis]))
            throw FlowFileError(Code::Truncated, "truncated header in '" + path + "'");
    for (int axis = 0; axis < 3; ++axis)
        if (!read_le(in, geometry.spacing[axis]))
            throw FlowFileError(Code::Truncated, "truncated header in '" + path + "'");
    for (int axis = 0; axis < 3; ++axis)
        if (!(geometry.spacing[axis] > 0) || !std::isfinite(geometry.spacing[axis]) ||
            !std::isfinite(geometry.origin[axis]))
            throw FlowFileError(Code::BadDims, "invalid origin/spacing in '" + path + "'");

    std::vector<float> data(geometry.node_count() * 3);
    for (auto& x : data)
        if (!read_le(in, x))
            throw FlowFileError(Code::Truncated, "truncated payload in '" + path + "'");

    FlowField field(geometry, std::move(data));
    if (!is_finite(field))
        throw FlowFileError(Code::NonFinite, "non-finite values in '" + path + "'");
    if (!has_zero_boundary(field)) {
        if (!options.repair_boundary)
            throw FlowFileError(Code::BoundaryViolation,
                                "nonzero boundary nodes in '" + path + "' (v must vanish on the grid boundary)");
        warn("flow file '" + path + "' has nonzero boundary nodes; zeroing them");
        field = enforce_zero_boundary(std::move(field));
    }
    return field;
}

void store_flow(const FlowField& field, const std::string& path)
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out)
        throw FlowFileError(FlowFileError::Code::Io, "cannot write flow file '" + path + "'");
    const GridGeometry& g = field.geometry();
    out.write(kMagic, 4);
    for (int axis = 0; axis < 3; ++axis)
        write_le(out, static_cast<std::uint32_t>(g.dims[axis]));
    for (int axis = 0; axis < 3; ++axis)
        write_le(out, g.origin[axis]);
    for (int axis = 0; axis < 3; ++axis)
        write_le(out, g.spacing[axis]);
    for (float x : field.data())
        write_le(out, x);
    if (!out)
        throw FlowFileError(FlowFileError::Code::Io, "failed writing flow file '" + path + "'");
}

} // namespace dmd
