#include "dmd/intersection.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>

#include <boost/multiprecision/cpp_int.hpp>

namespace dmd {

namespace {

using Rational = boost::multiprecision::cpp_rational;

constexpr double kEpsilon = std::numeric_limits<double>::epsilon() / 2; // 2^-53
constexpr double kOrient3dBound = (7.0 + 56.0 * kEpsilon) * kEpsilon;
constexpr double kOrient2dBound = (3.0 + 16.0 * kEpsilon) * kEpsilon;
// Below this the static bound is not trusted (underflow in the products).
constexpr double kTinyPermanent = 1e-250;

template <typename T>
int sign(const T& value)
{
    return value > 0 ? 1 : (value < 0 ? -1 : 0);
}

int orient3d_exact(const Vec3& a, const Vec3& b, const Vec3& c, const Vec3& d)
{
    const Rational adx = Rational(b[0]) - a[0], ady = Rational(b[1]) - a[1], adz = Rational(b[2]) - a[2];
    const Rational bdx = Rational(c[0]) - a[0], bdy = Rational(c[1]) - a[1], bdz = Rational(c[2]) - a[2];
    const Rational cdx = Rational(d[0]) - a[0], cdy = Rational(d[1]) - a[1], cdz = Rational(d[2]) - a[2];
    const Rational det = adx * (bdy * cdz - bdz * cdy) - ady * (bdx * cdz - bdz * cdx) + adz * (bdx * cdy - bdy * cdx);
    return sign(det);
}

} // namespace

int orient3d(const Vec3& a, const Vec3& b, const Vec3& c, const Vec3& d)
{
    const double adx = b[0] - a[0], ady = b[1] - a[1], adz = b[2] - a[2];
    const double bdx = c[0] - a[0], bdy = c[1] - a[1], bdz = c[2] - a[2];
    const double cdx = d[0] - a[0], cdy = d[1] - a[1], cdz = d[2] - a[2];

    const double bycz = bdy * cdz, bzcy = bdz * cdy;
    const double bxcz = bdx * cdz, bzcx = bdz * cdx;
    const double bxcy = bdx * cdy, bycx = bdy * cdx;
    const double det = adx * (bycz - bzcy) - ady * (bxcz - bzcx) + adz * (bxcy - bycx);
    const double permanent = (std::abs(bycz) + std::abs(bzcy)) * std::abs(adx) +
                             (std::abs(bxcz) + std::abs(bzcx)) * std::abs(ady) +
                             (std::abs(bxcy) + std::abs(bycx)) * std::abs(adz);
    // the differences themselves are rounded, so the filter uses a doubled bound
    const double bound = 2 * kOrient3dBound * permanent + 8 * kEpsilon * permanent;
    if (permanent > kTinyPermanent && std::isfinite(det) && std::abs(det) > bound)
        return sign(det);
    return orient3d_exact(a, b, c, d);
}

int orient2d(const Eigen::Vector2d& a, const Eigen::Vector2d& b, const Eigen::Vector2d& c)
{
    const double left = (b[0] - a[0]) * (c[1] - a[1]);
    const double right = (b[1] - a[1]) * (c[0] - a[0]);
    const double det = left - right;
    const double permanent = std::abs(left) + std::abs(right);
    const double bound = 2 * kOrient2dBound * permanent + 8 * kEpsilon * permanent;
    if (permanent > kTinyPermanent && std::isfinite(det) && std::abs(det) > bound)
        return sign(det);
    const Rational exact = (Rational(b[0]) - a[0]) * (Rational(c[1]) - a[1]) -
                           (Rational(b[1]) - a[1]) * (Rational(c[0]) - a[0]);
    return sign(exact);
}

namespace {

using Vec2 = Eigen::Vector2d;

Vec2 drop_axis(const Vec3& p, int axis)
{
    switch (axis) {
    case 0:
        return Vec2(p[1], p[2]);
    case 1:
        return Vec2(p[0], p[2]);
    default:
        return Vec2(p[0], p[1]);
    }
}

/// Axis whose removal keeps the triangle non-degenerate, or -1.
int projection_axis(const Vec3& a, const Vec3& b, const Vec3& c)
{
    for (int axis = 2; axis >= 0; --axis)
        if (orient2d(drop_axis(a, axis), drop_axis(b, axis), drop_axis(c, axis)) != 0)
            return axis;
    return -1;
}

bool on_segment_2d(const Vec2& p, const Vec2& q, const Vec2& r)
{
    // r is collinear with pq
    return std::min(p[0], q[0]) <= r[0] && r[0] <= std::max(p[0], q[0]) && std::min(p[1], q[1]) <= r[1] &&
           r[1] <= std::max(p[1], q[1]);
}

bool segments_intersect_2d(const Vec2& p, const Vec2& q, const Vec2& r, const Vec2& s)
{
    const int o1 = orient2d(p, q, r), o2 = orient2d(p, q, s);
    const int o3 = orient2d(r, s, p), o4 = orient2d(r, s, q);
    if (o1 * o2 < 0 && o3 * o4 < 0)
        return true;
    return (o1 == 0 && on_segment_2d(p, q, r)) || (o2 == 0 && on_segment_2d(p, q, s)) ||
           (o3 == 0 && on_segment_2d(r, s, p)) || (o4 == 0 && on_segment_2d(r, s, q));
}

bool point_in_triangle_2d(const Vec2& p, const Vec2& a, const Vec2& b, const Vec2& c)
{
    const int s1 = orient2d(a, b, p), s2 = orient2d(b, c, p), s3 = orient2d(c, a, p);
    return (s1 >= 0 && s2 >= 0 && s3 >= 0) || (s1 <= 0 && s2 <= 0 && s3 <= 0);
}

bool segment_triangle_2d(const Vec2& p, const Vec2& q, const Vec2& a, const Vec2& b, const Vec2& c)
{
    return point_in_triangle_2d(p, a, b, c) || point_in_triangle_2d(q, a, b, c) ||
           segments_intersect_2d(p, q, a, b) || segments_intersect_2d(p, q, b, c) ||
           segments_intersect_2d(p, q, c, a);
}

/// Closed segment pq against the closed non-degenerate triangle abc.
bool segment_triangle(const Vec3& p, const Vec3& q, const Vec3& a, const Vec3& b, const Vec3& c)
{
    const int op = orient3d(a, b, c, p), oq = orient3d(a, b, c, q);
    if (op == oq && op != 0)
        return false;
    if (op == 0 && oq == 0) {
        const int axis = projection_axis(a, b, c);
        return segment_triangle_2d(drop_axis(p, axis), drop_axis(q, axis), drop_axis(a, axis), drop_axis(b, axis),
                                   drop_axis(c, axis));
    }
    const int s1 = orient3d(p, q, a, b), s2 = orient3d(p, q, b, c), s3 = orient3d(p, q, c, a);
    return (s1 >= 0 && s2 >= 0 && s3 >= 0) || (s1 <= 0 && s2 <= 0 && s3 <= 0);
}

bool coplanar_triangles_intersect(const std::array<Vec3, 3>& t, const std::array<Vec3, 3>& u)
{
    const int axis = projection_axis(t[0], t[1], t[2]);
    std::array<Vec2, 3> a, b;
    for (int i = 0; i < 3; ++i) {
        a[i] = drop_axis(t[i], axis);
        b[i] = drop_axis(u[i], axis);
    }
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j)
            if (segments_intersect_2d(a[i], a[(i + 1) % 3], b[j], b[(j + 1) % 3]))
                return true;
    return point_in_triangle_2d(a[0], b[0], b[1], b[2]) || point_in_triangle_2d(b[0], a[0], a[1], a[2]);
}

bool is_degenerate(const Vec3& a, const Vec3& b, const Vec3& c) { return projection_axis(a, b, c) < 0; }

} // namespace

bool triangles_intersect(const Vec3& p0, const Vec3& p1, const Vec3& p2, const Vec3& q0, const Vec3& q1,
                         const Vec3& q2)
{
    const std::array<Vec3, 3> t{p0, p1, p2}, u{q0, q1, q2};
    const bool dt = is_degenerate(p0, p1, p2), du = is_degenerate(q0, q1, q2);
    if (dt && du)
        return false;
    if (dt || du) {
        const auto& seg = dt ? t : u;
        const auto& tri = dt ? u : t;
        for (int i = 0; i < 3; ++i)
            if (segment_triangle(seg[i], seg[(i + 1) % 3], tri[0], tri[1], tri[2]))
                return true;
        return false;
    }

    std::array<int, 3> st{}, su{};
    for (int i = 0; i < 3; ++i)
        st[i] = orient3d(q0, q1, q2, t[i]);
    if ((st[0] > 0 && st[1] > 0 && st[2] > 0) || (st[0] < 0 && st[1] < 0 && st[2] < 0))
        return false;
    for (int i = 0; i < 3; ++i)
        su[i] = orient3d(p0, p1, p2, u[i]);
    if ((su[0] > 0 && su[1] > 0 && su[2] > 0) || (su[0] < 0 && su[1] < 0 && su[2] < 0))
        return false;
    if (st[0] == 0 && st[1] == 0 && st[2] == 0)
        return coplanar_triangles_intersect(t, u);

    for (int i = 0; i < 3; ++i)
        if (segment_triangle(t[i], t[(i + 1) % 3], q0, q1, q2))
            return true;
    for (int i = 0; i < 3; ++i)
        if (segment_triangle(u[i], u[(i + 1) % 3], p0, p1, p2))
            return true;
    return false;
}

SelfIntersectionReport self_intersecting_faces(const TriangleMesh& mesh)
{
    mesh.validate();
    SelfIntersectionReport report;
    const std::size_t face_count = mesh.faces.size();
    report.flags.assign(face_count, 0);
    if (face_count == 0)
        return report;

    std::vector<Vec3> lo(face_count), hi(face_count);
    Vec3 world_lo = Vec3::Constant(std::numeric_limits<double>::infinity()), world_hi = -world_lo;
    double mean_extent = 0;
    for (std::size_t f = 0; f < face_count; ++f) {
        const Face& face = mesh.faces[f];
        lo[f] = mesh.vertices[face[0]].cwiseMin(mesh.vertices[face[1]]).cwiseMin(mesh.vertices[face[2]]);
        hi[f] = mesh.vertices[face[0]].cwiseMax(mesh.vertices[face[1]]).cwiseMax(mesh.vertices[face[2]]);
        world_lo = world_lo.cwiseMin(lo[f]);
        world_hi = world_hi.cwiseMax(hi[f]);
        mean_extent += (hi[f] - lo[f]).maxCoeff();
    }
    mean_extent /= static_cast<double>(face_count);

    // uniform bucket grid over face bounding boxes
    const Vec3 extent = world_hi - world_lo;
    double cell = std::max(mean_extent, extent.maxCoeff() / 128.0);
    if (!(cell > 0))
        cell = 1.0;
    Vec3i dims;
    for (int axis = 0; axis < 3; ++axis)
        dims[axis] = std::clamp(static_cast<int>(std::floor(extent[axis] / cell)) + 1, 1, 128);
    auto cell_of = [&](double x, int axis) {
        return std::clamp(static_cast<int>(std::floor((x - world_lo[axis]) / cell)), 0, dims[axis] - 1);
    };
    std::vector<std::vector<int>> buckets(static_cast<std::size_t>(dims.prod()));
    auto bucket = [&](int i, int j, int k) -> std::vector<int>& {
        return buckets[(static_cast<std::size_t>(i) * dims[1] + j) * dims[2] + k];
    };
    for (std::size_t f = 0; f < face_count; ++f)
        for (int i = cell_of(lo[f][0], 0); i <= cell_of(hi[f][0], 0); ++i)
            for (int j = cell_of(lo[f][1], 1); j <= cell_of(hi[f][1], 1); ++j)
                for (int k = cell_of(lo[f][2], 2); k <= cell_of(hi[f][2], 2); ++k)
                    bucket(i, j, k).push_back(static_cast<int>(f));

    const long count = static_cast<long>(face_count);
#pragma omp parallel for schedule(dynamic, 64)
    for (long f = 0; f < count; ++f) {
        std::vector<int> candidates;
        for (int i = cell_of(lo[f][0], 0); i <= cell_of(hi[f][0], 0); ++i)
            for (int j = cell_of(lo[f][1], 1); j <= cell_of(hi[f][1], 1); ++j)
                for (int k = cell_of(lo[f][2], 2); k <= cell_of(hi[f][2], 2); ++k) {
                    const auto& b = bucket(i, j, k);
                    candidates.insert(candidates.end(), b.begin(), b.end());
                }
        std::sort(candidates.begin(), candidates.end());
        candidates.erase(std::unique(candidates.begin(), candidates.end()), candidates.end());

        const Face& a = mesh.faces[f];
        for (int g : candidates) {
            if (g == f)
                continue;
            const Face& b = mesh.faces[g];
            bool shared = false;
            for (int x : a)
                for (int y : b)
                    shared = shared || x == y;
            if (shared)
                continue;
            if ((lo[f].array() > hi[g].array()).any() || (lo[g].array() > hi[f].array()).any())
                continue;
            if (triangles_intersect(mesh.vertices[a[0]], mesh.vertices[a[1]], mesh.vertices[a[2]],
                                    mesh.vertices[b[0]], mesh.vertices[b[1]], mesh.vertices[b[2]])) {
                report.flags[f] = 1;
                break;
            }
        }
    }
    for (char flag : report.flags)
        report.count += flag;
    report.percent = 100.0 * static_cast<double>(report.count) / static_cast<double>(face_count);
    return report;
}

} // namespace dmd
