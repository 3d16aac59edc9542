#pragma once

#include <vector>

#include <Eigen/Core>

#include "dmd/mesh.hpp"

namespace dmd {

/// Sign of det[b - a, c - a, d - a] evaluated exactly: +1, -1 or 0.
/// A floating-point filter answers most queries; the rest fall back to rational arithmetic.
int orient3d(const Vec3& a, const Vec3& b, const Vec3& c, const Vec3& d);

/// Sign of det[b - a, c - a] evaluated exactly.
int orient2d(const Eigen::Vector2d& a, const Eigen::Vector2d& b, const Eigen::Vector2d& c);

/// True when the closed triangles share at least one point. Exact for
/// non-degenerate triangles; a degenerate triangle is tested through its edges,
/// and two degenerate triangles never intersect.
bool triangles_intersect(const Vec3& p0, const Vec3& p1, const Vec3& p2, const Vec3& q0, const Vec3& q1,
                         const Vec3& q2);

struct SelfIntersectionReport {
    long count = 0;
    double percent = 0;
    std::vector<char> flags; // per face
};

/// A face is flagged when it intersects another face with which it shares no
/// vertex. Both faces of a crossing pair are flagged.
SelfIntersectionReport self_intersecting_faces(const TriangleMesh& mesh);

} // namespace dmd
